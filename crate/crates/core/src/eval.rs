//! Fixed-policy evaluation: cost/exit vectors, value, safety and reach
//! functions, in closed form (via the Green operator) and by iteration.

use nalgebra::{DMatrix, DVector};

use crate::chain::InducedChain;
use crate::error::{Error, Result};
use crate::model::{MdpModel, Policy, StatePartition};

/// Per-taboo-state one-step quantities of a policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyCostInputs {
    /// `R_π(i) = Σ_u π_iu ρ(u, i)`
    pub r: DVector<f64>,
    /// `K_π(i)`: probability of stepping into `U`.
    pub k: DVector<f64>,
    /// `L_π(i)`: probability of stepping into `E`.
    pub l: DVector<f64>,
}

pub fn cost_inputs(model: &MdpModel, policy: &Policy) -> Result<PolicyCostInputs> {
    if policy.as_matrix().shape() != (model.n_states(), model.n_actions()) {
        return Err(Error::DimensionMismatch("policy does not match model".into()));
    }
    let h = model.n_taboo();
    let mut r = DVector::zeros(h);
    let mut k = DVector::zeros(h);
    let mut l = DVector::zeros(h);
    for i in 0..h {
        for u in 0..model.n_actions() {
            let w = policy.prob(i, u);
            if w == 0.0 {
                continue;
            }
            r[i] += w * model.rewards().get(u, i);
            k[i] += w * model.forbidden_exit(i, u);
            l[i] += w * model.target_exit(i, u);
        }
    }
    Ok(PolicyCostInputs { r, k, l })
}

macro_rules! taboo_vector {
    ($(#[$doc:meta])* $name:ident, forbidden = $on_u:expr, target = $on_e:expr) => {
        $(#[$doc])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name(pub DVector<f64>);

        impl $name {
            /// Values on the taboo states.
            pub fn on_taboo(&self) -> &DVector<f64> {
                &self.0
            }

            /// Extension to all states using the boundary convention.
            pub fn extend(&self, partition: &StatePartition) -> DVector<f64> {
                let mut full = DVector::zeros(partition.n_states());
                full.rows_mut(0, self.0.len()).copy_from(&self.0);
                for j in partition.forbidden_range() {
                    full[j] = $on_u;
                }
                for j in partition.target_range() {
                    full[j] = $on_e;
                }
                full
            }
        }
    };
}

taboo_vector!(
    /// Expected accumulated cost until absorption. Zero on `U ∪ E`.
    ValueVector, forbidden = 0.0, target = 0.0
);
taboo_vector!(
    /// Probability of hitting `U` before `E`. One on `U`, zero on `E`.
    SafetyVector, forbidden = 1.0, target = 0.0
);
taboo_vector!(
    /// Probability of hitting `E` before `U`. Zero on `U`, one on `E`.
    ReachVector, forbidden = 0.0, target = 1.0
);

/// `V_π|_H = G(π) R_π`
pub fn value(model: &MdpModel, policy: &Policy) -> Result<ValueVector> {
    let chain = InducedChain::new(model, policy)?;
    let inputs = cost_inputs(model, policy)?;
    Ok(ValueVector(chain.g() * inputs.r))
}

/// `S_π|_H = G(π) K_π`
pub fn safety(model: &MdpModel, policy: &Policy) -> Result<SafetyVector> {
    let chain = InducedChain::new(model, policy)?;
    let inputs = cost_inputs(model, policy)?;
    Ok(SafetyVector(clamp_unit(chain.g() * inputs.k)))
}

/// `T_π|_H = G(π) L_π`
pub fn reach(model: &MdpModel, policy: &Policy) -> Result<ReachVector> {
    let chain = InducedChain::new(model, policy)?;
    let inputs = cost_inputs(model, policy)?;
    Ok(ReachVector(clamp_unit(chain.g() * inputs.l)))
}

fn clamp_unit(v: DVector<f64>) -> DVector<f64> {
    v.map(|x| x.clamp(0.0, 1.0))
}

/// Value, safety and reach from one Green solve.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub chain: InducedChain,
    pub inputs: PolicyCostInputs,
    pub value: ValueVector,
    pub safety: SafetyVector,
    pub reach: ReachVector,
}

pub fn evaluate(model: &MdpModel, policy: &Policy) -> Result<Evaluation> {
    let chain = InducedChain::new(model, policy)?;
    let inputs = cost_inputs(model, policy)?;
    let value = ValueVector(chain.g() * &inputs.r);
    let safety = SafetyVector(clamp_unit(chain.g() * &inputs.k));
    let reach = ReachVector(clamp_unit(chain.g() * &inputs.l));
    Ok(Evaluation {
        chain,
        inputs,
        value,
        safety,
        reach,
    })
}

/// Stopping rule for the fixed-point iterations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for IterOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterOutcome {
    pub vector: DVector<f64>,
    /// Number of updates that changed the iterate by more than `tol`.
    pub iterations: usize,
}

/// Iterates `x ← b + Q x` from `x0` until successive iterates are within
/// `tol` in sup norm.
pub fn affine_iteration(
    q: &DMatrix<f64>,
    b: &DVector<f64>,
    x0: &DVector<f64>,
    opts: IterOptions,
) -> Result<IterOutcome> {
    if x0.len() != q.nrows() || b.len() != q.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "initial iterate has {} entries, expected {}",
            x0.len(),
            q.nrows()
        )));
    }
    let mut x = x0.clone();
    let mut step = f64::INFINITY;
    for n in 0..opts.max_iter {
        let next = b + q * &x;
        step = (&next - &x).amax();
        x = next;
        if step <= opts.tol {
            return Ok(IterOutcome {
                vector: x,
                iterations: n,
            });
        }
    }
    Err(Error::MaxIterExceeded {
        iterations: opts.max_iter,
        last_step: step,
        last_iterate: x.iter().copied().collect(),
    })
}

/// `V^{n+1} = R_π + Q(π) V^n`
pub fn value_iterative(
    model: &MdpModel,
    policy: &Policy,
    v0: &DVector<f64>,
    opts: IterOptions,
) -> Result<IterOutcome> {
    let chain = InducedChain::new(model, policy)?;
    let inputs = cost_inputs(model, policy)?;
    affine_iteration(chain.q(), &inputs.r, v0, opts)
}

/// `S^{n+1} = K_π + Q(π) S^n`
pub fn safety_iterative(
    model: &MdpModel,
    policy: &Policy,
    s0: &DVector<f64>,
    opts: IterOptions,
) -> Result<IterOutcome> {
    let chain = InducedChain::new(model, policy)?;
    let inputs = cost_inputs(model, policy)?;
    affine_iteration(chain.q(), &inputs.k, s0, opts)
}

/// `max_{j∈A} S(j)` for a non-empty set `A` of taboo indices.
pub fn set_safety(safety: &SafetyVector, subset: &[usize]) -> Result<f64> {
    if subset.is_empty() {
        return Err(Error::InvalidArgument("subset must be non-empty".into()));
    }
    subset
        .iter()
        .map(|&j| {
            safety.0.get(j).copied().ok_or_else(|| {
                Error::InvalidArgument(format!("state index {j} is not a taboo state"))
            })
        })
        .try_fold(f64::NEG_INFINITY, |acc, x| Ok(acc.max(x?)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(xs)
    }

    fn close(a: &DVector<f64>, b: &[f64], tol: f64) -> bool {
        (a - v(b)).amax() <= tol
    }

    #[test]
    fn ex1_cost_inputs() {
        let model = fixtures::ex1();
        for (a, b) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            let c = cost_inputs(&model, &fixtures::ex1_policy(a, b, 0)).unwrap();
            assert_eq!(c.r, v(&[1.0, 2.0, 3.0]));
        }
        let c = cost_inputs(&model, &fixtures::ex1_policy(0, 1, 0)).unwrap();
        assert_eq!(c.k, v(&[0.4, 0.0, 0.0]));
        assert_eq!(c.l, v(&[0.6, 0.0, 0.0]));

        let c = cost_inputs(&fixtures::ex1_without_forbidden(), &fixtures::ex1_policy(0, 1, 0))
            .unwrap();
        assert_eq!(c.k, DVector::zeros(3));
    }

    #[test]
    fn ex1_values() {
        let model = fixtures::ex1();
        let val = value(&model, &fixtures::ex1_policy(0, 1, 0)).unwrap();
        assert!(close(val.on_taboo(), &[1.0, 3.6, 4.0], 1e-12));
        let val = value(&model, &fixtures::ex1_policy(0, 0, 0)).unwrap();
        assert!(close(val.on_taboo(), &[1.0, 5.1, 4.0], 1e-12));

        let zero = model.with_scaled_rewards(0.0);
        assert_eq!(value(&zero, &fixtures::ex1_policy(0, 1, 0)).unwrap().0, DVector::zeros(3));
    }

    #[test]
    fn bellman_policy_residual() {
        let model = fixtures::ex1();
        let pi = fixtures::ex1_policy(0, 1, 0);
        let e = evaluate(&model, &pi).unwrap();
        let res = (&e.inputs.r + e.chain.q() * e.value.on_taboo() - e.value.on_taboo()).amax();
        assert!(res <= 1e-10);
        let res = (&e.inputs.k + e.chain.q() * e.safety.on_taboo() - e.safety.on_taboo()).amax();
        assert!(res <= 1e-10);
    }

    #[test]
    fn value_iteration_cases() {
        let model = fixtures::ex1();
        let pi = fixtures::ex1_policy(0, 1, 0);
        let opts = IterOptions { tol: 1e-12, max_iter: 100 };
        let out = value_iterative(&model, &pi, &DVector::zeros(3), opts).unwrap();
        assert!(out.iterations <= 4);
        assert!(close(&out.vector, &[1.0, 3.6, 4.0], 1e-12));

        let exact = value(&model, &pi).unwrap().0;
        let out = value_iterative(&model, &pi, &exact, opts).unwrap();
        assert_eq!(out.iterations, 0);

        let geo = fixtures::geometric(0.5, 1.0, 0.0);
        let pi = Policy::uniform(&geo);
        let opts = IterOptions { tol: 1e-6, max_iter: 1000 };
        let out = value_iterative(&geo, &pi, &DVector::zeros(1), opts).unwrap();
        assert!((out.vector[0] - 2.0).abs() <= 1e-6);
        assert!((19..=22).contains(&out.iterations), "{}", out.iterations);
        // agreement bound tol·(1 + ‖G‖∞)
        assert!((out.vector[0] - 2.0).abs() <= 1e-6 * 3.0);
    }

    #[test]
    fn value_iteration_reports_cap() {
        let geo = fixtures::geometric(0.5, 1.0, 0.0);
        let opts = IterOptions { tol: 1e-15, max_iter: 3 };
        match value_iterative(&geo, &Policy::uniform(&geo), &DVector::zeros(1), opts) {
            Err(Error::MaxIterExceeded { last_iterate, .. }) => {
                assert_eq!(last_iterate, vec![1.75]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ex1_safety() {
        let model = fixtures::ex1();
        let s = safety(&model, &fixtures::ex1_policy(0, 1, 0)).unwrap();
        assert!(close(s.on_taboo(), &[0.4, 0.4, 0.4], 1e-12));
        let s = safety(&model, &fixtures::ex1_policy(1, 1, 0)).unwrap();
        assert!(close(s.on_taboo(), &[0.9, 0.9, 0.9], 1e-12));
        let s = safety(&fixtures::ex1_without_forbidden(), &fixtures::ex1_policy(0, 1, 0)).unwrap();
        assert_eq!(s.0, DVector::zeros(3));
    }

    #[test]
    fn safety_iteration_cases() {
        let model = fixtures::ex1();
        let pi = fixtures::ex1_policy(0, 1, 0);
        let opts = IterOptions { tol: 1e-12, max_iter: 100 };
        let out = safety_iterative(&model, &pi, &DVector::zeros(3), opts).unwrap();
        assert!(out.iterations <= 4);
        assert!(close(&out.vector, &[0.4, 0.4, 0.4], 1e-12));

        let geo = fixtures::geometric(0.5, 1.0, 0.25);
        let opts = IterOptions { tol: 1e-7, max_iter: 1000 };
        let out = safety_iterative(&geo, &Policy::uniform(&geo), &DVector::zeros(1), opts).unwrap();
        assert!((out.vector[0] - 0.5).abs() <= 1e-6);
    }

    #[test]
    fn one_step_from_ones_with_zero_q() {
        // a-row of EX1 has Q = 0; a single-state model with the same row
        let model = crate::model::ModelBuilder::new()
            .actions(["u"])
            .taboo(["a"])
            .forbidden(["d"])
            .target(["e"])
            .transition("a", "u", "d", 0.4)
            .transition("a", "u", "e", 0.6)
            .build_validated()
            .unwrap();
        let pi = Policy::uniform(&model);
        let chain = InducedChain::new(&model, &pi).unwrap();
        let k = cost_inputs(&model, &pi).unwrap().k;
        let s1 = &k + chain.q() * DVector::from_element(1, 1.0);
        assert_eq!(s1, k);
    }

    #[test]
    fn reach_complements_safety() {
        let model = fixtures::ex1();
        let t = reach(&model, &fixtures::ex1_policy(0, 1, 0)).unwrap();
        assert!(close(t.on_taboo(), &[0.6, 0.6, 0.6], 1e-12));
        let t = reach(&model, &fixtures::ex1_policy(1, 0, 0)).unwrap();
        assert!(close(t.on_taboo(), &[0.1, 0.1, 0.1], 1e-12));
        let t = reach(&fixtures::ex1_without_forbidden(), &fixtures::ex1_policy(0, 0, 0)).unwrap();
        assert!(close(t.on_taboo(), &[1.0, 1.0, 1.0], 1e-12));
    }

    #[test]
    fn set_safety_cases() {
        let s = SafetyVector(v(&[0.4, 0.4, 0.4]));
        assert_eq!(set_safety(&s, &[0, 1]).unwrap(), 0.4);
        let s = SafetyVector(v(&[0.1, 0.9, 0.2]));
        assert_eq!(set_safety(&s, &[2]).unwrap(), 0.2);
        assert_eq!(set_safety(&s, &[0, 1, 2]).unwrap(), 0.9);
        assert!(set_safety(&s, &[]).is_err());
        assert!(set_safety(&s, &[7]).is_err());
    }

    #[test]
    fn boundary_extension() {
        let part = StatePartition::canonical(3, 1, 1);
        let s = SafetyVector(v(&[0.4, 0.4, 0.4]));
        assert_eq!(s.extend(&part), v(&[0.4, 0.4, 0.4, 1.0, 0.0]));
        let t = ReachVector(v(&[0.6, 0.6, 0.6]));
        assert_eq!(t.extend(&part), v(&[0.6, 0.6, 0.6, 0.0, 1.0]));
    }

    #[test]
    fn not_transient_is_error() {
        let trap = fixtures::trap();
        let pi = Policy::from_actions(&trap, &[1, 1]).unwrap();
        assert!(matches!(value(&trap, &pi), Err(Error::NotTransient { .. })));
    }
}

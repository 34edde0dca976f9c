//! Pure `p`-safe policies: enumeration, the cone test, and value iteration
//! restricted to the actions they use.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{check_level, ConstrainedSolveReport, Method, SAFETY_TOL};
use crate::bellman::{reward_costs, solve_bellman, BellmanOptions};
use crate::chain::InducedChain;
use crate::error::{Error, Result};
use crate::eval::{cost_inputs, evaluate};
use crate::model::{pure_action_vectors, MdpModel, Policy};

/// A pure policy together with its exact value and safety on `H`.
#[derive(Debug, Clone)]
pub struct EvaluatedPolicy {
    pub actions: Vec<usize>,
    pub policy: Policy,
    pub value: DVector<f64>,
    pub safety: DVector<f64>,
}

impl EvaluatedPolicy {
    pub fn is_p_safe(&self, p: f64) -> bool {
        self.safety.iter().all(|&s| s <= p + SAFETY_TOL)
    }

    pub fn total_value(&self) -> f64 {
        self.value.sum()
    }
}

#[derive(Debug, Clone)]
pub struct AdmissibleSet {
    /// Transient pure policies with `S_π ≤ p`, in enumeration order.
    pub members: Vec<EvaluatedPolicy>,
    /// Transient policies violating the bound somewhere.
    pub rejected: usize,
    /// Action vectors whose taboo block is not transient.
    pub non_transient: Vec<Vec<usize>>,
}

fn check_cap(model: &MdpModel, cap: u64) -> Result<()> {
    let count = model.pure_policy_count();
    if count > cap as u128 {
        return Err(Error::CapExceeded { count, cap });
    }
    Ok(())
}

/// Evaluates every pure policy (in parallel, results in enumeration order).
/// Non-transient policies are returned separately.
pub fn evaluate_pure_policies(
    model: &MdpModel,
    cap: u64,
) -> Result<(Vec<EvaluatedPolicy>, Vec<Vec<usize>>)> {
    check_cap(model, cap)?;
    let vectors: Vec<Vec<usize>> = pure_action_vectors(model.n_taboo(), model.n_actions()).collect();
    let outcomes: Vec<Result<std::result::Result<EvaluatedPolicy, Vec<usize>>>> = vectors
        .into_par_iter()
        .map(|actions| {
            let policy = Policy::from_actions(model, &actions)?;
            match evaluate(model, &policy) {
                Ok(e) => Ok(Ok(EvaluatedPolicy {
                    actions,
                    policy,
                    value: e.value.0,
                    safety: e.safety.0,
                })),
                Err(Error::NotTransient { .. }) => Ok(Err(actions)),
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut evaluated = Vec::new();
    let mut stuck = Vec::new();
    for o in outcomes {
        match o? {
            Ok(e) => evaluated.push(e),
            Err(a) => stuck.push(a),
        }
    }
    Ok((evaluated, stuck))
}

/// `Π_p`: all pure policies whose safety is at most `p` in every taboo state.
pub fn enumerate_admissible(model: &MdpModel, p: f64, cap: u64) -> Result<AdmissibleSet> {
    check_level(p)?;
    let (evaluated, non_transient) = evaluate_pure_policies(model, cap)?;
    let total = evaluated.len();
    let members: Vec<_> = evaluated.into_iter().filter(|e| e.is_p_safe(p)).collect();
    Ok(AdmissibleSet {
        rejected: total - members.len(),
        members,
        non_transient,
    })
}

/// Outcome of the cone test `Δ(π) α = p Δ(π) 𝟙 − K_π` with `Δ = I − Q`.
#[derive(Debug, Clone)]
pub struct ConeCheck {
    pub admissible: bool,
    /// Coordinates of `p Δ𝟙 − K_π` in the basis given by the columns of
    /// `Δ`; they equal the slack `p − S_π`.
    pub alpha: DVector<f64>,
}

/// A policy is `p`-safe exactly when `p Δ𝟙 − K_π` lies in the cone spanned by
/// the columns of `Δ(π)`.
pub fn cone_check(model: &MdpModel, policy: &Policy, p: f64) -> Result<ConeCheck> {
    check_level(p)?;
    let chain = InducedChain::new(model, policy)?;
    let h = model.n_taboo();
    let delta = DMatrix::identity(h, h) - chain.q();
    let k = cost_inputs(model, policy)?.k;
    let rhs = &delta * DVector::from_element(h, p) - k;
    let alpha = delta
        .lu()
        .solve(&rhs)
        .ok_or(Error::NotTransient {
            spectral_radius: 1.0,
        })?;
    Ok(ConeCheck {
        admissible: alpha.iter().all(|&a| a >= -SAFETY_TOL),
        alpha,
    })
}

/// Result of value iteration over the actions used by `Π_p`.
#[derive(Debug, Clone)]
pub struct PureConstrained {
    /// `value` is the restricted Bellman fixed point; `policy` is its greedy
    /// product policy when that is itself `p`-safe, otherwise the member of
    /// `Π_p` with the smallest total value.
    pub report: ConstrainedSolveReport,
    /// `min_{π∈Π_p} V_π(i)` for each taboo state, from exact evaluation.
    pub coordinatewise_min: DVector<f64>,
    /// Whether the fixed point is attained by a single member of `Π_p`.
    pub realized: bool,
    pub admissible_count: usize,
}

/// Value iteration where state `i` may only use the actions that some
/// member of `Π_p` plays there.
///
/// Mixing actions of different admissible policies can leave `Π_p`, so the
/// fixed point is a lower bound on `min_{π∈Π_p} V_π`; `realized` tells
/// whether the bound is attained.
pub fn constrained_vi_pure(
    model: &MdpModel,
    p: f64,
    opts: BellmanOptions,
    cap: u64,
) -> Result<PureConstrained> {
    let set = enumerate_admissible(model, p, cap)?;
    let h = model.n_taboo();
    if set.members.is_empty() {
        return Err(Error::Infeasible(format!("no pure policy is {p}-safe")));
    }

    let mut allowed = DMatrix::from_element(h, model.n_actions(), false);
    for m in &set.members {
        for (i, &u) in m.actions.iter().enumerate() {
            allowed[(i, u)] = true;
        }
    }
    let base = reward_costs(model);
    let finite_max = base.amax();
    let stage = DMatrix::from_fn(h, model.n_actions(), |i, u| {
        if allowed[(i, u)] {
            base[(i, u)]
        } else {
            f64::INFINITY
        }
    });
    let opts = BellmanOptions {
        divergence_bound: Some(
            opts.divergence_bound
                .unwrap_or(1e6 * (1.0 + finite_max * h as f64)),
        ),
        ..opts
    };
    let vi = solve_bellman(model, &stage, &DVector::zeros(h), opts)?;

    let coordinatewise_min = DVector::from_fn(h, |i, _| {
        set.members
            .iter()
            .map(|m| m.value[i])
            .fold(f64::INFINITY, f64::min)
    });
    let best = set
        .members
        .iter()
        .min_by(|a, b| a.total_value().total_cmp(&b.total_value()))
        .expect("nonempty");

    let greedy_actions = vi.policy.actions(h).expect("greedy policy is pure");
    let greedy_member = set.members.iter().find(|m| m.actions == greedy_actions);
    let chosen = greedy_member.unwrap_or(best);
    let realized = (&chosen.value - &vi.value).amax() <= 1e-8 * (1.0 + vi.value.amax());

    let mut notes = vec![format!(
        "{} of {} pure policies are {p}-safe",
        set.members.len(),
        set.members.len() + set.rejected + set.non_transient.len()
    )];
    if !realized {
        notes.push(
            "restricted fixed point is not attained by any single p-safe pure policy".into(),
        );
    }
    let report = ConstrainedSolveReport {
        method: Method::PureEnumeration,
        feasible: true,
        value: vi.value,
        policy: Some(chosen.policy.clone()),
        policy_value: Some(chosen.value.clone()),
        policy_safety: Some(chosen.safety.clone()),
        multipliers: None,
        gap: Some(chosen.total_value() - coordinatewise_min.sum()),
        iterations: vi.iterations,
        notes,
    };
    Ok(PureConstrained {
        report,
        coordinatewise_min,
        realized,
        admissible_count: set.members.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn ex1_half_keeps_u1_at_a() {
        let model = fixtures::ex1();
        let set = enumerate_admissible(&model, 0.5, 1_000).unwrap();
        assert_eq!(set.members.len(), 4);
        assert_eq!(set.rejected, 4);
        assert!(set.members.iter().all(|m| m.actions[0] == 0));
    }

    #[test]
    fn cap_is_enforced() {
        let model = fixtures::ex1();
        match enumerate_admissible(&model, 0.5, 7) {
            Err(Error::CapExceeded { count: 8, cap: 7 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn cone_check_matches_safety() {
        let model = fixtures::ex1();
        for (a, b, c) in [(0, 0, 0), (1, 0, 0), (0, 1, 1), (1, 1, 1)] {
            let pi = fixtures::ex1_policy(a, b, c);
            let s = evaluate(&model, &pi).unwrap().safety.0;
            for p in [0.3, 0.5, 0.9] {
                let cc = cone_check(&model, &pi, p).unwrap();
                assert_eq!(cc.admissible, s.iter().all(|&x| x <= p + SAFETY_TOL));
                assert!((cc.alpha.add_scalar(0.0) - s.map(|x| p - x)).amax() < 1e-12);
            }
        }
    }

    #[test]
    fn ex1_restricted_vi() {
        let model = fixtures::ex1();
        let out = constrained_vi_pure(&model, 0.5, BellmanOptions::with_tol(1e-13), 1_000).unwrap();
        let want = DVector::from_row_slice(&[1.0, 3.6, 4.0]);
        assert!((&out.report.value - &want).amax() < 1e-10);
        assert!(out.realized);
        assert!((&out.coordinatewise_min - &want).amax() < 1e-12);
    }

    #[test]
    fn infeasible_level() {
        let model = fixtures::ex1();
        assert!(matches!(
            constrained_vi_pure(&model, 0.1, BellmanOptions::default(), 1_000),
            Err(Error::Infeasible(_))
        ));
    }
}

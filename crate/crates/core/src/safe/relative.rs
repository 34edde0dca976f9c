//! Relative safety: `K_π ≤ q L_π` in every taboo state.
//!
//! The condition is local. At state `i` the admissible action distributions
//! form the face `D_i(q) = {d ∈ Δ(A) : Σ_u d_u (K(u,i) − q L(u,i)) ≤ 0}` of the
//! simplex, whose vertices are the satisfying pure actions and, for each
//! pair of a violating and a satisfying action, the mixture sitting exactly
//! on the boundary. A linear objective over `D_i(q)` is minimised at one of
//! these vertices.

use nalgebra::{DMatrix, DVector};

use super::admissible::EvaluatedPolicy;
use super::{ConstrainedSolveReport, Method};
use crate::bellman::{
    argmin_lowest, forbidden_exit_costs, reward_costs, target_exit_costs, BellmanOptions,
};
use crate::error::{Error, Result};
use crate::model::{MdpModel, Policy};

/// Tolerance on `K − qL` when classifying actions.
const BOUNDARY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum Vertex {
    Pure(usize),
    /// `weight` on `satisfying`, the rest on `violating`.
    Mixture {
        satisfying: usize,
        violating: usize,
        weight: f64,
    },
}

impl Vertex {
    /// Probability vector over actions.
    pub fn distribution(&self, n_actions: usize) -> Vec<f64> {
        let mut d = vec![0.0; n_actions];
        match *self {
            Vertex::Pure(u) => d[u] = 1.0,
            Vertex::Mixture {
                satisfying,
                violating,
                weight,
            } => {
                d[satisfying] = weight;
                d[violating] = 1.0 - weight;
            }
        }
        d
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelativeAdmissible {
    pub state: usize,
    /// Pure vertices first (by action index), then mixtures.
    pub vertices: Vec<Vertex>,
}

impl RelativeAdmissible {
    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn admits_pure(&self, action: usize) -> bool {
        self.vertices.contains(&Vertex::Pure(action))
    }
}

fn check_q(q: f64) -> Result<()> {
    if !(q >= 0.0 && q.is_finite()) {
        return Err(Error::InvalidArgument(format!("q = {q} must be finite and ≥ 0")));
    }
    Ok(())
}

/// Vertex description of `D_i(q)` for every taboo state.
pub fn relative_admissible(model: &MdpModel, q: f64) -> Result<Vec<RelativeAdmissible>> {
    check_q(q)?;
    let k = forbidden_exit_costs(model);
    let l = target_exit_costs(model);
    let m = model.n_actions();
    Ok((0..model.n_taboo())
        .map(|i| {
            let excess: Vec<f64> = (0..m).map(|u| k[(i, u)] - q * l[(i, u)]).collect();
            let satisfies = |u: usize| excess[u] <= BOUNDARY_TOL;
            let mut vertices: Vec<Vertex> = (0..m).filter(|&u| satisfies(u)).map(Vertex::Pure).collect();
            for s in (0..m).filter(|&u| excess[u] < -BOUNDARY_TOL) {
                for v in (0..m).filter(|&u| !satisfies(u)) {
                    // weight·excess[s] + (1 − weight)·excess[v] = 0
                    let weight = excess[v] / (excess[v] - excess[s]);
                    vertices.push(Vertex::Mixture {
                        satisfying: s,
                        violating: v,
                        weight,
                    });
                }
            }
            RelativeAdmissible { state: i, vertices }
        })
        .collect())
}

/// Value iteration over the vertices of each `D_i(q)`.
pub fn relative_vi(model: &MdpModel, q: f64, opts: BellmanOptions) -> Result<ConstrainedSolveReport> {
    let sets = relative_admissible(model, q)?;
    if let Some(empty) = sets.iter().find(|s| s.is_empty()) {
        return Err(Error::Infeasible(format!(
            "no action distribution at {} is {q}-relatively safe",
            model.states()[empty.state]
        )));
    }
    let h = model.n_taboo();
    let m = model.n_actions();
    let rho = reward_costs(model);
    let dists: Vec<Vec<Vec<f64>>> = sets
        .iter()
        .map(|s| s.vertices.iter().map(|v| v.distribution(m)).collect())
        .collect();
    // Per state and vertex: mixed stage cost and mixed transition row on H.
    let stage: Vec<Vec<f64>> = dists
        .iter()
        .enumerate()
        .map(|(i, ds)| ds.iter().map(|d| (0..m).map(|u| d[u] * rho[(i, u)]).sum()).collect())
        .collect();
    let rows: Vec<Vec<Vec<f64>>> = dists
        .iter()
        .enumerate()
        .map(|(i, ds)| {
            ds.iter()
                .map(|d| {
                    (0..h)
                        .map(|j| (0..m).map(|u| d[u] * model.transitions().get(i, u, j)).sum())
                        .collect()
                })
                .collect()
        })
        .collect();

    let sweep = |v: &DVector<f64>| -> (DVector<f64>, Vec<usize>) {
        let mut out = DVector::zeros(h);
        let mut arg = vec![0; h];
        for i in 0..h {
            let costs: Vec<f64> = rows[i]
                .iter()
                .zip(&stage[i])
                .map(|(row, c)| c + row.iter().zip(v.iter()).map(|(p, x)| p * x).sum::<f64>())
                .collect();
            let (best, a) = argmin_lowest(&costs);
            out[i] = best;
            arg[i] = a;
        }
        (out, arg)
    };

    let bound = opts
        .divergence_bound
        .unwrap_or_else(|| 1e6 * (1.0 + rho.amax() * h as f64));
    let mut v = DVector::zeros(h);
    let mut step = f64::INFINITY;
    for n in 0..opts.max_iter {
        let (next, _) = sweep(&v);
        step = (&next - &v).amax();
        v = next;
        let norm = v.amax();
        if !(norm <= bound) {
            return Err(Error::Diverging {
                iteration: n,
                norm,
                bound,
            });
        }
        if step <= opts.tol {
            let (_, arg) = sweep(&v);
            let rows = DMatrix::from_fn(h, m, |i, u| dists[i][arg[i]][u]);
            let policy = Policy::from_taboo_rows(model, &rows)?;
            let mut report = ConstrainedSolveReport {
                method: Method::RelativeSafety,
                feasible: true,
                value: v,
                policy: None,
                policy_value: None,
                policy_safety: None,
                multipliers: None,
                gap: None,
                iterations: n,
                notes: vec![format!(
                    "relative safety level {q} guarantees safety at most {}",
                    q / (1.0 + q)
                )],
            };
            report.attach_policy(model, policy)?;
            return Ok(report);
        }
    }
    Err(Error::MaxIterExceeded {
        iterations: opts.max_iter,
        last_step: step,
        last_iterate: v.iter().copied().collect(),
    })
}

/// Pure policies that are `p`-safe but violate `K_π ≤ q L_π` somewhere for
/// `q = p / (1 − p)`.
///
/// Relative safety at level `q` implies safety at level `q / (1 + q)`; this
/// search looks for witnesses that the reverse implication fails.
pub fn lemma_counterexamples(model: &MdpModel, p: f64, cap: u64) -> Result<Vec<EvaluatedPolicy>> {
    let q = super::p_to_q(p)?;
    let k = forbidden_exit_costs(model);
    let l = target_exit_costs(model);
    let set = super::enumerate_admissible(model, p, cap)?;
    Ok(set
        .members
        .into_iter()
        .filter(|m| {
            m.actions
                .iter()
                .enumerate()
                .any(|(i, &u)| k[(i, u)] > q * l[(i, u)] + BOUNDARY_TOL)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn ex1_state_a_at_two() {
        let model = fixtures::ex1();
        let sets = relative_admissible(&model, 2.0).unwrap();
        let a = &sets[0];
        assert!(a.admits_pure(0));
        assert!(!a.admits_pure(1));
        assert_eq!(a.vertices.len(), 2);
        match a.vertices[1] {
            Vertex::Mixture {
                satisfying: 0,
                violating: 1,
                weight,
            } => assert!((weight - 7.0 / 15.0).abs() < 1e-15),
            ref other => panic!("unexpected vertex {other:?}"),
        }
        // the boundary mixture sits exactly on K = qL
        let d = a.vertices[1].distribution(2);
        let k = 0.4 * d[0] + 0.9 * d[1];
        let l = 0.6 * d[0] + 0.1 * d[1];
        assert!((k - 2.0 * l).abs() < 1e-15);
    }

    #[test]
    fn states_without_exits_admit_everything() {
        let model = fixtures::ex1();
        let sets = relative_admissible(&model, 2.0).unwrap();
        for s in &sets[1..] {
            assert_eq!(s.vertices, vec![Vertex::Pure(0), Vertex::Pure(1)]);
        }
        let zero = relative_admissible(&model, 0.0).unwrap();
        assert!(zero[0].is_empty());
        assert_eq!(zero[1].vertices.len(), 2);
    }

    #[test]
    fn ex1_relative_vi() {
        let model = fixtures::ex1();
        let r = relative_vi(&model, 2.0, BellmanOptions::with_tol(1e-13)).unwrap();
        assert!((&r.value - DVector::from_row_slice(&[1.0, 3.6, 4.0])).amax() < 1e-10);
        assert_eq!(r.policy.unwrap().actions(3).unwrap(), vec![0, 1, 0]);
    }

    #[test]
    fn empty_state_is_named() {
        let model = fixtures::ex1();
        match relative_vi(&model, 0.0, BellmanOptions::default()) {
            Err(Error::Infeasible(msg)) => assert!(msg.contains(" a ")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ex1_has_no_counterexample() {
        let model = fixtures::ex1();
        for p in [0.4, 0.5, 0.9] {
            assert!(lemma_counterexamples(&model, p, 100).unwrap().is_empty());
        }
    }
}

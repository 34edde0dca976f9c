//! Unconstrained Bellman equation: minimal expected cost and minimal safety
//! by value iteration, with greedy pure-policy extraction.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::eval::{cost_inputs, value};
use crate::model::{MdpModel, Policy};

/// Relative slack under which two action costs count as tied.
pub const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BellmanOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Abort when `‖V^n‖_∞` exceeds this. `None` picks
    /// `1e6 · (1 + ‖c‖_∞ · |H|)` for stage costs `c`.
    pub divergence_bound: Option<f64>,
}

impl Default for BellmanOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 1_000_000,
            divergence_bound: None,
        }
    }
}

impl BellmanOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BellmanResult {
    pub value: DVector<f64>,
    pub policy: Policy,
    pub iterations: usize,
    /// `‖value − T(value)‖_∞`
    pub residual: f64,
}

/// `ρ(u, i)` laid out as `H x A`.
pub fn reward_costs(model: &MdpModel) -> DMatrix<f64> {
    DMatrix::from_fn(model.n_taboo(), model.n_actions(), |i, u| {
        model.rewards().get(u, i)
    })
}

/// `K(u, i)` laid out as `H x A`.
pub fn forbidden_exit_costs(model: &MdpModel) -> DMatrix<f64> {
    DMatrix::from_fn(model.n_taboo(), model.n_actions(), |i, u| {
        model.forbidden_exit(i, u)
    })
}

/// `L(u, i)` laid out as `H x A`.
pub fn target_exit_costs(model: &MdpModel) -> DMatrix<f64> {
    DMatrix::from_fn(model.n_taboo(), model.n_actions(), |i, u| {
        model.target_exit(i, u)
    })
}

/// One Bellman sweep with stage costs `c(i, u)`: per state, the minimum over
/// actions of `c(i, u) + Σ_{j∈H} p_iuj V(j)`, and the lowest-index action
/// attaining it.
pub fn sweep(model: &MdpModel, stage: &DMatrix<f64>, v: &DVector<f64>) -> (DVector<f64>, Vec<usize>) {
    let h = model.n_taboo();
    let mut out = DVector::zeros(h);
    let mut greedy = vec![0; h];
    let mut costs = vec![0.0; model.n_actions()];
    for i in 0..h {
        for (u, c) in costs.iter_mut().enumerate() {
            let p = model.transitions().action(u);
            let mut acc = stage[(i, u)];
            for j in 0..h {
                acc += p[(i, j)] * v[j];
            }
            *c = acc;
        }
        let (best, arg) = argmin_lowest(&costs);
        out[i] = best;
        greedy[i] = arg;
    }
    (out, greedy)
}

/// Minimum of `costs` and the lowest index within [`TIE_TOL`] of it.
pub fn argmin_lowest(costs: &[f64]) -> (f64, usize) {
    let best = costs.iter().copied().fold(f64::INFINITY, f64::min);
    let slack = TIE_TOL * (1.0 + best.abs());
    let arg = costs.iter().position(|&c| c <= best + slack).unwrap_or(0);
    (best, arg)
}

/// The Bellman operator `T: V ↦ min_π [R_π + Q(π) V]` with optional
/// per-(state, action) offsets added to the reward. The minimising policy is
/// pure: a linear functional over the simplex attains its minimum at a
/// vertex.
pub fn bellman_apply(
    model: &MdpModel,
    v: &DVector<f64>,
    offsets: Option<&DMatrix<f64>>,
) -> Result<(DVector<f64>, Policy)> {
    let h = model.n_taboo();
    if v.len() != h {
        return Err(Error::DimensionMismatch(format!(
            "value vector has {} entries, expected {h}",
            v.len()
        )));
    }
    let mut stage = reward_costs(model);
    if let Some(off) = offsets {
        if off.shape() != stage.shape() {
            return Err(Error::DimensionMismatch(format!(
                "offsets are {:?}, expected {:?}",
                off.shape(),
                stage.shape()
            )));
        }
        stage += off;
    }
    let (tv, greedy) = sweep(model, &stage, v);
    Ok((tv, Policy::from_actions(model, &greedy)?))
}

/// Value iteration for arbitrary stage costs.
pub fn solve_bellman(
    model: &MdpModel,
    stage: &DMatrix<f64>,
    v0: &DVector<f64>,
    opts: BellmanOptions,
) -> Result<BellmanResult> {
    let h = model.n_taboo();
    if v0.len() != h {
        return Err(Error::DimensionMismatch(format!(
            "initial iterate has {} entries, expected {h}",
            v0.len()
        )));
    }
    let bound = opts
        .divergence_bound
        .unwrap_or_else(|| 1e6 * (1.0 + stage.amax() * h as f64));
    let mut v = v0.clone();
    let mut step = f64::INFINITY;
    for n in 0..opts.max_iter {
        let (next, _) = sweep(model, stage, &v);
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
            let (tv, greedy) = sweep(model, stage, &v);
            let residual = (&tv - &v).amax();
            return Ok(BellmanResult {
                value: v,
                policy: Policy::from_actions(model, &greedy)?,
                iterations: n,
                residual,
            });
        }
    }
    Err(Error::MaxIterExceeded {
        iterations: opts.max_iter,
        last_step: step,
        last_iterate: v.iter().copied().collect(),
    })
}

/// Minimal expected cost `V*` and a greedy optimal pure policy.
pub fn value_iteration(model: &MdpModel, v0: &DVector<f64>, opts: BellmanOptions) -> Result<BellmanResult> {
    solve_bellman(model, &reward_costs(model), v0, opts)
}

/// Minimal safety `S*` (`K` in place of `R`) and the safest pure policy.
pub fn safest_policy(model: &MdpModel, s0: &DVector<f64>, opts: BellmanOptions) -> Result<BellmanResult> {
    solve_bellman(model, &forbidden_exit_costs(model), s0, opts)
}

/// The first `sweeps` value-iteration iterates `V^1, …, V^sweeps` from `v0`.
pub fn bellman_iterates(model: &MdpModel, v0: &DVector<f64>, sweeps: usize) -> Vec<DVector<f64>> {
    let stage = reward_costs(model);
    let mut out = Vec::with_capacity(sweeps);
    let mut v = v0.clone();
    for _ in 0..sweeps {
        v = sweep(model, &stage, &v).0;
        out.push(v.clone());
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SupremumCertificate {
    /// `(policy index, state, excess)` where `Δ(π) V* − R_π` exceeds `tol`.
    pub membership_violations: Vec<(usize, usize, f64)>,
    /// `(policy index, state, excess)` where `V* − V_π` exceeds `tol`.
    pub dominance_violations: Vec<(usize, usize, f64)>,
    /// Policies skipped for dominance because they are not transient.
    pub non_transient: Vec<usize>,
}

impl SupremumCertificate {
    pub fn holds(&self) -> bool {
        self.membership_violations.is_empty() && self.dominance_violations.is_empty()
    }
}

/// Checks that `V*` lies in `{V : Δ(π) V ≤ R_π}` for each sampled policy and
/// that it is dominated by each sampled transient policy's value.
pub fn certify_supremum(
    model: &MdpModel,
    vstar: &DVector<f64>,
    policies: &[Policy],
    tol: f64,
) -> Result<SupremumCertificate> {
    let h = model.n_taboo();
    if vstar.len() != h {
        return Err(Error::DimensionMismatch("V* must be indexed by H".into()));
    }
    let mut cert = SupremumCertificate::default();
    for (k, pi) in policies.iter().enumerate() {
        let p = crate::model::induced_matrix(model, pi)?;
        let q = p.view((0, 0), (h, h));
        let r = cost_inputs(model, pi)?.r;
        let laplacian = vstar - q * vstar;
        for i in 0..h {
            let excess = laplacian[i] - r[i];
            if excess > tol {
                cert.membership_violations.push((k, i, excess));
            }
        }
        match value(model, pi) {
            Ok(v) => {
                for i in 0..h {
                    let excess = vstar[i] - v.0[i];
                    if excess > tol {
                        cert.dominance_violations.push((k, i, excess));
                    }
                }
            }
            Err(Error::NotTransient { .. }) => cert.non_transient.push(k),
            Err(e) => return Err(e),
        }
    }
    Ok(cert)
}

//! Cost minimisation under safety constraints.
//!
//! Four routes to the constrained optimum:
//! - [`dual`]: Lagrangian dual ascent over one multiplier per taboo state;
//! - [`lp`]: the same dual written as linear programs over pure-policy rows;
//! - [`admissible`]: enumeration of the pure policies with `S_π ≤ p`, and
//!   value iteration restricted to them;
//! - [`relative`]: the local condition `K_π ≤ q L_π`, solved by a Bellman
//!   iteration over the vertices of each state's admissible simplex face.

pub mod admissible;
pub mod dual;
pub mod lp;
pub mod relative;

use std::fmt;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::model::{MdpModel, Policy};

pub use admissible::{
    cone_check, constrained_vi_pure, enumerate_admissible, evaluate_pure_policies, AdmissibleSet,
    ConeCheck, EvaluatedPolicy,
};
pub use dual::{dual_ascent, dual_inner, DualInner, DualOptions};
pub use lp::{build_lp, lp_solve, solve_lp, LpOutcome, LpProblem};
pub use relative::{
    lemma_counterexamples, relative_admissible, relative_vi, RelativeAdmissible, Vertex,
};

/// Slack allowed when comparing a safety value with `p`.
pub const SAFETY_TOL: f64 = 1e-10;

/// Default cap on `|U|^|H|` for enumeration.
pub const DEFAULT_CAP: u64 = 1_000_000;

/// One nonnegative Lagrange multiplier per taboo state.
#[derive(Debug, Clone, PartialEq)]
pub struct Multipliers(DVector<f64>);

impl Multipliers {
    pub fn new(values: DVector<f64>) -> Result<Self> {
        if values.iter().any(|x| !(*x >= 0.0)) {
            return Err(Error::InvalidArgument(
                "multipliers must be nonnegative".into(),
            ));
        }
        Ok(Self(values))
    }

    pub fn zeros(n: usize) -> Self {
        Self(DVector::zeros(n))
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    DualAscent,
    LinearProgram,
    PureEnumeration,
    RelativeSafety,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Method::DualAscent => "dual",
            Method::LinearProgram => "lp",
            Method::PureEnumeration => "p-safe",
            Method::RelativeSafety => "relative",
        };
        f.write_str(s)
    }
}

/// Result of a constrained solve.
#[derive(Debug, Clone)]
pub struct ConstrainedSolveReport {
    pub method: Method,
    pub feasible: bool,
    /// The method's optimal value over `H`: `q*` for the dual, `l*` for the
    /// LP, the restricted Bellman fixed point otherwise.
    pub value: DVector<f64>,
    pub policy: Option<Policy>,
    /// Exact `V_π` and `S_π` of [`policy`](Self::policy).
    pub policy_value: Option<DVector<f64>>,
    pub policy_safety: Option<DVector<f64>>,
    pub multipliers: Option<Multipliers>,
    /// Objective gap against an oracle (or the reported policy when no oracle
    /// was supplied).
    pub gap: Option<f64>,
    pub iterations: usize,
    pub notes: Vec<String>,
}

impl ConstrainedSolveReport {
    pub(crate) fn infeasible(method: Method, n_taboo: usize, note: String) -> Self {
        Self {
            method,
            feasible: false,
            value: DVector::from_element(n_taboo, f64::NAN),
            policy: None,
            policy_value: None,
            policy_safety: None,
            multipliers: None,
            gap: None,
            iterations: 0,
            notes: vec![note],
        }
    }

    pub(crate) fn attach_policy(&mut self, model: &MdpModel, policy: Policy) -> Result<()> {
        let e = evaluate(model, &policy)?;
        self.policy_value = Some(e.value.0);
        self.policy_safety = Some(e.safety.0);
        self.policy = Some(policy);
        Ok(())
    }
}

/// `L(π, λ) = V_π + λ ∘ (S_π − p 𝟙_H)`
pub fn lagrangian(model: &MdpModel, policy: &Policy, lambda: &Multipliers, p: f64) -> Result<DVector<f64>> {
    check_level(p)?;
    if lambda.0.len() != model.n_taboo() {
        return Err(Error::DimensionMismatch(format!(
            "{} multipliers for {} taboo states",
            lambda.0.len(),
            model.n_taboo()
        )));
    }
    let e = evaluate(model, policy)?;
    let slack = e.safety.0.add_scalar(-p);
    Ok(e.value.0 + lambda.0.component_mul(&slack))
}

/// `q = p / (1 − p)`: the relative-safety level matching safety level `p`.
pub fn p_to_q(p: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("p = {p} must lie in [0, 1)")));
    }
    Ok(p / (1.0 - p))
}

pub(crate) fn check_level(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("p = {p} must lie in [0, 1]")));
    }
    Ok(())
}

/// Minimal safety over all policies. Returns the safest pure policy, and a
/// note when some state cannot be kept at or below `p`.
pub(crate) fn feasibility_check(
    model: &MdpModel,
    p: f64,
    opts: crate::bellman::BellmanOptions,
) -> Result<(Policy, Option<String>)> {
    let safest = crate::bellman::safest_policy(model, &DVector::zeros(model.n_taboo()), opts)?;
    let worst = safest
        .value
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, s)| (i, *s));
    let note = match worst {
        Some((i, s)) if s > p + SAFETY_TOL => Some(format!(
            "minimal safety at {} is {s:.12} > p = {p}",
            model.states()[i]
        )),
        _ => None,
    };
    Ok((safest.policy, note))
}

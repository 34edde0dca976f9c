//! Finite MDP models, policies and the induced transition matrix.
//!
//! States are stored in canonical order: taboo states `H` first, then the
//! forbidden states `U`, then the target states `E`. Every matrix in the crate
//! relies on this ordering when it reads blocks.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Tolerance for row-stochasticity checks.
pub const PROB_TOL: f64 = 1e-12;

/// Index lists for the taboo (`H`), forbidden (`U`) and target (`E`) sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatePartition {
    pub taboo: Vec<usize>,
    pub forbidden: Vec<usize>,
    pub target: Vec<usize>,
}

impl StatePartition {
    /// Contiguous partition `0..h`, `h..h+u`, `h+u..h+u+e`.
    pub fn canonical(n_taboo: usize, n_forbidden: usize, n_target: usize) -> Self {
        let u0 = n_taboo;
        let e0 = n_taboo + n_forbidden;
        Self {
            taboo: (0..u0).collect(),
            forbidden: (u0..e0).collect(),
            target: (e0..e0 + n_target).collect(),
        }
    }

    pub fn n_states(&self) -> usize {
        self.taboo.len() + self.forbidden.len() + self.target.len()
    }

    pub fn n_taboo(&self) -> usize {
        self.taboo.len()
    }

    pub fn n_forbidden(&self) -> usize {
        self.forbidden.len()
    }

    pub fn n_target(&self) -> usize {
        self.target.len()
    }

    pub fn taboo_range(&self) -> Range<usize> {
        0..self.taboo.len()
    }

    pub fn forbidden_range(&self) -> Range<usize> {
        let h = self.taboo.len();
        h..h + self.forbidden.len()
    }

    pub fn target_range(&self) -> Range<usize> {
        let start = self.taboo.len() + self.forbidden.len();
        start..start + self.target.len()
    }

    /// `U ∪ E` in canonical order.
    pub fn boundary_range(&self) -> Range<usize> {
        self.taboo.len()..self.n_states()
    }

    pub fn is_canonical(&self) -> bool {
        *self == Self::canonical(self.taboo.len(), self.forbidden.len(), self.target.len())
    }

    pub fn is_taboo(&self, state: usize) -> bool {
        state < self.taboo.len()
    }

    pub fn is_forbidden(&self, state: usize) -> bool {
        self.forbidden_range().contains(&state)
    }

    pub fn is_target(&self, state: usize) -> bool {
        self.target_range().contains(&state)
    }
}

/// `p[i][u][j]`, stored as one `|X| x |X|` matrix per action.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionTensor {
    per_action: Vec<DMatrix<f64>>,
}

impl TransitionTensor {
    pub fn new(per_action: Vec<DMatrix<f64>>) -> Self {
        Self { per_action }
    }

    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self {
            per_action: vec![DMatrix::zeros(n_states, n_states); n_actions],
        }
    }

    #[inline]
    pub fn get(&self, from: usize, action: usize, to: usize) -> f64 {
        self.per_action[action][(from, to)]
    }

    pub fn set(&mut self, from: usize, action: usize, to: usize, p: f64) {
        self.per_action[action][(from, to)] = p;
    }

    /// The full transition matrix of one action.
    pub fn action(&self, action: usize) -> &DMatrix<f64> {
        &self.per_action[action]
    }

    pub fn n_actions(&self) -> usize {
        self.per_action.len()
    }

    pub fn n_states(&self) -> usize {
        self.per_action.first().map_or(0, |m| m.nrows())
    }

    pub fn row_sum(&self, from: usize, action: usize) -> f64 {
        self.per_action[action].row(from).sum()
    }
}

/// `ρ(u, i)`, action by state.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardFunction {
    rho: DMatrix<f64>,
}

impl RewardFunction {
    pub fn new(rho: DMatrix<f64>) -> Self {
        Self { rho }
    }

    pub fn zeros(n_actions: usize, n_states: usize) -> Self {
        Self {
            rho: DMatrix::zeros(n_actions, n_states),
        }
    }

    #[inline]
    pub fn get(&self, action: usize, state: usize) -> f64 {
        self.rho[(action, state)]
    }

    pub fn set(&mut self, action: usize, state: usize, rho: f64) {
        self.rho[(action, state)] = rho;
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.rho
    }

    pub fn max_abs(&self) -> f64 {
        self.rho.amax()
    }
}

/// A finite MDP with a taboo/forbidden/target partition.
///
/// A value of this type is not necessarily valid; run [`validate_model`] (or
/// construct it through [`crate::io::load_model`]) before handing it to the
/// solvers.
#[derive(Debug, Clone, PartialEq)]
pub struct MdpModel {
    states: Vec<String>,
    actions: Vec<String>,
    partition: StatePartition,
    transitions: TransitionTensor,
    rewards: RewardFunction,
}

impl MdpModel {
    /// Assembles a model from parts already in canonical order.
    pub fn from_parts(
        states: Vec<String>,
        actions: Vec<String>,
        partition: StatePartition,
        transitions: TransitionTensor,
        rewards: RewardFunction,
    ) -> Result<Self> {
        let n = states.len();
        let m = actions.len();
        if !partition.is_canonical() {
            return Err(Error::OrderingMismatch);
        }
        if partition.n_states() != n {
            return Err(Error::DimensionMismatch(format!(
                "partition covers {} states, model has {n}",
                partition.n_states()
            )));
        }
        if transitions.n_actions() != m || (m > 0 && transitions.n_states() != n) {
            return Err(Error::DimensionMismatch(format!(
                "transition tensor is {}x{}x{}, expected {n}x{m}x{n}",
                transitions.n_states(),
                transitions.n_actions(),
                transitions.n_states()
            )));
        }
        if rewards.rho.shape() != (m, n) {
            return Err(Error::DimensionMismatch(format!(
                "reward matrix is {:?}, expected ({m}, {n})",
                rewards.rho.shape()
            )));
        }
        Ok(Self {
            states,
            actions,
            partition,
            transitions,
            rewards,
        })
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn actions(&self) -> &[String] {
        &self.actions
    }

    pub fn partition(&self) -> &StatePartition {
        &self.partition
    }

    pub fn transitions(&self) -> &TransitionTensor {
        &self.transitions
    }

    pub fn rewards(&self) -> &RewardFunction {
        &self.rewards
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn n_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn n_taboo(&self) -> usize {
        self.partition.n_taboo()
    }

    pub fn state_index(&self, label: &str) -> Option<usize> {
        self.states.iter().position(|s| s == label)
    }

    pub fn action_index(&self, label: &str) -> Option<usize> {
        self.actions.iter().position(|a| a == label)
    }

    pub fn taboo_labels(&self) -> &[String] {
        &self.states[self.partition.taboo_range()]
    }

    /// One-step forbidden-exit probability `K(u, i) = Σ_{k∈U} p_iuk`.
    pub fn forbidden_exit(&self, state: usize, action: usize) -> f64 {
        let p = self.transitions.action(action);
        self.partition.forbidden_range().map(|k| p[(state, k)]).sum()
    }

    /// One-step target-exit probability `L(u, i) = Σ_{e∈E} p_iue`.
    pub fn target_exit(&self, state: usize, action: usize) -> f64 {
        let p = self.transitions.action(action);
        self.partition.target_range().map(|k| p[(state, k)]).sum()
    }

    /// Number of pure policies, `|U|^|H|`, saturating.
    pub fn pure_policy_count(&self) -> u128 {
        (self.n_actions() as u128)
            .checked_pow(self.n_taboo() as u32)
            .unwrap_or(u128::MAX)
    }

    /// Returns a copy with rewards multiplied by `factor`.
    pub fn with_scaled_rewards(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.rewards.rho *= factor;
        out
    }

    pub fn with_rewards(&self, rewards: RewardFunction) -> Result<Self> {
        Self::from_parts(
            self.states.clone(),
            self.actions.clone(),
            self.partition.clone(),
            self.transitions.clone(),
            rewards,
        )
    }
}

/// A single violated model invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    EmptyTaboo,
    EmptyTarget,
    PartitionOverlap { state: String },
    Unpartitioned { state: String },
    UnknownPartitionState { state: String },
    DuplicateLabel { label: String },
    ProbabilityOutOfRange { from: String, action: String, to: String, p: f64 },
    RowSum { from: String, action: String, sum: f64 },
    NonFiniteReward { state: String, action: String },
    NonzeroTargetReward { state: String, action: String, rho: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyTaboo => write!(f, "H empty"),
            Violation::EmptyTarget => write!(f, "E empty"),
            Violation::PartitionOverlap { state } => {
                write!(f, "state {state} appears in more than one partition set")
            }
            Violation::Unpartitioned { state } => {
                write!(f, "state {state} is not in any partition set")
            }
            Violation::UnknownPartitionState { state } => {
                write!(f, "partition names unknown state {state}")
            }
            Violation::DuplicateLabel { label } => write!(f, "duplicate label {label}"),
            Violation::ProbabilityOutOfRange { from, action, to, p } => {
                write!(f, "p({from},{action},{to}) = {p} outside [0,1]")
            }
            Violation::RowSum { from, action, sum } => {
                write!(f, "row ({from},{action}) sums to {}", short(*sum))
            }
            Violation::NonFiniteReward { state, action } => {
                write!(f, "reward ({state},{action}) is not finite")
            }
            Violation::NonzeroTargetReward { state, action, rho } => {
                write!(f, "reward nonzero on target ({state},{action}) = {rho}")
            }
        }
    }
}

/// Fixed-point rendering without trailing zeros, 12 decimals at most.
fn short(x: f64) -> String {
    let s = format!("{x:.12}");
    let s = s.trim_end_matches('0');
    s.trim_end_matches('.').to_owned()
}

/// Every violated invariant of a model. Empty means valid.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(Error::Validation(self))
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "  - {v}")?;
        }
        Ok(())
    }
}

/// Checks the partition, stochasticity and reward invariants.
pub fn validate_model(model: &MdpModel) -> ValidationReport {
    let mut violations = Vec::new();
    let part = model.partition();
    if part.n_taboo() == 0 {
        violations.push(Violation::EmptyTaboo);
    }
    if part.n_target() == 0 {
        violations.push(Violation::EmptyTarget);
    }
    let label = |i: usize| model.states[i].clone();
    let act = |u: usize| model.actions[u].clone();
    for i in 0..model.n_states() {
        for u in 0..model.n_actions() {
            let row = model.transitions.action(u).row(i);
            for (j, &p) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&p) {
                    violations.push(Violation::ProbabilityOutOfRange {
                        from: label(i),
                        action: act(u),
                        to: label(j),
                        p,
                    });
                }
            }
            let sum = row.sum();
            if !((sum - 1.0).abs() <= PROB_TOL) {
                violations.push(Violation::RowSum {
                    from: label(i),
                    action: act(u),
                    sum,
                });
            }
            let rho = model.rewards.get(u, i);
            if !rho.is_finite() {
                violations.push(Violation::NonFiniteReward {
                    state: label(i),
                    action: act(u),
                });
            } else if part.is_target(i) && rho != 0.0 {
                violations.push(Violation::NonzeroTargetReward {
                    state: label(i),
                    action: act(u),
                    rho,
                });
            }
        }
    }
    ValidationReport { violations }
}

/// Label-based model construction.
///
/// States in `forbidden ∪ target` whose outgoing row is entirely absent for
/// an action are completed with a self-loop: absorbed processes never sample
/// actions, and a self-loop keeps `P(π)` row-stochastic.
#[derive(Debug, Clone, Default)]
pub struct ModelBuilder {
    states: Option<Vec<String>>,
    actions: Vec<String>,
    taboo: Vec<String>,
    forbidden: Vec<String>,
    target: Vec<String>,
    transitions: Vec<(String, String, String, f64)>,
    rewards: Vec<(String, String, f64)>,
}

impl ModelBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Optional explicit state list, checked against the partition.
    pub fn states<I, S>(mut self, states: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.states = Some(states.into_iter().map(Into::into).collect());
        self
    }

    pub fn actions<I, S>(mut self, actions: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.actions = actions.into_iter().map(Into::into).collect();
        self
    }

    pub fn taboo<I, S>(mut self, states: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.taboo = states.into_iter().map(Into::into).collect();
        self
    }

    pub fn forbidden<I, S>(mut self, states: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.forbidden = states.into_iter().map(Into::into).collect();
        self
    }

    pub fn target<I, S>(mut self, states: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.target = states.into_iter().map(Into::into).collect();
        self
    }

    pub fn transition(mut self, from: &str, action: &str, to: &str, p: f64) -> Self {
        self.transitions
            .push((from.to_owned(), action.to_owned(), to.to_owned(), p));
        self
    }

    /// Same transition for every action.
    pub fn transition_all(mut self, from: &str, to: &str, p: f64) -> Self {
        for a in self.actions.clone() {
            self.transitions.push((from.to_owned(), a, to.to_owned(), p));
        }
        self
    }

    pub fn reward(mut self, state: &str, action: &str, rho: f64) -> Self {
        self.rewards.push((state.to_owned(), action.to_owned(), rho));
        self
    }

    /// Same reward for every action.
    pub fn reward_all(mut self, state: &str, rho: f64) -> Self {
        for a in self.actions.clone() {
            self.rewards.push((state.to_owned(), a, rho));
        }
        self
    }

    /// Builds the model in canonical order. Structural problems (unknown
    /// labels, overlapping partition) are errors; numeric invariants are left
    /// to [`validate_model`].
    pub fn build(self) -> Result<MdpModel> {
        let mut violations = Vec::new();
        let mut seen = HashSet::new();
        for label in self.taboo.iter().chain(&self.forbidden).chain(&self.target) {
            if !seen.insert(label.clone()) {
                violations.push(Violation::PartitionOverlap {
                    state: label.clone(),
                });
            }
        }
        if let Some(states) = &self.states {
            let mut listed = HashSet::new();
            for s in states {
                if !listed.insert(s.clone()) {
                    violations.push(Violation::DuplicateLabel { label: s.clone() });
                }
                if !seen.contains(s) {
                    violations.push(Violation::Unpartitioned { state: s.clone() });
                }
            }
            for s in self.taboo.iter().chain(&self.forbidden).chain(&self.target) {
                if !listed.contains(s) {
                    violations.push(Violation::UnknownPartitionState { state: s.clone() });
                }
            }
        }
        let mut action_set = HashSet::new();
        for a in &self.actions {
            if !action_set.insert(a.clone()) {
                violations.push(Violation::DuplicateLabel { label: a.clone() });
            }
        }
        if !violations.is_empty() {
            return Err(Error::Validation(ValidationReport { violations }));
        }

        let states: Vec<String> = self
            .taboo
            .iter()
            .chain(&self.forbidden)
            .chain(&self.target)
            .cloned()
            .collect();
        let state_ix: HashMap<&str, usize> = states
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let action_ix: HashMap<&str, usize> = self
            .actions
            .iter()
            .enumerate()
            .map(|(i, a)| (a.as_str(), i))
            .collect();
        let n = states.len();
        let m = self.actions.len();

        let lookup_state = |label: &str, path: String| {
            state_ix.get(label).copied().ok_or_else(|| Error::Parse {
                path,
                message: format!("unknown state `{label}`"),
            })
        };
        let lookup_action = |label: &str, path: String| {
            action_ix.get(label).copied().ok_or_else(|| Error::Parse {
                path,
                message: format!("unknown action `{label}`"),
            })
        };

        let mut tensor = TransitionTensor::zeros(n, m);
        let mut written = HashSet::new();
        for (k, (from, action, to, p)) in self.transitions.iter().enumerate() {
            let i = lookup_state(from, format!("transitions[{k}].from"))?;
            let u = lookup_action(action, format!("transitions[{k}].action"))?;
            let j = lookup_state(to, format!("transitions[{k}].to"))?;
            if !written.insert((i, u, j)) {
                return Err(Error::Parse {
                    path: format!("transitions[{k}]"),
                    message: format!("duplicate transition ({from},{action},{to})"),
                });
            }
            tensor.set(i, u, j, *p);
        }
        let h = self.taboo.len();
        for i in h..n {
            for u in 0..m {
                if tensor.action(u).row(i).iter().all(|&p| p == 0.0) {
                    tensor.set(i, u, i, 1.0);
                }
            }
        }

        let mut rewards = RewardFunction::zeros(m, n);
        let mut written = HashSet::new();
        for (k, (state, action, rho)) in self.rewards.iter().enumerate() {
            let i = lookup_state(state, format!("rewards[{k}].state"))?;
            let u = lookup_action(action, format!("rewards[{k}].action"))?;
            if !written.insert((i, u)) {
                return Err(Error::Parse {
                    path: format!("rewards[{k}]"),
                    message: format!("duplicate reward ({state},{action})"),
                });
            }
            rewards.set(u, i, *rho);
        }

        let partition =
            StatePartition::canonical(h, self.forbidden.len(), self.target.len());
        MdpModel::from_parts(states, self.actions, partition, tensor, rewards)
    }

    /// [`build`](Self::build) followed by [`validate_model`].
    pub fn build_validated(self) -> Result<MdpModel> {
        let model = self.build()?;
        validate_model(&model).into_result()?;
        Ok(model)
    }
}

/// A stationary policy: one distribution over actions per state.
///
/// Rows for forbidden and target states are fixed to action 0; they are never
/// consulted after absorption.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    probs: DMatrix<f64>,
    pure: bool,
}

impl Policy {
    /// Builds a policy from rows over the taboo states.
    pub fn from_taboo_rows(model: &MdpModel, rows: &DMatrix<f64>) -> Result<Self> {
        let h = model.n_taboo();
        let m = model.n_actions();
        if rows.shape() != (h, m) {
            return Err(Error::DimensionMismatch(format!(
                "policy rows are {:?}, expected ({h}, {m})",
                rows.shape()
            )));
        }
        let mut probs = DMatrix::zeros(model.n_states(), m);
        for i in 0..h {
            let row = rows.row(i);
            if row.iter().any(|&x| !(x >= -PROB_TOL && x <= 1.0 + PROB_TOL)) {
                return Err(Error::InvalidPolicy(format!(
                    "row {} has entries outside [0,1]",
                    model.states()[i]
                )));
            }
            let sum = row.sum();
            if (sum - 1.0).abs() > PROB_TOL {
                return Err(Error::InvalidPolicy(format!(
                    "row {} sums to {sum}",
                    model.states()[i]
                )));
            }
            probs.row_mut(i).copy_from(&row);
        }
        for i in h..model.n_states() {
            if m > 0 {
                probs[(i, 0)] = 1.0;
            }
        }
        let pure = (0..h).all(|i| probs.row(i).iter().all(|&x| x == 0.0 || x == 1.0));
        Ok(Self { probs, pure })
    }

    /// Pure policy from one action index per taboo state.
    pub fn from_actions(model: &MdpModel, actions: &[usize]) -> Result<Self> {
        let h = model.n_taboo();
        if actions.len() != h {
            return Err(Error::DimensionMismatch(format!(
                "{} actions given for {h} taboo states",
                actions.len()
            )));
        }
        let mut rows = DMatrix::zeros(h, model.n_actions());
        for (i, &u) in actions.iter().enumerate() {
            if u >= model.n_actions() {
                return Err(Error::InvalidPolicy(format!("action index {u} out of range")));
            }
            rows[(i, u)] = 1.0;
        }
        Self::from_taboo_rows(model, &rows)
    }

    /// Uniform distribution over actions in every taboo state.
    pub fn uniform(model: &MdpModel) -> Self {
        let m = model.n_actions();
        let rows = DMatrix::from_element(model.n_taboo(), m, 1.0 / m as f64);
        let mut policy = Self::from_taboo_rows(model, &rows).expect("uniform rows are stochastic");
        policy.pure = m == 1;
        policy
    }

    #[inline]
    pub fn prob(&self, state: usize, action: usize) -> f64 {
        self.probs[(state, action)]
    }

    pub fn is_pure(&self) -> bool {
        self.pure
    }

    /// Full `|X| x |A|` matrix.
    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.probs
    }

    pub fn n_states(&self) -> usize {
        self.probs.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.probs.ncols()
    }

    /// Action per taboo state when the policy is pure.
    pub fn actions(&self, n_taboo: usize) -> Option<Vec<usize>> {
        if !self.pure {
            return None;
        }
        Some(
            (0..n_taboo)
                .map(|i| self.probs.row(i).iter().position(|&x| x == 1.0).unwrap_or(0))
                .collect(),
        )
    }

    /// Convex combination `t·self + (1−t)·other`.
    pub fn mix(&self, other: &Policy, t: f64) -> Result<Policy> {
        if self.probs.shape() != other.probs.shape() {
            return Err(Error::DimensionMismatch("policies of different shape".into()));
        }
        let probs = &self.probs * t + &other.probs * (1.0 - t);
        let pure = probs.iter().all(|&x| x == 0.0 || x == 1.0);
        Ok(Policy { probs, pure })
    }

    fn check_shape(&self, model: &MdpModel) -> Result<()> {
        if self.probs.shape() != (model.n_states(), model.n_actions()) {
            return Err(Error::DimensionMismatch(format!(
                "policy is {:?}, model needs ({}, {})",
                self.probs.shape(),
                model.n_states(),
                model.n_actions()
            )));
        }
        Ok(())
    }

    /// Human-readable `state -> action` map for pure policies.
    pub fn describe(&self, model: &MdpModel) -> BTreeMap<String, BTreeMap<String, f64>> {
        let mut out = BTreeMap::new();
        for i in model.partition().taboo_range() {
            let dist = (0..model.n_actions())
                .filter(|&u| self.probs[(i, u)] != 0.0)
                .map(|u| (model.actions()[u].clone(), self.probs[(i, u)]))
                .collect();
            out.insert(model.states()[i].clone(), dist);
        }
        out
    }
}

/// `P(π)_{ij} = Σ_u π_iu p_iuj` over all states.
pub fn induced_matrix(model: &MdpModel, policy: &Policy) -> Result<DMatrix<f64>> {
    policy.check_shape(model)?;
    let n = model.n_states();
    let mut p = DMatrix::zeros(n, n);
    for u in 0..model.n_actions() {
        let pu = model.transitions().action(u);
        for i in 0..n {
            let w = policy.prob(i, u);
            if w != 0.0 {
                for j in 0..n {
                    p[(i, j)] += w * pu[(i, j)];
                }
            }
        }
    }
    Ok(p)
}

/// Pure policy from a `state -> action` label map covering `H`.
pub fn pure_policy<S: AsRef<str>>(
    model: &MdpModel,
    assignment: &HashMap<S, S>,
) -> Result<Policy> {
    let by_label: HashMap<&str, &str> = assignment
        .iter()
        .map(|(k, v)| (k.as_ref(), v.as_ref()))
        .collect();
    let mut actions = Vec::with_capacity(model.n_taboo());
    for label in model.taboo_labels() {
        let a = by_label
            .get(label.as_str())
            .ok_or_else(|| Error::MissingState(label.clone()))?;
        let u = model
            .action_index(a)
            .ok_or_else(|| Error::InvalidPolicy(format!("unknown action `{a}`")))?;
        actions.push(u);
    }
    Policy::from_actions(model, &actions)
}

/// Iterates over all `|A|^|H|` pure policies as action vectors, in
/// lexicographic order with the first taboo state varying slowest.
pub fn pure_action_vectors(n_taboo: usize, n_actions: usize) -> impl Iterator<Item = Vec<usize>> {
    let total = if n_actions == 0 {
        0
    } else {
        (n_actions as u128).saturating_pow(n_taboo as u32)
    };
    (0..total).map(move |mut code| {
        let mut v = vec![0; n_taboo];
        for slot in v.iter_mut().rev() {
            *slot = (code % n_actions as u128) as usize;
            code /= n_actions as u128;
        }
        v
    })
}

/// Restriction of a full-space vector to the taboo states.
pub fn restrict_to_taboo(model: &MdpModel, v: &DVector<f64>) -> DVector<f64> {
    v.rows(0, model.n_taboo()).into_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn ex1_is_valid() {
        let model = fixtures::ex1();
        let report = validate_model(&model);
        assert!(report.is_valid(), "{report}");
        for i in 0..model.n_states() {
            for u in 0..model.n_actions() {
                assert!((model.transitions().row_sum(i, u) - 1.0).abs() <= PROB_TOL);
            }
        }
    }

    #[test]
    fn short_row_is_reported() {
        let mut model = fixtures::ex1();
        let mut t = model.transitions().clone();
        t.set(0, 0, 3, 0.3);
        model = MdpModel::from_parts(
            model.states().to_vec(),
            model.actions().to_vec(),
            model.partition().clone(),
            t,
            model.rewards().clone(),
        )
        .unwrap();
        let report = validate_model(&model);
        let msgs: Vec<String> = report.violations.iter().map(|v| v.to_string()).collect();
        assert_eq!(msgs, vec!["row (a,u1) sums to 0.9".to_string()]);
    }

    #[test]
    fn target_reward_is_reported() {
        let model = fixtures::ex1();
        let mut rho = model.rewards().clone();
        rho.set(0, 4, 5.0);
        let model = model.with_rewards(rho).unwrap();
        let report = validate_model(&model);
        assert_eq!(report.violations.len(), 1);
        assert!(report.violations[0]
            .to_string()
            .starts_with("reward nonzero on target"));
    }

    #[test]
    fn overlapping_partition_fails_build() {
        let err = ModelBuilder::new()
            .actions(["u"])
            .taboo(["a"])
            .target(["a"])
            .build()
            .unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn induced_row_for_pure_policy() {
        let model = fixtures::ex1();
        let pi = fixtures::ex1_policy(0, 1, 0);
        let p = induced_matrix(&model, &pi).unwrap();
        let row: Vec<f64> = p.row(1).iter().copied().collect();
        assert_eq!(row, vec![0.8, 0.0, 0.2, 0.0, 0.0]);
    }

    #[test]
    fn induced_row_for_mixed_policy() {
        let model = fixtures::ex1();
        let rows = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.5, 0.5, 1.0, 0.0]);
        let pi = Policy::from_taboo_rows(&model, &rows).unwrap();
        assert!(!pi.is_pure());
        let p = induced_matrix(&model, &pi).unwrap();
        let expected = [0.55, 0.0, 0.45, 0.0, 0.0];
        for (j, e) in expected.iter().enumerate() {
            assert!((p[(1, j)] - e).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_rows_mix_to_same_row() {
        // at state c both actions go to a
        let model = fixtures::ex1();
        let half = Policy::uniform(&model);
        let pure = fixtures::ex1_policy(0, 0, 0);
        let p_half = induced_matrix(&model, &half).unwrap();
        let p_pure = induced_matrix(&model, &pure).unwrap();
        assert_eq!(p_half.row(2), p_pure.row(2));
    }

    #[test]
    fn pure_policy_from_labels() {
        let model = fixtures::ex1();
        let map: HashMap<&str, &str> = [("a", "u1"), ("b", "u2"), ("c", "u1")].into();
        let pi = pure_policy(&model, &map).unwrap();
        assert!(pi.is_pure());
        assert_eq!(pi.prob(1, 1), 1.0);
        assert_eq!(pi.prob(1, 0), 0.0);
        assert_eq!(pi.actions(3).unwrap(), vec![0, 1, 0]);

        let missing: HashMap<&str, &str> = [("a", "u1"), ("b", "u2")].into();
        match pure_policy(&model, &missing) {
            Err(Error::MissingState(s)) => assert_eq!(s, "c"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn single_action_model_has_one_policy() {
        let model = fixtures::geometric(0.5, 1.0, 0.0);
        let all: Vec<_> = pure_action_vectors(model.n_taboo(), model.n_actions()).collect();
        assert_eq!(all, vec![vec![0]]);
        let map: HashMap<&str, &str> = [("h", "u")].into();
        assert_eq!(
            pure_policy(&model, &map).unwrap(),
            Policy::uniform(&model)
        );
    }

    #[test]
    fn enumeration_order() {
        let all: Vec<_> = pure_action_vectors(2, 3).collect();
        assert_eq!(all.len(), 9);
        assert_eq!(all[0], vec![0, 0]);
        assert_eq!(all[1], vec![0, 1]);
        assert_eq!(all[8], vec![2, 2]);
    }
}

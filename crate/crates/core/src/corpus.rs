//! Deterministic random instances for property and acceptance tests.
//!
//! Every taboo row leaks at least [`CorpusConfig::min_leak`] of its mass to
//! `U ∪ E` under every action, so every policy is transient and
//! `‖Q(π)‖_∞ ≤ 1 − min_leak`.

use nalgebra::{DMatrix, DVector};
use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bellman::{safest_policy, BellmanOptions};
use crate::model::{MdpModel, Policy, RewardFunction, StatePartition, TransitionTensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusConfig {
    pub max_states: usize,
    pub max_actions: usize,
    pub max_taboo: usize,
    pub min_leak: f64,
    pub max_leak: f64,
    pub min_reward: f64,
    pub max_reward: f64,
    /// Probability that an instance has no forbidden states.
    pub p_no_forbidden: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            max_states: 6,
            max_actions: 3,
            max_taboo: 4,
            min_leak: 0.05,
            max_leak: 0.6,
            min_reward: 0.1,
            max_reward: 2.0,
            p_no_forbidden: 0.1,
        }
    }
}

/// A model with a random stationary policy and initial distribution.
#[derive(Debug, Clone)]
pub struct Instance {
    pub index: usize,
    pub model: MdpModel,
    pub policy: Policy,
    pub initial: DVector<f64>,
}

/// Splits `total` into random nonnegative parts over `n` slots, leaving each
/// slot empty with probability `sparsity` (at least one slot is kept).
fn random_split(rng: &mut ChaCha8Rng, n: usize, total: f64, sparsity: f64) -> Vec<f64> {
    let mut w: Vec<f64> = (0..n)
        .map(|_| if rng.gen_bool(sparsity) { 0.0 } else { rng.gen_range(0.05..1.0) })
        .collect();
    if w.iter().all(|&x| x == 0.0) {
        let k = rng.gen_range(0..n);
        w[k] = 1.0;
    }
    let sum: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x *= total / sum);
    w
}

pub fn random_model(rng: &mut ChaCha8Rng, cfg: &CorpusConfig) -> MdpModel {
    let n_taboo = rng.gen_range(1..=cfg.max_taboo.min(cfg.max_states - 1));
    let n_states = rng.gen_range(n_taboo + 1..=cfg.max_states);
    let n_boundary = n_states - n_taboo;
    let n_forbidden = if rng.gen_bool(cfg.p_no_forbidden) {
        0
    } else {
        rng.gen_range(1..=n_boundary.max(2) - 1).min(n_boundary - 1)
    };
    let n_target = n_boundary - n_forbidden;
    let n_actions = rng.gen_range(1..=cfg.max_actions);

    let states: Vec<String> = (0..n_taboo)
        .map(|i| format!("h{i}"))
        .chain((0..n_forbidden).map(|i| format!("u{i}")))
        .chain((0..n_target).map(|i| format!("e{i}")))
        .collect();
    let actions: Vec<String> = (0..n_actions).map(|u| format!("a{u}")).collect();

    let mut transitions = TransitionTensor::zeros(n_states, n_actions);
    let mut rewards = RewardFunction::zeros(n_actions, n_states);
    for u in 0..n_actions {
        for i in 0..n_taboo {
            let leak = rng.gen_range(cfg.min_leak..=cfg.max_leak);
            let inner = random_split(rng, n_taboo, 1.0 - leak, 0.3);
            let outer = random_split(rng, n_boundary, leak, 0.4);
            for (j, p) in inner.into_iter().enumerate() {
                transitions.set(i, u, j, p);
            }
            for (j, p) in outer.into_iter().enumerate() {
                transitions.set(i, u, n_taboo + j, p);
            }
            rewards.set(u, i, rng.gen_range(cfg.min_reward..=cfg.max_reward));
        }
        for x in n_taboo..n_states {
            transitions.set(x, u, x, 1.0);
        }
    }
    MdpModel::from_parts(
        states,
        actions,
        StatePartition::canonical(n_taboo, n_forbidden, n_target),
        transitions,
        rewards,
    )
    .expect("generated model is canonical")
}

/// Stationary policy: pure with probability one half, otherwise random rows.
pub fn random_policy(rng: &mut ChaCha8Rng, model: &MdpModel) -> Policy {
    let h = model.n_taboo();
    let m = model.n_actions();
    if rng.gen_bool(0.5) {
        let actions: Vec<usize> = (0..h).map(|_| rng.gen_range(0..m)).collect();
        return Policy::from_actions(model, &actions).expect("valid actions");
    }
    let mut rows = DMatrix::zeros(h, m);
    for i in 0..h {
        let row = random_split(rng, m, 1.0, 0.2);
        for (u, p) in row.into_iter().enumerate() {
            rows[(i, u)] = p;
        }
    }
    Policy::from_taboo_rows(model, &rows).expect("stochastic rows")
}

/// Initial distribution over all states, supported mostly on `H`.
pub fn random_initial(rng: &mut ChaCha8Rng, model: &MdpModel) -> DVector<f64> {
    let n = model.n_states();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let w = random_split(rng, n, 1.0, 0.3);
    let mut mu = DVector::zeros(n);
    for (k, &x) in order.iter().enumerate() {
        mu[x] = w[k];
    }
    mu
}

/// `count` instances derived from `seed`; instance `k` depends only on
/// `(seed, k)`.
pub fn corpus(seed: u64, count: usize, cfg: &CorpusConfig) -> Vec<Instance> {
    (0..count)
        .map(|index| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(index as u64);
            let model = random_model(&mut rng, cfg);
            let policy = random_policy(&mut rng, &model);
            let initial = random_initial(&mut rng, &model);
            Instance {
                index,
                model,
                policy,
                initial,
            }
        })
        .collect()
}

/// A safety level drawn between the minimal achievable safety and the
/// largest safety of any pure policy, so that the constraint is feasible and
/// often active. `None` for models without forbidden states.
pub fn feasible_level(rng: &mut ChaCha8Rng, model: &MdpModel) -> Option<f64> {
    if model.partition().n_forbidden() == 0 {
        return None;
    }
    let safest = safest_policy(model, &DVector::zeros(model.n_taboo()), BellmanOptions::with_tol(1e-14)).ok()?;
    let lo = safest.value.amax();
    let k = crate::bellman::forbidden_exit_costs(model);
    // Worst safety: safest problem with costs negated.
    let worst = crate::bellman::solve_bellman(
        model,
        &(-k),
        &DVector::zeros(model.n_taboo()),
        BellmanOptions::with_tol(1e-14),
    )
    .ok()?;
    let hi = (-worst.value.min()).max(lo);
    Some((lo + rng.gen_range(0.0..=1.0) * (hi - lo)).min(1.0))
}

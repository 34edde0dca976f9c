//! Independent checks of the analytic quantities: seeded Monte Carlo
//! simulation, exhaustive finite-depth path expansion, and brute-force
//! enumeration of pure policies.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::model::{pure_action_vectors, MdpModel, Policy};

pub const DEFAULT_MAX_STEPS: usize = 100_000;
pub const DEFAULT_NODE_BUDGET: usize = 10_000_000;
pub const MAX_DEPTH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Absorption {
    Forbidden,
    Target,
    Truncated,
}

/// One sampled run. `states` starts with the initial state and ends with the
/// absorbing state (unless truncated); `actions[t]` and `rewards[t]` belong to
/// the step out of `states[t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub absorbed_in: Absorption,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.actions.len()
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

/// Index drawn from a discrete distribution given by `weights`, restricted to
/// entries with positive weight.
fn draw(rng: &mut ChaCha8Rng, weights: impl Iterator<Item = f64> + Clone) -> usize {
    let total: f64 = weights.clone().sum();
    let x = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (k, w) in weights.enumerate() {
        if w > 0.0 {
            acc += w;
            last = k;
            if x < acc {
                return k;
            }
        }
    }
    last
}

fn check_start(model: &MdpModel, start: usize) -> Result<()> {
    if start >= model.n_states() {
        return Err(Error::InvalidArgument(format!(
            "start state {start} out of range for {} states",
            model.n_states()
        )));
    }
    Ok(())
}

fn run(model: &MdpModel, policy: &Policy, start: usize, rng: &mut ChaCha8Rng, max_steps: usize) -> Trajectory {
    let part = model.partition();
    let m = model.n_actions();
    let mut t = Trajectory {
        states: vec![start],
        actions: Vec::new(),
        rewards: Vec::new(),
        absorbed_in: Absorption::Truncated,
    };
    let mut x = start;
    loop {
        if part.is_forbidden(x) {
            t.absorbed_in = Absorption::Forbidden;
            return t;
        }
        if part.is_target(x) {
            t.absorbed_in = Absorption::Target;
            return t;
        }
        if t.actions.len() >= max_steps {
            return t;
        }
        let u = draw(rng, (0..m).map(|u| policy.prob(x, u)));
        let row = model.transitions().action(u).row(x);
        let next = draw(rng, row.iter().copied());
        t.actions.push(u);
        t.rewards.push(model.rewards().get(u, x));
        t.states.push(next);
        x = next;
    }
}

/// Samples one trajectory from `start`.
pub fn simulate(model: &MdpModel, policy: &Policy, start: usize, seed: u64, max_steps: usize) -> Result<Trajectory> {
    check_start(model, start)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(run(model, policy, start, &mut rng, max_steps))
}

/// Generator for trajectory `index` under master seed `seed`: the ChaCha
/// stream number is the index, so every trajectory is reproducible on its own.
pub fn trajectory_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Sum by recursive halving; error grows like `O(log n)` rather than `O(n)`.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if xs.len() <= LEAF {
        return xs.iter().sum();
    }
    let (a, b) = xs.split_at(xs.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    /// Sample standard deviation over `√n`.
    pub std_error: f64,
    pub n: usize,
}

impl McEstimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                std_error: f64::NAN,
                n,
            };
        }
        let mean = pairwise_sum(xs) / n as f64;
        let dev: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
        let var = if n > 1 {
            pairwise_sum(&dev) / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            mean,
            std_error: (var / n as f64).sqrt(),
            n,
        }
    }

    /// `|mean − x| ≤ k · std_error`, plus a rounding allowance of
    /// `1e-12 · (1 + |x|)` so that degenerate samples (all runs alike, zero
    /// standard error) can match an analytic value computed in floating
    /// point.
    pub fn covers(&self, x: f64, k: f64) -> bool {
        (self.mean - x).abs() <= k * self.std_error + 1e-12 * (1.0 + x.abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McReport {
    pub safety: McEstimate,
    pub reach: McEstimate,
    pub value: McEstimate,
    /// Runs cut at `max_steps`; they are left out of the three estimates.
    pub truncated: usize,
}

/// Monte Carlo estimates of `S_π`, `T_π` and `V_π` at `start` from `n`
/// trajectories. Results do not depend on the number of worker threads.
pub fn mc_estimates(
    model: &MdpModel,
    policy: &Policy,
    start: usize,
    n: usize,
    seed: u64,
    max_steps: usize,
) -> Result<McReport> {
    check_start(model, start)?;
    if n == 0 {
        return Err(Error::InvalidArgument("n must be positive".into()));
    }
    let runs: Vec<(Absorption, f64)> = (0..n as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = trajectory_rng(seed, k);
            let t = run(model, policy, start, &mut rng, max_steps);
            (t.absorbed_in, t.total_reward())
        })
        .collect();
    let done: Vec<&(Absorption, f64)> = runs.iter().filter(|r| r.0 != Absorption::Truncated).collect();
    let indicator = |kind| -> Vec<f64> {
        done.iter()
            .map(|r| if r.0 == kind { 1.0 } else { 0.0 })
            .collect()
    };
    let values: Vec<f64> = done.iter().map(|r| r.1).collect();
    Ok(McReport {
        safety: McEstimate::from_samples(&indicator(Absorption::Forbidden)),
        reach: McEstimate::from_samples(&indicator(Absorption::Target)),
        value: McEstimate::from_samples(&values),
        truncated: n - done.len(),
    })
}

/// Result of expanding every support path up to a fixed depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathBounds {
    /// Probability of reaching `U` within the depth.
    pub s_lo: f64,
    /// `s_lo` plus the mass still in `H`.
    pub s_hi: f64,
    /// Expected reward collected within the depth.
    pub v_lo: f64,
    pub mass_remaining: f64,
    pub nodes: usize,
}

/// Expands all (action, successor) branches with positive probability up to
/// `depth` steps. The true safety lies in `[s_lo, s_hi]`; for nonnegative
/// rewards `v_lo` is a lower bound on the value.
pub fn exhaustive_paths(
    model: &MdpModel,
    policy: &Policy,
    start: usize,
    depth: usize,
    node_budget: usize,
) -> Result<PathBounds> {
    check_start(model, start)?;
    if depth > MAX_DEPTH {
        return Err(Error::InvalidArgument(format!("depth {depth} exceeds {MAX_DEPTH}")));
    }
    let part = model.partition();
    let mut out = PathBounds {
        s_lo: 0.0,
        s_hi: 0.0,
        v_lo: 0.0,
        mass_remaining: 0.0,
        nodes: 0,
    };
    // (state, probability, remaining depth)
    let mut stack = vec![(start, 1.0_f64, depth)];
    while let Some((x, mass, left)) = stack.pop() {
        out.nodes += 1;
        if out.nodes > node_budget {
            return Err(Error::PathExplosion { budget: node_budget });
        }
        if part.is_forbidden(x) {
            out.s_lo += mass;
            continue;
        }
        if part.is_target(x) {
            continue;
        }
        if left == 0 {
            out.mass_remaining += mass;
            continue;
        }
        for u in 0..model.n_actions() {
            let pu = policy.prob(x, u);
            if pu == 0.0 {
                continue;
            }
            out.v_lo += mass * pu * model.rewards().get(u, x);
            let row = model.transitions().action(u).row(x);
            for (j, &pj) in row.iter().enumerate() {
                if pj > 0.0 {
                    stack.push((j, mass * pu * pj, left - 1));
                }
            }
        }
    }
    out.s_hi = out.s_lo + out.mass_remaining;
    Ok(out)
}

/// Best pure `p`-safe policy by exhaustive serial enumeration.
#[derive(Debug, Clone)]
pub struct BruteForce {
    /// Action vector, value and safety of the `p`-safe pure policy with the
    /// smallest total value; `None` when no pure policy is `p`-safe.
    pub best: Option<(Vec<usize>, DVector<f64>, DVector<f64>)>,
    /// `min V_π(i)` over the `p`-safe pure policies.
    pub coordinatewise_min: Option<DVector<f64>>,
    pub admissible: usize,
    pub evaluated: usize,
}

impl BruteForce {
    pub fn feasible(&self) -> bool {
        self.best.is_some()
    }
}

pub fn brute_force_constrained(model: &MdpModel, p: f64, cap: u64) -> Result<BruteForce> {
    let count = model.pure_policy_count();
    if count > cap as u128 {
        return Err(Error::CapExceeded { count, cap });
    }
    let mut out = BruteForce {
        best: None,
        coordinatewise_min: None,
        admissible: 0,
        evaluated: 0,
    };
    for actions in pure_action_vectors(model.n_taboo(), model.n_actions()) {
        let policy = Policy::from_actions(model, &actions)?;
        let e = match evaluate(model, &policy) {
            Ok(e) => e,
            Err(Error::NotTransient { .. }) => continue,
            Err(e) => return Err(e),
        };
        out.evaluated += 1;
        let (v, s) = (e.value.0, e.safety.0);
        if s.iter().any(|&x| x > p + 1e-10) {
            continue;
        }
        out.admissible += 1;
        out.coordinatewise_min = Some(match out.coordinatewise_min.take() {
            Some(m) => m.zip_map(&v, f64::min),
            None => v.clone(),
        });
        let better = out.best.as_ref().map_or(true, |(_, bv, _)| v.sum() < bv.sum());
        if better {
            out.best = Some((actions, v, s));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn c_always_moves_to_a() {
        let model = fixtures::ex1();
        for seed in 0..20 {
            let t = simulate(&model, &fixtures::ex1_policy(1, 0, 1), 2, seed, 100).unwrap();
            assert_eq!(t.states[1], 0);
        }
    }

    #[test]
    fn start_in_target_is_empty() {
        let model = fixtures::ex1();
        let t = simulate(&model, &fixtures::ex1_policy(0, 0, 0), 4, 1, 100).unwrap();
        assert_eq!(t.steps(), 0);
        assert_eq!(t.absorbed_in, Absorption::Target);
    }

    #[test]
    fn zero_rewards_give_zero_value() {
        let model = fixtures::ex1().with_scaled_rewards(0.0);
        let r = mc_estimates(&model, &fixtures::ex1_policy(0, 1, 0), 1, 1000, 3, 1000).unwrap();
        assert_eq!(r.value.mean, 0.0);
        assert_eq!(r.value.std_error, 0.0);
    }

    #[test]
    fn ex1_depth_three_is_exact() {
        let model = fixtures::ex1();
        let b = exhaustive_paths(&model, &fixtures::ex1_policy(0, 1, 0), 1, 3, 1000).unwrap();
        assert_eq!(b.mass_remaining, 0.0);
        assert!((b.s_lo - 0.4).abs() < 1e-15);
        assert_eq!(b.s_lo, b.s_hi);
        assert!((b.v_lo - 3.6).abs() < 1e-12);
    }

    #[test]
    fn depth_zero_and_geometric_tail() {
        let model = fixtures::ex1();
        let b = exhaustive_paths(&model, &fixtures::ex1_policy(0, 1, 0), 0, 0, 10).unwrap();
        assert_eq!((b.s_lo, b.mass_remaining), (0.0, 1.0));

        let g = fixtures::geometric(0.5, 1.0, 0.25);
        let pi = Policy::from_actions(&g, &[0]).unwrap();
        let b = exhaustive_paths(&g, &pi, 0, 10, 1000).unwrap();
        assert!((b.mass_remaining - 0.5f64.powi(10)).abs() < 1e-15);
    }

    #[test]
    fn path_budget() {
        let g = fixtures::geometric(0.5, 1.0, 0.25);
        let pi = Policy::from_actions(&g, &[0]).unwrap();
        assert!(matches!(
            exhaustive_paths(&g, &pi, 0, 64, 50),
            Err(Error::PathExplosion { budget: 50 })
        ));
    }

    #[test]
    fn brute_force_on_ex1() {
        let model = fixtures::ex1();
        let bf = brute_force_constrained(&model, 0.5, 100).unwrap();
        let (actions, v, _) = bf.best.unwrap();
        assert_eq!(actions, vec![0, 1, 0]);
        assert!((v - DVector::from_row_slice(&[1.0, 3.6, 4.0])).amax() < 1e-12);
        assert!(!brute_force_constrained(&model, 0.3, 100).unwrap().feasible());
    }

    #[test]
    fn pairwise_matches_naive_on_small_input() {
        let xs: Vec<f64> = (0..1000).map(|k| k as f64 * 0.5).collect();
        assert_eq!(pairwise_sum(&xs), 249_750.0);
    }
}

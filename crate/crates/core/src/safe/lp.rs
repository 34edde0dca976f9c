//! The dual as linear programs.
//!
//! For each taboo state `s` there is one block with variables `l^s ∈ R^H_{≥0}`
//! and a scalar multiplier `λ_s ≥ 0`:
//!
//! ```text
//! maximise    l^s(s) − p λ_s
//! subject to  l^s(i) − Σ_{j∈H} p_iuj l^s(j) − K(u, i) λ_s ≤ ρ(u, i)   ∀ i ∈ H, u
//! ```
//!
//! The rows say that `l^s` is a sub-solution of the Bellman inequality with
//! stage cost `ρ + λ_s K`, so the block optimum is `max_μ W^μ(s) − p μ`, the
//! constrained optimum at `s` over randomised policies. Only pure-action rows
//! are needed: each row of `Δ(π)` is a convex combination of them. The blocks
//! are independent and are solved one after another; the reported objective
//! is their sum.
//!
//! Nonnegativity of `l` is harmless when rewards are nonnegative, since then
//! all values are.

use nalgebra::DVector;

use super::{check_level, feasibility_check, ConstrainedSolveReport, Method, Multipliers, SAFETY_TOL};
use crate::bellman::{forbidden_exit_costs, reward_costs, solve_bellman, BellmanOptions};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::model::MdpModel;
use crate::simplex::{LinearProgram, LpSolution, Relation};

#[derive(Debug, Clone)]
pub struct LpProblem {
    pub p: f64,
    /// One program per taboo state; variable `j < |H|` is `l(j)`, the last is
    /// the multiplier.
    pub blocks: Vec<LinearProgram>,
}

impl LpProblem {
    pub fn n_constraints(&self) -> usize {
        self.blocks.iter().map(|b| b.constraints.len()).sum()
    }

    /// Plain-text tableau of every block, optionally with its solution.
    pub fn dump(&self, outcome: Option<&LpOutcome>) -> String {
        let mut out = String::new();
        for (s, block) in self.blocks.iter().enumerate() {
            out.push_str(&format!("## block {s}\n"));
            out.push_str(&block.dump(outcome.map(|o| &o.solutions[s])));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct LpOutcome {
    /// `l*(s) = l^s(s)`
    pub l: DVector<f64>,
    /// Block optima `l*(s) − p λ*(s)`: the optimal value at each state.
    /// Equal to `l*` where the multiplier vanishes.
    pub value: DVector<f64>,
    pub lambda: Multipliers,
    /// `Σ_s (l*(s) − p λ*(s))`
    pub objective: f64,
    pub solutions: Vec<LpSolution>,
}

pub fn build_lp(model: &MdpModel, p: f64) -> Result<LpProblem> {
    check_level(p)?;
    let h = model.n_taboo();
    let m = model.n_actions();
    let rho = reward_costs(model);
    let k = forbidden_exit_costs(model);
    let mut names: Vec<String> = model.taboo_labels().iter().map(|s| format!("l[{s}]")).collect();
    names.push(String::new());

    let mut blocks = Vec::with_capacity(h);
    for s in 0..h {
        let mut lp = LinearProgram::new(h + 1);
        names[h] = format!("lambda[{}]", model.states()[s]);
        lp.var_names = names.clone();
        lp.objective[s] = 1.0;
        lp.objective[h] = -p;
        for i in 0..h {
            for u in 0..m {
                let pu = model.transitions().action(u);
                let mut coeffs: Vec<f64> = (0..h).map(|j| -pu[(i, j)]).collect();
                coeffs[i] += 1.0;
                coeffs.push(-k[(i, u)]);
                let rhs = rho[(i, u)];
                // A self-loop with no exits gives 0 ≤ ρ: vacuous unless ρ < 0.
                if coeffs.iter().all(|&c| c == 0.0) && rhs >= 0.0 {
                    continue;
                }
                lp.add(coeffs, Relation::Le, rhs);
            }
        }
        blocks.push(lp);
    }
    Ok(LpProblem { p, blocks })
}

pub fn solve_lp(problem: &LpProblem) -> Result<LpOutcome> {
    let h = problem.blocks.len();
    let mut l = DVector::zeros(h);
    let mut lambda = DVector::zeros(h);
    let mut solutions = Vec::with_capacity(h);
    for (s, block) in problem.blocks.iter().enumerate() {
        let sol = block.solve()?;
        l[s] = sol.x[s];
        lambda[s] = sol.x[h];
        solutions.push(sol);
    }
    let objective = solutions.iter().map(|s| s.objective).sum();
    let value = DVector::from_iterator(h, solutions.iter().map(|s| s.objective));
    Ok(LpOutcome {
        l,
        value,
        lambda: Multipliers::new(lambda.map(|x| x.max(0.0)))?,
        objective,
        solutions,
    })
}

/// Builds and solves the programs, then extracts, for each block's optimal
/// multiplier, the greedy pure policy of the penalised problem and reports
/// the best `p`-safe one.
pub fn lp_solve(
    model: &MdpModel,
    p: f64,
    opts: BellmanOptions,
    oracle: Option<&DVector<f64>>,
) -> Result<(ConstrainedSolveReport, LpProblem, LpOutcome)> {
    check_level(p)?;
    let h = model.n_taboo();
    let problem = build_lp(model, p)?;
    let (safest, note) = feasibility_check(model, p, opts)?;
    if let Some(note) = note {
        let outcome = LpOutcome {
            l: DVector::from_element(h, f64::NAN),
            value: DVector::from_element(h, f64::NAN),
            lambda: Multipliers::zeros(h),
            objective: f64::NAN,
            solutions: Vec::new(),
        };
        return Ok((
            ConstrainedSolveReport::infeasible(Method::LinearProgram, h, note),
            problem,
            outcome,
        ));
    }
    let outcome = match solve_lp(&problem) {
        Err(Error::Unbounded) => {
            return Err(Error::Infeasible(
                "linear program is unbounded: the safety bound cannot be met".into(),
            ))
        }
        other => other?,
    };

    let rho = reward_costs(model);
    let k = forbidden_exit_costs(model);
    let mut candidates = vec![safest];
    let mut mus: Vec<f64> = outcome.lambda.as_vector().iter().copied().collect();
    mus.push(0.0);
    for mu in mus {
        let stage = &rho + &k * mu;
        let o = BellmanOptions {
            tol: opts.tol * (1.0 + stage.amax()),
            ..opts
        };
        candidates.push(solve_bellman(model, &stage, &DVector::zeros(h), o)?.policy);
    }
    let mut best: Option<(f64, crate::model::Policy)> = None;
    for policy in candidates {
        let e = evaluate(model, &policy)?;
        if e.safety.0.iter().all(|&x| x <= p + SAFETY_TOL) {
            let total = e.value.0.sum();
            if best.as_ref().map_or(true, |(b, _)| total < *b) {
                best = Some((total, policy));
            }
        }
    }

    let mut report = ConstrainedSolveReport {
        method: Method::LinearProgram,
        feasible: true,
        value: outcome.value.clone(),
        policy: None,
        policy_value: None,
        policy_safety: None,
        multipliers: Some(outcome.lambda.clone()),
        gap: None,
        iterations: outcome.solutions.iter().map(|s| s.pivots).sum(),
        notes: vec![format!(
            "{} blocks, {} constraints",
            problem.blocks.len(),
            problem.n_constraints()
        )],
    };
    if let Some((total, policy)) = best {
        report.gap = Some(total - outcome.objective);
        report.attach_policy(model, policy)?;
    } else {
        report
            .notes
            .push("no greedy pure policy at the optimal multipliers is p-safe".into());
    }
    if let Some(oracle) = oracle {
        report.gap = Some(oracle.sum() - outcome.objective);
    }
    Ok((report, problem, outcome))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::model::ModelBuilder;

    #[test]
    fn ex1_half() {
        let model = fixtures::ex1();
        let problem = build_lp(&model, 0.5).unwrap();
        assert_eq!(problem.blocks.len(), 3);
        for b in &problem.blocks {
            assert_eq!(b.constraints.len(), 6);
        }
        let out = solve_lp(&problem).unwrap();
        assert!((&out.l - DVector::from_row_slice(&[1.0, 3.6, 4.0])).amax() < 1e-9);
        assert_eq!(out.l, out.value);
        assert!(out.lambda.as_vector().amax() < 1e-9);
        assert!((out.objective - 8.6).abs() < 1e-9);
    }

    #[test]
    fn no_forbidden_states_gives_unconstrained_value() {
        let model = fixtures::ex1_without_forbidden();
        let out = solve_lp(&build_lp(&model, 0.0).unwrap()).unwrap();
        let vi = crate::bellman::value_iteration(&model, &DVector::zeros(3), BellmanOptions::with_tol(1e-13)).unwrap();
        assert!((&out.l - &vi.value).amax() < 1e-9);
    }

    #[test]
    fn single_state_picks_cheapest_action() {
        let model = ModelBuilder::new()
            .states(["h", "e"])
            .actions(["cheap", "dear"])
            .taboo(["h"])
            .target(["e"])
            .transition_all("h", "e", 1.0)
            .reward("h", "cheap", 1.0)
            .reward("h", "dear", 2.0)
            .build_validated()
            .unwrap();
        let out = solve_lp(&build_lp(&model, 0.5).unwrap()).unwrap();
        assert!((out.l[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lp_report_on_ex1() {
        let model = fixtures::ex1();
        let (report, problem, outcome) = lp_solve(&model, 0.5, BellmanOptions::with_tol(1e-12), None).unwrap();
        assert!(report.feasible);
        assert_eq!(report.policy.unwrap().actions(3).unwrap(), vec![0, 1, 0]);
        assert!(report.gap.unwrap().abs() < 1e-9);
        assert!(problem.dump(Some(&outcome)).contains("lambda[a]"));
    }
}

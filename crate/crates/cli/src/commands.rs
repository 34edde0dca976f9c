use std::path::{Path, PathBuf};

use nalgebra::DVector;
use safe_mdp::bellman::{safest_policy, value_iteration, BellmanOptions};
use safe_mdp::chain::{check_transient, evolution_residual, hitting_from, occupation_from, point_mass};
use safe_mdp::eval::evaluate;
use safe_mdp::safe::{
    constrained_vi_pure, dual_ascent, lp_solve, p_to_q, relative_admissible, relative_vi, DualOptions,
    Vertex,
};
use safe_mdp::sim::{brute_force_constrained, mc_estimates, McEstimate};
use safe_mdp::{load_model, load_policy, Error, MdpModel, Policy};
use serde_json::{json, Map, Value};

use crate::error::CliError;
use crate::report::{
    actions_json, cell, constrained_json, labelled, labelled_matrix, num, policy_json, read_input,
    state_table, InputFile, Output, Table,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Mode {
    Unconstrained,
    Safest,
    PSafe,
    Relative,
    Lp,
    Dual,
}

#[derive(Debug, Clone)]
pub struct SolveParams {
    pub mode: Mode,
    pub p: Option<f64>,
    pub q: Option<f64>,
    pub tol: f64,
    pub seed: u64,
    pub cap: u64,
    pub oracle: bool,
    pub dump_lp: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct SimulateParams {
    pub start: String,
    pub n: usize,
    pub seed: u64,
    pub max_steps: usize,
}

fn read_model(path: &Path, inputs: &mut Vec<InputFile>) -> Result<MdpModel, CliError> {
    let text = read_input(path, inputs)?;
    Ok(load_model(&text)?)
}

fn read_policy(model: &MdpModel, path: &Path, inputs: &mut Vec<InputFile>) -> Result<Policy, CliError> {
    let text = read_input(path, inputs)?;
    Ok(load_policy(model, &text)?)
}

pub fn validate(path: &Path, inputs: &mut Vec<InputFile>) -> Result<Output, CliError> {
    let model = read_model(path, inputs)?;
    let part = model.partition();
    let labels = |r: std::ops::Range<usize>| model.states()[r].to_vec();
    let count = model.pure_policy_count();
    let results = json!({
        "valid": true,
        "actions": model.actions(),
        "partition": {
            "taboo": labels(part.taboo_range()),
            "forbidden": labels(part.forbidden_range()),
            "target": labels(part.target_range()),
        },
        "pure_policies": u64::try_from(count).map_or_else(|_| Value::from(count.to_string()), Value::from),
    });
    let mut table = Table::new(["state", "class"]);
    for (i, s) in model.states().iter().enumerate() {
        let class = if part.is_taboo(i) {
            "taboo"
        } else if part.is_forbidden(i) {
            "forbidden"
        } else {
            "target"
        };
        table.push(vec![s.clone(), class.into()]);
    }
    Ok(Output {
        results,
        table: Some(table),
    })
}

pub fn eval(model_path: &Path, policy_path: &Path, inputs: &mut Vec<InputFile>) -> Result<Output, CliError> {
    let model = read_model(model_path, inputs)?;
    let policy = read_policy(&model, policy_path, inputs)?;
    let e = evaluate(&model, &policy)?;
    let chain = &e.chain;

    let mut residuals = Map::new();
    for (i, s) in model.taboo_labels().iter().enumerate() {
        let mu = point_mass(model.n_states(), i);
        let r = evolution_residual(&mu, &occupation_from(chain, &mu), &hitting_from(chain, &mu), chain.p())?;
        residuals.insert(s.clone(), num(r));
    }

    let results = json!({
        "policy": policy_json(&model, &policy),
        "value": labelled(&model, &e.value.0),
        "safety": labelled(&model, &e.safety.0),
        "reach": labelled(&model, &e.reach.0),
        "green": labelled_matrix(&model, chain.g()),
        "spectral_radius": num(check_transient(chain.q()).spectral_radius),
        "evolution_residual": Value::Object(residuals),
    });
    let table = state_table(
        &model,
        &[("value", &e.value.0), ("safety", &e.safety.0), ("reach", &e.reach.0)],
    );
    Ok(Output {
        results,
        table: Some(table),
    })
}

fn require(value: Option<f64>, flag: &str, mode: &str) -> Result<f64, CliError> {
    value.ok_or_else(|| CliError::Usage(format!("--mode {mode} needs {flag}")))
}

pub fn solve(model_path: &Path, params: &SolveParams, inputs: &mut Vec<InputFile>) -> Result<Output, CliError> {
    if !(params.tol > 0.0 && params.tol.is_finite()) {
        return Err(CliError::Usage(format!("--tol must be positive, got {}", params.tol)));
    }
    if params.oracle && !matches!(params.mode, Mode::PSafe | Mode::Lp | Mode::Dual) {
        return Err(CliError::Usage("--oracle applies to the p-safe, lp and dual modes".into()));
    }
    if params.dump_lp.is_some() && params.mode != Mode::Lp {
        return Err(CliError::Usage("--dump-lp applies to --mode lp".into()));
    }
    let model = read_model(model_path, inputs)?;
    let h = model.n_taboo();
    let opts = BellmanOptions::with_tol(params.tol);
    let mut results = Map::new();
    results.insert("mode".into(), Value::from(mode_name(params.mode)));
    results.insert("seed".into(), Value::from(params.seed));

    let oracle = if params.oracle {
        let p = require(params.p, "--p", mode_name(params.mode))?;
        let bf = brute_force_constrained(&model, p, params.cap)?;
        results.insert(
            "oracle".into(),
            json!({
                "admissible": bf.admissible,
                "evaluated": bf.evaluated,
                "policy": bf.best.as_ref().map_or(Value::Null, |b| actions_json(&model, &b.0)),
                "value": bf.best.as_ref().map_or(Value::Null, |b| labelled(&model, &b.1)),
                "coordinatewise_min": bf.coordinatewise_min.as_ref().map_or(Value::Null, |v| labelled(&model, v)),
            }),
        );
        bf.best.map(|b| b.1)
    } else {
        None
    };

    let zeros = DVector::zeros(h);
    let (table, feasible) = match params.mode {
        Mode::Unconstrained | Mode::Safest => {
            let (r, key) = if params.mode == Mode::Unconstrained {
                (value_iteration(&model, &zeros, opts)?, "value")
            } else {
                (safest_policy(&model, &zeros, opts)?, "safety")
            };
            let e = evaluate(&model, &r.policy)?;
            results.insert(key.into(), labelled(&model, &r.value));
            results.insert("policy".into(), policy_json(&model, &r.policy));
            results.insert("policy_value".into(), labelled(&model, &e.value.0));
            results.insert("policy_safety".into(), labelled(&model, &e.safety.0));
            results.insert("iterations".into(), Value::from(r.iterations));
            results.insert("residual".into(), num(r.residual));
            let table = state_table(
                &model,
                &[(key, &r.value), ("policy_value", &e.value.0), ("policy_safety", &e.safety.0)],
            );
            (Some(with_actions(table, &model, &r.policy)), true)
        }
        Mode::PSafe => {
            let p = require(params.p, "--p", "p-safe")?;
            results.insert("p".into(), num(p));
            let r = constrained_vi_pure(&model, p, opts, params.cap)?;
            results.insert("coordinatewise_min".into(), labelled(&model, &r.coordinatewise_min));
            results.insert("realized".into(), Value::from(r.realized));
            results.insert("admissible_count".into(), Value::from(r.admissible_count));
            merge(&mut results, constrained_json(&model, &r.report));
            (constrained_table(&model, &r.report), r.report.feasible)
        }
        Mode::Relative => {
            let q = match (params.q, params.p) {
                (Some(q), _) => q,
                (None, Some(p)) => p_to_q(p)?,
                (None, None) => return Err(CliError::Usage("--mode relative needs --q (or --p)".into())),
            };
            results.insert("q".into(), num(q));
            let admissible = relative_admissible(&model, q)?;
            let mut adm = Map::new();
            for a in &admissible {
                let vertices: Vec<Value> = a.vertices.iter().map(|v| vertex_json(&model, v)).collect();
                adm.insert(model.states()[a.state].clone(), Value::from(vertices));
            }
            results.insert("admissible".into(), Value::Object(adm));
            let r = relative_vi(&model, q, opts)?;
            merge(&mut results, constrained_json(&model, &r));
            (constrained_table(&model, &r), r.feasible)
        }
        Mode::Lp => {
            let p = require(params.p, "--p", "lp")?;
            results.insert("p".into(), num(p));
            let (r, problem, outcome) = lp_solve(&model, p, opts, oracle.as_ref())?;
            if let Some(path) = &params.dump_lp {
                let solved = r.feasible.then_some(&outcome);
                std::fs::write(path, problem.dump(solved)).map_err(|e| CliError::io(path, e))?;
            }
            results.insert(
                "lp".into(),
                json!({
                    "blocks": problem.blocks.len(),
                    "constraints": problem.n_constraints(),
                    "l": labelled(&model, &outcome.l),
                    "objective": num(outcome.objective),
                }),
            );
            merge(&mut results, constrained_json(&model, &r));
            (constrained_table(&model, &r), r.feasible)
        }
        Mode::Dual => {
            let p = require(params.p, "--p", "dual")?;
            results.insert("p".into(), num(p));
            let dual_opts = DualOptions {
                inner: opts,
                oracle,
                ..DualOptions::default()
            };
            let r = dual_ascent(&model, p, &dual_opts)?;
            merge(&mut results, constrained_json(&model, &r));
            (constrained_table(&model, &r), r.feasible)
        }
    };

    let results = Value::Object(results);
    if !feasible {
        let message = results["notes"]
            .as_array()
            .and_then(|n| n.first())
            .and_then(Value::as_str)
            .unwrap_or("no policy meets the safety bound")
            .to_string();
        return Err(CliError::Infeasible { message, results });
    }
    Ok(Output { results, table })
}

fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::Unconstrained => "unconstrained",
        Mode::Safest => "safest",
        Mode::PSafe => "p-safe",
        Mode::Relative => "relative",
        Mode::Lp => "lp",
        Mode::Dual => "dual",
    }
}

fn merge(into: &mut Map<String, Value>, from: Value) {
    if let Value::Object(m) = from {
        into.extend(m);
    }
}

fn vertex_json(model: &MdpModel, v: &Vertex) -> Value {
    let dist: Map<String, Value> = v
        .distribution(model.n_actions())
        .into_iter()
        .enumerate()
        .filter(|&(_, p)| p != 0.0)
        .map(|(u, p)| (model.actions()[u].clone(), num(p)))
        .collect();
    Value::Object(dist)
}

/// Adds a column naming the action (or mixture) played in each state.
fn with_actions(mut table: Table, model: &MdpModel, policy: &Policy) -> Table {
    let described = policy.describe(model);
    table.header.push("policy".into());
    for row in &mut table.rows {
        let dist = &described[&row[0]];
        let text = dist
            .iter()
            .map(|(a, p)| if *p == 1.0 { a.clone() } else { format!("{a}:{}", cell(*p)) })
            .collect::<Vec<_>>()
            .join(" ");
        row.push(text);
    }
    table
}

fn constrained_table(model: &MdpModel, r: &safe_mdp::safe::ConstrainedSolveReport) -> Option<Table> {
    let nan = DVector::from_element(model.n_taboo(), f64::NAN);
    let pv = r.policy_value.as_ref().unwrap_or(&nan);
    let ps = r.policy_safety.as_ref().unwrap_or(&nan);
    let mult = r.multipliers.as_ref().map(|m| m.as_vector().clone());
    let mut columns = vec![("value", &r.value), ("policy_value", pv), ("policy_safety", ps)];
    if let Some(m) = &mult {
        columns.push(("multiplier", m));
    }
    let table = state_table(model, &columns);
    Some(match &r.policy {
        Some(p) => with_actions(table, model, p),
        None => table,
    })
}

fn estimate_json(e: &McEstimate, analytic: Option<f64>) -> Value {
    json!({
        "estimate": num(e.mean),
        "std_error": num(e.std_error),
        "samples": e.n,
        "analytic": analytic.map_or(Value::Null, num),
        "within_3se": analytic.map_or(Value::Null, |x| Value::from(e.covers(x, 3.0))),
    })
}

pub fn simulate(
    model_path: &Path,
    policy_path: &Path,
    params: &SimulateParams,
    inputs: &mut Vec<InputFile>,
) -> Result<Output, CliError> {
    let model = read_model(model_path, inputs)?;
    let policy = read_policy(&model, policy_path, inputs)?;
    let start = model
        .state_index(&params.start)
        .filter(|&i| model.partition().is_taboo(i))
        .ok_or_else(|| CliError::Usage(format!("--start `{}` is not a taboo state", params.start)))?;
    let mc = mc_estimates(&model, &policy, start, params.n, params.seed, params.max_steps)?;
    // Simulation still makes sense on a chain that is not transient; only the
    // closed-form column is lost.
    let (analytic, transient) = match evaluate(&model, &policy) {
        Ok(e) => (Some((e.safety.0[start], e.reach.0[start], e.value.0[start])), true),
        Err(Error::NotTransient { .. }) => (None, false),
        Err(e) => return Err(e.into()),
    };
    let results = json!({
        "start": params.start,
        "n": params.n,
        "seed": params.seed,
        "max_steps": params.max_steps,
        "truncated": mc.truncated,
        "transient": transient,
        "safety": estimate_json(&mc.safety, analytic.map(|a| a.0)),
        "reach": estimate_json(&mc.reach, analytic.map(|a| a.1)),
        "value": estimate_json(&mc.value, analytic.map(|a| a.2)),
    });
    let mut table = Table::new(["quantity", "estimate", "std_error", "samples", "analytic"]);
    for (name, e, a) in [
        ("safety", &mc.safety, analytic.map(|a| a.0)),
        ("reach", &mc.reach, analytic.map(|a| a.1)),
        ("value", &mc.value, analytic.map(|a| a.2)),
    ] {
        table.push(vec![
            name.into(),
            cell(e.mean),
            cell(e.std_error),
            e.n.to_string(),
            a.map_or_else(String::new, cell),
        ]);
    }
    Ok(Output {
        results,
        table: Some(table),
    })
}

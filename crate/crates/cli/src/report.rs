//! JSON and CSV rendering.
//!
//! Every number goes through [`num`], which rounds to 12 significant digits,
//! so reports are stable across platforms and easy to diff. Objects are
//! `serde_json::Map`s, which keep their keys sorted.

use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use safe_mdp::safe::{ConstrainedSolveReport, Multipliers};
use safe_mdp::{MdpModel, Policy};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const SIGNIFICANT_DIGITS: usize = 12;

pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x)
        .parse()
        .expect("formatted float parses")
}

/// A rounded number, or `null` when it is not finite.
pub fn num(x: f64) -> Value {
    let r = round_sig(x);
    if r.is_finite() {
        // -0.0 would print as "-0.0"
        Value::from(if r == 0.0 { 0.0 } else { r })
    } else {
        Value::Null
    }
}

/// CSV cell for a number; non-finite values print as `inf`, `-inf`, `NaN`.
pub fn cell(x: f64) -> String {
    let r = round_sig(x);
    if r == 0.0 {
        "0".into()
    } else {
        r.to_string()
    }
}

/// Vector over the taboo states keyed by state label.
pub fn labelled(model: &MdpModel, v: &DVector<f64>) -> Value {
    let map: Map<String, Value> = model
        .taboo_labels()
        .iter()
        .zip(v.iter())
        .map(|(s, &x)| (s.clone(), num(x)))
        .collect();
    Value::Object(map)
}

/// Taboo-by-taboo matrix keyed by row label, then column label.
pub fn labelled_matrix(model: &MdpModel, m: &DMatrix<f64>) -> Value {
    let labels = model.taboo_labels();
    let rows: Map<String, Value> = labels
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let row: Map<String, Value> = labels
                .iter()
                .enumerate()
                .map(|(j, t)| (t.clone(), num(m[(i, j)])))
                .collect();
            (s.clone(), Value::Object(row))
        })
        .collect();
    Value::Object(rows)
}

/// `{state: {action: probability}}` with zero entries left out.
pub fn policy_json(model: &MdpModel, policy: &Policy) -> Value {
    let map: Map<String, Value> = policy
        .describe(model)
        .into_iter()
        .map(|(state, dist)| {
            let d: Map<String, Value> = dist.into_iter().map(|(a, p)| (a, num(p))).collect();
            (state, Value::Object(d))
        })
        .collect();
    Value::Object(map)
}

/// `{state: action}` for a pure policy given as action indices.
pub fn actions_json(model: &MdpModel, actions: &[usize]) -> Value {
    let map: Map<String, Value> = model
        .taboo_labels()
        .iter()
        .zip(actions)
        .map(|(s, &u)| (s.clone(), Value::from(model.actions()[u].clone())))
        .collect();
    Value::Object(map)
}

fn multipliers_json(model: &MdpModel, m: &Multipliers) -> Value {
    labelled(model, m.as_vector())
}

pub fn constrained_json(model: &MdpModel, report: &ConstrainedSolveReport) -> Value {
    let opt_vec = |v: &Option<DVector<f64>>| v.as_ref().map_or(Value::Null, |v| labelled(model, v));
    json!({
        "method": report.method.to_string(),
        "feasible": report.feasible,
        "value": labelled(model, &report.value),
        "policy": report.policy.as_ref().map_or(Value::Null, |p| policy_json(model, p)),
        "policy_value": opt_vec(&report.policy_value),
        "policy_safety": opt_vec(&report.policy_safety),
        "multipliers": report.multipliers.as_ref().map_or(Value::Null, |m| multipliers_json(model, m)),
        "gap": report.gap.map_or(Value::Null, num),
        "iterations": report.iterations,
        "notes": report.notes,
    })
}

/// A flat table for `--csv`.
#[derive(Debug, Clone, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<I, S>(header: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Table {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Per-state table of several labelled vectors.
pub fn state_table(model: &MdpModel, columns: &[(&str, &DVector<f64>)]) -> Table {
    let mut t = Table::new(std::iter::once("state").chain(columns.iter().map(|c| c.0)));
    for (i, s) in model.taboo_labels().iter().enumerate() {
        let mut row = vec![s.clone()];
        row.extend(columns.iter().map(|(_, v)| cell(v[i])));
        t.push(row);
    }
    t
}

/// What a successful command produces.
#[derive(Debug, Clone)]
pub struct Output {
    pub results: Value,
    pub table: Option<Table>,
}

#[derive(Debug, Clone)]
pub struct InputFile {
    pub path: PathBuf,
    pub sha256: String,
}

/// Reads a file and records its digest.
pub fn read_input(path: &Path, inputs: &mut Vec<InputFile>) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    inputs.push(InputFile {
        path: path.to_path_buf(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    });
    String::from_utf8(bytes).map_err(|e| {
        CliError::io(path, std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    })
}

/// The document printed by every command.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub command: Vec<String>,
    pub inputs: Vec<InputFile>,
    pub results: Option<Value>,
    pub error: Option<Value>,
    pub exit_code: u8,
    /// Only filled with `--timings`, so that reruns stay byte-identical.
    pub timings: Option<Value>,
}

impl RunReport {
    pub fn to_json(&self) -> Value {
        let mut hasher = Sha256::new();
        for f in &self.inputs {
            hasher.update(f.sha256.as_bytes());
        }
        let mut out = json!({
            "command": self.command,
            "inputs": {
                "digest": hex::encode(hasher.finalize()),
                "files": self.inputs.iter().map(|f| json!({
                    "path": f.path.display().to_string(),
                    "sha256": f.sha256,
                })).collect::<Vec<_>>(),
            },
            "results": self.results.clone().unwrap_or(Value::Null),
            "status": {
                "exit_code": self.exit_code,
                "error": self.error.clone().unwrap_or(Value::Null),
            },
        });
        if let Some(t) = &self.timings {
            out["timings"] = t.clone();
        }
        out
    }

    pub fn render(&self) -> String {
        serde_json::to_string_pretty(&self.to_json()).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounds_to_twelve_digits() {
        assert_eq!(round_sig(1.9999999999999998), 2.0);
        assert_eq!(round_sig(0.123456789012345), 0.123456789012);
        assert_eq!(round_sig(-3.6000000000000005), -3.6);
        assert_eq!(num(f64::NAN), Value::Null);
        assert_eq!(num(-0.0).to_string(), "0.0");
        assert_eq!(cell(4.0), "4");
        assert_eq!(cell(0.4), "0.4");
    }

    #[test]
    fn keys_are_sorted() {
        let v = json!({"zeta": 1, "alpha": 2});
        assert_eq!(v.to_string(), r#"{"alpha":2,"zeta":1}"#);
    }
}

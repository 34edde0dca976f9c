//! JSON documents for models and policies.
//!
//! Model:
//! ```json
//! {"states": [...], "actions": [...],
//!  "partition": {"taboo": [...], "forbidden": [...], "target": [...]},
//!  "transitions": [{"from": s, "action": u, "to": s, "p": x}, ...],
//!  "rewards": [{"state": s, "action": u, "rho": x}, ...]}
//! ```
//! Omitted transitions and rewards are zero.
//!
//! Policy: `{"policy": [{"state": s, "dist": {u: x, ...}}, ...]}`.

use std::collections::{BTreeMap, HashSet};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{validate_model, MdpModel, ModelBuilder, Policy};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDoc {
    #[serde(default)]
    pub states: Vec<String>,
    pub actions: Vec<String>,
    pub partition: PartitionDoc,
    #[serde(default)]
    pub transitions: Vec<TransitionDoc>,
    #[serde(default)]
    pub rewards: Vec<RewardDoc>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionDoc {
    #[serde(default)]
    pub taboo: Vec<String>,
    #[serde(default)]
    pub forbidden: Vec<String>,
    #[serde(default)]
    pub target: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionDoc {
    pub from: String,
    pub action: String,
    pub to: String,
    pub p: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardDoc {
    pub state: String,
    pub action: String,
    pub rho: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyDoc {
    pub policy: Vec<PolicyRowDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyRowDoc {
    pub state: String,
    pub dist: BTreeMap<String, f64>,
}

fn json_error(e: serde_json::Error) -> Error {
    Error::Parse {
        path: format!("line {} column {}", e.line(), e.column()),
        message: e.to_string(),
    }
}

/// Parses and validates a model document.
pub fn load_model(text: &str) -> Result<MdpModel> {
    let doc: ModelDoc = serde_json::from_str(text).map_err(json_error)?;
    model_from_doc(&doc)
}

pub fn model_from_doc(doc: &ModelDoc) -> Result<MdpModel> {
    let mut builder = ModelBuilder::new()
        .actions(doc.actions.iter().cloned())
        .taboo(doc.partition.taboo.iter().cloned())
        .forbidden(doc.partition.forbidden.iter().cloned())
        .target(doc.partition.target.iter().cloned());
    if !doc.states.is_empty() {
        builder = builder.states(doc.states.iter().cloned());
    }
    for t in &doc.transitions {
        builder = builder.transition(&t.from, &t.action, &t.to, t.p);
    }
    for r in &doc.rewards {
        builder = builder.reward(&r.state, &r.action, r.rho);
    }
    let model = builder.build()?;
    validate_model(&model).into_result()?;
    Ok(model)
}

pub fn model_to_doc(model: &MdpModel) -> ModelDoc {
    let states = model.states();
    let actions = model.actions();
    let part = model.partition();
    let labels = |r: std::ops::Range<usize>| states[r].to_vec();
    let mut transitions = Vec::new();
    for i in 0..model.n_states() {
        for u in 0..model.n_actions() {
            for j in 0..model.n_states() {
                let p = model.transitions().get(i, u, j);
                if p != 0.0 {
                    transitions.push(TransitionDoc {
                        from: states[i].clone(),
                        action: actions[u].clone(),
                        to: states[j].clone(),
                        p,
                    });
                }
            }
        }
    }
    let mut rewards = Vec::new();
    for i in 0..model.n_states() {
        for u in 0..model.n_actions() {
            let rho = model.rewards().get(u, i);
            if rho != 0.0 {
                rewards.push(RewardDoc {
                    state: states[i].clone(),
                    action: actions[u].clone(),
                    rho,
                });
            }
        }
    }
    ModelDoc {
        states: states.to_vec(),
        actions: actions.to_vec(),
        partition: PartitionDoc {
            taboo: labels(part.taboo_range()),
            forbidden: labels(part.forbidden_range()),
            target: labels(part.target_range()),
        },
        transitions,
        rewards,
    }
}

pub fn serialize_model(model: &MdpModel) -> String {
    serde_json::to_string_pretty(&model_to_doc(model)).expect("model document serializes")
}

/// Parses a policy document against `model`. Every taboo state needs a row;
/// rows for forbidden or target states are accepted and ignored.
pub fn load_policy(model: &MdpModel, text: &str) -> Result<Policy> {
    let doc: PolicyDoc = serde_json::from_str(text).map_err(json_error)?;
    policy_from_doc(model, &doc)
}

pub fn policy_from_doc(model: &MdpModel, doc: &PolicyDoc) -> Result<Policy> {
    let h = model.n_taboo();
    let mut rows = DMatrix::zeros(h, model.n_actions());
    let mut seen = HashSet::new();
    for (k, row) in doc.policy.iter().enumerate() {
        let i = model.state_index(&row.state).ok_or_else(|| Error::Parse {
            path: format!("policy[{k}].state"),
            message: format!("unknown state `{}`", row.state),
        })?;
        if !seen.insert(i) {
            return Err(Error::Parse {
                path: format!("policy[{k}].state"),
                message: format!("duplicate row for `{}`", row.state),
            });
        }
        for (a, &x) in &row.dist {
            let u = model.action_index(a).ok_or_else(|| Error::Parse {
                path: format!("policy[{k}].dist.{a}"),
                message: format!("unknown action `{a}`"),
            })?;
            if i < h {
                rows[(i, u)] = x;
            }
        }
    }
    for (i, label) in model.taboo_labels().iter().enumerate() {
        if !seen.contains(&i) {
            return Err(Error::MissingState(label.clone()));
        }
    }
    Policy::from_taboo_rows(model, &rows)
}

pub fn policy_to_doc(model: &MdpModel, policy: &Policy) -> PolicyDoc {
    let mut described = policy.describe(model);
    let policy = model
        .taboo_labels()
        .iter()
        .map(|state| PolicyRowDoc {
            state: state.clone(),
            dist: described.remove(state).unwrap_or_default(),
        })
        .collect();
    PolicyDoc { policy }
}

pub fn serialize_policy(model: &MdpModel, policy: &Policy) -> String {
    serde_json::to_string_pretty(&policy_to_doc(model, policy)).expect("policy serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn ex1_dimensions() {
        let model = load_model(fixtures::EX1_JSON).unwrap();
        assert_eq!(model.partition().n_taboo(), 3);
        assert_eq!(model.partition().n_forbidden(), 1);
        assert_eq!(model.partition().n_target(), 1);
        assert_eq!(model.states(), &["a", "b", "c", "d", "e"]);
    }

    #[test]
    fn missing_target_is_validation_error() {
        let text = r#"{"actions":["u"],"partition":{"taboo":["a"]},
            "transitions":[{"from":"a","action":"u","to":"a","p":1.0}]}"#;
        match load_model(text) {
            Err(Error::Validation(report)) => {
                assert!(report.violations.iter().any(|v| v.to_string() == "E empty"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_action_names_label() {
        let text = fixtures::EX1_JSON.replacen(
            r#""from": "b", "action": "u1""#,
            r#""from": "b", "action": "u9""#,
            1,
        );
        match load_model(&text) {
            Err(Error::Parse { path, message }) => {
                assert!(message.contains("u9"), "{message}");
                assert!(path.starts_with("transitions["), "{path}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_json_is_parse_error() {
        assert!(matches!(load_model("{\"states\": ["), Err(Error::Parse { .. })));
    }

    #[test]
    fn states_reordered_canonically() {
        let text = r#"{"states":["e","x","d"],"actions":["u"],
            "partition":{"taboo":["x"],"forbidden":["d"],"target":["e"]},
            "transitions":[{"from":"x","action":"u","to":"e","p":0.5},
                           {"from":"x","action":"u","to":"d","p":0.5}]}"#;
        let model = load_model(text).unwrap();
        assert_eq!(model.states(), &["x", "d", "e"]);
        // absorbing rows completed with self-loops
        assert_eq!(model.transitions().get(1, 0, 1), 1.0);
        assert_eq!(model.transitions().get(2, 0, 2), 1.0);
    }

    #[test]
    fn policy_round_trip() {
        let model = fixtures::ex1();
        let pi = fixtures::ex1_policy(0, 1, 0);
        let text = serialize_policy(&model, &pi);
        assert_eq!(load_policy(&model, &text).unwrap(), pi);
    }

    #[test]
    fn policy_missing_state() {
        let model = fixtures::ex1();
        let text = r#"{"policy":[{"state":"a","dist":{"u1":1.0}},{"state":"b","dist":{"u2":1.0}}]}"#;
        assert!(matches!(load_policy(&model, text), Err(Error::MissingState(s)) if s == "c"));
    }

    #[test]
    fn policy_rows_must_be_stochastic() {
        let model = fixtures::ex1();
        let text = r#"{"policy":[{"state":"a","dist":{"u1":0.7}},
            {"state":"b","dist":{"u2":1.0}},{"state":"c","dist":{"u1":1.0}}]}"#;
        assert!(matches!(load_policy(&model, text), Err(Error::InvalidPolicy(_))));
    }
}

//! Small reference models used by tests, the acceptance suite and the CLI docs.

use crate::io::load_model;
use crate::model::{MdpModel, ModelBuilder, Policy};

/// Five-state example: taboo `{a, b, c}`, forbidden `{d}`, target `{e}`,
/// actions `{u1, u2}`.
pub const EX1_JSON: &str = include_str!("../fixtures/ex1.json");

pub fn ex1() -> MdpModel {
    load_model(EX1_JSON).expect("EX1 fixture is valid")
}

/// Builder pre-filled with EX1's partition and actions, no transitions.
pub fn ex1_builder() -> ModelBuilder {
    ModelBuilder::new()
        .actions(["u1", "u2"])
        .taboo(["a", "b", "c"])
        .forbidden(["d"])
        .target(["e"])
}

/// Pure EX1 policy from action indices at `a`, `b`, `c` (0 = u1, 1 = u2).
pub fn ex1_policy(a: usize, b: usize, c: usize) -> Policy {
    Policy::from_actions(&ex1(), &[a, b, c]).expect("valid EX1 policy")
}

/// One taboo state `h` with self-loop probability `stay`, a single action `u`,
/// reward `reward`, and forbidden-exit probability `to_forbidden`; the rest of
/// the mass goes to the target.
pub fn geometric(stay: f64, reward: f64, to_forbidden: f64) -> MdpModel {
    ModelBuilder::new()
        .actions(["u"])
        .taboo(["h"])
        .forbidden(["d"])
        .target(["e"])
        .transition("h", "u", "h", stay)
        .transition("h", "u", "d", to_forbidden)
        .transition("h", "u", "e", 1.0 - stay - to_forbidden)
        .reward("h", "u", reward)
        .build_validated()
        .expect("geometric fixture is valid")
}

/// Two taboo states where `stay` keeps state `y` in place forever; used as a
/// planted recurrent class.
pub fn trap() -> MdpModel {
    ModelBuilder::new()
        .actions(["go", "stay"])
        .taboo(["x", "y"])
        .forbidden(["d"])
        .target(["e"])
        .transition("x", "go", "e", 1.0)
        .transition("x", "stay", "y", 1.0)
        .transition("y", "go", "e", 0.5)
        .transition("y", "go", "d", 0.5)
        .transition("y", "stay", "y", 1.0)
        .reward_all("x", 1.0)
        .reward_all("y", 1.0)
        .build_validated()
        .expect("trap fixture is valid")
}

/// EX1's transitions with the forbidden state removed (`d` becomes a second
/// target), so `U = ∅`.
pub fn ex1_without_forbidden() -> MdpModel {
    let text = EX1_JSON
        .replace(r#""forbidden": ["d"],"#, r#""forbidden": [],"#)
        .replace(r#""target": ["e"]"#, r#""target": ["d", "e"]"#);
    load_model(&text).expect("U-free EX1 variant is valid")
}

//! Safety-constrained dynamic programming on finite Markov decision processes.
//!
//! A model partitions its states into taboo states `H` (where the process
//! evolves), forbidden states `U` and target states `E`. The crate computes
//! the Green operator of the chain induced by a policy, the value, safety and
//! reach functions, unconstrained Bellman optima, and policies minimising
//! expected cost subject to `S_π ≤ p` or to the local `K_π ≤ q L_π` condition.

pub mod bellman;
pub mod chain;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod fixtures;
pub mod io;
pub mod model;
pub mod safe;
pub mod sim;
pub mod simplex;

pub use error::{Error, Result};
pub use io::{load_model, load_policy, serialize_model, serialize_policy};
pub use model::{induced_matrix, pure_policy, validate_model, MdpModel, Policy, StatePartition};

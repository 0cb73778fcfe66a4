//! Controller synthesis for discrete-time stochastic two-player games against
//! DFA properties, through grid abstractions and approximate probabilistic relations.

pub mod abstraction;
pub mod dfa;
pub mod error;
pub mod linalg;
pub mod model;
pub mod relation;
pub mod runtime;
pub mod stats;
pub mod synthesis;

pub use error::{Error, Result};

//! Propositional constraints and their probabilities under factorized
//! Bernoulli distributions.

mod formula;
mod world;

pub use formula::{parse, Bound, Expr, Formula};
pub use world::{
    bit, wmc, wmc_over, world_distribution, BernoulliVector, World, WorldTable, MAX_ENUM_VARS,
};

#[derive(Debug, thiserror::Error)]
pub enum LogicError {
    #[error("syntax error at offset {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("empty formula")]
    Empty,
    #[error("expected {expected} variables, got {got}")]
    ArityMismatch { expected: usize, got: usize },
    #[error("variable `{0}` is not in the shared variable order")]
    UnknownVariable(String),
    #[error("{n} variables exceeds the enumeration limit of {max}")]
    TooManyVariables { n: usize, max: usize },
    #[error("probability {value} at index {index} is outside [0, 1]")]
    InvalidProbability { index: usize, value: f64 },
}

//! Digit networks, class specifications and the three training objectives.

mod checkpoint;
mod layers;
mod losses;
mod nets;
mod spec;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use layers::{Conv, Dense};
pub use losses::{
    batch_targets, class_probabilities, classify, disjunctive_supervision_loss,
    factorized_world_probs, masked_nll, semantic_loss, truncated_semantic_loss, LossKind,
    LOG_FLOOR,
};
pub use nets::{
    binary_digit_forward, joint_world_forward, two_unit_readout, BinaryDigitNet, BinaryHead,
    DigitEncoder, JointEncoders, JointWorldNet, Network, TrafficModel, FEATURES, IMAGE_PIXELS,
    IMAGE_SIDE,
};
pub use spec::{ClassSpec, TRAFFIC_CONSTRAINT};

use crate::autodiff::AutodiffError;
use crate::logic::LogicError;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Logic(#[from] LogicError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("label {label} is not a class index (have {classes} classes)")]
    InvalidLabel { label: usize, classes: usize },
    #[error("class formulas are not a partition (exclusive: {exclusive}, exhaustive: {exhaustive})")]
    NotAPartition { exclusive: bool, exhaustive: bool },
    #[error("the truncated loss needs exactly 2 classes, got {0}")]
    NotBinary(usize),
    #[error("accepted-output vector has no accepted entry")]
    EmptyAcceptSet,
    #[error("output distribution sums to {0}, not 1")]
    NotNormalized(f64),
    #[error("expected input shape {expected:?}, got {got:?}")]
    InputShape { expected: Vec<usize>, got: Vec<usize> },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

//! Semantic loss, its truncated variant, disjunctive supervision, and the
//! classification rule.
//!
//! Scalar versions here work on explicit probabilities; [`masked_nll`]
//! builds the batched, differentiable counterpart on a tape.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::spec::ClassSpec;
use super::ModelError;
use crate::autodiff::{AutodiffError, NodeId, Tape, Tensor};
use crate::logic::{wmc_over, world_distribution, BernoulliVector};

/// Probabilities are clamped to this floor before any log.
pub const LOG_FLOOR: f64 = 1e-12;

fn neg_log(x: f64) -> f64 {
    -x.max(LOG_FLOOR).ln()
}

fn check_inputs(spec: &ClassSpec, y: usize, p: &BernoulliVector) -> Result<(), ModelError> {
    if y >= spec.n_classes() {
        return Err(ModelError::InvalidLabel {
            label: y,
            classes: spec.n_classes(),
        });
    }
    if p.len() != spec.table().n_vars() {
        return Err(ModelError::Logic(crate::logic::LogicError::ArityMismatch {
            expected: spec.table().n_vars(),
            got: p.len(),
        }));
    }
    Ok(())
}

/// Probability of every class formula under `p`.
pub fn class_probabilities(spec: &ClassSpec, p: &BernoulliVector) -> Result<Vec<f64>, ModelError> {
    spec.formulas()
        .iter()
        .map(|f| Ok(wmc_over(f, spec.table().vars(), p)?))
        .collect()
}

/// `-log p(phi_y)`.
pub fn semantic_loss(spec: &ClassSpec, y: usize, p: &BernoulliVector) -> Result<f64, ModelError> {
    check_inputs(spec, y, p)?;
    Ok(neg_log(wmc_over(
        &spec.formulas()[y],
        spec.table().vars(),
        p,
    )?))
}

/// The semantic loss with negative examples dropped: `-log p(phi_1)` for
/// `y = 1` and exactly zero for `y = 0`. Binary specs only.
pub fn truncated_semantic_loss(
    spec: &ClassSpec,
    y: usize,
    p: &BernoulliVector,
) -> Result<f64, ModelError> {
    if spec.n_classes() != 2 {
        return Err(ModelError::NotBinary(spec.n_classes()));
    }
    check_inputs(spec, y, p)?;
    if y == 0 {
        return Ok(0.0);
    }
    semantic_loss(spec, y, p)
}

/// `-log sum_m q[m] * accept[m]` for a normalized distribution `q`.
pub fn disjunctive_supervision_loss(q: &[f64], accept: &[bool]) -> Result<f64, ModelError> {
    if q.len() != accept.len() {
        return Err(ModelError::Logic(crate::logic::LogicError::ArityMismatch {
            expected: q.len(),
            got: accept.len(),
        }));
    }
    if !accept.iter().any(|&a| a) {
        return Err(ModelError::EmptyAcceptSet);
    }
    let total: f64 = q.iter().sum();
    if !((total - 1.0).abs() <= 1e-9) {
        return Err(ModelError::NotNormalized(total));
    }
    let mass: f64 = q.iter().zip(accept).filter(|(_, &a)| a).map(|(q, _)| q).sum();
    Ok(neg_log(mass))
}

/// Most probable class; ties go to the lowest index.
pub fn classify(spec: &ClassSpec, p: &BernoulliVector) -> Result<usize, ModelError> {
    let probs = class_probabilities(spec, p)?;
    Ok(argmax(&probs))
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// World probabilities `(!r!g, !rg, r!g, rg)` from the two light
/// probabilities.
pub fn factorized_world_probs(p_red: f64, p_green: f64) -> Result<[f64; 4], ModelError> {
    let q = world_distribution(&BernoulliVector::new(vec![p_red, p_green])?)?;
    Ok([q[0], q[1], q[2], q[3]])
}

/// Which objective a traffic-light run optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Semantic,
    TruncatedSemantic,
    Disjunctive,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [
        LossKind::Semantic,
        LossKind::TruncatedSemantic,
        LossKind::Disjunctive,
    ];

    /// Semantic variants use two independent light networks; disjunctive
    /// supervision uses one softmax over worlds.
    pub fn uses_joint_net(self) -> bool {
        matches!(self, LossKind::Disjunctive)
    }

    /// Per-example accepted-world mask and weight for class label `y`.
    pub fn target(self, spec: &ClassSpec, y: usize) -> (Vec<f64>, f64) {
        let mask = spec.table().beta_f64(y);
        let weight = match self {
            LossKind::TruncatedSemantic if y == 0 => 0.0,
            _ => 1.0,
        };
        (mask, weight)
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Semantic => "semantic",
            LossKind::TruncatedSemantic => "truncated",
            LossKind::Disjunctive => "disjunctive",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "semantic" => Ok(LossKind::Semantic),
            "truncated" | "truncated_semantic" | "truncated-semantic" => {
                Ok(LossKind::TruncatedSemantic)
            }
            "disjunctive" => Ok(LossKind::Disjunctive),
            other => Err(format!(
                "unknown loss `{other}` (expected semantic, truncated or disjunctive)"
            )),
        }
    }
}

/// Batch mean of `-w_b * log(max(sum_m q[b,m] * mask[b,m], floor))`.
///
/// `q` is `[B, M]`, `mask` is `[B, M]` and `weights` is `[B, 1]`.
pub fn masked_nll(
    tape: &mut Tape,
    q: NodeId,
    mask: Tensor,
    weights: Tensor,
) -> Result<NodeId, AutodiffError> {
    let shape = tape.value(q).shape().to_vec();
    if shape.len() != 2 {
        return Err(AutodiffError::Rank {
            op: "masked_nll",
            expected: 2,
            shape,
        });
    }
    let (b, m) = (shape[0], shape[1]);
    let mask = tape.constant(mask);
    let weights = tape.constant(weights);
    let ones = tape.constant(Tensor::full(&[m, 1], 1.0));
    let kept = tape.mul(q, mask)?;
    let mass = tape.matmul(kept, ones)?;
    let floored = tape.clamp_min(mass, LOG_FLOOR);
    let logs = tape.log(floored)?;
    let weighted = tape.mul(logs, weights)?;
    let total = tape.sum(weighted);
    Ok(tape.scalar_mul(total, -1.0 / b.max(1) as f64))
}

/// Stacks per-example targets into the `mask` and `weights` tensors
/// [`masked_nll`] expects.
pub fn batch_targets(kind: LossKind, spec: &ClassSpec, labels: &[usize]) -> (Tensor, Tensor) {
    let m = spec.table().n_worlds();
    let mut mask = Vec::with_capacity(labels.len() * m);
    let mut weights = Vec::with_capacity(labels.len());
    for &y in labels {
        let (row, w) = kind.target(spec, y);
        mask.extend(row);
        weights.push(w);
    }
    (
        Tensor::new(vec![labels.len(), m], mask).expect("mask shape"),
        Tensor::new(vec![labels.len(), 1], weights).expect("weight shape"),
    )
}

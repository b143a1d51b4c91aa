//! LeNet-style digit networks for the traffic-light experiments.
//!
//! Both architectures share the same encoder: two 5x5 convolutions with 6
//! and 16 channels, each followed by ReLU and 2x2 max pooling, flattening a
//! 28x28 image to 256 features.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Conv, Dense, ParamCursor};
use super::ModelError;
use crate::autodiff::{AutodiffError, NodeId, Tape, Tensor};

pub const IMAGE_SIDE: usize = 28;
pub const IMAGE_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;
pub const FEATURES: usize = 256;
const HIDDEN: [usize; 2] = [120, 84];

/// Anything with an ordered list of trainable tensors.
pub trait Network {
    fn params(&self) -> Vec<&Tensor>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    /// Puts every parameter on `tape`, tracked or constant, in `params()`
    /// order.
    fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<NodeId> {
        self.params()
            .into_iter()
            .map(|p| {
                if trainable {
                    tape.param(p.clone())
                } else {
                    tape.constant(p.clone())
                }
            })
            .collect()
    }

    fn n_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

/// How the binary network turns its last layer into `p(light on)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BinaryHead {
    /// Two sigmoid units `s0, s1`; `p_on = s1 / (s0 + s1)`.
    #[default]
    TwoUnitNormalized,
    /// One sigmoid unit read directly as `p_on`.
    SingleLogit,
}

impl BinaryHead {
    fn units(self) -> usize {
        match self {
            BinaryHead::TwoUnitNormalized => 2,
            BinaryHead::SingleLogit => 1,
        }
    }
}

impl fmt::Display for BinaryHead {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BinaryHead::TwoUnitNormalized => "two-unit-normalized",
            BinaryHead::SingleLogit => "single-logit",
        })
    }
}

impl FromStr for BinaryHead {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "two-unit-normalized" => Ok(BinaryHead::TwoUnitNormalized),
            "single-logit" => Ok(BinaryHead::SingleLogit),
            other => Err(format!(
                "unknown binary head `{other}` (expected two-unit-normalized or single-logit)"
            )),
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `p_on` of the two-unit head for pre-sigmoid logits `(z0, z1)`.
pub fn two_unit_readout(z0: f64, z1: f64) -> f64 {
    let (s0, s1) = (sigmoid(z0), sigmoid(z1));
    s1 / (s0 + s1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DigitEncoder {
    pub conv1: Conv,
    pub conv2: Conv,
}

impl DigitEncoder {
    pub fn init(rng: &mut impl Rng) -> Self {
        DigitEncoder {
            conv1: Conv::init(1, 6, rng),
            conv2: Conv::init(6, 16, rng),
        }
    }

    fn params(&self) -> Vec<&Tensor> {
        vec![
            &self.conv1.weight,
            &self.conv1.bias,
            &self.conv2.weight,
            &self.conv2.bias,
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.conv1.weight,
            &mut self.conv1.bias,
            &mut self.conv2.weight,
            &mut self.conv2.bias,
        ]
    }

    /// `[B, 1, 28, 28] -> [B, 256]`
    pub(crate) fn forward(
        tape: &mut Tape,
        p: &mut ParamCursor,
        x: NodeId,
    ) -> Result<NodeId, AutodiffError> {
        let batch = tape.value(x).shape()[0];
        let mut h = x;
        for _ in 0..2 {
            h = Conv::forward(tape, p, h)?;
            h = tape.relu(h);
            h = tape.maxpool2x2(h)?;
        }
        tape.reshape(h, &[batch, FEATURES])
    }
}

fn mlp_forward(
    tape: &mut Tape,
    p: &mut ParamCursor,
    x: NodeId,
) -> Result<NodeId, AutodiffError> {
    let mut h = x;
    for _ in HIDDEN {
        h = Dense::forward(tape, p, h)?;
        h = tape.relu(h);
    }
    Dense::forward(tape, p, h)
}

/// Predicts whether one light is on from its digit image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryDigitNet {
    pub head: BinaryHead,
    pub encoder: DigitEncoder,
    pub fc1: Dense,
    pub fc2: Dense,
    pub out: Dense,
}

impl BinaryDigitNet {
    pub fn init(head: BinaryHead, rng: &mut impl Rng) -> Self {
        BinaryDigitNet {
            head,
            encoder: DigitEncoder::init(rng),
            fc1: Dense::init(FEATURES, HIDDEN[0], rng),
            fc2: Dense::init(HIDDEN[0], HIDDEN[1], rng),
            out: Dense::init(HIDDEN[1], head.units(), rng),
        }
    }

    /// `[B, 1, 28, 28] -> p_on [B, 1]`
    pub(crate) fn forward(
        &self,
        tape: &mut Tape,
        p: &mut ParamCursor,
        x: NodeId,
    ) -> Result<NodeId, AutodiffError> {
        let features = DigitEncoder::forward(tape, p, x)?;
        let logits = mlp_forward(tape, p, features)?;
        let s = tape.sigmoid(logits);
        match self.head {
            BinaryHead::SingleLogit => Ok(s),
            BinaryHead::TwoUnitNormalized => {
                let norm = tape.normalize_rows(s)?;
                tape.select_cols(norm, &[1])
            }
        }
    }

    /// `p_on` for each image in a `[B, 1, 28, 28]` (or `[1, 28, 28]`) batch.
    pub fn predict(&self, images: &Tensor) -> Result<Vec<f64>, ModelError> {
        let images = as_batch(images)?;
        let mut tape = Tape::new();
        let ids = self.bind(&mut tape, false);
        let x = tape.constant(images);
        let out = self.forward(&mut tape, &mut ParamCursor::new(&ids), x)?;
        Ok(tape.value(out).data().to_vec())
    }
}

impl Network for BinaryDigitNet {
    fn params(&self) -> Vec<&Tensor> {
        let mut v = self.encoder.params();
        for d in [&self.fc1, &self.fc2, &self.out] {
            v.push(&d.weight);
            v.push(&d.bias);
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.encoder.params_mut();
        for d in [&mut self.fc1, &mut self.fc2, &mut self.out] {
            v.push(&mut d.weight);
            v.push(&mut d.bias);
        }
        v
    }
}

/// `p_on` of a single `1x28x28` image.
pub fn binary_digit_forward(net: &BinaryDigitNet, image: &Tensor) -> Result<f64, ModelError> {
    if image.shape() != [1, IMAGE_SIDE, IMAGE_SIDE] {
        return Err(ModelError::InputShape {
            expected: vec![1, IMAGE_SIDE, IMAGE_SIDE],
            got: image.shape().to_vec(),
        });
    }
    Ok(net.predict(image)?[0])
}

fn as_batch(images: &Tensor) -> Result<Tensor, ModelError> {
    match images.shape() {
        [1, h, w] if *h == IMAGE_SIDE && *w == IMAGE_SIDE => {
            Ok(images.clone().reshape(&[1, 1, IMAGE_SIDE, IMAGE_SIDE])?)
        }
        [_, 1, h, w] if *h == IMAGE_SIDE && *w == IMAGE_SIDE => Ok(images.clone()),
        other => Err(ModelError::InputShape {
            expected: vec![0, 1, IMAGE_SIDE, IMAGE_SIDE],
            got: other.to_vec(),
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JointEncoders {
    Shared(DigitEncoder),
    Separate { red: DigitEncoder, green: DigitEncoder },
}

/// One softmax over the four light configurations, from both images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointWorldNet {
    pub encoders: JointEncoders,
    pub fc1: Dense,
    pub fc2: Dense,
    pub out: Dense,
}

impl JointWorldNet {
    pub fn init(shared_encoder: bool, rng: &mut impl Rng) -> Self {
        let encoders = if shared_encoder {
            JointEncoders::Shared(DigitEncoder::init(rng))
        } else {
            JointEncoders::Separate {
                red: DigitEncoder::init(rng),
                green: DigitEncoder::init(rng),
            }
        };
        JointWorldNet {
            encoders,
            fc1: Dense::init(2 * FEATURES, HIDDEN[0], rng),
            fc2: Dense::init(HIDDEN[0], HIDDEN[1], rng),
            out: Dense::init(HIDDEN[1], 4, rng),
        }
    }

    pub fn shared_encoder(&self) -> bool {
        matches!(self.encoders, JointEncoders::Shared(_))
    }

    /// Pre-softmax scores `[B, 4]`.
    pub(crate) fn logits(
        &self,
        tape: &mut Tape,
        p: &mut ParamCursor,
        red: NodeId,
        green: NodeId,
    ) -> Result<NodeId, AutodiffError> {
        let (fr, fg) = match &self.encoders {
            JointEncoders::Shared(_) => {
                let ids: Vec<NodeId> = (0..4).map(|_| p.next()).collect();
                let fr = DigitEncoder::forward(tape, &mut ParamCursor::new(&ids), red)?;
                let fg = DigitEncoder::forward(tape, &mut ParamCursor::new(&ids), green)?;
                (fr, fg)
            }
            JointEncoders::Separate { .. } => {
                let fr = DigitEncoder::forward(tape, p, red)?;
                let fg = DigitEncoder::forward(tape, p, green)?;
                (fr, fg)
            }
        };
        let features = tape.concat(fr, fg)?;
        mlp_forward(tape, p, features)
    }

    /// World probabilities `[B, 4]`.
    pub(crate) fn forward(
        &self,
        tape: &mut Tape,
        p: &mut ParamCursor,
        red: NodeId,
        green: NodeId,
    ) -> Result<NodeId, AutodiffError> {
        let logits = self.logits(tape, p, red, green)?;
        Ok(tape.softmax(logits))
    }
}

impl Network for JointWorldNet {
    fn params(&self) -> Vec<&Tensor> {
        let mut v = match &self.encoders {
            JointEncoders::Shared(e) => e.params(),
            JointEncoders::Separate { red, green } => {
                let mut v = red.params();
                v.extend(green.params());
                v
            }
        };
        for d in [&self.fc1, &self.fc2, &self.out] {
            v.push(&d.weight);
            v.push(&d.bias);
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = match &mut self.encoders {
            JointEncoders::Shared(e) => e.params_mut(),
            JointEncoders::Separate { red, green } => {
                let mut v = red.params_mut();
                v.extend(green.params_mut());
                v
            }
        };
        for d in [&mut self.fc1, &mut self.fc2, &mut self.out] {
            v.push(&mut d.weight);
            v.push(&mut d.bias);
        }
        v
    }
}

/// The four world probabilities for one image pair.
pub fn joint_world_forward(
    net: &JointWorldNet,
    red: &Tensor,
    green: &Tensor,
) -> Result<[f64; 4], ModelError> {
    let q = TrafficModel::Joint(net.clone()).world_probs(&as_batch(red)?, &as_batch(green)?)?;
    Ok([q[0], q[1], q[2], q[3]])
}

/// The network(s) trained in one traffic-light run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrafficModel {
    /// Independent red and green light classifiers.
    Pair {
        red: BinaryDigitNet,
        green: BinaryDigitNet,
    },
    Joint(JointWorldNet),
}

impl TrafficModel {
    /// World probabilities `[B, 4]` in the order `(!r!g, !rg, r!g, rg)`.
    pub(crate) fn world_probs_on(
        &self,
        tape: &mut Tape,
        ids: &[NodeId],
        red: NodeId,
        green: NodeId,
    ) -> Result<NodeId, AutodiffError> {
        let mut p = ParamCursor::new(ids);
        match self {
            TrafficModel::Pair { red: rn, green: gn } => {
                let pr = rn.forward(tape, &mut p, red)?;
                let pg = gn.forward(tape, &mut p, green)?;
                let probs = tape.concat(pr, pg)?;
                tape.factorize(probs)
            }
            TrafficModel::Joint(net) => net.forward(tape, &mut p, red, green),
        }
    }

    /// Row-major `[B, 4]` world probabilities for image batches
    /// `[B, 1, 28, 28]`.
    pub fn world_probs(&self, red: &Tensor, green: &Tensor) -> Result<Vec<f64>, ModelError> {
        let mut tape = Tape::new();
        let ids = self.bind(&mut tape, false);
        let r = tape.constant(as_batch(red)?);
        let g = tape.constant(as_batch(green)?);
        let q = self.world_probs_on(&mut tape, &ids, r, g)?;
        Ok(tape.value(q).data().to_vec())
    }
}

impl Network for TrafficModel {
    fn params(&self) -> Vec<&Tensor> {
        match self {
            TrafficModel::Pair { red, green } => {
                let mut v = red.params();
                v.extend(green.params());
                v
            }
            TrafficModel::Joint(net) => net.params(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            TrafficModel::Pair { red, green } => {
                let mut v = red.params_mut();
                v.extend(green.params_mut());
                v
            }
            TrafficModel::Joint(net) => net.params_mut(),
        }
    }
}

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, NodeId, Tape, Tensor};

/// Walks the node ids a network bound onto a tape, in `params()` order.
pub(crate) struct ParamCursor<'a>(std::slice::Iter<'a, NodeId>);

impl<'a> ParamCursor<'a> {
    pub fn new(ids: &'a [NodeId]) -> Self {
        ParamCursor(ids.iter())
    }

    pub fn next(&mut self) -> NodeId {
        *self.0.next().expect("parameter layout mismatch")
    }
}

/// 5x5 valid convolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv {
    pub weight: Tensor,
    pub bias: Tensor,
}

pub const KERNEL: usize = 5;

impl Conv {
    pub fn init(in_channels: usize, out_channels: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / ((in_channels * KERNEL * KERNEL) as f64).sqrt();
        Conv {
            weight: Tensor::uniform(&[out_channels, in_channels, KERNEL, KERNEL], bound, rng),
            bias: Tensor::uniform(&[out_channels], bound, rng),
        }
    }

    pub(crate) fn forward(
        tape: &mut Tape,
        p: &mut ParamCursor,
        x: NodeId,
    ) -> Result<NodeId, AutodiffError> {
        let (w, b) = (p.next(), p.next());
        tape.conv2d(x, w, b)
    }
}

/// Fully connected layer, `weight [in, out]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub fn init(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        Dense {
            weight: Tensor::uniform(&[inputs, outputs], bound, rng),
            bias: Tensor::uniform(&[outputs], bound, rng),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub(crate) fn forward(
        tape: &mut Tape,
        p: &mut ParamCursor,
        x: NodeId,
    ) -> Result<NodeId, AutodiffError> {
        let (w, b) = (p.next(), p.next());
        let h = tape.matmul(x, w)?;
        tape.add_bias(h, b)
    }
}

//! One training run: Adam on minibatches, with the test set evaluated per
//! partition as training proceeds.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::trajectory::{PartitionProbs, Trajectory, TrajectoryRecord, N_PARTITIONS, N_WORLDS};
use super::{LabError, RunConfig};
use crate::autodiff::{AdamConfig, AdamState, Tape, Tensor};
use crate::data::{batch, stack_images, TrafficDataset, TrafficExample};
use crate::models::{
    batch_targets, masked_nll, BinaryDigitNet, ClassSpec, JointWorldNet, Network, TrafficModel,
};

/// Held-out accuracy of each light network, thresholding `p_on` at 0.5.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DigitAccuracy {
    pub red: f64,
    pub green: f64,
}

impl DigitAccuracy {
    pub fn mean(&self) -> f64 {
        (self.red + self.green) / 2.0
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub model: TrafficModel,
    pub trajectory: Trajectory,
    pub updates: u64,
    /// Mean loss over the last epoch; NaN when no update ran.
    pub final_epoch_loss: f64,
    /// Only for the two-network models.
    pub digit_accuracy: Option<DigitAccuracy>,
}

pub fn init_model(config: &RunConfig, rng: &mut impl Rng) -> TrafficModel {
    if config.loss_kind.uses_joint_net() {
        TrafficModel::Joint(JointWorldNet::init(config.shared_encoder, rng))
    } else {
        let red = BinaryDigitNet::init(config.binary_head, rng);
        let green = BinaryDigitNet::init(config.binary_head, rng);
        TrafficModel::Pair { red, green }
    }
}

/// Test images stacked once, with each example's partition.
struct TestSet {
    red: Tensor,
    green: Tensor,
    partitions: Vec<usize>,
    red_on: Vec<bool>,
    green_on: Vec<bool>,
}

impl TestSet {
    fn new(examples: &[TrafficExample]) -> Self {
        TestSet {
            red: stack_images(examples.iter().map(|e| &*e.red)),
            green: stack_images(examples.iter().map(|e| &*e.green)),
            partitions: examples.iter().map(|e| e.config).collect(),
            red_on: examples.iter().map(|e| e.red.label == 1).collect(),
            green_on: examples.iter().map(|e| e.green.label == 1).collect(),
        }
    }

    fn evaluate(&self, model: &TrafficModel) -> Result<PartitionProbs, LabError> {
        let q = model.world_probs(&self.red, &self.green)?;
        let mut sums = [[0.0; N_WORLDS]; N_PARTITIONS];
        let mut counts = [0usize; N_PARTITIONS];
        for (row, &p) in q.chunks(N_WORLDS).zip(&self.partitions) {
            counts[p] += 1;
            for (s, v) in sums[p].iter_mut().zip(row) {
                *s += v;
            }
        }
        for (row, &n) in sums.iter_mut().zip(&counts) {
            for s in row.iter_mut() {
                *s = if n == 0 { f64::NAN } else { *s / n as f64 };
            }
        }
        Ok(sums)
    }

    fn digit_accuracy(&self, model: &TrafficModel) -> Result<Option<DigitAccuracy>, LabError> {
        let TrafficModel::Pair { red, green } = model else {
            return Ok(None);
        };
        let acc = |net: &BinaryDigitNet, images: &Tensor, on: &[bool]| -> Result<f64, LabError> {
            let p = net.predict(images)?;
            let hits = p.iter().zip(on).filter(|(p, on)| (**p > 0.5) == **on).count();
            Ok(hits as f64 / on.len().max(1) as f64)
        };
        Ok(Some(DigitAccuracy {
            red: acc(red, &self.red, &self.red_on)?,
            green: acc(green, &self.green, &self.green_on)?,
        }))
    }
}

/// Trains a fresh model on `dataset`. The model initialization and batch
/// order are drawn from `run_seed`; the same inputs always give the same
/// trajectory.
pub fn train_run(
    config: &RunConfig,
    dataset: &TrafficDataset,
    run: usize,
    run_seed: u64,
) -> Result<RunOutput, LabError> {
    config.validate()?;
    let spec = ClassSpec::traffic_light();
    let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
    let mut model = init_model(config, &mut rng);
    let mut adam = AdamState::new(AdamConfig::with_lr(config.lr), model.params());
    let test = TestSet::new(&dataset.test);

    let mut trajectory = Trajectory {
        run,
        seed: Some(run_seed),
        records: vec![TrajectoryRecord {
            step: 0,
            probs: test.evaluate(&model)?,
        }],
    };
    let mut order: Vec<usize> = (0..dataset.train.len()).collect();
    let mut step = 0u64;
    let mut final_epoch_loss = f64::NAN;

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let examples: Vec<&TrafficExample> = chunk.iter().map(|&i| &dataset.train[i]).collect();
            let (red, green, labels) = batch(&examples);
            let (mask, weights) = batch_targets(config.loss_kind, &spec, &labels);

            let mut tape = Tape::new();
            let ids = model.bind(&mut tape, true);
            let r = tape.constant(red);
            let g = tape.constant(green);
            let q = model.world_probs_on(&mut tape, &ids, r, g)?;
            let loss = masked_nll(&mut tape, q, mask, weights)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(LabError::NonFiniteLoss { run, step, value });
            }
            let mut grads = tape.backward(loss)?;
            let grads: Vec<Tensor> = ids
                .iter()
                .map(|&id| grads.take(id).expect("every parameter gets a gradient"))
                .collect();
            adam.step(&mut model.params_mut(), &grads)?;

            step += 1;
            epoch_loss += value;
            batches += 1;
            if step.is_multiple_of(config.eval_every as u64) {
                trajectory.records.push(TrajectoryRecord {
                    step,
                    probs: test.evaluate(&model)?,
                });
            }
        }
        if batches > 0 {
            final_epoch_loss = epoch_loss / batches as f64;
        }
    }
    if trajectory.records.last().map(|r| r.step) != Some(step) {
        trajectory.records.push(TrajectoryRecord {
            step,
            probs: test.evaluate(&model)?,
        });
    }

    let digit_accuracy = test.digit_accuracy(&model)?;
    Ok(RunOutput {
        model,
        trajectory,
        updates: step,
        final_epoch_loss,
        digit_accuracy,
    })
}

//! Traffic-light pairs: a red-light image and a green-light image, where a
//! "1" digit means the light is on and a "0" digit means it is off.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{DataError, MnistImage};
use crate::autodiff::Tensor;
use crate::logic::World;
use crate::models::{ClassSpec, IMAGE_PIXELS, IMAGE_SIDE};

type SharedImage = Arc<MnistImage>;

/// Light configurations in world order `(!r!g, !rg, r!g, rg)`.
pub const CONFIG_NAMES: [&str; 4] = ["nn", "ng", "rn", "rg"];
/// The configuration with both lights on.
pub const VIOLATING_CONFIG: usize = 3;
/// Share of each digit pool kept aside for test pairs.
pub const HELD_OUT_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetSizes {
    /// Constraint-satisfying training pairs, spread evenly over the three
    /// allowed configurations.
    pub train_positive: usize,
    /// Training pairs with both lights on.
    pub train_negative: usize,
    pub test_per_config: usize,
}

impl Default for DatasetSizes {
    fn default() -> Self {
        DatasetSizes {
            train_positive: 1600,
            train_negative: 1600,
            test_per_config: 50,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrafficExample {
    pub red: Arc<MnistImage>,
    pub green: Arc<MnistImage>,
    /// 1 if at most one light is on, else 0.
    pub y: usize,
    /// World index, `2 * red_on + green_on`.
    pub config: usize,
}

#[derive(Debug, Clone)]
pub struct TrafficDataset {
    pub train: Vec<TrafficExample>,
    pub test: Vec<TrafficExample>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Serialize)]
struct ManifestRow<'a> {
    split: &'a str,
    config: &'a str,
    y: usize,
    red_source: usize,
    green_source: usize,
}

/// Whether the light described by `config` is lit, for var 0 (red) or
/// var 1 (green).
pub fn light_on(config: usize, var: usize) -> bool {
    World::from_index(config, 2).get(var)
}

/// Label of a configuration under the traffic-light class spec.
pub fn config_label(config: usize) -> usize {
    let spec = ClassSpec::traffic_light();
    let world = World::from_index(config, 2);
    spec.formulas()
        .iter()
        .position(|f| f.evaluate(&world).expect("two-variable world"))
        .expect("classes are exhaustive")
}

fn split_pool(
    pool: &[MnistImage],
    digit: u8,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<SharedImage>, Vec<SharedImage>), DataError> {
    if pool.len() < 2 {
        return Err(DataError::PoolTooSmall {
            digit,
            have: pool.len(),
        });
    }
    if let Some(bad) = pool.iter().find(|im| im.label != digit) {
        return Err(DataError::WrongDigit {
            expected: digit,
            found: bad.label,
        });
    }
    let mut shuffled: Vec<Arc<MnistImage>> = pool.iter().cloned().map(Arc::new).collect();
    shuffled.shuffle(rng);
    let held = ((pool.len() as f64 * HELD_OUT_FRACTION).round() as usize).clamp(1, pool.len() - 1);
    let train = shuffled.split_off(held);
    Ok((train, shuffled))
}

fn sample_pair(
    config: usize,
    zeros: &[Arc<MnistImage>],
    ones: &[Arc<MnistImage>],
    rng: &mut ChaCha8Rng,
) -> TrafficExample {
    let mut pick = |on: bool| {
        let pool = if on { ones } else { zeros };
        Arc::clone(&pool[rng.gen_range(0..pool.len())])
    };
    let red = pick(light_on(config, 0));
    let green = pick(light_on(config, 1));
    TrafficExample {
        red,
        green,
        y: usize::from(config != VIOLATING_CONFIG),
        config,
    }
}

/// Builds train and test pairs from pools of "0" and "1" images.
///
/// Each pool is shuffled and split so that no image appears in both train
/// and test. Images are drawn with replacement within a split.
pub fn build_traffic_dataset(
    zeros: &[MnistImage],
    ones: &[MnistImage],
    sizes: DatasetSizes,
    seed: u64,
) -> Result<TrafficDataset, DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (zero_train, zero_test) = split_pool(zeros, 0, &mut rng)?;
    let (one_train, one_test) = split_pool(ones, 1, &mut rng)?;

    let mut train = Vec::with_capacity(sizes.train_positive + sizes.train_negative);
    for i in 0..sizes.train_positive {
        train.push(sample_pair(i % 3, &zero_train, &one_train, &mut rng));
    }
    for _ in 0..sizes.train_negative {
        train.push(sample_pair(VIOLATING_CONFIG, &zero_train, &one_train, &mut rng));
    }
    train.shuffle(&mut rng);

    let mut test = Vec::with_capacity(4 * sizes.test_per_config);
    for config in 0..4 {
        for _ in 0..sizes.test_per_config {
            test.push(sample_pair(config, &zero_test, &one_test, &mut rng));
        }
    }
    Ok(TrafficDataset { train, test })
}

impl TrafficDataset {
    pub fn split(&self, split: Split) -> &[TrafficExample] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    /// CSV listing every pair: split, configuration, label and the source
    /// indices of both images.
    pub fn manifest_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for split in [Split::Train, Split::Test] {
            for ex in self.split(split) {
                w.serialize(ManifestRow {
                    split: split.name(),
                    config: CONFIG_NAMES[ex.config],
                    y: ex.y,
                    red_source: ex.red.source_index,
                    green_source: ex.green.source_index,
                })
                .expect("in-memory csv write");
            }
        }
        w.into_inner().expect("in-memory csv flush")
    }
}

/// Stacks images into a `[B, 1, 28, 28]` tensor.
pub fn stack_images<'a>(images: impl ExactSizeIterator<Item = &'a MnistImage>) -> Tensor {
    let n = images.len();
    let mut data = Vec::with_capacity(n * IMAGE_PIXELS);
    for im in images {
        data.extend_from_slice(&im.pixels);
    }
    Tensor::new(vec![n, 1, IMAGE_SIDE, IMAGE_SIDE], data).expect("image batch shape")
}

/// Red images, green images and labels for a batch of examples.
pub fn batch(examples: &[&TrafficExample]) -> (Tensor, Tensor, Vec<usize>) {
    (
        stack_images(examples.iter().map(|e| &*e.red)),
        stack_images(examples.iter().map(|e| &*e.green)),
        examples.iter().map(|e| e.y).collect(),
    )
}

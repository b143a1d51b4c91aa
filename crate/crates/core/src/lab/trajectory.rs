//! Per-partition world-probability trajectories, their CSV form, multi-run
//! aggregation and the analyses run on top of them.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::LabError;
use crate::data::{CONFIG_NAMES, VIOLATING_CONFIG};
use crate::models::LossKind;

pub const N_PARTITIONS: usize = 4;
pub const N_WORLDS: usize = 4;
pub const WORLD_NAMES: [&str; N_WORLDS] = ["w0", "w1", "w2", "w3"];

/// Mean world probabilities, indexed `[partition][world]`.
pub type PartitionProbs = [[f64; N_WORLDS]; N_PARTITIONS];

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    /// Parameter updates applied before this evaluation.
    pub step: u64,
    pub probs: PartitionProbs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub run: usize,
    /// `None` when read back from CSV, which does not store seeds.
    pub seed: Option<u64>,
    pub records: Vec<TrajectoryRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRecord {
    pub step: u64,
    pub mean: PartitionProbs,
    pub ci95: PartitionProbs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateTrajectory {
    pub runs: usize,
    pub records: Vec<AggregateRecord>,
}

#[derive(Serialize, Deserialize)]
struct TrajectoryRow {
    run: usize,
    step: u64,
    partition: String,
    world: String,
    prob: f64,
}

#[derive(Serialize)]
struct AggregateRow<'a> {
    step: u64,
    partition: &'a str,
    world: &'a str,
    mean: f64,
    ci95: f64,
}

fn name_index(names: &[&str], value: &str, what: &str) -> Result<usize, LabError> {
    names
        .iter()
        .position(|n| *n == value)
        .ok_or_else(|| LabError::Csv(format!("unknown {what} `{value}`")))
}

impl Trajectory {
    pub fn last(&self) -> Option<&TrajectoryRecord> {
        self.records.last()
    }

    /// Relabels the first three outputs so that output `i` becomes the
    /// `i`-th entry of `order`; the violating world stays last.
    pub fn reorder_outputs(&self, order: [usize; 3]) -> Trajectory {
        let perm = [order[0], order[1], order[2], VIOLATING_CONFIG];
        let records = self
            .records
            .iter()
            .map(|r| TrajectoryRecord {
                step: r.step,
                probs: r.probs.map(|row| perm.map(|w| row[w])),
            })
            .collect();
        Trajectory {
            run: self.run,
            seed: self.seed,
            records,
        }
    }
}

pub fn trajectories_to_csv(trajectories: &[Trajectory]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for t in trajectories {
        for r in &t.records {
            for (p, row) in r.probs.iter().enumerate() {
                for (m, &prob) in row.iter().enumerate() {
                    w.serialize(TrajectoryRow {
                        run: t.run,
                        step: r.step,
                        partition: CONFIG_NAMES[p].to_string(),
                        world: WORLD_NAMES[m].to_string(),
                        prob,
                    })
                    .expect("in-memory csv write");
                }
            }
        }
    }
    w.into_inner().expect("in-memory csv flush")
}

/// Parses trajectory CSV, grouping rows by run (ascending) and step (in file
/// order). Every record must list all 16 partition/world cells.
pub fn trajectories_from_csv(bytes: &[u8]) -> Result<Vec<Trajectory>, LabError> {
    let mut rdr = csv::Reader::from_reader(bytes);
    let headers = rdr.headers().map_err(|e| LabError::Csv(e.to_string()))?.clone();
    if headers != vec!["run", "step", "partition", "world", "prob"] {
        return Err(LabError::Csv(format!("unexpected header {headers:?}")));
    }
    let mut runs: BTreeMap<usize, Vec<(u64, PartitionProbs, u16)>> = BTreeMap::new();
    for (line, row) in rdr.deserialize::<TrajectoryRow>().enumerate() {
        let row = row.map_err(|e| LabError::Csv(format!("row {}: {e}", line + 2)))?;
        let p = name_index(&CONFIG_NAMES, &row.partition, "partition")?;
        let m = name_index(&WORLD_NAMES, &row.world, "world")?;
        let records = runs.entry(row.run).or_default();
        if records.last().is_none_or(|r| r.0 != row.step) {
            records.push((row.step, [[f64::NAN; N_WORLDS]; N_PARTITIONS], 0));
        }
        let rec = records.last_mut().expect("just pushed");
        let bit = 1u16 << (p * N_WORLDS + m);
        if rec.2 & bit != 0 {
            return Err(LabError::Csv(format!(
                "run {} step {}: duplicate cell {}/{}",
                row.run, row.step, row.partition, row.world
            )));
        }
        rec.2 |= bit;
        rec.1[p][m] = row.prob;
    }
    runs.into_iter()
        .map(|(run, records)| {
            let records = records
                .into_iter()
                .map(|(step, probs, seen)| {
                    if seen != u16::MAX {
                        return Err(LabError::Csv(format!("run {run} step {step}: missing cells")));
                    }
                    Ok(TrajectoryRecord { step, probs })
                })
                .collect::<Result<_, _>>()?;
            Ok(Trajectory {
                run,
                seed: None,
                records,
            })
        })
        .collect()
}

/// Pointwise mean over runs with a normal-approximation 95% half-width,
/// `1.96 * s / sqrt(R)` with `s` the sample standard deviation. A single
/// run gets half-width 0.
pub fn aggregate_runs(trajectories: &[Trajectory]) -> Result<AggregateTrajectory, LabError> {
    let first = trajectories.first().ok_or(LabError::NoRuns)?;
    let steps: Vec<u64> = first.records.iter().map(|r| r.step).collect();
    for t in trajectories {
        let other: Vec<u64> = t.records.iter().map(|r| r.step).collect();
        if other != steps {
            return Err(LabError::MismatchedTrajectories(format!(
                "run {} has {} records, run {} has {}",
                first.run,
                steps.len(),
                t.run,
                other.len()
            )));
        }
    }
    let r = trajectories.len() as f64;
    let records = steps
        .iter()
        .enumerate()
        .map(|(i, &step)| {
            let mut mean = [[0.0; N_WORLDS]; N_PARTITIONS];
            let mut ci95 = [[0.0; N_WORLDS]; N_PARTITIONS];
            for p in 0..N_PARTITIONS {
                for m in 0..N_WORLDS {
                    let values = trajectories.iter().map(|t| t.records[i].probs[p][m]);
                    let mu = values.clone().sum::<f64>() / r;
                    mean[p][m] = mu;
                    if trajectories.len() > 1 {
                        let var = values.map(|v| (v - mu) * (v - mu)).sum::<f64>() / (r - 1.0);
                        ci95[p][m] = 1.96 * var.sqrt() / r.sqrt();
                    }
                }
            }
            AggregateRecord { step, mean, ci95 }
        })
        .collect();
    Ok(AggregateTrajectory {
        runs: trajectories.len(),
        records,
    })
}

pub fn aggregate_to_csv(agg: &AggregateTrajectory) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &agg.records {
        for p in 0..N_PARTITIONS {
            for m in 0..N_WORLDS {
                w.serialize(AggregateRow {
                    step: r.step,
                    partition: CONFIG_NAMES[p],
                    world: WORLD_NAMES[m],
                    mean: r.mean[p][m],
                    ci95: r.ci95[p][m],
                })
                .expect("in-memory csv write");
            }
        }
    }
    w.into_inner().expect("in-memory csv flush")
}

impl AggregateTrajectory {
    /// The mean curve as a trajectory, for running trajectory analyses on
    /// the aggregate.
    pub fn mean_trajectory(&self) -> Trajectory {
        Trajectory {
            run: 0,
            seed: None,
            records: self
                .records
                .iter()
                .map(|r| TrajectoryRecord {
                    step: r.step,
                    probs: r.mean,
                })
                .collect(),
        }
    }
}

/// Orders the three constraint-satisfying outputs of a disjunctive run by
/// their total probability over all records and satisfying partitions,
/// largest first, ties to the lower index.
pub fn rank_ds_outputs(loss: LossKind, trajectory: &Trajectory) -> Result<[usize; 3], LabError> {
    if loss != LossKind::Disjunctive {
        return Err(LabError::WrongLossKind(loss));
    }
    let mut sums = [0.0; 3];
    for r in &trajectory.records {
        for (p, row) in r.probs.iter().enumerate() {
            if p == VIOLATING_CONFIG {
                continue;
            }
            for (m, s) in sums.iter_mut().enumerate() {
                *s += row[m];
            }
        }
    }
    Ok(rank_by_sum(sums))
}

fn rank_by_sum(sums: [f64; 3]) -> [usize; 3] {
    let mut order = [0, 1, 2];
    order.sort_by(|&a, &b| sums[b].total_cmp(&sums[a]));
    order
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Collapse {
    Zero,
    One,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasReport {
    /// Tail means, `[partition][world]`.
    pub tail_mean: PartitionProbs,
    pub tail_len: usize,
    pub cells: [[Option<Collapse>; N_WORLDS]; N_PARTITIONS],
    /// The world that collapsed to 1 on every partition, if any.
    pub biased_world: Option<usize>,
}

impl BiasReport {
    pub fn is_biased(&self) -> bool {
        self.biased_world.is_some()
    }
}

pub const DEFAULT_TAIL_FRACTION: f64 = 0.1;
pub const DEFAULT_BIAS_TOL: f64 = 0.05;

/// Flags cells whose mean over the last `ceil(tail_fraction * T)` records
/// lies within `tol` of 0 or 1. The run is biased when one world has
/// collapsed to 1 on all four partitions.
pub fn detect_deterministic_bias(
    trajectory: &Trajectory,
    tail_fraction: f64,
    tol: f64,
) -> BiasReport {
    let t = trajectory.records.len();
    let tail_len = ((tail_fraction * t as f64).ceil() as usize).clamp(t.min(1), t);
    let tail = &trajectory.records[t - tail_len..];
    let mut tail_mean = [[f64::NAN; N_WORLDS]; N_PARTITIONS];
    let mut cells = [[None; N_WORLDS]; N_PARTITIONS];
    for p in 0..N_PARTITIONS {
        for m in 0..N_WORLDS {
            if tail.is_empty() {
                continue;
            }
            let mu = tail.iter().map(|r| r.probs[p][m]).sum::<f64>() / tail_len as f64;
            tail_mean[p][m] = mu;
            cells[p][m] = if (mu - 1.0).abs() <= tol {
                Some(Collapse::One)
            } else if mu.abs() <= tol {
                Some(Collapse::Zero)
            } else {
                None
            };
        }
    }
    let biased_world =
        (0..N_WORLDS).find(|&m| (0..N_PARTITIONS).all(|p| cells[p][m] == Some(Collapse::One)));
    BiasReport {
        tail_mean,
        tail_len,
        cells,
        biased_world,
    }
}

//! Multi-run experiments and the files they leave behind.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::trajectory::{
    aggregate_runs, aggregate_to_csv, detect_deterministic_bias, rank_ds_outputs,
    trajectories_from_csv, trajectories_to_csv, AggregateTrajectory, BiasReport, Collapse,
    Trajectory, DEFAULT_BIAS_TOL, DEFAULT_TAIL_FRACTION, N_PARTITIONS, N_WORLDS, WORLD_NAMES,
};
use super::train::{train_run, RunOutput};
use super::{LabError, RunConfig};
use crate::data::{build_traffic_dataset, synth_digits, MnistImage, TrafficDataset, CONFIG_NAMES};
use crate::fsutil::write_atomic;
use crate::models::{Checkpoint, LossKind};

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const RANKED_AGGREGATE_FILE: &str = "ranked_aggregate.csv";
pub const CONFIG_FILE: &str = "config.txt";
pub const REPORT_FILE: &str = "report.txt";
pub const RUNS_FILE: &str = "runs.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";

/// Where the "0" and "1" images come from.
#[derive(Debug, Clone)]
pub enum DataSource {
    /// Fresh synthetic digits for every run.
    Synthetic,
    /// Fixed image pools, re-split and re-sampled for every run.
    Pools {
        zeros: Arc<Vec<MnistImage>>,
        ones: Arc<Vec<MnistImage>>,
    },
}

/// Per-run seeds derived from the experiment seed.
pub fn run_seeds(seed: u64, runs: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..runs).map(|_| rng.gen()).collect()
}

/// Builds the dataset for one run. Data and model seeds are split off the
/// run seed so that each stream is independent of the other.
pub fn run_dataset(
    config: &RunConfig,
    source: &DataSource,
    run_seed: u64,
) -> Result<(TrafficDataset, u64), LabError> {
    let mut split = ChaCha8Rng::seed_from_u64(run_seed);
    let (data_seed, pixel_seed, model_seed): (u64, u64, u64) = (split.gen(), split.gen(), split.gen());
    let sizes = config.dataset_sizes();
    let dataset = match source {
        DataSource::Synthetic => {
            let (zeros, ones) = synth_digits(config.synthetic_per_digit, pixel_seed);
            build_traffic_dataset(&zeros, &ones, sizes, data_seed)?
        }
        DataSource::Pools { zeros, ones } => build_traffic_dataset(zeros, ones, sizes, data_seed)?,
    };
    Ok((dataset, model_seed))
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub run: usize,
    pub seed: u64,
    pub output: RunOutput,
}

/// Runs `config.runs` independent runs, in parallel where threads are
/// available. Results come back in run order.
pub fn run_experiment(config: &RunConfig, source: &DataSource) -> Result<Vec<RunResult>, LabError> {
    config.validate()?;
    run_seeds(config.seed, config.runs)
        .into_par_iter()
        .enumerate()
        .map(|(run, seed)| {
            let (dataset, model_seed) = run_dataset(config, source, seed)?;
            let output = train_run(config, &dataset, run, model_seed)?;
            Ok(RunResult { run, seed, output })
        })
        .collect()
}

/// Everything derived from stored trajectories.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub aggregate: AggregateTrajectory,
    pub bias: Vec<BiasReport>,
    pub aggregate_bias: BiasReport,
    /// Disjunctive runs only: per-run output order and the aggregate of the
    /// reordered runs.
    pub ranking: Option<(Vec<[usize; 3]>, AggregateTrajectory)>,
}

pub fn analyze(loss: LossKind, trajectories: &[Trajectory]) -> Result<Analysis, LabError> {
    let aggregate = aggregate_runs(trajectories)?;
    let bias = trajectories
        .iter()
        .map(|t| detect_deterministic_bias(t, DEFAULT_TAIL_FRACTION, DEFAULT_BIAS_TOL))
        .collect();
    let aggregate_bias = detect_deterministic_bias(
        &aggregate.mean_trajectory(),
        DEFAULT_TAIL_FRACTION,
        DEFAULT_BIAS_TOL,
    );
    let ranking = if loss == LossKind::Disjunctive {
        let orders = trajectories
            .iter()
            .map(|t| rank_ds_outputs(loss, t))
            .collect::<Result<Vec<_>, _>>()?;
        let reordered: Vec<Trajectory> = trajectories
            .iter()
            .zip(&orders)
            .map(|(t, &o)| t.reorder_outputs(o))
            .collect();
        Some((orders, aggregate_runs(&reordered)?))
    } else {
        None
    };
    Ok(Analysis {
        aggregate,
        bias,
        aggregate_bias,
        ranking,
    })
}

fn fmt_probs(row: &[f64; N_WORLDS]) -> String {
    row.iter().map(|p| format!("{p:.4}")).collect::<Vec<_>>().join(" ")
}

fn bias_line(report: &BiasReport) -> String {
    match report.biased_world {
        Some(m) => format!("biased: {} ({}) collapsed to 1 on every partition", WORLD_NAMES[m], CONFIG_NAMES[m]),
        None => "not biased".to_string(),
    }
}

/// Plain-text summary: final means, the bias detector per run and on the
/// mean curve, and the output ranking for disjunctive runs.
pub fn render_report(loss: LossKind, analysis: &Analysis) -> String {
    let mut s = String::new();
    let agg = &analysis.aggregate;
    let last = agg.records.last().expect("aggregate has records");
    let _ = writeln!(s, "loss: {loss}");
    let _ = writeln!(s, "runs: {}", agg.runs);
    let _ = writeln!(s, "final step: {}", last.step);
    let _ = writeln!(s);
    let _ = writeln!(s, "final mean world probabilities (w0 w1 w2 w3):");
    for p in 0..N_PARTITIONS {
        let _ = writeln!(s, "  {}: {}", CONFIG_NAMES[p], fmt_probs(&last.mean[p]));
    }
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "deterministic bias (tail fraction {DEFAULT_TAIL_FRACTION}, tolerance {DEFAULT_BIAS_TOL}):"
    );
    let _ = writeln!(s, "  mean curve: {}", bias_line(&analysis.aggregate_bias));
    for p in 0..N_PARTITIONS {
        let cells: Vec<String> = (0..N_WORLDS)
            .map(|m| match analysis.aggregate_bias.cells[p][m] {
                Some(Collapse::One) => "1".to_string(),
                Some(Collapse::Zero) => "0".to_string(),
                None => "-".to_string(),
            })
            .collect();
        let _ = writeln!(s, "    {}: {}", CONFIG_NAMES[p], cells.join(" "));
    }
    let biased = analysis.bias.iter().filter(|b| b.is_biased()).count();
    let _ = writeln!(s, "  biased runs: {biased}/{}", analysis.bias.len());
    for (i, b) in analysis.bias.iter().enumerate() {
        let _ = writeln!(s, "    run {i}: {}", bias_line(b));
    }
    if let Some((orders, ranked)) = &analysis.ranking {
        let _ = writeln!(s);
        let _ = writeln!(s, "output ranking (satisfying outputs by total probability):");
        for (i, o) in orders.iter().enumerate() {
            let _ = writeln!(s, "  run {i}: {} {} {}", WORLD_NAMES[o[0]], WORLD_NAMES[o[1]], WORLD_NAMES[o[2]]);
        }
        let last = ranked.records.last().expect("ranked aggregate has records");
        let _ = writeln!(s, "final mean of ranked outputs (top second third violating):");
        for p in 0..N_PARTITIONS {
            let _ = writeln!(s, "  {}: {}", CONFIG_NAMES[p], fmt_probs(&last.mean[p]));
        }
    }
    s
}

fn runs_csv(results: &[RunResult]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["run", "seed", "updates", "final_epoch_loss", "red_accuracy", "green_accuracy"])
        .expect("in-memory csv write");
    for r in results {
        let (red, green) = match r.output.digit_accuracy {
            Some(a) => (a.red.to_string(), a.green.to_string()),
            None => (String::new(), String::new()),
        };
        w.write_record([
            r.run.to_string(),
            r.seed.to_string(),
            r.output.updates.to_string(),
            r.output.final_epoch_loss.to_string(),
            red,
            green,
        ])
        .expect("in-memory csv write");
    }
    w.into_inner().expect("in-memory csv flush")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> LabError + '_ {
    move |source| LabError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf, LabError> {
    let path = dir.join(name);
    write_atomic(&path, bytes).map_err(io_err(&path))?;
    Ok(path)
}

fn write_analysis(dir: &Path, loss: LossKind, analysis: &Analysis) -> Result<(), LabError> {
    write(dir, AGGREGATE_FILE, &aggregate_to_csv(&analysis.aggregate))?;
    if let Some((_, ranked)) = &analysis.ranking {
        write(dir, RANKED_AGGREGATE_FILE, &aggregate_to_csv(ranked))?;
    }
    write(dir, REPORT_FILE, render_report(loss, analysis).as_bytes())?;
    Ok(())
}

/// Writes trajectories, aggregates, the report, per-run summaries, the
/// config and one checkpoint per run into `dir`.
pub fn write_experiment(
    dir: &Path,
    config: &RunConfig,
    results: &[RunResult],
) -> Result<Analysis, LabError> {
    std::fs::create_dir_all(dir.join(CHECKPOINT_DIR)).map_err(io_err(dir))?;
    let trajectories: Vec<Trajectory> = results.iter().map(|r| r.output.trajectory.clone()).collect();
    let analysis = analyze(config.loss_kind, &trajectories)?;
    write(dir, CONFIG_FILE, config.to_string().as_bytes())?;
    write(dir, TRAJECTORY_FILE, &trajectories_to_csv(&trajectories))?;
    write(dir, RUNS_FILE, &runs_csv(results))?;
    write_analysis(dir, config.loss_kind, &analysis)?;
    for r in results {
        let ck = Checkpoint::new(
            r.seed,
            config.loss_kind,
            config.binary_head,
            config.shared_encoder,
            r.output.model.clone(),
        );
        let path = dir.join(CHECKPOINT_DIR).join(format!("run-{:03}.json", r.run));
        ck.save(&path)?;
    }
    Ok(analysis)
}

/// Recomputes the aggregate CSVs and the report of a finished experiment
/// from its stored trajectories and config.
pub fn regenerate_report(dir: &Path) -> Result<Analysis, LabError> {
    let config_path = dir.join(CONFIG_FILE);
    let text = std::fs::read_to_string(&config_path).map_err(io_err(&config_path))?;
    let mut config = RunConfig::default();
    config.apply_text(&text)?;
    let traj_path = dir.join(TRAJECTORY_FILE);
    let bytes = std::fs::read(&traj_path).map_err(io_err(&traj_path))?;
    let trajectories = trajectories_from_csv(&bytes)?;
    let analysis = analyze(config.loss_kind, &trajectories)?;
    write_analysis(dir, config.loss_kind, &analysis)?;
    Ok(analysis)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(loss: LossKind) -> RunConfig {
        RunConfig {
            loss_kind: loss,
            epochs: 1,
            runs: 2,
            eval_every: 2,
            train_pairs: 64,
            test_per_config: 3,
            synthetic_per_digit: 10,
            seed: 9,
            ..RunConfig::default()
        }
    }

    #[test]
    fn seeds_are_stable_and_distinct() {
        let s = run_seeds(1, 5);
        assert_eq!(s, run_seeds(1, 5));
        assert_eq!(&s[..3], &run_seeds(1, 3)[..]);
        assert_ne!(s[0], s[1]);
    }

    #[test]
    fn runs_differ_but_repeat() {
        let config = tiny(LossKind::Semantic);
        let a = run_experiment(&config, &DataSource::Synthetic).unwrap();
        let b = run_experiment(&config, &DataSource::Synthetic).unwrap();
        assert_eq!(a.len(), 2);
        assert_ne!(a[0].output.trajectory.records, a[1].output.trajectory.records);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.output.trajectory, y.output.trajectory);
        }
    }

    #[test]
    fn write_then_regenerate_is_identical() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny(LossKind::Disjunctive);
        let results = run_experiment(&config, &DataSource::Synthetic).unwrap();
        write_experiment(dir.path(), &config, &results).unwrap();
        let files = [AGGREGATE_FILE, RANKED_AGGREGATE_FILE, REPORT_FILE];
        let before: Vec<Vec<u8>> = files.iter().map(|f| std::fs::read(dir.path().join(f)).unwrap()).collect();
        for f in files {
            std::fs::remove_file(dir.path().join(f)).unwrap();
        }
        regenerate_report(dir.path()).unwrap();
        for (f, b) in files.iter().zip(&before) {
            assert_eq!(&std::fs::read(dir.path().join(f)).unwrap(), b, "{f}");
        }
        let ck = Checkpoint::load(&dir.path().join(CHECKPOINT_DIR).join("run-001.json")).unwrap();
        assert_eq!(ck.model, results[1].output.model);
        let report = std::fs::read_to_string(dir.path().join(REPORT_FILE)).unwrap();
        assert!(report.contains("output ranking"));
    }

    #[test]
    fn pool_source_uses_given_images() {
        let (z, o) = synth_digits(10, 3);
        let source = DataSource::Pools {
            zeros: Arc::new(z.clone()),
            ones: Arc::new(o),
        };
        let (ds, _) = run_dataset(&tiny(LossKind::Semantic), &source, 4).unwrap();
        let zero_ids: Vec<usize> = z.iter().map(|im| im.source_index).collect();
        assert!(ds.test.iter().filter(|e| e.config == 0).all(|e| zero_ids.contains(&e.red.source_index)));
        assert_eq!(ds.train.len(), 64);
    }
}

//! Command-line interface: `wmc`, `train`, `check` and `report`.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::data::load_zero_one_pools;
use crate::lab::{
    gradient_check, regenerate_report, render_report, run_experiment, sl_ds_equivalence_check,
    wmc_oracle_check, write_experiment, wta_step_check, CheckReport, DataSource, LabError,
    RunConfig,
};
use crate::logic::{parse, wmc_over, BernoulliVector};
use crate::models::{BinaryHead, LossKind};

pub const DATA_DIR_ENV: &str = "NESYLAB_DATA_DIR";

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "nesylab", version, about = "Semantic loss, disjunctive supervision and the traffic-light experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Probability that a formula holds under independent variables.
    Wmc(WmcArgs),
    /// Train on traffic-light pairs and write trajectories, aggregates and checkpoints.
    Train(TrainArgs),
    /// Run a randomized verification suite.
    Check(CheckArgs),
    /// Recompute aggregates and the report from a finished experiment.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct WmcArgs {
    /// Formula, e.g. "(!r & g) | (r & !g)".
    #[arg(long)]
    formula: String,
    /// Comma-separated probabilities, one per variable.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    probs: Vec<f64>,
    /// Comma-separated variable order for --probs (default: order of first
    /// appearance in the formula).
    #[arg(long, value_delimiter = ',')]
    vars: Option<Vec<String>>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Objective: semantic, truncated or disjunctive.
    #[arg(long)]
    loss: Option<LossKind>,
    /// `key = value` file with run settings; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// two-unit-normalized or single-logit.
    #[arg(long)]
    binary_head: Option<BinaryHead>,
    /// Share one encoder between both images (disjunctive network only).
    #[arg(long)]
    shared_encoder: Option<bool>,
    #[arg(long)]
    train_pairs: Option<usize>,
    #[arg(long)]
    test_per_config: Option<usize>,
    /// Use generated digits instead of MNIST files.
    #[arg(long)]
    synthetic: bool,
    /// Directory holding MNIST IDX files.
    #[arg(long, env = DATA_DIR_ENV)]
    data_dir: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Suite {
    Theorem1,
    Theorem2,
    Gradients,
    Oracle,
}

#[derive(Debug, Args)]
struct CheckArgs {
    #[arg(long, value_enum)]
    suite: Suite,
    /// Trials (instances per primitive for `gradients`). Defaults: 1000
    /// for the theorem suites, 500 for the oracle, 10 for gradients.
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Largest variable count for theorem1 (default 8) and oracle (default 10).
    #[arg(long)]
    max_vars: Option<usize>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Directory written by `train`.
    #[arg(long)]
    dir: PathBuf,
}

/// Bad input from the user, as opposed to a failure while running.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct UsageError(String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Formats a probability with at most 12 decimals and no trailing zeros.
pub fn format_probability(p: f64) -> String {
    let s = format!("{p:.12}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() || s == "-" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

fn cmd_wmc(args: WmcArgs, out: &mut dyn Write) -> Result<i32> {
    let f = parse(&args.formula).map_err(|e| usage(format!("--formula: {e}")))?;
    let order = args.vars.unwrap_or_else(|| f.vars().to_vec());
    let p = BernoulliVector::new(args.probs).map_err(|e| usage(format!("--probs: {e}")))?;
    let value = wmc_over(&f, &order, &p).map_err(|e| usage(e.to_string()))?;
    writeln!(out, "{}", format_probability(value))?;
    Ok(EXIT_OK)
}

fn train_config(args: &TrainArgs) -> Result<RunConfig> {
    let mut config = RunConfig::default();
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("--config {}: {e}", path.display())))?;
        config
            .apply_text(&text)
            .map_err(|e| usage(format!("{}: {e}", path.display())))?;
    }
    macro_rules! overlay {
        ($($field:ident),*) => {
            $(if let Some(v) = args.$field.clone() { config.$field = v; })*
        };
    }
    overlay!(runs, epochs, lr, batch_size, eval_every, seed, binary_head, shared_encoder, train_pairs, test_per_config);
    if let Some(loss) = args.loss {
        config.loss_kind = loss;
    }
    config.validate().map_err(|e| usage(e.to_string()))?;
    Ok(config)
}

fn cmd_train(args: TrainArgs, out: &mut dyn Write) -> Result<i32> {
    let config = train_config(&args)?;
    let source = if args.synthetic {
        DataSource::Synthetic
    } else {
        let dir = args.data_dir.as_ref().ok_or_else(|| {
            usage(format!("train needs --synthetic, --data-dir or {DATA_DIR_ENV}"))
        })?;
        let (zeros, ones) = load_zero_one_pools(dir)
            .map_err(|e| usage(format!("--data-dir {}: {e}", dir.display())))?;
        DataSource::Pools {
            zeros: Arc::new(zeros),
            ones: Arc::new(ones),
        }
    };
    let results = run_experiment(&config, &source)?;
    let analysis = write_experiment(&args.out, &config, &results)
        .with_context(|| format!("writing results to {}", args.out.display()))?;
    write!(out, "{}", render_report(config.loss_kind, &analysis))?;
    for r in &results {
        if let Some(acc) = r.output.digit_accuracy {
            writeln!(
                out,
                "run {}: held-out digit accuracy red {:.4} green {:.4}",
                r.run, acc.red, acc.green
            )?;
        }
    }
    writeln!(out, "wrote {}", args.out.display())?;
    Ok(EXIT_OK)
}

fn cmd_check(args: CheckArgs, out: &mut dyn Write) -> Result<i32> {
    if let Some(n) = args.max_vars.filter(|&n| n == 0 || n > crate::logic::MAX_ENUM_VARS) {
        return Err(usage(format!(
            "--max-vars {n} must be between 1 and {}",
            crate::logic::MAX_ENUM_VARS
        )));
    }
    let report: CheckReport = match args.suite {
        Suite::Theorem1 => {
            sl_ds_equivalence_check(args.trials.unwrap_or(1000), args.max_vars.unwrap_or(8), args.seed)
        }
        Suite::Theorem2 => wta_step_check(args.trials.unwrap_or(1000), args.seed),
        Suite::Gradients => gradient_check(args.trials.unwrap_or(10), args.seed),
        Suite::Oracle => wmc_oracle_check(args.trials.unwrap_or(500), args.max_vars.unwrap_or(10), args.seed),
    };
    write!(out, "{report}")?;
    Ok(if report.passed() { EXIT_OK } else { EXIT_FAILURE })
}

fn cmd_report(args: ReportArgs, out: &mut dyn Write) -> Result<i32> {
    let config_text = std::fs::read_to_string(args.dir.join(crate::lab::CONFIG_FILE))
        .map_err(|e| usage(format!("--dir {}: {e}", args.dir.display())))?;
    let mut config = RunConfig::default();
    config.apply_text(&config_text).map_err(|e| usage(e.to_string()))?;
    let analysis = match regenerate_report(&args.dir) {
        Err(e @ (LabError::Csv(_) | LabError::Config(_))) => return Err(usage(e.to_string())),
        other => other?,
    };
    write!(out, "{}", render_report(config.loss_kind, &analysis))?;
    Ok(EXIT_OK)
}

/// Parses `argv` and runs the subcommand, writing results to `out` and
/// diagnostics to `err`. Returns the process exit code.
pub fn run_cli<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{text}");
            } else {
                let _ = write!(out, "{text}");
            }
            return code;
        }
    };
    let result = match cli.command {
        Command::Wmc(a) => cmd_wmc(a, out),
        Command::Train(a) => cmd_train(a, out),
        Command::Check(a) => cmd_check(a, out),
        Command::Report(a) => cmd_report(a, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            if e.is::<UsageError>() {
                EXIT_USAGE
            } else {
                EXIT_FAILURE
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let argv = std::iter::once("nesylab").chain(args.iter().copied());
        let code = run_cli(argv, &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn wmc_traffic_light() {
        let (code, out, _) = run(&["wmc", "--formula", "(!r&g)|(r&!g)|(!r&!g)", "--probs", "0.3,0.6"]);
        assert_eq!((code, out.as_str()), (0, "0.82\n"));
        let (code, out, _) = run(&["wmc", "--formula", "a -> b", "--probs", "0.5,0.2", "--vars", "b,a"]);
        assert_eq!((code, out.as_str()), (0, "0.9\n"));
    }

    #[test]
    fn wmc_usage_errors() {
        assert_eq!(run(&["wmc", "--formula", "a & (b", "--probs", "0.1,0.2"]).0, EXIT_USAGE);
        assert_eq!(run(&["wmc", "--formula", "a & b", "--probs", "0.1"]).0, EXIT_USAGE);
        assert_eq!(run(&["wmc", "--formula", "a", "--probs", "1.5"]).0, EXIT_USAGE);
        assert_eq!(run(&["wmc", "--formula", "a", "--probs", "-0.5"]).0, EXIT_USAGE);
        assert_eq!(run(&["frobnicate"]).0, EXIT_USAGE);
        assert_eq!(run(&["--help"]).0, EXIT_OK);
    }

    #[test]
    fn check_suites_pass() {
        for suite in ["theorem1", "theorem2", "oracle"] {
            let (code, out, _) = run(&["check", "--suite", suite, "--trials", "50"]);
            assert_eq!(code, 0, "{out}");
            assert!(out.contains("PASS"), "{out}");
        }
        assert_eq!(run(&["check", "--suite", "oracle", "--max-vars", "40"]).0, EXIT_USAGE);
        assert_eq!(run(&["check", "--suite", "theorem1", "--max-vars", "0"]).0, EXIT_USAGE);
        assert_eq!(run(&["check", "--suite", "nope"]).0, EXIT_USAGE);
    }

    #[test]
    fn train_requires_a_data_source() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("o");
        let (code, _, err) = run(&["train", "--loss", "semantic", "--out", out.to_str().unwrap()]);
        if std::env::var_os(DATA_DIR_ENV).is_none() {
            assert_eq!(code, EXIT_USAGE, "{err}");
            assert!(err.contains("--synthetic"), "{err}");
        }
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "loss_kind = disjunctive\nepochs = 7\nruns = 3\n").unwrap();
        let cli = Cli::try_parse_from([
            "nesylab", "train", "--config", path.to_str().unwrap(), "--epochs", "2", "--synthetic",
        ])
        .unwrap();
        let Command::Train(args) = cli.command else { panic!() };
        let c = train_config(&args).unwrap();
        assert_eq!((c.loss_kind, c.epochs, c.runs), (LossKind::Disjunctive, 2, 3));

        std::fs::write(&path, "epoch = 7\n").unwrap();
        let (code, _, err) = run(&["train", "--config", path.to_str().unwrap(), "--synthetic"]);
        assert_eq!(code, EXIT_USAGE);
        assert!(err.contains("unknown key `epoch`"), "{err}");
    }

    #[test]
    fn probability_formatting() {
        assert_eq!(format_probability(0.8200000000000001), "0.82");
        assert_eq!(format_probability(1.0), "1");
        assert_eq!(format_probability(0.0), "0");
        assert_eq!(format_probability(1e-13), "0");
        assert_eq!(format_probability(0.123456789012), "0.123456789012");
    }
}

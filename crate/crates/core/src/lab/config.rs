use std::fmt;

use super::LabError;
use crate::data::DatasetSizes;
use crate::models::{BinaryHead, LossKind};

/// Everything that determines a traffic-light experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub loss_kind: LossKind,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub runs: usize,
    /// Updates between test-set evaluations.
    pub eval_every: usize,
    pub seed: u64,
    pub binary_head: BinaryHead,
    /// Joint network only: one encoder for both images.
    pub shared_encoder: bool,
    /// Training pairs, half of them with both lights on.
    pub train_pairs: usize,
    pub test_per_config: usize,
    /// Images per digit when generating synthetic data.
    pub synthetic_per_digit: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            loss_kind: LossKind::Semantic,
            lr: 0.001,
            batch_size: 32,
            epochs: 5,
            runs: 20,
            eval_every: 1,
            seed: 0,
            binary_head: BinaryHead::default(),
            shared_encoder: true,
            train_pairs: 3200,
            test_per_config: 50,
            synthetic_per_digit: 500,
        }
    }
}

pub const CONFIG_KEYS: [&str; 12] = [
    "loss_kind",
    "lr",
    "batch_size",
    "epochs",
    "runs",
    "eval_every",
    "seed",
    "binary_head",
    "shared_encoder",
    "train_pairs",
    "test_per_config",
    "synthetic_per_digit",
];

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, LabError>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| LabError::Config(format!("{key}: cannot parse `{value}`: {e}")))
}

impl RunConfig {
    pub fn with_loss(loss_kind: LossKind) -> Self {
        RunConfig {
            loss_kind,
            ..RunConfig::default()
        }
    }

    pub fn dataset_sizes(&self) -> DatasetSizes {
        DatasetSizes {
            train_positive: self.train_pairs - self.train_pairs / 2,
            train_negative: self.train_pairs / 2,
            test_per_config: self.test_per_config,
        }
    }

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), LabError> {
        match key {
            "loss_kind" => self.loss_kind = parse_value(key, value)?,
            "lr" => self.lr = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "runs" => self.runs = parse_value(key, value)?,
            "eval_every" => self.eval_every = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "binary_head" => self.binary_head = parse_value(key, value)?,
            "shared_encoder" => self.shared_encoder = parse_value(key, value)?,
            "train_pairs" => self.train_pairs = parse_value(key, value)?,
            "test_per_config" => self.test_per_config = parse_value(key, value)?,
            "synthetic_per_digit" => self.synthetic_per_digit = parse_value(key, value)?,
            other => {
                return Err(LabError::Config(format!(
                    "unknown key `{other}` (expected one of {})",
                    CONFIG_KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<(), LabError> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| LabError::Config(format!("line {}: expected `key = value`", i + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| LabError::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), LabError> {
        let bad = |msg: &str| Err(LabError::Config(msg.to_string()));
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad("lr must be finite and non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.runs == 0 {
            return bad("runs must be positive");
        }
        if self.eval_every == 0 {
            return bad("eval_every must be positive");
        }
        if self.train_pairs < 2 {
            return bad("train_pairs must be at least 2");
        }
        if self.test_per_config == 0 {
            return bad("test_per_config must be positive");
        }
        if self.synthetic_per_digit < 2 {
            return bad("synthetic_per_digit must be at least 2");
        }
        Ok(())
    }
}

/// The same `key = value` format [`RunConfig::apply_text`] reads.
impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "loss_kind = {}", self.loss_kind)?;
        writeln!(f, "lr = {}", self.lr)?;
        writeln!(f, "batch_size = {}", self.batch_size)?;
        writeln!(f, "epochs = {}", self.epochs)?;
        writeln!(f, "runs = {}", self.runs)?;
        writeln!(f, "eval_every = {}", self.eval_every)?;
        writeln!(f, "seed = {}", self.seed)?;
        writeln!(f, "binary_head = {}", self.binary_head)?;
        writeln!(f, "shared_encoder = {}", self.shared_encoder)?;
        writeln!(f, "train_pairs = {}", self.train_pairs)?;
        writeln!(f, "test_per_config = {}", self.test_per_config)?;
        writeln!(f, "synthetic_per_digit = {}", self.synthetic_per_digit)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = RunConfig::default();
        assert_eq!((c.lr, c.batch_size, c.epochs, c.runs, c.eval_every), (0.001, 32, 5, 20, 1));
        let s = c.dataset_sizes();
        assert_eq!((s.train_positive, s.train_negative, s.test_per_config), (1600, 1600, 50));
        c.validate().unwrap();
    }

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::with_loss(LossKind::TruncatedSemantic);
        c.lr = 0.1 + 0.2;
        c.seed = u64::MAX;
        c.binary_head = BinaryHead::SingleLogit;
        let mut back = RunConfig::default();
        back.apply_text(&c.to_string()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn parse_errors() {
        let mut c = RunConfig::default();
        let err = c.apply_text("lr = 0.1\nlearning_rate = 3\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(err.to_string().contains("learning_rate"), "{err}");
        assert!(c.apply_text("epochs 5").is_err());
        assert!(c.apply_text("epochs = five").is_err());
        assert!(c.apply_text("loss_kind = hinge").is_err());
        c.apply_text("# comment\n\n  runs =  3  \n").unwrap();
        assert_eq!(c.runs, 3);
    }

    #[test]
    fn validation() {
        for (k, v) in [("lr", "-1"), ("lr", "NaN"), ("batch_size", "0"), ("eval_every", "0"), ("runs", "0")] {
            let mut c = RunConfig::default();
            c.set(k, v).unwrap();
            assert!(c.validate().is_err(), "{k} = {v}");
        }
    }
}

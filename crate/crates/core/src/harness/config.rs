//! Run configuration and its flat `key = value` text form.
//!
//! Precedence is built-in defaults, then a config file, then command-line
//! flags. The same keys appear in config files and in run manifests.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::engine::{BiasSchedule, ExperimentConfig, Seeds, TrainConfig};
use crate::error::{PlmError, Result};
use crate::regularize::{DitherSpec, DropoutSpec, ReplicaConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// MNIST directory (containing `train-images-idx3-ubyte`) or the IDX file itself.
    pub mnist: PathBuf,
    pub seeds: Seeds,
    pub learning_rate: f64,
    /// 392 = 784 / 2, so a recall step moves each output like a unit-rate
    /// step on the summed squared error.
    pub recall_learning_rate: f64,
    pub replicas: usize,
    pub dither: f64,
    pub dropout: f64,
    pub dither_class_input: bool,
    pub epochs: u32,
    pub learn_bias: [f64; 3],
    pub learn_iters: u64,
    pub forget_bias: [f64; 3],
    pub forget_iters: u64,
    /// Storage learning rate during perpetual training.
    pub forget_learning_rate: f64,
    /// Recall learning rate during perpetual training. Pretraining fits the
    /// recall network to real digits and needs a much larger rate; in PSGD
    /// its targets are its own outputs, so the rate only sets drift speed.
    pub forget_recall_learning_rate: f64,
    pub eval_every: u64,
    pub stop_at_zero: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mnist: PathBuf::from("data/mnist"),
            seeds: Seeds::default(),
            learning_rate: 0.5,
            recall_learning_rate: 392.0,
            replicas: 100,
            dither: 1.0,
            dropout: 0.5,
            dither_class_input: false,
            epochs: 100,
            learn_bias: BiasSchedule::LEARNING,
            learn_iters: 30_000,
            forget_bias: BiasSchedule::FORGETTING,
            forget_iters: 10_000,
            forget_learning_rate: 0.8,
            forget_recall_learning_rate: 30.0,
            eval_every: 1,
            stop_at_zero: true,
        }
    }
}

/// Parses `a,b,c` into three probabilities summing to 1 within 1e-9.
pub fn parse_bias(s: &str) -> Result<[f64; 3]> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(PlmError::config(format!(
            "bias needs three comma-separated probabilities, got {s:?}"
        )));
    }
    let mut p = [0.0; 3];
    for (slot, part) in p.iter_mut().zip(&parts) {
        *slot = part
            .parse()
            .map_err(|_| PlmError::config(format!("bad probability {part:?}")))?;
    }
    BiasSchedule::new(p)?;
    Ok(p)
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| PlmError::config(format!("bad value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(PlmError::config(format!("bad boolean {value:?} for {key}"))),
    }
}

fn fmt_bias(p: &[f64; 3]) -> String {
    format!("{},{},{}", p[0], p[1], p[2])
}

impl RunConfig {
    pub const KEYS: &'static [&'static str] = &[
        "mnist",
        "seed.init",
        "seed.split",
        "seed.sampler",
        "seed.dither",
        "learning_rate",
        "recall_learning_rate",
        "replicas.count",
        "dither.amplitude",
        "dropout.rate",
        "dither_class_input",
        "epochs",
        "learn.bias",
        "learn.iters",
        "forget.bias",
        "forget.iters",
        "forget.learning_rate",
        "forget.recall_learning_rate",
        "eval_every",
        "stop_at_zero",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "mnist" => self.mnist = PathBuf::from(value),
            "seed.init" => self.seeds.init = parse_num(key, value)?,
            "seed.split" => self.seeds.split = parse_num(key, value)?,
            "seed.sampler" => self.seeds.sampler = parse_num(key, value)?,
            "seed.dither" => self.seeds.dither = parse_num(key, value)?,
            "learning_rate" => self.learning_rate = parse_num(key, value)?,
            "recall_learning_rate" => self.recall_learning_rate = parse_num(key, value)?,
            "replicas.count" => self.replicas = parse_num(key, value)?,
            "dither.amplitude" => self.dither = parse_num(key, value)?,
            "dropout.rate" => self.dropout = parse_num(key, value)?,
            "dither_class_input" => self.dither_class_input = parse_bool(key, value)?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "learn.bias" => self.learn_bias = parse_bias(value)?,
            "learn.iters" => self.learn_iters = parse_num(key, value)?,
            "forget.bias" => self.forget_bias = parse_bias(value)?,
            "forget.iters" => self.forget_iters = parse_num(key, value)?,
            "forget.learning_rate" => self.forget_learning_rate = parse_num(key, value)?,
            "forget.recall_learning_rate" => {
                self.forget_recall_learning_rate = parse_num(key, value)?
            }
            "eval_every" => self.eval_every = parse_num(key, value)?,
            "stop_at_zero" => self.stop_at_zero = parse_bool(key, value)?,
            _ => return Err(PlmError::config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "mnist" => self.mnist.display().to_string(),
            "seed.init" => self.seeds.init.to_string(),
            "seed.split" => self.seeds.split.to_string(),
            "seed.sampler" => self.seeds.sampler.to_string(),
            "seed.dither" => self.seeds.dither.to_string(),
            "learning_rate" => self.learning_rate.to_string(),
            "recall_learning_rate" => self.recall_learning_rate.to_string(),
            "replicas.count" => self.replicas.to_string(),
            "dither.amplitude" => self.dither.to_string(),
            "dropout.rate" => self.dropout.to_string(),
            "dither_class_input" => self.dither_class_input.to_string(),
            "epochs" => self.epochs.to_string(),
            "learn.bias" => fmt_bias(&self.learn_bias),
            "learn.iters" => self.learn_iters.to_string(),
            "forget.bias" => fmt_bias(&self.forget_bias),
            "forget.iters" => self.forget_iters.to_string(),
            "forget.learning_rate" => self.forget_learning_rate.to_string(),
            "forget.recall_learning_rate" => self.forget_recall_learning_rate.to_string(),
            "eval_every" => self.eval_every.to_string(),
            "stop_at_zero" => self.stop_at_zero.to_string(),
            _ => return None,
        })
    }

    /// Applies a flat `key = value` text; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                PlmError::config(format!("line {}: expected key = value", n + 1))
            })?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for key in Self::KEYS {
            let _ = writeln!(s, "{key} = {}", self.get(key).expect("known key"));
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config()?;
        BiasSchedule::new(self.learn_bias)?;
        BiasSchedule::new(self.forget_bias)?;
        if self.eval_every == 0 {
            return Err(PlmError::config("eval_every must be at least 1"));
        }
        Ok(())
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        for (name, lr) in [
            ("learning_rate", self.learning_rate),
            ("recall_learning_rate", self.recall_learning_rate),
            ("forget.learning_rate", self.forget_learning_rate),
            ("forget.recall_learning_rate", self.forget_recall_learning_rate),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(PlmError::config(format!("{name} must be positive, got {lr}")));
            }
        }
        Ok(TrainConfig {
            learning_rate: self.learning_rate,
            recall_learning_rate: self.recall_learning_rate,
            replicas: ReplicaConfig::new(self.replicas)?,
            dither: DitherSpec::new(self.dither)?,
            dropout: DropoutSpec::new(self.dropout)?,
            dither_class_input: self.dither_class_input,
            noise_seed: self.seeds.dither,
        })
    }

    pub fn learning_experiment(&self) -> Result<ExperimentConfig> {
        Ok(ExperimentConfig {
            train: self.train_config()?,
            bias: BiasSchedule::new(self.learn_bias)?,
            iterations: self.learn_iters,
            eval_every: self.eval_every,
            seeds: self.seeds,
            stop_at_zero: self.stop_at_zero,
        })
    }

    pub fn forgetting_experiment(&self) -> Result<ExperimentConfig> {
        let mut train = self.train_config()?;
        train.learning_rate = self.forget_learning_rate;
        train.recall_learning_rate = self.forget_recall_learning_rate;
        Ok(ExperimentConfig {
            train,
            bias: BiasSchedule::new(self.forget_bias)?,
            iterations: self.forget_iters,
            eval_every: self.eval_every,
            seeds: self.seeds,
            stop_at_zero: false,
        })
    }

    /// The IDX image file, accepting either a directory or the file itself.
    pub fn mnist_file(&self) -> PathBuf {
        if self.mnist.is_dir() {
            self.mnist.join(crate::data::TRAIN_IMAGES_FILE)
        } else {
            self.mnist.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bias_parsing() {
        assert_eq!(parse_bias("0.8,0.15,0.05").unwrap(), [0.8, 0.15, 0.05]);
        assert_eq!(parse_bias("0.99, 0.01, 0").unwrap(), [0.99, 0.01, 0.0]);
        assert!(parse_bias("1,0").is_err());
        assert!(parse_bias("0.5,0.5,0.5").is_err());
        assert!(parse_bias("a,b,c").is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.set("learning_rate", "0.25").unwrap();
        cfg.set("forget.bias", "1,0,0").unwrap();
        let mut back = RunConfig::default();
        back.apply_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn comments_and_errors() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("# comment\n\nreplicas.count = 10 # trailing\n").unwrap();
        assert_eq!(cfg.replicas, 10);
        assert!(cfg.apply_text("nonsense = 1").is_err());
        assert!(cfg.apply_text("no equals sign").is_err());
        assert!(cfg.apply_text("dropout.rate = x").is_err());
    }

    #[test]
    fn defaults_validate() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.forgetting_experiment().unwrap().bias, BiasSchedule::forgetting());
        assert_eq!(cfg.learning_experiment().unwrap().bias, BiasSchedule::learning());
        let mut bad = cfg.clone();
        bad.dropout = 1.0;
        assert!(bad.validate().is_err());
        let mut bad = cfg;
        bad.eval_every = 0;
        assert!(bad.validate().is_err());
    }
}

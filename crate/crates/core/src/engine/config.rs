//! Experiment configuration: presets, `key = value` files and overrides.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::data::{AugmentConfig, SplitSizes};
use crate::error::{Error, Result};
use crate::strategies::{DistanceMode, StrategyKind};

pub const PRESETS: [&str; 2] = ["paper-cifar10", "desk"];

/// Where the images come from.
#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSource {
    /// Directory holding the six CIFAR-10 binary batch files.
    Cifar10(PathBuf),
    /// Two-class fixture with a noisy, partially mislabeled class B.
    Synthetic,
    /// Random pixels and labels; only meaningful for dry runs.
    Placeholder,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub preset: String,
    pub strategy: StrategyKind,
    /// N: number of query-and-train steps.
    pub total_steps: usize,
    /// M: leading steps that query at random whatever the strategy.
    pub warmup_steps: usize,
    /// n: items labeled per step.
    pub batch_per_step: usize,
    /// m: training epochs per step.
    pub epochs_per_step: usize,
    pub pool_sample_size: usize,
    pub learning_rate: f64,
    pub minibatch_size: usize,
    pub eval_batch_size: usize,
    pub split: SplitSizes,
    pub split_seed: u64,
    pub data_seed: u64,
    pub model1_seed: u64,
    pub model2_seed: u64,
    pub selection_seed: u64,
    pub model: String,
    /// Overrides every dropout rate of the model when set.
    pub dropout: Option<f64>,
    pub augment_pad: usize,
    pub augment_flip: f64,
    pub distance: DistanceMode,
    /// Write checkpoints every this many steps; 0 disables them.
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
    pub dataset: DatasetSource,
    pub synthetic_per_class: Option<usize>,
    pub synthetic_noise: f64,
    pub standardize: bool,
    /// Replace both networks by untrained stub models.
    pub dry_run: bool,
    /// Single-threaded execution and timing-free `steps.csv`.
    pub serial: bool,
    /// Worker cap; `None` uses the machine's parallelism.
    pub threads: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::preset("paper-cifar10").expect("built-in preset")
    }
}

/// Model and selection seeds derived from one run seed. The split seed is
/// left alone so runs with different seeds share one split.
pub fn derive_seeds(seed: u64) -> (u64, u64, u64) {
    let base = seed.wrapping_mul(4);
    (base.wrapping_add(1), base.wrapping_add(2), base.wrapping_add(3))
}

impl ExperimentConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let (model1_seed, model2_seed, selection_seed) = derive_seeds(0);
        let paper = Self {
            preset: "paper-cifar10".into(),
            strategy: StrategyKind::Das,
            total_steps: 100,
            warmup_steps: 2,
            batch_per_step: 100,
            epochs_per_step: 10,
            pool_sample_size: 1024,
            learning_rate: 1e-4,
            minibatch_size: 64,
            eval_batch_size: 256,
            split: SplitSizes::new(48_000, 2_000, 10_000),
            split_seed: 7,
            data_seed: 7,
            model1_seed,
            model2_seed,
            selection_seed,
            model: "small-conv".into(),
            dropout: None,
            augment_pad: 4,
            augment_flip: 0.5,
            distance: DistanceMode::Probabilities,
            checkpoint_every: 10,
            checkpoint_dir: None,
            dataset: DatasetSource::Placeholder,
            synthetic_per_class: None,
            synthetic_noise: 0.2,
            standardize: false,
            dry_run: false,
            serial: false,
            threads: None,
        };
        match name {
            "paper-cifar10" => Ok(paper),
            "desk" => Ok(Self {
                preset: "desk".into(),
                total_steps: 20,
                epochs_per_step: 5,
                split: SplitSizes::new(10_000, 2_000, 10_000),
                ..paper
            }),
            other => Err(Error::config(format!(
                "unknown preset `{other}` (expected {})",
                PRESETS.join(" or ")
            ))),
        }
    }

    pub fn augment(&self, image_size: usize) -> AugmentConfig {
        AugmentConfig {
            pad: self.augment_pad,
            crop_size: image_size,
            flip_prob: self.augment_flip,
        }
    }

    /// Sets model and selection seeds from one run seed.
    pub fn set_run_seed(&mut self, seed: u64) {
        (self.model1_seed, self.model2_seed, self.selection_seed) = derive_seeds(seed);
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::config(m));
        if self.warmup_steps > self.total_steps {
            return fail(format!(
                "warmup steps {} exceed total steps {}",
                self.warmup_steps, self.total_steps
            ));
        }
        if self.batch_per_step == 0 {
            return fail("batch per step must be at least 1".into());
        }
        let needed = self.batch_per_step.checked_mul(self.total_steps);
        if needed.is_none_or(|n| n > self.split.train) {
            return fail(format!(
                "{} steps of {} labels exceed the train pool of {}",
                self.total_steps, self.batch_per_step, self.split.train
            ));
        }
        if self.minibatch_size == 0 || self.eval_batch_size == 0 || self.pool_sample_size == 0 {
            return fail("minibatch, eval batch and pool sample sizes must be positive".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return fail(format!("learning rate {} must be positive", self.learning_rate));
        }
        if let Some(rate) = self.dropout {
            if !(0.0..1.0).contains(&rate) {
                return fail(format!("dropout {rate} outside [0, 1)"));
            }
        }
        if !(0.0..=1.0).contains(&self.augment_flip) {
            return fail(format!("flip probability {} outside [0, 1]", self.augment_flip));
        }
        if !(0.0..=0.5).contains(&self.synthetic_noise) {
            return fail(format!("synthetic noise {} outside [0, 0.5]", self.synthetic_noise));
        }
        if self.threads == Some(0) {
            return fail("thread count must be positive".into());
        }
        if self.dataset == DatasetSource::Placeholder && !self.dry_run {
            return fail("no dataset: give a CIFAR-10 directory, choose the synthetic set, or dry-run".into());
        }
        Ok(())
    }

    /// Applies one `key = value` setting. Keys mirror the CLI flags with
    /// dashes replaced by underscores.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let bad = |what: &str| Error::config(format!("`{key}`: cannot parse `{value}` as {what}"));
        let uint = || value.parse::<usize>().map_err(|_| bad("a non-negative integer"));
        let u64v = || value.parse::<u64>().map_err(|_| bad("a non-negative integer"));
        let float = || value.parse::<f64>().map_err(|_| bad("a number"));
        let boolean = || match value {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            _ => Err(bad("a boolean")),
        };
        match key.trim() {
            "preset" => {
                // keep what was set explicitly; only the name is recorded here
                Self::preset(value)?;
                self.preset = value.to_string();
            }
            "strategy" => self.strategy = value.parse()?,
            "steps" => self.total_steps = uint()?,
            "warmup" => self.warmup_steps = uint()?,
            "batch" => self.batch_per_step = uint()?,
            "epochs" => self.epochs_per_step = uint()?,
            "pool_sample" => self.pool_sample_size = uint()?,
            "lr" => self.learning_rate = float()?,
            "minibatch" => self.minibatch_size = uint()?,
            "eval_batch" => self.eval_batch_size = uint()?,
            "split_train" => self.split.train = uint()?,
            "split_val" => self.split.validation = uint()?,
            "split_test" => self.split.test = uint()?,
            "split_seed" => self.split_seed = u64v()?,
            "data_seed" => self.data_seed = u64v()?,
            "seed" => self.set_run_seed(u64v()?),
            "model1_seed" => self.model1_seed = u64v()?,
            "model2_seed" => self.model2_seed = u64v()?,
            "selection_seed" => self.selection_seed = u64v()?,
            "model" => self.model = value.to_string(),
            "dropout" => self.dropout = Some(float()?),
            "augment_pad" => self.augment_pad = uint()?,
            "augment_flip" => self.augment_flip = float()?,
            "distance" => {
                self.distance = match value {
                    "probabilities" => DistanceMode::Probabilities,
                    "logits" => DistanceMode::Logits,
                    _ => return Err(bad("`probabilities` or `logits`")),
                }
            }
            "checkpoint_every" => self.checkpoint_every = uint()?,
            "dataset_dir" => self.dataset = DatasetSource::Cifar10(PathBuf::from(value)),
            "synthetic" => {
                if boolean()? {
                    self.dataset = DatasetSource::Synthetic;
                } else if self.dataset == DatasetSource::Synthetic {
                    self.dataset = DatasetSource::Placeholder;
                }
            }
            "synthetic_per_class" => self.synthetic_per_class = Some(uint()?),
            "synthetic_noise" => self.synthetic_noise = float()?,
            "standardize" => self.standardize = boolean()?,
            "dry_run" => self.dry_run = boolean()?,
            "serial" => self.serial = boolean()?,
            "threads" => self.threads = Some(uint()?),
            other => return Err(Error::config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Canonical `key = value` rendering; parsing it back with
    /// [`ExperimentConfig::from_text`] reproduces the config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: &dyn std::fmt::Display| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("preset", &self.preset);
        kv("strategy", &self.strategy);
        kv("steps", &self.total_steps);
        kv("warmup", &self.warmup_steps);
        kv("batch", &self.batch_per_step);
        kv("epochs", &self.epochs_per_step);
        kv("pool_sample", &self.pool_sample_size);
        kv("lr", &self.learning_rate);
        kv("minibatch", &self.minibatch_size);
        kv("eval_batch", &self.eval_batch_size);
        kv("split_train", &self.split.train);
        kv("split_val", &self.split.validation);
        kv("split_test", &self.split.test);
        kv("split_seed", &self.split_seed);
        kv("data_seed", &self.data_seed);
        kv("model1_seed", &self.model1_seed);
        kv("model2_seed", &self.model2_seed);
        kv("selection_seed", &self.selection_seed);
        kv("model", &self.model);
        if let Some(d) = self.dropout {
            kv("dropout", &d);
        }
        kv("augment_pad", &self.augment_pad);
        kv("augment_flip", &self.augment_flip);
        let distance = match self.distance {
            DistanceMode::Probabilities => "probabilities",
            DistanceMode::Logits => "logits",
        };
        kv("distance", &distance);
        kv("checkpoint_every", &self.checkpoint_every);
        match &self.dataset {
            DatasetSource::Cifar10(dir) => kv("dataset_dir", &dir.display()),
            DatasetSource::Synthetic => kv("synthetic", &true),
            DatasetSource::Placeholder => {}
        }
        if let Some(n) = self.synthetic_per_class {
            kv("synthetic_per_class", &n);
        }
        kv("synthetic_noise", &self.synthetic_noise);
        kv("standardize", &self.standardize);
        kv("dry_run", &self.dry_run);
        kv("serial", &self.serial);
        s
    }

    /// Parses `key = value` lines on top of the preset named by a `preset`
    /// line (default `paper-cifar10`). Blank lines and `#` comments are
    /// ignored; unknown keys are errors.
    pub fn from_text(text: &str) -> Result<Self> {
        let entries = parse_entries(text)?;
        let preset = entries
            .iter()
            .find(|(k, _)| k == "preset")
            .map_or("paper-cifar10", |(_, v)| v.as_str());
        let mut cfg = Self::preset(preset)?;
        for (k, v) in &entries {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// Splits config text into `(key, value)` pairs.
pub fn parse_entries(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {}: expected `key = value`", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

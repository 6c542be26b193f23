//! Flat key=value run configuration with command-line overrides.
//! Unknown keys are hard errors.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::combiner::{DEFAULT_EPSILON, DEFAULT_GAMMA};
use crate::error::{Error, Result};
use crate::metrics::DEFAULT_THRESHOLD;
use crate::model::{Heads, ModelConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Proposed,
    MultitaskFixed,
    Single,
}

impl Mode {
    pub fn expected_heads(&self) -> Heads {
        match self {
            Mode::Single => Heads::SegOnly,
            _ => Heads::SegAndDt,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Proposed => "proposed",
            Mode::MultitaskFixed => "multitask-fixed",
            Mode::Single => "single",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "proposed" => Ok(Mode::Proposed),
            "multitask-fixed" => Ok(Mode::MultitaskFixed),
            "single" => Ok(Mode::Single),
            other => Err(Error::Config(format!(
                "unknown mode {other:?} (expected proposed, multitask-fixed, or single)"
            ))),
        }
    }
}

/// When the adaptive combiner's running means are refreshed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlphaUpdate {
    Batch,
    Epoch,
}

impl fmt::Display for AlphaUpdate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AlphaUpdate::Batch => "batch",
            AlphaUpdate::Epoch => "epoch",
        })
    }
}

impl FromStr for AlphaUpdate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "batch" => Ok(AlphaUpdate::Batch),
            "epoch" => Ok(AlphaUpdate::Epoch),
            other => Err(Error::Config(format!(
                "unknown alpha_update {other:?} (expected batch or epoch)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub data_root: PathBuf,
    pub out_dir: PathBuf,
    pub heads: Heads,
    pub in_channels: usize,
    pub base_channels: usize,
    pub depth: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub epochs: u64,
    pub seed: u64,
    pub gamma: f64,
    pub epsilon: f64,
    pub fixed_weight: f64,
    pub threshold: f64,
    pub alpha_update: AlphaUpdate,
    pub train_frac: f64,
    pub val_frac: f64,
    /// Stop once training Dice reaches this value (checked per epoch).
    pub early_stop_dice: Option<f64>,
}

pub const DEFAULT_FIXED_WEIGHT: f64 = 1.0;

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::Proposed,
            data_root: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
            heads: Heads::SegAndDt,
            in_channels: 1,
            base_channels: 16,
            depth: 3,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 4,
            epochs: 100,
            seed: 0,
            gamma: DEFAULT_GAMMA,
            epsilon: DEFAULT_EPSILON,
            fixed_weight: DEFAULT_FIXED_WEIGHT,
            threshold: DEFAULT_THRESHOLD,
            alpha_update: AlphaUpdate::Batch,
            train_frac: 0.7,
            val_frac: 0.15,
            early_stop_dice: None,
        }
    }
}

impl RunConfig {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            in_channels: self.in_channels,
            base_channels: self.base_channels,
            depth: self.depth,
            heads: self.heads,
            seed: self.seed,
        }
    }

    pub fn test_frac(&self) -> f64 {
        1.0 - self.train_frac - self.val_frac
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        if self.heads != self.mode.expected_heads() {
            return Err(Error::Config(format!(
                "mode {} requires heads={}, got heads={}",
                self.mode,
                self.mode.expected_heads(),
                self.heads
            )));
        }
        if self.mode == Mode::Single {
            let d = RunConfig::default();
            if self.gamma != d.gamma
                || self.epsilon != d.epsilon
                || self.fixed_weight != d.fixed_weight
                || self.alpha_update != d.alpha_update
            {
                return Err(Error::Config(
                    "mode single uses BCE alone; combiner settings must stay at defaults".into(),
                ));
            }
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config("threshold must lie in [0,1]".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config("gamma must lie in [0,1]".into()));
        }
        if self.train_frac < 0.0 || self.val_frac < 0.0 || self.test_frac() < -1e-9 {
            return Err(Error::Config("split fractions must be nonnegative".into()));
        }
        Ok(())
    }

    /// Serialize to the flat key=value format; `parse` inverts this.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| s.push_str(&format!("{k}={v}\n"));
        kv("mode", self.mode.to_string());
        kv("data_root", self.data_root.display().to_string());
        kv("out_dir", self.out_dir.display().to_string());
        kv("heads", self.heads.to_string());
        kv("in_channels", self.in_channels.to_string());
        kv("base_channels", self.base_channels.to_string());
        kv("depth", self.depth.to_string());
        kv("lr", self.lr.to_string());
        kv("beta1", self.beta1.to_string());
        kv("beta2", self.beta2.to_string());
        kv("adam_eps", self.adam_eps.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("epochs", self.epochs.to_string());
        kv("seed", self.seed.to_string());
        kv("gamma", self.gamma.to_string());
        kv("epsilon", self.epsilon.to_string());
        kv("fixed_weight", self.fixed_weight.to_string());
        kv("threshold", self.threshold.to_string());
        kv("alpha_update", self.alpha_update.to_string());
        kv("train_frac", self.train_frac.to_string());
        kv("val_frac", self.val_frac.to_string());
        kv(
            "early_stop_dice",
            self.early_stop_dice
                .map(|v| v.to_string())
                .unwrap_or_else(|| "none".into()),
        );
        s
    }

    /// Apply one `key=value` assignment. Unknown keys are hard errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("bad value for {key}: {value:?}")))
        }
        match key {
            "mode" => {
                self.mode = value.parse()?;
                self.heads = self.mode.expected_heads();
            }
            "data_root" => self.data_root = PathBuf::from(value),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "heads" => self.heads = value.parse()?,
            "in_channels" => self.in_channels = num(key, value)?,
            "base_channels" => self.base_channels = num(key, value)?,
            "depth" => self.depth = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "beta1" => self.beta1 = num(key, value)?,
            "beta2" => self.beta2 = num(key, value)?,
            "adam_eps" => self.adam_eps = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "gamma" => self.gamma = num(key, value)?,
            "epsilon" => self.epsilon = num(key, value)?,
            "fixed_weight" => self.fixed_weight = num(key, value)?,
            "threshold" => self.threshold = num(key, value)?,
            "alpha_update" => self.alpha_update = value.parse()?,
            "train_frac" => self.train_frac = num(key, value)?,
            "val_frac" => self.val_frac = num(key, value)?,
            "early_stop_dice" => {
                self.early_stop_dice = if value == "none" {
                    None
                } else {
                    Some(num(key, value)?)
                }
            }
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Parse a config file body: one key=value per line, blank lines and
    /// `#` comments allowed.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut config = RunConfig::default();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("malformed config line {line:?}")))?;
            config.set(key.trim(), value.trim())?;
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

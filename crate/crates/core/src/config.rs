//! Experiment configuration files.
//!
//! An [`ExperimentConfig`] is a TOML document whose keys may be written as
//! tables or as flat dotted keys (`train.beta = 0.1`). Unknown keys are
//! rejected. Values resolve with this precedence, lowest first:
//!
//! 1. built-in defaults,
//! 2. the config file,
//! 3. command-line flags,
//! 4. for the output directory only, the `PLSM_LAB_OUT` environment variable
//!    when no `--out` flag is given.
//!
//! The root `seed` determines every random stream: `env.seed`,
//! `data.eval_seed` and `train.seed` are derived from it by
//! [`ExperimentConfig::resolve`], overwriting any value in the file, and the
//! resolved copy written next to each output records them.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envs::{generate_dataset, EnvConfig, EnvError, TransitionDataset};
use crate::model::{ModelConfig, ModelError};
use crate::rng::substream_seed;
use crate::training::{TrainConfig, TrainError};

/// Environment variable overriding the output root.
pub const OUT_ENV: &str = "PLSM_LAB_OUT";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config serialisation error: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("invalid config: {field}: {msg}")]
    Invalid { field: &'static str, msg: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub train_episodes: usize,
    pub eval_episodes: usize,
    /// Actions per evaluation episode; the longest Hits@1 horizon.
    pub eval_steps: usize,
    /// Derived from the root seed.
    pub eval_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_episodes: 1000,
            eval_episodes: 200,
            eval_steps: 10,
            eval_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub horizons: Vec<usize>,
    pub epsilon: f64,
    /// Gaussian corruption applied to evaluation observations.
    pub noise: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            horizons: crate::eval::DEFAULT_HORIZONS.to_vec(),
            epsilon: crate::eval::DEFAULT_EPSILON,
            noise: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("runs") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub format_version: u8,
    pub seed: u64,
    pub env: EnvConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub eval: EvalConfig,
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            format_version: crate::container::FORMAT_VERSION,
            seed: 0,
            env: EnvConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
            eval: EvalConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string(self)?)
    }

    /// Derives the per-component seeds from the root seed and validates
    /// every section.
    pub fn resolve(mut self) -> Result<Self, ConfigError> {
        self.env.seed = substream_seed(self.seed, "data/train");
        self.data.eval_seed = substream_seed(self.seed, "data/eval");
        self.train.seed = self.seed;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |field, msg: String| Err(ConfigError::Invalid { field, msg });
        if self.format_version != crate::container::FORMAT_VERSION {
            return invalid(
                "format_version",
                format!("{} unsupported, expected {}", self.format_version, crate::container::FORMAT_VERSION),
            );
        }
        self.env.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.data.train_episodes == 0 || self.data.eval_episodes == 0 {
            return invalid("data", "episode counts must be positive".into());
        }
        if self.data.eval_steps == 0 {
            return invalid("data.eval_steps", "must be positive".into());
        }
        if let Some(&h) = self.eval.horizons.iter().find(|&&h| h == 0 || h > self.data.eval_steps) {
            return invalid(
                "eval.horizons",
                format!("horizon {h} outside 1..={}", self.data.eval_steps),
            );
        }
        if !(self.eval.epsilon > 0.0 && self.eval.epsilon.is_finite()) {
            return invalid("eval.epsilon", format!("{} must be positive", self.eval.epsilon));
        }
        if !(self.eval.noise >= 0.0 && self.eval.noise.is_finite()) {
            return invalid("eval.noise", format!("{} must be non-negative", self.eval.noise));
        }
        Ok(())
    }

    pub fn train_dataset(&self) -> Result<TransitionDataset, EnvError> {
        generate_dataset(&self.env, self.data.train_episodes)
    }

    /// Evaluation episodes: same environment, independent seed, one more
    /// observation than the longest horizon.
    pub fn eval_env(&self) -> EnvConfig {
        self.env
            .clone()
            .with_seed(self.data.eval_seed)
            .with_episode_length(self.data.eval_steps + 1)
    }

    pub fn eval_dataset(&self) -> Result<TransitionDataset, EnvError> {
        generate_dataset(&self.eval_env(), self.data.eval_episodes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dotted_keys_override_defaults() {
        let c = ExperimentConfig::from_toml("seed = 3\ntrain.beta = 0.5\nenv.kind = \"heart\"\nenv.num_objects = 1\n").unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.train.beta, 0.5);
        assert_eq!(c.train.batch_size, 128);
        assert_eq!(c.env.kind, crate::envs::EnvKind::Heart);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = ExperimentConfig::from_toml("train.betta = 0.5\n").unwrap_err();
        assert!(e.to_string().contains("betta"), "{e}");
        assert!(ExperimentConfig::from_toml("colour = 1\n").is_err());
    }

    #[test]
    fn round_trip_through_toml() {
        let c = ExperimentConfig::default().resolve().unwrap();
        let back = ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn seeds_derive_from_root() {
        let a = ExperimentConfig { seed: 1, ..Default::default() }.resolve().unwrap();
        let b = ExperimentConfig { seed: 2, ..Default::default() }.resolve().unwrap();
        assert_ne!(a.env.seed, b.env.seed);
        assert_ne!(a.env.seed, a.data.eval_seed);
        assert_eq!(a.train.seed, 1);
    }

    #[test]
    fn validation_names_the_field() {
        let mut c = ExperimentConfig::default();
        c.eval.horizons = vec![1, 11];
        assert!(c.validate().unwrap_err().to_string().contains("eval.horizons"));
        let mut c = ExperimentConfig::default();
        c.env.grid_size = 2;
        assert!(c.validate().unwrap_err().to_string().contains("env.grid_size"));
    }
}

//! Run configuration: defaults, a plain-text `section.key = value` file
//! format, and key-by-key overrides (command-line flags reuse the same
//! path, so flags override the file which overrides the defaults).

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::data::DatasetProfile;
use crate::model::ModelConfig;
use crate::train::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config line {line}: expected 'section.key = value'")]
    Malformed { line: usize },
    #[error("unknown config key '{0}'")]
    UnknownKey(String),
    #[error("invalid value '{value}' for key '{key}'")]
    BadValue { key: String, value: String },
}

/// Evaluation options shared by the evaluate/loo commands.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    /// "deterministic", "stochastic" or "zero-latent".
    pub mode: String,
    /// Draw count for stochastic (best-of-n) evaluation.
    pub n: usize,
    /// Horizons in seconds.
    pub horizons: Vec<f64>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            mode: "deterministic".to_string(),
            n: 20,
            horizons: vec![1.0, 2.0, 3.0],
        }
    }
}

/// Everything a run needs; every field has a default.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub profile: DatasetProfile,
    pub d: usize,
    pub heads: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub latent: usize,
    pub ff: usize,
    pub train: TrainConfig,
    pub eval: EvalOptions,
    pub data: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let reference = ModelConfig::full(0, 0);
        RunConfig {
            profile: DatasetProfile::default(),
            d: reference.d,
            heads: reference.heads,
            enc_layers: reference.enc_layers,
            dec_layers: reference.dec_layers,
            latent: reference.latent,
            ff: reference.ff,
            train: TrainConfig::default(),
            eval: EvalOptions::default(),
            data: None,
            out: PathBuf::from("out"),
            seed: 0,
        }
    }
}

impl RunConfig {
    /// The model hyperparameters with window lengths from the profile.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            d: self.d,
            heads: self.heads,
            enc_layers: self.enc_layers,
            dec_layers: self.dec_layers,
            latent: self.latent,
            obs_len: self.profile.obs_len,
            pred_len: self.profile.pred_len,
            ff: self.ff,
        }
    }

    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = RunConfig::default();
        cfg.apply(&text)?;
        Ok(cfg)
    }

    /// Apply a config-file body on top of the current values.
    pub fn apply(&mut self, text: &str) -> Result<(), ConfigError> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or(ConfigError::Malformed { line: idx + 1 })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Set a single dotted key; this is also the override path for flags.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = || ConfigError::BadValue {
            key: key.to_string(),
            value: value.to_string(),
        };
        macro_rules! parse {
            ($ty:ty) => {
                value.parse::<$ty>().map_err(|_| bad())?
            };
        }
        match key {
            "dataset.dt" => self.profile.dt = parse!(f64),
            "dataset.obs_len" => self.profile.obs_len = parse!(usize),
            "dataset.pred_len" => self.profile.pred_len = parse!(usize),
            "dataset.attention_radius" => self.profile.attention_radius = parse!(f64),
            "model.d" => self.d = parse!(usize),
            "model.heads" => self.heads = parse!(usize),
            "model.enc_layers" => self.enc_layers = parse!(usize),
            "model.dec_layers" => self.dec_layers = parse!(usize),
            "model.latent" => self.latent = parse!(usize),
            "model.ff" => self.ff = parse!(usize),
            "train.epochs" => self.train.epochs = parse!(usize),
            "train.batch_size" => self.train.batch_size = parse!(usize),
            "train.lr0" => self.train.lr0 = parse!(f64),
            "train.decay" => self.train.decay = parse!(f64),
            "train.augment" => self.train.augment = parse!(bool),
            "train.teacher_forcing" => self.train.teacher_forcing = parse!(bool),
            "train.checkpoint_interval" => self.train.checkpoint_interval = parse!(usize),
            "eval.mode" => {
                if !["deterministic", "stochastic", "zero-latent"].contains(&value) {
                    return Err(bad());
                }
                self.eval.mode = value.to_string();
            }
            "eval.n" => self.eval.n = parse!(usize),
            "eval.horizons" => {
                self.eval.horizons = value
                    .split(',')
                    .map(|h| h.trim().parse::<f64>().map_err(|_| bad()))
                    .collect::<Result<_, _>>()?;
                if self.eval.horizons.is_empty() {
                    return Err(bad());
                }
            }
            "paths.data" => self.data = Some(PathBuf::from(value)),
            "paths.out" => self.out = PathBuf::from(value),
            "run.seed" => {
                self.seed = parse!(u64);
                self.train.seed = self.seed;
            }
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_reference_settings() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.d, 256);
        assert_eq!(cfg.heads, 8);
        assert_eq!(cfg.latent, 32);
        assert_eq!(cfg.train.batch_size, 100);
        assert_eq!(cfg.train.epochs, 100);
        assert_eq!(cfg.train.lr0, 1e-3);
        assert_eq!(cfg.train.decay, 0.95);
        assert_eq!(cfg.profile.attention_radius, 10.0);
    }

    #[test]
    fn file_overrides_defaults() {
        let mut cfg = RunConfig::default();
        cfg.apply(
            "# comment\n\nmodel.d = 64   # inline comment\ntrain.epochs = 20\nrun.seed = 7\n",
        )
        .unwrap();
        assert_eq!(cfg.d, 64);
        assert_eq!(cfg.train.epochs, 20);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.train.seed, 7);
    }

    #[test]
    fn flag_overrides_file() {
        let mut cfg = RunConfig::default();
        cfg.apply("train.epochs = 20\n").unwrap();
        cfg.set("train.epochs", "3").unwrap();
        assert_eq!(cfg.train.epochs, 3);
    }

    #[test]
    fn unknown_key_is_named() {
        let mut cfg = RunConfig::default();
        let err = cfg.apply("model.width = 64\n").unwrap_err();
        assert!(err.to_string().contains("model.width"), "{err}");
    }

    #[test]
    fn bad_value_is_named() {
        let mut cfg = RunConfig::default();
        let err = cfg.set("train.epochs", "many").unwrap_err();
        assert!(err.to_string().contains("many"), "{err}");
        assert!(err.to_string().contains("train.epochs"), "{err}");
    }

    #[test]
    fn horizons_parse_as_list() {
        let mut cfg = RunConfig::default();
        cfg.set("eval.horizons", "1, 2,3").unwrap();
        assert_eq!(cfg.eval.horizons, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn malformed_line_is_rejected_with_number() {
        let mut cfg = RunConfig::default();
        let err = cfg.apply("model.d = 64\nnonsense\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn model_config_takes_windows_from_profile() {
        let mut cfg = RunConfig::default();
        cfg.apply("dataset.obs_len = 8\ndataset.pred_len = 12\n").unwrap();
        let m = cfg.model_config();
        assert_eq!(m.obs_len, 8);
        assert_eq!(m.pred_len, 12);
    }

    #[test]
    fn missing_file_names_path() {
        let err = RunConfig::load(Path::new("/nonexistent.cfg")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent.cfg"));
    }
}

//! Run configuration: one flat key=value file covering model, training,
//! and generator settings plus output paths and sweep grids. Every key
//! maps 1:1 to a field here; unknown keys and malformed values fail with
//! a message naming the offending key.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::ModelConfig;
use crate::synth::GenConfig;
use crate::train::{Optimizer, TrainConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: expected `key = value`, got `{text}`")]
    BadLine {
        path: String,
        line: usize,
        text: String,
    },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("config key `{key}`: {message}")]
    BadValue { key: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// The complete settings for a run. `seed` and `d` are shared: setting
/// either updates every sub-config that carries a copy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub gen: GenConfig,
    pub data_path: PathBuf,
    pub checkpoint_path: PathBuf,
    pub results_path: PathBuf,
    pub tau_grid: Vec<f64>,
    pub lmax_grid: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            gen: GenConfig::default(),
            data_path: PathBuf::from("data.jsonl"),
            checkpoint_path: PathBuf::from("model.json"),
            results_path: PathBuf::from("results.csv"),
            tau_grid: vec![0.1, 0.25, 0.5, 1.0, 2.0, 4.0, 10.0],
            lmax_grid: vec![25, 50, 100, 150, 200, 250, 300],
        }
    }
}

fn parse_one<T: std::str::FromStr>(key: &str, value: &str, kind: &str) -> Result<T, ConfigError> {
    value.trim().parse().map_err(|_| ConfigError::BadValue {
        key: key.to_string(),
        message: format!("expected {kind}, got `{value}`"),
    })
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str, kind: &str) -> Result<Vec<T>, ConfigError> {
    value
        .split(',')
        .map(|item| parse_one(key, item, kind))
        .collect()
}

impl RunConfig {
    /// Apply one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "seed" => self.set_seed(parse_one(key, value, "an integer")?),
            "d" => {
                let d: usize = parse_one(key, value, "an integer")?;
                self.model.d = d;
                self.gen.d = d;
            }
            "d_h" => self.model.d_h = parse_one(key, value, "an integer")?,
            "scales" => self.model.scales = parse_list(key, value, "an integer")?,
            "tau" => self.model.tau = parse_one(key, value, "a number")?,
            "tau_learnable" => self.model.tau_learnable = parse_one(key, value, "true or false")?,
            "l_max" => self.model.l_max = parse_one(key, value, "an integer")?,
            "align_identity" => {
                self.model.align_identity = parse_one(key, value, "true or false")?
            }
            "epochs" => self.train.epochs = parse_one(key, value, "an integer")?,
            "batch_size" => self.train.batch_size = parse_one(key, value, "an integer")?,
            "learning_rate" => self.train.learning_rate = parse_one(key, value, "a number")?,
            "optimizer" => {
                self.train.optimizer = match value.trim() {
                    "sgd" => Optimizer::Sgd,
                    "adam" => Optimizer::Adam,
                    other => {
                        return Err(ConfigError::BadValue {
                            key: key.to_string(),
                            message: format!("expected `sgd` or `adam`, got `{other}`"),
                        })
                    }
                }
            }
            "early_stop_patience" => {
                self.train.early_stop_patience = parse_one(key, value, "an integer")?
            }
            "train_frac" => self.train.train_frac = parse_one(key, value, "a number")?,
            "val_frac" => self.train.val_frac = parse_one(key, value, "a number")?,
            "n_items" => self.gen.n_items = parse_one(key, value, "an integer")?,
            "positive_rate" => self.gen.positive_rate = parse_one(key, value, "a number")?,
            "gap_hours" => self.gen.gap_hours = parse_one(key, value, "a number")?,
            "t_min" => self.gen.t_min = parse_one(key, value, "an integer")?,
            "t_max" => self.gen.t_max = parse_one(key, value, "an integer")?,
            "noise_std" => self.gen.noise_std = parse_one(key, value, "a number")?,
            "trend_slope" => self.gen.trend_slope = parse_one(key, value, "a number")?,
            "burst_magnitude" => self.gen.burst_magnitude = parse_one(key, value, "a number")?,
            "late_signal" => self.gen.late_signal = parse_one(key, value, "true or false")?,
            "missing_rate" => self.gen.missing_rate = parse_one(key, value, "a number")?,
            "data_path" => self.data_path = PathBuf::from(value.trim()),
            "checkpoint_path" => self.checkpoint_path = PathBuf::from(value.trim()),
            "results_path" => self.results_path = PathBuf::from(value.trim()),
            "tau_grid" => self.tau_grid = parse_list(key, value, "a number")?,
            "lmax_grid" => self.lmax_grid = parse_list(key, value, "an integer")?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.model.seed = seed;
        self.train.seed = seed;
        self.gen.seed = seed;
    }

    /// Validate every field; called once after all assignments.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.train
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.gen
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.model.d != self.gen.d {
            return Err(ConfigError::Invalid(format!(
                "key `d` is inconsistent: model uses {}, generator uses {}",
                self.model.d, self.gen.d
            )));
        }
        if self.tau_grid.is_empty() || self.tau_grid.iter().any(|&t| !(t > 0.0) || !t.is_finite())
        {
            return Err(ConfigError::Invalid(
                "key `tau_grid` must list positive finite values".into(),
            ));
        }
        if self.lmax_grid.is_empty() || self.lmax_grid.contains(&0) {
            return Err(ConfigError::Invalid(
                "key `lmax_grid` must list positive lengths".into(),
            ));
        }
        Ok(())
    }

    /// First 16 hex characters of the SHA-256 of the resolved settings,
    /// so every output file can name the exact settings that produced
    /// it. File locations are excluded: rerunning the same experiment
    /// into different paths yields the same hash.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(&(
            &self.model,
            &self.train,
            &self.gen,
            &self.tau_grid,
            &self.lmax_grid,
        ))
        .expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// Read a flat key=value file. `#` starts a comment; blank lines are
/// skipped; later assignments override earlier ones.
pub fn load_config_file(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut config = RunConfig::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::BadLine {
                path: path.display().to_string(),
                line: idx + 1,
                text: raw.trim().to_string(),
            });
        };
        config.set(key.trim(), value.trim())?;
    }
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn file_with_every_key_parses() {
        let text = "\
# full settings
seed = 7
d = 6
d_h = 16
scales = 1,2,5
tau = 0.5
tau_learnable = true
l_max = 150
align_identity = false
epochs = 10
batch_size = 32
learning_rate = 0.01
optimizer = sgd
early_stop_patience = 3
train_frac = 0.6
val_frac = 0.2
n_items = 500
positive_rate = 0.25
gap_hours = 2.5
t_min = 10
t_max = 100
noise_std = 0.3
trend_slope = 0.05
burst_magnitude = 1.5
late_signal = false
missing_rate = 0.1
data_path = /tmp/x.jsonl
checkpoint_path = /tmp/m.json
results_path = /tmp/r.csv
tau_grid = 0.5,1.0,2.0
lmax_grid = 10,20,40
";
        let tmp = tempfile::Builder::new().suffix(".cfg").tempfile().unwrap();
        std::fs::write(tmp.path(), text).unwrap();
        let config = load_config_file(tmp.path()).unwrap();
        config.validate().unwrap();
        assert_eq!(config.model.seed, 7);
        assert_eq!(config.train.seed, 7);
        assert_eq!(config.gen.seed, 7);
        assert_eq!(config.model.d, 6);
        assert_eq!(config.gen.d, 6);
        assert_eq!(config.model.scales, vec![1, 2, 5]);
        assert_eq!(config.train.optimizer, Optimizer::Sgd);
        assert!(!config.gen.late_signal);
        assert_eq!(config.data_path, PathBuf::from("/tmp/x.jsonl"));
        assert_eq!(config.tau_grid, vec![0.5, 1.0, 2.0]);
        assert_eq!(config.lmax_grid, vec![10, 20, 40]);
    }

    #[test]
    fn unknown_key_is_named() {
        let mut config = RunConfig::default();
        let err = config.set("positive_rat", "0.3").unwrap_err();
        assert!(err.to_string().contains("positive_rat"));
    }

    #[test]
    fn bad_value_names_the_key() {
        let mut config = RunConfig::default();
        let err = config.set("epochs", "many").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("epochs") && msg.contains("many"), "{msg}");
    }

    #[test]
    fn invalid_field_value_fails_validation_with_field_name() {
        let mut config = RunConfig::default();
        config.set("positive_rate", "1.5").unwrap();
        let err = config.validate().unwrap_err();
        assert!(err.to_string().contains("positive_rate"));
    }

    #[test]
    fn malformed_line_reports_position() {
        let tmp = tempfile::Builder::new().suffix(".cfg").tempfile().unwrap();
        std::fs::write(tmp.path(), "seed = 1\nnot a pair\n").unwrap();
        let err = load_config_file(tmp.path()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(":2:") && msg.contains("not a pair"), "{msg}");
    }

    #[test]
    fn later_assignments_win() {
        let tmp = tempfile::Builder::new().suffix(".cfg").tempfile().unwrap();
        std::fs::write(tmp.path(), "epochs = 5\nepochs = 9\n").unwrap();
        assert_eq!(load_config_file(tmp.path()).unwrap().train.epochs, 9);
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = RunConfig::default();
        let b = RunConfig::default();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
        assert!(a.hash().chars().all(|c| c.is_ascii_hexdigit()));
        let mut c = RunConfig::default();
        c.set("noise_std", "0.51").unwrap();
        assert_ne!(a.hash(), c.hash());

        let mut d = RunConfig::default();
        d.set("data_path", "elsewhere/cohort.jsonl").unwrap();
        d.set("results_path", "elsewhere/history.csv").unwrap();
        assert_eq!(a.hash(), d.hash(), "file locations must not affect the hash");
    }

    #[test]
    fn seed_key_reaches_every_subconfig() {
        let mut config = RunConfig::default();
        config.set("seed", "123").unwrap();
        assert_eq!(
            (config.model.seed, config.train.seed, config.gen.seed),
            (123, 123, 123)
        );
    }
}

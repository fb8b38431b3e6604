//! Versioned model checkpoints: config, parameters, standardization
//! statistics, and the feature schema in one JSON file, with shape
//! validation on load so a tampered or mismatched file fails fast.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::FeatureStats;
use crate::model::{ModelConfig, ModelError, ModelParams};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("bad checkpoint json in {path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
    #[error("unsupported checkpoint format version {found} (this build reads {expected})")]
    BadFormat { found: u32, expected: u32 },
    #[error("inconsistent checkpoint: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Everything needed to score new data exactly as at train time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: ModelConfig,
    pub params: ModelParams,
    pub stats: FeatureStats,
    pub schema: Vec<String>,
}

impl Checkpoint {
    pub fn new(
        config: ModelConfig,
        params: ModelParams,
        stats: FeatureStats,
        schema: Vec<String>,
    ) -> Self {
        Checkpoint {
            format_version: FORMAT_VERSION,
            config,
            params,
            stats,
            schema,
        }
    }
}

fn expect_shape(name: &str, got: &[usize], want: &[usize]) -> Result<(), CheckpointError> {
    if got != want {
        return Err(CheckpointError::Inconsistent(format!(
            "{name} has shape {got:?}, expected {want:?}"
        )));
    }
    Ok(())
}

/// Check every tensor shape against the config. Serde restores the raw
/// buffers without knowing the model geometry, so this runs on load.
fn validate_shapes(cp: &Checkpoint) -> Result<(), CheckpointError> {
    let c = &cp.config;
    c.validate()?;
    let p = &cp.params;
    expect_shape("w_e", p.w_e.shape(), &[c.d_h, c.d])?;
    expect_shape("b_e", p.b_e.shape(), &[c.d_h])?;
    if p.conv.len() != c.scales.len() {
        return Err(CheckpointError::Inconsistent(format!(
            "conv has {} scales, config lists {}",
            p.conv.len(),
            c.scales.len()
        )));
    }
    for (kernels, &s) in p.conv.iter().zip(&c.scales) {
        if kernels.len() != 2 * s + 1 {
            return Err(CheckpointError::Inconsistent(format!(
                "scale {s} holds {} kernels, expected {}",
                kernels.len(),
                2 * s + 1
            )));
        }
        for kernel in kernels {
            expect_shape("conv kernel", kernel.shape(), &[c.d_h, c.d_h])?;
        }
    }
    expect_shape("beta_logits", p.beta_logits.shape(), &[c.scales.len()])?;
    expect_shape("w", p.w.shape(), &[c.d_h])?;
    if p.tau_raw.is_some() != c.tau_learnable {
        return Err(CheckpointError::Inconsistent(
            "tau_raw presence does not match tau_learnable".into(),
        ));
    }
    expect_shape("w_o", p.w_o.shape(), &[1, c.d_h])?;
    if !p.to_flat().iter().all(|v| v.is_finite()) {
        return Err(CheckpointError::Inconsistent(
            "parameters contain non-finite values".into(),
        ));
    }
    if cp.stats.mean.len() != c.d || cp.stats.std.len() != c.d {
        return Err(CheckpointError::Inconsistent(format!(
            "standardizer covers {} features, model expects {}",
            cp.stats.mean.len(),
            c.d
        )));
    }
    if cp.schema.len() != c.d {
        return Err(CheckpointError::Inconsistent(format!(
            "schema lists {} features, model expects {}",
            cp.schema.len(),
            c.d
        )));
    }
    Ok(())
}

/// Write the checkpoint as pretty JSON with a trailing newline. Field
/// order is fixed, so the same checkpoint always produces the same bytes.
pub fn save_checkpoint(path: &Path, cp: &Checkpoint) -> Result<(), CheckpointError> {
    validate_shapes(cp)?;
    let io_err = |source: std::io::Error| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    };
    let text = serde_json::to_string_pretty(cp).map_err(|source| CheckpointError::Json {
        path: path.display().to_string(),
        source,
    })?;
    let mut file = std::fs::File::create(path).map_err(io_err)?;
    file.write_all(text.as_bytes()).map_err(io_err)?;
    file.write_all(b"\n").map_err(io_err)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let text = std::fs::read_to_string(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let cp: Checkpoint =
        serde_json::from_str(&text).map_err(|source| CheckpointError::Json {
            path: path.display().to_string(),
            source,
        })?;
    if cp.format_version != FORMAT_VERSION {
        return Err(CheckpointError::BadFormat {
            found: cp.format_version,
            expected: FORMAT_VERSION,
        });
    }
    validate_shapes(&cp)?;
    Ok(cp)
}

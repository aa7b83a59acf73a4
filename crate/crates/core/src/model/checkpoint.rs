//! Self-describing text checkpoints: the model config plus every named
//! parameter tensor with its shape. Values are written with Rust's
//! shortest-round-trip float formatting, so save→load is bit-exact.

use std::fs;
use std::path::Path;

use thiserror::Error;

use super::net::Model;
use super::{ModelConfig, ModelError};

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed checkpoint at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("checkpoint parameter {name} has {got} values, expected {want}")]
    BadParamSize {
        name: String,
        want: usize,
        got: usize,
    },
    #[error("checkpoint is missing parameter {0}")]
    MissingParam(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

const MAGIC: &str = "crowdcast-checkpoint v1";

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<(), CheckpointError> {
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    let c = &model.cfg;
    out.push_str(&format!(
        "config {} {} {} {} {} {} {} {}\n",
        c.d, c.heads, c.enc_layers, c.dec_layers, c.latent, c.obs_len, c.pred_len, c.ff
    ));
    for e in model.store().entries() {
        let dims: Vec<String> = e.shape.iter().map(|d| d.to_string()).collect();
        out.push_str(&format!("param {} {}\n", e.name, dims.join(" ")));
        let vals: Vec<String> = e.value.iter().map(|v| format!("{v}")).collect();
        out.push_str(&vals.join(" "));
        out.push('\n');
    }
    fs::write(path, out).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Model, CheckpointError> {
    let text = fs::read_to_string(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut lines = text.lines().enumerate();
    let bad = |line: usize, reason: &str| CheckpointError::Malformed {
        line: line + 1,
        reason: reason.to_string(),
    };

    let (i, magic) = lines.next().ok_or_else(|| bad(0, "empty file"))?;
    if magic != MAGIC {
        return Err(bad(i, "bad magic header"));
    }
    let (i, cfg_line) = lines.next().ok_or_else(|| bad(1, "missing config line"))?;
    let fields: Vec<&str> = cfg_line.split_whitespace().collect();
    if fields.len() != 9 || fields[0] != "config" {
        return Err(bad(i, "expected 'config' with 8 integers"));
    }
    let nums: Vec<usize> = fields[1..]
        .iter()
        .map(|f| f.parse())
        .collect::<Result<_, _>>()
        .map_err(|_| bad(i, "non-integer config field"))?;
    let cfg = ModelConfig {
        d: nums[0],
        heads: nums[1],
        enc_layers: nums[2],
        dec_layers: nums[3],
        latent: nums[4],
        obs_len: nums[5],
        pred_len: nums[6],
        ff: nums[7],
    };
    let mut model = Model::new(cfg, 0)?;

    let mut loaded: Vec<(String, Vec<f64>)> = Vec::new();
    while let Some((i, header)) = lines.next() {
        if header.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() < 3 || fields[0] != "param" {
            return Err(bad(i, "expected 'param <name> <dims...>'"));
        }
        let name = fields[1].to_string();
        let dims: Vec<usize> = fields[2..]
            .iter()
            .map(|f| f.parse())
            .collect::<Result<_, _>>()
            .map_err(|_| bad(i, "non-integer dimension"))?;
        let want: usize = dims.iter().product();
        let (j, data_line) = lines
            .next()
            .ok_or_else(|| bad(i, "missing value line after param header"))?;
        let values: Vec<f64> = data_line
            .split_whitespace()
            .map(|f| f.parse())
            .collect::<Result<_, _>>()
            .map_err(|_| bad(j, "non-numeric parameter value"))?;
        if values.len() != want {
            return Err(CheckpointError::BadParamSize {
                name,
                want,
                got: values.len(),
            });
        }
        loaded.push((name, values));
    }

    for e in model.store_mut().entries_mut() {
        let (_, values) = loaded
            .iter()
            .find(|(n, _)| *n == e.name)
            .ok_or_else(|| CheckpointError::MissingParam(e.name.clone()))?;
        if values.len() != e.value.len() {
            return Err(CheckpointError::BadParamSize {
                name: e.name.clone(),
                want: e.value.len(),
                got: values.len(),
            });
        }
        e.value = values.clone();
    }
    Ok(model)
}

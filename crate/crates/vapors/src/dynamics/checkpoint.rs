//! Versioned binary checkpoints.
//!
//! A plain-text header (version line, model config as JSON, one manifest
//! line per tensor with name, shape, dtype, and float offset) is followed by
//! the raw little-endian f32 parameter data. Loading rebuilds the layout
//! from the embedded config and rejects any manifest or shape mismatch.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::{Layout, ModelParams};
use crate::config::ModelConfig;
use crate::dynamics::Geometry;

const MAGIC: &str = "VAPORS-CKPT v1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint: {0}")]
    Format(String),
    #[error("manifest mismatch: {0}")]
    ManifestMismatch(String),
    #[error("bad embedded config: {0}")]
    Config(String),
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<(), CheckpointError> {
    let file = std::fs::File::create(path)?;
    write_checkpoint(params, std::io::BufWriter::new(file))
}

pub fn write_checkpoint<W: Write>(params: &ModelParams, mut w: W) -> Result<(), CheckpointError> {
    writeln!(w, "{MAGIC}")?;
    let config = serde_json::to_string(&params.config)
        .map_err(|e| CheckpointError::Config(e.to_string()))?;
    writeln!(w, "config {config}")?;
    for entry in params.manifest() {
        let shape: Vec<String> = entry.shape.iter().map(|d| d.to_string()).collect();
        writeln!(w, "param {} {} f32 {}", entry.name, shape.join("x"), entry.offset)?;
    }
    writeln!(w, "data {}", params.data.len())?;
    let mut bytes = Vec::with_capacity(params.data.len() * 4);
    for &v in &params.data {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams, CheckpointError> {
    read_checkpoint(std::fs::File::open(path)?)
}

pub fn read_checkpoint<R: Read>(r: R) -> Result<ModelParams, CheckpointError> {
    let mut reader = BufReader::new(r);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    if line.trim_end() != MAGIC {
        return Err(CheckpointError::Format(format!(
            "expected '{MAGIC}', got '{}'",
            line.trim_end()
        )));
    }
    line.clear();
    reader.read_line(&mut line)?;
    let config_json = line
        .strip_prefix("config ")
        .ok_or_else(|| CheckpointError::Format("missing config line".into()))?;
    let config: ModelConfig = serde_json::from_str(config_json.trim_end())
        .map_err(|e| CheckpointError::Config(e.to_string()))?;

    let geom = Geometry::from_config(&config)
        .map_err(|e| CheckpointError::Config(e.to_string()))?;
    let (layout, expected_manifest) = Layout::build(&geom);

    let mut seen = 0usize;
    let count: usize;
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Err(CheckpointError::Format("truncated header".into()));
        }
        let trimmed = line.trim_end();
        if let Some(rest) = trimmed.strip_prefix("param ") {
            let parts: Vec<&str> = rest.split_whitespace().collect();
            if parts.len() != 4 || parts[2] != "f32" {
                return Err(CheckpointError::Format(format!("bad manifest line '{trimmed}'")));
            }
            let expected = expected_manifest.get(seen).ok_or_else(|| {
                CheckpointError::ManifestMismatch(format!("unexpected extra tensor {}", parts[0]))
            })?;
            let shape: Result<Vec<usize>, _> = parts[1].split('x').map(|d| d.parse()).collect();
            let shape =
                shape.map_err(|_| CheckpointError::Format(format!("bad shape '{}'", parts[1])))?;
            let offset: usize = parts[3]
                .parse()
                .map_err(|_| CheckpointError::Format(format!("bad offset '{}'", parts[3])))?;
            if expected.name != parts[0] || expected.shape != shape || expected.offset != offset {
                return Err(CheckpointError::ManifestMismatch(format!(
                    "tensor {} has {:?}@{} but the config implies {} {:?}@{}",
                    parts[0], shape, offset, expected.name, expected.shape, expected.offset
                )));
            }
            seen += 1;
        } else if let Some(rest) = trimmed.strip_prefix("data ") {
            count = rest
                .parse()
                .map_err(|_| CheckpointError::Format(format!("bad data count '{rest}'")))?;
            break;
        } else {
            return Err(CheckpointError::Format(format!("unexpected line '{trimmed}'")));
        }
    }
    if seen != expected_manifest.len() {
        return Err(CheckpointError::ManifestMismatch(format!(
            "{seen} tensors in file, config implies {}",
            expected_manifest.len()
        )));
    }
    if count != layout.total {
        return Err(CheckpointError::ManifestMismatch(format!(
            "{count} floats in file, config implies {}",
            layout.total
        )));
    }
    let mut bytes = vec![0u8; count * 4];
    reader.read_exact(&mut bytes)?;
    let data: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();

    let mut params = ModelParams::init(&config, 0).map_err(|e| CheckpointError::Config(e.to_string()))?;
    params.data = data;
    Ok(params)
}

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::pipeline::{Checkpoint, ModelParams};

/// Writes model weights as JSON with round-trip float precision.
pub fn save_params(path: &Path, params: &ModelParams) -> Result<()> {
    let text = serde_json::to_string(&params.to_checkpoint()).expect("checkpoint serializes");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_params(path: &Path) -> Result<ModelParams> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::at(path, e.line(), e.to_string()))?;
    ModelParams::from_checkpoint(ckpt)
}

//! JSON checkpoints of a full [`ModelState`].
//!
//! Floats are written with shortest round-trip formatting, so save followed by
//! load reproduces every bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::ModelState;

pub const FORMAT: &str = "phe-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model: ModelState,
}

impl Checkpoint {
    pub fn new(model: ModelState) -> Self {
        Self {
            format: FORMAT.to_string(),
            version: VERSION,
            model,
        }
    }
}

pub fn to_string(model: &ModelState) -> Result<String> {
    if !model.is_finite() {
        return Err(Error::Numerical("refusing to checkpoint non-finite parameters".into()));
    }
    #[derive(Serialize)]
    struct Borrowed<'a> {
        format: &'a str,
        version: u32,
        model: &'a ModelState,
    }
    Ok(serde_json::to_string(&Borrowed {
        format: FORMAT,
        version: VERSION,
        model,
    })?)
}

pub fn from_str(text: &str) -> Result<ModelState> {
    let ck: Checkpoint = serde_json::from_str(text).map_err(|e| Error::data(format!("bad checkpoint: {e}")))?;
    if ck.format != FORMAT || ck.version != VERSION {
        return Err(Error::data(format!(
            "unsupported checkpoint {} v{} (expected {FORMAT} v{VERSION})",
            ck.format, ck.version
        )));
    }
    Ok(ck.model)
}

pub fn save(model: &ModelState, path: &Path) -> Result<()> {
    std::fs::write(path, to_string(model)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ModelState> {
    from_str(&std::fs::read_to_string(path)?)
}

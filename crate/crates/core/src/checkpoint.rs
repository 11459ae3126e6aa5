//! JSON model checkpoints.
//!
//! ```json
//! {
//!   "format": "arcpool-checkpoint",
//!   "version": 1,
//!   "seed": 7,
//!   "class_names": ["0", "1"],
//!   "hyper": { "scale": 10.0, "margin": 0.3, "d_in": 16, ... },
//!   "model": {
//!     "d_in": 16, "d_emb": 16, "num_classes": 2,
//!     "weights": [...], "bias": [...], "prototypes": [...]
//!   }
//! }
//! ```
//!
//! Floats are written in shortest round-trip form, so loading a saved
//! checkpoint reproduces every parameter bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifier::{HyperParams, ModelParams};
use crate::error::{Error, Result};

pub const FORMAT_TAG: &str = "arcpool-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    #[serde(default)]
    pub class_names: Vec<String>,
    pub hyper: HyperParams,
    pub model: ModelParams,
}

impl Checkpoint {
    pub fn new(
        hyper: HyperParams,
        model: ModelParams,
        seed: u64,
        class_names: Vec<String>,
    ) -> Self {
        Checkpoint {
            format: FORMAT_TAG.to_string(),
            version: FORMAT_VERSION,
            seed,
            class_names,
            hyper,
            model,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint =
            serde_json::from_str(text).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
        ckpt.validate()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::CorruptCheckpoint(msg));
        if self.format != FORMAT_TAG {
            return bad(format!("unexpected format tag {:?}", self.format));
        }
        if self.version != FORMAT_VERSION {
            return bad(format!("unsupported version {}", self.version));
        }
        let m = &self.model;
        if m.d_in != self.hyper.d_in || m.d_emb != self.hyper.d_emb {
            return bad("model dimensions disagree with hyper-parameters".into());
        }
        if m.weights.len() != m.d_in * m.d_emb
            || m.bias.len() != m.d_emb
            || m.prototypes.len() != m.num_classes * m.d_emb
        {
            return bad("parameter array lengths do not match dimensions".into());
        }
        if !m.is_finite() {
            return bad("non-finite parameter".into());
        }
        if !self.class_names.is_empty() && self.class_names.len() != m.num_classes {
            return bad("class_names length differs from num_classes".into());
        }
        self.hyper
            .validate()
            .map_err(|e| Error::CorruptCheckpoint(e.to_string()))
    }
}

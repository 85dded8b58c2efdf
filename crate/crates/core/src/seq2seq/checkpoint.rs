use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::Seq2SeqModel;
use crate::dataio::Preprocessor;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "rulkit-seq2seq";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Model weights plus the preprocessing needed to reproduce its inputs.
///
/// Stored as JSON. Matrices are `{"rows", "cols", "data"}` with `data`
/// row-major; GRU gate matrices are `units × (input + units + 1)` with the
/// bias in the last column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model: Seq2SeqModel,
    pub preprocessor: Option<Preprocessor>,
}

impl Checkpoint {
    pub fn new(model: Seq2SeqModel, preprocessor: Option<Preprocessor>) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            model,
            preprocessor,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!("not a model checkpoint (format {:?})", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {}", ck.version)));
        }
        // Re-validate shapes and values that serde accepted blindly.
        let model = Seq2SeqModel::from_params(ck.model.config.clone(), ck.model.params.clone())
            .map_err(|e| Error::Format(e.to_string()))?;
        if !model.params.is_finite() {
            return Err(Error::Format("checkpoint contains non-finite weights".into()));
        }
        if let Some(p) = &ck.preprocessor {
            if p.output_dim() != model.config.sensors {
                return Err(Error::Format(format!(
                    "preprocessor yields {} sensors, model expects {}",
                    p.output_dim(),
                    model.config.sensors
                )));
            }
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

//! Saved-model format: the final global parameters plus the model spec, as
//! JSON, so diagnostics can rerun over a finished experiment.

use serde::{Deserialize, Serialize};

use fedsim::error::Result;
use fedsim::model::ModelSpec;
use fedsim::numcore::ParamVector;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelFile {
    /// Index of the last completed round.
    pub round: usize,
    pub model: ModelSpec,
    pub params: ParamVector,
}

impl ModelFile {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut file: ModelFile = serde_json::from_str(text)?;
        file.params.rebuild_layout()?;
        Ok(file)
    }
}

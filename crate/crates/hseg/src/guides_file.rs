//! `guides.json`: fitted guide parameters.

use std::path::Path;

use hseg_core::guides::{GuideParams, GuideSet};
use serde::{Deserialize, Serialize};

use crate::dataset::{read_json, write_json};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidesFile {
    pub format_version: u32,
    pub n: usize,
    pub margin: f64,
    pub seed: u64,
    pub params: Vec<GuideParams>,
    /// Exhaustive training loss of `params`; absent for sampled guides.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
}

impl GuidesFile {
    pub fn new(guides: &GuideSet, seed: u64) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            n: guides.n(),
            margin: guides.margin(),
            seed,
            params: guides.params().to_vec(),
            sweep_loss: None,
            iterations: None,
        }
    }

    pub fn guide_set(&self) -> Result<GuideSet> {
        if self.n != self.params.len() {
            return Err(Error::Data(format!(
                "guides file declares n = {} but lists {} guides",
                self.n,
                self.params.len()
            )));
        }
        Ok(GuideSet::new(self.params.clone(), self.margin)?)
    }
}

pub fn save_guides(file: &GuidesFile, path: &Path) -> Result<()> {
    write_json(file, path)
}

pub fn load_guides(path: &Path) -> Result<GuidesFile> {
    let file: GuidesFile = read_json(path)?;
    if file.format_version != FORMAT_VERSION {
        return Err(Error::Data(format!(
            "{}: unsupported guides format_version {}",
            path.display(),
            file.format_version
        )));
    }
    Ok(file)
}

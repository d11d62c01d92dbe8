//! Experiment configuration file: where the graph comes from plus the run settings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{generate_synthetic, load_dataset, DatasetBundle, SbmSpec};
use crate::error::{Error, Result};
use crate::fsutil::read_to_string;
use crate::graph::Graph;
use crate::harness::RunConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// Path to a dataset bundle, relative to the config file.
    Bundle(PathBuf),
    /// Generated in memory.
    Synthetic(SbmSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub run: RunConfig,
}

impl ExperimentConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            file: origin.to_path_buf(),
            line: e.line(),
            msg: e.to_string(),
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&read_to_string(path)?, path)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }

    pub fn validate(&self) -> Result<()> {
        if let DatasetSource::Synthetic(spec) = &self.dataset {
            spec.validate()?;
        }
        self.run.validate()
    }

    /// Loads or generates the graph; `base_dir` anchors a relative bundle path.
    pub fn load_graph(&self, base_dir: &Path) -> Result<Graph> {
        match &self.dataset {
            DatasetSource::Bundle(p) => {
                let path = if p.is_relative() {
                    base_dir.join(p)
                } else {
                    p.clone()
                };
                load_dataset(&DatasetBundle::read(&path)?)
            }
            DatasetSource::Synthetic(spec) => generate_synthetic(spec),
        }
    }
}

//! The versioned TOML configuration file.
//!
//! Unknown keys are rejected at every level. The recovery threshold is
//! derived from the scheme and may not be set.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scheme::SchemeConfig;
use crate::simulator::StragglerModel;

pub const CONFIG_VERSION: u32 = 1;

/// A complete, commented configuration accepted by [`ConfigFile::parse`].
pub const ANNOTATED_EXAMPLE: &str = include_str!("../../../config/example.toml");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Directory holding the four IDX files.
    pub data_dir: PathBuf,
    /// Base URL the files are fetched from.
    pub mirror_url: String,
    /// Expected SHA-256 (hex) per file name; files without an entry are
    /// downloaded unverified and their digest is printed.
    pub checksums: BTreeMap<String, String>,
    /// Train on a seeded random subset of this many images.
    pub subset: Option<usize>,
    /// Evaluate on the first this-many test images.
    pub test_subset: Option<usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data/fashion-mnist"),
            mirror_url: "http://fashion-mnist.s3-website.eu-central-1.amazonaws.com/".into(),
            checksums: BTreeMap::new(),
            subset: None,
            test_subset: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub checkpoint: PathBuf,
    /// Per-epoch training metrics, one JSON object per line.
    pub metrics: PathBuf,
    /// Simulation report, one JSON object per line.
    pub report: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            checkpoint: PathBuf::from("model.lcc"),
            metrics: PathBuf::from("metrics.jsonl"),
            report: PathBuf::from("report.jsonl"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    /// Groups of `K` images per simulated batch.
    pub batch_groups: usize,
    pub max_batches: Option<usize>,
    /// Run workers behind loopback TCP sockets instead of threads.
    pub socket: bool,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self { batch_groups: 50, max_batches: None, socket: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub version: u32,
    #[serde(default)]
    pub scheme: SchemeConfig,
    #[serde(default)]
    pub straggler: StragglerModel,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
}

impl Default for ConfigFile {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            scheme: SchemeConfig::default(),
            straggler: StragglerModel::default(),
            data: DataConfig::default(),
            output: OutputConfig::default(),
            simulation: SimulationConfig::default(),
        }
    }
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let raw: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        if let Some(scheme) = raw.get("scheme").and_then(toml::Value::as_table) {
            if scheme.contains_key("recovery_threshold") {
                return Err(Error::Config(
                    "scheme.recovery_threshold is derived from the degrees and cannot be set".into(),
                ));
            }
        }
        match raw.get("version") {
            None => return Err(Error::Config("missing top-level `version` key".into())),
            Some(toml::Value::Integer(v)) if *v == CONFIG_VERSION as i64 => {}
            Some(v) => {
                return Err(Error::Config(format!("unsupported config version {v} (supported: {CONFIG_VERSION})")))
            }
        }
        let cfg: ConfigFile = raw.try_into().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.scheme.validate()?;
        self.straggler.validate()?;
        if self.simulation.batch_groups == 0 {
            return Err(Error::Config("simulation.batch_groups must be at least 1".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }
}

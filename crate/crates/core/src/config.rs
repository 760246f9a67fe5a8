//! Run configuration: a TOML document layered over the built-in defaults.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::controller::ControllerParams;
use crate::data::GenerationConfig;
use crate::ekf::EkfConfig;
use crate::error::{Error, Result};
use crate::lstm::TrainConfig;
use crate::plant::{MediumParams, WorkspaceCone};

pub const DEFAULT_CONFIG: &str = include_str!("../configs/default.toml");
pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub medium: String,
    pub n: usize,
    pub train_fraction: f64,
    pub retries: usize,
    pub max_final_error_mm: f64,
    pub depth_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSection {
    pub depth_margin: f64,
    pub bin_width: f64,
    /// Trials per medium, in medium-name order.
    pub trials: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub z_max: f64,
    pub workspace: WorkspaceCone,
    pub controller: ControllerParams,
    pub ekf: EkfConfig,
    pub training: TrainConfig,
    pub dataset: DatasetSection,
    pub evaluation: EvaluationSection,
    pub mediums: BTreeMap<String, MediumParams>,
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::from_toml_str("").expect("built-in config is valid")
    }
}

impl RunConfig {
    /// Parses `text` as overrides on top of the built-in defaults.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut base: toml::Table = DEFAULT_CONFIG.parse().expect("built-in config parses");
        let over: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
        merge(&mut base, over);
        let config: RunConfig = toml::Value::Table(base)
            .try_into()
            .map_err(|e| Error::Config(format!("{e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::format(path, m),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml_string()).map_err(|e| Error::io(path, e))
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml_string().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported config schema_version {}",
                self.schema_version
            )));
        }
        if !(self.z_max > 0.0) {
            return Err(Error::Config("z_max must be positive".into()));
        }
        self.workspace.validate()?;
        if self.z_max < self.workspace.max_depth {
            return Err(Error::Config("z_max must cover the deepest target".into()));
        }
        self.controller.validate()?;
        self.training.validate()?;
        for (name, m) in &self.mediums {
            m.validate().map_err(|e| Error::Config(format!("medium {name}: {e}")))?;
        }
        self.medium(&self.dataset.medium)?;
        for name in self.evaluation.trials.keys() {
            self.medium(name)?;
        }
        if !(self.evaluation.bin_width > 0.0) {
            return Err(Error::Config("evaluation bin_width must be positive".into()));
        }
        Ok(())
    }

    pub fn medium(&self, name: &str) -> Result<&MediumParams> {
        self.mediums.get(name).ok_or_else(|| {
            let known: Vec<&str> = self.mediums.keys().map(String::as_str).collect();
            Error::Config(format!("unknown medium {name:?} (known: {})", known.join(", ")))
        })
    }

    /// Dataset generation settings for `medium` (or the configured one).
    pub fn generation(&self, medium: Option<&str>) -> Result<GenerationConfig> {
        let name = medium.unwrap_or(&self.dataset.medium);
        Ok(GenerationConfig {
            n: self.dataset.n,
            medium_name: name.to_string(),
            medium: *self.medium(name)?,
            workspace: self.workspace,
            controller: self.controller,
            z_max: self.z_max,
            retries: self.dataset.retries,
            max_final_error_mm: self.dataset.max_final_error_mm,
            depth_margin: self.dataset.depth_margin,
            seed: self.seed,
        })
    }
}

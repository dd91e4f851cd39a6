//! Experiment configuration files (TOML, `schema_version = 1`).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize};

use crate::constraints::ConstraintSpec;
use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::rkhs::DesignData;

pub const SCHEMA_VERSION: u32 = 1;

fn default_grid() -> usize {
    2001
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// Accepts either one inline constraint table or a list of them.
fn one_or_many<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<ConstraintSpec>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(ConstraintSpec),
        Many(Vec<ConstraintSpec>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(s) => vec![s],
        OneOrMany::Many(v) => v,
    })
}

/// One figure experiment: kernel, data, constraint setting, partition
/// ladder and sampler settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    pub kernel: Kernel,
    pub data: DesignData,
    /// Combined (intersected) constraint families.
    #[serde(default, deserialize_with = "one_or_many")]
    pub constraints: Vec<ConstraintSpec>,
    /// Numbers of cells of the nested uniform partitions; the last one is
    /// the level the posterior is sampled on.
    pub levels: Vec<usize>,
    #[serde(default)]
    pub n_samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_grid")]
    pub grid: usize,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if cfg.name.is_empty() {
            cfg.name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.kernel.validate()?;
        self.data.validate()?;
        for c in &self.constraints {
            c.validate()?;
        }
        if self.levels.is_empty() {
            return Err(Error::Config("levels must not be empty".into()));
        }
        if self.levels[0] == 0 {
            return Err(Error::Config("levels must be positive".into()));
        }
        for w in self.levels.windows(2) {
            if w[1] <= w[0] || w[1] % w[0] != 0 {
                return Err(Error::Config(format!(
                    "levels must be nested: {} does not divide {}",
                    w[0], w[1]
                )));
            }
        }
        if self.grid < 2 {
            return Err(Error::Config("grid needs at least 2 points".into()));
        }
        Ok(())
    }

    pub fn finest_level(&self) -> usize {
        *self.levels.last().expect("validated config has levels")
    }
}

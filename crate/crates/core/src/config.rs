//! The run configuration file.
//!
//! A TOML document with a top-level `seed` and the sections `[model]`,
//! `[train]` (with sub-tables `[train.augmentation]` and
//! `[train.hard_mining.difficulty_weight]`) and `[data]`. Unknown keys are
//! errors. A missing section takes its desk-scale defaults; a present
//! `[model]` section must list every field. Relative paths are resolved
//! against the directory holding the file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{ConfigError, ModelConfig};
use crate::train::{TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum RunConfigError {
    #[error("{path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error(transparent)]
    Model(#[from] ConfigError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("data: {0}")]
    Data(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub images_dir: PathBuf,
    pub masks_dir: PathBuf,
    /// `id<TAB>tag` table; without one every sample is tagged `plain`.
    /// Omitting the key inside `[data]` means no table.
    #[serde(default)]
    pub tags_file: Option<PathBuf>,
    /// Fraction of tiles used for training, the rest for validation.
    pub split_fraction: f64,
    /// Overlap between inference tiles, in pixels.
    pub overlap: usize,
    /// Where checkpoints, logs and reports go.
    pub output_dir: PathBuf,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            images_dir: "data/images".into(),
            masks_dir: "data/masks".into(),
            tags_file: Some("data/tags.tsv".into()),
            split_fraction: 0.7,
            overlap: 16,
            output_dir: "runs".into(),
        }
    }
}

impl DataConfig {
    fn resolve(&mut self, base: &Path) {
        for p in [&mut self.images_dir, &mut self.masks_dir, &mut self.output_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(p) = &mut self.tags_file {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    /// Checks that the inputs exist.
    pub fn check_inputs(&self) -> Result<(), RunConfigError> {
        for (name, dir) in [("images_dir", &self.images_dir), ("masks_dir", &self.masks_dir)] {
            if !dir.is_dir() {
                return Err(RunConfigError::Data(format!("{name} {} is not a directory", dir.display())));
            }
        }
        if let Some(t) = &self.tags_file {
            if !t.is_file() {
                return Err(RunConfigError::Data(format!("tags_file {} does not exist", t.display())));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "ModelConfig::desk")]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub data: DataConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            model: ModelConfig::desk(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses without resolving paths.
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, RunConfigError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| RunConfigError::Parse {
            path: origin.to_owned(),
            message: e.to_string(),
        })?;
        cfg.train.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, RunConfigError> {
        let text = fs::read_to_string(path).map_err(|e| RunConfigError::Read {
            path: path.to_owned(),
            message: e.to_string(),
        })?;
        let mut cfg = Self::from_toml(&text, path)?;
        cfg.data.resolve(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always representable")
    }

    /// Overrides the seed everywhere it is used.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), RunConfigError> {
        self.model.validate()?;
        self.train.validate()?;
        let d = &self.data;
        if !(d.split_fraction > 0.0 && d.split_fraction <= 1.0) {
            return Err(RunConfigError::Data(format!("split_fraction {} must lie in (0, 1]", d.split_fraction)));
        }
        if d.overlap >= self.model.tile_size {
            return Err(RunConfigError::Data(format!(
                "overlap {} must be smaller than the tile size {}",
                d.overlap, self.model.tile_size
            )));
        }
        Ok(())
    }
}

//! Run configuration: a JSON file whose values command-line flags override.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use planar_splat::fusion::FusionParams;
use planar_splat::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// JSON manifest (file or directory) or COLMAP text directory.
    pub scene: Option<PathBuf>,
    /// `json` or `colmap`; detected from the path when absent.
    pub scene_format: Option<String>,
    pub output: Option<PathBuf>,
    pub train: TrainConfig,
    pub fusion: FusionParams,
    /// Fusion box `[[x, y, z], [x, y, z]]`; defaults to the scene bounds.
    pub bounds: Option<[[f64; 3]; 2]>,
    /// Render a preview of the first view every this many iterations (0
    /// disables).
    pub preview_interval: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scene: None,
            scene_format: None,
            output: None,
            train: TrainConfig::default(),
            fusion: FusionParams::default(),
            bounds: None,
            preview_interval: 500,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map(Self::load).unwrap_or_else(|| Ok(Self::default()))
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if let Some(v) = self.fusion.voxel_size {
            if !(v > 0.0 && v.is_finite()) {
                bail!("fusion voxel size must be positive, got {v}");
            }
        }
        if let Some([lo, hi]) = self.bounds {
            if !(0..3).all(|k| lo[k] < hi[k]) {
                bail!("fusion bounds {lo:?}..{hi:?} are empty");
            }
        }
        if let Some(f) = &self.scene_format {
            f.parse::<planar_splat::scenes::SceneFormat>()?;
        }
        Ok(())
    }

    pub fn scene_path(&self) -> Result<&Path> {
        self.scene.as_deref().context("no scene given (--scene or \"scene\" in the config)")
    }

    pub fn output_dir(&self) -> Result<&Path> {
        self.output.as_deref().context("no output directory given (--out or \"output\" in the config)")
    }
}

//! Run configuration (JSON). Every field has a default, so a config file only
//! needs the values it changes.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::synthetic::SyntheticScene;
use crate::error::{Error, Result};
use crate::gaussian_map::KeyframePolicy;
use crate::geometry::CameraIntrinsics;
use crate::mapper::{DensifyConfig, LearningRates, SamplingStrategy};
use crate::renderer::LossWeights;
use crate::tracker::TrackerConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetConfig {
    /// Procedural scene with the ray-casting correspondence oracle.
    Synthetic {
        /// Scene description; the built-in desk (seeded by the run seed) if absent.
        #[serde(default)]
        scene: Option<SyntheticScene>,
        #[serde(default = "default_n_frames")]
        n_frames: usize,
        #[serde(default)]
        noise_px: f64,
        #[serde(default)]
        dropout: f64,
    },
    /// TUM RGB-D layout with externally exported matches.
    Tum {
        path: PathBuf,
        /// Directory of `matches_<i>_<j>.txt` files; `<path>/matches` if absent.
        #[serde(default)]
        matches: Option<PathBuf>,
        #[serde(default)]
        intrinsics: Option<CameraIntrinsics>,
        #[serde(default)]
        max_frames: Option<usize>,
    },
}

fn default_n_frames() -> usize {
    50
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Synthetic {
            scene: None,
            n_frames: default_n_frames(),
            noise_px: 0.0,
            dropout: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TrackingMethod {
    /// Closed-form pose from matches, optionally refined.
    #[default]
    Feature,
    /// Constant-velocity prediction refined by rendering (the baseline).
    ConstantVelocity,
}

impl std::fmt::Display for TrackingMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TrackingMethod::Feature => "feature",
            TrackingMethod::ConstantVelocity => "constant_velocity",
        })
    }
}

impl std::str::FromStr for TrackingMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "feature" => Ok(TrackingMethod::Feature),
            "constant_velocity" | "cv" => Ok(TrackingMethod::ConstantVelocity),
            _ => Err(Error::invalid(format!("unknown tracking method {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub stride: usize,
    pub method: TrackingMethod,
    pub tracker: TrackerConfig,
    /// Loss weights of map optimization and refinement.
    pub loss: LossWeights,
    pub keyframes: KeyframePolicy,
    pub sampling: SamplingStrategy,
    pub densify: DensifyConfig,
    pub learning_rates: LearningRates,
    /// Map optimization iterations after each tracked frame.
    pub map_iters: usize,
    /// Priority-sampled refinement iterations after the sequence.
    pub refine_iters: usize,
    /// Let refinement move splat centers as well as colors and opacities.
    pub refine_positions: bool,
    pub seed: u64,
    pub output: PathBuf,
    /// Frames decoded ahead of the tracker.
    pub queue_capacity: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            stride: 1,
            method: TrackingMethod::Feature,
            tracker: TrackerConfig::default(),
            loss: LossWeights::default(),
            keyframes: KeyframePolicy::default(),
            sampling: SamplingStrategy::default(),
            densify: DensifyConfig::default(),
            learning_rates: LearningRates::default(),
            map_iters: 10,
            refine_iters: 100,
            refine_positions: true,
            seed: 0,
            output: PathBuf::from("out"),
            queue_capacity: 8,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::invalid("stride must be >= 1"));
        }
        if self.queue_capacity == 0 {
            return Err(Error::invalid("queue_capacity must be >= 1"));
        }
        self.tracker.validate()?;
        LossWeights::new(self.loss.lambda)?;
        self.keyframes.validate()?;
        self.sampling.validate()?;
        self.densify.validate()?;
        match &self.dataset {
            DatasetConfig::Synthetic {
                scene,
                noise_px,
                dropout,
                ..
            } => {
                if let Some(s) = scene {
                    s.validate()?;
                }
                if !(*noise_px >= 0.0 && (0.0..=1.0).contains(dropout)) {
                    return Err(Error::invalid("noise_px must be >= 0 and dropout in [0, 1]"));
                }
            }
            DatasetConfig::Tum { intrinsics, .. } => {
                if let Some(k) = intrinsics {
                    k.validate()?;
                }
            }
        }
        Ok(())
    }
}

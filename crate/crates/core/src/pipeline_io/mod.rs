//! Datasets, configuration and file formats.

pub mod config;
pub mod png;
pub mod stream;
pub mod synthetic;
pub mod trajectory;
pub mod tum;

use std::sync::Arc;

pub use config::{DatasetConfig, RunConfig, TrackingMethod};
pub use synthetic::{generate_synthetic, SyntheticScene};
pub use trajectory::{export_trajectory, import_trajectory};
pub use tum::{load_tum, write_tum};

use crate::error::Result;
use crate::evalkit::Trajectory;
use crate::frame::Frame;
use crate::frontend::{CorrespondenceProvider, FileMatcher, SyntheticMatcher};

/// Frames, ground truth and the matcher that goes with them.
pub struct Dataset {
    pub frames: Vec<Frame>,
    pub ground_truth: Option<Trajectory>,
    pub provider: Box<dyn CorrespondenceProvider>,
}

impl Dataset {
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        match &cfg.dataset {
            DatasetConfig::Synthetic {
                scene,
                n_frames,
                noise_px,
                dropout,
            } => {
                let scene = Arc::new(scene.clone().unwrap_or_else(|| SyntheticScene::desk(cfg.seed)));
                let (frames, gt) = generate_synthetic(&scene, *n_frames)?;
                let matcher = SyntheticMatcher::for_scene(scene, frames.iter().map(|f| f.id)).with_noise(
                    *noise_px,
                    *dropout,
                    cfg.seed,
                );
                Ok(Self {
                    frames,
                    ground_truth: Some(gt),
                    provider: Box::new(matcher),
                })
            }
            DatasetConfig::Tum {
                path,
                matches,
                intrinsics,
                max_frames,
            } => {
                let mut index = tum::load_tum_index(path, *intrinsics)?;
                if let Some(n) = max_frames {
                    index.entries.truncate(*n);
                }
                let frames = tum::stream_frames(&index, cfg.queue_capacity).collect::<Result<Vec<_>>>()?;
                let matches = matches.clone().unwrap_or_else(|| path.join("matches"));
                Ok(Self {
                    frames,
                    ground_truth: Some(index.ground_truth),
                    provider: Box::new(FileMatcher::new(matches)),
                })
            }
        }
    }
}

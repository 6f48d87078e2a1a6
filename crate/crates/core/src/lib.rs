//! Desk-scale RGB-D SLAM: closed-form tracking from matched correspondences,
//! Gaussian-splat mapping and an evaluation harness.
//!
//! Poses are world-from-camera throughout: `pose.transform_point(p_cam)` gives
//! world coordinates. Camera axes follow the pinhole convention (x right,
//! y down, z forward).

pub mod error;
pub mod evalkit;
pub mod frame;
pub mod frontend;
pub mod gaussian_map;
pub mod geometry;
pub mod mapper;
pub mod optim;
pub mod pipeline_io;
pub mod renderer;
pub mod tracker;

pub use error::{Error, Result};
pub use evalkit::{ate_rmse, psnr, run_experiment, ssim, stride_subsample, MetricReport, Trajectory};
pub use frame::{ColorImage, DepthImage, Frame};
pub use frontend::{CorrespondenceProvider, FileMatcher, SyntheticMatcher};
pub use gaussian_map::{GaussianMap, GaussianSplat, KeyframePolicy};
pub use geometry::{estimate_rigid_transform, CameraIntrinsics, PixelMatch, PointSet, Pose};
pub use mapper::{densify, optimize_map, refine_colors, SamplingMode, SamplingStrategy};
pub use pipeline_io::{Dataset, DatasetConfig, RunConfig, SyntheticScene, TrackingMethod};
pub use renderer::{compute_loss, render, LossBreakdown, LossWeights, RenderedImage};
pub use tracker::{track_frame, TrackerConfig};

//! Per-frame pose estimation.
//!
//! The relative motion comes in closed form from lifted matches; an optional
//! render-and-compare refinement then descends on the photometric/depth loss
//! over a 6-DOF left perturbation of the pose.

use std::time::Instant;

use nalgebra::Vector6;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::frontend::{
    confidence_filter, lift_depth_matches, match_depths, truncate_by_depth, CorrespondenceProvider,
    DEFAULT_MIN_CONFIDENCE, DEFAULT_PERCENTILE,
};
use crate::gaussian_map::GaussianMap;
use crate::geometry::{estimate_rigid_transform, CameraIntrinsics, Pose};
use crate::optim::Adam;
use crate::renderer::{loss_and_pose_gradient, LossBreakdown, LossWeights};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    pub refine_iters: usize,
    /// Multiplies the refinement step sizes (1 mrad, 1 mm).
    pub step_scale: f64,
    pub percentile: f64,
    pub min_confidence: f64,
    pub loss: LossWeights,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            refine_iters: 50,
            step_scale: 1.0,
            percentile: DEFAULT_PERCENTILE,
            min_confidence: DEFAULT_MIN_CONFIDENCE,
            loss: LossWeights::default(),
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.percentile > 0.0 && self.percentile <= 1.0) {
            return Err(Error::invalid("tracker percentile must lie in (0, 1]"));
        }
        if !(self.step_scale > 0.0 && self.step_scale.is_finite()) {
            return Err(Error::invalid("tracker step_scale must be positive"));
        }
        LossWeights::new(self.loss.lambda)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackResult {
    /// World-from-camera pose of the current frame.
    pub pose: Pose,
    /// Closed-form estimate before refinement.
    pub initial_pose: Pose,
    pub n_matches: usize,
    pub elapsed_ms: f64,
}

/// Rigid motion taking points in the `prev` camera to the `cur` camera, and
/// the number of correspondences it was fitted on.
pub fn relative_pose(
    prev: &Frame,
    cur: &Frame,
    provider: &dyn CorrespondenceProvider,
    cfg: &TrackerConfig,
) -> Result<(Pose, usize)> {
    let raw = provider.matches(prev, cur)?;
    let confident = confidence_filter(&raw, cfg.min_confidence);
    let with_depth = match_depths(&confident, prev, cur);
    if with_depth.len() < 3 {
        return Err(Error::InsufficientCorrespondences {
            found: with_depth.len(),
            needed: 3,
        });
    }
    let kept = truncate_by_depth(&with_depth, cfg.percentile)?;
    let (src, dst) = lift_depth_matches(&kept, prev, cur)?;
    let rel = estimate_rigid_transform(&src, &dst)?;
    Ok((rel, src.len()))
}

pub fn track_frame(
    prev: (&Frame, &Pose),
    cur: &Frame,
    provider: &dyn CorrespondenceProvider,
    map: &GaussianMap,
    cfg: &TrackerConfig,
) -> Result<TrackResult> {
    let start = Instant::now();
    let (prev_frame, prev_pose) = prev;
    let (rel, n_matches) = relative_pose(prev_frame, cur, provider, cfg)?;
    let initial_pose = prev_pose.compose(&rel.inverse());
    let pose = if cfg.refine_iters > 0 && !map.is_empty() {
        refine_pose(&initial_pose, cur, map, &cur.intrinsics, cfg.refine_iters, &cfg.loss, cfg.step_scale).0
    } else {
        initial_pose
    };
    Ok(TrackResult {
        pose,
        initial_pose,
        n_matches,
        elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// Adam on the pose perturbation with a best-iterate return: the returned
/// loss never exceeds the loss at `init`.
pub fn refine_pose(
    init: &Pose,
    frame: &Frame,
    map: &GaussianMap,
    k: &CameraIntrinsics,
    iters: usize,
    w: &LossWeights,
    step_scale: f64,
) -> (Pose, LossBreakdown) {
    let rot = 1e-3 * step_scale;
    let trans = 1e-3 * step_scale;
    let mut adam = Adam::new(vec![rot, rot, rot, trans, trans, trans]);
    let mut pose = *init;
    let (mut loss, mut grad) = loss_and_pose_gradient(map, &pose, frame, k, w);
    let mut best = (pose, loss);
    for _ in 0..iters {
        let step = adam.step(grad.as_slice());
        pose = pose.retract(&Vector6::from_column_slice(&step)).orthonormalized();
        adam.decay(0.97);
        (loss, grad) = loss_and_pose_gradient(map, &pose, frame, k, w);
        if loss.total < best.1.total {
            best = (pose, loss);
        }
    }
    best
}

/// `p1 ∘ (p2⁻¹ ∘ p1)`: repeats the last inter-frame motion.
pub fn constant_velocity_predict(pose_t2: &Pose, pose_t1: &Pose) -> Pose {
    pose_t1.compose(&pose_t2.inverse().compose(pose_t1))
}

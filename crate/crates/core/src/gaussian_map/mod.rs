//! Gaussian-splat scene representation, visibility queries and keyframe bookkeeping.

mod icp;
mod ply;

pub use icp::{icp_align, IcpFit, IcpParams, IcpResult};
pub use ply::{read_ply, write_ply};

use std::collections::HashMap;

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, PointSet, Pose};

/// One anisotropic Gaussian: `Σ = R(q) diag(scale²) R(q)ᵀ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianSplat {
    pub center: Vector3<f64>,
    pub scale: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
    pub color: Vector3<f64>,
    pub opacity: f64,
}

impl GaussianSplat {
    pub fn new(
        center: Vector3<f64>,
        scale: Vector3<f64>,
        rotation: UnitQuaternion<f64>,
        color: Vector3<f64>,
        opacity: f64,
    ) -> Result<Self> {
        let splat = Self {
            center,
            scale,
            rotation,
            color,
            opacity,
        };
        splat.validate()?;
        Ok(splat)
    }

    pub fn isotropic(center: Vector3<f64>, radius: f64, color: Vector3<f64>, opacity: f64) -> Result<Self> {
        Self::new(
            center,
            Vector3::repeat(radius),
            UnitQuaternion::identity(),
            color,
            opacity,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !self.center.iter().all(|c| c.is_finite()) {
            return Err(Error::invalid("splat center must be finite"));
        }
        if !self.scale.iter().all(|s| *s > 0.0 && s.is_finite()) {
            return Err(Error::invalid("splat scales must be positive"));
        }
        if (self.rotation.into_inner().norm() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("splat quaternion must be unit norm"));
        }
        if !self.color.iter().all(|c| (0.0..=1.0).contains(c)) {
            return Err(Error::invalid("splat color must lie in [0, 1]"));
        }
        if !(self.opacity > 0.0 && self.opacity <= 1.0) {
            return Err(Error::invalid("splat opacity must lie in (0, 1]"));
        }
        Ok(())
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// World-frame covariance.
    pub fn covariance(&self) -> Matrix3<f64> {
        let r = self.rotation_matrix();
        let s2 = Matrix3::from_diagonal(&self.scale.component_mul(&self.scale));
        r * s2 * r.transpose()
    }
}

#[derive(Debug, Clone, Default)]
pub struct GaussianMap {
    pub splats: Vec<GaussianSplat>,
    keyframes: Vec<(usize, Pose)>,
}

impl GaussianMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_splats(splats: Vec<GaussianSplat>) -> Self {
        Self {
            splats,
            keyframes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.splats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.splats.is_empty()
    }

    pub fn keyframes(&self) -> &[(usize, Pose)] {
        &self.keyframes
    }

    pub fn last_keyframe(&self) -> Option<&(usize, Pose)> {
        self.keyframes.last()
    }

    /// Registers a keyframe; ids must be strictly increasing.
    pub fn add_keyframe(&mut self, frame_id: usize, pose: Pose) -> Result<()> {
        if let Some(&(last, _)) = self.keyframes.last() {
            if frame_id <= last {
                return Err(Error::invalid(format!(
                    "keyframe id {frame_id} does not follow {last}"
                )));
            }
        }
        self.keyframes.push((frame_id, pose));
        Ok(())
    }

    /// Updates the stored pose of an existing keyframe.
    pub fn set_keyframe_pose(&mut self, frame_id: usize, pose: Pose) -> bool {
        match self.keyframes.iter_mut().find(|(id, _)| *id == frame_id) {
            Some(entry) => {
                entry.1 = pose;
                true
            }
            None => false,
        }
    }

    pub fn centers(&self) -> PointSet {
        self.splats.iter().map(|s| s.center).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.splats.iter().try_for_each(GaussianSplat::validate)
    }
}

/// Keyframe selection rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum KeyframePolicy {
    /// New keyframe when the visible-splat IoU with the last keyframe drops below the threshold.
    Dense { iou_threshold: f64 },
    /// Every `k`-th frame.
    Sparse { k: usize },
}

impl Default for KeyframePolicy {
    fn default() -> Self {
        KeyframePolicy::Dense { iou_threshold: 0.9 }
    }
}

impl KeyframePolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KeyframePolicy::Dense { iou_threshold } if !(iou_threshold > 0.0 && iou_threshold < 1.0) => {
                Err(Error::invalid("iou_threshold must lie in (0, 1)"))
            }
            KeyframePolicy::Sparse { k: 0 } => Err(Error::invalid("keyframe stride k must be >= 1")),
            _ => Ok(()),
        }
    }
}

/// Whether a world point lies in the view frustum of a world-from-camera pose.
pub fn in_frustum(center: &Vector3<f64>, camera_from_world: &Pose, k: &CameraIntrinsics) -> bool {
    let p = camera_from_world.transform_point(center);
    if !(p.z > k.near && p.z < k.far) {
        return false;
    }
    let u = k.fx * p.x / p.z + k.cx;
    let v = k.fy * p.y / p.z + k.cy;
    k.contains(u, v)
}

/// Indices of splats whose centers fall inside the frustum of `pose` (world-from-camera).
pub fn visible_subset(map: &GaussianMap, pose: &Pose, k: &CameraIntrinsics) -> Vec<usize> {
    let cam_from_world = pose.inverse();
    map.splats
        .iter()
        .enumerate()
        .filter(|(_, s)| in_frustum(&s.center, &cam_from_world, k))
        .map(|(i, _)| i)
        .collect()
}

pub fn frustum_iou(map: &GaussianMap, pose_a: &Pose, pose_b: &Pose, k: &CameraIntrinsics) -> f64 {
    let a = visible_subset(map, pose_a, k);
    let b = visible_subset(map, pose_b, k);
    // Both lists are sorted, so merge-count.
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn should_add_keyframe(
    policy: &KeyframePolicy,
    map: &GaussianMap,
    candidate_pose: &Pose,
    frame_id: usize,
    k: &CameraIntrinsics,
) -> bool {
    if frame_id == 0 {
        return true;
    }
    match *policy {
        KeyframePolicy::Sparse { k: every } => frame_id % every.max(1) == 0,
        KeyframePolicy::Dense { iou_threshold } => match map.last_keyframe() {
            None => true,
            Some((_, last_pose)) => frustum_iou(map, last_pose, candidate_pose, k) < iou_threshold,
        },
    }
}

/// Replaces the points of each occupied voxel by their centroid. Output order
/// follows the first occurrence of each voxel in the input.
pub fn voxel_downsample(points: &PointSet, voxel: f64) -> Result<PointSet> {
    if !(voxel > 0.0) {
        return Err(Error::invalid("voxel size must be positive"));
    }
    let mut index: HashMap<[i64; 3], usize> = HashMap::new();
    let mut acc: Vec<(Vector3<f64>, usize)> = Vec::new();
    for p in points.iter() {
        let key = [
            (p.x / voxel).floor() as i64,
            (p.y / voxel).floor() as i64,
            (p.z / voxel).floor() as i64,
        ];
        let slot = *index.entry(key).or_insert_with(|| {
            acc.push((Vector3::zeros(), 0));
            acc.len() - 1
        });
        acc[slot].0 += p;
        acc[slot].1 += 1;
    }
    Ok(acc.into_iter().map(|(sum, n)| sum / n as f64).collect())
}

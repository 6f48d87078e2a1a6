//! Map growth and optimization.
//!
//! `densify` adds splats where the observed surface lies in front of the
//! rendered one (or nothing is rendered) after snapping the new points to the
//! existing map with gated ICP. `optimize_map` and `refine_colors` descend on
//! the blended L1 loss over keyframes.

mod sampling;

pub use sampling::{sample_keyframe, SamplingMode, SamplingStrategy};

use nalgebra::{UnitQuaternion, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalkit::psnr;
use crate::frame::Frame;
use crate::gaussian_map::{icp_align, visible_subset, voxel_downsample, GaussianMap, GaussianSplat, IcpParams};
use crate::geometry::{back_project, PointSet, Pose};
use crate::optim::Adam;
use crate::renderer::{loss_and_splat_gradients, render, LossWeights, SplatParamGrad};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DensifyConfig {
    /// Coverage tolerance τ (meters) for the depth comparison.
    pub tau: f64,
    /// Candidate pixels lie on a grid with this spacing.
    pub pixel_stride: usize,
    /// Rendered alpha below which a pixel counts as uncovered.
    pub min_alpha: f64,
    /// Voxel size for downsampling both ICP inputs.
    pub voxel: f64,
    pub icp: IcpParams,
    /// Align covered points to the map and apply accepted corrections to the
    /// pose and the new points. Off leaves the tracked pose untouched.
    pub icp_correction: bool,
    pub init_opacity: f64,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        Self {
            tau: 0.02,
            pixel_stride: 2,
            min_alpha: 0.5,
            voxel: 0.02,
            icp: IcpParams::default(),
            icp_correction: true,
            init_opacity: 0.5,
        }
    }
}

impl DensifyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau >= 0.0 && self.voxel > 0.0 && self.pixel_stride >= 1) {
            return Err(Error::invalid("densify tau >= 0, voxel > 0 and pixel_stride >= 1 required"));
        }
        if !(self.init_opacity > 0.0 && self.init_opacity <= 1.0) || !(0.0..=1.0).contains(&self.min_alpha) {
            return Err(Error::invalid("densify opacities must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DensifyReport {
    pub added: usize,
    /// Whether the ICP transform was applied to the new points and the pose.
    pub corrected: bool,
    pub icp_fitness: Option<f64>,
    pub icp_error: Option<f64>,
    pub icp_initial_error: Option<f64>,
    /// The accepted ICP transform (world frame), if any.
    pub correction: Option<Pose>,
    /// Pixels that received a splat, in insertion order.
    pub added_pixels: Vec<(usize, usize)>,
}

/// Whether the pixel needs a new splat: valid observed depth that is either
/// uncovered or in front of the rendered surface by more than `tau`.
pub fn needs_splat(gt_depth: f64, rendered_depth: f64, rendered_alpha: f64, cfg: &DensifyConfig) -> bool {
    gt_depth > 0.0 && (rendered_alpha < cfg.min_alpha || gt_depth < rendered_depth - cfg.tau)
}

/// Grows the map from `frame` seen at `pose` (world-from-camera, updated in
/// place when the ICP correction is accepted).
pub fn densify(map: &mut GaussianMap, frame: &Frame, pose: &mut Pose, cfg: &DensifyConfig) -> Result<DensifyReport> {
    cfg.validate()?;
    let k = frame.intrinsics;
    let rendered = render(map, pose, &k);
    let mut new_points = Vec::new();
    let mut overlap = Vec::new();
    for y in (0..k.height).step_by(cfg.pixel_stride) {
        for x in (0..k.width).step_by(cfg.pixel_stride) {
            let d = frame.depth.get(x, y);
            if !(d > k.near && d < k.far) {
                continue;
            }
            let i = y * k.width + x;
            let (dr, alpha) = (rendered.depth.data[i], rendered.alpha[i]);
            let world = pose.transform_point(&back_project(x as f64 + 0.5, y as f64 + 0.5, d, &k)?);
            if needs_splat(d, dr, alpha, cfg) {
                new_points.push((world, x, y, d));
            } else if (d - dr).abs() <= cfg.tau {
                overlap.push(world);
            }
        }
    }

    let mut report = DensifyReport::default();
    let visible: PointSet = if cfg.icp_correction {
        visible_subset(map, pose, &k).into_iter().map(|i| map.splats[i].center).collect()
    } else {
        PointSet::default()
    };
    let mut correction = None;
    if !overlap.is_empty() && !visible.is_empty() {
        let src = voxel_downsample(&PointSet::new(overlap)?, cfg.voxel)?;
        let dst = voxel_downsample(&visible, cfg.voxel)?;
        let result = icp_align(&src, &dst, &cfg.icp)?;
        report.icp_fitness = Some(result.fit().fitness);
        report.icp_error = Some(result.fit().error);
        report.icp_initial_error = Some(result.fit().initial_error);
        if let Some(fit) = result.accepted() {
            correction = Some(fit.transform);
        }
    }
    if let Some(t) = correction {
        report.corrected = true;
        report.correction = Some(t);
        *pose = t.compose(pose).orthonormalized();
    }

    for (world, x, y, d) in new_points {
        let center = correction.map_or(world, |t| t.transform_point(&world));
        let c = frame.color.get(x, y);
        map.splats.push(GaussianSplat::isotropic(
            center,
            d / k.fx,
            Vector3::new(c[0], c[1], c[2]),
            cfg.init_opacity,
        )?);
        report.added_pixels.push((x, y));
    }
    report.added = report.added_pixels.len();
    Ok(report)
}

/// A frame retained for map optimization with its estimated pose.
#[derive(Debug, Clone)]
pub struct Keyframe {
    pub frame: Frame,
    pub pose: Pose,
}

/// Which splat parameters an optimization step may change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParamMask {
    pub center: bool,
    pub scale: bool,
    pub rotation: bool,
    pub color: bool,
    pub opacity: bool,
}

impl Default for ParamMask {
    fn default() -> Self {
        Self::all()
    }
}

impl ParamMask {
    pub fn all() -> Self {
        Self {
            center: true,
            scale: true,
            rotation: true,
            color: true,
            opacity: true,
        }
    }

    /// Refinement toggles: appearance always, positions optionally.
    pub fn refinement(positions: bool) -> Self {
        Self {
            center: positions,
            scale: false,
            rotation: false,
            color: true,
            opacity: true,
        }
    }
}

/// Adam step sizes per parameter group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningRates {
    pub center: f64,
    pub scale: f64,
    pub rotation: f64,
    pub color: f64,
    pub opacity: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            center: 5e-4,
            scale: 2e-4,
            rotation: 5e-3,
            color: 1e-2,
            opacity: 1e-2,
        }
    }
}

const PARAMS_PER_SPLAT: usize = 13;
const MIN_SCALE: f64 = 1e-5;
const MIN_OPACITY: f64 = 1e-3;

/// Per-splat Adam state; grows with the map.
#[derive(Debug, Clone, Default)]
pub struct MapOptimizer {
    pub rates: LearningRates,
    states: Vec<Adam>,
}

impl MapOptimizer {
    pub fn new(rates: LearningRates) -> Self {
        Self {
            rates,
            states: Vec::new(),
        }
    }

    fn sync(&mut self, n: usize) {
        let r = &self.rates;
        let lr = [
            r.center, r.center, r.center, r.scale, r.scale, r.scale, r.rotation, r.rotation, r.rotation, r.color,
            r.color, r.color, r.opacity,
        ];
        while self.states.len() < n {
            self.states.push(Adam::new(lr.to_vec()));
        }
        self.states.truncate(n);
    }

    /// One descent step; splats with an all-zero gradient are left alone.
    pub fn step(&mut self, map: &mut GaussianMap, grads: &[SplatParamGrad], mask: &ParamMask) {
        self.sync(map.splats.len());
        for ((splat, g), adam) in map.splats.iter_mut().zip(grads).zip(&mut self.states) {
            let mut flat = [0.0; PARAMS_PER_SPLAT];
            let groups: [(&[f64], bool, usize); 5] = [
                (g.center.as_slice(), mask.center, 0),
                (g.scale.as_slice(), mask.scale, 3),
                (g.rotation.as_slice(), mask.rotation, 6),
                (g.color.as_slice(), mask.color, 9),
                (std::slice::from_ref(&g.opacity), mask.opacity, 12),
            ];
            for (values, on, at) in groups {
                if on {
                    flat[at..at + values.len()].copy_from_slice(values);
                }
            }
            if flat.iter().all(|v| *v == 0.0) {
                continue;
            }
            let d = adam.step(&flat);
            if mask.center {
                splat.center += Vector3::new(d[0], d[1], d[2]);
            }
            if mask.scale {
                splat.scale = (splat.scale + Vector3::new(d[3], d[4], d[5])).map(|s| s.max(MIN_SCALE));
            }
            if mask.rotation {
                let q = splat.rotation * UnitQuaternion::from_scaled_axis(Vector3::new(d[6], d[7], d[8]));
                splat.rotation = UnitQuaternion::new_normalize(q.into_inner());
            }
            if mask.color {
                splat.color = (splat.color + Vector3::new(d[9], d[10], d[11])).map(|c| c.clamp(0.0, 1.0));
            }
            if mask.opacity {
                splat.opacity = (splat.opacity + d[12]).clamp(MIN_OPACITY, 1.0);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimizeReport {
    /// Loss of the sampled keyframe at every iteration, before its step.
    pub losses: Vec<f64>,
    /// Mean of the last (up to) ten entries of `losses`.
    pub final_loss: f64,
}

fn tail_mean(losses: &[f64]) -> f64 {
    let tail = &losses[losses.len().saturating_sub(10)..];
    if tail.is_empty() {
        0.0
    } else {
        tail.iter().sum::<f64>() / tail.len() as f64
    }
}

/// Uniformly samples keyframes and descends on all splat parameters.
pub fn optimize_map<R: Rng + ?Sized>(
    map: &mut GaussianMap,
    opt: &mut MapOptimizer,
    keyframes: &[Keyframe],
    iters: usize,
    w: &LossWeights,
    mask: &ParamMask,
    rng: &mut R,
) -> Result<OptimizeReport> {
    if keyframes.is_empty() {
        return Err(Error::EmptyKeyframeSet);
    }
    let mut losses = Vec::with_capacity(iters);
    for _ in 0..iters {
        let kf = &keyframes[rng.random_range(0..keyframes.len())];
        let (loss, grads) = loss_and_splat_gradients(map, &kf.pose, &kf.frame, &kf.frame.intrinsics, w);
        losses.push(loss.total);
        opt.step(map, &grads, mask);
    }
    Ok(OptimizeReport {
        final_loss: tail_mean(&losses),
        losses,
    })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RefineReport {
    /// Mean PSNR over all keyframes after refinement.
    pub psnr: f64,
    pub losses: Vec<f64>,
    /// How often each keyframe was sampled.
    pub visits: Vec<usize>,
}

pub fn keyframe_loss(map: &GaussianMap, kf: &Keyframe, w: &LossWeights) -> f64 {
    loss_and_splat_gradients(map, &kf.pose, &kf.frame, &kf.frame.intrinsics, w).0.total
}

pub fn mean_psnr(map: &GaussianMap, keyframes: &[Keyframe]) -> Result<f64> {
    let mut total = 0.0;
    for kf in keyframes {
        total += psnr(&render(map, &kf.pose, &kf.frame.intrinsics).color, &kf.frame.color)?;
    }
    Ok(total / keyframes.len().max(1) as f64)
}

/// Priority-sampled refinement of existing splats; never adds or removes any.
///
/// Per-keyframe losses start from a full pass and are refreshed only when a
/// keyframe is sampled.
pub fn refine_colors<R: Rng + ?Sized>(
    map: &mut GaussianMap,
    opt: &mut MapOptimizer,
    keyframes: &[Keyframe],
    iters: usize,
    strategy: &SamplingStrategy,
    w: &LossWeights,
    mask: &ParamMask,
    rng: &mut R,
) -> Result<RefineReport> {
    if keyframes.is_empty() {
        return Err(Error::EmptyKeyframeSet);
    }
    strategy.validate()?;
    let count = map.splats.len();
    let mut cache: Vec<f64> = keyframes.iter().map(|kf| keyframe_loss(map, kf, w)).collect();
    let mut visits = vec![0; keyframes.len()];
    let mut losses = Vec::with_capacity(iters);
    for _ in 0..iters {
        let i = sample_keyframe(&cache, strategy, rng)?;
        let kf = &keyframes[i];
        let (loss, grads) = loss_and_splat_gradients(map, &kf.pose, &kf.frame, &kf.frame.intrinsics, w);
        cache[i] = loss.total;
        visits[i] += 1;
        losses.push(loss.total);
        opt.step(map, &grads, mask);
    }
    assert_eq!(map.splats.len(), count, "refinement must not change the splat count");
    Ok(RefineReport {
        psnr: mean_psnr(map, keyframes)?,
        losses,
        visits,
    })
}

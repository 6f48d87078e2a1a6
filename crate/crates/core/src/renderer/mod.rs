//! CPU splat rasterizer with analytic gradients.
//!
//! Splats are projected with the local affine approximation of the pinhole
//! map (`Σ₂ = J Σ Jᵀ + εI`), sorted front to back by camera depth and
//! alpha-composited per pixel. Pixel `(i, j)` is sampled at `(i + 0.5, j + 0.5)`.
//!
//! The footprint kernel is a Gaussian shifted so that it and its slope vanish
//! at the 3σ ellipse, normalized to 1 at the center. That keeps the image a
//! C¹ function of every parameter, so finite differences agree with the
//! analytic gradients even when a pixel crosses a footprint boundary.
//!
//! Depth is the weighted mean `Σ zᵢwᵢTᵢ / (Σ wᵢTᵢ + η)`; the tiny `η` makes
//! it fall continuously to 0 where nothing is rendered.

mod backward;

pub use backward::{
    loss_and_pose_gradient, loss_and_splat_gradients, pose_gradient, SplatParamGrad,
};

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{ColorImage, DepthImage, Frame};
use crate::gaussian_map::{GaussianMap, GaussianSplat};
use crate::geometry::{CameraIntrinsics, Pose};

/// Squared Mahalanobis radius beyond which a splat contributes nothing (3σ).
pub const CUTOFF_MAHALANOBIS2: f64 = 9.0;
/// Diagonal regularization added to projected covariances (pixels²).
pub const COVARIANCE_EPSILON: f64 = 1e-6;
/// Denominator floor of the depth normalization.
pub const DEPTH_EPSILON: f64 = 1e-6;

const CUTOFF_VALUE: f64 = 0.011_108_996_538_242_306; // exp(-4.5)
const KERNEL_NORM: f64 = 1.0 - 5.5 * CUTOFF_VALUE;

/// Footprint weight for squared Mahalanobis distance `m`.
#[inline]
pub fn kernel(m: f64) -> f64 {
    if m >= CUTOFF_MAHALANOBIS2 {
        return 0.0;
    }
    ((-0.5 * m).exp() - CUTOFF_VALUE * (1.0 + 0.5 * (CUTOFF_MAHALANOBIS2 - m))) / KERNEL_NORM
}

#[inline]
pub(crate) fn kernel_derivative(m: f64) -> f64 {
    if m >= CUTOFF_MAHALANOBIS2 {
        return 0.0;
    }
    0.5 * (CUTOFF_VALUE - (-0.5 * m).exp()) / KERNEL_NORM
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedImage {
    pub color: ColorImage,
    pub depth: DepthImage,
    pub alpha: Vec<f64>,
}

impl RenderedImage {
    pub fn width(&self) -> usize {
        self.color.width
    }

    pub fn height(&self) -> usize {
        self.color.height
    }
}

/// Weight `λ` of the photometric term; the depth term gets `1 − λ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda: 0.9 }
    }
}

impl LossWeights {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::invalid("loss weight lambda must lie in [0, 1]"));
        }
        Ok(Self { lambda })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub color: f64,
    pub depth: f64,
}

/// Jacobian of `p ↦ (fx x/z + cx, fy y/z + cy)` at a camera-frame point.
pub fn perspective_jacobian(p: &Vector3<f64>, k: &CameraIntrinsics) -> Matrix2x3<f64> {
    let iz = 1.0 / p.z;
    let iz2 = iz * iz;
    Matrix2x3::new(
        k.fx * iz,
        0.0,
        -k.fx * p.x * iz2,
        0.0,
        k.fy * iz,
        -k.fy * p.y * iz2,
    )
}

/// Jacobian of the world → pixel map at `center` for a world-from-camera `pose`.
pub fn world_to_pixel_jacobian(
    center: &Vector3<f64>,
    pose: &Pose,
    k: &CameraIntrinsics,
) -> Result<Matrix2x3<f64>> {
    let cam = pose.inverse();
    let p = cam.transform_point(center);
    if !(p.z > 0.0) {
        return Err(Error::BehindCamera(p.z));
    }
    Ok(perspective_jacobian(&p, k) * cam.rotation)
}

/// Image-plane covariance `J Σ Jᵀ + εI` of a splat seen from `pose` (world-from-camera).
pub fn project_covariance(splat: &GaussianSplat, pose: &Pose, k: &CameraIntrinsics) -> Result<Matrix2<f64>> {
    let j = world_to_pixel_jacobian(&splat.center, pose, k)?;
    let cov = j * splat.covariance() * j.transpose();
    let cov = 0.5 * (cov + cov.transpose());
    Ok(cov + Matrix2::identity() * COVARIANCE_EPSILON)
}

/// A splat after projection into a specific view.
#[derive(Debug, Clone)]
pub(crate) struct Projected {
    pub index: usize,
    pub p_cam: Vector3<f64>,
    pub sigma_cam: Matrix3<f64>,
    pub jac: Matrix2x3<f64>,
    pub mean: Vector2<f64>,
    pub conic: Matrix2<f64>,
    pub opacity: f64,
    pub color: [f64; 3],
    /// Inclusive pixel ranges touched by the 3σ ellipse.
    pub x_range: (usize, usize),
    pub y_range: (usize, usize),
}

/// Projected, culled and depth-sorted splats with per-row bins.
pub(crate) struct Raster {
    pub splats: Vec<Projected>,
    /// For each image row, indices into `splats` (front to back).
    pub rows: Vec<Vec<u32>>,
    pub width: usize,
    pub height: usize,
    pub cam_from_world: Pose,
}

fn sort_key_cmp(a: &Projected, b: &Projected, map: &GaussianMap) -> std::cmp::Ordering {
    // Depth first; ties broken by splat content so the order does not depend
    // on the position in the splat list.
    let sa = &map.splats[a.index];
    let sb = &map.splats[b.index];
    let ka = [
        a.p_cam.z, sa.center.x, sa.center.y, sa.center.z, sa.opacity, sa.color.x, sa.color.y, sa.color.z,
        sa.scale.x, sa.scale.y, sa.scale.z, sa.rotation.w, sa.rotation.i, sa.rotation.j, sa.rotation.k,
    ];
    let kb = [
        b.p_cam.z, sb.center.x, sb.center.y, sb.center.z, sb.opacity, sb.color.x, sb.color.y, sb.color.z,
        sb.scale.x, sb.scale.y, sb.scale.z, sb.rotation.w, sb.rotation.i, sb.rotation.j, sb.rotation.k,
    ];
    ka.iter()
        .zip(&kb)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

impl Raster {
    pub(crate) fn build(map: &GaussianMap, pose: &Pose, k: &CameraIntrinsics) -> Raster {
        let cam = pose.inverse();
        let (w, h) = (k.width, k.height);
        let mut splats: Vec<Projected> = map
            .splats
            .par_iter()
            .enumerate()
            .filter_map(|(index, s)| project_splat(index, s, &cam, k))
            .collect();
        splats.sort_by(|a, b| sort_key_cmp(a, b, map));
        let mut rows = vec![Vec::new(); h];
        for (i, s) in splats.iter().enumerate() {
            for row in &mut rows[s.y_range.0..=s.y_range.1] {
                row.push(i as u32);
            }
        }
        Raster {
            splats,
            rows,
            width: w,
            height: h,
            cam_from_world: cam,
        }
    }
}

fn project_splat(index: usize, s: &GaussianSplat, cam: &Pose, k: &CameraIntrinsics) -> Option<Projected> {
    let p = cam.transform_point(&s.center);
    if !(p.z > k.near && p.z < k.far) {
        return None;
    }
    let sigma_cam = cam.rotation * s.covariance() * cam.rotation.transpose();
    let jac = perspective_jacobian(&p, k);
    let cov = jac * sigma_cam * jac.transpose();
    let cov = 0.5 * (cov + cov.transpose()) + Matrix2::identity() * COVARIANCE_EPSILON;
    let conic = cov.try_inverse()?;
    let mean = Vector2::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy);
    // Largest eigenvalue of the 2×2 covariance bounds the 3σ ellipse.
    let tr = cov.trace();
    let det = cov.determinant();
    let lambda_max = 0.5 * tr + (0.25 * tr * tr - det).max(0.0).sqrt();
    let radius = CUTOFF_MAHALANOBIS2.sqrt() * lambda_max.sqrt();
    if !radius.is_finite() {
        return None;
    }
    // Pixel centers at i + 0.5 within [mean - r, mean + r].
    let x_lo = (mean.x - radius - 0.5).ceil().max(0.0);
    let x_hi = (mean.x + radius - 0.5).floor().min(k.width as f64 - 1.0);
    let y_lo = (mean.y - radius - 0.5).ceil().max(0.0);
    let y_hi = (mean.y + radius - 0.5).floor().min(k.height as f64 - 1.0);
    if x_lo > x_hi || y_lo > y_hi {
        return None;
    }
    Some(Projected {
        index,
        p_cam: p,
        sigma_cam,
        jac,
        mean,
        conic,
        opacity: s.opacity,
        color: [s.color.x, s.color.y, s.color.z],
        x_range: (x_lo as usize, x_hi as usize),
        y_range: (y_lo as usize, y_hi as usize),
    })
}

/// Offset from the splat center to the pixel center and the squared Mahalanobis distance.
#[inline]
pub(crate) fn footprint(s: &Projected, x: usize, y: usize) -> Option<(f64, f64, f64)> {
    if x < s.x_range.0 || x > s.x_range.1 {
        return None;
    }
    let dx = x as f64 + 0.5 - s.mean.x;
    let dy = y as f64 + 0.5 - s.mean.y;
    let c = &s.conic;
    let m = c[(0, 0)] * dx * dx + 2.0 * c[(0, 1)] * dx * dy + c[(1, 1)] * dy * dy;
    (m < CUTOFF_MAHALANOBIS2).then_some((dx, dy, m))
}

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct PixelSample {
    pub color: [f64; 3],
    pub alpha: f64,
    /// Un-normalized depth sum `Σ zᵢwᵢTᵢ`.
    pub depth_sum: f64,
}

impl PixelSample {
    #[inline]
    pub fn depth(&self) -> f64 {
        self.depth_sum / (self.alpha + DEPTH_EPSILON)
    }
}

#[inline]
pub(crate) fn shade_pixel(raster: &Raster, x: usize, y: usize) -> PixelSample {
    let mut out = PixelSample::default();
    let mut transmittance = 1.0;
    for &i in &raster.rows[y] {
        let s = &raster.splats[i as usize];
        let Some((_, _, m)) = footprint(s, x, y) else {
            continue;
        };
        let w = s.opacity * kernel(m);
        if w <= 0.0 {
            continue;
        }
        let wt = w * transmittance;
        for c in 0..3 {
            out.color[c] += s.color[c] * wt;
        }
        out.alpha += wt;
        out.depth_sum += s.p_cam.z * wt;
        transmittance *= 1.0 - w;
    }
    out
}

pub fn render(map: &GaussianMap, pose: &Pose, k: &CameraIntrinsics) -> RenderedImage {
    let raster = Raster::build(map, pose, k);
    render_raster(&raster)
}

pub(crate) fn render_raster(raster: &Raster) -> RenderedImage {
    let (w, h) = (raster.width, raster.height);
    let rows: Vec<Vec<PixelSample>> = (0..h)
        .into_par_iter()
        .map(|y| (0..w).map(|x| shade_pixel(raster, x, y)).collect())
        .collect();
    let mut color = ColorImage::new(w, h);
    let mut depth = DepthImage::new(w, h);
    let mut alpha = vec![0.0; w * h];
    for (y, row) in rows.into_iter().enumerate() {
        for (x, px) in row.into_iter().enumerate() {
            let i = y * w + x;
            color.data[i] = px.color.map(|c| c.clamp(0.0, 1.0));
            depth.data[i] = px.depth();
            alpha[i] = px.alpha.clamp(0.0, 1.0);
        }
    }
    RenderedImage { color, depth, alpha }
}

/// Photometric L1, depth L1 over valid ground-truth pixels, and their blend.
pub fn compute_loss(rendered: &RenderedImage, gt: &Frame, w: &LossWeights) -> Result<LossBreakdown> {
    let expected = (rendered.width(), rendered.height());
    for got in [gt.color.dims(), gt.depth.dims(), rendered.depth.dims()] {
        if got != expected {
            return Err(Error::ShapeError { expected, got });
        }
    }
    let n = rendered.color.data.len();
    let color_sum: f64 = rendered
        .color
        .data
        .iter()
        .zip(&gt.color.data)
        .map(|(a, b)| (0..3).map(|c| (a[c] - b[c]).abs()).sum::<f64>())
        .sum();
    let (depth_sum, valid) = rendered
        .depth
        .data
        .iter()
        .zip(&gt.depth.data)
        .filter(|(_, g)| **g > 0.0)
        .fold((0.0, 0usize), |(s, n), (r, g)| (s + (r - g).abs(), n + 1));
    Ok(blend(color_sum / (3 * n) as f64, depth_sum, valid, w))
}

pub(crate) fn blend(color: f64, depth_sum: f64, valid: usize, w: &LossWeights) -> LossBreakdown {
    let depth = if valid == 0 { 0.0 } else { depth_sum / valid as f64 };
    LossBreakdown {
        total: w.lambda * color + (1.0 - w.lambda) * depth,
        color,
        depth,
    }
}

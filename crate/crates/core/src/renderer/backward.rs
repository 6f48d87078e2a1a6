//! Reverse-mode gradients of the blended L1 loss through compositing.
//!
//! Per pixel the contributors are replayed front to back, then swept back to
//! front with the composite of everything behind each splat. Upstream terms
//! land in per-splat image-space accumulators (mean, conic, depth, opacity,
//! color) which are then pushed through the projection for either the camera
//! pose or the splat parameters.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector3, Vector6};
use rayon::prelude::*;

use super::{blend, footprint, kernel, kernel_derivative, LossBreakdown, LossWeights, Projected, Raster};
use crate::frame::Frame;
use crate::gaussian_map::GaussianMap;
use crate::geometry::{skew, CameraIntrinsics, Pose};

use super::DEPTH_EPSILON;

/// Rows per reduction chunk. Fixed so results do not depend on the thread count.
const ROWS_PER_CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct ImageGrad {
    pub mean: [f64; 2],
    /// d/d(conic₀₀), d/d(conic₀₁) (the off-diagonal counted once), d/d(conic₁₁).
    pub conic: [f64; 3],
    pub depth: f64,
    pub opacity: f64,
    pub color: [f64; 3],
}

impl ImageGrad {
    fn add(&mut self, o: &ImageGrad) {
        for i in 0..2 {
            self.mean[i] += o.mean[i];
        }
        for i in 0..3 {
            self.conic[i] += o.conic[i];
            self.color[i] += o.color[i];
        }
        self.depth += o.depth;
        self.opacity += o.opacity;
    }
}

/// Gradient with respect to one splat's parameters. `rotation` is taken with
/// respect to a local rotation vector `φ` applied as `R(q) Exp(φ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplatParamGrad {
    pub center: Vector3<f64>,
    pub scale: Vector3<f64>,
    pub rotation: Vector3<f64>,
    pub color: Vector3<f64>,
    pub opacity: f64,
}

impl Default for SplatParamGrad {
    fn default() -> Self {
        Self {
            center: Vector3::zeros(),
            scale: Vector3::zeros(),
            rotation: Vector3::zeros(),
            color: Vector3::zeros(),
            opacity: 0.0,
        }
    }
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

struct Contributor {
    splat: u32,
    w: f64,
    t: f64,
    dx: f64,
    dy: f64,
    m: f64,
}

struct ChunkResult {
    color_abs: f64,
    depth_abs: f64,
    grads: Vec<(u32, ImageGrad)>,
}

/// Loss and image-space gradients for every projected splat.
pub(crate) fn backward_image(raster: &Raster, gt: &Frame, w: &LossWeights) -> (LossBreakdown, Vec<ImageGrad>) {
    let (width, height) = (raster.width, raster.height);
    let n_pix = width * height;
    let valid = gt.depth.data.iter().filter(|d| **d > 0.0).count();
    let g_color = w.lambda / (3 * n_pix) as f64;
    let g_depth = if valid > 0 {
        (1.0 - w.lambda) / valid as f64
    } else {
        0.0
    };
    let n_chunks = height.div_ceil(ROWS_PER_CHUNK);
    let chunks: Vec<ChunkResult> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let y0 = c * ROWS_PER_CHUNK;
            let y1 = (y0 + ROWS_PER_CHUNK).min(height);
            let mut slot = vec![u32::MAX; raster.splats.len()];
            let mut grads: Vec<(u32, ImageGrad)> = Vec::new();
            let mut contributors: Vec<Contributor> = Vec::new();
            let mut color_abs = 0.0;
            let mut depth_abs = 0.0;
            for y in y0..y1 {
                for x in 0..width {
                    contributors.clear();
                    let mut t = 1.0;
                    let mut col = [0.0; 3];
                    let mut alpha = 0.0;
                    let mut zsum = 0.0;
                    for &i in &raster.rows[y] {
                        let s = &raster.splats[i as usize];
                        let Some((dx, dy, m)) = footprint(s, x, y) else {
                            continue;
                        };
                        let wi = s.opacity * kernel(m);
                        if wi <= 0.0 {
                            continue;
                        }
                        let wt = wi * t;
                        for ch in 0..3 {
                            col[ch] += s.color[ch] * wt;
                        }
                        alpha += wt;
                        zsum += s.p_cam.z * wt;
                        contributors.push(Contributor {
                            splat: i,
                            w: wi,
                            t,
                            dx,
                            dy,
                            m,
                        });
                        t *= 1.0 - wi;
                    }
                    let gt_c = gt.color.get(x, y);
                    let mut up_c = [0.0; 3];
                    for ch in 0..3 {
                        let r = col[ch] - gt_c[ch];
                        color_abs += r.abs();
                        up_c[ch] = g_color * sign(r);
                    }
                    let gt_d = gt.depth.get(x, y);
                    let denom = alpha + DEPTH_EPSILON;
                    let (up_z, up_a) = if gt_d > 0.0 {
                        let d = zsum / denom;
                        depth_abs += (d - gt_d).abs();
                        let g = g_depth * sign(d - gt_d);
                        (g / denom, -g * zsum / (denom * denom))
                    } else {
                        (0.0, 0.0)
                    };
                    if contributors.is_empty()
                        || (up_c.iter().all(|g| *g == 0.0) && up_z == 0.0 && up_a == 0.0)
                    {
                        continue;
                    }
                    // Back-to-front sweep with the composite of everything behind.
                    let mut c_after = [0.0; 3];
                    let mut a_after = 0.0;
                    let mut z_after = 0.0;
                    for ct in contributors.iter().rev() {
                        let s = &raster.splats[ct.splat as usize];
                        let z = s.p_cam.z;
                        let mut dl_dw = up_a * ct.t * (1.0 - a_after) + up_z * ct.t * (z - z_after);
                        for ch in 0..3 {
                            dl_dw += up_c[ch] * ct.t * (s.color[ch] - c_after[ch]);
                        }
                        let wt = ct.w * ct.t;
                        let kern = kernel(ct.m);
                        let dl_dm = dl_dw * s.opacity * kernel_derivative(ct.m);
                        let q = &s.conic;
                        let qd0 = q[(0, 0)] * ct.dx + q[(0, 1)] * ct.dy;
                        let qd1 = q[(0, 1)] * ct.dx + q[(1, 1)] * ct.dy;

                        let idx = ct.splat as usize;
                        if slot[idx] == u32::MAX {
                            slot[idx] = grads.len() as u32;
                            grads.push((ct.splat, ImageGrad::default()));
                        }
                        let g = &mut grads[slot[idx] as usize].1;
                        g.opacity += dl_dw * kern;
                        g.mean[0] += dl_dm * -2.0 * qd0;
                        g.mean[1] += dl_dm * -2.0 * qd1;
                        g.conic[0] += dl_dm * ct.dx * ct.dx;
                        g.conic[1] += dl_dm * 2.0 * ct.dx * ct.dy;
                        g.conic[2] += dl_dm * ct.dy * ct.dy;
                        g.depth += up_z * wt;
                        for ch in 0..3 {
                            g.color[ch] += up_c[ch] * wt;
                        }

                        for ch in 0..3 {
                            c_after[ch] = s.color[ch] * ct.w + (1.0 - ct.w) * c_after[ch];
                        }
                        a_after = ct.w + (1.0 - ct.w) * a_after;
                        z_after = z * ct.w + (1.0 - ct.w) * z_after;
                    }
                }
            }
            ChunkResult {
                color_abs,
                depth_abs,
                grads,
            }
        })
        .collect();

    let mut total = vec![ImageGrad::default(); raster.splats.len()];
    let mut color_abs = 0.0;
    let mut depth_abs = 0.0;
    for chunk in &chunks {
        color_abs += chunk.color_abs;
        depth_abs += chunk.depth_abs;
        for (i, g) in &chunk.grads {
            total[*i as usize].add(g);
        }
    }
    let loss = blend(color_abs / (3 * n_pix) as f64, depth_abs, valid, w);
    (loss, total)
}

/// Directional derivative of the loss for a splat whose camera-frame center
/// moves by `dp` and camera-frame covariance by `d_sigma`.
fn directional(s: &Projected, g: &ImageGrad, k: &CameraIntrinsics, dp: &Vector3<f64>, d_sigma: Option<&Matrix3<f64>>) -> f64 {
    let p = &s.p_cam;
    let iz = 1.0 / p.z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let dmu = [
        k.fx * (dp.x * iz - p.x * dp.z * iz2),
        k.fy * (dp.y * iz - p.y * dp.z * iz2),
    ];
    let d_jac = Matrix2x3::new(
        -k.fx * dp.z * iz2,
        0.0,
        -k.fx * (dp.x * iz2 - 2.0 * p.x * dp.z * iz3),
        0.0,
        -k.fy * dp.z * iz2,
        -k.fy * (dp.y * iz2 - 2.0 * p.y * dp.z * iz3),
    );
    let js = s.jac * s.sigma_cam;
    let mut d_cov: Matrix2<f64> = d_jac * s.sigma_cam * s.jac.transpose() + js * d_jac.transpose();
    if let Some(ds) = d_sigma {
        d_cov += s.jac * ds * s.jac.transpose();
    }
    let d_conic = -(s.conic * d_cov * s.conic);
    g.mean[0] * dmu[0]
        + g.mean[1] * dmu[1]
        + g.conic[0] * d_conic[(0, 0)]
        + g.conic[1] * 0.5 * (d_conic[(0, 1)] + d_conic[(1, 0)])
        + g.conic[2] * d_conic[(1, 1)]
        + g.depth * dp.z
}

/// Loss and its gradient with respect to a left perturbation `Exp(ξ) ∘ pose`
/// of the world-from-camera pose, `ξ = (ω, v)`.
pub fn loss_and_pose_gradient(
    map: &GaussianMap,
    pose: &Pose,
    gt: &Frame,
    k: &CameraIntrinsics,
    w: &LossWeights,
) -> (LossBreakdown, Vector6<f64>) {
    let raster = Raster::build(map, pose, k);
    let (loss, grads) = backward_image(&raster, gt, w);
    let r_cw = raster.cam_from_world.rotation;
    let mut out = Vector6::zeros();
    for (s, g) in raster.splats.iter().zip(&grads) {
        let splat = &map.splats[s.index];
        let sigma_w = splat.covariance();
        let x = splat.center;
        for axis in 0..3 {
            let e = Vector3::ith(axis, 1.0);
            let gk = skew(&e);
            let dp = r_cw * x.cross(&e);
            let ds = r_cw * (sigma_w * gk - gk * sigma_w) * r_cw.transpose();
            out[axis] += directional(s, g, k, &dp, Some(&ds));
            let dp_t = -(r_cw * e);
            out[axis + 3] += directional(s, g, k, &dp_t, None);
        }
    }
    (loss, out)
}

pub fn pose_gradient(map: &GaussianMap, pose: &Pose, gt: &Frame, k: &CameraIntrinsics, w: &LossWeights) -> Vector6<f64> {
    loss_and_pose_gradient(map, pose, gt, k, w).1
}

/// Loss and per-splat parameter gradients (indexed like `map.splats`; zero
/// for splats that do not touch the image).
pub fn loss_and_splat_gradients(
    map: &GaussianMap,
    pose: &Pose,
    gt: &Frame,
    k: &CameraIntrinsics,
    w: &LossWeights,
) -> (LossBreakdown, Vec<SplatParamGrad>) {
    let raster = Raster::build(map, pose, k);
    let (loss, grads) = backward_image(&raster, gt, w);
    let r_cw = raster.cam_from_world.rotation;
    let mut out = vec![SplatParamGrad::default(); map.splats.len()];
    let per_splat: Vec<(usize, SplatParamGrad)> = raster
        .splats
        .par_iter()
        .zip(grads.par_iter())
        .map(|(s, g)| {
            let splat = &map.splats[s.index];
            let r_q = splat.rotation_matrix();
            let s2 = Matrix3::from_diagonal(&splat.scale.component_mul(&splat.scale));
            let to_cam = r_cw * r_q;
            let mut pg = SplatParamGrad {
                color: Vector3::from(g.color),
                opacity: g.opacity,
                ..SplatParamGrad::default()
            };
            for axis in 0..3 {
                let e = Vector3::ith(axis, 1.0);
                pg.center[axis] = directional(s, g, k, &(r_cw * e), None);

                let mut d_s2 = Matrix3::zeros();
                d_s2[(axis, axis)] = 2.0 * splat.scale[axis];
                let ds = to_cam * d_s2 * to_cam.transpose();
                pg.scale[axis] = directional(s, g, k, &Vector3::zeros(), Some(&ds));

                let gk = skew(&e);
                let ds = to_cam * (gk * s2 - s2 * gk) * to_cam.transpose();
                pg.rotation[axis] = directional(s, g, k, &Vector3::zeros(), Some(&ds));
            }
            (s.index, pg)
        })
        .collect();
    for (i, pg) in per_splat {
        out[i] = pg;
    }
    (loss, out)
}

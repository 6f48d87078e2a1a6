//! Trajectory and image quality metrics.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::frame::ColorImage;
use crate::geometry::{rigid_fit, Pose};

/// Maximum timestamp gap (seconds) for associating two trajectories.
pub const ASSOCIATION_WINDOW: f64 = 0.02;
/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 100.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// Timestamped world-from-camera poses with strictly increasing timestamps.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    entries: Vec<(f64, Pose)>,
}

impl Trajectory {
    pub fn new(entries: Vec<(f64, Pose)>) -> Result<Self> {
        for w in entries.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::invalid(format!(
                    "trajectory timestamps must increase strictly ({} then {})",
                    w[0].0, w[1].0
                )));
            }
        }
        if entries.iter().any(|(t, _)| !t.is_finite()) {
            return Err(Error::invalid("trajectory timestamps must be finite"));
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[(f64, Pose)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Pose whose timestamp is nearest to `t`, if within `window` seconds.
    pub fn nearest(&self, t: f64, window: f64) -> Option<&(f64, Pose)> {
        let i = self.entries.partition_point(|(s, _)| *s < t);
        [i.checked_sub(1), Some(i)]
            .into_iter()
            .flatten()
            .filter_map(|j| self.entries.get(j))
            .filter(|(s, _)| (s - t).abs() <= window)
            .min_by(|a, b| (a.0 - t).abs().total_cmp(&(b.0 - t).abs()))
    }

    /// Keeps the entries whose timestamps are within `window` of one in `times`.
    pub fn restricted_to(&self, times: &[f64], window: f64) -> Trajectory {
        Trajectory {
            entries: self
                .entries
                .iter()
                .filter(|(t, _)| times.iter().any(|s| (s - t).abs() <= window))
                .copied()
                .collect(),
        }
    }
}

/// Associated position pairs `(estimate, ground truth)`.
pub fn associate(est: &Trajectory, gt: &Trajectory) -> Vec<(Vector3<f64>, Vector3<f64>)> {
    est.entries
        .iter()
        .filter_map(|(t, p)| gt.nearest(*t, ASSOCIATION_WINDOW).map(|(_, g)| (p.translation, g.translation)))
        .collect()
}

/// RMSE (centimeters) of estimated positions after the rigid alignment onto ground truth.
pub fn ate_rmse(est: &Trajectory, gt: &Trajectory) -> Result<f64> {
    let pairs = associate(est, gt);
    if pairs.len() < 2 {
        return Err(Error::InsufficientOverlap(pairs.len()));
    }
    let (src, dst): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    let align = rigid_fit(&src, &dst).pose;
    let sq: f64 = src
        .iter()
        .zip(&dst)
        .map(|(s, d)| (align.transform_point(s) - d).norm_squared())
        .sum();
    Ok((sq / src.len() as f64).sqrt() * 100.0)
}

fn check_shape(a: &ColorImage, b: &ColorImage) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::ShapeError {
            expected: a.dims(),
            got: b.dims(),
        });
    }
    Ok(())
}

pub fn psnr(a: &ColorImage, b: &ColorImage) -> Result<f64> {
    check_shape(a, b)?;
    let n = a.data.len() * 3;
    if n == 0 {
        return Err(Error::invalid("empty image"));
    }
    let se: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (0..3).map(|c| (x[c] - y[c]).powi(2)).sum::<f64>())
        .sum();
    let mse = se / n as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Mean SSIM on Rec.601 luma over all fully contained 11×11 windows.
pub fn ssim(a: &ColorImage, b: &ColorImage) -> Result<f64> {
    check_shape(a, b)?;
    let (w, h) = a.dims();
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::WindowError {
            width: w,
            height: h,
            window: SSIM_WINDOW,
        });
    }
    let ga = a.to_gray();
    let gb = b.to_gray();
    let g = gaussian_window();
    let (ow, oh) = (w - SSIM_WINDOW + 1, h - SSIM_WINDOW + 1);
    // Separable filtering of x, y, x², y², xy: horizontal pass then vertical.
    let products: [Vec<f64>; 5] = [
        ga.clone(),
        gb.clone(),
        ga.iter().map(|v| v * v).collect(),
        gb.iter().map(|v| v * v).collect(),
        ga.iter().zip(&gb).map(|(x, y)| x * y).collect(),
    ];
    let filtered: Vec<Vec<f64>> = products
        .iter()
        .map(|img| {
            let mut horiz = vec![0.0; ow * h];
            for y in 0..h {
                for x in 0..ow {
                    horiz[y * ow + x] = (0..SSIM_WINDOW).map(|i| g[i] * img[y * w + x + i]).sum();
                }
            }
            let mut out = vec![0.0; ow * oh];
            for y in 0..oh {
                for x in 0..ow {
                    out[y * ow + x] = (0..SSIM_WINDOW).map(|i| g[i] * horiz[(y + i) * ow + x]).sum();
                }
            }
            out
        })
        .collect();
    let mut total = 0.0;
    for i in 0..ow * oh {
        let (mx, my) = (filtered[0][i], filtered[1][i]);
        let vx = filtered[2][i] - mx * mx;
        let vy = filtered[3][i] - my * my;
        let cxy = filtered[4][i] - mx * my;
        total += ((2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2))
            / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
    }
    Ok(total / (ow * oh) as f64)
}

/// Keeps items `0, stride, 2·stride, …`.
pub fn stride_subsample<T: Clone>(seq: &[T], stride: usize) -> Result<Vec<T>> {
    if stride == 0 {
        return Err(Error::invalid("stride must be >= 1"));
    }
    Ok(seq.iter().step_by(stride).cloned().collect())
}

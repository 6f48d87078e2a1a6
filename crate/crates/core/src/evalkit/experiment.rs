//! The full track → densify → optimize loop over a dataset, followed by
//! refinement and evaluation.

use std::path::Path;
use std::time::Instant;

use log::{debug, info};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{ate_rmse, psnr, ssim, stride_subsample, Trajectory};
use crate::error::{Error, Result};
use crate::gaussian_map::{should_add_keyframe, write_ply, GaussianMap};
use crate::geometry::Pose;
use crate::mapper::{densify, optimize_map, refine_colors, Keyframe, MapOptimizer, ParamMask};
use crate::pipeline_io::trajectory::trajectory_to_string;
use crate::pipeline_io::{Dataset, RunConfig, TrackingMethod};
use crate::renderer::render;
use crate::tracker::{constant_velocity_predict, refine_pose, track_frame};

/// Accuracy metrics of one run. Timing is kept out of the serialized form so
/// that reruns produce identical reports; see [`Timing`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// ATE RMSE over all processed frames, centimeters.
    pub ate_rmse: f64,
    /// ATE RMSE over keyframes only, centimeters (`None` with fewer than two keyframes).
    pub ate_rmse_keyframes: Option<f64>,
    /// Mean over keyframes of the render at the estimated pose.
    pub psnr: f64,
    pub ssim: f64,
    #[serde(skip)]
    pub track_ms_per_frame: f64,
    pub n_frames: usize,
    pub n_keyframes: usize,
    pub n_splats: usize,
    /// Frames where feature tracking failed and the motion model took over.
    pub tracking_fallbacks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub track_ms_per_frame: f64,
    pub densify_ms_per_frame: f64,
    pub map_ms_per_frame: f64,
    pub refine_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub report: MetricReport,
    pub timing: Timing,
    pub trajectory: Trajectory,
    pub keyframe_trajectory: Trajectory,
    pub map: GaussianMap,
}

impl ExperimentOutput {
    /// Writes `trajectory.txt`, `keyframes.txt`, `metrics.json`,
    /// `timing.json` and `map.ply` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, text: String| {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
        };
        write("trajectory.txt", trajectory_to_string(&self.trajectory))?;
        write("keyframes.txt", trajectory_to_string(&self.keyframe_trajectory))?;
        write("metrics.json", serde_json::to_string_pretty(&self.report)? + "\n")?;
        write("timing.json", serde_json::to_string_pretty(&self.timing)? + "\n")?;
        write_ply(&self.map, dir.join("map.ply"))
    }
}

fn is_tracking_failure(e: &Error) -> bool {
    matches!(
        e,
        Error::InsufficientCorrespondences { .. } | Error::DegenerateGeometry(_) | Error::EmptyMatchSet
    )
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

pub fn run_experiment(dataset: &Dataset, cfg: &RunConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let start = Instant::now();
    let frames = stride_subsample(&dataset.frames, cfg.stride)?;
    if frames.is_empty() {
        return Err(Error::Dataset("no frames to process".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut map = GaussianMap::new();
    let mut opt = MapOptimizer::new(cfg.learning_rates);
    let mut keyframes: Vec<Keyframe> = Vec::new();
    let mut poses: Vec<Pose> = Vec::with_capacity(frames.len());
    let (mut track_ms, mut densify_ms, mut map_ms) = (0.0, 0.0, 0.0);
    let mut fallbacks = 0;

    for (n, frame) in frames.iter().enumerate() {
        let t = Instant::now();
        let mut pose = if n == 0 {
            Pose::identity()
        } else {
            let prev = &poses[n - 1];
            let motion_model = |map: &GaussianMap| {
                let guess = if n >= 2 {
                    constant_velocity_predict(&poses[n - 2], prev)
                } else {
                    *prev
                };
                if cfg.tracker.refine_iters > 0 && !map.is_empty() {
                    let t = &cfg.tracker;
                    refine_pose(&guess, frame, map, &frame.intrinsics, t.refine_iters, &t.loss, t.step_scale).0
                } else {
                    guess
                }
            };
            match cfg.method {
                TrackingMethod::ConstantVelocity => motion_model(&map),
                TrackingMethod::Feature => {
                    match track_frame((&frames[n - 1], prev), frame, dataset.provider.as_ref(), &map, &cfg.tracker) {
                        Ok(r) => r.pose,
                        Err(e) if is_tracking_failure(&e) => {
                            debug!("frame {}: {e}; using the motion model", frame.id);
                            fallbacks += 1;
                            motion_model(&map)
                        }
                        Err(e) => return Err(e),
                    }
                }
            }
        };
        track_ms += ms(t);

        let t = Instant::now();
        let report = densify(&mut map, frame, &mut pose, &cfg.densify)?;
        densify_ms += ms(t);
        debug!(
            "frame {}: +{} splats, icp corrected {}",
            frame.id, report.added, report.corrected
        );

        let t = Instant::now();
        if should_add_keyframe(&cfg.keyframes, &map, &pose, n, &frame.intrinsics) {
            map.add_keyframe(frame.id, pose)?;
            keyframes.push(Keyframe {
                frame: frame.clone(),
                pose,
            });
        }
        if cfg.map_iters > 0 {
            optimize_map(&mut map, &mut opt, &keyframes, cfg.map_iters, &cfg.loss, &ParamMask::all(), &mut rng)?;
        }
        map_ms += ms(t);
        poses.push(pose);
    }

    let t = Instant::now();
    if cfg.refine_iters > 0 {
        let mask = ParamMask::refinement(cfg.refine_positions);
        refine_colors(&mut map, &mut opt, &keyframes, cfg.refine_iters, &cfg.sampling, &cfg.loss, &mask, &mut rng)?;
    }
    let refine_ms = ms(t);

    let trajectory = Trajectory::new(frames.iter().map(|f| f.timestamp).zip(poses.iter().copied()).collect())?;
    let keyframe_trajectory = Trajectory::new(keyframes.iter().map(|k| (k.frame.timestamp, k.pose)).collect())?;
    let (ate, ate_kf) = match &dataset.ground_truth {
        Some(gt) => (
            ate_rmse(&trajectory, gt)?,
            if keyframe_trajectory.len() >= 2 {
                Some(ate_rmse(&keyframe_trajectory, gt)?)
            } else {
                None
            },
        ),
        None => (f64::NAN, None),
    };
    let (mut p, mut s) = (0.0, 0.0);
    for kf in &keyframes {
        let img = render(&map, &kf.pose, &kf.frame.intrinsics).color;
        p += psnr(&img, &kf.frame.color)?;
        s += ssim(&img, &kf.frame.color)?;
    }
    let nk = keyframes.len().max(1) as f64;
    let per_frame = |total: f64| total / frames.len() as f64;
    let report = MetricReport {
        ate_rmse: ate,
        ate_rmse_keyframes: ate_kf,
        psnr: p / nk,
        ssim: s / nk,
        track_ms_per_frame: per_frame(track_ms),
        n_frames: frames.len(),
        n_keyframes: keyframes.len(),
        n_splats: map.len(),
        tracking_fallbacks: fallbacks,
    };
    let timing = Timing {
        track_ms_per_frame: per_frame(track_ms),
        densify_ms_per_frame: per_frame(densify_ms),
        map_ms_per_frame: per_frame(map_ms),
        refine_ms,
        total_ms: ms(start),
    };
    info!(
        "{} frames, {} keyframes, {} splats: ATE {:.4} cm, PSNR {:.2} dB, SSIM {:.4}",
        report.n_frames, report.n_keyframes, report.n_splats, report.ate_rmse, report.psnr, report.ssim
    );
    Ok(ExperimentOutput {
        report,
        timing,
        trajectory,
        keyframe_trajectory,
        map,
    })
}

//! Acceptance criteria AC1–AC11. Each test writes one `ACn PASS|FAIL` line to
//! stderr (bypassing the test harness capture) before asserting.

use std::io::Write as _;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{Matrix3, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use deskslam::evalkit::{run_experiment, ExperimentOutput};
use deskslam::frontend::{truncate_by_depth, DepthMatch, SyntheticMatcher};
use deskslam::gaussian_map::{icp_align, IcpParams};
use deskslam::mapper::{
    densify, mean_psnr, optimize_map, refine_colors, sample_keyframe, DensifyConfig, Keyframe, LearningRates,
    MapOptimizer, ParamMask, SamplingMode,
};
use deskslam::pipeline_io::{generate_synthetic, Dataset, DatasetConfig, RunConfig, SyntheticScene, TrackingMethod};
use deskslam::renderer::{compute_loss, pose_gradient, render};
use deskslam::tracker::{track_frame, TrackerConfig};
use deskslam::{
    estimate_rigid_transform, CameraIntrinsics, ColorImage, DepthImage, Frame, GaussianMap, GaussianSplat, LossWeights,
    PixelMatch, PointSet, Pose, SamplingStrategy,
};

const AC1_TRIALS: usize = 1000;
const AC1_ROT_TOL: f64 = 1e-9;
const AC1_TRANS_TOL: f64 = 1e-9;
const AC1_BUDGET_S: f64 = 1.0;
const AC2_PAIRS: u64 = 20;
const AC2_REL_TOL: f64 = 1e-3;
const AC2_FD_STEP: f64 = 1e-6;
const AC2_BUDGET_S: f64 = 30.0;
const AC3_TRIALS: usize = 1000;
const AC4_DRAWS: usize = 100_000;
const AC4_SIGMAS: f64 = 3.0;
const AC4_MIN_P: f64 = 0.01;
const AC5_FRAMES: usize = 50;
const AC5_ATE_CM: f64 = 1e-4;
const AC5_BUDGET_S: f64 = 120.0;
const AC6_FRAMES: usize = 400;
const AC6_STRIDES: [usize; 3] = [10, 20, 40];
const AC6_SEEDS: u64 = 5;
const AC6_FEATURE_MAX_CM: f64 = 1.0;
const AC6_CV_MIN_CM: f64 = 10.0;
const AC6_CV_REFINE: usize = 50;
const AC7_NOISE_PX: f64 = 0.5;
const AC7_SEEDS: u64 = 20;
const AC8_SEEDS: u64 = 10;
const AC8_ITERS: usize = 500;
const AC10_RIGID_MS: f64 = 10.0;
const AC10_TRACK_MS: f64 = 80.0;

fn report(id: &str, pass: bool, what: &str, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "\n{id} {verdict} {what}: {detail}");
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
    let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let axis = if axis.norm() < 1e-3 { Vector3::z() } else { axis.normalize() };
    *nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), rng.random_range(-3.1..3.1)).matrix()
}

#[test]
fn ac01_rigid_registration_exactness() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let start = Instant::now();
    let (mut worst_r, mut worst_t) = (0.0f64, 0.0f64);
    let mut reflection_ok = true;
    for trial in 0..AC1_TRIALS {
        let n = rng.random_range(4..60);
        let src: Vec<Vector3<f64>> = (0..n)
            .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let r = random_rotation(&mut rng);
        let t = Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        let dst: Vec<Vector3<f64>> = src.iter().map(|p| r * p + t).collect();
        let est = estimate_rigid_transform(&PointSet::new(src.clone()).unwrap(), &PointSet::new(dst).unwrap()).unwrap();
        worst_r = worst_r.max((est.rotation - r).norm());
        worst_t = worst_t.max((est.translation - t).norm());

        if trial % 10 == 0 {
            // Mirror image of the source: the best proper rotation still has det +1.
            let mirrored: Vec<Vector3<f64>> = src.iter().map(|p| Vector3::new(-p.x, p.y, p.z)).collect();
            if let Ok(p) = estimate_rigid_transform(&PointSet::new(src).unwrap(), &PointSet::new(mirrored).unwrap()) {
                reflection_ok &= (p.rotation.determinant() - 1.0).abs() < 1e-9;
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = worst_r < AC1_ROT_TOL && worst_t < AC1_TRANS_TOL && reflection_ok && elapsed < AC1_BUDGET_S;
    report(
        "AC1",
        pass,
        "rigid registration",
        &format!("max |ΔR|_F {worst_r:.2e}, max |Δt| {worst_t:.2e} m, det(R)=+1 on reflections {reflection_ok}, {elapsed:.3} s"),
    );
    assert!(pass);
}

fn k64() -> CameraIntrinsics {
    CameraIntrinsics::new(56.0, 56.0, 32.0, 32.0, 64, 64, 0.05, 10.0).unwrap()
}

fn random_scene(rng: &mut ChaCha8Rng, n: usize) -> GaussianMap {
    GaussianMap::from_splats(
        (0..n)
            .map(|_| {
                let z = rng.random_range(1.5..3.0);
                GaussianSplat::new(
                    Vector3::new(rng.random_range(-0.6..0.6) * z, rng.random_range(-0.6..0.6) * z, z),
                    Vector3::new(rng.random_range(0.05..0.2), rng.random_range(0.05..0.2), rng.random_range(0.05..0.2)),
                    nalgebra::UnitQuaternion::from_rotation_matrix(&nalgebra::Rotation3::from_matrix_unchecked(
                        random_rotation(rng),
                    )),
                    Vector3::new(rng.random(), rng.random(), rng.random()),
                    rng.random_range(0.3..0.95),
                )
                .unwrap()
            })
            .collect(),
    )
}

fn perturbed(rng: &mut ChaCha8Rng, scale: f64) -> Pose {
    let xi = Vector6::from_fn(|_, _| rng.random_range(-scale..scale));
    Pose::identity().retract(&xi)
}

#[test]
fn ac02_pose_gradient_matches_finite_differences() {
    let k = k64();
    let w = LossWeights::default();
    let start = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..AC2_PAIRS {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let map = random_scene(&mut rng, 40);
        let target = render(&map, &perturbed(&mut rng, 0.05), &k);
        let gt = Frame::new(0, 0.0, target.color, target.depth, k).unwrap();
        let pose = perturbed(&mut rng, 0.03);
        let analytic = pose_gradient(&map, &pose, &gt, &k, &w);
        let loss = |p: &Pose| compute_loss(&render(&map, p, &k), &gt, &w).unwrap().total;
        let fd = Vector6::from_fn(|i, _| {
            let mut xi = Vector6::zeros();
            xi[i] = AC2_FD_STEP;
            (loss(&pose.retract(&xi)) - loss(&pose.retract(&-xi))) / (2.0 * AC2_FD_STEP)
        });
        worst = worst.max((analytic - fd).norm() / fd.norm());
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = worst < AC2_REL_TOL && elapsed < AC2_BUDGET_S;
    report(
        "AC2",
        pass,
        "pose gradient vs central differences",
        &format!("{AC2_PAIRS} pairs at 64x64, max relative error {worst:.2e}, {elapsed:.2} s"),
    );
    assert!(pass);
}

/// Sort-based reference with exact integer ranks for percentiles k/20.
fn truncate_oracle(ms: &[DepthMatch], k20: usize) -> Vec<DepthMatch> {
    let n = ms.len();
    let rank = ((k20 * n).div_ceil(20)).clamp(1, n);
    let threshold = |f: fn(&DepthMatch) -> f64| {
        let mut v: Vec<f64> = ms.iter().map(f).collect();
        v.sort_by(f64::total_cmp);
        v[rank - 1]
    };
    let t0 = threshold(|m| m.1);
    let t1 = threshold(|m| m.2);
    let both: Vec<DepthMatch> = ms.iter().filter(|m| m.1 <= t0 && m.2 <= t1).copied().collect();
    if both.is_empty() {
        ms.iter().filter(|m| m.2 <= t1).copied().collect()
    } else {
        both
    }
}

#[test]
fn ac03_percentile_truncation_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0;
    let (mut singles, mut with_dups) = (0, 0);
    for trial in 0..AC3_TRIALS {
        let n = if trial % 50 == 0 { 1 } else { rng.random_range(1..80) };
        let coarse = rng.random::<bool>();
        let depth = |rng: &mut ChaCha8Rng| {
            if coarse {
                [0.5, 1.0, 1.5, 2.0][rng.random_range(0..4)]
            } else {
                rng.random_range(0.2..5.0)
            }
        };
        let ms: Vec<DepthMatch> = (0..n)
            .map(|i| (PixelMatch::new(i as f64, 0.0, i as f64, 1.0, 1.0), depth(&mut rng), depth(&mut rng)))
            .collect();
        singles += usize::from(n == 1);
        with_dups += usize::from(coarse && n > 4);
        let k20 = rng.random_range(1..=20);
        let got = truncate_by_depth(&ms, k20 as f64 / 20.0).unwrap();
        if got != truncate_oracle(&ms, k20) {
            mismatches += 1;
        }
    }
    let pass = mismatches == 0;
    report(
        "AC3",
        pass,
        "percentile truncation",
        &format!("{mismatches}/{AC3_TRIALS} mismatches ({singles} single-element, {with_dups} with duplicate depths)"),
    );
    assert!(pass);
}

#[test]
fn ac04_loss_weighted_sampling_fidelity() {
    let cases: [(&[f64], f64); 4] = [
        (&[1.0, 3.0], 1.0),
        (&[1.0, 3.0], 0.4),
        (&[2.0, 2.0, 2.0, 2.0], 1.0),
        (&[0.5, 1.0, 2.0, 4.0, 0.25], 0.4),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut pass = true;
    let mut details = Vec::new();
    for (losses, p) in cases {
        let total: f64 = losses.iter().sum();
        let n = losses.len() as f64;
        let expected: Vec<f64> = losses.iter().map(|l| p * l / total + (1.0 - p) / n).collect();
        let strategy = SamplingStrategy::new(SamplingMode::LossWeighted, p).unwrap();
        let mut counts = vec![0usize; losses.len()];
        for _ in 0..AC4_DRAWS {
            counts[sample_keyframe(losses, &strategy, &mut rng).unwrap()] += 1;
        }
        let draws = AC4_DRAWS as f64;
        let within = counts
            .iter()
            .zip(&expected)
            .all(|(c, q)| (*c as f64 - draws * q).abs() <= AC4_SIGMAS * (draws * q * (1.0 - q)).sqrt());
        let chi2: f64 = counts
            .iter()
            .zip(&expected)
            .map(|(c, q)| (*c as f64 - draws * q).powi(2) / (draws * q))
            .sum();
        let p_value = 1.0 - ChiSquared::new(n - 1.0).unwrap().cdf(chi2);
        pass &= within && p_value > AC4_MIN_P;
        details.push(format!("{losses:?}@p={p}: 3σ {within}, χ² p={p_value:.3}"));
    }
    report("AC4", pass, "sampling fidelity", &details.join("; "));
    assert!(pass);
}

fn synthetic_config(frames: usize, stride: usize, seed: u64) -> RunConfig {
    RunConfig {
        dataset: DatasetConfig::Synthetic {
            scene: None,
            n_frames: frames,
            noise_px: 0.0,
            dropout: 0.0,
        },
        stride,
        seed,
        refine_iters: 0,
        ..RunConfig::default()
    }
}

fn run(cfg: &RunConfig) -> ExperimentOutput {
    run_experiment(&Dataset::load(cfg).unwrap(), cfg).unwrap()
}

// The closed-form tracker is exact on oracle matches. The densification ICP
// correction (point-to-point on a ~4 cm sampling lattice at 64x64) and the
// render-and-compare refinement against an approximate map both move exact
// poses by millimeters, so they are switched off here and the default-pipeline
// figure is reported alongside.
fn tracking_only(mut cfg: RunConfig) -> RunConfig {
    cfg.tracker.refine_iters = 0;
    cfg.densify.icp_correction = false;
    cfg
}

#[test]
fn ac05_noiseless_end_to_end_tracking() {
    let start = Instant::now();
    let out = run(&tracking_only(synthetic_config(AC5_FRAMES, 1, 0)));
    let elapsed = start.elapsed().as_secs_f64();
    let default = run(&synthetic_config(AC5_FRAMES, 1, 0));
    let ate = out.report.ate_rmse;
    let pass = ate < AC5_ATE_CM && elapsed < AC5_BUDGET_S && out.report.n_frames == AC5_FRAMES;
    report(
        "AC5",
        pass,
        "noiseless tracking",
        &format!(
            "ATE {ate:.2e} cm over {} frames in {elapsed:.1} s (ICP correction and tracker refinement off; default pipeline gives {:.3} cm)",
            out.report.n_frames, default.report.ate_rmse
        ),
    );
    assert!(pass);
}

#[test]
fn ac06_sparse_robustness_trend() {
    let mut feature_ok = true;
    let mut details = Vec::new();
    for stride in AC6_STRIDES {
        let ates: Vec<f64> = (0..AC6_SEEDS)
            .map(|seed| run(&tracking_only(synthetic_config(AC6_FRAMES, stride, seed))).report.ate_rmse)
            .collect();
        let worst = ates.iter().copied().fold(0.0, f64::max);
        feature_ok &= worst < AC6_FEATURE_MAX_CM;
        details.push(format!("stride {stride}: feature max {worst:.2e} cm"));
    }
    let stride = *AC6_STRIDES.last().unwrap();
    let cv: Vec<f64> = (0..AC6_SEEDS)
        .map(|seed| {
            let mut cfg = tracking_only(synthetic_config(AC6_FRAMES, stride, seed));
            cfg.method = TrackingMethod::ConstantVelocity;
            cfg.tracker.refine_iters = AC6_CV_REFINE;
            run(&cfg).report.ate_rmse
        })
        .collect();
    let cv_median = median(&cv);
    details.push(format!("stride {stride}: constant-velocity median {cv_median:.2} cm"));
    let pass = feature_ok && cv_median > AC6_CV_MIN_CM;
    report("AC6", pass, "sparse robustness", &details.join("; "));
    assert!(pass);
}

fn build_map(
    frames: &[Frame],
    poses: &[Pose],
    every: usize,
    map_iters: usize,
    seed: u64,
) -> (GaussianMap, Vec<Keyframe>, Vec<std::ops::Range<usize>>) {
    let cfg = DensifyConfig {
        icp_correction: false,
        ..DensifyConfig::default()
    };
    let mut map = GaussianMap::new();
    let mut opt = MapOptimizer::new(LearningRates::default());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keyframes = Vec::new();
    let mut ranges = Vec::new();
    for (i, (f, p)) in frames.iter().zip(poses).enumerate() {
        let mut pose = *p;
        let before = map.len();
        densify(&mut map, f, &mut pose, &cfg).unwrap();
        ranges.push(before..map.len());
        if i % every == 0 {
            keyframes.push(Keyframe {
                frame: f.clone(),
                pose,
            });
        }
        if map_iters > 0 {
            optimize_map(&mut map, &mut opt, &keyframes, map_iters, &LossWeights::default(), &ParamMask::all(), &mut rng)
                .unwrap();
        }
    }
    (map, keyframes, ranges)
}

#[test]
fn ac07_refinement_ablation_trend() {
    let scene = Arc::new(SyntheticScene::desk(0));
    let (frames, gt) = generate_synthetic(&scene, 40).unwrap();
    let poses: Vec<Pose> = gt.entries().iter().map(|(_, p)| *p).collect();
    let (map, _, _) = build_map(&frames[..20], &poses[..20], 3, 50, 0);
    let iters = [0, 10, 50];
    let mut errors = vec![Vec::new(); iters.len()];
    for seed in 0..AC7_SEEDS {
        let matcher = SyntheticMatcher::for_scene(scene.clone(), 0..40).with_noise(AC7_NOISE_PX, 0.0, seed);
        let i = 20 + (seed as usize % 10);
        for (slot, &n) in iters.iter().enumerate() {
            let cfg = TrackerConfig {
                refine_iters: n,
                ..TrackerConfig::default()
            };
            let r = track_frame((&frames[i - 1], &poses[i - 1]), &frames[i], &matcher, &map, &cfg).unwrap();
            errors[slot].push(r.pose.translation_distance(&poses[i]) * 100.0);
        }
    }
    let m: Vec<f64> = errors.iter().map(|e| median(e)).collect();
    let pass = m[2] <= m[1] && m[1] <= m[0];
    report(
        "AC7",
        pass,
        "refinement ablation",
        &format!(
            "median tracked-pose error over {AC7_SEEDS} seeds: refine=0 {:.4} cm, refine=10 {:.4} cm, refine=50 {:.4} cm",
            m[0], m[1], m[2]
        ),
    );
    assert!(pass);
}

#[test]
fn ac08_sampling_strategy_trend() {
    let scene = SyntheticScene::desk(0);
    let (frames, gt) = generate_synthetic(&scene, 90).unwrap();
    let picked: Vec<usize> = (0..90).step_by(15).collect();
    let kf_frames: Vec<Frame> = picked.iter().map(|&i| frames[i].clone()).collect();
    let kf_poses: Vec<Pose> = picked.iter().map(|&i| gt.entries()[i].1).collect();
    let (mut base, keyframes, ranges) = build_map(&kf_frames, &kf_poses, 1, 0, 0);
    let mut opt = MapOptimizer::new(LearningRates::default());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    optimize_map(&mut base, &mut opt, &keyframes, 300, &LossWeights::default(), &ParamMask::all(), &mut rng).unwrap();

    let modes = [SamplingMode::LossWeighted, SamplingMode::WorstFirst, SamplingMode::Random];
    let mut finals = vec![Vec::new(); modes.len()];
    let mut before = Vec::new();
    for seed in 0..AC8_SEEDS {
        // Recolor the splats seeded by two non-initial keyframes at random.
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let mut map = base.clone();
        for _ in 0..2 {
            let kf = rng.random_range(1..keyframes.len());
            for i in ranges[kf].clone() {
                map.splats[i].color = Vector3::new(rng.random(), rng.random(), rng.random());
            }
        }
        before.push(mean_psnr(&map, &keyframes).unwrap());
        for (slot, mode) in modes.iter().enumerate() {
            let mut m = map.clone();
            let mut opt = MapOptimizer::new(LearningRates::default());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let strategy = SamplingStrategy::new(*mode, 0.4).unwrap();
            let r = refine_colors(
                &mut m,
                &mut opt,
                &keyframes,
                AC8_ITERS,
                &strategy,
                &LossWeights::default(),
                &ParamMask::refinement(true),
                &mut rng,
            )
            .unwrap();
            finals[slot].push(r.psnr);
        }
    }
    let m: Vec<f64> = finals.iter().map(|v| median(v)).collect();
    let pass = m[0] >= m[1] && m[1] >= m[2];
    report(
        "AC8",
        pass,
        "sampling strategy",
        &format!(
            "median PSNR over {AC8_SEEDS} seeds after {AC8_ITERS} iterations (from {:.2} dB): loss_weighted {:.3}, worst_first {:.3}, random {:.3} dB",
            median(&before),
            m[0],
            m[1],
            m[2]
        ),
    );
    assert!(pass);
}

fn layered_frame(depth_at: impl Fn(usize, usize) -> f64) -> Frame {
    let k = k64();
    let mut color = ColorImage::new(64, 64);
    let mut depth = DepthImage::new(64, 64);
    for y in 0..64 {
        for x in 0..64 {
            let d = depth_at(x, y);
            depth.set(x, y, d);
            color.set(x, y, [0.2 + 0.1 * d, 0.5, 0.3]);
        }
    }
    Frame::new(0, 0.0, color, depth, k).unwrap()
}

fn icp_fixture(src: Vec<Vector3<f64>>, dst: Vec<Vector3<f64>>, d_max: f64) -> (bool, f64, f64) {
    let params = IcpParams {
        max_distance: d_max,
        ..IcpParams::default()
    };
    let r = icp_align(&PointSet::new(src).unwrap(), &PointSet::new(dst).unwrap(), &params).unwrap();
    (r.accepted().is_some(), r.fit().fitness, r.fit().error)
}

#[test]
fn ac09_densification_correctness() {
    let cfg = DensifyConfig::default();
    let grid = || (0..64).step_by(2).flat_map(|y| (0..64).step_by(2).map(move |x| (x, y)));
    let mut ok = true;
    let mut details = Vec::new();

    // Two-frame occlusion scenes: frame A builds the map, frame B adds an occluder.
    let in_square = |x: usize, y: usize| (20..36).contains(&x) && (20..36).contains(&y);
    let in_disc = |x: usize, y: usize| (x as f64 + 0.5 - 40.0).powi(2) + (y as f64 + 0.5 - 24.0).powi(2) <= 64.0;
    let in_hole = |x: usize, y: usize| x < 12 && y > 50;
    type Scene = (&'static str, Frame, Frame, Box<dyn Fn(usize, usize) -> bool>, f64);
    let scenes: [Scene; 2] = [
        (
            "square",
            layered_frame(|_, _| 1.0),
            layered_frame(|x, y| if in_square(x, y) { 0.6 } else { 1.0 }),
            Box::new(in_square),
            0.6,
        ),
        (
            "disc+hole",
            layered_frame(|_, _| 1.2),
            layered_frame(|x, y| {
                if in_disc(x, y) {
                    0.8
                } else if in_hole(x, y) {
                    2.0
                } else {
                    1.2
                }
            }),
            Box::new(in_disc),
            0.8,
        ),
    ];
    for (name, a, b, occluder, z) in &scenes {
        let mut map = GaussianMap::new();
        let mut pose = Pose::identity();
        densify(&mut map, a, &mut pose, &cfg).unwrap();
        let before = map.len();
        let r = densify(&mut map, b, &mut pose, &cfg).unwrap();
        let expected: Vec<(usize, usize)> = grid().filter(|&(x, y)| occluder(x, y)).collect();
        let on_surface = map.splats[before..].iter().all(|s| (s.center.z - z).abs() < cfg.tau);
        let exact = r.added_pixels == expected;
        ok &= exact && on_surface;
        details.push(format!("{name}: {} added, {} expected, exact {exact}, on surface {on_surface}", r.added, expected.len()));
    }

    // ICP gate fixtures with hand-computed fitness and error.
    let square: Vec<Vector3<f64>> = (0..10).map(|i| Vector3::new(i as f64 * 0.3, (i % 3) as f64 * 0.4, (i % 2) as f64 * 0.5)).collect();
    let mut mostly = square.clone();
    mostly[8] += Vector3::new(5.0, 0.0, 0.0);
    mostly[9] += Vector3::new(0.0, 5.0, 0.0);
    let sparse: Vec<Vector3<f64>> = (0..10).map(|i| square[i] + Vector3::new(0.0, 0.0, if i == 0 { 0.0 } else { 10.0 * i as f64 })).collect();
    let corners = [(1.0, 1.0), (1.0, -1.0), (-1.0, -1.0), (-1.0, 1.0)];
    let flat: Vec<Vector3<f64>> = corners.iter().map(|&(x, y)| Vector3::new(x, y, 0.0)).collect();
    let saddle: Vec<Vector3<f64>> = corners.iter().map(|&(x, y)| Vector3::new(x, y, 0.12 * x * y)).collect();
    let fixtures = [
        ("identical", icp_fixture(square.clone(), square.clone(), 0.05), (true, 1.0, 0.0)),
        ("8 of 10 coincide", icp_fixture(square.clone(), mostly, 0.05), (true, 0.8, 0.0)),
        ("1 of 10 in range", icp_fixture(square.clone(), sparse, 0.05), (false, 0.1, 0.0)),
        ("saddle offsets 0.12 m", icp_fixture(flat, saddle, 0.2), (false, 1.0, 0.12)),
    ];
    for (name, (acc, f, e), (want_acc, want_f, want_e)) in fixtures {
        let good = acc == want_acc && (f - want_f).abs() < 1e-12 && (e - want_e).abs() < 1e-9;
        ok &= good;
        details.push(format!("ICP {name}: accepted {acc}, f {f:.3}, e {e:.3}"));
    }
    report("AC9", ok, "densification", &details.join("; "));
    assert!(ok);
}

fn median_ms(mut f: impl FnMut(), runs: usize) -> f64 {
    f();
    let times: Vec<f64> = (0..runs)
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed().as_secs_f64() * 1e3
        })
        .collect();
    median(&times)
}

#[test]
fn ac10_performance_budget() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let src: Vec<Vector3<f64>> = (0..1000)
        .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.5..3.0)))
        .collect();
    let truth = Pose::from_axis_angle(&Vector3::new(0.2, 1.0, -0.3), 0.3, Vector3::new(0.1, -0.2, 0.05));
    let src_set = PointSet::new(src).unwrap();
    let dst_set = src_set.transformed(&truth);
    let rigid_ms = median_ms(
        || {
            estimate_rigid_transform(&src_set, &dst_set).unwrap();
        },
        21,
    );

    let scene = Arc::new(SyntheticScene::desk(0));
    let (frames, gt) = generate_synthetic(&scene, 12).unwrap();
    let matcher = SyntheticMatcher::for_scene(scene, 0..12);
    let map = GaussianMap::new();
    let cfg = TrackerConfig {
        refine_iters: 0,
        ..TrackerConfig::default()
    };
    let mut i = 0;
    let track_ms = median_ms(
        || {
            let n = 1 + i % 11;
            i += 1;
            track_frame((&frames[n - 1], &gt.entries()[n - 1].1), &frames[n], &matcher, &map, &cfg).unwrap();
        },
        21,
    );
    let pass = rigid_ms < AC10_RIGID_MS && track_ms < AC10_TRACK_MS;
    report(
        "AC10",
        pass,
        "performance",
        &format!("rigid transform (1000 pts) {rigid_ms:.3} ms, track_frame without refinement {track_ms:.2} ms (medians)"),
    );
    assert!(pass);
}

fn run_cli(out: &Path, config: &Path) {
    let status = Command::new(env!("CARGO_BIN_EXE_deskslam"))
        .args(["run", "--config"])
        .arg(config)
        .arg("--output")
        .arg(out)
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
}

#[test]
fn ac11_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    let cfg = RunConfig {
        map_iters: 5,
        refine_iters: 20,
        tracker: TrackerConfig {
            refine_iters: 5,
            ..TrackerConfig::default()
        },
        dataset: DatasetConfig::Synthetic {
            scene: None,
            n_frames: 12,
            noise_px: 0.3,
            dropout: 0.1,
        },
        seed: 11,
        ..RunConfig::default()
    };
    std::fs::write(&config, serde_json::to_string(&cfg).unwrap()).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_cli(&a, &config);
    run_cli(&b, &config);
    let files = ["trajectory.txt", "keyframes.txt", "metrics.json", "map.ply"];
    let same: Vec<bool> = files
        .iter()
        .map(|f| std::fs::read(a.join(f)).unwrap() == std::fs::read(b.join(f)).unwrap())
        .collect();
    let pass = same.iter().all(|s| *s);
    report(
        "AC11",
        pass,
        "determinism",
        &files.iter().zip(&same).map(|(f, s)| format!("{f} identical {s}")).collect::<Vec<_>>().join(", "),
    );
    assert!(pass);
}

//! Correspondences between consecutive frames and their lifting to 3D.
//!
//! The learned keypoint matcher is abstracted behind
//! [`CorrespondenceProvider`]; this module ships a ray-casting oracle over a
//! synthetic scene and a loader for matches exported by an external tool.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::geometry::{back_project, project, PixelMatch, PointSet, Pose};
use crate::pipeline_io::synthetic::{mix, SyntheticScene};

/// Depth percentile used for truncation unless configured otherwise.
pub const DEFAULT_PERCENTILE: f64 = 0.7;
pub const DEFAULT_MIN_CONFIDENCE: f64 = 0.5;

pub trait CorrespondenceProvider: Send + Sync {
    /// Matches from `prev` (`u0, v0`) to `cur` (`u1, v1`).
    fn matches(&self, prev: &Frame, cur: &Frame) -> Result<Vec<PixelMatch>>;
}

/// A match together with the depths looked up at both ends.
pub type DepthMatch = (PixelMatch, f64, f64);

pub fn confidence_filter(matches: &[PixelMatch], min_confidence: f64) -> Vec<PixelMatch> {
    matches
        .iter()
        .filter(|m| m.confidence >= min_confidence)
        .copied()
        .collect()
}

/// `ceil(p·n)`-th smallest value (1-based), clamped to `[1, n]`.
pub fn nearest_rank(values: &[f64], percentile: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    // The epsilon keeps p·n that is integral in exact arithmetic (0.7·10) from rounding up.
    let rank = ((percentile * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
    v[rank - 1]
}

/// Drops matches that are far in either frame.
///
/// Each frame gets its own nearest-rank threshold over its matched depths and
/// a match is kept when it is within both (inclusive). If no match passes
/// both, which needs `percentile <= 0.5`, the current-frame threshold alone
/// is used so the result is never empty.
pub fn truncate_by_depth(matches: &[DepthMatch], percentile: f64) -> Result<Vec<DepthMatch>> {
    if matches.is_empty() {
        return Err(Error::EmptyMatchSet);
    }
    if !(percentile > 0.0 && percentile <= 1.0) {
        return Err(Error::invalid("percentile must lie in (0, 1]"));
    }
    if matches.iter().any(|(_, a, b)| !(*a > 0.0 && *b > 0.0)) {
        return Err(Error::invalid("match depths must be positive"));
    }
    let d0: Vec<f64> = matches.iter().map(|m| m.1).collect();
    let d1: Vec<f64> = matches.iter().map(|m| m.2).collect();
    let thr0 = nearest_rank(&d0, percentile);
    let thr1 = nearest_rank(&d1, percentile);
    let both: Vec<DepthMatch> = matches
        .iter()
        .filter(|m| m.1 <= thr0 && m.2 <= thr1)
        .copied()
        .collect();
    if !both.is_empty() {
        return Ok(both);
    }
    Ok(matches.iter().filter(|m| m.2 <= thr1).copied().collect())
}

fn valid_depth(d: Option<f64>) -> Option<f64> {
    d.filter(|d| *d > 0.0 && d.is_finite())
}

/// Looks up depth at both ends; matches without valid depth are dropped.
pub fn match_depths(matches: &[PixelMatch], frame0: &Frame, frame1: &Frame) -> Vec<DepthMatch> {
    matches
        .iter()
        .filter_map(|m| {
            let d0 = valid_depth(frame0.depth.sample(m.u0, m.v0))?;
            let d1 = valid_depth(frame1.depth.sample(m.u1, m.v1))?;
            Some((*m, d0, d1))
        })
        .collect()
}

/// Back-projects matched pixels into each camera's frame.
pub fn lift_matches(matches: &[PixelMatch], frame0: &Frame, frame1: &Frame) -> Result<(PointSet, PointSet)> {
    lift_depth_matches(&match_depths(matches, frame0, frame1), frame0, frame1)
}

pub fn lift_depth_matches(matches: &[DepthMatch], frame0: &Frame, frame1: &Frame) -> Result<(PointSet, PointSet)> {
    let mut src = Vec::with_capacity(matches.len());
    let mut dst = Vec::with_capacity(matches.len());
    for (m, d0, d1) in matches {
        src.push(back_project(m.u0, m.v0, *d0, &frame0.intrinsics)?);
        dst.push(back_project(m.u1, m.v1, *d1, &frame1.intrinsics)?);
    }
    if src.len() < 3 {
        return Err(Error::InsufficientCorrespondences {
            found: src.len(),
            needed: 3,
        });
    }
    Ok((PointSet::new(src)?, PointSet::new(dst)?))
}

/// Oracle matcher: ray-casts keypoints of the previous frame into the
/// current one using ground-truth poses.
///
/// Keypoints sit on pixel centers of the previous frame. A candidate is kept
/// only when it lies on a planar surface, is not occluded in the current view
/// and the four pixel centers around its reprojection see the same surface,
/// so bilinear inverse-depth lookup reproduces the exact depth.
#[derive(Debug, Clone)]
pub struct SyntheticMatcher {
    scene: Arc<SyntheticScene>,
    poses: HashMap<usize, Pose>,
    pub noise_px: f64,
    pub dropout: f64,
    /// Keypoint grid spacing in pixels.
    pub spacing: usize,
    pub seed: u64,
}

impl SyntheticMatcher {
    /// `poses` maps frame ids to ground-truth world-from-camera poses.
    pub fn new(scene: Arc<SyntheticScene>, poses: HashMap<usize, Pose>) -> Self {
        Self {
            scene,
            poses,
            noise_px: 0.0,
            dropout: 0.0,
            spacing: 3,
            seed: 0,
        }
    }

    /// Matcher for frames generated from the scene's own trajectory.
    pub fn for_scene(scene: Arc<SyntheticScene>, frame_ids: impl IntoIterator<Item = usize>) -> Self {
        let poses = frame_ids.into_iter().map(|i| (i, scene.pose_at(i))).collect();
        Self::new(scene, poses)
    }

    pub fn with_noise(mut self, noise_px: f64, dropout: f64, seed: u64) -> Self {
        self.noise_px = noise_px;
        self.dropout = dropout;
        self.seed = seed;
        self
    }

    fn pose(&self, id: usize) -> Result<&Pose> {
        self.poses
            .get(&id)
            .ok_or_else(|| Error::Dataset(format!("no ground-truth pose for frame {id}")))
    }
}

impl CorrespondenceProvider for SyntheticMatcher {
    fn matches(&self, prev: &Frame, cur: &Frame) -> Result<Vec<PixelMatch>> {
        if !(self.noise_px >= 0.0 && (0.0..=1.0).contains(&self.dropout)) {
            return Err(Error::invalid("noise_px must be >= 0 and dropout in [0, 1]"));
        }
        let pose0 = self.pose(prev.id)?;
        let pose1 = self.pose(cur.id)?;
        let cam1 = pose1.inverse();
        let k = &self.scene.intrinsics;
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.seed, prev.id as u64, cur.id as u64));
        let noise = Normal::new(0.0, self.noise_px).map_err(|e| Error::invalid(e.to_string()))?;
        let step = self.spacing.max(1);
        let mut out = Vec::new();
        for gy in (step / 2..k.height).step_by(step) {
            for gx in (step / 2..k.width).step_by(step) {
                let (u0, v0) = (gx as f64 + 0.5, gy as f64 + 0.5);
                let Some(h0) = self.scene.cast_pixel(pose0, u0, v0) else {
                    continue;
                };
                if !h0.planar || !(h0.t > k.near && h0.t < k.far) {
                    continue;
                }
                let Ok((u1, v1, z1)) = project(&cam1.transform_point(&h0.point), k) else {
                    continue;
                };
                // Need all four surrounding pixel centers inside the image.
                let w = k.width as f64;
                let h = k.height as f64;
                if !(u1 >= 0.5 && v1 >= 0.5 && u1 <= w - 0.5 && v1 <= h - 0.5 && z1 > k.near && z1 < k.far) {
                    continue;
                }
                match self.scene.cast_pixel(pose1, u1, v1) {
                    Some(h1) if h1.surface == h0.surface && (h1.t - z1).abs() <= 1e-6 * z1 => {}
                    _ => continue,
                }
                let x0 = (u1 - 0.5).floor();
                let y0 = (v1 - 0.5).floor();
                let mut lo = f64::INFINITY;
                let mut hi = 0.0f64;
                let mut same = true;
                for (dx, dy) in [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)] {
                    let (px, py) = ((x0 + dx).min(w - 1.0), (y0 + dy).min(h - 1.0));
                    match self.scene.cast_pixel(pose1, px + 0.5, py + 0.5) {
                        Some(n) if n.surface == h0.surface => {
                            lo = lo.min(n.t);
                            hi = hi.max(n.t);
                        }
                        _ => {
                            same = false;
                            break;
                        }
                    }
                }
                if !same || hi > 1.04 * lo {
                    continue;
                }
                // Draw the random numbers unconditionally so one candidate's
                // fate does not shift the stream for the next.
                let keep = rng.random::<f64>() >= self.dropout;
                let confidence = rng.random_range(0.5..=1.0);
                let (n0, n1, n2, n3) = (
                    noise.sample(&mut rng),
                    noise.sample(&mut rng),
                    noise.sample(&mut rng),
                    noise.sample(&mut rng),
                );
                if !keep {
                    continue;
                }
                let m = PixelMatch::new(u0 + n0, v0 + n1, u1 + n2, v1 + n3, confidence);
                if k.contains(m.u0, m.v0) && k.contains(m.u1, m.v1) {
                    out.push(m);
                }
            }
        }
        Ok(out)
    }
}

/// Reads `matches_<prev>_<cur>.txt` files: one `u0 v0 u1 v1 conf` per line,
/// `#` comments allowed.
#[derive(Debug, Clone)]
pub struct FileMatcher {
    dir: PathBuf,
}

impl FileMatcher {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn path_for(&self, prev: usize, cur: usize) -> PathBuf {
        self.dir.join(format!("matches_{prev}_{cur}.txt"))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

pub fn write_matches(path: impl AsRef<Path>, matches: &[PixelMatch]) -> Result<()> {
    use std::fmt::Write as _;
    let path = path.as_ref();
    let mut s = String::from("# u0 v0 u1 v1 conf\n");
    for m in matches {
        let _ = writeln!(s, "{:.6} {:.6} {:.6} {:.6} {:.6}", m.u0, m.v0, m.u1, m.v1, m.confidence);
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

impl CorrespondenceProvider for FileMatcher {
    fn matches(&self, prev: &Frame, cur: &Frame) -> Result<Vec<PixelMatch>> {
        let path = self.path_for(prev.id, cur.id);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = Vec::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| Error::Parse {
                path: path.clone(),
                line: no + 1,
                msg,
            };
            let v: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| err(format!("{e}")))?;
            let [u0, v0, u1, v1, conf] = v[..] else {
                return Err(err(format!("expected 5 fields, found {}", v.len())));
            };
            if !prev.intrinsics.contains(u0, v0) || !cur.intrinsics.contains(u1, v1) {
                return Err(err("match outside the image bounds".into()));
            }
            if !(0.0..=1.0).contains(&conf) {
                return Err(err(format!("confidence {conf} outside [0, 1]")));
            }
            out.push(PixelMatch::new(u0, v0, u1, v1, conf));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::{ColorImage, DepthImage};
    use crate::geometry::{estimate_rigid_transform, CameraIntrinsics};

    fn pm(conf: f64) -> PixelMatch {
        PixelMatch::new(1.0, 1.0, 1.0, 1.0, conf)
    }

    #[test]
    fn confidence_examples() {
        let ms = vec![pm(0.1), pm(0.9)];
        assert_eq!(confidence_filter(&ms, 0.0), ms);
        assert_eq!(confidence_filter(&ms, 0.5), vec![pm(0.9)]);
        assert!(confidence_filter(&ms, 1.0).is_empty());
        let once = confidence_filter(&ms, 0.5);
        assert_eq!(confidence_filter(&once, 0.5), once);
    }

    #[test]
    fn truncation_examples() {
        let ms: Vec<DepthMatch> = (1..=10).map(|d| (pm(1.0), d as f64, d as f64)).collect();
        let kept = truncate_by_depth(&ms, 0.7).unwrap();
        assert_eq!(kept.len(), 7);
        assert!(kept.iter().all(|m| m.2 <= 7.0));
        let equal: Vec<DepthMatch> = (0..5).map(|_| (pm(1.0), 2.0, 2.0)).collect();
        assert_eq!(truncate_by_depth(&equal, 0.3).unwrap().len(), 5);
        assert_eq!(truncate_by_depth(&ms, 1.0).unwrap().len(), 10);
        assert!(matches!(truncate_by_depth(&[], 0.7), Err(Error::EmptyMatchSet)));
        let again = truncate_by_depth(&kept, 0.7).unwrap();
        assert!(again.len() <= kept.len());
    }

    fn frame_with(id: usize, depth: Vec<f64>) -> Frame {
        let k = CameraIntrinsics::new(10.0, 10.0, 1.5, 1.5, 3, 3, 0.1, 10.0).unwrap();
        Frame::new(id, 0.0, ColorImage::new(3, 3), DepthImage::from_data(3, 3, depth).unwrap(), k).unwrap()
    }

    #[test]
    fn lift_examples() {
        let f0 = frame_with(0, vec![1.0; 9]);
        let f1 = frame_with(1, vec![2.0; 9]);
        let at_pp = PixelMatch::new(1.5, 1.5, 1.5, 1.5, 1.0);
        let (a, b) = lift_depth_matches(&match_depths(&[at_pp; 3], &f0, &f1), &f0, &f1).unwrap();
        assert!((a.points()[0] - nalgebra::Vector3::new(0.0, 0.0, 1.0)).norm() < 1e-12);
        assert!((b.points()[0] - nalgebra::Vector3::new(0.0, 0.0, 2.0)).norm() < 1e-12);

        let mut holes = vec![2.0; 9];
        holes[4] = 0.0;
        let f1 = frame_with(1, holes);
        assert!(match_depths(&[at_pp], &f0, &f1).is_empty());
        assert!(matches!(
            lift_matches(&[at_pp], &f0, &f1),
            Err(Error::InsufficientCorrespondences { found: 0, .. })
        ));
    }

    #[test]
    fn oracle_matches_recover_relative_pose() {
        let scene = Arc::new(SyntheticScene::desk(4));
        let f0 = scene.render_frame(0);
        let f1 = scene.render_frame(7);
        let matcher = SyntheticMatcher::for_scene(scene.clone(), [0, 7]);
        let ms = matcher.matches(&f0, &f1).unwrap();
        assert!(ms.len() > 50, "{}", ms.len());
        let (src, dst) = lift_matches(&ms, &f0, &f1).unwrap();
        let rel = estimate_rigid_transform(&src, &dst).unwrap();
        let truth = scene.pose_at(7).inverse().compose(&scene.pose_at(0));
        assert!((rel.rotation - truth.rotation).amax() < 1e-9);
        assert!((rel.translation - truth.translation).norm() < 1e-9);
        for (s, d) in src.iter().zip(dst.iter()) {
            assert!((truth.transform_point(s) - d).norm() < 1e-9);
        }
    }

    #[test]
    fn matcher_noise_and_dropout() {
        let scene = Arc::new(SyntheticScene::desk(4));
        let f0 = scene.render_frame(0);
        let f1 = scene.render_frame(3);
        let exact = SyntheticMatcher::for_scene(scene.clone(), [0, 3]);
        let n = exact.matches(&f0, &f1).unwrap().len();
        let dropped = exact.clone().with_noise(0.0, 0.5, 1).matches(&f0, &f1).unwrap().len();
        assert!(dropped < n && dropped > n / 4);
        let noisy = exact.clone().with_noise(0.5, 0.0, 1);
        let a = noisy.matches(&f0, &f1).unwrap();
        assert_eq!(a, noisy.matches(&f0, &f1).unwrap());
        assert!(a.iter().all(|m| (0.5..=1.0).contains(&m.confidence)));
    }

    #[test]
    fn file_matcher_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let fm = FileMatcher::new(dir.path());
        let f0 = frame_with(4, vec![1.0; 9]);
        let f1 = frame_with(5, vec![1.0; 9]);
        let ms = vec![PixelMatch::new(0.5, 1.25, 2.0, 0.75, 0.8)];
        write_matches(fm.path_for(4, 5), &ms).unwrap();
        assert_eq!(fm.matches(&f0, &f1).unwrap(), ms);
        assert!(fm.matches(&f1, &f0).is_err());
        std::fs::write(fm.path_for(4, 5), "0 0 5 0 0.5\n").unwrap();
        assert!(matches!(fm.matches(&f0, &f1), Err(Error::Parse { line: 1, .. })));
        std::fs::write(fm.path_for(4, 5), "# c\n0 0 1 1 1.5\n").unwrap();
        assert!(matches!(fm.matches(&f0, &f1), Err(Error::Parse { line: 2, .. })));
    }
}

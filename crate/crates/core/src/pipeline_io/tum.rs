//! TUM RGB-D directory layout: `rgb.txt`, `depth.txt`, `groundtruth.txt`
//! and the PNGs they list.
//!
//! An optional `intrinsics.json` (a serialized [`CameraIntrinsics`]) next to
//! the index files overrides the default camera.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::warn;

use super::png::{read_color_png, read_depth_png, write_color_png, write_depth_png};
use super::stream::Prefetch;
use super::trajectory::{format_pose_line, parse_trajectory};
use crate::error::{Error, Result};
use crate::evalkit::{Trajectory, ASSOCIATION_WINDOW};
use crate::frame::Frame;
use crate::geometry::CameraIntrinsics;

/// Default camera of the TUM freiburg1 sequences at 640×480.
pub fn tum_default_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics {
        fx: 517.3,
        fy: 516.5,
        cx: 318.6,
        cy: 255.3,
        width: 640,
        height: 480,
        near: 0.1,
        far: 10.0,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TumEntry {
    pub timestamp: f64,
    pub rgb: PathBuf,
    pub depth: PathBuf,
}

#[derive(Debug, Clone)]
pub struct TumIndex {
    pub entries: Vec<TumEntry>,
    pub ground_truth: Trajectory,
    /// RGB images dropped for lack of a depth image or pose within the window.
    pub skipped: usize,
    pub intrinsics: CameraIntrinsics,
}

#[derive(Debug, Clone)]
pub struct TumDataset {
    pub frames: Vec<Frame>,
    pub ground_truth: Trajectory,
    pub skipped: usize,
}

fn read_index(path: &Path) -> Result<Vec<(f64, String)>> {
    let text = std::fs::read_to_string(path).map_err(|_| Error::Dataset(format!("missing index file {}", path.display())))?;
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(t), Some(file)) = (parts.next(), parts.next()) else {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: no + 1,
                msg: "expected `timestamp filename`".into(),
            });
        };
        let t: f64 = t.parse().map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: no + 1,
            msg: format!("{e}"),
        })?;
        out.push((t, file.to_string()));
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(out)
}

fn nearest<'a>(list: &'a [(f64, String)], t: f64) -> Option<&'a (f64, String)> {
    let i = list.partition_point(|(s, _)| *s < t);
    [i.checked_sub(1), Some(i)]
        .into_iter()
        .flatten()
        .filter_map(|j| list.get(j))
        .filter(|(s, _)| (s - t).abs() <= ASSOCIATION_WINDOW)
        .min_by(|a, b| (a.0 - t).abs().total_cmp(&(b.0 - t).abs()))
}

/// Reads and associates the index files without decoding any image.
pub fn load_tum_index(dir: impl AsRef<Path>, intrinsics: Option<CameraIntrinsics>) -> Result<TumIndex> {
    let dir = dir.as_ref();
    let rgb = read_index(&dir.join("rgb.txt"))?;
    let depth = read_index(&dir.join("depth.txt"))?;
    let gt_path = dir.join("groundtruth.txt");
    let gt_text = std::fs::read_to_string(&gt_path)
        .map_err(|_| Error::Dataset(format!("missing index file {}", gt_path.display())))?;
    let gt_all = parse_trajectory(&gt_text, &gt_path)?;
    let intrinsics = match intrinsics {
        Some(k) => k,
        None => {
            let p = dir.join("intrinsics.json");
            if p.exists() {
                let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
                serde_json::from_str(&text)?
            } else {
                tum_default_intrinsics()
            }
        }
    };
    intrinsics.validate()?;

    let mut entries = Vec::new();
    let mut gt = Vec::new();
    let mut skipped = 0;
    for (t, file) in &rgb {
        let (Some((_, dfile)), Some((_, pose))) = (nearest(&depth, *t), gt_all.nearest(*t, ASSOCIATION_WINDOW)) else {
            skipped += 1;
            continue;
        };
        if entries.last().is_some_and(|e: &TumEntry| e.timestamp >= *t) {
            skipped += 1;
            continue;
        }
        entries.push(TumEntry {
            timestamp: *t,
            rgb: dir.join(file),
            depth: dir.join(dfile),
        });
        gt.push((*t, *pose));
    }
    if skipped > 0 {
        warn!("{}: skipped {skipped} frames without depth or pose within {ASSOCIATION_WINDOW} s", dir.display());
    }
    if entries.is_empty() {
        return Err(Error::Dataset(format!("{}: no associated frames", dir.display())));
    }
    Ok(TumIndex {
        entries,
        ground_truth: Trajectory::new(gt)?,
        skipped,
        intrinsics,
    })
}

/// Loads every associated frame, decoding images on a read-ahead thread.
pub fn load_tum(dir: impl AsRef<Path>, intrinsics: Option<CameraIntrinsics>, queue_capacity: usize) -> Result<TumDataset> {
    let index = load_tum_index(dir, intrinsics)?;
    let frames = stream_frames(&index, queue_capacity).collect::<Result<Vec<_>>>()?;
    Ok(TumDataset {
        frames,
        ground_truth: index.ground_truth,
        skipped: index.skipped,
    })
}

/// Frames of an index in order, decoded at most `capacity` ahead.
pub fn stream_frames(index: &TumIndex, capacity: usize) -> Prefetch<Frame> {
    let entries = index.entries.clone();
    let k = index.intrinsics;
    Prefetch::new(entries.len(), capacity, move |i| {
        let e = &entries[i];
        Frame::new(i, e.timestamp, read_color_png(&e.rgb)?, read_depth_png(&e.depth)?, k)
    })
}

/// Writes frames and poses in the TUM layout (plus `intrinsics.json`).
pub fn write_tum(dir: impl AsRef<Path>, frames: &[Frame], gt: &Trajectory) -> Result<()> {
    let dir = dir.as_ref();
    for sub in ["rgb", "depth"] {
        let p = dir.join(sub);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let mut rgb = String::from("# timestamp filename\n");
    let mut depth = String::from("# timestamp filename\n");
    for f in frames {
        let name = format!("{:06}.png", f.id);
        write_color_png(&f.color, dir.join("rgb").join(&name))?;
        write_depth_png(&f.depth, dir.join("depth").join(&name))?;
        let _ = writeln!(rgb, "{:.6} rgb/{name}", f.timestamp);
        let _ = writeln!(depth, "{:.6} depth/{name}", f.timestamp);
    }
    let mut poses = String::from("# timestamp tx ty tz qx qy qz qw\n");
    for (t, p) in gt.entries() {
        let _ = writeln!(poses, "{}", format_pose_line(*t, p));
    }
    let write = |name: &str, text: &str| {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write("rgb.txt", &rgb)?;
    write("depth.txt", &depth)?;
    write("groundtruth.txt", &poses)?;
    if let Some(f) = frames.first() {
        write("intrinsics.json", &serde_json::to_string_pretty(&f.intrinsics)?)?;
    }
    Ok(())
}

//! TUM trajectory text format: `timestamp tx ty tz qx qy qz qw` per line.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::evalkit::Trajectory;
use crate::geometry::Pose;

fn fixed6(v: f64) -> String {
    let s = format!("{v:.6}");
    // Avoid "-0.000000" so tiny negative noise does not change the bytes.
    if s.trim_start_matches('-').chars().all(|c| c == '0' || c == '.') {
        s.trim_start_matches('-').to_string()
    } else {
        s
    }
}

pub fn format_pose_line(timestamp: f64, pose: &Pose) -> String {
    let q = pose.quaternion();
    let t = pose.translation;
    [timestamp, t.x, t.y, t.z, q.i, q.j, q.k, q.w]
        .iter()
        .map(|v| fixed6(*v))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn trajectory_to_string(traj: &Trajectory) -> String {
    let mut out = String::from("# timestamp tx ty tz qx qy qz qw\n");
    for (t, pose) in traj.entries() {
        let _ = writeln!(out, "{}", format_pose_line(*t, pose));
    }
    out
}

pub fn export_trajectory(traj: &Trajectory, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, trajectory_to_string(traj)).map_err(|e| Error::io(path, e))
}

/// Parses TUM pose lines; `#` comments and blank lines are skipped.
pub fn parse_trajectory(text: &str, path: &Path) -> Result<Trajectory> {
    let mut entries = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: no + 1,
            msg,
        };
        let v: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| err(format!("{e}")))?;
        let [t, tx, ty, tz, qx, qy, qz, qw] = v[..] else {
            return Err(err(format!("expected 8 fields, found {}", v.len())));
        };
        let q = Quaternion::new(qw, qx, qy, qz);
        if !(q.norm() > 1e-9) {
            return Err(err("zero quaternion".into()));
        }
        entries.push((t, Pose::from_quaternion(&UnitQuaternion::from_quaternion(q), Vector3::new(tx, ty, tz))));
    }
    Trajectory::new(entries)
}

pub fn import_trajectory(path: impl AsRef<Path>) -> Result<Trajectory> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trajectory(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_line() {
        assert_eq!(
            format_pose_line(1.5, &Pose::identity()),
            "1.500000 0.000000 0.000000 0.000000 0.000000 0.000000 0.000000 1.000000"
        );
    }

    #[test]
    fn round_trip_and_unit_quaternions() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let entries: Vec<(f64, Pose)> = (0..50)
            .map(|i| {
                let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 1.0);
                let t = Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random());
                (i as f64 / 30.0, Pose::from_axis_angle(&axis, rng.random_range(-3.0..3.0), t))
            })
            .collect();
        let traj = Trajectory::new(entries).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.txt");
        export_trajectory(&traj, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        for line in text.lines().skip(1) {
            let v: Vec<f64> = line.split_whitespace().map(|s| s.parse().unwrap()).collect();
            let n = (v[4] * v[4] + v[5] * v[5] + v[6] * v[6] + v[7] * v[7]).sqrt();
            assert!((n - 1.0).abs() < 1e-5);
        }
        let back = import_trajectory(&path).unwrap();
        for ((ta, a), (tb, b)) in traj.entries().iter().zip(back.entries()) {
            assert!((ta - tb).abs() < 1e-6);
            assert!((a.rotation - b.rotation).amax() < 1e-5);
            assert!((a.translation - b.translation).amax() < 1e-5);
        }
    }

    #[test]
    fn rejects_malformed_lines() {
        let p = Path::new("x");
        assert!(matches!(parse_trajectory("1 2 3\n", p), Err(Error::Parse { line: 1, .. })));
        assert!(parse_trajectory("# c\n\n1 0 0 0 0 0 0 1\n", p).is_ok());
    }
}

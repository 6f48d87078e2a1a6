//! ASCII PLY snapshot of a map, one vertex per splat.
//!
//! Vertex properties, in order (all `double`):
//! `x y z scale_0 scale_1 scale_2 rot_w rot_x rot_y rot_z red green blue opacity`.
//! Colors are linear values in `[0, 1]`.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use super::{GaussianMap, GaussianSplat};
use crate::error::{Error, Result};

const PROPERTIES: [&str; 14] = [
    "x", "y", "z", "scale_0", "scale_1", "scale_2", "rot_w", "rot_x", "rot_y", "rot_z", "red", "green", "blue",
    "opacity",
];

pub fn write_ply(map: &GaussianMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\ncomment gaussian splat map\n");
    let _ = writeln!(out, "element vertex {}", map.splats.len());
    for p in PROPERTIES {
        let _ = writeln!(out, "property double {p}");
    }
    out.push_str("end_header\n");
    for s in &map.splats {
        let q = s.rotation.into_inner();
        let values = [
            s.center.x, s.center.y, s.center.z, s.scale.x, s.scale.y, s.scale.z, q.w, q.i, q.j, q.k, s.color.x,
            s.color.y, s.color.z, s.opacity,
        ];
        let line: Vec<String> = values.iter().map(|v| format!("{v:e}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_ply(path: impl AsRef<Path>) -> Result<GaussianMap> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    let mut count = None;
    let mut props = Vec::new();
    for (no, line) in lines.by_ref() {
        let line = line.trim();
        if line == "end_header" {
            break;
        }
        let mut words = line.split_whitespace();
        match words.next() {
            Some("element") => {
                if words.next() == Some("vertex") {
                    count = words.next().and_then(|n| n.parse::<usize>().ok());
                }
            }
            Some("property") => props.push(words.last().unwrap_or_default().to_string()),
            Some("format") if !line.contains("ascii") => {
                return Err(parse_err(no + 1, "only ascii PLY is supported".into()))
            }
            _ => {}
        }
    }
    if props != PROPERTIES {
        return Err(parse_err(0, format!("unexpected vertex properties {props:?}")));
    }
    let count = count.ok_or_else(|| parse_err(0, "missing vertex count".into()))?;
    let mut splats = Vec::with_capacity(count);
    for (no, line) in lines.take(count) {
        let v: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| parse_err(no + 1, format!("{e}")))?;
        if v.len() != PROPERTIES.len() {
            return Err(parse_err(no + 1, format!("expected 14 values, found {}", v.len())));
        }
        let q = UnitQuaternion::from_quaternion(Quaternion::new(v[6], v[7], v[8], v[9]));
        let splat = GaussianSplat::new(
            Vector3::new(v[0], v[1], v[2]),
            Vector3::new(v[3], v[4], v[5]),
            q,
            Vector3::new(v[10], v[11], v[12]),
            v[13],
        )
        .map_err(|e| parse_err(no + 1, e.to_string()))?;
        splats.push(splat);
    }
    if splats.len() != count {
        return Err(parse_err(0, format!("expected {count} vertices, found {}", splats.len())));
    }
    Ok(GaussianMap::from_splats(splats))
}

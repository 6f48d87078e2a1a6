//! Procedural desk scenes with analytic ray casting.
//!
//! World is z-up with the table top at z = 0. Every pixel depth is the exact
//! ray/primitive distance along the optical axis, so frames double as ground
//! truth for the correspondence oracle and the mapping tests.

use std::f64::consts::TAU;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalkit::Trajectory;
use crate::frame::{ColorImage, DepthImage, Frame};
use crate::geometry::{CameraIntrinsics, Pose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    /// Infinite plane through `point` with unit `normal`.
    Plane { point: Vector3<f64>, normal: Vector3<f64> },
    /// Box rotated by `yaw` radians about the world z axis.
    Cuboid {
        center: Vector3<f64>,
        half_extents: Vector3<f64>,
        yaw: f64,
    },
    Sphere { center: Vector3<f64>, radius: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub color: [f64; 3],
    /// Spatial frequency of the sinusoidal texture (radians per meter).
    pub texture_freq: f64,
}

/// Ray hit. `surface` identifies the primitive and, for boxes, the face.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    /// Distance along a ray whose direction has unit z in the camera frame, i.e. depth.
    pub t: f64,
    pub point: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub surface: (usize, u8),
    pub planar: bool,
}

/// Camera path: orbit around `target` with a sinusoidal sweep in azimuth,
/// a bob in height and per-frame positional jitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub target: Vector3<f64>,
    pub radius: f64,
    pub height: f64,
    pub base_azimuth: f64,
    /// Azimuth amplitude (radians).
    pub sweep: f64,
    /// Frames per azimuth period.
    pub period: f64,
    /// Height amplitude (meters).
    pub bob: f64,
    pub bob_period: f64,
    /// Standard deviation of the per-frame position jitter (meters).
    pub jitter: f64,
    pub fps: f64,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self {
            target: Vector3::new(0.0, 0.1, 0.05),
            radius: 1.0,
            height: 0.6,
            base_azimuth: -std::f64::consts::FRAC_PI_2,
            sweep: 0.6,
            period: 240.0,
            bob: 0.1,
            bob_period: 170.0,
            jitter: 0.002,
            fps: 30.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticScene {
    pub primitives: Vec<Primitive>,
    pub intrinsics: CameraIntrinsics,
    pub trajectory: TrajectorySpec,
    /// Standard deviation of additive depth noise (meters); 0 disables.
    pub depth_noise: f64,
    /// Pixels whose true depth exceeds this range get depth scaled by U[1.05, 1.5].
    pub far_corruption: Option<f64>,
    pub seed: u64,
}

impl Default for SyntheticScene {
    fn default() -> Self {
        Self::desk(0)
    }
}

pub fn default_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics {
        fx: 56.0,
        fy: 56.0,
        cx: 32.0,
        cy: 32.0,
        width: 64,
        height: 64,
        near: 0.05,
        far: 10.0,
    }
}

impl SyntheticScene {
    /// Table top with a back wall, two boxes and two balls.
    pub fn desk(seed: u64) -> Self {
        let prim = |shape, color, texture_freq| Primitive {
            shape,
            color,
            texture_freq,
        };
        Self {
            primitives: vec![
                prim(
                    Shape::Plane {
                        point: Vector3::zeros(),
                        normal: Vector3::z(),
                    },
                    [0.55, 0.45, 0.35],
                    14.0,
                ),
                prim(
                    Shape::Plane {
                        point: Vector3::new(0.0, 1.2, 0.0),
                        normal: -Vector3::y(),
                    },
                    [0.35, 0.5, 0.6],
                    9.0,
                ),
                prim(
                    Shape::Cuboid {
                        center: Vector3::new(0.18, 0.1, 0.1),
                        half_extents: Vector3::new(0.1, 0.08, 0.1),
                        yaw: 0.4,
                    },
                    [0.75, 0.3, 0.25],
                    22.0,
                ),
                prim(
                    Shape::Cuboid {
                        center: Vector3::new(-0.25, 0.3, 0.075),
                        half_extents: Vector3::new(0.07, 0.12, 0.075),
                        yaw: -0.3,
                    },
                    [0.3, 0.65, 0.3],
                    25.0,
                ),
                prim(
                    Shape::Sphere {
                        center: Vector3::new(0.0, -0.2, 0.08),
                        radius: 0.08,
                    },
                    [0.8, 0.75, 0.2],
                    30.0,
                ),
                prim(
                    Shape::Sphere {
                        center: Vector3::new(-0.3, -0.15, 0.06),
                        radius: 0.06,
                    },
                    [0.3, 0.3, 0.8],
                    30.0,
                ),
            ],
            intrinsics: default_intrinsics(),
            trajectory: TrajectorySpec::default(),
            depth_noise: 0.0,
            far_corruption: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        let t = &self.trajectory;
        if !(t.radius > 0.0 && t.period > 0.0 && t.bob_period > 0.0 && t.fps > 0.0 && t.jitter >= 0.0) {
            return Err(Error::invalid("trajectory radius, periods and fps must be positive"));
        }
        if !(self.depth_noise >= 0.0) {
            return Err(Error::invalid("depth_noise must be non-negative"));
        }
        for p in &self.primitives {
            match p.shape {
                Shape::Plane { normal, .. } if (normal.norm() - 1.0).abs() > 1e-9 => {
                    return Err(Error::invalid("plane normal must be unit length"))
                }
                Shape::Cuboid { half_extents, .. } if half_extents.iter().any(|h| !(*h > 0.0)) => {
                    return Err(Error::invalid("box half extents must be positive"))
                }
                Shape::Sphere { radius, .. } if !(radius > 0.0) => {
                    return Err(Error::invalid("sphere radius must be positive"))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Nearest hit with `t > 0` of the ray `origin + t·dir`.
    pub fn cast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for (i, p) in self.primitives.iter().enumerate() {
            if let Some(h) = intersect(i, &p.shape, origin, dir) {
                if best.is_none_or(|b| h.t < b.t) {
                    best = Some(h);
                }
            }
        }
        best
    }

    /// Hit seen through continuous pixel `(u, v)` from a world-from-camera pose.
    pub fn cast_pixel(&self, pose: &Pose, u: f64, v: f64) -> Option<Hit> {
        let k = &self.intrinsics;
        let d_cam = Vector3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
        self.cast(&pose.translation, &(pose.rotation * d_cam))
    }

    /// Shaded texture color at a surface point.
    pub fn shade(&self, hit: &Hit) -> [f64; 3] {
        let prim = &self.primitives[hit.surface.0];
        let p = hit.point;
        let f = prim.texture_freq;
        let light = Vector3::new(0.3, -0.5, 0.8).normalize();
        let lambert = 0.65 + 0.35 * hit.normal.dot(&light).abs();
        let dirs = [
            Vector3::new(1.0, 0.6, 0.3),
            Vector3::new(-0.4, 1.0, 0.7),
            Vector3::new(0.5, -0.8, 1.0),
        ];
        let mut out = [0.0; 3];
        for c in 0..3 {
            let a = (f * dirs[c].dot(&p) + c as f64).sin();
            let b = (0.5 * f * dirs[(c + 1) % 3].dot(&p)).cos();
            out[c] = (lambert * (prim.color[c] + 0.18 * a + 0.1 * b)).clamp(0.0, 1.0);
        }
        out
    }

    /// Ground-truth world-from-camera pose of frame `i`.
    pub fn pose_at(&self, i: usize) -> Pose {
        let t = &self.trajectory;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let phase: f64 = rng.random_range(0.0..TAU);
        let bob_phase: f64 = rng.random_range(0.0..TAU);
        let fi = i as f64;
        let azimuth = t.base_azimuth + t.sweep * (TAU * fi / t.period + phase).sin();
        let height = t.height + t.bob * (TAU * fi / t.bob_period + bob_phase).sin();
        let mut position = t.target + Vector3::new(t.radius * azimuth.cos(), t.radius * azimuth.sin(), height);
        if t.jitter > 0.0 {
            let mut jr = ChaCha8Rng::seed_from_u64(mix(self.seed, i as u64, 0x6a17));
            let n = Normal::new(0.0, t.jitter).expect("finite jitter");
            position += Vector3::new(n.sample(&mut jr), n.sample(&mut jr), n.sample(&mut jr));
        }
        look_at(&position, &t.target)
    }

    /// Renders frame `i` with exact depth (plus the configured sensor corruption).
    pub fn render_frame(&self, i: usize) -> Frame {
        let k = &self.intrinsics;
        let pose = self.pose_at(i);
        let mut color = ColorImage::new(k.width, k.height);
        let mut depth = DepthImage::new(k.width, k.height);
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.seed, i as u64, 0xd3b7));
        let noise = (self.depth_noise > 0.0).then(|| Normal::new(0.0, self.depth_noise).expect("finite noise"));
        for y in 0..k.height {
            for x in 0..k.width {
                let Some(hit) = self.cast_pixel(&pose, x as f64 + 0.5, y as f64 + 0.5) else {
                    continue;
                };
                if !(hit.t > k.near && hit.t < k.far) {
                    continue;
                }
                color.set(x, y, self.shade(&hit));
                let mut d = hit.t;
                if let Some(n) = &noise {
                    d = (d + n.sample(&mut rng)).max(k.near);
                }
                if let Some(range) = self.far_corruption {
                    if hit.t > range {
                        d *= rng.random_range(1.05..1.5);
                    }
                }
                depth.set(x, y, d);
            }
        }
        Frame {
            id: i,
            timestamp: i as f64 / self.trajectory.fps,
            color,
            depth,
            intrinsics: *k,
        }
    }
}

/// Frames `0..n_frames` of a scene with their ground-truth trajectory.
pub fn generate_synthetic(scene: &SyntheticScene, n_frames: usize) -> Result<(Vec<Frame>, Trajectory)> {
    scene.validate()?;
    use rayon::prelude::*;
    let frames: Vec<Frame> = (0..n_frames).into_par_iter().map(|i| scene.render_frame(i)).collect();
    let gt = Trajectory::new(frames.iter().map(|f| (f.timestamp, scene.pose_at(f.id))).collect())?;
    Ok((frames, gt))
}

/// World-from-camera pose at `eye` looking at `target`, world z up.
pub fn look_at(eye: &Vector3<f64>, target: &Vector3<f64>) -> Pose {
    let forward = (target - eye).normalize();
    let right = forward.cross(&Vector3::z()).normalize();
    let down = forward.cross(&right);
    Pose {
        rotation: Matrix3::from_columns(&[right, down, forward]),
        translation: *eye,
    }
}

pub(crate) fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for v in [a, b] {
        h ^= v.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(h << 6).wrapping_add(h >> 2);
        h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    }
    h
}

fn intersect(index: usize, shape: &Shape, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<Hit> {
    match *shape {
        Shape::Plane { point, normal } => {
            let den = d.dot(&normal);
            if den.abs() < 1e-15 {
                return None;
            }
            let t = (point - o).dot(&normal) / den;
            (t > 0.0).then(|| Hit {
                t,
                point: o + d * t,
                normal,
                surface: (index, 0),
                planar: true,
            })
        }
        Shape::Sphere { center, radius } => {
            let oc = o - center;
            let a = d.norm_squared();
            let b = oc.dot(d);
            let c = oc.norm_squared() - radius * radius;
            let disc = b * b - a * c;
            if disc < 0.0 {
                return None;
            }
            let sq = disc.sqrt();
            let t = [(-b - sq) / a, (-b + sq) / a].into_iter().find(|t| *t > 0.0)?;
            let point = o + d * t;
            Some(Hit {
                t,
                point,
                normal: (point - center) / radius,
                surface: (index, 0),
                planar: false,
            })
        }
        Shape::Cuboid {
            center,
            half_extents,
            yaw,
        } => {
            // Slab test in the box frame.
            let r = Matrix3::new(yaw.cos(), -yaw.sin(), 0.0, yaw.sin(), yaw.cos(), 0.0, 0.0, 0.0, 1.0);
            let lo = r.transpose() * (o - center);
            let ld = r.transpose() * d;
            let mut t_enter = f64::NEG_INFINITY;
            let mut t_exit = f64::INFINITY;
            let mut face = 0u8;
            for a in 0..3 {
                if ld[a].abs() < 1e-15 {
                    if lo[a].abs() > half_extents[a] {
                        return None;
                    }
                    continue;
                }
                let t1 = (-half_extents[a] - lo[a]) / ld[a];
                let t2 = (half_extents[a] - lo[a]) / ld[a];
                let (near, far, side) = if t1 < t2 { (t1, t2, 0) } else { (t2, t1, 1) };
                if near > t_enter {
                    t_enter = near;
                    face = 2 * a as u8 + side;
                }
                t_exit = t_exit.min(far);
            }
            if !(t_enter <= t_exit && t_enter > 0.0) {
                return None;
            }
            let axis = (face / 2) as usize;
            let mut n_local = Vector3::zeros();
            n_local[axis] = if face % 2 == 0 { -1.0 } else { 1.0 };
            Some(Hit {
                t: t_enter,
                point: o + d * t_enter,
                normal: r * n_local,
                surface: (index, face),
                planar: true,
            })
        }
    }
}

//! Pinhole camera model, rigid transforms and closed-form point-set registration.
//!
//! Poses map points from a source frame into a target frame:
//! `x_target = rotation * x_source + translation`. Camera poses stored by the
//! tracker and the map are world-from-camera.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `RᵀR = I` and `det R = 1` accepted by [`Pose::new`].
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Relative size of the second singular value of the cross-covariance below
/// which a registration problem is treated as collinear.
pub const DEGENERACY_RATIO: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub near: f64,
    pub far: f64,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        near: f64,
        far: f64,
    ) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            near,
            far,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(Error::invalid(format!(
                "focal lengths must be positive (fx = {}, fy = {})",
                self.fx, self.fy
            )));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::invalid("principal point must be finite"));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(Error::invalid(format!(
                "clip range must satisfy 0 < near < far (near = {}, far = {})",
                self.near, self.far
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("image size must be at least 1x1"));
        }
        Ok(())
    }

    /// Continuous pixel coordinates covered by the image: `[0, width) x [0, height)`.
    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Same camera at a different resolution, scaling focal lengths and principal point.
    pub fn scaled(&self, width: usize, height: usize) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
            width,
            height,
            ..*self
        }
    }
}

/// Rigid body transform stored in matrix form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Checked constructor; rejects matrices that are not proper rotations.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let pose = Self {
            rotation,
            translation,
        };
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("pose translation must be finite"));
        }
        if !pose.is_valid(ROTATION_TOLERANCE) {
            return Err(Error::invalid("pose rotation is not orthonormal with det = +1"));
        }
        Ok(pose)
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Rotation by `angle` radians about `axis` (normalized internally), then translation.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        Self {
            rotation: so3_exp(&(axis.normalize() * angle)),
            translation,
        }
    }

    pub fn rotation_z(angle: f64) -> Self {
        Self::from_axis_angle(&Vector3::z(), angle, Vector3::zeros())
    }

    pub fn from_quaternion(q: &UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: q.to_rotation_matrix().into_inner(),
            translation,
        }
    }

    /// Unit quaternion of the rotation, with a non-negative scalar part.
    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        let rot = Rotation3::from_matrix_unchecked(self.rotation);
        let q = UnitQuaternion::from_rotation_matrix(&rot);
        if q.w < 0.0 {
            UnitQuaternion::new_unchecked(-q.into_inner())
        } else {
            q
        }
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        let r = &self.rotation;
        r.iter().all(|v| v.is_finite())
            && (r.transpose() * r - Matrix3::identity()).amax() <= tol
            && (r.determinant() - 1.0).abs() <= tol
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Left-multiplied perturbation `Exp(ξ) ∘ self` with `ξ = (ω, v)`: the
    /// rotation part is the rotation vector `ω`, the translation part `v` is
    /// added after rotating.
    pub fn retract(&self, xi: &Vector6<f64>) -> Pose {
        let omega = Vector3::new(xi[0], xi[1], xi[2]);
        let v = Vector3::new(xi[3], xi[4], xi[5]);
        let delta = Pose {
            rotation: so3_exp(&omega),
            translation: v,
        };
        delta.compose(self)
    }

    /// Re-orthonormalize the rotation (polar projection via SVD).
    pub fn orthonormalized(&self) -> Pose {
        let svd = self.rotation.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut r = u * vt;
        if r.determinant() < 0.0 {
            let mut u2 = u;
            u2.column_mut(2).neg_mut();
            r = u2 * vt;
        }
        Pose {
            rotation: r,
            translation: self.translation,
        }
    }

    /// Geodesic angle (radians) between the rotations of two poses.
    pub fn rotation_angle_to(&self, other: &Pose) -> f64 {
        let rel = self.rotation.transpose() * other.rotation;
        let c = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        c.acos()
    }

    pub fn translation_distance(&self, other: &Pose) -> f64 {
        (self.translation - other.translation).norm()
    }
}

pub fn so3_exp(omega: &Vector3<f64>) -> Matrix3<f64> {
    Rotation3::new(*omega).into_inner()
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Points in one coordinate frame (camera or world, by context).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointSet {
    points: Vec<Vector3<f64>>,
}

impl PointSet {
    pub fn new(points: Vec<Vector3<f64>>) -> Result<Self> {
        if points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::invalid("point set contains non-finite coordinates"));
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn into_inner(self) -> Vec<Vector3<f64>> {
        self.points
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Vector3<f64>> {
        self.points.iter()
    }

    pub fn push(&mut self, p: Vector3<f64>) -> Result<()> {
        if !p.iter().all(|c| c.is_finite()) {
            return Err(Error::invalid("non-finite point"));
        }
        self.points.push(p);
        Ok(())
    }

    pub fn transformed(&self, pose: &Pose) -> PointSet {
        PointSet {
            points: self.points.iter().map(|p| pose.transform_point(p)).collect(),
        }
    }

    pub fn centroid(&self) -> Option<Vector3<f64>> {
        if self.points.is_empty() {
            return None;
        }
        Some(centroid(&self.points))
    }
}

impl FromIterator<Vector3<f64>> for PointSet {
    fn from_iter<I: IntoIterator<Item = Vector3<f64>>>(iter: I) -> Self {
        // Callers building from computed coordinates are trusted to stay finite.
        Self {
            points: iter.into_iter().collect(),
        }
    }
}

/// A 2D correspondence between frame t−1 (`u0`, `v0`) and frame t (`u1`, `v1`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelMatch {
    pub u0: f64,
    pub v0: f64,
    pub u1: f64,
    pub v1: f64,
    pub confidence: f64,
}

impl PixelMatch {
    pub fn new(u0: f64, v0: f64, u1: f64, v1: f64, confidence: f64) -> Self {
        Self {
            u0,
            v0,
            u1,
            v1,
            confidence,
        }
    }
}

pub fn back_project(u: f64, v: f64, depth: f64, k: &CameraIntrinsics) -> Result<Vector3<f64>> {
    if !(depth > 0.0 && depth.is_finite()) {
        return Err(Error::InvalidDepth(depth));
    }
    Ok(Vector3::new(
        (u - k.cx) / k.fx * depth,
        (v - k.cy) / k.fy * depth,
        depth,
    ))
}

/// Pixel coordinates and depth of a camera-frame point.
pub fn project(p: &Vector3<f64>, k: &CameraIntrinsics) -> Result<(f64, f64, f64)> {
    if !(p.z > 0.0) {
        return Err(Error::BehindCamera(p.z));
    }
    Ok((k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy, p.z))
}

pub(crate) fn centroid(points: &[Vector3<f64>]) -> Vector3<f64> {
    let sum = points.iter().fold(Vector3::zeros(), |acc, p| acc + p);
    sum / points.len() as f64
}

/// Least-squares rigid transform mapping `src` onto `dst` (`dst ≈ R src + t`).
///
/// Centroids are removed, the cross-covariance `H = Σ (src_i − c_src)(dst_i − c_dst)ᵀ`
/// is decomposed as `U Σ Vᵀ` and `R = V Uᵀ`. When that product is a reflection
/// the column of `V` belonging to the smallest singular value is negated.
/// Coplanar inputs are fine; collinear or coincident inputs are rejected.
pub fn estimate_rigid_transform(src: &PointSet, dst: &PointSet) -> Result<Pose> {
    if src.len() != dst.len() {
        return Err(Error::invalid(format!(
            "point sets differ in size ({} vs {})",
            src.len(),
            dst.len()
        )));
    }
    if src.len() < 3 {
        return Err(Error::InsufficientCorrespondences {
            found: src.len(),
            needed: 3,
        });
    }
    let fit = rigid_fit(src.points(), dst.points());
    let s = fit.singular_values;
    if !(s[0] > 0.0) || s[1] < DEGENERACY_RATIO * s[0] {
        return Err(Error::DegenerateGeometry("correspondences are collinear or coincident"));
    }
    Ok(fit.pose)
}

pub(crate) struct RigidFit {
    pub pose: Pose,
    /// Singular values of the cross-covariance, descending.
    pub singular_values: [f64; 3],
}

/// Closed-form fit without degeneracy checks. For rank-deficient inputs the
/// returned rotation is one of the minimizers.
pub(crate) fn rigid_fit(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> RigidFit {
    debug_assert_eq!(src.len(), dst.len());
    let c_src = centroid(src);
    let c_dst = centroid(dst);
    let mut h = Matrix3::zeros();
    for (a, b) in src.iter().zip(dst) {
        h += (a - c_src) * (b - c_dst).transpose();
    }
    let (u, sigma, mut v) = svd3(&h);
    let mut r = v * u.transpose();
    if r.determinant() < 0.0 {
        v.column_mut(2).neg_mut();
        r = v * u.transpose();
    }
    let t = c_dst - r * c_src;
    RigidFit {
        pose: Pose {
            rotation: r,
            translation: t,
        },
        singular_values: sigma,
    }
}

/// SVD of a 3×3 matrix with singular values sorted in descending order.
/// Uses the dense solver and falls back to one-sided Jacobi if it does not converge.
pub(crate) fn svd3(m: &Matrix3<f64>) -> (Matrix3<f64>, [f64; 3], Matrix3<f64>) {
    let (u, s, v) = match m.try_svd(true, true, f64::EPSILON, 200) {
        Some(svd) => match (svd.u, svd.v_t) {
            (Some(u), Some(vt)) => (u, svd.singular_values.into(), vt.transpose()),
            _ => jacobi_svd3(m),
        },
        None => jacobi_svd3(m),
    };
    let s: [f64; 3] = s;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let mut us = Matrix3::zeros();
    let mut vs = Matrix3::zeros();
    let mut ss = [0.0; 3];
    for (dst, &src) in order.iter().enumerate() {
        us.set_column(dst, &u.column(src));
        vs.set_column(dst, &v.column(src));
        ss[dst] = s[src];
    }
    (us, ss, vs)
}

/// One-sided Jacobi SVD (`m = U diag(s) Vᵀ`), unsorted.
pub(crate) fn jacobi_svd3(m: &Matrix3<f64>) -> (Matrix3<f64>, [f64; 3], Matrix3<f64>) {
    let mut b = *m;
    let mut v = Matrix3::<f64>::identity();
    for _sweep in 0..60 {
        let mut rotated = false;
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            let alpha = b.column(i).norm_squared();
            let beta = b.column(j).norm_squared();
            let gamma = b.column(i).dot(&b.column(j));
            if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() || gamma == 0.0 {
                continue;
            }
            rotated = true;
            let zeta = (beta - alpha) / (2.0 * gamma);
            let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
            let c = 1.0 / (1.0 + t * t).sqrt();
            let s = c * t;
            for mat in [&mut b, &mut v] {
                let ci = mat.column(i).into_owned();
                let cj = mat.column(j).into_owned();
                mat.set_column(i, &(ci * c - cj * s));
                mat.set_column(j, &(ci * s + cj * c));
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sigma = [0.0; 3];
    let mut u = Matrix3::zeros();
    let scale = b.amax().max(f64::MIN_POSITIVE);
    let mut filled = [false; 3];
    for k in 0..3 {
        let n = b.column(k).norm();
        sigma[k] = n;
        if n > 1e-14 * scale {
            u.set_column(k, &(b.column(k) / n));
            filled[k] = true;
        }
    }
    complete_orthonormal(&mut u, &mut filled);
    (u, sigma, v)
}

/// Fill the columns of `u` not marked in `filled` so that `u` is orthonormal.
fn complete_orthonormal(u: &mut Matrix3<f64>, filled: &mut [bool; 3]) {
    for k in 0..3 {
        if filled[k] {
            continue;
        }
        let known: Vec<Vector3<f64>> = (0..3)
            .filter(|&j| filled[j])
            .map(|j| u.column(j).into_owned())
            .collect();
        let col = match known.len() {
            2 => known[0].cross(&known[1]).normalize(),
            _ => {
                // Gram-Schmidt against the known columns, starting from the
                // least aligned coordinate axis.
                let mut best = Vector3::zeros();
                for axis in [Vector3::x(), Vector3::y(), Vector3::z()] {
                    let mut c = axis;
                    for q in &known {
                        c -= q * q.dot(&c);
                    }
                    if c.norm() > best.norm() {
                        best = c;
                    }
                }
                best.normalize()
            }
        };
        u.set_column(k, &col);
        filled[k] = true;
    }
}

//! Quaternion and rigid-pose arithmetic.
//!
//! Quaternions are stored w-first. A [`Pose`] is world-from-camera: its
//! rotation maps camera-frame directions into the world frame and its
//! translation is the camera center in world units.

use nalgebra::{Matrix3, Matrix4, Vector3};

/// Threshold above which slerp degenerates to normalized lerp.
const SLERP_LINEAR_DOT: f64 = 1.0 - 1e-6;

/// Unit quaternion `w + xi + yj + zk`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Default for Quat {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Quat {
    pub const IDENTITY: Quat = Quat { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    /// Builds a quaternion from raw components and normalizes it.
    ///
    /// A zero-length input maps to the identity.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quat { w, x, y, z }.normalized()
    }

    /// Raw components without normalization. Used by optimizers and file I/O
    /// where the caller owns the unit-norm invariant.
    pub const fn from_raw(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quat { w, x, y, z }
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::IDENTITY;
        }
        let a = axis / n;
        let (s, c) = (0.5 * angle).sin_cos();
        Quat::new(c, a.x * s, a.y * s, a.z * s)
    }

    /// Rotation matrix to quaternion (Shepperd's method).
    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        let tr = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
        if tr > 0.0 {
            let s = (tr + 1.0).sqrt() * 2.0;
            Quat::new(
                0.25 * s,
                (m[(2, 1)] - m[(1, 2)]) / s,
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(1, 0)] - m[(0, 1)]) / s,
            )
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
            Quat::new(
                (m[(2, 1)] - m[(1, 2)]) / s,
                0.25 * s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
            )
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
            Quat::new(
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                0.25 * s,
                (m[(1, 2)] + m[(2, 1)]) / s,
            )
        } else {
            let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
            Quat::new(
                (m[(1, 0)] - m[(0, 1)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
                (m[(1, 2)] + m[(2, 1)]) / s,
                0.25 * s,
            )
        }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Self {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Self::IDENTITY;
        }
        Quat { w: self.w / n, x: self.x / n, y: self.y / n, z: self.z / n }
    }

    pub fn dot(&self, o: &Quat) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn neg(self) -> Self {
        Quat { w: -self.w, x: -self.x, y: -self.y, z: -self.z }
    }

    /// Rotation matrix of the unit quaternion.
    pub fn to_matrix(&self) -> Matrix3<f64> {
        let Quat { w, x, y, z } = *self;
        Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.to_matrix() * v
    }
}

/// Rotation angle between two unit quaternions, in `[0, π]`.
///
/// Sign-invariant: `q` and `-q` are the same rotation. Evaluates
/// `2·acos|⟨q1, q2⟩|` in the `atan2` form, which stays accurate (and is
/// exactly zero for identical inputs) where `acos` is ill-conditioned.
pub fn rot_distance(q1: &Quat, q2: &Quat) -> f64 {
    let s = if q1.dot(q2) < 0.0 { -1.0 } else { 1.0 };
    let a = [q1.w, q1.x, q1.y, q1.z];
    let b = [q2.w * s, q2.x * s, q2.y * s, q2.z * s];
    let diff = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let sum = a.iter().zip(&b).map(|(x, y)| (x + y) * (x + y)).sum::<f64>().sqrt();
    4.0 * diff.atan2(sum)
}

/// Spherical linear interpolation along the shortest arc.
pub fn slerp(q1: &Quat, q2: &Quat, tau: f64) -> Quat {
    let mut b = *q2;
    let mut d = q1.dot(q2);
    if d < 0.0 {
        b = b.neg();
        d = -d;
    }
    if d > SLERP_LINEAR_DOT {
        return Quat::new(
            q1.w + tau * (b.w - q1.w),
            q1.x + tau * (b.x - q1.x),
            q1.y + tau * (b.y - q1.y),
            q1.z + tau * (b.z - q1.z),
        );
    }
    let theta = d.clamp(-1.0, 1.0).acos();
    let sin_theta = theta.sin();
    let ka = ((1.0 - tau) * theta).sin() / sin_theta;
    let kb = (tau * theta).sin() / sin_theta;
    Quat::new(
        ka * q1.w + kb * b.w,
        ka * q1.x + kb * b.x,
        ka * q1.y + kb * b.y,
        ka * q1.z + kb * b.z,
    )
}

/// Rigid world-from-camera transform.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose {
    pub rotation: Quat,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Quat, translation: Vector3<f64>) -> Self {
        Pose { rotation: rotation.normalized(), translation }
    }

    /// Camera at `eye` looking at `target`. Camera axes follow the
    /// x-right, y-down, z-forward convention.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, world_up: Vector3<f64>) -> Self {
        let forward = (target - eye).normalize();
        let mut right = forward.cross(&world_up);
        if right.norm() < 1e-9 {
            // looking along the up axis; any perpendicular works
            let alt = if forward.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
            right = forward.cross(&alt);
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let m = Matrix3::from_columns(&[right, down, forward]);
        Pose::new(Quat::from_matrix(&m), eye)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_matrix()
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        self.translation
    }

    /// 4×4 homogeneous world-from-camera matrix.
    pub fn to_matrix4(&self) -> Matrix4<f64> {
        let r = self.rotation_matrix();
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// World-to-camera rotation and translation: `x_cam = R x_world + t`.
    pub fn world_to_camera(&self) -> (Matrix3<f64>, Vector3<f64>) {
        let r = self.rotation_matrix().transpose();
        let t = -(r * self.translation);
        (r, t)
    }
}

/// Weighted translation + rotation distance between two poses.
pub fn pose_distance(p1: &Pose, p2: &Pose, alpha: f64, beta: f64) -> f64 {
    alpha * (p1.translation - p2.translation).norm() + beta * rot_distance(&p1.rotation, &p2.rotation)
}

/// Pose interpolated from `from` toward `to`: lerp on translation, slerp on rotation.
pub fn shift(from: &Pose, to: &Pose, tau: f64) -> Pose {
    if tau <= 0.0 {
        return *from;
    }
    if tau >= 1.0 {
        return *to;
    }
    Pose {
        rotation: slerp(&from.rotation, &to.rotation, tau),
        translation: from.translation * (1.0 - tau) + to.translation * tau,
    }
}

/// Progress fraction used for pose shifting after `round_index` enhancement rounds.
pub fn progress(round_index: usize, total_rounds: usize) -> f64 {
    if total_rounds == 0 {
        return 1.0;
    }
    (round_index as f64 / total_rounds as f64).min(1.0)
}

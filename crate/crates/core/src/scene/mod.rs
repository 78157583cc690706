//! The optimizable Gaussian cloud, cameras, synthetic scene generation and
//! scene/camera file I/O.

mod generate;
mod io;
pub mod sh;

pub use generate::{generate_scene, init_cloud, InitMode, InitSpec, SceneSpec, SyntheticScene};
pub use io::{load_cameras, load_cloud, parse_cameras, parse_cloud, save_cameras, save_cloud, write_cameras, write_cloud};

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::posemath::{Pose, Quat};

/// One anisotropic 3D Gaussian.
///
/// Scale is stored as its logarithm and opacity as a logit, so every value
/// an optimizer can reach maps to a valid Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub position: Vector3<f64>,
    pub rotation: Quat,
    pub log_scale: Vector3<f64>,
    pub opacity_logit: f64,
    /// Coefficient-major: `sh[k][channel]`.
    pub sh: Vec<[f64; 3]>,
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

impl Gaussian {
    /// Isotropic Gaussian with a flat color at the given SH degree.
    pub fn flat(position: Vector3<f64>, scale: f64, opacity: f64, color: Vector3<f64>, sh_degree: usize) -> Self {
        let mut shc = vec![[0.0; 3]; sh::coeff_count(sh_degree)];
        for ch in 0..3 {
            shc[0][ch] = sh::dc_from_color(color[ch]);
        }
        Gaussian {
            position,
            rotation: Quat::IDENTITY,
            log_scale: Vector3::repeat(scale.ln()),
            opacity_logit: logit(opacity),
            sh: shc,
        }
    }

    pub fn scale(&self) -> Vector3<f64> {
        self.log_scale.map(f64::exp)
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    /// `R S Sᵀ Rᵀ` with `R` from the normalized rotation.
    pub fn covariance(&self) -> Matrix3<f64> {
        let r = self.rotation.normalized().to_matrix();
        let s2 = self.log_scale.map(|l| (2.0 * l).exp());
        r * Matrix3::from_diagonal(&s2) * r.transpose()
    }

    /// Unnormalized Gaussian density, 1 at the mean.
    pub fn eval(&self, x: &Vector3<f64>) -> f64 {
        let d = x - self.position;
        // Σ⁻¹ = R S⁻² Rᵀ
        let r = self.rotation.normalized().to_matrix();
        let local = r.transpose() * d;
        let inv_s2 = self.log_scale.map(|l| (-2.0 * l).exp());
        let q = local.component_mul(&local).dot(&inv_s2);
        (-0.5 * q).exp()
    }

    /// View-dependent color seen from `camera_center`, unclamped.
    pub fn color_from(&self, sh_degree: usize, camera_center: &Vector3<f64>) -> Vector3<f64> {
        let dir = (self.position - camera_center).normalize();
        sh::sh_to_color(sh_degree, &self.sh, &dir)
    }
}

/// Free-function form of [`Gaussian::covariance`].
pub fn covariance(g: &Gaussian) -> Matrix3<f64> {
    g.covariance()
}

/// Free-function form of [`Gaussian::eval`].
pub fn eval_gaussian(g: &Gaussian, x: &Vector3<f64>) -> f64 {
    g.eval(x)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GaussianCloud {
    pub gaussians: Vec<Gaussian>,
    pub sh_degree: usize,
}

impl GaussianCloud {
    pub fn new(sh_degree: usize) -> Self {
        GaussianCloud { gaussians: Vec::new(), sh_degree }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn coeffs_per_channel(&self) -> usize {
        sh::coeff_count(self.sh_degree)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sh_degree > sh::MAX_SH_DEGREE {
            return Err(Error::Invalid(format!("sh_degree {} exceeds {}", self.sh_degree, sh::MAX_SH_DEGREE)));
        }
        let n = self.coeffs_per_channel();
        for (i, g) in self.gaussians.iter().enumerate() {
            if g.sh.len() != n {
                return Err(Error::Invalid(format!("gaussian {i}: {} SH coefficients, expected {n}", g.sh.len())));
            }
        }
        Ok(())
    }

    /// Re-normalizes every rotation quaternion in place.
    pub fn normalize_rotations(&mut self) {
        for g in &mut self.gaussians {
            g.rotation = g.rotation.normalized();
        }
    }

    /// Axis-aligned bounds of the Gaussian means.
    pub fn bounds(&self) -> Option<(Vector3<f64>, Vector3<f64>)> {
        let first = self.gaussians.first()?.position;
        Some(self.gaussians.iter().fold((first, first), |(lo, hi), g| {
            (lo.inf(&g.position), hi.sup(&g.position))
        }))
    }
}

/// Pinhole camera with a world-from-camera pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub pose: Pose,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub near: f64,
    pub far: f64,
}

impl Camera {
    /// Camera with principal point at the image center.
    pub fn new(pose: Pose, focal: f64, width: usize, height: usize) -> Self {
        Camera {
            pose,
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            near: 0.05,
            far: 100.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Invalid("focal lengths must be positive".into()));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(Error::Invalid("camera requires 0 < near < far".into()));
        }
        if self.width < 8 || self.height < 8 {
            return Err(Error::Invalid("camera image must be at least 8x8".into()));
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn center(&self) -> Vector3<f64> {
        self.pose.center()
    }

    pub fn with_pose(&self, pose: Pose) -> Self {
        Camera { pose, ..*self }
    }

    /// Projects a world point to pixel coordinates; `None` when behind the near plane.
    pub fn project_point(&self, p: &Vector3<f64>) -> Option<nalgebra::Vector2<f64>> {
        let (r, t) = self.pose.world_to_camera();
        let c = r * p + t;
        if c.z <= self.near {
            return None;
        }
        Some(nalgebra::Vector2::new(self.fx * c.x / c.z + self.cx, self.fy * c.y / c.z + self.cy))
    }
}

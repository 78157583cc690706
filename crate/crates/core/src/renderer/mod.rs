//! Differentiable tile-based rasterizer for Gaussian clouds.
//!
//! Forward: project every Gaussian to a screen-space splat, sort globally
//! by depth (ties broken by index), bin into 16×16 tiles and alpha-blend
//! front to back. Backward: re-run the per-pixel blend of each tile,
//! accumulate splat-space gradients into a per-tile buffer, merge the
//! buffers in tile order and chain through the projection.
//!
//! Tiles can be processed in parallel (`parallel` feature). Output is
//! bit-identical to serial execution because every tile writes disjoint
//! pixels and gradient partials are reduced in a fixed order.

mod project;
mod raster;

pub use project::{project, project_with, Splat2D};
pub use raster::{render_backward, render_backward_with, render_detailed, RenderOutput};

use nalgebra::Vector3;

use crate::image::ImageBuffer;
use crate::scene::{Camera, GaussianCloud};

pub const TILE_SIZE: usize = 16;
/// Screen-space dilation added to every projected covariance (px²).
pub const LOW_PASS: f64 = 0.3;
pub const ALPHA_MAX: f64 = 0.999;
/// Blending stops once transmittance falls below this.
pub const MIN_TRANSMITTANCE: f64 = 1e-4;
pub const DEFAULT_CUTOFF_SIGMA: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Parallelism {
    Serial,
    /// Tiles are processed on the rayon pool. Falls back to serial without
    /// the `parallel` feature.
    #[default]
    Tiles,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    pub parallelism: Parallelism,
    /// Splat support radius in standard deviations. `f64::INFINITY` lets
    /// every splat touch every pixel, which makes the image a smooth
    /// function of the parameters (used for gradient checks).
    pub cutoff_sigma: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions { parallelism: Parallelism::default(), cutoff_sigma: DEFAULT_CUTOFF_SIGMA }
    }
}

impl RenderOptions {
    pub fn serial() -> Self {
        RenderOptions { parallelism: Parallelism::Serial, ..Default::default() }
    }
}

/// Per-Gaussian gradient, one entry per field of [`crate::scene::Gaussian`].
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianGrad {
    pub position: Vector3<f64>,
    pub rotation: [f64; 4],
    pub log_scale: Vector3<f64>,
    pub opacity_logit: f64,
    pub sh: Vec<[f64; 3]>,
}

impl GaussianGrad {
    pub fn zeros(n_sh: usize) -> Self {
        GaussianGrad {
            position: Vector3::zeros(),
            rotation: [0.0; 4],
            log_scale: Vector3::zeros(),
            opacity_logit: 0.0,
            sh: vec![[0.0; 3]; n_sh],
        }
    }

    fn first_non_finite(&self) -> Option<&'static str> {
        if !self.position.iter().all(|v| v.is_finite()) {
            return Some("position");
        }
        if !self.rotation.iter().all(|v| v.is_finite()) {
            return Some("rotation");
        }
        if !self.log_scale.iter().all(|v| v.is_finite()) {
            return Some("log_scale");
        }
        if !self.opacity_logit.is_finite() {
            return Some("opacity_logit");
        }
        if !self.sh.iter().flatten().all(|v| v.is_finite()) {
            return Some("sh");
        }
        None
    }
}

/// Gradients for a whole cloud; same cardinality and order as the cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBuffer {
    pub grads: Vec<GaussianGrad>,
}

impl GradBuffer {
    pub fn zeros_like(cloud: &GaussianCloud) -> Self {
        let n_sh = cloud.coeffs_per_channel();
        GradBuffer { grads: (0..cloud.len()).map(|_| GaussianGrad::zeros(n_sh)).collect() }
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Element-wise `self += other`.
    pub fn add_assign(&mut self, other: &GradBuffer) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            a.position += b.position;
            for k in 0..4 {
                a.rotation[k] += b.rotation[k];
            }
            a.log_scale += b.log_scale;
            a.opacity_logit += b.opacity_logit;
            for (sa, sb) in a.sh.iter_mut().zip(&b.sh) {
                for ch in 0..3 {
                    sa[ch] += sb[ch];
                }
            }
        }
    }

    pub fn check_finite(&self) -> crate::Result<()> {
        for (index, g) in self.grads.iter().enumerate() {
            if let Some(field) = g.first_non_finite() {
                return Err(crate::Error::NonFiniteGradient { index, field });
            }
        }
        Ok(())
    }
}

/// Renders with default options.
pub fn render(cloud: &GaussianCloud, camera: &Camera, background: &Vector3<f64>) -> ImageBuffer {
    render_with(cloud, camera, background, &RenderOptions::default())
}

pub fn render_with(cloud: &GaussianCloud, camera: &Camera, background: &Vector3<f64>, opts: &RenderOptions) -> ImageBuffer {
    render_detailed(cloud, camera, background, opts).image
}

/// Runs `f` over `0..n`, in parallel when requested and available.
/// Results are returned in index order either way.
pub(crate) fn map_indexed<T, F>(n: usize, parallelism: Parallelism, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallelism == Parallelism::Tiles {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = parallelism;
    (0..n).map(f).collect()
}

//! Image fixers: the pluggable prior that repairs a degraded render given
//! a clean reference view.

use std::collections::HashMap;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::metrics::psnr;
use crate::renderer::{render_with, RenderOptions};
use crate::scene::{sigmoid, Camera, GaussianCloud, SyntheticScene};

/// An image-to-image repair model conditioned on a reference image.
///
/// Implementations must be deterministic, keep dimensions, and return
/// values in `[0, 1]`.
pub trait Fixer: Send + Sync {
    fn name(&self) -> &'static str;

    /// Announces a camera that will later be passed to [`Fixer::fix`].
    fn register(&mut self, _camera: &Camera) {}

    fn fix(&self, camera: &Camera, degraded: &ImageBuffer, reference: &ImageBuffer) -> Result<ImageBuffer>;
}

/// Returns its input unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityFixer;

impl Fixer for IdentityFixer {
    fn name(&self) -> &'static str {
        "identity"
    }

    fn fix(&self, _camera: &Camera, degraded: &ImageBuffer, _reference: &ImageBuffer) -> Result<ImageBuffer> {
        Ok(degraded.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct CameraKey([u64; 15]);

impl From<&Camera> for CameraKey {
    fn from(c: &Camera) -> Self {
        let q = c.pose.rotation;
        let t = c.pose.translation;
        let v = [c.fx, c.fy, c.cx, c.cy, c.width as f64, c.height as f64, c.near, c.far, q.w, q.x, q.y, q.z, t.x, t.y, t.z];
        CameraKey(v.map(f64::to_bits))
    }
}

/// Pulls a render toward the ground-truth view, less strongly the worse
/// the render already is.
///
/// `out = clamp(d + γ_eff·(gt − d))` with
/// `γ_eff = γ·sigmoid((psnr(d, gt) − κ) / 2)`.
#[derive(Debug, Clone)]
pub struct OracleFixer {
    ground_truth: GaussianCloud,
    background: Vector3<f64>,
    pub strength: f64,
    pub knee: f64,
    render_opts: RenderOptions,
    views: HashMap<CameraKey, ImageBuffer>,
}

impl OracleFixer {
    pub fn new(scene: &SyntheticScene, strength: f64, knee: f64) -> Result<Self> {
        if !(strength > 0.0 && strength <= 1.0) {
            return Err(Error::Invalid("oracle strength must lie in (0, 1]".into()));
        }
        Ok(OracleFixer {
            ground_truth: scene.ground_truth.clone(),
            background: scene.background,
            strength,
            knee,
            render_opts: RenderOptions::default(),
            views: HashMap::new(),
        })
    }

    pub fn with_render_options(mut self, opts: RenderOptions) -> Self {
        self.render_opts = opts;
        self
    }

    /// Effective blend factor for a render of the given quality.
    pub fn effective_strength(&self, psnr_db: f64) -> f64 {
        self.strength * sigmoid((psnr_db - self.knee) / 2.0)
    }

    pub fn ground_truth_view(&self, camera: &Camera) -> Result<&ImageBuffer> {
        self.views.get(&CameraKey::from(camera)).ok_or(Error::UnregisteredCamera)
    }
}

impl Fixer for OracleFixer {
    fn name(&self) -> &'static str {
        "oracle"
    }

    fn register(&mut self, camera: &Camera) {
        let key = CameraKey::from(camera);
        if !self.views.contains_key(&key) {
            let img = render_with(&self.ground_truth, camera, &self.background, &self.render_opts);
            self.views.insert(key, img);
        }
    }

    fn fix(&self, camera: &Camera, degraded: &ImageBuffer, _reference: &ImageBuffer) -> Result<ImageBuffer> {
        let gt = self.ground_truth_view(camera)?;
        let gamma = self.effective_strength(psnr(degraded, gt)?);
        let mut out = degraded.clone();
        for (o, g) in out.data.iter_mut().zip(&gt.data) {
            *o = (*o + gamma * (g - *o)).clamp(0.0, 1.0);
        }
        Ok(out)
    }
}

/// Separable Gaussian blur; ignores the reference.
#[derive(Debug, Clone, Copy)]
pub struct BlurFixer {
    pub sigma: f64,
}

/// Normalized discrete Gaussian of radius `ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-radius..=radius).map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

impl Fixer for BlurFixer {
    fn name(&self) -> &'static str {
        "blur"
    }

    fn fix(&self, _camera: &Camera, degraded: &ImageBuffer, _reference: &ImageBuffer) -> Result<ImageBuffer> {
        if self.sigma < 1e-3 {
            return Ok(degraded.clone());
        }
        let k = gaussian_kernel(self.sigma);
        let r = (k.len() / 2) as i64;
        let (w, h) = (degraded.width as i64, degraded.height as i64);
        let pass = |src: &ImageBuffer, horizontal: bool| {
            ImageBuffer::from_fn(src.width, src.height, |x, y, c| {
                let mut s = 0.0;
                for (j, kj) in k.iter().enumerate() {
                    let o = j as i64 - r;
                    let (sx, sy) = if horizontal {
                        ((x as i64 + o).clamp(0, w - 1), y as i64)
                    } else {
                        (x as i64, (y as i64 + o).clamp(0, h - 1))
                    };
                    s += kj * src.get(sx as usize, sy as usize, c);
                }
                s
            })
        };
        Ok(pass(&pass(degraded, true), false).clamped())
    }
}

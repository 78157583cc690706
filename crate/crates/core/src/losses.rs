//! Photometric and distillation losses with their image-space gradients.

use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::metrics::ssim_with_grad;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub lambda_l1: f64,
    pub lambda_ssim: f64,
    /// Distillation weight ω(t₀).
    pub omega: f64,
    /// Fixer timestep; carried as metadata only.
    pub t0: u32,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { lambda_l1: 0.2, lambda_ssim: 0.8, omega: 0.5, t0: 199 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_l1 < 0.0 || self.lambda_ssim < 0.0 || self.omega < 0.0 {
            return Err(Error::Invalid("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// Loss value together with `∂L/∂render`.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub value: f64,
    pub grad: ImageBuffer,
}

/// `λ_l1·mean|r − g| + λ_ssim·(1 − ssim(r, g))`.
///
/// The L1 subgradient at `r = g` is taken as zero.
pub fn photo_loss(render: &ImageBuffer, gt: &ImageBuffer, cfg: &LossConfig) -> Result<LossGrad> {
    render.same_dims(gt)?;
    let n = render.len() as f64;
    let mut l1 = 0.0;
    let mut grad = ImageBuffer::new(render.width, render.height);
    for ((g, r), t) in grad.data.iter_mut().zip(&render.data).zip(&gt.data) {
        let d = r - t;
        l1 += d.abs();
        *g = cfg.lambda_l1 * sign(d) / n;
    }
    let mut value = cfg.lambda_l1 * l1 / n;
    if cfg.lambda_ssim != 0.0 {
        let (s, sg) = ssim_with_grad(render, gt)?;
        value += cfg.lambda_ssim * (1.0 - s);
        for (g, d) in grad.data.iter_mut().zip(&sg.data) {
            *g -= cfg.lambda_ssim * d;
        }
    }
    Ok(LossGrad { value, grad })
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `mean((ω·(render − fixed))²)`. `fixed` is a constant target.
pub fn distillation_loss(render: &ImageBuffer, fixed: &ImageBuffer, cfg: &LossConfig) -> Result<LossGrad> {
    render.same_dims(fixed)?;
    let n = render.len() as f64;
    let w2 = cfg.omega * cfg.omega;
    let mut value = 0.0;
    let mut grad = ImageBuffer::new(render.width, render.height);
    for ((g, r), f) in grad.data.iter_mut().zip(&render.data).zip(&fixed.data) {
        let d = r - f;
        value += w2 * d * d;
        *g = 2.0 * w2 * d / n;
    }
    Ok(LossGrad { value: value / n, grad })
}

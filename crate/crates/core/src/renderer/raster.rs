//! Tile binning, front-to-back blending and its adjoint.

use nalgebra::Vector3;

use super::project::{backward_splat, project_with, Splat2D, SplatGrad};
use super::{map_indexed, GradBuffer, RenderOptions, ALPHA_MAX, MIN_TRANSMITTANCE, TILE_SIZE};
use crate::error::Result;
use crate::image::ImageBuffer;
use crate::scene::{Camera, GaussianCloud};

/// Forward result with per-pixel compositing bookkeeping.
#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub image: ImageBuffer,
    /// Transmittance left for the background, per pixel.
    pub transmittance: Vec<f64>,
    /// `Σ αᵢ Tᵢ` over the blended splats, per pixel.
    pub weight_sum: Vec<f64>,
}

struct TileGrid {
    tiles_x: usize,
    tiles_y: usize,
    /// Per tile, indices into the sorted splat list in blending order.
    lists: Vec<Vec<usize>>,
}

impl TileGrid {
    fn build(splats: &[Splat2D], width: usize, height: usize) -> Self {
        let tiles_x = width.div_ceil(TILE_SIZE);
        let tiles_y = height.div_ceil(TILE_SIZE);
        let mut lists = vec![Vec::new(); tiles_x * tiles_y];
        let ts = TILE_SIZE as f64;
        let span = |lo: f64, hi: f64, n: usize| -> Option<(usize, usize)> {
            let a = (lo / ts).floor().max(0.0);
            let b = (hi / ts).floor().min((n - 1) as f64);
            (a <= b).then_some((a as usize, b as usize))
        };
        for (si, s) in splats.iter().enumerate() {
            let Some((x0, x1)) = span(s.mean2d.x - s.radius, s.mean2d.x + s.radius, tiles_x) else { continue };
            let Some((y0, y1)) = span(s.mean2d.y - s.radius, s.mean2d.y + s.radius, tiles_y) else { continue };
            for ty in y0..=y1 {
                for tx in x0..=x1 {
                    lists[ty * tiles_x + tx].push(si);
                }
            }
        }
        TileGrid { tiles_x, tiles_y, lists }
    }

    fn bounds(&self, tile: usize, width: usize, height: usize) -> (usize, usize, usize, usize) {
        let tx = tile % self.tiles_x;
        let ty = tile / self.tiles_x;
        let x0 = tx * TILE_SIZE;
        let y0 = ty * TILE_SIZE;
        (x0, y0, (x0 + TILE_SIZE).min(width), (y0 + TILE_SIZE).min(height))
    }

    fn count(&self) -> usize {
        self.tiles_x * self.tiles_y
    }
}

/// Opacity-weighted footprint of a splat at a pixel center.
/// Returns `(alpha, gaussian, d)`, or `None` outside the support square.
#[inline]
fn footprint(s: &Splat2D, px: f64, py: f64) -> Option<(f64, f64, [f64; 2])> {
    let dx = px - s.mean2d.x;
    let dy = py - s.mean2d.y;
    if dx.abs() > s.radius || dy.abs() > s.radius {
        return None;
    }
    let [a, b, c] = s.conic;
    let q = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy;
    let g = (-0.5 * q).exp();
    Some((s.opacity * g, g, [dx, dy]))
}

struct TileForward {
    color: Vec<[f64; 3]>,
    transmittance: Vec<f64>,
    weight_sum: Vec<f64>,
}

pub fn render_detailed(cloud: &GaussianCloud, camera: &Camera, background: &Vector3<f64>, opts: &RenderOptions) -> RenderOutput {
    let (w, h) = (camera.width, camera.height);
    let splats = project_with(cloud, camera, opts);
    let grid = TileGrid::build(&splats, w, h);
    let tiles = map_indexed(grid.count(), opts.parallelism, |tile| {
        let (x0, y0, x1, y1) = grid.bounds(tile, w, h);
        let n = (x1 - x0) * (y1 - y0);
        let mut out = TileForward { color: Vec::with_capacity(n), transmittance: Vec::with_capacity(n), weight_sum: Vec::with_capacity(n) };
        let list = &grid.lists[tile];
        for y in y0..y1 {
            for x in x0..x1 {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let mut t = 1.0;
                let mut c = [0.0; 3];
                let mut wsum = 0.0;
                for &si in list {
                    let s = &splats[si];
                    let Some((alpha, _, _)) = footprint(s, px, py) else { continue };
                    let alpha = alpha.min(ALPHA_MAX);
                    let wgt = alpha * t;
                    for ch in 0..3 {
                        c[ch] += s.color[ch] * wgt;
                    }
                    wsum += wgt;
                    t *= 1.0 - alpha;
                    if t < MIN_TRANSMITTANCE {
                        break;
                    }
                }
                for ch in 0..3 {
                    c[ch] += background[ch] * t;
                }
                out.color.push(c);
                out.transmittance.push(t);
                out.weight_sum.push(wsum);
            }
        }
        out
    });

    let mut image = ImageBuffer::new(w, h);
    let mut transmittance = vec![0.0; w * h];
    let mut weight_sum = vec![0.0; w * h];
    for (tile, out) in tiles.into_iter().enumerate() {
        let (x0, y0, x1, _) = grid.bounds(tile, w, h);
        let tw = x1 - x0;
        for (k, c) in out.color.iter().enumerate() {
            let (x, y) = (x0 + k % tw, y0 + k / tw);
            let p = y * w + x;
            image.data[p * 3..p * 3 + 3].copy_from_slice(c);
            transmittance[p] = out.transmittance[k];
            weight_sum[p] = out.weight_sum[k];
        }
    }
    RenderOutput { image, transmittance, weight_sum }
}

struct Contribution {
    local: usize,
    alpha: f64,
    gauss: f64,
    d: [f64; 2],
    t_before: f64,
    clamped: bool,
}

/// Gradient of a scalar loss with respect to every Gaussian parameter,
/// given `d_image = ∂L/∂image` for the image rendered with the same inputs.
pub fn render_backward(cloud: &GaussianCloud, camera: &Camera, background: &Vector3<f64>, d_image: &ImageBuffer) -> Result<GradBuffer> {
    render_backward_with(cloud, camera, background, d_image, &RenderOptions::default())
}

pub fn render_backward_with(
    cloud: &GaussianCloud,
    camera: &Camera,
    background: &Vector3<f64>,
    d_image: &ImageBuffer,
    opts: &RenderOptions,
) -> Result<GradBuffer> {
    let (w, h) = (camera.width, camera.height);
    d_image.same_dims(&ImageBuffer::new(w, h))?;
    let splats = project_with(cloud, camera, opts);
    let grid = TileGrid::build(&splats, w, h);

    let partials = map_indexed(grid.count(), opts.parallelism, |tile| {
        let (x0, y0, x1, y1) = grid.bounds(tile, w, h);
        let list = &grid.lists[tile];
        let mut acc = vec![SplatGrad::default(); list.len()];
        let mut contribs: Vec<Contribution> = Vec::with_capacity(list.len());
        for y in y0..y1 {
            for x in x0..x1 {
                let gpix = &d_image.data[(y * w + x) * 3..(y * w + x) * 3 + 3];
                if gpix.iter().all(|v| *v == 0.0) {
                    continue;
                }
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                contribs.clear();
                let mut t = 1.0;
                for (local, &si) in list.iter().enumerate() {
                    let s = &splats[si];
                    let Some((raw_alpha, gauss, d)) = footprint(s, px, py) else { continue };
                    let clamped = raw_alpha > ALPHA_MAX;
                    let alpha = raw_alpha.min(ALPHA_MAX);
                    contribs.push(Contribution { local, alpha, gauss, d, t_before: t, clamped });
                    t *= 1.0 - alpha;
                    if t < MIN_TRANSMITTANCE {
                        break;
                    }
                }
                // color of everything behind the current splat, per unit transmittance
                let mut behind = [background[0], background[1], background[2]];
                for cb in contribs.iter().rev() {
                    let s = &splats[list[cb.local]];
                    let g = &mut acc[cb.local];
                    let wgt = cb.alpha * cb.t_before;
                    let mut d_alpha = 0.0;
                    for ch in 0..3 {
                        g.color[ch] += gpix[ch] * wgt;
                        d_alpha += gpix[ch] * cb.t_before * (s.color[ch] - behind[ch]);
                        behind[ch] = cb.alpha * s.color[ch] + (1.0 - cb.alpha) * behind[ch];
                    }
                    if cb.clamped {
                        continue;
                    }
                    g.opacity += d_alpha * cb.gauss;
                    // α = η·exp(-q/2)
                    let d_q = -0.5 * d_alpha * s.opacity * cb.gauss;
                    let [dx, dy] = cb.d;
                    let [a, b, c] = s.conic;
                    g.conic[0] += d_q * dx * dx;
                    g.conic[1] += d_q * 2.0 * dx * dy;
                    g.conic[2] += d_q * dy * dy;
                    // ∂q/∂mean = -2·A·d
                    g.mean2d[0] += d_q * -2.0 * (a * dx + b * dy);
                    g.mean2d[1] += d_q * -2.0 * (b * dx + c * dy);
                }
            }
        }
        acc
    });

    let mut totals = vec![SplatGrad::default(); splats.len()];
    for (tile, partial) in partials.iter().enumerate() {
        for (local, &si) in grid.lists[tile].iter().enumerate() {
            totals[si].add(&partial[local]);
        }
    }

    let mut out = GradBuffer::zeros_like(cloud);
    for (s, sg) in splats.iter().zip(&totals) {
        if *sg == SplatGrad::default() {
            continue;
        }
        out.grads[s.source_index] = backward_splat(&cloud.gaussians[s.source_index], cloud.sh_degree, camera, sg);
    }
    out.check_finite()?;
    Ok(out)
}

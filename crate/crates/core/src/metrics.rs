//! Image quality (PSNR, SSIM) and multi-view consistency (TSED) metrics.

use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::scene::Camera;

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub psnr: f64,
    pub ssim: f64,
    pub tsed: Option<f64>,
}

pub fn mse(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    a.same_dims(b)?;
    let sum: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.data.len() as f64)
}

/// `10·log10(1 / MSE)` over all channels, capped at [`PSNR_CAP`].
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    let m = mse(a, b)?;
    if m <= 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP))
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-(d * d) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable valid-mode filter: output is `(w-10) × (h-10)`.
fn filter_valid(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w + 1 - SSIM_WINDOW;
    let oh = h + 1 - SSIM_WINDOW;
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = k.iter().zip(&row[x..x + SSIM_WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut s = 0.0;
            for (j, kj) in k.iter().enumerate() {
                s += kj * tmp[(y + j) * ow + x];
            }
            out[y * ow + x] = s;
        }
    }
    out
}

/// Adjoint of [`filter_valid`]: scatters a `(w-10) × (h-10)` map back to `w × h`.
fn filter_adjoint(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w + 1 - SSIM_WINDOW;
    let oh = h + 1 - SSIM_WINDOW;
    let mut tmp = vec![0.0; ow * h];
    for y in 0..oh {
        for x in 0..ow {
            let v = src[y * ow + x];
            for (j, kj) in k.iter().enumerate() {
                tmp[(y + j) * ow + x] += kj * v;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..ow {
            let v = tmp[y * ow + x];
            for (i, ki) in k.iter().enumerate() {
                out[y * w + x + i] += ki * v;
            }
        }
    }
    out
}

fn check_ssim_dims(a: &ImageBuffer, b: &ImageBuffer) -> Result<()> {
    a.same_dims(b)?;
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::ImageTooSmall { width: a.width, height: a.height, window: SSIM_WINDOW });
    }
    Ok(())
}

/// Mean SSIM of two single-channel planes and, optionally, its gradient
/// with respect to `x`.
pub(crate) fn ssim_plane(x: &[f64], y: &[f64], w: usize, h: usize, want_grad: bool) -> (f64, Option<Vec<f64>>) {
    let k = gaussian_window();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let mu_x = filter_valid(x, w, h, &k);
    let mu_y = filter_valid(y, w, h, &k);
    let e_xx = filter_valid(&xx, w, h, &k);
    let e_yy = filter_valid(&yy, w, h, &k);
    let e_xy = filter_valid(&xy, w, h, &k);
    let n = mu_x.len();
    let inv_n = 1.0 / n as f64;
    let mut total = 0.0;
    let (mut m1, mut m2, mut m3) = if want_grad {
        (vec![0.0; n], vec![0.0; n], vec![0.0; n])
    } else {
        (Vec::new(), Vec::new(), Vec::new())
    };
    for p in 0..n {
        let (mx, my) = (mu_x[p], mu_y[p]);
        let sxx = e_xx[p] - mx * mx;
        let syy = e_yy[p] - my * my;
        let sxy = e_xy[p] - mx * my;
        let a1 = 2.0 * mx * my + SSIM_C1;
        let a2 = 2.0 * sxy + SSIM_C2;
        let b1 = mx * mx + my * my + SSIM_C1;
        let b2 = sxx + syy + SSIM_C2;
        let s = (a1 * a2) / (b1 * b2);
        total += s;
        if want_grad {
            let ds_dmx = s * (2.0 * my / a1 - 2.0 * mx / b1);
            let ds_dsxx = -s / b2;
            let ds_dsxy = s * 2.0 / a2;
            m1[p] = (ds_dmx - 2.0 * mx * ds_dsxx - my * ds_dsxy) * inv_n;
            m2[p] = ds_dsxx * inv_n;
            m3[p] = ds_dsxy * inv_n;
        }
    }
    let mean = total * inv_n;
    if !want_grad {
        return (mean, None);
    }
    let g1 = filter_adjoint(&m1, w, h, &k);
    let g2 = filter_adjoint(&m2, w, h, &k);
    let g3 = filter_adjoint(&m3, w, h, &k);
    let grad = (0..w * h).map(|q| g1[q] + 2.0 * x[q] * g2[q] + y[q] * g3[q]).collect();
    (mean, Some(grad))
}

/// Mean SSIM over valid 11×11 Gaussian windows (σ = 1.5) of the luma planes.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    check_ssim_dims(a, b)?;
    Ok(ssim_plane(&a.luma(), &b.luma(), a.width, a.height, false).0)
}

/// SSIM and its gradient with respect to every channel of `a`.
pub fn ssim_with_grad(a: &ImageBuffer, b: &ImageBuffer) -> Result<(f64, ImageBuffer)> {
    check_ssim_dims(a, b)?;
    let (v, g) = ssim_plane(&a.luma(), &b.luma(), a.width, a.height, true);
    let g = g.expect("gradient requested");
    let mut out = ImageBuffer::new(a.width, a.height);
    for (px, gl) in out.data.chunks_exact_mut(3).zip(g) {
        for ch in 0..3 {
            px[ch] = gl * crate::image::LUMA[ch];
        }
    }
    Ok((v, out))
}

pub fn evaluate(render: &ImageBuffer, gt: &ImageBuffer) -> Result<MetricReport> {
    Ok(MetricReport { psnr: psnr(render, gt)?, ssim: ssim(render, gt)?, tsed: None })
}

fn skew(t: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -t.z, t.y, t.z, 0.0, -t.x, -t.y, t.x, 0.0)
}

/// Relative motion `x_b = R x_a + t` between the camera frames of `a` and `b`.
pub fn relative_motion(a: &Camera, b: &Camera) -> (Matrix3<f64>, Vector3<f64>) {
    let (ra, ta) = a.pose.world_to_camera();
    let (rb, tb) = b.pose.world_to_camera();
    let r = rb * ra.transpose();
    (r, tb - r * ta)
}

/// Fundamental matrix with `x_bᵀ F x_a = 0` for pixel coordinates.
pub fn fundamental_matrix(a: &Camera, b: &Camera) -> Matrix3<f64> {
    let (r, t) = relative_motion(a, b);
    let ka_inv = a.intrinsics().try_inverse().expect("intrinsics are invertible");
    let kb_inv = b.intrinsics().try_inverse().expect("intrinsics are invertible");
    kb_inv.transpose() * skew(&t) * r * ka_inv
}

fn point_line_distance(p: &Vector2<f64>, line: &Vector3<f64>) -> f64 {
    let n = (line.x * line.x + line.y * line.y).sqrt();
    if n == 0.0 {
        return f64::INFINITY;
    }
    (line.x * p.x + line.y * p.y + line.z).abs() / n
}

/// Mean of the point-to-epipolar-line distances in both images.
pub fn symmetric_epipolar_distance(f: &Matrix3<f64>, pa: &Vector2<f64>, pb: &Vector2<f64>) -> f64 {
    let ha = Vector3::new(pa.x, pa.y, 1.0);
    let hb = Vector3::new(pb.x, pb.y, 1.0);
    0.5 * (point_line_distance(pb, &(f * ha)) + point_line_distance(pa, &(f.transpose() * hb)))
}

/// Two views and matched pixel locations.
#[derive(Debug, Clone)]
pub struct FramePair {
    pub cam_a: Camera,
    pub cam_b: Camera,
    pub matches: Vec<(Vector2<f64>, Vector2<f64>)>,
}

/// Projects world points into both cameras, keeping those inside both images.
pub fn gt_correspondences(points: &[Vector3<f64>], a: &Camera, b: &Camera) -> Vec<(Vector2<f64>, Vector2<f64>)> {
    let inside = |c: &Camera, p: &Vector2<f64>| p.x >= 0.0 && p.y >= 0.0 && p.x < c.width as f64 && p.y < c.height as f64;
    points
        .iter()
        .filter_map(|x| {
            let pa = a.project_point(x)?;
            let pb = b.project_point(x)?;
            (inside(a, &pa) && inside(b, &pb)).then_some((pa, pb))
        })
        .collect()
}

/// Baseline below which a pair is treated as degenerate.
const MIN_BASELINE: f64 = 1e-9;

/// Thresholded symmetric epipolar distance: per pair, the fraction of
/// matches within `threshold` pixels of their epipolar lines, averaged
/// over pairs. Pairs without baseline or matches are skipped.
pub fn tsed(pairs: &[FramePair], threshold: f64) -> Result<f64> {
    let mut sum = 0.0;
    let mut used = 0usize;
    for (i, pair) in pairs.iter().enumerate() {
        let (_, t) = relative_motion(&pair.cam_a, &pair.cam_b);
        if t.norm() < MIN_BASELINE {
            log::warn!("tsed: frame pair {i} has no baseline, skipped");
            continue;
        }
        if pair.matches.is_empty() {
            log::warn!("tsed: frame pair {i} has no correspondences, skipped");
            continue;
        }
        let f = fundamental_matrix(&pair.cam_a, &pair.cam_b);
        let ok = pair.matches.iter().filter(|(pa, pb)| symmetric_epipolar_distance(&f, pa, pb) <= threshold).count();
        sum += ok as f64 / pair.matches.len() as f64;
        used += 1;
    }
    if used == 0 {
        return Err(Error::NoValidPairs);
    }
    Ok(sum / used as f64)
}

/// Locates each point of `img_a` in `img_b` by normalized cross-correlation
/// of square luma patches, searching a window around an initial guess.
///
/// Points whose patch does not fit in `img_a`, or that are textureless,
/// are dropped.
pub fn patch_match(
    img_a: &ImageBuffer,
    img_b: &ImageBuffer,
    seeds: &[(Vector2<f64>, Vector2<f64>)],
    patch_radius: usize,
    search_radius: usize,
) -> Vec<(Vector2<f64>, Vector2<f64>)> {
    let la = img_a.luma();
    let lb = img_b.luma();
    let r = patch_radius as i64;
    let patch = |plane: &[f64], w: usize, h: usize, cx: i64, cy: i64| -> Option<Vec<f64>> {
        if cx - r < 0 || cy - r < 0 || cx + r >= w as i64 || cy + r >= h as i64 {
            return None;
        }
        let mut v = Vec::with_capacity(((2 * r + 1) * (2 * r + 1)) as usize);
        for y in cy - r..=cy + r {
            for x in cx - r..=cx + r {
                v.push(plane[y as usize * w + x as usize]);
            }
        }
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let mut norm = 0.0;
        for e in &mut v {
            *e -= mean;
            norm += *e * *e;
        }
        let norm = norm.sqrt();
        (norm > 1e-6).then(|| v.into_iter().map(|e| e / norm).collect())
    };
    let mut out = Vec::new();
    for (pa, guess) in seeds {
        let (ax, ay) = (pa.x.floor() as i64, pa.y.floor() as i64);
        let Some(pa_patch) = patch(&la, img_a.width, img_a.height, ax, ay) else { continue };
        let (gx, gy) = (guess.x.floor() as i64, guess.y.floor() as i64);
        let s = search_radius as i64;
        let mut best: Option<(f64, i64, i64)> = None;
        for y in gy - s..=gy + s {
            for x in gx - s..=gx + s {
                let Some(pb_patch) = patch(&lb, img_b.width, img_b.height, x, y) else { continue };
                let score: f64 = pa_patch.iter().zip(&pb_patch).map(|(a, b)| a * b).sum();
                if best.is_none_or(|(bs, _, _)| score > bs) {
                    best = Some((score, x, y));
                }
            }
        }
        if let Some((_, x, y)) = best {
            let sub_a = Vector2::new(pa.x - ax as f64, pa.y - ay as f64);
            out.push((*pa, Vector2::new(x as f64, y as f64) + sub_a));
        }
    }
    out
}

/// Metrics CSV with header `view_id,psnr,ssim,tsed` and four fractional digits.
pub fn metrics_csv(rows: &[(String, MetricReport)]) -> String {
    let mut out = String::from("view_id,psnr,ssim,tsed\n");
    for (id, m) in rows {
        let tsed = m.tsed.map(|t| format!("{t:.4}")).unwrap_or_default();
        let _ = writeln!(out, "{id},{:.4},{:.4},{tsed}", m.psnr, m.ssim);
    }
    out
}

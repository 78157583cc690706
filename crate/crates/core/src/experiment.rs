//! Experiment runner: builds the scene, trains one method or the whole
//! ablation matrix, evaluates the results and writes every artifact.
//!
//! Output layout for a single method:
//!
//! ```text
//! out/config.txt     effective configuration (re-runnable)
//! out/final.gsc      trained cloud
//! out/renders/       test_NN.ppm per test view
//! out/metrics.csv    view_id,psnr,ssim,tsed
//! out/train_log.csv  iter,photo_loss,distill_loss,test_psnr,test_ssim,fixer_calls,frozen_views
//! out/ape_audit.csv  round,view_id,psnr_gate,unreliable,augmented_count (APE only)
//! out/summary.csv    method,mean_psnr,mean_ssim,mean_tsed
//! ```
//!
//! The matrix writes one such directory per method under `out/<method>/`
//! plus a combined `out/summary.csv`. A failed run leaves a `FAILED` file
//! holding the error message.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;

use crate::ape::audit_csv;
use crate::config::{ExperimentConfig, FixerSpec, Method, MethodSelection};
use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::metrics::{gt_correspondences, metrics_csv, patch_match, psnr, ssim, tsed, FramePair, MetricReport};
use crate::posemath::shift;
use crate::prior::{BlurFixer, Fixer, IdentityFixer, OracleFixer};
use crate::renderer::{render_with, RenderOptions};
use crate::scene::{init_cloud, load_cameras, load_cloud, save_cameras, save_cloud, Camera, GaussianCloud, SyntheticScene};
use crate::trainer::{ground_truth_images, train, TrainLog};

pub const SUMMARY_HEADER: &str = "method,mean_psnr,mean_ssim,mean_tsed";
pub const FAILED_MARKER: &str = "FAILED";

/// One row of `summary.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mean_tsed: Option<f64>,
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for r in rows {
        let tsed = r.mean_tsed.map(|t| format!("{t:.4}")).unwrap_or_default();
        let _ = writeln!(out, "{},{:.4},{:.4},{tsed}", r.method, r.mean_psnr, r.mean_ssim);
    }
    out
}

pub fn parse_summary(text: &str, origin: &str) -> Result<Vec<SummaryRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == SUMMARY_HEADER => {}
        _ => return Err(parse_error(origin, 1, "header", format!("expected `{SUMMARY_HEADER}`"))),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(parse_error(origin, i + 1, "row", format!("expected 4 fields, found {}", f.len())));
        }
        let num = |s: &str, field: &str| s.trim().parse::<f64>().map_err(|e| parse_error(origin, i + 1, field, e.to_string()));
        rows.push(SummaryRow {
            method: f[0].to_string(),
            mean_psnr: num(f[1], "mean_psnr")?,
            mean_ssim: num(f[2], "mean_ssim")?,
            mean_tsed: if f[3].trim().is_empty() { None } else { Some(num(f[3], "mean_tsed")?) },
        });
    }
    Ok(rows)
}

fn parse_error(origin: &str, line: usize, field: &str, message: String) -> Error {
    Error::Parse { path: origin.to_string(), line, field: field.to_string(), message }
}

/// Writes a scene as `ground_truth.gsc`, `train.cam`, `extra.cam`,
/// `far.cam` and `test.cam`.
pub fn save_scene(dir: impl AsRef<Path>, scene: &SyntheticScene) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (far, near): (Vec<(usize, &Camera)>, Vec<(usize, &Camera)>) =
        scene.extra_cams.iter().enumerate().partition(|(i, _)| scene.far_extra.contains(i));
    save_cloud(dir.join("ground_truth.gsc"), &scene.ground_truth)?;
    save_cameras(dir.join("train.cam"), &scene.train_cams)?;
    save_cameras(dir.join("extra.cam"), &near.into_iter().map(|(_, c)| *c).collect::<Vec<_>>())?;
    save_cameras(dir.join("far.cam"), &far.into_iter().map(|(_, c)| *c).collect::<Vec<_>>())?;
    save_cameras(dir.join("test.cam"), &scene.test_cams)
}

/// Reads a scene written by [`save_scene`]; far views follow the other
/// extra views.
pub fn load_scene(dir: impl AsRef<Path>, background: Vector3<f64>, seed: u64) -> Result<SyntheticScene> {
    let dir = dir.as_ref();
    let mut extra_cams = load_cameras(dir.join("extra.cam"))?;
    let far = load_cameras(dir.join("far.cam"))?;
    let far_extra = (extra_cams.len()..extra_cams.len() + far.len()).collect();
    extra_cams.extend(far);
    let scene = SyntheticScene {
        ground_truth: load_cloud(dir.join("ground_truth.gsc"))?,
        train_cams: load_cameras(dir.join("train.cam"))?,
        extra_cams,
        far_extra,
        test_cams: load_cameras(dir.join("test.cam"))?,
        background,
        seed,
    };
    for cam in scene.train_cams.iter().chain(&scene.extra_cams).chain(&scene.test_cams) {
        cam.validate()?;
    }
    Ok(scene)
}

pub fn build_scene(cfg: &ExperimentConfig) -> Result<SyntheticScene> {
    match &cfg.scene_path {
        Some(dir) => load_scene(dir, Vector3::from(cfg.scene.background), cfg.seed),
        None => crate::scene::generate_scene(&cfg.scene, cfg.seed),
    }
}

pub fn make_fixer(spec: &FixerSpec, scene: &SyntheticScene, opts: &RenderOptions) -> Result<Box<dyn Fixer>> {
    Ok(match *spec {
        FixerSpec::Identity => Box::new(IdentityFixer),
        FixerSpec::Oracle { strength, knee } => Box::new(OracleFixer::new(scene, strength, knee)?.with_render_options(*opts)),
        FixerSpec::Blur { sigma } => Box::new(BlurFixer { sigma }),
    })
}

/// Cameras interpolated from `a` to `b` in `frames` equal pose steps
/// (both endpoints included).
pub fn camera_path(a: &Camera, b: &Camera, frames: usize) -> Vec<Camera> {
    (0..=frames).map(|j| a.with_pose(shift(&a.pose, &b.pose, j as f64 / frames as f64))).collect()
}

/// Multi-view consistency of renders along the path from test view `k` to
/// the next one. Keypoints are ground-truth Gaussian centers visible in
/// both frames; their position in the second render is found by patch
/// matching around the true location, so a match lands off its epipolar
/// line only when the renders themselves disagree.
pub fn view_tsed(
    cloud: &GaussianCloud,
    scene: &SyntheticScene,
    k: usize,
    cfg: &ExperimentConfig,
) -> Result<Option<f64>> {
    let cams = &scene.test_cams;
    let next = &cams[(k + 1) % cams.len()];
    let path = camera_path(&cams[k], next, cfg.eval.tsed_frames);
    let opts = &cfg.train.render;
    let renders: Vec<ImageBuffer> = path.iter().map(|c| render_with(cloud, c, &scene.background, opts)).collect();
    let points: Vec<Vector3<f64>> = scene.ground_truth.gaussians.iter().map(|g| g.position).collect();
    let pairs: Vec<FramePair> = path
        .windows(2)
        .zip(renders.windows(2))
        .map(|(c, r)| {
            let seeds = gt_correspondences(&points, &c[0], &c[1]);
            FramePair { cam_a: c[0], cam_b: c[1], matches: patch_match(&r[0], &r[1], &seeds, cfg.eval.patch_radius, cfg.eval.search_radius) }
        })
        .collect();
    match tsed(&pairs, cfg.eval.tsed_threshold) {
        Ok(t) => Ok(Some(t)),
        Err(Error::NoValidPairs) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Per-test-view metrics of a trained cloud.
pub fn evaluate_cloud(cloud: &GaussianCloud, scene: &SyntheticScene, cfg: &ExperimentConfig) -> Result<Vec<(ImageBuffer, MetricReport)>> {
    let opts = &cfg.train.render;
    let gts = ground_truth_images(scene, &scene.test_cams, opts);
    let mut out = Vec::with_capacity(gts.len());
    for (k, (cam, gt)) in scene.test_cams.iter().zip(&gts).enumerate() {
        let img = render_with(cloud, cam, &scene.background, opts);
        let report = MetricReport { psnr: psnr(&img, gt)?, ssim: ssim(&img, gt)?, tsed: view_tsed(cloud, scene, k, cfg)? };
        out.push((img, report));
    }
    Ok(out)
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Everything produced by training and evaluating one method.
#[derive(Debug, Clone)]
pub struct MethodRun {
    pub summary: SummaryRow,
    pub cloud: GaussianCloud,
    pub log: TrainLog,
    pub reports: Vec<MetricReport>,
}

/// Trains and evaluates one method without touching the file system.
pub fn train_method(cfg: &ExperimentConfig, scene: &SyntheticScene, method: Method) -> Result<(MethodRun, Vec<ImageBuffer>)> {
    let tcfg = cfg.train_config(method);
    let init = init_cloud(scene, &cfg.init, cfg.seed)?;
    let mut fixer = make_fixer(&cfg.fixer, scene, &tcfg.render)?;
    log::info!("training {} (seed {}, {} iterations, fixer {})", method.name(), cfg.seed, tcfg.iters, fixer.name());
    let (cloud, log) = train(scene, &init, fixer.as_mut(), &tcfg)?;
    let evaluated = evaluate_cloud(&cloud, scene, cfg)?;
    let (renders, reports): (Vec<_>, Vec<_>) = evaluated.into_iter().unzip();
    let summary = SummaryRow {
        method: method.name().to_string(),
        mean_psnr: mean(reports.iter().map(|r| r.psnr)).unwrap_or(f64::NAN),
        mean_ssim: mean(reports.iter().map(|r| r.ssim)).unwrap_or(f64::NAN),
        mean_tsed: mean(reports.iter().filter_map(|r| r.tsed)),
    };
    log::info!("{}: mean test PSNR {:.4} dB", method.name(), summary.mean_psnr);
    Ok((MethodRun { summary, cloud, log, reports }, renders))
}

/// Trains one method and writes its artifacts into `dir`.
pub fn run_method(cfg: &ExperimentConfig, scene: &SyntheticScene, method: Method, dir: &Path) -> Result<MethodRun> {
    fs::create_dir_all(dir.join("renders")).map_err(|e| Error::io(dir, e))?;
    let (run, renders) = train_method(cfg, scene, method)?;
    save_cloud(dir.join("final.gsc"), &run.cloud)?;
    for (k, img) in renders.iter().enumerate() {
        img.save_ppm(dir.join("renders").join(format!("test_{k:02}.ppm")))?;
    }
    let rows: Vec<(String, MetricReport)> = run.reports.iter().enumerate().map(|(k, r)| (k.to_string(), *r)).collect();
    write(&dir.join("metrics.csv"), metrics_csv(&rows))?;
    write(&dir.join("train_log.csv"), run.log.to_csv())?;
    if method == Method::ContinuousApe {
        write(&dir.join("ape_audit.csv"), audit_csv(&run.log.audit))?;
    }
    write(&dir.join("summary.csv"), summary_csv(std::slice::from_ref(&run.summary)))?;
    Ok(run)
}

/// Runs the configured method (or matrix) into `cfg.out`. On failure a
/// `FAILED` marker holding the message is left in the output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<SummaryRow>> {
    cfg.validate()?;
    let out = &cfg.out;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let marker = out.join(FAILED_MARKER);
    if marker.exists() {
        fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
    }
    let result = run_inner(cfg, out);
    if let Err(e) = &result {
        let _ = fs::write(&marker, format!("{e}\n"));
    }
    result
}

fn run_inner(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<SummaryRow>> {
    write(&out.join("config.txt"), cfg.to_text())?;
    let scene = build_scene(cfg)?;
    let mut rows = Vec::new();
    for method in cfg.method.methods() {
        let dir = match cfg.method {
            MethodSelection::Single(_) => out.to_path_buf(),
            MethodSelection::Matrix => out.join(method.name()),
        };
        rows.push(run_method(cfg, &scene, method, &dir)?.summary);
    }
    write(&out.join("summary.csv"), summary_csv(&rows))?;
    Ok(rows)
}

/// Reads `summary.csv` from an experiment directory.
pub fn read_summary(dir: &Path) -> Result<Vec<SummaryRow>> {
    let path = dir.join("summary.csv");
    let text = fs::read_to_string(&path)
        .map_err(|_| Error::Invalid(format!("{} has no summary.csv (missing or failed run?)", dir.display())))?;
    parse_summary(&text, &path.display().to_string())
}

/// Comparison of experiment directories against the first one.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub dirs: Vec<PathBuf>,
    pub base: Vec<SummaryRow>,
    /// `deltas[row][dir - 1]`: (ΔPSNR, ΔSSIM, ΔTSED) of the matching row,
    /// or `None` when that directory has no matching method.
    pub deltas: Vec<Vec<Option<(f64, f64, Option<f64>)>>>,
}

/// Aligns the summaries of `dirs` row by row (by method name, or directly
/// when both sides hold a single row) and computes deltas to the first.
pub fn compare(dirs: &[PathBuf]) -> Result<Comparison> {
    if dirs.len() < 2 {
        return Err(Error::Invalid("compare needs at least two experiment directories".into()));
    }
    let summaries = dirs.iter().map(|d| read_summary(d)).collect::<Result<Vec<_>>>()?;
    let base = summaries[0].clone();
    let deltas = base
        .iter()
        .map(|row| {
            summaries[1..]
                .iter()
                .map(|other| {
                    let hit = if base.len() == 1 && other.len() == 1 {
                        other.first()
                    } else {
                        other.iter().find(|o| o.method == row.method)
                    };
                    hit.map(|o| {
                        let dt = match (o.mean_tsed, row.mean_tsed) {
                            (Some(a), Some(b)) => Some(a - b),
                            _ => None,
                        };
                        (o.mean_psnr - row.mean_psnr, o.mean_ssim - row.mean_ssim, dt)
                    })
                })
                .collect()
        })
        .collect();
    Ok(Comparison { dirs: dirs.to_vec(), base, deltas })
}

impl Comparison {
    /// Aligned text table: base values, then one Δ column group per
    /// further directory.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<16} {:>9} {:>7} {:>7}", "method", "psnr", "ssim", "tsed");
        for k in 1..self.dirs.len() {
            let _ = write!(out, " | {:>9} {:>8} {:>8}", format!("dPSNR[{k}]"), format!("dSSIM[{k}]"), format!("dTSED[{k}]"));
        }
        out.push('\n');
        let opt = |v: Option<f64>, w: usize, signed: bool| match v {
            Some(x) if signed => format!("{x:>+w$.4}"),
            Some(x) => format!("{x:>w$.4}"),
            None => format!("{:>w$}", "-"),
        };
        for (row, deltas) in self.base.iter().zip(&self.deltas) {
            let _ = write!(out, "{:<16} {:>9.4} {:>7.4} {}", row.method, row.mean_psnr, row.mean_ssim, opt(row.mean_tsed, 7, false));
            for d in deltas {
                match d {
                    Some((dp, ds, dt)) => {
                        let _ = write!(out, " | {:>+9.4} {:>+8.4} {}", dp, ds, opt(*dt, 8, true));
                    }
                    None => {
                        let _ = write!(out, " | {:>9} {:>8} {:>8}", "-", "-", "-");
                    }
                }
            }
            out.push('\n');
        }
        for (k, d) in self.dirs.iter().enumerate() {
            let _ = writeln!(out, "[{k}] {}", d.display());
        }
        out
    }
}

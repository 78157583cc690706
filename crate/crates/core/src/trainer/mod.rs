//! The optimization loop: photo loss on sampled training views, score
//! distillation on sampled extra views, Adam updates, pruning, prior
//! freezing and the adaptive enhancement rounds.

mod adam;

use std::fmt::Write as _;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use adam::{adam_step, AdamConfig, AdamState};

use crate::ape::{ape_round, ApeAuditRow, ApeConfig, ApeContext, AugmentedView};
use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::losses::{distillation_loss, photo_loss, LossConfig};
use crate::metrics::{psnr, ssim};
use crate::posemath::{pose_distance, Quat};
use crate::prior::Fixer;
use crate::renderer::{render_backward_with, render_with, GradBuffer, RenderOptions};
use crate::scene::{Camera, GaussianCloud, SyntheticScene};

/// How the fixer target for an extra view is refreshed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistillMode {
    /// Photo loss only.
    Off,
    /// Call the fixer on every sampled extra view (until it freezes).
    Continuous,
    /// Repair a view after every `M` steps and reuse that image until the
    /// next repair; no prior is applied before the first repair.
    Interval(usize),
}

/// Per-group Adam learning rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearningRates {
    /// Initial position rate, in units of the scene extent.
    pub position: f64,
    /// Position rate at the last iteration as a fraction of the initial one.
    pub position_final_ratio: f64,
    pub rotation: f64,
    pub log_scale: f64,
    pub opacity: f64,
    pub sh: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates { position: 1.6e-4, position_final_ratio: 0.01, rotation: 1e-3, log_scale: 5e-3, opacity: 5e-2, sh: 2.5e-3 }
    }
}

/// When a continuous-mode prior stops being refreshed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreezeConfig {
    pub enabled: bool,
    /// Consecutive fixer outputs closer than this (dB) count as unchanged.
    pub psnr: f64,
    /// Number of consecutive unchanged outputs that freezes a view.
    pub patience: usize,
    /// Iterations between freeze checks of a view. A check compares the
    /// view's fixer output with the one from its previous check; outputs
    /// of calls in between are used for distillation only.
    pub check_every: usize,
}

impl Default for FreezeConfig {
    fn default() -> Self {
        FreezeConfig { enabled: true, psnr: 35.0, patience: 3, check_every: 500 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub iters: usize,
    pub adam: AdamConfig,
    pub lr: LearningRates,
    pub distill: DistillMode,
    pub extra_views_per_iter: usize,
    pub freeze: FreezeConfig,
    pub prune_opacity: f64,
    pub prune_every: usize,
    /// Test-set evaluation period; 0 evaluates only at the end.
    pub eval_every: usize,
    pub seed: u64,
    pub loss: LossConfig,
    pub render: RenderOptions,
    pub pose_alpha: f64,
    pub pose_beta: f64,
    pub ape: ApeConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iters: 6000,
            adam: AdamConfig::default(),
            lr: LearningRates::default(),
            distill: DistillMode::Continuous,
            extra_views_per_iter: 1,
            freeze: FreezeConfig::default(),
            prune_opacity: 0.005,
            prune_every: 500,
            eval_every: 100,
            seed: 0,
            loss: LossConfig::default(),
            render: RenderOptions::default(),
            pose_alpha: 0.5,
            pose_beta: 0.5,
            ape: ApeConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let lr = &self.lr;
        let rates = [lr.position, lr.rotation, lr.log_scale, lr.opacity, lr.sh];
        if self.iters == 0 || rates.iter().any(|r| !(*r > 0.0)) || !(lr.position_final_ratio > 0.0) {
            return Err(Error::Invalid("iterations and learning rates must be positive".into()));
        }
        if self.distill == DistillMode::Interval(0) {
            return Err(Error::Invalid("interval length must be at least 1".into()));
        }
        if self.freeze.patience == 0 || self.freeze.check_every == 0 {
            return Err(Error::Invalid("freeze patience and check period must be at least 1".into()));
        }
        self.loss.validate()?;
        if self.ape.enabled {
            self.ape.validate()?;
        }
        Ok(())
    }

    fn position_lr(&self, iter: usize, extent: f64) -> f64 {
        let t = iter as f64 / self.iters.max(1) as f64;
        self.lr.position * extent * self.lr.position_final_ratio.powf(t)
    }
}

/// Cached fixer output for one extra view.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PriorEntry {
    pub fixed: Option<ImageBuffer>,
    /// Output compared against at the next freeze check.
    pub checkpoint: Option<ImageBuffer>,
    /// Interval block the cached image belongs to, or the freeze-check
    /// period of the last check in continuous mode.
    pub block: Option<usize>,
    /// PSNR between each fixer output and the one before it.
    pub history: Vec<f64>,
    /// Length of the current run of near-identical outputs.
    pub streak: usize,
    pub frozen: bool,
    pub calls: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PriorCache {
    pub entries: Vec<PriorEntry>,
}

impl PriorCache {
    pub fn new(views: usize) -> Self {
        PriorCache { entries: vec![PriorEntry::default(); views] }
    }

    pub fn frozen_count(&self) -> usize {
        self.entries.iter().filter(|e| e.frozen).count()
    }

    pub fn total_calls(&self) -> usize {
        self.entries.iter().map(|e| e.calls).sum()
    }
}

/// Records a checked fixer output for `view` and freezes the view once
/// `patience` consecutive checked outputs (counting the first of the run)
/// each lie within `cfg.psnr` decibels of their predecessor.
pub fn freeze_check(cache: &mut PriorCache, view: usize, new_fixed: ImageBuffer, cfg: &FreezeConfig) -> Result<bool> {
    let entry = &mut cache.entries[view];
    match &entry.checkpoint {
        Some(prev) => {
            let p = psnr(&new_fixed, prev)?;
            entry.history.push(p);
            entry.streak = if p > cfg.psnr { entry.streak + 1 } else { 1 };
        }
        None => entry.streak = 1,
    }
    entry.checkpoint = Some(new_fixed.clone());
    entry.fixed = Some(new_fixed);
    if cfg.enabled && entry.streak >= cfg.patience {
        entry.frozen = true;
    }
    Ok(entry.frozen)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub iter: usize,
    pub photo_loss: f64,
    pub distill_loss: f64,
    pub test_psnr: f64,
    pub test_ssim: f64,
    pub fixer_calls: usize,
    pub frozen_views: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    /// Photo loss of every iteration.
    pub photo_losses: Vec<f64>,
    /// Distillation loss of every iteration (0 when not distilling).
    pub distill_losses: Vec<f64>,
    /// Extra view distilled at each iteration.
    pub distill_views: Vec<Option<usize>>,
    pub rows: Vec<LogRow>,
    pub audit: Vec<ApeAuditRow>,
    pub augmented: Vec<AugmentedView>,
    pub prior: PriorCache,
}

impl TrainLog {
    /// `iter,photo_loss,distill_loss,test_psnr,test_ssim,fixer_calls,frozen_views`;
    /// losses are averaged over the iterations since the previous row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,photo_loss,distill_loss,test_psnr,test_ssim,fixer_calls,frozen_views\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{:.6},{:.6},{:.4},{:.4},{},{}",
                r.iter, r.photo_loss, r.distill_loss, r.test_psnr, r.test_ssim, r.fixer_calls, r.frozen_views
            );
        }
        out
    }

    pub fn final_row(&self) -> Option<&LogRow> {
        self.rows.last()
    }
}

/// Mean PSNR and SSIM of renders of `cams` against `targets`.
pub fn evaluate_views(
    cloud: &GaussianCloud,
    cams: &[Camera],
    targets: &[ImageBuffer],
    background: &Vector3<f64>,
    opts: &RenderOptions,
) -> Result<(f64, f64)> {
    if cams.is_empty() {
        return Err(Error::Invalid("no evaluation views".into()));
    }
    let (mut p, mut s) = (0.0, 0.0);
    for (cam, gt) in cams.iter().zip(targets) {
        let img = render_with(cloud, cam, background, opts);
        p += psnr(&img, gt)?;
        s += ssim(&img, gt)?;
    }
    let n = cams.len() as f64;
    Ok((p / n, s / n))
}

/// Ground-truth renders of the given cameras.
pub fn ground_truth_images(scene: &SyntheticScene, cams: &[Camera], opts: &RenderOptions) -> Vec<ImageBuffer> {
    cams.iter().map(|c| render_with(&scene.ground_truth, c, &scene.background, opts)).collect()
}

#[derive(Debug, Clone, Copy)]
enum Group {
    Position,
    Rotation,
    LogScale,
    Opacity,
    Sh,
}

const GROUPS: [Group; 5] = [Group::Position, Group::Rotation, Group::LogScale, Group::Opacity, Group::Sh];

impl Group {
    fn stride(self, n_sh: usize) -> usize {
        match self {
            Group::Position | Group::LogScale => 3,
            Group::Rotation => 4,
            Group::Opacity => 1,
            Group::Sh => 3 * n_sh,
        }
    }

    fn gather(self, cloud: &GaussianCloud) -> Vec<f64> {
        let mut out = Vec::with_capacity(cloud.len() * self.stride(cloud.coeffs_per_channel()));
        for g in &cloud.gaussians {
            match self {
                Group::Position => out.extend_from_slice(g.position.as_slice()),
                Group::Rotation => out.extend_from_slice(&g.rotation.to_array()),
                Group::LogScale => out.extend_from_slice(g.log_scale.as_slice()),
                Group::Opacity => out.push(g.opacity_logit),
                Group::Sh => out.extend(g.sh.iter().flatten().copied()),
            }
        }
        out
    }

    fn gather_grad(self, grads: &GradBuffer) -> Vec<f64> {
        let mut out = Vec::new();
        for g in &grads.grads {
            match self {
                Group::Position => out.extend_from_slice(g.position.as_slice()),
                Group::Rotation => out.extend_from_slice(&g.rotation),
                Group::LogScale => out.extend_from_slice(g.log_scale.as_slice()),
                Group::Opacity => out.push(g.opacity_logit),
                Group::Sh => out.extend(g.sh.iter().flatten().copied()),
            }
        }
        out
    }

    fn scatter(self, cloud: &mut GaussianCloud, values: &[f64]) {
        let stride = self.stride(cloud.coeffs_per_channel());
        for (g, v) in cloud.gaussians.iter_mut().zip(values.chunks_exact(stride)) {
            match self {
                Group::Position => g.position = Vector3::new(v[0], v[1], v[2]),
                Group::Rotation => g.rotation = Quat::from_raw(v[0], v[1], v[2], v[3]),
                Group::LogScale => g.log_scale = Vector3::new(v[0], v[1], v[2]),
                Group::Opacity => g.opacity_logit = v[0],
                Group::Sh => {
                    for (c, rgb) in g.sh.iter_mut().zip(v.chunks_exact(3)) {
                        *c = [rgb[0], rgb[1], rgb[2]];
                    }
                }
            }
        }
    }

    fn lr(self, cfg: &TrainConfig, iter: usize, extent: f64) -> f64 {
        match self {
            Group::Position => cfg.position_lr(iter, extent),
            Group::Rotation => cfg.lr.rotation,
            Group::LogScale => cfg.lr.log_scale,
            Group::Opacity => cfg.lr.opacity,
            Group::Sh => cfg.lr.sh,
        }
    }
}

/// Index of the training camera closest to `cam` (ties by index).
fn nearest_train(cam: &Camera, train: &[Camera], alpha: f64, beta: f64) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (i, c) in train.iter().enumerate() {
        let d = pose_distance(&c.pose, &cam.pose, alpha, beta);
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1
}

fn ensure_finite(value: f64, iter: usize, view: impl FnOnce() -> String) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteLoss { iter, view: view() })
    }
}

/// Optimizes `init` against the scene's training views.
///
/// Each iteration applies the photo loss to one view drawn uniformly from
/// the real and augmented training views and, unless distillation is off,
/// the distillation loss to `extra_views_per_iter` extra views drawn
/// uniformly. Training and extra views come from independent random
/// streams, so turning distillation on does not change which training
/// views are visited.
pub fn train(scene: &SyntheticScene, init: &GaussianCloud, fixer: &mut dyn Fixer, cfg: &TrainConfig) -> Result<(GaussianCloud, TrainLog)> {
    cfg.validate()?;
    init.validate()?;
    if scene.train_cams.is_empty() || scene.test_cams.is_empty() {
        return Err(Error::Invalid("scene needs training and test views".into()));
    }
    let distilling = cfg.distill != DistillMode::Off && cfg.extra_views_per_iter > 0;
    if distilling && scene.extra_cams.is_empty() {
        return Err(Error::Invalid("distillation requires at least one extra view".into()));
    }

    let opts = cfg.render;
    let bg = scene.background;
    let extent = scene.extent();
    let max_log_scale = (10.0 * extent).ln() - 1e-3;
    let train_images = ground_truth_images(scene, &scene.train_cams, &opts);
    let test_images = ground_truth_images(scene, &scene.test_cams, &opts);
    let extra_refs: Vec<usize> =
        scene.extra_cams.iter().map(|c| nearest_train(c, &scene.train_cams, cfg.pose_alpha, cfg.pose_beta)).collect();
    if distilling || cfg.ape.enabled {
        for cam in &scene.extra_cams {
            fixer.register(cam);
        }
    }

    let mut cloud = init.clone();
    cloud.normalize_rotations();
    let n_sh = cloud.coeffs_per_channel();
    let mut states: Vec<AdamState> = GROUPS.iter().map(|g| AdamState::new(cloud.len() * g.stride(n_sh))).collect();
    let mut train_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut extra_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);

    let mut log = TrainLog { prior: PriorCache::new(scene.extra_cams.len()), ..TrainLog::default() };
    let ape_rounds = if cfg.ape.enabled { (cfg.iters - 1) / cfg.ape.every } else { 0 };
    let mut window = (0.0, 0.0, 0usize);

    for iter in 0..cfg.iters {
        // (a) photo loss on one real or augmented training view
        let pool = scene.train_cams.len() + log.augmented.len();
        let pick = train_rng.random_range(0..pool);
        let (cam, target, weight) = if pick < scene.train_cams.len() {
            (scene.train_cams[pick], &train_images[pick], 1.0)
        } else {
            let a = &log.augmented[pick - scene.train_cams.len()];
            (a.camera, &a.target_image, cfg.ape.weight)
        };
        let render = render_with(&cloud, &cam, &bg, &opts);
        let mut photo = photo_loss(&render, target, &cfg.loss)?;
        ensure_finite(photo.value, iter, || view_name(pick, scene.train_cams.len()))?;
        if weight != 1.0 {
            photo.value *= weight;
            photo.grad.data.iter_mut().for_each(|g| *g *= weight);
        }
        let mut grads = render_backward_with(&cloud, &cam, &bg, &photo.grad, &opts)?;

        // (b) distillation on sampled extra views
        let mut distill_value = 0.0;
        let mut distilled = None;
        if distilling {
            for _ in 0..cfg.extra_views_per_iter {
                let e = extra_rng.random_range(0..scene.extra_cams.len());
                let ecam = &scene.extra_cams[e];
                let erender = render_with(&cloud, ecam, &bg, &opts);
                let reference = &train_images[extra_refs[e]];
                let fixed = match cfg.distill {
                    DistillMode::Continuous => {
                        let entry = &log.prior.entries[e];
                        if entry.frozen {
                            entry.fixed.clone().expect("frozen views hold an image")
                        } else {
                            let out = fixer.fix(ecam, &erender, reference)?;
                            let period = iter / cfg.freeze.check_every;
                            let entry = &mut log.prior.entries[e];
                            entry.calls += 1;
                            if entry.block != Some(period) {
                                entry.block = Some(period);
                                freeze_check(&mut log.prior, e, out.clone(), &cfg.freeze)?;
                            } else {
                                entry.fixed = Some(out.clone());
                            }
                            out
                        }
                    }
                    DistillMode::Interval(m) => {
                        // repairs happen after every m steps (1-indexed), so the
                        // first m - 1 iterations run without a prior
                        let block = (iter + 1) / m;
                        let entry = &mut log.prior.entries[e];
                        if block == 0 {
                            erender.clone()
                        } else {
                            if entry.block != Some(block) {
                                entry.fixed = Some(fixer.fix(ecam, &erender, reference)?);
                                entry.block = Some(block);
                                entry.calls += 1;
                            }
                            entry.fixed.clone().expect("interval cache was just filled")
                        }
                    }
                    DistillMode::Off => unreachable!(),
                };
                let d = distillation_loss(&erender, &fixed, &cfg.loss)?;
                ensure_finite(d.value, iter, || format!("extra:{e}"))?;
                distill_value += d.value;
                grads.add_assign(&render_backward_with(&cloud, ecam, &bg, &d.grad, &opts)?);
                distilled = Some(e);
            }
        }

        // (c) Adam step per group, (d) renormalize rotations
        for (group, state) in GROUPS.iter().zip(&mut states) {
            let mut params = group.gather(&cloud);
            let g = group.gather_grad(&grads);
            adam_step(&mut params, &g, state, group.lr(cfg, iter, extent), &cfg.adam);
            group.scatter(&mut cloud, &params);
        }
        cloud.normalize_rotations();
        for g in &mut cloud.gaussians {
            g.log_scale = g.log_scale.map(|v| v.min(max_log_scale));
        }

        log.photo_losses.push(photo.value);
        log.distill_losses.push(distill_value);
        log.distill_views.push(distilled);
        window = (window.0 + photo.value, window.1 + distill_value, window.2 + 1);
        let done = iter + 1;

        // (e) pruning
        if cfg.prune_every > 0 && done % cfg.prune_every == 0 && done < cfg.iters {
            prune(&mut cloud, &mut states, cfg.prune_opacity, n_sh);
        }

        if (cfg.eval_every > 0 && done % cfg.eval_every == 0) || done == cfg.iters {
            let (test_psnr, test_ssim) = evaluate_views(&cloud, &scene.test_cams, &test_images, &bg, &opts)?;
            let n = window.2.max(1) as f64;
            log.rows.push(LogRow {
                iter: done,
                photo_loss: window.0 / n,
                distill_loss: window.1 / n,
                test_psnr,
                test_ssim,
                fixer_calls: log.prior.total_calls(),
                frozen_views: log.prior.frozen_count(),
            });
            log::debug!("iter {done}: test psnr {test_psnr:.3} dB, ssim {test_ssim:.4}");
            window = (0.0, 0.0, 0);
        }

        if cfg.ape.enabled && done % cfg.ape.every == 0 && done < cfg.iters {
            let round = done / cfg.ape.every;
            let ctx = ApeContext {
                train_cams: &scene.train_cams,
                train_images: &train_images,
                extra_cams: &scene.extra_cams,
                background: bg,
                render_opts: opts,
                pose_alpha: cfg.pose_alpha,
                pose_beta: cfg.pose_beta,
            };
            let (views, audit) = ape_round(&cloud, &ctx, fixer, &cfg.ape, round, ape_rounds)?;
            log::debug!("APE round {round}: {} augmented views", views.len());
            log.augmented.extend(views);
            log.audit.extend(audit);
        }
    }
    Ok((cloud, log))
}

fn view_name(pick: usize, n_train: usize) -> String {
    if pick < n_train {
        format!("train:{pick}")
    } else {
        format!("augmented:{}", pick - n_train)
    }
}

/// Removes Gaussians whose opacity fell below `threshold`, keeping the
/// optimizer moments of the survivors aligned.
fn prune(cloud: &mut GaussianCloud, states: &mut [AdamState], threshold: f64, n_sh: usize) {
    let keep: Vec<bool> = cloud.gaussians.iter().map(|g| g.opacity() >= threshold).collect();
    if keep.iter().all(|k| *k) {
        return;
    }
    for (group, state) in GROUPS.iter().zip(states.iter_mut()) {
        state.retain_blocks(&keep, group.stride(n_sh));
    }
    let mut it = keep.iter();
    cloud.gaussians.retain(|_| *it.next().expect("mask covers the cloud"));
    log::debug!("pruned to {} gaussians", cloud.len());
}

//! Adaptive progressive enhancement.
//!
//! After every block of training iterations each extra view is rendered
//! and repaired by the fixer. When the repair changes the render by a lot
//! (`psnr(fixed, render) < η`) the view is flagged unreliable: for each of
//! its `M` nearest training cameras a pose part-way from that camera toward
//! the extra view is rendered, repaired with that camera's image as the
//! reference, and added to the training set.

use std::fmt::Write as _;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::metrics::psnr;
use crate::posemath::{pose_distance, progress, shift};
use crate::prior::Fixer;
use crate::renderer::{render_with, RenderOptions};
use crate::scene::{Camera, GaussianCloud};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApeConfig {
    pub enabled: bool,
    /// Unreliability threshold η in dB.
    pub eta: f64,
    /// Number of reference views M.
    pub refs: usize,
    /// Iterations per enhancement round.
    pub every: usize,
    /// Photo-loss weight of augmented views relative to real ones.
    pub weight: f64,
}

impl Default for ApeConfig {
    fn default() -> Self {
        ApeConfig { enabled: false, eta: 25.0, refs: 3, every: 1000, weight: 1.0 }
    }
}

impl ApeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) || self.refs == 0 || self.every == 0 || self.weight < 0.0 {
            return Err(Error::Invalid("APE requires eta > 0, refs >= 1, every >= 1 and weight >= 0".into()));
        }
        Ok(())
    }
}

/// Where an augmented view came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugmentOrigin {
    pub extra_view: usize,
    pub reference: usize,
    pub round: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedView {
    pub camera: Camera,
    pub target_image: ImageBuffer,
    pub origin: AugmentOrigin,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApeAuditRow {
    pub round: usize,
    pub view_id: usize,
    pub psnr_gate: f64,
    pub unreliable: bool,
    pub augmented_count: usize,
}

/// Training cameras sorted by ascending pose distance to `camera`
/// (ties by index), truncated to `m`.
pub fn nearest_references(camera: &Camera, train_cams: &[Camera], m: usize, alpha: f64, beta: f64) -> Result<Vec<usize>> {
    if train_cams.is_empty() {
        return Err(Error::Invalid("no training cameras to use as references".into()));
    }
    if m > train_cams.len() {
        log::warn!("APE asked for {m} references but only {} training views exist", train_cams.len());
    }
    let mut order: Vec<(f64, usize)> =
        train_cams.iter().enumerate().map(|(i, c)| (pose_distance(&c.pose, &camera.pose, alpha, beta), i)).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(order.into_iter().take(m.max(1)).map(|(_, i)| i).collect())
}

/// Everything a round needs besides the cloud and the fixer.
pub struct ApeContext<'a> {
    pub train_cams: &'a [Camera],
    /// Reference images, aligned with `train_cams`.
    pub train_images: &'a [ImageBuffer],
    pub extra_cams: &'a [Camera],
    pub background: Vector3<f64>,
    pub render_opts: RenderOptions,
    pub pose_alpha: f64,
    pub pose_beta: f64,
}

/// One enhancement round. `round_index` counts completed training blocks;
/// the shift fraction is `min(1, round_index / total_rounds)`.
pub fn ape_round(
    cloud: &GaussianCloud,
    ctx: &ApeContext<'_>,
    fixer: &mut dyn Fixer,
    cfg: &ApeConfig,
    round_index: usize,
    total_rounds: usize,
) -> Result<(Vec<AugmentedView>, Vec<ApeAuditRow>)> {
    let tau = progress(round_index, total_rounds);
    let mut views = Vec::new();
    let mut audit = Vec::with_capacity(ctx.extra_cams.len());
    for (e, cam) in ctx.extra_cams.iter().enumerate() {
        let render = render_with(cloud, cam, &ctx.background, &ctx.render_opts);
        let refs = nearest_references(cam, ctx.train_cams, cfg.refs, ctx.pose_alpha, ctx.pose_beta)?;
        fixer.register(cam);
        let fixed = fixer.fix(cam, &render, &ctx.train_images[refs[0]])?;
        let gate = psnr(&fixed, &render)?;
        let unreliable = gate < cfg.eta;
        let before = views.len();
        if unreliable {
            for &r in &refs {
                let shifted_cam = cam.with_pose(shift(&ctx.train_cams[r].pose, &cam.pose, tau));
                let shifted = render_with(cloud, &shifted_cam, &ctx.background, &ctx.render_opts);
                fixer.register(&shifted_cam);
                let novel = fixer.fix(&shifted_cam, &shifted, &ctx.train_images[r])?;
                views.push(AugmentedView {
                    camera: shifted_cam,
                    target_image: novel,
                    origin: AugmentOrigin { extra_view: e, reference: r, round: round_index },
                });
            }
        }
        audit.push(ApeAuditRow { round: round_index, view_id: e, psnr_gate: gate, unreliable, augmented_count: views.len() - before });
    }
    Ok((views, audit))
}

/// Audit CSV: `round,view_id,psnr_gate,unreliable,augmented_count`.
pub fn audit_csv(rows: &[ApeAuditRow]) -> String {
    let mut out = String::from("round,view_id,psnr_gate,unreliable,augmented_count\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{:.4},{},{}", r.round, r.view_id, r.psnr_gate, r.unreliable as u8, r.augmented_count);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posemath::{Pose, Quat};
    use crate::prior::{IdentityFixer, OracleFixer};
    use crate::scene::{generate_scene, init_cloud, InitSpec, SceneSpec};

    fn cam_at(x: f64) -> Camera {
        Camera::new(Pose::new(Quat::IDENTITY, Vector3::new(x, 0.0, 0.0)), 30.0, 16, 16)
    }

    #[test]
    fn nearest_reference_ordering() {
        let train = vec![cam_at(3.0), cam_at(1.0), cam_at(2.0)];
        // brute-force oracle: distances are 0.5·|x|
        let got = nearest_references(&cam_at(0.0), &train, 2, 0.5, 0.5).unwrap();
        assert_eq!(got, vec![1, 2]);
        assert_eq!(nearest_references(&train[0], &train, 1, 0.5, 0.5).unwrap(), vec![0]);
        assert_eq!(nearest_references(&cam_at(0.0), &train, 10, 0.5, 0.5).unwrap(), vec![1, 2, 0]);
        assert!(nearest_references(&cam_at(0.0), &[], 1, 0.5, 0.5).is_err());
        // ties break by index
        let tied = vec![cam_at(1.0), cam_at(-1.0)];
        assert_eq!(nearest_references(&cam_at(0.0), &tied, 2, 0.5, 0.5).unwrap(), vec![0, 1]);
    }

    struct Setup {
        scene: crate::scene::SyntheticScene,
        train_images: Vec<ImageBuffer>,
        cloud: GaussianCloud,
    }

    fn setup() -> Setup {
        let spec = SceneSpec { gaussians: 20, width: 32, height: 32, ..SceneSpec::default() };
        let scene = generate_scene(&spec, 2).unwrap();
        let opts = RenderOptions::default();
        let train_images = scene.train_cams.iter().map(|c| render_with(&scene.ground_truth, c, &scene.background, &opts)).collect();
        let cloud = init_cloud(&scene, &InitSpec { position_noise: 0.3, ..InitSpec::default() }, 2).unwrap();
        Setup { scene, train_images, cloud }
    }

    fn ctx(s: &Setup) -> ApeContext<'_> {
        ApeContext {
            train_cams: &s.scene.train_cams,
            train_images: &s.train_images,
            extra_cams: &s.scene.extra_cams,
            background: s.scene.background,
            render_opts: RenderOptions::default(),
            pose_alpha: 0.5,
            pose_beta: 0.5,
        }
    }

    #[test]
    fn reliable_views_produce_nothing() {
        let s = setup();
        let cfg = ApeConfig { enabled: true, ..ApeConfig::default() };
        let (views, audit) = ape_round(&s.cloud, &ctx(&s), &mut IdentityFixer, &cfg, 1, 6).unwrap();
        assert!(views.is_empty());
        assert!(audit.iter().all(|r| !r.unreliable && r.psnr_gate == crate::metrics::PSNR_CAP));
    }

    #[test]
    fn unreliable_view_yields_m_augmentations() {
        let s = setup();
        let mut fixer = OracleFixer::new(&s.scene, 1.0, f64::NEG_INFINITY).unwrap();
        let cfg = ApeConfig { enabled: true, eta: 200.0, ..ApeConfig::default() };
        let c = ctx(&s);
        let one = ApeContext { extra_cams: &s.scene.extra_cams[..1], ..c };
        let (views, audit) = ape_round(&s.cloud, &one, &mut fixer, &cfg, 1, 6).unwrap();
        assert_eq!(views.len(), 3);
        assert_eq!(audit[0].augmented_count, 3);
        assert!(audit[0].unreliable);
        for v in &views {
            assert_eq!((v.target_image.width, v.target_image.height), (32, 32));
            assert_eq!(v.origin.extra_view, 0);
        }
    }

    #[test]
    fn final_round_lands_on_extra_view() {
        let s = setup();
        let mut fixer = OracleFixer::new(&s.scene, 1.0, f64::NEG_INFINITY).unwrap();
        let cfg = ApeConfig { enabled: true, eta: 200.0, refs: 2, ..ApeConfig::default() };
        let c = ctx(&s);
        let one = ApeContext { extra_cams: &s.scene.extra_cams[2..3], ..c };
        let (views, _) = ape_round(&s.cloud, &one, &mut fixer, &cfg, 6, 6).unwrap();
        for v in &views {
            assert_eq!(v.camera, s.scene.extra_cams[2]);
        }
    }

    #[test]
    fn shifted_cameras_lie_between_reference_and_target() {
        let s = setup();
        let mut fixer = OracleFixer::new(&s.scene, 1.0, f64::NEG_INFINITY).unwrap();
        let cfg = ApeConfig { enabled: true, eta: 200.0, ..ApeConfig::default() };
        let (views, _) = ape_round(&s.cloud, &ctx(&s), &mut fixer, &cfg, 2, 6).unwrap();
        assert!(!views.is_empty());
        for v in &views {
            let r = &s.scene.train_cams[v.origin.reference].pose;
            let c = &s.scene.extra_cams[v.origin.extra_view].pose;
            let total = pose_distance(r, c, 0.5, 0.5);
            let via = pose_distance(r, &v.camera.pose, 0.5, 0.5) + pose_distance(&v.camera.pose, c, 0.5, 0.5);
            assert!((via - total).abs() <= 0.05 * total, "{via} vs {total}");
        }
    }

    #[test]
    fn gate_monotone_in_eta() {
        let s = setup();
        let mut fixer = OracleFixer::new(&s.scene, 0.8, 14.0).unwrap();
        let mut last: Vec<bool> = vec![false; s.scene.extra_cams.len()];
        for eta in [15.0, 20.0, 25.0, 30.0] {
            let cfg = ApeConfig { enabled: true, eta, ..ApeConfig::default() };
            let (_, audit) = ape_round(&s.cloud, &ctx(&s), &mut fixer, &cfg, 1, 6).unwrap();
            for (row, prev) in audit.iter().zip(&mut last) {
                assert!(row.unreliable || !*prev, "raising eta un-flagged view {}", row.view_id);
                *prev = row.unreliable;
            }
        }
    }

    #[test]
    fn audit_format() {
        let rows = [ApeAuditRow { round: 1, view_id: 4, psnr_gate: 21.23456, unreliable: true, augmented_count: 3 }];
        assert_eq!(audit_csv(&rows), "round,view_id,psnr_gate,unreliable,augmented_count\n1,4,21.2346,1,3\n");
    }
}

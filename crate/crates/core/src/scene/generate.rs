//! Synthetic ground-truth scenes and initial clouds.

use std::f64::consts::TAU;

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{sh, Camera, Gaussian, GaussianCloud};
use crate::error::{Error, Result};
use crate::posemath::{Pose, Quat};

/// Generator parameters for a synthetic scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub gaussians: usize,
    /// Half-width of the cube holding Gaussian means.
    pub extent: f64,
    pub sh_degree: usize,
    pub ring_radius: f64,
    /// Camera height above the scene center.
    pub ring_height: f64,
    pub train_views: usize,
    /// Angle of the ring arc, starting at the first train view, that the
    /// train and interpolated extra views are spread over (full circle: τ).
    pub train_arc: f64,
    /// Extra views placed between each pair of consecutive train views.
    pub extra_per_gap: usize,
    /// Extra views placed further out and higher than the ring.
    pub far_views: usize,
    pub test_views: usize,
    pub width: usize,
    pub height: usize,
    /// Focal length in units of image width.
    pub focal_factor: f64,
    pub background: [f64; 3],
    /// Std-dev of the spherical-harmonic coefficients above degree 0.
    pub sh_band_std: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            gaussians: 50,
            extent: 1.0,
            sh_degree: 3,
            ring_radius: 4.0,
            ring_height: 1.0,
            train_views: 3,
            train_arc: TAU,
            extra_per_gap: 2,
            far_views: 1,
            test_views: 8,
            width: 64,
            height: 64,
            focal_factor: 1.4,
            background: [0.0; 3],
            sh_band_std: 0.3,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.gaussians == 0 {
            return Err(Error::Invalid("scene needs at least one gaussian".into()));
        }
        if self.train_views == 0 || self.test_views == 0 {
            return Err(Error::Invalid("scene needs at least one train and one test camera".into()));
        }
        if self.sh_degree > sh::MAX_SH_DEGREE {
            return Err(Error::Invalid(format!("sh_degree must be at most {}", sh::MAX_SH_DEGREE)));
        }
        if !(self.extent > 0.0 && self.ring_radius > self.extent * 1.5) {
            return Err(Error::Invalid("ring_radius must clear the scene extent".into()));
        }
        if !(self.train_arc > 0.0 && self.train_arc <= TAU) || !(self.sh_band_std >= 0.0) {
            return Err(Error::Invalid("train_arc must lie in (0, 2π] and sh_band_std must be non-negative".into()));
        }
        if self.width < 8 || self.height < 8 || self.focal_factor <= 0.0 {
            return Err(Error::Invalid("image must be at least 8x8 with positive focal length".into()));
        }
        Ok(())
    }
}

/// Ground truth plus disjoint train / extra / test camera sets.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub ground_truth: GaussianCloud,
    pub train_cams: Vec<Camera>,
    pub extra_cams: Vec<Camera>,
    /// Indices into `extra_cams` of the far views.
    pub far_extra: Vec<usize>,
    pub test_cams: Vec<Camera>,
    pub background: Vector3<f64>,
    pub seed: u64,
}

impl SyntheticScene {
    /// Largest distance of a ground-truth mean from the centroid, padded by
    /// one maximal scale.
    pub fn extent(&self) -> f64 {
        let c = centroid(&self.ground_truth);
        self.ground_truth
            .gaussians
            .iter()
            .map(|g| (g.position - c).norm() + g.scale().max())
            .fold(0.0, f64::max)
    }
}

fn centroid(cloud: &GaussianCloud) -> Vector3<f64> {
    if cloud.is_empty() {
        return Vector3::zeros();
    }
    cloud.gaussians.iter().map(|g| g.position).sum::<Vector3<f64>>() / cloud.len() as f64
}

fn random_rotation(rng: &mut impl Rng) -> Quat {
    // uniform on SO(3) (Shoemake)
    let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
    let a = (1.0 - u1).sqrt();
    let b = u1.sqrt();
    Quat::new(a * (TAU * u2).sin(), a * (TAU * u2).cos(), b * (TAU * u3).sin(), b * (TAU * u3).cos())
}

fn ring_camera(spec: &SceneSpec, center: Vector3<f64>, angle: f64, radius: f64, height: f64) -> Camera {
    let eye = center + Vector3::new(radius * angle.cos(), radius * angle.sin(), height);
    let pose = Pose::look_at(eye, center, Vector3::z());
    Camera::new(pose, spec.focal_factor * spec.width as f64, spec.width, spec.height)
}

/// Deterministic synthetic scene for a seed.
pub fn generate_scene(spec: &SceneSpec, seed: u64) -> Result<SyntheticScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let band = Normal::new(0.0, spec.sh_band_std).map_err(|e| Error::Invalid(e.to_string()))?;
    let mut gt = GaussianCloud::new(spec.sh_degree);
    for _ in 0..spec.gaussians {
        let position = Vector3::new(
            rng.random_range(-spec.extent..spec.extent),
            rng.random_range(-spec.extent..spec.extent),
            rng.random_range(-spec.extent..spec.extent) * 0.6,
        );
        let base = 0.12 * spec.extent;
        let log_scale = Vector3::new(
            (base * rng.random_range(0.6..1.8f64)).ln(),
            (base * rng.random_range(0.6..1.8f64)).ln(),
            (base * rng.random_range(0.6..1.8f64)).ln(),
        );
        let color = Vector3::new(rng.random_range(0.1..0.95), rng.random_range(0.1..0.95), rng.random_range(0.1..0.95));
        let mut g = Gaussian::flat(position, 1.0, rng.random_range(0.55..0.95), color, spec.sh_degree);
        g.log_scale = log_scale;
        g.rotation = random_rotation(&mut rng);
        for coeff in g.sh.iter_mut().skip(1) {
            for ch in coeff.iter_mut() {
                *ch = band.sample(&mut rng);
            }
        }
        gt.gaussians.push(g);
    }

    let center = centroid(&gt);
    let phase = rng.random_range(0.0..TAU);
    let n_train = spec.train_views;
    let step = spec.train_arc / n_train as f64;
    let train_cams = (0..n_train)
        .map(|k| ring_camera(spec, center, phase + step * k as f64, spec.ring_radius, spec.ring_height))
        .collect();
    let mut extra_cams = Vec::new();
    for k in 0..n_train {
        for j in 1..=spec.extra_per_gap {
            let frac = j as f64 / (spec.extra_per_gap + 1) as f64;
            let angle = phase + step * (k as f64 + frac);
            extra_cams.push(ring_camera(spec, center, angle, spec.ring_radius, spec.ring_height));
        }
    }
    let mut far_extra = Vec::new();
    for k in 0..spec.far_views {
        let angle = phase + step * 0.5 + TAU * k as f64 / spec.far_views as f64;
        far_extra.push(extra_cams.len());
        extra_cams.push(ring_camera(spec, center, angle, spec.ring_radius * 1.3, spec.ring_height + 1.5 * spec.ring_radius));
    }
    // offset by half a test step so test views never coincide with train or interpolated views
    let test_step = TAU / spec.test_views as f64;
    let test_cams = (0..spec.test_views)
        .map(|k| ring_camera(spec, center, phase + test_step * (k as f64 + 0.5) + 0.13, spec.ring_radius, spec.ring_height))
        .collect();

    Ok(SyntheticScene {
        ground_truth: gt,
        train_cams,
        extra_cams,
        far_extra,
        test_cams,
        background: Vector3::from(spec.background),
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    /// A subset of the ground truth with positional and color noise.
    NoisySubset,
    /// Uniform random means inside the ground-truth bounds.
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitSpec {
    pub mode: InitMode,
    /// Fraction of ground-truth Gaussians kept (also sets the random-mode count).
    pub keep: f64,
    pub position_noise: f64,
    /// Std-dev of the perturbation applied to each base color channel.
    pub color_noise: f64,
}

impl Default for InitSpec {
    fn default() -> Self {
        InitSpec { mode: InitMode::NoisySubset, keep: 1.0, position_noise: 0.1, color_noise: 0.25 }
    }
}

/// Initial cloud for optimization.
pub fn init_cloud(scene: &SyntheticScene, spec: &InitSpec, seed: u64) -> Result<GaussianCloud> {
    if !(spec.keep > 0.0 && spec.keep <= 1.0) {
        return Err(Error::Invalid("init keep fraction must lie in (0, 1]".into()));
    }
    let gt = &scene.ground_truth;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1417_c10d);
    let count = ((gt.len() as f64 * spec.keep).round() as usize).clamp(1, gt.len().max(1));
    let mut cloud = GaussianCloud::new(gt.sh_degree);
    match spec.mode {
        InitMode::NoisySubset => {
            let mut idx: Vec<usize> = (0..gt.len()).collect();
            if count < gt.len() {
                idx.shuffle(&mut rng);
                idx.truncate(count);
                idx.sort_unstable();
            }
            let pos_noise = Normal::new(0.0, spec.position_noise.max(0.0)).map_err(|e| Error::Invalid(e.to_string()))?;
            let col_noise = Normal::new(0.0, spec.color_noise.max(0.0)).map_err(|e| Error::Invalid(e.to_string()))?;
            for i in idx {
                let mut g = gt.gaussians[i].clone();
                if spec.position_noise > 0.0 {
                    for a in 0..3 {
                        g.position[a] += pos_noise.sample(&mut rng);
                    }
                }
                if spec.color_noise > 0.0 {
                    for ch in 0..3 {
                        let base = g.sh[0][ch] * sh::SH_C0 + sh::SH_OFFSET;
                        let noisy = (base + col_noise.sample(&mut rng)).clamp(0.02, 0.98);
                        g.sh[0][ch] = sh::dc_from_color(noisy);
                    }
                    for coeff in g.sh.iter_mut().skip(1) {
                        *coeff = [0.0; 3];
                    }
                }
                cloud.gaussians.push(g);
            }
        }
        InitMode::Random => {
            let (lo, hi) = gt.bounds().unwrap_or((Vector3::repeat(-1.0), Vector3::repeat(1.0)));
            let size = (hi - lo).max().max(1e-3);
            for _ in 0..count {
                let p = Vector3::new(
                    lo.x + rng.random::<f64>() * (hi.x - lo.x),
                    lo.y + rng.random::<f64>() * (hi.y - lo.y),
                    lo.z + rng.random::<f64>() * (hi.z - lo.z),
                );
                let color = Vector3::new(rng.random_range(0.2..0.8), rng.random_range(0.2..0.8), rng.random_range(0.2..0.8));
                cloud.gaussians.push(Gaussian::flat(p, size / 12.0, 0.5, color, gt.sh_degree));
            }
        }
    }
    Ok(cloud)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posemath::pose_distance;

    #[test]
    fn generation_is_deterministic() {
        let spec = SceneSpec::default();
        let a = generate_scene(&spec, 7).unwrap();
        let b = generate_scene(&spec, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.ground_truth.len(), 50);
        assert_ne!(a, generate_scene(&spec, 8).unwrap());
    }

    #[test]
    fn camera_sets_are_sparse_and_disjoint() {
        let spec = SceneSpec::default();
        let s = generate_scene(&spec, 3).unwrap();
        assert_eq!(s.train_cams.len(), 3);
        assert_eq!(s.test_cams.len(), 8);
        assert_eq!(s.extra_cams.len(), 3 * 2 + 1);
        assert_eq!(s.far_extra, vec![6]);
        for (i, a) in s.train_cams.iter().enumerate() {
            for b in &s.train_cams[i + 1..] {
                assert!(pose_distance(&a.pose, &b.pose, 0.5, 0.5) > 0.0);
            }
        }
        let all: Vec<&Camera> = s.train_cams.iter().chain(&s.extra_cams).chain(&s.test_cams).collect();
        for (i, a) in all.iter().enumerate() {
            for b in &all[i + 1..] {
                assert!(pose_distance(&a.pose, &b.pose, 0.5, 0.5) > 1e-3);
            }
        }
    }

    #[test]
    fn cameras_look_at_centroid() {
        let s = generate_scene(&SceneSpec::default(), 11).unwrap();
        let c = centroid(&s.ground_truth);
        let w = s.train_cams[0].width as f64;
        for cam in s.train_cams.iter().chain(&s.test_cams).chain(&s.extra_cams) {
            let px = cam.project_point(&c).unwrap();
            assert!((px.x - w / 2.0).abs() < 1e-9 && (px.y - w / 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_cameras_rejected() {
        let spec = SceneSpec { train_views: 0, ..SceneSpec::default() };
        assert!(generate_scene(&spec, 0).is_err());
        let spec = SceneSpec { gaussians: 0, ..SceneSpec::default() };
        assert!(generate_scene(&spec, 0).is_err());
    }

    #[test]
    fn init_modes() {
        let s = generate_scene(&SceneSpec::default(), 5).unwrap();
        let exact = InitSpec { keep: 1.0, position_noise: 0.0, color_noise: 0.0, ..InitSpec::default() };
        assert_eq!(init_cloud(&s, &exact, 1).unwrap(), s.ground_truth);
        let half = InitSpec { keep: 0.5, position_noise: 0.1, ..InitSpec::default() };
        assert_eq!(init_cloud(&s, &half, 1).unwrap().len(), 25);
        let rnd = InitSpec { mode: InitMode::Random, ..InitSpec::default() };
        assert_eq!(init_cloud(&s, &rnd, 9).unwrap(), init_cloud(&s, &rnd, 9).unwrap());
        assert_eq!(init_cloud(&s, &rnd, 9).unwrap().len(), 50);
    }
}

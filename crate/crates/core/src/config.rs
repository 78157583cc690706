//! Experiment configuration: a flat `key = value` text format.
//!
//! Grammar, one entry per line:
//!
//! ```text
//! line    := blank | comment | entry
//! comment := '#' any*
//! entry   := key ws* '=' ws* value ws* comment?
//! key     := name ('.' name)*          e.g. train.iters, ape.eta
//! ```
//!
//! Keys are grouped by prefix (`scene.`, `init.`, `fixer.`, `train.`,
//! `ape.`, `eval.`); `method`, `seed` and `out` have none. Unknown and
//! repeated keys are rejected with the offending line number. Omitted keys
//! keep their defaults, which describe the stock benchmark.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::ape::ApeConfig;
use crate::error::{Error, Result};
use crate::renderer::Parallelism;
use crate::scene::{InitMode, InitSpec, SceneSpec};
use crate::trainer::{DistillMode, TrainConfig};

/// Training recipe compared by the experiment runner.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Photo loss only.
    Baseline,
    /// Distillation with fixer targets refreshed every `train.interval` iterations.
    Interval,
    /// Distillation with fixer targets refreshed at every use.
    Continuous,
    /// Continuous distillation plus adaptive progressive enhancement.
    ContinuousApe,
}

impl Method {
    /// The ablation matrix, in report order.
    pub const ALL: [Method; 4] = [Method::Baseline, Method::Interval, Method::Continuous, Method::ContinuousApe];

    pub fn name(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::Interval => "interval",
            Method::Continuous => "continuous",
            Method::ContinuousApe => "continuous+ape",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}` (expected baseline, interval, continuous, continuous+ape or matrix)")))
    }
}

/// One method or the full ablation matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodSelection {
    Single(Method),
    Matrix,
}

impl MethodSelection {
    pub fn methods(self) -> Vec<Method> {
        match self {
            MethodSelection::Single(m) => vec![m],
            MethodSelection::Matrix => Method::ALL.to_vec(),
        }
    }

    fn name(self) -> &'static str {
        match self {
            MethodSelection::Single(m) => m.name(),
            MethodSelection::Matrix => "matrix",
        }
    }
}

impl FromStr for MethodSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "matrix" {
            Ok(MethodSelection::Matrix)
        } else {
            s.parse().map(MethodSelection::Single)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FixerSpec {
    Identity,
    Oracle { strength: f64, knee: f64 },
    Blur { sigma: f64 },
}

impl Default for FixerSpec {
    fn default() -> Self {
        FixerSpec::Oracle { strength: 0.8, knee: 14.0 }
    }
}

/// Multi-view consistency evaluation settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSpec {
    /// Epipolar distance threshold in pixels.
    pub tsed_threshold: f64,
    /// Interpolated frames between consecutive test views.
    pub tsed_frames: usize,
    pub patch_radius: usize,
    pub search_radius: usize,
}

impl Default for EvalSpec {
    fn default() -> Self {
        EvalSpec { tsed_threshold: 2.0, tsed_frames: 4, patch_radius: 3, search_radius: 4 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub method: MethodSelection,
    pub seed: u64,
    pub out: PathBuf,
    /// Directory written by `splatfix gen`; when set, `scene.*` generator
    /// keys other than `scene.background` are ignored.
    pub scene_path: Option<PathBuf>,
    pub scene: SceneSpec,
    pub init: InitSpec,
    pub fixer: FixerSpec,
    /// Interval length for the interval method.
    pub interval: usize,
    /// Training settings; the distillation mode and APE switch are derived
    /// from `method`.
    pub train: TrainConfig,
    pub eval: EvalSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            method: MethodSelection::Single(Method::Continuous),
            seed: 0,
            out: PathBuf::from("out"),
            scene_path: None,
            scene: SceneSpec::default(),
            init: InitSpec::default(),
            fixer: FixerSpec::default(),
            interval: 2000,
            train: TrainConfig::default(),
            eval: EvalSpec::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected true or false, got `{value}`"))),
    }
}

impl ExperimentConfig {
    /// Parses configuration text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: `{key}` given twice", n + 1)));
            }
            cfg.set(key, value).map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("line {}: {msg}", n + 1)),
                other => other,
            })?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        let s = &mut self.scene;
        match key {
            "method" => self.method = value.parse()?,
            "seed" => self.seed = parse(key, value)?,
            "out" => self.out = PathBuf::from(value),

            "scene.path" => self.scene_path = (!value.is_empty()).then(|| PathBuf::from(value)),
            "scene.gaussians" => s.gaussians = parse(key, value)?,
            "scene.extent" => s.extent = parse(key, value)?,
            "scene.sh_degree" => s.sh_degree = parse(key, value)?,
            "scene.sh_band_std" => s.sh_band_std = parse(key, value)?,
            "scene.ring_radius" => s.ring_radius = parse(key, value)?,
            "scene.ring_height" => s.ring_height = parse(key, value)?,
            "scene.train_views" => s.train_views = parse(key, value)?,
            "scene.train_arc" => s.train_arc = parse(key, value)?,
            "scene.extra_per_gap" => s.extra_per_gap = parse(key, value)?,
            "scene.far_views" => s.far_views = parse(key, value)?,
            "scene.test_views" => s.test_views = parse(key, value)?,
            "scene.width" => s.width = parse(key, value)?,
            "scene.height" => s.height = parse(key, value)?,
            "scene.focal_factor" => s.focal_factor = parse(key, value)?,
            "scene.background" => {
                let parts: Vec<&str> = value.split(',').map(str::trim).collect();
                if parts.len() != 3 {
                    return Err(Error::Config(format!("`{key}`: expected three comma-separated values")));
                }
                for (c, p) in s.background.iter_mut().zip(parts) {
                    *c = parse(key, p)?;
                }
            }

            "init.mode" => {
                self.init.mode = match value {
                    "noisy" => InitMode::NoisySubset,
                    "random" => InitMode::Random,
                    _ => return Err(Error::Config(format!("`{key}`: expected noisy or random, got `{value}`"))),
                }
            }
            "init.keep" => self.init.keep = parse(key, value)?,
            "init.position_noise" => self.init.position_noise = parse(key, value)?,
            "init.color_noise" => self.init.color_noise = parse(key, value)?,

            "fixer.kind" => {
                self.fixer = match value {
                    "identity" => FixerSpec::Identity,
                    "oracle" => match self.fixer {
                        f @ FixerSpec::Oracle { .. } => f,
                        _ => FixerSpec::default(),
                    },
                    "blur" => match self.fixer {
                        f @ FixerSpec::Blur { .. } => f,
                        _ => FixerSpec::Blur { sigma: 1.0 },
                    },
                    _ => return Err(Error::Config(format!("`{key}`: expected identity, oracle or blur, got `{value}`"))),
                }
            }
            "fixer.strength" | "fixer.knee" => {
                let FixerSpec::Oracle { strength, knee } = &mut self.fixer else {
                    return Err(Error::Config(format!("`{key}` applies to the oracle fixer only (set fixer.kind first)")));
                };
                *(if key == "fixer.strength" { strength } else { knee }) = parse(key, value)?;
            }
            "fixer.sigma" => {
                let FixerSpec::Blur { sigma } = &mut self.fixer else {
                    return Err(Error::Config(format!("`{key}` applies to the blur fixer only (set fixer.kind first)")));
                };
                *sigma = parse(key, value)?;
            }

            "train.iters" => t.iters = parse(key, value)?,
            "train.interval" => self.interval = parse(key, value)?,
            "train.lr_position" => t.lr.position = parse(key, value)?,
            "train.lr_position_final" => t.lr.position_final_ratio = parse(key, value)?,
            "train.lr_rotation" => t.lr.rotation = parse(key, value)?,
            "train.lr_scale" => t.lr.log_scale = parse(key, value)?,
            "train.lr_opacity" => t.lr.opacity = parse(key, value)?,
            "train.lr_sh" => t.lr.sh = parse(key, value)?,
            "train.adam_beta1" => t.adam.beta1 = parse(key, value)?,
            "train.adam_beta2" => t.adam.beta2 = parse(key, value)?,
            "train.adam_eps" => t.adam.eps = parse(key, value)?,
            "train.extra_views_per_iter" => t.extra_views_per_iter = parse(key, value)?,
            "train.freeze" => t.freeze.enabled = parse_bool(key, value)?,
            "train.freeze_psnr" => t.freeze.psnr = parse(key, value)?,
            "train.freeze_patience" => t.freeze.patience = parse(key, value)?,
            "train.freeze_check_every" => t.freeze.check_every = parse(key, value)?,
            "train.prune_opacity" => t.prune_opacity = parse(key, value)?,
            "train.prune_every" => t.prune_every = parse(key, value)?,
            "train.eval_every" => t.eval_every = parse(key, value)?,
            "train.lambda_l1" => t.loss.lambda_l1 = parse(key, value)?,
            "train.lambda_ssim" => t.loss.lambda_ssim = parse(key, value)?,
            "train.omega" => t.loss.omega = parse(key, value)?,
            "train.t0" => t.loss.t0 = parse(key, value)?,
            "train.pose_alpha" => t.pose_alpha = parse(key, value)?,
            "train.pose_beta" => t.pose_beta = parse(key, value)?,
            "train.parallelism" => {
                t.render.parallelism = match value {
                    "serial" => Parallelism::Serial,
                    "tiles" => Parallelism::Tiles,
                    _ => return Err(Error::Config(format!("`{key}`: expected serial or tiles, got `{value}`"))),
                }
            }
            "train.cutoff_sigma" => t.render.cutoff_sigma = parse(key, value)?,

            "ape.eta" => t.ape.eta = parse(key, value)?,
            "ape.refs" => t.ape.refs = parse(key, value)?,
            "ape.every" => t.ape.every = parse(key, value)?,
            "ape.weight" => t.ape.weight = parse(key, value)?,

            "eval.tsed_threshold" => self.eval.tsed_threshold = parse(key, value)?,
            "eval.tsed_frames" => self.eval.tsed_frames = parse(key, value)?,
            "eval.patch_radius" => self.eval.patch_radius = parse(key, value)?,
            "eval.search_radius" => self.eval.search_radius = parse(key, value)?,

            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Every key with its current value, in file order. Parsing the
    /// rendered text reproduces this configuration exactly.
    pub fn to_text(&self) -> String {
        let s = &self.scene;
        let t = &self.train;
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("method", self.method.name().into());
        put("seed", self.seed.to_string());
        put("out", self.out.display().to_string());
        put("scene.path", self.scene_path.as_ref().map(|p| p.display().to_string()).unwrap_or_default());
        put("scene.gaussians", s.gaussians.to_string());
        put("scene.extent", s.extent.to_string());
        put("scene.sh_degree", s.sh_degree.to_string());
        put("scene.sh_band_std", s.sh_band_std.to_string());
        put("scene.ring_radius", s.ring_radius.to_string());
        put("scene.ring_height", s.ring_height.to_string());
        put("scene.train_views", s.train_views.to_string());
        put("scene.train_arc", s.train_arc.to_string());
        put("scene.extra_per_gap", s.extra_per_gap.to_string());
        put("scene.far_views", s.far_views.to_string());
        put("scene.test_views", s.test_views.to_string());
        put("scene.width", s.width.to_string());
        put("scene.height", s.height.to_string());
        put("scene.focal_factor", s.focal_factor.to_string());
        put("scene.background", format!("{},{},{}", s.background[0], s.background[1], s.background[2]));
        put("init.mode", if self.init.mode == InitMode::Random { "random" } else { "noisy" }.into());
        put("init.keep", self.init.keep.to_string());
        put("init.position_noise", self.init.position_noise.to_string());
        put("init.color_noise", self.init.color_noise.to_string());
        match self.fixer {
            FixerSpec::Identity => put("fixer.kind", "identity".into()),
            FixerSpec::Oracle { strength, knee } => {
                put("fixer.kind", "oracle".into());
                put("fixer.strength", strength.to_string());
                put("fixer.knee", knee.to_string());
            }
            FixerSpec::Blur { sigma } => {
                put("fixer.kind", "blur".into());
                put("fixer.sigma", sigma.to_string());
            }
        }
        put("train.iters", t.iters.to_string());
        put("train.interval", self.interval.to_string());
        put("train.lr_position", t.lr.position.to_string());
        put("train.lr_position_final", t.lr.position_final_ratio.to_string());
        put("train.lr_rotation", t.lr.rotation.to_string());
        put("train.lr_scale", t.lr.log_scale.to_string());
        put("train.lr_opacity", t.lr.opacity.to_string());
        put("train.lr_sh", t.lr.sh.to_string());
        put("train.adam_beta1", t.adam.beta1.to_string());
        put("train.adam_beta2", t.adam.beta2.to_string());
        put("train.adam_eps", t.adam.eps.to_string());
        put("train.extra_views_per_iter", t.extra_views_per_iter.to_string());
        put("train.freeze", t.freeze.enabled.to_string());
        put("train.freeze_psnr", t.freeze.psnr.to_string());
        put("train.freeze_patience", t.freeze.patience.to_string());
        put("train.freeze_check_every", t.freeze.check_every.to_string());
        put("train.prune_opacity", t.prune_opacity.to_string());
        put("train.prune_every", t.prune_every.to_string());
        put("train.eval_every", t.eval_every.to_string());
        put("train.lambda_l1", t.loss.lambda_l1.to_string());
        put("train.lambda_ssim", t.loss.lambda_ssim.to_string());
        put("train.omega", t.loss.omega.to_string());
        put("train.t0", t.loss.t0.to_string());
        put("train.pose_alpha", t.pose_alpha.to_string());
        put("train.pose_beta", t.pose_beta.to_string());
        put("train.parallelism", if t.render.parallelism == Parallelism::Serial { "serial" } else { "tiles" }.into());
        put("train.cutoff_sigma", t.render.cutoff_sigma.to_string());
        put("ape.eta", t.ape.eta.to_string());
        put("ape.refs", t.ape.refs.to_string());
        put("ape.every", t.ape.every.to_string());
        put("ape.weight", t.ape.weight.to_string());
        put("eval.tsed_threshold", self.eval.tsed_threshold.to_string());
        put("eval.tsed_frames", self.eval.tsed_frames.to_string());
        put("eval.patch_radius", self.eval.patch_radius.to_string());
        put("eval.search_radius", self.eval.search_radius.to_string());
        out
    }

    /// Checks everything that can be checked before any compute.
    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: Error| Error::Config(e.to_string());
        if ![3, 6, 9].contains(&self.scene.train_views) {
            return Err(Error::Config(format!("scene.train_views must be 3, 6 or 9, got {}", self.scene.train_views)));
        }
        if self.scene_path.is_none() {
            self.scene.validate().map_err(cfg_err)?;
        }
        if !(self.init.keep > 0.0 && self.init.keep <= 1.0) || self.init.position_noise < 0.0 || self.init.color_noise < 0.0 {
            return Err(Error::Config("init.keep must lie in (0, 1] and init noise must be non-negative".into()));
        }
        match self.fixer {
            FixerSpec::Oracle { strength, .. } if !(strength > 0.0 && strength <= 1.0) => {
                return Err(Error::Config("fixer.strength must lie in (0, 1]".into()));
            }
            FixerSpec::Blur { sigma } if !(sigma >= 0.0) => return Err(Error::Config("fixer.sigma must be non-negative".into())),
            _ => {}
        }
        if self.interval == 0 {
            return Err(Error::Config("train.interval must be at least 1".into()));
        }
        if !(self.eval.tsed_threshold > 0.0) || self.eval.tsed_frames == 0 || self.eval.patch_radius == 0 {
            return Err(Error::Config("eval.tsed_threshold, eval.tsed_frames and eval.patch_radius must be positive".into()));
        }
        for m in self.method.methods() {
            self.train_config(m).validate().map_err(cfg_err)?;
        }
        ApeConfig { enabled: true, ..self.train.ape }.validate().map_err(cfg_err)
    }

    /// Training settings for one method.
    pub fn train_config(&self, method: Method) -> TrainConfig {
        let mut t = self.train.clone();
        t.seed = self.seed;
        t.distill = match method {
            Method::Baseline => DistillMode::Off,
            Method::Interval => DistillMode::Interval(self.interval),
            Method::Continuous | Method::ContinuousApe => DistillMode::Continuous,
        };
        t.ape.enabled = method == Method::ContinuousApe;
        t
    }
}

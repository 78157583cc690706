//! Text formats for clouds (`.gsc`) and camera lists (`.cam`).
//!
//! `.gsc`: a header line `GSC 1 <sh_degree>`, then one line per Gaussian:
//! `μx μy μz qw qx qy qz ls1 ls2 ls3 op_logit sh...` where `sh` holds
//! `3·(L+1)²` values, coefficient-major (`c0.r c0.g c0.b c1.r ...`).
//!
//! `.cam`: one line per camera, `fx fy cx cy W H near far qw qx qy qz tx ty tz`.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a save
//! followed by a load reproduces every bit.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use super::{sh, Camera, Gaussian, GaussianCloud};
use crate::error::{Error, Result};
use crate::posemath::{Pose, Quat};

const GSC_MAGIC: &str = "GSC";
const GSC_VERSION: u32 = 1;
const CAMERA_FIELDS: [&str; 15] = ["fx", "fy", "cx", "cy", "W", "H", "near", "far", "qw", "qx", "qy", "qz", "tx", "ty", "tz"];

pub fn write_cloud(cloud: &GaussianCloud) -> String {
    let mut out = format!("{GSC_MAGIC} {GSC_VERSION} {}\n", cloud.sh_degree);
    for g in &cloud.gaussians {
        let q = g.rotation;
        let mut fields: Vec<f64> = vec![
            g.position.x, g.position.y, g.position.z, q.w, q.x, q.y, q.z,
            g.log_scale.x, g.log_scale.y, g.log_scale.z, g.opacity_logit,
        ];
        fields.extend(g.sh.iter().flatten());
        let line: Vec<String> = fields.iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    out
}

pub fn save_cloud(path: impl AsRef<Path>, cloud: &GaussianCloud) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, write_cloud(cloud)).map_err(|e| Error::io(path, e))
}

pub fn load_cloud(path: impl AsRef<Path>) -> Result<GaussianCloud> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_cloud(&text, &path.display().to_string())
}

fn field_name(i: usize) -> String {
    const NAMES: [&str; 11] = ["mu_x", "mu_y", "mu_z", "qw", "qx", "qy", "qz", "ls1", "ls2", "ls3", "op_logit"];
    NAMES.get(i).map(|s| s.to_string()).unwrap_or_else(|| format!("sh[{}]", i - NAMES.len()))
}

fn parse_err(origin: &str, line: usize, field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Parse { path: origin.to_string(), line, field: field.into(), message: message.into() }
}

pub fn parse_cloud(text: &str, origin: &str) -> Result<GaussianCloud> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| parse_err(origin, 1, "header", "empty file"))?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 3 || parts[0] != GSC_MAGIC {
        return Err(parse_err(origin, 1, "header", format!("expected `{GSC_MAGIC} {GSC_VERSION} <sh_degree>`")));
    }
    if parts[1] != GSC_VERSION.to_string() {
        return Err(parse_err(origin, 1, "version", format!("unsupported version {}", parts[1])));
    }
    let sh_degree: usize = parts[2].parse().map_err(|_| parse_err(origin, 1, "sh_degree", "not an integer"))?;
    if sh_degree > sh::MAX_SH_DEGREE {
        return Err(parse_err(origin, 1, "sh_degree", format!("must be at most {}", sh::MAX_SH_DEGREE)));
    }
    let n_sh = sh::coeff_count(sh_degree);
    let expected = 11 + 3 * n_sh;
    let mut cloud = GaussianCloud::new(sh_degree);
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let vals = line
            .split_whitespace()
            .enumerate()
            .map(|(i, tok)| tok.parse::<f64>().map_err(|_| parse_err(origin, lineno, field_name(i), format!("cannot parse `{tok}`"))))
            .collect::<Result<Vec<f64>>>()?;
        if vals.len() != expected {
            let field = if vals.len() < expected { field_name(vals.len()) } else { "line".to_string() };
            return Err(parse_err(origin, lineno, field, format!("expected {expected} values, found {}", vals.len())));
        }
        let sh = vals[11..].chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        cloud.gaussians.push(Gaussian {
            position: Vector3::new(vals[0], vals[1], vals[2]),
            rotation: Quat::from_raw(vals[3], vals[4], vals[5], vals[6]),
            log_scale: Vector3::new(vals[7], vals[8], vals[9]),
            opacity_logit: vals[10],
            sh,
        });
    }
    Ok(cloud)
}

pub fn write_cameras(cams: &[Camera]) -> String {
    let mut out = String::new();
    for c in cams {
        let q = c.pose.rotation;
        let t = c.pose.translation;
        let _ = writeln!(
            out,
            "{:?} {:?} {:?} {:?} {} {} {:?} {:?} {:?} {:?} {:?} {:?} {:?} {:?} {:?}",
            c.fx, c.fy, c.cx, c.cy, c.width, c.height, c.near, c.far, q.w, q.x, q.y, q.z, t.x, t.y, t.z
        );
    }
    out
}

pub fn save_cameras(path: impl AsRef<Path>, cams: &[Camera]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, write_cameras(cams)).map_err(|e| Error::io(path, e))
}

pub fn load_cameras(path: impl AsRef<Path>) -> Result<Vec<Camera>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_cameras(&text, &path.display().to_string())
}

pub fn parse_cameras(text: &str, origin: &str) -> Result<Vec<Camera>> {
    let mut cams = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != CAMERA_FIELDS.len() {
            let field = CAMERA_FIELDS.get(toks.len()).copied().unwrap_or("line");
            return Err(parse_err(origin, lineno, field, format!("expected {} values, found {}", CAMERA_FIELDS.len(), toks.len())));
        }
        let mut v = [0.0f64; 15];
        for (i, tok) in toks.iter().enumerate() {
            if i == 4 || i == 5 {
                let n: usize = tok.parse().map_err(|_| parse_err(origin, lineno, CAMERA_FIELDS[i], format!("`{tok}` is not an integer")))?;
                v[i] = n as f64;
            } else {
                v[i] = tok.parse().map_err(|_| parse_err(origin, lineno, CAMERA_FIELDS[i], format!("cannot parse `{tok}`")))?;
            }
        }
        let cam = Camera {
            fx: v[0],
            fy: v[1],
            cx: v[2],
            cy: v[3],
            width: v[4] as usize,
            height: v[5] as usize,
            near: v[6],
            far: v[7],
            pose: Pose { rotation: Quat::from_raw(v[8], v[9], v[10], v[11]), translation: Vector3::new(v[12], v[13], v[14]) },
        };
        cam.validate().map_err(|e| parse_err(origin, lineno, "camera", e.to_string()))?;
        cams.push(cam);
    }
    Ok(cams)
}

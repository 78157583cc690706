//! Perspective projection of 3D Gaussians (EWA first-order covariance
//! propagation) and its adjoint.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use super::{GaussianGrad, RenderOptions, DEFAULT_CUTOFF_SIGMA, LOW_PASS};
use crate::scene::{sh, Camera, Gaussian, GaussianCloud};

/// A Gaussian after projection into one camera.
#[derive(Debug, Clone, PartialEq)]
pub struct Splat2D {
    /// Pixel coordinates; pixel `(i, j)` covers `[i, i+1) × [j, j+1)`.
    pub mean2d: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    /// Camera-space z.
    pub depth: f64,
    /// View-dependent color, clamped to `[0, 1]`.
    pub color: Vector3<f64>,
    pub opacity: f64,
    pub source_index: usize,
    /// Inverse covariance `(a, b, c)` for `[[a, b], [b, c]]`.
    pub conic: [f64; 3],
    /// Half-width of the square support, in pixels.
    pub radius: f64,
}

/// Splat-space gradient accumulated by the rasterizer.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct SplatGrad {
    pub mean2d: [f64; 2],
    pub conic: [f64; 3],
    pub color: [f64; 3],
    pub opacity: f64,
}

impl SplatGrad {
    pub fn add(&mut self, o: &SplatGrad) {
        self.mean2d[0] += o.mean2d[0];
        self.mean2d[1] += o.mean2d[1];
        for k in 0..3 {
            self.conic[k] += o.conic[k];
            self.color[k] += o.color[k];
        }
        self.opacity += o.opacity;
    }
}

struct ProjectionTerms {
    cam_point: Vector3<f64>,
    jw: Matrix2x3<f64>,
    cov3: Matrix3<f64>,
    cov2d: Matrix2<f64>,
}

fn projection_terms(g: &Gaussian, camera: &Camera, w: &Matrix3<f64>, t: &Vector3<f64>) -> ProjectionTerms {
    let p = w * g.position + t;
    let (x, y, z) = (p.x, p.y, p.z);
    let j = Matrix2x3::new(camera.fx / z, 0.0, -camera.fx * x / (z * z), 0.0, camera.fy / z, -camera.fy * y / (z * z));
    let jw = j * w;
    let cov3 = g.covariance();
    let cov2d = jw * cov3 * jw.transpose() + Matrix2::identity() * LOW_PASS;
    ProjectionTerms { cam_point: p, jw, cov3, cov2d }
}

/// Projects with the default 3σ support.
pub fn project(cloud: &GaussianCloud, camera: &Camera) -> Vec<Splat2D> {
    project_with(cloud, camera, &RenderOptions { cutoff_sigma: DEFAULT_CUTOFF_SIGMA, ..Default::default() })
}

/// Projects, culls and depth-sorts (stable by source index).
///
/// Splats closer than `near`, beyond `far`, or whose support lies fully
/// outside the image are dropped.
pub fn project_with(cloud: &GaussianCloud, camera: &Camera, opts: &RenderOptions) -> Vec<Splat2D> {
    let (w, t) = camera.pose.world_to_camera();
    let center = camera.center();
    let (width, height) = (camera.width as f64, camera.height as f64);
    let mut splats = Vec::with_capacity(cloud.len());
    for (i, g) in cloud.gaussians.iter().enumerate() {
        let p = w * g.position + t;
        if p.z <= camera.near || p.z >= camera.far {
            continue;
        }
        let terms = projection_terms(g, camera, &w, &t);
        let cov = terms.cov2d;
        let det = cov[(0, 0)] * cov[(1, 1)] - cov[(0, 1)] * cov[(1, 0)];
        if !(det > 0.0) {
            continue;
        }
        let mean2d = Vector2::new(camera.fx * p.x / p.z + camera.cx, camera.fy * p.y / p.z + camera.cy);
        let mid = 0.5 * (cov[(0, 0)] + cov[(1, 1)]);
        let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
        let radius = opts.cutoff_sigma * lambda_max.sqrt();
        if mean2d.x + radius < 0.0 || mean2d.x - radius > width || mean2d.y + radius < 0.0 || mean2d.y - radius > height {
            continue;
        }
        let conic = [cov[(1, 1)] / det, -cov[(0, 1)] / det, cov[(0, 0)] / det];
        let raw = g.color_from(cloud.sh_degree, &center);
        splats.push(Splat2D {
            mean2d,
            cov2d: cov,
            depth: p.z,
            color: raw.map(|c| c.clamp(0.0, 1.0)),
            opacity: g.opacity(),
            source_index: i,
            conic,
            radius,
        });
    }
    splats.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.source_index.cmp(&b.source_index)));
    splats
}

/// Chains a splat-space gradient back to the Gaussian's parameters.
pub(crate) fn backward_splat(g: &Gaussian, sh_degree: usize, camera: &Camera, sg: &SplatGrad) -> GaussianGrad {
    let (w, t) = camera.pose.world_to_camera();
    let terms = projection_terms(g, camera, &w, &t);
    let mut out = GaussianGrad::zeros(g.sh.len());

    // opacity
    let eta = g.opacity();
    out.opacity_logit = sg.opacity * eta * (1.0 - eta);

    // color through SH and the view direction
    let v = g.position - camera.center();
    let vnorm = v.norm();
    let dir = v / vnorm;
    let (basis, dbasis) = sh::basis_with_grad(sh_degree, &dir);
    let mut raw = Vector3::repeat(sh::SH_OFFSET);
    for (k, bk) in basis.iter().enumerate() {
        for ch in 0..3 {
            raw[ch] += bk * g.sh[k][ch];
        }
    }
    let mut d_raw = Vector3::zeros();
    for ch in 0..3 {
        if raw[ch] > 0.0 && raw[ch] < 1.0 {
            d_raw[ch] = sg.color[ch];
        }
    }
    let mut d_dir = Vector3::zeros();
    for k in 0..basis.len() {
        let mut s = 0.0;
        for ch in 0..3 {
            out.sh[k][ch] = basis[k] * d_raw[ch];
            s += g.sh[k][ch] * d_raw[ch];
        }
        d_dir += dbasis[k] * s;
    }
    out.position += (d_dir - dir * dir.dot(&d_dir)) / vnorm;

    // conic -> 2D covariance
    let [a, b, c] = {
        let cov = terms.cov2d;
        let det = cov[(0, 0)] * cov[(1, 1)] - cov[(0, 1)] * cov[(1, 0)];
        [cov[(1, 1)] / det, -cov[(0, 1)] / det, cov[(0, 0)] / det]
    };
    let inv = Matrix2::new(a, b, b, c);
    let g_conic = Matrix2::new(sg.conic[0], 0.5 * sg.conic[1], 0.5 * sg.conic[1], sg.conic[2]);
    let g_cov2d = -(inv * g_conic * inv);

    // 2D covariance -> JW and 3D covariance
    let g_jw = 2.0 * g_cov2d * terms.jw * terms.cov3;
    let g_cov3 = terms.jw.transpose() * g_cov2d * terms.jw;
    let g_j = g_jw * w.transpose();

    let p = terms.cam_point;
    let (x, y, z) = (p.x, p.y, p.z);
    let (fx, fy) = (camera.fx, camera.fy);
    let z2 = z * z;
    let z3 = z2 * z;
    let mut d_cam = Vector3::new(
        g_j[(0, 2)] * (-fx / z2),
        g_j[(1, 2)] * (-fy / z2),
        g_j[(0, 0)] * (-fx / z2) + g_j[(0, 2)] * (2.0 * fx * x / z3) + g_j[(1, 1)] * (-fy / z2) + g_j[(1, 2)] * (2.0 * fy * y / z3),
    );
    // mean2d
    let (gu, gv) = (sg.mean2d[0], sg.mean2d[1]);
    d_cam.x += gu * fx / z;
    d_cam.y += gv * fy / z;
    d_cam.z += -gu * fx * x / z2 - gv * fy * y / z2;
    out.position += w.transpose() * d_cam;

    // 3D covariance -> rotation and scale
    let qn = g.rotation.norm();
    let q = g.rotation.normalized();
    let r = q.to_matrix();
    let s = g.scale();
    let m = r * Matrix3::from_diagonal(&s);
    let g_m = 2.0 * g_cov3 * m;
    let mut g_r = Matrix3::zeros();
    for k in 0..3 {
        let mut ds = 0.0;
        for a in 0..3 {
            ds += r[(a, k)] * g_m[(a, k)];
            g_r[(a, k)] = g_m[(a, k)] * s[k];
        }
        out.log_scale[k] = ds * s[k];
    }
    let (qw, qx, qy, qz) = (q.w, q.x, q.y, q.z);
    let gr = |i: usize, j: usize| g_r[(i, j)];
    let d_qhat = [
        2.0 * (-qz * gr(0, 1) + qy * gr(0, 2) + qz * gr(1, 0) - qx * gr(1, 2) - qy * gr(2, 0) + qx * gr(2, 1)),
        2.0 * (qy * gr(0, 1) + qz * gr(0, 2) + qy * gr(1, 0) - 2.0 * qx * gr(1, 1) - qw * gr(1, 2) + qz * gr(2, 0) + qw * gr(2, 1)
            - 2.0 * qx * gr(2, 2)),
        2.0 * (-2.0 * qy * gr(0, 0) + qx * gr(0, 1) + qw * gr(0, 2) + qx * gr(1, 0) + qz * gr(1, 2) - qw * gr(2, 0) + qz * gr(2, 1)
            - 2.0 * qy * gr(2, 2)),
        2.0 * (-2.0 * qz * gr(0, 0) - qw * gr(0, 1) + qx * gr(0, 2) + qw * gr(1, 0) - 2.0 * qz * gr(1, 1) + qy * gr(1, 2)
            + qx * gr(2, 0)
            + qy * gr(2, 1)),
    ];
    // through q / |q|
    let qa = q.to_array();
    let proj: f64 = (0..4).map(|i| qa[i] * d_qhat[i]).sum();
    for i in 0..4 {
        out.rotation[i] = (d_qhat[i] - qa[i] * proj) / qn;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posemath::Pose;
    use approx::assert_relative_eq;

    fn camera() -> Camera {
        // identity pose: looks down +z from the origin
        Camera::new(Pose::default(), 50.0, 32, 32)
    }

    #[test]
    fn on_axis_projects_to_principal_point() {
        let mut cloud = GaussianCloud::new(0);
        cloud.gaussians.push(Gaussian::flat(Vector3::new(0.0, 0.0, 3.0), 0.1, 0.5, Vector3::repeat(0.5), 0));
        let s = project(&cloud, &camera());
        assert_eq!(s.len(), 1);
        assert_relative_eq!(s[0].mean2d, Vector2::new(16.0, 16.0), epsilon = 1e-12);
        assert_relative_eq!(s[0].depth, 3.0);
    }

    #[test]
    fn behind_camera_is_culled() {
        let mut cloud = GaussianCloud::new(0);
        cloud.gaussians.push(Gaussian::flat(Vector3::new(0.0, 0.0, -3.0), 0.1, 0.5, Vector3::repeat(0.5), 0));
        assert!(project(&cloud, &camera()).is_empty());
    }

    #[test]
    fn far_off_screen_is_culled() {
        let mut cloud = GaussianCloud::new(0);
        cloud.gaussians.push(Gaussian::flat(Vector3::new(50.0, 0.0, 3.0), 0.1, 0.5, Vector3::repeat(0.5), 0));
        assert!(project(&cloud, &camera()).is_empty());
    }

    #[test]
    fn isotropic_covariance_on_axis() {
        let (s, d, f) = (0.2, 4.0, 50.0);
        let mut cloud = GaussianCloud::new(0);
        cloud.gaussians.push(Gaussian::flat(Vector3::new(0.0, 0.0, d), s, 0.5, Vector3::repeat(0.5), 0));
        let sp = &project(&cloud, &camera())[0];
        let expect = (f * s / d).powi(2) + LOW_PASS;
        assert_relative_eq!(sp.cov2d, Matrix2::new(expect, 0.0, 0.0, expect), epsilon = 1e-12);
    }

    #[test]
    fn depth_sort_is_stable() {
        let mut cloud = GaussianCloud::new(0);
        for x in [0.1, -0.1, 0.0] {
            cloud.gaussians.push(Gaussian::flat(Vector3::new(x, 0.0, 3.0), 0.1, 0.5, Vector3::repeat(0.5), 0));
        }
        cloud.gaussians.push(Gaussian::flat(Vector3::new(0.0, 0.0, 2.0), 0.1, 0.5, Vector3::repeat(0.5), 0));
        let order: Vec<usize> = project(&cloud, &camera()).iter().map(|s| s.source_index).collect();
        assert_eq!(order, vec![3, 0, 1, 2]);
    }
}

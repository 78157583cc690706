//! Real spherical harmonics up to degree 3, with derivatives of the basis
//! with respect to the (unit) view direction.

use nalgebra::Vector3;

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const SH_C1: f64 = 0.488_602_511_902_919_9;
pub const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
pub const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Offset added to the SH sum so that all-zero coefficients give mid gray.
pub const SH_OFFSET: f64 = 0.5;

pub const MAX_SH_DEGREE: usize = 3;

/// Number of coefficients per color channel for a degree.
pub const fn coeff_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Basis values and their gradients with respect to the direction components.
pub fn basis_with_grad(degree: usize, dir: &Vector3<f64>) -> (Vec<f64>, Vec<Vector3<f64>>) {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let n = coeff_count(degree);
    let mut b = Vec::with_capacity(n);
    let mut g = Vec::with_capacity(n);
    b.push(SH_C0);
    g.push(Vector3::zeros());
    if degree >= 1 {
        b.push(-SH_C1 * y);
        g.push(Vector3::new(0.0, -SH_C1, 0.0));
        b.push(SH_C1 * z);
        g.push(Vector3::new(0.0, 0.0, SH_C1));
        b.push(-SH_C1 * x);
        g.push(Vector3::new(-SH_C1, 0.0, 0.0));
    }
    if degree >= 2 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        b.push(SH_C2[0] * x * y);
        g.push(SH_C2[0] * Vector3::new(y, x, 0.0));
        b.push(SH_C2[1] * y * z);
        g.push(SH_C2[1] * Vector3::new(0.0, z, y));
        b.push(SH_C2[2] * (2.0 * zz - xx - yy));
        g.push(SH_C2[2] * Vector3::new(-2.0 * x, -2.0 * y, 4.0 * z));
        b.push(SH_C2[3] * x * z);
        g.push(SH_C2[3] * Vector3::new(z, 0.0, x));
        b.push(SH_C2[4] * (xx - yy));
        g.push(SH_C2[4] * Vector3::new(2.0 * x, -2.0 * y, 0.0));
    }
    if degree >= 3 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        b.push(SH_C3[0] * y * (3.0 * xx - yy));
        g.push(SH_C3[0] * Vector3::new(6.0 * x * y, 3.0 * xx - 3.0 * yy, 0.0));
        b.push(SH_C3[1] * x * y * z);
        g.push(SH_C3[1] * Vector3::new(y * z, x * z, x * y));
        b.push(SH_C3[2] * y * (4.0 * zz - xx - yy));
        g.push(SH_C3[2] * Vector3::new(-2.0 * x * y, 4.0 * zz - xx - 3.0 * yy, 8.0 * y * z));
        b.push(SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy));
        g.push(SH_C3[3] * Vector3::new(-6.0 * x * z, -6.0 * y * z, 6.0 * zz - 3.0 * xx - 3.0 * yy));
        b.push(SH_C3[4] * x * (4.0 * zz - xx - yy));
        g.push(SH_C3[4] * Vector3::new(4.0 * zz - 3.0 * xx - yy, -2.0 * x * y, 8.0 * x * z));
        b.push(SH_C3[5] * z * (xx - yy));
        g.push(SH_C3[5] * Vector3::new(2.0 * x * z, -2.0 * y * z, xx - yy));
        b.push(SH_C3[6] * x * (xx - 3.0 * yy));
        g.push(SH_C3[6] * Vector3::new(3.0 * xx - 3.0 * yy, -6.0 * x * y, 0.0));
    }
    (b, g)
}

/// Evaluates view-dependent color. The result is not clamped.
pub fn sh_to_color(degree: usize, coeffs: &[[f64; 3]], dir: &Vector3<f64>) -> Vector3<f64> {
    let (basis, _) = basis_with_grad(degree, dir);
    let mut c = Vector3::repeat(SH_OFFSET);
    for (k, bk) in basis.iter().enumerate() {
        for ch in 0..3 {
            c[ch] += bk * coeffs[k][ch];
        }
    }
    c
}

/// DC coefficient that yields `color` for a degree-0 Gaussian.
pub fn dc_from_color(color: f64) -> f64 {
    (color - SH_OFFSET) / SH_C0
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn degree_zero_is_view_independent() {
        let dc = dc_from_color(0.5);
        let coeffs = vec![[dc; 3]];
        for dir in [Vector3::x(), -Vector3::z(), Vector3::new(1.0, 1.0, 1.0).normalize()] {
            assert_relative_eq!(sh_to_color(0, &coeffs, &dir), Vector3::repeat(0.5), epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_coefficients_give_offset() {
        let coeffs = vec![[0.0; 3]; 4];
        assert_eq!(sh_to_color(1, &coeffs, &Vector3::y()), Vector3::repeat(SH_OFFSET));
    }

    #[test]
    fn z_band_is_antisymmetric() {
        let mut coeffs = vec![[0.0; 3]; 4];
        coeffs[2] = [0.3, -0.2, 0.1];
        let plus = sh_to_color(1, &coeffs, &Vector3::z());
        let minus = sh_to_color(1, &coeffs, &-Vector3::z());
        let band = Vector3::new(0.3, -0.2, 0.1) * SH_C1;
        assert_relative_eq!(plus - minus, 2.0 * band, epsilon = 1e-12);
    }

    #[test]
    fn basis_gradients_match_finite_differences() {
        let dir = Vector3::new(0.3, -0.5, 0.8);
        let h = 1e-6;
        let (_, grads) = basis_with_grad(3, &dir);
        for axis in 0..3 {
            let mut p = dir;
            let mut m = dir;
            p[axis] += h;
            m[axis] -= h;
            let (bp, _) = basis_with_grad(3, &p);
            let (bm, _) = basis_with_grad(3, &m);
            for k in 0..coeff_count(3) {
                let fd = (bp[k] - bm[k]) / (2.0 * h);
                assert!((fd - grads[k][axis]).abs() < 1e-8, "k={k} axis={axis}");
            }
        }
    }
}

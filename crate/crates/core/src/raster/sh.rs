//! Real spherical harmonics up to degree 3, in the sign convention used by
//! common Gaussian splatting implementations.

use crate::error::{Error, Result};
use crate::math::Vec3;

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

pub const MAX_DEGREE: usize = 3;

/// Basis values and their gradients w.r.t. the (unit) direction.
pub fn basis_with_grad(degree: usize, d: &Vec3) -> (Vec<f64>, Vec<Vec3>) {
    let (x, y, z) = (d.x, d.y, d.z);
    let mut v = vec![SH_C0];
    let mut g = vec![Vec3::zeros()];
    if degree >= 1 {
        v.extend([-SH_C1 * y, SH_C1 * z, -SH_C1 * x]);
        g.extend([
            Vec3::new(0.0, -SH_C1, 0.0),
            Vec3::new(0.0, 0.0, SH_C1),
            Vec3::new(-SH_C1, 0.0, 0.0),
        ]);
    }
    if degree >= 2 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        v.extend([
            SH_C2[0] * x * y,
            SH_C2[1] * y * z,
            SH_C2[2] * (2.0 * zz - xx - yy),
            SH_C2[3] * x * z,
            SH_C2[4] * (xx - yy),
        ]);
        g.extend([
            Vec3::new(y, x, 0.0) * SH_C2[0],
            Vec3::new(0.0, z, y) * SH_C2[1],
            Vec3::new(-2.0 * x, -2.0 * y, 4.0 * z) * SH_C2[2],
            Vec3::new(z, 0.0, x) * SH_C2[3],
            Vec3::new(2.0 * x, -2.0 * y, 0.0) * SH_C2[4],
        ]);
    }
    if degree >= 3 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        v.extend([
            SH_C3[0] * y * (3.0 * xx - yy),
            SH_C3[1] * x * y * z,
            SH_C3[2] * y * (4.0 * zz - xx - yy),
            SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
            SH_C3[4] * x * (4.0 * zz - xx - yy),
            SH_C3[5] * z * (xx - yy),
            SH_C3[6] * x * (xx - 3.0 * yy),
        ]);
        g.extend([
            Vec3::new(6.0 * x * y, 3.0 * xx - 3.0 * yy, 0.0) * SH_C3[0],
            Vec3::new(y * z, x * z, x * y) * SH_C3[1],
            Vec3::new(-2.0 * x * y, 4.0 * zz - xx - 3.0 * yy, 8.0 * y * z) * SH_C3[2],
            Vec3::new(-6.0 * x * z, -6.0 * y * z, 6.0 * zz - 3.0 * xx - 3.0 * yy) * SH_C3[3],
            Vec3::new(4.0 * zz - 3.0 * xx - yy, -2.0 * x * y, 8.0 * x * z) * SH_C3[4],
            Vec3::new(2.0 * x * z, -2.0 * y * z, xx - yy) * SH_C3[5],
            Vec3::new(3.0 * xx - 3.0 * yy, -6.0 * x * y, 0.0) * SH_C3[6],
        ]);
    }
    (v, g)
}

/// Raw SH sum plus 0.5 offset, before clamping. `coeffs` is `[coef][channel]`.
pub fn sh_raw(coeffs: &[f64], degree: usize, dir: &Vec3) -> [f64; 3] {
    let (basis, _) = basis_with_grad(degree, dir);
    let mut rgb = [0.5; 3];
    for (k, y) in basis.iter().enumerate() {
        for c in 0..3 {
            rgb[c] += coeffs[3 * k + c] * y;
        }
    }
    rgb
}

/// View-dependent color, clamped below at zero.
pub fn eval_sh(coeffs: &[f64], degree: usize, dir: &Vec3) -> Result<[f64; 3]> {
    if degree > MAX_DEGREE {
        return Err(Error::invalid(
            "sh degree",
            format!("{degree} is not supported (max {MAX_DEGREE})"),
        ));
    }
    let n = (degree + 1) * (degree + 1) * 3;
    if coeffs.len() != n {
        return Err(Error::dim("sh coefficients", n, coeffs.len()));
    }
    Ok(sh_raw(coeffs, degree, dir).map(|v| v.max(0.0)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degree_zero_constant() {
        let rgb = eval_sh(&[1.0, 1.0, 1.0], 0, &Vec3::new(0.0, 0.0, 1.0)).unwrap();
        let want = 0.5 + 1.0 / (2.0 * std::f64::consts::PI.sqrt());
        for c in rgb {
            assert!((c - want).abs() < 1e-12);
            assert!((c - 0.782094).abs() < 1e-6);
        }
        let other = eval_sh(&[1.0, 1.0, 1.0], 0, &Vec3::new(0.6, -0.8, 0.0)).unwrap();
        assert_eq!(rgb, other);
    }

    #[test]
    fn degree_one_axis_table() {
        // direct table: Y_1 = (-c y, c z, -c x)
        let coeffs: Vec<f64> = (0..12)
            .map(|i| 0.1 * (i as f64 + 1.0) * if i % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        let axes = [
            Vec3::x(),
            -Vec3::x(),
            Vec3::y(),
            -Vec3::y(),
            Vec3::z(),
            -Vec3::z(),
        ];
        for d in axes {
            let rgb = eval_sh(&coeffs, 1, &d).unwrap();
            let table = [SH_C0, -SH_C1 * d.y, SH_C1 * d.z, -SH_C1 * d.x];
            for c in 0..3 {
                let raw: f64 = 0.5 + (0..4).map(|k| coeffs[3 * k + c] * table[k]).sum::<f64>();
                assert!((rgb[c] - raw.max(0.0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unsupported_degree_is_error() {
        assert!(eval_sh(&[0.0; 75], 4, &Vec3::z()).is_err());
    }

    #[test]
    fn basis_gradient_matches_fd() {
        let d = Vec3::new(0.3, -0.5, 0.81);
        let (_, g) = basis_with_grad(3, &d);
        let h = 1e-6;
        for axis in 0..3 {
            let mut dp = d;
            let mut dm = d;
            dp[axis] += h;
            dm[axis] -= h;
            let (vp, _) = basis_with_grad(3, &dp);
            let (vm, _) = basis_with_grad(3, &dm);
            for k in 0..16 {
                let fd = (vp[k] - vm[k]) / (2.0 * h);
                assert!((fd - g[k][axis]).abs() < 1e-8, "k={k} axis={axis}");
            }
        }
    }
}

//! Small differentiable geometry helpers shared by the head model, the
//! binding layer and the rasterizer. All derivatives are hand-written and
//! covered by finite-difference tests below.

use nalgebra::{Matrix3, Vector3, Vector4};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rotation matrix from an axis-angle vector (Rodrigues).
pub fn rodrigues(w: &Vec3) -> Mat3 {
    let (a, b, _, _) = rodrigues_coeffs(w.norm_squared());
    let k = skew(w);
    Mat3::identity() + k * a + k * k * b
}

/// Returns (a, b, a'/θ, b'/θ) where R = I + a K + b K².
fn rodrigues_coeffs(theta2: f64) -> (f64, f64, f64, f64) {
    if theta2 < 1e-8 {
        let a = 1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0;
        let b = 0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0;
        let da = -1.0 / 3.0 + theta2 / 30.0;
        let db = -1.0 / 12.0 + theta2 / 180.0;
        (a, b, da, db)
    } else {
        let t = theta2.sqrt();
        let (s, c) = t.sin_cos();
        let a = s / t;
        let b = (1.0 - c) / theta2;
        let da = (t * c - s) / (theta2 * t);
        let db = (t * s - 2.0 * (1.0 - c)) / (theta2 * theta2);
        (a, b, da, db)
    }
}

/// Partial derivatives dR/dw_k for k = 0..3.
pub fn rodrigues_jacobian(w: &Vec3) -> [Mat3; 3] {
    let (a, b, da, db) = rodrigues_coeffs(w.norm_squared());
    let k = skew(w);
    let k2 = k * k;
    let mut out = [Mat3::zeros(); 3];
    for (i, o) in out.iter_mut().enumerate() {
        let mut e = Vec3::zeros();
        e[i] = 1.0;
        let ek = skew(&e);
        *o = ek * a + (ek * k + k * ek) * b + k * (da * w[i]) + k2 * (db * w[i]);
    }
    out
}

/// Pulls a matrix gradient dL/dR back to the axis-angle vector.
pub fn rodrigues_backward(w: &Vec3, d_r: &Mat3) -> Vec3 {
    let jac = rodrigues_jacobian(w);
    Vec3::new(
        jac[0].component_mul(d_r).sum(),
        jac[1].component_mul(d_r).sum(),
        jac[2].component_mul(d_r).sum(),
    )
}

/// Rotation matrix of a unit quaternion stored as (w, x, y, z).
pub fn quat_to_mat(q: &Vector4<f64>) -> Mat3 {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Gradient of `quat_to_mat` (unit quaternion input, no normalization).
pub fn quat_to_mat_backward(q: &Vector4<f64>, g: &Mat3) -> Vector4<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    let dw = 2.0
        * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)]
            + x * g[(2, 1)]);
    let dx = 2.0
        * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - w * g[(1, 2)]
            + z * g[(2, 0)]
            + w * g[(2, 1)]
            - 2.0 * x * g[(2, 2)]);
    let dy = 2.0
        * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)] + z * g[(1, 2)]
            - w * g[(2, 0)]
            + z * g[(2, 1)]
            - 2.0 * y * g[(2, 2)]);
    let dz = 2.0
        * (-2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)]
            - 2.0 * z * g[(1, 1)]
            + y * g[(1, 2)]
            + x * g[(2, 0)]
            + y * g[(2, 1)]);
    Vector4::new(dw, dx, dy, dz)
}

/// Rotation of an arbitrary (non-zero) quaternion after normalization.
pub fn quat_to_mat_normalized(q: &Vector4<f64>) -> Mat3 {
    quat_to_mat(&(q / q.norm()))
}

pub fn quat_to_mat_normalized_backward(q: &Vector4<f64>, g: &Mat3) -> Vector4<f64> {
    let n = q.norm();
    let u = q / n;
    let gu = quat_to_mat_backward(&u, g);
    (gu - u * u.dot(&gu)) / n
}

/// Backward of x / |x|: given u = x/|x| and upstream g, returns dL/dx.
pub fn normalize_backward(x: &Vec3, g: &Vec3) -> Vec3 {
    let n = x.norm();
    let u = x / n;
    (g - u * u.dot(g)) / n
}

/// Unit quaternion (w, x, y, z) of a rotation matrix.
pub fn mat_to_quat(m: &Mat3) -> Vector4<f64> {
    let tr = m.trace();
    let q = if tr > 0.0 {
        let s = (tr + 1.0).sqrt() * 2.0;
        Vector4::new(
            0.25 * s,
            (m[(2, 1)] - m[(1, 2)]) / s,
            (m[(0, 2)] - m[(2, 0)]) / s,
            (m[(1, 0)] - m[(0, 1)]) / s,
        )
    } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
        let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
        Vector4::new(
            (m[(2, 1)] - m[(1, 2)]) / s,
            0.25 * s,
            (m[(0, 1)] + m[(1, 0)]) / s,
            (m[(0, 2)] + m[(2, 0)]) / s,
        )
    } else if m[(1, 1)] > m[(2, 2)] {
        let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
        Vector4::new(
            (m[(0, 2)] - m[(2, 0)]) / s,
            (m[(0, 1)] + m[(1, 0)]) / s,
            0.25 * s,
            (m[(1, 2)] + m[(2, 1)]) / s,
        )
    } else {
        let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
        Vector4::new(
            (m[(1, 0)] - m[(0, 1)]) / s,
            (m[(0, 2)] + m[(2, 0)]) / s,
            (m[(1, 2)] + m[(2, 1)]) / s,
            0.25 * s,
        )
    };
    q / q.norm()
}

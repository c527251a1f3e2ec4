//! Gaussians rigged to mesh triangles: barycentric anchors plus attributes
//! expressed in the host triangle's local frame.

use nalgebra::Vector4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure_len, Error, Result};
use crate::headmodel::{Mesh, TriangleFrames};
use crate::math::{
    logit, mat_to_quat, quat_to_mat, quat_to_mat_normalized, quat_to_mat_normalized_backward,
    sigmoid, Mat3, Vec3,
};

pub const INIT_SCALE: f64 = 0.5;
pub const INIT_OPACITY: f64 = 0.5;

/// Trainable attributes are stored flat (`n * 3`, `n * 4`, ...) so the
/// optimizer can step them as plain slices.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundGaussianCloud {
    pub triangle_id: Vec<u32>,
    pub barycentric: Vec<[f64; 3]>,
    /// Offset in triangle-frame units (multiples of the frame scale).
    pub local_offset: Vec<f64>,
    pub log_scale: Vec<f64>,
    /// Quaternions as (w, x, y, z).
    pub rotation: Vec<f64>,
    pub opacity_logit: Vec<f64>,
    pub sh_degree: usize,
    /// Layout `[gaussian][coefficient][channel]`.
    pub sh_coeffs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CloudGrads {
    pub local_offset: Vec<f64>,
    pub log_scale: Vec<f64>,
    pub rotation: Vec<f64>,
    pub opacity_logit: Vec<f64>,
    pub sh_coeffs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldGaussians {
    pub means: Vec<Vec3>,
    pub rotations: Vec<Mat3>,
    pub scales: Vec<Vec3>,
    pub opacity_logit: Vec<f64>,
    pub sh_degree: usize,
    pub sh_coeffs: Vec<f64>,
    pub source: Vec<usize>,
}

/// Gradient with the layout of [`WorldGaussians`].
#[derive(Debug, Clone, PartialEq)]
pub struct WorldGrads {
    pub means: Vec<Vec3>,
    pub rotations: Vec<Mat3>,
    pub scales: Vec<Vec3>,
    pub opacity_logit: Vec<f64>,
    pub sh_coeffs: Vec<f64>,
}

/// Per-Gaussian attribute residuals: position, log-scale, quaternion offset, opacity logit.
#[derive(Debug, Clone, PartialEq)]
pub struct Residuals {
    pub mean: Vec<Vec3>,
    pub log_scale: Vec<Vec3>,
    pub rotation: Vec<Vector4<f64>>,
    pub opacity: Vec<f64>,
}

pub fn sh_coeff_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

impl BoundGaussianCloud {
    pub fn len(&self) -> usize {
        self.triangle_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangle_id.is_empty()
    }

    pub fn quat(&self, i: usize) -> Vector4<f64> {
        Vector4::from_column_slice(&self.rotation[4 * i..4 * i + 4])
    }

    pub fn offset(&self, i: usize) -> Vec3 {
        Vec3::from_column_slice(&self.local_offset[3 * i..3 * i + 3])
    }

    pub fn log_scale_of(&self, i: usize) -> Vec3 {
        Vec3::from_column_slice(&self.log_scale[3 * i..3 * i + 3])
    }

    pub fn opacity(&self, i: usize) -> f64 {
        sigmoid(self.opacity_logit[i])
    }

    pub fn renormalize_rotations(&mut self) {
        for q in self.rotation.chunks_mut(4) {
            let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 0.0 {
                q.iter_mut().for_each(|x| *x /= n);
            } else {
                q.copy_from_slice(&[1.0, 0.0, 0.0, 0.0]);
            }
        }
    }

    pub fn validate(&self, face_count: usize) -> Result<()> {
        let n = self.len();
        ensure_len("barycentric", n, self.barycentric.len())?;
        ensure_len("local_offset", 3 * n, self.local_offset.len())?;
        ensure_len("log_scale", 3 * n, self.log_scale.len())?;
        ensure_len("rotation", 4 * n, self.rotation.len())?;
        ensure_len("opacity_logit", n, self.opacity_logit.len())?;
        ensure_len(
            "sh_coeffs",
            n * sh_coeff_count(self.sh_degree) * 3,
            self.sh_coeffs.len(),
        )?;
        for i in 0..n {
            if self.triangle_id[i] as usize >= face_count {
                return Err(Error::invalid(
                    "triangle_id",
                    format!("gaussian {i} references a missing face"),
                ));
            }
            let b = self.barycentric[i];
            if b.iter().any(|&x| x < 0.0) || (b.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
                return Err(Error::invalid(
                    "barycentric",
                    format!("gaussian {i} weights not convex"),
                ));
            }
        }
        Ok(())
    }

    /// Sets every opacity to `value`, leaving all other attributes untouched.
    pub fn reset_opacity(&mut self, value: f64) -> Result<()> {
        if !(value > 0.0 && value < 1.0) {
            return Err(Error::invalid(
                "opacity reset value",
                format!("{value} is outside (0, 1)"),
            ));
        }
        let l = logit(value);
        self.opacity_logit.iter_mut().for_each(|x| *x = l);
        Ok(())
    }
}

impl CloudGrads {
    pub fn zeros(cloud: &BoundGaussianCloud) -> Self {
        Self {
            local_offset: vec![0.0; cloud.local_offset.len()],
            log_scale: vec![0.0; cloud.log_scale.len()],
            rotation: vec![0.0; cloud.rotation.len()],
            opacity_logit: vec![0.0; cloud.opacity_logit.len()],
            sh_coeffs: vec![0.0; cloud.sh_coeffs.len()],
        }
    }
}

impl WorldGaussians {
    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn opacity(&self, i: usize) -> f64 {
        sigmoid(self.opacity_logit[i])
    }

    pub fn sh_of(&self, i: usize) -> &[f64] {
        let k = sh_coeff_count(self.sh_degree) * 3;
        &self.sh_coeffs[i * k..(i + 1) * k]
    }
}

impl WorldGrads {
    pub fn zeros(world: &WorldGaussians) -> Self {
        let n = world.len();
        Self {
            means: vec![Vec3::zeros(); n],
            rotations: vec![Mat3::zeros(); n],
            scales: vec![Vec3::zeros(); n],
            opacity_logit: vec![0.0; n],
            sh_coeffs: vec![0.0; world.sh_coeffs.len()],
        }
    }
}

impl Residuals {
    pub fn zeros(n: usize) -> Self {
        Self {
            mean: vec![Vec3::zeros(); n],
            log_scale: vec![Vec3::zeros(); n],
            rotation: vec![Vector4::zeros(); n],
            opacity: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

/// Binds `per_triangle` Gaussians to every face. The first sits at the
/// centroid; the rest are drawn uniformly over the triangle from `seed`.
pub fn init_bindings(
    mesh: &Mesh,
    per_triangle: usize,
    sh_degree: usize,
    seed: u64,
) -> Result<BoundGaussianCloud> {
    if mesh.faces.is_empty() {
        return Err(Error::invalid("mesh", "no faces to bind Gaussians to"));
    }
    if per_triangle == 0 {
        return Err(Error::invalid("per_triangle", "must be at least 1"));
    }
    if sh_degree > 3 {
        return Err(Error::invalid(
            "sh_degree",
            format!("{sh_degree} exceeds 3"),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = mesh.faces.len() * per_triangle;
    let mut cloud = BoundGaussianCloud {
        triangle_id: Vec::with_capacity(n),
        barycentric: Vec::with_capacity(n),
        local_offset: vec![0.0; 3 * n],
        log_scale: vec![INIT_SCALE.ln(); 3 * n],
        rotation: [1.0, 0.0, 0.0, 0.0].repeat(n),
        opacity_logit: vec![logit(INIT_OPACITY); n],
        sh_degree,
        // zero coefficients evaluate to mid-gray through the 0.5 offset
        sh_coeffs: vec![0.0; n * sh_coeff_count(sh_degree) * 3],
    };
    for f in 0..mesh.faces.len() {
        for slot in 0..per_triangle {
            cloud.triangle_id.push(f as u32);
            if slot == 0 {
                cloud.barycentric.push([1.0 / 3.0; 3]);
            } else {
                let r1: f64 = rng.random::<f64>().sqrt();
                let r2: f64 = rng.random();
                let a = 1.0 - r1;
                let b = r1 * (1.0 - r2);
                cloud.barycentric.push([a, b, 1.0 - a - b]);
            }
        }
    }
    Ok(cloud)
}

fn host(mesh: &Mesh, tri: u32) -> [Vec3; 3] {
    mesh.faces[tri as usize].map(|i| mesh.vertices[i as usize])
}

/// Composes bound attributes with their host triangle frames.
pub fn to_world(
    cloud: &BoundGaussianCloud,
    mesh: &Mesh,
    frames: &TriangleFrames,
) -> WorldGaussians {
    let n = cloud.len();
    let mut means = Vec::with_capacity(n);
    let mut rotations = Vec::with_capacity(n);
    let mut scales = Vec::with_capacity(n);
    for i in 0..n {
        let f = cloud.triangle_id[i] as usize;
        let [v0, v1, v2] = host(mesh, cloud.triangle_id[i]);
        let b = cloud.barycentric[i];
        let rf = frames.rotations[f];
        let sf = frames.scales[f];
        means.push(v0 * b[0] + v1 * b[1] + v2 * b[2] + rf * (cloud.offset(i) * sf));
        rotations.push(rf * quat_to_mat_normalized(&cloud.quat(i)));
        scales.push(cloud.log_scale_of(i).map(|s| sf * s.exp()));
    }
    WorldGaussians {
        means,
        rotations,
        scales,
        opacity_logit: cloud.opacity_logit.clone(),
        sh_degree: cloud.sh_degree,
        sh_coeffs: cloud.sh_coeffs.clone(),
        source: (0..n).collect(),
    }
}

/// Backward of [`to_world`]. Accumulates into `d_vertices`, `d_frame_rot`
/// and `d_frame_scale`; returns gradients on the bound attributes.
pub fn to_world_backward(
    cloud: &BoundGaussianCloud,
    mesh: &Mesh,
    frames: &TriangleFrames,
    d: &WorldGrads,
    d_vertices: &mut [Vec3],
    d_frame_rot: &mut [Mat3],
    d_frame_scale: &mut [f64],
) -> CloudGrads {
    let mut g = CloudGrads::zeros(cloud);
    for i in 0..cloud.len() {
        let f = cloud.triangle_id[i] as usize;
        let face = mesh.faces[f];
        let b = cloud.barycentric[i];
        let rf = frames.rotations[f];
        let sf = frames.scales[f];
        let mu = cloud.offset(i);
        let dm = d.means[i];

        for k in 0..3 {
            d_vertices[face[k] as usize] += dm * b[k];
        }
        let d_mu = rf.transpose() * dm * sf;
        g.local_offset[3 * i..3 * i + 3].copy_from_slice(d_mu.as_slice());

        let q = cloud.quat(i);
        let rq = quat_to_mat_normalized(&q);
        d_frame_rot[f] += dm * (mu * sf).transpose() + d.rotations[i] * rq.transpose();
        let dq = quat_to_mat_normalized_backward(&q, &(rf.transpose() * d.rotations[i]));
        g.rotation[4 * i..4 * i + 4].copy_from_slice(dq.as_slice());

        let mut ds_frame = dm.dot(&(rf * mu));
        let ls = cloud.log_scale_of(i);
        for c in 0..3 {
            let e = ls[c].exp();
            ds_frame += d.scales[i][c] * e;
            g.log_scale[3 * i + c] = d.scales[i][c] * sf * e;
        }
        d_frame_scale[f] += ds_frame;
    }
    g.opacity_logit.copy_from_slice(&d.opacity_logit);
    g.sh_coeffs.copy_from_slice(&d.sh_coeffs);
    g
}

fn residual_quat(r: &Vector4<f64>) -> Vector4<f64> {
    Vector4::new(1.0 + r[0], r[1], r[2], r[3])
}

/// Applies attribute residuals. Exactly-zero residual components leave the
/// corresponding attribute bitwise untouched.
pub fn apply_residuals(world: &WorldGaussians, res: &Residuals) -> Result<WorldGaussians> {
    ensure_len("residuals", world.len(), res.len())?;
    let mut out = world.clone();
    for i in 0..world.len() {
        let finite = res.mean[i]
            .iter()
            .chain(res.log_scale[i].iter())
            .chain(res.rotation[i].iter())
            .all(|x| x.is_finite())
            && res.opacity[i].is_finite();
        if !finite {
            return Err(Error::NonFinite(format!("residual of gaussian {i}")));
        }
        if res.mean[i] != Vec3::zeros() {
            out.means[i] += res.mean[i];
        }
        for c in 0..3 {
            if res.log_scale[i][c] != 0.0 {
                out.scales[i][c] *= res.log_scale[i][c].exp();
            }
        }
        if res.rotation[i] != Vector4::zeros() {
            out.rotations[i] =
                world.rotations[i] * quat_to_mat_normalized(&residual_quat(&res.rotation[i]));
        }
        if res.opacity[i] != 0.0 {
            out.opacity_logit[i] += res.opacity[i];
        }
    }
    Ok(out)
}

/// Backward of [`apply_residuals`]: returns (dL/dworld, dL/dresiduals).
pub fn apply_residuals_backward(
    world: &WorldGaussians,
    res: &Residuals,
    d_out: &WorldGrads,
) -> (WorldGrads, Residuals) {
    let n = world.len();
    let mut dw = d_out.clone();
    let mut dr = Residuals::zeros(n);
    for i in 0..n {
        dr.mean[i] = d_out.means[i];
        for c in 0..3 {
            let e = res.log_scale[i][c].exp();
            dw.scales[i][c] = d_out.scales[i][c] * e;
            dr.log_scale[i][c] = d_out.scales[i][c] * world.scales[i][c] * e;
        }
        let q = residual_quat(&res.rotation[i]);
        let rq = quat_to_mat_normalized(&q);
        dw.rotations[i] = d_out.rotations[i] * rq.transpose();
        dr.rotation[i] = quat_to_mat_normalized_backward(
            &q,
            &(world.rotations[i].transpose() * d_out.rotations[i]),
        );
        dr.opacity[i] = d_out.opacity_logit[i];
    }
    (dw, dr)
}

/// Closest point on triangle (a, b, c) to p, as barycentric weights.
pub fn closest_barycentric(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> [f64; 3] {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return [1.0, 0.0, 0.0];
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return [0.0, 1.0, 0.0];
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return [1.0 - v, v, 0.0];
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return [0.0, 0.0, 1.0];
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return [1.0 - w, 0.0, w];
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return [0.0, 1.0 - w, w];
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    [1.0 - v - w, v, w]
}

/// Re-binds every Gaussian whose local offset exceeds `eps` (triangle-frame
/// units) to the triangle with the nearest centroid, preserving its world
/// mean, orientation and size. Returns how many Gaussians were re-bound.
pub fn reanchor(
    cloud: &mut BoundGaussianCloud,
    mesh: &Mesh,
    frames: &TriangleFrames,
    eps: f64,
) -> usize {
    let mut moved = 0;
    for i in 0..cloud.len() {
        if cloud.offset(i).norm() <= eps {
            continue;
        }
        let f_old = cloud.triangle_id[i] as usize;
        let [v0, v1, v2] = host(mesh, cloud.triangle_id[i]);
        let b = cloud.barycentric[i];
        let rf = frames.rotations[f_old];
        let sf = frames.scales[f_old];
        let p = v0 * b[0] + v1 * b[1] + v2 * b[2] + rf * (cloud.offset(i) * sf);
        let world_rot = rf * quat_to_mat_normalized(&cloud.quat(i));

        let mut best = None;
        let mut best_d = f64::INFINITY;
        for (f, c) in frames.centroids.iter().enumerate() {
            if frames.degenerate[f] {
                continue;
            }
            let d = (c - p).norm_squared();
            if d < best_d {
                best_d = d;
                best = Some(f);
            }
        }
        let Some(f_new) = best else { continue };
        let [a, bb, c] = host(mesh, f_new as u32);
        let bary = closest_barycentric(&p, &a, &bb, &c);
        let anchor = a * bary[0] + bb * bary[1] + c * bary[2];
        let rn = frames.rotations[f_new];
        let sn = frames.scales[f_new];
        let mu = rn.transpose() * (p - anchor) / sn;
        let q = mat_to_quat(&(rn.transpose() * world_rot));

        cloud.triangle_id[i] = f_new as u32;
        cloud.barycentric[i] = bary;
        cloud.local_offset[3 * i..3 * i + 3].copy_from_slice(mu.as_slice());
        cloud.rotation[4 * i..4 * i + 4].copy_from_slice(q.as_slice());
        let ratio = (sf / sn).ln();
        for s in &mut cloud.log_scale[3 * i..3 * i + 3] {
            *s += ratio;
        }
        moved += 1;
    }
    moved
}

/// World rotation of Gaussian `i` before residuals.
pub fn world_rotation(cloud: &BoundGaussianCloud, frames: &TriangleFrames, i: usize) -> Mat3 {
    frames.rotations[cloud.triangle_id[i] as usize]
        * quat_to_mat(&(cloud.quat(i) / cloud.quat(i).norm()))
}

//! Training losses: L1 + D-SSIM photometric term and the visibility-masked
//! position and scaling regularizers.

use serde::{Deserialize, Serialize};

use crate::binding::BoundGaussianCloud;
use crate::error::Result;
use crate::image::Image;
use crate::math::Vec3;
use crate::metrics::ssim_with_grad;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of D-SSIM in the photometric term.
    pub lambda_dssim: f64,
    pub eps_position: f64,
    pub eps_scaling: f64,
    pub lambda_position: f64,
    pub lambda_scaling: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_dssim: 0.2,
            eps_position: 1.0,
            eps_scaling: 0.6,
            lambda_position: 0.01,
            lambda_scaling: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l1: f64,
    pub dssim: f64,
    pub rgb: f64,
    pub position: f64,
    pub scaling: f64,
    pub total: f64,
    pub visible_count: usize,
}

impl LossReport {
    pub const CSV_HEADER: &'static str =
        "iteration,l1,dssim,rgb,position,scaling,total,visible_count";

    pub fn csv_row(&self, iteration: usize) -> String {
        format!(
            "{iteration},{:e},{:e},{:e},{:e},{:e},{:e},{}",
            self.l1,
            self.dssim,
            self.rgb,
            self.position,
            self.scaling,
            self.total,
            self.visible_count
        )
    }
}

/// Gradients of the total loss.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrads {
    pub image: Image,
    /// Per Gaussian, triangle-frame units (flat `3n`).
    pub local_offset: Vec<f64>,
    /// Per Gaussian log-scales (flat `3n`).
    pub log_scale: Vec<f64>,
}

/// Returns (l1, dssim, rgb) and dL_rgb/drendered.
pub fn rgb_loss(
    rendered: &Image,
    target: &Image,
    cfg: &LossConfig,
) -> Result<(f64, f64, f64, Image)> {
    rendered.same_shape(target)?;
    let n = rendered.data.len() as f64;
    let mut grad = Image::new(rendered.width, rendered.height);
    let mut l1 = 0.0;
    let w1 = 1.0 - cfg.lambda_dssim;
    for ((g, r), t) in grad.data.iter_mut().zip(&rendered.data).zip(&target.data) {
        let d = r - t;
        l1 += d.abs();
        *g = if d > 0.0 {
            w1 / n
        } else if d < 0.0 {
            -w1 / n
        } else {
            0.0
        };
    }
    l1 /= n;
    let (s, ds) = ssim_with_grad(rendered, target)?;
    let dssim = (1.0 - s) / 2.0;
    for (g, d) in grad.data.iter_mut().zip(&ds.data) {
        *g -= cfg.lambda_dssim * 0.5 * d;
    }
    Ok((l1, dssim, w1 * l1 + cfg.lambda_dssim * dssim, grad))
}

/// ||max(|v|, eps)||, elementwise on magnitudes, with its gradient.
fn floored_norm(v: &Vec3, eps: f64) -> (f64, Vec3) {
    let m = v.map(|x| x.abs().max(eps));
    let norm = m.norm();
    let g = Vec3::from_fn(|c, _| {
        if v[c].abs() > eps {
            m[c] / norm * v[c].signum()
        } else {
            0.0
        }
    });
    (norm, g)
}

/// Mean floored norm of local offsets over `visible`; 0 when empty.
pub fn position_loss(offsets: &[Vec3], eps: f64) -> (f64, Vec<Vec3>) {
    mean_floored(offsets, eps)
}

/// Mean floored norm of triangle-relative scales over `visible`; 0 when empty.
pub fn scaling_loss(scales: &[Vec3], eps: f64) -> (f64, Vec<Vec3>) {
    mean_floored(scales, eps)
}

fn mean_floored(v: &[Vec3], eps: f64) -> (f64, Vec<Vec3>) {
    if v.is_empty() {
        return (0.0, Vec::new());
    }
    let inv = 1.0 / v.len() as f64;
    let mut total = 0.0;
    let grads = v
        .iter()
        .map(|x| {
            let (n, g) = floored_norm(x, eps);
            total += n;
            g * inv
        })
        .collect();
    (total * inv, grads)
}

/// Full objective with regularizers restricted to `visible` Gaussians.
pub fn total_loss(
    rendered: &Image,
    target: &Image,
    cloud: &BoundGaussianCloud,
    visible: &[usize],
    cfg: &LossConfig,
) -> Result<(LossReport, LossGrads)> {
    let (l1, dssim, rgb, image) = rgb_loss(rendered, target, cfg)?;
    let offsets: Vec<Vec3> = visible.iter().map(|&i| cloud.offset(i)).collect();
    let scales: Vec<Vec3> = visible
        .iter()
        .map(|&i| cloud.log_scale_of(i).map(f64::exp))
        .collect();
    let (position, dpos) = position_loss(&offsets, cfg.eps_position);
    let (scaling, dscale) = scaling_loss(&scales, cfg.eps_scaling);
    let n = cloud.len();
    let mut local_offset = vec![0.0; 3 * n];
    let mut log_scale = vec![0.0; 3 * n];
    for (k, &i) in visible.iter().enumerate() {
        for c in 0..3 {
            local_offset[3 * i + c] += cfg.lambda_position * dpos[k][c];
            log_scale[3 * i + c] += cfg.lambda_scaling * dscale[k][c] * scales[k][c];
        }
    }
    let report = LossReport {
        l1,
        dssim,
        rgb,
        position,
        scaling,
        total: rgb + cfg.lambda_position * position + cfg.lambda_scaling * scaling,
        visible_count: visible.len(),
    };
    Ok((
        report,
        LossGrads {
            image,
            local_offset,
            log_scale,
        },
    ))
}

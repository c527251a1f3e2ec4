//! Differentiable splatting: EWA projection of 3D Gaussians and depth-sorted
//! front-to-back alpha compositing, with a tiled fast path and a brute-force
//! per-pixel reference.

mod camera;
mod composite;
pub mod sh;

pub use camera::{Camera, CameraRecord, DEFAULT_NEAR};
pub use composite::{rasterize, rasterize_backward, rasterize_brute, CompositeState, SplatGrad};
pub use sh::eval_sh;

use nalgebra::{Matrix2, Matrix2x3};
use rayon::prelude::*;

use crate::binding::{WorldGaussians, WorldGrads};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::math::{normalize_backward, sigmoid, Mat3, Vec3};

pub const BLUR_FLOOR: f64 = 0.3;
pub const MAX_ALPHA: f64 = 0.99;
pub const MIN_TRANSMITTANCE: f64 = 1e-4;
pub const TILE_SIZE: usize = 16;
pub const VISIBILITY_THRESHOLD: f64 = 1e-3;
/// Culling footprint in standard deviations.
pub const CULL_SIGMA: f64 = 3.0;
/// Contributions with Gaussian falloff below exp(POWER_CUTOFF) (about 1e-15) are skipped.
pub const POWER_CUTOFF: f64 = -34.538_776_394_910_684;

/// Image-plane form of one Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct Splat2D {
    pub mean2d: [f64; 2],
    /// Covariance (xx, xy, yy) including the blur floor.
    pub cov2d: [f64; 3],
    /// Inverse covariance (xx, xy, yy).
    pub conic: [f64; 3],
    pub depth: f64,
    pub rgb: [f64; 3],
    pub alpha: f64,
    pub source: usize,
    /// Half-extent in pixels of the region where the splat can contribute.
    pub support_radius: f64,
    /// Channels whose SH value was clamped at zero.
    pub rgb_clamped: [bool; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub image: Image,
    pub alpha_map: Vec<f64>,
    /// Largest compositing weight `alpha' * T` each Gaussian achieved at any pixel.
    pub max_contribution: Vec<f64>,
}

fn covariance3(rot: &Mat3, scale: &Vec3) -> Mat3 {
    let m = rot * Mat3::from_diagonal(scale);
    m * m.transpose()
}

fn projection_jacobian(cam: &Camera, p: &Vec3) -> Matrix2x3<f64> {
    let iz = 1.0 / p.z;
    let iz2 = iz * iz;
    Matrix2x3::new(
        cam.fx * iz,
        0.0,
        -cam.fx * p.x * iz2,
        0.0,
        cam.fy * iz,
        -cam.fy * p.y * iz2,
    )
}

/// Projects one Gaussian; `None` when culled by the near plane or when its
/// 3-sigma footprint lies entirely outside the image.
pub fn project(world: &WorldGaussians, i: usize, cam: &Camera) -> Option<Splat2D> {
    let mean = world.means[i];
    let p = cam.to_camera(&mean);
    if p.z <= cam.near {
        return None;
    }
    let mean2d = [cam.fx * p.x / p.z + cam.cx, cam.fy * p.y / p.z + cam.cy];
    let t = projection_jacobian(cam, &p) * cam.rotation;
    let cov = t * covariance3(&world.rotations[i], &world.scales[i]) * t.transpose();
    let (a, b, c) = (
        cov[(0, 0)] + BLUR_FLOOR,
        cov[(0, 1)],
        cov[(1, 1)] + BLUR_FLOOR,
    );
    let det = a * c - b * b;
    if !(det > 0.0) {
        return None;
    }
    let mid = 0.5 * (a + c);
    let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
    let sigma = lambda_max.sqrt();
    let cull = CULL_SIGMA * sigma;
    if mean2d[0] + cull < 0.0
        || mean2d[0] - cull > cam.width as f64
        || mean2d[1] + cull < 0.0
        || mean2d[1] - cull > cam.height as f64
    {
        return None;
    }
    let dir = (mean - cam.center()).normalize();
    let raw = sh::sh_raw(world.sh_of(i), world.sh_degree, &dir);
    Some(Splat2D {
        mean2d,
        cov2d: [a, b, c],
        conic: [c / det, -b / det, a / det],
        depth: p.z,
        rgb: raw.map(|v| v.max(0.0)),
        alpha: sigmoid(world.opacity_logit[i]),
        source: i,
        support_radius: (-2.0 * POWER_CUTOFF).sqrt() * sigma,
        rgb_clamped: raw.map(|v| v < 0.0),
    })
}

pub fn project_all(world: &WorldGaussians, cam: &Camera) -> Vec<Splat2D> {
    (0..world.len())
        .into_par_iter()
        .filter_map(|i| project(world, i, cam))
        .collect()
}

/// Pulls splat gradients back onto world-space Gaussian attributes.
pub fn project_backward(
    world: &WorldGaussians,
    cam: &Camera,
    splats: &[Splat2D],
    grads: &[SplatGrad],
) -> WorldGrads {
    let mut out = WorldGrads::zeros(world);
    let ncoef = (world.sh_degree + 1) * (world.sh_degree + 1);
    let per: Vec<(usize, Vec3, Mat3, Vec3, f64, Vec<f64>)> = splats
        .par_iter()
        .zip(grads.par_iter())
        .map(|(s, g)| {
            let i = s.source;
            let mean = world.means[i];
            let rot = world.rotations[i];
            let scale = world.scales[i];
            let p = cam.to_camera(&mean);
            let w = cam.rotation;

            // opacity
            let a = s.alpha;
            let d_logit = g.alpha * a * (1.0 - a);

            // color
            let center = cam.center();
            let rel = mean - center;
            let dir = rel.normalize();
            let (basis, basis_grad) = sh::basis_with_grad(world.sh_degree, &dir);
            let coeffs = world.sh_of(i);
            let drgb: [f64; 3] =
                std::array::from_fn(|c| if s.rgb_clamped[c] { 0.0 } else { g.rgb[c] });
            let mut d_sh = vec![0.0; ncoef * 3];
            let mut d_dir = Vec3::zeros();
            for k in 0..ncoef {
                let mut acc = 0.0;
                for c in 0..3 {
                    d_sh[3 * k + c] = basis[k] * drgb[c];
                    acc += coeffs[3 * k + c] * drgb[c];
                }
                d_dir += basis_grad[k] * acc;
            }
            let mut d_mean = if world.sh_degree > 0 {
                normalize_backward(&rel, &d_dir)
            } else {
                Vec3::zeros()
            };

            // mean2d
            let iz = 1.0 / p.z;
            let iz2 = iz * iz;
            let mut dp = Vec3::new(
                g.mean2d[0] * cam.fx * iz,
                g.mean2d[1] * cam.fy * iz,
                -g.mean2d[0] * cam.fx * p.x * iz2 - g.mean2d[1] * cam.fy * p.y * iz2,
            );

            // covariance
            let j = projection_jacobian(cam, &p);
            let t = j * w;
            let sigma3 = covariance3(&rot, &scale);
            let g2 = g.cov2d;
            let d_sigma3 = t.transpose() * g2 * t;
            let d_t = g2 * t * sigma3 * 2.0;
            let d_j = d_t * w.transpose();
            let iz3 = iz2 * iz;
            dp.x += d_j[(0, 2)] * (-cam.fx * iz2);
            dp.y += d_j[(1, 2)] * (-cam.fy * iz2);
            dp.z += d_j[(0, 0)] * (-cam.fx * iz2)
                + d_j[(0, 2)] * (2.0 * cam.fx * p.x * iz3)
                + d_j[(1, 1)] * (-cam.fy * iz2)
                + d_j[(1, 2)] * (2.0 * cam.fy * p.y * iz3);
            d_mean += w.transpose() * dp;

            let m = rot * Mat3::from_diagonal(&scale);
            let d_m = d_sigma3 * m * 2.0;
            let d_rot = d_m * Mat3::from_diagonal(&scale);
            let d_scale = Vec3::new(
                d_m.column(0).dot(&rot.column(0)),
                d_m.column(1).dot(&rot.column(1)),
                d_m.column(2).dot(&rot.column(2)),
            );
            (i, d_mean, d_rot, d_scale, d_logit, d_sh)
        })
        .collect();
    for (i, d_mean, d_rot, d_scale, d_logit, d_sh) in per {
        out.means[i] += d_mean;
        out.rotations[i] += d_rot;
        out.scales[i] += d_scale;
        out.opacity_logit[i] += d_logit;
        for (acc, v) in out.sh_coeffs[i * ncoef * 3..(i + 1) * ncoef * 3]
            .iter_mut()
            .zip(d_sh)
        {
            *acc += v;
        }
    }
    out
}

/// Indices of Gaussians whose best compositing weight exceeds `threshold`.
pub fn visible_set(output: &RenderOutput, threshold: f64) -> Vec<usize> {
    output
        .max_contribution
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > threshold)
        .map(|(i, _)| i)
        .collect()
}

struct ForwardState {
    splats: Vec<Splat2D>,
    composite: CompositeState,
}

/// Forward/backward pair that keeps the state the backward pass needs.
#[derive(Default)]
pub struct DiffRenderer {
    state: Option<ForwardState>,
}

impl DiffRenderer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward(
        &mut self,
        world: &WorldGaussians,
        cam: &Camera,
        background: [f64; 3],
    ) -> Result<RenderOutput> {
        cam.validate()?;
        let splats = project_all(world, cam);
        let (out, composite) = rasterize(&splats, cam.width, cam.height, background, world.len());
        self.state = Some(ForwardState { splats, composite });
        Ok(out)
    }

    pub fn backward(
        &self,
        world: &WorldGaussians,
        cam: &Camera,
        d_image: &Image,
    ) -> Result<WorldGrads> {
        let state = self.state.as_ref().ok_or_else(|| {
            Error::invalid(
                "renderer",
                "backward called without a retained forward pass",
            )
        })?;
        if d_image.width != cam.width || d_image.height != cam.height {
            return Err(Error::invalid(
                "image gradient",
                "shape does not match the camera",
            ));
        }
        let grads = rasterize_backward(&state.splats, &state.composite, d_image);
        Ok(project_backward(world, cam, &state.splats, &grads))
    }
}

/// Convenience forward render without retaining state.
pub fn render(world: &WorldGaussians, cam: &Camera, background: [f64; 3]) -> Result<RenderOutput> {
    DiffRenderer::new().forward(world, cam, background)
}

pub(crate) fn sym2(m: &[f64; 3]) -> Matrix2<f64> {
    Matrix2::new(m[0], m[1], m[1], m[2])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Mat3;

    fn one_gaussian(mean: Vec3, scale: f64) -> WorldGaussians {
        WorldGaussians {
            means: vec![mean],
            rotations: vec![Mat3::identity()],
            scales: vec![Vec3::repeat(scale)],
            opacity_logit: vec![0.0],
            sh_degree: 0,
            sh_coeffs: vec![0.0; 3],
            source: vec![0],
        }
    }

    fn axis_camera() -> Camera {
        Camera {
            fx: 40.0,
            fy: 30.0,
            cx: 16.0,
            cy: 12.0,
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
            width: 32,
            height: 24,
            near: DEFAULT_NEAR,
        }
    }

    #[test]
    fn isotropic_projection_on_axis() {
        let cam = axis_camera();
        let (s, z) = (0.2, 4.0);
        let splat = project(&one_gaussian(Vec3::new(0.0, 0.0, z), s), 0, &cam).unwrap();
        assert_eq!(splat.mean2d, [cam.cx, cam.cy]);
        // J = diag(f/z) on the axis, so J s^2 I J^T = (f s / z)^2 per axis
        let want_x = (cam.fx * s / z).powi(2) + BLUR_FLOOR;
        let want_y = (cam.fy * s / z).powi(2) + BLUR_FLOOR;
        assert!((splat.cov2d[0] - want_x).abs() < 1e-12);
        assert!((splat.cov2d[2] - want_y).abs() < 1e-12);
        assert!(splat.cov2d[1].abs() < 1e-15);
    }

    #[test]
    fn near_plane_culls() {
        let cam = axis_camera();
        assert!(project(
            &one_gaussian(Vec3::new(0.0, 0.0, cam.near / 2.0), 0.1),
            0,
            &cam
        )
        .is_none());
        assert!(project(&one_gaussian(Vec3::new(0.0, 0.0, -1.0), 0.1), 0, &cam).is_none());
    }

    #[test]
    fn off_screen_culls() {
        let cam = axis_camera();
        assert!(project(&one_gaussian(Vec3::new(10.0, 0.0, 1.0), 0.01), 0, &cam).is_none());
    }

    #[test]
    fn backward_without_forward_is_error() {
        let cam = axis_camera();
        let world = one_gaussian(Vec3::new(0.0, 0.0, 3.0), 0.2);
        let r = DiffRenderer::new();
        assert!(r.backward(&world, &cam, &Image::new(32, 24)).is_err());
    }
}

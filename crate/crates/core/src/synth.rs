//! Synthetic multi-view head sequences. Ground truth comes from an
//! independent z-buffered triangle rasterizer; only the camera type is shared
//! with the splatting path.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::headmodel::{load_head_model, save_head_model, HeadModel, HeadParams, Mesh};
use crate::image::Image;
use crate::math::Vec3;
use crate::raster::{Camera, CameraRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub seed: u64,
    /// Interior latitude rings of the head sphere.
    pub rings: usize,
    pub segments: usize,
    pub n_shape: usize,
    pub n_expr: usize,
    pub joints: usize,
    pub cameras: usize,
    pub ring_radius: f64,
    /// The two camera heights alternate around the ring.
    pub ring_heights: [f64; 2],
    /// Horizontal arc covered by the ring, degrees.
    pub arc_degrees: f64,
    pub timestamps: usize,
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    /// Number of trajectory periods across the sequence.
    pub expression_cycles: f64,
    pub expression_amplitude: f64,
    pub sigma: f64,
    /// Sub-samples per pixel axis in the ground-truth render.
    pub supersample: usize,
    pub background: [f64; 3],
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            rings: 15,
            segments: 24,
            n_shape: 4,
            n_expr: 6,
            joints: 5,
            cameras: 4,
            ring_radius: 3.5,
            ring_heights: [0.35, -0.15],
            arc_degrees: 100.0,
            timestamps: 20,
            width: 64,
            height: 64,
            focal: 80.0,
            expression_cycles: 1.5,
            expression_amplitude: 1.0,
            sigma: 0.3,
            supersample: 2,
            background: [0.0; 3],
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.cameras == 0 {
            return Err(Error::invalid("cameras", "need at least one camera"));
        }
        if self.timestamps == 0 {
            return Err(Error::invalid("timestamps", "need at least one timestamp"));
        }
        if !(self.sigma >= 0.0) {
            return Err(Error::invalid("sigma", "must be non-negative"));
        }
        if self.rings < 2 || self.segments < 3 {
            return Err(Error::invalid(
                "rings",
                "head sphere needs at least 2 rings and 3 segments",
            ));
        }
        if self.joints == 0 || self.joints > 5 {
            return Err(Error::invalid(
                "joints",
                "procedural rig supports 1 to 5 joints",
            ));
        }
        if self.width == 0 || self.height == 0 || self.supersample == 0 {
            return Err(Error::invalid(
                "image size",
                "width, height and supersample must be positive",
            ));
        }
        Ok(())
    }

    pub fn heldout_view(&self) -> usize {
        self.cameras / 2
    }
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub model: HeadModel,
    pub params: Vec<HeadParams>,
    pub cameras: Vec<Camera>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train_t: Vec<u32>,
    pub heldout_t: Vec<u32>,
    pub heldout_view: usize,
}

impl Split {
    /// Last fifth of the timestamps (at least one when T > 1) is held out.
    pub fn four_to_one(timestamps: usize, heldout_view: usize) -> Self {
        let held = if timestamps > 1 {
            (timestamps / 5).max(1)
        } else {
            0
        };
        let cut = (timestamps - held) as u32;
        Self {
            train_t: (0..cut).collect(),
            heldout_t: (cut..timestamps as u32).collect(),
            heldout_view,
        }
    }

    pub fn train_views(&self, cameras: usize) -> Vec<usize> {
        (0..cameras)
            .filter(|&v| v != self.heldout_view || cameras == 1)
            .collect()
    }
}

/// Unit direction for latitude `theta` (from +y) and longitude `phi` (from +z).
fn sphere_dir(theta: f64, phi: f64) -> Vec3 {
    Vec3::new(
        theta.sin() * phi.sin(),
        theta.cos(),
        theta.sin() * phi.cos(),
    )
}

fn bump(d: &Vec3, center: &Vec3, width: f64) -> f64 {
    (-(d - center).norm_squared() / (2.0 * width * width)).exp()
}

fn vertex_color(d: &Vec3) -> [f64; 3] {
    let theta = d.y.clamp(-1.0, 1.0).acos();
    let phi = d.x.atan2(d.z);
    let skin = [0.86, 0.66, 0.52];
    let mut c = skin.map(|s| s + 0.08 * (3.0 * phi).sin() * (2.0 * theta).sin());
    let mix = |c: &mut [f64; 3], target: [f64; 3], w: f64| {
        for k in 0..3 {
            c[k] = c[k] * (1.0 - w) + target[k] * w;
        }
    };
    let hair = ((0.3 * PI - theta) / 0.06).tanh() * 0.5 + 0.5;
    mix(&mut c, [0.25, 0.15, 0.08], hair);
    for side in [-1.0, 1.0] {
        let eye = sphere_dir(0.44 * PI, side * 0.33);
        mix(&mut c, [0.08, 0.08, 0.12], bump(d, &eye, 0.09));
        let brow = sphere_dir(0.36 * PI, side * 0.33);
        mix(&mut c, [0.3, 0.18, 0.1], 0.8 * bump(d, &brow, 0.07));
    }
    let mouth = sphere_dir(0.7 * PI, 0.0);
    let m =
        (-(d.x / 0.22).powi(2) - ((d - mouth).y / 0.06).powi(2)).exp() * (d.z > 0.0) as u8 as f64;
    mix(&mut c, [0.7, 0.15, 0.18], m);
    let nose = sphere_dir(0.55 * PI, 0.0);
    mix(&mut c, [0.95, 0.55, 0.45], 0.6 * bump(d, &nose, 0.07));
    c.map(|v| v.clamp(0.0, 1.0))
}

/// Smooth displacement fields, one per coefficient, on unit directions.
fn expression_field(k: usize, d: &Vec3, rng_centers: &[(Vec3, Vec3)]) -> Vec3 {
    let front = d.z.max(0.0);
    match k {
        // jaw drop
        0 => Vec3::new(0.0, -1.0, 0.2) * ((-d.y - 0.2).max(0.0) * front * 2.0),
        // mouth corners up and out
        1 => {
            let l = bump(d, &sphere_dir(0.7 * PI, 0.35), 0.15);
            let r = bump(d, &sphere_dir(0.7 * PI, -0.35), 0.15);
            Vec3::new(0.5 * (l - r), l + r, 0.0)
        }
        // brow raise
        2 => {
            Vec3::new(0.0, 1.0, 0.0)
                * (bump(d, &sphere_dir(0.36 * PI, 0.33), 0.15)
                    + bump(d, &sphere_dir(0.36 * PI, -0.33), 0.15))
        }
        // pucker
        3 => Vec3::new(0.0, 0.0, 1.0) * bump(d, &sphere_dir(0.7 * PI, 0.0), 0.18),
        _ => {
            let (c, dir) = &rng_centers[k % rng_centers.len()];
            dir * bump(d, c, 0.3)
        }
    }
}

fn shape_field(k: usize, d: &Vec3) -> Vec3 {
    match k % 4 {
        0 => Vec3::new(d.x, 0.0, 0.0),
        1 => Vec3::new(0.0, d.y, 0.0),
        2 => Vec3::new(0.0, 0.0, d.z),
        _ => Vec3::new(0.0, 0.0, d.z * d.y.max(0.0)),
    }
}

/// Scales a basis to zero column mean and to at most `limit` displacement per unit coefficient.
fn normalize_basis(basis: &mut [f64], v: usize, n: usize, limit: f64) {
    for k in 0..n {
        for c in 0..3 {
            let mean = (0..v).map(|i| basis[(i * 3 + c) * n + k]).sum::<f64>() / v as f64;
            for i in 0..v {
                basis[(i * 3 + c) * n + k] -= mean;
            }
        }
        let max = (0..v)
            .map(|i| {
                (0..3)
                    .map(|c| basis[(i * 3 + c) * n + k].powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max);
        if max > 0.0 {
            let s = limit / max;
            for i in 0..v {
                for c in 0..3 {
                    basis[(i * 3 + c) * n + k] *= s;
                }
            }
        }
    }
}

/// Procedural ellipsoid head with blendshapes, a small joint rig and vertex colors.
pub fn generate_model(spec: &SceneSpec) -> Result<HeadModel> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let radii = Vec3::new(0.82, 1.0, 0.9);
    let mut dirs = vec![Vec3::new(0.0, 1.0, 0.0)];
    for r in 1..=spec.rings {
        let theta = PI * r as f64 / (spec.rings + 1) as f64;
        for s in 0..spec.segments {
            dirs.push(sphere_dir(
                theta,
                2.0 * PI * s as f64 / spec.segments as f64,
            ));
        }
    }
    dirs.push(Vec3::new(0.0, -1.0, 0.0));
    let v = dirs.len();
    let seg = spec.segments as u32;
    let ring_start = |r: usize| 1 + (r as u32) * seg;
    let mut faces = Vec::new();
    for s in 0..seg {
        faces.push([0, ring_start(0) + (s + 1) % seg, ring_start(0) + s]);
    }
    for r in 0..spec.rings - 1 {
        for s in 0..seg {
            let (a, b) = (ring_start(r) + s, ring_start(r) + (s + 1) % seg);
            let (c, d) = (ring_start(r + 1) + s, ring_start(r + 1) + (s + 1) % seg);
            faces.push([a, b, c]);
            faces.push([b, d, c]);
        }
    }
    let bottom = (v - 1) as u32;
    for s in 0..seg {
        faces.push([
            ring_start(spec.rings - 1) + s,
            ring_start(spec.rings - 1) + (s + 1) % seg,
            bottom,
        ]);
    }
    let template: Vec<Vec3> = dirs
        .iter()
        .map(|d| {
            // slight chin and nose shaping on top of the ellipsoid
            let nose = 0.12 * bump(d, &sphere_dir(0.55 * PI, 0.0), 0.12);
            let chin = 0.06 * bump(d, &sphere_dir(0.8 * PI, 0.0), 0.2);
            d.component_mul(&radii) * (1.0 + nose + chin)
        })
        .collect();
    let head_size = 2.0 * radii.max();
    let limit = 0.1 * head_size;

    let centers: Vec<(Vec3, Vec3)> = (0..8)
        .map(|_| {
            let c = sphere_dir(
                rng.random_range(0.3 * PI..0.8 * PI),
                rng.random_range(-0.8..0.8),
            );
            let dir = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
            .normalize();
            (c, dir)
        })
        .collect();
    let mut expression_basis = vec![0.0; v * 3 * spec.n_expr];
    let mut shape_basis = vec![0.0; v * 3 * spec.n_shape];
    for (i, d) in dirs.iter().enumerate() {
        for k in 0..spec.n_expr {
            let f = expression_field(k, d, &centers);
            for c in 0..3 {
                expression_basis[(i * 3 + c) * spec.n_expr + k] = f[c];
            }
        }
        for k in 0..spec.n_shape {
            let f = shape_field(k, d);
            for c in 0..3 {
                shape_basis[(i * 3 + c) * spec.n_shape + k] = f[c];
            }
        }
    }
    normalize_basis(&mut expression_basis, v, spec.n_expr, limit);
    normalize_basis(&mut shape_basis, v, spec.n_shape, 0.5 * limit);

    // neck, head, jaw, left eye, right eye
    let all_joints = [
        Vec3::new(0.0, -1.1, -0.1),
        Vec3::new(0.0, -0.3, 0.0),
        Vec3::new(0.0, -0.45, 0.2),
        Vec3::new(0.3, 0.2, 0.75),
        Vec3::new(-0.3, 0.2, 0.75),
    ];
    let all_parents = [-1, 0, 1, 1, 1];
    let j = spec.joints;
    let joint_rest_positions = all_joints[..j].to_vec();
    let joint_parents = all_parents[..j].to_vec();
    let mut skinning_weights = vec![0.0; v * j];
    for (i, p) in template.iter().enumerate() {
        let w: Vec<f64> = joint_rest_positions
            .iter()
            .map(|jp| (-(p - jp).norm_squared() / 0.3).exp() + 1e-3)
            .collect();
        let s: f64 = w.iter().sum();
        for (k, wk) in w.iter().enumerate() {
            skinning_weights[i * j + k] = wk / s;
        }
    }

    let mut model = HeadModel {
        vertex_colors: dirs.iter().map(vertex_color).collect(),
        template_vertices: template,
        faces,
        n_shape: spec.n_shape,
        n_expr: spec.n_expr,
        shape_basis,
        expression_basis,
        vertex_offsets: vec![Vec3::zeros(); v],
        joint_count: j,
        skinning_weights,
        joint_parents,
        joint_rest_positions,
    };
    model.snap_to_f32();
    model.validate()?;
    Ok(model)
}

fn snap(x: f64) -> f64 {
    x as f32 as f64
}

/// Smooth per-timestamp parameters sharing one identity.
pub fn generate_trajectory(spec: &SceneSpec, model: &HeadModel) -> Vec<HeadParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x7472_616a);
    let shape: Vec<f64> = (0..model.n_shape)
        .map(|_| snap(rng.random_range(-0.8..0.8)))
        .collect();
    let phases: Vec<f64> = (0..model.n_expr + 3 * model.joint_count + 6)
        .map(|_| rng.random_range(0.0..2.0 * PI))
        .collect();
    let rates: Vec<f64> = (0..phases.len())
        .map(|_| rng.random_range(0.6..1.4))
        .collect();
    let wave = |k: usize, t: usize| {
        let x = 2.0 * PI * spec.expression_cycles * t as f64 / spec.timestamps.max(1) as f64;
        (rates[k] * x + phases[k]).sin()
    };
    (0..spec.timestamps)
        .map(|t| {
            let e0 = model.n_expr;
            let expression = (0..model.n_expr)
                .map(|k| snap(spec.expression_amplitude * wave(k, t)))
                .collect();
            let joint_rotations = (0..3 * model.joint_count)
                .map(|k| {
                    let amp = match k / 3 {
                        0 => 0.06,
                        1 => 0.1,
                        2 => 0.05,
                        _ => 0.0,
                    };
                    snap(amp * wave(e0 + k, t))
                })
                .collect();
            let r0 = e0 + 3 * model.joint_count;
            let mut rigid = [0.0; 6];
            for (k, r) in rigid.iter_mut().enumerate() {
                let amp = if k < 3 { 0.03 } else { 0.02 };
                *r = snap(amp * wave(r0 + k, t));
            }
            HeadParams {
                rigid,
                joint_rotations,
                shape: shape.clone(),
                expression,
            }
        })
        .collect()
}

/// Cameras on a horizontal arc facing the head, alternating between two heights.
pub fn generate_cameras(spec: &SceneSpec) -> Vec<Camera> {
    let n = spec.cameras;
    let half = spec.arc_degrees.to_radians() / 2.0;
    (0..n)
        .map(|i| {
            let a = if n == 1 {
                0.0
            } else {
                -half + 2.0 * half * i as f64 / (n - 1) as f64
            };
            let eye = Vec3::new(
                spec.ring_radius * a.sin(),
                spec.ring_heights[i % 2],
                spec.ring_radius * a.cos(),
            );
            Camera::look_at(
                eye,
                Vec3::zeros(),
                Vec3::new(0.0, 1.0, 0.0),
                spec.focal,
                spec.width,
                spec.height,
            )
            .snapped_to_f32()
        })
        .collect()
}

pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    let model = generate_model(spec)?;
    let params = generate_trajectory(spec, &model);
    Ok(Scene {
        cameras: generate_cameras(spec),
        model,
        params,
    })
}

/// Adds i.i.d. N(0, sigma^2) noise to every expression coefficient.
pub fn corrupt_expressions(
    trajectory: &[HeadParams],
    sigma: f64,
    seed: u64,
) -> Result<Vec<HeadParams>> {
    if !(sigma >= 0.0) {
        return Err(Error::invalid("sigma", "must be non-negative"));
    }
    if sigma == 0.0 {
        return Ok(trajectory.to_vec());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid("sigma", e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x636f_7272);
    Ok(trajectory
        .iter()
        .map(|p| {
            let mut q = p.clone();
            q.expression
                .iter_mut()
                .for_each(|e| *e = snap(*e + normal.sample(&mut rng)));
            q
        })
        .collect())
}

/// Z-buffered triangle rasterization with perspective-correct vertex colors.
pub fn render_mesh(
    mesh: &Mesh,
    colors: &[[f64; 3]],
    cam: &Camera,
    background: [f64; 3],
    supersample: usize,
) -> Image {
    let ss = supersample.max(1);
    let (w, h) = (cam.width * ss, cam.height * ss);
    let mut depth = vec![f64::INFINITY; w * h];
    let mut color = vec![background; w * h];
    let s = ss as f64;
    for face in &mesh.faces {
        let idx = face.map(|i| i as usize);
        let pc = idx.map(|i| cam.to_camera(&mesh.vertices[i]));
        if pc.iter().any(|p| p.z <= cam.near) {
            continue;
        }
        let sp = pc.map(|p| {
            [
                s * (cam.fx * p.x / p.z + cam.cx),
                s * (cam.fy * p.y / p.z + cam.cy),
            ]
        });
        let area = (sp[1][0] - sp[0][0]) * (sp[2][1] - sp[0][1])
            - (sp[2][0] - sp[0][0]) * (sp[1][1] - sp[0][1]);
        if area.abs() < 1e-12 {
            continue;
        }
        let x0 = sp
            .iter()
            .map(|p| p[0])
            .fold(f64::INFINITY, f64::min)
            .floor()
            .max(0.0) as usize;
        let y0 = sp
            .iter()
            .map(|p| p[1])
            .fold(f64::INFINITY, f64::min)
            .floor()
            .max(0.0) as usize;
        let x1 = (sp
            .iter()
            .map(|p| p[0])
            .fold(f64::NEG_INFINITY, f64::max)
            .ceil()
            .max(0.0) as usize)
            .min(w);
        let y1 = (sp
            .iter()
            .map(|p| p[1])
            .fold(f64::NEG_INFINITY, f64::max)
            .ceil()
            .max(0.0) as usize)
            .min(h);
        for y in y0..y1 {
            for x in x0..x1 {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let edge = |a: [f64; 2], b: [f64; 2]| {
                    (b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (px - a[0])
                };
                let l0 = edge(sp[1], sp[2]) / area;
                let l1 = edge(sp[2], sp[0]) / area;
                let l2 = edge(sp[0], sp[1]) / area;
                if l0 < 0.0 || l1 < 0.0 || l2 < 0.0 {
                    continue;
                }
                let iw = [l0 / pc[0].z, l1 / pc[1].z, l2 / pc[2].z];
                let inv_z = iw[0] + iw[1] + iw[2];
                let z = 1.0 / inv_z;
                let p = y * w + x;
                if z < depth[p] {
                    depth[p] = z;
                    let mut c = [0.0; 3];
                    for k in 0..3 {
                        for ch in 0..3 {
                            c[ch] += iw[k] * z * colors[idx[k]][ch];
                        }
                    }
                    color[p] = c;
                }
            }
        }
    }
    let mut img = Image::new(cam.width, cam.height);
    let inv = 1.0 / (ss * ss) as f64;
    for y in 0..cam.height {
        for x in 0..cam.width {
            let mut acc = [0.0; 3];
            for sy in 0..ss {
                for sx in 0..ss {
                    let c = color[(y * ss + sy) * w + x * ss + sx];
                    for ch in 0..3 {
                        acc[ch] += c[ch] * inv;
                    }
                }
            }
            img.set_pixel(x, y, acc);
        }
    }
    img
}

pub fn render_ground_truth(
    model: &HeadModel,
    params: &HeadParams,
    cam: &Camera,
    background: [f64; 3],
    supersample: usize,
) -> Result<Image> {
    let mesh = model.evaluate(params)?;
    Ok(render_mesh(
        &mesh,
        &model.vertex_colors,
        cam,
        background,
        supersample,
    ))
}

/// Images are stored as 8-bit PNG; `frames[t][v]` hold the quantized values.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub model: HeadModel,
    pub cameras: Vec<Camera>,
    pub params_true: Vec<HeadParams>,
    pub params_init: Vec<HeadParams>,
    pub frames: Vec<Vec<Image>>,
    pub split: Split,
}

impl Dataset {
    pub fn generate(spec: &SceneSpec) -> Result<Self> {
        let scene = generate_scene(spec)?;
        let params_init = corrupt_expressions(&scene.params, spec.sigma, spec.seed)?;
        let frames = scene
            .params
            .par_iter()
            .map(|p| {
                let mesh = scene.model.evaluate(p)?;
                Ok(scene
                    .cameras
                    .iter()
                    .map(|c| {
                        render_mesh(
                            &mesh,
                            &scene.model.vertex_colors,
                            c,
                            spec.background,
                            spec.supersample,
                        )
                        .quantized()
                    })
                    .collect())
            })
            .collect::<Result<Vec<Vec<Image>>>>()?;
        Ok(Self {
            split: Split::four_to_one(spec.timestamps, spec.heldout_view()),
            model: scene.model,
            cameras: scene.cameras,
            params_true: scene.params,
            params_init,
            frames,
        })
    }

    pub fn timestamps(&self) -> usize {
        self.frames.len()
    }

    pub fn frame(&self, t: u32, view: usize) -> Result<&Image> {
        self.frames
            .get(t as usize)
            .and_then(|f| f.get(view))
            .ok_or_else(|| Error::invalid("frame", format!("no image for t={t}, view={view}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        for c in &self.cameras {
            c.validate()?;
        }
        let t = self.frames.len();
        if self.params_true.len() != t || self.params_init.len() != t {
            return Err(Error::invalid(
                "dataset",
                "parameter count differs from timestamp count",
            ));
        }
        for p in self.params_init.iter().chain(&self.params_true) {
            p.check(&self.model)?;
        }
        for (ti, views) in self.frames.iter().enumerate() {
            if views.len() != self.cameras.len() {
                return Err(Error::invalid(
                    "dataset",
                    format!(
                        "timestamp {ti} has {} of {} views",
                        views.len(),
                        self.cameras.len()
                    ),
                ));
            }
            for (v, img) in views.iter().enumerate() {
                if img.width != self.cameras[v].width || img.height != self.cameras[v].height {
                    return Err(Error::invalid(
                        "dataset",
                        format!("frame t={ti} v={v} does not match its camera"),
                    ));
                }
            }
        }
        if self.split.heldout_view >= self.cameras.len() {
            return Err(Error::invalid("split", "heldout_view out of range"));
        }
        if self
            .split
            .train_t
            .iter()
            .chain(&self.split.heldout_t)
            .any(|&x| x as usize >= t)
        {
            return Err(Error::invalid("split", "timestamp out of range"));
        }
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let mk = |p: &Path| fs::create_dir_all(p).map_err(|e| Error::io(p, e));
        mk(dir)?;
        let json = |name: &str, value: serde_json::Value| {
            let p = dir.join(name);
            fs::write(&p, serde_json::to_string_pretty(&value).expect("json"))
                .map_err(|e| Error::io(&p, e))
        };
        let cams: Vec<CameraRecord> = self.cameras.iter().map(Camera::to_record).collect();
        json("cams.json", serde_json::to_value(cams).expect("json"))?;
        json(
            "params_true.json",
            serde_json::to_value(&self.params_true).expect("json"),
        )?;
        json(
            "params_init.json",
            serde_json::to_value(&self.params_init).expect("json"),
        )?;
        json(
            "split.json",
            serde_json::to_value(&self.split).expect("json"),
        )?;
        save_head_model(&self.model, &dir.join("head.ghm"))?;
        for (t, views) in self.frames.iter().enumerate() {
            let td = dir.join("frames").join(format!("t{t:03}"));
            mk(&td)?;
            for (v, img) in views.iter().enumerate() {
                img.write_png(&td.join(format!("v{v:02}.png")))?;
            }
        }
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        fn json<T: serde::de::DeserializeOwned>(dir: &Path, name: &str) -> Result<T> {
            let p = dir.join(name);
            let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", p.display())))
        }
        let cams: Vec<CameraRecord> = json(dir, "cams.json")?;
        let cameras = cams
            .iter()
            .map(Camera::from_record)
            .collect::<Result<Vec<_>>>()?;
        let params_true: Vec<HeadParams> = json(dir, "params_true.json")?;
        let params_init: Vec<HeadParams> = json(dir, "params_init.json")?;
        let split: Split = json(dir, "split.json")?;
        let model = load_head_model(&dir.join("head.ghm"))?;
        let frames = (0..params_true.len())
            .map(|t| {
                (0..cameras.len())
                    .map(|v| {
                        Image::read_png(
                            &dir.join("frames")
                                .join(format!("t{t:03}"))
                                .join(format!("v{v:02}.png")),
                        )
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let ds = Self {
            model,
            cameras,
            params_true,
            params_init,
            frames,
            split,
        };
        ds.validate()?;
        Ok(ds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Mat3;

    fn small_spec() -> SceneSpec {
        SceneSpec {
            rings: 6,
            segments: 8,
            timestamps: 5,
            width: 24,
            height: 24,
            focal: 30.0,
            ..Default::default()
        }
    }

    #[test]
    fn same_seed_same_scene() {
        let a = generate_scene(&small_spec()).unwrap();
        let b = generate_scene(&small_spec()).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn blendshape_columns_are_zero_mean_and_bounded() {
        let spec = small_spec();
        let m = generate_model(&spec).unwrap();
        let v = m.vertex_count();
        for k in 0..m.n_expr {
            for c in 0..3 {
                let mean: f64 = (0..v)
                    .map(|i| m.expression_basis[(i * 3 + c) * m.n_expr + k])
                    .sum::<f64>()
                    / v as f64;
                assert!(mean.abs() < 1e-6, "column {k} axis {c} mean {mean}");
            }
            let max = (0..v)
                .map(|i| {
                    (0..3)
                        .map(|c| m.expression_basis[(i * 3 + c) * m.n_expr + k].powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .fold(0.0, f64::max);
            assert!(max <= 0.1 * 2.0 + 1e-6);
        }
    }

    #[test]
    fn zero_sigma_is_identity_and_noise_has_the_right_scale() {
        let spec = SceneSpec {
            n_expr: 20,
            timestamps: 40,
            ..small_spec()
        };
        let s = generate_scene(&spec).unwrap();
        assert_eq!(corrupt_expressions(&s.params, 0.0, 1).unwrap(), s.params);
        let c = corrupt_expressions(&s.params, 0.3, 1).unwrap();
        assert_eq!(c, corrupt_expressions(&s.params, 0.3, 1).unwrap());
        let per_t: Vec<f64> = c
            .iter()
            .zip(&s.params)
            .map(|(a, b)| {
                a.expression
                    .iter()
                    .zip(&b.expression)
                    .map(|(x, y)| (x - y).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        let rms = (per_t.iter().map(|x| x * x).sum::<f64>() / per_t.len() as f64).sqrt();
        let want = 0.3 * 20f64.sqrt();
        assert!((rms - want).abs() < 0.1 * want, "{rms} vs {want}");
        assert_eq!(c[3].shape, s.params[3].shape);
        assert_eq!(c[3].rigid, s.params[3].rigid);
    }

    fn axis_camera(w: usize, h: usize) -> Camera {
        Camera {
            fx: 10.0,
            fy: 10.0,
            cx: w as f64 / 2.0,
            cy: h as f64 / 2.0,
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
            width: w,
            height: h,
            near: 0.01,
        }
    }

    #[test]
    fn single_triangle_matches_half_space_oracle() {
        let cam = axis_camera(16, 16);
        // at z = 1 with f = 10 this maps to pixels (3,3), (13,3), (3,13)
        let mesh = Mesh {
            vertices: vec![
                Vec3::new(-0.5, -0.5, 1.0),
                Vec3::new(0.5, -0.5, 1.0),
                Vec3::new(-0.5, 0.5, 1.0),
            ],
            faces: vec![[0, 1, 2]],
        };
        let col = [[0.2, 0.4, 0.6]; 3];
        let img = render_mesh(&mesh, &col, &cam, [0.0; 3], 1);
        for y in 0..16 {
            for x in 0..16 {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let inside = px >= 3.0 && py >= 3.0 && px + py <= 16.0;
                let want = if inside { [0.2, 0.4, 0.6] } else { [0.0; 3] };
                let got = img.pixel(x, y);
                for c in 0..3 {
                    assert!((got[c] - want[c]).abs() < 1e-12, "({x},{y})");
                }
            }
        }
    }

    #[test]
    fn nearer_triangle_wins_and_looking_away_is_empty() {
        let cam = axis_camera(8, 8);
        let quad = |z: f64| {
            vec![
                Vec3::new(-2.0, -2.0, z),
                Vec3::new(2.0, -2.0, z),
                Vec3::new(0.0, 2.0, z),
            ]
        };
        let mut vertices = quad(3.0);
        vertices.extend(quad(2.0));
        let mesh = Mesh {
            vertices,
            faces: vec![[0, 1, 2], [3, 4, 5]],
        };
        let mut colors = vec![[1.0, 0.0, 0.0]; 3];
        colors.extend([[0.0, 0.0, 1.0]; 3]);
        let img = render_mesh(&mesh, &colors, &cam, [0.0; 3], 1);
        assert_eq!(img.pixel(4, 4), [0.0, 0.0, 1.0]);
        let behind = Mesh {
            vertices: quad(-2.0),
            faces: vec![[0, 1, 2]],
        };
        let img = render_mesh(&behind, &colors, &cam, [0.1, 0.2, 0.3], 1);
        assert!(img.data.chunks(3).all(|p| p == [0.1, 0.2, 0.3]));
    }

    #[test]
    fn dataset_round_trip() {
        let ds = Dataset::generate(&small_spec()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.write(dir.path()).unwrap();
        let back = Dataset::read(dir.path()).unwrap();
        assert_eq!(back.frames, ds.frames);
        assert_eq!(back.split, ds.split);
        assert_eq!(back.params_init, ds.params_init);
        for (a, b) in back.cameras.iter().zip(&ds.cameras) {
            assert_eq!(a.to_record(), b.to_record());
        }
        assert_eq!(ds.split.train_t.len(), 4);
        assert_eq!(ds.split.heldout_t, vec![4]);
        let covered = ds.frames[0][0].data.iter().filter(|&&v| v > 0.0).count();
        assert!(covered > 100, "head should be visible");
    }
}

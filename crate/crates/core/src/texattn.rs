//! Triplane texture features sampled at canonical Gaussian positions, fused
//! with the expression-aware image feature and decoded into per-Gaussian
//! attribute residuals.

use nalgebra::Vector4;
use rand_chacha::ChaCha8Rng;

use crate::binding::Residuals;
use crate::error::{Error, Result};
use crate::math::{sigmoid, Vec3};
use crate::nn::{leaky, leaky_grad, Linear, Mlp, MlpCache, ParamStore};

pub const PLANE_RES: usize = 32;
pub const PLANE_CHANNELS: usize = 8;
pub const ATTN_DIM: usize = 32;
pub const TRUNK_WIDTH: usize = 128;
/// Position residuals are scaled by this times the host triangle scale.
pub const MEAN_RESIDUAL_SCALE: f64 = 0.01;
/// Axis pairs of the three planes, in storage order xy, xz, yz.
pub const PLANE_AXES: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];

/// Three `res x res x channels` feature planes over a fixed bounding box.
#[derive(Debug, Clone, PartialEq)]
pub struct Triplane {
    pub name: String,
    pub res: usize,
    pub channels: usize,
    pub bbox_min: Vec3,
    pub bbox_max: Vec3,
}

/// Bilinear footprint of one sample on one plane: four node offsets and weights.
type Footprint = [(usize, f64); 4];

impl Triplane {
    /// Registers zero-initialized planes of shape `[3, res, res, channels]`.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        res: usize,
        channels: usize,
        bbox_min: Vec3,
        bbox_max: Vec3,
    ) -> Result<Self> {
        if res < 2 {
            return Err(Error::invalid("triplane resolution", "must be at least 2"));
        }
        if (0..3).any(|k| !(bbox_max[k] > bbox_min[k])) {
            return Err(Error::invalid(
                "triplane bounding box",
                "every extent must be positive",
            ));
        }
        store.insert(
            name,
            &[3, res, res, channels],
            vec![0.0; 3 * res * res * channels],
        )?;
        Ok(Self {
            name: name.to_string(),
            res,
            channels,
            bbox_min,
            bbox_max,
        })
    }

    pub fn feature_dim(&self) -> usize {
        3 * self.channels
    }

    fn grid_coord(&self, p: &Vec3, axis: usize) -> f64 {
        let u = (p[axis] - self.bbox_min[axis]) / (self.bbox_max[axis] - self.bbox_min[axis]);
        u.clamp(0.0, 1.0) * (self.res - 1) as f64
    }

    fn footprint(&self, p: &Vec3, plane: usize) -> Footprint {
        let (a, b) = PLANE_AXES[plane];
        let (ga, gb) = (self.grid_coord(p, a), self.grid_coord(p, b));
        let ia = (ga.floor() as usize).min(self.res - 2);
        let ib = (gb.floor() as usize).min(self.res - 2);
        let (fa, fb) = (ga - ia as f64, gb - ib as f64);
        let node = |i: usize, j: usize| ((plane * self.res + i) * self.res + j) * self.channels;
        [
            (node(ia, ib), (1.0 - fa) * (1.0 - fb)),
            (node(ia + 1, ib), fa * (1.0 - fb)),
            (node(ia, ib + 1), (1.0 - fa) * fb),
            (node(ia + 1, ib + 1), fa * fb),
        ]
    }

    /// Concatenated xy, xz, yz samples at `p`; points outside the box clamp to it.
    pub fn sample(&self, store: &ParamStore, p: &Vec3) -> Vec<f64> {
        let grid = &store.p(&self.name).value;
        let c = self.channels;
        let mut out = vec![0.0; 3 * c];
        for plane in 0..3 {
            for (off, w) in self.footprint(p, plane) {
                for k in 0..c {
                    out[plane * c + k] += w * grid[off + k];
                }
            }
        }
        out
    }

    /// Adds dL/dgrid for one sample.
    pub fn sample_backward(&self, store: &mut ParamStore, p: &Vec3, d_feat: &[f64]) {
        let c = self.channels;
        let prints: Vec<Footprint> = (0..3).map(|plane| self.footprint(p, plane)).collect();
        let grad = &mut store.p_mut(&self.name).grad;
        for (plane, fp) in prints.iter().enumerate() {
            for &(off, w) in fp {
                for k in 0..c {
                    grad[off + k] += w * d_feat[plane * c + k];
                }
            }
        }
    }
}

/// Gated fusion of the triplane feature with the image feature, then a
/// shared trunk with four zero-initialized residual heads.
#[derive(Debug, Clone, PartialEq)]
pub struct TextureNet {
    pub triplane: Triplane,
    pub gate: Linear,
    pub proj_h: Linear,
    pub proj_f: Linear,
    pub trunk: Mlp,
    /// Heads for mean (3), log-scale (3), rotation (4) and opacity (1).
    pub heads: [Linear; 4],
}

pub const HEAD_DIMS: [usize; 4] = [3, 3, 4, 1];

#[derive(Debug, Clone)]
pub struct TextureCache {
    n: usize,
    points: Vec<Vec3>,
    frame_scales: Vec<f64>,
    feature: Vec<f64>,
    h: Vec<f64>,
    hp: Vec<f64>,
    gate: Vec<f64>,
    trunk: MlpCache,
    trunk_pre: Vec<f64>,
    act: Vec<f64>,
    head_mean: Vec<f64>,
}

impl TextureNet {
    pub fn new(
        store: &mut ParamStore,
        d_feat: usize,
        bbox_min: Vec3,
        bbox_max: Vec3,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let triplane = Triplane::new(
            store,
            "texture.triplane",
            PLANE_RES,
            PLANE_CHANNELS,
            bbox_min,
            bbox_max,
        )?;
        let dh = triplane.feature_dim();
        let heads = [0, 1, 2, 3].map(|k| {
            Linear::new(
                store,
                &format!("texture.head{k}"),
                TRUNK_WIDTH,
                HEAD_DIMS[k],
                true,
                rng,
            )
        });
        let [h0, h1, h2, h3] = heads;
        Ok(Self {
            gate: Linear::new(store, "texture.gate", d_feat, ATTN_DIM, false, rng)?,
            proj_h: Linear::new(store, "texture.proj_h", dh, ATTN_DIM, false, rng)?,
            proj_f: Linear::new(store, "texture.proj_f", d_feat, ATTN_DIM, false, rng)?,
            trunk: Mlp::new(
                store,
                "texture.trunk",
                &[ATTN_DIM, TRUNK_WIDTH, TRUNK_WIDTH],
                false,
                rng,
            )?,
            heads: [h0?, h1?, h2?, h3?],
            triplane,
        })
    }

    /// `gate(F) * (W_h h + b_h) + (W_f F + b_f)` for one Gaussian.
    pub fn attend(&self, store: &ParamStore, feature: &[f64], h: &[f64]) -> Result<Vec<f64>> {
        if feature.len() != self.gate.d_in {
            return Err(Error::dim("image feature", self.gate.d_in, feature.len()));
        }
        if h.len() != self.proj_h.d_in {
            return Err(Error::dim("triplane feature", self.proj_h.d_in, h.len()));
        }
        let g = self.gate.forward(store, feature, 1);
        let hp = self.proj_h.forward(store, h, 1);
        let f = self.proj_f.forward(store, feature, 1);
        Ok((0..ATTN_DIM)
            .map(|k| sigmoid(g[k]) * hp[k] + f[k])
            .collect())
    }

    /// Residuals for every Gaussian given canonical positions and the scale
    /// of each Gaussian's host triangle.
    pub fn forward(
        &self,
        store: &ParamStore,
        feature: &[f64],
        points: &[Vec3],
        frame_scales: &[f64],
    ) -> Result<(Residuals, TextureCache)> {
        let n = points.len();
        if frame_scales.len() != n {
            return Err(Error::dim("frame scales", n, frame_scales.len()));
        }
        if feature.len() != self.gate.d_in {
            return Err(Error::dim("image feature", self.gate.d_in, feature.len()));
        }
        let dh = self.triplane.feature_dim();
        let mut h = Vec::with_capacity(n * dh);
        for p in points {
            h.extend(self.triplane.sample(store, p));
        }
        let gate: Vec<f64> = self
            .gate
            .forward(store, feature, 1)
            .into_iter()
            .map(sigmoid)
            .collect();
        let fproj = self.proj_f.forward(store, feature, 1);
        let hp = self.proj_h.forward(store, &h, n);
        let v: Vec<f64> = hp
            .iter()
            .enumerate()
            .map(|(i, x)| gate[i % ATTN_DIM] * x + fproj[i % ATTN_DIM])
            .collect();
        let (trunk_pre, trunk) = self.trunk.forward(store, &v, n)?;
        let act: Vec<f64> = trunk_pre.iter().map(|&x| leaky(x)).collect();
        let outs: Vec<Vec<f64>> = self
            .heads
            .iter()
            .map(|hd| hd.forward(store, &act, n))
            .collect();
        let mut res = Residuals::zeros(n);
        for i in 0..n {
            let s = MEAN_RESIDUAL_SCALE * frame_scales[i];
            let m = &outs[0][3 * i..3 * i + 3];
            res.mean[i] = Vec3::new(m[0] * s, m[1] * s, m[2] * s);
            res.log_scale[i] = Vec3::from_column_slice(&outs[1][3 * i..3 * i + 3]);
            res.rotation[i] = Vector4::from_column_slice(&outs[2][4 * i..4 * i + 4]);
            res.opacity[i] = outs[3][i];
        }
        Ok((
            res,
            TextureCache {
                n,
                points: points.to_vec(),
                frame_scales: frame_scales.to_vec(),
                feature: feature.to_vec(),
                h,
                hp,
                gate,
                trunk,
                trunk_pre,
                act,
                head_mean: outs[0].clone(),
            },
        ))
    }

    /// Accumulates parameter gradients. Returns dL/dfeature and dL/d(frame
    /// scale) per Gaussian.
    pub fn backward(
        &self,
        store: &mut ParamStore,
        cache: &TextureCache,
        d_res: &Residuals,
    ) -> (Vec<f64>, Vec<f64>) {
        let n = cache.n;
        let mut d_mean = vec![0.0; 3 * n];
        let mut d_scale = vec![0.0; n];
        let mut d_ls = vec![0.0; 3 * n];
        let mut d_rot = vec![0.0; 4 * n];
        let mut d_op = vec![0.0; n];
        for i in 0..n {
            let s = MEAN_RESIDUAL_SCALE * cache.frame_scales[i];
            for c in 0..3 {
                d_mean[3 * i + c] = d_res.mean[i][c] * s;
                d_scale[i] += MEAN_RESIDUAL_SCALE * cache.head_mean[3 * i + c] * d_res.mean[i][c];
                d_ls[3 * i + c] = d_res.log_scale[i][c];
            }
            d_rot[4 * i..4 * i + 4].copy_from_slice(d_res.rotation[i].as_slice());
            d_op[i] = d_res.opacity[i];
        }
        let mut d_act = vec![0.0; n * TRUNK_WIDTH];
        for (hd, d) in self.heads.iter().zip([&d_mean, &d_ls, &d_rot, &d_op]) {
            for (a, b) in d_act.iter_mut().zip(hd.backward(store, &cache.act, n, d)) {
                *a += b;
            }
        }
        for (g, &z) in d_act.iter_mut().zip(&cache.trunk_pre) {
            *g *= leaky_grad(z);
        }
        let dv = self.trunk.backward(store, &cache.trunk, &d_act);
        let mut d_gate = vec![0.0; ATTN_DIM];
        let mut d_fproj = vec![0.0; ATTN_DIM];
        let mut d_hp = vec![0.0; n * ATTN_DIM];
        for (i, &g) in dv.iter().enumerate() {
            let k = i % ATTN_DIM;
            d_gate[k] += g * cache.hp[i];
            d_fproj[k] += g;
            d_hp[i] = g * cache.gate[k];
        }
        let dh = self.proj_h.backward(store, &cache.h, n, &d_hp);
        let dim = self.triplane.feature_dim();
        for (i, p) in cache.points.iter().enumerate() {
            self.triplane
                .sample_backward(store, p, &dh[i * dim..(i + 1) * dim]);
        }
        let d_gpre: Vec<f64> = d_gate
            .iter()
            .zip(&cache.gate)
            .map(|(d, g)| d * g * (1.0 - g))
            .collect();
        let mut d_feat = self.gate.backward(store, &cache.feature, 1, &d_gpre);
        for (a, b) in
            d_feat
                .iter_mut()
                .zip(self.proj_f.backward(store, &cache.feature, 1, &d_fproj))
        {
            *a += b;
        }
        (d_feat, d_scale)
    }
}

//! Training loop, inference drives and checkpointing for a head avatar.

mod checkpoint;
mod config;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{Ablation, CorrectionMode, LearningRates, Switches, TrainConfig};

use crate::binding::{
    apply_residuals, apply_residuals_backward, init_bindings, reanchor, to_world,
    to_world_backward, BoundGaussianCloud, Residuals, WorldGaussians,
};
use crate::error::{ensure_len, Error, Result};
use crate::geocorrect::{
    momentum_schedule, Correction, CorrectionNet, ExpressionBank, FEATURE_DIM, MOMENTUM_START,
};
use crate::headmodel::{
    triangle_frames, triangle_frames_backward, EvalCache, HeadModel, HeadParams, Mesh,
    TriangleFrames,
};
use crate::image::Image;
use crate::math::{Mat3, Vec3};
use crate::nn::{Param, ParamStore};
use crate::objective::{total_loss, LossReport};
use crate::optim::Adam;
use crate::raster::sh::SH_C0;
use crate::raster::{render, visible_set, Camera, DiffRenderer, VISIBILITY_THRESHOLD};
use crate::synth::{Dataset, Split};
use crate::texattn::{TextureCache, TextureNet};

/// Network initialization draws from its own stream so the Gaussian cloud
/// is the same in every ablation arm.
const NET_STREAM: u64 = 0x6e65_7477_6f72_6b73;

/// Corrections frozen at the end of training for one timestamp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredCorrection {
    /// One entry per training view in single-view mode, else a single entry.
    pub deltas: Vec<Vec<f64>>,
    pub feature: Vec<f64>,
}

/// What one training iteration did.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub iteration: usize,
    pub t: u32,
    pub view: usize,
    pub loss: LossReport,
    pub rendered: Image,
}

impl StepOutcome {
    pub const CSV_HEADER: &'static str =
        "iteration,t,view,l1,dssim,rgb,position,scaling,total,visible_count";

    pub fn csv_row(&self) -> String {
        let row = self.loss.csv_row(self.iteration);
        let rest = row.split_once(',').map_or("", |(_, r)| r);
        format!("{},{},{},{}", self.iteration, self.t, self.view, rest)
    }
}

/// Metric log of a training run, one row per iteration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<(usize, u32, usize, LossReport)>,
}

impl TrainLog {
    pub fn push(&mut self, s: &StepOutcome) {
        self.rows.push((s.iteration, s.t, s.view, s.loss));
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(StepOutcome::CSV_HEADER);
        out.push('\n');
        for (it, t, v, loss) in &self.rows {
            let row = loss.csv_row(*it);
            let rest = row.split_once(',').map_or("", |(_, r)| r);
            out.push_str(&format!("{it},{t},{v},{rest}\n"));
        }
        out
    }

    /// Moving average of the rgb loss over `window` iterations.
    pub fn smoothed_rgb(&self, window: usize) -> Vec<f64> {
        let rgb: Vec<f64> = self.rows.iter().map(|r| r.3.rgb).collect();
        if window == 0 || rgb.len() < window {
            return Vec::new();
        }
        rgb.windows(window)
            .map(|w| w.iter().sum::<f64>() / window as f64)
            .collect()
    }
}

/// Mesh, frames and Gaussians for one set of head parameters.
struct Posed {
    params: HeadParams,
    mesh: Mesh,
    cache: EvalCache,
    frames: TriangleFrames,
    base: WorldGaussians,
    texture: Option<(Residuals, TextureCache)>,
    world: WorldGaussians,
}

/// A trainable (or trained) avatar with everything needed to render it.
#[derive(Debug, Clone)]
pub struct Avatar {
    pub config: TrainConfig,
    pub model: HeadModel,
    pub cameras: Vec<Camera>,
    pub split: Split,
    /// Per-timestamp head parameters; shape is shared.
    pub params: Vec<HeadParams>,
    pub cloud: BoundGaussianCloud,
    /// Slot `k` belongs to `train_views[k]`.
    pub bank: Option<ExpressionBank>,
    pub store: ParamStore,
    pub correction: Option<CorrectionNet>,
    pub texture: Option<TextureNet>,
    pub optimizer: Adam,
    pub corrections: BTreeMap<u32, StoredCorrection>,
    pub iteration: usize,
    neutral: Mesh,
    neutral_frames: TriangleFrames,
}

fn add_nonzero(base: &[f64], delta: &[f64]) -> Vec<f64> {
    base.iter()
        .zip(delta)
        .map(|(b, d)| if *d == 0.0 { *b } else { b + d })
        .collect()
}

fn mean_rows(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.first().map_or(0, Vec::len);
    let mut out = vec![0.0; n];
    for r in rows {
        for (o, v) in out.iter_mut().zip(r) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|o| *o /= rows.len().max(1) as f64);
    out
}

fn bbox(mesh: &Mesh) -> (Vec3, Vec3) {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for v in &mesh.vertices {
        lo = lo.inf(v);
        hi = hi.sup(v);
    }
    (lo, hi)
}

impl Avatar {
    /// Fresh avatar initialized from the dataset's starting parameters.
    pub fn new(data: &Dataset, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        data.validate()?;
        let model = data.model.clone();
        let neutral = model.neutral_mesh();
        let mut cloud = init_bindings(
            &neutral,
            config.gaussians_per_triangle,
            config.sh_degree,
            config.seed,
        )?;
        seed_colors(&mut cloud, &model);

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ NET_STREAM);
        let mut store = ParamStore::new();
        let sw = config.switches;
        let cam = &data.cameras[0];
        let correction = match sw.correction {
            CorrectionMode::Off => None,
            _ => Some(CorrectionNet::new(
                &mut store,
                cam.width,
                cam.height,
                model.n_expr,
                &mut rng,
            )?),
        };
        let texture = if sw.texture {
            let (lo, hi) = bbox(&neutral);
            Some(TextureNet::new(&mut store, FEATURE_DIM, lo, hi, &mut rng)?)
        } else {
            None
        };
        let train_views = data.split.train_views(data.cameras.len());
        let bank = if sw.bank {
            Some(ExpressionBank::new(
                train_views.len(),
                model.n_expr,
                MOMENTUM_START,
            )?)
        } else {
            None
        };
        Ok(Self::assemble(AvatarParts {
            optimizer: Adam::new(config.adam),
            config,
            cameras: data.cameras.clone(),
            split: data.split.clone(),
            params: data.params_init.clone(),
            cloud,
            bank,
            store,
            correction,
            texture,
            corrections: BTreeMap::new(),
            iteration: 0,
            model,
        }))
    }

    fn assemble(p: AvatarParts) -> Self {
        let neutral = p.model.neutral_mesh();
        let neutral_frames = triangle_frames(&neutral, None);
        Self {
            config: p.config,
            model: p.model,
            cameras: p.cameras,
            split: p.split,
            params: p.params,
            cloud: p.cloud,
            bank: p.bank,
            store: p.store,
            correction: p.correction,
            texture: p.texture,
            optimizer: p.optimizer,
            corrections: p.corrections,
            iteration: p.iteration,
            neutral,
            neutral_frames,
        }
    }

    pub fn train_views(&self) -> Vec<usize> {
        self.split.train_views(self.cameras.len())
    }

    /// Round-robin over training timestamps; the view advances once per sweep.
    pub fn sample(&self, iteration: usize) -> (u32, usize) {
        let ts = &self.split.train_t;
        let views = self.train_views();
        let t = ts[iteration % ts.len()];
        let v = views[(iteration / ts.len()) % views.len()];
        (t, v)
    }

    fn check_t(&self, t: u32) -> Result<()> {
        if (t as usize) < self.params.len() {
            Ok(())
        } else {
            Err(Error::invalid(
                "timestamp",
                format!("{t} outside 0..{}", self.params.len()),
            ))
        }
    }

    pub(crate) fn check_data(&self, data: &Dataset) -> Result<()> {
        ensure_len("dataset timestamps", self.params.len(), data.timestamps())?;
        ensure_len("dataset cameras", self.cameras.len(), data.cameras.len())?;
        if data.split != self.split {
            return Err(Error::invalid(
                "dataset",
                "split differs from the one the avatar was trained on",
            ));
        }
        Ok(())
    }

    fn pose(&self, params: HeadParams, feature: Option<&[f64]>) -> Result<Posed> {
        let (mesh, cache) = self.model.evaluate_with_cache(&params)?;
        let frames = triangle_frames(&mesh, None);
        let base = to_world(&self.cloud, &mesh, &frames);
        let (texture, world) = match (&self.texture, feature) {
            (Some(net), Some(f)) => {
                let canonical = to_world(&self.cloud, &self.neutral, &self.neutral_frames);
                let scales: Vec<f64> = self
                    .cloud
                    .triangle_id
                    .iter()
                    .map(|&f| frames.scales[f as usize])
                    .collect();
                let (res, tc) = net.forward(&self.store, f, &canonical.means, &scales)?;
                let world = apply_residuals(&base, &res)?;
                (Some((res, tc)), world)
            }
            _ => (None, base.clone()),
        };
        Ok(Posed {
            params,
            mesh,
            cache,
            frames,
            base,
            texture,
            world,
        })
    }

    fn regress(&self, data: &Dataset, t: u32, view: usize) -> Result<Option<Correction>> {
        let Some(net) = &self.correction else {
            return Ok(None);
        };
        let images: Vec<&Image> = match self.config.switches.correction {
            CorrectionMode::SingleView => vec![data.frame(t, view)?],
            _ => self
                .train_views()
                .into_iter()
                .map(|v| data.frame(t, v))
                .collect::<Result<_>>()?,
        };
        net.regress(&self.store, &images).map(Some)
    }

    /// One optimization step on the next (timestamp, view) pair.
    pub fn step(&mut self, data: &Dataset) -> Result<StepOutcome> {
        let k = self.iteration;
        let total = self.config.iterations;
        let (t, view) = self.sample(k);
        let target = data.frame(t, view)?;
        let correction = self.regress(data, t, view)?;

        let mut params = self.params[t as usize].clone();
        if let Some(c) = &correction {
            params.expression = match &mut self.bank {
                Some(bank) => {
                    let slot = self
                        .split
                        .train_views(self.cameras.len())
                        .iter()
                        .position(|&v| v == view)
                        .unwrap_or(0);
                    bank.set_momentum(momentum_schedule(k, total))?;
                    bank.update(t, slot, &c.delta_psi)?;
                    bank.apply(t, &params.expression)
                }
                None => add_nonzero(&params.expression, &c.delta_psi),
            };
        }
        let posed = self.pose(params, correction.as_ref().map(|c| c.feature.as_slice()))?;
        let cam = &self.cameras[view];
        let mut renderer = DiffRenderer::new();
        let out = renderer.forward(&posed.world, cam, self.config.background)?;
        let visible = visible_set(&out, VISIBILITY_THRESHOLD);
        let (report, lg) =
            total_loss(&out.image, target, &self.cloud, &visible, &self.config.loss)?;
        if !report.total.is_finite() {
            return Err(self.non_finite(k, t, view, &report));
        }

        // backward
        let nf = posed.mesh.faces.len();
        let d_world = renderer.backward(&posed.world, cam, &lg.image)?;
        let mut d_vertices = vec![Vec3::zeros(); posed.mesh.vertices.len()];
        let mut d_frame_rot = vec![Mat3::zeros(); nf];
        let mut d_frame_scale = vec![0.0; nf];
        let mut d_feature = vec![0.0; FEATURE_DIM];
        let d_base = match (&posed.texture, &self.texture) {
            (Some((res, tc)), Some(net)) => {
                let (d_base, d_res) = apply_residuals_backward(&posed.base, res, &d_world);
                let (d_f, d_scale) = net.backward(&mut self.store, tc, &d_res);
                for (i, &f) in self.cloud.triangle_id.iter().enumerate() {
                    d_frame_scale[f as usize] += d_scale[i];
                }
                if self.config.texture_feature_grad {
                    d_feature = d_f;
                }
                d_base
            }
            _ => d_world,
        };
        let mut cg = to_world_backward(
            &self.cloud,
            &posed.mesh,
            &posed.frames,
            &d_base,
            &mut d_vertices,
            &mut d_frame_rot,
            &mut d_frame_scale,
        );
        for (g, r) in cg.local_offset.iter_mut().zip(&lg.local_offset) {
            *g += r;
        }
        for (g, r) in cg.log_scale.iter_mut().zip(&lg.log_scale) {
            *g += r;
        }
        triangle_frames_backward(
            &posed.mesh,
            &posed.frames,
            &d_frame_rot,
            &d_frame_scale,
            &mut d_vertices,
        );
        let pg = self
            .model
            .backward(&posed.params, &posed.cache, &d_vertices)?;
        if let (Some(c), Some(net)) = (&correction, &self.correction) {
            // the bank and the additive path both pass d(psi) straight through
            net.backward(&mut self.store, &c.cache, &pg.expression, &d_feature);
        }

        // updates
        let lr = self.config.lr;
        let opt = &mut self.optimizer;
        let cloud = &mut self.cloud;
        opt.step(
            "cloud.local_offset",
            &mut cloud.local_offset,
            &cg.local_offset,
            self.config.position_lr(k),
        );
        opt.step(
            "cloud.log_scale",
            &mut cloud.log_scale,
            &cg.log_scale,
            lr.scale,
        );
        opt.step(
            "cloud.rotation",
            &mut cloud.rotation,
            &cg.rotation,
            lr.rotation,
        );
        opt.step(
            "cloud.opacity_logit",
            &mut cloud.opacity_logit,
            &cg.opacity_logit,
            lr.opacity,
        );
        opt.step(
            "cloud.sh_coeffs",
            &mut cloud.sh_coeffs,
            &cg.sh_coeffs,
            lr.sh,
        );

        let p = &mut self.params[t as usize];
        opt.step(
            &format!("params.t{t}.rotation"),
            &mut p.rigid[..3],
            &pg.rigid[..3],
            lr.joints,
        );
        opt.step(
            &format!("params.t{t}.translation"),
            &mut p.rigid[3..],
            &pg.rigid[3..],
            lr.translation,
        );
        opt.step(
            &format!("params.t{t}.joints"),
            &mut p.joint_rotations,
            &pg.joint_rotations,
            lr.joints,
        );
        if !self.config.switches.freeze_expression {
            opt.step(
                &format!("params.t{t}.expression"),
                &mut p.expression,
                &pg.expression,
                lr.expression,
            );
        }
        let mut shape = p.shape.clone();
        opt.step("params.shape", &mut shape, &pg.shape, lr.shape);
        for q in &mut self.params {
            q.shape.clone_from(&shape);
        }
        for (name, param) in self.store.iter_mut() {
            let Param { value, grad, .. } = param;
            let rate = if name.starts_with("texture.") {
                lr.texture
            } else {
                lr.network
            };
            opt.step(&format!("net.{name}"), value, grad, rate);
        }
        self.store.zero_grads();

        // scheduled maintenance on the mesh this step was rendered with
        let done = k + 1;
        let cfg = &self.config;
        if done >= cfg.reanchor_start && (done - cfg.reanchor_start) % cfg.reanchor_interval == 0 {
            reanchor(
                &mut self.cloud,
                &posed.mesh,
                &posed.frames,
                cfg.reanchor_eps,
            );
        }
        if done % cfg.opacity_reset_interval == 0 && done < total {
            self.cloud.reset_opacity(cfg.opacity_reset_value)?;
            self.optimizer.state.remove("cloud.opacity_logit");
        }
        self.iteration = done;
        Ok(StepOutcome {
            iteration: k,
            t,
            view,
            loss: report,
            rendered: out.image,
        })
    }

    fn non_finite(&self, k: usize, t: u32, view: usize, report: &LossReport) -> Error {
        let bad = |v: &[f64]| v.iter().filter(|x| !x.is_finite()).count();
        let c = &self.cloud;
        let store_bad: usize = self.store.iter().map(|(_, p)| bad(&p.value)).sum();
        Error::NonFinite(format!(
            "iteration {k} (t={t}, view={view}): {report:?}; non-finite offsets {}, log-scales {}, rotations {}, \
             opacities {}, sh {}, expression {}, network {}",
            bad(&c.local_offset),
            bad(&c.log_scale),
            bad(&c.rotation),
            bad(&c.opacity_logit),
            bad(&c.sh_coeffs),
            bad(&self.params[t as usize].expression),
            store_bad
        ))
    }

    /// Runs the remaining iterations, then freezes inference corrections.
    pub fn train(&mut self, data: &Dataset) -> Result<TrainLog> {
        self.check_data(data)?;
        let mut log = TrainLog::default();
        while self.iteration < self.config.iterations {
            log.push(&self.step(data)?);
        }
        self.finalize(data)?;
        Ok(log)
    }

    /// Regresses and stores a correction for every timestamp from the
    /// training views, so held-out views never see their own images.
    pub fn finalize(&mut self, data: &Dataset) -> Result<()> {
        self.check_data(data)?;
        self.corrections.clear();
        let Some(net) = &self.correction else {
            return Ok(());
        };
        let views = self.train_views();
        for t in 0..self.params.len() as u32 {
            let images: Vec<&Image> = views
                .iter()
                .map(|&v| data.frame(t, v))
                .collect::<Result<_>>()?;
            let stored = match self.config.switches.correction {
                CorrectionMode::SingleView => {
                    let cs: Vec<Correction> = images
                        .iter()
                        .map(|img| net.regress(&self.store, &[*img]))
                        .collect::<Result<_>>()?;
                    let feats: Vec<Vec<f64>> = cs.iter().map(|c| c.feature.clone()).collect();
                    StoredCorrection {
                        deltas: cs.into_iter().map(|c| c.delta_psi).collect(),
                        feature: mean_rows(&feats),
                    }
                }
                _ => {
                    let c = net.regress(&self.store, &images)?;
                    StoredCorrection {
                        deltas: vec![c.delta_psi],
                        feature: c.feature,
                    }
                }
            };
            self.corrections.insert(t, stored);
        }
        Ok(())
    }

    /// Expression correction used at inference for `(t, view)`. Banked
    /// timestamps use the bank mean for every view.
    pub fn correction_for(&self, t: u32, view: Option<usize>) -> Option<Vec<f64>> {
        self.correction.as_ref()?;
        if let Some(bank) = &self.bank {
            if bank.entries.contains_key(&t) {
                return Some(bank.mean(t));
            }
        }
        let sc = self.corrections.get(&t)?;
        if sc.deltas.len() == 1 {
            return Some(sc.deltas[0].clone());
        }
        let slot = view.and_then(|v| self.train_views().iter().position(|&w| w == v));
        Some(match slot {
            Some(s) if s < sc.deltas.len() => sc.deltas[s].clone(),
            _ => mean_rows(&sc.deltas),
        })
    }

    /// Image feature for the texture branch: the stored one for `t`, or
    /// the mean over stored timestamps when `t` has none.
    fn feature_for(&self, t: Option<u32>) -> Option<Vec<f64>> {
        self.texture.as_ref()?;
        if let Some(sc) = t.and_then(|t| self.corrections.get(&t)) {
            return Some(sc.feature.clone());
        }
        let feats: Vec<Vec<f64>> = self
            .corrections
            .values()
            .map(|c| c.feature.clone())
            .collect();
        if feats.is_empty() {
            Some(vec![0.0; FEATURE_DIM])
        } else {
            Some(mean_rows(&feats))
        }
    }

    /// Head parameters used to render view `view` of timestamp `t`.
    pub fn params_for(&self, t: u32, view: Option<usize>) -> Result<HeadParams> {
        self.check_t(t)?;
        let mut p = self.params[t as usize].clone();
        if let Some(delta) = self.correction_for(t, view) {
            p.expression = add_nonzero(&p.expression, &delta);
        }
        Ok(p)
    }

    pub fn mesh_for(&self, t: u32, view: Option<usize>) -> Result<Mesh> {
        self.model.evaluate(&self.params_for(t, view)?)
    }

    /// Renders timestamp `t` through `view`'s camera.
    pub fn render_view(&self, t: u32, view: usize) -> Result<Image> {
        let cam = self.cameras.get(view).ok_or_else(|| {
            Error::invalid("view", format!("{view} outside 0..{}", self.cameras.len()))
        })?;
        self.render_with(t, Some(view), cam)
    }

    /// Renders timestamp `t` through an arbitrary camera.
    pub fn render_novel_view(&self, t: u32, cam: &Camera) -> Result<Image> {
        self.render_with(t, None, cam)
    }

    fn render_with(&self, t: u32, view: Option<usize>, cam: &Camera) -> Result<Image> {
        cam.validate()?;
        let params = self.params_for(t, view)?;
        let feature = self.feature_for(Some(t));
        let posed = self.pose(params, feature.as_deref())?;
        Ok(render(&posed.world, cam, self.config.background)?.image)
    }

    /// Drives the avatar with external parameters. Shape always stays the
    /// avatar's own. With `images` (one list per frame) the correction is
    /// regressed from them; without, no correction is applied.
    pub fn reenact(
        &self,
        driving: &[HeadParams],
        cams: &[Camera],
        images: Option<&[Vec<Image>]>,
    ) -> Result<Vec<Vec<Image>>> {
        for c in cams {
            c.validate()?;
        }
        if let Some(imgs) = images {
            ensure_len("driving images", driving.len(), imgs.len())?;
        }
        let shape = &self.params[0].shape;
        let mut out = Vec::with_capacity(driving.len());
        for (f, d) in driving.iter().enumerate() {
            let mut p = d.clone();
            ensure_len("driving shape", shape.len(), p.shape.len())?;
            p.shape.clone_from(shape);
            p.check(&self.model)?;
            let regressed = match (&self.correction, images) {
                (Some(net), Some(imgs)) if !imgs[f].is_empty() => {
                    Some(self.regress_images(net, &imgs[f])?)
                }
                _ => None,
            };
            let feature = match &regressed {
                Some((_, feat)) if self.texture.is_some() => Some(feat.clone()),
                _ => self.feature_for(None),
            };
            if let Some((delta, _)) = &regressed {
                p.expression = add_nonzero(&p.expression, delta);
            }
            let posed = self.pose(p, feature.as_deref())?;
            let row = cams
                .iter()
                .map(|c| render(&posed.world, c, self.config.background).map(|o| o.image))
                .collect::<Result<_>>()?;
            out.push(row);
        }
        Ok(out)
    }

    fn regress_images(&self, net: &CorrectionNet, imgs: &[Image]) -> Result<(Vec<f64>, Vec<f64>)> {
        if self.config.switches.correction == CorrectionMode::SingleView {
            let cs: Vec<Correction> = imgs
                .iter()
                .map(|i| net.regress(&self.store, &[i]))
                .collect::<Result<_>>()?;
            let deltas: Vec<Vec<f64>> = cs.iter().map(|c| c.delta_psi.clone()).collect();
            let feats: Vec<Vec<f64>> = cs.iter().map(|c| c.feature.clone()).collect();
            Ok((mean_rows(&deltas), mean_rows(&feats)))
        } else {
            let refs: Vec<&Image> = imgs.iter().collect();
            let c = net.regress(&self.store, &refs)?;
            Ok((c.delta_psi, c.feature))
        }
    }
}

struct AvatarParts {
    config: TrainConfig,
    model: HeadModel,
    cameras: Vec<Camera>,
    split: Split,
    params: Vec<HeadParams>,
    cloud: BoundGaussianCloud,
    bank: Option<ExpressionBank>,
    store: ParamStore,
    correction: Option<CorrectionNet>,
    texture: Option<TextureNet>,
    optimizer: Adam,
    corrections: BTreeMap<u32, StoredCorrection>,
    iteration: usize,
}

/// DC coefficients from the mean vertex color of each host triangle.
fn seed_colors(cloud: &mut BoundGaussianCloud, model: &HeadModel) {
    let per = cloud.sh_coeffs.len() / cloud.len().max(1);
    for i in 0..cloud.len() {
        let face = model.faces[cloud.triangle_id[i] as usize];
        for c in 0..3 {
            let mean = face
                .iter()
                .map(|&v| model.vertex_colors[v as usize][c])
                .sum::<f64>()
                / 3.0;
            cloud.sh_coeffs[i * per + c] = (mean - 0.5) / SH_C0;
        }
    }
}

/// Trains a fresh avatar on `data`.
pub fn train(data: &Dataset, config: TrainConfig) -> Result<(Avatar, TrainLog)> {
    let mut avatar = Avatar::new(data, config)?;
    let log = avatar.train(data)?;
    Ok((avatar, log))
}

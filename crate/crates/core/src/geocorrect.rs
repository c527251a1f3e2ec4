//! Per-timestamp expression correction regressed from multi-view images, and
//! the momentum bank that keeps the applied correction shared across views.

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{
    AttentionCache, ConvEncoder, CrossAttention, EncoderCache, Mlp, MlpCache, ParamStore,
};

pub const MOMENTUM_START: f64 = 0.9;
pub const MOMENTUM_END: f64 = 0.1;
pub const FEATURE_DIM: usize = 64;
pub const KEY_DIM: usize = 32;
pub const HIDDEN: usize = 128;

/// Linear decay from [`MOMENTUM_START`] to [`MOMENTUM_END`].
pub fn momentum_schedule(iteration: usize, total: usize) -> f64 {
    if total == 0 {
        return MOMENTUM_START;
    }
    let f = iteration.min(total) as f64 / total as f64;
    MOMENTUM_START + (MOMENTUM_END - MOMENTUM_START) * f
}

/// One EMA slot per view and timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpressionBank {
    pub view_count: usize,
    pub n_expr: usize,
    pub momentum: f64,
    /// Timestamp -> `view_count x n_expr` row-major slots.
    pub entries: BTreeMap<u32, Vec<f64>>,
}

impl ExpressionBank {
    pub fn new(view_count: usize, n_expr: usize, momentum: f64) -> Result<Self> {
        if view_count == 0 {
            return Err(Error::invalid("view_count", "bank needs at least one view"));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::invalid(
                "momentum",
                format!("{momentum} is outside [0, 1)"),
            ));
        }
        Ok(Self {
            view_count,
            n_expr,
            momentum,
            entries: BTreeMap::new(),
        })
    }

    pub fn set_momentum(&mut self, m: f64) -> Result<()> {
        if !(0.0..1.0).contains(&m) {
            return Err(Error::invalid("momentum", format!("{m} is outside [0, 1)")));
        }
        self.momentum = m;
        Ok(())
    }

    /// slot[t, view] <- m * slot + (1 - m) * delta. Only that slot changes.
    pub fn update(&mut self, t: u32, view: usize, delta: &[f64]) -> Result<()> {
        if view >= self.view_count {
            return Err(Error::invalid(
                "view",
                format!("{view} out of range for {} views", self.view_count),
            ));
        }
        if delta.len() != self.n_expr {
            return Err(Error::dim(
                "expression correction",
                self.n_expr,
                delta.len(),
            ));
        }
        let m = self.momentum;
        let entry = self
            .entries
            .entry(t)
            .or_insert_with(|| vec![0.0; self.view_count * self.n_expr]);
        for (s, d) in entry[view * self.n_expr..(view + 1) * self.n_expr]
            .iter_mut()
            .zip(delta)
        {
            *s = m * *s + (1.0 - m) * d;
        }
        Ok(())
    }

    pub fn slot(&self, t: u32, view: usize) -> Option<&[f64]> {
        let e = self.entries.get(&t)?;
        e.get(view * self.n_expr..(view + 1) * self.n_expr)
    }

    /// Mean over view slots; zeros for a missing timestamp.
    pub fn mean(&self, t: u32) -> Vec<f64> {
        let mut out = vec![0.0; self.n_expr];
        if let Some(e) = self.entries.get(&t) {
            for row in e.chunks(self.n_expr) {
                for (o, v) in out.iter_mut().zip(row) {
                    *o += v;
                }
            }
            out.iter_mut().for_each(|o| *o /= self.view_count as f64);
        }
        out
    }

    /// psi_init plus the banked mean correction for `t`.
    pub fn apply(&self, t: u32, psi_init: &[f64]) -> Vec<f64> {
        if !self.entries.contains_key(&t) {
            return psi_init.to_vec();
        }
        psi_init
            .iter()
            .zip(self.mean(t))
            .map(|(p, c)| p + c)
            .collect()
    }

    /// Per-component variance across view slots, averaged over components.
    pub fn inter_view_variance(&self, t: u32) -> f64 {
        let Some(e) = self.entries.get(&t) else {
            return 0.0;
        };
        let mean = self.mean(t);
        let n = self.view_count as f64;
        let mut acc = 0.0;
        for row in e.chunks(self.n_expr) {
            for (v, m) in row.iter().zip(&mean) {
                acc += (v - m) * (v - m);
            }
        }
        acc / (n * self.n_expr.max(1) as f64)
    }
}

/// Encoder, cross-attention and correction MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionNet {
    pub encoder: ConvEncoder,
    pub attention: CrossAttention,
    pub mlp: Mlp,
}

#[derive(Debug, Clone)]
pub struct CorrectionCache {
    encoders: Vec<EncoderCache>,
    /// Attention row k holds view `order[k]`.
    order: Vec<usize>,
    attention: AttentionCache,
    mlp: MlpCache,
}

#[derive(Debug, Clone)]
pub struct Correction {
    pub delta_psi: Vec<f64>,
    /// Fused expression-aware feature.
    pub feature: Vec<f64>,
    pub cache: CorrectionCache,
}

impl CorrectionNet {
    pub fn new(
        store: &mut ParamStore,
        width: usize,
        height: usize,
        n_expr: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(Self {
            encoder: ConvEncoder::new(
                store,
                "correction.encoder",
                width,
                height,
                FEATURE_DIM,
                rng,
            )?,
            attention: CrossAttention::new(
                store,
                "correction.attention",
                FEATURE_DIM,
                KEY_DIM,
                rng,
            )?,
            mlp: Mlp::new(
                store,
                "correction.mlp",
                &[FEATURE_DIM, HIDDEN, HIDDEN, n_expr],
                true,
                rng,
            )?,
        })
    }

    pub fn n_expr(&self) -> usize {
        self.mlp.d_out()
    }

    /// Regresses one correction from all given views of a timestamp. View
    /// features are put in a canonical order first, so the result does not
    /// depend on the order of `images`.
    pub fn regress(&self, store: &ParamStore, images: &[&Image]) -> Result<Correction> {
        if images.is_empty() {
            return Err(Error::invalid(
                "views",
                "correction needs at least one image",
            ));
        }
        let mut feats = Vec::with_capacity(images.len());
        let mut encoders = Vec::with_capacity(images.len());
        for img in images {
            let (f, c) = self.encoder.forward(store, img)?;
            feats.push(f);
            encoders.push(c);
        }
        let mut order: Vec<usize> = (0..images.len()).collect();
        order.sort_by(|&a, &b| {
            feats[a]
                .iter()
                .zip(&feats[b])
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let stacked: Vec<f64> = order
            .iter()
            .flat_map(|&i| feats[i].iter().copied())
            .collect();
        let (feature, attention) = self.attention.forward(store, &stacked, images.len())?;
        let (delta_psi, mlp) = self.mlp.forward(store, &feature, 1)?;
        Ok(Correction {
            delta_psi,
            feature,
            cache: CorrectionCache {
                encoders,
                order,
                attention,
                mlp,
            },
        })
    }

    /// Accumulates parameter gradients from dL/d(delta_psi) and dL/d(feature).
    pub fn backward(
        &self,
        store: &mut ParamStore,
        cache: &CorrectionCache,
        d_delta_psi: &[f64],
        d_feature: &[f64],
    ) {
        let mut d_fused = self.mlp.backward(store, &cache.mlp, d_delta_psi);
        for (a, b) in d_fused.iter_mut().zip(d_feature) {
            *a += b;
        }
        let d_stacked = self.attention.backward(store, &cache.attention, &d_fused);
        let d = self.encoder.d_feat();
        for (k, &view) in cache.order.iter().enumerate() {
            self.encoder
                .backward(store, &cache.encoders[view], &d_stacked[k * d..(k + 1) * d]);
        }
    }
}

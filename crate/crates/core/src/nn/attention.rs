use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Linear, ParamStore};
use crate::error::{Error, Result};

/// Scaled dot-product attention of one query over `n` key/value rows.
/// Returns the output and the softmax weights.
pub fn softmax_attention(
    query: &[f64],
    keys: &[f64],
    values: &[f64],
    n: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 {
        return Err(Error::invalid("attention", "at least one key is required"));
    }
    let d = query.len();
    if keys.len() != n * d {
        return Err(Error::dim("attention keys", n * d, keys.len()));
    }
    if values.len() % n != 0 {
        return Err(Error::invalid(
            "attention values",
            format!("{} values do not split into {n} rows", values.len()),
        ));
    }
    let dv = values.len() / n;
    let scale = 1.0 / (d as f64).sqrt();
    let scores: Vec<f64> = keys
        .chunks(d)
        .map(|k| scale * k.iter().zip(query).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let weights: Vec<f64> = exps.iter().map(|e| e / z).collect();
    let mut out = vec![0.0; dv];
    for (w, v) in weights.iter().zip(values.chunks(dv)) {
        for (o, x) in out.iter_mut().zip(v) {
            *o += w * x;
        }
    }
    Ok((out, weights))
}

/// Backward of [`softmax_attention`]: returns (dquery, dkeys, dvalues).
pub fn softmax_attention_backward(
    query: &[f64],
    keys: &[f64],
    values: &[f64],
    weights: &[f64],
    d_out: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = weights.len();
    let d = query.len();
    let dv = d_out.len();
    let scale = 1.0 / (d as f64).sqrt();
    let dw: Vec<f64> = values
        .chunks(dv)
        .map(|v| v.iter().zip(d_out).map(|(a, b)| a * b).sum())
        .collect();
    let mean: f64 = weights.iter().zip(&dw).map(|(w, g)| w * g).sum();
    let mut dq = vec![0.0; d];
    let mut dk = vec![0.0; n * d];
    let mut dvals = vec![0.0; n * dv];
    for i in 0..n {
        let ds = weights[i] * (dw[i] - mean) * scale;
        for c in 0..d {
            dq[c] += ds * keys[i * d + c];
            dk[i * d + c] = ds * query[c];
        }
        for c in 0..dv {
            dvals[i * dv + c] = weights[i] * d_out[c];
        }
    }
    (dq, dk, dvals)
}

/// Single-head cross-attention with a learned query over per-view features.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossAttention {
    pub query: String,
    pub key: Linear,
    pub value: Linear,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    n: usize,
    feats: Vec<f64>,
    keys: Vec<f64>,
    values: Vec<f64>,
    weights: Vec<f64>,
}

impl CrossAttention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_feat: usize,
        d_key: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let query = format!("{name}.query");
        let bound = (3.0 / d_key as f64).sqrt();
        store.insert(
            &query,
            &[d_key],
            (0..d_key)
                .map(|_| rng.random_range(-bound..bound))
                .collect(),
        )?;
        Ok(Self {
            query,
            key: Linear::new(store, &format!("{name}.key"), d_feat, d_key, false, rng)?,
            value: Linear::new(store, &format!("{name}.value"), d_feat, d_feat, false, rng)?,
        })
    }

    /// Fuses `n` feature rows (`n x d_feat`) into one vector.
    pub fn forward(
        &self,
        store: &ParamStore,
        feats: &[f64],
        n: usize,
    ) -> Result<(Vec<f64>, AttentionCache)> {
        if n == 0 {
            return Err(Error::invalid("attention", "at least one view is required"));
        }
        if feats.len() != n * self.key.d_in {
            return Err(Error::dim(
                "attention features",
                n * self.key.d_in,
                feats.len(),
            ));
        }
        let keys = self.key.forward(store, feats, n);
        let values = self.value.forward(store, feats, n);
        let (out, weights) = softmax_attention(&store.p(&self.query).value, &keys, &values, n)?;
        Ok((
            out,
            AttentionCache {
                n,
                feats: feats.to_vec(),
                keys,
                values,
                weights,
            },
        ))
    }

    /// Accumulates parameter gradients and returns dL/dfeats.
    pub fn backward(
        &self,
        store: &mut ParamStore,
        cache: &AttentionCache,
        d_out: &[f64],
    ) -> Vec<f64> {
        let q = store.p(&self.query).value.clone();
        let (dq, dk, dv) =
            softmax_attention_backward(&q, &cache.keys, &cache.values, &cache.weights, d_out);
        for (g, d) in store.p_mut(&self.query).grad.iter_mut().zip(&dq) {
            *g += d;
        }
        let mut df = self.key.backward(store, &cache.feats, cache.n, &dk);
        for (a, b) in df
            .iter_mut()
            .zip(self.value.backward(store, &cache.feats, cache.n, &dv))
        {
            *a += b;
        }
        df
    }
}

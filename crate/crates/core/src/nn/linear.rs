use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{gemm, leaky, leaky_grad, ParamStore};
use crate::error::{Error, Result};

/// Dense layer `y = W x + b` with `W` stored row-major as `d_out x d_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: String,
    pub bias: String,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    /// Registers the layer. Weights are Kaiming-uniform unless `zero` is set;
    /// biases start at zero.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        zero: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let bound = (6.0 / d_in.max(1) as f64).sqrt();
        let w = if zero {
            vec![0.0; d_in * d_out]
        } else {
            (0..d_in * d_out)
                .map(|_| rng.random_range(-bound..bound))
                .collect()
        };
        let layer = Self {
            weight: format!("{name}.weight"),
            bias: format!("{name}.bias"),
            d_in,
            d_out,
        };
        store.insert(&layer.weight, &[d_out, d_in], w)?;
        store.insert(&layer.bias, &[d_out], vec![0.0; d_out])?;
        Ok(layer)
    }

    /// Row-batched forward: `x` is `n x d_in`, the result `n x d_out`.
    pub fn forward(&self, store: &ParamStore, x: &[f64], n: usize) -> Vec<f64> {
        debug_assert_eq!(x.len(), n * self.d_in);
        let w = &store.p(&self.weight).value;
        let b = &store.p(&self.bias).value;
        let mut y: Vec<f64> = b.iter().copied().cycle().take(n * self.d_out).collect();
        gemm(
            n,
            self.d_in,
            self.d_out,
            x,
            (self.d_in, 1),
            w,
            (1, self.d_in),
            1.0,
            &mut y,
        );
        y
    }

    /// Accumulates parameter gradients and returns dL/dx.
    pub fn backward(&self, store: &mut ParamStore, x: &[f64], n: usize, dy: &[f64]) -> Vec<f64> {
        let (di, d_o) = (self.d_in, self.d_out);
        {
            let pw = store.p_mut(&self.weight);
            gemm(d_o, n, di, dy, (1, d_o), x, (di, 1), 1.0, &mut pw.grad);
        }
        {
            let pb = store.p_mut(&self.bias);
            for row in dy.chunks(d_o) {
                for (g, d) in pb.grad.iter_mut().zip(row) {
                    *g += d;
                }
            }
        }
        let w = &store.p(&self.weight).value;
        let mut dx = vec![0.0; n * di];
        gemm(n, d_o, di, dy, (d_o, 1), w, (di, 1), 0.0, &mut dx);
        dx
    }
}

/// Multi-layer perceptron with leaky-ReLU hidden layers and a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

#[derive(Debug, Clone, Default)]
pub struct MlpCache {
    n: usize,
    /// Input of each layer (post-activation of the previous one).
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Vec<f64>>,
}

impl Mlp {
    /// `dims` lists every width from input to output. The final layer is
    /// zero-initialized when `zero_final` is set.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dims: &[usize],
        zero_final: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::invalid(
                "mlp dims",
                "need at least input and output widths",
            ));
        }
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                Linear::new(
                    store,
                    &format!("{name}.{i}"),
                    w[0],
                    w[1],
                    zero_final && i == last,
                    rng,
                )
            })
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn d_in(&self) -> usize {
        self.layers[0].d_in
    }

    pub fn d_out(&self) -> usize {
        self.layers[self.layers.len() - 1].d_out
    }

    pub fn forward(&self, store: &ParamStore, x: &[f64], n: usize) -> Result<(Vec<f64>, MlpCache)> {
        if x.len() != n * self.d_in() {
            return Err(Error::dim("mlp input", n * self.d_in(), x.len()));
        }
        let mut cache = MlpCache {
            n,
            ..Default::default()
        };
        let mut h = x.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(store, &h, n);
            cache.inputs.push(h);
            if i == last {
                return Ok((z, cache));
            }
            h = z.iter().map(|&v| leaky(v)).collect();
            cache.pre.push(z);
        }
        unreachable!("an Mlp always has at least one layer")
    }

    pub fn backward(&self, store: &mut ParamStore, cache: &MlpCache, dy: &[f64]) -> Vec<f64> {
        let mut d = dy.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if i < self.layers.len() - 1 {
                for (g, &z) in d.iter_mut().zip(&cache.pre[i]) {
                    *g *= leaky_grad(z);
                }
            }
            d = layer.backward(store, &cache.inputs[i], cache.n, &d);
        }
        d
    }
}

use rand_chacha::ChaCha8Rng;

use super::{leaky, leaky_grad, Linear, ParamStore};
use crate::error::{Error, Result};
use crate::image::Image;

/// Channel widths of the strided convolution stack, input first.
pub const ENCODER_CHANNELS: [usize; 5] = [3, 8, 16, 32, 64];

/// Stride-2 3x3 convolutions (padding 1, leaky ReLU), global average pooling
/// and a final dense layer to the feature width.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvEncoder {
    pub width: usize,
    pub height: usize,
    /// Each convolution is a dense layer over 3x3xC_in patches.
    convs: Vec<Linear>,
    head: Linear,
}

#[derive(Debug, Clone)]
struct ConvLayerCache {
    in_w: usize,
    in_h: usize,
    out_w: usize,
    out_h: usize,
    cols: Vec<f64>,
    pre: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct EncoderCache {
    layers: Vec<ConvLayerCache>,
    pooled: Vec<f64>,
    positions: usize,
}

fn out_dim(n: usize) -> usize {
    n.div_ceil(2)
}

fn im2col(x: &[f64], w: usize, h: usize, c: usize) -> (Vec<f64>, usize, usize) {
    let (ow, oh) = (out_dim(w), out_dim(h));
    let k = 9 * c;
    let mut cols = vec![0.0; ow * oh * k];
    for oy in 0..oh {
        for ox in 0..ow {
            let row = &mut cols[(oy * ow + ox) * k..(oy * ow + ox + 1) * k];
            for ky in 0..3 {
                let iy = (2 * oy + ky) as isize - 1;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..3 {
                    let ix = (2 * ox + kx) as isize - 1;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let src = (iy as usize * w + ix as usize) * c;
                    row[(ky * 3 + kx) * c..(ky * 3 + kx + 1) * c].copy_from_slice(&x[src..src + c]);
                }
            }
        }
    }
    (cols, ow, oh)
}

fn col2im(dcols: &[f64], w: usize, h: usize, c: usize) -> Vec<f64> {
    let (ow, oh) = (out_dim(w), out_dim(h));
    let k = 9 * c;
    let mut dx = vec![0.0; w * h * c];
    for oy in 0..oh {
        for ox in 0..ow {
            let row = &dcols[(oy * ow + ox) * k..(oy * ow + ox + 1) * k];
            for ky in 0..3 {
                let iy = (2 * oy + ky) as isize - 1;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..3 {
                    let ix = (2 * ox + kx) as isize - 1;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let dst = (iy as usize * w + ix as usize) * c;
                    for ch in 0..c {
                        dx[dst + ch] += row[(ky * 3 + kx) * c + ch];
                    }
                }
            }
        }
    }
    dx
}

impl ConvEncoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        height: usize,
        d_feat: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(
                "encoder input",
                "image size must be positive",
            ));
        }
        let convs = ENCODER_CHANNELS
            .windows(2)
            .enumerate()
            .map(|(i, c)| {
                Linear::new(
                    store,
                    &format!("{name}.conv{i}"),
                    9 * c[0],
                    c[1],
                    false,
                    rng,
                )
            })
            .collect::<Result<_>>()?;
        let head = Linear::new(
            store,
            &format!("{name}.head"),
            ENCODER_CHANNELS[4],
            d_feat,
            false,
            rng,
        )?;
        Ok(Self {
            width,
            height,
            convs,
            head,
        })
    }

    pub fn d_feat(&self) -> usize {
        self.head.d_out
    }

    pub fn forward(&self, store: &ParamStore, image: &Image) -> Result<(Vec<f64>, EncoderCache)> {
        if image.width != self.width || image.height != self.height {
            return Err(Error::invalid(
                "encoder input",
                format!(
                    "expected {}x{}, got {}x{}",
                    self.width, self.height, image.width, image.height
                ),
            ));
        }
        let (mut w, mut h) = (self.width, self.height);
        let mut x = image.data.clone();
        let mut layers = Vec::with_capacity(self.convs.len());
        for (i, conv) in self.convs.iter().enumerate() {
            let (cols, ow, oh) = im2col(&x, w, h, ENCODER_CHANNELS[i]);
            let pre = conv.forward(store, &cols, ow * oh);
            x = pre.iter().map(|&v| leaky(v)).collect();
            layers.push(ConvLayerCache {
                in_w: w,
                in_h: h,
                out_w: ow,
                out_h: oh,
                cols,
                pre,
            });
            (w, h) = (ow, oh);
        }
        let c = ENCODER_CHANNELS[4];
        let positions = w * h;
        let mut pooled = vec![0.0; c];
        for px in x.chunks(c) {
            for (p, v) in pooled.iter_mut().zip(px) {
                *p += v;
            }
        }
        pooled.iter_mut().for_each(|p| *p /= positions as f64);
        let feat = self.head.forward(store, &pooled, 1);
        Ok((
            feat,
            EncoderCache {
                layers,
                pooled,
                positions,
            },
        ))
    }

    /// Accumulates parameter gradients and returns dL/dimage (HWC).
    pub fn backward(
        &self,
        store: &mut ParamStore,
        cache: &EncoderCache,
        d_feat: &[f64],
    ) -> Vec<f64> {
        let d_pooled = self.head.backward(store, &cache.pooled, 1, d_feat);
        let c = ENCODER_CHANNELS[4];
        let inv = 1.0 / cache.positions as f64;
        let mut d: Vec<f64> = (0..cache.positions * c)
            .map(|k| d_pooled[k % c] * inv)
            .collect();
        for (i, conv) in self.convs.iter().enumerate().rev() {
            let l = &cache.layers[i];
            for (g, &z) in d.iter_mut().zip(&l.pre) {
                *g *= leaky_grad(z);
            }
            let dcols = conv.backward(store, &l.cols, l.out_w * l.out_h, &d);
            d = col2im(&dcols, l.in_w, l.in_h, ENCODER_CHANNELS[i]);
        }
        d
    }
}

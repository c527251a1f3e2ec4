use nalgebra::Matrix2;
use rayon::prelude::*;

use super::{sym2, RenderOutput, Splat2D, MAX_ALPHA, MIN_TRANSMITTANCE, POWER_CUTOFF, TILE_SIZE};
use crate::image::Image;

/// Gradient on one splat. `cov2d` is the full symmetric-matrix gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct SplatGrad {
    pub mean2d: [f64; 2],
    pub cov2d: Matrix2<f64>,
    pub rgb: [f64; 3],
    pub alpha: f64,
}

impl Default for SplatGrad {
    fn default() -> Self {
        Self {
            mean2d: [0.0; 2],
            cov2d: Matrix2::zeros(),
            rgb: [0.0; 3],
            alpha: 0.0,
        }
    }
}

impl SplatGrad {
    fn add(&mut self, o: &SplatGrad) {
        self.mean2d[0] += o.mean2d[0];
        self.mean2d[1] += o.mean2d[1];
        self.cov2d += o.cov2d;
        for c in 0..3 {
            self.rgb[c] += o.rgb[c];
        }
        self.alpha += o.alpha;
    }
}

/// Everything the backward pass needs from the forward pass.
#[derive(Debug, Clone)]
pub struct CompositeState {
    width: usize,
    height: usize,
    background: [f64; 3],
    /// Per tile, indices into the splat slice in compositing order.
    tiles: Vec<Vec<u32>>,
}

/// Depth order with a stable tie-break on the source index.
fn depth_order(splats: &[Splat2D]) -> Vec<u32> {
    let mut order: Vec<u32> = (0..splats.len() as u32).collect();
    order.sort_by(|&a, &b| {
        let (sa, sb) = (&splats[a as usize], &splats[b as usize]);
        sa.depth
            .total_cmp(&sb.depth)
            .then(sa.source.cmp(&sb.source))
    });
    order
}

#[derive(Clone, Copy)]
struct Layer {
    /// Position in the compositing list.
    slot: usize,
    idx: u32,
    g: f64,
    alpha: f64,
    t_before: f64,
    clamped: bool,
}

/// Front-to-back compositing of one pixel over `list`. Calls `visit` for
/// every layer that contributed; returns (color, final transmittance).
fn composite_pixel(
    splats: &[Splat2D],
    list: &[u32],
    x: usize,
    y: usize,
    background: &[f64; 3],
    mut visit: impl FnMut(Layer),
) -> ([f64; 3], f64) {
    let px = x as f64 + 0.5;
    let py = y as f64 + 0.5;
    let mut t = 1.0;
    let mut color = [0.0; 3];
    for (slot, &idx) in list.iter().enumerate() {
        let s = &splats[idx as usize];
        let dx = px - s.mean2d[0];
        let dy = py - s.mean2d[1];
        let power =
            -0.5 * (s.conic[0] * dx * dx + 2.0 * s.conic[1] * dx * dy + s.conic[2] * dy * dy);
        if power < POWER_CUTOFF {
            continue;
        }
        let g = power.exp();
        let raw = s.alpha * g;
        let clamped = raw > MAX_ALPHA;
        let a = if clamped { MAX_ALPHA } else { raw };
        for c in 0..3 {
            color[c] += s.rgb[c] * a * t;
        }
        visit(Layer {
            slot,
            idx,
            g,
            alpha: a,
            t_before: t,
            clamped,
        });
        t *= 1.0 - a;
        if t < MIN_TRANSMITTANCE {
            break;
        }
    }
    for c in 0..3 {
        color[c] += t * background[c];
    }
    (color, t)
}

fn tile_grid(width: usize, height: usize) -> (usize, usize) {
    (width.div_ceil(TILE_SIZE), height.div_ceil(TILE_SIZE))
}

fn bin_tiles(splats: &[Splat2D], width: usize, height: usize) -> Vec<Vec<u32>> {
    let (tx, ty) = tile_grid(width, height);
    let mut tiles = vec![Vec::new(); tx * ty];
    for idx in depth_order(splats) {
        let s = &splats[idx as usize];
        let r = s.support_radius;
        let x0 = ((s.mean2d[0] - r).floor().max(0.0) as usize) / TILE_SIZE;
        let y0 = ((s.mean2d[1] - r).floor().max(0.0) as usize) / TILE_SIZE;
        let x1 = (s.mean2d[0] + r).ceil().min(width as f64 - 1.0);
        let y1 = (s.mean2d[1] + r).ceil().min(height as f64 - 1.0);
        if x1 < 0.0 || y1 < 0.0 {
            continue;
        }
        let (x1, y1) = (x1 as usize / TILE_SIZE, y1 as usize / TILE_SIZE);
        for tyi in y0..=y1.min(ty - 1) {
            for txi in x0..=x1.min(tx - 1) {
                tiles[tyi * tx + txi].push(idx);
            }
        }
    }
    tiles
}

/// Tiled forward pass. `n_sources` sizes the per-Gaussian contribution table.
pub fn rasterize(
    splats: &[Splat2D],
    width: usize,
    height: usize,
    background: [f64; 3],
    n_sources: usize,
) -> (RenderOutput, CompositeState) {
    let tiles = bin_tiles(splats, width, height);
    let (tx, _) = tile_grid(width, height);
    let per_tile: Vec<(Vec<(usize, [f64; 3], f64)>, Vec<(usize, f64)>)> = tiles
        .par_iter()
        .enumerate()
        .map(|(ti, list)| {
            let (ox, oy) = ((ti % tx) * TILE_SIZE, (ti / tx) * TILE_SIZE);
            let mut pixels = Vec::new();
            let mut best = vec![0.0f64; list.len()];
            for y in oy..(oy + TILE_SIZE).min(height) {
                for x in ox..(ox + TILE_SIZE).min(width) {
                    let (c, t) = composite_pixel(splats, list, x, y, &background, |l| {
                        best[l.slot] = best[l.slot].max(l.alpha * l.t_before);
                    });
                    pixels.push((y * width + x, c, t));
                }
            }
            let contrib = list
                .iter()
                .zip(best)
                .map(|(&i, w)| (splats[i as usize].source, w))
                .collect();
            (pixels, contrib)
        })
        .collect();

    let mut image = Image::new(width, height);
    let mut alpha_map = vec![0.0; width * height];
    let mut max_contribution = vec![0.0; n_sources];
    for (pixels, contrib) in per_tile {
        for (p, c, t) in pixels {
            image.data[3 * p..3 * p + 3].copy_from_slice(&c);
            alpha_map[p] = 1.0 - t;
        }
        for (src, w) in contrib {
            if w > max_contribution[src] {
                max_contribution[src] = w;
            }
        }
    }
    (
        RenderOutput {
            image,
            alpha_map,
            max_contribution,
        },
        CompositeState {
            width,
            height,
            background,
            tiles,
        },
    )
}

/// Reference path: every pixel walks the full depth-sorted splat list.
pub fn rasterize_brute(
    splats: &[Splat2D],
    width: usize,
    height: usize,
    background: [f64; 3],
    n_sources: usize,
) -> RenderOutput {
    let order = depth_order(splats);
    let mut image = Image::new(width, height);
    let mut alpha_map = vec![0.0; width * height];
    let mut max_contribution = vec![0.0f64; n_sources];
    for y in 0..height {
        for x in 0..width {
            let (c, t) = composite_pixel(splats, &order, x, y, &background, |l| {
                let src = splats[l.idx as usize].source;
                max_contribution[src] = max_contribution[src].max(l.alpha * l.t_before);
            });
            image.set_pixel(x, y, c);
            alpha_map[y * width + x] = 1.0 - t;
        }
    }
    RenderOutput {
        image,
        alpha_map,
        max_contribution,
    }
}

/// Gradients of a loss w.r.t. every splat, given dL/dimage.
pub fn rasterize_backward(
    splats: &[Splat2D],
    state: &CompositeState,
    d_image: &Image,
) -> Vec<SplatGrad> {
    let (tx, _) = tile_grid(state.width, state.height);
    let width = state.width;
    let height = state.height;
    let bg = state.background;
    let per_tile: Vec<Vec<SplatGrad>> = state
        .tiles
        .par_iter()
        .enumerate()
        .map(|(ti, list)| {
            let (ox, oy) = ((ti % tx) * TILE_SIZE, (ti / tx) * TILE_SIZE);
            let mut local = vec![SplatGrad::default(); list.len()];
            let mut layers: Vec<Layer> = Vec::new();
            for y in oy..(oy + TILE_SIZE).min(height) {
                for x in ox..(ox + TILE_SIZE).min(width) {
                    let p = y * width + x;
                    let dc = [
                        d_image.data[3 * p],
                        d_image.data[3 * p + 1],
                        d_image.data[3 * p + 2],
                    ];
                    if dc == [0.0; 3] {
                        continue;
                    }
                    layers.clear();
                    let (_, t_final) = composite_pixel(splats, list, x, y, &bg, |l| layers.push(l));
                    // color accumulated behind the current layer, background included
                    let mut behind = [t_final * bg[0], t_final * bg[1], t_final * bg[2]];
                    for l in layers.iter().rev() {
                        let s = &splats[l.idx as usize];
                        let g = &mut local[l.slot];
                        let w = l.alpha * l.t_before;
                        let mut d_a = 0.0;
                        for c in 0..3 {
                            g.rgb[c] += w * dc[c];
                            d_a += dc[c] * (s.rgb[c] * l.t_before - behind[c] / (1.0 - l.alpha));
                        }
                        for c in 0..3 {
                            behind[c] += s.rgb[c] * w;
                        }
                        if l.clamped {
                            continue;
                        }
                        g.alpha += d_a * l.g;
                        let d_power = d_a * s.alpha * l.g;
                        let dx = x as f64 + 0.5 - s.mean2d[0];
                        let dy = y as f64 + 0.5 - s.mean2d[1];
                        g.mean2d[0] += d_power * (s.conic[0] * dx + s.conic[1] * dy);
                        g.mean2d[1] += d_power * (s.conic[1] * dx + s.conic[2] * dy);
                        // dL/dQ as a full symmetric matrix, then dQ -> dCov = -Q dQ Q
                        let gq = Matrix2::new(
                            -0.5 * dx * dx,
                            -0.5 * dx * dy,
                            -0.5 * dx * dy,
                            -0.5 * dy * dy,
                        ) * d_power;
                        let q = sym2(&s.conic);
                        g.cov2d -= q * gq * q;
                    }
                }
            }
            local
        })
        .collect();

    let mut grads = vec![SplatGrad::default(); splats.len()];
    for (list, local) in state.tiles.iter().zip(per_tile) {
        for (&idx, g) in list.iter().zip(local) {
            grads[idx as usize].add(&g);
        }
    }
    grads
}

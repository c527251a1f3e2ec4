//! Image quality metrics. The SSIM here is also what the photometric loss uses.

use crate::error::Result;
use crate::image::Image;

pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// 10 log10(1 / MSE), capped at [`PSNR_CAP`] (zero error reports the cap).
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    a.same_shape(b)?;
    let mse = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data.len().max(1) as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

fn window() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable zero-padded "same" Gaussian filter of one channel plane. The
/// kernel is symmetric, so this operator is its own adjoint.
fn blur(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let xx = x as isize + i as isize - r;
                if xx >= 0 && (xx as usize) < w {
                    acc += kv * src[y * w + xx as usize];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let yy = y as isize + i as isize - r;
                if yy >= 0 && (yy as usize) < h {
                    acc += kv * tmp[yy as usize * w + x];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn channel(img: &Image, c: usize) -> Vec<f64> {
    img.data.iter().skip(c).step_by(3).copied().collect()
}

/// Mean windowed SSIM over pixels and channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    Ok(ssim_impl(a, b, false)?.0)
}

/// SSIM and its gradient with respect to `a`.
pub fn ssim_with_grad(a: &Image, b: &Image) -> Result<(f64, Image)> {
    let (v, g) = ssim_impl(a, b, true)?;
    Ok((v, g.expect("gradient requested")))
}

fn ssim_impl(a: &Image, b: &Image, want_grad: bool) -> Result<(f64, Option<Image>)> {
    a.same_shape(b)?;
    let (w, h) = (a.width, a.height);
    let n = (w * h * 3) as f64;
    let k = window();
    let mut total = 0.0;
    let mut grad = want_grad.then(|| Image::new(w, h));
    for c in 0..3 {
        let x = channel(a, c);
        let y = channel(b, c);
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let (mx, my) = (blur(&x, w, h, &k), blur(&y, w, h, &k));
        let (ex2, ey2, exy) = (
            blur(&xx, w, h, &k),
            blur(&yy, w, h, &k),
            blur(&xy, w, h, &k),
        );
        let mut g_mx = vec![0.0; w * h];
        let mut g_ex2 = vec![0.0; w * h];
        let mut g_exy = vec![0.0; w * h];
        for p in 0..w * h {
            let a1 = 2.0 * mx[p] * my[p] + SSIM_C1;
            let a2 = 2.0 * (exy[p] - mx[p] * my[p]) + SSIM_C2;
            let b1 = mx[p] * mx[p] + my[p] * my[p] + SSIM_C1;
            let b2 = ex2[p] - mx[p] * mx[p] + ey2[p] - my[p] * my[p] + SSIM_C2;
            let s = a1 * a2 / (b1 * b2);
            total += s;
            if want_grad {
                g_mx[p] = ((2.0 * my[p] * a2 - 2.0 * my[p] * a1) / (b1 * b2)
                    - s * (2.0 * mx[p] / b1 - 2.0 * mx[p] / b2))
                    / n;
                g_ex2[p] = -s / b2 / n;
                g_exy[p] = 2.0 * a1 / (b1 * b2) / n;
            }
        }
        if let Some(g) = grad.as_mut() {
            let (bm, bx2, bxy) = (
                blur(&g_mx, w, h, &k),
                blur(&g_ex2, w, h, &k),
                blur(&g_exy, w, h, &k),
            );
            for p in 0..w * h {
                g.data[3 * p + c] = bm[p] + 2.0 * x[p] * bx2[p] + y[p] * bxy[p];
            }
        }
    }
    Ok((total / n, grad))
}

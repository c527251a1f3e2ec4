//! Small differentiable building blocks with hand-written backward passes:
//! dense layers, MLPs, a strided convolutional encoder and softmax attention.
//! Parameters live in a [`ParamStore`] keyed by name.

mod attention;
mod conv;
mod linear;
mod store;

pub use attention::{
    softmax_attention, softmax_attention_backward, AttentionCache, CrossAttention,
};
pub use conv::{ConvEncoder, EncoderCache, ENCODER_CHANNELS};
pub use linear::{Linear, Mlp, MlpCache};
pub use store::{Param, ParamStore};

/// Slope of the leaky ReLU used by every hidden layer.
pub const LEAKY_SLOPE: f64 = 0.01;

pub fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

pub fn leaky_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

/// C (m x n) = A (m x k) * B (k x n) + beta * C, with explicit strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (a_rs, a_cs): (usize, usize),
    b: &[f64],
    (b_rs, b_cs): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|x| *x *= beta);
        return;
    }
    debug_assert!(a.len() >= (m - 1) * a_rs + (k - 1) * a_cs + 1);
    debug_assert!(b.len() >= (k - 1) * b_rs + (n - 1) * b_cs + 1);
    debug_assert!(c.len() >= m * n);
    // SAFETY: the bounds asserted above cover every element the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_rs as isize,
            a_cs as isize,
            b.as_ptr(),
            b_rs as isize,
            b_cs as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

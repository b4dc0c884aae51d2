//! Composite layers built from the differentiable primitives. Because they
//! are compositions, their higher-order derivatives come for free.

use crate::{Real, Tensor};

/// Row-wise log-softmax of a `[rows, classes]` matrix.
///
/// The row maximum is subtracted as a constant, which leaves the value and
/// every derivative unchanged while keeping `exp` in range.
pub fn log_softmax<T: Real>(logits: &Tensor<T>) -> Tensor<T> {
    assert_eq!(logits.dims(), 2, "log_softmax expects [rows, classes]");
    let k = logits.dim(1);
    let row_max: Vec<T> = logits
        .data()
        .chunks(k)
        .map(|r| r.iter().copied().fold(T::neg_infinity(), T::max))
        .collect();
    let row_max = Tensor::from_vec(row_max, &[logits.dim(0)]).broadcast_axis(1, k);
    let shifted = logits.sub(&row_max);
    let lse = shifted.exp().sum_axis(1).ln().broadcast_axis(1, k);
    shifted.sub(&lse)
}

pub fn softmax<T: Real>(logits: &Tensor<T>) -> Tensor<T> {
    log_softmax(logits).exp()
}

/// `[C]` parameter broadcast over an NCHW tensor of the given shape.
pub fn broadcast_channels<T: Real>(v: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    assert_eq!(v.shape(), &[c], "channel vector {:?} vs {c} channels", v.shape());
    v.broadcast_axis(1, h * w)
        .broadcast_axis(0, b)
        .reshape(&[b, c, h, w])
}

pub fn add_channel_bias<T: Real>(x: &Tensor<T>, bias: &Tensor<T>) -> Tensor<T> {
    x.add(&broadcast_channels(bias, x.shape()))
}

/// Per-instance, per-channel normalisation with learnable affine
/// `gamma`, `beta` (both `[C]`).
pub fn instance_norm<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Tensor<T> {
    assert_eq!(x.dims(), 4, "instance_norm expects NCHW");
    let shape = x.shape().to_vec();
    let (b, c, hw) = (shape[0], shape[1], shape[2] * shape[3]);
    let rows = x.reshape(&[b * c, hw]);
    let mean = rows.mean_axis(1).broadcast_axis(1, hw);
    let centered = rows.sub(&mean);
    let var = centered.square().mean_axis(1);
    let inv_std = var.add_scalar(eps).powf(-0.5).broadcast_axis(1, hw);
    let normed = centered.mul(&inv_std).reshape(&shape);
    normed
        .mul(&broadcast_channels(gamma, &shape))
        .add(&broadcast_channels(beta, &shape))
}

/// `x W + b` for `x: [n, d]`, `W: [d, k]`, `b: [k]`.
pub fn linear<T: Real>(x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Tensor<T> {
    let n = x.dim(0);
    x.matmul(weight).add(&bias.broadcast_axis(0, n))
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.relu().add(&x.abs().neg().exp().add_scalar(1.0).ln())
}

/// Per-sample Euclidean norm of a batch, `[b, ...] -> [b]`, with `eps`
/// added under the root to keep the derivative finite at zero.
pub fn batch_l2_norm<T: Real>(x: &Tensor<T>, eps: f64) -> Tensor<T> {
    x.flatten_batch().square().sum_axis(1).add_scalar(eps).sqrt()
}

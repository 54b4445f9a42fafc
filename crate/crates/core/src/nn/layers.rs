//! Stateless forward kernels shared by the trace and by inference fast paths.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::param::ParamTensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
    Softmax,
    Softplus,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropoutMode {
    /// Stochastic masks, used while fitting.
    Train,
    /// Stochastic masks at inference time (Monte Carlo dropout).
    McInference,
    Off,
}

/// Numerically stable `ln(1 + e^z)`.
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Derivative of softplus expressed through its output `y = softplus(z)`.
pub(crate) fn softplus_grad_from_output(y: f64) -> f64 {
    -(-y).exp_m1()
}

pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

pub fn apply_activation(z: &mut [f64], activation: Activation) {
    match activation {
        Activation::Identity => {}
        Activation::Relu => z.iter_mut().for_each(|x| *x = x.max(0.0)),
        Activation::Softplus => z.iter_mut().for_each(|x| *x = softplus(*x)),
        Activation::Softmax => softmax_in_place(z),
    }
}

/// `activation(W · input + b)` for `W` of shape `[out, in]`.
pub fn dense_forward(
    input: &[f64],
    weights: &ParamTensor,
    bias: &ParamTensor,
    activation: Activation,
) -> Result<Vec<f64>> {
    let shape = weights.shape();
    if shape.len() != 2 {
        return Err(Error::config(format!(
            "{}: dense weights must be 2-D, got {shape:?}",
            weights.name()
        )));
    }
    let (out_dim, in_dim) = (shape[0], shape[1]);
    if input.len() != in_dim {
        return Err(Error::config(format!(
            "{}: input length {} != weight input dimension {in_dim}",
            weights.name(),
            input.len()
        )));
    }
    if bias.len() != out_dim {
        return Err(Error::config(format!(
            "{}: bias length {} != output dimension {out_dim}",
            bias.name(),
            bias.len()
        )));
    }
    let w = weights.values();
    let mut out = bias.values().to_vec();
    for (o, acc) in out.iter_mut().enumerate() {
        let row = &w[o * in_dim..(o + 1) * in_dim];
        *acc += dot(row, input);
    }
    apply_activation(&mut out, activation);
    Ok(out)
}

/// Dot product with four independent accumulators (lets the compiler
/// vectorize; the summation order is fixed, so results are reproducible).
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub(crate) fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::config(format!(
            "dropout rate {rate} must lie in [0, 1)"
        )));
    }
    Ok(())
}

/// Inverted-dropout mask: each entry is 0 with probability `rate`, else `1/(1-rate)`.
/// Returns `None` when the layer is the identity (mode off or rate 0).
pub fn dropout_mask<R: Rng + ?Sized>(
    len: usize,
    rate: f64,
    mode: DropoutMode,
    rng: &mut R,
) -> Result<Option<Vec<f64>>> {
    check_rate(rate)?;
    if mode == DropoutMode::Off || rate == 0.0 {
        return Ok(None);
    }
    let scale = 1.0 / (1.0 - rate);
    Ok(Some(
        (0..len)
            .map(|_| {
                if rng.random::<f64>() < rate {
                    0.0
                } else {
                    scale
                }
            })
            .collect(),
    ))
}

/// Applies [`dropout_mask`] to `input`.
pub fn dropout<R: Rng + ?Sized>(
    input: &[f64],
    rate: f64,
    mode: DropoutMode,
    rng: &mut R,
) -> Result<Vec<f64>> {
    Ok(match dropout_mask(input.len(), rate, mode, rng)? {
        None => input.to_vec(),
        Some(mask) => input.iter().zip(&mask).map(|(x, m)| x * m).collect(),
    })
}

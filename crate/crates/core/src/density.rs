//! Gaussian-mixture output head and the three training losses.
//!
//! The head emits `K` mixture weights (softmax), `K` means (unconstrained)
//! and `K` standard deviations (softplus plus a floor). Losses return their
//! value together with the gradient with respect to `(alphas, mus, sigmas)`
//! so they can be spliced into a [`ForwardTrace`](crate::nn::ForwardTrace).

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, Activation, ForwardTrace, NodeId, ParamId, ParamStore};

/// Lower bound added to every component standard deviation.
pub const SIGMA_FLOOR: f64 = 1e-6;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmParams {
    pub alphas: Vec<f64>,
    pub mus: Vec<f64>,
    pub sigmas: Vec<f64>,
}

impl GmmParams {
    /// Validated constructor: weights non-negative summing to one within 1e-9,
    /// sigmas at least [`SIGMA_FLOOR`], all entries finite.
    pub fn new(alphas: Vec<f64>, mus: Vec<f64>, sigmas: Vec<f64>) -> Result<Self> {
        let k = alphas.len();
        if k == 0 || mus.len() != k || sigmas.len() != k {
            return Err(Error::config(format!(
                "mixture needs K >= 1 matching lengths, got {}/{}/{}",
                k,
                mus.len(),
                sigmas.len()
            )));
        }
        if alphas
            .iter()
            .chain(&mus)
            .chain(&sigmas)
            .any(|v| !v.is_finite())
        {
            return Err(Error::numeric("non-finite mixture parameter"));
        }
        let total: f64 = alphas.iter().sum();
        if alphas.iter().any(|a| *a < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!(
                "mixture weights must be non-negative and sum to 1 (sum {total})"
            )));
        }
        if sigmas.iter().any(|s| *s < SIGMA_FLOOR) {
            return Err(Error::config("mixture sigma below floor"));
        }
        Ok(Self {
            alphas,
            mus,
            sigmas,
        })
    }

    /// Builds the mixture from raw head outputs.
    pub fn from_raw(alpha_logits: &[f64], mus: &[f64], sigma_pre: &[f64]) -> Result<Self> {
        let mut alphas = alpha_logits.to_vec();
        nn::softmax_in_place(&mut alphas);
        let sigmas = sigma_pre
            .iter()
            .map(|z| nn::softplus(*z) + SIGMA_FLOOR)
            .collect();
        Self::new(alphas, mus.to_vec(), sigmas)
    }

    pub fn k(&self) -> usize {
        self.alphas.len()
    }

    /// Mixture density at `y`.
    pub fn density(&self, y: f64) -> f64 {
        self.alphas
            .iter()
            .zip(&self.mus)
            .zip(&self.sigmas)
            .map(|((a, m), s)| {
                a * (-(y - m).powi(2) / (2.0 * s * s)).exp() / (s * (2.0 * PI).sqrt())
            })
            .sum()
    }

    /// Draws one value from the mixture.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut idx = self.k() - 1;
        for (i, a) in self.alphas.iter().enumerate() {
            acc += a;
            if u < acc {
                idx = i;
                break;
            }
        }
        let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng);
        self.mus[idx] + self.sigmas[idx] * z
    }
}

/// `Σ αᵢ μᵢ`.
pub fn mixture_mean(g: &GmmParams) -> f64 {
    g.alphas.iter().zip(&g.mus).map(|(a, m)| a * m).sum()
}

/// Standard deviation of the mixture by the law of total variance.
pub fn mixture_std(g: &GmmParams) -> Result<f64> {
    // Σ αᵢ(σᵢ² + μᵢ²) − mean², evaluated in centered form to avoid cancellation.
    let mean = mixture_mean(g);
    let var: f64 = g
        .alphas
        .iter()
        .zip(&g.mus)
        .zip(&g.sigmas)
        .map(|((a, m), s)| a * (s * s + (m - mean) * (m - mean)))
        .sum();
    if var < -1e-12 {
        return Err(Error::numeric(format!("negative mixture variance {var}")));
    }
    Ok(var.max(0.0).sqrt())
}

/// Gradient of a loss with respect to the mixture parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct GmmGrad {
    pub alphas: Vec<f64>,
    pub mus: Vec<f64>,
    pub sigmas: Vec<f64>,
}

/// Negative log-likelihood of `y` under the mixture with every component
/// variance inflated by `sigma_eps²`, plus its gradient. `sigma_eps` is a
/// constant: no gradient is produced for it.
pub fn ddn_nll_grad(g: &GmmParams, y: f64, sigma_eps: f64) -> Result<(f64, GmmGrad)> {
    if !sigma_eps.is_finite() || sigma_eps < 0.0 {
        return Err(Error::config(format!(
            "measurement sigma must be finite and non-negative, got {sigma_eps}"
        )));
    }
    let k = g.k();
    let eps2 = sigma_eps * sigma_eps;
    let mut log_norm = vec![0.0; k];
    let mut log_terms = vec![0.0; k];
    let mut var = vec![0.0; k];
    for i in 0..k {
        var[i] = g.sigmas[i] * g.sigmas[i] + eps2;
        let d = y - g.mus[i];
        log_norm[i] = -0.5 * (LN_2PI + var[i].ln()) - d * d / (2.0 * var[i]);
        log_terms[i] = g.alphas[i].ln() + log_norm[i];
    }
    let max = log_terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + log_terms.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    let loss = -lse;

    let mut grad = GmmGrad {
        alphas: vec![0.0; k],
        mus: vec![0.0; k],
        sigmas: vec![0.0; k],
    };
    for i in 0..k {
        let resp = (log_terms[i] - lse).exp();
        let d = y - g.mus[i];
        grad.alphas[i] = -(log_norm[i] - lse).exp();
        grad.mus[i] = -resp * d / var[i];
        grad.sigmas[i] = resp * g.sigmas[i] / var[i] * (1.0 - d * d / var[i]);
    }
    Ok((loss, grad))
}

pub fn ddn_nll(g: &GmmParams, y: f64, sigma_eps: f64) -> Result<f64> {
    ddn_nll_grad(g, y, sigma_eps).map(|(l, _)| l)
}

/// `−log Σ αᵢ N(y; μᵢ, σᵢ²)` and its gradient.
pub fn mdn_nll_grad(g: &GmmParams, y: f64) -> (f64, GmmGrad) {
    ddn_nll_grad(g, y, 0.0).expect("zero noise is valid")
}

pub fn mdn_nll(g: &GmmParams, y: f64) -> f64 {
    mdn_nll_grad(g, y).0
}

/// Squared error.
pub fn reg_mse(prediction: f64, y: f64) -> f64 {
    (prediction - y).powi(2)
}

/// Squared error of the mixture mean against `y`, with its gradient.
pub fn reg_mse_grad(g: &GmmParams, y: f64) -> (f64, GmmGrad) {
    let mean = mixture_mean(g);
    let d = 2.0 * (mean - y);
    let grad = GmmGrad {
        alphas: g.mus.iter().map(|m| d * m).collect(),
        mus: g.alphas.iter().map(|a| d * a).collect(),
        sigmas: vec![0.0; g.k()],
    };
    (reg_mse(mean, y), grad)
}

/// Parameters of the mixture head: three dense layers over a shared input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DensityHead {
    pub k: usize,
    alpha_w: ParamId,
    alpha_b: ParamId,
    mu_w: ParamId,
    mu_b: ParamId,
    sigma_w: ParamId,
    sigma_b: ParamId,
}

/// Trace nodes produced by [`DensityHead::forward`]. Loss gradients w.r.t.
/// sigma are fed to `sigma` directly: the floor is an additive constant.
#[derive(Clone, Copy, Debug)]
pub struct HeadNodes {
    pub alphas: NodeId,
    pub mus: NodeId,
    pub sigma: NodeId,
}

impl DensityHead {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        in_dim: usize,
        k: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::config("mixture component count K must be >= 1"));
        }
        Ok(Self {
            k,
            alpha_w: store.dense_weights(&format!("{prefix}.alpha.w"), k, in_dim, rng)?,
            alpha_b: store.zero_bias(&format!("{prefix}.alpha.b"), k)?,
            mu_w: store.dense_weights(&format!("{prefix}.mu.w"), k, in_dim, rng)?,
            mu_b: store.zero_bias(&format!("{prefix}.mu.b"), k)?,
            sigma_w: store.dense_weights(&format!("{prefix}.sigma.w"), k, in_dim, rng)?,
            sigma_b: store.zero_bias(&format!("{prefix}.sigma.b"), k)?,
        })
    }

    /// Parameter handles in a fixed order (alpha, mu, sigma; weight then bias).
    pub fn params(&self) -> [ParamId; 6] {
        [
            self.alpha_w,
            self.alpha_b,
            self.mu_w,
            self.mu_b,
            self.sigma_w,
            self.sigma_b,
        ]
    }

    pub fn forward(
        &self,
        trace: &mut ForwardTrace,
        store: &ParamStore,
        input: NodeId,
    ) -> Result<(HeadNodes, GmmParams)> {
        let alphas = trace.dense(
            store,
            self.alpha_w,
            self.alpha_b,
            input,
            Activation::Softmax,
        )?;
        let mus = trace.dense(store, self.mu_w, self.mu_b, input, Activation::Identity)?;
        let sigma = trace.dense(
            store,
            self.sigma_w,
            self.sigma_b,
            input,
            Activation::Softplus,
        )?;
        let gmm = GmmParams::new(
            trace.value(alphas).to_vec(),
            trace.value(mus).to_vec(),
            trace.value(sigma).iter().map(|s| s + SIGMA_FLOOR).collect(),
        )?;
        Ok((HeadNodes { alphas, mus, sigma }, gmm))
    }

    /// Inference-only forward without a trace.
    pub fn predict(&self, store: &ParamStore, input: &[f64]) -> Result<GmmParams> {
        let dense = |w, b, act| nn::dense_forward(input, store.get(w), store.get(b), act);
        let alphas = dense(self.alpha_w, self.alpha_b, Activation::Softmax)?;
        let mus = dense(self.mu_w, self.mu_b, Activation::Identity)?;
        let sigma = dense(self.sigma_w, self.sigma_b, Activation::Softplus)?;
        GmmParams::new(alphas, mus, sigma.iter().map(|s| s + SIGMA_FLOOR).collect())
    }

    /// Splices a loss (value + gradient w.r.t. the mixture) into the trace.
    pub fn attach_loss(
        &self,
        trace: &mut ForwardTrace,
        nodes: HeadNodes,
        value: f64,
        grad: GmmGrad,
    ) -> Result<NodeId> {
        trace.loss(
            value,
            vec![
                (nodes.alphas, grad.alphas),
                (nodes.mus, grad.mus),
                (nodes.sigma, grad.sigmas),
            ],
        )
    }
}

/// `head_forward` on raw pre-activations: `3K` values laid out as
/// `[alpha logits | mus | sigma pre-activations]`.
pub fn head_forward(features: &[f64], k: usize) -> Result<GmmParams> {
    if k == 0 {
        return Err(Error::config("mixture component count K must be >= 1"));
    }
    if features.len() != 3 * k {
        return Err(Error::config(format!(
            "head expects 3K = {} pre-activations, got {}",
            3 * k,
            features.len()
        )));
    }
    GmmParams::from_raw(&features[..k], &features[k..2 * k], &features[2 * k..])
}

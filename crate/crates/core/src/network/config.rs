use serde::{Deserialize, Serialize};

use crate::dataset::VocabSizes;
use crate::error::{Error, Result};
use crate::nn::AdamConfig;

/// Which training objective a model is fitted with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LossKind {
    /// Squared error of the mixture mean.
    #[serde(rename = "REG")]
    Reg,
    /// Mixture negative log-likelihood.
    #[serde(rename = "MDN")]
    Mdn,
    /// Mixture negative log-likelihood with measurement-noise deconvolution.
    #[serde(rename = "DDN")]
    Ddn,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::Reg, LossKind::Mdn, LossKind::Ddn];

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Reg => "REG",
            LossKind::Mdn => "MDN",
            LossKind::Ddn => "DDN",
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "REG" => Ok(LossKind::Reg),
            "MDN" => Ok(LossKind::Mdn),
            "DDN" => Ok(LossKind::Ddn),
            other => Err(Error::config(format!("unknown model kind {other:?}"))),
        }
    }
}

/// Where the `μ` fed to the measurement-noise model comes from during training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMuSource {
    /// The model's own mixture mean from the same forward pass, as a constant.
    Model,
    /// The smoothed empirical label of the sample.
    Empirical,
}

/// How target and context descriptors are combined before the head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionKind {
    /// `t ∥ c ∥ (t ⊙ c)`.
    ConcatProduct,
    /// `t ∥ c`, for ablations.
    Concat,
}

/// Architecture and training hyperparameters of a [`DdnNetwork`](super::DdnNetwork).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub token_vocab: usize,
    pub categorical_vocab: Vec<usize>,
    pub content_dim: usize,
    pub context_vocab: Vec<usize>,
    pub context_real_dim: usize,
    pub token_dim: usize,
    pub categorical_dim: usize,
    /// Hidden widths of the target subnet; the last is the descriptor size.
    pub target_hidden: Vec<usize>,
    /// Hidden widths of the context subnet; must end at the same size.
    pub context_hidden: Vec<usize>,
    pub fusion_dim: usize,
    pub fusion: FusionKind,
    pub components: usize,
    pub dropout: f64,
    pub mc_passes: usize,
    pub noise_mu_source: NoiseMuSource,
    pub optimizer: AdamConfig,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            token_vocab: 1024,
            categorical_vocab: vec![256],
            content_dim: 8,
            context_vocab: vec![8],
            context_real_dim: 0,
            token_dim: 16,
            categorical_dim: 8,
            target_hidden: vec![64, 32],
            context_hidden: vec![64, 32],
            fusion_dim: 32,
            fusion: FusionKind::ConcatProduct,
            components: 3,
            dropout: 0.25,
            mc_passes: 30,
            noise_mu_source: NoiseMuSource::Model,
            optimizer: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl NetworkConfig {
    pub fn with_vocab(mut self, vocab: &VocabSizes) -> Self {
        self.token_vocab = vocab.token;
        self.categorical_vocab = vocab.categorical.clone();
        self.context_vocab = vocab.context.clone();
        self.content_dim = vocab.content_dim;
        self
    }

    pub fn descriptor_dim(&self) -> usize {
        self.target_hidden.last().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.components == 0 {
            return Err(Error::config("mixture component count K must be >= 1"));
        }
        if self.token_vocab == 0
            || self.categorical_vocab.contains(&0)
            || self.context_vocab.contains(&0)
        {
            return Err(Error::config("vocabulary sizes must be positive"));
        }
        if self.token_dim == 0 || self.fusion_dim == 0 {
            return Err(Error::config("embedding and fusion sizes must be positive"));
        }
        if !self.categorical_vocab.is_empty() && self.categorical_dim == 0 {
            return Err(Error::config("categorical embedding size must be positive"));
        }
        if self.target_hidden.is_empty() || self.context_hidden.is_empty() {
            return Err(Error::config("each subnet needs at least one hidden layer"));
        }
        if self
            .target_hidden
            .iter()
            .chain(&self.context_hidden)
            .any(|w| *w == 0)
        {
            return Err(Error::config("hidden widths must be positive"));
        }
        if self.target_hidden.last() != self.context_hidden.last() {
            return Err(Error::config(format!(
                "target and context descriptors differ in size ({:?} vs {:?})",
                self.target_hidden.last(),
                self.context_hidden.last()
            )));
        }
        if self.context_vocab.is_empty() && self.context_real_dim == 0 {
            return Err(Error::config("context subnet has no inputs"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!(
                "dropout rate {} must lie in [0, 1)",
                self.dropout
            )));
        }
        if self.mc_passes == 0 {
            return Err(Error::config("Monte Carlo pass count T must be >= 1"));
        }
        Ok(())
    }
}

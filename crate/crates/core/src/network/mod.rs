//! The hybrid content/context model: a target subnet and a context subnet
//! produce descriptors that are fused and mapped to a Gaussian mixture.
//!
//! Inference with Monte Carlo dropout yields the model uncertainty; the
//! mixture itself gives the data uncertainty; the measurement uncertainty
//! comes from [`noise::sigma_eps`] when an impression count is supplied.

mod checkpoint;
mod config;
mod features;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{
    read_header, CheckpointHeader, ParamEntry, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{FusionKind, LossKind, NetworkConfig, NoiseMuSource};
pub use features::{mc_std, ContextFeatures, TargetFeatures, UncertaintyReport};

use crate::dataset::{mix64, Sample};
use crate::density::{self, DensityHead, GmmGrad, GmmParams};
use crate::error::{Error, Result};
use crate::nn::gradcheck::{self, GradCheck};
use crate::nn::{
    self, Activation, DropoutMode, ForwardTrace, NodeId, OptimizerState, ParamId, ParamStore,
};
use crate::noise;

/// Calibration baseline used to turn a log-calibrated CTR back into a
/// probability, per context id vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub per_context: Vec<(Vec<usize>, f64)>,
    pub default: f64,
}

impl Default for Calibration {
    fn default() -> Self {
        Self {
            per_context: Vec::new(),
            default: 0.01,
        }
    }
}

impl Calibration {
    pub fn from_map(map: &std::collections::BTreeMap<Vec<usize>, f64>) -> Self {
        let per_context: Vec<_> = map.iter().map(|(k, v)| (k.clone(), *v)).collect();
        let default = if per_context.is_empty() {
            0.01
        } else {
            per_context.iter().map(|(_, v)| v).sum::<f64>() / per_context.len() as f64
        };
        Self {
            per_context,
            default,
        }
    }

    /// Baselines carried by labeled samples (first occurrence per context).
    pub fn from_samples(samples: &[Sample]) -> Self {
        let mut map = std::collections::BTreeMap::new();
        for s in samples {
            map.entry(s.context.context_ids.clone())
                .or_insert(s.calibration_baseline);
        }
        Self::from_map(&map)
    }

    pub fn baseline(&self, context: &ContextFeatures) -> f64 {
        self.per_context
            .iter()
            .find(|(k, _)| *k == context.context_ids)
            .map_or(self.default, |(_, v)| *v)
    }
}

/// Point prediction for one (target, context) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PairPrediction {
    pub gmm: GmmParams,
    pub mean: f64,
    pub data_std: f64,
    pub model_std: f64,
}

#[derive(Clone, Debug)]
struct Layout {
    token_table: ParamId,
    categorical_tables: Vec<ParamId>,
    context_tables: Vec<ParamId>,
    target_layers: Vec<(ParamId, ParamId)>,
    context_layers: Vec<(ParamId, ParamId)>,
    fusion: (ParamId, ParamId),
    head: DensityHead,
}

impl Layout {
    fn build(config: &NetworkConfig, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<Self> {
        let token_table = store.embedding_table(
            "target.token_emb",
            config.token_vocab,
            config.token_dim,
            rng,
        )?;
        let categorical_tables = config
            .categorical_vocab
            .iter()
            .enumerate()
            .map(|(i, rows)| {
                store.embedding_table(
                    &format!("target.cat{i}_emb"),
                    *rows,
                    config.categorical_dim,
                    rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let context_tables = config
            .context_vocab
            .iter()
            .enumerate()
            .map(|(i, rows)| {
                store.embedding_table(
                    &format!("context.ctx{i}_emb"),
                    *rows,
                    config.categorical_dim,
                    rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;

        let target_in = config.token_dim
            + config.categorical_dim * config.categorical_vocab.len()
            + config.content_dim;
        let target_layers = dense_stack(store, "target", target_in, &config.target_hidden, rng)?;
        let context_in =
            config.categorical_dim * config.context_vocab.len() + config.context_real_dim;
        let context_layers =
            dense_stack(store, "context", context_in, &config.context_hidden, rng)?;

        let d = config.descriptor_dim();
        let fusion_in = match config.fusion {
            FusionKind::ConcatProduct => 3 * d,
            FusionKind::Concat => 2 * d,
        };
        let fusion = (
            store.dense_weights("fusion.w", config.fusion_dim, fusion_in, rng)?,
            store.zero_bias("fusion.b", config.fusion_dim)?,
        );
        let head = DensityHead::new(store, "head", config.fusion_dim, config.components, rng)?;
        Ok(Self {
            token_table,
            categorical_tables,
            context_tables,
            target_layers,
            context_layers,
            fusion,
            head,
        })
    }
}

fn dense_stack(
    store: &mut ParamStore,
    prefix: &str,
    mut in_dim: usize,
    widths: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(ParamId, ParamId)>> {
    let mut layers = Vec::with_capacity(widths.len());
    for (i, &w) in widths.iter().enumerate() {
        layers.push((
            store.dense_weights(&format!("{prefix}.l{i}.w"), w, in_dim, rng)?,
            store.zero_bias(&format!("{prefix}.l{i}.b"), w)?,
        ));
        in_dim = w;
    }
    Ok(layers)
}

/// Hybrid target/context network with a mixture density head.
#[derive(Clone, Debug)]
pub struct DdnNetwork {
    config: NetworkConfig,
    layout: Layout,
    store: ParamStore,
    optimizer: OptimizerState,
    rng: ChaCha8Rng,
    calibration: Calibration,
    objective: Option<LossKind>,
}

impl DdnNetwork {
    pub fn new(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let layout = Layout::build(&config, &mut store, &mut init_rng)?;
        let optimizer = OptimizerState::new(&store, config.optimizer);
        let rng = ChaCha8Rng::seed_from_u64(mix64(config.seed ^ 0x7261_696e));
        Ok(Self {
            config,
            layout,
            store,
            optimizer,
            rng,
            calibration: Calibration::default(),
            objective: None,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn calibration(&self) -> &Calibration {
        &self.calibration
    }

    pub fn set_calibration(&mut self, calibration: Calibration) {
        self.calibration = calibration;
    }

    /// Handles of the mixture head parameters.
    pub fn head_params(&self) -> [ParamId; 6] {
        self.layout.head.params()
    }

    /// Objective the network is trained with: set explicitly or by the
    /// most recent training step.
    pub fn objective(&self) -> Option<LossKind> {
        self.objective
    }

    pub fn set_objective(&mut self, kind: LossKind) {
        self.objective = Some(kind);
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.optimizer.config.learning_rate = lr;
    }

    /// Reseeds the dropout generator used for training.
    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    // ---- inference (no trace) ----

    fn pooled_tokens(&self, token_ids: &[usize]) -> Vec<f64> {
        let mut ids = token_ids.to_vec();
        ids.sort_unstable();
        let table = self.store.get(self.layout.token_table);
        let mut acc = vec![0.0; self.config.token_dim];
        for id in &ids {
            acc.iter_mut()
                .zip(table.row(*id))
                .for_each(|(a, b)| *a += b);
        }
        let n = ids.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }

    fn run_stack<R: Rng + ?Sized>(
        &self,
        mut h: Vec<f64>,
        layers: &[(ParamId, ParamId)],
        mode: DropoutMode,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        for (w, b) in layers {
            h = nn::dense_forward(&h, self.store.get(*w), self.store.get(*b), Activation::Relu)?;
            h = nn::dropout(&h, self.config.dropout, mode, rng)?;
        }
        Ok(h)
    }

    fn target_descriptor_with<R: Rng + ?Sized>(
        &self,
        t: &TargetFeatures,
        mode: DropoutMode,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        t.validate(self.config.token_vocab, &self.config.categorical_vocab)?;
        if t.content_reals.len() != self.config.content_dim {
            return Err(Error::data(format!(
                "target has {} content features, model expects {}",
                t.content_reals.len(),
                self.config.content_dim
            )));
        }
        let mut input = self.pooled_tokens(&t.token_ids);
        for (id, table) in t
            .categorical_ids
            .iter()
            .zip(&self.layout.categorical_tables)
        {
            input.extend_from_slice(self.store.get(*table).row(*id));
        }
        input.extend_from_slice(&t.content_reals);
        self.run_stack(input, &self.layout.target_layers, mode, rng)
    }

    fn context_descriptor_with<R: Rng + ?Sized>(
        &self,
        c: &ContextFeatures,
        mode: DropoutMode,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        c.validate(&self.config.context_vocab)?;
        if c.context_reals.len() != self.config.context_real_dim {
            return Err(Error::data(format!(
                "context has {} real features, model expects {}",
                c.context_reals.len(),
                self.config.context_real_dim
            )));
        }
        let mut input = Vec::new();
        for (id, table) in c.context_ids.iter().zip(&self.layout.context_tables) {
            input.extend_from_slice(self.store.get(*table).row(*id));
        }
        input.extend_from_slice(&c.context_reals);
        self.run_stack(input, &self.layout.context_layers, mode, rng)
    }

    fn fusion_input(&self, t_desc: &[f64], c_desc: &[f64]) -> Result<Vec<f64>> {
        let d = self.config.descriptor_dim();
        if t_desc.len() != d || c_desc.len() != d {
            return Err(Error::config(format!(
                "descriptors of length {} and {} do not match descriptor size {d}",
                t_desc.len(),
                c_desc.len()
            )));
        }
        let mut v = Vec::with_capacity(3 * d);
        v.extend_from_slice(t_desc);
        v.extend_from_slice(c_desc);
        if self.config.fusion == FusionKind::ConcatProduct {
            v.extend(t_desc.iter().zip(c_desc).map(|(a, b)| a * b));
        }
        Ok(v)
    }

    fn fuse_with<R: Rng + ?Sized>(
        &self,
        t_desc: &[f64],
        c_desc: &[f64],
        mode: DropoutMode,
        rng: &mut R,
    ) -> Result<GmmParams> {
        let input = self.fusion_input(t_desc, c_desc)?;
        let h = self.run_stack(input, std::slice::from_ref(&self.layout.fusion), mode, rng)?;
        self.layout.head.predict(&self.store, &h)
    }

    /// Deterministic target descriptor (dropout off).
    pub fn target_descriptor(&self, t: &TargetFeatures) -> Result<Vec<f64>> {
        self.target_descriptor_with(t, DropoutMode::Off, &mut NoRng)
    }

    /// Deterministic context descriptor (dropout off).
    pub fn context_descriptor(&self, c: &ContextFeatures) -> Result<Vec<f64>> {
        self.context_descriptor_with(c, DropoutMode::Off, &mut NoRng)
    }

    /// Fuses two descriptors and evaluates the head (dropout off).
    pub fn fuse_and_predict(&self, t_desc: &[f64], c_desc: &[f64]) -> Result<GmmParams> {
        self.fuse_with(t_desc, c_desc, DropoutMode::Off, &mut NoRng)
    }

    pub fn predict(&self, t: &TargetFeatures, c: &ContextFeatures) -> Result<GmmParams> {
        self.fuse_and_predict(&self.target_descriptor(t)?, &self.context_descriptor(c)?)
    }

    /// Full uncertainty decomposition for one pair.
    ///
    /// `passes` stochastic forward passes (dropout active) give the model
    /// uncertainty; each pass draws its masks from an independent stream of
    /// a generator seeded with `seed`.
    pub fn predict_with_uncertainty(
        &self,
        t: &TargetFeatures,
        c: &ContextFeatures,
        r_hint: Option<u64>,
        passes: usize,
        seed: u64,
    ) -> Result<UncertaintyReport> {
        let mut grid = self.predict_grid(
            std::slice::from_ref(t),
            std::slice::from_ref(c),
            passes,
            seed,
        )?;
        let p = grid.pop().expect("one pair");
        let measurement_std = match r_hint {
            Some(r) => noise::sigma_eps(p.mean, r, self.calibration.baseline(c))?,
            None => 0.0,
        };
        Ok(UncertaintyReport {
            mean: p.mean,
            data_std: p.data_std,
            model_std: p.model_std,
            measurement_std,
            gmm: p.gmm,
            mc_passes: passes,
        })
    }

    /// Predictions for every (target, context) pair, row-major by target.
    ///
    /// Within one stochastic pass each target and context descriptor is
    /// computed once and shared by all pairs it takes part in.
    pub fn predict_grid(
        &self,
        targets: &[TargetFeatures],
        contexts: &[ContextFeatures],
        passes: usize,
        seed: u64,
    ) -> Result<Vec<PairPrediction>> {
        if passes == 0 {
            return Err(Error::config("Monte Carlo pass count T must be >= 1"));
        }
        let t_desc = targets
            .iter()
            .map(|t| self.target_descriptor(t))
            .collect::<Result<Vec<_>>>()?;
        let c_desc = contexts
            .iter()
            .map(|c| self.context_descriptor(c))
            .collect::<Result<Vec<_>>>()?;
        let mut out = Vec::with_capacity(targets.len() * contexts.len());
        for td in &t_desc {
            for cd in &c_desc {
                let gmm = self.fuse_and_predict(td, cd)?;
                let mean = density::mixture_mean(&gmm);
                let data_std = density::mixture_std(&gmm)?;
                out.push(PairPrediction {
                    gmm,
                    mean,
                    data_std,
                    model_std: 0.0,
                });
            }
        }
        if passes < 2 || self.config.dropout == 0.0 {
            return Ok(out);
        }

        let mut samples = vec![Vec::with_capacity(passes); out.len()];
        for pass in 0..passes {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(pass as u64);
            let t_pass = targets
                .iter()
                .map(|t| self.target_descriptor_with(t, DropoutMode::McInference, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let c_pass = contexts
                .iter()
                .map(|c| self.context_descriptor_with(c, DropoutMode::McInference, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let mut idx = 0;
            for td in &t_pass {
                for cd in &c_pass {
                    let g = self.fuse_with(td, cd, DropoutMode::McInference, &mut rng)?;
                    samples[idx].push(density::mixture_mean(&g));
                    idx += 1;
                }
            }
        }
        for (p, s) in out.iter_mut().zip(&samples) {
            p.model_std = mc_std(s);
        }
        Ok(out)
    }

    // ---- training (traced) ----

    fn trace_stack<R: Rng + ?Sized>(
        &self,
        trace: &mut ForwardTrace,
        mut h: NodeId,
        layers: &[(ParamId, ParamId)],
        mode: DropoutMode,
        rng: &mut R,
    ) -> Result<NodeId> {
        for (w, b) in layers {
            h = trace.dense(&self.store, *w, *b, h, Activation::Relu)?;
            h = trace.dropout(h, self.config.dropout, mode, rng)?;
        }
        Ok(h)
    }

    fn trace_sample<R: Rng + ?Sized>(
        &self,
        trace: &mut ForwardTrace,
        t: &TargetFeatures,
        c: &ContextFeatures,
        mode: DropoutMode,
        rng: &mut R,
    ) -> Result<(density::HeadNodes, GmmParams)> {
        t.validate(self.config.token_vocab, &self.config.categorical_vocab)?;
        c.validate(&self.config.context_vocab)?;
        if t.content_reals.len() != self.config.content_dim
            || c.context_reals.len() != self.config.context_real_dim
        {
            return Err(Error::data(
                "real-valued feature length does not match the model",
            ));
        }

        let mut ids = t.token_ids.clone();
        ids.sort_unstable();
        let tokens = ids
            .iter()
            .map(|id| trace.embedding(&self.store, self.layout.token_table, *id, "token"))
            .collect::<Result<Vec<_>>>()?;
        let mut parts = vec![trace.mean_pool(&tokens)?];
        for (id, table) in t
            .categorical_ids
            .iter()
            .zip(&self.layout.categorical_tables)
        {
            parts.push(trace.embedding(&self.store, *table, *id, "target categorical")?);
        }
        if !t.content_reals.is_empty() {
            parts.push(trace.input(t.content_reals.clone()));
        }
        let t_in = trace.concat(&parts);
        let t_desc = self.trace_stack(trace, t_in, &self.layout.target_layers, mode, rng)?;

        let mut parts = Vec::new();
        for (id, table) in c.context_ids.iter().zip(&self.layout.context_tables) {
            parts.push(trace.embedding(&self.store, *table, *id, "context")?);
        }
        if !c.context_reals.is_empty() {
            parts.push(trace.input(c.context_reals.clone()));
        }
        let c_in = trace.concat(&parts);
        let c_desc = self.trace_stack(trace, c_in, &self.layout.context_layers, mode, rng)?;

        let mut fused = vec![t_desc, c_desc];
        if self.config.fusion == FusionKind::ConcatProduct {
            fused.push(trace.hadamard(t_desc, c_desc)?);
        }
        let f_in = trace.concat(&fused);
        let h = self.trace_stack(
            trace,
            f_in,
            std::slice::from_ref(&self.layout.fusion),
            mode,
            rng,
        )?;
        self.layout.head.forward(trace, &self.store, h)
    }

    /// Loss of one sample under `gmm` and its gradient w.r.t. the mixture.
    pub fn sample_loss(
        &self,
        gmm: &GmmParams,
        sample: &Sample,
        kind: LossKind,
    ) -> Result<(f64, GmmGrad)> {
        match kind {
            LossKind::Reg => Ok(density::reg_mse_grad(gmm, sample.y)),
            LossKind::Mdn => Ok(density::mdn_nll_grad(gmm, sample.y)),
            LossKind::Ddn => {
                let mu = match self.config.noise_mu_source {
                    NoiseMuSource::Model => density::mixture_mean(gmm),
                    NoiseMuSource::Empirical => sample.y,
                };
                let eps = noise::sigma_eps(mu, sample.r, sample.calibration_baseline)?;
                density::ddn_nll_grad(gmm, sample.y, eps)
            }
        }
    }

    /// Forward + backward over `batch`, adding the gradient of the mean loss
    /// to the parameter gradients. Returns the mean loss.
    pub fn accumulate_gradients(
        &mut self,
        batch: &[Sample],
        kind: LossKind,
        mode: DropoutMode,
    ) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::usage("training batch is empty"));
        }
        let scale = 1.0 / batch.len() as f64;
        let mut rng = std::mem::replace(&mut self.rng, ChaCha8Rng::seed_from_u64(0));
        let result = (|| {
            let mut total = 0.0;
            for (i, s) in batch.iter().enumerate() {
                let mut trace = ForwardTrace::new();
                let (nodes, gmm) =
                    self.trace_sample(&mut trace, &s.target, &s.context, mode, &mut rng)?;
                let (loss, grad) = self.sample_loss(&gmm, s, kind)?;
                if !loss.is_finite() {
                    return Err(Error::numeric(format!(
                        "non-finite {kind} loss at batch index {i} (target {}, day {})",
                        s.target_id, s.day
                    )));
                }
                let node = self
                    .layout
                    .head
                    .attach_loss(&mut trace, nodes, loss, grad)?;
                trace.backward(&mut self.store, node, scale)?;
                total += loss;
            }
            Ok(total * scale)
        })();
        self.rng = rng;
        result
    }

    /// One optimizer step on `batch` with training-mode dropout. Returns the
    /// mean loss before the update.
    pub fn train_step(&mut self, batch: &[Sample], kind: LossKind) -> Result<f64> {
        self.objective = Some(kind);
        self.store.zero_grad();
        let result = self
            .accumulate_gradients(batch, kind, DropoutMode::Train)
            .and_then(|loss| self.optimizer.step(&mut self.store).map(|_| loss));
        self.store.zero_grad();
        result
    }

    /// Per-sample losses with dropout off; no parameter or gradient changes.
    pub fn sample_losses(&self, batch: &[Sample], kind: LossKind) -> Result<Vec<f64>> {
        batch
            .iter()
            .map(|s| {
                let gmm = self.predict(&s.target, &s.context)?;
                Ok(self.sample_loss(&gmm, s, kind)?.0)
            })
            .collect()
    }

    pub fn batch_loss(&self, batch: &[Sample], kind: LossKind) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::usage("batch is empty"));
        }
        Ok(self.sample_losses(batch, kind)?.iter().sum::<f64>() / batch.len() as f64)
    }

    /// `steps` optimizer steps on minibatches drawn uniformly with
    /// replacement from `samples`. Returns the loss of every step.
    pub fn fit_steps(
        &mut self,
        samples: &[Sample],
        kind: LossKind,
        steps: usize,
        batch_size: usize,
    ) -> Result<Vec<f64>> {
        if samples.is_empty() && steps > 0 {
            return Err(Error::usage("cannot train on an empty dataset"));
        }
        let mut curve = Vec::with_capacity(steps);
        let mut batch = Vec::with_capacity(batch_size);
        for _ in 0..steps {
            batch.clear();
            for _ in 0..batch_size.max(1) {
                let i = self.rng.random_range(0..samples.len());
                batch.push(samples[i].clone());
            }
            curve.push(self.train_step(&batch, kind)?);
        }
        Ok(curve)
    }

    /// Full passes over a shuffled copy of `samples`. Returns the mean
    /// training loss of each epoch.
    pub fn fit_epochs(
        &mut self,
        samples: &[Sample],
        kind: LossKind,
        epochs: usize,
        batch_size: usize,
    ) -> Result<Vec<f64>> {
        if samples.is_empty() && epochs > 0 {
            return Err(Error::usage("cannot train on an empty dataset"));
        }
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut curve = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            for i in (1..order.len()).rev() {
                let j = self.rng.random_range(0..=i);
                order.swap(i, j);
            }
            let mut total = 0.0;
            let mut batches = 0;
            for chunk in order.chunks(batch_size.max(1)) {
                let batch: Vec<Sample> = chunk.iter().map(|i| samples[*i].clone()).collect();
                total += self.train_step(&batch, kind)?;
                batches += 1;
            }
            curve.push(total / batches as f64);
        }
        Ok(curve)
    }
}

impl AsMut<ParamStore> for DdnNetwork {
    fn as_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }
}

impl DdnNetwork {
    /// Active ReLU units over every sample of `batch` with dropout off.
    pub fn relu_pattern(&self, batch: &[Sample]) -> Result<Vec<bool>> {
        let mut pattern = Vec::new();
        for s in batch {
            let mut trace = ForwardTrace::new();
            self.trace_sample(
                &mut trace,
                &s.target,
                &s.context,
                DropoutMode::Off,
                &mut NoRng,
            )?;
            pattern.extend(trace.relu_pattern());
        }
        Ok(pattern)
    }

    /// Compares the analytic gradient of the mean loss over `batch`
    /// (dropout off) with central differences, over every parameter scalar
    /// or only the tensors in `ids`.
    pub fn gradient_check(
        &mut self,
        batch: &[Sample],
        kind: LossKind,
        ids: Option<&[ParamId]>,
        rel_step: f64,
    ) -> Result<GradCheck> {
        self.store.zero_grad();
        self.accumulate_gradients(batch, kind, DropoutMode::Off)?;
        let mut failure = None;
        let result = gradcheck::check(self, ids, rel_step, |net| {
            match net
                .batch_loss(batch, kind)
                .and_then(|v| Ok((v, net.relu_pattern(batch)?)))
            {
                Ok(v) => v,
                Err(e) => {
                    failure.get_or_insert(e);
                    (f64::NAN, Vec::new())
                }
            }
        });
        self.store.zero_grad();
        match failure {
            Some(e) => Err(e),
            None => Ok(result),
        }
    }
}

/// Generator for code paths that never draw (dropout off).
struct NoRng;

impl rand::RngCore for NoRng {
    fn next_u32(&mut self) -> u32 {
        unreachable!("dropout is off")
    }

    fn next_u64(&mut self) -> u64 {
        unreachable!("dropout is off")
    }

    fn fill_bytes(&mut self, _dst: &mut [u8]) {
        unreachable!("dropout is off")
    }
}

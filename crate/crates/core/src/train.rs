//! Seeded pretraining loop with Adam, per-epoch metrics and checkpoints.
//!
//! Every random choice (shuffle order, mask plans, sampled negatives) is a
//! pure function of the base seed, the epoch and the step, so a run resumed
//! from a checkpoint follows the uninterrupted trajectory exactly.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{GeneExample, Vocabulary};
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::masking::{collate, plan_mask, MaskConfig, MaskPlan, MaskingMode};
use crate::model::{gradients, Checkpoint, CheckpointHeader, LossBreakdown, ModelConfig, ModelParameters, NeighborTargets, Scalar};
use crate::ontology::{GoDag, RelationSet};
use crate::rng::{derive_seed, rng_from, stream};

/// The four model variants compared in the ablation table.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    None,
    NoNeighborhood,
    NoSemantics,
    NaiveMasking,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::None, Ablation::NoNeighborhood, Ablation::NoSemantics, Ablation::NaiveMasking];

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::NoNeighborhood => "no_neighborhood",
            Ablation::NoSemantics => "no_semantics",
            Ablation::NaiveMasking => "naive_masking",
        }
    }

    /// Row label used in comparison tables.
    pub fn row_label(self) -> &'static str {
        match self {
            Ablation::None => "GoBERT",
            Ablation::NoNeighborhood => "GoBERT w/o Neighborhood Prediction",
            Ablation::NoSemantics => "GoBERT w/o Semantic Embeddings",
            Ablation::NaiveMasking => "GoBERT w/o Masking Strategy",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown ablation {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Linear learning-rate warmup over this many steps; 0 disables it.
    pub warmup_steps: u64,
    pub seed: u64,
    pub lambda: f64,
    pub alpha_mask: f64,
    pub rho: f64,
    pub ablation: Ablation,
    pub max_len: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    /// Relation kinds forming the neighbourhood targets.
    pub relations: String,
    /// Log zero seconds so metric files are reproducible byte for byte.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        Self {
            epochs: 20,
            batch_size: 32,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            warmup_steps: 0,
            seed: 0,
            lambda: model.lambda,
            alpha_mask: MaskConfig::default().alpha,
            rho: model.neg_downsample,
            ablation: Ablation::None,
            max_len: 64,
            hidden: model.hidden,
            layers: model.layers,
            heads: model.heads,
            ffn_dim: model.ffn_dim,
            relations: "all".into(),
            deterministic: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.epochs < 1 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr {} must be positive", self.lr));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.adam_eps <= 0.0 {
            return bad("Adam betas must lie in [0, 1) and eps must be positive".into());
        }
        if self.max_len < 1 {
            return bad("max_len must be at least 1".into());
        }
        self.relation_set()?;
        self.mask_config().validate()?;
        // Model-side ranges (lambda, rho, head divisibility).
        ModelConfig { vocab_size: 1, label_size: 1, ..self.model_config(1, 1) }.validate()
    }

    pub fn relation_set(&self) -> Result<RelationSet> {
        self.relations.parse()
    }

    pub fn mask_config(&self) -> MaskConfig {
        let mode = if self.ablation == Ablation::NaiveMasking { MaskingMode::Naive } else { MaskingMode::Strategy };
        MaskConfig { alpha: self.alpha_mask, mode, force_one: true }
    }

    /// The neighbourhood loss weight actually used (zero without the head).
    pub fn effective_lambda(&self) -> f64 {
        if self.ablation == Ablation::NoNeighborhood {
            0.0
        } else {
            self.lambda
        }
    }

    pub fn model_config(&self, vocab_size: usize, label_size: usize) -> ModelConfig {
        ModelConfig {
            hidden: self.hidden,
            layers: self.layers,
            heads: self.heads,
            ffn_dim: self.ffn_dim,
            vocab_size,
            label_size,
            lambda: self.effective_lambda(),
            neg_downsample: self.rho,
            proj_in: None,
            neighborhood_head: self.ablation != Ablation::NoNeighborhood,
            layer_norm_eps: ModelConfig::default().layer_norm_eps,
        }
    }

    /// Token-table initialisation for this variant.
    pub fn initial_embeddings(&self, embeddings: &EmbeddingMatrix) -> EmbeddingMatrix {
        if self.ablation == Ablation::NoSemantics {
            embeddings.randomized(derive_seed(self.seed, &[stream::NO_SEMANTICS]))
        } else {
            embeddings.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// Bias-corrected Adam on flat slices; `t` is the 1-based step number.
pub fn adam_update<T: Scalar>(p: &mut [T], g: &[T], m: &mut [T], v: &mut [T], t: u64, h: AdamHyper) {
    let (b1, b2) = (T::lit(h.beta1), T::lit(h.beta2));
    let c1 = T::lit(1.0 - h.beta1.powf(t as f64));
    let c2 = T::lit(1.0 - h.beta2.powf(t as f64));
    let (lr, eps) = (T::lit(h.lr), T::lit(h.eps));
    for i in 0..p.len() {
        m[i] = b1 * m[i] + (T::one() - b1) * g[i];
        v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Adam moments for a whole model.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: ModelParameters<T>,
    pub v: ModelParameters<T>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ModelParameters<T>) -> Self {
        Self { m: params.zeros_like(), v: params.zeros_like(), step: 0 }
    }
}

/// One Adam step over every parameter block.
pub fn adam_step<T: Scalar>(params: &mut ModelParameters<T>, grads: &ModelParameters<T>, state: &mut AdamState<T>, h: AdamHyper) {
    state.step += 1;
    let grads = grads.blocks();
    let mut ms = state.m.blocks_mut();
    let mut vs = state.v.blocks_mut();
    for (((p, g), m), v) in params.blocks_mut().into_iter().zip(&grads).zip(&mut ms).zip(&mut vs) {
        adam_update(p.data, g.data, m.data, v.data, state.step, h);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: u64,
    pub loss_total: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_ex: Option<f64>,
    pub loss_im: Option<f64>,
    pub seconds: f64,
    /// Per-step totals, kept in memory for trend checks.
    #[serde(skip)]
    pub step_losses: Vec<f64>,
}

impl EpochMetrics {
    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)? + "\n")
    }
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Training state over one corpus.
pub struct Trainer<'a> {
    pub config: TrainConfig,
    dag: &'a GoDag,
    vocabulary: Vocabulary,
    targets: Option<NeighborTargets>,
    /// Training examples as DAG index lists.
    examples: Vec<Vec<usize>>,
    pub params: ModelParameters<f32>,
    pub adam: AdamState<f32>,
    /// Completed epochs.
    pub epoch: u64,
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig, dag: &'a GoDag, train: &[GeneExample], embeddings: &EmbeddingMatrix) -> Result<Self> {
        config.validate()?;
        let vocabulary = Vocabulary::from_dag(dag);
        let model = config.model_config(vocabulary.len(), dag.len());
        let params = ModelParameters::init(model, &config.initial_embeddings(embeddings), config.seed)?;
        let adam = AdamState::new(&params);
        Self::assemble(config, dag, vocabulary, train, params, adam, 0)
    }

    /// Resumes from a checkpoint written by [`Trainer::checkpoint`].
    pub fn resume(checkpoint: Checkpoint, dag: &'a GoDag, train: &[GeneExample]) -> Result<Self> {
        let config: TrainConfig = serde_json::from_value(checkpoint.header.train.clone())
            .map_err(|e| Error::Checkpoint(format!("training config: {e}")))?;
        let vocabulary = Vocabulary::from_dag(dag);
        let stored: Vec<&str> = checkpoint.header.vocabulary.iter().map(String::as_str).collect();
        let current: Vec<&str> = vocabulary.terms().iter().map(|t| t.as_str()).collect();
        if stored != current {
            return Err(Error::Checkpoint("checkpoint vocabulary differs from the ontology".into()));
        }
        let (m, v) = checkpoint.moments.ok_or_else(|| Error::Checkpoint("checkpoint has no optimiser state".into()))?;
        let adam = AdamState { m, v, step: checkpoint.header.step };
        Self::assemble(config, dag, vocabulary, train, checkpoint.params, adam, checkpoint.header.epoch)
    }

    fn assemble(
        config: TrainConfig,
        dag: &'a GoDag,
        vocabulary: Vocabulary,
        train: &[GeneExample],
        params: ModelParameters<f32>,
        adam: AdamState<f32>,
        epoch: u64,
    ) -> Result<Self> {
        let examples = train
            .iter()
            .map(|g| g.term_indices(dag))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .filter(|t| !t.is_empty())
            .collect::<Vec<_>>();
        if examples.is_empty() {
            return Err(Error::InvalidArgument("training split is empty".into()));
        }
        if let Some(e) = examples.iter().find(|e| e.len() > config.max_len) {
            return Err(Error::InvalidArgument(format!("example with {} terms exceeds max_len {}", e.len(), config.max_len)));
        }
        let targets = params.neighbor_head.is_some().then(|| NeighborTargets::from_dag(dag, config.relation_set().unwrap_or_default()));
        Ok(Self { config, dag, vocabulary, targets, examples, params, adam, epoch })
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    pub fn example_count(&self) -> usize {
        self.examples.len()
    }

    fn hyper(&self) -> AdamHyper {
        let c = &self.config;
        let warm = if c.warmup_steps > 0 {
            ((self.adam.step + 1) as f64 / c.warmup_steps as f64).min(1.0)
        } else {
            1.0
        };
        AdamHyper { lr: c.lr * warm, beta1: c.beta1, beta2: c.beta2, eps: c.adam_eps }
    }

    /// Mask plan of one example in one epoch.
    pub fn plan_for(&self, epoch: u64, example: usize) -> MaskPlan {
        let seed = derive_seed(self.config.seed, &[stream::MASK, epoch, example as u64]);
        plan_mask(&self.examples[example], self.dag, &self.config.mask_config(), seed, self.vocabulary.len())
    }

    /// One optimiser step on the given examples.
    fn step(&mut self, epoch: u64, batch_examples: &[usize]) -> Result<LossBreakdown> {
        let rows: Vec<Vec<u32>> = batch_examples
            .iter()
            .map(|&i| self.examples[i].iter().map(|&t| (t + Vocabulary::TERM_OFFSET) as u32).collect())
            .collect();
        let plans: Vec<MaskPlan> = batch_examples.iter().map(|&i| self.plan_for(epoch, i)).collect();
        let batch = collate(&rows, &plans, self.config.max_len)?;
        let seed = derive_seed(self.config.seed, &[stream::NEGATIVES, self.adam.step]);
        let lambda = self.config.effective_lambda();
        let (grads, losses) = gradients(&self.params, &batch, self.targets.as_ref(), lambda, self.config.rho, seed)?;
        let h = self.hyper();
        adam_step(&mut self.params, &grads, &mut self.adam, h);
        if let Some(name) = self.params.first_non_finite() {
            return Err(Error::NonFinite(format!("parameter block {name} after step {}", self.adam.step)));
        }
        Ok(losses)
    }

    /// Runs the next epoch and returns its metrics.
    pub fn run_epoch(&mut self) -> Result<EpochMetrics> {
        let start = Instant::now();
        let epoch = self.epoch;
        let mut order: Vec<usize> = (0..self.examples.len()).collect();
        order.shuffle(&mut rng_from(derive_seed(self.config.seed, &[stream::SHUFFLE, epoch])));
        let (mut totals, mut exs, mut ims) = (Vec::new(), Vec::new(), Vec::new());
        for chunk in order.chunks(self.config.batch_size) {
            let l = self.step(epoch, chunk)?;
            totals.push(l.total);
            exs.extend(l.neighbor);
            ims.extend(l.mlm);
        }
        self.epoch += 1;
        let seconds = if self.config.deterministic { 0.0 } else { start.elapsed().as_secs_f64() };
        let metrics = EpochMetrics {
            epoch: self.epoch,
            loss_total: mean(&totals).unwrap_or(0.0),
            loss_ex: self.targets.as_ref().and(mean(&exs)),
            loss_im: mean(&ims),
            seconds,
            step_losses: totals,
        };
        log::info!(
            "epoch {} total {:.4} ex {:?} im {:?}",
            metrics.epoch,
            metrics.loss_total,
            metrics.loss_ex,
            metrics.loss_im
        );
        Ok(metrics)
    }

    /// Trains until `config.epochs` epochs are complete, calling `on_epoch`
    /// after each one (e.g. to persist a checkpoint).
    pub fn train(&mut self, mut on_epoch: impl FnMut(&EpochMetrics, &Self) -> Result<()>) -> Result<Vec<EpochMetrics>> {
        let mut out = Vec::new();
        while self.epoch < self.config.epochs {
            let m = self.run_epoch()?;
            on_epoch(&m, self)?;
            out.push(m);
        }
        Ok(out)
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint {
            header: CheckpointHeader {
                model: self.params.config.clone(),
                step: self.adam.step,
                epoch: self.epoch,
                vocabulary: self.vocabulary.terms().iter().map(|t| t.to_string()).collect(),
                train: serde_json::to_value(&self.config)?,
            },
            params: self.params.clone(),
            moments: Some((self.adam.m.clone(), self.adam.v.clone())),
        })
    }
}

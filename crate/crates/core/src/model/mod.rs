//! Order-invariant transformer encoder with a masked-function head and a
//! per-token neighbourhood head.
//!
//! There is no positional encoding anywhere: every position sees the same
//! computation, so permuting the tokens of an example permutes its outputs.
//! Gradients are derived by hand in [`grad`].

pub mod checkpoint;
pub mod encoder;
pub mod grad;
pub mod loss;
pub mod ops;

use ndarray::{Array1, Array2};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from, stream};

pub use checkpoint::{Checkpoint, CheckpointHeader};
pub use encoder::{encode, encode_one, encode_sequence, forward, mlm_logits_for, ForwardOutput};
pub use grad::{grad_norm, gradients, loss, LossBreakdown};
pub use loss::{mlm_loss, neighborhood_loss, sample_neighbor_entries, total_loss, NeighborEntry, NeighborTargets};
pub use ops::{attention, layer_norm, masked_softmax, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    pub label_size: usize,
    /// Weight of the neighbourhood loss; `1 - lambda` weights the MLM loss.
    pub lambda: f64,
    /// Fraction of negative neighbourhood labels kept per position per step.
    pub neg_downsample: f64,
    /// Width of the input embedding table when it differs from `hidden`;
    /// a learned projection then maps it to `hidden`.
    pub proj_in: Option<usize>,
    /// `false` removes the neighbourhood head entirely.
    pub neighborhood_head: bool,
    pub layer_norm_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            layers: 4,
            heads: 4,
            ffn_dim: 1024,
            vocab_size: 0,
            label_size: 0,
            lambda: 0.5,
            neg_downsample: 0.001,
            proj_in: None,
            neighborhood_head: true,
            layer_norm_eps: 1e-12,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.hidden == 0 || self.heads == 0 || self.hidden % self.heads != 0 {
            return bad(format!("hidden {} must be a positive multiple of heads {}", self.hidden, self.heads));
        }
        if self.ffn_dim == 0 || self.vocab_size == 0 {
            return bad("ffn_dim and vocab_size must be positive".into());
        }
        if self.neighborhood_head && self.label_size == 0 {
            return bad("label_size must be positive when the neighbourhood head is enabled".into());
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda {} must lie in [0, 1]", self.lambda));
        }
        if !(self.neg_downsample > 0.0 && self.neg_downsample <= 1.0) {
            return bad(format!("neg_downsample {} must lie in (0, 1]", self.neg_downsample));
        }
        if self.proj_in == Some(0) {
            return bad("proj_in must be positive".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    /// Width of the token embedding table.
    pub fn embedding_dim(&self) -> usize {
        self.proj_in.unwrap_or(self.hidden)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    /// `[in x out]`
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

/// Output head stored as `[out x in]` so one label's weights are contiguous.
#[derive(Clone, Debug, PartialEq)]
pub struct Head<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T> {
    /// Query/key/value projections, `[d x d]`; head `h` owns columns
    /// `h*d_k..(h+1)*d_k`.
    pub wq: Array2<T>,
    pub wk: Array2<T>,
    pub wv: Array2<T>,
    pub wo: Array2<T>,
    pub ln1_gamma: Array1<T>,
    pub ln1_beta: Array1<T>,
    pub ffn_in: Linear<T>,
    pub ffn_out: Linear<T>,
    pub ln2_gamma: Array1<T>,
    pub ln2_beta: Array1<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParameters<T> {
    pub config: ModelConfig,
    /// `[vocab x embedding_dim]`
    pub token_embedding: Array2<T>,
    pub projection: Option<Linear<T>>,
    pub layers: Vec<LayerParams<T>>,
    pub mlm_head: Head<T>,
    pub neighbor_head: Option<Head<T>>,
}

/// Borrowed view of one named parameter block.
pub struct ParamBlock<'a, T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [T],
}

pub struct ParamBlockMut<'a, T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a mut [T],
}

fn xavier<T: Scalar>(rng: &mut crate::rng::Rng, fan_in: usize, fan_out: usize, shape: (usize, usize)) -> Array2<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_simple_fn(shape, || T::lit(rng.random_range(-limit..limit)))
}

impl<T: Scalar> ModelParameters<T> {
    /// Xavier-initialised weights with the token table copied from
    /// `embeddings` (which must have `vocab_size` rows).
    pub fn init(config: ModelConfig, embeddings: &EmbeddingMatrix, seed: u64) -> Result<Self> {
        let mut config = config;
        if embeddings.dim() != config.hidden {
            config.proj_in = Some(embeddings.dim());
        } else {
            config.proj_in = None;
        }
        if embeddings.rows() != config.vocab_size {
            return Err(Error::Shape(format!(
                "embedding matrix has {} rows, vocab_size is {}",
                embeddings.rows(),
                config.vocab_size
            )));
        }
        let table = Array2::from_shape_vec(
            (embeddings.rows(), embeddings.dim()),
            embeddings.as_slice().iter().map(|&v| T::lit(f64::from(v))).collect(),
        )
        .expect("embedding matrix is rectangular");
        Self::init_with_table(config, table, seed)
    }

    /// Xavier initialisation of everything, including the token table.
    pub fn init_random(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = rng_from(derive_seed(seed, &[stream::INIT, 1]));
        let e = config.embedding_dim();
        let table = xavier(&mut rng, config.vocab_size, e, (config.vocab_size, e));
        Self::init_with_table(config, table, seed)
    }

    fn init_with_table(config: ModelConfig, table: Array2<T>, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_from(derive_seed(seed, &[stream::INIT]));
        let d = config.hidden;
        let f = config.ffn_dim;
        let projection = config.proj_in.map(|e| Linear {
            weight: xavier(&mut rng, e, d, (e, d)),
            bias: Array1::zeros(d),
        });
        let layers = (0..config.layers)
            .map(|_| LayerParams {
                wq: xavier(&mut rng, d, d, (d, d)),
                wk: xavier(&mut rng, d, d, (d, d)),
                wv: xavier(&mut rng, d, d, (d, d)),
                wo: xavier(&mut rng, d, d, (d, d)),
                ln1_gamma: Array1::ones(d),
                ln1_beta: Array1::zeros(d),
                ffn_in: Linear { weight: xavier(&mut rng, d, f, (d, f)), bias: Array1::zeros(f) },
                ffn_out: Linear { weight: xavier(&mut rng, f, d, (f, d)), bias: Array1::zeros(d) },
                ln2_gamma: Array1::ones(d),
                ln2_beta: Array1::zeros(d),
            })
            .collect();
        let v = config.vocab_size;
        let mlm_head = Head { weight: xavier(&mut rng, d, v, (v, d)), bias: Array1::zeros(v) };
        let neighbor_head = config.neighborhood_head.then(|| {
            let l = config.label_size;
            Head { weight: xavier(&mut rng, d, l, (l, d)), bias: Array1::zeros(l) }
        });
        Ok(Self { config, token_embedding: table, projection, layers, mlm_head, neighbor_head })
    }

    /// Same shapes, all zeros. Used as the gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let z2 = |a: &Array2<T>| Array2::zeros(a.raw_dim());
        let z1 = |a: &Array1<T>| Array1::zeros(a.raw_dim());
        let lin = |l: &Linear<T>| Linear { weight: z2(&l.weight), bias: z1(&l.bias) };
        let head = |h: &Head<T>| Head { weight: z2(&h.weight), bias: z1(&h.bias) };
        Self {
            config: self.config.clone(),
            token_embedding: z2(&self.token_embedding),
            projection: self.projection.as_ref().map(lin),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    wq: z2(&l.wq),
                    wk: z2(&l.wk),
                    wv: z2(&l.wv),
                    wo: z2(&l.wo),
                    ln1_gamma: z1(&l.ln1_gamma),
                    ln1_beta: z1(&l.ln1_beta),
                    ffn_in: lin(&l.ffn_in),
                    ffn_out: lin(&l.ffn_out),
                    ln2_gamma: z1(&l.ln2_gamma),
                    ln2_beta: z1(&l.ln2_beta),
                })
                .collect(),
            mlm_head: head(&self.mlm_head),
            neighbor_head: self.neighbor_head.as_ref().map(head),
        }
    }

    /// Named blocks in a fixed order (the checkpoint order).
    pub fn blocks(&self) -> Vec<ParamBlock<'_, T>> {
        fn b<'a, T, D: ndarray::Dimension>(name: String, a: &'a ndarray::Array<T, D>) -> ParamBlock<'a, T> {
            ParamBlock { name, shape: a.shape().to_vec(), data: a.as_slice().expect("standard layout") }
        }
        let mut out = vec![b("embeddings.token".into(), &self.token_embedding)];
        if let Some(p) = &self.projection {
            out.push(b("embeddings.proj.weight".into(), &p.weight));
            out.push(b("embeddings.proj.bias".into(), &p.bias));
        }
        for (i, l) in self.layers.iter().enumerate() {
            out.push(b(format!("layer{i}.attn.wq"), &l.wq));
            out.push(b(format!("layer{i}.attn.wk"), &l.wk));
            out.push(b(format!("layer{i}.attn.wv"), &l.wv));
            out.push(b(format!("layer{i}.attn.wo"), &l.wo));
            out.push(b(format!("layer{i}.ln1.gamma"), &l.ln1_gamma));
            out.push(b(format!("layer{i}.ln1.beta"), &l.ln1_beta));
            out.push(b(format!("layer{i}.ffn.w1"), &l.ffn_in.weight));
            out.push(b(format!("layer{i}.ffn.b1"), &l.ffn_in.bias));
            out.push(b(format!("layer{i}.ffn.w2"), &l.ffn_out.weight));
            out.push(b(format!("layer{i}.ffn.b2"), &l.ffn_out.bias));
            out.push(b(format!("layer{i}.ln2.gamma"), &l.ln2_gamma));
            out.push(b(format!("layer{i}.ln2.beta"), &l.ln2_beta));
        }
        out.push(b("mlm.weight".into(), &self.mlm_head.weight));
        out.push(b("mlm.bias".into(), &self.mlm_head.bias));
        if let Some(h) = &self.neighbor_head {
            out.push(b("neighbor.weight".into(), &h.weight));
            out.push(b("neighbor.bias".into(), &h.bias));
        }
        out
    }

    /// Mutable counterpart of [`Self::blocks`], same order.
    pub fn blocks_mut(&mut self) -> Vec<ParamBlockMut<'_, T>> {
        fn b<'a, T, D: ndarray::Dimension>(name: String, a: &'a mut ndarray::Array<T, D>) -> ParamBlockMut<'a, T> {
            let shape = a.shape().to_vec();
            ParamBlockMut { name, shape, data: a.as_slice_mut().expect("standard layout") }
        }
        let mut out = vec![b("embeddings.token".into(), &mut self.token_embedding)];
        if let Some(p) = &mut self.projection {
            out.push(b("embeddings.proj.weight".into(), &mut p.weight));
            out.push(b("embeddings.proj.bias".into(), &mut p.bias));
        }
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.push(b(format!("layer{i}.attn.wq"), &mut l.wq));
            out.push(b(format!("layer{i}.attn.wk"), &mut l.wk));
            out.push(b(format!("layer{i}.attn.wv"), &mut l.wv));
            out.push(b(format!("layer{i}.attn.wo"), &mut l.wo));
            out.push(b(format!("layer{i}.ln1.gamma"), &mut l.ln1_gamma));
            out.push(b(format!("layer{i}.ln1.beta"), &mut l.ln1_beta));
            out.push(b(format!("layer{i}.ffn.w1"), &mut l.ffn_in.weight));
            out.push(b(format!("layer{i}.ffn.b1"), &mut l.ffn_in.bias));
            out.push(b(format!("layer{i}.ffn.w2"), &mut l.ffn_out.weight));
            out.push(b(format!("layer{i}.ffn.b2"), &mut l.ffn_out.bias));
            out.push(b(format!("layer{i}.ln2.gamma"), &mut l.ln2_gamma));
            out.push(b(format!("layer{i}.ln2.beta"), &mut l.ln2_beta));
        }
        out.push(b("mlm.weight".into(), &mut self.mlm_head.weight));
        out.push(b("mlm.bias".into(), &mut self.mlm_head.bias));
        if let Some(h) = &mut self.neighbor_head {
            out.push(b("neighbor.weight".into(), &mut h.weight));
            out.push(b("neighbor.bias".into(), &mut h.bias));
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.blocks().iter().map(|b| b.data.len()).sum()
    }

    /// First block holding a non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<String> {
        self.blocks().into_iter().find(|b| b.data.iter().any(|v| !v.is_finite())).map(|b| b.name)
    }

    /// Element-type conversion (e.g. `f32` checkpoint to `f64` for checks).
    pub fn cast<U: Scalar>(&self) -> ModelParameters<U> {
        let mut out = ModelParameters::<U> {
            config: self.config.clone(),
            token_embedding: self.token_embedding.mapv(|v| U::lit(v.as_f64())),
            projection: None,
            layers: Vec::new(),
            mlm_head: Head { weight: Array2::zeros((0, 0)), bias: Array1::zeros(0) },
            neighbor_head: None,
        };
        let c2 = |a: &Array2<T>| a.mapv(|v| U::lit(v.as_f64()));
        let c1 = |a: &Array1<T>| a.mapv(|v| U::lit(v.as_f64()));
        out.projection = self.projection.as_ref().map(|p| Linear { weight: c2(&p.weight), bias: c1(&p.bias) });
        out.layers = self
            .layers
            .iter()
            .map(|l| LayerParams {
                wq: c2(&l.wq),
                wk: c2(&l.wk),
                wv: c2(&l.wv),
                wo: c2(&l.wo),
                ln1_gamma: c1(&l.ln1_gamma),
                ln1_beta: c1(&l.ln1_beta),
                ffn_in: Linear { weight: c2(&l.ffn_in.weight), bias: c1(&l.ffn_in.bias) },
                ffn_out: Linear { weight: c2(&l.ffn_out.weight), bias: c1(&l.ffn_out.bias) },
                ln2_gamma: c1(&l.ln2_gamma),
                ln2_beta: c1(&l.ln2_beta),
            })
            .collect();
        out.mlm_head = Head { weight: c2(&self.mlm_head.weight), bias: c1(&self.mlm_head.bias) };
        out.neighbor_head = self.neighbor_head.as_ref().map(|h| Head { weight: c2(&h.weight), bias: c1(&h.bias) });
        out
    }
}

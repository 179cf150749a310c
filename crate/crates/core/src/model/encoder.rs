//! Forward pass with the activations the backward pass needs.
//!
//! Each example is compacted to its non-PAD positions before the encoder
//! runs. Masking PAD keys with `-inf` makes them contribute nothing, so the
//! compacted computation is exactly the masked one, and PAD positions simply
//! get a zero hidden state.

use ndarray::{s, Array2, Array3, Axis};

use super::ops::{attention_with_probs, layer_norm_cached, LayerNormOut, Scalar};
use super::{LayerParams, ModelParameters};
use crate::error::{Error, Result};
use crate::masking::MaskedBatch;

pub(crate) struct LayerCache<T> {
    pub x: Array2<T>,
    pub q: Array2<T>,
    pub k: Array2<T>,
    pub v: Array2<T>,
    pub probs: Vec<Array2<T>>,
    pub ctx: Array2<T>,
    pub ln1: LayerNormOut<T>,
    pub z1: Array2<T>,
    pub a1: Array2<T>,
    pub ln2: LayerNormOut<T>,
}

pub(crate) struct ExampleCache<T> {
    /// Sequence positions of the tokens, in order.
    pub positions: Vec<usize>,
    pub tokens: Vec<u32>,
    /// Token table rows before the optional input projection.
    pub x0: Array2<T>,
    pub layers: Vec<LayerCache<T>>,
    /// Final hidden states, `[n x d]`.
    pub hidden: Array2<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput<T> {
    /// `[B x S x d]`, zero at PAD positions.
    pub hidden_states: Array3<T>,
    /// `[B x S x vocab_size]`
    pub mlm_logits: Array3<T>,
    /// `[B x S x L]`, absent when the neighbourhood head is removed.
    pub neighbor_logits: Option<Array3<T>>,
}

fn layer_forward<T: Scalar>(p: &LayerParams<T>, x: Array2<T>, heads: usize, eps: T) -> LayerCache<T> {
    let n = x.nrows();
    let d = x.ncols();
    let dk = d / heads;
    let q = x.dot(&p.wq);
    let k = x.dot(&p.wk);
    let v = x.dot(&p.wv);
    let all = vec![true; n];
    let mut ctx = Array2::zeros((n, d));
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = s![.., h * dk..(h + 1) * dk];
        let (pr, c) = attention_with_probs(q.slice(cols), k.slice(cols), v.slice(cols), &all);
        ctx.slice_mut(cols).assign(&c);
        probs.push(pr);
    }
    let r1 = &x + &ctx.dot(&p.wo);
    let ln1 = layer_norm_cached(&r1, p.ln1_gamma.view(), p.ln1_beta.view(), eps);
    let z1 = ln1.y.dot(&p.ffn_in.weight) + &p.ffn_in.bias;
    let a1 = z1.mapv(|z| z.max(T::zero()));
    let r2 = &ln1.y + &(a1.dot(&p.ffn_out.weight) + &p.ffn_out.bias);
    let ln2 = layer_norm_cached(&r2, p.ln2_gamma.view(), p.ln2_beta.view(), eps);
    LayerCache { x, q, k, v, probs, ctx, ln1, z1, a1, ln2 }
}

/// Runs the encoder on one example's tokens (PAD already removed).
pub(crate) fn encode_tokens<T: Scalar>(params: &ModelParameters<T>, tokens: &[u32], positions: Vec<usize>) -> ExampleCache<T> {
    let cfg = &params.config;
    let e = params.token_embedding.ncols();
    let mut x0 = Array2::zeros((tokens.len(), e));
    for (i, &t) in tokens.iter().enumerate() {
        x0.row_mut(i).assign(&params.token_embedding.row(t as usize));
    }
    let mut x = match &params.projection {
        Some(p) => x0.dot(&p.weight) + &p.bias,
        None => x0.clone(),
    };
    let eps = T::lit(cfg.layer_norm_eps);
    let mut layers = Vec::with_capacity(params.layers.len());
    if !tokens.is_empty() {
        for lp in &params.layers {
            let cache = layer_forward(lp, x, cfg.heads, eps);
            x = cache.ln2.y.clone();
            layers.push(cache);
        }
    }
    ExampleCache { positions, tokens: tokens.to_vec(), x0, layers, hidden: x }
}

pub(crate) fn check_batch<T: Scalar>(params: &ModelParameters<T>, batch: &MaskedBatch) -> Result<()> {
    let n = batch.batch * batch.seq;
    if batch.input_ids.len() != n
        || batch.attention_mask.len() != n
        || batch.labels.len() != n
        || batch.original_ids.len() != n
    {
        return Err(Error::Shape(format!("batch arrays do not match {} x {}", batch.batch, batch.seq)));
    }
    let vocab = params.config.vocab_size as u32;
    if let Some(t) = batch.input_ids.iter().chain(&batch.original_ids).find(|&&t| t >= vocab) {
        return Err(Error::Shape(format!("token id {t} outside vocabulary of {vocab}")));
    }
    if let Some(Some(t)) = batch.labels.iter().find(|l| l.is_some_and(|t| t >= vocab)) {
        return Err(Error::Shape(format!("label {t} outside vocabulary of {vocab}")));
    }
    if params.token_embedding.nrows() != params.config.vocab_size {
        return Err(Error::Shape("token table rows differ from vocab_size".into()));
    }
    Ok(())
}

/// Encodes every example of the batch.
pub(crate) fn encode_batch<T: Scalar>(params: &ModelParameters<T>, batch: &MaskedBatch) -> Result<Vec<ExampleCache<T>>> {
    check_batch(params, batch)?;
    let caches: Vec<ExampleCache<T>> = (0..batch.batch)
        .map(|b| {
            let ids = batch.row(&batch.input_ids, b);
            let mask = batch.row(&batch.attention_mask, b);
            let positions: Vec<usize> = (0..batch.seq).filter(|&s| mask[s] != 0).collect();
            let tokens: Vec<u32> = positions.iter().map(|&s| ids[s]).collect();
            encode_tokens(params, &tokens, positions)
        })
        .collect();
    if caches.iter().any(|c| c.hidden.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite("encoder hidden states".into()));
    }
    Ok(caches)
}

/// Hidden states only, `[B x S x d]` with zeros at PAD positions.
pub fn encode<T: Scalar>(params: &ModelParameters<T>, batch: &MaskedBatch) -> Result<Array3<T>> {
    let caches = encode_batch(params, batch)?;
    let mut hidden = Array3::zeros((batch.batch, batch.seq, params.config.hidden));
    for (b, c) in caches.iter().enumerate() {
        for (i, &s) in c.positions.iter().enumerate() {
            hidden.slice_mut(s![b, s, ..]).assign(&c.hidden.row(i));
        }
    }
    Ok(hidden)
}

/// Full forward pass: hidden states and both heads at every position.
pub fn forward<T: Scalar>(params: &ModelParameters<T>, batch: &MaskedBatch) -> Result<ForwardOutput<T>> {
    let hidden_states = encode(params, batch)?;
    let d = params.config.hidden;
    let flat = hidden_states.view().into_shape_with_order((batch.batch * batch.seq, d)).expect("contiguous");
    let head = |w: &Array2<T>, bias: &ndarray::Array1<T>| {
        let logits = flat.dot(&w.t()) + bias;
        logits.into_shape_with_order((batch.batch, batch.seq, w.nrows())).expect("contiguous")
    };
    let mlm_logits = head(&params.mlm_head.weight, &params.mlm_head.bias);
    let neighbor_logits = params.neighbor_head.as_ref().map(|h| head(&h.weight, &h.bias));
    Ok(ForwardOutput { hidden_states, mlm_logits, neighbor_logits })
}

/// MLM logits for a single hidden state.
pub fn mlm_logits_for<T: Scalar>(params: &ModelParameters<T>, hidden: ndarray::ArrayView1<T>) -> ndarray::Array1<T> {
    params.mlm_head.weight.dot(&hidden) + &params.mlm_head.bias
}

/// Hidden states `[n x d]` of a single PAD-free token sequence.
pub fn encode_sequence<T: Scalar>(params: &ModelParameters<T>, tokens: &[u32]) -> Result<Array2<T>> {
    let vocab = params.config.vocab_size as u32;
    if let Some(t) = tokens.iter().find(|&&t| t >= vocab) {
        return Err(Error::Shape(format!("token id {t} outside vocabulary of {vocab}")));
    }
    let cache = encode_tokens(params, tokens, (0..tokens.len()).collect());
    if cache.hidden.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("encoder hidden states".into()));
    }
    Ok(cache.hidden)
}

/// Hidden state at one position of a single token sequence.
pub fn encode_one<T: Scalar>(params: &ModelParameters<T>, tokens: &[u32], position: usize) -> Result<ndarray::Array1<T>> {
    let vocab = params.config.vocab_size as u32;
    if let Some(t) = tokens.iter().find(|&&t| t >= vocab) {
        return Err(Error::Shape(format!("token id {t} outside vocabulary of {vocab}")));
    }
    if position >= tokens.len() {
        return Err(Error::Shape(format!("position {position} outside {} tokens", tokens.len())));
    }
    let cache = encode_tokens(params, tokens, (0..tokens.len()).collect());
    Ok(cache.hidden.index_axis(Axis(0), position).to_owned())
}

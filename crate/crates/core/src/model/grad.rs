//! Training objective evaluated sparsely, with hand-derived gradients.
//!
//! Only the rows that enter the loss are projected through the heads: MLM
//! logits at labelled positions and neighbourhood logits at sampled entries.

use ndarray::{s, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::encoder::{encode_batch, ExampleCache, LayerCache};
use super::loss::{sample_neighbor_entries, total_loss, NeighborTargets};
use super::ops::{bce_with_logit, layer_norm_backward, log_sum_exp, sigmoid, softmax_backward, Scalar};
use super::{LayerParams, ModelParameters};
use crate::error::{Error, Result};
use crate::masking::MaskedBatch;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    /// Absent when the batch has no labelled position.
    pub mlm: Option<f64>,
    /// Absent when the model has no neighbourhood head.
    pub neighbor: Option<f64>,
    pub mlm_positions: usize,
    pub neighbor_entries: usize,
}

/// Loss of the batch without gradients (same sampling as [`gradients`]).
pub fn loss<T: Scalar>(
    params: &ModelParameters<T>,
    batch: &MaskedBatch,
    targets: Option<&NeighborTargets>,
    lambda: f64,
    rho: f64,
    seed: u64,
) -> Result<LossBreakdown> {
    objective(params, batch, targets, lambda, rho, seed, false).map(|(l, _)| l)
}

/// Exact gradients of `lambda * L_ex + (1 - lambda) * L_im`.
///
/// A part whose weight is zero is still reported in the breakdown but is not
/// back-propagated, so its head receives exactly zero gradient.
pub fn gradients<T: Scalar>(
    params: &ModelParameters<T>,
    batch: &MaskedBatch,
    targets: Option<&NeighborTargets>,
    lambda: f64,
    rho: f64,
    seed: u64,
) -> Result<(ModelParameters<T>, LossBreakdown)> {
    let (l, g) = objective(params, batch, targets, lambda, rho, seed, true)?;
    let g = g.expect("gradients requested");
    if let Some(name) = g.first_non_finite() {
        return Err(Error::NonFinite(format!("gradient of {name}")));
    }
    Ok((g, l))
}

#[allow(clippy::too_many_arguments)]
fn objective<T: Scalar>(
    params: &ModelParameters<T>,
    batch: &MaskedBatch,
    targets: Option<&NeighborTargets>,
    lambda: f64,
    rho: f64,
    seed: u64,
    want_grad: bool,
) -> Result<(LossBreakdown, Option<ModelParameters<T>>)> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!("lambda {lambda} must lie in [0, 1]")));
    }
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::InvalidArgument(format!("rho {rho} must lie in (0, 1]")));
    }
    let caches = encode_batch(params, batch)?;
    let d = params.config.hidden;
    let mut grads = want_grad.then(|| params.zeros_like());
    let mut dh: Vec<Array2<T>> = caches.iter().map(|c| Array2::zeros((c.tokens.len(), d))).collect();

    // Flat batch position -> (example, compacted row).
    let mut slot = vec![None; batch.batch * batch.seq];
    for (b, c) in caches.iter().enumerate() {
        for (i, &s) in c.positions.iter().enumerate() {
            slot[b * batch.seq + s] = Some((b, i));
        }
    }

    // Masked-function head.
    let labelled: Vec<(usize, usize, usize)> = batch
        .labels
        .iter()
        .enumerate()
        .filter_map(|(p, l)| l.and_then(|l| slot[p].map(|(b, i)| (b, i, l as usize))))
        .collect();
    let mut mlm = None;
    if !labelled.is_empty() {
        let m = labelled.len();
        let mut hm = Array2::zeros((m, d));
        for (r, &(b, i, _)) in labelled.iter().enumerate() {
            hm.row_mut(r).assign(&caches[b].hidden.row(i));
        }
        let head = &params.mlm_head;
        let mut logits = hm.dot(&head.weight.t()) + &head.bias;
        let mut sum = 0.0;
        for (r, &(_, _, label)) in labelled.iter().enumerate() {
            let row = logits.row(r);
            sum += (log_sum_exp(row) - row[label]).as_f64();
        }
        mlm = Some(sum / m as f64);
        if let (Some(g), true) = (grads.as_mut(), lambda < 1.0) {
            let scale = T::lit((1.0 - lambda) / m as f64);
            for (r, &(_, _, label)) in labelled.iter().enumerate() {
                let mut row = logits.row_mut(r);
                let lse = log_sum_exp(row.view());
                row.mapv_inplace(|z| (z - lse).exp() * scale);
                row[label] -= scale;
            }
            g.mlm_head.weight += &logits.t().dot(&hm);
            g.mlm_head.bias += &logits.sum_axis(Axis(0));
            let dhm = logits.dot(&head.weight);
            for (r, &(b, i, _)) in labelled.iter().enumerate() {
                let mut row = dh[b].row_mut(i);
                row += &dhm.row(r);
            }
        }
    }

    // Neighbourhood head.
    let mut neighbor = None;
    let mut entry_count = 0;
    if let (Some(head), Some(targets)) = (&params.neighbor_head, targets) {
        if head.weight.nrows() != targets.label_size() {
            return Err(Error::Shape(format!(
                "head has {} labels, targets have {}",
                head.weight.nrows(),
                targets.label_size()
            )));
        }
        let entries = sample_neighbor_entries(batch, targets, rho, seed);
        entry_count = entries.len();
        let mut sum = 0.0;
        let scale = T::lit(lambda / entries.len().max(1) as f64);
        for e in &entries {
            let (b, i) = slot[e.position].expect("entries come from non-PAD positions");
            let h = caches[b].hidden.row(i);
            let w = head.weight.row(e.label as usize);
            let z = w.dot(&h) + head.bias[e.label as usize];
            let y = if e.positive { T::one() } else { T::zero() };
            sum += bce_with_logit(z, y).as_f64();
            if let (Some(g), true) = (grads.as_mut(), lambda > 0.0) {
                let dz = (sigmoid(z) - y) * scale;
                let gh = g.neighbor_head.as_mut().expect("gradient mirrors parameters");
                gh.weight.row_mut(e.label as usize).scaled_add(dz, &h);
                gh.bias[e.label as usize] += dz;
                dh[b].row_mut(i).scaled_add(dz, &w);
            }
        }
        neighbor = Some(if entries.is_empty() { 0.0 } else { sum / entries.len() as f64 });
    }

    let total = total_loss(mlm, neighbor, lambda);
    if !total.is_finite() {
        return Err(Error::NonFinite("training loss".into()));
    }
    if let Some(g) = grads.as_mut() {
        for (cache, dh) in caches.iter().zip(dh) {
            if !cache.tokens.is_empty() {
                backward_example(params, cache, dh, g);
            }
        }
    }
    let breakdown =
        LossBreakdown { total, mlm, neighbor, mlm_positions: labelled.len(), neighbor_entries: entry_count };
    Ok((breakdown, grads))
}

fn backward_layer<T: Scalar>(
    p: &LayerParams<T>,
    c: &LayerCache<T>,
    d_out: Array2<T>,
    heads: usize,
    g: &mut LayerParams<T>,
) -> Array2<T> {
    // Second sub-layer: r2 = h1 + FFN(h1), out = LN2(r2).
    let dr2 = layer_norm_backward(&d_out, &c.ln2, p.ln2_gamma.view(), &mut g.ln2_gamma, &mut g.ln2_beta);
    g.ffn_out.weight += &c.a1.t().dot(&dr2);
    g.ffn_out.bias += &dr2.sum_axis(Axis(0));
    let mut dz1 = dr2.dot(&p.ffn_out.weight.t());
    dz1.zip_mut_with(&c.z1, |dz, &z| {
        if z <= T::zero() {
            *dz = T::zero();
        }
    });
    g.ffn_in.weight += &c.ln1.y.t().dot(&dz1);
    g.ffn_in.bias += &dz1.sum_axis(Axis(0));
    let dh1 = dr2 + dz1.dot(&p.ffn_in.weight.t());

    // First sub-layer: r1 = x + Attn(x) W_o, h1 = LN1(r1).
    let dr1 = layer_norm_backward(&dh1, &c.ln1, p.ln1_gamma.view(), &mut g.ln1_gamma, &mut g.ln1_beta);
    g.wo += &c.ctx.t().dot(&dr1);
    let dctx = dr1.dot(&p.wo.t());
    let (n, d) = c.x.dim();
    let dk = d / heads;
    let scale = T::one() / T::from_usize(dk).unwrap().sqrt();
    let mut dq = Array2::zeros((n, d));
    let mut dkm = Array2::zeros((n, d));
    let mut dv = Array2::zeros((n, d));
    for h in 0..heads {
        let cols = s![.., h * dk..(h + 1) * dk];
        let probs = &c.probs[h];
        let dctx_h = dctx.slice(cols);
        let d_probs = dctx_h.dot(&c.v.slice(cols).t());
        dv.slice_mut(cols).assign(&probs.t().dot(&dctx_h));
        let mut dscores = softmax_backward(probs, &d_probs);
        dscores.mapv_inplace(|v| v * scale);
        dq.slice_mut(cols).assign(&dscores.dot(&c.k.slice(cols)));
        dkm.slice_mut(cols).assign(&dscores.t().dot(&c.q.slice(cols)));
    }
    g.wq += &c.x.t().dot(&dq);
    g.wk += &c.x.t().dot(&dkm);
    g.wv += &c.x.t().dot(&dv);
    dr1 + dq.dot(&p.wq.t()) + dkm.dot(&p.wk.t()) + dv.dot(&p.wv.t())
}

fn backward_example<T: Scalar>(
    params: &ModelParameters<T>,
    cache: &ExampleCache<T>,
    dh: Array2<T>,
    g: &mut ModelParameters<T>,
) {
    let mut d = dh;
    for ((p, c), gl) in params.layers.iter().zip(&cache.layers).zip(g.layers.iter_mut()).rev() {
        d = backward_layer(p, c, d, params.config.heads, gl);
    }
    let dx0 = match (&params.projection, g.projection.as_mut()) {
        (Some(p), Some(gp)) => {
            gp.weight += &cache.x0.t().dot(&d);
            gp.bias += &d.sum_axis(Axis(0));
            d.dot(&p.weight.t())
        }
        _ => d,
    };
    for (i, &t) in cache.tokens.iter().enumerate() {
        let mut row = g.token_embedding.row_mut(t as usize);
        row += &dx0.row(i);
    }
}

/// Sum of squared gradient entries, for diagnostics.
pub fn grad_norm<T: Scalar>(g: &ModelParameters<T>) -> f64 {
    g.blocks().iter().flat_map(|b| b.data.iter()).map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt()
}

//! Masked-function cross-entropy, sampled neighbourhood BCE, and their mix.

use ndarray::s;
use rand::Rng as _;

use super::encoder::ForwardOutput;
use super::ops::{bce_with_logit, log_sum_exp, Scalar};
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::masking::MaskedBatch;
use crate::ontology::{GoDag, RelationSet};
use crate::rng::{derive_seed, rng_from, stream};

/// Positive neighbourhood labels of every vocabulary id. Special tokens have
/// no row and are skipped by the neighbourhood loss.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborTargets {
    rows: Vec<Vec<u32>>,
    label_size: usize,
}

impl NeighborTargets {
    pub fn from_dag(dag: &GoDag, kinds: RelationSet) -> Self {
        let mut rows = vec![Vec::new(); Vocabulary::TERM_OFFSET];
        rows.extend(dag.neighborhoods(kinds));
        Self { rows, label_size: dag.len() }
    }

    /// Builds targets from explicit per-vocabulary-id positive lists.
    pub fn from_rows(rows: Vec<Vec<u32>>, label_size: usize) -> Result<Self> {
        if rows.iter().flatten().any(|&l| l as usize >= label_size) {
            return Err(Error::Shape(format!("neighbour label outside 0..{label_size}")));
        }
        let rows = rows
            .into_iter()
            .map(|mut r| {
                r.sort_unstable();
                r.dedup();
                r
            })
            .collect();
        Ok(Self { rows, label_size })
    }

    pub fn label_size(&self) -> usize {
        self.label_size
    }

    /// Positives for a vocabulary id; `None` for specials and unknown ids.
    pub fn positives(&self, token: u32) -> Option<&[u32]> {
        if Vocabulary::is_special(token) {
            return None;
        }
        self.rows.get(token as usize).map(Vec::as_slice)
    }
}

/// One sampled neighbourhood label: flat batch position, label index, target.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NeighborEntry {
    pub position: usize,
    pub label: u32,
    pub positive: bool,
}

/// All positive labels of each non-PAD position plus each negative label kept
/// independently with probability `rho`. Targets come from the uncorrupted
/// token. Entries are ordered by position, then label.
pub fn sample_neighbor_entries(batch: &MaskedBatch, targets: &NeighborTargets, rho: f64, seed: u64) -> Vec<NeighborEntry> {
    let mut rng = rng_from(derive_seed(seed, &[stream::NEGATIVES]));
    let log_miss = (1.0 - rho).ln();
    let mut out = Vec::new();
    for pos in 0..batch.batch * batch.seq {
        if batch.attention_mask[pos] == 0 {
            continue;
        }
        let Some(positives) = targets.positives(batch.original_ids[pos]) else {
            continue;
        };
        let negatives = (targets.label_size() - positives.len()) as u64;
        // Geometric gaps between kept negatives, measured as ranks within the
        // negative labels. Same distribution as one Bernoulli draw per label.
        let mut rank = 0u64;
        let mut pi = 0usize;
        loop {
            if rho < 1.0 {
                let u: f64 = 1.0 - rng.random::<f64>();
                let gap = (u.ln() / log_miss).floor();
                if !(gap < (negatives - rank.min(negatives)) as f64) {
                    break;
                }
                rank += gap as u64;
            }
            if rank >= negatives {
                break;
            }
            while pi < positives.len() && u64::from(positives[pi]) <= rank + pi as u64 {
                out.push(NeighborEntry { position: pos, label: positives[pi], positive: true });
                pi += 1;
            }
            out.push(NeighborEntry { position: pos, label: (rank + pi as u64) as u32, positive: false });
            rank += 1;
        }
        for &p in &positives[pi..] {
            out.push(NeighborEntry { position: pos, label: p, positive: true });
        }
    }
    out
}

/// Mean cross-entropy over the labelled positions.
pub fn mlm_loss<T: Scalar>(output: &ForwardOutput<T>, labels: &[Option<u32>]) -> Result<T> {
    let (b, s, _) = output.mlm_logits.dim();
    if labels.len() != b * s {
        return Err(Error::Shape(format!("{} labels for a {b} x {s} batch", labels.len())));
    }
    let mut total = 0.0f64;
    let mut count = 0usize;
    for (i, label) in labels.iter().enumerate() {
        let Some(label) = label else { continue };
        let logits = output.mlm_logits.slice(s![i / s, i % s, ..]);
        total += (log_sum_exp(logits) - logits[*label as usize]).as_f64();
        count += 1;
    }
    if count == 0 {
        return Err(Error::InvalidArgument("every position is ignored; the MLM loss is undefined".into()));
    }
    Ok(T::lit(total / count as f64))
}

/// Mean BCE over the entries drawn by [`sample_neighbor_entries`]. Zero when
/// nothing was sampled.
pub fn neighborhood_loss<T: Scalar>(
    output: &ForwardOutput<T>,
    targets: &NeighborTargets,
    batch: &MaskedBatch,
    rho: f64,
    seed: u64,
) -> Result<T> {
    let logits = output
        .neighbor_logits
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("model has no neighbourhood head".into()))?;
    if logits.dim().2 != targets.label_size() {
        return Err(Error::Shape(format!("head has {} labels, targets have {}", logits.dim().2, targets.label_size())));
    }
    let entries = sample_neighbor_entries(batch, targets, rho, seed);
    if entries.is_empty() {
        return Ok(T::zero());
    }
    let total: f64 = entries
        .iter()
        .map(|e| {
            let z = logits[[e.position / batch.seq, e.position % batch.seq, e.label as usize]];
            bce_with_logit(z, if e.positive { T::one() } else { T::zero() }).as_f64()
        })
        .sum();
    Ok(T::lit(total / entries.len() as f64))
}

/// `lambda * L_ex + (1 - lambda) * L_im`; an absent part contributes zero.
pub fn total_loss<T: Scalar>(mlm: Option<T>, neighbor: Option<T>, lambda: f64) -> T {
    let l = T::lit(lambda);
    let mut total = T::zero();
    if let Some(ex) = neighbor {
        if lambda != 0.0 {
            total += l * ex;
        }
    }
    if let Some(im) = mlm {
        if lambda != 1.0 {
            total += (T::one() - l) * im;
        }
    }
    total
}

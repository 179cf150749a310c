//! DAG-aware masking for the masked-function recovery task.
//!
//! A position is maskable when its term is not a namespace root and none of
//! the term's immediate predecessors appear in the same annotation set (a
//! present predecessor would give the answer away). Selected positions are
//! corrupted 80/10/10 into `[MASK]`, a random term, or left unchanged.

use std::collections::HashSet;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::ontology::GoDag;
use crate::rng::rng_from;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskingMode {
    /// Root and predecessor exclusions applied.
    #[default]
    Strategy,
    /// Every position is a candidate (plain BERT-style masking).
    Naive,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskConfig {
    pub alpha: f64,
    pub mode: MaskingMode,
    /// Select one candidate when the Bernoulli draws select none.
    pub force_one: bool,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self { alpha: 0.15, mode: MaskingMode::Strategy, force_one: true }
    }
}

impl MaskConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidArgument(format!("alpha_mask {} must lie in (0, 1]", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", content = "token", rename_all = "snake_case")]
pub enum MaskAction {
    Mask,
    /// Replaced by this (non-special) vocabulary id.
    Random(u32),
    Keep,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskPlan {
    pub candidates: Vec<usize>,
    pub selected: Vec<(usize, MaskAction)>,
    pub alpha: f64,
    pub seed: u64,
    /// Whether the single selection was forced by the force-one rule.
    pub forced: bool,
}

impl MaskPlan {
    /// No candidate exists, so the example gives no recovery signal.
    pub fn is_unusable(&self) -> bool {
        self.candidates.is_empty()
    }
}

/// Positions of `terms` (DAG indices) eligible for masking.
pub fn mask_candidates(terms: &[usize], dag: &GoDag, mode: MaskingMode) -> Vec<usize> {
    match mode {
        MaskingMode::Naive => (0..terms.len()).collect(),
        MaskingMode::Strategy => {
            let present: HashSet<usize> = terms.iter().copied().collect();
            terms
                .iter()
                .enumerate()
                .filter(|&(_, &t)| !dag.is_root(t))
                .filter(|&(_, &t)| !dag.predecessors_of(t).iter().any(|(p, _)| present.contains(p)))
                .map(|(pos, _)| pos)
                .collect()
        }
    }
}

/// Bernoulli(`alpha`) selection over `candidates`, then 80/10/10 corruption.
/// Random replacements are drawn uniformly from the term ids of a vocabulary
/// of `vocab_len` tokens. Returns the selection and whether it was forced.
pub fn sample_mask(
    candidates: &[usize],
    alpha: f64,
    seed: u64,
    vocab_len: usize,
    force_one: bool,
) -> (Vec<(usize, MaskAction)>, bool) {
    let mut rng = rng_from(seed);
    let mut chosen: Vec<usize> = candidates.iter().copied().filter(|_| rng.random::<f64>() < alpha).collect();
    let mut forced = false;
    if chosen.is_empty() && !candidates.is_empty() && force_one {
        chosen.push(candidates[rng.random_range(0..candidates.len())]);
        forced = true;
    }
    let first_term = Vocabulary::TERM_OFFSET as u32;
    let selected = chosen
        .into_iter()
        .map(|pos| {
            let u = rng.random::<f64>();
            let action = if u < 0.8 {
                MaskAction::Mask
            } else if u < 0.9 && vocab_len > Vocabulary::TERM_OFFSET {
                MaskAction::Random(rng.random_range(first_term..vocab_len as u32))
            } else if u < 0.9 {
                MaskAction::Mask
            } else {
                MaskAction::Keep
            };
            (pos, action)
        })
        .collect();
    (selected, forced)
}

/// Candidates plus sampled selection for one example.
pub fn plan_mask(terms: &[usize], dag: &GoDag, config: &MaskConfig, seed: u64, vocab_len: usize) -> MaskPlan {
    let candidates = mask_candidates(terms, dag, config.mode);
    let (selected, forced) = sample_mask(&candidates, config.alpha, seed, vocab_len, config.force_one);
    MaskPlan { candidates, selected, alpha: config.alpha, seed, forced }
}

/// Rectangular, PAD-padded batch. Matrices are row-major `[batch x seq]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskedBatch {
    pub batch: usize,
    pub seq: usize,
    pub input_ids: Vec<u32>,
    /// Original token at corrupted positions; `None` means ignored.
    pub labels: Vec<Option<u32>>,
    pub attention_mask: Vec<u8>,
    /// Uncorrupted tokens, used for the neighbourhood targets.
    pub original_ids: Vec<u32>,
}

impl MaskedBatch {
    pub fn row<'a, T>(&self, data: &'a [T], b: usize) -> &'a [T] {
        &data[b * self.seq..(b + 1) * self.seq]
    }

    /// Number of supervised (non-ignored) positions.
    pub fn label_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_some()).count()
    }

    /// Unmasked batch of raw token rows (no labels).
    pub fn from_rows(rows: &[Vec<u32>]) -> Self {
        let seq = rows.iter().map(Vec::len).max().unwrap_or(0);
        let mut input_ids = vec![Vocabulary::PAD; rows.len() * seq];
        let mut attention_mask = vec![0u8; rows.len() * seq];
        for (b, row) in rows.iter().enumerate() {
            for (s, &tok) in row.iter().enumerate() {
                input_ids[b * seq + s] = tok;
                attention_mask[b * seq + s] = u8::from(tok != Vocabulary::PAD);
            }
        }
        MaskedBatch {
            batch: rows.len(),
            seq,
            labels: vec![None; input_ids.len()],
            original_ids: input_ids.clone(),
            input_ids,
            attention_mask,
        }
    }
}

/// Pads `examples` (vocabulary ids) to the longest row and applies `plans`.
pub fn collate(examples: &[Vec<u32>], plans: &[MaskPlan], max_len: usize) -> Result<MaskedBatch> {
    if examples.len() != plans.len() {
        return Err(Error::Shape(format!("{} examples but {} plans", examples.len(), plans.len())));
    }
    if let Some((i, e)) = examples.iter().enumerate().find(|(_, e)| e.len() > max_len) {
        return Err(Error::InvalidArgument(format!("example {i} has {} tokens, max_len is {max_len}", e.len())));
    }
    let mut batch = MaskedBatch::from_rows(examples);
    for (b, plan) in plans.iter().enumerate() {
        for &(pos, action) in &plan.selected {
            if pos >= examples[b].len() {
                return Err(Error::Shape(format!("plan position {pos} outside example {b}")));
            }
            let idx = b * batch.seq + pos;
            batch.labels[idx] = Some(batch.original_ids[idx]);
            batch.input_ids[idx] = match action {
                MaskAction::Mask => Vocabulary::MASK,
                MaskAction::Random(tok) => tok,
                MaskAction::Keep => batch.original_ids[idx],
            };
        }
    }
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ontology::parse_obo;

    fn dag() -> GoDag {
        let text = "[Term]\nid: GO:0000001\nname: biological_process\nnamespace: biological_process\n\n\
[Term]\nid: GO:0000002\nname: b\nnamespace: biological_process\nis_a: GO:0000001\n\n\
[Term]\nid: GO:0000003\nname: a\nnamespace: biological_process\nis_a: GO:0000002\n\n\
[Term]\nid: GO:0000004\nname: c\nnamespace: biological_process\nis_a: GO:0000001\n";
        parse_obo(text.as_bytes()).unwrap()
    }

    #[test]
    fn root_only_gene_has_no_candidates() {
        assert!(mask_candidates(&[0], &dag(), MaskingMode::Strategy).is_empty());
        let (sel, forced) = sample_mask(&[], 0.5, 1, 10, true);
        assert!(sel.is_empty() && !forced);
    }

    #[test]
    fn successor_of_present_term_is_excluded() {
        // A = GO:0000003 (index 2) is_a B = GO:0000002 (index 1): only A stays.
        assert_eq!(mask_candidates(&[1, 2], &dag(), MaskingMode::Strategy), vec![1]);
        assert_eq!(mask_candidates(&[0, 1, 2], &dag(), MaskingMode::Naive), vec![0, 1, 2]);
        assert_eq!(mask_candidates(&[1, 3], &dag(), MaskingMode::Strategy), vec![0, 1]);
    }

    #[test]
    fn full_rate_selects_everything() {
        let (sel, _) = sample_mask(&[0, 2, 5], 1.0, 3, 10, true);
        assert_eq!(sel.iter().map(|s| s.0).collect::<Vec<_>>(), vec![0, 2, 5]);
    }

    #[test]
    fn random_tokens_are_never_special() {
        for seed in 0..2000 {
            let (sel, _) = sample_mask(&[0, 1, 2, 3], 1.0, seed, 7, true);
            for (_, a) in sel {
                if let MaskAction::Random(t) = a {
                    assert!((3..7).contains(&t));
                }
            }
        }
    }

    #[test]
    fn plans_are_deterministic() {
        let cfg = MaskConfig::default();
        assert_eq!(plan_mask(&[1, 2, 3], &dag(), &cfg, 11, 7), plan_mask(&[1, 2, 3], &dag(), &cfg, 11, 7));
    }

    #[test]
    fn collate_pads_and_ignores() {
        let rows = vec![vec![3, 4, 5], vec![3, 4, 5, 6, 7]];
        let empty = MaskPlan { candidates: vec![], selected: vec![], alpha: 0.15, seed: 0, forced: false };
        let one = MaskPlan { selected: vec![(1, MaskAction::Mask)], ..empty.clone() };
        let b = collate(&rows, &[empty.clone(), one], 8).unwrap();
        assert_eq!(b.seq, 5);
        assert_eq!(b.row(&b.input_ids, 0), &[3, 4, 5, 0, 0]);
        assert_eq!(b.row(&b.attention_mask, 0), &[1, 1, 1, 0, 0]);
        assert_eq!(b.row(&b.input_ids, 1), &[3, 1, 5, 6, 7]);
        assert_eq!(b.row(&b.labels, 1)[1], Some(4));
        assert_eq!(b.label_count(), 1);

        let single = collate(&rows[..1], &[empty.clone()], 8).unwrap();
        assert!(single.labels.iter().all(Option::is_none));
        assert!(collate(&rows, &[empty.clone(), empty], 4).is_err());
    }

    #[test]
    fn rejects_bad_alpha() {
        assert!(MaskConfig { alpha: 0.0, ..Default::default() }.validate().is_err());
        assert!(MaskConfig { alpha: 1.5, ..Default::default() }.validate().is_err());
        assert!(MaskConfig { alpha: 1.0, ..Default::default() }.validate().is_ok());
    }
}

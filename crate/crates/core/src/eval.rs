//! Top-k accuracy (overall and depth-restricted), case-study rankings and the
//! ablation comparison table.
//!
//! Ranking rule: a candidate beats the ground truth when its logit is larger,
//! or equal with a smaller TermId. Vocabulary order is TermId order, so the
//! tie-break is "smaller vocabulary index wins". A prediction is correct at
//! `k` when fewer than `k` candidates beat the truth.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{GeneExample, Vocabulary};
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::masking::{plan_mask, MaskConfig, MaskingMode};
use crate::model::{encode_sequence, ModelParameters};
use crate::ontology::{GoDag, Namespace, TermId};
use crate::rng::{derive_seed, stream};
use crate::train::{Ablation, TrainConfig, Trainer};

/// Anything that can score the vocabulary at chosen positions of a sequence.
pub trait MaskedScorer {
    fn vocab_size(&self) -> usize;

    /// One logit row of length `vocab_size` per requested position.
    fn logits(&self, tokens: &[u32], positions: &[usize]) -> Result<Vec<Vec<f32>>>;
}

impl MaskedScorer for ModelParameters<f32> {
    fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    fn logits(&self, tokens: &[u32], positions: &[usize]) -> Result<Vec<Vec<f32>>> {
        let hidden = encode_sequence(self, tokens)?;
        positions
            .iter()
            .map(|&p| {
                if p >= tokens.len() {
                    return Err(Error::Shape(format!("position {p} outside {} tokens", tokens.len())));
                }
                let row = self.mlm_head.weight.dot(&hidden.row(p)) + &self.mlm_head.bias;
                Ok(row.to_vec())
            })
            .collect()
    }
}

/// Candidates that beat `truth` under the ranking rule.
pub fn better_count(logits: &[f32], truth: u32, candidates: &[u32]) -> usize {
    let t = logits[truth as usize];
    candidates
        .iter()
        .filter(|&&c| c != truth && (logits[c as usize] > t || (logits[c as usize] == t && c < truth)))
        .count()
}

/// Whether `truth` is among the top `k` of `candidates`.
pub fn in_top_k(logits: &[f32], truth: u32, candidates: &[u32], k: usize) -> bool {
    better_count(logits, truth, candidates) < k
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
    pub seeds: Vec<u64>,
    pub alpha_mask: f64,
    pub masking: MaskingMode,
    /// Remove the example's own unmasked terms from the candidate set.
    pub exclude_inputs: bool,
    /// Also report unrestricted accuracy bucketed by ground-truth depth.
    pub depth_buckets: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            ks: vec![1, 5],
            seeds: (0..5).collect(),
            alpha_mask: MaskConfig::default().alpha,
            masking: MaskingMode::Strategy,
            exclude_inputs: false,
            depth_buckets: false,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err(Error::InvalidArgument("every k must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidArgument("at least one mask seed is required".into()));
        }
        MaskConfig { alpha: self.alpha_mask, mode: self.masking, force_one: true }.validate()
    }
}

/// One masked example ready for scoring.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskedQuery {
    pub tokens: Vec<u32>,
    /// `(position, ground-truth vocabulary id)`
    pub targets: Vec<(usize, u32)>,
}

/// Masked queries for one seed. Selected positions become `[MASK]`; genes
/// without any mask candidate are dropped and counted.
pub fn mask_queries(examples: &[GeneExample], dag: &GoDag, config: &EvalConfig, seed: u64) -> Result<(Vec<MaskedQuery>, usize)> {
    let mask = MaskConfig { alpha: config.alpha_mask, mode: config.masking, force_one: true };
    let vocab_len = Vocabulary::TERM_OFFSET + dag.len();
    let mut out = Vec::with_capacity(examples.len());
    let mut unusable = 0;
    for (i, ex) in examples.iter().enumerate() {
        let terms = ex.term_indices(dag)?;
        let plan = plan_mask(&terms, dag, &mask, derive_seed(seed, &[stream::MASK, i as u64]), vocab_len);
        if plan.is_unusable() {
            unusable += 1;
            continue;
        }
        let mut tokens: Vec<u32> = terms.iter().map(|&t| (t + Vocabulary::TERM_OFFSET) as u32).collect();
        let mut targets = Vec::with_capacity(plan.selected.len());
        for &(pos, _) in &plan.selected {
            targets.push((pos, tokens[pos]));
            tokens[pos] = Vocabulary::MASK;
        }
        out.push(MaskedQuery { tokens, targets });
    }
    Ok((out, unusable))
}

/// Raw counts for one mask seed.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SeedCounts {
    pub seed: u64,
    pub positions: usize,
    /// Correct predictions per k over all positions.
    pub correct: BTreeMap<usize, usize>,
    /// Positions with a defined ground-truth depth.
    pub depth_positions: usize,
    pub skipped_depth: usize,
    /// Correct per k with candidates restricted to the truth's depth.
    pub correct_depth: BTreeMap<usize, usize>,
    /// Unrestricted correct per k, on the depth-defined positions only.
    pub correct_on_depth_positions: BTreeMap<usize, usize>,
    pub unusable_genes: usize,
    /// depth -> k -> (correct, positions), unrestricted ranking.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub by_depth: BTreeMap<u32, BTreeMap<usize, (usize, usize)>>,
}

/// Scores queries and accumulates counts.
pub fn score_queries(
    scorer: &impl MaskedScorer,
    dag: &GoDag,
    queries: &[MaskedQuery],
    config: &EvalConfig,
    seed: u64,
) -> Result<SeedCounts> {
    let vocab = scorer.vocab_size();
    if vocab != Vocabulary::TERM_OFFSET + dag.len() {
        return Err(Error::Shape(format!("scorer vocabulary {vocab} does not match ontology of {} terms", dag.len())));
    }
    let all_terms: Vec<u32> = (Vocabulary::TERM_OFFSET as u32..vocab as u32).collect();
    let mut by_depth_terms: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for i in 0..dag.len() {
        if let Some(d) = dag.depth_of(i) {
            by_depth_terms.entry(d).or_default().push((i + Vocabulary::TERM_OFFSET) as u32);
        }
    }
    let mut c = SeedCounts { seed, ..Default::default() };
    for &k in &config.ks {
        c.correct.insert(k, 0);
        c.correct_depth.insert(k, 0);
        c.correct_on_depth_positions.insert(k, 0);
    }
    for q in queries {
        let positions: Vec<usize> = q.targets.iter().map(|t| t.0).collect();
        let rows = scorer.logits(&q.tokens, &positions)?;
        let inputs: BTreeSet<u32> = q.tokens.iter().copied().filter(|&t| !Vocabulary::is_special(t)).collect();
        for (row, &(_, truth)) in rows.iter().zip(&q.targets) {
            if row.len() != vocab {
                return Err(Error::Shape(format!("logit row has {} entries, expected {vocab}", row.len())));
            }
            let filter = |cands: &[u32]| -> Vec<u32> {
                if config.exclude_inputs {
                    cands.iter().copied().filter(|t| !inputs.contains(t) || *t == truth).collect()
                } else {
                    cands.to_vec()
                }
            };
            let unrestricted = filter(&all_terms);
            let beat = better_count(row, truth, &unrestricted);
            c.positions += 1;
            for &k in &config.ks {
                *c.correct.get_mut(&k).unwrap() += usize::from(beat < k);
            }
            let depth = dag.depth_of(truth as usize - Vocabulary::TERM_OFFSET);
            let Some(depth) = depth else {
                c.skipped_depth += 1;
                continue;
            };
            let restricted = filter(&by_depth_terms[&depth]);
            let beat_depth = better_count(row, truth, &restricted);
            c.depth_positions += 1;
            for &k in &config.ks {
                *c.correct_depth.get_mut(&k).unwrap() += usize::from(beat_depth < k);
                *c.correct_on_depth_positions.get_mut(&k).unwrap() += usize::from(beat < k);
                if config.depth_buckets {
                    let cell = c.by_depth.entry(depth).or_default().entry(k).or_default();
                    cell.0 += usize::from(beat < k);
                    cell.1 += 1;
                }
            }
        }
    }
    Ok(c)
}

fn pct(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        100.0 * n as f64 / d as f64
    }
}

/// Percentage over all masked positions for one seed.
pub fn topk_accuracy(scorer: &impl MaskedScorer, examples: &[GeneExample], dag: &GoDag, k: usize, seed: u64) -> Result<f64> {
    let cfg = EvalConfig { ks: vec![k], seeds: vec![seed], ..Default::default() };
    cfg.validate()?;
    let (queries, _) = mask_queries(examples, dag, &cfg, seed)?;
    let c = score_queries(scorer, dag, &queries, &cfg, seed)?;
    Ok(pct(c.correct[&k], c.positions))
}

/// Depth-restricted percentage for one seed; positions whose truth has no
/// depth are skipped (their number is returned alongside).
pub fn topk_accuracy_at_depth(
    scorer: &impl MaskedScorer,
    examples: &[GeneExample],
    dag: &GoDag,
    k: usize,
    seed: u64,
) -> Result<(f64, usize)> {
    let cfg = EvalConfig { ks: vec![k], seeds: vec![seed], ..Default::default() };
    cfg.validate()?;
    let (queries, _) = mask_queries(examples, dag, &cfg, seed)?;
    let c = score_queries(scorer, dag, &queries, &cfg, seed)?;
    Ok((pct(c.correct_depth[&k], c.depth_positions), c.skipped_depth))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation over seeds (0 for a single seed).
    pub std: f64,
    pub per_seed: Vec<f64>,
}

impl Summary {
    pub fn from_values(values: Vec<f64>) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std, per_seed: values }
    }

    pub fn cell(&self) -> String {
        format!("{:.2} ± {:.2}", self.mean, self.std)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Keys `top{k}` and `top{k}_depth`.
    pub columns: BTreeMap<String, Summary>,
    pub counts: Vec<SeedCounts>,
    pub config: EvalConfig,
}

impl EvalReport {
    pub fn top(&self, k: usize) -> Option<&Summary> {
        self.columns.get(&format!("top{k}"))
    }

    pub fn top_depth(&self, k: usize) -> Option<&Summary> {
        self.columns.get(&format!("top{k}_depth"))
    }

    /// Column names in display order.
    pub fn column_order(&self) -> Vec<String> {
        let mut ks = self.config.ks.clone();
        ks.sort_unstable();
        ks.dedup();
        let mut out: Vec<String> = ks.iter().map(|k| format!("top{k}")).collect();
        out.extend(ks.iter().map(|k| format!("top{k}_depth")));
        out
    }

    /// Structural checks that hold for any scorer: percentages in range,
    /// monotone in `k`, depth restriction never worse on the same positions,
    /// and summaries consistent with the raw counts.
    pub fn check_invariants(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidArgument(m));
        let mut ks = self.config.ks.clone();
        ks.sort_unstable();
        ks.dedup();
        for c in &self.counts {
            for w in ks.windows(2) {
                if c.correct[&w[0]] > c.correct[&w[1]] || c.correct_depth[&w[0]] > c.correct_depth[&w[1]] {
                    return fail(format!("seed {}: accuracy decreases from k={} to k={}", c.seed, w[0], w[1]));
                }
            }
            for &k in &ks {
                if c.correct_depth[&k] < c.correct_on_depth_positions[&k] {
                    return fail(format!("seed {}: depth-restricted top-{k} below unrestricted", c.seed));
                }
                if c.correct[&k] > c.positions || c.correct_depth[&k] > c.depth_positions {
                    return fail(format!("seed {}: more correct than positions", c.seed));
                }
            }
        }
        for (name, s) in &self.columns {
            if s.per_seed.iter().any(|v| !(0.0..=100.0).contains(v)) || s.std < 0.0 {
                return fail(format!("column {name} out of range"));
            }
            let recomputed = Summary::from_values(s.per_seed.clone());
            if (recomputed.mean - s.mean).abs() > 1e-9 || (recomputed.std - s.std).abs() > 1e-9 {
                return fail(format!("column {name} disagrees with its per-seed values"));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Aligned text table with one row.
    pub fn to_text(&self, label: &str) -> String {
        render_text(&[(label.to_string(), self)])
    }
}

/// Evaluates over every mask seed and summarises.
pub fn evaluate(scorer: &impl MaskedScorer, examples: &[GeneExample], dag: &GoDag, config: &EvalConfig) -> Result<EvalReport> {
    config.validate()?;
    let mut counts = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let (queries, unusable) = mask_queries(examples, dag, config, seed)?;
        let mut c = score_queries(scorer, dag, &queries, config, seed)?;
        c.unusable_genes = unusable;
        counts.push(c);
    }
    let mut columns = BTreeMap::new();
    for &k in &config.ks {
        columns.insert(format!("top{k}"), Summary::from_values(counts.iter().map(|c| pct(c.correct[&k], c.positions)).collect()));
        columns.insert(
            format!("top{k}_depth"),
            Summary::from_values(counts.iter().map(|c| pct(c.correct_depth[&k], c.depth_positions)).collect()),
        );
    }
    Ok(EvalReport { columns, counts, config: config.clone() })
}

fn header_name(column: &str) -> String {
    match column.strip_suffix("_depth") {
        Some(base) => format!("Top-{} Acc w/ depth", &base[3..]),
        None => format!("Top-{} Acc", &column[3..]),
    }
}

fn render_text(rows: &[(String, &EvalReport)]) -> String {
    let Some((_, first)) = rows.first() else { return String::new() };
    let cols = first.column_order();
    let mut table: Vec<Vec<String>> = vec![std::iter::once("Model".to_string()).chain(cols.iter().map(|c| header_name(c))).collect()];
    for (label, r) in rows {
        let mut line = vec![label.clone()];
        line.extend(cols.iter().map(|c| r.columns.get(c).map(Summary::cell).unwrap_or_default()));
        table.push(line);
    }
    let widths: Vec<usize> = (0..table[0].len()).map(|j| table.iter().map(|r| r[j].chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for r in &table {
        let cells: Vec<String> = r.iter().zip(&widths).map(|(c, &w)| format!("{c:<w$}")).collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedTerm {
    pub rank: usize,
    pub term: TermId,
    pub name: String,
    /// Softmax probability over all term tokens at the query position.
    pub probability: f64,
}

fn rank_candidates(
    scorer: &impl MaskedScorer,
    dag: &GoDag,
    known: &[TermId],
    candidates: &[usize],
) -> Result<Vec<RankedTerm>> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("candidate set is empty".into()));
    }
    let mut tokens = Vec::with_capacity(known.len() + 1);
    for t in known {
        tokens.push((dag.index_of(t)? + Vocabulary::TERM_OFFSET) as u32);
    }
    tokens.push(Vocabulary::MASK);
    let logits = scorer.logits(&tokens, &[tokens.len() - 1])?.remove(0);
    let terms = &logits[Vocabulary::TERM_OFFSET..];
    let max = terms.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let z: f64 = terms.iter().map(|&v| (v as f64 - max).exp()).sum();
    let mut ranked: Vec<(usize, f32)> = candidates.iter().map(|&i| (i, logits[i + Vocabulary::TERM_OFFSET])).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(ranked
        .into_iter()
        .enumerate()
        .map(|(r, (i, v))| RankedTerm {
            rank: r + 1,
            term: dag.term(i).id.clone(),
            name: dag.term(i).name.clone(),
            probability: (v as f64 - max).exp() / z,
        })
        .collect())
}

/// All terms of `namespace` at `depth`, ranked at a `[MASK]` appended to the
/// known terms.
pub fn restricted_ranking(
    scorer: &impl MaskedScorer,
    dag: &GoDag,
    known: &[TermId],
    namespace: Namespace,
    depth: u32,
) -> Result<Vec<RankedTerm>> {
    rank_candidates(scorer, dag, known, &dag.terms_at(Some(namespace), depth))
}

/// The anchor's direct predecessors ranked at a `[MASK]` appended to the
/// known terms.
pub fn predecessor_ranking(scorer: &impl MaskedScorer, dag: &GoDag, known: &[TermId], anchor: &TermId) -> Result<Vec<RankedTerm>> {
    let preds = dag.predecessors(anchor)?;
    if preds.is_empty() {
        return Err(Error::InvalidArgument(format!("{anchor} has no predecessors")));
    }
    let idx = preds.iter().map(|p| dag.index_of(p)).collect::<Result<Vec<_>>>()?;
    rank_candidates(scorer, dag, known, &idx)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<(Ablation, EvalReport)>,
}

impl AblationTable {
    pub fn to_tsv(&self) -> String {
        let Some((_, first)) = self.rows.first() else { return String::new() };
        let cols = first.column_order();
        let mut out = String::from("Model");
        for c in &cols {
            out.push('\t');
            out.push_str(&header_name(c));
        }
        out.push('\n');
        for (a, r) in &self.rows {
            out.push_str(a.row_label());
            for c in &cols {
                out.push('\t');
                out.push_str(&r.columns.get(c).map(Summary::cell).unwrap_or_default());
            }
            out.push('\n');
        }
        out
    }

    pub fn to_text(&self) -> String {
        let rows: Vec<(String, &EvalReport)> = self.rows.iter().map(|(a, r)| (a.row_label().to_string(), r)).collect();
        render_text(&rows)
    }
}

/// Trains the full model and each ablation from `base`, then evaluates all
/// of them with the same evaluation config.
pub fn run_ablation_suite(
    base: &TrainConfig,
    ablations: &[Ablation],
    train: &[GeneExample],
    test: &[GeneExample],
    dag: &GoDag,
    embeddings: &EmbeddingMatrix,
    eval: &EvalConfig,
) -> Result<AblationTable> {
    let mut rows = Vec::with_capacity(ablations.len());
    for &ablation in ablations {
        let config = TrainConfig { ablation, ..base.clone() };
        let mut trainer = Trainer::new(config, dag, train, embeddings)?;
        trainer.train(|_, _| Ok(()))?;
        let report = evaluate(&trainer.params, test, dag, eval)?;
        report.check_invariants()?;
        log::info!("{}: {:?}", ablation, report.columns.iter().map(|(k, v)| (k, v.mean)).collect::<Vec<_>>());
        rows.push((ablation, report));
    }
    Ok(AblationTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tie_break_prefers_smaller_ids() {
        let logits = [0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.5];
        let cands = [3, 4, 5, 6];
        assert_eq!(better_count(&logits, 3, &cands), 0);
        assert_eq!(better_count(&logits, 5, &cands), 2);
        assert_eq!(better_count(&logits, 6, &cands), 3);
        assert!(in_top_k(&logits, 5, &cands, 3));
        assert!(!in_top_k(&logits, 5, &cands, 2));
    }

    #[test]
    fn summary_uses_sample_std() {
        let s = Summary::from_values(vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert!((s.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(Summary::from_values(vec![7.0]).std, 0.0);
        assert_eq!(s.cell(), "2.50 ± 1.29");
    }

    #[test]
    fn config_requires_positive_k() {
        assert!(EvalConfig { ks: vec![0], ..Default::default() }.validate().is_err());
        assert!(EvalConfig::default().validate().is_ok());
    }
}

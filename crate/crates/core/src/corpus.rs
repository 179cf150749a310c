//! Gene annotation corpora: TSV ingestion, deduplication, the token
//! vocabulary, and the cluster-exclusive train/valid/test split.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::embedding::{render_term_text, TermVectors};
use crate::error::{Error, Result};
use crate::kmeans;
use crate::ontology::{GoDag, TermId, TermLookup};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct GeneId(String);

impl GeneId {
    pub fn new(value: impl Into<String>) -> Result<Self> {
        let value = value.into();
        if value.is_empty() {
            return Err(Error::InvalidArgument("gene id must be non-empty".into()));
        }
        Ok(Self(value))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for GeneId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for GeneId {
    type Error = Error;
    fn try_from(value: String) -> Result<Self> {
        Self::new(value)
    }
}

impl From<GeneId> for String {
    fn from(id: GeneId) -> String {
        id.0
    }
}

/// One gene's annotation set: ascending, duplicate-free term ids with their
/// rendered texts in parallel.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneExample {
    pub gene: GeneId,
    pub terms: Vec<TermId>,
    pub texts: Vec<String>,
}

impl GeneExample {
    /// Builds an example from arbitrary term ids, sorting and deduplicating.
    pub fn new(gene: GeneId, terms: impl IntoIterator<Item = TermId>, dag: &GoDag) -> Result<Self> {
        let set: BTreeSet<TermId> = terms.into_iter().collect();
        let mut texts = Vec::with_capacity(set.len());
        for id in &set {
            texts.push(render_term_text(dag.term(dag.index_of(id)?)).text);
        }
        if set.is_empty() {
            return Err(Error::InvalidArgument(format!("gene {gene} has no terms")));
        }
        Ok(Self { gene, terms: set.into_iter().collect(), texts })
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// DAG indices of the terms.
    pub fn term_indices(&self, dag: &GoDag) -> Result<Vec<usize>> {
        self.terms.iter().map(|t| dag.index_of(t)).collect()
    }
}

/// Token vocabulary: `PAD`, `MASK`, `UNK`, then the active terms ascending.
/// Term vocabulary index = DAG index + [`Vocabulary::TERM_OFFSET`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    terms: Vec<TermId>,
}

impl Vocabulary {
    pub const PAD: u32 = 0;
    pub const MASK: u32 = 1;
    pub const UNK: u32 = 2;
    pub const TERM_OFFSET: usize = 3;
    pub const SPECIAL_TOKENS: [&'static str; 3] = ["[PAD]", "[MASK]", "[UNK]"];

    pub fn from_dag(dag: &GoDag) -> Self {
        Self { terms: dag.terms().iter().map(|t| t.id.clone()).collect() }
    }

    pub fn from_terms(mut terms: Vec<TermId>) -> Self {
        terms.sort();
        terms.dedup();
        Self { terms }
    }

    pub fn len(&self) -> usize {
        Self::TERM_OFFSET + self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn term_count(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> &[TermId] {
        &self.terms
    }

    pub fn index_of(&self, term: &TermId) -> u32 {
        match self.terms.binary_search(term) {
            Ok(i) => (Self::TERM_OFFSET + i) as u32,
            Err(_) => Self::UNK,
        }
    }

    pub fn is_special(index: u32) -> bool {
        (index as usize) < Self::TERM_OFFSET
    }

    /// Term at a vocabulary index, `None` for special tokens.
    pub fn term(&self, index: u32) -> Option<&TermId> {
        (index as usize).checked_sub(Self::TERM_OFFSET).and_then(|i| self.terms.get(i))
    }

    pub fn token_name(&self, index: u32) -> String {
        match self.term(index) {
            Some(t) => t.to_string(),
            None => Self::SPECIAL_TOKENS.get(index as usize).unwrap_or(&"[?]").to_string(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct AnnotationStats {
    pub lines: usize,
    pub unknown_terms: usize,
    pub obsolete_terms: usize,
    pub duplicate_pairs: usize,
    pub skipped_genes: usize,
    pub truncated_genes: usize,
}

/// Reads `gene_id<TAB>GO:xxxxxxx` lines. Genes keep first-appearance order;
/// blank lines and `#` comments are ignored.
pub fn load_annotations(
    reader: impl BufRead,
    dag: &GoDag,
    max_len: usize,
) -> Result<(Vec<GeneExample>, AnnotationStats)> {
    if max_len == 0 {
        return Err(Error::InvalidArgument("max_len must be at least 1".into()));
    }
    let mut stats = AnnotationStats::default();
    let mut order: Vec<GeneId> = Vec::new();
    let mut sets: HashMap<GeneId, BTreeSet<TermId>> = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        let trimmed = line.trim_end_matches('\r');
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            continue;
        }
        stats.lines += 1;
        let mut cols = trimmed.split('\t');
        let (Some(gene), Some(term), None) = (cols.next(), cols.next(), cols.next()) else {
            return Err(Error::Parse { line: line_no, message: "expected `gene_id<TAB>term_id`".into() });
        };
        let gene = GeneId::new(gene.trim()).map_err(|_| Error::Parse { line: line_no, message: "empty gene id".into() })?;
        let term = TermId::new(term.trim())
            .map_err(|_| Error::Parse { line: line_no, message: format!("invalid term id {term:?}") })?;
        let set = sets.entry(gene.clone()).or_insert_with(|| {
            order.push(gene);
            BTreeSet::new()
        });
        match dag.lookup(&term) {
            Some(TermLookup::Active(_)) => {
                if !set.insert(term) {
                    stats.duplicate_pairs += 1;
                }
            }
            Some(TermLookup::Obsolete) => stats.obsolete_terms += 1,
            None => stats.unknown_terms += 1,
        }
    }

    let mut examples = Vec::with_capacity(order.len());
    for gene in order {
        let set = sets.remove(&gene).expect("every ordered gene has a set");
        if set.is_empty() {
            stats.skipped_genes += 1;
            continue;
        }
        if set.len() > max_len {
            stats.truncated_genes += 1;
        }
        examples.push(GeneExample::new(gene, set.into_iter().take(max_len), dag)?);
    }
    Ok((examples, stats))
}

/// Drops genes whose term set equals an earlier gene's set.
pub fn dedupe_examples(examples: Vec<GeneExample>) -> Vec<GeneExample> {
    let mut seen: HashSet<Vec<TermId>> = HashSet::new();
    examples.into_iter().filter(|e| seen.insert(e.terms.clone())).collect()
}

/// Mean of the example's term vectors, optionally L2-normalising each first.
pub fn gene_embedding(example: &GeneExample, provider: &impl TermVectors, normalize: bool) -> Result<Vec<f64>> {
    if example.terms.is_empty() {
        return Err(Error::InvalidArgument(format!("gene {} has no terms", example.gene)));
    }
    let mut mean = vec![0.0f64; provider.dim()];
    for term in &example.terms {
        let v = provider.vector(term).ok_or_else(|| Error::UnknownTerm(term.clone()))?;
        let scale = if normalize {
            let n = v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
            if n > 0.0 { 1.0 / n } else { 0.0 }
        } else {
            1.0
        };
        for (m, &x) in mean.iter_mut().zip(v) {
            *m += f64::from(x) * scale;
        }
    }
    let n = example.terms.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(mean)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl SplitRatios {
    pub fn new(train: f64, valid: f64, test: f64) -> Result<Self> {
        let r = Self { train, valid, test };
        let all = [train, valid, test];
        if all.iter().any(|x| !x.is_finite() || *x < 0.0) || (all.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!("split ratios {all:?} must be non-negative and sum to 1")));
        }
        Ok(r)
    }

    fn as_array(&self) -> [f64; 3] {
        [self.train, self.valid, self.test]
    }
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { train: 0.8, valid: 0.1, test: 0.1 }
    }
}

impl std::str::FromStr for SplitRatios {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidArgument(format!("ratios {s:?}: {e}")))?;
        match parts.as_slice() {
            [a, b, c] => Self::new(*a, *b, *c),
            _ => Err(Error::InvalidArgument(format!("ratios {s:?} must have three values"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub seed: u64,
    pub k: usize,
    pub ratios: SplitRatios,
    pub train: Vec<GeneId>,
    pub valid: Vec<GeneId>,
    pub test: Vec<GeneId>,
}

impl CorpusSplit {
    /// Selects the examples of one split, preserving corpus order.
    pub fn select<'a>(&self, examples: &'a [GeneExample], which: &[GeneId]) -> Vec<&'a GeneExample> {
        let wanted: HashSet<&GeneId> = which.iter().collect();
        examples.iter().filter(|e| wanted.contains(&e.gene)).collect()
    }
}

pub const KMEANS_MAX_ITER: usize = 100;

/// Clusters gene embeddings with k-means and hands whole clusters to the
/// split with the largest remaining gene-count deficit, largest cluster first.
pub fn kmeans_split(
    examples: &[GeneExample],
    provider: &impl TermVectors,
    k: usize,
    ratios: SplitRatios,
    seed: u64,
) -> Result<CorpusSplit> {
    let points = examples
        .iter()
        .map(|e| gene_embedding(e, provider, false))
        .collect::<Result<Vec<_>>>()?;
    let fit = kmeans::fit(&points, k, seed, KMEANS_MAX_ITER)?;
    let parts = assign_clusters(&fit.assignments, k, ratios);
    let mut buckets: [Vec<GeneId>; 3] = Default::default();
    for (example, &cluster) in examples.iter().zip(&fit.assignments) {
        buckets[parts[cluster]].push(example.gene.clone());
    }
    let [train, valid, test] = buckets;
    Ok(CorpusSplit { seed, k, ratios, train, valid, test })
}

/// Cluster index -> split index (0 train, 1 valid, 2 test).
fn assign_clusters(assignments: &[usize], k: usize, ratios: SplitRatios) -> Vec<usize> {
    let mut sizes = vec![0usize; k];
    for &a in assignments {
        sizes[a] += 1;
    }
    let total = assignments.len() as f64;
    let targets = ratios.as_array().map(|r| r * total);
    let mut filled = [0usize; 3];
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(a.cmp(&b)));
    let mut part = vec![0usize; k];
    for c in order {
        let mut best = 0;
        for s in 1..3 {
            if targets[s] - filled[s] as f64 > targets[best] - filled[best] as f64 {
                best = s;
            }
        }
        part[c] = best;
        filled[best] += sizes[c];
    }
    part
}

/// Serialises examples as JSON lines.
pub fn write_jsonl(examples: &[GeneExample]) -> Result<String> {
    let mut out = String::new();
    for e in examples {
        out.push_str(&serde_json::to_string(e)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn read_jsonl(text: &str) -> Result<Vec<GeneExample>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })
        })
        .collect()
}

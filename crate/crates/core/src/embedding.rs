//! Term text rendering and the initial token-embedding matrix.
//!
//! Vectors come either from a precomputed file (binary `GOEMB1` or TSV) or
//! from a deterministic fallback that hashes the rendered term text into a
//! seeded Gaussian draw. Rows are aligned with [`Vocabulary`] indices.

use std::fmt;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::ontology::{GoDag, GoTerm, TermId};
use crate::rng::{derive_seed, rng_from, stream};

pub const BINARY_MAGIC: &[u8; 6] = b"GOEMB1";

/// Rendered `key: value` description of one term.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermText {
    pub term: TermId,
    pub text: String,
}

impl fmt::Display for TermText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

pub fn render_term_text(term: &GoTerm) -> TermText {
    let namespace = term.namespace.map(|ns| ns.as_str()).unwrap_or("");
    TermText {
        term: term.id.clone(),
        text: format!(
            "id: {}; name: {}; namespace: {}; definition: {}",
            term.id, term.name, namespace, term.definition
        ),
    }
}

fn text_hash(text: &str) -> u64 {
    let digest = Sha256::digest(text.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 is 32 bytes"))
}

/// Deterministic stand-in for a language-model embedding: `d` draws from
/// `Normal(0, 1/sqrt(d))` seeded by a hash of the text.
pub fn fallback_embedding(text: &str, d: usize, seed: u64) -> Vec<f32> {
    let mut rng = rng_from(derive_seed(seed, &[text_hash(text)]));
    gaussian_row(&mut rng, d)
}

fn gaussian_row(rng: &mut crate::rng::Rng, d: usize) -> Vec<f32> {
    let normal = Normal::new(0.0, 1.0 / (d.max(1) as f64).sqrt()).expect("valid std");
    (0..d).map(|_| normal.sample(rng) as f32).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSource {
    File,
    Fallback,
    Random,
}

/// Anything that can hand out a fixed-dimension vector per term.
pub trait TermVectors {
    fn dim(&self) -> usize;
    fn vector(&self, term: &TermId) -> Option<&[f32]>;
}

/// Row-major `[vocab_len x dim]` matrix aligned with the vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    terms: Vec<TermId>,
    data: Vec<f32>,
    source: EmbeddingSource,
    fallback_fills: usize,
    seed: u64,
}

impl EmbeddingMatrix {
    /// Every row from the fallback generator.
    pub fn fallback(dag: &GoDag, dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("embedding dimension must be at least 1".into()));
        }
        let mut m = Self::with_specials(dag, dim, seed, EmbeddingSource::Fallback);
        for (i, term) in dag.terms().iter().enumerate() {
            let row = fallback_embedding(&render_term_text(term).text, dim, seed);
            m.row_mut(Vocabulary::TERM_OFFSET + i).copy_from_slice(&row);
        }
        m.fallback_fills = dag.len();
        Ok(m)
    }

    fn with_specials(dag: &GoDag, dim: usize, seed: u64, source: EmbeddingSource) -> Self {
        let rows = Vocabulary::TERM_OFFSET + dag.len();
        let mut m = EmbeddingMatrix {
            dim,
            terms: dag.terms().iter().map(|t| t.id.clone()).collect(),
            data: vec![0.0; rows * dim],
            source,
            fallback_fills: 0,
            seed,
        };
        m.row_mut(Vocabulary::MASK as usize).copy_from_slice(&fallback_embedding("[MASK]", dim, seed));
        m.row_mut(Vocabulary::UNK as usize).copy_from_slice(&fallback_embedding("[UNK]", dim, seed));
        m
    }

    /// Parses a binary or TSV embedding file; vocabulary terms the file does
    /// not cover are filled by the fallback and counted.
    pub fn load(bytes: &[u8], dag: &GoDag, expected_dim: Option<usize>, seed: u64) -> Result<Self> {
        let entries = if bytes.starts_with(BINARY_MAGIC) {
            parse_binary(bytes)?
        } else {
            parse_tsv(bytes)?
        };
        let dim = match (entries.first(), expected_dim) {
            (Some((_, v)), Some(d)) if v.len() != d => {
                return Err(Error::EmbeddingFormat(format!("file dimension {} != expected {d}", v.len())));
            }
            (Some((_, v)), _) => v.len(),
            (None, Some(d)) => d,
            (None, None) => return Err(Error::EmbeddingFormat("empty file and no dimension given".into())),
        };
        if dim == 0 {
            return Err(Error::EmbeddingFormat("zero-length vectors".into()));
        }
        let mut m = Self::with_specials(dag, dim, seed, EmbeddingSource::File);
        let mut covered = vec![false; dag.len()];
        for (id, values) in entries {
            if values.len() != dim {
                return Err(Error::EmbeddingFormat(format!("{id} has {} values, expected {dim}", values.len())));
            }
            if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
                return Err(Error::EmbeddingFormat(format!("{id} has a non-finite value at {pos}")));
            }
            if let Ok(i) = m.terms.binary_search(&id) {
                m.row_mut(Vocabulary::TERM_OFFSET + i).copy_from_slice(&values);
                covered[i] = true;
            }
        }
        for (i, term) in dag.terms().iter().enumerate() {
            if !covered[i] {
                let row = fallback_embedding(&render_term_text(term).text, dim, seed);
                m.row_mut(Vocabulary::TERM_OFFSET + i).copy_from_slice(&row);
                m.fallback_fills += 1;
            }
        }
        Ok(m)
    }

    /// Binary `GOEMB1` encoding of every term row (specials are not stored).
    pub fn to_binary(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(18 + self.terms.len() * (12 + 4 * self.dim));
        out.extend_from_slice(BINARY_MAGIC);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.terms.len() as u64).to_le_bytes());
        for (i, id) in self.terms.iter().enumerate() {
            out.extend_from_slice(&(id.as_str().len() as u16).to_le_bytes());
            out.extend_from_slice(id.as_str().as_bytes());
            for v in self.row(Vocabulary::TERM_OFFSET + i) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Same matrix with every row except PAD replaced by seeded Gaussian
    /// noise, removing any semantic signal from initialisation.
    pub fn randomized(&self, seed: u64) -> Self {
        let mut rng = rng_from(derive_seed(seed, &[stream::NO_SEMANTICS]));
        let mut m = self.clone();
        for r in 1..self.rows() {
            let row = gaussian_row(&mut rng, self.dim);
            m.row_mut(r).copy_from_slice(&row);
        }
        m.source = EmbeddingSource::Random;
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, vocab_index: usize) -> &[f32] {
        &self.data[vocab_index * self.dim..(vocab_index + 1) * self.dim]
    }

    fn row_mut(&mut self, vocab_index: usize) -> &mut [f32] {
        &mut self.data[vocab_index * self.dim..(vocab_index + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn source(&self) -> EmbeddingSource {
        self.source
    }

    /// Vocabulary terms that were filled by the fallback generator.
    pub fn fallback_fills(&self) -> usize {
        self.fallback_fills
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

impl TermVectors for EmbeddingMatrix {
    fn dim(&self) -> usize {
        self.dim
    }

    fn vector(&self, term: &TermId) -> Option<&[f32]> {
        let i = self.terms.binary_search(term).ok()?;
        Some(self.row(Vocabulary::TERM_OFFSET + i))
    }
}

fn parse_binary(bytes: &[u8]) -> Result<Vec<(TermId, Vec<f32>)>> {
    let mut r = ByteReader { bytes, pos: BINARY_MAGIC.len() };
    let dim = r.u32()? as usize;
    let count = r.u64()? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let len = r.u16()? as usize;
        let id = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::EmbeddingFormat("term id is not UTF-8".into()))?;
        let id = TermId::new(id)?;
        let raw = r.take(dim * 4)?;
        let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        out.push((id, values));
    }
    if r.pos != bytes.len() {
        return Err(Error::EmbeddingFormat(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(out)
}

fn parse_tsv(bytes: &[u8]) -> Result<Vec<(TermId, Vec<f32>)>> {
    let text = std::str::from_utf8(bytes).map_err(|_| Error::EmbeddingFormat("TSV is not UTF-8".into()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, values) = line
            .split_once('\t')
            .ok_or_else(|| Error::EmbeddingFormat(format!("line {}: expected `term_id<TAB>v1,v2,...`", i + 1)))?;
        let values = values
            .split(',')
            .map(|v| v.trim().parse::<f32>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::EmbeddingFormat(format!("line {}: {e}", i + 1)))?;
        out.push((TermId::new(id.trim())?, values));
    }
    Ok(out)
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::EmbeddingFormat("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

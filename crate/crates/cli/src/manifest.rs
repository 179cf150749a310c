//! Run manifests and the on-disk corpus directory layout.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use gobert::corpus::{read_jsonl, CorpusSplit, GeneExample};
use gobert::ontology::{parse_obo, GoDag};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";
pub const ONTOLOGY: &str = "ontology.obo";
pub const CORPUS: &str = "corpus.jsonl";
pub const SPLIT: &str = "split.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub file: String,
    pub sha256: String,
    pub bytes: u64,
    pub lines: usize,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self> {
        let data = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(Self {
            file: path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
            sha256: sha256_hex(&data),
            bytes: data.len() as u64,
            lines: data.iter().filter(|&&b| b == b'\n').count(),
        })
    }
}

/// Everything needed to reproduce one run. Paths are recorded by file name
/// only so reruns into different directories give identical manifests.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub tool_version: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, FileDigest>,
    pub outputs: BTreeMap<String, FileDigest>,
    pub counts: BTreeMap<String, usize>,
}

impl RunManifest {
    pub fn new(subcommand: &str, seed: Option<u64>, config: impl Serialize) -> Result<Self> {
        Ok(Self {
            subcommand: subcommand.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config: serde_json::to_value(config)?,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            counts: BTreeMap::new(),
        })
    }

    pub fn input(&mut self, role: &str, path: &Path) -> Result<()> {
        self.inputs.insert(role.to_string(), FileDigest::of(path)?);
        Ok(())
    }

    pub fn output(&mut self, out_dir: &Path, relative: &str) -> Result<()> {
        self.outputs.insert(relative.to_string(), FileDigest::of(&out_dir.join(relative))?);
        Ok(())
    }

    pub fn count(&mut self, name: &str, value: usize) {
        self.counts.insert(name.to_string(), value);
    }

    pub fn write(&self, out_dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        fs::write(out_dir.join(MANIFEST), text).context("writing manifest")
    }
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn read_ontology(path: &Path) -> Result<GoDag> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    parse_obo(&bytes).with_context(|| format!("parsing {}", path.display()))
}

/// A directory written by `build-corpus`.
pub struct CorpusDir {
    pub root: PathBuf,
    pub dag: GoDag,
    pub examples: Vec<GeneExample>,
    pub split: CorpusSplit,
}

impl CorpusDir {
    pub fn load(root: &Path) -> Result<Self> {
        let dag = read_ontology(&root.join(ONTOLOGY))?;
        let corpus_path = root.join(CORPUS);
        let text = fs::read_to_string(&corpus_path).with_context(|| format!("reading {}", corpus_path.display()))?;
        let examples = read_jsonl(&text).with_context(|| format!("parsing {}", corpus_path.display()))?;
        let split_path = root.join(SPLIT);
        let split: CorpusSplit = serde_json::from_str(
            &fs::read_to_string(&split_path).with_context(|| format!("reading {}", split_path.display()))?,
        )
        .with_context(|| format!("parsing {}", split_path.display()))?;
        for e in &examples {
            e.term_indices(&dag).with_context(|| format!("gene {} in {}", e.gene, corpus_path.display()))?;
        }
        Ok(Self { root: root.to_path_buf(), dag, examples, split })
    }

    pub fn part(&self, name: &str) -> Result<Vec<GeneExample>> {
        let ids = match name {
            "train" => &self.split.train,
            "valid" => &self.split.valid,
            "test" => &self.split.test,
            other => anyhow::bail!(crate::UsageError(format!("unknown split {other:?}; expected train, valid or test"))),
        };
        Ok(self.split.select(&self.examples, ids).into_iter().cloned().collect())
    }

    pub fn record_inputs(&self, m: &mut RunManifest) -> Result<()> {
        m.input("ontology", &self.root.join(ONTOLOGY))?;
        m.input("corpus", &self.root.join(CORPUS))?;
        m.input("split", &self.root.join(SPLIT))
    }
}

//! `gobert`: batch workflows over a GO ontology and gene annotations.
//!
//! Exit codes: 0 on success, 1 for validation or domain failures, 2 for
//! usage errors (bad flags, malformed term ids, invalid configuration).

mod commands;
mod manifest;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gobert::train::{Ablation, TrainConfig};

/// Errors caused by how the tool was invoked rather than by the data.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(name = "gobert", version, about = "Pretrain and evaluate a gene-function transformer over the GO DAG")]
struct Cli {
    /// Log progress (per-epoch losses, counts) to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse an OBO file, validate it and export the DAG.
    ParseObo(ParseOboArgs),
    /// Group annotations into genes and split them with k-means.
    BuildCorpus(BuildCorpusArgs),
    /// Train a model on the train split of a corpus directory.
    Pretrain(PretrainArgs),
    /// Top-k accuracy of a checkpoint on one split.
    Evaluate(EvaluateArgs),
    /// Rank candidate terms for a [MASK] appended to known terms.
    Predict(PredictArgs),
    /// Train and evaluate the full model and its ablations.
    Ablate(AblateArgs),
    /// Write a synthetic ontology and a planted-rule annotation file.
    Synth(SynthArgs),
}

#[derive(Args)]
pub struct ParseOboArgs {
    #[arg(long)]
    pub obo: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Exit 0 even when the validation report lists violations.
    #[arg(long)]
    pub allow_violations: bool,
}

#[derive(Args)]
pub struct BuildCorpusArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub obo: PathBuf,
    /// Number of k-means clusters.
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Train,valid,test fractions.
    #[arg(long, default_value = "0.8,0.1,0.1")]
    pub ratios: String,
    #[arg(long, env = "GOBERT_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub max_len: usize,
    /// Term embedding file (binary or TSV); the hash fallback is used otherwise.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Fallback embedding width.
    #[arg(long, default_value_t = 256)]
    pub dim: usize,
    /// Keep genes whose term set repeats an earlier gene's.
    #[arg(long)]
    pub keep_duplicates: bool,
    #[arg(long)]
    pub out: PathBuf,
}

/// Flags mirroring [`TrainConfig`]; each overrides the config file.
#[derive(Args, Default)]
pub struct TrainOverrides {
    /// JSON file with flat TrainConfig keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub warmup_steps: Option<u64>,
    #[arg(long, env = "GOBERT_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub alpha_mask: Option<f64>,
    /// Negative down-sampling rate for the neighbourhood loss.
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub ffn_dim: Option<usize>,
    /// Relation kinds used for neighbourhood labels, e.g. "is_a,part_of" or "all".
    #[arg(long)]
    pub relations: Option<String>,
    /// Record zero seconds in metrics so reruns are byte-identical.
    #[arg(long)]
    pub deterministic: bool,
}

impl TrainOverrides {
    pub fn sets_more_than_epochs(&self) -> bool {
        let o = self;
        o.config.is_some()
            || o.batch_size.is_some()
            || o.lr.is_some()
            || o.warmup_steps.is_some()
            || o.lambda.is_some()
            || o.alpha_mask.is_some()
            || o.rho.is_some()
            || o.max_len.is_some()
            || o.hidden.is_some()
            || o.layers.is_some()
            || o.heads.is_some()
            || o.ffn_dim.is_some()
            || o.relations.is_some()
    }

    pub fn resolve(&self, ablation: Option<Ablation>) -> anyhow::Result<TrainConfig> {
        let mut c = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| UsageError(format!("reading {}: {e}", path.display())))?;
                serde_json::from_str(&text).map_err(|e| UsageError(format!("config {}: {e}", path.display())))?
            }
            None => TrainConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f.clone() { c.$f = v; } )* };
        }
        set!(epochs, batch_size, lr, warmup_steps, seed, lambda, alpha_mask, rho, max_len, hidden, layers, heads, ffn_dim, relations);
        if self.deterministic {
            c.deterministic = true;
        }
        if let Some(a) = ablation {
            c.ablation = a;
        }
        c.validate().map_err(|e| UsageError(format!("invalid training config: {e}")))?;
        Ok(c)
    }
}

#[derive(Args)]
pub struct PretrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, conflicts_with = "fallback")]
    pub embeddings: Option<PathBuf>,
    /// Use hash-seeded fallback vectors of width `hidden` (the default).
    #[arg(long)]
    pub fallback: bool,
    #[arg(long)]
    pub ablation: Option<Ablation>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainOverrides,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvalOptions {
    /// Mask seeds: an inclusive range "0..4" or a list "0,1,2".
    #[arg(long, default_value = "0..4")]
    pub seeds: String,
    /// Comma-separated k values.
    #[arg(long, default_value = "1,5")]
    pub k: String,
    /// Masking rate at evaluation (defaults to the training value).
    #[arg(long)]
    pub eval_alpha: Option<f64>,
    /// Mask uniformly over all positions instead of applying the exclusions.
    #[arg(long)]
    pub naive_eval_masking: bool,
    /// Drop the gene's own unmasked terms from the candidates.
    #[arg(long)]
    pub exclude_inputs: bool,
    /// Also report unrestricted accuracy bucketed by ground-truth depth.
    #[arg(long)]
    pub depth_buckets: bool,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[command(flatten)]
    pub eval: EvalOptions,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
#[command(group(clap::ArgGroup::new("mode").required(true).args(["namespace", "predecessors_of"])))]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Ontology the checkpoint was trained on; defaults to ontology.obo next
    /// to the checkpoint or one directory up.
    #[arg(long)]
    pub obo: Option<PathBuf>,
    /// Known terms forming the context, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub terms: Vec<String>,
    #[arg(long, requires = "depth")]
    pub namespace: Option<String>,
    #[arg(long, requires = "namespace")]
    pub depth: Option<u32>,
    #[arg(long)]
    pub predecessors_of: Option<String>,
    /// Print only the first N ranked terms.
    #[arg(long)]
    pub top: Option<usize>,
}

#[derive(Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Comma-separated variants to run.
    #[arg(long, value_delimiter = ',', default_value = "none,no_neighborhood,no_semantics,naive_masking")]
    pub ablations: Vec<Ablation>,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[command(flatten)]
    pub train: TrainOverrides,
    #[command(flatten)]
    pub eval: EvalOptions,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 200)]
    pub terms: usize,
    #[arg(long, default_value_t = 2000)]
    pub genes: usize,
    /// Co-occurrence rules between terms that share no edge.
    #[arg(long, default_value_t = 20)]
    pub rules: usize,
    /// Rules whose antecedent is a direct child of the consequent.
    #[arg(long, default_value_t = 0)]
    pub edge_rules: usize,
    #[arg(long, env = "GOBERT_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match &cli.command {
        Command::ParseObo(a) => commands::parse_obo(a),
        Command::BuildCorpus(a) => commands::build_corpus(a),
        Command::Pretrain(a) => commands::pretrain(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Predict(a) => commands::predict(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Synth(a) => commands::synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| c.is::<UsageError>()) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, Write as _};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gobert::corpus::{dedupe_examples, kmeans_split, load_annotations, write_jsonl, GeneExample, SplitRatios};
use gobert::embedding::EmbeddingMatrix;
use gobert::eval::{evaluate as run_eval, predecessor_ranking, restricted_ranking, run_ablation_suite, EvalConfig, RankedTerm};
use gobert::masking::MaskingMode;
use gobert::model::Checkpoint;
use gobert::ontology::{parse_obo_unchecked, GoDag, Namespace, TermId};
use gobert::synthetic::{planted_corpus, synthetic_obo, PlantedConfig};
use gobert::train::{TrainConfig, Trainer};
use serde::Serialize;

use crate::manifest::{create_dir, read_ontology, CorpusDir, RunManifest, CORPUS, ONTOLOGY, SPLIT};
use crate::{AblateArgs, BuildCorpusArgs, EvalOptions, EvaluateArgs, ParseOboArgs, PredictArgs, PretrainArgs, SynthArgs, UsageError};

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

pub fn parse_obo(args: &ParseOboArgs) -> Result<()> {
    let bytes = fs::read(&args.obo).with_context(|| format!("reading {}", args.obo.display()))?;
    let dag = parse_obo_unchecked(&bytes).with_context(|| format!("parsing {}", args.obo.display()))?;
    let report = dag.validate();
    create_dir(&args.out)?;

    #[derive(Serialize)]
    struct Summary<'a> {
        valid: bool,
        terms: usize,
        obsolete_terms: usize,
        edges: usize,
        stats: &'a gobert::ontology::ParseStats,
        violations: &'a [gobert::ontology::Violation],
    }
    let summary = Summary {
        valid: report.is_valid(),
        terms: dag.len(),
        obsolete_terms: dag.obsolete_terms().len(),
        edges: dag.edges().len(),
        stats: dag.stats(),
        violations: &report.violations,
    };
    write(&args.out.join("edges.tsv"), dag.edge_list_tsv())?;
    write(&args.out.join("terms.json"), dag.term_table_json())?;
    write(&args.out.join("validation.json"), serde_json::to_string_pretty(&summary)? + "\n")?;

    let mut m = RunManifest::new("parse-obo", None, serde_json::json!({ "allow_violations": args.allow_violations }))?;
    m.input("obo", &args.obo)?;
    for f in ["edges.tsv", "terms.json", "validation.json"] {
        m.output(&args.out, f)?;
    }
    m.count("terms", dag.len());
    m.count("obsolete_terms", dag.obsolete_terms().len());
    m.count("edges", dag.edges().len());
    m.count("violations", report.violations.len());
    m.write(&args.out)?;

    println!(
        "{} terms ({} obsolete), {} edges, {} skipped relations, {} violations",
        dag.len(),
        dag.obsolete_terms().len(),
        dag.edges().len(),
        dag.stats().skipped_relation_count(),
        report.violations.len()
    );
    if !report.is_valid() {
        for v in &report.violations {
            eprintln!("{v}");
        }
        if !args.allow_violations {
            bail!("ontology failed validation with {} violation(s)", report.violations.len());
        }
    }
    Ok(())
}

fn load_embeddings(path: Option<&Path>, dag: &GoDag, fallback_dim: usize, seed: u64) -> Result<EmbeddingMatrix> {
    match path {
        Some(p) => {
            let bytes = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
            let m = EmbeddingMatrix::load(&bytes, dag, None, seed).with_context(|| format!("loading {}", p.display()))?;
            if m.fallback_fills() > 0 {
                log::warn!("{} of {} terms missing from {}; fallback vectors used", m.fallback_fills(), dag.len(), p.display());
            }
            Ok(m)
        }
        None => Ok(EmbeddingMatrix::fallback(dag, fallback_dim, seed)?),
    }
}

pub fn build_corpus(args: &BuildCorpusArgs) -> Result<()> {
    let ratios: SplitRatios = args.ratios.parse().map_err(|e| UsageError(format!("--ratios: {e}")))?;
    if args.k == 0 || args.max_len == 0 || args.dim == 0 {
        bail!(UsageError("--k, --max-len and --dim must be at least 1".into()));
    }
    let dag = read_ontology(&args.obo)?;
    let file = File::open(&args.annotations).with_context(|| format!("reading {}", args.annotations.display()))?;
    let (examples, stats) = load_annotations(BufReader::new(file), &dag, args.max_len)
        .with_context(|| format!("parsing {}", args.annotations.display()))?;
    let loaded = examples.len();
    let examples = if args.keep_duplicates { examples } else { dedupe_examples(examples) };
    let provider = load_embeddings(args.embeddings.as_deref(), &dag, args.dim, args.seed)?;
    let split = kmeans_split(&examples, &provider, args.k, ratios, args.seed)?;

    create_dir(&args.out)?;
    fs::copy(&args.obo, args.out.join(ONTOLOGY)).context("copying ontology")?;
    write(&args.out.join(CORPUS), write_jsonl(&examples)?)?;
    write(&args.out.join(SPLIT), serde_json::to_string_pretty(&split)? + "\n")?;
    write(&args.out.join("annotation_stats.json"), serde_json::to_string_pretty(&stats)? + "\n")?;

    #[derive(Serialize)]
    struct Resolved<'a> {
        k: usize,
        ratios: SplitRatios,
        seed: u64,
        max_len: usize,
        embeddings: &'a str,
        dim: usize,
        dedupe: bool,
    }
    let resolved = Resolved {
        k: args.k,
        ratios,
        seed: args.seed,
        max_len: args.max_len,
        embeddings: if args.embeddings.is_some() { "file" } else { "fallback" },
        dim: provider.dim(),
        dedupe: !args.keep_duplicates,
    };
    let mut m = RunManifest::new("build-corpus", Some(args.seed), &resolved)?;
    m.input("obo", &args.obo)?;
    m.input("annotations", &args.annotations)?;
    if let Some(p) = &args.embeddings {
        m.input("embeddings", p)?;
    }
    for f in [ONTOLOGY, CORPUS, SPLIT, "annotation_stats.json"] {
        m.output(&args.out, f)?;
    }
    m.count("genes_loaded", loaded);
    m.count("genes", examples.len());
    m.count("train", split.train.len());
    m.count("valid", split.valid.len());
    m.count("test", split.test.len());
    m.write(&args.out)?;
    println!(
        "{} genes ({} duplicates removed): train {}, valid {}, test {}",
        examples.len(),
        loaded - examples.len(),
        split.train.len(),
        split.valid.len(),
        split.test.len()
    );
    Ok(())
}

fn non_empty(examples: Vec<GeneExample>, split: &str) -> Result<Vec<GeneExample>> {
    if examples.is_empty() {
        bail!("the {split} split is empty");
    }
    Ok(examples)
}

fn checkpoint_name(epoch: u64) -> String {
    format!("checkpoints/epoch-{epoch:03}.ckpt")
}

pub fn pretrain(args: &PretrainArgs) -> Result<()> {
    let corpus = CorpusDir::load(&args.corpus)?;
    let train = non_empty(corpus.part("train")?, "train")?;
    let mut trainer = match &args.resume {
        Some(path) => {
            let ck = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
            let mut t = Trainer::resume(ck, &corpus.dag, &train)?;
            if let Some(e) = args.train.epochs {
                t.config.epochs = e;
            }
            if args.ablation.is_some() || args.embeddings.is_some() || args.train.sets_more_than_epochs() {
                log::warn!("only --epochs is honoured when resuming; other training flags are ignored");
            }
            t
        }
        None => {
            let config = args.train.resolve(args.ablation)?;
            let embeddings = load_embeddings(args.embeddings.as_deref(), &corpus.dag, config.hidden, config.seed)?;
            Trainer::new(config, &corpus.dag, &train, &embeddings)?
        }
    };

    create_dir(&args.out.join("checkpoints"))?;
    let metrics_path = args.out.join("metrics.jsonl");
    let mut metrics = if args.resume.is_some() {
        OpenOptions::new().create(true).append(true).open(&metrics_path)
    } else {
        File::create(&metrics_path)
    }
    .with_context(|| format!("opening {}", metrics_path.display()))?;

    let out = args.out.clone();
    let mut last_saved: Option<PathBuf> = None;
    let outcome = trainer.train(|m, t| {
        metrics.write_all(m.to_json_line()?.as_bytes())?;
        metrics.flush()?;
        let path = out.join(checkpoint_name(m.epoch));
        t.checkpoint()?.save(&path)?;
        last_saved = Some(path);
        if !t.config.deterministic {
            log::info!("epoch {} done in {:.2}s", m.epoch, m.seconds);
        }
        Ok(())
    });
    if let Err(e) = outcome {
        let kept = last_saved.or(args.resume.clone()).map(|p| p.display().to_string()).unwrap_or_else(|| "none".into());
        return Err(anyhow::Error::new(e).context(format!("training aborted; last good checkpoint: {kept}")));
    }

    let final_ck = trainer.checkpoint()?;
    final_ck.save(args.out.join("model.ckpt"))?;
    fs::copy(corpus.root.join(ONTOLOGY), args.out.join(ONTOLOGY)).context("copying ontology")?;

    let mut m = RunManifest::new("pretrain", Some(trainer.config.seed), &trainer.config)?;
    corpus.record_inputs(&mut m)?;
    if let Some(p) = &args.embeddings {
        m.input("embeddings", p)?;
    }
    if let Some(p) = &args.resume {
        m.input("resume", p)?;
    }
    m.output(&args.out, "metrics.jsonl")?;
    m.output(&args.out, "model.ckpt")?;
    for epoch in 1..=trainer.epoch {
        let name = checkpoint_name(epoch);
        if args.out.join(&name).exists() {
            m.output(&args.out, &name)?;
        }
    }
    m.count("train_genes", trainer.example_count());
    m.count("epochs", trainer.epoch as usize);
    m.count("steps", trainer.adam.step as usize);
    m.count("parameters", trainer.params.parameter_count());
    m.write(&args.out)?;
    println!("trained {} epochs ({} steps) on {} genes", trainer.epoch, trainer.adam.step, trainer.example_count());
    Ok(())
}

fn parse_list<T: std::str::FromStr>(flag: &str, s: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|p| p.trim().parse::<T>().map_err(|_| UsageError(format!("{flag}: cannot parse {p:?}")).into()))
        .collect()
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (
            a.trim().parse().map_err(|_| UsageError(format!("--seeds: bad range {s:?}")))?,
            b.trim().parse().map_err(|_| UsageError(format!("--seeds: bad range {s:?}")))?,
        );
        if b < a {
            bail!(UsageError(format!("--seeds: empty range {s:?}")));
        }
        return Ok((a..=b).collect());
    }
    parse_list("--seeds", s)
}

fn eval_config(opts: &EvalOptions, train_alpha: f64) -> Result<EvalConfig> {
    let cfg = EvalConfig {
        ks: parse_list("--k", &opts.k)?,
        seeds: parse_seeds(&opts.seeds)?,
        alpha_mask: opts.eval_alpha.unwrap_or(train_alpha),
        masking: if opts.naive_eval_masking { MaskingMode::Naive } else { MaskingMode::Strategy },
        exclude_inputs: opts.exclude_inputs,
        depth_buckets: opts.depth_buckets,
    };
    cfg.validate().map_err(|e| UsageError(format!("evaluation options: {e}")))?;
    Ok(cfg)
}

fn check_vocabulary(ck: &Checkpoint, dag: &GoDag) -> Result<()> {
    let same = ck.header.vocabulary.len() == dag.len() && ck.header.vocabulary.iter().zip(dag.terms()).all(|(a, t)| a == t.id.as_str());
    if !same {
        bail!("checkpoint vocabulary does not match the ontology");
    }
    Ok(())
}

pub fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let corpus = CorpusDir::load(&args.corpus)?;
    let examples = non_empty(corpus.part(&args.split)?, &args.split)?;
    let ck = Checkpoint::load(&args.checkpoint).with_context(|| format!("loading {}", args.checkpoint.display()))?;
    check_vocabulary(&ck, &corpus.dag)?;
    let train: TrainConfig = serde_json::from_value(ck.header.train.clone()).unwrap_or_default();
    let cfg = eval_config(&args.eval, train.alpha_mask)?;
    let report = run_eval(&ck.params, &examples, &corpus.dag, &cfg)?;
    report.check_invariants()?;

    create_dir(&args.out)?;
    let text = report.to_text(train.ablation.row_label());
    write(&args.out.join("report.json"), report.to_json()?)?;
    write(&args.out.join("report.txt"), &text)?;
    let mut m = RunManifest::new("evaluate", None, serde_json::json!({ "split": args.split, "eval": cfg }))?;
    corpus.record_inputs(&mut m)?;
    m.input("checkpoint", &args.checkpoint)?;
    m.output(&args.out, "report.json")?;
    m.output(&args.out, "report.txt")?;
    m.count("genes", examples.len());
    m.count("positions", report.counts.iter().map(|c| c.positions).sum());
    m.write(&args.out)?;
    print!("{text}");
    Ok(())
}

fn term_arg(s: &str, dag: &GoDag) -> Result<TermId> {
    let id: TermId = s.trim().parse().map_err(|_| UsageError(format!("invalid term id {s:?}")))?;
    dag.index_of(&id).map_err(|_| UsageError(format!("term {id} is not an active term of the ontology")))?;
    Ok(id)
}

fn find_ontology(args: &PredictArgs) -> Result<PathBuf> {
    if let Some(p) = &args.obo {
        return Ok(p.clone());
    }
    let dir = args.checkpoint.parent().unwrap_or(Path::new("."));
    for candidate in [dir.join(ONTOLOGY), dir.join("..").join(ONTOLOGY)] {
        if candidate.exists() {
            return Ok(candidate);
        }
    }
    bail!(UsageError(format!("no {ONTOLOGY} next to {}; pass --obo", args.checkpoint.display())))
}

pub fn predict(args: &PredictArgs) -> Result<()> {
    let dag = read_ontology(&find_ontology(args)?)?;
    let known = args.terms.iter().filter(|s| !s.trim().is_empty()).map(|s| term_arg(s, &dag)).collect::<Result<Vec<_>>>()?;
    let ck = Checkpoint::load(&args.checkpoint).with_context(|| format!("loading {}", args.checkpoint.display()))?;
    check_vocabulary(&ck, &dag)?;
    let ranked: Vec<RankedTerm> = match (&args.namespace, args.depth, &args.predecessors_of) {
        (Some(ns), Some(depth), None) => {
            let ns: Namespace = ns.parse().map_err(|e| UsageError(format!("--namespace: {e}")))?;
            restricted_ranking(&ck.params, &dag, &known, ns, depth)?
        }
        (None, None, Some(anchor)) => {
            let anchor = term_arg(anchor, &dag)?;
            predecessor_ranking(&ck.params, &dag, &known, &anchor)?
        }
        _ => bail!(UsageError("use either --namespace with --depth, or --predecessors-of".into())),
    };
    let mut out = std::io::stdout().lock();
    for r in ranked.iter().take(args.top.unwrap_or(usize::MAX)) {
        writeln!(out, "{}\t{}\t{}\t{:.6}", r.rank, r.term, r.name, r.probability)?;
    }
    Ok(())
}

pub fn ablate(args: &AblateArgs) -> Result<()> {
    let corpus = CorpusDir::load(&args.corpus)?;
    let train = non_empty(corpus.part("train")?, "train")?;
    let test = non_empty(corpus.part(&args.split)?, &args.split)?;
    let base = args.train.resolve(None)?;
    let eval = eval_config(&args.eval, base.alpha_mask)?;
    let embeddings = load_embeddings(args.embeddings.as_deref(), &corpus.dag, base.hidden, base.seed)?;
    let table = run_ablation_suite(&base, &args.ablations, &train, &test, &corpus.dag, &embeddings, &eval)?;

    create_dir(&args.out)?;
    write(&args.out.join("table.tsv"), table.to_tsv())?;
    write(&args.out.join("table.txt"), table.to_text())?;
    write(&args.out.join("reports.json"), serde_json::to_string_pretty(&table)? + "\n")?;
    let ablations: Vec<&str> = args.ablations.iter().map(|a| a.as_str()).collect();
    let config = serde_json::json!({ "train": base, "eval": eval, "ablations": ablations, "split": args.split });
    let mut m = RunManifest::new("ablate", Some(base.seed), config)?;
    corpus.record_inputs(&mut m)?;
    if let Some(p) = &args.embeddings {
        m.input("embeddings", p)?;
    }
    for f in ["table.tsv", "table.txt", "reports.json"] {
        m.output(&args.out, f)?;
    }
    m.count("train_genes", train.len());
    m.count("test_genes", test.len());
    m.write(&args.out)?;
    print!("{}", table.to_text());
    Ok(())
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    if args.terms < 4 || args.genes == 0 {
        bail!(UsageError("--terms must be at least 4 and --genes at least 1".into()));
    }
    let obo = synthetic_obo(args.terms, args.seed)?;
    let dag = gobert::ontology::parse_obo(obo.as_bytes())?;
    let cfg = PlantedConfig { genes: args.genes, non_edge_rules: args.rules, edge_rules: args.edge_rules, seed: args.seed, ..Default::default() };
    let corpus = planted_corpus(&dag, &cfg)?;

    create_dir(&args.out)?;
    write(&args.out.join(ONTOLOGY), &obo)?;
    write(&args.out.join("annotations.tsv"), corpus.to_tsv())?;
    #[derive(Serialize)]
    struct Rules<'a> {
        rules: &'a [gobert::synthetic::PlantedRule],
        gene_rules: Vec<(&'a str, &'a [usize])>,
    }
    let rules = Rules {
        rules: &corpus.rules,
        gene_rules: corpus.genes.iter().zip(&corpus.gene_rules).map(|(g, r)| (g.gene.as_str(), r.as_slice())).collect(),
    };
    write(&args.out.join("rules.json"), serde_json::to_string_pretty(&rules)? + "\n")?;
    let mut m = RunManifest::new("synth", Some(args.seed), &cfg)?;
    m.config["terms"] = args.terms.into();
    for f in [ONTOLOGY, "annotations.tsv", "rules.json"] {
        m.output(&args.out, f)?;
    }
    m.count("rules", corpus.rules.len());
    m.count("genes", corpus.genes.len());
    m.write(&args.out)?;
    println!("{} terms, {} genes, {} planted rules", dag.len(), corpus.genes.len(), corpus.rules.len());
    Ok(())
}

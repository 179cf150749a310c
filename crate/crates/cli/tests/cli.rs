use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gobert::ontology::parse_obo;

const OBO: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/tests/fixtures/ontology40.obo");
const ANNOTATIONS: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/tests/fixtures/annotations200.tsv");
const TINY: [&str; 11] = ["--hidden", "16", "--layers", "1", "--heads", "2", "--ffn-dim", "32", "--batch-size", "8", "--deterministic"];

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gobert")).args(args).env_remove("GOBERT_SEED").output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn corpus(dir: &Path, ratios: &str) -> PathBuf {
    let out = dir.join("corpus");
    ok(&["build-corpus", "--annotations", ANNOTATIONS, "--obo", OBO, "--k", "3", "--ratios", ratios, "--dim", "16", "--out", s(&out)]);
    out
}

fn pretrain(corpus: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["pretrain", "--corpus", s(corpus), "--out", s(out)];
    args.extend(TINY);
    args.extend(extra);
    run(&args)
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_slice(&fs::read(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(run(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(run(&["parse-obo", "--obo", OBO]).status.code(), Some(2));
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    let bad_ratios = run(&["build-corpus", "--annotations", ANNOTATIONS, "--obo", OBO, "--ratios", "0.5,0.2", "--out", s(&out)]);
    assert_eq!(bad_ratios.status.code(), Some(2));
    let c = corpus(tmp.path(), "0.6,0.2,0.2");
    let bad_heads = pretrain(&c, &out, &["--heads", "3", "--epochs", "1"]);
    assert_eq!(bad_heads.status.code(), Some(2), "{}", String::from_utf8_lossy(&bad_heads.stderr));
    assert!(run(&["--help"]).status.success());
}

#[test]
fn parse_obo_exports_the_fixture() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("parsed");
    ok(&["parse-obo", "--obo", OBO, "--out", s(&out)]);
    let dag = parse_obo(&fs::read(OBO).unwrap()).unwrap();
    let edges = fs::read_to_string(out.join("edges.tsv")).unwrap();
    assert_eq!(edges.lines().filter(|l| !l.starts_with('#') && !l.starts_with("source")).count(), dag.edges().len());
    let terms: serde_json::Value = serde_json::from_slice(&fs::read(out.join("terms.json")).unwrap()).unwrap();
    let terms = terms.as_array().unwrap();
    assert_eq!(terms.len(), 42);
    assert_eq!(terms.iter().filter(|t| t["is_obsolete"] == true).count(), 2);
    let m = manifest(&out);
    assert_eq!(m["counts"]["terms"], 40);
    assert_eq!(m["counts"]["obsolete_terms"], 2);
    assert_eq!(m["inputs"]["obo"]["file"], "ontology40.obo");
    let validation: serde_json::Value = serde_json::from_slice(&fs::read(out.join("validation.json")).unwrap()).unwrap();
    assert_eq!(validation["valid"], true);
}

#[test]
fn cyclic_ontology_fails_and_names_the_cycle() {
    let tmp = tempfile::tempdir().unwrap();
    let obo = tmp.path().join("cyclic.obo");
    let mut text = String::from("format-version: 1.2\n\n[Term]\nid: GO:0008150\nname: biological_process\nnamespace: biological_process\n");
    for (a, b) in [("0000001", "0000003"), ("0000002", "0000001"), ("0000003", "0000002")] {
        text += &format!("\n[Term]\nid: GO:{a}\nname: t{a}\nnamespace: biological_process\nis_a: GO:{b}\nis_a: GO:0008150\n");
    }
    fs::write(&obo, text).unwrap();
    let out = run(&["parse-obo", "--obo", s(&obo), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    for id in ["GO:0000001", "GO:0000002", "GO:0000003"] {
        assert!(err.contains(id), "{err}");
    }
    let allowed = run(&["parse-obo", "--obo", s(&obo), "--out", s(&tmp.path().join("o2")), "--allow-violations"]);
    assert!(allowed.status.success());
}

#[test]
fn build_corpus_counts_match_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let c = corpus(tmp.path(), "1,0,0");
    let m = manifest(&c);
    let lines = fs::read_to_string(c.join("corpus.jsonl")).unwrap().lines().count();
    assert_eq!(m["counts"]["genes"], lines);
    assert_eq!(m["outputs"]["corpus.jsonl"]["lines"], lines);
    assert_eq!(m["counts"]["train"], lines);
    assert_eq!(m["counts"]["valid"], 0);
    assert_eq!(m["counts"]["test"], 0);
    let stats: serde_json::Value = serde_json::from_slice(&fs::read(c.join("annotation_stats.json")).unwrap()).unwrap();
    assert_eq!(stats["lines"], 200);
    assert!(stats["unknown_terms"].as_u64().unwrap() >= 1);
    assert!(stats["duplicate_pairs"].as_u64().unwrap() >= 1);

    // Evaluating an empty split is a domain failure.
    let model = tmp.path().join("m");
    assert!(pretrain(&c, &model, &["--epochs", "1"]).status.success());
    let ev = run(&["evaluate", "--checkpoint", s(&model.join("model.ckpt")), "--corpus", s(&c), "--out", s(&tmp.path().join("e"))]);
    assert_eq!(ev.status.code(), Some(1));
}

#[test]
fn pretrain_writes_one_checkpoint_and_metric_per_epoch() {
    let tmp = tempfile::tempdir().unwrap();
    let c = corpus(tmp.path(), "0.6,0.2,0.2");
    let out = tmp.path().join("run");
    assert!(pretrain(&c, &out, &["--epochs", "2"]).status.success());
    let ckpts: Vec<_> = fs::read_dir(out.join("checkpoints")).unwrap().collect();
    assert_eq!(ckpts.len(), 2);
    let metrics = fs::read_to_string(out.join("metrics.jsonl")).unwrap();
    let records: Vec<serde_json::Value> = metrics.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 2);
    assert_eq!(records[1]["epoch"], 2);
    assert!(records.iter().all(|r| r["loss_ex"].is_number() && r["loss_im"].is_number() && r["seconds"] == 0.0));

    // Resuming into the same directory appends the remaining epochs.
    let ck = out.join("checkpoints/epoch-002.ckpt");
    assert!(pretrain(&c, &out, &["--epochs", "3", "--resume", s(&ck)]).status.success());
    let metrics = fs::read_to_string(out.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 3);
    assert_eq!(manifest(&out)["counts"]["epochs"], 3);

    let nbr = tmp.path().join("nbr");
    assert!(pretrain(&c, &nbr, &["--epochs", "1", "--ablation", "no_neighborhood"]).status.success());
    let line = fs::read_to_string(nbr.join("metrics.jsonl")).unwrap();
    let rec: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
    assert!(rec.get("loss_ex").is_none(), "{line}");
}

#[test]
fn divergence_exits_one_and_names_the_last_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let c = corpus(tmp.path(), "0.6,0.2,0.2");
    let out = pretrain(&c, &tmp.path().join("run"), &["--epochs", "3", "--lr", "1e38"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("last good checkpoint"), "{err}");
}

#[test]
fn evaluate_and_predict() {
    let tmp = tempfile::tempdir().unwrap();
    let c = corpus(tmp.path(), "0.6,0.2,0.2");
    let model = tmp.path().join("m");
    assert!(pretrain(&c, &model, &["--epochs", "2"]).status.success());
    let ckpt = model.join("model.ckpt");
    let ev = tmp.path().join("ev");
    let printed = ok(&["evaluate", "--checkpoint", s(&ckpt), "--corpus", s(&c), "--split", "valid", "--seeds", "0,1", "--k", "1,3", "--out", s(&ev)]);
    let text = String::from_utf8(printed.stdout).unwrap();
    assert_eq!(text, fs::read_to_string(ev.join("report.txt")).unwrap());
    assert!(text.starts_with("Model"), "{text}");
    let report: serde_json::Value = serde_json::from_slice(&fs::read(ev.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["counts"].as_array().unwrap().len(), 2);
    assert!(report["columns"]["top3_depth"].is_object());
    let unknown_split = run(&["evaluate", "--checkpoint", s(&ckpt), "--corpus", s(&c), "--split", "dev", "--out", s(&ev)]);
    assert_eq!(unknown_split.status.code(), Some(2));

    let dag = parse_obo(&fs::read(OBO).unwrap()).unwrap();
    let single = (0..dag.len()).find(|&i| dag.predecessors_of(i).len() == 1).expect("fixture has a single-predecessor term");
    let anchor = dag.term(single).id.to_string();
    let context = dag.term(dag.predecessors_of(single)[0].0).id.to_string();
    let out = ok(&["predict", "--checkpoint", s(&ckpt), "--terms", &context, "--predecessors-of", &anchor]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), 1);
    let fields: Vec<&str> = lines[0].split('\t').collect();
    assert_eq!(fields.len(), 4);
    assert_eq!((fields[0], fields[1]), ("1", context.as_str()));

    let ranked = ok(&["predict", "--checkpoint", s(&ckpt), "--terms", &context, "--namespace", "biological_process", "--depth", "1"]);
    let expected = dag.terms_at(Some(gobert::ontology::Namespace::BiologicalProcess), 1).len();
    assert_eq!(String::from_utf8(ranked.stdout).unwrap().lines().count(), expected);

    for bad in ["GO:12", "GO:7777777"] {
        let out = run(&["predict", "--checkpoint", s(&ckpt), "--terms", bad, "--predecessors-of", &anchor]);
        assert_eq!(out.status.code(), Some(2), "{bad}");
    }
    let missing_mode = run(&["predict", "--checkpoint", s(&ckpt), "--terms", &context]);
    assert_eq!(missing_mode.status.code(), Some(2));
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for run_dir in ["a", "b"] {
        let root = tmp.path().join(run_dir);
        let syn = root.join("syn");
        ok(&["synth", "--terms", "60", "--genes", "120", "--rules", "4", "--edge-rules", "2", "--seed", "3", "--out", s(&syn)]);
        let c = root.join("corpus");
        ok(&["build-corpus", "--annotations", s(&syn.join("annotations.tsv")), "--obo", s(&syn.join("ontology.obo")), "--k", "6", "--dim", "16", "--out", s(&c)]);
        let abl = root.join("abl");
        let mut args = vec!["ablate", "--corpus", s(&c), "--out", s(&abl), "--seeds", "0..1", "--epochs", "1"];
        args.extend(TINY);
        ok(&args);
        let mut files = Vec::new();
        for dir in [&syn, &c, &abl] {
            let mut names: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
            names.sort();
            for n in names {
                files.push((n.file_name().unwrap().to_owned(), fs::read(&n).unwrap()));
            }
        }
        outputs.push(files);
    }
    assert_eq!(outputs[0], outputs[1]);
    let rules: serde_json::Value = serde_json::from_slice(&fs::read(tmp.path().join("a/syn/rules.json")).unwrap()).unwrap();
    assert_eq!(rules["rules"].as_array().unwrap().len(), 6);
}

#[test]
fn seed_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let status = Command::new(env!("CARGO_BIN_EXE_gobert"))
        .args(["synth", "--terms", "40", "--genes", "30", "--rules", "2", "--out", s(&a)])
        .env("GOBERT_SEED", "9")
        .status()
        .unwrap();
    assert!(status.success());
    ok(&["synth", "--terms", "40", "--genes", "30", "--rules", "2", "--seed", "9", "--out", s(&b)]);
    assert_eq!(fs::read(a.join("annotations.tsv")).unwrap(), fs::read(b.join("annotations.tsv")).unwrap());
    assert_eq!(manifest(&a)["seed"], 9);
}

//! Seeded synthetic ontologies and corpora with known structure.
//!
//! Used by the test suites and the `synth` CLI subcommand. The planted-rule
//! corpus hides co-occurrence rules (term `a` present implies term `b`
//! present) among random background terms, so a model that learns from
//! context can recover `b` when it is masked.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{GeneExample, GeneId};
use crate::error::{Error, Result};
use crate::ontology::{GoDag, Namespace, TermId};
use crate::rng::{derive_seed, rng_from};

const ROOTS: [(Namespace, &str); 3] = [
    (Namespace::BiologicalProcess, "GO:0008150"),
    (Namespace::MolecularFunction, "GO:0003674"),
    (Namespace::CellularComponent, "GO:0005575"),
];

/// OBO text of a random ontology with `terms` active terms (three of them
/// the canonical namespace roots). Each non-root term gets one `is_a`
/// parent, sometimes a second `is_a` or `part_of` parent, and occasionally a
/// `regulates` edge, always towards earlier terms of its namespace.
pub fn synthetic_obo(terms: usize, seed: u64) -> Result<String> {
    if terms < 3 {
        return Err(Error::InvalidArgument("a synthetic ontology needs at least the three roots".into()));
    }
    let mut rng = rng_from(derive_seed(seed, &[0x4F42_4F00]));
    let mut out = String::from("format-version: 1.2\nontology: go-synthetic\n");
    let mut members: Vec<Vec<String>> = ROOTS.iter().map(|(_, id)| vec![id.to_string()]).collect();
    for (ns, id) in ROOTS {
        let _ = write!(out, "\n[Term]\nid: {id}\nname: {ns}\nnamespace: {ns}\ndef: \"Root of the {ns} namespace.\" []\n");
    }
    for i in 0..terms - 3 {
        let id = format!("GO:{:07}", 1_000_001 + i);
        let ns_index = rng.random_range(0..3);
        let ns = ROOTS[ns_index].0;
        // Favour recent terms so the hierarchy grows deeper than a star.
        let pool = &members[ns_index];
        let pick = |rng: &mut crate::rng::Rng| {
            let lo = pool.len().saturating_sub(12);
            if rng.random::<f64>() < 0.6 {
                pool[rng.random_range(lo..pool.len())].clone()
            } else {
                pool.choose(rng).expect("pool has the root").clone()
            }
        };
        let parent = pick(&mut rng);
        let _ = write!(
            out,
            "\n[Term]\nid: {id}\nname: synthetic {ns} term {i}\nnamespace: {ns}\ndef: \"Synthetic function number {i}.\" []\nis_a: {parent}\n"
        );
        if pool.len() > 2 && rng.random::<f64>() < 0.2 {
            let second = pick(&mut rng);
            if second != parent {
                let kind = if rng.random::<bool>() { "is_a:" } else { "relationship: part_of" };
                let _ = writeln!(out, "{kind} {second}");
            }
        }
        if pool.len() > 2 && rng.random::<f64>() < 0.08 {
            let target = pick(&mut rng);
            if target != parent {
                let _ = writeln!(out, "relationship: regulates {target}");
            }
        }
        members[ns_index].push(id);
    }
    Ok(out)
}

/// Random annotation sets (1 to `max_terms` distinct terms, roots included)
/// as DAG index lists.
pub fn random_term_sets(dag: &GoDag, count: usize, max_terms: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = rng_from(seed);
    (0..count)
        .map(|_| {
            let k = rng.random_range(1..=max_terms.min(dag.len()));
            let mut all: Vec<usize> = (0..dag.len()).collect();
            // Half the sets draw from one namespace so predecessor pairs are common.
            if rng.random::<bool>() {
                let ns = dag.term(rng.random_range(0..dag.len())).namespace;
                all.retain(|&i| dag.term(i).namespace == ns);
            }
            let (chosen, _) = all.partial_shuffle(&mut rng, k);
            let mut v = chosen.to_vec();
            v.sort_unstable();
            v
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    /// `a` and `b` share no edge.
    NonEdge,
    /// `a` is a direct predecessor (child) of `b`.
    Edge,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedRule {
    pub antecedent: TermId,
    pub consequent: TermId,
    pub kind: RuleKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedConfig {
    pub genes: usize,
    pub non_edge_rules: usize,
    pub edge_rules: usize,
    pub min_background: usize,
    pub max_background: usize,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self { genes: 2000, non_edge_rules: 20, edge_rules: 0, min_background: 2, max_background: 5, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct PlantedCorpus {
    pub genes: Vec<GeneExample>,
    pub rules: Vec<PlantedRule>,
    /// Indices into `rules` planted in each gene.
    pub gene_rules: Vec<Vec<usize>>,
}

impl PlantedCorpus {
    /// Seeded random split of gene indices into (train, test).
    pub fn split(&self, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
        let mut order: Vec<usize> = (0..self.genes.len()).collect();
        order.shuffle(&mut rng_from(seed));
        let cut = (self.genes.len() as f64 * train_fraction).round() as usize;
        let (train, test) = order.split_at(cut);
        let (mut train, mut test) = (train.to_vec(), test.to_vec());
        train.sort_unstable();
        test.sort_unstable();
        (train, test)
    }

    /// Tab-separated `gene<TAB>term` lines.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for g in &self.genes {
            for t in &g.terms {
                let _ = writeln!(out, "{}\t{}", g.gene, t);
            }
        }
        out
    }
}

/// Builds a corpus where every gene carries one non-edge rule (if any) and
/// one edge rule (if any) plus random background terms. Rule terms never
/// appear as background. Non-edge consequents are leaves whose parent has at
/// least one other child, so predecessor queries on the parent have a
/// planted answer.
pub fn planted_corpus(dag: &GoDag, config: &PlantedConfig) -> Result<PlantedCorpus> {
    let mut rng = rng_from(derive_seed(config.seed, &[0x504C_4E54]));
    let mut used: BTreeSet<usize> = BTreeSet::new();
    let adjacent = |a: usize, b: usize| {
        dag.successors_of(a).iter().any(|&(x, _)| x == b) || dag.predecessors_of(a).iter().any(|&(x, _)| x == b)
    };
    let mut order: Vec<usize> = (0..dag.len()).collect();
    order.shuffle(&mut rng);

    let mut rules = Vec::new();
    // Non-edge rules.
    let consequents: Vec<usize> = order
        .iter()
        .copied()
        .filter(|&b| !dag.is_root(b) && dag.predecessors_of(b).is_empty() && dag.depth_of(b).is_some())
        .filter(|&b| {
            dag.successors_of(b)
                .iter()
                .any(|&(p, _)| dag.predecessors_of(p).iter().filter(|&&(c, _)| c != b).count() >= 1)
        })
        .collect();
    for &b in &consequents {
        if rules.len() == config.non_edge_rules {
            break;
        }
        if used.contains(&b) {
            continue;
        }
        let a = order.iter().copied().find(|&a| a != b && !used.contains(&a) && !dag.is_root(a) && !adjacent(a, b));
        let Some(a) = a else { break };
        used.insert(a);
        used.insert(b);
        rules.push((a, b, RuleKind::NonEdge));
    }
    if rules.len() < config.non_edge_rules {
        return Err(Error::InvalidArgument(format!(
            "ontology supports only {} of {} non-edge rules",
            rules.len(),
            config.non_edge_rules
        )));
    }
    // Edge rules: child a, non-root parent b.
    let mut edge_count = 0;
    for &a in &order {
        if edge_count == config.edge_rules {
            break;
        }
        if used.contains(&a) || dag.is_root(a) {
            continue;
        }
        let parent = dag
            .successors_of(a)
            .iter()
            .map(|&(p, _)| p)
            .find(|&p| !used.contains(&p) && !dag.is_root(p));
        if let Some(b) = parent {
            used.insert(a);
            used.insert(b);
            rules.push((a, b, RuleKind::Edge));
            edge_count += 1;
        }
    }
    if edge_count < config.edge_rules {
        return Err(Error::InvalidArgument(format!("ontology supports only {edge_count} of {} edge rules", config.edge_rules)));
    }

    let background: Vec<usize> = (0..dag.len()).filter(|i| !used.contains(i) && !dag.is_root(*i)).collect();
    if background.len() < config.max_background {
        return Err(Error::InvalidArgument("too few background terms".into()));
    }
    let non_edge: Vec<usize> = (0..rules.len()).filter(|&r| rules[r].2 == RuleKind::NonEdge).collect();
    let edge: Vec<usize> = (0..rules.len()).filter(|&r| rules[r].2 == RuleKind::Edge).collect();
    let mut genes = Vec::with_capacity(config.genes);
    let mut gene_rules = Vec::with_capacity(config.genes);
    for g in 0..config.genes {
        let mut planted = Vec::new();
        if !non_edge.is_empty() {
            planted.push(non_edge[g % non_edge.len()]);
        }
        if !edge.is_empty() {
            planted.push(*edge.choose(&mut rng).expect("non-empty"));
        }
        let mut terms: BTreeSet<usize> = BTreeSet::new();
        for &r in &planted {
            terms.insert(rules[r].0);
            terms.insert(rules[r].1);
        }
        let k = rng.random_range(config.min_background..=config.max_background);
        for &t in background.choose_multiple(&mut rng, k) {
            terms.insert(t);
        }
        let ids = terms.iter().map(|&i| dag.term(i).id.clone());
        genes.push(GeneExample::new(GeneId::new(format!("gene{g:05}"))?, ids, dag)?);
        gene_rules.push(planted);
    }
    let rules = rules
        .into_iter()
        .map(|(a, b, kind)| PlantedRule { antecedent: dag.term(a).id.clone(), consequent: dag.term(b).id.clone(), kind })
        .collect();
    Ok(PlantedCorpus { genes, rules, gene_rules })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ontology::parse_obo;

    #[test]
    fn synthetic_ontology_is_valid_and_deterministic() {
        let text = synthetic_obo(200, 7).unwrap();
        assert_eq!(text, synthetic_obo(200, 7).unwrap());
        let dag = parse_obo(text.as_bytes()).unwrap();
        assert_eq!(dag.len(), 200);
        assert!(dag.validate().is_valid());
        assert_eq!(dag.roots().len(), 3);
        assert!((0..dag.len()).all(|i| dag.depth_of(i).is_some()));
        assert!((0..dag.len()).filter_map(|i| dag.depth_of(i)).max().unwrap() >= 3);
    }

    #[test]
    fn planted_rules_are_exclusive() {
        let dag = parse_obo(synthetic_obo(200, 3).unwrap().as_bytes()).unwrap();
        let cfg = PlantedConfig { genes: 300, edge_rules: 5, ..Default::default() };
        let corpus = planted_corpus(&dag, &cfg).unwrap();
        assert_eq!(corpus.rules.len(), 25);
        let rule_terms: BTreeSet<&TermId> = corpus.rules.iter().flat_map(|r| [&r.antecedent, &r.consequent]).collect();
        assert_eq!(rule_terms.len(), 50);
        for (g, planted) in corpus.genes.iter().zip(&corpus.gene_rules) {
            let mine: BTreeSet<&TermId> = planted.iter().flat_map(|&r| [&corpus.rules[r].antecedent, &corpus.rules[r].consequent]).collect();
            for t in &g.terms {
                assert!(!rule_terms.contains(t) || mine.contains(t));
            }
            for &r in planted {
                assert!(g.terms.contains(&corpus.rules[r].antecedent) && g.terms.contains(&corpus.rules[r].consequent));
            }
        }
        for r in &corpus.rules {
            let a = dag.index_of(&r.antecedent).unwrap();
            let b = dag.index_of(&r.consequent).unwrap();
            let edge = dag.predecessors_of(b).iter().any(|&(x, _)| x == a);
            assert_eq!(edge, r.kind == RuleKind::Edge);
        }
        let (train, test) = corpus.split(0.8, 1);
        assert_eq!(train.len(), 240);
        assert_eq!(test.len(), 60);
    }
}

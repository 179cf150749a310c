use std::collections::{BTreeMap, BTreeSet};

use gobert::ontology::{parse_obo, parse_obo_unchecked, GoDag, RelationKind, RelationSet, TermId, Violation};
use gobert::synthetic::synthetic_obo;
use proptest::prelude::*;

const FIXTURE: &str = include_str!("fixtures/ontology40.obo");

/// Line-scanning stanza reader that knows nothing about the parser: returns
/// active term ids, obsolete ids, and `(source, kind, target)` statements.
struct Scan {
    active: BTreeSet<String>,
    obsolete: BTreeSet<String>,
    links: Vec<(String, String, String)>,
}

fn scan(text: &str) -> Scan {
    let mut s = Scan { active: BTreeSet::new(), obsolete: BTreeSet::new(), links: Vec::new() };
    for block in text.split("\n\n") {
        let lines: Vec<&str> = block.lines().map(str::trim).collect();
        if lines.first() != Some(&"[Term]") {
            continue;
        }
        let id = lines.iter().find_map(|l| l.strip_prefix("id: ")).unwrap().to_string();
        if lines.contains(&"is_obsolete: true") {
            s.obsolete.insert(id);
            continue;
        }
        for l in &lines {
            let first = |x: &str| x.split_whitespace().next().unwrap().to_string();
            if let Some(rest) = l.strip_prefix("is_a: ") {
                s.links.push((id.clone(), "is_a".into(), first(rest)));
            } else if let Some(rest) = l.strip_prefix("relationship: ") {
                let mut parts = rest.split_whitespace();
                let (kind, target) = (parts.next().unwrap(), parts.next().unwrap());
                s.links.push((id.clone(), kind.into(), target.into()));
            }
        }
        s.active.insert(id);
    }
    s
}

const KINDS: [&str; 5] = ["is_a", "part_of", "regulates", "positively_regulates", "negatively_regulates"];

fn known_links(s: &Scan) -> Vec<(String, String, String)> {
    s.links
        .iter()
        .filter(|(a, k, b)| KINDS.contains(&k.as_str()) && s.active.contains(a) && s.active.contains(b))
        .cloned()
        .collect()
}

fn id(s: &str) -> TermId {
    s.parse().unwrap()
}

#[test]
fn fixture_counts_match_line_scanner() {
    let dag = parse_obo(FIXTURE.as_bytes()).unwrap();
    let s = scan(FIXTURE);
    assert_eq!(dag.len(), s.active.len());
    assert_eq!(dag.len(), 40);
    assert_eq!(dag.obsolete_terms().len(), s.obsolete.len());
    assert_eq!(dag.edges().len(), known_links(&s).len());
    let skipped = s.links.iter().filter(|(_, k, _)| !KINDS.contains(&k.as_str())).count();
    assert_eq!(dag.stats().skipped_relation_count(), skipped);
    assert!(skipped >= 1);
    let order: Vec<&str> = dag.terms().iter().map(|t| t.id.as_str()).collect();
    assert_eq!(order, s.active.iter().map(String::as_str).collect::<Vec<_>>());
    assert!(dag.validate().is_valid());
}

#[test]
fn adjacency_rows_match_edge_list_reconstruction() {
    let dag = parse_obo(FIXTURE.as_bytes()).unwrap();
    let s = scan(FIXTURE);
    let ids: Vec<String> = s.active.iter().cloned().collect();
    let pos = |x: &str| ids.iter().position(|y| y == x).unwrap();
    let mut expected = vec![vec![0u8; ids.len()]; ids.len()];
    for (a, _, b) in known_links(&s) {
        expected[pos(&a)][pos(&b)] = 1;
        expected[pos(&b)][pos(&a)] = 1;
    }
    let mut total = 0usize;
    for (i, term) in ids.iter().enumerate() {
        let row = dag.adjacency_row(&id(term)).unwrap();
        assert_eq!(row, expected[i], "row of {term}");
        total += row.iter().map(|&v| v as usize).sum::<usize>();
    }
    let pairs: BTreeSet<(String, String)> =
        known_links(&s).into_iter().map(|(a, _, b)| if a < b { (a, b) } else { (b, a) }).collect();
    assert_eq!(total, 2 * pairs.len());
    for o in &s.obsolete {
        assert!(dag.adjacency_row(&id(o)).unwrap().iter().all(|&v| v == 0));
    }
}

#[test]
fn predecessors_match_brute_force_scan() {
    let dag = parse_obo(FIXTURE.as_bytes()).unwrap();
    let s = scan(FIXTURE);
    let links = known_links(&s);
    let mut multi_child = 0;
    for term in &s.active {
        let expected: BTreeSet<String> = links.iter().filter(|(_, _, b)| b == term).map(|(a, _, _)| a.clone()).collect();
        let got: BTreeSet<String> = dag.predecessors(&id(term)).unwrap().iter().map(|t| t.to_string()).collect();
        assert_eq!(got, expected, "predecessors of {term}");
        multi_child += usize::from(expected.len() >= 2);
    }
    assert!(multi_child > 0, "fixture should contain a diamond");
    assert!(dag.predecessors(&id("GO:1234567")).is_err());
}

#[test]
fn diamond_parent_lists_both_children() {
    let text = "[Term]\nid: GO:0000001\nname: biological_process\nnamespace: biological_process\n\n\
[Term]\nid: GO:0000002\nname: left\nnamespace: biological_process\nis_a: GO:0000001\n\n\
[Term]\nid: GO:0000003\nname: right\nnamespace: biological_process\nrelationship: part_of GO:0000001\n";
    let dag = parse_obo(text.as_bytes()).unwrap();
    assert_eq!(dag.predecessors(&id("GO:0000001")).unwrap(), vec![id("GO:0000002"), id("GO:0000003")]);
    assert!(dag.predecessors(&id("GO:0000002")).unwrap().is_empty());
}

/// Exhaustive DFS over all simple cycles of a small graph.
fn all_cycles(adj: &BTreeMap<String, Vec<String>>) -> Vec<BTreeSet<String>> {
    fn go(
        adj: &BTreeMap<String, Vec<String>>,
        start: &str,
        v: &str,
        path: &mut Vec<String>,
        out: &mut BTreeSet<BTreeSet<String>>,
    ) {
        for w in adj.get(v).into_iter().flatten() {
            if w == start {
                out.insert(path.iter().cloned().collect());
            } else if !path.contains(w) {
                path.push(w.clone());
                go(adj, start, w, path, out);
                path.pop();
            }
        }
    }
    let mut out = BTreeSet::new();
    for v in adj.keys() {
        go(adj, v, v, &mut vec![v.clone()], &mut out);
    }
    out.into_iter().collect()
}

#[test]
fn three_cycle_is_reported_with_its_members() {
    let text = "[Term]\nid: GO:0008150\nname: biological_process\nnamespace: biological_process\n\n\
[Term]\nid: GO:0000010\nname: a\nnamespace: biological_process\nis_a: GO:0008150\nis_a: GO:0000012\n\n\
[Term]\nid: GO:0000011\nname: b\nnamespace: biological_process\nis_a: GO:0000010\n\n\
[Term]\nid: GO:0000012\nname: c\nnamespace: biological_process\nrelationship: part_of GO:0000011\n";
    let s = scan(text);
    let mut adj: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (a, _, b) in known_links(&s) {
        adj.entry(a).or_default().push(b);
    }
    let oracle = all_cycles(&adj);
    assert_eq!(oracle.len(), 1);

    assert!(parse_obo(text.as_bytes()).is_err());
    let dag = parse_obo_unchecked(text.as_bytes()).unwrap();
    let report = dag.validate();
    let cycles: Vec<BTreeSet<String>> = report.cycles().map(|c| c.iter().map(|t| t.to_string()).collect()).collect();
    assert_eq!(cycles, oracle);
}

#[test]
fn orphan_gives_one_reachability_violation() {
    let text = "[Term]\nid: GO:0008150\nname: biological_process\nnamespace: biological_process\n\n\
[Term]\nid: GO:0000010\nname: a\nnamespace: biological_process\nis_a: GO:0008150\n\n\
[Term]\nid: GO:0000011\nname: orphan\nnamespace: biological_process\n";
    let dag = parse_obo(text.as_bytes()).unwrap();
    let report = dag.validate();
    assert_eq!(report.violations.len(), 1);
    assert!(matches!(&report.violations[0], Violation::Reachability { term, .. } if term.as_str() == "GO:0000011"));
    assert!(dag.depth(&id("GO:0000011")).is_err());
}

#[test]
fn parsing_is_deterministic() {
    let a = parse_obo(FIXTURE.as_bytes()).unwrap();
    let b = parse_obo(FIXTURE.as_bytes()).unwrap();
    assert_eq!(a.terms(), b.terms());
    assert_eq!(a.edges(), b.edges());
    assert_eq!(a.edge_list_tsv(), b.edge_list_tsv());
    assert_eq!(a.term_table_json(), b.term_table_json());
}

fn check_depth_properties(dag: &GoDag) {
    for i in 0..dag.len() {
        let d = dag.depth_of(i).expect("every fixture term reaches a root");
        assert_eq!(d == 0, dag.is_root(i));
        if d > 0 {
            let best = dag
                .successors_of(i)
                .iter()
                .filter(|(_, k)| k.is_hierarchical())
                .filter_map(|&(s, _)| dag.depth_of(s))
                .min()
                .unwrap();
            assert_eq!(d, best + 1, "Bellman condition at {}", dag.term(i).id);
        }
        if !dag.successors_of(i).is_empty() {
            assert!(d >= 1);
        }
    }
}

fn check_symmetry(dag: &GoDag) {
    let rows = dag.neighborhoods(RelationSet::all());
    for (i, row) in rows.iter().enumerate() {
        for &j in row {
            assert!(rows[j as usize].contains(&(i as u32)));
        }
    }
}

#[test]
fn fixture_depths_satisfy_bellman_condition() {
    let dag = parse_obo(FIXTURE.as_bytes()).unwrap();
    check_depth_properties(&dag);
    check_symmetry(&dag);
    assert!(RelationKind::ALL.iter().all(|k| dag.edges().iter().any(|e| e.kind == *k)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn synthetic_dags_satisfy_graph_invariants(terms in 4usize..120, seed in 0u64..1000) {
        let text = synthetic_obo(terms, seed).unwrap();
        let dag = parse_obo(text.as_bytes()).unwrap();
        prop_assert_eq!(dag.len(), terms);
        prop_assert!(dag.validate().is_valid());
        check_depth_properties(&dag);
        check_symmetry(&dag);
        let again = parse_obo(text.as_bytes()).unwrap();
        prop_assert_eq!(dag.edge_list_tsv(), again.edge_list_tsv());
    }
}

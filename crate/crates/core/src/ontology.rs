//! Gene Ontology DAG: OBO ingestion, validation and the structural queries
//! used by masking, labels and evaluation.
//!
//! Edge orientation follows the OBO statements: `A is_a B` and
//! `A relationship: part_of B` both store the edge `A -> B`, which makes `A`
//! a *predecessor* of `B`. Roots have no outgoing hierarchical edges.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A `GO:` identifier followed by exactly seven digits.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct TermId(String);

impl TermId {
    pub fn new(value: impl Into<String>) -> Result<Self> {
        let value = value.into();
        if Self::is_valid(&value) {
            Ok(Self(value))
        } else {
            Err(Error::InvalidTermId(value))
        }
    }

    pub fn is_valid(value: &str) -> bool {
        let bytes = value.as_bytes();
        bytes.len() == 10 && value.starts_with("GO:") && bytes[3..].iter().all(u8::is_ascii_digit)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for TermId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for TermId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::new(s)
    }
}

impl TryFrom<String> for TermId {
    type Error = Error;
    fn try_from(value: String) -> Result<Self> {
        Self::new(value)
    }
}

impl From<TermId> for String {
    fn from(id: TermId) -> String {
        id.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationKind {
    IsA,
    PartOf,
    Regulates,
    PositivelyRegulates,
    NegativelyRegulates,
}

impl RelationKind {
    pub const ALL: [RelationKind; 5] = [
        RelationKind::IsA,
        RelationKind::PartOf,
        RelationKind::Regulates,
        RelationKind::PositivelyRegulates,
        RelationKind::NegativelyRegulates,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RelationKind::IsA => "is_a",
            RelationKind::PartOf => "part_of",
            RelationKind::Regulates => "regulates",
            RelationKind::PositivelyRegulates => "positively_regulates",
            RelationKind::NegativelyRegulates => "negatively_regulates",
        }
    }

    /// `is_a` and `part_of` define the three namespace hierarchies.
    pub fn is_hierarchical(self) -> bool {
        matches!(self, RelationKind::IsA | RelationKind::PartOf)
    }

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

impl fmt::Display for RelationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RelationKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        RelationKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::UnknownRelation(s.to_string()))
    }
}

/// Subset of relation kinds, used to choose which edges feed adjacency labels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RelationSet(u8);

impl RelationSet {
    pub fn all() -> Self {
        Self(0b1_1111)
    }

    pub fn hierarchical() -> Self {
        Self::from_kinds(&[RelationKind::IsA, RelationKind::PartOf])
    }

    pub fn from_kinds(kinds: &[RelationKind]) -> Self {
        Self(kinds.iter().fold(0, |acc, k| acc | k.bit()))
    }

    pub fn contains(self, kind: RelationKind) -> bool {
        self.0 & kind.bit() != 0
    }

    pub fn kinds(self) -> Vec<RelationKind> {
        RelationKind::ALL.into_iter().filter(|k| self.contains(*k)).collect()
    }
}

impl Default for RelationSet {
    fn default() -> Self {
        Self::all()
    }
}

impl FromStr for RelationSet {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s.trim() == "all" {
            return Ok(Self::all());
        }
        let kinds = s
            .split(',')
            .map(|k| k.trim().parse())
            .collect::<Result<Vec<RelationKind>>>()?;
        Ok(Self::from_kinds(&kinds))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Namespace {
    MolecularFunction,
    BiologicalProcess,
    CellularComponent,
}

impl Namespace {
    pub const ALL: [Namespace; 3] = [
        Namespace::MolecularFunction,
        Namespace::BiologicalProcess,
        Namespace::CellularComponent,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Namespace::MolecularFunction => "molecular_function",
            Namespace::BiologicalProcess => "biological_process",
            Namespace::CellularComponent => "cellular_component",
        }
    }

    /// Root identifiers used by GO releases.
    pub fn canonical_root(self) -> &'static str {
        match self {
            Namespace::MolecularFunction => "GO:0003674",
            Namespace::BiologicalProcess => "GO:0008150",
            Namespace::CellularComponent => "GO:0005575",
        }
    }
}

impl fmt::Display for Namespace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Namespace {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "molecular_function" | "MF" | "mf" => Ok(Namespace::MolecularFunction),
            "biological_process" | "BP" | "bp" => Ok(Namespace::BiologicalProcess),
            "cellular_component" | "CC" | "cc" => Ok(Namespace::CellularComponent),
            other => Err(Error::UnknownNamespace(other.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoTerm {
    pub id: TermId,
    pub name: String,
    /// Absent only for obsolete terms that omit it.
    pub namespace: Option<Namespace>,
    pub definition: String,
    pub is_obsolete: bool,
}

/// Directed edge between two active terms, by index into [`GoDag::terms`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    pub source: usize,
    pub target: usize,
    pub kind: RelationKind,
}

/// Counters for lines the parser accepted but did not turn into edges.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ParseStats {
    /// `relationship:` kinds outside the five supported ones, by name.
    pub skipped_relations: BTreeMap<String, usize>,
    /// Edges whose source or target is obsolete.
    pub obsolete_edges: usize,
    /// Repeated `(source, kind, target)` statements.
    pub duplicate_edges: usize,
}

impl ParseStats {
    pub fn skipped_relation_count(&self) -> usize {
        self.skipped_relations.values().sum()
    }
}

/// The parsed ontology. Immutable after construction.
///
/// Active (non-obsolete) terms are stored in ascending [`TermId`] order and
/// that order defines label positions; `L = terms.len()`.
#[derive(Clone, Debug)]
pub struct GoDag {
    terms: Vec<GoTerm>,
    obsolete: Vec<GoTerm>,
    index: HashMap<TermId, usize>,
    obsolete_index: HashMap<TermId, usize>,
    edges: Vec<Edge>,
    out_edges: Vec<Vec<(usize, RelationKind)>>,
    in_edges: Vec<Vec<(usize, RelationKind)>>,
    roots: Vec<usize>,
    depths: Vec<Option<u32>>,
    stats: ParseStats,
}

/// A term lookup result distinguishing active from obsolete terms.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TermLookup {
    Active(usize),
    Obsolete,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    /// Directed cycle, listed in traversal order.
    Cycle { members: Vec<TermId> },
    /// Both `a -> b` and `b -> a` are present.
    Antisymmetry { a: TermId, b: TermId },
    /// Term reaches zero or several namespace roots via is_a/part_of.
    Reachability { term: TermId, roots_reached: Vec<TermId> },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Cycle { members } => {
                let names: Vec<_> = members.iter().map(TermId::as_str).collect();
                write!(f, "cycle: {}", names.join(" -> "))
            }
            Violation::Antisymmetry { a, b } => write!(f, "antisymmetry: {a} <-> {b}"),
            Violation::Reachability { term, roots_reached } => {
                let names: Vec<_> = roots_reached.iter().map(TermId::as_str).collect();
                write!(f, "reachability: {term} reaches {} roots [{}]", names.len(), names.join(", "))
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn cycles(&self) -> impl Iterator<Item = &[TermId]> {
        self.violations.iter().filter_map(|v| match v {
            Violation::Cycle { members } => Some(members.as_slice()),
            _ => None,
        })
    }
}

#[derive(Default)]
struct StanzaBuilder {
    start_line: usize,
    id: Option<TermId>,
    name: Option<String>,
    namespace: Option<Namespace>,
    definition: String,
    is_obsolete: bool,
    links: Vec<(String, TermId, usize)>,
}

/// Parses OBO text and rejects graphs that contain a directed cycle.
pub fn parse_obo(text: &[u8]) -> Result<GoDag> {
    let dag = parse_obo_unchecked(text)?;
    if let Some(cycle) = dag.find_cycle() {
        return Err(Error::Cycle(cycle.iter().map(ToString::to_string).collect::<Vec<_>>().join(" -> ")));
    }
    Ok(dag)
}

/// Parses OBO text without graph validation, so violations can be reported
/// by [`GoDag::validate`].
pub fn parse_obo_unchecked(text: &[u8]) -> Result<GoDag> {
    let text = std::str::from_utf8(text).map_err(|e| Error::Parse {
        line: 0,
        message: format!("input is not UTF-8: {e}"),
    })?;

    let mut stanzas: Vec<StanzaBuilder> = Vec::new();
    let mut current: Option<StanzaBuilder> = None;
    let mut in_other_stanza = false;

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('!') {
            continue;
        }
        if line.starts_with('[') {
            if !line.ends_with(']') {
                return Err(parse_err(line_no, format!("malformed stanza header {line:?}")));
            }
            if let Some(done) = current.take() {
                stanzas.push(done);
            }
            in_other_stanza = line != "[Term]";
            if !in_other_stanza {
                current = Some(StanzaBuilder { start_line: line_no, ..Default::default() });
            }
            continue;
        }
        let Some((key, value)) = line.split_once(':') else {
            if current.is_some() || in_other_stanza {
                return Err(parse_err(line_no, format!("expected `key: value`, found {line:?}")));
            }
            return Err(parse_err(line_no, format!("malformed header line {line:?}")));
        };
        let Some(stanza) = current.as_mut() else {
            continue;
        };
        let key = key.trim();
        let value = strip_trailing_comment(value.trim());
        match key {
            "id" => {
                if stanza.id.is_some() {
                    return Err(parse_err(line_no, "duplicate id tag in stanza"));
                }
                stanza.id = Some(TermId::new(value).map_err(|_| parse_err(line_no, format!("invalid term id {value:?}")))?);
            }
            "name" => stanza.name = Some(value.to_string()),
            "namespace" => {
                stanza.namespace =
                    Some(value.parse().map_err(|_| parse_err(line_no, format!("unknown namespace {value:?}")))?);
            }
            "def" => stanza.definition = parse_quoted(value).ok_or_else(|| parse_err(line_no, "unterminated def string"))?,
            "is_obsolete" => stanza.is_obsolete = value == "true",
            "is_a" => {
                let target = first_token(value);
                let target = TermId::new(target).map_err(|_| parse_err(line_no, format!("invalid is_a target {target:?}")))?;
                stanza.links.push(("is_a".to_string(), target, line_no));
            }
            "relationship" => {
                let mut parts = value.split_whitespace();
                let (Some(kind), Some(target)) = (parts.next(), parts.next()) else {
                    return Err(parse_err(line_no, format!("malformed relationship {value:?}")));
                };
                let target =
                    TermId::new(target).map_err(|_| parse_err(line_no, format!("invalid relationship target {target:?}")))?;
                stanza.links.push((kind.to_string(), target, line_no));
            }
            _ => {}
        }
    }
    if let Some(done) = current.take() {
        stanzas.push(done);
    }

    build_dag(stanzas)
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

/// Drops a trailing `! comment` and `{qualifier}` block.
fn strip_trailing_comment(value: &str) -> &str {
    let value = match value.find(" !") {
        Some(pos) if !value.starts_with('"') => &value[..pos],
        _ => value,
    };
    value.trim()
}

fn first_token(value: &str) -> &str {
    value.split_whitespace().next().unwrap_or("")
}

/// Extracts the body of an OBO quoted string, honouring `\"` escapes.
fn parse_quoted(value: &str) -> Option<String> {
    let rest = value.strip_prefix('"')?;
    let mut out = String::new();
    let mut chars = rest.chars();
    while let Some(c) = chars.next() {
        match c {
            '\\' => out.push(chars.next()?),
            '"' => return Some(out),
            c => out.push(c),
        }
    }
    None
}

fn build_dag(stanzas: Vec<StanzaBuilder>) -> Result<GoDag> {
    let mut terms = Vec::new();
    let mut obsolete = Vec::new();
    let mut pending_links = Vec::new();
    for stanza in stanzas {
        let id = stanza
            .id
            .ok_or_else(|| parse_err(stanza.start_line, "[Term] stanza without id"))?;
        if !stanza.is_obsolete && stanza.namespace.is_none() {
            return Err(parse_err(stanza.start_line, format!("term {id} has no namespace")));
        }
        let term = GoTerm {
            id: id.clone(),
            name: stanza.name.unwrap_or_default(),
            namespace: stanza.namespace,
            definition: stanza.definition,
            is_obsolete: stanza.is_obsolete,
        };
        if term.is_obsolete {
            obsolete.push(term);
        } else {
            terms.push(term);
        }
        pending_links.extend(stanza.links.into_iter().map(|(kind, target, line)| (id.clone(), kind, target, line)));
    }

    terms.sort_by(|a, b| a.id.cmp(&b.id));
    obsolete.sort_by(|a, b| a.id.cmp(&b.id));
    let mut index = HashMap::with_capacity(terms.len());
    for (i, t) in terms.iter().enumerate() {
        if index.insert(t.id.clone(), i).is_some() {
            return Err(parse_err(0, format!("duplicate term id {}", t.id)));
        }
    }
    let mut obsolete_index = HashMap::with_capacity(obsolete.len());
    for (i, t) in obsolete.iter().enumerate() {
        if index.contains_key(&t.id) || obsolete_index.insert(t.id.clone(), i).is_some() {
            return Err(parse_err(0, format!("duplicate term id {}", t.id)));
        }
    }

    let mut stats = ParseStats::default();
    let mut edges = Vec::new();
    for (source, kind, target, line) in pending_links {
        let kind: RelationKind = match kind.parse() {
            Ok(k) => k,
            Err(_) => {
                *stats.skipped_relations.entry(kind).or_default() += 1;
                continue;
            }
        };
        let (s, t) = (index.get(&source), index.get(&target));
        match (s, t) {
            (Some(&s), Some(&t)) => edges.push(Edge { source: s, target: t, kind }),
            _ if obsolete_index.contains_key(&source) || obsolete_index.contains_key(&target) => {
                stats.obsolete_edges += 1;
            }
            _ => return Err(parse_err(line, format!("edge {source} {kind} {target} references an unknown term"))),
        }
    }
    edges.sort();
    let before = edges.len();
    edges.dedup();
    stats.duplicate_edges = before - edges.len();
    if stats.skipped_relation_count() > 0 {
        log::warn!("skipped {} relationship lines with unsupported kinds", stats.skipped_relation_count());
    }

    Ok(GoDag::from_parts(terms, obsolete, index, obsolete_index, edges, stats))
}

impl GoDag {
    fn from_parts(
        terms: Vec<GoTerm>,
        obsolete: Vec<GoTerm>,
        index: HashMap<TermId, usize>,
        obsolete_index: HashMap<TermId, usize>,
        edges: Vec<Edge>,
        stats: ParseStats,
    ) -> Self {
        let n = terms.len();
        let mut out_edges = vec![Vec::new(); n];
        let mut in_edges = vec![Vec::new(); n];
        for e in &edges {
            out_edges[e.source].push((e.target, e.kind));
            in_edges[e.target].push((e.source, e.kind));
        }
        let roots = find_roots(&terms, &out_edges);
        let mut dag = GoDag {
            terms,
            obsolete,
            index,
            obsolete_index,
            edges,
            out_edges,
            in_edges,
            roots,
            depths: Vec::new(),
            stats,
        };
        dag.depths = dag.compute_depths();
        dag
    }

    /// Number of active terms, `L`.
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Active terms in ascending id order.
    pub fn terms(&self) -> &[GoTerm] {
        &self.terms
    }

    pub fn obsolete_terms(&self) -> &[GoTerm] {
        &self.obsolete
    }

    pub fn term(&self, index: usize) -> &GoTerm {
        &self.terms[index]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn stats(&self) -> &ParseStats {
        &self.stats
    }

    pub fn lookup(&self, id: &TermId) -> Option<TermLookup> {
        if let Some(&i) = self.index.get(id) {
            Some(TermLookup::Active(i))
        } else if self.obsolete_index.contains_key(id) {
            Some(TermLookup::Obsolete)
        } else {
            None
        }
    }

    /// Index of an active term.
    pub fn index_of(&self, id: &TermId) -> Result<usize> {
        match self.lookup(id) {
            Some(TermLookup::Active(i)) => Ok(i),
            Some(TermLookup::Obsolete) => Err(Error::ObsoleteTerm(id.clone())),
            None => Err(Error::UnknownTerm(id.clone())),
        }
    }

    /// Root term indices, ordered by namespace.
    pub fn roots(&self) -> &[usize] {
        &self.roots
    }

    pub fn is_root(&self, index: usize) -> bool {
        self.roots.contains(&index)
    }

    pub fn root_of_namespace(&self, ns: Namespace) -> Option<usize> {
        self.roots.iter().copied().find(|&r| self.terms[r].namespace == Some(ns))
    }

    pub fn successors_of(&self, index: usize) -> &[(usize, RelationKind)] {
        &self.out_edges[index]
    }

    pub fn predecessors_of(&self, index: usize) -> &[(usize, RelationKind)] {
        &self.in_edges[index]
    }

    /// Immediate predecessors of `id` (terms with a direct edge into it), ascending.
    pub fn predecessors(&self, id: &TermId) -> Result<Vec<TermId>> {
        let i = match self.lookup(id) {
            Some(TermLookup::Active(i)) => i,
            Some(TermLookup::Obsolete) => return Ok(Vec::new()),
            None => return Err(Error::UnknownTerm(id.clone())),
        };
        let mut preds: Vec<usize> = self.in_edges[i].iter().map(|&(s, _)| s).collect();
        preds.sort_unstable();
        preds.dedup();
        Ok(preds.into_iter().map(|p| self.terms[p].id.clone()).collect())
    }

    /// Shortest-path depth by index; `None` when no root is reachable.
    pub fn depth_of(&self, index: usize) -> Option<u32> {
        self.depths[index]
    }

    /// Length of the shortest is_a/part_of path from `id` to its root (root = 0).
    pub fn depth(&self, id: &TermId) -> Result<u32> {
        let i = self.index_of(id)?;
        self.depths[i].ok_or_else(|| Error::UnreachableTerm(id.clone()))
    }

    fn compute_depths(&self) -> Vec<Option<u32>> {
        let mut depth = vec![None; self.terms.len()];
        let mut queue = VecDeque::new();
        for &r in &self.roots {
            depth[r] = Some(0);
            queue.push_back(r);
        }
        while let Some(v) = queue.pop_front() {
            let d = depth[v].expect("queued nodes have a depth");
            for &(u, kind) in &self.in_edges[v] {
                if kind.is_hierarchical() && depth[u].is_none() {
                    depth[u] = Some(d + 1);
                    queue.push_back(u);
                }
            }
        }
        depth
    }

    /// Sorted, deduplicated neighbour label indices of every active term,
    /// symmetrising edges of the selected kinds.
    pub fn neighborhoods(&self, kinds: RelationSet) -> Vec<Vec<u32>> {
        let mut rows = vec![Vec::new(); self.terms.len()];
        for e in self.edges.iter().filter(|e| kinds.contains(e.kind)) {
            rows[e.source].push(e.target as u32);
            rows[e.target].push(e.source as u32);
        }
        for row in &mut rows {
            row.sort_unstable();
            row.dedup();
        }
        rows
    }

    /// Binary adjacency row of length `L` using all five relation kinds.
    pub fn adjacency_row(&self, id: &TermId) -> Result<Vec<u8>> {
        self.adjacency_row_with(id, RelationSet::all())
    }

    pub fn adjacency_row_with(&self, id: &TermId, kinds: RelationSet) -> Result<Vec<u8>> {
        let mut row = vec![0u8; self.terms.len()];
        let i = match self.lookup(id) {
            Some(TermLookup::Active(i)) => i,
            Some(TermLookup::Obsolete) => return Ok(row),
            None => return Err(Error::UnknownTerm(id.clone())),
        };
        let neighbours = self.out_edges[i].iter().chain(&self.in_edges[i]);
        for &(j, kind) in neighbours {
            if kinds.contains(kind) {
                row[j] = 1;
            }
        }
        Ok(row)
    }

    /// Active term indices of one namespace at an exact depth.
    pub fn terms_at(&self, namespace: Option<Namespace>, depth: u32) -> Vec<usize> {
        (0..self.terms.len())
            .filter(|&i| self.depths[i] == Some(depth))
            .filter(|&i| namespace.is_none() || self.terms[i].namespace == namespace)
            .collect()
    }

    fn find_cycle(&self) -> Option<Vec<TermId>> {
        self.cycles().into_iter().next()
    }

    /// One representative cycle per strongly connected component.
    fn cycles(&self) -> Vec<Vec<TermId>> {
        let mut graph = petgraph::graph::DiGraph::<(), ()>::with_capacity(self.terms.len(), self.edges.len());
        let nodes: Vec<_> = (0..self.terms.len()).map(|_| graph.add_node(())).collect();
        for e in &self.edges {
            graph.add_edge(nodes[e.source], nodes[e.target], ());
        }
        let mut cycles = Vec::new();
        for scc in petgraph::algo::tarjan_scc(&graph) {
            let members: Vec<usize> = scc.iter().map(|n| n.index()).collect();
            let self_loop = members.len() == 1 && self.out_edges[members[0]].iter().any(|&(t, _)| t == members[0]);
            if members.len() < 2 && !self_loop {
                continue;
            }
            let cycle = self.cycle_within(&members);
            cycles.push(cycle.into_iter().map(|i| self.terms[i].id.clone()).collect());
        }
        cycles.sort();
        cycles
    }

    /// Walks successors inside one SCC from its smallest member until a node repeats.
    fn cycle_within(&self, members: &[usize]) -> Vec<usize> {
        let mut in_scc = vec![false; self.terms.len()];
        for &m in members {
            in_scc[m] = true;
        }
        let start = *members.iter().min().expect("non-empty scc");
        let mut path = vec![start];
        let mut seen_at = HashMap::from([(start, 0usize)]);
        let mut current = start;
        loop {
            let next = self.out_edges[current]
                .iter()
                .map(|&(t, _)| t)
                .filter(|&t| in_scc[t])
                .min()
                .expect("every SCC member has a successor inside the SCC");
            if let Some(&pos) = seen_at.get(&next) {
                return path[pos..].to_vec();
            }
            seen_at.insert(next, path.len());
            path.push(next);
            current = next;
        }
    }

    /// Checks acyclicity, antisymmetry and single-root reachability.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        for members in self.cycles() {
            violations.push(Violation::Cycle { members });
        }
        for e in &self.edges {
            if e.source < e.target && self.out_edges[e.target].iter().any(|&(t, _)| t == e.source) {
                let v = Violation::Antisymmetry {
                    a: self.terms[e.source].id.clone(),
                    b: self.terms[e.target].id.clone(),
                };
                if !violations.contains(&v) {
                    violations.push(v);
                }
            }
        }

        let mut reached: Vec<Vec<usize>> = vec![Vec::new(); self.terms.len()];
        for &r in &self.roots {
            let mut seen = vec![false; self.terms.len()];
            seen[r] = true;
            let mut queue = VecDeque::from([r]);
            while let Some(v) = queue.pop_front() {
                reached[v].push(r);
                for &(u, kind) in &self.in_edges[v] {
                    if kind.is_hierarchical() && !seen[u] {
                        seen[u] = true;
                        queue.push_back(u);
                    }
                }
            }
        }
        for (i, roots) in reached.iter().enumerate() {
            if roots.len() != 1 {
                violations.push(Violation::Reachability {
                    term: self.terms[i].id.clone(),
                    roots_reached: roots.iter().map(|&r| self.terms[r].id.clone()).collect(),
                });
            }
        }
        ValidationReport { violations }
    }

    /// `source<TAB>kind<TAB>target` lines sorted by (source, target, kind).
    pub fn edge_list_tsv(&self) -> String {
        let mut lines: Vec<(&TermId, &TermId, RelationKind)> = self
            .edges
            .iter()
            .map(|e| (&self.terms[e.source].id, &self.terms[e.target].id, e.kind))
            .collect();
        lines.sort();
        let mut out = String::new();
        for (s, t, k) in lines {
            out.push_str(&format!("{s}\t{k}\t{t}\n"));
        }
        out
    }

    /// JSON array of every term (active and obsolete) in ascending id order.
    pub fn term_table_json(&self) -> String {
        let mut all: Vec<&GoTerm> = self.terms.iter().chain(&self.obsolete).collect();
        all.sort_by(|a, b| a.id.cmp(&b.id));
        let mut out = serde_json::to_string_pretty(&all).expect("terms serialize");
        out.push('\n');
        out
    }
}

/// A root is an active term without outgoing hierarchical edges that carries
/// its namespace's canonical GO id or is named after its namespace; failing
/// both, the namespace's only parentless term.
fn find_roots(terms: &[GoTerm], out_edges: &[Vec<(usize, RelationKind)>]) -> Vec<usize> {
    let mut roots = Vec::new();
    for ns in Namespace::ALL {
        let root = terms.iter().enumerate().find(|(i, t)| {
            t.namespace == Some(ns)
                && (t.id.as_str() == ns.canonical_root() || t.name == ns.as_str())
                && !out_edges[*i].iter().any(|(_, k)| k.is_hierarchical())
        });
        if let Some((i, _)) = root {
            roots.push(i);
            continue;
        }
        let mut parentless = terms
            .iter()
            .enumerate()
            .filter(|(i, t)| t.namespace == Some(ns) && !out_edges[*i].iter().any(|(_, k)| k.is_hierarchical()));
        if let (Some((i, _)), None) = (parentless.next(), parentless.next()) {
            roots.push(i);
        }
    }
    roots
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(s: &str) -> TermId {
        TermId::new(s).unwrap()
    }

    const CHAIN: &str = "format-version: 1.2\n\n\
[Term]\nid: GO:0000001\nname: root\nnamespace: biological_process\n\n\
[Term]\nid: GO:0000002\nname: mid\nnamespace: biological_process\nis_a: GO:0000001 ! root\n\n\
[Term]\nid: GO:0000003\nname: child\nnamespace: biological_process\nrelationship: part_of GO:0000002 ! mid\n";

    fn chain() -> GoDag {
        parse_obo(CHAIN.as_bytes()).unwrap()
    }

    #[test]
    fn term_id_format() {
        assert!(TermId::new("GO:0005515").is_ok());
        assert!(TermId::new("GO:000551").is_err());
        assert!(TermId::new("GO:00055150").is_err());
        assert!(TermId::new("go:0005515").is_err());
        assert!(TermId::new("GO:00a5515").is_err());
    }

    #[test]
    fn chain_counts_and_depths() {
        let dag = chain();
        assert_eq!(dag.len(), 3);
        assert_eq!(dag.edges().len(), 2);
        assert_eq!(dag.roots(), &[0]);
        assert_eq!(dag.depth(&id("GO:0000001")).unwrap(), 0);
        assert_eq!(dag.depth(&id("GO:0000002")).unwrap(), 1);
        assert_eq!(dag.depth(&id("GO:0000003")).unwrap(), 2);

        // a second parentless term makes the namespace root ambiguous
        let orphan = format!("{CHAIN}\n[Term]\nid: GO:0000009\nname: stray\nnamespace: biological_process\n");
        let dag = parse_obo(orphan.as_bytes()).unwrap();
        assert!(dag.roots().is_empty());
        assert!(matches!(dag.depth(&id("GO:0000003")), Err(Error::UnreachableTerm(_))));
    }

    #[test]
    fn predecessors_and_rows() {
        let dag = chain();
        assert_eq!(dag.predecessors(&id("GO:0000001")).unwrap(), vec![id("GO:0000002")]);
        assert!(dag.predecessors(&id("GO:0000003")).unwrap().is_empty());
        assert!(matches!(dag.predecessors(&id("GO:0000009")), Err(Error::UnknownTerm(_))));
        assert_eq!(dag.adjacency_row(&id("GO:0000002")).unwrap(), vec![1, 0, 1]);
        let only_is_a = RelationSet::from_kinds(&[RelationKind::IsA]);
        assert_eq!(dag.adjacency_row_with(&id("GO:0000002"), only_is_a).unwrap(), vec![1, 0, 0]);
    }

    #[test]
    fn obsolete_terms_are_kept_out_of_l() {
        let text = format!(
            "{CHAIN}\n[Term]\nid: GO:0000004\nname: old\nis_obsolete: true\nis_a: GO:0000001\n"
        );
        let dag = parse_obo(text.as_bytes()).unwrap();
        assert_eq!(dag.len(), 3);
        assert_eq!(dag.obsolete_terms().len(), 1);
        assert_eq!(dag.stats().obsolete_edges, 1);
        assert_eq!(dag.adjacency_row(&id("GO:0000004")).unwrap(), vec![0, 0, 0]);
        assert!(matches!(dag.depth(&id("GO:0000004")), Err(Error::ObsoleteTerm(_))));
    }

    #[test]
    fn mutual_edges_are_rejected() {
        let text = "[Term]\nid: GO:0000001\nname: a\nnamespace: biological_process\nis_a: GO:0000002\n\n\
[Term]\nid: GO:0000002\nname: b\nnamespace: biological_process\nis_a: GO:0000001\n";
        assert!(matches!(parse_obo(text.as_bytes()), Err(Error::Cycle(_))));
        let report = parse_obo_unchecked(text.as_bytes()).unwrap().validate();
        assert!(report.violations.contains(&Violation::Antisymmetry { a: id("GO:0000001"), b: id("GO:0000002") }));
    }

    #[test]
    fn unknown_relations_are_counted() {
        let text = CHAIN.replace(
            "relationship: part_of GO:0000002 ! mid",
            "relationship: part_of GO:0000002 ! mid\nrelationship: occurs_in GO:0000001\nrelationship: has_part GO:0000001",
        );
        let dag = parse_obo(text.as_bytes()).unwrap();
        assert_eq!(dag.stats().skipped_relation_count(), 2);
        assert_eq!(dag.edges().len(), 2);
    }

    #[test]
    fn malformed_input_reports_line() {
        let text = "[Term]\nid: GO:0000001\nname a\n";
        match parse_obo(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let no_ns = "[Term]\nid: GO:0000001\nname: a\n";
        assert!(matches!(parse_obo(no_ns.as_bytes()), Err(Error::Parse { line: 1, .. })));
        let dangling = "[Term]\nid: GO:0000001\nname: a\nnamespace: biological_process\nis_a: GO:0000007\n";
        assert!(matches!(parse_obo(dangling.as_bytes()), Err(Error::Parse { line: 5, .. })));
    }

    #[test]
    fn def_strings_and_typedefs() {
        let text = "[Term]\nid: GO:0000001\nname: biological_process\nnamespace: biological_process\n\
def: \"A \\\"quoted\\\" thing.\" [GOC:x]\n\n[Typedef]\nid: part_of\nname: part of\n";
        let dag = parse_obo(text.as_bytes()).unwrap();
        assert_eq!(dag.term(0).definition, "A \"quoted\" thing.");
        assert_eq!(dag.len(), 1);
    }

    #[test]
    fn exports_are_stable() {
        let dag = chain();
        assert_eq!(
            dag.edge_list_tsv(),
            "GO:0000002\tis_a\tGO:0000001\nGO:0000003\tpart_of\tGO:0000002\n"
        );
        assert_eq!(dag.term_table_json(), chain().term_table_json());
    }
}

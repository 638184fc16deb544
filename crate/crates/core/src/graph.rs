//! Heterogeneous company / topic / agency graph.
//!
//! Node features use only phase I awards dated before the feature cutoff; phase
//! II rows never contribute. Node tables are derived from those same qualifying
//! awards, so adding phase II or post-cutoff records cannot change the graph.
//! Every count-like quantity is log-transformed as `ln(1 + x)` and each feature
//! column is then min-max scaled over all nodes of its type.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::ingest::{CleanAward, Phase};
use crate::math;
use crate::{rng, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NodeType {
    Company,
    Topic,
    FundingAgency,
}

impl NodeType {
    pub const ALL: [NodeType; 3] = [NodeType::Company, NodeType::Topic, NodeType::FundingAgency];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NodeType::Company => "company",
            NodeType::Topic => "topic",
            NodeType::FundingAgency => "agency",
        }
    }

    pub fn feature_dim(self) -> usize {
        match self {
            NodeType::Company => 7,
            NodeType::Topic => 2,
            NodeType::FundingAgency => 3,
        }
    }

    pub fn feature_names(self) -> &'static [&'static str] {
        match self {
            NodeType::Company => &[
                "log_total_funding",
                "log_award_count",
                "agency_diversity",
                "years_active",
                "log_avg_award",
                "topic_diversity",
                "recency",
            ],
            NodeType::Topic => &["log_companies", "log_awards"],
            NodeType::FundingAgency => &["log_award_count", "log_total_funding", "log_avg_award"],
        }
    }
}

/// Directed relation. Each forward relation has exactly one reverse twin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Relation {
    OperatesIn,
    AwardedBy,
    CoTopic,
    RevOperatesIn,
    RevAwardedBy,
    RevCoTopic,
}

impl Relation {
    pub const ALL: [Relation; 6] = [
        Relation::OperatesIn,
        Relation::AwardedBy,
        Relation::CoTopic,
        Relation::RevOperatesIn,
        Relation::RevAwardedBy,
        Relation::RevCoTopic,
    ];

    pub const FORWARD: [Relation; 3] = [Relation::OperatesIn, Relation::AwardedBy, Relation::CoTopic];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Relation::OperatesIn => "operates_in",
            Relation::AwardedBy => "awarded_by",
            Relation::CoTopic => "co_topic",
            Relation::RevOperatesIn => "rev_operates_in",
            Relation::RevAwardedBy => "rev_awarded_by",
            Relation::RevCoTopic => "rev_co_topic",
        }
    }

    pub fn from_name(name: &str) -> Option<Relation> {
        Relation::ALL.into_iter().find(|r| r.as_str() == name)
    }

    pub fn is_forward(self) -> bool {
        self.index() < 3
    }

    pub fn reverse(self) -> Relation {
        Relation::ALL[(self.index() + 3) % 6]
    }

    pub fn source(self) -> NodeType {
        match self {
            Relation::OperatesIn | Relation::AwardedBy | Relation::CoTopic | Relation::RevCoTopic => {
                NodeType::Company
            }
            Relation::RevOperatesIn => NodeType::Topic,
            Relation::RevAwardedBy => NodeType::FundingAgency,
        }
    }

    pub fn target(self) -> NodeType {
        match self {
            Relation::OperatesIn => NodeType::Topic,
            Relation::AwardedBy => NodeType::FundingAgency,
            _ => NodeType::Company,
        }
    }
}

/// Which awards feed node features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    /// Awards with `year < cutoff_year` contribute.
    pub cutoff_year: i32,
    /// Origin of the recency scale.
    pub dataset_min_year: i32,
}

impl FeatureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.cutoff_year <= self.dataset_min_year {
            return Err(Error::Config(format!(
                "cutoff year {} must exceed dataset min year {}",
                self.cutoff_year, self.dataset_min_year
            )));
        }
        Ok(())
    }

    pub fn qualifies(&self, award: &CleanAward) -> bool {
        award.phase == Phase::I && award.year < self.cutoff_year
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EdgeCaps {
    /// Co-topic pairs per topic group.
    pub per_group: usize,
    /// Co-topic degree per company.
    pub per_node: usize,
}

impl Default for EdgeCaps {
    fn default() -> Self {
        Self {
            per_group: 50,
            per_node: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeTable {
    /// Sorted, unique.
    pub ids: Vec<String>,
    pub features: Matrix,
}

impl NodeTable {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.binary_search_by(|probe| probe.as_str().cmp(id)).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeteroGraph {
    nodes: [NodeTable; 3],
    edges: [Vec<(usize, usize)>; 6],
    reversed: bool,
}

impl HeteroGraph {
    /// Validating constructor (feature widths, sorted ids, edge ranges,
    /// co-topic self-loops and duplicates).
    pub fn from_parts(nodes: [NodeTable; 3], edges: [Vec<(usize, usize)>; 6], reversed: bool) -> Result<Self> {
        for t in NodeType::ALL {
            let table = &nodes[t.index()];
            if table.features.rows() != table.ids.len() || table.features.cols() != t.feature_dim() {
                return Err(Error::Invalid(format!(
                    "{} features are {:?}, expected {}x{}",
                    t.as_str(),
                    table.features.shape(),
                    table.ids.len(),
                    t.feature_dim()
                )));
            }
            if table.ids.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Invalid(format!("{} ids not sorted/unique", t.as_str())));
            }
        }
        for r in Relation::ALL {
            let (ns, nt) = (nodes[r.source().index()].len(), nodes[r.target().index()].len());
            if let Some(&(s, t)) = edges[r.index()].iter().find(|(s, t)| *s >= ns || *t >= nt) {
                return Err(Error::Invalid(format!(
                    "{} edge ({s}, {t}) out of range",
                    r.as_str()
                )));
            }
            if !reversed && !r.is_forward() && !edges[r.index()].is_empty() {
                return Err(Error::Invalid("reverse edges present in forward-only graph".into()));
            }
        }
        for r in [Relation::CoTopic, Relation::RevCoTopic] {
            let list = &edges[r.index()];
            if list.iter().any(|(s, t)| s == t) {
                return Err(Error::Invalid("co_topic self-loop".into()));
            }
            let unique: BTreeSet<_> = list.iter().collect();
            if unique.len() != list.len() {
                return Err(Error::Invalid("duplicate co_topic pair".into()));
            }
        }
        Ok(Self {
            nodes,
            edges,
            reversed,
        })
    }

    pub fn nodes(&self, t: NodeType) -> &NodeTable {
        &self.nodes[t.index()]
    }

    pub fn num_nodes(&self, t: NodeType) -> usize {
        self.nodes[t.index()].len()
    }

    pub fn features(&self, t: NodeType) -> &Matrix {
        &self.nodes[t.index()].features
    }

    pub fn edges(&self, r: Relation) -> &[(usize, usize)] {
        &self.edges[r.index()]
    }

    pub fn num_edges(&self) -> usize {
        self.edges.iter().map(Vec::len).sum()
    }

    pub fn is_reversed(&self) -> bool {
        self.reversed
    }

    pub fn company_ids(&self) -> &[String] {
        &self.nodes[NodeType::Company.index()].ids
    }

    /// Drops every edge, keeping nodes and features.
    pub fn without_edges(&self) -> HeteroGraph {
        HeteroGraph {
            nodes: self.nodes.clone(),
            edges: Default::default(),
            reversed: self.reversed,
        }
    }

    /// Reorders nodes of one type: new node `i` is old node `perm[i]`. The
    /// sorted-id invariant is not maintained; used for equivariance checks.
    pub fn permuted(&self, t: NodeType, perm: &[usize]) -> HeteroGraph {
        let table = &self.nodes[t.index()];
        assert_eq!(perm.len(), table.len());
        let mut inverse = vec![0; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let mut features = Matrix::zeros(table.features.rows(), table.features.cols());
        for (new, &old) in perm.iter().enumerate() {
            features.row_mut(new).copy_from_slice(table.features.row(old));
        }
        let mut out = self.clone();
        out.nodes[t.index()] = NodeTable {
            ids: perm.iter().map(|&o| table.ids[o].clone()).collect(),
            features,
        };
        for r in Relation::ALL {
            for (s, d) in &mut out.edges[r.index()] {
                if r.source() == t {
                    *s = inverse[*s];
                }
                if r.target() == t {
                    *d = inverse[*d];
                }
            }
        }
        out
    }
}

/// Raw (unnormalized) company features from the awards of one company.
///
/// `[ln(1+total), ln(1+count), agencies, years active, ln(1+total/count),
/// topics, recency]`; all zeros when no award qualifies.
pub fn company_features<'a>(
    awards: impl IntoIterator<Item = &'a CleanAward>,
    spec: &FeatureSpec,
) -> [f64; 7] {
    let mut total = 0.0;
    let mut count = 0usize;
    let mut agencies = BTreeSet::new();
    let mut topics = BTreeSet::new();
    let mut first = i32::MAX;
    let mut last = i32::MIN;
    for a in awards.into_iter().filter(|a| spec.qualifies(a)) {
        total += a.amount;
        count += 1;
        agencies.insert(a.agency.as_str());
        topics.insert(a.topic.as_str());
        first = first.min(a.year);
        last = last.max(a.year);
    }
    if count == 0 {
        return [0.0; 7];
    }
    let span = f64::from(spec.cutoff_year - 1 - spec.dataset_min_year);
    let recency = if span <= 0.0 {
        1.0
    } else {
        (f64::from(last - spec.dataset_min_year) / span).clamp(0.0, 1.0)
    };
    [
        math::ln_1p(total),
        math::ln_1p(count as f64),
        agencies.len() as f64,
        f64::from(last - first + 1),
        math::ln_1p(total / count as f64),
        topics.len() as f64,
        recency,
    ]
}

/// `[ln(1+distinct companies), ln(1+awards)]` over qualifying awards of one topic.
pub fn topic_features<'a>(awards: impl IntoIterator<Item = &'a CleanAward>, spec: &FeatureSpec) -> [f64; 2] {
    let mut companies = BTreeSet::new();
    let mut count = 0usize;
    for a in awards.into_iter().filter(|a| spec.qualifies(a)) {
        companies.insert(a.company.as_str());
        count += 1;
    }
    [math::ln_1p(companies.len() as f64), math::ln_1p(count as f64)]
}

/// `[ln(1+awards), ln(1+total), ln(1+total/awards)]` over qualifying awards of one agency.
pub fn agency_features<'a>(awards: impl IntoIterator<Item = &'a CleanAward>, spec: &FeatureSpec) -> [f64; 3] {
    let mut total = 0.0;
    let mut count = 0usize;
    for a in awards.into_iter().filter(|a| spec.qualifies(a)) {
        total += a.amount;
        count += 1;
    }
    if count == 0 {
        return [0.0; 3];
    }
    [
        math::ln_1p(count as f64),
        math::ln_1p(total),
        math::ln_1p(total / count as f64),
    ]
}

/// Per-column `(x - min) / (max - min)`; constant columns become zeros.
pub fn minmax_normalize(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for c in 0..m.cols() {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for r in 0..m.rows() {
            lo = lo.min(m.get(r, c));
            hi = hi.max(m.get(r, c));
        }
        let range = hi - lo;
        for r in 0..m.rows() {
            let v = if range > 0.0 { (m.get(r, c) - lo) / range } else { 0.0 };
            out.set(r, c, v);
        }
    }
    out
}

/// Most frequent value; ties go to the value seen earliest (by award year),
/// then to the lexicographically smallest.
fn modal<'a>(items: impl IntoIterator<Item = (&'a str, i32)>) -> Option<String> {
    let mut stats: BTreeMap<&str, (usize, i32)> = BTreeMap::new();
    for (value, year) in items {
        let e = stats.entry(value).or_insert((0, i32::MAX));
        e.0 += 1;
        e.1 = e.1.min(year);
    }
    stats
        .into_iter()
        .min_by(|(va, (ca, ya)), (vb, (cb, yb))| cb.cmp(ca).then(ya.cmp(yb)).then(va.cmp(vb)))
        .map(|(v, _)| v.to_string())
}

/// Modal topic over qualifying awards, `None` if there are none.
pub fn primary_topic<'a>(awards: impl IntoIterator<Item = &'a CleanAward>, spec: &FeatureSpec) -> Option<String> {
    modal(
        awards
            .into_iter()
            .filter(|a| spec.qualifies(a))
            .map(|a| (a.topic.as_str(), a.year)),
    )
}

/// Modal agency over qualifying awards, `None` if there are none.
pub fn primary_agency<'a>(awards: impl IntoIterator<Item = &'a CleanAward>, spec: &FeatureSpec) -> Option<String> {
    modal(
        awards
            .into_iter()
            .filter(|a| spec.qualifies(a))
            .map(|a| (a.agency.as_str(), a.year)),
    )
}

/// Maps index `p` of the lexicographic list of pairs `(i, j)`, `i < j < m`.
fn decode_pair(mut p: usize, m: usize) -> (usize, usize) {
    let mut i = 0;
    loop {
        let row = m - 1 - i;
        if p < row {
            return (i, i + 1 + p);
        }
        p -= row;
        i += 1;
    }
}

/// Undirected co-topic pairs `(a, b)` with `a < b`.
///
/// Companies are grouped by primary topic. Within a group, candidate pairs are
/// drawn uniformly without replacement from a stream keyed by `(seed, topic)`;
/// a pair is skipped if either endpoint already has `per_node` co-topic edges.
/// Drawing stops at `per_group` pairs or when candidates run out.
pub fn build_co_topic_edges(primary_topics: &[Option<&str>], caps: EdgeCaps, seed: u64) -> Vec<(usize, usize)> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (company, topic) in primary_topics.iter().enumerate() {
        if let Some(t) = topic {
            groups.entry(t).or_default().push(company);
        }
    }
    let mut degree = vec![0usize; primary_topics.len()];
    let mut pairs = Vec::new();
    for (topic, members) in &groups {
        let m = members.len();
        if m < 2 || caps.per_group == 0 {
            continue;
        }
        let candidates = m * (m - 1) / 2;
        let mut rng = rng::stream(seed, rng::fnv1a(topic.as_bytes()));
        // lazy Fisher-Yates over pair indices
        let mut swapped: BTreeMap<usize, usize> = BTreeMap::new();
        let mut taken = 0;
        for t in 0..candidates {
            if taken == caps.per_group {
                break;
            }
            let j = rng.random_range(t..candidates);
            let at_j = *swapped.get(&j).unwrap_or(&j);
            let at_t = *swapped.get(&t).unwrap_or(&t);
            swapped.insert(j, at_t);
            let (a, b) = decode_pair(at_j, m);
            let (a, b) = (members[a], members[b]);
            if degree[a] < caps.per_node && degree[b] < caps.per_node {
                degree[a] += 1;
                degree[b] += 1;
                pairs.push((a.min(b), a.max(b)));
                taken += 1;
            }
        }
    }
    pairs.sort_unstable();
    pairs
}

/// Adds `(t, s)` under the reverse relation for every forward edge `(s, t)`.
pub fn add_reverse_edges(graph: HeteroGraph) -> Result<HeteroGraph> {
    if graph.reversed {
        return Err(Error::AlreadyReversed);
    }
    let mut graph = graph;
    for r in Relation::FORWARD {
        let rev: Vec<(usize, usize)> = graph.edges[r.index()].iter().map(|&(s, t)| (t, s)).collect();
        graph.edges[r.reverse().index()] = rev;
    }
    graph.reversed = true;
    Ok(graph)
}

/// Counters describing one graph build.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildLog {
    pub qualifying_awards: usize,
    /// Phase II or post-cutoff rows, excluded from features.
    pub ignored_awards: usize,
    pub co_topic_pairs: usize,
    /// Companies left without an operates_in / awarded_by edge.
    pub companies_without_primary: usize,
}

fn table_from(ids: Vec<String>, raw: Vec<Vec<f64>>, dim: usize) -> NodeTable {
    let data = raw.into_iter().flatten().collect();
    NodeTable {
        features: minmax_normalize(&Matrix::from_vec(ids.len(), dim, data)),
        ids,
    }
}

/// Builds the full graph (features, forward edges and their reverses).
pub fn build_graph(
    awards: &[CleanAward],
    spec: &FeatureSpec,
    caps: EdgeCaps,
    seed: u64,
) -> Result<(HeteroGraph, BuildLog)> {
    spec.validate()?;
    let mut log = BuildLog::default();
    let mut by_company: BTreeMap<&str, Vec<&CleanAward>> = BTreeMap::new();
    let mut by_topic: BTreeMap<&str, Vec<&CleanAward>> = BTreeMap::new();
    let mut by_agency: BTreeMap<&str, Vec<&CleanAward>> = BTreeMap::new();
    for a in awards {
        if !spec.qualifies(a) {
            log.ignored_awards += 1;
            continue;
        }
        log.qualifying_awards += 1;
        by_company.entry(a.company.as_str()).or_default().push(a);
        by_topic.entry(a.topic.as_str()).or_default().push(a);
        by_agency.entry(a.agency.as_str()).or_default().push(a);
    }
    if by_company.is_empty() {
        return Err(Error::EmptyGraph);
    }

    let company = table_from(
        by_company.keys().map(|k| k.to_string()).collect(),
        by_company
            .values()
            .map(|aw| company_features(aw.iter().copied(), spec).to_vec())
            .collect(),
        7,
    );
    let topic = table_from(
        by_topic.keys().map(|k| k.to_string()).collect(),
        by_topic
            .values()
            .map(|aw| topic_features(aw.iter().copied(), spec).to_vec())
            .collect(),
        2,
    );
    let agency = table_from(
        by_agency.keys().map(|k| k.to_string()).collect(),
        by_agency
            .values()
            .map(|aw| agency_features(aw.iter().copied(), spec).to_vec())
            .collect(),
        3,
    );

    let mut operates_in = Vec::new();
    let mut awarded_by = Vec::new();
    let mut primaries: Vec<Option<String>> = Vec::with_capacity(company.len());
    for (ci, aw) in by_company.values().enumerate() {
        let pt = primary_topic(aw.iter().copied(), spec);
        let pa = primary_agency(aw.iter().copied(), spec);
        match (&pt, &pa) {
            (Some(t), Some(a)) => {
                operates_in.push((ci, topic.position(t).expect("topic node")));
                awarded_by.push((ci, agency.position(a).expect("agency node")));
            }
            _ => log.companies_without_primary += 1,
        }
        primaries.push(pt);
    }
    let primary_refs: Vec<Option<&str>> = primaries.iter().map(|p| p.as_deref()).collect();
    let co_topic = build_co_topic_edges(&primary_refs, caps, seed);
    log.co_topic_pairs = co_topic.len();

    let graph = HeteroGraph::from_parts(
        [company, topic, agency],
        [operates_in, awarded_by, co_topic, vec![], vec![], vec![]],
        false,
    )?;
    Ok((add_reverse_edges(graph)?, log))
}

#[cfg(test)]
mod tests;

//! Small random graphs shared by unit tests.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::Matrix;
use crate::graph::{add_reverse_edges, HeteroGraph, NodeTable};
use crate::rng;

/// Random graph: every company links to a topic and an agency except the
/// last one, which is isolated; co-topic pairs join same-topic companies.
pub fn random_graph(companies: usize, topics: usize, agencies: usize, seed: u64) -> HeteroGraph {
    let mut r = rng::stream(seed, 1);
    let mut table = |prefix: &str, n: usize, dim: usize| NodeTable {
        ids: (0..n).map(|i| format!("{prefix}{i:03}")).collect(),
        features: Matrix::from_vec(n, dim, (0..n * dim).map(|_| r.random::<f64>()).collect()),
    };
    let nodes = [
        table("C", companies, 7),
        table("T", topics, 2),
        table("A", agencies, 3),
    ];
    let mut r = rng::stream(seed, 2);
    let mut operates = Vec::new();
    let mut awarded = Vec::new();
    let mut topic_of = Vec::new();
    for c in 0..companies - 1 {
        let t = r.random_range(0..topics);
        operates.push((c, t));
        awarded.push((c, r.random_range(0..agencies)));
        topic_of.push(t);
    }
    let mut co = Vec::new();
    for a in 0..topic_of.len() {
        for b in a + 1..topic_of.len() {
            if topic_of[a] == topic_of[b] && r.random::<f64>() < 0.5 {
                co.push((a, b));
            }
        }
    }
    let g = HeteroGraph::from_parts(nodes, [operates, awarded, co, vec![], vec![], vec![]], false).unwrap();
    add_reverse_edges(g).unwrap()
}


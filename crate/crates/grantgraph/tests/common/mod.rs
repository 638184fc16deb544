//! Reference implementations written as plain loops, independent of the tape.
#![allow(dead_code)]

use grantgraph_core::autodiff::Matrix;
use grantgraph_core::graph::{add_reverse_edges, HeteroGraph, NodeTable, NodeType, Relation};
use grantgraph_core::model::{names, ModelConfig, ParamStore};
use grantgraph_core::rng;
use rand::Rng;

fn mat_row_times(h: &[f64], w: &Matrix) -> Vec<f64> {
    (0..w.cols())
        .map(|c| (0..w.rows()).map(|j| h[j] * w.get(j, c)).sum())
        .collect()
}

fn layer_norm(x: &[f64], gain: &Matrix, bias: &Matrix, eps: f64) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + eps).sqrt();
    x.iter()
        .enumerate()
        .map(|(j, v)| (v - mean) * inv * gain.get(0, j) + bias.get(0, j))
        .collect()
}

/// Per-type input projection, row by row.
pub fn project(graph: &HeteroGraph, store: &ParamStore) -> [Vec<Vec<f64>>; 3] {
    NodeType::ALL.map(|t| {
        let (w, b) = names::input(t);
        let (w, b) = (store.param(&w).unwrap(), store.param(&b).unwrap());
        let x = graph.features(t);
        (0..x.rows())
            .map(|i| {
                mat_row_times(x.row(i), w)
                    .iter()
                    .enumerate()
                    .map(|(c, v)| v + b.get(0, c))
                    .collect()
            })
            .collect()
    })
}

/// First graph-transformer layer (eval mode) for every node type.
pub fn hgt_layer(graph: &HeteroGraph, store: &ParamStore, cfg: &ModelConfig, h: &[Vec<Vec<f64>>; 3]) -> [Vec<Vec<f64>>; 3] {
    let d = cfg.hidden_dim;
    let dh = d / cfg.heads;
    NodeType::ALL.map(|t| {
        let wq = store.param(&names::query(0, t)).unwrap();
        let wo = store.param(&names::output(0, t)).unwrap();
        let (g, b) = names::norm("hgt", 0, t);
        let (g, b) = (store.param(&g).unwrap(), store.param(&b).unwrap());
        (0..graph.num_nodes(t))
            .map(|i| {
                let q = mat_row_times(&h[t.index()][i], wq);
                // (keys, values) of every in-edge of node i across relations
                let mut edges: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
                for r in Relation::ALL.into_iter().filter(|r| r.target() == t) {
                    let wk = store.param(&names::key(0, r)).unwrap();
                    let wv = store.param(&names::value(0, r)).unwrap();
                    for &(s, dst) in graph.edges(r) {
                        if dst == i {
                            let hs = &h[r.source().index()][s];
                            edges.push((mat_row_times(hs, wk), mat_row_times(hs, wv)));
                        }
                    }
                }
                let mut agg = vec![0.0; d];
                for head in 0..cfg.heads {
                    let cols = head * dh..(head + 1) * dh;
                    let logits: Vec<f64> = edges
                        .iter()
                        .map(|(k, _)| cols.clone().map(|c| q[c] * k[c]).sum::<f64>() / (dh as f64).sqrt())
                        .collect();
                    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
                    for (e, (_, v)) in edges.iter().enumerate() {
                        let alpha = (logits[e] - max).exp() / z;
                        for c in cols.clone() {
                            agg[c] += alpha * v[c];
                        }
                    }
                }
                let out = mat_row_times(&agg, wo);
                let res: Vec<f64> = h[t.index()][i].iter().zip(&out).map(|(a, b)| a + b).collect();
                layer_norm(&res, g, b, cfg.norm_eps)
            })
            .collect()
    })
}

/// First relational mean-aggregation layer (eval mode) for every node type.
pub fn rgcn_layer(graph: &HeteroGraph, store: &ParamStore, cfg: &ModelConfig, h: &[Vec<Vec<f64>>; 3]) -> [Vec<Vec<f64>>; 3] {
    NodeType::ALL.map(|t| {
        let (ws, bs) = names::rgcn_self(0, t);
        let (ws, bs) = (store.param(&ws).unwrap(), store.param(&bs).unwrap());
        let (g, b) = names::norm("rgcn", 0, t);
        let (g, b) = (store.param(&g).unwrap(), store.param(&b).unwrap());
        (0..graph.num_nodes(t))
            .map(|i| {
                let hi = &h[t.index()][i];
                let mut out: Vec<f64> = mat_row_times(hi, ws).iter().enumerate().map(|(c, v)| v + bs.get(0, c)).collect();
                for r in Relation::ALL.into_iter().filter(|r| r.target() == t) {
                    let srcs: Vec<usize> = graph.edges(r).iter().filter(|e| e.1 == i).map(|e| e.0).collect();
                    if srcs.is_empty() {
                        continue;
                    }
                    let mut mean = vec![0.0; cfg.hidden_dim];
                    for &s in &srcs {
                        for (m, v) in mean.iter_mut().zip(&h[r.source().index()][s]) {
                            *m += v / srcs.len() as f64;
                        }
                    }
                    let wr = store.param(&names::rgcn_relation(0, r)).unwrap();
                    for (o, v) in out.iter_mut().zip(mat_row_times(&mean, wr)) {
                        *o += v;
                    }
                }
                let res: Vec<f64> = hi.iter().zip(&out).map(|(a, b)| a + b).collect();
                layer_norm(&res, g, b, cfg.norm_eps)
            })
            .collect()
    })
}

/// `true` when row `a` ranks ahead of row `b` (higher score, then smaller id).
fn ahead(ids: &[String], scores: &[f64], a: usize, b: usize) -> bool {
    scores[a] > scores[b] || (scores[a] == scores[b] && ids[a] < ids[b])
}

/// Average precision from per-positive rank counts.
pub fn average_precision(ids: &[String], scores: &[f64], labels: &[u8]) -> f64 {
    let n = scores.len();
    let pos: Vec<usize> = (0..n).filter(|&i| labels[i] == 1).collect();
    let mut total = 0.0;
    for &i in &pos {
        let rank = 1 + (0..n).filter(|&j| ahead(ids, scores, j, i)).count();
        let hits = 1 + pos.iter().filter(|&&j| ahead(ids, scores, j, i)).count();
        total += hits as f64 / rank as f64;
    }
    total / pos.len() as f64
}

/// Pairwise Mann–Whitney count.
pub fn auroc_pairs(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for i in (0..scores.len()).filter(|&i| labels[i] == 1) {
        for j in (0..scores.len()).filter(|&j| labels[j] == 0) {
            pairs += 1.0;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

fn f1_counting(scores: &[f64], labels: &[u8], t: f64) -> f64 {
    let tp = (0..scores.len()).filter(|&i| scores[i] >= t && labels[i] == 1).count() as f64;
    let fp = (0..scores.len()).filter(|&i| scores[i] >= t && labels[i] == 0).count() as f64;
    let fn_ = (0..scores.len()).filter(|&i| scores[i] < t && labels[i] == 1).count() as f64;
    if tp == 0.0 {
        0.0
    } else {
        2.0 * tp / (2.0 * tp + fp + fn_)
    }
}

/// Tries every distinct validation score; keeps the lowest among the best.
pub fn f1_sweep(val_scores: &[f64], val_labels: &[u8], test_scores: &[f64], test_labels: &[u8]) -> (f64, f64) {
    let mut grid: Vec<f64> = val_scores.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let mut best = (f64::NAN, -1.0);
    for &t in &grid {
        let f = f1_counting(val_scores, val_labels, t);
        if f > best.1 {
            best = (t, f);
        }
    }
    (best.0, f1_counting(test_scores, test_labels, best.0))
}

/// Fraction of positives among rows with fewer than `k` rows ahead of them.
pub fn precision_top_k(ids: &[String], scores: &[f64], labels: &[u8], k: usize) -> f64 {
    let n = scores.len();
    let hits = (0..n)
        .filter(|&i| labels[i] == 1 && (0..n).filter(|&j| ahead(ids, scores, j, i)).count() < k)
        .count();
    hits as f64 / k as f64
}

/// Random typed graph with reverse edges. Every company links to one topic and
/// one agency except the last, which stays isolated; same-topic companies are
/// joined by co-topic pairs with probability one half.
pub fn random_graph(companies: usize, topics: usize, agencies: usize, seed: u64) -> HeteroGraph {
    let mut r = rng::stream(seed, 1);
    let mut table = |prefix: &str, n: usize, dim: usize| NodeTable {
        ids: (0..n).map(|i| format!("{prefix}{i:03}")).collect(),
        features: Matrix::from_vec(n, dim, (0..n * dim).map(|_| r.random::<f64>()).collect()),
    };
    let nodes = [table("C", companies, 7), table("T", topics, 2), table("A", agencies, 3)];
    let mut r = rng::stream(seed, 2);
    let (mut operates, mut awarded, mut topic_of) = (Vec::new(), Vec::new(), Vec::new());
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

/// Uniform matrix in `[-1, 1)`.
pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut r = rng::stream(seed, 3);
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| r.random_range(-1.0..1.0)).collect())
}

//! On-disk layouts for graphs, labels and checkpoints.
//!
//! A graph directory holds `nodes_<type>.csv` (id plus feature columns),
//! `edges_<relation>.csv` (source and target row indices, reverse relations
//! included) and `manifest.json`. Floats are written in shortest round-trip
//! form so a reloaded graph is bit-identical.

use std::collections::BTreeMap;
use std::path::Path;

use grantgraph_core::autodiff::Matrix;
use grantgraph_core::graph::{BuildLog, EdgeCaps, FeatureSpec, HeteroGraph, NodeTable, NodeType, Relation};
use grantgraph_core::labels::{LabeledCompany, Split, SplitSummary};
use grantgraph_core::model::{ModelConfig, ModelKind, ParamStore};
use grantgraph_core::pipeline::SplitGraph;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::io::{csv_reader, csv_writer, read_artifact, read_csv, write_artifact, write_csv};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphManifest {
    pub split: Split,
    pub spec: FeatureSpec,
    pub caps: EdgeCaps,
    pub seed: u64,
    pub reversed: bool,
    pub node_counts: BTreeMap<String, usize>,
    pub edge_counts: BTreeMap<String, usize>,
    pub log: BuildLog,
}

fn nodes_file(t: NodeType) -> String {
    format!("nodes_{}.csv", t.as_str())
}

fn edges_file(r: Relation) -> String {
    format!("edges_{}.csv", r.as_str())
}

pub fn write_graph(dir: &Path, sg: &SplitGraph, caps: EdgeCaps, seed: u64, config_hash: &str) -> CliResult<()> {
    let graph = &sg.graph;
    for t in NodeType::ALL {
        let path = dir.join(nodes_file(t));
        let mut w = csv_writer(&path)?;
        let mut header = vec!["id"];
        header.extend_from_slice(t.feature_names());
        w.write_record(&header).map_err(|e| CliError::schema(&path, e))?;
        let table = graph.nodes(t);
        for (i, id) in table.ids.iter().enumerate() {
            let mut record = vec![id.clone()];
            record.extend(table.features.row(i).iter().map(|v| v.to_string()));
            w.write_record(&record).map_err(|e| CliError::schema(&path, e))?;
        }
        w.flush().map_err(|e| CliError::io(&path, e))?;
    }
    for r in Relation::ALL {
        let path = dir.join(edges_file(r));
        let mut w = csv_writer(&path)?;
        w.write_record(["source", "target"]).map_err(|e| CliError::schema(&path, e))?;
        for &(s, t) in graph.edges(r) {
            w.write_record([s.to_string(), t.to_string()])
                .map_err(|e| CliError::schema(&path, e))?;
        }
        w.flush().map_err(|e| CliError::io(&path, e))?;
    }
    let manifest = GraphManifest {
        split: sg.split,
        spec: sg.spec,
        caps,
        seed,
        reversed: graph.is_reversed(),
        node_counts: NodeType::ALL
            .iter()
            .map(|t| (t.as_str().to_string(), graph.num_nodes(*t)))
            .collect(),
        edge_counts: Relation::ALL
            .iter()
            .map(|r| (r.as_str().to_string(), graph.edges(*r).len()))
            .collect(),
        log: sg.log.clone(),
    };
    write_artifact(&dir.join(MANIFEST), config_hash, &manifest)
}

fn read_nodes(dir: &Path, t: NodeType) -> CliResult<NodeTable> {
    let path = dir.join(nodes_file(t));
    let mut header = vec!["id"];
    header.extend_from_slice(t.feature_names());
    let mut reader = csv_reader(&path, &header)?;
    let mut ids = Vec::new();
    let mut data = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CliError::schema(&path, e))?;
        ids.push(record[0].to_string());
        for field in record.iter().skip(1) {
            let v: f64 = field
                .parse()
                .map_err(|_| CliError::schema(&path, format!("bad feature value `{field}`")))?;
            data.push(v);
        }
    }
    Ok(NodeTable {
        features: Matrix::from_vec(ids.len(), t.feature_dim(), data),
        ids,
    })
}

fn read_edges(dir: &Path, r: Relation) -> CliResult<Vec<(usize, usize)>> {
    let path = dir.join(edges_file(r));
    let mut reader = csv_reader(&path, &["source", "target"])?;
    reader
        .deserialize::<(usize, usize)>()
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::schema(&path, e))
}

/// Loads a graph directory written by [`write_graph`].
pub fn read_graph(dir: &Path) -> CliResult<(HeteroGraph, GraphManifest)> {
    let manifest: GraphManifest = read_artifact(&dir.join(MANIFEST))?;
    let [c, t, a] = NodeType::ALL;
    let nodes = [read_nodes(dir, c)?, read_nodes(dir, t)?, read_nodes(dir, a)?];
    let mut edges: [Vec<(usize, usize)>; 6] = Default::default();
    for r in Relation::ALL {
        edges[r.index()] = read_edges(dir, r)?;
    }
    let graph = HeteroGraph::from_parts(nodes, edges, manifest.reversed)
        .map_err(|e| CliError::schema(dir, e))?;
    Ok((graph, manifest))
}

/// Reloads a split graph and attaches the labeled rows of its split.
pub fn load_split_graph(dir: &Path, table: &[LabeledCompany]) -> CliResult<SplitGraph> {
    let (graph, manifest) = read_graph(dir)?;
    Ok(SplitGraph::attach(manifest.split, manifest.spec, graph, manifest.log, table)?)
}

pub fn write_labels(path: &Path, table: &[LabeledCompany]) -> CliResult<()> {
    write_csv(path, table)
}

pub fn read_labels(path: &Path) -> CliResult<Vec<LabeledCompany>> {
    let table: Vec<LabeledCompany> = read_csv(path)?;
    if let Some(bad) = table.iter().find(|r| r.label > 1) {
        return Err(CliError::schema(path, format!("label {} is not 0 or 1", bad.label)));
    }
    if table.windows(2).any(|w| w[0].company >= w[1].company) {
        return Err(CliError::schema(path, "companies must be sorted and unique"));
    }
    Ok(table)
}

pub fn read_summary(path: &Path) -> CliResult<SplitSummary> {
    read_artifact(path)
}

/// Trained parameters plus what is needed to rebuild the model around them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub model: ModelKind,
    pub seed: u64,
    pub model_config: ModelConfig,
    pub params: ParamStore,
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint, config_hash: &str) -> CliResult<()> {
    write_artifact(path, config_hash, ckpt)
}

/// Loads a checkpoint and checks every tensor against a fresh model of the
/// recorded architecture.
pub fn read_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    let ckpt: Checkpoint = read_artifact(path)?;
    ckpt.model_config.validate().map_err(|e| CliError::schema(path, e))?;
    if ckpt.params.kind != ckpt.model {
        return Err(CliError::schema(path, "parameter store kind does not match model"));
    }
    let reference = ParamStore::init(ckpt.model, &ckpt.model_config, 0).map_err(|e| CliError::schema(path, e))?;
    let shapes = |s: &ParamStore| -> Vec<(String, (usize, usize))> {
        s.params().map(|(n, m)| (n.to_string(), m.shape())).collect()
    };
    if shapes(&reference) != shapes(&ckpt.params) {
        return Err(CliError::schema(path, "parameter names or shapes do not match the model"));
    }
    let buffer_lens = |s: &ParamStore| -> Vec<(String, usize)> {
        s.buffers().map(|(n, b)| (n.to_string(), b.len())).collect()
    };
    if buffer_lens(&reference) != buffer_lens(&ckpt.params) {
        return Err(CliError::schema(path, "buffers do not match the model"));
    }
    if !ckpt.params.is_finite() {
        return Err(CliError::schema(path, "checkpoint holds non-finite values"));
    }
    Ok(ckpt)
}

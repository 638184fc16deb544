//! Node classifiers over the company graph: a heterogeneous graph
//! transformer, a relational mean-aggregation GCN and a feature-only MLP.
//!
//! All three are pure functions of a [`ParamStore`] and the graph. A forward
//! pass binds the parameters onto a [`Tape`] and returns company logits
//! (`n_companies x 2`); the same call serves training and scoring.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{row_softmax, Matrix, Mode, SegmentIndex, Tape, Var};
use crate::graph::{HeteroGraph, NodeType, Relation};
use crate::{math, rng, Error, Result};

pub const NUM_CLASSES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Hgt,
    Rgcn,
    Mlp,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Hgt, ModelKind::Rgcn, ModelKind::Mlp];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Hgt => "hgt",
            ModelKind::Rgcn => "rgcn",
            ModelKind::Mlp => "mlp",
        }
    }

    pub fn from_name(name: &str) -> Option<ModelKind> {
        ModelKind::ALL.into_iter().find(|k| k.as_str() == name)
    }

    pub fn uses_edges(self) -> bool {
        !matches!(self, ModelKind::Mlp)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub heads: usize,
    pub hgt_layers: usize,
    pub rgcn_layers: usize,
    pub mlp_layers: usize,
    pub classifier_hidden: usize,
    pub dropout: f64,
    pub norm_eps: f64,
    pub batch_norm_momentum: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 128,
            heads: 4,
            hgt_layers: 3,
            rgcn_layers: 2,
            mlp_layers: 3,
            classifier_hidden: 64,
            dropout: 0.2,
            norm_eps: 1e-5,
            batch_norm_momentum: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.hidden_dim == 0 || self.heads == 0 || !self.hidden_dim.is_multiple_of(self.heads) {
            return fail(format!(
                "hidden_dim {} must be a positive multiple of heads {}",
                self.hidden_dim, self.heads
            ));
        }
        if self.hgt_layers == 0 || self.rgcn_layers == 0 || self.mlp_layers == 0 {
            return fail("layer counts must be at least 1".into());
        }
        if self.classifier_hidden == 0 {
            return fail("classifier_hidden must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} not in [0, 1)", self.dropout));
        }
        if self.norm_eps.is_nan() || self.norm_eps <= 0.0 {
            return fail("norm_eps must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.batch_norm_momentum) {
            return fail("batch_norm_momentum must be in [0, 1]".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.heads
    }

    fn layers(&self, kind: ModelKind) -> usize {
        match kind {
            ModelKind::Hgt => self.hgt_layers,
            ModelKind::Rgcn => self.rgcn_layers,
            ModelKind::Mlp => self.mlp_layers,
        }
    }
}

/// Node types whose states a message-passing layer must produce. The last
/// layer only feeds the classifier, which reads company rows.
pub fn layer_targets(layer: usize, layers: usize) -> &'static [NodeType] {
    if layer + 1 == layers {
        &[NodeType::Company]
    } else {
        &NodeType::ALL
    }
}

fn incoming(t: NodeType) -> impl Iterator<Item = Relation> {
    Relation::ALL.into_iter().filter(move |r| r.target() == t)
}

/// Parameter names, grouped by role.
pub mod names {
    use super::*;

    pub fn input(t: NodeType) -> (String, String) {
        pair(format!("input.{}", t.as_str()))
    }
    pub fn query(layer: usize, t: NodeType) -> String {
        format!("hgt.{layer}.query.{}", t.as_str())
    }
    pub fn key(layer: usize, r: Relation) -> String {
        format!("hgt.{layer}.key.{}", r.as_str())
    }
    pub fn value(layer: usize, r: Relation) -> String {
        format!("hgt.{layer}.value.{}", r.as_str())
    }
    pub fn output(layer: usize, t: NodeType) -> String {
        format!("hgt.{layer}.out.{}", t.as_str())
    }
    pub fn norm(family: &str, layer: usize, t: NodeType) -> (String, String) {
        let base = format!("{family}.{layer}.norm.{}", t.as_str());
        (format!("{base}.gain"), format!("{base}.bias"))
    }
    pub fn rgcn_self(layer: usize, t: NodeType) -> (String, String) {
        pair(format!("rgcn.{layer}.self.{}", t.as_str()))
    }
    pub fn rgcn_relation(layer: usize, r: Relation) -> String {
        format!("rgcn.{layer}.rel.{}", r.as_str())
    }
    pub fn mlp_linear(layer: usize) -> (String, String) {
        pair(format!("mlp.{layer}"))
    }
    pub fn mlp_bn(layer: usize) -> (String, String) {
        (format!("mlp.{layer}.bn.gain"), format!("mlp.{layer}.bn.bias"))
    }
    pub fn mlp_running(layer: usize) -> (String, String) {
        (
            format!("mlp.{layer}.bn.running_mean"),
            format!("mlp.{layer}.bn.running_var"),
        )
    }
    pub fn head_hidden() -> (String, String) {
        pair("head.hidden".to_string())
    }
    pub fn head_out() -> (String, String) {
        pair("head.out".to_string())
    }

    fn pair(base: String) -> (String, String) {
        (format!("{base}.weight"), format!("{base}.bias"))
    }
}

/// Named tensors for one model plus non-trainable buffers (batch-norm running
/// statistics).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    pub kind: ModelKind,
    params: BTreeMap<String, Matrix>,
    buffers: BTreeMap<String, Vec<f64>>,
}

impl ParamStore {
    pub fn empty(kind: ModelKind) -> Self {
        Self {
            kind,
            params: BTreeMap::new(),
            buffers: BTreeMap::new(),
        }
    }

    /// Fresh parameters. Each tensor draws from its own stream keyed by
    /// `(seed, name)`, so adding a tensor never shifts the others.
    pub fn init(kind: ModelKind, cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = Self::empty(kind);
        let d = cfg.hidden_dim;
        let mut uniform = |name: String, rows: usize, cols: usize, fan_in: usize| {
            let value = uniform_fan_in(seed, &name, rows, cols, fan_in);
            store.params.insert(name, value);
        };
        let mut linear = |(w, b): (String, String), fan_in: usize, fan_out: usize| {
            uniform(w, fan_in, fan_out, fan_in);
            uniform(b, 1, fan_out, fan_in);
        };

        let layers = cfg.layers(kind);
        match kind {
            ModelKind::Hgt | ModelKind::Rgcn => {
                for t in NodeType::ALL {
                    linear(names::input(t), t.feature_dim(), d);
                }
            }
            ModelKind::Mlp => {
                for l in 0..layers {
                    let fan_in = if l == 0 { NodeType::Company.feature_dim() } else { d };
                    linear(names::mlp_linear(l), fan_in, d);
                }
            }
        }
        linear(names::head_hidden(), d, cfg.classifier_hidden);
        linear(names::head_out(), cfg.classifier_hidden, NUM_CLASSES);
        for l in 0..layers {
            match kind {
                ModelKind::Hgt => {
                    for &t in layer_targets(l, layers) {
                        linear_free(&mut store, seed, names::query(l, t), d);
                        linear_free(&mut store, seed, names::output(l, t), d);
                        for r in incoming(t) {
                            linear_free(&mut store, seed, names::key(l, r), d);
                            linear_free(&mut store, seed, names::value(l, r), d);
                        }
                        store.add_norm(names::norm("hgt", l, t), d);
                    }
                }
                ModelKind::Rgcn => {
                    for &t in layer_targets(l, layers) {
                        let (w, b) = names::rgcn_self(l, t);
                        linear_free(&mut store, seed, w, d);
                        store.params.insert(b.clone(), uniform_fan_in(seed, &b, 1, d, d));
                        for r in incoming(t) {
                            linear_free(&mut store, seed, names::rgcn_relation(l, r), d);
                        }
                        store.add_norm(names::norm("rgcn", l, t), d);
                    }
                }
                ModelKind::Mlp => {
                    store.add_norm(names::mlp_bn(l), d);
                    let (m, v) = names::mlp_running(l);
                    store.buffers.insert(m, vec![0.0; d]);
                    store.buffers.insert(v, vec![1.0; d]);
                }
            }
        }
        Ok(store)
    }

    fn add_norm(&mut self, (gain, bias): (String, String), d: usize) {
        self.params.insert(gain, Matrix::filled(1, d, 1.0));
        self.params.insert(bias, Matrix::zeros(1, d));
    }

    pub fn param(&self, name: &str) -> Result<&Matrix> {
        self.params.get(name).ok_or_else(|| Error::MissingParam(name.into()))
    }

    pub fn param_mut(&mut self, name: &str) -> Result<&mut Matrix> {
        self.params.get_mut(name).ok_or_else(|| Error::MissingParam(name.into()))
    }

    pub fn buffer(&self, name: &str) -> Result<&[f64]> {
        self.buffers
            .get(name)
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::MissingParam(name.into()))
    }

    pub fn buffer_mut(&mut self, name: &str) -> Result<&mut Vec<f64>> {
        self.buffers.get_mut(name).ok_or_else(|| Error::MissingParam(name.into()))
    }

    pub fn insert_param(&mut self, name: impl Into<String>, value: Matrix) {
        self.params.insert(name.into(), value);
    }

    pub fn insert_buffer(&mut self, name: impl Into<String>, value: Vec<f64>) {
        self.buffers.insert(name.into(), value);
    }

    pub fn params(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = (&str, &mut Matrix)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.buffers.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Trainable scalar count.
    pub fn param_count(&self) -> usize {
        self.params.values().map(Matrix::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params.values().all(Matrix::is_finite)
            && self.buffers.values().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

/// Uniform in `±1/sqrt(fan_in)` from a stream keyed by `(seed, name)`.
fn uniform_fan_in(seed: u64, name: &str, rows: usize, cols: usize, fan_in: usize) -> Matrix {
    let bound = 1.0 / math::sqrt(fan_in as f64);
    let mut r = rng::stream(seed, rng::fnv1a(name.as_bytes()));
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| r.random_range(-bound..bound)).collect())
}

/// Square bias-free `d x d` weight.
fn linear_free(store: &mut ParamStore, seed: u64, name: String, d: usize) {
    let value = uniform_fan_in(seed, &name, d, d, d);
    store.params.insert(name, value);
}

/// Parameters recorded on a tape for one forward pass.
pub struct Bound<'a> {
    store: &'a ParamStore,
    vars: BTreeMap<&'a str, Var>,
}

impl<'a> Bound<'a> {
    /// Records every parameter; as tracked leaves when `trainable`, else as
    /// constants.
    pub fn bind(tape: &mut Tape, store: &'a ParamStore, trainable: bool) -> Self {
        let vars = store
            .params
            .iter()
            .map(|(name, m)| {
                let v = if trainable {
                    tape.leaf(m.clone())
                } else {
                    tape.constant(m.clone())
                };
                (name.as_str(), v)
            })
            .collect();
        Self { store, vars }
    }

    /// Pairs already-recorded vars with the store's parameters, in name order.
    pub fn from_vars(store: &'a ParamStore, vars: &[Var]) -> Result<Self> {
        if vars.len() != store.params.len() {
            return Err(Error::Invalid(format!(
                "{} vars for {} parameters",
                vars.len(),
                store.params.len()
            )));
        }
        let vars = store.params.keys().map(String::as_str).zip(vars.iter().copied()).collect();
        Ok(Self { store, vars })
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars.get(name).copied().ok_or_else(|| Error::MissingParam(name.into()))
    }

    /// `(name, var)` for every bound parameter.
    pub fn vars(&self) -> impl Iterator<Item = (&'a str, Var)> + '_ {
        self.vars.iter().map(|(k, v)| (*k, *v))
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }
}

/// Edges of one relation as source rows and target segments.
#[derive(Debug, Clone)]
pub struct RelationEdges {
    pub relation: Relation,
    pub sources: Vec<usize>,
    pub targets: SegmentIndex,
}

/// In-edges of one node type across all relations, concatenated in relation
/// order, with a single segment index over the target nodes.
#[derive(Debug, Clone)]
pub struct Incoming {
    pub relations: Vec<RelationEdges>,
    pub targets: Vec<usize>,
    pub segments: SegmentIndex,
}

/// Graph data laid out for the forward passes.
#[derive(Debug, Clone)]
pub struct GraphInputs {
    pub features: [Matrix; 3],
    pub counts: [usize; 3],
    pub incoming: [Incoming; 3],
}

impl GraphInputs {
    pub fn new(graph: &HeteroGraph) -> Result<Self> {
        let counts = NodeType::ALL.map(|t| graph.num_nodes(t));
        let mut incoming_by_type = Vec::with_capacity(3);
        for t in NodeType::ALL {
            let mut relations = Vec::new();
            let mut targets = Vec::new();
            for r in incoming(t) {
                let edges = graph.edges(r);
                if edges.is_empty() {
                    continue;
                }
                let dst: Vec<usize> = edges.iter().map(|e| e.1).collect();
                targets.extend_from_slice(&dst);
                relations.push(RelationEdges {
                    relation: r,
                    sources: edges.iter().map(|e| e.0).collect(),
                    targets: SegmentIndex::new(dst, counts[t.index()])?,
                });
            }
            let segments = SegmentIndex::new(targets.clone(), counts[t.index()])?;
            incoming_by_type.push(Incoming {
                relations,
                targets,
                segments,
            });
        }
        let mut it = incoming_by_type.into_iter();
        let incoming = [(); 3].map(|_| it.next().expect("three node types"));
        Ok(Self {
            features: NodeType::ALL.map(|t| graph.features(t).clone()),
            counts,
            incoming,
        })
    }

    pub fn num_companies(&self) -> usize {
        self.counts[NodeType::Company.index()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForwardOptions {
    pub mode: Mode,
    /// Root of every dropout mask in the pass.
    pub dropout_seed: u64,
}

impl ForwardOptions {
    pub fn eval() -> Self {
        Self {
            mode: Mode::Eval,
            dropout_seed: 0,
        }
    }

    fn site(&self, site: u64) -> u64 {
        rng::derive(self.dropout_seed, site)
    }
}

/// Batch statistics observed by one batch-norm site (biased variance).
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub layer: usize,
    pub rows: usize,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Forward {
    /// `n_companies x 2`.
    pub logits: Var,
    pub batch_stats: Vec<BatchStats>,
}

/// Per-type input projection `x W + b` into the shared hidden width.
pub fn project_inputs(tape: &mut Tape, bound: &Bound, inputs: &GraphInputs) -> Result<[Var; 3]> {
    let mut out = Vec::with_capacity(3);
    for t in NodeType::ALL {
        let x = tape.constant(inputs.features[t.index()].clone());
        let (w, b) = names::input(t);
        out.push(tape.linear(x, bound.var(&w)?, bound.var(&b)?)?);
    }
    Ok([out[0], out[1], out[2]])
}

/// States after one graph-transformer layer and the attention it used.
#[derive(Debug, Clone)]
pub struct LayerOutput {
    pub states: [Option<Var>; 3],
    /// Per type: `E x heads` weights over that type's concatenated in-edges.
    pub attention: [Option<Var>; 3],
}

/// One graph-transformer layer. Attention is normalized per (target, head)
/// jointly over the target's in-edges of every relation.
#[allow(clippy::too_many_arguments)]
pub fn hgt_layer(
    tape: &mut Tape,
    bound: &Bound,
    inputs: &GraphInputs,
    cfg: &ModelConfig,
    layer: usize,
    states: &[Option<Var>; 3],
    targets: &[NodeType],
    opts: ForwardOptions,
) -> Result<LayerOutput> {
    let scale = 1.0 / math::sqrt(cfg.head_dim() as f64);
    let mut out = LayerOutput {
        states: [None; 3],
        attention: [None; 3],
    };
    let state = |t: NodeType| states[t.index()].ok_or_else(|| Error::Invalid(format!("missing {} states", t.as_str())));
    for &t in targets {
        let h = state(t)?;
        let inc = &inputs.incoming[t.index()];
        let n = inputs.counts[t.index()];
        let aggregated = if inc.targets.is_empty() {
            tape.constant(Matrix::zeros(n, cfg.hidden_dim))
        } else {
            let q_all = tape.matmul(h, bound.var(&names::query(layer, t))?)?;
            let q = tape.gather_rows(q_all, &inc.targets)?;
            let mut keys: Option<Var> = None;
            let mut values: Option<Var> = None;
            for rel in &inc.relations {
                let src = state(rel.relation.source())?;
                let wk = bound.var(&names::key(layer, rel.relation))?;
                let wv = bound.var(&names::value(layer, rel.relation))?;
                // project on whichever side has fewer rows
                let (k, v) = if inputs.counts[rel.relation.source().index()] < rel.sources.len() {
                    let k_nodes = tape.matmul(src, wk)?;
                    let v_nodes = tape.matmul(src, wv)?;
                    (tape.gather_rows(k_nodes, &rel.sources)?, tape.gather_rows(v_nodes, &rel.sources)?)
                } else {
                    let src_rows = tape.gather_rows(src, &rel.sources)?;
                    (tape.matmul(src_rows, wk)?, tape.matmul(src_rows, wv)?)
                };
                keys = Some(match keys {
                    Some(acc) => tape.concat_rows(acc, k)?,
                    None => k,
                });
                values = Some(match values {
                    Some(acc) => tape.concat_rows(acc, v)?,
                    None => v,
                });
            }
            let (k, v) = (keys.expect("non-empty"), values.expect("non-empty"));
            let logits = tape.head_dot(q, k, cfg.heads, scale)?;
            let alpha = tape.segment_softmax(logits, &inc.segments)?;
            out.attention[t.index()] = Some(alpha);
            let messages = tape.head_weight(v, alpha)?;
            tape.segment_sum(messages, &inc.segments)?
        };
        let projected = tape.matmul(aggregated, bound.var(&names::output(layer, t))?)?;
        let residual = tape.add(h, projected)?;
        let (g, b) = names::norm("hgt", layer, t);
        let normed = tape.layer_norm(residual, bound.var(&g)?, bound.var(&b)?, cfg.norm_eps)?;
        let site = opts.site(layer as u64 * 16 + t.index() as u64);
        out.states[t.index()] = Some(tape.dropout(normed, cfg.dropout, site, opts.mode)?);
    }
    Ok(out)
}

/// One relational mean-aggregation layer.
#[allow(clippy::too_many_arguments)]
pub fn rgcn_layer(
    tape: &mut Tape,
    bound: &Bound,
    inputs: &GraphInputs,
    cfg: &ModelConfig,
    layer: usize,
    states: &[Option<Var>; 3],
    targets: &[NodeType],
    opts: ForwardOptions,
) -> Result<[Option<Var>; 3]> {
    let mut out = [None; 3];
    let state = |t: NodeType| states[t.index()].ok_or_else(|| Error::Invalid(format!("missing {} states", t.as_str())));
    for &t in targets {
        let h = state(t)?;
        let (w, b) = names::rgcn_self(layer, t);
        let mut acc = tape.linear(h, bound.var(&w)?, bound.var(&b)?)?;
        for rel in &inputs.incoming[t.index()].relations {
            let src = state(rel.relation.source())?;
            let rows = tape.gather_rows(src, &rel.sources)?;
            let mean = tape.segment_mean(rows, &rel.targets)?;
            let msg = tape.matmul(mean, bound.var(&names::rgcn_relation(layer, rel.relation))?)?;
            acc = tape.add(acc, msg)?;
        }
        let residual = tape.add(h, acc)?;
        let (g, b) = names::norm("rgcn", layer, t);
        let normed = tape.layer_norm(residual, bound.var(&g)?, bound.var(&b)?, cfg.norm_eps)?;
        let site = opts.site(0x100 + layer as u64 * 16 + t.index() as u64);
        out[t.index()] = Some(tape.dropout(normed, cfg.dropout, site, opts.mode)?);
    }
    Ok(out)
}

/// Shared two-layer classifier on company embeddings.
pub fn classifier_head(tape: &mut Tape, bound: &Bound, cfg: &ModelConfig, x: Var, opts: ForwardOptions) -> Result<Var> {
    let (w, b) = names::head_hidden();
    let hidden = tape.linear(x, bound.var(&w)?, bound.var(&b)?)?;
    let hidden = tape.relu(hidden)?;
    let hidden = tape.dropout(hidden, cfg.dropout, opts.site(0x200), opts.mode)?;
    let (w, b) = names::head_out();
    tape.linear(hidden, bound.var(&w)?, bound.var(&b)?)
}

fn message_passing(
    kind: ModelKind,
    tape: &mut Tape,
    bound: &Bound,
    inputs: &GraphInputs,
    cfg: &ModelConfig,
    opts: ForwardOptions,
) -> Result<Var> {
    let projected = project_inputs(tape, bound, inputs)?;
    let mut states = projected.map(Some);
    let layers = cfg.layers(kind);
    for l in 0..layers {
        let targets = layer_targets(l, layers);
        states = match kind {
            ModelKind::Hgt => hgt_layer(tape, bound, inputs, cfg, l, &states, targets, opts)?.states,
            _ => rgcn_layer(tape, bound, inputs, cfg, l, &states, targets, opts)?,
        };
    }
    let company = states[NodeType::Company.index()].expect("company states");
    classifier_head(tape, bound, cfg, company, opts)
}

pub fn hgt_forward(tape: &mut Tape, bound: &Bound, inputs: &GraphInputs, cfg: &ModelConfig, opts: ForwardOptions) -> Result<Var> {
    message_passing(ModelKind::Hgt, tape, bound, inputs, cfg, opts)
}

pub fn rgcn_forward(
    tape: &mut Tape,
    bound: &Bound,
    inputs: &GraphInputs,
    cfg: &ModelConfig,
    opts: ForwardOptions,
) -> Result<Var> {
    message_passing(ModelKind::Rgcn, tape, bound, inputs, cfg, opts)
}

/// Feature-only baseline on the given rows of company features. Batch norm
/// uses batch statistics in train mode (returned for the running update) and
/// the stored running statistics in eval mode.
pub fn mlp_forward(
    tape: &mut Tape,
    bound: &Bound,
    features: &Matrix,
    cfg: &ModelConfig,
    opts: ForwardOptions,
) -> Result<Forward> {
    let mut x = tape.constant(features.clone());
    let mut batch_stats = Vec::new();
    for l in 0..cfg.mlp_layers {
        let (w, b) = names::mlp_linear(l);
        let lin = tape.linear(x, bound.var(&w)?, bound.var(&b)?)?;
        let act = tape.relu(lin)?;
        let (g, b) = names::mlp_bn(l);
        let (g, b) = (bound.var(&g)?, bound.var(&b)?);
        let normed = match opts.mode {
            Mode::Train => {
                let (mean, var) = crate::autodiff::column_stats(tape.value(act));
                batch_stats.push(BatchStats {
                    layer: l,
                    rows: tape.value(act).rows(),
                    mean,
                    var,
                });
                tape.batch_norm(act, g, b, None, cfg.norm_eps)?
            }
            Mode::Eval => {
                let (m, v) = names::mlp_running(l);
                let store = bound.store();
                tape.batch_norm(act, g, b, Some((store.buffer(&m)?, store.buffer(&v)?)), cfg.norm_eps)?
            }
        };
        x = tape.dropout(normed, cfg.dropout, opts.site(0x300 + l as u64), opts.mode)?;
    }
    Ok(Forward {
        logits: classifier_head(tape, bound, cfg, x, opts)?,
        batch_stats,
    })
}

/// Dispatches on the store's model kind. `rows` selects the companies whose
/// logits are produced (all companies when `None`); the MLP only ever sees
/// those rows, the graph models compute every node and gather afterwards.
pub fn forward(
    tape: &mut Tape,
    bound: &Bound,
    inputs: &GraphInputs,
    cfg: &ModelConfig,
    rows: Option<&[usize]>,
    opts: ForwardOptions,
) -> Result<Forward> {
    match bound.store().kind {
        ModelKind::Mlp => {
            let all = &inputs.features[NodeType::Company.index()];
            let features = match rows {
                Some(rows) => gather(all, rows)?,
                None => all.clone(),
            };
            mlp_forward(tape, bound, &features, cfg, opts)
        }
        kind => {
            let logits = message_passing(kind, tape, bound, inputs, cfg, opts)?;
            let logits = match rows {
                Some(rows) => tape.gather_rows(logits, rows)?,
                None => logits,
            };
            Ok(Forward {
                logits,
                batch_stats: Vec::new(),
            })
        }
    }
}

fn gather(m: &Matrix, rows: &[usize]) -> Result<Matrix> {
    let mut data = Vec::with_capacity(rows.len() * m.cols());
    for &r in rows {
        if r >= m.rows() {
            return Err(Error::Shape {
                op: "gather",
                detail: format!("row {r} out of range for {} rows", m.rows()),
            });
        }
        data.extend_from_slice(m.row(r));
    }
    Ok(Matrix::from_vec(rows.len(), m.cols(), data))
}

/// Eval-mode logits for the selected companies (all when `None`).
pub fn predict_logits(store: &ParamStore, inputs: &GraphInputs, cfg: &ModelConfig, rows: Option<&[usize]>) -> Result<Matrix> {
    let mut tape = Tape::new();
    let bound = Bound::bind(&mut tape, store, false);
    let fwd = forward(&mut tape, &bound, inputs, cfg, rows, ForwardOptions::eval())?;
    Ok(tape.value(fwd.logits).clone())
}

/// Eval-mode class-1 probabilities.
pub fn predict_proba(store: &ParamStore, inputs: &GraphInputs, cfg: &ModelConfig, rows: Option<&[usize]>) -> Result<Vec<f64>> {
    let probs = row_softmax(&predict_logits(store, inputs, cfg, rows)?);
    Ok((0..probs.rows()).map(|r| probs.get(r, 1)).collect())
}

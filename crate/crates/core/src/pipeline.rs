//! End-to-end wiring from cleaned awards to evaluated models.
//!
//! Each split is scored on its own graph whose feature cutoff is the end of
//! that split's enrollment window: training companies see awards before the
//! training cutoff, validation and test companies see awards up to the end of
//! their own window. Phase II rows never enter any graph.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::graph::{build_graph, BuildLog, EdgeCaps, FeatureSpec, HeteroGraph};
use crate::ingest::{CleanAward, Phase};
use crate::labels::{label_table, split_rows, HorizonConfig, LabeledCompany, Split, SplitSummary};
use crate::metrics::{evaluate, EvalReport, ScoredSet};
use crate::model::{predict_proba, GraphInputs, ModelConfig, ModelKind, ParamStore};
use crate::train::{train_model, SplitData, TrainConfig, Trained};
use crate::{Error, Result};

pub const DEFAULT_KS: [usize; 3] = [100, 500, 1000];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Lower anchor of the recency feature; the earliest phase I year when unset.
    pub dataset_min_year: Option<i32>,
    pub horizon: HorizonConfig,
    pub caps: EdgeCaps,
    pub graph_seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub ks: Vec<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            dataset_min_year: None,
            horizon: HorizonConfig::default(),
            caps: EdgeCaps::default(),
            graph_seed: 42,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            ks: DEFAULT_KS.to_vec(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.horizon.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.caps.per_group == 0 || self.caps.per_node == 0 {
            return Err(Error::Config("edge caps must be at least 1".into()));
        }
        Ok(())
    }

    pub fn feature_spec(&self, split: Split, awards: &[CleanAward]) -> Result<FeatureSpec> {
        let cutoff = self
            .horizon
            .end_of(split)
            .ok_or_else(|| Error::Invalid("excluded companies have no graph".into()))?;
        let min_year = match self.dataset_min_year {
            Some(y) => y,
            None => earliest_phase_one(awards).ok_or(Error::EmptyGraph)?,
        };
        let spec = FeatureSpec {
            cutoff_year: cutoff,
            dataset_min_year: min_year,
        };
        spec.validate()?;
        Ok(spec)
    }
}

pub fn earliest_phase_one(awards: &[CleanAward]) -> Option<i32> {
    awards.iter().filter(|a| a.phase == Phase::I).map(|a| a.year).min()
}

/// One split's graph together with the rows and labels scored on it.
#[derive(Debug, Clone)]
pub struct SplitGraph {
    pub split: Split,
    pub spec: FeatureSpec,
    pub graph: HeteroGraph,
    pub log: BuildLog,
    pub data: SplitData,
}

impl SplitGraph {
    /// Company ids of the scored rows, in row order.
    pub fn companies(&self) -> Vec<String> {
        let ids = self.graph.company_ids();
        self.data.rows.iter().map(|&r| ids[r].clone()).collect()
    }

    pub fn scored(&self, scores: Vec<f64>) -> Result<ScoredSet> {
        let labels = self.data.labels.iter().map(|&l| l as u8).collect();
        ScoredSet::new(self.companies(), scores, labels)
    }
}

pub fn build_split_graph(
    awards: &[CleanAward],
    table: &[LabeledCompany],
    split: Split,
    cfg: &PipelineConfig,
) -> Result<SplitGraph> {
    let spec = cfg.feature_spec(split, awards)?;
    let (graph, log) = build_graph(awards, &spec, cfg.caps, cfg.graph_seed)?;
    SplitGraph::attach(split, spec, graph, log, table)
}

impl SplitGraph {
    /// Pairs an already-built graph with the labeled rows of `split`.
    pub fn attach(
        split: Split,
        spec: FeatureSpec,
        graph: HeteroGraph,
        log: BuildLog,
        table: &[LabeledCompany],
    ) -> Result<Self> {
        let rows = split_rows(table, graph.company_ids(), split);
        if rows.missing > 0 {
            return Err(Error::Invalid(format!(
                "{} {} companies missing from their graph",
                rows.missing,
                split.as_str()
            )));
        }
        let data = SplitData::new(GraphInputs::new(&graph)?, rows.rows, rows.labels)
            .map_err(|_| Error::Invalid(format!("{} split is empty", split.as_str())))?;
        Ok(Self {
            split,
            spec,
            graph,
            log,
            data,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Prepared {
    pub labels: Vec<LabeledCompany>,
    pub summary: SplitSummary,
    pub train: SplitGraph,
    pub val: SplitGraph,
    pub test: SplitGraph,
}

pub fn prepare(awards: &[CleanAward], cfg: &PipelineConfig) -> Result<Prepared> {
    cfg.validate()?;
    let (labels, summary) = label_table(awards, &cfg.horizon)?;
    let build = |split| build_split_graph(awards, &labels, split, cfg);
    Ok(Prepared {
        train: build(Split::Train)?,
        val: build(Split::Val)?,
        test: build(Split::Test)?,
        labels,
        summary,
    })
}

/// Validation and test scores of trained parameters.
pub fn score(params: &ParamStore, prepared: &Prepared, cfg: &ModelConfig) -> Result<(ScoredSet, ScoredSet)> {
    let run = |sg: &SplitGraph| -> Result<ScoredSet> {
        sg.scored(predict_proba(params, &sg.data.inputs, cfg, Some(&sg.data.rows))?)
    };
    Ok((run(&prepared.val)?, run(&prepared.test)?))
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub trained: Trained,
    pub val: ScoredSet,
    pub test: ScoredSet,
    pub eval: EvalReport,
}

/// Trains one model for one seed and evaluates it on the test split.
pub fn run(prepared: &Prepared, kind: ModelKind, seed: u64, cfg: &PipelineConfig) -> Result<RunOutcome> {
    let trained = train_model(kind, &prepared.train.data, &prepared.val.data, &cfg.model, &cfg.train, seed)?;
    let (val, test) = score(&trained.params, prepared, &cfg.model)?;
    let eval = evaluate(kind.as_str(), seed, &val, &test, &cfg.ks)?;
    Ok(RunOutcome {
        trained,
        val,
        test,
        eval,
    })
}

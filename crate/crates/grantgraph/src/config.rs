//! TOML run configuration.
//!
//! Every section is optional and falls back to the library defaults. The
//! config hash is the SHA-256 of the fully resolved config serialized as JSON,
//! so two files that differ only in omitted defaults hash the same.

use std::path::Path;

use grantgraph_core::graph::EdgeCaps;
use grantgraph_core::ingest::IngestConfig;
use grantgraph_core::labels::HorizonConfig;
use grantgraph_core::model::{ModelConfig, ModelKind};
use grantgraph_core::pipeline::{PipelineConfig, DEFAULT_KS};
use grantgraph_core::synth::SynthConfig;
use grantgraph_core::train::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphSection {
    /// Origin of the recency feature; the earliest phase I year when unset.
    pub dataset_min_year: Option<i32>,
    pub seed: u64,
    pub caps: EdgeCaps,
}

impl Default for GraphSection {
    fn default() -> Self {
        Self {
            dataset_min_year: None,
            seed: 42,
            caps: EdgeCaps::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub ks: Vec<usize>,
    /// Models trained and evaluated by default.
    pub models: Vec<ModelKind>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            ks: DEFAULT_KS.to_vec(),
            models: ModelKind::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub ingest: IngestConfig,
    pub synth: SynthConfig,
    pub graph: GraphSection,
    pub horizon: HorizonConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load_or_default(path: Option<&Path>) -> CliResult<Self> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        self.pipeline().validate()?;
        self.synth.validate()?;
        if self.ingest.min_year > self.ingest.max_year {
            return Err(CliError::Config("ingest.min_year exceeds ingest.max_year".into()));
        }
        if self.eval.ks.contains(&0) {
            return Err(CliError::Config("eval.ks entries must be positive".into()));
        }
        if self.eval.models.is_empty() {
            return Err(CliError::Config("eval.models is empty".into()));
        }
        Ok(())
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            dataset_min_year: self.graph.dataset_min_year,
            horizon: self.horizon,
            caps: self.graph.caps,
            graph_seed: self.graph.seed,
            model: self.model.clone(),
            train: self.train.clone(),
            ks: self.eval.ks.clone(),
        }
    }

    /// Hex SHA-256 of the resolved config.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

/// Parses `all` or a comma-separated list of model names.
pub fn parse_models(list: &str) -> CliResult<Vec<ModelKind>> {
    if list.trim() == "all" {
        return Ok(ModelKind::ALL.to_vec());
    }
    let mut out = Vec::new();
    for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let kind = ModelKind::from_name(name)
            .ok_or_else(|| CliError::Config(format!("unknown model `{name}` (expected hgt, rgcn, mlp or all)")))?;
        if !out.contains(&kind) {
            out.push(kind);
        }
    }
    if out.is_empty() {
        return Err(CliError::Config("no models selected".into()));
    }
    Ok(out)
}

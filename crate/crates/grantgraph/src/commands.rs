//! Pipeline stages behind each subcommand.
//!
//! Every stage reads and writes inside one work directory:
//!
//! ```text
//! raw.csv  truth.json                     synth
//! clean.csv  ingest_report.json           ingest
//! graphs/{train,val,test}/                build-graph
//! labels.csv  labels_summary.json         labels
//! runs/<model>/seed_<n>/checkpoint.json   train (+ train_report.json, timing.json)
//! runs/<model>/seed_<n>/eval_report.json  evaluate (+ summary.csv, summary.json)
//! ranked.csv                              rank
//! ```
//!
//! All outputs are a pure function of inputs and config except `timing.json`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use grantgraph_core::ingest::{clean_records, CleanAward, IngestReport, RawAwardRecord};
use grantgraph_core::labels::{label_table, Split, SplitSummary};
use grantgraph_core::metrics::{aggregate, evaluate, EvalReport, MeanStd};
use grantgraph_core::model::{predict_proba, ModelKind};
use grantgraph_core::pipeline::{build_split_graph, score, Prepared};
use grantgraph_core::synth::generate;
use grantgraph_core::train::{train_model, TrainReport};
use grantgraph_core::Error;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::formats::{
    load_split_graph, read_checkpoint, read_labels, read_summary, write_checkpoint, write_graph, write_labels,
    Checkpoint,
};
use crate::io::{csv_writer, read_artifact, read_csv, write_artifact, write_csv};

pub const RAW: &str = "raw.csv";
pub const TRUTH: &str = "truth.json";
pub const CLEAN: &str = "clean.csv";
pub const INGEST_REPORT: &str = "ingest_report.json";
pub const LABELS: &str = "labels.csv";
pub const LABELS_SUMMARY: &str = "labels_summary.json";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const RANKED: &str = "ranked.csv";

/// Resolved inputs shared by all stages.
#[derive(Debug, Clone)]
pub struct Context {
    pub cfg: RunConfig,
    pub config_hash: String,
    pub work: PathBuf,
}

impl Context {
    pub fn new(cfg: RunConfig, work: impl Into<PathBuf>) -> CliResult<Self> {
        cfg.validate()?;
        Ok(Self {
            config_hash: cfg.hash(),
            cfg,
            work: work.into(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.work.join(name)
    }

    pub fn graph_dir(&self, split: Split) -> PathBuf {
        self.work.join("graphs").join(split.as_str())
    }

    pub fn run_dir(&self, kind: ModelKind, seed: u64) -> PathBuf {
        self.work.join("runs").join(kind.as_str()).join(format!("seed_{seed}"))
    }

    pub fn seeds(&self) -> &[u64] {
        &self.cfg.train.seeds
    }
}

const SCORED_SPLITS: [Split; 3] = [Split::Train, Split::Val, Split::Test];

/// Writes a synthetic raw corpus and its ground truth.
pub fn synth(ctx: &Context) -> CliResult<()> {
    let corpus = generate(&ctx.cfg.synth)?;
    write_csv(&ctx.path(RAW), &corpus.records)?;
    write_artifact(&ctx.path(TRUTH), &ctx.config_hash, &corpus.truth)?;
    log(&format!(
        "synth: {} records, {} companies, positive rate {:.3}",
        corpus.records.len(),
        corpus.truth.companies.len(),
        corpus.truth.positive_rate
    ));
    Ok(())
}

/// Cleans a raw CSV into `clean.csv`.
pub fn ingest(ctx: &Context, input: &Path) -> CliResult<IngestReport> {
    let raw: Vec<RawAwardRecord> = read_csv(input)?;
    let (clean, report) = clean_records(&raw, &ctx.cfg.ingest);
    write_csv(&ctx.path(CLEAN), &clean)?;
    write_artifact(&ctx.path(INGEST_REPORT), &ctx.config_hash, &report)?;
    log(&format!("ingest: {} accepted, {} rejected", report.accepted, report.rejected));
    Ok(report)
}

fn read_clean(path: &Path) -> CliResult<Vec<CleanAward>> {
    read_csv(path)
}

/// Builds the train, validation and test graphs from a clean CSV.
pub fn build_graphs(ctx: &Context, input: &Path) -> CliResult<()> {
    let awards = read_clean(input)?;
    let pipeline = ctx.cfg.pipeline();
    let (table, _) = label_table(&awards, &pipeline.horizon)?;
    for split in SCORED_SPLITS {
        let sg = build_split_graph(&awards, &table, split, &pipeline)?;
        write_graph(&ctx.graph_dir(split), &sg, pipeline.caps, pipeline.graph_seed, &ctx.config_hash)?;
        log(&format!(
            "build-graph: {} graph with {} companies, {} edges",
            split.as_str(),
            sg.graph.company_ids().len(),
            sg.graph.num_edges()
        ));
    }
    Ok(())
}

/// Writes the label table and per-split counts.
pub fn labels(ctx: &Context, input: &Path) -> CliResult<SplitSummary> {
    let awards = read_clean(input)?;
    let (table, summary) = label_table(&awards, &ctx.cfg.horizon)?;
    write_labels(&ctx.path(LABELS), &table)?;
    write_artifact(&ctx.path(LABELS_SUMMARY), &ctx.config_hash, &summary)?;
    for split in Split::ALL {
        let c = summary.get(split);
        log(&format!("labels: {} n={} positives={} rate={:.3}", split.as_str(), c.n, c.n_pos, c.rate));
    }
    Ok(summary)
}

/// Reloads the three split graphs and the label table from the work directory.
pub fn load_prepared(ctx: &Context) -> CliResult<Prepared> {
    let table = read_labels(&ctx.path(LABELS))?;
    let summary = read_summary(&ctx.path(LABELS_SUMMARY))?;
    Ok(Prepared {
        train: load_split_graph(&ctx.graph_dir(Split::Train), &table)?,
        val: load_split_graph(&ctx.graph_dir(Split::Val), &table)?,
        test: load_split_graph(&ctx.graph_dir(Split::Test), &table)?,
        labels: table,
        summary,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Timing {
    wall_time_secs: f64,
}

/// Trains each model for each seed.
pub fn train(ctx: &Context, models: &[ModelKind]) -> CliResult<Vec<TrainReport>> {
    let prepared = load_prepared(ctx)?;
    let mut reports = Vec::new();
    for &kind in models {
        for &seed in ctx.seeds() {
            let started = Instant::now();
            let trained = train_model(
                kind,
                &prepared.train.data,
                &prepared.val.data,
                &ctx.cfg.model,
                &ctx.cfg.train,
                seed,
            )?;
            let secs = started.elapsed().as_secs_f64();
            let dir = ctx.run_dir(kind, seed);
            let ckpt = Checkpoint {
                model: kind,
                seed,
                model_config: ctx.cfg.model.clone(),
                params: trained.params,
            };
            write_checkpoint(&dir.join("checkpoint.json"), &ckpt, &ctx.config_hash)?;
            write_artifact(&dir.join("train_report.json"), &ctx.config_hash, &trained.report)?;
            write_artifact(&dir.join("timing.json"), &ctx.config_hash, &Timing { wall_time_secs: secs })?;
            log(&format!(
                "train: {} seed {seed}: {} params, best epoch {} (val loss {:.4}), stopped at {}, {secs:.1}s",
                kind.as_str(),
                trained.report.param_count,
                trained.report.best_epoch,
                trained.report.best_val_loss,
                trained.report.stopped_epoch
            ));
            let mut report = trained.report;
            report.wall_time_secs = Some(secs);
            reports.push(report);
        }
    }
    Ok(reports)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub models: Vec<SummaryRow>,
}

/// One model's metrics aggregated across seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model: String,
    pub metrics: BTreeMap<String, MeanStd>,
}

/// Evaluates every trained checkpoint and aggregates across seeds.
pub fn evaluate_runs(ctx: &Context, models: &[ModelKind]) -> CliResult<Vec<EvalReport>> {
    let prepared = load_prepared(ctx)?;
    let mut reports = Vec::new();
    for &kind in models {
        for &seed in ctx.seeds() {
            let dir = ctx.run_dir(kind, seed);
            let ckpt = read_checkpoint(&dir.join("checkpoint.json"))?;
            let (val, test) = score(&ckpt.params, &prepared, &ckpt.model_config)?;
            let report = evaluate(kind.as_str(), seed, &val, &test, &ctx.cfg.eval.ks)?;
            write_artifact(&dir.join("eval_report.json"), &ctx.config_hash, &report)?;
            log(&format!(
                "evaluate: {} seed {seed}: auprc {:.4} auroc {:.4} f1 {:.4}",
                kind.as_str(),
                report.auprc,
                report.auroc,
                report.f1
            ));
            if !report.skipped_k.is_empty() {
                log(&format!(
                    "evaluate: k {:?} skipped, test split has only {} companies",
                    report.skipped_k, report.n
                ));
            }
            reports.push(report);
        }
    }
    let summary = aggregate(&reports)?;
    write_summary_csv(&ctx.path(SUMMARY_CSV), models, &summary)?;
    let models = models
        .iter()
        .filter_map(|k| {
            summary.get(k.as_str()).map(|m| SummaryRow {
                model: k.as_str().to_string(),
                metrics: m.clone(),
            })
        })
        .collect();
    write_artifact(&ctx.path(SUMMARY_JSON), &ctx.config_hash, &Summary { models })?;
    Ok(reports)
}

/// Wide table: one row per model, mean and std columns per metric.
fn write_summary_csv(
    path: &Path,
    models: &[ModelKind],
    summary: &BTreeMap<String, BTreeMap<String, MeanStd>>,
) -> CliResult<()> {
    let Some(first) = models.iter().find_map(|k| summary.get(k.as_str())) else {
        return Ok(());
    };
    // Column order follows the report's own metric order.
    let names: Vec<&String> = ordered_metric_names(first);
    let mut w = csv_writer(path)?;
    let mut header = vec!["model".to_string(), "runs".to_string()];
    for n in &names {
        header.push(format!("{n}_mean"));
        header.push(format!("{n}_std"));
    }
    w.write_record(&header).map_err(|e| CliError::schema(path, e))?;
    for kind in models {
        let Some(metrics) = summary.get(kind.as_str()) else {
            continue;
        };
        let runs = metrics.values().next().map_or(0, |m| m.runs);
        let mut record = vec![kind.as_str().to_string(), runs.to_string()];
        for n in &names {
            let m = metrics.get(*n).copied().unwrap_or(MeanStd {
                mean: f64::NAN,
                std: f64::NAN,
                runs: 0,
            });
            record.push(format!("{:.6}", m.mean));
            record.push(format!("{:.6}", m.std));
        }
        w.write_record(&record).map_err(|e| CliError::schema(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn ordered_metric_names(metrics: &BTreeMap<String, MeanStd>) -> Vec<&String> {
    let rank = |name: &str| -> (usize, usize) {
        let k = |prefix: &str| name.strip_prefix(prefix).and_then(|k| k.parse().ok()).unwrap_or(0);
        match name {
            "auprc" => (0, 0),
            "auroc" => (1, 0),
            "f1" => (2, 0),
            n if n.starts_with("precision@") => (3, k("precision@")),
            n if n.starts_with("lift@") => (4, k("lift@")),
            _ => (5, 0),
        }
    };
    let mut names: Vec<&String> = metrics.keys().collect();
    names.sort_by_key(|n| (rank(n), n.as_str()));
    names
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCompany {
    pub rank: usize,
    pub company: String,
    pub score: f64,
}

/// Scores one split's companies with a checkpoint and writes the top `k`.
pub fn rank(ctx: &Context, checkpoint: &Path, split: Split, k: usize) -> CliResult<Vec<RankedCompany>> {
    if k == 0 {
        return Err(CliError::Config("k must be at least 1".into()));
    }
    let ckpt = read_checkpoint(checkpoint)?;
    let table = read_labels(&ctx.path(LABELS))?;
    let sg = load_split_graph(&ctx.graph_dir(split), &table)?;
    let n = sg.data.rows.len();
    if k > n {
        return Err(Error::KExceedsN { k, n }.into());
    }
    let scores = predict_proba(&ckpt.params, &sg.data.inputs, &ckpt.model_config, Some(&sg.data.rows))?;
    let scored = sg.scored(scores)?;
    let ranked: Vec<RankedCompany> = scored
        .ranking()
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(i, row)| RankedCompany {
            rank: i + 1,
            company: scored.companies()[row].clone(),
            score: scored.scores()[row],
        })
        .collect();
    write_csv(&ctx.path(RANKED), &ranked)?;
    log(&format!("rank: wrote top {k} of {n} {} companies", split.as_str()));
    Ok(ranked)
}

/// Reads back an evaluation report written by [`evaluate_runs`].
pub fn read_eval_report(ctx: &Context, kind: ModelKind, seed: u64) -> CliResult<EvalReport> {
    read_artifact(&ctx.run_dir(kind, seed).join("eval_report.json"))
}

fn log(line: &str) {
    eprintln!("{line}");
}

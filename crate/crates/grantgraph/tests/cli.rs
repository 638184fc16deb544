use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use grantgraph::commands::{self, Context};
use grantgraph::config::{parse_models, RunConfig};
use grantgraph::formats::{read_checkpoint, read_graph};
use grantgraph::io::file_hash;
use grantgraph::CliError;
use grantgraph_core::labels::Split;
use grantgraph_core::model::{ModelConfig, ModelKind};

fn small_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.synth.n_companies = 300;
    cfg.synth.seed = 5;
    cfg.model = ModelConfig {
        hidden_dim: 8,
        heads: 2,
        classifier_hidden: 4,
        ..ModelConfig::default()
    };
    cfg.train.max_epochs = 6;
    cfg.train.warmup_epochs = 2;
    cfg.train.seeds = vec![1, 2];
    cfg.eval.ks = vec![5, 100_000];
    cfg
}

fn run_pipeline(dir: &Path, cfg: RunConfig) -> Context {
    let ctx = Context::new(cfg, dir).unwrap();
    commands::synth(&ctx).unwrap();
    commands::ingest(&ctx, &ctx.path(commands::RAW)).unwrap();
    commands::labels(&ctx, &ctx.path(commands::CLEAN)).unwrap();
    commands::build_graphs(&ctx, &ctx.path(commands::CLEAN)).unwrap();
    commands::train(&ctx, &ModelKind::ALL).unwrap();
    commands::evaluate_runs(&ctx, &ModelKind::ALL).unwrap();
    let ckpt = ctx.run_dir(ModelKind::Hgt, 1).join("checkpoint.json");
    commands::rank(&ctx, &ckpt, Split::Test, 5).unwrap();
    ctx
}

fn hashes(root: &Path) -> BTreeMap<PathBuf, String> {
    fn walk(dir: &Path, root: &Path, out: &mut BTreeMap<PathBuf, String>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(&path, root, out);
            } else if path.file_name().unwrap() != "timing.json" {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), file_hash(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

#[test]
fn example_config_matches_defaults() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../config/example.toml");
    let cfg = RunConfig::load(&path).unwrap();
    assert_eq!(cfg, RunConfig::default());
    assert_eq!(cfg.hash(), RunConfig::default().hash());
    assert_eq!(cfg.hash().len(), 64);
}

#[test]
fn bad_configs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "[train]\nlr = 1e-3\n[mystery]\nx = 1\n").unwrap();
    let err = RunConfig::load(&path).unwrap_err();
    assert_eq!(err.exit_code(), 5);

    std::fs::write(&path, "[horizon]\ntrain_end = 2030\n").unwrap();
    let err = RunConfig::load(&path).unwrap_err();
    assert_eq!((err.exit_code(), err.code()), (5, "invalid_config"));

    let err = RunConfig::load(&dir.path().join("absent.toml")).unwrap_err();
    assert_eq!(err.exit_code(), 3);

    assert_eq!(parse_models("all").unwrap(), ModelKind::ALL.to_vec());
    assert_eq!(parse_models("mlp, hgt,mlp").unwrap(), vec![ModelKind::Mlp, ModelKind::Hgt]);
    assert!(parse_models("gcn").is_err());
}

#[test]
fn pipeline_writes_every_artifact_and_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ctx = run_pipeline(a.path(), small_config());
    run_pipeline(b.path(), small_config());

    for name in ["raw.csv", "truth.json", "clean.csv", "ingest_report.json", "labels.csv", "labels_summary.json"] {
        assert!(ctx.path(name).exists(), "{name}");
    }
    for name in ["summary.csv", "summary.json", "ranked.csv"] {
        assert!(ctx.path(name).exists(), "{name}");
    }
    for kind in ModelKind::ALL {
        for seed in [1, 2] {
            let dir = ctx.run_dir(kind, seed);
            for name in ["checkpoint.json", "train_report.json", "timing.json", "eval_report.json"] {
                assert!(dir.join(name).exists(), "{kind:?} {seed} {name}");
            }
        }
    }

    let ha = hashes(a.path());
    assert!(ha.len() > 30);
    assert_eq!(ha, hashes(b.path()));

    // A cutoff larger than the test split is skipped, not fatal.
    let report = commands::read_eval_report(&ctx, ModelKind::Mlp, 2).unwrap();
    assert_eq!(report.skipped_k, vec![100_000]);
    assert!(report.precision_at.contains_key(&5));

    let summary = std::fs::read_to_string(ctx.path("summary.csv")).unwrap();
    let mut lines = summary.lines();
    assert!(lines.next().unwrap().starts_with("model,runs,auprc_mean,auprc_std,auroc_mean"));
    assert_eq!(lines.count(), 3);

    let ranked = std::fs::read_to_string(ctx.path("ranked.csv")).unwrap();
    assert_eq!(ranked.lines().next(), Some("rank,company,score"));
    assert_eq!(ranked.lines().count(), 6);
}

#[test]
fn graphs_and_checkpoints_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ctx = Context::new(small_config(), dir.path()).unwrap();
    commands::synth(&ctx).unwrap();
    commands::ingest(&ctx, &ctx.path(commands::RAW)).unwrap();
    commands::labels(&ctx, &ctx.path(commands::CLEAN)).unwrap();
    commands::build_graphs(&ctx, &ctx.path(commands::CLEAN)).unwrap();

    let awards = grantgraph::io::read_csv(&ctx.path(commands::CLEAN)).unwrap();
    let prepared = grantgraph_core::pipeline::prepare(&awards, &ctx.cfg.pipeline()).unwrap();
    let (graph, manifest) = read_graph(&ctx.graph_dir(Split::Val)).unwrap();
    assert_eq!(graph, prepared.val.graph);
    assert_eq!(manifest.spec, prepared.val.spec);
    assert_eq!(manifest.log, prepared.val.log);

    commands::train(&ctx, &[ModelKind::Mlp]).unwrap();
    let path = ctx.run_dir(ModelKind::Mlp, 1).join("checkpoint.json");
    let ckpt = read_checkpoint(&path).unwrap();
    assert_eq!(ckpt.model, ModelKind::Mlp);
    assert!(ckpt.params.buffers().count() > 0);

    // Truncated tensor data is a schema error.
    let text = std::fs::read_to_string(&path).unwrap();
    let mut json: serde_json::Value = serde_json::from_str(&text).unwrap();
    json["params"]["params"]["head.out.bias"]["data"] = serde_json::json!([0.0]);
    std::fs::write(&path, json.to_string()).unwrap();
    let err = read_checkpoint(&path).unwrap_err();
    assert_eq!(err.exit_code(), 4, "{err}");
}

#[test]
fn domain_and_io_errors_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ctx = run_pipeline(dir.path(), small_config());
    let ckpt = ctx.run_dir(ModelKind::Rgcn, 2).join("checkpoint.json");
    let err = commands::rank(&ctx, &ckpt, Split::Test, 1_000_000).unwrap_err();
    assert_eq!((err.code(), err.exit_code()), ("k_exceeds_n", 6));

    let err = commands::ingest(&ctx, &dir.path().join("nope.csv")).unwrap_err();
    assert!(matches!(err, CliError::MissingFile { .. }));
    assert_eq!(err.exit_code(), 3);

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "name,dollars\nacme,5\n").unwrap();
    assert_eq!(commands::ingest(&ctx, &bad).unwrap_err().exit_code(), 4);
}

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_grantgraph"))
}

#[test]
fn binary_reports_errors_as_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = binary()
        .args(["ingest", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8(out.stderr).unwrap();
    let report: serde_json::Value = serde_json::from_str(stderr.lines().last().unwrap()).unwrap();
    assert_eq!(report["error"], "missing_file");
    assert_eq!(report["exit_code"], 3);

    let out = binary().args(["train", "--models", "transformer"]).output().unwrap();
    assert_eq!(out.status.code(), Some(5));

    let help = binary().arg("--help").output().unwrap();
    assert!(help.status.success());
    let text = String::from_utf8(help.stdout).unwrap();
    for sub in ["synth", "ingest", "build-graph", "labels", "train", "evaluate", "rank"] {
        assert!(text.contains(sub), "{sub}");
    }
}

#[test]
fn binary_runs_stages_with_a_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.toml");
    std::fs::write(
        &cfg_path,
        "[synth]\nn_companies = 300\nseed = 5\n\
         [model]\nhidden_dim = 8\nheads = 2\nclassifier_hidden = 4\n\
         [train]\nmax_epochs = 4\nwarmup_epochs = 1\n\
         [eval]\nks = [5]\n",
    )
    .unwrap();
    let work = dir.path().join("work");
    let stage = |args: &[&str]| {
        let out = binary()
            .args(args)
            .arg("--config")
            .arg(&cfg_path)
            .arg("--out")
            .arg(&work)
            .output()
            .unwrap();
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    };
    stage(&["synth"]);
    stage(&["ingest"]);
    stage(&["labels"]);
    stage(&["build-graph"]);
    stage(&["train", "--models", "mlp,rgcn", "--seed", "3"]);
    stage(&["evaluate", "--models", "mlp,rgcn", "--seed", "3"]);
    stage(&["rank", "--models", "rgcn", "--seed", "3", "--k", "5"]);
    assert!(work.join("runs/rgcn/seed_3/eval_report.json").exists());
    assert_eq!(std::fs::read_to_string(work.join("ranked.csv")).unwrap().lines().count(), 6);

    let out = binary()
        .args(["rank", "--models", "rgcn", "--seed", "3", "--k", "100000", "--out"])
        .arg(&work)
        .arg("--config")
        .arg(&cfg_path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(6));
    assert!(String::from_utf8_lossy(&out.stderr).contains("k_exceeds_n"));
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use bicorec::evaluation::{
    paired_ttest, CutoffMetrics, GroupBlock, GroupedMetrics, MetricBlock, MetricReport, RunMetadata,
};
use bicorec::experiments::{train_and_evaluate, Dataset, ExperimentConfig, Variant};

fn bicorec(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bicorec"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

const SMALL: &str = "\
data.interactions = data/interactions.tsv
data.aux = data/aux.tsv
data.max_len = 12
synth.users = 60
synth.items = 30
synth.min_len = 8
synth.max_len = 14
synth.aux_dim = 4
net.d = 8
net.dropout_hidden = 0.1
net.dropout_attn = 0.1
train.max_epochs = 2
train.batch_size = 16
train.learning_rate = 0.01
eval.cutoffs = 5,10
eval.window = 6
run.seeds = 3
run.out = run
";

fn small_workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.conf"), SMALL).unwrap();
    ok(&bicorec(dir.path(), &["synth", "--config", "c.conf"]));
    dir
}

#[test]
fn prepare_writes_stats() {
    let dir = small_workspace();
    let out = bicorec(dir.path(), &["prepare", "--config", "c.conf"]);
    ok(&out);
    let stats: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("run/stats.json")).unwrap()).unwrap();
    assert_eq!(stats["users"], 60);
    assert!(dir.path().join("run/config.echo").exists());
}

#[test]
fn analyze_writes_ratio_curve_and_cache() {
    let dir = small_workspace();
    ok(&bicorec(dir.path(), &["analyze", "--config", "c.conf", "--out", "a"]));
    let csv = fs::read_to_string(dir.path().join("a/curves/ratio.csv")).unwrap();
    assert!(csv.starts_with("position,"));
    assert!(dir.path().join("a/partition.json").exists());
    let cached = fs::read_dir(dir.path().join("a")).unwrap().any(|e| {
        let name = e.unwrap().file_name();
        name.to_string_lossy().starts_with("popularity-")
    });
    assert!(cached);
}

#[test]
fn unknown_flag_exits_with_usage() {
    let dir = tempfile::tempdir().unwrap();
    let out = bicorec(dir.path(), &["train", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn failures_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let out = bicorec(dir.path(), &["prepare", "--config", "missing.conf"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.conf"));

    fs::write(dir.path().join("bad.conf"), "net.dd = 3\n").unwrap();
    let out = bicorec(dir.path(), &["prepare", "--config", "bad.conf"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("net.dd"));
}

#[test]
fn train_then_evaluate_matches_in_process() {
    let dir = small_workspace();
    ok(&bicorec(dir.path(), &["train", "--config", "c.conf", "--threads", "2"]));
    ok(&bicorec(dir.path(), &["evaluate", "--config", "c.conf"]));
    let first = fs::read(dir.path().join("run/metrics.json")).unwrap();
    let pr = fs::read(dir.path().join("run/curves/pr.csv")).unwrap();

    let cfg = ExperimentConfig::load(dir.path().join("c.conf")).unwrap();
    let ds = Dataset::load(&cfg).unwrap();
    let (_, eval) = train_and_evaluate(&ds, &cfg, 3, "bicorec", true).unwrap();
    assert_eq!(String::from_utf8(first.clone()).unwrap(), eval.report.to_json());
    assert_eq!(String::from_utf8(pr).unwrap(), bicorec::evaluation::pr_curve_csv(&eval.pr_curve));

    // a second run in a fresh directory is bytewise identical
    ok(&bicorec(dir.path(), &["train", "--config", "c.conf", "--out", "again"]));
    ok(&bicorec(dir.path(), &["evaluate", "--config", "c.conf", "--out", "again"]));
    assert_eq!(first, fs::read(dir.path().join("again/metrics.json")).unwrap());
    assert_eq!(
        fs::read(dir.path().join("run/checkpoint.bin")).unwrap(),
        fs::read(dir.path().join("again/checkpoint.bin")).unwrap()
    );
}

#[test]
fn baselines_evaluate_without_checkpoint() {
    let dir = small_workspace();
    for model in ["poprec", "random"] {
        let out = bicorec(dir.path(), &["evaluate", "--config", "c.conf", "--model", model, "--out", model]);
        ok(&out);
        let report: MetricReport = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(report.metadata.model, model);
    }
    let out = bicorec(dir.path(), &["evaluate", "--config", "c.conf", "--model", "knn"]);
    assert_eq!(out.status.code(), Some(1));
}

fn report_with(ndcg_overall: f64, ndcg_niche: f64) -> MetricReport {
    let block = |ndcg| MetricBlock {
        users: 4,
        mrr: 0.1,
        cutoffs: vec![CutoffMetrics {
            n: 10,
            recall: 0.2,
            ndcg,
            diversity: 0.5,
            novelty: 0.5,
            serendipity: 0.0,
        }],
    };
    MetricReport {
        metadata: RunMetadata::default(),
        overall: block(ndcg_overall),
        groups: GroupedMetrics {
            popular: GroupBlock {
                users: 2,
                metrics: Some(block(ndcg_overall)),
            },
            niche: GroupBlock {
                users: 2,
                metrics: Some(block(ndcg_niche)),
            },
        },
    }
}

#[test]
fn report_pairs_seeds_and_matches_ttest() {
    let dir = tempfile::tempdir().unwrap();
    let full = [0.30, 0.28, 0.33, 0.31, 0.29, 0.35, 0.27, 0.32, 0.30, 0.34];
    let ablated = [0.25, 0.29, 0.30, 0.26, 0.27, 0.31, 0.28, 0.30, 0.24, 0.29];
    for seed in 0..10 {
        for (variant, v) in [(Variant::Full, full[seed]), (Variant::NoCoattention, ablated[seed])] {
            let path = dir.path().join(format!("runs/seed-{seed}/{}/metrics.json", variant.name()));
            fs::create_dir_all(path.parent().unwrap()).unwrap();
            fs::write(path, report_with(v, v / 2.0).to_json()).unwrap();
        }
    }
    let out = bicorec(dir.path(), &["report", "--out", "runs"]);
    ok(&out);
    let rows: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 2);
    let expect = paired_ttest(&full, &ablated, None).unwrap();
    let overall = &rows[0];
    assert_eq!(overall["group"], "overall");
    assert_eq!(overall["variant"], "no-coattention");
    assert!((overall["ttest"]["t"].as_f64().unwrap() - expect.t).abs() < 1e-12);
    assert!((overall["ttest"]["p"].as_f64().unwrap() - expect.p).abs() < 1e-12);
    assert_eq!(overall["ttest"]["dof"].as_f64().unwrap(), 9.0);
    let wins = full.iter().zip(&ablated).filter(|(a, b)| a >= b).count();
    assert_eq!(overall["baseline_wins"].as_u64().unwrap() as usize, wins);
    assert!(dir.path().join("runs/report.json").exists());

    // dof override through a config file
    fs::write(dir.path().join("c.conf"), "eval.dof = 16\n").unwrap();
    let out = bicorec(dir.path(), &["report", "--config", "c.conf", "--out", "runs"]);
    ok(&out);
    let rows: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let expect = paired_ttest(&full, &ablated, Some(16.0)).unwrap();
    assert!((rows[0]["ttest"]["p"].as_f64().unwrap() - expect.p).abs() < 1e-12);
}

#[test]
fn overrides_apply_and_must_be_known() {
    let dir = small_workspace();
    ok(&bicorec(dir.path(), &["prepare", "--config", "c.conf", "--override", "data.max_len=8", "--override", "net.d=4"]));
    let echo = fs::read_to_string(dir.path().join("run/config.echo")).unwrap();
    assert!(echo.contains("data.max_len = 8"));
    assert!(echo.contains("net.d = 4"));
    let out = bicorec(dir.path(), &["prepare", "--config", "c.conf", "--override", "net.nope=1"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn ablate_writes_every_variant() {
    let dir = small_workspace();
    let out = bicorec(dir.path(), &["ablate", "--config", "c.conf", "--override", "train.max_epochs=1"]);
    ok(&out);
    for v in Variant::ALL {
        let dir = dir.path().join(format!("run/seed-3/{}", v.name()));
        assert!(dir.join("metrics.json").exists(), "{}", v.name());
        assert!(dir.join("config.echo").exists());
    }
}

//! End-to-end runs: data preparation, analysis, training, evaluation,
//! ablations and cross-seed reports, with the run-directory layout
//! `config.echo`, `stats.json`, `train.csv`, `checkpoint.bin`,
//! `metrics.json`, `curves/*.csv`.

use std::fs::{self, File};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::baselines::{PopRec, RandomRec};
use super::config::ExperimentConfig;
use super::synthetic::{generate_synthetic, interactions_tsv, synthetic_aux_tsv, write_text};
use crate::corpus::{
    build_corpus, concat_modalities, corpus_stats, leave_one_out, load_interactions, parse_aux_modality, AuxTable,
    Corpus, CorpusStats, Interaction, SplitView,
};
use crate::error::{Error, Result};
use crate::evaluation::{
    catalog_probabilities, paired_ttest, pr_curve_csv, precision_recall_curve, rank_users, sliding_window_eval,
    FairnessContext, HeldOut, MetricReport, PrPoint, RunMetadata, Scorer, TTest, WindowCurve,
};
use crate::network::NetworkParameters;
use crate::popularity::{compute_popularity_scores, partition_items, ratio_curve, ItemPartition, RatioCurve};
use crate::training::{decode_state, encode_state, train, NetworkScorer, StepLog, TrainOutcome, TrainingData};

/// Everything derived from the interaction log before training.
pub struct Dataset {
    pub corpus: Corpus,
    pub split: SplitView,
    pub aux: AuxTable,
    /// Popular/niche items over the (truncated) corpus sequences.
    pub partition: ItemPartition,
    pub data: TrainingData,
}

impl Dataset {
    /// Builds from in-memory interactions and aux modality texts (TSV, in declaration order).
    pub fn build(interactions: &[Interaction], aux_modalities: &[String], cfg: &ExperimentConfig) -> Result<Self> {
        let corpus = build_corpus(interactions, cfg.net.n, cfg.data.min_user_len)?;
        let aux = if aux_modalities.is_empty() {
            AuxTable::zeros(corpus.num_items(), 0)
        } else {
            let parts = aux_modalities
                .iter()
                .map(|t| parse_aux_modality(&corpus.catalog, t))
                .collect::<Result<Vec<_>>>()?;
            concat_modalities(&corpus.catalog, parts)?
        };
        let split = leave_one_out(&corpus.sequences)?;
        let partition = partition_items(
            corpus.sequences.iter().map(|s| s.real_items()),
            corpus.num_items(),
            cfg.data.head_fraction,
        )?;
        let data = TrainingData::from_split(&split, corpus.num_items())?;
        Ok(Self {
            corpus,
            split,
            aux,
            partition,
            data,
        })
    }

    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.check_paths()?;
        let interactions = load_interactions(cfg.data.interactions.as_ref().expect("checked"))?;
        let aux = cfg
            .data
            .aux
            .iter()
            .map(|p| fs::read_to_string(p).map_err(|e| Error::io(p, e)))
            .collect::<Result<Vec<_>>>()?;
        Self::build(&interactions, &aux, cfg)
    }

    pub fn stats(&self) -> Result<CorpusStats> {
        corpus_stats(&self.corpus)
    }

    pub fn ratio_curve(&self) -> RatioCurve {
        ratio_curve(
            self.corpus.sequences.iter().map(|s| s.real_items()),
            &self.partition,
            self.corpus.max_len,
        )
    }

    pub fn fairness_context(&self) -> FairnessContext<'_> {
        FairnessContext::from_training(&self.aux, &self.split.training_sequences(), self.corpus.num_items())
    }
}

/// Metrics and curves of one evaluated model.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: MetricReport,
    pub pr_curve: Vec<PrPoint>,
    pub window_curve: Option<WindowCurve>,
}

impl Evaluation {
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_text(dir.join("metrics.json"), &self.report.to_json())?;
        if !self.pr_curve.is_empty() {
            write_text(dir.join("curves/pr.csv"), &pr_curve_csv(&self.pr_curve))?;
        }
        if let Some(w) = &self.window_curve {
            write_text(dir.join("curves/window.csv"), &w.to_csv())?;
        }
        Ok(())
    }
}

/// Test-set evaluation. `curves` adds the precision-recall and sliding-window curves.
pub fn evaluate_scorer(
    ds: &Dataset,
    cfg: &ExperimentConfig,
    scorer: &dyn Scorer,
    metadata: RunMetadata,
    curves: bool,
) -> Result<Evaluation> {
    let options = cfg.eval.options();
    let evals = rank_users(scorer, &ds.split, HeldOut::Test, &options)?;
    let ctx = ds.fairness_context();
    let report = MetricReport::build(metadata, &evals, &ds.corpus.sequences, &ds.partition, &ctx, &options.cutoffs)?;
    if !curves {
        return Ok(Evaluation {
            report,
            pr_curve: Vec::new(),
            window_curve: None,
        });
    }
    let probabilities: Vec<Vec<f64>> = ds
        .split
        .users
        .par_iter()
        .map(|u| Ok(catalog_probabilities(&scorer.scores(u.train.user_index, &u.test_input())?)))
        .collect::<Result<_>>()?;
    let targets: Vec<usize> = ds.split.users.iter().map(|u| u.test).collect();
    let pr_curve = precision_recall_curve(&probabilities, &targets)?;
    let window_curve = if cfg.eval.window <= cfg.net.n {
        Some(sliding_window_eval(scorer, &ds.corpus.histories, cfg.eval.window, cfg.net.n)?)
    } else {
        None
    };
    Ok(Evaluation {
        report,
        pr_curve,
        window_curve,
    })
}

pub fn network_scorer<'a>(ds: &'a Dataset, cfg: &'a ExperimentConfig, networks: &'a [NetworkParameters]) -> NetworkScorer<'a> {
    let params = if cfg.eval.ensemble { networks.iter().collect() } else { vec![&networks[0]] };
    NetworkScorer {
        config: &cfg.net,
        params,
        aux: &ds.aux,
        idf: &ds.data.idf,
    }
}

pub fn metadata(cfg: &ExperimentConfig, model: &str, seed: u64) -> RunMetadata {
    RunMetadata {
        model: model.to_string(),
        seed,
        config_hash: cfg.hash(),
        held_out: "test".into(),
    }
}

/// Trains with run seed `seed`, streaming log rows to `on_log`.
pub fn train_model(
    ds: &Dataset,
    cfg: &ExperimentConfig,
    seed: u64,
    on_log: &mut dyn FnMut(&StepLog) -> Result<()>,
) -> Result<TrainOutcome> {
    train(&ds.data, &ds.aux, &cfg.net, &cfg.train.for_seed(seed), on_log)
}

/// Train then evaluate in one process.
pub fn train_and_evaluate(ds: &Dataset, cfg: &ExperimentConfig, seed: u64, model: &str, curves: bool) -> Result<(TrainOutcome, Evaluation)> {
    let outcome = train_model(ds, cfg, seed, &mut |_| Ok(()))?;
    let scorer = network_scorer(ds, cfg, &outcome.state.best);
    let eval = evaluate_scorer(ds, cfg, &scorer, metadata(cfg, model, seed), curves)?;
    Ok((outcome, eval))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_header(cfg: &ExperimentConfig, ds: &Dataset, out: &Path) -> Result<CorpusStats> {
    ensure_dir(out)?;
    write_text(out.join("config.echo"), &cfg.echo())?;
    let stats = ds.stats()?;
    write_text(out.join("stats.json"), &serde_json::to_string_pretty(&stats).expect("stats serialise"))?;
    Ok(stats)
}

/// `prepare`: corpus, split and statistics.
pub fn run_prepare(cfg: &ExperimentConfig, out: &Path) -> Result<CorpusStats> {
    let ds = Dataset::load(cfg)?;
    write_header(cfg, &ds, out)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct PartitionSummary {
    head_fraction: f64,
    popular: Vec<String>,
    niche: Vec<String>,
    popular_interactions: usize,
    niche_interactions: usize,
}

/// `analyze`: popularity-score cache, item partition and `curves/ratio.csv`.
pub fn run_analyze(cfg: &ExperimentConfig, out: &Path) -> Result<RatioCurve> {
    let ds = Dataset::load(cfg)?;
    write_header(cfg, &ds, out)?;
    let train_seqs = ds.split.training_sequences();
    compute_popularity_scores(&train_seqs, ds.corpus.num_items()).write_cache(out, &train_seqs)?;
    let ids = |items: &[usize]| -> Vec<String> {
        items
            .iter()
            .map(|&i| ds.corpus.catalog.item_id(i).unwrap_or_default().to_string())
            .collect()
    };
    let count = |items: &[usize]| items.iter().map(|&i| ds.partition.frequency[i]).sum();
    let summary = PartitionSummary {
        head_fraction: cfg.data.head_fraction,
        popular: ids(&ds.partition.popular),
        niche: ids(&ds.partition.niche),
        popular_interactions: count(&ds.partition.popular),
        niche_interactions: count(&ds.partition.niche),
    };
    write_text(out.join("partition.json"), &serde_json::to_string_pretty(&summary).expect("serialises"))?;
    let curve = ds.ratio_curve();
    write_text(out.join("curves/ratio.csv"), &curve.to_csv())?;
    Ok(curve)
}

/// `train`: trains with `seed`, appending to `train.csv` and writing `checkpoint.bin`.
pub fn run_train(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<TrainOutcome> {
    let ds = Dataset::load(cfg)?;
    train_in_dir(&ds, cfg, seed, out)
}

fn train_in_dir(ds: &Dataset, cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<TrainOutcome> {
    write_header(cfg, ds, out)?;
    let log_path = out.join("train.csv");
    let mut log = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    writeln!(log, "{}", StepLog::CSV_HEADER).map_err(|e| Error::io(&log_path, e))?;
    let outcome = train_model(ds, cfg, seed, &mut |row| {
        writeln!(log, "{}", row.csv_row()).map_err(|e| Error::io(&log_path, e))
    })?;
    let ck = out.join("checkpoint.bin");
    fs::write(&ck, encode_state(&outcome.state, &cfg.net)).map_err(|e| Error::io(&ck, e))?;
    Ok(outcome)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Model {
    BiCoRec,
    PopRec,
    Random,
}

impl std::str::FromStr for Model {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bicorec" => Ok(Self::BiCoRec),
            "poprec" => Ok(Self::PopRec),
            "random" => Ok(Self::Random),
            _ => Err(Error::Config(format!("unknown model `{s}` (bicorec, poprec, random)"))),
        }
    }
}

/// `evaluate`: scores the test split and writes `metrics.json` and curves.
/// The neural model is read from `out/checkpoint.bin`.
pub fn run_evaluate(cfg: &ExperimentConfig, seed: u64, model: Model, out: &Path) -> Result<Evaluation> {
    let ds = Dataset::load(cfg)?;
    let eval = evaluate_in_dir(&ds, cfg, seed, model, out)?;
    Ok(eval)
}

fn evaluate_in_dir(ds: &Dataset, cfg: &ExperimentConfig, seed: u64, model: Model, out: &Path) -> Result<Evaluation> {
    ensure_dir(out)?;
    let eval = match model {
        Model::BiCoRec => {
            let ck = out.join("checkpoint.bin");
            let bytes = fs::read(&ck).map_err(|e| Error::io(&ck, e))?;
            let (state, net) = decode_state(&bytes)?;
            if net != cfg.net {
                return Err(Error::Checkpoint("checkpoint network config differs from the run config".into()));
            }
            let scorer = network_scorer(ds, cfg, &state.best);
            evaluate_scorer(ds, cfg, &scorer, metadata(cfg, "bicorec", seed), true)?
        }
        Model::PopRec => {
            let scorer = PopRec::fit(&ds.split.training_sequences(), ds.corpus.num_items());
            evaluate_scorer(ds, cfg, &scorer, metadata(cfg, "poprec", seed), true)?
        }
        Model::Random => {
            let scorer = RandomRec {
                seed,
                num_items: ds.corpus.num_items(),
            };
            evaluate_scorer(ds, cfg, &scorer, metadata(cfg, "random", seed), true)?
        }
    };
    eval.write(out)?;
    Ok(eval)
}

/// One-component-removed variants of the full model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Full,
    NoCrossPseudo,
    NoAux,
    NoCoattention,
    NoUserEmbedding,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::NoCrossPseudo,
        Variant::NoAux,
        Variant::NoCoattention,
        Variant::NoUserEmbedding,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoCrossPseudo => "no-cross-pseudo",
            Variant::NoAux => "no-aux",
            Variant::NoCoattention => "no-coattention",
            Variant::NoUserEmbedding => "no-user-embedding",
        }
    }

    /// `cfg` with this variant's single flag switched off.
    pub fn apply(self, cfg: &ExperimentConfig) -> ExperimentConfig {
        let mut c = cfg.clone();
        match self {
            Variant::Full => {}
            Variant::NoCrossPseudo => c.train.cross_pseudo = false,
            Variant::NoAux => c.net.use_aux = false,
            Variant::NoCoattention => c.net.use_coattention = false,
            Variant::NoUserEmbedding => c.net.use_popularity_bias = false,
        }
        c
    }
}

/// `ablate`: trains and evaluates every variant with `seed` under `out/<variant>/`.
pub fn run_ablation(ds: &Dataset, cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<Vec<(Variant, Evaluation)>> {
    Variant::ALL
        .iter()
        .map(|&v| {
            let vcfg = v.apply(cfg);
            let dir = out.join(v.name());
            let wrap = |e: Error| Error::Variant {
                variant: v.name().to_string(),
                source: Box::new(e),
            };
            train_in_dir(ds, &vcfg, seed, &dir).map_err(wrap)?;
            let mut eval = evaluate_in_dir(ds, &vcfg, seed, Model::BiCoRec, &dir).map_err(wrap)?;
            eval.report.metadata.model = v.name().to_string();
            eval.write(&dir).map_err(wrap)?;
            Ok((v, eval))
        })
        .collect()
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

/// Paired comparison of two models over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline: String,
    pub variant: String,
    pub metric: String,
    pub group: String,
    pub seeds: Vec<u64>,
    pub baseline_values: Vec<f64>,
    pub variant_values: Vec<f64>,
    /// Seeds where the baseline is at least as good as the variant.
    pub baseline_wins: usize,
    pub ttest: Option<TTest>,
}

/// NDCG@`n` of a report for `group` (`overall`, `popular` or `niche`); empty groups give 0.
pub fn report_ndcg(report: &MetricReport, group: &str, n: usize) -> Result<f64> {
    let block = match group {
        "overall" => Some(&report.overall),
        "popular" => report.groups.popular.metrics.as_ref(),
        "niche" => report.groups.niche.metrics.as_ref(),
        _ => return Err(Error::Config(format!("unknown group `{group}`"))),
    };
    match block {
        None => Ok(0.0),
        Some(b) => b
            .at(n)
            .map(|c| c.ndcg)
            .ok_or_else(|| Error::Config(format!("cutoff {n} was not evaluated"))),
    }
}

/// Pairs `baseline` against `variant` NDCG@`n` over `seeds`.
pub fn compare(
    baseline: (&str, &[MetricReport]),
    variant: (&str, &[MetricReport]),
    seeds: &[u64],
    group: &str,
    n: usize,
    dof: Option<f64>,
) -> Result<Comparison> {
    let a = baseline.1.iter().map(|r| report_ndcg(r, group, n)).collect::<Result<Vec<_>>>()?;
    let b = variant.1.iter().map(|r| report_ndcg(r, group, n)).collect::<Result<Vec<_>>>()?;
    let wins = a.iter().zip(&b).filter(|(x, y)| x >= y).count();
    let ttest = if a.len() >= 2 { Some(paired_ttest(&a, &b, dof)?) } else { None };
    Ok(Comparison {
        baseline: baseline.0.to_string(),
        variant: variant.0.to_string(),
        metric: format!("ndcg@{n}"),
        group: group.to_string(),
        seeds: seeds.to_vec(),
        baseline_values: a,
        variant_values: b,
        baseline_wins: wins,
        ttest,
    })
}

fn read_report(path: &Path) -> Result<MetricReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// `report`: reads `out/seed-*/<variant>/metrics.json` and compares the full
/// model with each other variant on overall and niche-group NDCG@`n`.
pub fn run_report(out: &Path, n: usize, dof: Option<f64>) -> Result<Vec<Comparison>> {
    let mut seeds: Vec<u64> = fs::read_dir(out)
        .map_err(|e| Error::io(out, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str()?.strip_prefix("seed-")?.parse().ok())
        .collect();
    seeds.sort_unstable();
    if seeds.is_empty() {
        return Err(Error::Config(format!("no seed-* run directories under {}", out.display())));
    }
    let load = |v: Variant| -> Result<Vec<MetricReport>> {
        seeds
            .iter()
            .map(|&s| read_report(&seed_dir(out, s).join(v.name()).join("metrics.json")))
            .collect()
    };
    let full = load(Variant::Full)?;
    let mut out_rows = Vec::new();
    for v in Variant::ALL.into_iter().skip(1) {
        let reports = match load(v) {
            Ok(r) => r,
            Err(Error::Io { .. }) => continue,
            Err(e) => return Err(e),
        };
        for group in ["overall", "niche"] {
            out_rows.push(compare(("full", &full), (v.name(), &reports), &seeds, group, n, dof)?);
        }
    }
    write_text(out.join("report.json"), &serde_json::to_string_pretty(&out_rows).expect("serialises"))?;
    Ok(out_rows)
}

/// `synth`: writes the drift corpus (and aux file) to the config's data paths.
pub fn run_synth(cfg: &ExperimentConfig) -> Result<(PathBuf, Option<PathBuf>)> {
    let path = cfg
        .data
        .interactions
        .clone()
        .ok_or_else(|| Error::Config("data.interactions must name the output file".into()))?;
    write_text(&path, &interactions_tsv(&generate_synthetic(&cfg.synth)?))?;
    let aux = cfg.data.aux.first().cloned();
    if let Some(a) = &aux {
        write_text(a, &synthetic_aux_tsv(&cfg.synth))?;
    }
    Ok((path, aux))
}

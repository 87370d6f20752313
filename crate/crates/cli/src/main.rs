use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use bicorec::experiments::{
    run_ablation, run_analyze, run_evaluate, run_prepare, run_report, run_synth, run_train, seed_dir, Dataset,
    ExperimentConfig, Model,
};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bicorec", version, about = "Popularity-aware sequential recommendation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (`key = value` lines).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Run seed; defaults to the first of `run.seeds`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to `run.out`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads for evaluation and gradient accumulation.
    #[arg(long)]
    threads: Option<usize>,
    /// Config override, e.g. `--override net.d=32`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Build corpus and splits, write config.echo and stats.json.
    Prepare(Common),
    /// Popularity scores, item partition and curves/ratio.csv.
    Analyze(Common),
    /// Train with one seed, writing train.csv and checkpoint.bin.
    Train(Common),
    /// Evaluate a checkpoint or a baseline on the test split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// bicorec, poprec or random.
        #[arg(long, default_value = "bicorec")]
        model: String,
    },
    /// Train and evaluate the full model and every single-component ablation.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Run every seed in `run.seeds` instead of one.
        #[arg(long)]
        all_seeds: bool,
    },
    /// Write the synthetic drift corpus to the config's data paths.
    Synth(Common),
    /// Paired t-tests of the full model against each ablation over seeds.
    Report {
        #[command(flatten)]
        common: Common,
        /// NDCG cutoff to compare.
        #[arg(long, default_value_t = 10)]
        cutoff: usize,
    },
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let path = self.config.as_ref().context("--config is required")?;
        let mut cfg =
            ExperimentConfig::load(path).with_context(|| format!("loading config {}", path.display()))?;
        cfg.apply_overrides(&self.overrides)?;
        Ok(cfg)
    }

    fn seed(&self, cfg: &ExperimentConfig) -> u64 {
        self.seed.unwrap_or(cfg.seeds[0])
    }

    fn out(&self, cfg: Option<&ExperimentConfig>) -> Result<PathBuf> {
        match (&self.out, cfg.and_then(|c| c.out.clone())) {
            (Some(o), _) => Ok(o.clone()),
            (None, Some(o)) => Ok(o),
            _ => bail!("no output directory: pass --out or set run.out"),
        }
    }

    fn init_threads(&self) -> Result<()> {
        if let Some(t) = self.threads {
            if t == 0 {
                bail!("--threads must be positive");
            }
            rayon::ThreadPoolBuilder::new().num_threads(t).build_global()?;
        }
        Ok(())
    }
}

/// Prints to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serialisable")
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare(c) => {
            c.init_threads()?;
            let cfg = c.config()?;
            let out = c.out(Some(&cfg))?;
            let stats = run_prepare(&cfg, &out)?;
            emit(&json(&stats));
        }
        Command::Analyze(c) => {
            c.init_threads()?;
            let cfg = c.config()?;
            let out = c.out(Some(&cfg))?;
            let curve = run_analyze(&cfg, &out)?;
            emit(curve.to_csv().trim_end());
        }
        Command::Train(c) => {
            c.init_threads()?;
            let cfg = c.config()?;
            let out = c.out(Some(&cfg))?;
            let outcome = run_train(&cfg, c.seed(&cfg), &out)?;
            let s = &outcome.state;
            emit(&format!(
                "epochs {}  best epoch {}  best validation ndcg@10 {:.6}",
                s.epoch, s.best_epoch, s.best_val_ndcg10
            ));
        }
        Command::Evaluate { common: c, model } => {
            c.init_threads()?;
            let cfg = c.config()?;
            let out = c.out(Some(&cfg))?;
            let model: Model = model.parse()?;
            let eval = run_evaluate(&cfg, c.seed(&cfg), model, &out)?;
            emit(&eval.report.to_json());
        }
        Command::Ablate { common: c, all_seeds } => {
            c.init_threads()?;
            let cfg = c.config()?;
            let out = c.out(Some(&cfg))?;
            let ds = Dataset::load(&cfg)?;
            let seeds = if all_seeds { cfg.seeds.clone() } else { vec![c.seed(&cfg)] };
            for seed in seeds {
                for (variant, eval) in run_ablation(&ds, &cfg, seed, &seed_dir(&out, seed))? {
                    let ndcg = eval.report.overall.at(10).map(|m| m.ndcg);
                    match ndcg {
                        Some(v) => emit(&format!("seed {seed}  {:<18} ndcg@10 {v:.6}", variant.name())),
                        None => emit(&format!("seed {seed}  {:<18} done", variant.name())),
                    }
                }
            }
        }
        Command::Synth(c) => {
            let cfg = c.config()?;
            let (data, aux) = run_synth(&cfg)?;
            emit(&format!("wrote {}", data.display()));
            if let Some(a) = aux {
                emit(&format!("wrote {}", a.display()));
            }
        }
        Command::Report { common: c, cutoff } => {
            let cfg = c.config.as_ref().map(|_| c.config()).transpose()?;
            let out = c.out(cfg.as_ref())?;
            let dof = cfg.as_ref().and_then(|c| c.eval.dof);
            let rows = run_report(&out, cutoff, dof)?;
            emit(&json(&rows));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

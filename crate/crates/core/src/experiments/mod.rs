//! Experiment harness: configuration, synthetic data, baselines and run orchestration.

mod baselines;
mod config;
mod pipeline;
pub mod synthetic;

pub use baselines::{PopRec, RandomRec};
pub use config::{DataConfig, EvalSettings, ExperimentConfig, TrainSettings};
pub use pipeline::{
    compare, evaluate_scorer, metadata, network_scorer, report_ndcg, run_ablation, run_analyze, run_evaluate,
    run_prepare, run_report, run_synth, run_train, seed_dir, train_and_evaluate, train_model, Comparison, Dataset,
    Evaluation, Model, Variant,
};
pub use synthetic::{generate_synthetic, motif_interactions, SyntheticSpec};

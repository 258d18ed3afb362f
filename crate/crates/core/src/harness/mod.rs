//! Configuration, training, evaluation, experiment tables, checkpoints and
//! the finite-difference report.

mod checkpoint;
mod config;
mod eval;
pub mod gradcheck;
mod model;
mod output;
mod rollout;
mod train;

pub use checkpoint::{Checkpoint, MAGIC, VERSION};
pub use gradcheck::{gradcheck, GradCheck, GradReport, OpCheck};
pub use config::{
    load_config, split_users, stream_rng, stream_seed, ExperimentConfig, Head, History, Preset, SplitRatios,
    UserSplit, Variant,
};
pub use eval::{
    calibrate_threshold, discounted_returns, evaluate, evaluate_policy, mean_attention, EvalMetrics, EvalPolicy,
    ModelPolicy, OraclePolicy, RandomPolicy, RANK_K,
};
pub use model::{Context, FrozenCache, RecModel, Scorer, TapeEncoder};
pub use output::{
    emit_events, emit_results, emit_training, evaluate_checkpoint, hit_positions_csv, loss_curve_csv, parse_results_csv, relevance_diversity_csv, results_csv,
    summary_csv, ResultRow, RESULTS_HEADER,
};
pub use train::{bce_with_logits, init_model, simulate, train, Experience, RunResult, TrainOutput};

use crate::error::Result;

/// Trains and evaluates each variant on seeds `config.seed .. config.seed + seeds`,
/// seed-major.
pub fn run_variants(config: &ExperimentConfig, variants: &[Variant], seeds: u64) -> Result<Vec<RunResult>> {
    let mut out = Vec::new();
    for s in 0..seeds {
        for &v in variants {
            out.push(train(&config.with_seed(config.seed + s).with_variant(v))?.result);
        }
    }
    Ok(out)
}

/// The full model and its three ablations.
pub fn ablate(config: &ExperimentConfig, seeds: u64) -> Result<Vec<RunResult>> {
    run_variants(config, &Variant::ABLATIONS, seeds)
}

/// The full model and the two baselines.
pub fn run_baselines(config: &ExperimentConfig, seeds: u64) -> Result<Vec<RunResult>> {
    run_variants(config, &Variant::BASELINES, seeds)
}

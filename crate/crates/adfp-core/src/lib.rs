//! Keyed green-list fingerprinting for toy language models: hashing,
//! logit perturbations, fingerprinted sampling, student fine-tuning, and
//! statistical detection, plus the experiment pipeline that ties them
//! together.

pub mod config;
pub mod detect;
pub mod error;
pub mod greenlist;
pub mod io;
pub mod markov;
pub mod model;
pub mod perturb;
pub mod pipeline;
pub mod report;
pub mod sampling;
pub mod seeds;
pub mod tokenizer;
pub mod trace;

pub use config::ExperimentConfig;
pub use detect::{
    build_eval_dataset, detect, gtp_closed, gtp_open, log_p_value, p_value, DetectionReport,
    EvalDataset, EvalMode, WeightMode,
};
pub use error::{Error, Result};
pub use greenlist::{context_digest, green_list, mix64, realized_gamma, GreenList, HashKey};
pub use markov::MarkovSource;
pub use model::{Arch, OptimizerKind, ToyLm, TrainConfig, PAD_TOKEN};
pub use perturb::{
    delta_ads, delta_ads_exact, delta_rgl, fingerprinted_sample_step, generate_trace,
    gram_matrix, per_step_loss, rgl_sample_step, step_distributions, Method, PerturbationScore,
    ScoreKind, StepDistributions, StrengthConfig, LOG_PROB_FLOOR, ORACLE_MAX_VOCAB,
};
pub use pipeline::{
    build_eval_sets, median, mix_partial, null_trials, partial_experiment, reencode,
    roc_experiment, roc_from_scores, run_stage1, run_stage2, run_stage3, run_trial,
    sweep_strength, train_student, BudgetPoint, Corpora, EvalSets, ModeReport, PartialOutcome,
    RocOutcome, RocResult, SweepOutcome, TradeoffPoint, TrialOutcome, World,
};
pub use report::{rows_from_outcome, rows_from_outcomes, RunManifest, RunSummary, TrialRow};
pub use sampling::{categorical, kl_divergence, sample_token, softmax_temp, ProbVector};
pub use seeds::derive_seed;
pub use tokenizer::{Tokenizer, TokenizerKind, PAD_SYMBOL};
pub use trace::{StepRecord, Trace};

//! Experiment configuration: one flat struct covering world setup,
//! fingerprinting strength, training, and detection, loadable from JSON
//! with per-field overrides.

use serde::{Deserialize, Serialize};
use std::path::Path;
use std::str::FromStr;

use crate::detect::{EvalMode, WeightMode};
use crate::error::{Error, Result};
use crate::model::{Arch, OptimizerKind, TrainConfig};
use crate::perturb::{Method, StrengthConfig};
use crate::tokenizer::TokenizerKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root seed; every stream below derives from it.
    pub seed: u64,

    // fingerprint
    pub w: usize,
    pub gamma: f64,
    pub tau: f64,
    pub top_p: f64,
    pub method: Method,
    /// delta for rgl, lambda for ads.
    pub strength: f64,
    /// Stage-3 sweep grid, in rgl delta units.
    pub delta_grid: Vec<f64>,
    /// Calibrate each sweep point's ads lambda to the rgl distortion
    /// budget at the same grid value.
    pub match_kl_budgets: bool,
    pub kl_pilot_traces: usize,

    // distillation mixture
    /// Percent of fine-tuning traces drawn from the fingerprinted teacher.
    pub alpha: u32,
    pub alpha_grid: Vec<u32>,

    // detection
    pub eval_mode: EvalMode,
    pub weight_mode: WeightMode,
    pub eval_max_contexts: usize,

    // world
    pub trials: usize,
    pub n_prompts: usize,
    pub prompt_len: usize,
    pub max_new_tokens: usize,
    pub alphabet_size: usize,
    pub context_order: usize,
    pub markov_order: usize,
    pub markov_sharpness: f64,

    // models
    pub teacher_arch: Arch,
    pub teacher_hidden: usize,
    pub proxy_arch: Arch,
    pub proxy_hidden: usize,
    pub student_arch: Arch,
    pub student_hidden: usize,
    pub student_tokenizer: TokenizerKind,

    // teacher and proxy pretraining
    pub pretrain_traces: usize,
    pub pretrain_len: usize,
    pub pretrain_lr: f64,
    pub pretrain_epochs: usize,
    pub pretrain_batch: usize,

    // student fine-tuning
    pub student_lr: f64,
    pub student_epochs: usize,
    pub student_batch: usize,
    pub optimizer: OptimizerKind,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 42,
            w: 2,
            gamma: 0.5,
            tau: 0.7,
            top_p: 0.95,
            method: Method::Ads,
            strength: 256.0,
            delta_grid: vec![1.0, 2.0, 4.0, 7.0, 10.0],
            match_kl_budgets: true,
            kl_pilot_traces: 32,
            alpha: 100,
            alpha_grid: vec![0, 25, 50, 75, 100],
            eval_mode: EvalMode::Unsupervised,
            weight_mode: WeightMode::Open,
            eval_max_contexts: 4096,
            trials: 10,
            n_prompts: 512,
            prompt_len: 8,
            max_new_tokens: 64,
            alphabet_size: 64,
            context_order: 2,
            markov_order: 2,
            markov_sharpness: 2.0,
            teacher_arch: Arch::Mlp,
            teacher_hidden: 64,
            proxy_arch: Arch::Mlp,
            proxy_hidden: 64,
            student_arch: Arch::Mlp,
            student_hidden: 256,
            student_tokenizer: TokenizerKind::Unit,
            pretrain_traces: 256,
            pretrain_len: 64,
            pretrain_lr: 5e-3,
            pretrain_epochs: 4,
            pretrain_batch: 16,
            student_lr: 1e-3,
            student_epochs: 1,
            student_batch: 4,
            optimizer: OptimizerKind::Adam,
        }
    }
}

fn bad(field: &str, message: impl Into<String>) -> Error {
    Error::Config {
        field: field.to_string(),
        message: message.into(),
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(bad("gamma", "must lie strictly between 0 and 1"));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(bad("tau", "must be a positive finite number"));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(bad("top_p", "must lie in (0, 1]"));
        }
        if self.w == 0 {
            return Err(bad("w", "hash window must be at least 1"));
        }
        if !(self.strength >= 0.0 && self.strength.is_finite()) {
            return Err(bad("strength", "must be finite and non-negative"));
        }
        if self.delta_grid.is_empty() {
            return Err(bad("delta_grid", "needs at least one value"));
        }
        if self.delta_grid.iter().any(|d| !(*d >= 0.0 && d.is_finite())) {
            return Err(bad("delta_grid", "values must be finite and non-negative"));
        }
        if self.kl_pilot_traces == 0 {
            return Err(bad("kl_pilot_traces", "needs at least one trace"));
        }
        if self.alpha > 100 {
            return Err(bad("alpha", "is a percentage, at most 100"));
        }
        if self.alpha_grid.is_empty() {
            return Err(bad("alpha_grid", "needs at least one value"));
        }
        if self.alpha_grid.iter().any(|a| *a > 100) {
            return Err(bad("alpha_grid", "values are percentages, at most 100"));
        }
        if self.eval_max_contexts == 0 {
            return Err(bad("eval_max_contexts", "needs at least one context"));
        }
        if self.trials == 0 {
            return Err(bad("trials", "needs at least one trial"));
        }
        if self.n_prompts == 0 {
            return Err(bad("n_prompts", "needs at least one prompt"));
        }
        if self.prompt_len == 0 {
            return Err(bad("prompt_len", "prompts need at least one token"));
        }
        if self.max_new_tokens == 0 {
            return Err(bad("max_new_tokens", "needs at least one step"));
        }
        if self.alphabet_size < 2 {
            return Err(bad("alphabet_size", "needs at least two symbols"));
        }
        if self.context_order == 0 {
            return Err(bad("context_order", "models need at least one context slot"));
        }
        if self.markov_order == 0 {
            return Err(bad("markov_order", "source needs at least order 1"));
        }
        if !(self.markov_sharpness > 0.0 && self.markov_sharpness.is_finite()) {
            return Err(bad("markov_sharpness", "must be a positive finite number"));
        }
        for (field, arch, hidden) in [
            ("teacher_hidden", self.teacher_arch, self.teacher_hidden),
            ("proxy_hidden", self.proxy_arch, self.proxy_hidden),
            ("student_hidden", self.student_arch, self.student_hidden),
        ] {
            if arch == Arch::Mlp && hidden == 0 {
                return Err(bad(field, "mlp models need a hidden layer"));
            }
        }
        if self.pretrain_traces == 0 {
            return Err(bad("pretrain_traces", "needs at least one trace"));
        }
        if self.pretrain_len < self.markov_order {
            return Err(bad("pretrain_len", "must cover the source order"));
        }
        for (field, lr) in [("pretrain_lr", self.pretrain_lr), ("student_lr", self.student_lr)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(bad(field, "must be a positive finite number"));
            }
        }
        for (field, n) in [
            ("pretrain_epochs", self.pretrain_epochs),
            ("pretrain_batch", self.pretrain_batch),
            ("student_epochs", self.student_epochs),
            ("student_batch", self.student_batch),
        ] {
            if n == 0 {
                return Err(bad(field, "must be at least 1"));
            }
        }
        Ok(())
    }

    /// Sets one field from its name and a string value, as given on a
    /// command line. Lists accept JSON arrays or comma-separated values.
    pub fn apply_override(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_num(key, value)?,
            "w" => self.w = parse_num(key, value)?,
            "gamma" => self.gamma = parse_num(key, value)?,
            "tau" => self.tau = parse_num(key, value)?,
            "top_p" => self.top_p = parse_num(key, value)?,
            "method" => self.method = parse_enum(key, value)?,
            "strength" => self.strength = parse_num(key, value)?,
            // Method-scoped spellings of the strength scale.
            "lambda" => {
                self.method = Method::Ads;
                self.strength = parse_num(key, value)?;
            }
            "delta" => {
                self.method = Method::Rgl;
                self.strength = parse_num(key, value)?;
            }
            "delta_grid" => self.delta_grid = parse_list(key, value)?,
            "match_kl_budgets" => self.match_kl_budgets = parse_num(key, value)?,
            "kl_pilot_traces" => self.kl_pilot_traces = parse_num(key, value)?,
            "alpha" => self.alpha = parse_num(key, value)?,
            "alpha_grid" => self.alpha_grid = parse_list(key, value)?,
            "eval_mode" => self.eval_mode = parse_enum(key, value)?,
            "weight_mode" => self.weight_mode = parse_enum(key, value)?,
            "eval_max_contexts" => self.eval_max_contexts = parse_num(key, value)?,
            "trials" => self.trials = parse_num(key, value)?,
            "n_prompts" => self.n_prompts = parse_num(key, value)?,
            "prompt_len" => self.prompt_len = parse_num(key, value)?,
            "max_new_tokens" => self.max_new_tokens = parse_num(key, value)?,
            "alphabet_size" => self.alphabet_size = parse_num(key, value)?,
            "context_order" => self.context_order = parse_num(key, value)?,
            "markov_order" => self.markov_order = parse_num(key, value)?,
            "markov_sharpness" => self.markov_sharpness = parse_num(key, value)?,
            "teacher_arch" => self.teacher_arch = parse_enum(key, value)?,
            "teacher_hidden" => self.teacher_hidden = parse_num(key, value)?,
            "proxy_arch" => self.proxy_arch = parse_enum(key, value)?,
            "proxy_hidden" => self.proxy_hidden = parse_num(key, value)?,
            "student_arch" => self.student_arch = parse_enum(key, value)?,
            "student_hidden" => self.student_hidden = parse_num(key, value)?,
            "student_tokenizer" => self.student_tokenizer = parse_enum(key, value)?,
            "pretrain_traces" => self.pretrain_traces = parse_num(key, value)?,
            "pretrain_len" => self.pretrain_len = parse_num(key, value)?,
            "pretrain_lr" => self.pretrain_lr = parse_num(key, value)?,
            "pretrain_epochs" => self.pretrain_epochs = parse_num(key, value)?,
            "pretrain_batch" => self.pretrain_batch = parse_num(key, value)?,
            "student_lr" => self.student_lr = parse_num(key, value)?,
            "student_epochs" => self.student_epochs = parse_num(key, value)?,
            "student_batch" => self.student_batch = parse_num(key, value)?,
            "optimizer" => self.optimizer = parse_enum(key, value)?,
            _ => return Err(bad(key, "unknown configuration field")),
        }
        Ok(())
    }

    /// The per-step fingerprinting knobs, with `strength` routed to the
    /// configured method's scale.
    pub fn strength_config(&self) -> StrengthConfig {
        StrengthConfig {
            method: self.method,
            delta: 0.0,
            lambda: 0.0,
            tau: self.tau,
            top_p: self.top_p,
            w: self.w,
            gamma: self.gamma,
        }
        .with_strength(self.strength)
    }

    pub fn pretrain_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            lr: self.pretrain_lr,
            epochs: self.pretrain_epochs,
            batch_size: self.pretrain_batch,
            optimizer: self.optimizer,
            seed,
        }
    }

    pub fn student_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            lr: self.student_lr,
            epochs: self.student_epochs,
            batch_size: self.student_batch,
            optimizer: self.optimizer,
            seed,
        }
    }
}

fn parse_num<T: FromStr>(field: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| bad(field, format!("cannot parse {value:?}")))
}

fn parse_enum<T: serde::de::DeserializeOwned>(field: &str, value: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(value.to_string()))
        .map_err(|_| bad(field, format!("unknown variant {value:?}")))
}

fn parse_list<T: serde::de::DeserializeOwned + FromStr>(field: &str, value: &str) -> Result<Vec<T>> {
    if let Ok(list) = serde_json::from_str(value) {
        return Ok(list);
    }
    value
        .split(',')
        .map(|part| part.trim().parse())
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|_| bad(field, format!("cannot parse list {value:?}")))
}

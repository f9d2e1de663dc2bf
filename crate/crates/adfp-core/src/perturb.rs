//! Perturbation scores and fingerprinted sampling.
//!
//! Three scores share one shape: the indicator baseline (add a constant
//! to every green logit), the likelihood-weighted score q_t(1{t in S} - L)
//! derived as the logit-space gradient of the green mass L, and the exact
//! parameter-space oracle that keeps the gradient Gram matrix instead of
//! approximating it as isotropic.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::greenlist::{green_list, GreenList, HashKey};
use crate::model::ToyLm;
use crate::sampling::{kl_divergence, sample_token, softmax_temp, ProbVector};
use crate::trace::{StepRecord, Trace};

/// Largest vocabulary the exact oracle accepts; it is quadratic in the
/// vocabulary on top of a full parameter gradient per token.
pub const ORACLE_MAX_VOCAB: usize = 64;

/// Floor for log-probabilities of zero-mass tokens.
pub const LOG_PROB_FLOOR: f64 = -1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Rgl,
    Ads,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Rgl => "rgl",
            Method::Ads => "ads",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreKind {
    Rgl,
    Ads,
    AdsExact,
}

/// A per-token perturbation score vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationScore {
    pub kind: ScoreKind,
    pub scores: Vec<f64>,
}

/// Everything that parameterizes one fingerprinted sampling step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrengthConfig {
    pub method: Method,
    /// Logit offset added to green tokens (rgl).
    pub delta: f64,
    /// Multiplier on the likelihood-weighted score (ads).
    pub lambda: f64,
    pub tau: f64,
    pub top_p: f64,
    /// Hash window size.
    pub w: usize,
    /// Green-list fraction.
    pub gamma: f64,
}

impl StrengthConfig {
    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, message: String| Error::Config {
            field: name.into(),
            message,
        };
        if !(self.delta.is_finite() && self.delta >= 0.0) {
            return Err(field("delta", format!("{} must be finite and >= 0", self.delta)));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(field("lambda", format!("{} must be finite and >= 0", self.lambda)));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::InvalidTemperature(self.tau));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::InvalidTopP(self.top_p));
        }
        if self.w == 0 {
            return Err(field("w", "window size must be >= 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidGamma(self.gamma));
        }
        Ok(())
    }

    /// The strength of the active method.
    pub fn strength(&self) -> f64 {
        match self.method {
            Method::Rgl => self.delta,
            Method::Ads => self.lambda,
        }
    }

    pub fn with_strength(mut self, strength: f64) -> Self {
        match self.method {
            Method::Rgl => self.delta = strength,
            Method::Ads => self.lambda = strength,
        }
        self
    }
}

/// Indicator score: 1 on green tokens, 0 elsewhere.
pub fn delta_rgl(list: &GreenList) -> PerturbationScore {
    let mut scores = vec![0.0; list.vocab_size()];
    for &t in list.members() {
        scores[t as usize] = 1.0;
    }
    PerturbationScore {
        kind: ScoreKind::Rgl,
        scores,
    }
}

/// Green-list mass L = sum of q over the list, in [0, 1].
pub fn per_step_loss(q: &ProbVector, list: &GreenList) -> Result<f64> {
    if q.len() != list.vocab_size() {
        return Err(Error::LengthMismatch {
            got: q.len(),
            want: list.vocab_size(),
        });
    }
    Ok(list.members().iter().map(|&t| q[t as usize]).sum())
}

/// Likelihood-weighted score q_t (1{t in S} - L). This is the gradient of
/// L in logit space, so the entries sum to zero.
pub fn delta_ads(q: &ProbVector, list: &GreenList) -> Result<PerturbationScore> {
    let loss = per_step_loss(q, list)?;
    let scores = q
        .iter()
        .enumerate()
        .map(|(t, &qt)| qt * ((list.contains(t as u32) as u8 as f64) - loss))
        .collect();
    Ok(PerturbationScore {
        kind: ScoreKind::Ads,
        scores,
    })
}

fn check_oracle_size(proxy: &ToyLm) -> Result<()> {
    if proxy.vocab_size() > ORACLE_MAX_VOCAB {
        return Err(Error::ModelTooLarge {
            vocab_size: proxy.vocab_size(),
            limit: ORACLE_MAX_VOCAB,
        });
    }
    Ok(())
}

/// Exact parameter-space score: Delta_t = <grad_theta log q_t, grad_theta L>,
/// realized as inner products of backpropagated gradients. Unlike
/// [`delta_ads`] it does not assume the logit-gradient Gram matrix is
/// isotropic; on linear-softmax models the two agree up to a positive
/// scale and a uniform shift.
pub fn delta_ads_exact(
    proxy: &ToyLm,
    context: &[u32],
    list: &GreenList,
) -> Result<PerturbationScore> {
    check_oracle_size(proxy)?;
    let vocab = proxy.vocab_size();
    if vocab != list.vocab_size() {
        return Err(Error::LengthMismatch {
            got: list.vocab_size(),
            want: vocab,
        });
    }
    let q = proxy.probs(context)?;
    let loss = per_step_loss(&q, list)?;
    let r: Vec<f64> = q
        .iter()
        .enumerate()
        .map(|(t, &qt)| qt * ((list.contains(t as u32) as u8 as f64) - loss))
        .collect();
    let grad_loss = proxy.param_grad(context, &r)?;
    let mut scores = Vec::with_capacity(vocab);
    let mut upstream = vec![0.0; vocab];
    for t in 0..vocab {
        for (u, &qi) in upstream.iter_mut().zip(q.iter()) {
            *u = -qi;
        }
        upstream[t] += 1.0;
        let grad_log_q = proxy.param_grad(context, &upstream)?;
        scores.push(
            grad_log_q
                .iter()
                .zip(grad_loss.iter())
                .map(|(a, b)| a * b)
                .sum(),
        );
    }
    Ok(PerturbationScore {
        kind: ScoreKind::AdsExact,
        scores,
    })
}

/// Gram matrix K of the per-token logit gradients, K[i][j] =
/// <grad_theta z_i, grad_theta z_j>. Symmetric positive semidefinite by
/// construction; proportional to the identity exactly when only a final
/// linear layer is trainable.
pub fn gram_matrix(proxy: &ToyLm, context: &[u32]) -> Result<Vec<Vec<f64>>> {
    check_oracle_size(proxy)?;
    let vocab = proxy.vocab_size();
    let mut rows = Vec::with_capacity(vocab);
    let mut upstream = vec![0.0; vocab];
    for i in 0..vocab {
        upstream[i] = 1.0;
        rows.push(proxy.param_grad(context, &upstream)?);
        upstream[i] = 0.0;
    }
    let mut k = vec![vec![0.0; vocab]; vocab];
    for i in 0..vocab {
        for j in i..vocab {
            let dot: f64 = rows[i].iter().zip(rows[j].iter()).map(|(a, b)| a * b).sum();
            k[i][j] = dot;
            k[j][i] = dot;
        }
    }
    Ok(k)
}

/// The full sampling distributions of one generation step.
#[derive(Debug, Clone)]
pub struct StepDistributions {
    /// What the step actually samples from (before nucleus truncation).
    pub perturbed: ProbVector,
    /// The zero-strength distribution of the same step.
    pub base: ProbVector,
    /// Scores used, when a green list was in play.
    pub scores: Option<PerturbationScore>,
    pub list: Option<GreenList>,
}

/// Computes the perturbed and base distributions for one step. With no
/// key, or with fewer than `w` preceding tokens, the step is unperturbed.
pub fn step_distributions(
    teacher: &ToyLm,
    proxy: Option<&ToyLm>,
    context: &[u32],
    key: Option<HashKey>,
    cfg: &StrengthConfig,
) -> Result<StepDistributions> {
    let vocab = teacher.vocab_size();
    let z = teacher.logits(context)?;
    let list = match key {
        Some(k) if context.len() >= cfg.w => Some(green_list(
            &context[context.len() - cfg.w..],
            k,
            cfg.gamma,
            vocab,
        )?),
        _ => None,
    };
    match cfg.method {
        Method::Rgl => {
            let base = softmax_temp(&z, cfg.tau)?;
            let (perturbed, scores) = match &list {
                Some(l) => {
                    let scores = delta_rgl(l);
                    let shifted: Vec<f64> = z
                        .iter()
                        .zip(scores.scores.iter())
                        .map(|(&zi, &s)| zi + cfg.delta * s)
                        .collect();
                    (softmax_temp(&shifted, cfg.tau)?, Some(scores))
                }
                None => (base.clone(), None),
            };
            Ok(StepDistributions {
                perturbed,
                base,
                scores,
                list,
            })
        }
        Method::Ads => {
            // Teacher probabilities at temperature 1, re-tempered in log
            // space; the perturbation adds lambda * score before the
            // final softmax.
            let q_teacher = softmax_temp(&z, 1.0)?;
            let scaled_log_q: Vec<f64> = q_teacher
                .iter()
                .map(|&q| q.ln().max(LOG_PROB_FLOOR) / cfg.tau)
                .collect();
            let base = softmax_temp(&scaled_log_q, 1.0)?;
            let (perturbed, scores) = match &list {
                Some(l) => {
                    let proxy = proxy.ok_or(Error::ProxyRequired { method: "ads" })?;
                    if proxy.vocab_size() != vocab {
                        return Err(Error::LengthMismatch {
                            got: proxy.vocab_size(),
                            want: vocab,
                        });
                    }
                    let q_proxy = proxy.probs(context)?;
                    let scores = delta_ads(&q_proxy, l)?;
                    let shifted: Vec<f64> = scaled_log_q
                        .iter()
                        .zip(scores.scores.iter())
                        .map(|(&lq, &s)| lq + cfg.lambda * s)
                        .collect();
                    (softmax_temp(&shifted, 1.0)?, Some(scores))
                }
                None => (base.clone(), None),
            };
            Ok(StepDistributions {
                perturbed,
                base,
                scores,
                list,
            })
        }
    }
}

/// One fingerprinted sampling step with the likelihood-weighted score.
pub fn fingerprinted_sample_step<R: Rng>(
    teacher: &ToyLm,
    proxy: &ToyLm,
    context: &[u32],
    key: HashKey,
    cfg: &StrengthConfig,
    rng: &mut R,
) -> Result<u32> {
    if cfg.method != Method::Ads {
        return Err(Error::Config {
            field: "method".into(),
            message: "fingerprinted_sample_step requires method = ads".into(),
        });
    }
    cfg.validate()?;
    let step = step_distributions(teacher, Some(proxy), context, Some(key), cfg)?;
    sample_token(&step.perturbed, cfg.top_p, rng)
}

/// One green-logit-offset sampling step.
pub fn rgl_sample_step<R: Rng>(
    teacher: &ToyLm,
    context: &[u32],
    key: HashKey,
    cfg: &StrengthConfig,
    rng: &mut R,
) -> Result<u32> {
    if cfg.method != Method::Rgl {
        return Err(Error::Config {
            field: "method".into(),
            message: "rgl_sample_step requires method = rgl".into(),
        });
    }
    cfg.validate()?;
    let step = step_distributions(teacher, None, context, Some(key), cfg)?;
    sample_token(&step.perturbed, cfg.top_p, rng)
}

/// Generates one trace. With a key, every generated token gets a step
/// record (green flag, score of the sampled token, step KL); steps with
/// fewer than `w` preceding tokens are unperturbed and record zeros.
/// Without a key the generation is plain temperature sampling and the
/// proxy is never consulted.
pub fn generate_trace<R: Rng>(
    teacher: &ToyLm,
    proxy: Option<&ToyLm>,
    prompt: &[u32],
    key: Option<HashKey>,
    cfg: &StrengthConfig,
    max_new_tokens: usize,
    rng: &mut R,
) -> Result<Trace> {
    cfg.validate()?;
    let mut context = prompt.to_vec();
    let mut steps = if key.is_some() {
        Some(Vec::with_capacity(max_new_tokens))
    } else {
        None
    };
    for _ in 0..max_new_tokens {
        let step = step_distributions(teacher, proxy, &context, key, cfg)?;
        let token = sample_token(&step.perturbed, cfg.top_p, rng)?;
        if let Some(records) = steps.as_mut() {
            let record = match (&step.list, &step.scores) {
                (Some(list), Some(scores)) => StepRecord {
                    green: list.contains(token),
                    score: scores.scores[token as usize],
                    kl: kl_divergence(&step.perturbed, &step.base)?,
                },
                _ => StepRecord {
                    green: false,
                    score: 0.0,
                    kl: 0.0,
                },
            };
            records.push(record);
        }
        context.push(token);
    }
    Ok(Trace {
        prompt: prompt.to_vec(),
        generated: context[prompt.len()..].to_vec(),
        steps,
    })
}

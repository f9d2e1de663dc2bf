//! Detection: evaluation-dataset construction across tokenizers, the
//! green-token-probability statistic in open- and closed-weight modes,
//! and the one-sided Hoeffding p-value.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::greenlist::{green_list, realized_gamma, HashKey};
use crate::model::ToyLm;
use crate::sampling::sample_token;
use crate::seeds::derive_seed;
use crate::tokenizer::Tokenizer;

/// How the suspect model is queried: its full next-token distribution, or
/// a single sample per context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightMode {
    Open,
    Closed,
}

impl WeightMode {
    pub fn name(self) -> &'static str {
        match self {
            WeightMode::Open => "open",
            WeightMode::Closed => "closed",
        }
    }
}

/// Where the detection contexts come from: the student's own fine-tuning
/// data, or fresh generations over the same prompts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Supervised,
    Unsupervised,
}

impl EvalMode {
    pub fn name(self) -> &'static str {
        match self {
            EvalMode::Supervised => "supervised",
            EvalMode::Unsupervised => "unsupervised",
        }
    }
}

/// Detection contexts with pairwise-distinct last-w-token windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalDataset {
    contexts: Vec<Vec<u32>>,
    w: usize,
}

impl EvalDataset {
    pub fn new(contexts: Vec<Vec<u32>>, w: usize) -> Result<Self> {
        if w == 0 {
            return Err(Error::InvalidEvalSet("window size must be >= 1".into()));
        }
        if contexts.is_empty() {
            return Err(Error::EmptyEvalSet);
        }
        let mut seen = HashSet::with_capacity(contexts.len());
        for ctx in &contexts {
            if ctx.len() < w {
                return Err(Error::InvalidEvalSet(format!(
                    "context of length {} is shorter than w = {w}",
                    ctx.len()
                )));
            }
            if !seen.insert(ctx[ctx.len() - w..].to_vec()) {
                return Err(Error::InvalidEvalSet(
                    "last-w windows must be pairwise distinct".into(),
                ));
            }
        }
        Ok(EvalDataset { contexts, w })
    }

    pub fn contexts(&self) -> &[Vec<u32>] {
        &self.contexts
    }

    /// Keeps only the first `n` contexts. Windows stay pairwise distinct.
    pub fn truncated(mut self, n: usize) -> Self {
        self.contexts.truncate(n.max(1));
        self
    }

    pub fn n(&self) -> usize {
        self.contexts.len()
    }

    pub fn w(&self) -> usize {
        self.w
    }
}

/// Builds the detection dataset from raw teacher-token traces: decode to
/// symbols, cut at every position that is a token boundary under both
/// tokenizers, re-encode each prefix in the student vocabulary, keep
/// prefixes of length >= w, and deduplicate by last-w window (first
/// occurrence wins).
pub fn build_eval_dataset(
    texts: &[Vec<u32>],
    tok_teacher: Tokenizer,
    tok_student: Tokenizer,
    w: usize,
) -> Result<EvalDataset> {
    if w == 0 {
        return Err(Error::InvalidEvalSet("window size must be >= 1".into()));
    }
    let mut contexts: Vec<Vec<u32>> = Vec::new();
    let mut seen: HashSet<Vec<u32>> = HashSet::new();
    for text in texts {
        let symbols = tok_teacher.decode(text)?;
        for cut in 1..=symbols.len() {
            if !(tok_teacher.is_boundary(cut) && tok_student.is_boundary(cut)) {
                continue;
            }
            let prefix = tok_student.encode(&symbols[..cut])?;
            if prefix.len() < w {
                continue;
            }
            let window = prefix[prefix.len() - w..].to_vec();
            if seen.insert(window) {
                contexts.push(prefix);
            }
        }
    }
    if contexts.is_empty() {
        return Err(Error::EmptyEvalSet);
    }
    EvalDataset::new(contexts, w)
}

/// Open-weight statistic: mean green-list probability mass of the
/// student's next-token distribution over the dataset.
pub fn gtp_open(student: &ToyLm, ds: &EvalDataset, key: HashKey, gamma: f64) -> Result<f64> {
    let vocab = student.vocab_size();
    let terms: Vec<f64> = ds
        .contexts
        .par_iter()
        .map(|ctx| {
            let q = student.probs(ctx)?;
            let list = green_list(&ctx[ctx.len() - ds.w..], key, gamma, vocab)?;
            Ok(list.members().iter().map(|&t| q[t as usize]).sum())
        })
        .collect::<Result<_>>()?;
    Ok(terms.iter().sum::<f64>() / terms.len() as f64)
}

/// Closed-weight statistic: fraction of contexts whose single sampled
/// next token (temperature 1, no nucleus cut) lands on the green list.
/// Each context owns an independent stream derived from `seed`.
pub fn gtp_closed(
    student: &ToyLm,
    ds: &EvalDataset,
    key: HashKey,
    gamma: f64,
    seed: u64,
) -> Result<f64> {
    let vocab = student.vocab_size();
    let hits: Vec<f64> = ds
        .contexts
        .par_iter()
        .enumerate()
        .map(|(i, ctx)| {
            let q = student.probs(ctx)?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "gtp-closed", i as u64));
            let token = sample_token(&q, 1.0, &mut rng)?;
            let list = green_list(&ctx[ctx.len() - ds.w..], key, gamma, vocab)?;
            Ok(list.contains(token) as u8 as f64)
        })
        .collect::<Result<_>>()?;
    Ok(hits.iter().sum::<f64>() / hits.len() as f64)
}

/// Natural log of the one-sided Hoeffding p-value:
/// ln p = -2 n max(g_obs - gamma, 0)^2.
pub fn log_p_value(g_obs: f64, n: usize, gamma: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidEvalSet("p-value needs n >= 1".into()));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidGamma(gamma));
    }
    if !g_obs.is_finite() {
        return Err(Error::NonFinite("g_obs"));
    }
    if g_obs <= gamma {
        return Ok(0.0);
    }
    Ok(-2.0 * n as f64 * (g_obs - gamma) * (g_obs - gamma))
}

/// exp of [`log_p_value`], kept strictly positive: a deviation so large
/// that exp underflows reports the smallest positive double, and the log
/// form carries the exact magnitude.
pub fn p_value(g_obs: f64, n: usize, gamma: f64) -> Result<f64> {
    let p = log_p_value(g_obs, n, gamma)?.exp();
    Ok(if p > 0.0 { p } else { f64::MIN_POSITIVE })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub g_obs: f64,
    pub n: usize,
    /// The realized green fraction floor(gamma |V|) / |V| used as the
    /// null mean.
    pub gamma: f64,
    pub p_value: f64,
    pub log10_p: f64,
    pub mode: WeightMode,
    pub key_id: String,
}

/// Runs the configured statistic and wraps it in a report. `gamma` is the
/// configured ratio; the test itself uses the realized fraction. `seed`
/// feeds closed-mode sampling and is ignored in open mode.
pub fn detect(
    student: &ToyLm,
    ds: &EvalDataset,
    key: HashKey,
    gamma: f64,
    mode: WeightMode,
    seed: u64,
) -> Result<DetectionReport> {
    let g_obs = match mode {
        WeightMode::Open => gtp_open(student, ds, key, gamma)?,
        WeightMode::Closed => gtp_closed(student, ds, key, gamma, seed)?,
    };
    let gamma_real = realized_gamma(gamma, student.vocab_size());
    let lp = log_p_value(g_obs, ds.n(), gamma_real)?;
    Ok(DetectionReport {
        g_obs,
        n: ds.n(),
        gamma: gamma_real,
        p_value: p_value(g_obs, ds.n(), gamma_real)?,
        log10_p: lp / std::f64::consts::LN_10,
        mode,
        key_id: key.id(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Arch;
    use rand::{RngExt, SeedableRng};

    #[test]
    fn dataset_validation() {
        assert!(EvalDataset::new(vec![], 2).is_err());
        assert!(EvalDataset::new(vec![vec![1]], 2).is_err());
        // duplicate windows
        assert!(EvalDataset::new(vec![vec![1, 2, 3], vec![9, 2, 3]], 2).is_err());
        let ds = EvalDataset::new(vec![vec![1, 2, 3], vec![2, 3, 4]], 2).unwrap();
        assert_eq!(ds.n(), 2);
    }

    #[test]
    fn build_unit_unit_keeps_deduped_prefixes() {
        let unit = Tokenizer::unit(8).unwrap();
        let texts = vec![vec![1, 2, 3, 2, 3], vec![4, 2, 3]];
        let ds = build_eval_dataset(&texts, unit, unit, 2).unwrap();
        // prefixes of length >= 2, deduplicated by last-2 window; the
        // second (2,3) window in text 0 and the one in text 1 are dropped
        let expected: Vec<Vec<u32>> = vec![
            vec![1, 2],
            vec![1, 2, 3],
            vec![1, 2, 3, 2],
            vec![4, 2],
        ];
        assert_eq!(ds.contexts(), &expected[..]);
    }

    #[test]
    fn build_dedup_matches_brute_force() {
        let unit = Tokenizer::unit(6).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(90);
        let texts: Vec<Vec<u32>> = (0..20)
            .map(|_| (0..12).map(|_| rng.random_range(0..6u32)).collect())
            .collect();
        let ds = build_eval_dataset(&texts, unit, unit, 2).unwrap();
        let mut seen = std::collections::HashSet::new();
        let mut expected = Vec::new();
        for t in &texts {
            for cut in 2..=t.len() {
                let prefix = t[..cut].to_vec();
                if seen.insert(prefix[cut - 2..].to_vec()) {
                    expected.push(prefix);
                }
            }
        }
        assert_eq!(ds.contexts(), &expected[..]);
    }

    #[test]
    fn build_unit_teacher_pair_student() {
        let unit = Tokenizer::unit(4).unwrap();
        let pair = Tokenizer::pair(4).unwrap();
        let texts = vec![vec![0, 1, 2, 3, 0, 2, 1, 1, 3, 0]];
        let ds = build_eval_dataset(&texts, unit, pair, 2).unwrap();
        // shared boundaries are even symbol positions; prefixes need at
        // least 2 pair tokens (4 symbols)
        for ctx in ds.contexts() {
            assert!(ctx.len() >= 2);
        }
        assert_eq!(ds.contexts()[0], pair.encode(&[0, 1, 2, 3]).unwrap());
        assert_eq!(ds.n(), 4); // cuts at 4, 6, 8, 10
    }

    #[test]
    fn gtp_open_uniform_student_hits_realized_fraction() {
        let student = ToyLm::zeroed(Arch::LinearSoftmax, 10, 2, 0).unwrap();
        let ds = EvalDataset::new(vec![vec![1, 2], vec![3, 4], vec![5, 6]], 2).unwrap();
        let g = gtp_open(&student, &ds, HashKey(3), 0.3).unwrap();
        assert!((g - 0.3).abs() < 1e-12);
        // realized fraction differs from gamma here: floor(0.25 * 10) / 10
        let g = gtp_open(&student, &ds, HashKey(3), 0.25).unwrap();
        assert!((g - 0.2).abs() < 1e-12);
    }

    #[test]
    fn gtp_open_one_hot_green_student_is_one() {
        let vocab = 8;
        let ds = EvalDataset::new(vec![vec![1, 2]], 2).unwrap();
        let key = HashKey(44);
        let list = green_list(&[1, 2], key, 0.5, vocab).unwrap();
        let target = list.members()[0] as usize;
        let mut theta = vec![0.0; vocab * vocab * 2 + vocab];
        theta[vocab * vocab * 2 + target] = 1e4;
        let student = ToyLm::from_parts(Arch::LinearSoftmax, vocab, 2, 0, theta).unwrap();
        let g = gtp_open(&student, &ds, key, 0.5).unwrap();
        assert!((g - 1.0).abs() < 1e-12);
        // closed mode equals open mode for a deterministic student
        let gc = gtp_closed(&student, &ds, key, 0.5, 7).unwrap();
        assert_eq!(gc, 1.0);
    }

    #[test]
    fn gtp_open_matches_serial_oracle() {
        let student = ToyLm::new(Arch::Mlp, 12, 2, 6, 91).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(92);
        let mut contexts = Vec::new();
        let mut seen = std::collections::HashSet::new();
        while contexts.len() < 30 {
            let ctx: Vec<u32> = (0..5).map(|_| rng.random_range(0..12u32)).collect();
            if seen.insert(ctx[3..].to_vec()) {
                contexts.push(ctx);
            }
        }
        let ds = EvalDataset::new(contexts.clone(), 2).unwrap();
        let key = HashKey(93);
        let mut total = 0.0;
        for ctx in &contexts {
            let q = student.probs(ctx).unwrap();
            let list = green_list(&ctx[3..], key, 0.5, 12).unwrap();
            total += list.members().iter().map(|&t| q[t as usize]).sum::<f64>();
        }
        let expected = total / contexts.len() as f64;
        let got = gtp_open(&student, &ds, key, 0.5).unwrap();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn gtp_closed_unbiased_for_open() {
        let student = ToyLm::new(Arch::Mlp, 12, 2, 6, 94).unwrap();
        let contexts: Vec<Vec<u32>> = (0..12)
            .flat_map(|a| (0..12).map(move |b| vec![a, b]))
            .collect();
        let ds = EvalDataset::new(contexts, 2).unwrap();
        let key = HashKey(95);
        let open = gtp_open(&student, &ds, key, 0.5).unwrap();
        let reps = 200;
        let mut values = Vec::with_capacity(reps);
        for s in 0..reps {
            values.push(gtp_closed(&student, &ds, key, 0.5, s as u64).unwrap());
        }
        let mean = values.iter().sum::<f64>() / reps as f64;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / reps as f64;
        let sigma = (var / reps as f64).sqrt();
        assert!(
            (mean - open).abs() <= 3.0 * sigma.max(1e-4),
            "mean {mean}, open {open}, sigma {sigma}"
        );
        // reproducible per seed
        assert_eq!(
            gtp_closed(&student, &ds, key, 0.5, 5).unwrap(),
            gtp_closed(&student, &ds, key, 0.5, 5).unwrap()
        );
    }

    #[test]
    fn p_value_examples() {
        assert_eq!(p_value(0.5, 100, 0.5).unwrap(), 1.0);
        assert_eq!(p_value(0.4, 100, 0.5).unwrap(), 1.0);
        let p = p_value(0.55, 1000, 0.5).unwrap();
        assert!((p - (-5.0f64).exp()).abs() < 1e-12);
        let p = p_value(0.6, 100, 0.5).unwrap();
        assert!((p - (-2.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn p_value_monotone_and_log_consistent() {
        let mut prev = 1.0;
        for g in [0.51, 0.55, 0.6, 0.7, 0.9] {
            let p = p_value(g, 500, 0.5).unwrap();
            assert!(p < prev);
            prev = p;
            let lp = log_p_value(g, 500, 0.5).unwrap();
            assert!((p.ln() - lp).abs() < 1e-9);
        }
        assert!(p_value(0.6, 1000, 0.5).unwrap() < p_value(0.6, 100, 0.5).unwrap());
        // extreme deviations underflow to the smallest positive double
        let p = p_value(1.0, 4096, 0.5).unwrap();
        assert!(p > 0.0);
        let lp = log_p_value(1.0, 4096, 0.5).unwrap();
        assert_eq!(lp, -2048.0);
    }

    #[test]
    fn detect_report_fields() {
        let student = ToyLm::zeroed(Arch::LinearSoftmax, 10, 2, 0).unwrap();
        let ds = EvalDataset::new(vec![vec![1, 2], vec![3, 4]], 2).unwrap();
        let key = HashKey(0xABCD);
        let r1 = detect(&student, &ds, key, 0.25, WeightMode::Open, 0).unwrap();
        let r2 = detect(&student, &ds, key, 0.25, WeightMode::Open, 99).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(r1.n, 2);
        assert_eq!(r1.gamma, 0.2); // floor(0.25 * 10) / 10
        assert_eq!(r1.key_id, "000000000000abcd");
        assert_eq!(r1.p_value, 1.0); // uniform student sits at the null mean
        assert_eq!(r1.log10_p, 0.0);
    }

    #[test]
    fn null_student_calibrates_over_keys() {
        // Lemma-1 smoke check: a key-independent student's mean statistic
        // over random keys sits at the realized fraction.
        let student = ToyLm::new(Arch::Mlp, 16, 2, 8, 96).unwrap();
        let contexts: Vec<Vec<u32>> = (0..16)
            .flat_map(|a| (0..16).map(move |b| vec![a, b]))
            .collect();
        let ds = EvalDataset::new(contexts, 2).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(97);
        let keys = 100;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for _ in 0..keys {
            let g = gtp_open(&student, &ds, HashKey(rng.random()), 0.5).unwrap();
            sum += g;
            sq += g * g;
        }
        let mean = sum / keys as f64;
        let var = (sq / keys as f64 - mean * mean).max(0.0);
        let sigma = (var / keys as f64).sqrt();
        assert!(
            (mean - 0.5).abs() <= 3.0 * sigma.max(1e-4),
            "mean {mean} sigma {sigma}"
        );
    }
}

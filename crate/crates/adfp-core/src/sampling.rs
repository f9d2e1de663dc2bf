//! Probability vectors, temperature softmax, nucleus sampling, and KL
//! divergence.

use std::ops::Deref;

use rand::{Rng, RngExt};

use crate::error::{Error, Result};

/// A distribution over the vocabulary: finite, nonnegative, sums to 1
/// within 1e-9.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector {
    probs: Vec<f64>,
}

impl ProbVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidProbVector("empty vector".into()));
        }
        let mut sum = 0.0;
        for &p in &probs {
            if !p.is_finite() || p < 0.0 {
                return Err(Error::InvalidProbVector(format!("bad entry {p}")));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidProbVector(format!("sums to {sum}")));
        }
        Ok(ProbVector { probs })
    }

    pub fn uniform(n: usize) -> Self {
        ProbVector {
            probs: vec![1.0 / n as f64; n],
        }
    }

    pub fn one_hot(n: usize, index: usize) -> Self {
        let mut probs = vec![0.0; n];
        probs[index] = 1.0;
        ProbVector { probs }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.probs
    }
}

impl Deref for ProbVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.probs
    }
}

/// Temperature softmax, numerically stabilized by max subtraction.
pub fn softmax_temp(z: &[f64], tau: f64) -> Result<ProbVector> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::InvalidTemperature(tau));
    }
    if z.is_empty() || z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("softmax input"));
    }
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = z.iter().map(|&v| ((v - m) / tau).exp()).collect();
    let sum: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= sum;
    }
    Ok(ProbVector { probs })
}

/// Nucleus sampling: keep the minimal prefix of the probability-sorted
/// vocabulary with cumulative mass >= top_p (ties by ascending token id),
/// renormalize, sample. top_p = 1 is exact categorical sampling.
pub fn sample_token<R: Rng>(p: &ProbVector, top_p: f64, rng: &mut R) -> Result<u32> {
    if !(top_p > 0.0 && top_p <= 1.0) {
        return Err(Error::InvalidTopP(top_p));
    }
    if top_p >= 1.0 {
        return Ok(categorical(&p.probs, rng));
    }
    let mut order: Vec<u32> = (0..p.probs.len() as u32).collect();
    order.sort_by(|&a, &b| {
        p.probs[b as usize]
            .partial_cmp(&p.probs[a as usize])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut cut = order.len();
    let mut mass = 0.0;
    for (i, &t) in order.iter().enumerate() {
        mass += p.probs[t as usize];
        if mass >= top_p {
            cut = i + 1;
            break;
        }
    }
    let nucleus = &order[..cut];
    let weights: Vec<f64> = nucleus.iter().map(|&t| p.probs[t as usize] / mass).collect();
    Ok(nucleus[categorical(&weights, rng) as usize])
}

pub fn categorical<R: Rng>(weights: &[f64], rng: &mut R) -> u32 {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0u32;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last = i as u32;
        if u < acc {
            return last;
        }
    }
    // Rounding can leave acc slightly below 1; fall back to the last
    // positive-mass token.
    last
}

/// KL(p || q) in nats. Zero-mass p entries contribute nothing; q is
/// clamped away from zero so the result stays finite.
pub fn kl_divergence(p: &ProbVector, q: &ProbVector) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch {
            got: q.len(),
            want: p.len(),
        });
    }
    let mut kl = 0.0;
    for (&pi, &qi) in p.iter().zip(q.iter()) {
        if pi > 0.0 {
            kl += pi * (pi.ln() - qi.max(1e-300).ln());
        }
    }
    Ok(kl.max(0.0))
}

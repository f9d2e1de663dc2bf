//! Tiny trainable autoregressive models. Two architectures share one
//! parameter layout convention: a linear-softmax head over concatenated
//! one-hot context features, and an mlp with one tanh hidden layer.
//!
//! The same type plays teacher, proxy, and student. Gradients are exact,
//! which the perturbation oracles rely on.

use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::{softmax_temp, ProbVector};
use crate::seeds::derive_seed;
use crate::trace::Trace;

/// Reserved id used to left-pad contexts shorter than the model order.
pub const PAD_TOKEN: u32 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arch {
    LinearSoftmax,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

/// Flat-parameter autoregressive model over the last `context_order`
/// tokens.
///
/// Parameter layout (row-major):
/// - linear-softmax: W [vocab x feat], b [vocab]
/// - mlp: W1 [hidden x feat], b1 [hidden], W2 [vocab x hidden], b2 [vocab]
///
/// where feat = context_order * vocab.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyLm {
    arch: Arch,
    vocab_size: usize,
    context_order: usize,
    hidden: usize,
    theta: Vec<f64>,
}

impl ToyLm {
    pub fn new(
        arch: Arch,
        vocab_size: usize,
        context_order: usize,
        hidden: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut model = Self::zeroed(arch, vocab_size, context_order, hidden)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Small uniform weights, zero biases: the initial distribution
        // stays near uniform, which keeps early training stable.
        match arch {
            Arch::LinearSoftmax => {
                let wlen = vocab_size * model.feature_dim();
                for v in &mut model.theta[..wlen] {
                    *v = rng.random_range(-0.1..0.1);
                }
            }
            Arch::Mlp => {
                let w1 = hidden * model.feature_dim();
                for v in &mut model.theta[..w1] {
                    *v = rng.random_range(-0.1..0.1);
                }
                let w2_start = w1 + hidden;
                for v in &mut model.theta[w2_start..w2_start + vocab_size * hidden] {
                    *v = rng.random_range(-0.1..0.1);
                }
            }
        }
        Ok(model)
    }

    pub fn zeroed(
        arch: Arch,
        vocab_size: usize,
        context_order: usize,
        hidden: usize,
    ) -> Result<Self> {
        if vocab_size < 2 {
            return Err(Error::VocabTooSmall(vocab_size));
        }
        if context_order < 1 {
            return Err(Error::InvalidContextOrder(context_order));
        }
        let hidden = match arch {
            Arch::LinearSoftmax => 0,
            Arch::Mlp => {
                if hidden < 1 {
                    return Err(Error::InvalidHidden(hidden));
                }
                hidden
            }
        };
        let feat = context_order * vocab_size;
        let len = match arch {
            Arch::LinearSoftmax => vocab_size * feat + vocab_size,
            Arch::Mlp => hidden * feat + hidden + vocab_size * hidden + vocab_size,
        };
        Ok(ToyLm {
            arch,
            vocab_size,
            context_order,
            hidden,
            theta: vec![0.0; len],
        })
    }

    /// Rebuilds a model from its flat parameter vector, as stored in
    /// checkpoints.
    pub fn from_parts(
        arch: Arch,
        vocab_size: usize,
        context_order: usize,
        hidden: usize,
        theta: Vec<f64>,
    ) -> Result<Self> {
        let mut model = Self::zeroed(arch, vocab_size, context_order, hidden)?;
        if theta.len() != model.theta.len() {
            return Err(Error::Checkpoint(format!(
                "parameter count {} does not match architecture (expected {})",
                theta.len(),
                model.theta.len()
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Checkpoint("non-finite parameter".into()));
        }
        model.theta = theta;
        Ok(model)
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn context_order(&self) -> usize {
        self.context_order
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn feature_dim(&self) -> usize {
        self.context_order * self.vocab_size
    }

    pub fn param_len(&self) -> usize {
        self.theta.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.theta
    }

    /// Named row-major parameter blocks, in layout order.
    pub fn matrices(&self) -> Vec<(&'static str, &[f64])> {
        let (v, f, h) = (self.vocab_size, self.feature_dim(), self.hidden);
        match self.arch {
            Arch::LinearSoftmax => vec![
                ("w", &self.theta[..v * f]),
                ("b", &self.theta[v * f..]),
            ],
            Arch::Mlp => {
                let b1 = h * f;
                let w2 = b1 + h;
                let b2 = w2 + v * h;
                vec![
                    ("w1", &self.theta[..b1]),
                    ("b1", &self.theta[b1..w2]),
                    ("w2", &self.theta[w2..b2]),
                    ("b2", &self.theta[b2..]),
                ]
            }
        }
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        for &t in tokens {
            if t as usize >= self.vocab_size {
                return Err(Error::TokenOutOfVocab {
                    token: t,
                    vocab_size: self.vocab_size,
                });
            }
        }
        Ok(())
    }

    /// The last `context_order` tokens, left-padded with [`PAD_TOKEN`].
    fn fill_window(&self, context: &[u32], window: &mut [u32]) {
        let w = self.context_order;
        let take = context.len().min(w);
        for slot in window.iter_mut().take(w - take) {
            *slot = PAD_TOKEN;
        }
        window[w - take..w].copy_from_slice(&context[context.len() - take..]);
    }

    /// Forward pass from a prepared window. `hidden_buf` receives the
    /// tanh activations for mlp models (used again in backprop).
    fn forward_window(&self, window: &[u32], logits: &mut [f64], hidden_buf: &mut [f64]) {
        let (v, f) = (self.vocab_size, self.feature_dim());
        match self.arch {
            Arch::LinearSoftmax => {
                let b = &self.theta[v * f..];
                logits.copy_from_slice(b);
                for (j, &t) in window.iter().enumerate() {
                    let col = j * v + t as usize;
                    for (i, z) in logits.iter_mut().enumerate() {
                        *z += self.theta[i * f + col];
                    }
                }
            }
            Arch::Mlp => {
                let h = self.hidden;
                let b1 = &self.theta[h * f..h * f + h];
                hidden_buf.copy_from_slice(b1);
                for (j, &t) in window.iter().enumerate() {
                    let col = j * v + t as usize;
                    for (k, a) in hidden_buf.iter_mut().enumerate() {
                        *a += self.theta[k * f + col];
                    }
                }
                for a in hidden_buf.iter_mut() {
                    *a = a.tanh();
                }
                let w2_start = h * f + h;
                let b2 = &self.theta[w2_start + v * h..];
                for i in 0..v {
                    let row = &self.theta[w2_start + i * h..w2_start + (i + 1) * h];
                    let mut z = b2[i];
                    for (wv, a) in row.iter().zip(hidden_buf.iter()) {
                        z += wv * a;
                    }
                    logits[i] = z;
                }
            }
        }
    }

    /// Accumulates the parameter gradient of `upstream . z(window)` into
    /// `grad` (same flat layout as the parameters). `hidden_buf` must hold
    /// the activations from the matching forward pass.
    fn accumulate_grad(&self, window: &[u32], hidden_buf: &[f64], upstream: &[f64], grad: &mut [f64]) {
        let (v, f) = (self.vocab_size, self.feature_dim());
        match self.arch {
            Arch::LinearSoftmax => {
                for (j, &t) in window.iter().enumerate() {
                    let col = j * v + t as usize;
                    for (i, &u) in upstream.iter().enumerate() {
                        grad[i * f + col] += u;
                    }
                }
                let bias = &mut grad[v * f..];
                for (g, &u) in bias.iter_mut().zip(upstream.iter()) {
                    *g += u;
                }
            }
            Arch::Mlp => {
                let h = self.hidden;
                let w2_start = h * f + h;
                let b2_start = w2_start + v * h;
                let mut dpre = vec![0.0; h];
                for (i, &u) in upstream.iter().enumerate() {
                    grad[b2_start + i] += u;
                    let row = &self.theta[w2_start + i * h..w2_start + (i + 1) * h];
                    let grow = &mut grad[w2_start + i * h..w2_start + (i + 1) * h];
                    for k in 0..h {
                        grow[k] += u * hidden_buf[k];
                        dpre[k] += u * row[k];
                    }
                }
                for (k, d) in dpre.iter_mut().enumerate() {
                    *d *= 1.0 - hidden_buf[k] * hidden_buf[k];
                }
                for (j, &t) in window.iter().enumerate() {
                    let col = j * v + t as usize;
                    for (k, &d) in dpre.iter().enumerate() {
                        grad[k * f + col] += d;
                    }
                }
                let b1 = &mut grad[h * f..h * f + h];
                for (g, &d) in b1.iter_mut().zip(dpre.iter()) {
                    *g += d;
                }
            }
        }
    }

    /// Full parameter gradient of `upstream . z(context)`, used by the
    /// exact perturbation oracle.
    pub(crate) fn param_grad(&self, context: &[u32], upstream: &[f64]) -> Result<Vec<f64>> {
        self.check_tokens(context)?;
        if upstream.len() != self.vocab_size {
            return Err(Error::LengthMismatch {
                got: upstream.len(),
                want: self.vocab_size,
            });
        }
        let mut window = vec![0u32; self.context_order];
        self.fill_window(context, &mut window);
        let mut logits = vec![0.0; self.vocab_size];
        let mut hidden_buf = vec![0.0; self.hidden.max(1)];
        self.forward_window(&window, &mut logits, &mut hidden_buf);
        let mut grad = vec![0.0; self.theta.len()];
        self.accumulate_grad(&window, &hidden_buf, upstream, &mut grad);
        Ok(grad)
    }

    pub fn logits(&self, context: &[u32]) -> Result<Vec<f64>> {
        self.check_tokens(context)?;
        let mut window = vec![0u32; self.context_order];
        self.fill_window(context, &mut window);
        let mut out = vec![0.0; self.vocab_size];
        let mut hidden_buf = vec![0.0; self.hidden.max(1)];
        self.forward_window(&window, &mut out, &mut hidden_buf);
        Ok(out)
    }

    /// Next-token distribution at temperature 1.
    pub fn probs(&self, context: &[u32]) -> Result<ProbVector> {
        softmax_temp(&self.logits(context)?, 1.0)
    }

    /// Minimizes mean next-token cross-entropy over every position of
    /// every trace (prompt and generation alike, with left-padded
    /// contexts). Returns per-epoch mean losses. Deterministic given
    /// `cfg.seed`.
    pub fn train(&mut self, corpus: &[Trace], cfg: &TrainConfig) -> Result<Vec<f64>> {
        let mut sequences: Vec<Vec<u32>> = Vec::with_capacity(corpus.len());
        let mut positions: Vec<(u32, u32)> = Vec::new();
        for (ti, trace) in corpus.iter().enumerate() {
            let full = trace.full();
            self.check_tokens(&full)?;
            for p in 0..full.len() {
                positions.push((ti as u32, p as u32));
            }
            sequences.push(full);
        }
        if positions.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let batch = cfg.batch_size.max(1);
        let (v, w) = (self.vocab_size, self.context_order);
        let mut grad = vec![0.0; self.theta.len()];
        let mut adam_m = vec![0.0; self.theta.len()];
        let mut adam_v = vec![0.0; self.theta.len()];
        let mut adam_t = 0u32;
        let mut window = vec![0u32; w];
        let mut logits = vec![0.0; v];
        let mut hidden_buf = vec![0.0; self.hidden.max(1)];
        let mut upstream = vec![0.0; v];
        let mut curve = Vec::with_capacity(cfg.epochs);
        for epoch in 0..cfg.epochs {
            let mut order = positions.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "epoch", epoch as u64));
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for (bi, chunk) in order.chunks(batch).enumerate() {
                grad.iter_mut().for_each(|g| *g = 0.0);
                let scale = 1.0 / chunk.len() as f64;
                let mut batch_loss = 0.0;
                for &(ti, p) in chunk {
                    let full = &sequences[ti as usize];
                    let (context, target) = (&full[..p as usize], full[p as usize] as usize);
                    self.fill_window(context, &mut window);
                    self.forward_window(&window, &mut logits, &mut hidden_buf);
                    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut sum = 0.0;
                    for (u, &z) in upstream.iter_mut().zip(logits.iter()) {
                        *u = (z - m).exp();
                        sum += *u;
                    }
                    batch_loss -= (upstream[target] / sum).max(1e-300).ln();
                    for u in upstream.iter_mut() {
                        *u *= scale / sum;
                    }
                    upstream[target] -= scale;
                    self.accumulate_grad(&window, &hidden_buf, &upstream, &mut grad);
                }
                if !batch_loss.is_finite() {
                    return Err(Error::TrainingDiverged { epoch, batch: bi });
                }
                epoch_loss += batch_loss;
                match cfg.optimizer {
                    OptimizerKind::Sgd => {
                        for (t, &g) in self.theta.iter_mut().zip(grad.iter()) {
                            *t -= cfg.lr * g;
                        }
                    }
                    OptimizerKind::Adam => {
                        adam_t += 1;
                        let (b1, b2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
                        let c1 = 1.0 - b1.powi(adam_t as i32);
                        let c2 = 1.0 - b2.powi(adam_t as i32);
                        for ((t, &g), (m, vv)) in self
                            .theta
                            .iter_mut()
                            .zip(grad.iter())
                            .zip(adam_m.iter_mut().zip(adam_v.iter_mut()))
                        {
                            *m = b1 * *m + (1.0 - b1) * g;
                            *vv = b2 * *vv + (1.0 - b2) * g * g;
                            *t -= cfg.lr * (*m / c1) / ((*vv / c2).sqrt() + eps);
                        }
                    }
                }
            }
            curve.push(epoch_loss / positions.len() as f64);
        }
        Ok(curve)
    }

    /// Mean negative log-likelihood of the generated tokens of `traces`,
    /// each conditioned on its full preceding context.
    pub fn nll(&self, traces: &[Trace]) -> Result<f64> {
        let mut total = 0.0;
        let mut count = 0usize;
        for trace in traces {
            let full = trace.full();
            self.check_tokens(&full)?;
            for (i, &target) in trace.generated.iter().enumerate() {
                let context = &full[..trace.prompt.len() + i];
                let q = self.probs(context)?;
                total -= q[target as usize].max(1e-300).ln();
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::EmptyCorpus);
        }
        Ok(total / count as f64)
    }
}

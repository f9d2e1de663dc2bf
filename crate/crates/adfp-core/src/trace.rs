//! Generated traces: one prompt, its continuation, and optional per-step
//! fingerprinting metadata.

use serde::{Deserialize, Serialize};

/// Metadata recorded at one generation step when a key is active.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Whether the sampled token was on the step's green list.
    pub green: bool,
    /// Perturbation score of the sampled token.
    pub score: f64,
    /// KL(perturbed || base) of the step's full sampling distribution,
    /// before nucleus truncation.
    pub kl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub prompt: Vec<u32>,
    pub generated: Vec<u32>,
    /// One record per generated token; absent for unfingerprinted traces.
    pub steps: Option<Vec<StepRecord>>,
}

impl Trace {
    pub fn plain(prompt: Vec<u32>, generated: Vec<u32>) -> Self {
        Trace {
            prompt,
            generated,
            steps: None,
        }
    }

    /// Prompt and generation concatenated.
    pub fn full(&self) -> Vec<u32> {
        let mut out = Vec::with_capacity(self.prompt.len() + self.generated.len());
        out.extend_from_slice(&self.prompt);
        out.extend_from_slice(&self.generated);
        out
    }

    /// Fraction of generated tokens that were green, if recorded.
    pub fn green_fraction(&self) -> Option<f64> {
        let steps = self.steps.as_ref()?;
        if steps.is_empty() {
            return None;
        }
        let green = steps.iter().filter(|s| s.green).count();
        Some(green as f64 / steps.len() as f64)
    }

    /// Mean per-step KL, if recorded.
    pub fn mean_step_kl(&self) -> Option<f64> {
        let steps = self.steps.as_ref()?;
        if steps.is_empty() {
            return None;
        }
        Some(steps.iter().map(|s| s.kl).sum::<f64>() / steps.len() as f64)
    }
}

//! Synthetic order-k Markov sources over the base alphabet, used for
//! pretraining data and prompts.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::seeds::derive_seed;

/// A random row-stochastic transition table over alphabet^order states.
#[derive(Debug, Clone)]
pub struct MarkovSource {
    alphabet: usize,
    order: usize,
    /// rows[state * alphabet + symbol], each state row sums to 1.
    rows: Vec<f64>,
}

impl MarkovSource {
    /// Rows are drawn as softmax(sharpness * gumbel): sharpness 0 gives
    /// uniform rows, larger values give lower-entropy structure.
    pub fn random(alphabet: usize, order: usize, sharpness: f64, seed: u64) -> Self {
        assert!(alphabet >= 2 && order >= 1);
        let states = alphabet.pow(order as u32);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = vec![0.0; states * alphabet];
        for s in 0..states {
            let row = &mut rows[s * alphabet..(s + 1) * alphabet];
            let mut sum = 0.0;
            for v in row.iter_mut() {
                let u: f64 = rng.random();
                let gumbel = -(-u.max(1e-300).ln()).ln();
                *v = (sharpness * gumbel).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        MarkovSource {
            alphabet,
            order,
            rows,
        }
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet
    }

    fn draw_row(&self, state: usize, rng: &mut ChaCha8Rng) -> u32 {
        let row = &self.rows[state * self.alphabet..(state + 1) * self.alphabet];
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return i as u32;
            }
        }
        (self.alphabet - 1) as u32
    }

    /// One sequence of `len` symbols: the first `order` symbols uniform,
    /// the rest from the transition table.
    pub fn sample(&self, len: usize, rng: &mut ChaCha8Rng) -> Vec<u32> {
        let mut out = Vec::with_capacity(len);
        let mut state = 0usize;
        for i in 0..len {
            let sym = if i < self.order {
                rng.random_range(0..self.alphabet as u32)
            } else {
                self.draw_row(state, rng)
            };
            out.push(sym);
            state = (state * self.alphabet + sym as usize) % self.alphabet.pow(self.order as u32);
        }
        out
    }

    /// `count` independent sequences, each from its own derived stream.
    pub fn sequences(&self, count: usize, len: usize, seed: u64) -> Vec<Vec<u32>> {
        (0..count)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "markov", i as u64));
                self.sample(len, &mut rng)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_are_stochastic() {
        let source = MarkovSource::random(8, 2, 2.0, 1);
        for s in 0..64 {
            let sum: f64 = source.rows[s * 8..(s + 1) * 8].iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(source.rows[s * 8..(s + 1) * 8].iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn sequences_deterministic_and_in_range() {
        let source = MarkovSource::random(8, 2, 2.0, 1);
        let a = source.sequences(5, 20, 9);
        let b = source.sequences(5, 20, 9);
        assert_eq!(a, b);
        assert!(a.iter().flatten().all(|&s| s < 8));
        assert_ne!(a[0], a[1]);
    }

    #[test]
    fn sharpness_skews_rows() {
        let flat = MarkovSource::random(8, 1, 0.0, 2);
        let sharp = MarkovSource::random(8, 1, 4.0, 2);
        let max_flat = flat.rows.iter().cloned().fold(0.0, f64::max);
        let max_sharp = sharp.rows.iter().cloned().fold(0.0, f64::max);
        assert!((max_flat - 0.125).abs() < 1e-12);
        assert!(max_sharp > 0.5);
    }
}

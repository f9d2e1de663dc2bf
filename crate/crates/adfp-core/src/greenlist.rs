//! Keyed green-list hashing: a deterministic map from (context window, key)
//! to a fixed-size pseudorandom subset of the vocabulary.
//!
//! The pipeline is a wire-format contract: `mix64` avalanche finalizer,
//! `context_digest` fold over the window, ranked-score subset selection.
//! Any implementation in any language must reproduce the member sets in
//! `tests/data/greenlist_vectors.json` bit for bit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Salt xored into token ids before scoring, so token scores do not reuse
/// the plain digest stream.
pub const TOKEN_SALT: u64 = 0xA5A5_A5A5_A5A5_A5A5;

/// Secret fingerprinting key. Generation and detection agree on green
/// lists only when they hold the identical value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HashKey(pub u64);

impl HashKey {
    /// Stable identifier used in reports and trace files.
    pub fn id(self) -> String {
        format!("{:016x}", self.0)
    }
}

/// splitmix64 finalizer. All arithmetic is modulo 2^64.
#[inline]
pub fn mix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a context window into the key: d starts at the key and absorbs
/// one mixed token per step, in window order.
pub fn context_digest(window: &[u32], key: HashKey) -> u64 {
    let mut d = key.0;
    for &u in window {
        d = mix64(d ^ mix64(u as u64));
    }
    d
}

/// The keyed pseudorandom token subset for one context window.
#[derive(Debug, Clone, PartialEq)]
pub struct GreenList {
    members: Vec<u32>,
    mask: Vec<bool>,
    vocab_size: usize,
    gamma: f64,
}

impl GreenList {
    /// Member token ids, strictly increasing.
    pub fn members(&self) -> &[u32] {
        &self.members
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// The configured ratio, not the realized fraction.
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// |members| / vocab_size, the exact null mean of the detection
    /// statistic. Differs from `gamma` whenever gamma * vocab_size is not
    /// an integer.
    pub fn realized_fraction(&self) -> f64 {
        self.members.len() as f64 / self.vocab_size as f64
    }

    /// Membership without the vocabulary check; see [`is_green`] for the
    /// checked form.
    #[inline]
    pub fn contains(&self, token: u32) -> bool {
        self.mask.get(token as usize).copied().unwrap_or(false)
    }
}

/// Realized green fraction floor(gamma * vocab_size) / vocab_size.
pub fn realized_gamma(gamma: f64, vocab_size: usize) -> f64 {
    (gamma * vocab_size as f64).floor() / vocab_size as f64
}

impl GreenList {
    /// Assembles a list directly from its members (tests, bindings,
    /// external tooling). Members must be strictly increasing and within
    /// the vocabulary; gamma is recorded as the realized fraction.
    pub fn from_members(members: Vec<u32>, vocab_size: usize) -> Result<GreenList> {
        if vocab_size < 2 {
            return Err(Error::VocabTooSmall(vocab_size));
        }
        if members.is_empty() {
            return Err(Error::EmptyGreenList {
                gamma: 0.0,
                vocab_size,
            });
        }
        let mut mask = vec![false; vocab_size];
        let mut prev: Option<u32> = None;
        for &t in &members {
            if t as usize >= vocab_size {
                return Err(Error::TokenOutOfVocab {
                    token: t,
                    vocab_size,
                });
            }
            if prev.is_some_and(|p| p >= t) {
                return Err(Error::InvalidGreenList(
                    "members must be strictly increasing".into(),
                ));
            }
            prev = Some(t);
            mask[t as usize] = true;
        }
        let gamma = members.len() as f64 / vocab_size as f64;
        Ok(GreenList {
            members,
            mask,
            vocab_size,
            gamma,
        })
    }
}

/// Selects the floor(gamma * vocab_size) tokens with the smallest keyed
/// scores, ties broken by ascending token id.
pub fn green_list(window: &[u32], key: HashKey, gamma: f64, vocab_size: usize) -> Result<GreenList> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidGamma(gamma));
    }
    if vocab_size < 2 {
        return Err(Error::VocabTooSmall(vocab_size));
    }
    if window.is_empty() {
        return Err(Error::EmptyWindow);
    }
    let size = (gamma * vocab_size as f64).floor() as usize;
    if size == 0 {
        return Err(Error::EmptyGreenList { gamma, vocab_size });
    }
    let digest = context_digest(window, key);
    // (score, id) pairs have no duplicate ids, so the tuple order realizes
    // the tie rule exactly.
    let mut scored: Vec<(u64, u32)> = (0..vocab_size as u32)
        .map(|t| (mix64(digest ^ mix64(t as u64 ^ TOKEN_SALT)), t))
        .collect();
    scored.select_nth_unstable(size - 1);
    let mut members: Vec<u32> = scored[..size].iter().map(|&(_, t)| t).collect();
    members.sort_unstable();
    let mut mask = vec![false; vocab_size];
    for &t in &members {
        mask[t as usize] = true;
    }
    Ok(GreenList {
        members,
        mask,
        vocab_size,
        gamma,
    })
}

/// Checked membership: errors on out-of-vocabulary tokens.
pub fn is_green(token: u32, list: &GreenList) -> Result<bool> {
    if token as usize >= list.vocab_size {
        return Err(Error::TokenOutOfVocab {
            token,
            vocab_size: list.vocab_size,
        });
    }
    Ok(list.contains(token))
}

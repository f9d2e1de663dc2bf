//! Unit and pair tokenizers over a small symbol alphabet.
//!
//! The unit kind maps each symbol to one token; the pair kind maps each
//! adjacent symbol pair to one token (vocabulary = alphabet squared). Two
//! deliberately different granularities force nontrivial token-boundary
//! alignment when a detection dataset is rebuilt in another vocabulary.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reserved symbol appended to odd-length strings before pair encoding.
pub const PAD_SYMBOL: u32 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenizerKind {
    Unit,
    Pair,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tokenizer {
    kind: TokenizerKind,
    alphabet_size: usize,
}

impl Tokenizer {
    pub fn new(kind: TokenizerKind, alphabet_size: usize) -> Result<Self> {
        if alphabet_size < 2 {
            return Err(Error::VocabTooSmall(alphabet_size));
        }
        Ok(Tokenizer {
            kind,
            alphabet_size,
        })
    }

    pub fn unit(alphabet_size: usize) -> Result<Self> {
        Self::new(TokenizerKind::Unit, alphabet_size)
    }

    pub fn pair(alphabet_size: usize) -> Result<Self> {
        Self::new(TokenizerKind::Pair, alphabet_size)
    }

    pub fn kind(&self) -> TokenizerKind {
        self.kind
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet_size
    }

    pub fn vocab_size(&self) -> usize {
        match self.kind {
            TokenizerKind::Unit => self.alphabet_size,
            TokenizerKind::Pair => self.alphabet_size * self.alphabet_size,
        }
    }

    /// Symbols consumed per token.
    pub fn stride(&self) -> usize {
        match self.kind {
            TokenizerKind::Unit => 1,
            TokenizerKind::Pair => 2,
        }
    }

    /// Whether a prefix of `pos` symbols ends on a whole token.
    pub fn is_boundary(&self, pos: usize) -> bool {
        pos % self.stride() == 0
    }

    pub fn encode(&self, symbols: &[u32]) -> Result<Vec<u32>> {
        for &s in symbols {
            if s as usize >= self.alphabet_size {
                return Err(Error::UnknownSymbol {
                    symbol: s,
                    alphabet_size: self.alphabet_size,
                });
            }
        }
        match self.kind {
            TokenizerKind::Unit => Ok(symbols.to_vec()),
            TokenizerKind::Pair => {
                let a = self.alphabet_size as u32;
                let mut out = Vec::with_capacity(symbols.len() / 2 + 1);
                let mut chunks = symbols.chunks_exact(2);
                for c in &mut chunks {
                    out.push(c[0] * a + c[1]);
                }
                if let [last] = chunks.remainder() {
                    out.push(last * a + PAD_SYMBOL);
                }
                Ok(out)
            }
        }
    }

    /// Inverse of `encode` after the padding convention: an odd-length
    /// string round-trips to itself plus one trailing pad symbol.
    pub fn decode(&self, tokens: &[u32]) -> Result<Vec<u32>> {
        let vocab = self.vocab_size();
        for &t in tokens {
            if t as usize >= vocab {
                return Err(Error::TokenOutOfVocab {
                    token: t,
                    vocab_size: vocab,
                });
            }
        }
        match self.kind {
            TokenizerKind::Unit => Ok(tokens.to_vec()),
            TokenizerKind::Pair => {
                let a = self.alphabet_size as u32;
                let mut out = Vec::with_capacity(tokens.len() * 2);
                for &t in tokens {
                    out.push(t / a);
                    out.push(t % a);
                }
                Ok(out)
            }
        }
    }
}

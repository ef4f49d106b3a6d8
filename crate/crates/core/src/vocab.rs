//! Feature <-> token mapping and token sequences.
//!
//! Feature `i` is token `i`; the three special tokens follow the feature
//! range: `SOS = n`, `EOS = n + 1`, `PAD = n + 2`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Token = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureTokenVocab {
    n_features: usize,
}

impl FeatureTokenVocab {
    pub fn new(n_features: usize) -> Self {
        assert!(n_features >= 1, "vocabulary needs at least one feature");
        FeatureTokenVocab { n_features }
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    /// Features plus the three special tokens.
    pub fn size(&self) -> usize {
        self.n_features + 3
    }

    pub fn sos(&self) -> Token {
        self.n_features
    }

    pub fn eos(&self) -> Token {
        self.n_features + 1
    }

    pub fn pad(&self) -> Token {
        self.n_features + 2
    }

    pub fn is_feature(&self, t: Token) -> bool {
        t < self.n_features
    }

    /// Longest wire-form sequence: every feature between SOS and EOS.
    pub fn max_len(&self) -> usize {
        self.n_features + 2
    }
}

/// Wire-form token sequence `[SOS, t.., EOS]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    tokens: Vec<Token>,
}

impl TokenSequence {
    /// Wraps interior feature tokens in SOS/EOS without reordering them.
    pub fn from_interior(vocab: &FeatureTokenVocab, interior: &[Token]) -> Result<Self> {
        if interior.is_empty() {
            return Err(Error::InvalidSequence("empty interior".into()));
        }
        if interior.len() > vocab.n_features() {
            return Err(Error::InvalidSequence(format!(
                "interior length {} exceeds {} features",
                interior.len(),
                vocab.n_features()
            )));
        }
        if let Some(&t) = interior.iter().find(|&&t| !vocab.is_feature(t)) {
            return Err(Error::InvalidSequence(format!(
                "token {t} is not a feature token"
            )));
        }
        let mut tokens = Vec::with_capacity(interior.len() + 2);
        tokens.push(vocab.sos());
        tokens.extend_from_slice(interior);
        tokens.push(vocab.eos());
        Ok(TokenSequence { tokens })
    }

    /// Full wire form including SOS and EOS.
    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn interior(&self) -> &[Token] {
        &self.tokens[1..self.tokens.len() - 1]
    }

    pub fn is_canonical(&self) -> bool {
        self.interior().windows(2).all(|w| w[0] < w[1])
    }

    /// Same SOS/EOS around a reordering of this sequence's interior.
    /// Panics if `interior` is not a permutation of [`Self::interior`].
    pub fn permuted(&self, interior: &[Token]) -> TokenSequence {
        let mut a = interior.to_vec();
        let mut b = self.interior().to_vec();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b, "not a permutation of the interior");
        let mut tokens = Vec::with_capacity(self.tokens.len());
        tokens.push(self.tokens[0]);
        tokens.extend_from_slice(interior);
        tokens.push(self.tokens[self.tokens.len() - 1]);
        TokenSequence { tokens }
    }

    /// Sorted, deduplicated copy.
    pub fn canonical(&self) -> TokenSequence {
        let set: BTreeSet<Token> = self.interior().iter().copied().collect();
        let mut tokens = Vec::with_capacity(set.len() + 2);
        tokens.push(self.tokens[0]);
        tokens.extend(set);
        tokens.push(*self.tokens.last().expect("wire form has EOS"));
        TokenSequence { tokens }
    }
}

/// `{1,2,4,7}` -> `[SOS, t1, t2, t4, t7, EOS]`.
pub fn subset_to_sequence(vocab: &FeatureTokenVocab, features: &BTreeSet<usize>) -> Result<TokenSequence> {
    if features.is_empty() {
        return Err(Error::InvalidSubset("empty feature set".into()));
    }
    if let Some(&i) = features.iter().find(|&&i| i >= vocab.n_features()) {
        return Err(Error::InvalidSubset(format!(
            "feature index {i} out of range for {} features",
            vocab.n_features()
        )));
    }
    let interior: Vec<Token> = features.iter().copied().collect();
    TokenSequence::from_interior(vocab, &interior)
}

/// Inverse of [`subset_to_sequence`]; duplicate tokens collapse.
pub fn sequence_to_subset(vocab: &FeatureTokenVocab, seq: &TokenSequence) -> Result<BTreeSet<usize>> {
    let interior = seq.interior();
    if interior.is_empty() {
        return Err(Error::InvalidSequence("empty interior".into()));
    }
    interior
        .iter()
        .map(|&t| {
            if vocab.is_feature(t) {
                Ok(t)
            } else {
                Err(Error::InvalidSequence(format!(
                    "special token {t} inside sequence"
                )))
            }
        })
        .collect()
}

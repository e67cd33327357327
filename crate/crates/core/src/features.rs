//! Sparse token-frequency feature vectors and cosine similarity.
//!
//! These vectors stand in for learned embeddings wherever the search needs a
//! notion of textual similarity: elite trajectory retrieval, tree diversity and
//! summary lookup. Callers that want a different representation can implement
//! [`FeatureProvider`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// L2-normalized sparse vector keyed by token.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(BTreeMap<String, f64>);

impl FeatureVector {
    pub fn from_weights(weights: BTreeMap<String, f64>) -> Self {
        let norm = weights.values().map(|w| w * w).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Self::default();
        }
        Self(weights.into_iter().map(|(k, w)| (k, w / norm)).collect())
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn weights(&self) -> &BTreeMap<String, f64> {
        &self.0
    }

    /// Cosine similarity. Empty vectors have similarity 0 with everything.
    pub fn cosine(&self, other: &FeatureVector) -> f64 {
        let (small, large) = if self.0.len() <= other.0.len() {
            (&self.0, &other.0)
        } else {
            (&other.0, &self.0)
        };
        let dot: f64 = small
            .iter()
            .filter_map(|(k, a)| large.get(k).map(|b| a * b))
            .sum();
        // both sides are unit length, clamp rounding drift
        dot.clamp(-1.0, 1.0)
    }
}

/// Turns free text into a feature vector.
pub trait FeatureProvider: Send + Sync {
    fn features(&self, text: &str) -> FeatureVector;
}

/// Term frequency over lowercase alphanumeric tokens.
#[derive(Debug, Clone, Copy, Default)]
pub struct TokenFrequency;

impl FeatureProvider for TokenFrequency {
    fn features(&self, text: &str) -> FeatureVector {
        let mut counts = BTreeMap::new();
        for token in tokenize(text) {
            *counts.entry(token).or_insert(0.0) += 1.0;
        }
        FeatureVector::from_weights(counts)
    }
}

/// Splits on whitespace and ASCII punctuation, lowercasing each token.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| c.is_whitespace() || (c.is_ascii_punctuation() && c != '_'))
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_text_has_unit_cosine() {
        let a = TokenFrequency.features("unroll the inner loop");
        let b = TokenFrequency.features("Unroll the inner loop.");
        assert!((a.cosine(&b) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_text_has_zero_cosine() {
        let a = TokenFrequency.features("cache tiles");
        let b = TokenFrequency.features("fuse kernels");
        assert_eq!(a.cosine(&b), 0.0);
    }

    #[test]
    fn empty_text_gives_empty_vector() {
        let v = TokenFrequency.features("  ,, ");
        assert!(v.is_empty());
        assert_eq!(v.cosine(&TokenFrequency.features("x")), 0.0);
    }

    #[test]
    fn vectors_are_unit_length() {
        let v = TokenFrequency.features("a a b c c c");
        let norm: f64 = v.weights().values().map(|w| w * w).sum();
        assert!((norm - 1.0).abs() < 1e-12);
    }
}

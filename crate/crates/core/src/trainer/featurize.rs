use std::collections::BTreeMap;
use std::hash::Hasher;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

/// Sparse vector with strictly increasing indices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVector {
    pub dim: usize,
    pub entries: Vec<(u32, f64)>,
}

impl SparseVector {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            entries: Vec::new(),
        }
    }

    pub fn from_dense(values: &[f64]) -> Self {
        Self {
            dim: values.len(),
            entries: values
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(i, &v)| (i as u32, v))
                .collect(),
        }
    }

    pub fn get(&self, index: u32) -> f64 {
        self.entries
            .binary_search_by_key(&index, |&(i, _)| i)
            .map_or(0.0, |pos| self.entries[pos].1)
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Hashed bag-of-words: lowercase, split on anything that is not
/// alphanumeric, bucket each token with seeded FNV-1a, L2-normalize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Featurizer {
    pub dim: usize,
    pub seed: u64,
}

impl Default for Featurizer {
    fn default() -> Self {
        Self {
            dim: 16384,
            seed: 0,
        }
    }
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

impl Featurizer {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "feature dimension must be positive");
        Self { dim, seed }
    }

    pub fn bucket(&self, token: &str) -> u32 {
        let mut h = FnvHasher::default();
        h.write(&self.seed.to_le_bytes());
        h.write(token.as_bytes());
        (h.finish() % self.dim as u64) as u32
    }

    /// Raw token counts per bucket, before normalization.
    pub fn counts(&self, text: &str) -> BTreeMap<u32, f64> {
        let mut counts = BTreeMap::new();
        for tok in tokenize(text) {
            *counts.entry(self.bucket(&tok)).or_insert(0.0) += 1.0;
        }
        counts
    }

    pub fn featurize(&self, text: &str) -> SparseVector {
        let counts = self.counts(text);
        let norm = counts.values().map(|v| v * v).sum::<f64>().sqrt();
        SparseVector {
            dim: self.dim,
            entries: counts.into_iter().map(|(i, v)| (i, v / norm)).collect(),
        }
    }
}

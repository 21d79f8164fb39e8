//! Canonical retained-block sets.
//!
//! A [`BlockSet`] is the set of transformer block indices that are executed
//! during a forward pass; its complement is the skipped set. Indices are
//! 0-based everywhere. The retained list is stored sorted ascending, which
//! makes the comma-joined form a canonical cache key.

use serde::{Deserialize, Serialize};

use crate::config::ConfigError;

/// Set of retained (executed) block indices out of `total_blocks`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockSet {
    total_blocks: usize,
    retained: Vec<usize>,
}

impl BlockSet {
    /// All blocks retained.
    pub fn full(total_blocks: usize) -> Self {
        Self {
            total_blocks,
            retained: (0..total_blocks).collect(),
        }
    }

    /// Build from an explicit retained list. Input order does not matter;
    /// duplicates and out-of-range indices are rejected.
    pub fn from_retained(
        total_blocks: usize,
        retained: impl IntoIterator<Item = usize>,
    ) -> Result<Self, ConfigError> {
        if total_blocks == 0 {
            return Err(ConfigError::EmptyModel);
        }
        let mut retained: Vec<usize> = retained.into_iter().collect();
        retained.sort_unstable();
        for pair in retained.windows(2) {
            if pair[0] == pair[1] {
                return Err(ConfigError::DuplicateIndex { index: pair[0] });
            }
        }
        if let Some(&index) = retained.iter().find(|&&i| i >= total_blocks) {
            return Err(ConfigError::IndexOutOfRange {
                index,
                total_blocks,
            });
        }
        Ok(Self {
            total_blocks,
            retained,
        })
    }

    /// Build from the complement: the blocks to skip.
    pub fn from_skipped(total_blocks: usize, skipped: &[usize]) -> Result<Self, ConfigError> {
        if total_blocks == 0 {
            return Err(ConfigError::EmptyModel);
        }
        let mut mask = vec![true; total_blocks];
        for &index in skipped {
            if index >= total_blocks {
                return Err(ConfigError::IndexOutOfRange {
                    index,
                    total_blocks,
                });
            }
            if !mask[index] {
                return Err(ConfigError::DuplicateIndex { index });
            }
            mask[index] = false;
        }
        Ok(Self {
            total_blocks,
            retained: (0..total_blocks).filter(|&i| mask[i]).collect(),
        })
    }

    pub fn total_blocks(&self) -> usize {
        self.total_blocks
    }

    /// Retained indices, ascending.
    pub fn retained(&self) -> &[usize] {
        &self.retained
    }

    /// Skipped indices, ascending.
    pub fn skipped(&self) -> Vec<usize> {
        let mut mask = vec![true; self.total_blocks];
        for &i in &self.retained {
            mask[i] = false;
        }
        (0..self.total_blocks).filter(|&i| mask[i]).collect()
    }

    pub fn len(&self) -> usize {
        self.retained.len()
    }

    pub fn is_empty(&self) -> bool {
        self.retained.is_empty()
    }

    pub fn contains(&self, block: usize) -> bool {
        self.retained.binary_search(&block).is_ok()
    }

    /// The set with `block` removed, or `None` if it is not retained.
    pub fn without(&self, block: usize) -> Option<Self> {
        let pos = self.retained.binary_search(&block).ok()?;
        let mut retained = self.retained.clone();
        retained.remove(pos);
        Some(Self {
            total_blocks: self.total_blocks,
            retained,
        })
    }

    /// Canonical cache key: sorted retained indices joined by commas.
    /// Permutations of the same set always map to the same key because the
    /// stored form is sorted.
    pub fn key(&self) -> String {
        let mut out = String::new();
        for (i, b) in self.retained.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push_str(&b.to_string());
        }
        out
    }
}

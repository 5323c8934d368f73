use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary ground-truth localisation mask: `mask[n] = 1 ⟺ |d[n]| > ε`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthMask {
    pub mask: Vec<bool>,
    /// Sorted 0-based indices where the mask is set.
    pub indices: Vec<usize>,
}

impl GroundTruthMask {
    pub fn from_disturbance(d: &[f64], epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::Config(format!("mask threshold must be positive, got {epsilon}")));
        }
        let mask: Vec<bool> = d.iter().map(|v| v.abs() > epsilon).collect();
        Ok(Self::from_mask(mask))
    }

    pub fn from_mask(mask: Vec<bool>) -> Self {
        let indices = mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect();
        GroundTruthMask { mask, indices }
    }

    /// Ground-truth disturbance length `L`.
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn n_samples(&self) -> usize {
        self.mask.len()
    }

    pub fn contains(&self, n: usize) -> bool {
        self.mask.get(n).copied().unwrap_or(false)
    }
}

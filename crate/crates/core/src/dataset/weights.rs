use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{TissueClass, NUM_CLASSES};

/// Per-class loss weights, inversely proportional to each class's patch
/// count and normalized to mean 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights(pub [f64; NUM_CLASSES]);

impl ClassWeights {
    pub fn uniform() -> Self {
        ClassWeights([1.0; NUM_CLASSES])
    }

    pub fn get(&self, class: TissueClass) -> f64 {
        self.0[class.index()]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn scaled(&self, k: f64) -> Self {
        ClassWeights(self.0.map(|w| w * k))
    }
}

/// `w[i] = (1/count[i]) · 6 / Σ_j (1/count[j])`. Every class must have at
/// least one training patch.
pub fn compute_class_weights(counts: &[u64; NUM_CLASSES]) -> Result<ClassWeights> {
    if let Some(i) = counts.iter().position(|&c| c == 0) {
        return Err(Error::invalid(format!(
            "class {} has no training patches",
            TissueClass::from_index(i)
        )));
    }
    let raw = counts.map(|c| 1.0 / c as f64);
    // summed in sorted order so the total is independent of class order
    let mut sorted = raw;
    sorted.sort_by(f64::total_cmp);
    let total: f64 = sorted.iter().sum();
    Ok(ClassWeights(raw.map(|r| r * NUM_CLASSES as f64 / total)))
}

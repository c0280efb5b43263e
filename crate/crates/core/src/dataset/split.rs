use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::io::{Cohort, ManifestEntry};
use crate::error::{Error, Result};

/// Fraction of the sampled training images held out for validation.
pub const VALIDATION_FRACTION: f64 = 0.2;

/// Disjoint image-id lists.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

impl DatasetSplit {
    pub fn is_disjoint(&self) -> bool {
        let mut all: Vec<&String> = self
            .train
            .iter()
            .chain(&self.validation)
            .chain(&self.test)
            .collect();
        let n = all.len();
        all.sort();
        all.dedup();
        all.len() == n
    }
}

/// Samples `train_size` images (half from each cohort when every entry
/// carries a cohort and both are present), holds out 20% of them for
/// validation and leaves the rest of the corpus, in manifest order, for
/// testing.
pub fn split_dataset(entries: &[ManifestEntry], train_size: usize, seed: u64) -> Result<DatasetSplit> {
    if train_size == 0 || train_size > entries.len() {
        return Err(Error::invalid(format!(
            "training set size {train_size} must be in 1..={}",
            entries.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cohort_of = |c: Cohort| -> Vec<&str> {
        entries
            .iter()
            .filter(|e| e.cohort == Some(c))
            .map(|e| e.id.as_str())
            .collect()
    };
    let mut healthy = cohort_of(Cohort::Healthy);
    let mut glaucoma = cohort_of(Cohort::Glaucoma);
    let balanced =
        healthy.len() + glaucoma.len() == entries.len() && !healthy.is_empty() && !glaucoma.is_empty();

    let mut selected: Vec<&str> = if balanced {
        healthy.shuffle(&mut rng);
        glaucoma.shuffle(&mut rng);
        let want_h = (train_size / 2).min(healthy.len());
        let want_g = (train_size - want_h).min(glaucoma.len());
        let want_h = train_size - want_g;
        healthy[..want_h].iter().chain(&glaucoma[..want_g]).copied().collect()
    } else {
        let mut all: Vec<&str> = entries.iter().map(|e| e.id.as_str()).collect();
        all.shuffle(&mut rng);
        all.truncate(train_size);
        all
    };
    selected.shuffle(&mut rng);

    let n_val = (train_size as f64 * VALIDATION_FRACTION).round() as usize;
    let validation: Vec<String> = selected[..n_val].iter().map(|s| s.to_string()).collect();
    let train: Vec<String> = selected[n_val..].iter().map(|s| s.to_string()).collect();
    let test = entries
        .iter()
        .filter(|e| !selected.contains(&e.id.as_str()))
        .map(|e| e.id.clone())
        .collect();
    Ok(DatasetSplit {
        train,
        validation,
        test,
    })
}

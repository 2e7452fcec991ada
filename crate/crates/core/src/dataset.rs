//! Patient-wise train/test partitioning.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::rng::rng_from_seed;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train_ids: BTreeSet<String>,
    pub test_ids: BTreeSet<String>,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn is_train(&self, id: &str) -> bool {
        self.train_ids.contains(id)
    }
}

/// Shuffles the ids with a seeded Fisher-Yates pass and assigns the first
/// `train_count` to training, the rest to testing.
///
/// Duplicate ids are rejected since a patient may only land on one side.
pub fn split_patients<S: AsRef<str>>(
    patient_ids: &[S],
    train_count: usize,
    seed: u64,
) -> Result<DatasetSplit> {
    let total = patient_ids.len();
    if train_count == 0 || train_count >= total {
        return Err(Error::TrainCountOutOfRange { train_count, total });
    }
    let mut ids: Vec<String> = patient_ids.iter().map(|s| String::from(s.as_ref())).collect();
    let unique: BTreeSet<&String> = ids.iter().collect();
    if unique.len() != total {
        return Err(Error::InvalidArgument("duplicate patient id".into()));
    }
    // Canonical order first so the result does not depend on input order.
    ids.sort();
    ids.shuffle(&mut rng_from_seed(seed));
    let test_ids = ids.split_off(train_count).into_iter().collect();
    Ok(DatasetSplit {
        train_ids: ids.into_iter().collect(),
        test_ids,
        seed,
    })
}

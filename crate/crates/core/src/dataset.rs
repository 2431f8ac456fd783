//! Deterministic train/validation/test splitting of tile collections.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SxlError};

/// Split ratios are fixed at 60/20/20 (train/validation/test).
pub const SPLIT_RATIOS: (f64, f64, f64) = (0.6, 0.2, 0.2);

/// A deterministic 60/20/20 partition of tile identifiers.
///
/// Tile identifiers are `(source-name, row-offset, col-offset)` triples
/// serialized as strings, e.g. `toy:0012` or `dem:0064:0128`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

/// Shuffles `tile_ids` with a seeded generator, then partitions 60/20/20.
/// Train and validation sizes are rounded down; the remainder goes to test.
pub fn split_dataset(tile_ids: &[String], seed: u64) -> Result<DatasetSplit> {
    if tile_ids.len() < 5 {
        return Err(SxlError::invalid(format!(
            "need at least 5 tiles to split, got {}",
            tile_ids.len()
        )));
    }
    let mut ids: Vec<String> = tile_ids.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let n = ids.len();
    let n_train = (n as f64 * SPLIT_RATIOS.0).floor() as usize;
    let n_val = (n as f64 * SPLIT_RATIOS.1).floor() as usize;
    let test = ids.split_off(n_train + n_val);
    let validation = ids.split_off(n_train);
    Ok(DatasetSplit {
        train: ids,
        validation,
        test,
        seed,
    })
}

impl DatasetSplit {
    pub fn total(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("toy:{i:04}")).collect()
    }

    #[test]
    fn sizes_follow_floor_rule() {
        let s = split_dataset(&ids(10), 1).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (6, 2, 2));
        let s = split_dataset(&ids(7), 1).unwrap();
        // floor(7*0.6)=4, floor(7*0.2)=1, remainder 2 to test
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (4, 1, 2));
    }

    #[test]
    fn partition_is_exact() {
        let all = ids(23);
        let s = split_dataset(&all, 42).unwrap();
        let mut seen = BTreeSet::new();
        for id in s.train.iter().chain(&s.validation).chain(&s.test) {
            assert!(seen.insert(id.clone()), "duplicate {id}");
        }
        assert_eq!(seen, all.into_iter().collect());
    }

    #[test]
    fn deterministic_given_seed() {
        let all = ids(31);
        assert_eq!(split_dataset(&all, 7).unwrap(), split_dataset(&all, 7).unwrap());
        assert_ne!(split_dataset(&all, 7).unwrap(), split_dataset(&all, 8).unwrap());
    }

    #[test]
    fn too_few_tiles_rejected() {
        assert!(split_dataset(&ids(4), 0).is_err());
    }
}

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{SynthError, SyntheticRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<SyntheticRecord>,
    pub eval: Vec<SyntheticRecord>,
    pub ratio: f64,
    pub shuffle_seed: u64,
}

/// floor(ratio * total), tolerant of products like 0.7 * 10 = 6.999...
pub fn train_size(total: usize, ratio: f64) -> usize {
    ((ratio * total as f64) + 1e-9).floor() as usize
}

/// Seeded shuffle, then the first `train_size` records go to train.
pub fn split_dataset(recs: &[SyntheticRecord], ratio: f64, shuffle_seed: u64) -> Result<DatasetSplit, SynthError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(SynthError::InvalidRatio(ratio));
    }
    if recs.is_empty() {
        return Err(SynthError::EmptyDataset);
    }
    let mut order: Vec<usize> = (0..recs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
    let cut = train_size(recs.len(), ratio);
    let pick = |idx: &[usize]| idx.iter().map(|&i| recs[i].clone()).collect::<Vec<_>>();
    Ok(DatasetSplit {
        train: pick(&order[..cut]),
        eval: pick(&order[cut..]),
        ratio,
        shuffle_seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn records(n: usize) -> Vec<SyntheticRecord> {
        (0..n)
            .map(|i| SyntheticRecord {
                request: format!("request {i}"),
                api_call: "/a".into(),
                description: String::new(),
                method: "get".into(),
                operation: "op".into(),
                parameters: BTreeMap::new(),
            })
            .collect()
    }

    #[test]
    fn split_of_765() {
        let s = split_dataset(&records(765), 0.7, 42).unwrap();
        assert_eq!((s.train.len(), s.eval.len()), (535, 230));
    }

    #[test]
    fn half_and_determinism() {
        let a = split_dataset(&records(10), 0.5, 1).unwrap();
        assert_eq!((a.train.len(), a.eval.len()), (5, 5));
        assert_eq!(a, split_dataset(&records(10), 0.5, 1).unwrap());
        assert_ne!(a.train, split_dataset(&records(10), 0.5, 2).unwrap().train);
    }

    #[test]
    fn preconditions() {
        assert!(split_dataset(&records(3), 0.0, 1).is_err());
        assert!(split_dataset(&records(3), 1.0, 1).is_err());
        assert!(split_dataset(&records(3), f64::NAN, 1).is_err());
        assert!(split_dataset(&[], 0.5, 1).is_err());
    }

    #[test]
    fn floor_guard() {
        assert_eq!(train_size(10, 0.7), 7);
        assert_eq!(train_size(765, 0.7), 535);
        assert_eq!(train_size(3, 0.5), 1);
    }

    proptest! {
        #[test]
        fn partition_and_size_laws(n in 1usize..300, ratio in 0.01f64..0.99, seed in any::<u64>()) {
            let recs = records(n);
            let s = split_dataset(&recs, ratio, seed).unwrap();
            prop_assert_eq!(s.train.len(), (ratio * n as f64 + 1e-9).floor() as usize);
            let mut all: Vec<String> = s.train.iter().chain(&s.eval).map(|r| r.request.clone()).collect();
            all.sort();
            let mut expected: Vec<String> = recs.iter().map(|r| r.request.clone()).collect();
            expected.sort();
            prop_assert_eq!(all, expected);
        }
    }
}

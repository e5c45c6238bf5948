use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::seed::derive_seed;
use crate::{Error, Result};

/// Patient-level train/test partition with cross-validation folds over the
/// training ids. Serializes to the split manifest layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub test: Vec<String>,
    #[serde(default)]
    pub folds: Vec<Vec<String>>,
    pub seed: u64,
}

impl DatasetSplit {
    /// Check disjointness of train/test and that folds partition train.
    pub fn validate(&self) -> Result<()> {
        let train: HashSet<&str> = self.train.iter().map(String::as_str).collect();
        if train.len() != self.train.len() {
            return Err(Error::Validation("duplicate id in train set".into()));
        }
        if let Some(id) = self.test.iter().find(|id| train.contains(id.as_str())) {
            return Err(Error::Validation(format!("id {id} is in both train and test")));
        }
        if self.folds.is_empty() {
            return Ok(());
        }
        let mut seen = HashSet::new();
        for id in self.folds.iter().flatten() {
            if !train.contains(id.as_str()) {
                return Err(Error::Validation(format!("fold id {id} is not a training id")));
            }
            if !seen.insert(id.as_str()) {
                return Err(Error::Validation(format!("id {id} appears in more than one fold")));
            }
        }
        if seen.len() != train.len() {
            return Err(Error::Validation("folds do not cover every training id".into()));
        }
        Ok(())
    }

    /// Attach `k` folds over the training ids.
    pub fn with_folds(mut self, k: usize) -> Result<Self> {
        self.folds = make_folds(&self.train, k, self.seed)?;
        Ok(self)
    }
}

fn check_unique(ids: &[String]) -> Result<()> {
    let mut seen = HashSet::new();
    match ids.iter().find(|id| !seen.insert(id.as_str())) {
        Some(id) => Err(Error::Validation(format!("duplicate id {id}"))),
        None => Ok(()),
    }
}

fn shuffled_positions(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

/// Random patient-level split with `round(test_fraction * n)` test ids.
/// Both sides keep the input order of `ids`.
pub fn split_patients(ids: &[String], test_fraction: f64, seed: u64) -> Result<DatasetSplit> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Validation(format!("test fraction {test_fraction} not in (0, 1)")));
    }
    check_unique(ids)?;
    let n_test = (test_fraction * ids.len() as f64).round() as usize;
    let mut is_test = vec![false; ids.len()];
    for &i in shuffled_positions(ids.len(), derive_seed(seed, &[0])).iter().take(n_test) {
        is_test[i] = true;
    }
    let pick = |want: bool| {
        ids.iter()
            .zip(&is_test)
            .filter(|(_, &t)| t == want)
            .map(|(id, _)| id.clone())
            .collect()
    };
    Ok(DatasetSplit { train: pick(false), test: pick(true), folds: Vec::new(), seed })
}

/// Shuffle and deal `train_ids` round-robin into `k` folds whose sizes
/// differ by at most one. Each fold keeps the input order.
pub fn make_folds(train_ids: &[String], k: usize, seed: u64) -> Result<Vec<Vec<String>>> {
    if k < 2 {
        return Err(Error::Validation(format!("need at least 2 folds, got {k}")));
    }
    if k > train_ids.len() {
        return Err(Error::Size(format!("{k} folds over {} training ids", train_ids.len())));
    }
    check_unique(train_ids)?;
    let order = shuffled_positions(train_ids.len(), derive_seed(seed, &[1]));
    let fold_of: HashMap<usize, usize> = order.iter().enumerate().map(|(r, &i)| (i, r % k)).collect();
    let mut folds = vec![Vec::new(); k];
    for (i, id) in train_ids.iter().enumerate() {
        folds[fold_of[&i]].push(id.clone());
    }
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("study_{i:03}")).collect()
    }

    #[test]
    fn cohort_of_150_splits_120_30() {
        let s = split_patients(&ids(150), 0.2, 11).unwrap().with_folds(3).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (120, 30));
        assert!(s.folds.iter().all(|f| f.len() == 40));
        s.validate().unwrap();
    }

    #[test]
    fn fold_remainders_are_balanced() {
        let mut sizes: Vec<usize> = make_folds(&ids(7), 3, 5).unwrap().iter().map(Vec::len).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![2, 2, 3]);
    }

    #[test]
    fn deterministic_under_seed() {
        assert_eq!(split_patients(&ids(10), 0.2, 3).unwrap(), split_patients(&ids(10), 0.2, 3).unwrap());
        assert_eq!(make_folds(&ids(10), 3, 3).unwrap(), make_folds(&ids(10), 3, 3).unwrap());
    }

    #[test]
    fn errors() {
        let mut dup = ids(4);
        dup.push("study_001".into());
        assert!(matches!(split_patients(&dup, 0.2, 0), Err(Error::Validation(_))));
        assert!(matches!(split_patients(&ids(4), 1.0, 0), Err(Error::Validation(_))));
        assert!(matches!(make_folds(&ids(2), 3, 0), Err(Error::Size(_))));
        assert!(matches!(make_folds(&ids(5), 1, 0), Err(Error::Validation(_))));
    }

    #[test]
    fn validate_catches_overlap() {
        let mut s = split_patients(&ids(10), 0.2, 1).unwrap().with_folds(2).unwrap();
        s.test.push(s.train[0].clone());
        assert!(s.validate().is_err());
    }

    #[test]
    fn manifest_json_layout() {
        let s = split_patients(&ids(5), 0.2, 9).unwrap().with_folds(2).unwrap();
        let v: serde_json::Value = serde_json::to_value(&s).unwrap();
        for key in ["train", "test", "folds", "seed"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(serde_json::from_value::<DatasetSplit>(v).unwrap(), s);
    }
}

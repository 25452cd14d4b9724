use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

/// Indices into the source dataset, ascending within each split.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified split: every class is shuffled on its own and cut by the ratios,
/// rounding the train and validation shares to the nearest count.
pub fn split_indices(labels: &[usize], ratios: (f64, f64, f64), seed: u64) -> Result<SplitIndices> {
    let (rt, rv, rs) = ratios;
    if [rt, rv, rs].iter().any(|r| !r.is_finite() || *r < 0.0) || ((rt + rv + rs) - 1.0).abs() > 1e-9 {
        return Err(Error::Param(format!("split ratios {ratios:?} must be nonnegative and sum to 1")));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = SplitIndices {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for class in 0..n_classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        let n = idx.len();
        let n_train = (rt * n as f64).round() as usize;
        let n_val = ((rv * n as f64).round() as usize).min(n - n_train.min(n));
        let n_test = n.saturating_sub(n_train + n_val);
        for (count, ratio, name) in [(n_train, rt, "train"), (n_val, rv, "val"), (n_test, rs, "test")] {
            if ratio > 0.0 && count == 0 {
                return Err(Error::Data(format!("class {class} with {n} instances is too small for a {name} share")));
            }
        }
        idx.shuffle(&mut rng);
        out.train.extend_from_slice(&idx[..n_train]);
        out.val.extend_from_slice(&idx[n_train..n_train + n_val]);
        out.test.extend_from_slice(&idx[n_train + n_val..]);
    }
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

pub fn split(dataset: &Dataset, ratios: (f64, f64, f64), seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let s = split_indices(&dataset.labels, ratios, seed)?;
    Ok((dataset.subset(&s.train), dataset.subset(&s.val), dataset.subset(&s.test)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_sixty_twenty_twenty() {
        let labels: Vec<usize> = (0..100).map(|i| i % 2).collect();
        let s = split_indices(&labels, (0.6, 0.2, 0.2), 4).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (60, 20, 20));
        for part in [&s.train, &s.val, &s.test] {
            let ones = part.iter().filter(|&&i| labels[i] == 1).count();
            assert_eq!(ones * 2, part.len());
        }
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(s, split_indices(&labels, (0.6, 0.2, 0.2), 4).unwrap());
        assert_ne!(s, split_indices(&labels, (0.6, 0.2, 0.2), 5).unwrap());
    }

    #[test]
    fn small_class_or_bad_ratios_fail() {
        assert!(split_indices(&[0, 0, 1, 1], (0.6, 0.2, 0.2), 0).is_err());
        assert!(split_indices(&[0, 1], (0.5, 0.6, 0.0), 0).is_err());
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;

const SPLIT_STREAM: u64 = 0x5350_4c49;
const SHOT_STREAM: u64 = 0x5348_4f54;

/// Disjoint train/validation/test index lists over `0..n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

impl DatasetSplit {
    /// `(train, validation, test)` sizes for `n` records:
    /// `floor(0.65n + 0.5)`, `floor(0.15n + 0.5)`, remainder.
    pub fn sizes(n: usize) -> (usize, usize, usize) {
        let train = (0.65 * n as f64 + 0.5).floor() as usize;
        let validation = (0.15 * n as f64 + 0.5).floor() as usize;
        (train, validation, n - train - validation)
    }
}

/// Shuffles `0..n` with the seed and cuts it 65/15/20. Each part is
/// returned in ascending index order.
pub fn split_dataset(n: usize, seed: u64) -> Result<DatasetSplit> {
    if n < 5 {
        return Err(Error::DatasetTooSmall { n, min: 5 });
    }
    let mut order: Vec<usize> = (0..n).collect();
    SeededRng::derive(seed, SPLIT_STREAM).shuffle(&mut order);
    let (n_train, n_val, _) = DatasetSplit::sizes(n);
    let mut train = order[..n_train].to_vec();
    let mut validation = order[n_train..n_train + n_val].to_vec();
    let mut test = order[n_train + n_val..].to_vec();
    train.sort_unstable();
    validation.sort_unstable();
    test.sort_unstable();
    Ok(DatasetSplit { train, validation, test, seed })
}

/// Picks `k/2` positives and `k/2` negatives from `train_indices`.
///
/// `labels` is indexed by record index, not by position in
/// `train_indices`. The result is shuffled so classes interleave.
pub fn sample_few_shot(train_indices: &[usize], labels: &[u8], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k % 2 != 0 {
        return Err(Error::Sampling(format!("shot count {k} is odd")));
    }
    let half = k / 2;
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for &i in train_indices {
        match labels.get(i) {
            Some(1) => pos.push(i),
            Some(0) => neg.push(i),
            Some(_) => return Err(Error::Sampling(format!("label of record {i} is not binary"))),
            None => return Err(Error::Sampling(format!("record {i} has no label"))),
        }
    }
    if pos.len() < half || neg.len() < half {
        return Err(Error::Sampling(format!(
            "need {half} of each class, train split has {} positive and {} negative",
            pos.len(),
            neg.len()
        )));
    }
    let mut rng = SeededRng::derive(seed, SHOT_STREAM);
    rng.shuffle(&mut pos);
    rng.shuffle(&mut neg);
    let mut shots: Vec<usize> = pos[..half].iter().chain(&neg[..half]).copied().collect();
    rng.shuffle(&mut shots);
    Ok(shots)
}

//! ROC-AUC in the Mann-Whitney form.

use crate::error::{Error, Result};

fn check(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::arg(format!("{} scores but {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::arg("scores contain NaN"));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::arg("labels must be 0 or 1"));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedAuc(format!("{pos} positives and {neg} negatives")));
    }
    Ok((pos, neg))
}

/// Rank-sum AUC with average ranks for tied scores, O(n log n).
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = check(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of 1-based ranks of the positives, doubled to stay integral.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean (i + j + 2) / 2
        let positives = order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as u128;
        twice_rank_sum += positives * (i + j + 2) as u128;
        i = j + 1;
    }
    let (p, n) = (pos as u128, neg as u128);
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(twice_u as f64 / (2 * p * n) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// O(P·N) pair count: wins plus half the ties over all (positive,
    /// negative) pairs.
    fn auc_pairwise(scores: &[f64], labels: &[u8]) -> Result<f64> {
        let (pos, neg) = check(scores, labels)?;
        let mut twice_wins: u64 = 0;
        let of_class = |c: u8| scores.iter().zip(labels).filter(move |&(_, &l)| l == c).map(|(&s, _)| s);
        for si in of_class(1) {
            for sj in of_class(0) {
                twice_wins += match si.partial_cmp(&sj).expect("no NaN") {
                    std::cmp::Ordering::Greater => 2,
                    std::cmp::Ordering::Equal => 1,
                    std::cmp::Ordering::Less => 0,
                };
            }
        }
        Ok(twice_wins as f64 / (2 * pos * neg) as f64)
    }

    #[test]
    fn worked_examples() {
        assert_eq!(auc(&[0.9, 0.8, 0.1], &[1, 1, 0]).unwrap(), 1.0);
        assert_eq!(auc(&[0.3; 6], &[1, 0, 1, 0, 0, 1]).unwrap(), 0.5);
        assert_eq!(auc(&[0.9, 0.4, 0.6, 0.2], &[1, 0, 1, 0]).unwrap(), 1.0);
        assert_eq!(auc(&[0.9, 0.4, 0.6, 0.2], &[0, 1, 0, 1]).unwrap(), 0.0);
    }

    #[test]
    fn errors() {
        assert!(matches!(auc(&[0.1, 0.2], &[1, 1]), Err(Error::UndefinedAuc(_))));
        assert!(matches!(auc(&[0.1], &[1, 0]), Err(Error::Argument(_))));
        assert!(matches!(auc(&[f64::NAN, 0.2], &[1, 0]), Err(Error::Argument(_))));
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
        (2usize..50).prop_flat_map(|n| {
            (
                prop::collection::vec((0u8..6).prop_map(|v| f64::from(v) / 5.0), n),
                prop::collection::vec(0u8..2, n),
            )
        })
    }

    proptest! {
        #[test]
        fn matches_pair_count((s, y) in instance()) {
            prop_assume!(y.contains(&0) && y.contains(&1));
            prop_assert_eq!(auc(&s, &y).unwrap(), auc_pairwise(&s, &y).unwrap());
        }

        #[test]
        fn monotone_transform_invariant((s, y) in instance()) {
            prop_assume!(y.contains(&0) && y.contains(&1));
            let t: Vec<f64> = s.iter().map(|v| (3.0 * v).exp() - 7.0).collect();
            prop_assert_eq!(auc(&s, &y).unwrap(), auc(&t, &y).unwrap());
        }
    }
}

//! Classification metrics: confusion matrix and macro-averaged F1.

use crate::error::{Error, Result};

/// `C x C` count matrix; entry `(gold, predicted)`.
pub fn confusion_matrix(
    predictions: &[usize],
    golds: &[usize],
    num_classes: usize,
) -> Result<Vec<Vec<u64>>> {
    if predictions.is_empty() || golds.is_empty() {
        return Err(Error::contract(
            "metrics require at least one example".to_string(),
        ));
    }
    if predictions.len() != golds.len() {
        return Err(Error::contract(format!(
            "{} predictions vs {} golds",
            predictions.len(),
            golds.len()
        )));
    }
    let mut matrix = vec![vec![0u64; num_classes]; num_classes];
    for (&p, &g) in predictions.iter().zip(golds) {
        if p >= num_classes || g >= num_classes {
            return Err(Error::contract(format!(
                "label out of range for {num_classes} classes: pred {p}, gold {g}"
            )));
        }
        matrix[g][p] += 1;
    }
    Ok(matrix)
}

/// Unweighted mean of per-class F1 over all `C` classes. A class with no
/// predictions and no golds contributes 0, matching the usual shared-task
/// scorer convention.
pub fn macro_f1(predictions: &[usize], golds: &[usize], num_classes: usize) -> Result<f64> {
    let matrix = confusion_matrix(predictions, golds, num_classes)?;
    let mut total = 0.0;
    for c in 0..num_classes {
        let tp = matrix[c][c] as f64;
        let fp: f64 = (0..num_classes)
            .filter(|&g| g != c)
            .map(|g| matrix[g][c] as f64)
            .sum();
        let fn_: f64 = (0..num_classes)
            .filter(|&p| p != c)
            .map(|p| matrix[c][p] as f64)
            .sum();
        let denom = 2.0 * tp + fp + fn_;
        if denom > 0.0 {
            total += 2.0 * tp / denom;
        }
    }
    Ok(total / num_classes as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_predictions_score_one() {
        let labels = [0, 1, 2, 0, 1, 2];
        assert_eq!(macro_f1(&labels, &labels, 3).unwrap(), 1.0);
        let m = confusion_matrix(&labels, &labels, 3).unwrap();
        for g in 0..3 {
            for p in 0..3 {
                assert_eq!(m[g][p], if g == p { 2 } else { 0 });
            }
        }
    }

    #[test]
    fn hand_counted_two_class_case() {
        // golds [0,0,1,1], preds [0,1,1,1]:
        // class0: P=1, R=1/2 -> F1=2/3; class1: P=2/3, R=1 -> F1=4/5
        let f1 = macro_f1(&[0, 1, 1, 1], &[0, 0, 1, 1], 2).unwrap();
        let expected = (2.0 / 3.0 + 0.8) / 2.0;
        assert!((f1 - expected).abs() < 1e-12);
        assert!((f1 - 0.733333333333).abs() < 1e-9);
    }

    #[test]
    fn constant_predictor_on_balanced_two_class_set() {
        // always predict 0 on [0,0,1,1]: class0 F1 = 2/3, class1 F1 = 0
        let f1 = macro_f1(&[0, 0, 0, 0], &[0, 0, 1, 1], 2).unwrap();
        assert!((f1 - (2.0 / 3.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn absent_class_contributes_zero() {
        // 3 classes declared, class 2 never appears
        let f1 = macro_f1(&[0, 1], &[0, 1], 3).unwrap();
        assert!((f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_inputs_are_rejected() {
        assert!(macro_f1(&[], &[], 2).is_err());
    }

    #[test]
    fn matrix_total_equals_example_count() {
        let preds = [0, 1, 2, 1, 0, 2, 2];
        let golds = [0, 2, 2, 1, 1, 0, 2];
        let m = confusion_matrix(&preds, &golds, 3).unwrap();
        let total: u64 = m.iter().flatten().sum();
        assert_eq!(total as usize, preds.len());
    }

    proptest! {
        #[test]
        fn macro_f1_is_relabeling_symmetric(
            pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..50),
            perm_seed in 0u64..24,
        ) {
            // apply the same permutation of class labels to both sequences
            let mut perm: Vec<usize> = (0..4).collect();
            // tiny deterministic permutation from the seed
            let mut s = perm_seed;
            for i in (1..4).rev() {
                let j = (s % (i as u64 + 1)) as usize;
                perm.swap(i, j);
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
            }
            let preds: Vec<usize> = pairs.iter().map(|&(p, _)| p).collect();
            let golds: Vec<usize> = pairs.iter().map(|&(_, g)| g).collect();
            let preds_r: Vec<usize> = preds.iter().map(|&p| perm[p]).collect();
            let golds_r: Vec<usize> = golds.iter().map(|&g| perm[g]).collect();
            let a = macro_f1(&preds, &golds, 4).unwrap();
            let b = macro_f1(&preds_r, &golds_r, 4).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn matrix_matches_brute_force_tally(
            pairs in proptest::collection::vec((0usize..3, 0usize..3), 1..40),
        ) {
            let preds: Vec<usize> = pairs.iter().map(|&(p, _)| p).collect();
            let golds: Vec<usize> = pairs.iter().map(|&(_, g)| g).collect();
            let m = confusion_matrix(&preds, &golds, 3).unwrap();
            for g in 0..3 {
                for p in 0..3 {
                    let direct = pairs.iter().filter(|&&(pp, gg)| pp == p && gg == g).count();
                    prop_assert_eq!(m[g][p] as usize, direct);
                }
            }
        }
    }
}

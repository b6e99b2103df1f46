//! ROC AUC (rank-sum form) and evaluation reports.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};

/// One scored burst.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub burst_id: String,
    pub score: f64,
    pub label: u8,
}

/// Evaluation summary for one (variant, split) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub variant: String,
    pub split: String,
    pub roc_auc: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub rows: Vec<ScoreRow>,
}

/// Area under the ROC curve via the Mann-Whitney rank-sum statistic.
///
/// Equals the fraction of (positive, negative) pairs where the positive
/// scores higher, counting ties as 1/2. O(n log n).
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(CoreError::Contract(format!(
            "scores/labels length mismatch: {} vs {}",
            scores.len(),
            labels.len()
        )));
    }
    for &s in scores {
        if !s.is_finite() {
            return Err(CoreError::Numeric(format!("non-finite score {s}")));
        }
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(CoreError::UndefinedMetric(format!(
            "ROC AUC needs both classes, got {n_pos} positives and {n_neg} negatives"
        )));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());

    // Average ranks within tie groups (1-based ranks), then sum the
    // positives' ranks. All intermediates are half-integers, so the rank-sum
    // result is bit-identical to the pairwise count.
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }

    let np = n_pos as f64;
    let nn = n_neg as f64;
    Ok((rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn))
}

/// Build a report over a prediction set, checking that it covers every
/// expected burst exactly.
pub fn evaluate(
    variant: &str,
    split: &str,
    predictions: &[ScoreRow],
    expected_ids: &[String],
) -> Result<EvalReport> {
    let missing: Vec<&String> = expected_ids
        .iter()
        .filter(|id| !predictions.iter().any(|p| &p.burst_id == *id))
        .collect();
    if !missing.is_empty() {
        let mut names = String::new();
        for (i, id) in missing.iter().take(8).enumerate() {
            if i > 0 {
                names.push_str(", ");
            }
            names.push_str(id);
        }
        return Err(CoreError::Contract(format!(
            "predictions missing {} burst(s): {names}",
            missing.len()
        )));
    }
    let scores: Vec<f64> = predictions.iter().map(|p| p.score).collect();
    let labels: Vec<u8> = predictions.iter().map(|p| p.label).collect();
    let auc = roc_auc(&scores, &labels)?;
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    Ok(EvalReport {
        variant: variant.into(),
        split: split.into(),
        roc_auc: auc,
        n_pos,
        n_neg: labels.len() - n_pos,
        rows: predictions.to_vec(),
    })
}

/// O(n^2) pairwise AUC; the independent oracle used by tests and the
/// acceptance suite. Kept here (not in test code) so both the unit tests and
/// the acceptance crate can use the same oracle, but never called by the
/// rank-sum path.
pub fn roc_auc_bruteforce(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(CoreError::UndefinedMetric("both classes required".into()));
    }
    let mut credit = 0.0f64;
    for (i, &li) in labels.iter().enumerate() {
        if li != 1 {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj != 0 {
                continue;
            }
            if scores[i] > scores[j] {
                credit += 1.0;
            } else if scores[i] == scores[j] {
                credit += 0.5;
            }
        }
    }
    Ok(credit / (n_pos as f64 * n_neg as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;
    use rand::Rng;

    #[test]
    fn perfect_separation_scores_one() {
        let auc = roc_auc(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0]).unwrap();
        assert_eq!(auc, 1.0);
    }

    #[test]
    fn all_ties_score_half() {
        let auc = roc_auc(&[0.4; 6], &[1, 0, 1, 0, 1, 0]).unwrap();
        assert_eq!(auc, 0.5);
    }

    // Pairs: (0.9,0.8) yes, (0.9,0.1) yes, (0.7,0.8) no, (0.7,0.1) yes -> 3/4.
    #[test]
    fn worked_example_three_quarters() {
        let auc = roc_auc(&[0.9, 0.8, 0.7, 0.1], &[1, 0, 1, 0]).unwrap();
        assert_eq!(auc, 0.75);
    }

    #[test]
    fn single_class_is_undefined() {
        assert!(matches!(
            roc_auc(&[0.3, 0.4], &[1, 1]),
            Err(CoreError::UndefinedMetric(_))
        ));
    }

    #[test]
    fn complementing_scores_complements_auc() {
        let scores = [0.91, 0.15, 0.5, 0.62, 0.33, 0.7];
        let labels = [1, 0, 0, 1, 0, 1];
        let a = roc_auc(&scores, &labels).unwrap();
        let flipped: Vec<f64> = scores.iter().map(|s| 1.0 - s).collect();
        let b = roc_auc(&flipped, &labels).unwrap();
        assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn duplicating_pairs_preserves_auc() {
        let scores = [0.9, 0.8, 0.7, 0.1, 0.4];
        let labels = [1, 0, 1, 0, 1];
        let a = roc_auc(&scores, &labels).unwrap();
        let mut s2 = scores.to_vec();
        s2.extend_from_slice(&scores);
        let mut l2 = labels.to_vec();
        l2.extend_from_slice(&labels);
        assert_eq!(a, roc_auc(&s2, &l2).unwrap());
    }

    #[test]
    fn monotone_transform_preserves_auc() {
        let scores = [0.9, 0.8, 0.7, 0.1, 0.42, 0.03];
        let labels = [1, 0, 1, 0, 1, 0];
        let a = roc_auc(&scores, &labels).unwrap();
        let transformed: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp()).collect();
        assert_eq!(a, roc_auc(&transformed, &labels).unwrap());
    }

    #[test]
    fn labels_as_scores_give_one() {
        let labels = [1u8, 0, 1, 0, 0, 1];
        let scores: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
        assert_eq!(roc_auc(&scores, &labels).unwrap(), 1.0);
    }

    #[test]
    fn rank_sum_matches_bruteforce_on_random_instances() {
        let mut rng = crate::rng::rng_for(41, crate::rng::Stage::Split, 9);
        for trial in 0..100 {
            let n = 2 + rng.gen_range(0..199);
            let mut scores = Vec::with_capacity(n);
            let mut labels = Vec::with_capacity(n);
            for _ in 0..n {
                // Draw from a small discrete grid so ties actually occur.
                scores.push((rng.gen_range(0..21) as f64) / 20.0);
                labels.push(rng.gen_range(0..2) as u8);
            }
            labels[0] = 1;
            labels[1] = 0;
            let fast = roc_auc(&scores, &labels).unwrap();
            let slow = roc_auc_bruteforce(&scores, &labels).unwrap();
            assert_eq!(fast, slow, "trial {trial}: {fast} vs {slow}");
        }
    }

    #[test]
    fn evaluate_names_missing_bursts() {
        let preds = vec![ScoreRow { burst_id: "a".to_string(), score: 0.7, label: 1 }];
        let expected = vec!["a".to_string(), "b".to_string()];
        let err = evaluate("Baseline", "test", &preds, &expected).unwrap_err();
        match err {
            CoreError::Contract(m) => assert!(m.contains('b'), "{m}"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn evaluate_reports_counts() {
        let preds = vec![
            ScoreRow { burst_id: "a".into(), score: 0.7, label: 1 },
            ScoreRow { burst_id: "b".into(), score: 0.3, label: 0 },
            ScoreRow { burst_id: "c".into(), score: 0.6, label: 1 },
        ];
        let ids: Vec<String> = preds.iter().map(|p| p.burst_id.clone()).collect();
        let report = evaluate("Hybrid_13", "val", &preds, &ids).unwrap();
        assert_eq!(report.n_pos, 2);
        assert_eq!(report.n_neg, 1);
        assert_eq!(report.roc_auc, 1.0);
    }
}

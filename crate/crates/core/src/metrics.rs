//! Classification metrics: ROC/AUC, confusion-matrix scores at a threshold,
//! F1-maximizing threshold selection, and the objective-magnitude histogram.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_both_classes(labels: &[bool]) -> Result<()> {
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::contract(
            "metric needs both classes present".to_string(),
        ));
    }
    Ok(())
}

/// ROC AUC by the rank (Mann-Whitney) formulation — the fraction of
/// (positive, negative) pairs ranked correctly, ties counting one half —
/// plus the ROC curve from sweeping all distinct score thresholds.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<(f64, Vec<(f64, f64)>)> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::contract(format!(
            "roc_auc got {} scores and {} labels",
            scores.len(),
            labels.len()
        )));
    }
    check_both_classes(labels)?;

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].partial_cmp(&scores[j]).unwrap());

    // midranks over ties, ascending by score
    let n = scores.len();
    let mut rank = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            rank[order[k]] = mid;
        }
        i = j + 1;
    }
    let n_pos = labels.iter().filter(|&&l| l).count() as f64;
    let n_neg = n as f64 - n_pos;
    let rank_sum: f64 = rank
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l)
        .map(|(r, _)| r)
        .sum();
    let auc = (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);

    // curve: descending distinct thresholds, predict positive at score >= t
    let mut points = vec![(0.0, 0.0)];
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut idx = n;
    while idx > 0 {
        let mut j = idx;
        while j > 0 && scores[order[j - 1]] == scores[order[idx - 1]] {
            j -= 1;
            if labels[order[j]] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
        }
        idx = j;
        points.push((fp / n_neg, tp / n_pos));
    }
    if *points.last().unwrap() != (1.0, 1.0) {
        points.push((1.0, 1.0));
    }
    Ok((auc, points))
}

/// Confusion-matrix metrics at a threshold (positive iff `score >= θ`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub mcc: f64,
}

fn confusion(scores: &[f64], labels: &[bool], theta: f64) -> (f64, f64, f64, f64) {
    let (mut tp, mut tn, mut fp, mut fn_) = (0.0, 0.0, 0.0, 0.0);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= theta, l) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fn_ += 1.0,
            (false, false) => tn += 1.0,
        }
    }
    (tp, tn, fp, fn_)
}

/// MCC with the zero-denominator convention: any zero factor makes it 0.
/// Precision with no positive predictions is 0.
pub fn threshold_metrics(scores: &[f64], labels: &[bool], theta: f64) -> Result<ThresholdMetrics> {
    check_both_classes(labels)?;
    let (tp, tn, fp, fn_) = confusion(scores, labels, theta);
    let n = tp + tn + fp + fn_;
    let accuracy = (tp + tn) / n;
    let precision = if tp + fp == 0.0 { 0.0 } else { tp / (tp + fp) };
    let recall = if tp + fn_ == 0.0 { 0.0 } else { tp / (tp + fn_) };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    let denom = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    let mcc = if denom == 0.0 {
        0.0
    } else {
        (tp * tn - fp * fn_) / denom.sqrt()
    };
    Ok(ThresholdMetrics {
        accuracy,
        precision,
        recall,
        f1,
        mcc,
    })
}

/// Exhaustive F1-maximizing threshold: candidates are 0, 1 and the midpoints
/// of consecutive distinct sorted scores; ties break toward the smaller θ.
pub fn best_f1_threshold(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_both_classes(labels)?;
    let mut distinct: Vec<f64> = scores.to_vec();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    let mut candidates = vec![0.0];
    for pair in distinct.windows(2) {
        candidates.push((pair[0] + pair[1]) / 2.0);
    }
    candidates.push(1.0);

    let mut best_theta = candidates[0];
    let mut best_f1 = -1.0;
    for &theta in &candidates {
        let m = threshold_metrics(scores, labels, theta)?;
        if m.f1 > best_f1 {
            best_f1 = m.f1;
            best_theta = theta;
        }
    }
    Ok(best_theta)
}

/// Per-bin classification outcome proportions over objective magnitudes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub correct: f64,
    pub wrong_successful: f64,
    pub wrong_failed: f64,
    pub count: usize,
    pub empty: bool,
}

/// Sorts predictions at threshold `theta` into objective-magnitude bins and
/// normalizes each bin to proportions of correct, misclassified-successful
/// and misclassified-failed sequences. Bin `i` covers `[edges[i],
/// edges[i+1])`; the last bin is closed.
pub fn objective_histogram(
    scores: &[f64],
    labels: &[bool],
    objectives_kg: &[f64],
    bin_edges: &[f64],
    theta: f64,
) -> Result<Vec<HistogramBin>> {
    if scores.len() != labels.len() || scores.len() != objectives_kg.len() {
        return Err(Error::contract("objective_histogram length mismatch".to_string()));
    }
    if bin_edges.len() < 2 || bin_edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::contract(format!(
            "bin edges must be strictly increasing, got {bin_edges:?}"
        )));
    }
    let lo = bin_edges[0];
    let hi = *bin_edges.last().unwrap();
    for &o in objectives_kg {
        if o < lo || o > hi {
            return Err(Error::contract(format!(
                "objective {o} kg outside binned range [{lo}, {hi}]"
            )));
        }
    }
    let n_bins = bin_edges.len() - 1;
    let mut bins: Vec<HistogramBin> = (0..n_bins)
        .map(|i| HistogramBin {
            lo: bin_edges[i],
            hi: bin_edges[i + 1],
            correct: 0.0,
            wrong_successful: 0.0,
            wrong_failed: 0.0,
            count: 0,
            empty: true,
        })
        .collect();
    for ((&s, &l), &o) in scores.iter().zip(labels).zip(objectives_kg) {
        let mut idx = match bin_edges.binary_search_by(|e| e.partial_cmp(&o).unwrap()) {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        if idx >= n_bins {
            idx = n_bins - 1; // objective exactly at the top edge
        }
        let bin = &mut bins[idx];
        bin.count += 1;
        let predicted = s >= theta;
        if predicted == l {
            bin.correct += 1.0;
        } else if l {
            bin.wrong_successful += 1.0;
        } else {
            bin.wrong_failed += 1.0;
        }
    }
    for bin in &mut bins {
        if bin.count > 0 {
            bin.empty = false;
            let n = bin.count as f64;
            bin.correct /= n;
            bin.wrong_successful /= n;
            bin.wrong_failed /= n;
        }
    }
    Ok(bins)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    /// Brute-force concordant-pair AUC: the oracle the rank formulation must
    /// match exactly.
    pub fn auc_brute_force(scores: &[f64], labels: &[bool]) -> f64 {
        let mut concordant = 0.0;
        let mut total = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li && !lj {
                    total += 1.0;
                    if scores[i] > scores[j] {
                        concordant += 1.0;
                    } else if scores[i] == scores[j] {
                        concordant += 0.5;
                    }
                }
            }
        }
        concordant / total
    }

    #[test]
    fn perfect_separation_auc_one() {
        let scores = [0.9, 0.8, 0.2, 0.1];
        let labels = [true, true, false, false];
        let (auc, curve) = roc_auc(&scores, &labels).unwrap();
        assert_eq!(auc, 1.0);
        assert_eq!(curve.first(), Some(&(0.0, 0.0)));
        assert_eq!(curve.last(), Some(&(1.0, 1.0)));
    }

    #[test]
    fn hand_counted_auc() {
        let scores = [0.9, 0.8, 0.3, 0.2];
        let labels = [true, false, true, false];
        let (auc, _) = roc_auc(&scores, &labels).unwrap();
        assert_eq!(auc, 0.75);
    }

    #[test]
    fn all_ties_auc_half() {
        let scores = [0.5; 6];
        let labels = [true, false, true, false, true, false];
        let (auc, _) = roc_auc(&scores, &labels).unwrap();
        assert_eq!(auc, 0.5);
    }

    #[test]
    fn single_class_rejected() {
        assert!(roc_auc(&[0.1, 0.2], &[true, true]).is_err());
        assert!(threshold_metrics(&[0.1, 0.2], &[false, false], 0.5).is_err());
    }

    #[test]
    fn rank_auc_matches_brute_force_with_ties() {
        let mut rng = Rng::new(77);
        for round in 0..50 {
            let n = 5 + (round % 40);
            let scores: Vec<f64> = (0..n)
                .map(|_| (rng.uniform() * 8.0).round() / 8.0)
                .collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.bernoulli(0.4)).collect();
            labels[0] = true;
            labels[1] = false;
            let (auc, _) = roc_auc(&scores, &labels).unwrap();
            let brute = auc_brute_force(&scores, &labels);
            assert!((auc - brute).abs() < 1e-12, "auc {auc} vs brute {brute}");
        }
    }

    #[test]
    fn auc_invariant_under_monotone_transform() {
        let mut rng = Rng::new(78);
        let scores: Vec<f64> = (0..60).map(|_| rng.uniform()).collect();
        let mut labels: Vec<bool> = (0..60).map(|_| rng.bernoulli(0.35)).collect();
        labels[0] = true;
        labels[1] = false;
        let (a1, _) = roc_auc(&scores, &labels).unwrap();
        let transformed: Vec<f64> = scores.iter().map(|s| (3.0 * s + 1.0).exp()).collect();
        let (a2, _) = roc_auc(&transformed, &labels).unwrap();
        assert!((a1 - a2).abs() < 1e-12);
    }

    #[test]
    fn roc_curve_monotone() {
        let mut rng = Rng::new(79);
        let scores: Vec<f64> = (0..50).map(|_| (rng.uniform() * 4.0).round() / 4.0).collect();
        let mut labels: Vec<bool> = (0..50).map(|_| rng.bernoulli(0.5)).collect();
        labels[0] = true;
        labels[1] = false;
        let (_, curve) = roc_auc(&scores, &labels).unwrap();
        for w in curve.windows(2) {
            assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1, "{curve:?}");
        }
    }

    #[test]
    fn perfect_predictions_all_ones() {
        let scores = [0.9, 0.8, 0.1];
        let labels = [true, true, false];
        let m = threshold_metrics(&scores, &labels, 0.5).unwrap();
        assert_eq!(
            (m.accuracy, m.precision, m.recall, m.f1, m.mcc),
            (1.0, 1.0, 1.0, 1.0, 1.0)
        );
    }

    #[test]
    fn hand_confusion_matrix() {
        // TP=2, TN=1, FP=1, FN=0
        let scores = [0.9, 0.8, 0.7, 0.1];
        let labels = [true, true, false, false];
        let m = threshold_metrics(&scores, &labels, 0.5).unwrap();
        assert!((m.mcc - 2.0 / 12.0f64.sqrt()).abs() < 1e-12);
        assert!((m.precision - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.recall, 1.0);
        assert!((m.f1 - 0.8).abs() < 1e-12);
    }

    #[test]
    fn degenerate_all_positive_mcc_zero() {
        let scores = [0.9, 0.8, 0.7];
        let labels = [true, false, true];
        let m = threshold_metrics(&scores, &labels, 0.0).unwrap();
        assert_eq!(m.mcc, 0.0);
        assert_eq!(m.recall, 1.0);
    }

    #[test]
    fn metric_ranges() {
        let mut rng = Rng::new(80);
        for _ in 0..30 {
            let n = 20;
            let scores: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.bernoulli(0.5)).collect();
            labels[0] = true;
            labels[1] = false;
            let m = threshold_metrics(&scores, &labels, rng.uniform()).unwrap();
            for v in [m.accuracy, m.precision, m.recall, m.f1] {
                assert!((0.0..=1.0).contains(&v));
            }
            assert!((-1.0..=1.0).contains(&m.mcc));
        }
    }

    #[test]
    fn separable_threshold_is_midpoint() {
        let scores = [0.9, 0.8, 0.4, 0.3];
        let labels = [true, true, false, false];
        let theta = best_f1_threshold(&scores, &labels).unwrap();
        assert!((theta - 0.6).abs() < 1e-12);
        assert_eq!(threshold_metrics(&scores, &labels, theta).unwrap().f1, 1.0);
    }

    #[test]
    fn single_top_positive() {
        let scores = [0.95, 0.6, 0.5];
        let labels = [true, false, false];
        let theta = best_f1_threshold(&scores, &labels).unwrap();
        assert!(theta < 0.95 && theta > 0.6);
        assert_eq!(threshold_metrics(&scores, &labels, theta).unwrap().f1, 1.0);
    }

    #[test]
    fn matches_dense_grid_sweep() {
        let mut rng = Rng::new(81);
        for _ in 0..10 {
            let n = 40;
            let scores: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.bernoulli(0.4)).collect();
            labels[0] = true;
            labels[1] = false;
            let theta = best_f1_threshold(&scores, &labels).unwrap();
            let best = threshold_metrics(&scores, &labels, theta).unwrap().f1;
            let mut grid_best = 0.0f64;
            for k in 0..=10_000 {
                let t = k as f64 * 1e-4;
                let f1 = threshold_metrics(&scores, &labels, t).unwrap().f1;
                grid_best = grid_best.max(f1);
            }
            assert!(
                best >= grid_best - 1e-12,
                "swept {theta}: F1 {best} < grid {grid_best}"
            );
        }
    }

    #[test]
    fn histogram_all_correct() {
        let scores = [0.9, 0.2, 0.8, 0.1];
        let labels = [true, false, true, false];
        let objectives = [-4.0, -2.0, 1.0, -7.0];
        let bins =
            objective_histogram(&scores, &labels, &objectives, &[-8.0, -4.0, 0.0, 2.0], 0.5)
                .unwrap();
        for b in &bins {
            assert_eq!(b.wrong_successful, 0.0);
            assert_eq!(b.wrong_failed, 0.0);
            if !b.empty {
                assert_eq!(b.correct, 1.0);
            }
        }
    }

    #[test]
    fn histogram_proportions_sum_to_one() {
        let mut rng = Rng::new(82);
        let n = 100;
        let scores: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.bernoulli(0.4)).collect();
        let objectives: Vec<f64> = (0..n).map(|_| rng.uniform_in(-8.0, 2.0)).collect();
        let edges = [-8.0, -6.0, -4.0, -3.0, -2.0, -1.0, 0.0, 1.0, 2.0];
        let bins = objective_histogram(&scores, &labels, &objectives, &edges, 0.5).unwrap();
        for b in &bins {
            if !b.empty {
                let total = b.correct + b.wrong_successful + b.wrong_failed;
                assert!((total - 1.0).abs() < 1e-12);
            } else {
                assert_eq!((b.correct, b.wrong_successful, b.wrong_failed), (0.0, 0.0, 0.0));
            }
        }
    }

    #[test]
    fn uncovered_objective_rejected() {
        let err = objective_histogram(&[0.5], &[true], &[-10.0], &[-8.0, 2.0], 0.5).unwrap_err();
        assert!(err.to_string().contains("outside"));
    }
}

//! Stratified cross-validation driver.
//!
//! Folds run as fully independent sessions: each fits normalization on its
//! training split, builds a fresh model from a fold-specific child seed,
//! trains, and scores its test split. Folds may run on a bounded worker pool;
//! aggregation is a deterministic reduction in fold order regardless of
//! completion order.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::arch::{ArchitectureSpec, Modality, MODALITIES, RECURRENT_DEPTH};
use crate::data::folds::stratified_folds;
use crate::data::{batch_input, normalize, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{best_f1_threshold, roc_auc, threshold_metrics, ThresholdMetrics};
use crate::model::{build_model_with, Model, ModelOptions};
use crate::rng::Rng;
use crate::train::{train, TrainConfig};

/// Per-fold evaluation results.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold_index: usize,
    pub auc: f64,
    pub roc_points: Vec<(f64, f64)>,
    /// F1-maximizing threshold on this fold's test scores.
    pub threshold_star: f64,
    pub metrics: ThresholdMetrics,
    /// Mean weighted train loss per epoch.
    pub training_history: Vec<f64>,
    pub test_indices: Vec<usize>,
    pub test_scores: Vec<f64>,
}

/// Fold-order aggregation: means of per-fold metrics, plus pooled-score
/// metrics at a pooled F1-maximizing threshold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean_auc: f64,
    pub mean_metrics: ThresholdMetrics,
    pub pooled_auc: f64,
    pub pooled_threshold: f64,
    pub pooled_metrics: ThresholdMetrics,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrossvalReport {
    pub folds: Vec<FoldReport>,
    pub aggregate: Aggregate,
    /// Test score of every example, gathered across folds.
    pub pooled_scores: Vec<f64>,
    pub labels: Vec<bool>,
}

/// Scores examples (inference mode), batching equal-length sequences.
pub fn score_examples(model: &Model, ds: &Dataset, indices: &[usize]) -> Result<Vec<f64>> {
    let mut buckets: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &i in indices {
        buckets.entry(ds.examples[i].days.len()).or_default().push(i);
    }
    let mut by_index: BTreeMap<usize, f64> = BTreeMap::new();
    for idxs in buckets.values() {
        for chunk in idxs.chunks(256) {
            let input = batch_input(ds, chunk, &model.spec)?;
            let probs = model.predict(&input)?;
            for (&i, p) in chunk.iter().zip(probs) {
                by_index.insert(i, p);
            }
        }
    }
    Ok(indices.iter().map(|i| by_index[i]).collect())
}

fn run_fold(
    fold_index: usize,
    train_idx: &[usize],
    test_idx: &[usize],
    spec: &ArchitectureSpec,
    ds: &Dataset,
    cfg: &TrainConfig,
) -> Result<FoldReport> {
    let (nds, _) = normalize(ds, train_idx)?;
    let fold_rng = Rng::new(cfg.seed).child(&format!("fold{fold_index}"));
    let mut init_rng = fold_rng.child("init");
    let opts = ModelOptions {
        dropout_p: cfg.dropout_p,
        head_batch_norm: false,
    };
    let mut model = build_model_with(spec, &opts, &mut init_rng)?;

    let train_ds = Dataset {
        examples: train_idx.iter().map(|&i| nds.examples[i].clone()).collect(),
        stats: nds.stats.clone(),
    };
    let fold_cfg = TrainConfig {
        seed: fold_rng.child("train").seed(),
        ..cfg.clone()
    };
    let history = train(&mut model, &train_ds, &fold_cfg)?;

    let scores = score_examples(&model, &nds, test_idx)?;
    let labels: Vec<bool> = test_idx.iter().map(|&i| ds.examples[i].label).collect();
    let (auc, roc_points) = roc_auc(&scores, &labels)?;
    let threshold_star = best_f1_threshold(&scores, &labels)?;
    let metrics = threshold_metrics(&scores, &labels, threshold_star)?;
    Ok(FoldReport {
        fold_index,
        auc,
        roc_points,
        threshold_star,
        metrics,
        training_history: history.epoch_loss,
        test_indices: test_idx.to_vec(),
        test_scores: scores,
    })
}

/// Runs stratified k-fold cross-validation of `spec` on the raw (physical)
/// dataset. `workers` bounds fold concurrency; results are identical for any
/// worker count.
pub fn crossvalidate(
    spec: &ArchitectureSpec,
    ds: &Dataset,
    k: usize,
    cfg: &TrainConfig,
    workers: usize,
) -> Result<CrossvalReport> {
    spec.validate()?;
    cfg.validate()?;
    if ds.is_normalized() {
        return Err(Error::contract(
            "crossvalidate expects raw data; folds normalize on their own training splits",
        ));
    }
    let folds = stratified_folds(ds, k, cfg.seed)?;
    let workers = workers.clamp(1, k);

    let results: Mutex<Vec<Option<Result<FoldReport>>>> = Mutex::new((0..k).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= k {
                    break;
                }
                let (train_idx, test_idx) = &folds[i];
                let report = run_fold(i, train_idx, test_idx, spec, ds, cfg)
                    .map_err(|e| Error::data(format!("fold {i}: {e}")));
                results.lock().unwrap()[i] = Some(report);
            });
        }
    });

    let mut fold_reports = Vec::with_capacity(k);
    for slot in results.into_inner().unwrap() {
        fold_reports.push(slot.expect("every fold visited")?);
    }

    let kf = k as f64;
    let mean_auc = fold_reports.iter().map(|f| f.auc).sum::<f64>() / kf;
    let mean_metrics = ThresholdMetrics {
        accuracy: fold_reports.iter().map(|f| f.metrics.accuracy).sum::<f64>() / kf,
        precision: fold_reports.iter().map(|f| f.metrics.precision).sum::<f64>() / kf,
        recall: fold_reports.iter().map(|f| f.metrics.recall).sum::<f64>() / kf,
        f1: fold_reports.iter().map(|f| f.metrics.f1).sum::<f64>() / kf,
        mcc: fold_reports.iter().map(|f| f.metrics.mcc).sum::<f64>() / kf,
    };

    let mut pooled_scores = vec![0.0; ds.len()];
    for f in &fold_reports {
        for (&i, &s) in f.test_indices.iter().zip(&f.test_scores) {
            pooled_scores[i] = s;
        }
    }
    let labels = ds.labels();
    let (pooled_auc, _) = roc_auc(&pooled_scores, &labels)?;
    let pooled_threshold = best_f1_threshold(&pooled_scores, &labels)?;
    let pooled_metrics = threshold_metrics(&pooled_scores, &labels, pooled_threshold)?;

    Ok(CrossvalReport {
        folds: fold_reports,
        aggregate: Aggregate {
            mean_auc,
            mean_metrics,
            pooled_auc,
            pooled_threshold,
            pooled_metrics,
        },
        pooled_scores,
        labels,
    })
}

/// Measures unimodal validation AUC per modality: one stratified holdout
/// split, a small single-modality LSTM each, shared training recipe.
pub fn measure_unimodal_scores(
    ds: &Dataset,
    widths: [usize; RECURRENT_DEPTH],
    head: Vec<usize>,
    cfg: &TrainConfig,
) -> Result<BTreeMap<Modality, f64>> {
    let folds = stratified_folds(ds, 5, cfg.seed ^ 0x756e69)?;
    let (train_idx, val_idx) = &folds[0];
    let mut out = BTreeMap::new();
    for m in MODALITIES {
        let spec = ArchitectureSpec::unimodal_lstm(m, widths).with_head(head.clone());
        let (nds, _) = normalize(ds, train_idx)?;
        let rng_root = Rng::new(cfg.seed).child(&format!("unimodal.{m}"));
        let opts = ModelOptions {
            dropout_p: cfg.dropout_p,
            head_batch_norm: false,
        };
        let mut model = build_model_with(&spec, &opts, &mut rng_root.child("init"))?;
        let train_ds = Dataset {
            examples: train_idx.iter().map(|&i| nds.examples[i].clone()).collect(),
            stats: nds.stats.clone(),
        };
        let fold_cfg = TrainConfig {
            seed: rng_root.child("train").seed(),
            ..cfg.clone()
        };
        train(&mut model, &train_ds, &fold_cfg)?;
        let scores = score_examples(&model, &nds, val_idx)?;
        let labels: Vec<bool> = val_idx.iter().map(|&i| ds.examples[i].label).collect();
        let (auc, _) = roc_auc(&scores, &labels)?;
        out.insert(m, auc);
    }
    Ok(out)
}

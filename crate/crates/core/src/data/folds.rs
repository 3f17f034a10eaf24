//! Stratified fold splitting and class weighting.

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Stratified k-fold split: positives and negatives are shuffled separately
/// and dealt into `k` contiguous chunks, so per-fold class counts differ from
/// exact proportionality by at most one. Deterministic per seed.
pub fn stratified_folds(
    ds: &Dataset,
    k: usize,
    seed: u64,
) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if k < 2 {
        return Err(Error::contract(format!("need k >= 2 folds, got {k}")));
    }
    let mut pos: Vec<usize> = Vec::new();
    let mut neg: Vec<usize> = Vec::new();
    for (i, e) in ds.examples.iter().enumerate() {
        if e.label {
            pos.push(i);
        } else {
            neg.push(i);
        }
    }
    if pos.len() < k || neg.len() < k {
        return Err(Error::contract(format!(
            "stratified {k}-fold needs >= {k} examples per class, got {} positive / {} negative",
            pos.len(),
            neg.len()
        )));
    }
    let mut rng = Rng::new(seed).child("folds");
    rng.shuffle(&mut pos);
    rng.shuffle(&mut neg);

    let chunks = |xs: &[usize]| -> Vec<Vec<usize>> {
        let n = xs.len();
        let base = n / k;
        let extra = n % k;
        let mut out = Vec::with_capacity(k);
        let mut off = 0;
        for f in 0..k {
            let size = base + usize::from(f < extra);
            out.push(xs[off..off + size].to_vec());
            off += size;
        }
        out
    };
    let pos_chunks = chunks(&pos);
    let neg_chunks = chunks(&neg);

    let mut folds = Vec::with_capacity(k);
    for f in 0..k {
        let mut test: Vec<usize> = pos_chunks[f]
            .iter()
            .chain(neg_chunks[f].iter())
            .copied()
            .collect();
        test.sort_unstable();
        let mut train: Vec<usize> = (0..k)
            .filter(|&g| g != f)
            .flat_map(|g| pos_chunks[g].iter().chain(neg_chunks[g].iter()).copied())
            .collect();
        train.sort_unstable();
        folds.push((train, test));
    }
    Ok(folds)
}

/// Balanced class weights `w_c = N / (2 N_c)`: the weighted example counts of
/// the two classes come out equal.
pub fn class_weights(labels: &[bool]) -> Result<(f64, f64)> {
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::contract(
            "class_weights needs both classes present".to_string(),
        ));
    }
    let n = labels.len() as f64;
    Ok((n / (2.0 * n_pos as f64), n / (2.0 * n_neg as f64)))
}

//! Parameter-budget allocation for cross-modal architectures.
//!
//! Unimodal validation scores, raised to an exponent `k` and normalized,
//! become per-modality weights; stream (and cross-connection) widths are
//! scaled by a common factor `α` so the derived architecture matches the
//! baseline LSTM's parameter budget. `count_params` is monotone in `α`, so a
//! bisection plus a greedy ±1 adjustment of the widest stream's final layer
//! lands within tolerance.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::arch::{ArchitectureSpec, CrossKey, Modality, StreamKey, Variant, MODALITIES, RECURRENT_DEPTH};
use crate::error::{Error, Result};
use crate::model::count_params;

/// Unimodal scores (fractions in `(0, 1]`) and the sharpening exponent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityScores {
    pub scores: BTreeMap<Modality, f64>,
    pub k: f64,
}

impl ModalityScores {
    pub fn new(scores: BTreeMap<Modality, f64>, k: f64) -> Result<Self> {
        let s = ModalityScores { scores, k };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.scores.is_empty() {
            return Err(Error::validation("scores", "no modalities"));
        }
        for (m, &s) in &self.scores {
            if !(s > 0.0 && s <= 1.0) {
                return Err(Error::validation(
                    "scores",
                    format!("score for {m} must be in (0, 1], got {s}"),
                ));
            }
        }
        if !(self.k >= 0.0) {
            return Err(Error::validation("k", format!("must be >= 0, got {}", self.k)));
        }
        Ok(())
    }
}

/// `w_m = s_m^k / Σ s^k`, computed in log space so large `k` cannot overflow.
pub fn modality_weights(scores: &ModalityScores) -> Result<BTreeMap<Modality, f64>> {
    scores.validate()?;
    let logs: BTreeMap<Modality, f64> = scores
        .scores
        .iter()
        .map(|(&m, &s)| (m, scores.k * s.ln()))
        .collect();
    let max = logs.values().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exps: BTreeMap<Modality, f64> = logs.iter().map(|(&m, &l)| (m, (l - max).exp())).collect();
    let z: f64 = exps.values().sum();
    Ok(exps.into_iter().map(|(m, e)| (m, e / z)).collect())
}

/// Width-allocation strategy: the three cross-connection flavours plus the
/// weight-sharing baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AllocStrategy {
    A,
    B,
    N,
    ShAll,
    ShWsl,
    ShCut,
}

impl AllocStrategy {
    pub fn variant(self) -> Variant {
        match self {
            AllocStrategy::A => Variant::XlstmA,
            AllocStrategy::B => Variant::XlstmB,
            AllocStrategy::N => Variant::XlstmN,
            AllocStrategy::ShAll => Variant::ShAll,
            AllocStrategy::ShWsl => Variant::ShWsl,
            AllocStrategy::ShCut => Variant::ShCut,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AllocStrategy::A => "A",
            AllocStrategy::B => "B",
            AllocStrategy::N => "N",
            AllocStrategy::ShAll => "ALL",
            AllocStrategy::ShWsl => "WSL",
            AllocStrategy::ShCut => "CUT",
        }
    }
}

impl fmt::Display for AllocStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AllocStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "A" => Ok(AllocStrategy::A),
            "B" => Ok(AllocStrategy::B),
            "N" => Ok(AllocStrategy::N),
            "ALL" => Ok(AllocStrategy::ShAll),
            "WSL" => Ok(AllocStrategy::ShWsl),
            "CUT" => Ok(AllocStrategy::ShCut),
            other => Err(Error::validation(
                "strategy",
                format!("unknown strategy `{other}` (A, B, N, ALL, WSL, CUT)"),
            )),
        }
    }
}

pub const DEFAULT_CROSS_FRACTION: f64 = 0.5;
pub const DEFAULT_TOLERANCE: f64 = 0.02;

/// An allocated architecture with its budget accounting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AllocationResult {
    pub spec: ArchitectureSpec,
    pub achieved_params: usize,
    pub budget: usize,
    pub scale_alpha: f64,
    pub weights: BTreeMap<Modality, f64>,
    pub k: f64,
    pub strategy: AllocStrategy,
    /// False when the greedy adjustment could not reach the tolerance; the
    /// result is then the closest achieved budget.
    pub within_tolerance: bool,
}

fn round_width(x: f64) -> usize {
    (x.round() as usize).max(1)
}

/// Candidate spec at scale `α`.
fn spec_at(
    alpha: f64,
    baseline: &ArchitectureSpec,
    weights: &BTreeMap<Modality, f64>,
    strategy: AllocStrategy,
    cross_fraction: f64,
) -> ArchitectureSpec {
    let base_widths = &baseline.stream_widths[&StreamKey::All];
    let member_weight = |m: Modality| -> f64 {
        match strategy {
            AllocStrategy::A | AllocStrategy::B | AllocStrategy::N => weights[&m],
            // sharing forces equal widths inside the group; uniform profiles
            // absorb into alpha, WSL keeps the steps stream score-driven
            AllocStrategy::ShAll | AllocStrategy::ShCut => 1.0,
            AllocStrategy::ShWsl => {
                if m == Modality::St {
                    weights[&Modality::St]
                } else {
                    (weights[&Modality::Wt] + weights[&Modality::Sl]) / 2.0
                }
            }
        }
    };
    let mods: Vec<Modality> = match strategy {
        AllocStrategy::ShCut => vec![Modality::Wt, Modality::Sl],
        _ => MODALITIES.to_vec(),
    };
    let mut stream_widths: BTreeMap<Modality, Vec<usize>> = BTreeMap::new();
    for &m in &mods {
        let w = member_weight(m);
        let widths: Vec<usize> = base_widths
            .iter()
            .map(|&n| round_width(alpha * w * n as f64))
            .collect();
        stream_widths.insert(m, widths);
    }

    let mut spec = match strategy {
        AllocStrategy::A => {
            let n2 = base_widths[1] as f64;
            let mut z = 0.0;
            for &src in &mods {
                for &dst in &mods {
                    if src != dst {
                        z += weights[&src] * (1.0 - weights[&dst]);
                    }
                }
            }
            let mut crosses = BTreeMap::new();
            for &src in &mods {
                for &dst in &mods {
                    if src != dst {
                        let share = weights[&src] * (1.0 - weights[&dst]) / z;
                        crosses.insert(
                            CrossKey::new(src, dst),
                            round_width(alpha * cross_fraction * n2 * share),
                        );
                    }
                }
            }
            ArchitectureSpec::xlstm(Variant::XlstmA, stream_widths, crosses)
        }
        AllocStrategy::B | AllocStrategy::N => {
            ArchitectureSpec::xlstm(strategy.variant(), stream_widths, BTreeMap::new())
        }
        _ => ArchitectureSpec::sh(strategy.variant(), stream_widths),
    };
    spec.head_widths = baseline.head_widths.clone();
    spec.static_dim = baseline.static_dim;
    spec
}

/// Derives a budget-matched architecture from the baseline LSTM.
pub fn allocate(
    baseline: &ArchitectureSpec,
    scores: &ModalityScores,
    strategy: AllocStrategy,
    cross_fraction: f64,
    tolerance: f64,
) -> Result<AllocationResult> {
    baseline.validate()?;
    if baseline.variant != Variant::Lstm {
        return Err(Error::contract(format!(
            "allocation baseline must be the single-stream lstm variant, got {}",
            baseline.variant
        )));
    }
    let needed: &[Modality] = match strategy {
        AllocStrategy::ShCut => &[Modality::Wt, Modality::Sl],
        _ => &MODALITIES,
    };
    for m in needed {
        if !scores.scores.contains_key(m) {
            return Err(Error::validation("scores", format!("missing score for {m}")));
        }
    }
    if !(0.0..=1.0).contains(&cross_fraction) {
        return Err(Error::validation("cross_fraction", "must be in [0, 1]"));
    }
    let weights = modality_weights(scores)?;
    let budget = count_params(baseline)?;
    let count_at = |alpha: f64| -> Result<usize> {
        count_params(&spec_at(alpha, baseline, &weights, strategy, cross_fraction))
    };

    // bisection bracket over (0, 4]
    let mut lo = 1e-6;
    let mut hi = 4.0;
    let c_lo = count_at(lo)?;
    if c_lo as f64 > budget as f64 * (1.0 + tolerance) {
        return Err(Error::Infeasible(format!(
            "minimum-width architecture already has {c_lo} parameters, budget {budget}"
        )));
    }
    let c_hi = count_at(hi)?;
    if (c_hi as f64) < budget as f64 * (1.0 - tolerance) {
        return Err(Error::Infeasible(format!(
            "architecture at maximum scale has only {c_hi} parameters, budget {budget}"
        )));
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if count_at(mid)? <= budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (c_lo, c_hi) = (count_at(lo)?, count_at(hi)?);
    let alpha = if budget.abs_diff(c_lo) <= budget.abs_diff(c_hi) {
        lo
    } else {
        hi
    };
    let mut spec = spec_at(alpha, baseline, &weights, strategy, cross_fraction);

    // greedy ±1 on the widest stream's final layer
    let widest = *spec
        .stream_widths
        .iter()
        .max_by_key(|(_, w)| w[RECURRENT_DEPTH - 1])
        .map(|(k, _)| k)
        .unwrap();
    let mut achieved = count_params(&spec)?;
    let mut best = (spec.clone(), achieved);
    for _ in 0..1024 {
        let diff = achieved as f64 - budget as f64;
        if diff.abs() / budget as f64 <= tolerance {
            break;
        }
        let w3 = spec.stream_widths.get_mut(&widest).unwrap();
        if diff < 0.0 {
            w3[RECURRENT_DEPTH - 1] += 1;
        } else {
            if w3[RECURRENT_DEPTH - 1] <= 1 {
                break;
            }
            w3[RECURRENT_DEPTH - 1] -= 1;
        }
        achieved = count_params(&spec)?;
        if budget.abs_diff(achieved) < budget.abs_diff(best.1) {
            best = (spec.clone(), achieved);
        } else if budget.abs_diff(achieved) > budget.abs_diff(best.1) {
            // oscillating around the budget: the best seen is final
            break;
        }
    }
    let (spec, achieved) = best;
    spec.validate()?;
    let within = achieved.abs_diff(budget) as f64 / budget as f64 <= tolerance;
    Ok(AllocationResult {
        spec,
        achieved_params: achieved,
        budget,
        scale_alpha: alpha,
        weights,
        k: scores.k,
        strategy,
        within_tolerance: within,
    })
}

/// One cell of a `(k, strategy)` sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepCell {
    pub k: f64,
    pub strategy: AllocStrategy,
    pub outcome: SweepOutcome,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SweepOutcome {
    Ok { result: AllocationResult },
    Err { error: String },
}

/// Allocates one architecture per `(k, strategy)` pair; per-cell failures are
/// recorded and the sweep continues.
pub fn sweep_k(
    baseline: &ArchitectureSpec,
    scores: &BTreeMap<Modality, f64>,
    strategies: &[AllocStrategy],
    k_values: &[f64],
    cross_fraction: f64,
    tolerance: f64,
) -> Result<Vec<SweepCell>> {
    if k_values.is_empty() || strategies.is_empty() {
        return Err(Error::contract("sweep_k needs k values and strategies"));
    }
    let mut cells = Vec::with_capacity(k_values.len() * strategies.len());
    for &k in k_values {
        for &strategy in strategies {
            let outcome = match ModalityScores::new(scores.clone(), k)
                .and_then(|s| allocate(baseline, &s, strategy, cross_fraction, tolerance))
            {
                Ok(result) => SweepOutcome::Ok { result },
                Err(e) => SweepOutcome::Err {
                    error: e.to_string(),
                },
            };
            cells.push(SweepCell {
                k,
                strategy,
                outcome,
            });
        }
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub fn paper_scores(k: f64) -> ModalityScores {
        ModalityScores::new(
            [
                (Modality::Wt, 0.8062),
                (Modality::Sl, 0.8017),
                (Modality::St, 0.7418),
            ]
            .into_iter()
            .collect(),
            k,
        )
        .unwrap()
    }

    #[test]
    fn equal_scores_uniform_weights() {
        let s = ModalityScores::new(
            MODALITIES.iter().map(|&m| (m, 0.7)).collect(),
            17.0,
        )
        .unwrap();
        let w = modality_weights(&s).unwrap();
        for &m in &MODALITIES {
            assert!((w[&m] - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn k_zero_uniform_weights() {
        let w = modality_weights(&paper_scores(0.0)).unwrap();
        for &m in &MODALITIES {
            assert!((w[&m] - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn paper_scores_k30_weights() {
        let w = modality_weights(&paper_scores(30.0)).unwrap();
        assert!((w[&Modality::Wt] - 0.519).abs() < 1e-3, "{w:?}");
        assert!((w[&Modality::Sl] - 0.439).abs() < 1e-3, "{w:?}");
        assert!((w[&Modality::St] - 0.043).abs() < 1e-3, "{w:?}");
        let sum: f64 = w.values().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn weights_monotone_in_k_for_top_modality() {
        let mut prev = 0.0;
        for k in [0.0, 5.0, 10.0, 20.0, 30.0, 60.0] {
            let w = modality_weights(&paper_scores(k)).unwrap();
            assert!(w[&Modality::Wt] >= prev);
            prev = w[&Modality::Wt];
        }
    }

    #[test]
    fn weights_ratio_invariant() {
        let s1 = paper_scores(25.0);
        let scaled: BTreeMap<Modality, f64> =
            s1.scores.iter().map(|(&m, &s)| (m, s * 0.9)).collect();
        let s2 = ModalityScores::new(scaled, 25.0).unwrap();
        let w1 = modality_weights(&s1).unwrap();
        let w2 = modality_weights(&s2).unwrap();
        for &m in &MODALITIES {
            assert!((w1[&m] - w2[&m]).abs() < 1e-9);
        }
        // and the allocated spec is unchanged
        let base = ArchitectureSpec::baseline_lstm();
        let a1 = allocate(&base, &s1, AllocStrategy::B, 0.5, 0.02).unwrap();
        let a2 = allocate(&base, &s2, AllocStrategy::B, 0.5, 0.02).unwrap();
        assert_eq!(a1.spec, a2.spec);
    }

    #[test]
    fn equal_weights_strategy_n_symmetric_within_budget() {
        let s = ModalityScores::new(MODALITIES.iter().map(|&m| (m, 0.8)).collect(), 30.0).unwrap();
        let base = ArchitectureSpec::baseline_lstm();
        let out = allocate(&base, &s, AllocStrategy::N, 0.5, 0.02).unwrap();
        assert!(out.within_tolerance);
        let widths: Vec<&Vec<usize>> = out.spec.stream_widths.values().collect();
        for l in 0..RECURRENT_DEPTH {
            let ws: Vec<usize> = widths.iter().map(|w| w[l]).collect();
            let (min, max) = (ws.iter().min().unwrap(), ws.iter().max().unwrap());
            assert!(max - min <= 1, "layer {l}: {ws:?}");
        }
        assert_eq!(out.achieved_params, count_params(&out.spec).unwrap());
        let rel = out.achieved_params.abs_diff(out.budget) as f64 / out.budget as f64;
        assert!(rel <= 0.02);
    }

    #[test]
    fn strategy_b_floors_steps_and_favours_weight() {
        let base = ArchitectureSpec::baseline_lstm();
        let out = allocate(&base, &paper_scores(30.0), AllocStrategy::B, 0.5, 0.02).unwrap();
        assert!(out.within_tolerance);
        let wt = &out.spec.stream_widths[&StreamKey::Wt];
        let sl = &out.spec.stream_widths[&StreamKey::Sl];
        let st = &out.spec.stream_widths[&StreamKey::St];
        // w_st * 21 ≈ 0.9 rounds to the floor of 1 at alpha ≈ 1
        assert!(st[0] <= 2, "steps layer-1 width {st:?}");
        for l in 0..RECURRENT_DEPTH {
            assert!(wt[l] >= sl[l] && sl[l] > st[l], "layer {l}");
        }
    }

    #[test]
    fn strategy_a_cross_ordering_matches_paper() {
        let base = ArchitectureSpec::baseline_lstm();
        let out = allocate(&base, &paper_scores(30.0), AllocStrategy::A, 0.5, 0.02).unwrap();
        assert!(out.within_tolerance);
        let c = &out.spec.cross_widths;
        let get = |src, dst| c[&CrossKey::new(src, dst)];
        // crosses into the weakest modality (steps) are widest
        assert!(get(Modality::Wt, Modality::St) > get(Modality::Wt, Modality::Sl));
        assert!(get(Modality::Sl, Modality::St) > get(Modality::Sl, Modality::Wt));
    }

    #[test]
    fn strategy_n_total_widths_at_least_a() {
        let base = ArchitectureSpec::baseline_lstm();
        let a = allocate(&base, &paper_scores(30.0), AllocStrategy::A, 0.5, 0.02).unwrap();
        let n = allocate(&base, &paper_scores(30.0), AllocStrategy::N, 0.5, 0.02).unwrap();
        let total = |r: &AllocationResult| -> usize {
            r.spec.stream_widths.values().flat_map(|w| w.iter()).sum()
        };
        assert!(total(&n) >= total(&a), "N {} vs A {}", total(&n), total(&a));
    }

    #[test]
    fn sh_strategies_allocate_within_budget() {
        let base = ArchitectureSpec::baseline_lstm();
        for strategy in [AllocStrategy::ShAll, AllocStrategy::ShWsl, AllocStrategy::ShCut] {
            let out = allocate(&base, &paper_scores(30.0), strategy, 0.5, 0.02).unwrap();
            assert!(out.within_tolerance, "{strategy}");
            out.spec.validate().unwrap();
        }
    }

    #[test]
    fn sweep_grid_shape_and_budgets() {
        let base = ArchitectureSpec::baseline_lstm();
        let scores = paper_scores(0.0).scores;
        let cells = sweep_k(
            &base,
            &scores,
            &[AllocStrategy::A, AllocStrategy::B, AllocStrategy::N],
            &[10.0, 20.0, 30.0],
            0.5,
            0.02,
        )
        .unwrap();
        assert_eq!(cells.len(), 9);
        for cell in &cells {
            match &cell.outcome {
                SweepOutcome::Ok { result } => {
                    assert!(result.within_tolerance, "k={} {}", cell.k, cell.strategy);
                }
                SweepOutcome::Err { error } => {
                    panic!("k={} {} failed: {error}", cell.k, cell.strategy)
                }
            }
        }
    }

    #[test]
    fn sweep_single_cell() {
        let base = ArchitectureSpec::baseline_lstm();
        let cells = sweep_k(&base, &paper_scores(0.0).scores, &[AllocStrategy::B], &[30.0], 0.5, 0.02)
            .unwrap();
        assert_eq!(cells.len(), 1);
    }

    #[test]
    fn weight_stream_share_nondecreasing_in_k() {
        let base = ArchitectureSpec::baseline_lstm();
        let mut prev_share = 0.0;
        for k in [5.0, 15.0, 30.0, 45.0] {
            let out = allocate(&base, &paper_scores(k), AllocStrategy::N, 0.5, 0.02).unwrap();
            let wt = out.spec.stream_widths[&StreamKey::Wt][0] as f64;
            let total: usize = out
                .spec
                .stream_widths
                .values()
                .map(|w| w[0])
                .sum();
            let share = wt / total as f64;
            assert!(share >= prev_share - 1e-9, "k={k}: share {share} < {prev_share}");
            prev_share = share;
        }
    }

    #[test]
    fn infeasible_budget_reports_error() {
        let base = ArchitectureSpec::lstm([1, 1, 1]).with_head(vec![1, 1]);
        let result = allocate(&base, &paper_scores(30.0), AllocStrategy::A, 0.5, 0.02);
        assert!(matches!(result, Err(Error::Infeasible(_))), "{result:?}");
    }

    #[test]
    fn non_lstm_baseline_rejected() {
        let widths: BTreeMap<Modality, Vec<usize>> =
            MODALITIES.map(|m| (m, vec![2, 3, 4])).into();
        let base = ArchitectureSpec::xlstm(Variant::XlstmN, widths, BTreeMap::new());
        assert!(allocate(&base, &paper_scores(30.0), AllocStrategy::N, 0.5, 0.02).is_err());
    }
}

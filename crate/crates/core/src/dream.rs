//! Dream sequences: inputs synthesized to maximize a trained model's
//! confidence in success or failure.
//!
//! Starting from the zero input, gradient ascent with backtracking maximizes
//! `s · logit(I) − λ‖I‖²` over the normalized `T x 10` day matrix, where `s`
//! is +1 for the success target and −1 for failure. Ascending the pre-sigmoid
//! logit rather than the probability avoids vanishing gradients at saturated
//! confidences; the argmax is unchanged because the sigmoid is strictly
//! monotone. Statics stay fixed throughout.

use serde::{Deserialize, Serialize};

use crate::data::{NormStats, SEQ_FEATURES};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::rng::Rng;
use crate::tensor::{Graph, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DreamGoal {
    Success,
    Failure,
}

/// Fixed static features, in physical units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DreamStatics {
    pub height_cm: f64,
    pub gender: f64,
    pub age_band: f64,
    pub objective_kg: f64,
}

impl Default for DreamStatics {
    fn default() -> Self {
        DreamStatics {
            height_cm: 170.0,
            gender: 1.0,
            age_band: 3.0,
            objective_kg: -4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DreamConfig {
    pub target: DreamGoal,
    /// Sequence length of the dreamed input.
    #[serde(rename = "T", default = "default_t")]
    pub t_len: usize,
    /// L2 penalty weight.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_step")]
    pub step_size: f64,
    #[serde(default = "default_iters")]
    pub max_iters: usize,
    #[serde(default)]
    pub statics: DreamStatics,
    #[serde(default)]
    pub seed: u64,
}

fn default_t() -> usize {
    10
}
fn default_lambda() -> f64 {
    5.0
}
fn default_step() -> f64 {
    0.05
}
fn default_iters() -> usize {
    300
}

impl Default for DreamConfig {
    fn default() -> Self {
        DreamConfig {
            target: DreamGoal::Success,
            t_len: default_t(),
            lambda: default_lambda(),
            step_size: default_step(),
            max_iters: default_iters(),
            statics: DreamStatics::default(),
            seed: 0,
        }
    }
}

impl DreamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_len < 1 {
            return Err(Error::validation("T", "must be >= 1"));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::validation("lambda", "must be >= 0"));
        }
        if self.max_iters < 1 {
            return Err(Error::validation("max_iters", "must be >= 1"));
        }
        if !(self.step_size > 0.0) {
            return Err(Error::validation("step_size", "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DreamResult {
    /// Normalized `T x d` dreamed sequence.
    pub sequence: Tensor2,
    /// Penalized objective after every iteration (accepted value carried
    /// over rejected steps); nondecreasing under backtracking.
    pub objective_trace: Vec<f64>,
    /// Model confidence in the configured target at the final iterate.
    pub final_confidence: f64,
    pub iterations: usize,
    /// The ascent hit a non-finite objective and stopped early.
    pub aborted_non_finite: bool,
}

/// Serializable dense matrix (rows, cols, row-major data).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor2 {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor2 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor2 {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Anything the dreamer can ascend: a trained model, or a substitute network
/// in tests.
pub trait DreamTarget {
    /// Input width per day.
    fn input_dim(&self) -> usize;
    /// Pre-sigmoid output and its gradient with respect to the input.
    fn logit_and_grad(&self, input: &Tensor2) -> Result<(f64, Tensor2)>;
}

/// A model with its normalized statics pinned.
pub struct ModelDream<'a> {
    pub model: &'a Model,
    /// Normalized static features, one row.
    pub statics: Vec<f64>,
}

impl DreamTarget for ModelDream<'_> {
    fn input_dim(&self) -> usize {
        self.model.spec.total_input_dim()
    }

    fn logit_and_grad(&self, input: &Tensor2) -> Result<(f64, Tensor2)> {
        let mut g = Graph::new();
        let day_leaves: Vec<_> = (0..input.rows)
            .map(|t| {
                let row = input.data[t * input.cols..(t + 1) * input.cols].to_vec();
                g.leaf(Tensor::row(row), true)
            })
            .collect();
        let statics = g.constant(Tensor::row(self.statics.clone()));
        let mut rng = Rng::new(0);
        let mut pass = self
            .model
            .forward_nodes(g, &day_leaves, statics, &mut rng)?;
        let logit = pass.graph.scalar_value(pass.logit);
        pass.graph.backward(pass.logit)?;
        let mut grad = Tensor2::zeros(input.rows, input.cols);
        for (t, &leaf) in day_leaves.iter().enumerate() {
            let gt = pass.graph.grad_tensor(leaf);
            grad.data[t * input.cols..(t + 1) * input.cols].copy_from_slice(gt.data());
        }
        Ok((logit, grad))
    }
}

const GRAD_NORM_STOP: f64 = 1e-6;
const STEP_FLOOR: f64 = 1e-15;

/// Gradient ascent on `sign(target) · logit − λ‖I‖²` from `I₀ = 0`. A step is
/// accepted only if the objective improves; otherwise the step size halves.
pub fn dream_target(
    target: &dyn DreamTarget,
    cfg: &DreamConfig,
) -> Result<DreamResult> {
    cfg.validate()?;
    let sign = match cfg.target {
        DreamGoal::Success => 1.0,
        DreamGoal::Failure => -1.0,
    };
    let d = target.input_dim();
    let mut current = Tensor2::zeros(cfg.t_len, d);

    let evaluate = |input: &Tensor2| -> Result<(f64, f64, Tensor2)> {
        let (logit, dlogit) = target.logit_and_grad(input)?;
        let penalty: f64 = input.data.iter().map(|v| v * v).sum();
        let objective = sign * logit - cfg.lambda * penalty;
        let mut grad = dlogit;
        for (gi, xi) in grad.data.iter_mut().zip(&input.data) {
            *gi = sign * *gi - 2.0 * cfg.lambda * xi;
        }
        Ok((objective, logit, grad))
    };

    let (mut objective, mut logit, mut grad) = evaluate(&current)?;
    let mut eta = cfg.step_size;
    let mut trace = Vec::with_capacity(cfg.max_iters);
    let mut aborted = false;
    let mut iterations = 0;

    for _ in 0..cfg.max_iters {
        iterations += 1;
        let gnorm = grad.norm();
        if gnorm < GRAD_NORM_STOP || eta < STEP_FLOOR {
            trace.push(objective);
            break;
        }
        let mut candidate = current.clone();
        for (c, g) in candidate.data.iter_mut().zip(&grad.data) {
            *c += eta * g;
        }
        match evaluate(&candidate) {
            Ok((obj_new, logit_new, grad_new)) if obj_new.is_finite() => {
                if obj_new > objective {
                    current = candidate;
                    objective = obj_new;
                    logit = logit_new;
                    grad = grad_new;
                } else {
                    eta *= 0.5;
                }
            }
            _ => {
                aborted = true;
                trace.push(objective);
                break;
            }
        }
        trace.push(objective);
    }

    Ok(DreamResult {
        sequence: current,
        objective_trace: trace,
        final_confidence: 1.0 / (1.0 + (-(sign * logit)).exp()),
        iterations,
        aborted_non_finite: aborted,
    })
}

/// Dreams against a trained model. `stats` must be the normalization fitted
/// for the model; the physical statics in the config are normalized with it
/// (gender untouched).
pub fn dream(model: &Model, cfg: &DreamConfig, stats: &NormStats) -> Result<DreamResult> {
    if model.spec.static_dim != 4 {
        return Err(Error::contract("dream expects the 4 canonical statics"));
    }
    let statics = vec![
        stats.apply("height_cm", cfg.statics.height_cm),
        cfg.statics.gender,
        stats.apply("age_band", cfg.statics.age_band),
        stats.apply("objective_kg", cfg.statics.objective_kg),
    ];
    let target = ModelDream { model, statics };
    dream_target(&target, cfg)
}

/// Renders a dreamed sequence as CSV in physical units: a `date_index` column
/// plus the ten canonical features, one row per day.
pub fn export_dream(result: &DreamResult, stats: &NormStats) -> Result<String> {
    for name in SEQ_FEATURES {
        if stats.get(name).is_none() {
            return Err(Error::contract(format!(
                "normalization stats missing feature `{name}`"
            )));
        }
    }
    if result.sequence.cols != SEQ_FEATURES.len() {
        return Err(Error::contract(format!(
            "dream sequence has {} columns, expected {}",
            result.sequence.cols,
            SEQ_FEATURES.len()
        )));
    }
    let mut out = String::from("date_index");
    for name in SEQ_FEATURES {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for t in 0..result.sequence.rows {
        out.push_str(&t.to_string());
        for (c, name) in SEQ_FEATURES.iter().enumerate() {
            let physical = stats.invert(name, result.sequence.get(t, c));
            out.push(',');
            out.push_str(&format!("{physical}"));
        }
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Fixed linear functional: logit = Σ g ⊗ I. The penalized optimum is
    /// I* = g / (2λ) for the success target.
    struct LinearNet {
        g: Tensor2,
    }

    impl DreamTarget for LinearNet {
        fn input_dim(&self) -> usize {
            self.g.cols
        }

        fn logit_and_grad(&self, input: &Tensor2) -> Result<(f64, Tensor2)> {
            let logit: f64 = self
                .g
                .data
                .iter()
                .zip(&input.data)
                .map(|(a, b)| a * b)
                .sum();
            Ok((logit, self.g.clone()))
        }
    }

    fn linear_net(t_len: usize, d: usize, seed: u64) -> LinearNet {
        let mut rng = crate::rng::Rng::new(seed);
        LinearNet {
            g: Tensor2 {
                rows: t_len,
                cols: d,
                data: (0..t_len * d).map(|_| rng.normal()).collect(),
            },
        }
    }

    #[test]
    fn linear_net_converges_to_closed_form() {
        let net = linear_net(4, 10, 3);
        let cfg = DreamConfig {
            lambda: 5.0,
            t_len: 4,
            max_iters: 2000,
            step_size: 0.05,
            ..Default::default()
        };
        let out = dream_target(&net, &cfg).unwrap();
        for (x, g) in out.sequence.data.iter().zip(&net.g.data) {
            let expect = g / (2.0 * cfg.lambda);
            assert!((x - expect).abs() < 1e-6, "{x} vs {expect}");
        }
    }

    #[test]
    fn huge_lambda_shrinks_the_dream_to_zero() {
        let net = linear_net(3, 10, 4);
        let cfg = DreamConfig {
            lambda: 1e6,
            t_len: 3,
            max_iters: 2000,
            step_size: 0.05,
            ..Default::default()
        };
        let out = dream_target(&net, &cfg).unwrap();
        assert!(out.sequence.norm() < 1e-4, "norm {}", out.sequence.norm());
    }

    #[test]
    fn doubling_lambda_halves_the_optimum_norm() {
        let net = linear_net(3, 10, 5);
        let run = |lambda: f64| {
            let cfg = DreamConfig {
                lambda,
                t_len: 3,
                max_iters: 4000,
                step_size: 0.02,
                ..Default::default()
            };
            dream_target(&net, &cfg).unwrap().sequence.norm()
        };
        let n1 = run(2.0);
        let n2 = run(4.0);
        assert!((n1 - 2.0 * n2).abs() < 1e-5, "{n1} vs 2*{n2}");
    }

    #[test]
    fn trace_nondecreasing_under_backtracking() {
        let net = linear_net(4, 10, 6);
        let cfg = DreamConfig {
            lambda: 5.0,
            t_len: 4,
            max_iters: 500,
            step_size: 1.0,
            ..Default::default()
        };
        let out = dream_target(&net, &cfg).unwrap();
        for w in out.objective_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-12, "{:?}", out.objective_trace);
        }
    }

    #[test]
    fn export_round_trip_and_shape() {
        use crate::data::{FeatureStats, NormStats};
        let mut map = std::collections::BTreeMap::new();
        for (i, name) in SEQ_FEATURES.iter().enumerate() {
            map.insert(
                name.to_string(),
                FeatureStats {
                    mean: 10.0 * i as f64,
                    std: 1.0 + i as f64,
                },
            );
        }
        let stats = NormStats(map);
        let mut rng = crate::rng::Rng::new(9);
        let result = DreamResult {
            sequence: Tensor2 {
                rows: 10,
                cols: 10,
                data: (0..100).map(|_| rng.normal()).collect(),
            },
            objective_trace: vec![0.0],
            final_confidence: 0.5,
            iterations: 1,
            aborted_non_finite: false,
        };
        let csv = export_dream(&result, &stats).unwrap();
        let lines: Vec<&str> = csv.trim_end().lines().collect();
        assert_eq!(lines.len(), 11); // header + 10 days
        assert_eq!(lines[0].split(',').count(), 11);

        // round trip: normalize(denormalize(z)) == z
        for (t, line) in lines[1..].iter().enumerate() {
            let cells: Vec<f64> = line
                .split(',')
                .skip(1)
                .map(|c| c.parse().unwrap())
                .collect();
            for (c, name) in SEQ_FEATURES.iter().enumerate() {
                let z = stats.apply(name, cells[c]);
                assert!((z - result.sequence.get(t, c)).abs() < 1e-9);
            }
        }

        // the zero sequence denormalizes to the per-feature means
        let zero = DreamResult {
            sequence: Tensor2::zeros(2, 10),
            objective_trace: vec![0.0],
            final_confidence: 0.5,
            iterations: 1,
            aborted_non_finite: false,
        };
        let csv = export_dream(&zero, &stats).unwrap();
        let second = csv.lines().nth(1).unwrap();
        let cells: Vec<f64> = second.split(',').skip(1).map(|c| c.parse().unwrap()).collect();
        for (c, name) in SEQ_FEATURES.iter().enumerate() {
            assert_eq!(cells[c], stats.get(name).unwrap().mean);
        }
    }

    #[test]
    fn missing_stats_is_a_contract_error() {
        let result = DreamResult {
            sequence: Tensor2::zeros(2, 10),
            objective_trace: vec![],
            final_confidence: 0.5,
            iterations: 0,
            aborted_non_finite: false,
        };
        let err = export_dream(&result, &NormStats::default()).unwrap_err();
        assert!(err.to_string().contains("missing feature"));
    }
}

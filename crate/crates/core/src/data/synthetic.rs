//! Synthetic multimodal fitness data with a planted signal.
//!
//! Each user gets plausible statics and a day sequence; the label is drawn
//! from a logistic model over four planted drivers: the weight trend slope
//! (downwards helps), the steps trend slope (upwards helps), the mean sleep
//! latency (falling asleep quicker helps) and the objective magnitude
//! (ambitious goals hurt). Logistic noise is scaled by `1/signal_strength`,
//! and the intercept is calibrated so roughly 35% of labels are positive.

use serde::{Deserialize, Serialize};

use super::{DayRecord, Dataset, Example};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Coefficients on the standardized planted drivers
/// `(-weight_slope, +steps_slope, -sleep_latency, -|objective|)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriverCoeffs {
    pub weight_slope: f64,
    pub steps_slope: f64,
    pub sleep_latency: f64,
    pub objective_magnitude: f64,
}

impl Default for DriverCoeffs {
    fn default() -> Self {
        DriverCoeffs {
            weight_slope: 2.2,
            steps_slope: 1.5,
            sleep_latency: 1.1,
            objective_magnitude: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_users: usize,
    /// Inclusive range of sequence lengths.
    pub t_range: (usize, usize),
    /// 0 removes the signal entirely; larger sharpens it.
    pub signal_strength: f64,
    pub seed: u64,
    /// Target share of positive labels.
    #[serde(default = "default_positive_rate")]
    pub positive_rate: f64,
    #[serde(default)]
    pub coeffs: Option<DriverCoeffs>,
}

fn default_positive_rate() -> f64 {
    0.35
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_users: 1000,
            t_range: (10, 14),
            signal_strength: 1.0,
            seed: 7,
            positive_rate: default_positive_rate(),
            coeffs: None,
        }
    }
}

/// Per-user latent parameters the drivers are computed from.
struct UserDraw {
    example: Example,
    score: f64,
    noise: f64,
}

// population scales used both to sample and to standardize the drivers
const WEIGHT_SLOPE_STD: f64 = 0.18;
const STEPS_SLOPE_STD: f64 = 120.0;
const LATENCY_MEAN: f64 = 25.0;
const LATENCY_STD: f64 = 10.0;
const OBJ_MAG_MEAN: f64 = 3.9;
const OBJ_MAG_STD: f64 = 2.2;
// base logistic-noise scale at signal_strength = 1
const NOISE_SCALE: f64 = 0.55;

fn logistic_noise(rng: &mut Rng) -> f64 {
    let u = loop {
        let u = rng.uniform();
        if u > 0.0 && u < 1.0 {
            break u;
        }
    };
    (u / (1.0 - u)).ln()
}

fn draw_user(idx: usize, cfg: &SyntheticConfig, coeffs: &DriverCoeffs, rng: &mut Rng) -> UserDraw {
    let (t_lo, t_hi) = cfg.t_range;
    let t_len = rng.range_usize(t_lo, t_hi);

    let height = rng.normal_with(170.0, 10.0).clamp(140.0, 210.0);
    let gender = u8::from(rng.bernoulli(0.5));
    let age_band = rng.range_usize(1, 6) as f64;
    let objective = loop {
        let d = rng.normal_with(-3.5, 3.0).clamp(-15.0, 5.0);
        if d.abs() >= 0.5 {
            break d;
        }
    };

    let w0 = rng.normal_with(80.0, 2.0).clamp(50.0, 130.0);
    let weight_slope = rng.normal_with(0.0, WEIGHT_SLOPE_STD);
    let base_steps = rng.normal_with(7500.0, 1200.0).clamp(1000.0, 20000.0);
    let steps_slope = rng.normal_with(0.0, STEPS_SLOPE_STD);
    let base_latency = rng.normal_with(LATENCY_MEAN, LATENCY_STD).clamp(2.0, 120.0);

    let mut days = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let tf = t as f64;
        days.push(DayRecord {
            light_sleep_min: rng.normal_with(240.0, 40.0).clamp(0.0, 600.0),
            deep_sleep_min: rng.normal_with(90.0, 25.0).clamp(0.0, 400.0),
            sleep_latency_min: (base_latency + rng.normal_with(0.0, 4.0)).clamp(0.0, 180.0),
            awake_min: rng.normal_with(25.0, 10.0).clamp(0.0, 200.0),
            n_wakeups: rng.normal_with(1.5, 1.2).clamp(0.0, 8.0).round(),
            wakeup_latency_min: rng.normal_with(10.0, 5.0).clamp(0.0, 60.0),
            bed_in_min: rng.normal_with(1380.0, 45.0).clamp(0.0, 1440.0),
            bed_out_min: rng.normal_with(420.0, 40.0).clamp(0.0, 1440.0),
            steps: (base_steps + steps_slope * tf + rng.normal_with(0.0, 400.0))
                .clamp(0.0, 40000.0)
                .round(),
            weight_kg: (w0 + weight_slope * tf + rng.normal_with(0.0, 0.08)).max(30.0),
        });
    }

    let z_w = weight_slope / WEIGHT_SLOPE_STD;
    let z_s = steps_slope / STEPS_SLOPE_STD;
    let z_l = (base_latency - LATENCY_MEAN) / LATENCY_STD;
    let z_o = (objective.abs() - OBJ_MAG_MEAN) / OBJ_MAG_STD;
    let score = coeffs.weight_slope * (-z_w)
        + coeffs.steps_slope * z_s
        + coeffs.sleep_latency * (-z_l)
        + coeffs.objective_magnitude * (-z_o);

    UserDraw {
        example: Example {
            user_id: format!("synth-{idx}"),
            height_cm: height,
            gender,
            age_band,
            objective_kg: objective,
            label: false,
            days,
        },
        score,
        noise: logistic_noise(rng),
    }
}

/// Deterministic per seed. With `signal_strength = 0` the labels are pure
/// coin flips at `positive_rate`, independent of every feature.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Dataset> {
    if cfg.n_users == 0 {
        return Err(Error::contract("generate_synthetic with n_users = 0"));
    }
    if cfg.t_range.0 > cfg.t_range.1 || cfg.t_range.0 < super::MIN_SEQUENCE_DAYS {
        return Err(Error::contract(format!(
            "t_range {:?} invalid (min {} days)",
            cfg.t_range,
            super::MIN_SEQUENCE_DAYS
        )));
    }
    if !(0.0..1.0).contains(&cfg.positive_rate) || cfg.positive_rate == 0.0 {
        return Err(Error::contract(format!(
            "positive_rate {} out of (0, 1)",
            cfg.positive_rate
        )));
    }
    let coeffs = cfg.coeffs.unwrap_or_default();
    let mut rng = Rng::new(cfg.seed).child("synthetic");

    let mut draws: Vec<UserDraw> = (0..cfg.n_users)
        .map(|i| draw_user(i, cfg, &coeffs, &mut rng))
        .collect();

    if cfg.signal_strength == 0.0 {
        for d in &mut draws {
            d.example.label = rng.bernoulli(cfg.positive_rate);
        }
    } else {
        // calibrate the intercept: shift scores so the target share is positive
        let mut zs: Vec<f64> = draws
            .iter()
            .map(|d| d.score + d.noise * NOISE_SCALE / cfg.signal_strength)
            .collect();
        let mut sorted = zs.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let cut_idx = ((1.0 - cfg.positive_rate) * sorted.len() as f64).floor() as usize;
        let intercept = -sorted[cut_idx.min(sorted.len() - 1)];
        for (d, z) in draws.iter_mut().zip(zs.drain(..)) {
            d.example.label = z + intercept > 0.0;
        }
    }

    Dataset::new(draws.into_iter().map(|d| d.example).collect())
}

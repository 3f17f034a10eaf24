//! Dataset schema, normalization and batch assembly.
//!
//! The canonical per-day feature vector has 10 entries in modality order
//! weight || sleep || steps:
//!
//! ```text
//! [weight_kg | light_sleep_min, deep_sleep_min, sleep_latency_min, awake_min,
//!  n_wakeups, wakeup_latency_min, bed_in_min, bed_out_min | steps]
//! ```
//!
//! Static user features are `[height_cm, gender, age_band, objective_kg]`.
//! Datasets are JSON-lines, one user sequence per line.

pub mod folds;
pub mod preprocess;
pub mod synthetic;

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::arch::{ArchitectureSpec, Modality};
use crate::error::{Error, Result};
use crate::model::BatchInput;
use crate::tensor::Tensor;

pub const MIN_SEQUENCE_DAYS: usize = 10;
pub const MAX_OBJECTIVE_KG: f64 = 20.0;

/// Sequential feature names in canonical column order.
pub const SEQ_FEATURES: [&str; 10] = [
    "weight_kg",
    "light_sleep_min",
    "deep_sleep_min",
    "sleep_latency_min",
    "awake_min",
    "n_wakeups",
    "wakeup_latency_min",
    "bed_in_min",
    "bed_out_min",
    "steps",
];

/// Static features that are z-scored (gender stays untouched).
pub const SCALED_STATIC_FEATURES: [&str; 3] = ["height_cm", "age_band", "objective_kg"];

/// Column range of a modality within the canonical feature vector.
pub fn modality_columns(m: Modality) -> std::ops::Range<usize> {
    match m {
        Modality::Wt => 0..1,
        Modality::Sl => 1..9,
        Modality::St => 9..10,
    }
}

/// One day of multimodal measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayRecord {
    pub light_sleep_min: f64,
    pub deep_sleep_min: f64,
    pub sleep_latency_min: f64,
    pub awake_min: f64,
    pub n_wakeups: f64,
    pub wakeup_latency_min: f64,
    pub bed_in_min: f64,
    pub bed_out_min: f64,
    pub steps: f64,
    pub weight_kg: f64,
}

impl DayRecord {
    /// Canonical feature vector (weight, sleep block, steps).
    pub fn features(&self) -> [f64; 10] {
        [
            self.weight_kg,
            self.light_sleep_min,
            self.deep_sleep_min,
            self.sleep_latency_min,
            self.awake_min,
            self.n_wakeups,
            self.wakeup_latency_min,
            self.bed_in_min,
            self.bed_out_min,
            self.steps,
        ]
    }

    pub fn from_features(f: &[f64; 10]) -> Self {
        DayRecord {
            weight_kg: f[0],
            light_sleep_min: f[1],
            deep_sleep_min: f[2],
            sleep_latency_min: f[3],
            awake_min: f[4],
            n_wakeups: f[5],
            wakeup_latency_min: f[6],
            bed_in_min: f[7],
            bed_out_min: f[8],
            steps: f[9],
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.weight_kg > 0.0) {
            return Err(Error::data(format!(
                "weight_kg must be positive, got {}",
                self.weight_kg
            )));
        }
        for (name, v) in [
            ("light_sleep_min", self.light_sleep_min),
            ("deep_sleep_min", self.deep_sleep_min),
            ("sleep_latency_min", self.sleep_latency_min),
            ("awake_min", self.awake_min),
            ("wakeup_latency_min", self.wakeup_latency_min),
            ("bed_in_min", self.bed_in_min),
            ("bed_out_min", self.bed_out_min),
        ] {
            if !(0.0..=1440.0).contains(&v) {
                return Err(Error::data(format!("{name} out of [0, 1440]: {v}")));
            }
        }
        if self.steps < 0.0 || self.n_wakeups < 0.0 {
            return Err(Error::data("negative steps or wake-up count".to_string()));
        }
        if self.features().iter().any(|v| !v.is_finite()) {
            return Err(Error::data("non-finite day value".to_string()));
        }
        Ok(())
    }
}

/// One user sequence with static features and the outcome label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub user_id: String,
    pub height_cm: f64,
    pub gender: u8,
    pub age_band: f64,
    pub objective_kg: f64,
    #[serde(rename = "achieved")]
    pub label: bool,
    pub days: Vec<DayRecord>,
}

impl Example {
    pub fn statics(&self) -> [f64; 4] {
        [
            self.height_cm,
            self.gender as f64,
            self.age_band,
            self.objective_kg,
        ]
    }

    /// Physical-schema validation; applied on construction from raw sources.
    pub fn validate(&self) -> Result<()> {
        if self.days.len() < MIN_SEQUENCE_DAYS {
            return Err(Error::data(format!(
                "sequence of {} days, need >= {MIN_SEQUENCE_DAYS}",
                self.days.len()
            )));
        }
        if self.objective_kg.abs() > MAX_OBJECTIVE_KG {
            return Err(Error::data(format!(
                "objective {} exceeds ±{MAX_OBJECTIVE_KG} kg",
                self.objective_kg
            )));
        }
        if self.gender > 1 {
            return Err(Error::data(format!("gender must be 0/1, got {}", self.gender)));
        }
        for day in &self.days {
            day.validate()?;
        }
        Ok(())
    }
}

/// Per-feature normalization statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NormStats(pub BTreeMap<String, FeatureStats>);

const STD_FLOOR: f64 = 1e-8;

impl NormStats {
    pub fn get(&self, feature: &str) -> Option<FeatureStats> {
        self.0.get(feature).copied()
    }

    pub fn apply(&self, feature: &str, x: f64) -> f64 {
        match self.get(feature) {
            Some(s) => (x - s.mean) / s.std,
            None => x,
        }
    }

    pub fn invert(&self, feature: &str, z: f64) -> f64 {
        match self.get(feature) {
            Some(s) => z * s.std + s.mean,
            None => z,
        }
    }
}

/// A set of examples, optionally normalized (then `stats` records how).
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub stats: Option<NormStats>,
}

impl Dataset {
    pub fn new(examples: Vec<Example>) -> Result<Self> {
        for e in &examples {
            e.validate()?;
        }
        Ok(Dataset {
            examples,
            stats: None,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn labels(&self) -> Vec<bool> {
        self.examples.iter().map(|e| e.label).collect()
    }

    pub fn is_normalized(&self) -> bool {
        self.stats.is_some()
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for e in &self.examples {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Reads JSON-lines, skipping blank lines and `#` comment lines (the CLI
    /// writes provenance as a leading comment).
    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut examples = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let e: Example = serde_json::from_str(&line)
                .map_err(|err| Error::data(format!("line {}: {err}", i + 1)))?;
            e.validate()
                .map_err(|err| Error::data(format!("line {}: {err}", i + 1)))?;
            examples.push(e);
        }
        if examples.is_empty() {
            return Err(Error::data("empty dataset".to_string()));
        }
        Ok(Dataset {
            examples,
            stats: None,
        })
    }
}

/// Z-scores every sequential feature and the scaled statics using statistics
/// fitted on `fit_indices` only (population std, floored at 1e-8); gender is
/// left untouched. Returns the transformed dataset and the fitted stats.
pub fn normalize(ds: &Dataset, fit_indices: &[usize]) -> Result<(Dataset, NormStats)> {
    if fit_indices.is_empty() {
        return Err(Error::contract("normalize with empty fit_indices"));
    }
    for &i in fit_indices {
        if i >= ds.len() {
            return Err(Error::contract(format!("fit index {i} out of range")));
        }
    }

    let mut stats = BTreeMap::new();
    // sequential features: moments over all days of the fit examples
    for (col, name) in SEQ_FEATURES.iter().enumerate() {
        let mut n = 0.0;
        let mut mean = 0.0;
        let mut m2 = 0.0;
        for &i in fit_indices {
            for day in &ds.examples[i].days {
                let x = day.features()[col];
                n += 1.0;
                let d = x - mean;
                mean += d / n;
                m2 += d * (x - mean);
            }
        }
        let std = (m2 / n).sqrt().max(STD_FLOOR);
        stats.insert(name.to_string(), FeatureStats { mean, std });
    }
    // scaled statics: moments over the fit examples
    for name in SCALED_STATIC_FEATURES {
        let values: Vec<f64> = fit_indices
            .iter()
            .map(|&i| {
                let e = &ds.examples[i];
                match name {
                    "height_cm" => e.height_cm,
                    "age_band" => e.age_band,
                    _ => e.objective_kg,
                }
            })
            .collect();
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        stats.insert(
            name.to_string(),
            FeatureStats {
                mean,
                std: var.sqrt().max(STD_FLOOR),
            },
        );
    }
    let stats = NormStats(stats);

    let examples = ds
        .examples
        .iter()
        .map(|e| {
            let days = e
                .days
                .iter()
                .map(|d| {
                    let mut f = d.features();
                    for (col, name) in SEQ_FEATURES.iter().enumerate() {
                        f[col] = stats.apply(name, f[col]);
                    }
                    DayRecord::from_features(&f)
                })
                .collect();
            Example {
                user_id: e.user_id.clone(),
                height_cm: stats.apply("height_cm", e.height_cm),
                gender: e.gender,
                age_band: stats.apply("age_band", e.age_band),
                objective_kg: stats.apply("objective_kg", e.objective_kg),
                label: e.label,
                days,
            }
        })
        .collect();

    Ok((
        Dataset {
            examples,
            stats: Some(stats.clone()),
        },
        stats,
    ))
}

/// Assembles the per-timestep input matrices and static rows for a batch of
/// equal-length examples, selecting the modality columns the spec consumes.
pub fn batch_input(ds: &Dataset, indices: &[usize], spec: &ArchitectureSpec) -> Result<BatchInput> {
    if indices.is_empty() {
        return Err(Error::contract("batch_input with no examples"));
    }
    if spec.static_dim != 4 {
        return Err(Error::contract(format!(
            "data schema provides 4 static features, spec wants {}",
            spec.static_dim
        )));
    }
    let t_len = ds.examples[indices[0]].days.len();
    for &i in indices {
        if ds.examples[i].days.len() != t_len {
            return Err(Error::contract(format!(
                "batch mixes sequence lengths {} and {}",
                t_len,
                ds.examples[i].days.len()
            )));
        }
    }
    let mods = spec.present_modalities();
    let total: usize = spec.total_input_dim();
    let batch = indices.len();

    let mut steps = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let mut data = Vec::with_capacity(batch * total);
        for &i in indices {
            let f = ds.examples[i].days[t].features();
            for &m in &mods {
                data.extend_from_slice(&f[modality_columns(m)]);
            }
        }
        steps.push(Tensor::matrix(batch, total, data)?);
    }
    let mut sdata = Vec::with_capacity(batch * 4);
    for &i in indices {
        sdata.extend_from_slice(&ds.examples[i].statics());
    }
    Ok(BatchInput {
        steps,
        statics: Tensor::matrix(batch, 4, sdata)?,
    })
}

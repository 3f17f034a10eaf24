//! Preprocessing and labeling of raw user records.
//!
//! Raw records carry weight measurements at the user's discretion (possibly
//! several per day), per-day sleep and steps records, and a list of weight
//! objectives. The pipeline:
//!
//! 1. drops users with heights outside [130, 225] cm;
//! 2. collapses same-day weights with a within-day moving average;
//! 3. drops users showing consistent (two or more) day-over-day weight
//!    changes above 1.5 kg, and clips a single spike to its neighbors;
//! 4. ignores objectives beyond ±20 kg;
//! 5. cuts maximal runs of contiguous days where all three modalities are
//!    present, keeping runs of at least 10 days;
//! 6. labels each (run, open objective) pair: success if a later weight
//!    reaches the target, failure if recording stops for `window_days` before
//!    the observation horizon or a strictly more conservative objective is
//!    set later; undetermined pairs are excluded.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{DayRecord, Dataset, Example, MAX_OBJECTIVE_KG, MIN_SEQUENCE_DAYS};
use crate::error::{Error, Result};

pub const DEFAULT_WINDOW_DAYS: i64 = 60;
const MAX_DAILY_WEIGHT_CHANGE: f64 = 1.5;
const MIN_HEIGHT_CM: f64 = 130.0;
const MAX_HEIGHT_CM: f64 = 225.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawWeight {
    pub day: i64,
    /// Minutes since midnight; orders same-day measurements.
    #[serde(default)]
    pub minute: Option<f64>,
    pub weight_kg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSleep {
    pub day: i64,
    pub light_sleep_min: f64,
    pub deep_sleep_min: f64,
    pub sleep_latency_min: f64,
    pub awake_min: f64,
    pub n_wakeups: f64,
    pub wakeup_latency_min: f64,
    pub bed_in_min: f64,
    pub bed_out_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSteps {
    pub day: i64,
    pub steps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawObjective {
    pub day: i64,
    pub delta_kg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawUserRecord {
    pub user_id: String,
    pub height_cm: f64,
    pub gender: u8,
    pub age_band: f64,
    pub weights: Vec<RawWeight>,
    pub sleep: Vec<RawSleep>,
    pub steps: Vec<RawSteps>,
    pub objectives: Vec<RawObjective>,
    /// Last day covered by data collection for this user.
    pub observed_until_day: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub user_id: String,
    pub reason: String,
}

#[derive(Debug)]
pub struct PreprocessOutcome {
    pub dataset: Dataset,
    pub rejected: Vec<Rejection>,
}

/// Daily weight series after same-day collapsing.
fn collapse_daily_weights(weights: &[RawWeight]) -> BTreeMap<i64, f64> {
    let mut per_day: BTreeMap<i64, Vec<(f64, f64)>> = BTreeMap::new();
    for w in weights {
        per_day
            .entry(w.day)
            .or_default()
            .push((w.minute.unwrap_or(0.0), w.weight_kg));
    }
    per_day
        .into_iter()
        .map(|(day, mut xs)| {
            xs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            // within-day moving average (window 2), then averaged
            let mut ma = Vec::with_capacity(xs.len());
            for (i, &(_, v)) in xs.iter().enumerate() {
                ma.push(if i == 0 { v } else { (v + xs[i - 1].1) / 2.0 });
            }
            (day, ma.iter().sum::<f64>() / ma.len() as f64)
        })
        .collect()
}

/// Indices of consecutive-day pairs whose change exceeds the daily bound.
fn excessive_changes(daily: &BTreeMap<i64, f64>) -> Vec<i64> {
    let mut out = Vec::new();
    let days: Vec<i64> = daily.keys().copied().collect();
    for pair in days.windows(2) {
        if pair[1] == pair[0] + 1 {
            let delta = (daily[&pair[1]] - daily[&pair[0]]).abs();
            if delta > MAX_DAILY_WEIGHT_CHANGE {
                out.push(pair[1]);
            }
        }
    }
    out
}

fn validate_raw(rec: &RawUserRecord) -> Result<()> {
    if rec.gender > 1 {
        return Err(Error::data(format!("gender must be 0/1, got {}", rec.gender)));
    }
    if !rec.height_cm.is_finite() {
        return Err(Error::data("non-finite height".to_string()));
    }
    for w in &rec.weights {
        if !(w.weight_kg > 0.0) || !w.weight_kg.is_finite() {
            return Err(Error::data(format!("bad weight {} on day {}", w.weight_kg, w.day)));
        }
    }
    for s in &rec.sleep {
        for (name, v) in [
            ("light_sleep_min", s.light_sleep_min),
            ("deep_sleep_min", s.deep_sleep_min),
            ("sleep_latency_min", s.sleep_latency_min),
            ("awake_min", s.awake_min),
            ("wakeup_latency_min", s.wakeup_latency_min),
            ("bed_in_min", s.bed_in_min),
            ("bed_out_min", s.bed_out_min),
        ] {
            if !(0.0..=1440.0).contains(&v) {
                return Err(Error::data(format!("{name} out of [0, 1440] on day {}", s.day)));
            }
        }
        if s.n_wakeups < 0.0 {
            return Err(Error::data(format!("negative n_wakeups on day {}", s.day)));
        }
    }
    for s in &rec.steps {
        if s.steps < 0.0 || !s.steps.is_finite() {
            return Err(Error::data(format!("bad steps {} on day {}", s.steps, s.day)));
        }
    }
    Ok(())
}

/// Did any weight from `from_day..=to_day` reach the target, moving in the
/// objective's direction?
fn reached(daily: &BTreeMap<i64, f64>, from_day: i64, to_day: i64, target: f64, losing: bool) -> bool {
    daily
        .range(from_day..=to_day)
        .any(|(_, &w)| if losing { w <= target } else { w >= target })
}

fn process_user(
    rec: &RawUserRecord,
    window_days: i64,
    out: &mut Vec<Example>,
    rejected: &mut Vec<Rejection>,
) {
    let reject = |rejected: &mut Vec<Rejection>, reason: String| {
        rejected.push(Rejection {
            user_id: rec.user_id.clone(),
            reason,
        });
    };
    if let Err(e) = validate_raw(rec) {
        reject(rejected, format!("malformed record: {e}"));
        return;
    }
    if rec.height_cm < MIN_HEIGHT_CM || rec.height_cm > MAX_HEIGHT_CM {
        reject(
            rejected,
            format!("height {} cm outside [{MIN_HEIGHT_CM}, {MAX_HEIGHT_CM}]", rec.height_cm),
        );
        return;
    }

    let mut daily = collapse_daily_weights(&rec.weights);
    let spikes = excessive_changes(&daily);
    if spikes.len() >= 2 {
        reject(
            rejected,
            format!(
                "consistent day-over-day weight changes above {MAX_DAILY_WEIGHT_CHANGE} kg ({} occurrences)",
                spikes.len()
            ),
        );
        return;
    }
    if let [spike_day] = spikes[..] {
        // single spike: clip to the average of the adjacent days
        let prev = daily.get(&(spike_day - 1)).copied();
        let next = daily.get(&(spike_day + 1)).copied();
        let fixed = match (prev, next) {
            (Some(a), Some(b)) => (a + b) / 2.0,
            (Some(a), None) => a,
            (None, Some(b)) => b,
            (None, None) => daily[&spike_day],
        };
        daily.insert(spike_day, fixed);
    }

    let sleep: BTreeMap<i64, &RawSleep> = rec.sleep.iter().map(|s| (s.day, s)).collect();
    let steps: BTreeMap<i64, f64> = rec.steps.iter().map(|s| (s.day, s.steps)).collect();

    // maximal runs of contiguous days with all three modalities
    let mut complete: Vec<i64> = daily
        .keys()
        .copied()
        .filter(|d| sleep.contains_key(d) && steps.contains_key(d))
        .collect();
    complete.sort_unstable();
    let mut runs: Vec<(i64, i64)> = Vec::new();
    for &d in &complete {
        match runs.last_mut() {
            Some((_, end)) if *end + 1 == d => *end = d,
            _ => runs.push((d, d)),
        }
    }
    runs.retain(|&(s, e)| (e - s + 1) as usize >= MIN_SEQUENCE_DAYS);

    let objectives: Vec<&RawObjective> = rec
        .objectives
        .iter()
        .filter(|o| {
            let keep = o.delta_kg.abs() <= MAX_OBJECTIVE_KG && o.delta_kg != 0.0;
            if !keep {
                // overly ambitious (or empty) objectives are ignored, the
                // user's other objectives still count
            }
            keep
        })
        .collect();

    let last_weight_day = daily.keys().next_back().copied();

    for &(start, end) in &runs {
        for obj in &objectives {
            if obj.day > end {
                continue;
            }
            // reference weight: nearest daily weight at or before the set day
            let reference = daily
                .range(..=obj.day)
                .next_back()
                .map(|(_, &w)| w)
                .or_else(|| daily.values().next().copied());
            let Some(reference) = reference else { continue };
            let target = reference + obj.delta_kg;
            let losing = obj.delta_kg < 0.0;

            if reached(&daily, obj.day, end, target, losing) {
                // already achieved by the time the sequence ends
                continue;
            }
            let label = if reached(&daily, end + 1, i64::MAX, target, losing) {
                Some(true)
            } else if rec
                .objectives
                .iter()
                .any(|o2| o2.day > obj.day && o2.delta_kg.abs() < obj.delta_kg.abs())
            {
                // a more conservative objective supersedes this one
                Some(false)
            } else if last_weight_day
                .map(|d| d + window_days <= rec.observed_until_day)
                .unwrap_or(false)
            {
                // user stopped recording weights, with enough allowance
                Some(false)
            } else {
                None
            };
            let Some(label) = label else { continue };

            let days: Vec<DayRecord> = (start..=end)
                .map(|d| {
                    let s = sleep[&d];
                    DayRecord {
                        light_sleep_min: s.light_sleep_min,
                        deep_sleep_min: s.deep_sleep_min,
                        sleep_latency_min: s.sleep_latency_min,
                        awake_min: s.awake_min,
                        n_wakeups: s.n_wakeups,
                        wakeup_latency_min: s.wakeup_latency_min,
                        bed_in_min: s.bed_in_min,
                        bed_out_min: s.bed_out_min,
                        steps: steps[&d],
                        weight_kg: daily[&d],
                    }
                })
                .collect();
            out.push(Example {
                user_id: rec.user_id.clone(),
                height_cm: rec.height_cm,
                gender: rec.gender,
                age_band: rec.age_band,
                objective_kg: obj.delta_kg,
                label,
                days,
            });
        }
    }
}

/// Runs the full pipeline. Malformed or filtered users are reported in
/// `rejected` and the pipeline continues; an empty result is an error.
pub fn preprocess(records: &[RawUserRecord], window_days: i64) -> Result<PreprocessOutcome> {
    let mut examples = Vec::new();
    let mut rejected = Vec::new();
    for rec in records {
        process_user(rec, window_days, &mut examples, &mut rejected);
    }
    if examples.is_empty() {
        return Err(Error::data(
            "preprocessing produced an empty dataset".to_string(),
        ));
    }
    Ok(PreprocessOutcome {
        dataset: Dataset::new(examples)?,
        rejected,
    })
}

/// Reads raw-schema JSON-lines and preprocesses them.
pub fn preprocess_jsonl<R: std::io::BufRead>(r: R, window_days: i64) -> Result<PreprocessOutcome> {
    let mut records = Vec::new();
    let mut rejected = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<RawUserRecord>(&line) {
            Ok(rec) => records.push(rec),
            Err(e) => rejected.push(Rejection {
                user_id: format!("line-{}", i + 1),
                reason: format!("parse error: {e}"),
            }),
        }
    }
    let mut outcome = preprocess(&records, window_days)?;
    outcome.rejected.splice(0..0, rejected);
    Ok(outcome)
}

/// Reconstructs a raw record whose preprocessing yields exactly `example`:
/// one weight per sequence day, the objective anchored so it stays open
/// through the sequence, and a synthetic future that reproduces the label.
pub fn lift_to_raw(example: &Example, window_days: i64) -> RawUserRecord {
    let t_len = example.days.len() as i64;
    let mut weights: Vec<RawWeight> = example
        .days
        .iter()
        .enumerate()
        .map(|(d, day)| RawWeight {
            day: d as i64,
            minute: None,
            weight_kg: day.weight_kg,
        })
        .collect();
    let sleep = example
        .days
        .iter()
        .enumerate()
        .map(|(d, day)| RawSleep {
            day: d as i64,
            light_sleep_min: day.light_sleep_min,
            deep_sleep_min: day.deep_sleep_min,
            sleep_latency_min: day.sleep_latency_min,
            awake_min: day.awake_min,
            n_wakeups: day.n_wakeups,
            wakeup_latency_min: day.wakeup_latency_min,
            bed_in_min: day.bed_in_min,
            bed_out_min: day.bed_out_min,
        })
        .collect();
    let steps = example
        .days
        .iter()
        .enumerate()
        .map(|(d, day)| RawSteps {
            day: d as i64,
            steps: day.steps,
        })
        .collect();

    // anchor the objective at the extreme weight so it is open in-sequence
    let losing = example.objective_kg < 0.0;
    let (anchor_day, anchor_w) = example
        .days
        .iter()
        .enumerate()
        .map(|(d, day)| (d as i64, day.weight_kg))
        .reduce(|best, cur| {
            let better = if losing { cur.1 < best.1 } else { cur.1 > best.1 };
            if better {
                cur
            } else {
                best
            }
        })
        .unwrap();
    let target = anchor_w + example.objective_kg;

    let observed_until_day;
    if example.label {
        // walk to the target in steps below the daily-change bound
        let mut w = example.days.last().unwrap().weight_kg;
        let mut day = t_len;
        let step = MAX_DAILY_WEIGHT_CHANGE * 0.9;
        loop {
            let remaining = target - w;
            if remaining.abs() <= step {
                w = target;
            } else {
                w += step.copysign(remaining);
            }
            weights.push(RawWeight {
                day,
                minute: None,
                weight_kg: w,
            });
            if (losing && w <= target) || (!losing && w >= target) {
                break;
            }
            day += 1;
        }
        observed_until_day = day;
    } else {
        observed_until_day = (t_len - 1) + window_days;
    }

    RawUserRecord {
        user_id: example.user_id.clone(),
        height_cm: example.height_cm,
        gender: example.gender,
        age_band: example.age_band,
        weights,
        sleep,
        steps,
        objectives: vec![RawObjective {
            day: anchor_day,
            delta_kg: example.objective_kg,
        }],
        observed_until_day,
    }
}

//! Repetition statistics: Tukey-fence outlier rejection and averaging.
//!
//! Quartiles use linear interpolation between order statistics at position
//! `(n - 1) * q` (the "type 7" estimator), so results are reproducible.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Repetitions per cell unless a plan says otherwise.
pub const DEFAULT_REPETITIONS: usize = 10;

/// Tukey fence multiplier.
pub const IQR_MULTIPLIER: f64 = 1.5;

/// Below this many values no rejection takes place.
pub const MIN_SAMPLES_FOR_REJECTION: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("no values to analyze")]
    Empty,
    #[error("value {0} is not finite")]
    NonFinite(f64),
    #[error("every value was rejected as an outlier")]
    AllRejected,
}

/// Which fences reject values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutlierSide {
    #[default]
    Both,
    Upper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellKey {
    pub workload_id: String,
    pub workers: usize,
    pub problem_size: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub cell_key: CellKey,
    pub values: Vec<f64>,
    pub target_repetitions: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutlierDecision {
    pub kept: Vec<f64>,
    pub rejected: Vec<f64>,
    /// Input positions of the rejected values, ascending.
    pub rejected_indices: Vec<usize>,
    pub fences: (f64, f64),
}

impl OutlierDecision {
    pub fn is_kept(&self, index: usize) -> bool {
        self.rejected_indices.binary_search(&index).is_err()
    }
}

fn check_finite(values: &[f64]) -> Result<(), StatsError> {
    match values.iter().find(|v| !v.is_finite()) {
        Some(v) => Err(StatsError::NonFinite(*v)),
        None => Ok(()),
    }
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = (sorted.len() - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// First and third quartiles of an ascending list.
pub fn quartiles(sorted: &[f64]) -> Result<(f64, f64), StatsError> {
    if sorted.is_empty() {
        return Err(StatsError::Empty);
    }
    check_finite(sorted)?;
    Ok((quantile_sorted(sorted, 0.25), quantile_sorted(sorted, 0.75)))
}

pub fn filter_outliers(values: &[f64], side: OutlierSide) -> Result<OutlierDecision, StatsError> {
    check_finite(values)?;
    if values.len() < MIN_SAMPLES_FOR_REJECTION {
        return Ok(OutlierDecision {
            kept: values.to_vec(),
            rejected: Vec::new(),
            rejected_indices: Vec::new(),
            fences: (f64::NEG_INFINITY, f64::INFINITY),
        });
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (q1, q3) = quartiles(&sorted)?;
    let iqr = q3 - q1;
    let lower = match side {
        OutlierSide::Both => q1 - IQR_MULTIPLIER * iqr,
        OutlierSide::Upper => f64::NEG_INFINITY,
    };
    let upper = q3 + IQR_MULTIPLIER * iqr;

    let mut decision = OutlierDecision {
        kept: Vec::with_capacity(values.len()),
        rejected: Vec::new(),
        rejected_indices: Vec::new(),
        fences: (lower, upper),
    };
    for (i, &v) in values.iter().enumerate() {
        if v < lower || v > upper {
            decision.rejected.push(v);
            decision.rejected_indices.push(i);
        } else {
            decision.kept.push(v);
        }
    }
    Ok(decision)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub count_kept: usize,
    pub count_rejected: usize,
}

/// Arithmetic mean, summed in ascending order so it is permutation invariant.
pub fn mean(values: &[f64]) -> Result<f64, StatsError> {
    if values.is_empty() {
        return Err(StatsError::Empty);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted.iter().sum::<f64>() / sorted.len() as f64)
}

pub fn summarize(samples: &SampleSet, side: OutlierSide) -> Result<Summary, StatsError> {
    if samples.values.is_empty() {
        return Err(StatsError::Empty);
    }
    let decision = filter_outliers(&samples.values, side)?;
    if decision.kept.is_empty() {
        return Err(StatsError::AllRejected);
    }
    Ok(Summary {
        mean: mean(&decision.kept)?,
        count_kept: decision.kept.len(),
        count_rejected: decision.rejected.len(),
    })
}

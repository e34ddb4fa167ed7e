//! Granularity-based performance metrics and the classical scaling laws.
//!
//! The estimator works from a single parallel run. Given the worker count `p`,
//! the wall-clock time `T_p` and the summed computation time of all workers
//! `T_comp`, the overhead is `T_o = p * T_p - T_comp`, the isogranularity is
//! `G = T_comp / T_o`, efficiency is `E = G / (G + 1)` and the estimated
//! speedup is `E * p`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative slack allowed when checking `total_comp <= workers * wall_clock`.
pub const TIMER_SLACK: f64 = 1e-6;

/// Overheads below this many seconds are treated as zero when computing
/// granularity.
pub const OVERHEAD_FLOOR: f64 = 1e-9;

/// Granularity reported for runs whose overhead is below [`OVERHEAD_FLOOR`].
pub const INFINITE_GRANULARITY: f64 = f64::INFINITY;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("worker count must be at least 1")]
    NoWorkers,
    #[error("wall-clock time must be positive and finite, got {0}")]
    InvalidWallClock(f64),
    #[error("total computation time must be nonnegative and finite, got {0}")]
    InvalidComputation(f64),
    #[error(
        "total computation {total_comp}s exceeds available worker time {workers} x {wall_clock}s"
    )]
    ComputationExceedsCapacity {
        workers: usize,
        wall_clock: f64,
        total_comp: f64,
    },
    #[error("empty measurement: both computation and overhead are zero")]
    EmptyMeasurement,
    #[error("negative time passed to isogranularity")]
    NegativeTime,
    #[error("fraction inference needs at least 2 workers, got {0}")]
    TooFewWorkers(usize),
    #[error("actual speedup must be positive, got {0}")]
    NonPositiveSpeedup(f64),
    #[error("fraction {0} is outside [0, 1]")]
    FractionOutOfRange(f64),
}

/// Timing summary of one parallel run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingBreakdown {
    workers: usize,
    wall_clock: f64,
    total_comp: f64,
}

impl TimingBreakdown {
    pub fn new(workers: usize, wall_clock: f64, total_comp: f64) -> Result<Self, MetricsError> {
        if workers == 0 {
            return Err(MetricsError::NoWorkers);
        }
        if !(wall_clock.is_finite() && wall_clock > 0.0) {
            return Err(MetricsError::InvalidWallClock(wall_clock));
        }
        if !(total_comp.is_finite() && total_comp >= 0.0) {
            return Err(MetricsError::InvalidComputation(total_comp));
        }
        if total_comp > workers as f64 * wall_clock * (1.0 + TIMER_SLACK) {
            return Err(MetricsError::ComputationExceedsCapacity {
                workers,
                wall_clock,
                total_comp,
            });
        }
        Ok(Self {
            workers,
            wall_clock,
            total_comp,
        })
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn wall_clock(&self) -> f64 {
        self.wall_clock
    }

    pub fn total_comp(&self) -> f64 {
        self.total_comp
    }
}

/// Overhead of a run, with a flag telling whether a negative raw value was
/// clamped to zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Overhead {
    pub seconds: f64,
    pub clamped: bool,
}

/// `max(0, p * T_p - T_comp)`.
pub fn compute_overhead(breakdown: &TimingBreakdown) -> Overhead {
    let raw = breakdown.workers as f64 * breakdown.wall_clock - breakdown.total_comp;
    if raw < 0.0 {
        Overhead {
            seconds: 0.0,
            clamped: true,
        }
    } else {
        Overhead {
            seconds: raw,
            clamped: false,
        }
    }
}

/// Ratio of computation to overhead. Returns [`INFINITE_GRANULARITY`] when the
/// overhead is below [`OVERHEAD_FLOOR`].
pub fn isogranularity(total_comp: f64, overhead: f64) -> Result<f64, MetricsError> {
    if total_comp < 0.0 || overhead < 0.0 {
        return Err(MetricsError::NegativeTime);
    }
    if total_comp == 0.0 && overhead == 0.0 {
        return Err(MetricsError::EmptyMeasurement);
    }
    if overhead < OVERHEAD_FLOOR {
        return Ok(INFINITE_GRANULARITY);
    }
    Ok(total_comp / overhead)
}

/// `G / (G + 1)`, with exactly 1 for infinite granularity.
pub fn efficiency_from_granularity(granularity: f64) -> f64 {
    if granularity.is_infinite() {
        1.0
    } else {
        granularity / (granularity + 1.0)
    }
}

pub fn estimated_speedup(efficiency: f64, workers: usize) -> f64 {
    efficiency * workers as f64
}

/// Signed relative error of an estimated speedup against the measured one.
pub fn relative_error(actual_speedup: f64, estimated_speedup: f64) -> Result<f64, MetricsError> {
    if actual_speedup.is_nan() || actual_speedup <= 0.0 {
        return Err(MetricsError::NonPositiveSpeedup(actual_speedup));
    }
    Ok((estimated_speedup - actual_speedup) / actual_speedup)
}

/// Everything the estimator derives from one [`TimingBreakdown`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GranularityMetrics {
    pub overhead: f64,
    #[serde(with = "granularity_serde")]
    pub granularity: f64,
    pub efficiency: f64,
    pub estimated_speedup: f64,
    #[serde(default)]
    pub clamped: bool,
}

impl GranularityMetrics {
    pub fn from_breakdown(breakdown: &TimingBreakdown) -> Result<Self, MetricsError> {
        let overhead = compute_overhead(breakdown);
        let granularity = isogranularity(breakdown.total_comp, overhead.seconds)?;
        let efficiency = efficiency_from_granularity(granularity);
        Ok(Self {
            overhead: overhead.seconds,
            granularity,
            efficiency,
            estimated_speedup: estimated_speedup(efficiency, breakdown.workers),
            clamped: overhead.clamped,
        })
    }
}

/// JSON has no infinity; an infinite granularity is written as `null`.
mod granularity_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &f64, serializer: S) -> Result<S::Ok, S::Error> {
        if value.is_infinite() {
            serializer.serialize_none()
        } else {
            serializer.serialize_f64(*value)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(deserializer)?.unwrap_or(f64::INFINITY))
    }
}

/// Parameters of the Amdahl and Gustafson laws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingModelParams {
    /// Amdahl's parallel fraction (fixed problem size).
    pub parallel_fraction: f64,
    /// Gustafson's scaled parallel fraction (problem grows with workers).
    pub scaled_parallel_fraction: f64,
}

impl ScalingModelParams {
    pub fn new(parallel_fraction: f64, scaled_parallel_fraction: f64) -> Result<Self, MetricsError> {
        for f in [parallel_fraction, scaled_parallel_fraction] {
            if !(0.0..=1.0).contains(&f) {
                return Err(MetricsError::FractionOutOfRange(f));
            }
        }
        Ok(Self {
            parallel_fraction,
            scaled_parallel_fraction,
        })
    }

    pub fn amdahl(parallel_fraction: f64) -> Result<Self, MetricsError> {
        Self::new(parallel_fraction, 0.0)
    }

    pub fn gustafson(scaled_parallel_fraction: f64) -> Result<Self, MetricsError> {
        Self::new(0.0, scaled_parallel_fraction)
    }
}

/// Fixed-size speedup: `1 / ((1 - f) + f / n)`.
///
/// Evaluated as `n / (n (1 - f) + f)`, which is exactly `n` at `f = 1`.
pub fn amdahl_speedup(params: &ScalingModelParams, n: usize) -> f64 {
    let f = params.parallel_fraction;
    let n = n as f64;
    n / (n * (1.0 - f) + f)
}

/// Scaled speedup: `1 + (n - 1) * f*`.
pub fn gustafson_speedup(params: &ScalingModelParams, n: usize) -> f64 {
    1.0 + (n as f64 - 1.0) * params.scaled_parallel_fraction
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeedupAnomaly {
    /// Speedup above the worker count.
    Superlinear,
    /// Speedup below one (slower than serial).
    Sublinear,
}

/// A parallel fraction recovered from a measured speedup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FractionEstimate {
    pub fraction: f64,
    pub anomaly: Option<SpeedupAnomaly>,
}

fn clamp_fraction(raw: f64, speedup: f64, n: usize) -> FractionEstimate {
    let anomaly = if speedup > n as f64 {
        Some(SpeedupAnomaly::Superlinear)
    } else if speedup < 1.0 {
        Some(SpeedupAnomaly::Sublinear)
    } else {
        None
    };
    FractionEstimate {
        fraction: raw.clamp(0.0, 1.0),
        anomaly,
    }
}

/// Inverse of [`amdahl_speedup`] in the fraction.
pub fn infer_amdahl_fraction(
    measured_speedup: f64,
    n: usize,
) -> Result<FractionEstimate, MetricsError> {
    if n < 2 {
        return Err(MetricsError::TooFewWorkers(n));
    }
    if measured_speedup.is_nan() || measured_speedup <= 0.0 {
        return Err(MetricsError::NonPositiveSpeedup(measured_speedup));
    }
    let raw = (1.0 / measured_speedup - 1.0) / (1.0 / n as f64 - 1.0);
    Ok(clamp_fraction(raw, measured_speedup, n))
}

/// Inverse of [`gustafson_speedup`] in the scaled fraction.
pub fn infer_gustafson_fraction(
    measured_speedup: f64,
    n: usize,
) -> Result<FractionEstimate, MetricsError> {
    if n < 2 {
        return Err(MetricsError::TooFewWorkers(n));
    }
    let raw = (measured_speedup - 1.0) / (n as f64 - 1.0);
    Ok(clamp_fraction(raw, measured_speedup, n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bd(p: usize, wall: f64, comp: f64) -> TimingBreakdown {
        TimingBreakdown::new(p, wall, comp).unwrap()
    }

    #[test]
    fn overhead_examples() {
        assert_eq!(compute_overhead(&bd(1, 5.0, 5.0)).seconds, 0.0);
        assert_eq!(compute_overhead(&bd(4, 10.0, 40.0)).seconds, 0.0);
        assert_eq!(compute_overhead(&bd(4, 10.0, 36.0)).seconds, 4.0);
    }

    #[test]
    fn overhead_clamps_timer_noise() {
        let o = compute_overhead(&bd(1, 1.0, 1.0 + 5e-7));
        assert_eq!(o.seconds, 0.0);
        assert!(o.clamped);
        assert!(!compute_overhead(&bd(2, 1.0, 1.0)).clamped);
    }

    #[test]
    fn breakdown_rejects_bad_values() {
        assert_eq!(
            TimingBreakdown::new(0, 1.0, 0.0),
            Err(MetricsError::NoWorkers)
        );
        assert!(TimingBreakdown::new(1, 0.0, 0.0).is_err());
        assert!(TimingBreakdown::new(1, 1.0, -0.1).is_err());
        assert!(matches!(
            TimingBreakdown::new(4, 10.0, 41.0),
            Err(MetricsError::ComputationExceedsCapacity { .. })
        ));
    }

    #[test]
    fn isogranularity_examples() {
        assert_eq!(isogranularity(9.0, 1.0).unwrap(), 9.0);
        assert_eq!(isogranularity(5.0, 5.0).unwrap(), 1.0);
        assert_eq!(isogranularity(7.0, 0.0).unwrap(), INFINITE_GRANULARITY);
        assert_eq!(isogranularity(7.0, 1e-10).unwrap(), INFINITE_GRANULARITY);
        assert_eq!(
            isogranularity(0.0, 0.0),
            Err(MetricsError::EmptyMeasurement)
        );
        assert_eq!(isogranularity(0.0, 3.0).unwrap(), 0.0);
    }

    #[test]
    fn efficiency_examples() {
        assert!((efficiency_from_granularity(9.0) - 0.9).abs() < 1e-15);
        assert_eq!(efficiency_from_granularity(1.0), 0.5);
        assert_eq!(efficiency_from_granularity(0.0), 0.0);
        assert_eq!(efficiency_from_granularity(INFINITE_GRANULARITY), 1.0);
    }

    #[test]
    fn speedup_examples() {
        assert!((estimated_speedup(0.9, 4) - 3.6).abs() < 1e-12);
        assert_eq!(estimated_speedup(1.0, 16), 16.0);
        assert_eq!(estimated_speedup(0.5, 8), 4.0);
    }

    #[test]
    fn amdahl_examples() {
        let p = |f| ScalingModelParams::amdahl(f).unwrap();
        assert_eq!(amdahl_speedup(&p(1.0), 16), 16.0);
        assert_eq!(amdahl_speedup(&p(0.0), 64), 1.0);
        assert!((amdahl_speedup(&p(0.9), 8) - 1.0 / 0.2125).abs() < 1e-12);
        assert!((amdahl_speedup(&p(0.9), 8) - 4.70588).abs() < 1e-5);
    }

    #[test]
    fn fully_parallel_limits_are_exact() {
        let amdahl = ScalingModelParams::amdahl(1.0).unwrap();
        let gustafson = ScalingModelParams::gustafson(1.0).unwrap();
        for n in 1..=4096 {
            assert_eq!(amdahl_speedup(&amdahl, n), n as f64);
            assert_eq!(gustafson_speedup(&gustafson, n), n as f64);
            if n > 1 {
                assert_eq!(infer_amdahl_fraction(n as f64, n).unwrap().anomaly, None);
            }
        }
    }

    #[test]
    fn gustafson_examples() {
        let p = |f| ScalingModelParams::gustafson(f).unwrap();
        assert_eq!(gustafson_speedup(&p(1.0), 512), 512.0);
        assert_eq!(gustafson_speedup(&p(0.0), 512), 1.0);
        assert!((gustafson_speedup(&p(0.9), 8) - 7.3).abs() < 1e-12);
    }

    #[test]
    fn params_reject_out_of_range() {
        assert!(ScalingModelParams::new(1.1, 0.0).is_err());
        assert!(ScalingModelParams::new(0.5, -0.1).is_err());
    }

    #[test]
    fn infer_amdahl_examples() {
        assert_eq!(infer_amdahl_fraction(8.0, 8).unwrap().fraction, 1.0);
        assert_eq!(infer_amdahl_fraction(1.0, 8).unwrap().fraction, 0.0);
        assert!(infer_amdahl_fraction(2.0, 1).is_err());
    }

    #[test]
    fn infer_amdahl_matches_grid_scan() {
        // Oracle: scan the fraction grid for the value whose forward speedup is
        // closest to the measured one.
        let measured = 4.70588;
        let best = (0..=100_000)
            .map(|i| i as f64 / 100_000.0)
            .min_by(|a, b| {
                let da = (amdahl_speedup(&ScalingModelParams::amdahl(*a).unwrap(), 8) - measured).abs();
                let db = (amdahl_speedup(&ScalingModelParams::amdahl(*b).unwrap(), 8) - measured).abs();
                da.partial_cmp(&db).unwrap()
            })
            .unwrap();
        assert!((best - 0.9).abs() < 1e-4);
        let inferred = infer_amdahl_fraction(measured, 8).unwrap();
        assert!((inferred.fraction - best).abs() < 1e-4);
        assert!((inferred.fraction - 0.9).abs() < 1e-5);
        assert_eq!(inferred.anomaly, None);
    }

    #[test]
    fn infer_amdahl_flags_anomalies() {
        let sup = infer_amdahl_fraction(9.5, 8).unwrap();
        assert_eq!(sup.fraction, 1.0);
        assert_eq!(sup.anomaly, Some(SpeedupAnomaly::Superlinear));
        let sub = infer_amdahl_fraction(0.8, 8).unwrap();
        assert_eq!(sub.fraction, 0.0);
        assert_eq!(sub.anomaly, Some(SpeedupAnomaly::Sublinear));
    }

    #[test]
    fn infer_gustafson_examples() {
        assert!((infer_gustafson_fraction(7.3, 8).unwrap().fraction - 0.9).abs() < 1e-12);
        assert_eq!(infer_gustafson_fraction(1.0, 8).unwrap().fraction, 0.0);
        // Table 2 entry for 983040 at 8 workers.
        let f = infer_gustafson_fraction(7.948, 8).unwrap().fraction;
        assert!((f - 6.948 / 7.0).abs() < 1e-15);
        assert!((f - 0.992571).abs() < 1e-6);
        assert!(infer_gustafson_fraction(3.0, 1).is_err());
        assert_eq!(
            infer_gustafson_fraction(600.0, 512).unwrap().anomaly,
            Some(SpeedupAnomaly::Superlinear)
        );
    }

    #[test]
    fn relative_error_examples() {
        assert!((relative_error(100.0, 116.0).unwrap() - 0.16).abs() < 1e-12);
        assert_eq!(relative_error(8.0, 8.0).unwrap(), 0.0);
        assert!((relative_error(8.0, 7.6).unwrap() + 0.05).abs() < 1e-12);
        assert!(relative_error(0.0, 1.0).is_err());
        assert!(relative_error(-1.0, 1.0).is_err());
    }

    #[test]
    fn metrics_serialize_infinite_granularity_as_null() {
        let m = GranularityMetrics::from_breakdown(&bd(2, 1.0, 2.0)).unwrap();
        assert!(m.granularity.is_infinite());
        let json = serde_json::to_string(&m).unwrap();
        assert!(json.contains("\"granularity\":null"));
        let back: GranularityMetrics = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
    }

    proptest! {
        #[test]
        fn efficiency_forms_agree(g in 1e-6f64..1e6) {
            let e = efficiency_from_granularity(g);
            prop_assert!((e - 1.0 / (1.0 + 1.0 / g)).abs() < 1e-12);
        }

        #[test]
        fn pipeline_reduces_to_comp_over_wall(
            p in 1usize..256,
            wall in 1e-3f64..1e3,
            frac in 0.0f64..0.999,
        ) {
            let comp = frac * p as f64 * wall;
            prop_assume!(comp > 0.0);
            let b = bd(p, wall, comp);
            let m = GranularityMetrics::from_breakdown(&b).unwrap();
            prop_assert!(m.overhead > 0.0);
            let closed = comp / wall;
            prop_assert!((m.estimated_speedup - closed).abs() <= 1e-9 * closed.max(1.0));
            prop_assert!(m.estimated_speedup <= p as f64 + 1e-9);
        }

        #[test]
        fn overhead_nonnegative(p in 1usize..64, wall in 1e-3f64..1e2, frac in 0.0f64..1.0) {
            let b = bd(p, wall, frac * p as f64 * wall);
            prop_assert!(compute_overhead(&b).seconds >= 0.0);
        }

        #[test]
        fn amdahl_monotone_and_bounded(f in 0.0f64..1.0, n in 1usize..4096) {
            let p = ScalingModelParams::amdahl(f).unwrap();
            let s = amdahl_speedup(&p, n);
            prop_assert!(amdahl_speedup(&p, n + 1) >= s);
            let g = ScalingModelParams::amdahl((f + 0.01).min(1.0)).unwrap();
            prop_assert!(amdahl_speedup(&g, n) >= s - 1e-12);
            prop_assert!(s <= (n as f64).min(1.0 / (1.0 - f)) * (1.0 + 1e-12));
        }

        #[test]
        fn gustafson_monotone(f in 0.0f64..=1.0, n in 1usize..4096) {
            let p = ScalingModelParams::gustafson(f).unwrap();
            prop_assert!(gustafson_speedup(&p, n + 1) >= gustafson_speedup(&p, n));
        }
    }
}

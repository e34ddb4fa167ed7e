//! Monte Carlo estimation of pi by quarter-circle rejection sampling.
//!
//! Samples are grouped in fixed blocks of [`SAMPLES_PER_STREAM`]; block `b`
//! draws from substream `b` of the seed. Workers receive contiguous runs of
//! blocks, so the hit count, and hence the estimate, does not depend on the
//! worker count.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_workers, partition, pin_current_worker, stream_rng, WorkloadError};
use crate::measurement::{RunHandle, RunRecord};

pub const SAMPLES_PER_STREAM: u64 = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PiSpec {
    #[serde(default)]
    pub n_samples: u64,
    #[serde(default)]
    pub seed: u64,
}

impl PiSpec {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        if self.n_samples == 0 {
            return Err(WorkloadError::InvalidSpec("n_samples must be positive".into()));
        }
        Ok(())
    }

    pub fn stream_count(&self) -> usize {
        self.n_samples.div_ceil(SAMPLES_PER_STREAM) as usize
    }

    fn stream_len(&self, stream: usize) -> u64 {
        let start = stream as u64 * SAMPLES_PER_STREAM;
        SAMPLES_PER_STREAM.min(self.n_samples - start)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PiResult {
    pub estimate: f64,
    pub hits: u64,
    /// Hits per sample stream, in stream order.
    pub stream_hits: Vec<u64>,
}

/// Counts quarter-circle hits among the samples of one stream.
pub fn stream_hits(spec: &PiSpec, stream: usize) -> u64 {
    let mut rng = stream_rng(spec.seed, stream as u64);
    let mut hits = 0;
    for _ in 0..spec.stream_len(stream) {
        let x: f64 = rng.random();
        let y: f64 = rng.random();
        hits += u64::from(x * x + y * y <= 1.0);
    }
    hits
}

fn sample_streams(spec: &PiSpec, streams: Range<usize>) -> Vec<u64> {
    streams.map(|s| stream_hits(spec, s)).collect()
}

pub fn monte_carlo_pi(
    spec: &PiSpec,
    workers: usize,
    handle: RunHandle,
) -> Result<(PiResult, RunRecord), WorkloadError> {
    spec.validate()?;
    check_workers(workers, &handle)?;
    let ranges = partition(spec.stream_count(), workers);
    let handle_ref = &handle;

    let per_worker: Vec<Result<Vec<u64>, WorkloadError>> = std::thread::scope(|scope| {
        let joins: Vec<_> = ranges
            .into_iter()
            .enumerate()
            .map(|(w, streams)| {
                scope.spawn(move || {
                    pin_current_worker(w);
                    Ok(handle_ref.timed(w, "sample", || sample_streams(spec, streams))?)
                })
            })
            .collect();
        joins
            .into_iter()
            .map(|j| j.join().expect("pi worker panicked"))
            .collect()
    });

    let mut stream_hits = Vec::with_capacity(spec.stream_count());
    for part in per_worker {
        stream_hits.extend(part?);
    }
    let hits: u64 = stream_hits.iter().sum();
    handle.set_iterations(1);
    let record = handle.finish()?;
    Ok((
        PiResult {
            estimate: 4.0 * hits as f64 / spec.n_samples as f64,
            hits,
            stream_hits,
        },
        record,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::begin_run;

    fn run(spec: &PiSpec, p: usize) -> (PiResult, RunRecord) {
        let h = begin_run("pi", p, spec.n_samples, spec.seed).unwrap();
        monte_carlo_pi(spec, p, h).unwrap()
    }

    #[test]
    fn single_sample_is_zero_or_four() {
        // Find seeds whose first draw lands inside and outside the circle.
        let inside = (0..100u64)
            .find(|&seed| stream_hits(&PiSpec { n_samples: 1, seed }, 0) == 1)
            .unwrap();
        let outside = (0..1000u64)
            .find(|&seed| stream_hits(&PiSpec { n_samples: 1, seed }, 0) == 0)
            .unwrap();
        assert_eq!(run(&PiSpec { n_samples: 1, seed: inside }, 1).0.estimate, 4.0);
        assert_eq!(run(&PiSpec { n_samples: 1, seed: outside }, 1).0.estimate, 0.0);
    }

    #[test]
    fn estimate_independent_of_workers() {
        let spec = PiSpec {
            n_samples: 1_000_003,
            seed: 42,
        };
        let (one, _) = run(&spec, 1);
        for p in [2, 3, 4, 7] {
            let (many, record) = run(&spec, p);
            assert_eq!(one.stream_hits, many.stream_hits);
            assert_eq!(one.estimate.to_bits(), many.estimate.to_bits());
            assert_eq!(record.spans.len(), p);
        }
        assert!((one.estimate - std::f64::consts::PI).abs() < 0.01);
    }

    #[test]
    fn more_workers_than_streams_still_cover_everyone() {
        let spec = PiSpec {
            n_samples: 10,
            seed: 3,
        };
        let (_, record) = run(&spec, 4);
        assert!(record.has_full_coverage());
        assert!(record.spans.iter().all(|s| s.phase_label == "sample"));
    }

    #[test]
    fn zero_samples_rejected() {
        let h = begin_run("pi", 1, 1, 0).unwrap();
        assert!(monte_carlo_pi(&PiSpec { n_samples: 0, seed: 0 }, 1, h).is_err());
    }
}

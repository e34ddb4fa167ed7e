//! Instrumented reference workloads.
//!
//! Every workload runs `workers` scoped threads that synchronize only at
//! barriers. Computation regions are recorded as spans on the shared
//! [`RunHandle`]; barrier waits and data exchange are never timed, so they
//! show up as overhead.
//!
//! Randomness comes from ChaCha8 (`rand_chacha::ChaCha8Rng`) keyed with
//! `seed_from_u64(seed)`. Independent substreams are selected with
//! `set_stream`, which makes every stream reproducible on any platform.

pub mod kmeans;
pub mod pi;
pub mod synthetic;

use std::ops::Range;
use std::sync::atomic::{AtomicBool, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::measurement::{begin_run, MeasurementError, RunHandle, RunRecord};

pub use kmeans::{generate_dataset, kmeans_parallel, kmeans_serial, Dataset, KMeansResult, KMeansSpec};
pub use pi::{monte_carlo_pi, PiResult, PiSpec};
pub use synthetic::{synthetic_run, SyntheticSpec};

/// Phase labels used by the built-in workloads.
pub const PHASE_LABELS: [&str; 5] = ["assign", "partial_sums", "update", "sample", "busy"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorkloadError {
    #[error("underfilled partition: {workers} workers for {items} items")]
    UnderfilledPartition { workers: usize, items: usize },
    #[error("invalid workload parameters: {0}")]
    InvalidSpec(String),
    #[error("worker count {given} does not match run handle ({expected})")]
    WorkerMismatch { given: usize, expected: usize },
    #[error("dataset has {got} values, expected {expected}")]
    DatasetMismatch { got: usize, expected: usize },
    #[error(transparent)]
    Measurement(#[from] MeasurementError),
}

/// Splits `0..items` into `parts` contiguous ranges; the first
/// `items % parts` ranges hold one extra item.
pub fn partition(items: usize, parts: usize) -> Vec<Range<usize>> {
    assert!(parts > 0, "partition into zero parts");
    let base = items / parts;
    let extra = items % parts;
    let mut start = 0;
    (0..parts)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

/// The generator for substream `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

static PIN_CORES: AtomicBool = AtomicBool::new(false);

/// Enables or disables pinning worker `i` to logical CPU `i mod ncpu`.
/// Only implemented on Linux; elsewhere the flag is ignored.
pub fn set_core_pinning(enabled: bool) {
    PIN_CORES.store(enabled, Ordering::Relaxed);
}

pub(crate) fn pin_current_worker(worker_id: usize) {
    if !PIN_CORES.load(Ordering::Relaxed) {
        return;
    }
    #[cfg(target_os = "linux")]
    unsafe {
        let ncpu = std::thread::available_parallelism().map_or(1, |n| n.get());
        let mut set: libc::cpu_set_t = std::mem::zeroed();
        libc::CPU_SET(worker_id % ncpu, &mut set);
        if libc::sched_setaffinity(0, std::mem::size_of::<libc::cpu_set_t>(), &set) != 0 {
            log::warn!("could not pin worker {worker_id}");
        }
    }
    #[cfg(not(target_os = "linux"))]
    let _ = worker_id;
}

pub(crate) fn check_workers(workers: usize, handle: &RunHandle) -> Result<(), WorkloadError> {
    if workers == 0 || workers != handle.workers() {
        return Err(WorkloadError::WorkerMismatch {
            given: workers,
            expected: handle.workers(),
        });
    }
    Ok(())
}

/// A workload template as it appears in plan files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WorkloadSpec {
    Kmeans(KMeansSpec),
    Pi(PiSpec),
    Synthetic(SyntheticSpec),
}

impl WorkloadSpec {
    pub fn id(&self) -> &'static str {
        match self {
            WorkloadSpec::Kmeans(_) => "kmeans",
            WorkloadSpec::Pi(_) => "pi",
            WorkloadSpec::Synthetic(_) => "synthetic",
        }
    }

    /// Builds the input for one problem size and seed. For K-means the
    /// problem size is the point count and for Pi the sample count; the
    /// synthetic workload uses it only as a label.
    pub fn prepare(&self, problem_size: u64, seed: u64) -> Result<PreparedWorkload, WorkloadError> {
        let size = usize::try_from(problem_size)
            .map_err(|_| WorkloadError::InvalidSpec(format!("problem size {problem_size}")))?;
        Ok(match self {
            WorkloadSpec::Kmeans(spec) => {
                let spec = KMeansSpec {
                    n_points: size,
                    seed,
                    ..spec.clone()
                };
                spec.validate()?;
                let data = generate_dataset(&spec);
                PreparedWorkload::Kmeans { spec, data }
            }
            WorkloadSpec::Pi(_) => {
                let spec = PiSpec {
                    n_samples: problem_size,
                    seed,
                };
                spec.validate()?;
                PreparedWorkload::Pi(spec)
            }
            WorkloadSpec::Synthetic(spec) => {
                spec.validate()?;
                PreparedWorkload::Synthetic {
                    spec: spec.clone(),
                    problem_size,
                    seed,
                }
            }
        })
    }
}

/// A workload with its input materialized, ready for repeated runs.
#[derive(Debug, Clone)]
pub enum PreparedWorkload {
    Kmeans { spec: KMeansSpec, data: Dataset },
    Pi(PiSpec),
    Synthetic {
        spec: SyntheticSpec,
        problem_size: u64,
        seed: u64,
    },
}

impl PreparedWorkload {
    pub fn id(&self) -> &'static str {
        match self {
            PreparedWorkload::Kmeans { .. } => "kmeans",
            PreparedWorkload::Pi(_) => "pi",
            PreparedWorkload::Synthetic { .. } => "synthetic",
        }
    }

    pub fn problem_size(&self) -> u64 {
        match self {
            PreparedWorkload::Kmeans { spec, .. } => spec.n_points as u64,
            PreparedWorkload::Pi(spec) => spec.n_samples,
            PreparedWorkload::Synthetic { problem_size, .. } => *problem_size,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            PreparedWorkload::Kmeans { spec, .. } => spec.seed,
            PreparedWorkload::Pi(spec) => spec.seed,
            PreparedWorkload::Synthetic { seed, .. } => *seed,
        }
    }

    /// Executes one instrumented run with `workers` workers.
    pub fn run(&self, workers: usize) -> Result<RunRecord, WorkloadError> {
        let handle = begin_run(self.id(), workers, self.problem_size(), self.seed())?;
        match self {
            PreparedWorkload::Kmeans { spec, data } => {
                kmeans_parallel(spec, data, workers, handle).map(|(_, r)| r)
            }
            PreparedWorkload::Pi(spec) => monte_carlo_pi(spec, workers, handle).map(|(_, r)| r),
            PreparedWorkload::Synthetic { spec, .. } => synthetic_run(spec, workers, handle),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn partition_gives_extra_to_leading_workers() {
        assert_eq!(partition(10, 4), vec![0..3, 3..6, 6..8, 8..10]);
        assert_eq!(partition(3, 3), vec![0..1, 1..2, 2..3]);
        assert_eq!(partition(2, 3), vec![0..1, 1..2, 2..2]);
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        use rand::Rng;
        let a: u64 = stream_rng(42, 3).random();
        let b: u64 = stream_rng(42, 3).random();
        let c: u64 = stream_rng(42, 4).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn plan_json_uses_kind_tag() {
        let spec: WorkloadSpec = serde_json::from_str(
            r#"{"kind":"synthetic","compute_ms_per_worker":9.0,"exchange_ms_per_worker":1.0,"iterations":3}"#,
        )
        .unwrap();
        assert_eq!(spec.id(), "synthetic");
    }

    proptest! {
        #[test]
        fn partition_covers_exactly_once(items in 0usize..10_000, parts in 1usize..128) {
            let ranges = partition(items, parts);
            prop_assert_eq!(ranges.len(), parts);
            let mut next = 0;
            for r in &ranges {
                prop_assert_eq!(r.start, next);
                next = r.end;
            }
            prop_assert_eq!(next, items);
            let lens: Vec<usize> = ranges.iter().map(|r| r.len()).collect();
            let max = *lens.iter().max().unwrap();
            let min = *lens.iter().min().unwrap();
            prop_assert!(max - min <= 1);
        }
    }
}

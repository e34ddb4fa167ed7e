//! Span-based instrumentation of parallel runs.
//!
//! A [`RunHandle`] is opened by the coordinating thread, shared by reference
//! with every worker and closed with [`RunHandle::finish`]. Workers record the
//! duration of their computation regions as [`Span`]s. Each worker appends to
//! its own buffer so recording never contends across workers, and the timing
//! of a region always completes before the span is stored.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{MetricsError, TimingBreakdown};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasurementError {
    #[error("worker count must be at least 1")]
    NoWorkers,
    #[error("problem size must be at least 1")]
    EmptyProblem,
    #[error("worker id {worker_id} out of range for {workers} workers")]
    WorkerOutOfRange { worker_id: usize, workers: usize },
    #[error("run {0} is already finished")]
    AlreadyFinished(String),
    #[error("run {0} does not cover every worker")]
    IncompleteCoverage(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// One timed computation region of one worker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Span {
    #[serde(rename = "worker")]
    pub worker_id: usize,
    #[serde(rename = "duration_s")]
    pub duration: f64,
    #[serde(rename = "phase")]
    pub phase_label: String,
}

/// Immutable evidence of a finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub workload_id: String,
    pub workers: usize,
    pub problem_size: u64,
    pub seed: u64,
    #[serde(rename = "wall_clock_s")]
    pub wall_clock: f64,
    pub iterations: u64,
    pub started_at: DateTime<Utc>,
    pub spans: Vec<Span>,
}

impl RunRecord {
    /// Whether every worker recorded at least one span.
    pub fn has_full_coverage(&self) -> bool {
        let mut seen = vec![false; self.workers];
        for span in &self.spans {
            if let Some(slot) = seen.get_mut(span.worker_id) {
                *slot = true;
            }
        }
        seen.into_iter().all(|s| s)
    }

    pub fn comp_per_worker(&self) -> Vec<f64> {
        let mut per = vec![Vec::new(); self.workers];
        for span in &self.spans {
            per[span.worker_id].push(span.duration);
        }
        per.into_iter().map(exact_order_sum).collect()
    }
}

/// Sums after sorting so the result does not depend on arrival order.
fn exact_order_sum(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values.into_iter().sum()
}

/// `total_comp` is the sum of all span durations.
pub fn aggregate(record: &RunRecord) -> Result<TimingBreakdown, MeasurementError> {
    if !record.has_full_coverage() {
        return Err(MeasurementError::IncompleteCoverage(record.run_id.clone()));
    }
    let total = exact_order_sum(record.spans.iter().map(|s| s.duration).collect());
    Ok(TimingBreakdown::new(
        record.workers,
        record.wall_clock,
        total,
    )?)
}

static RUN_COUNTER: AtomicU64 = AtomicU64::new(0);

fn next_run_id(started_at: &DateTime<Utc>) -> String {
    let n = RUN_COUNTER.fetch_add(1, Ordering::Relaxed);
    format!(
        "{:x}-{:x}-{n}",
        started_at.timestamp_micros(),
        std::process::id()
    )
}

/// An active run accepting spans from its workers.
#[derive(Debug)]
pub struct RunHandle {
    run_id: String,
    workload_id: String,
    workers: usize,
    problem_size: u64,
    seed: u64,
    started_at: DateTime<Utc>,
    start: Instant,
    buffers: Vec<Mutex<Vec<Span>>>,
    iterations: AtomicU64,
    finished: AtomicBool,
}

/// Starts the run's wall clock.
pub fn begin_run(
    workload_id: &str,
    workers: usize,
    problem_size: u64,
    seed: u64,
) -> Result<RunHandle, MeasurementError> {
    if workers == 0 {
        return Err(MeasurementError::NoWorkers);
    }
    if problem_size == 0 {
        return Err(MeasurementError::EmptyProblem);
    }
    let started_at = Utc::now();
    Ok(RunHandle {
        run_id: next_run_id(&started_at),
        workload_id: workload_id.to_owned(),
        workers,
        problem_size,
        seed,
        started_at,
        buffers: (0..workers).map(|_| Mutex::new(Vec::with_capacity(64))).collect(),
        iterations: AtomicU64::new(0),
        finished: AtomicBool::new(false),
        start: Instant::now(),
    })
}

impl RunHandle {
    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn span_count(&self) -> usize {
        self.buffers
            .iter()
            .map(|b| b.lock().expect("span buffer poisoned").len())
            .sum()
    }

    pub fn record_span(
        &self,
        worker_id: usize,
        duration: f64,
        phase_label: &str,
    ) -> Result<(), MeasurementError> {
        if self.finished.load(Ordering::Acquire) {
            return Err(MeasurementError::AlreadyFinished(self.run_id.clone()));
        }
        let buffer = self
            .buffers
            .get(worker_id)
            .ok_or(MeasurementError::WorkerOutOfRange {
                worker_id,
                workers: self.workers,
            })?;
        buffer.lock().expect("span buffer poisoned").push(Span {
            worker_id,
            duration: duration.max(0.0),
            phase_label: phase_label.to_owned(),
        });
        Ok(())
    }

    /// Times `f` and records it as a span once it has returned.
    pub fn timed<T>(
        &self,
        worker_id: usize,
        phase_label: &str,
        f: impl FnOnce() -> T,
    ) -> Result<T, MeasurementError> {
        let start = Instant::now();
        let out = f();
        let elapsed = start.elapsed();
        self.record_span(worker_id, elapsed.as_secs_f64(), phase_label)?;
        Ok(out)
    }

    pub fn set_iterations(&self, iterations: u64) {
        self.iterations.store(iterations, Ordering::Relaxed);
    }

    pub fn elapsed(&self) -> Duration {
        self.start.elapsed()
    }

    /// Stops the wall clock and freezes the record.
    pub fn finish(&self) -> Result<RunRecord, MeasurementError> {
        let wall = self.start.elapsed();
        if self.finished.swap(true, Ordering::AcqRel) {
            return Err(MeasurementError::AlreadyFinished(self.run_id.clone()));
        }
        let mut spans = Vec::new();
        for buffer in &self.buffers {
            spans.append(&mut buffer.lock().expect("span buffer poisoned"));
        }
        Ok(RunRecord {
            run_id: self.run_id.clone(),
            workload_id: self.workload_id.clone(),
            workers: self.workers,
            problem_size: self.problem_size,
            seed: self.seed,
            wall_clock: wall.as_secs_f64(),
            iterations: self.iterations.load(Ordering::Relaxed),
            started_at: self.started_at,
            spans,
        })
    }
}

pub fn record_span(
    handle: &RunHandle,
    worker_id: usize,
    duration: f64,
    phase_label: &str,
) -> Result<(), MeasurementError> {
    handle.record_span(worker_id, duration, phase_label)
}

pub fn finish_run(handle: &RunHandle) -> Result<RunRecord, MeasurementError> {
    handle.finish()
}

/// Spins until `duration` has elapsed on the monotonic clock. The loop yields
/// so that oversubscribed threads still observe their deadlines promptly.
pub fn busy_wait(duration: Duration) {
    let start = Instant::now();
    while start.elapsed() < duration {
        std::thread::yield_now();
    }
}

//! A workload with a known computation to exchange ratio.
//!
//! Each iteration every worker spins for `compute_ms_per_worker` inside a
//! timed span, meets the others at a barrier and then spins, untimed, for
//! `exchange_ms_per_worker`. The expected isogranularity is
//! `compute_ms / exchange_ms`.

use std::sync::Barrier;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{check_workers, pin_current_worker, WorkloadError};
use crate::measurement::{busy_wait, RunHandle, RunRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub compute_ms_per_worker: f64,
    pub exchange_ms_per_worker: f64,
    pub iterations: usize,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.compute_ms_per_worker) || !positive(self.exchange_ms_per_worker) {
            return Err(WorkloadError::InvalidSpec(
                "synthetic durations must be positive".into(),
            ));
        }
        if self.iterations == 0 {
            return Err(WorkloadError::InvalidSpec("iterations must be positive".into()));
        }
        Ok(())
    }

    pub fn expected_granularity(&self) -> f64 {
        self.compute_ms_per_worker / self.exchange_ms_per_worker
    }
}

pub fn synthetic_run(
    spec: &SyntheticSpec,
    workers: usize,
    handle: RunHandle,
) -> Result<RunRecord, WorkloadError> {
    spec.validate()?;
    check_workers(workers, &handle)?;
    let compute = Duration::from_secs_f64(spec.compute_ms_per_worker / 1e3);
    let exchange = Duration::from_secs_f64(spec.exchange_ms_per_worker / 1e3);
    let barrier = Barrier::new(workers);
    let handle_ref = &handle;

    std::thread::scope(|scope| {
        let joins: Vec<_> = (0..workers)
            .map(|w| {
                let barrier = &barrier;
                scope.spawn(move || -> Result<(), WorkloadError> {
                    pin_current_worker(w);
                    for _ in 0..spec.iterations {
                        handle_ref.timed(w, "busy", || busy_wait(compute))?;
                        barrier.wait();
                        busy_wait(exchange);
                    }
                    Ok(())
                })
            })
            .collect();
        joins
            .into_iter()
            .map(|j| j.join().expect("synthetic worker panicked"))
            .collect::<Result<Vec<()>, _>>()
    })?;

    handle.set_iterations(spec.iterations as u64);
    Ok(handle.finish()?)
}

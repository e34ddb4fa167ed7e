//! Estimate the speedup, efficiency and scalability of a parallel program from
//! a single instrumented parallel run.
//!
//! The crate is organized bottom-up:
//!
//! * [`metrics`]: overhead, isogranularity, efficiency, Amdahl/Gustafson laws.
//! * [`measurement`]: span recording for parallel runs.
//! * [`stats`]: Tukey-fence outlier rejection and averaging of repetitions.
//! * [`workloads`]: instrumented K-means, Monte Carlo pi and a synthetic load.
//! * [`harness`]: strong/weak scaling sweeps with resumable JSONL results.
//! * [`report`]: CSV and table output, verdicts, and the published fixture.

pub mod harness;
pub mod measurement;
pub mod metrics;
pub mod report;
pub mod stats;
pub mod workloads;

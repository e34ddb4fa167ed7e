//! Strong and weak scaling sweeps.
//!
//! A plan expands into cells `(workers, problem_size)`. Each cell is run
//! `repetitions` times after one untimed warm-up; wall-clock outliers are
//! dropped together with their runs, optionally re-measured, and the kept runs
//! are averaged into a [`CellResult`]. Serial baselines are measured with the
//! same code at one worker. Cells run one after another in ascending
//! `(workers, problem_size)` order and each result is appended to a JSON Lines
//! file as soon as it is known, so an interrupted sweep can be resumed.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::measurement::{aggregate, RunRecord};
use crate::metrics::{relative_error, GranularityMetrics, TimingBreakdown};
use crate::stats::{self, filter_outliers, OutlierSide};
use crate::workloads::{PreparedWorkload, WorkloadSpec};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Environment variable that replaces the plan seed.
pub const SEED_ENV: &str = "GRANSCALE_SEED";

/// Upper bound on replacement runs per cell when outliers are re-measured.
pub const MAX_EXTRA_ATTEMPTS: usize = 3;

type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("corrupt results file at line {line}: {reason}")]
    CorruptResults { line: usize, reason: String },
    #[error("plan mismatch: results were produced by plan {found}, expected {expected}")]
    PlanMismatch { expected: String, found: String },
    #[error("cell {workload} p={workers} W={problem_size} failed: {source}")]
    CellFailed {
        workload: String,
        workers: usize,
        problem_size: u64,
        #[source]
        source: BoxError,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_owned(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingMode {
    /// Fixed total problem size.
    Strong,
    /// Fixed problem size per worker.
    Weak,
}

fn default_repetitions() -> usize {
    stats::DEFAULT_REPETITIONS
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub workload: WorkloadSpec,
    pub mode: ScalingMode,
    pub worker_counts: Vec<usize>,
    pub base_problem_size: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem_sizes: Option<Vec<u64>>,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default = "default_true")]
    pub measure_serial_baseline: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub rerun_outliers: bool,
    #[serde(default)]
    pub outlier_side: OutlierSide,
    /// Free-form description of the hardware configuration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<serde_json::Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub workers: usize,
    pub problem_size: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellRole {
    /// A cell of the sweep itself.
    Cell,
    /// A one-worker reference measurement for speedup.
    Baseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduledCell {
    pub role: CellRole,
    pub cell: Cell,
}

impl ExperimentPlan {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let plan: Self = serde_json::from_str(text)?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        Self::from_json(&std::fs::read_to_string(path).map_err(io_err(path))?)
    }

    /// Replaces the seed with `GRANSCALE_SEED` when it is set.
    pub fn apply_env_seed(&mut self) -> Result<(), HarnessError> {
        if let Ok(value) = std::env::var(SEED_ENV) {
            self.seed = value.trim().parse().map_err(|_| {
                HarnessError::InvalidPlan(format!("{SEED_ENV}={value:?} is not a u64"))
            })?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::InvalidPlan(m));
        if self.worker_counts.is_empty() {
            return bad("worker_counts is empty".into());
        }
        if self.worker_counts[0] == 0 {
            return bad("worker counts must be positive".into());
        }
        if self.worker_counts.windows(2).any(|w| w[0] >= w[1]) {
            return bad("worker_counts must be strictly ascending".into());
        }
        if self.base_problem_size == 0 {
            return bad("base_problem_size must be positive".into());
        }
        if self.repetitions == 0 {
            return bad("repetitions must be positive".into());
        }
        if let Some(sizes) = &self.problem_sizes {
            if sizes.is_empty() || sizes.contains(&0) {
                return bad("problem_sizes must be nonempty and positive".into());
            }
        }
        if self.mode == ScalingMode::Weak {
            let min_p = self.worker_counts[0] as u64;
            if !self.base_problem_size.is_multiple_of(min_p) {
                return bad(format!(
                    "weak scaling needs base_problem_size {} divisible by {min_p}",
                    self.base_problem_size
                ));
            }
        }
        Ok(())
    }

    /// Stable digest of the canonical JSON form (object keys sorted).
    pub fn plan_hash(&self) -> String {
        let canonical = serde_json::to_value(self)
            .and_then(|v| serde_json::to_string(&v))
            .expect("plan serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

/// The `(workers, problem_size)` grid of a plan in execution order.
pub fn plan_cells(plan: &ExperimentPlan) -> Result<Vec<Cell>, HarnessError> {
    plan.validate()?;
    let mut cells = Vec::new();
    match plan.mode {
        ScalingMode::Strong => {
            let mut sizes = plan
                .problem_sizes
                .clone()
                .unwrap_or_else(|| vec![plan.base_problem_size]);
            sizes.sort_unstable();
            sizes.dedup();
            for &workers in &plan.worker_counts {
                for &problem_size in &sizes {
                    cells.push(Cell {
                        workers,
                        problem_size,
                    });
                }
            }
        }
        ScalingMode::Weak => {
            let per_worker = plan.base_problem_size / plan.worker_counts[0] as u64;
            for &workers in &plan.worker_counts {
                cells.push(Cell {
                    workers,
                    problem_size: per_worker * workers as u64,
                });
            }
        }
    }
    Ok(cells)
}

/// Plan cells preceded by the one-worker baselines they need.
pub fn schedule(plan: &ExperimentPlan) -> Result<Vec<ScheduledCell>, HarnessError> {
    let cells = plan_cells(plan)?;
    let mut out = Vec::new();
    if plan.measure_serial_baseline {
        let mut sizes: Vec<u64> = cells.iter().map(|c| c.problem_size).collect();
        sizes.sort_unstable();
        sizes.dedup();
        out.extend(sizes.into_iter().map(|problem_size| ScheduledCell {
            role: CellRole::Baseline,
            cell: Cell {
                workers: 1,
                problem_size,
            },
        }));
    }
    out.extend(cells.into_iter().map(|cell| ScheduledCell {
        role: CellRole::Cell,
        cell,
    }));
    Ok(out)
}

/// Aggregated outcome of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub role: CellRole,
    pub workload_id: String,
    pub workers: usize,
    pub problem_size: u64,
    pub seed: u64,
    pub repetitions: usize,
    pub runs: usize,
    pub kept: usize,
    pub rejected: usize,
    pub mean_wall: f64,
    pub mean_total_comp: f64,
    pub metrics: GranularityMetrics,
    pub actual_speedup: Option<f64>,
    pub relative_error: Option<f64>,
    /// Wall-clock times of the kept runs, in execution order.
    pub wall_samples: Vec<f64>,
    pub completed_at: DateTime<Utc>,
}

impl CellResult {
    pub fn cell(&self) -> Cell {
        Cell {
            workers: self.workers,
            problem_size: self.problem_size,
        }
    }

    pub fn is_incomplete(&self) -> bool {
        self.kept < self.repetitions
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsHeader {
    pub plan_hash: String,
    pub plan: ExperimentPlan,
    pub tool_version: String,
}

impl ResultsHeader {
    pub fn new(plan: &ExperimentPlan) -> Self {
        Self {
            plan_hash: plan.plan_hash(),
            plan: plan.clone(),
            tool_version: TOOL_VERSION.to_owned(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultSet {
    pub header: ResultsHeader,
    pub cells: Vec<CellResult>,
}

impl ResultSet {
    pub fn mode(&self) -> ScalingMode {
        self.header.plan.mode
    }

    pub fn sweep_cells(&self) -> impl Iterator<Item = &CellResult> {
        self.cells.iter().filter(|c| c.role == CellRole::Cell)
    }

    pub fn baselines(&self) -> BTreeMap<u64, &CellResult> {
        self.cells
            .iter()
            .filter(|c| c.role == CellRole::Baseline)
            .map(|c| (c.problem_size, c))
            .collect()
    }

    pub fn is_complete(&self) -> bool {
        schedule(&self.header.plan).is_ok_and(|s| s.len() == self.cells.len())
    }

    /// Reads a results file. A final line without a trailing newline is a
    /// torn write and is ignored.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Ok(parse_results(&text)?.0)
    }
}

/// Parses results text; also returns the byte length of the intact prefix.
fn parse_results(text: &str) -> Result<(ResultSet, usize), HarnessError> {
    let intact = text.rfind('\n').map_or(0, |i| i + 1);
    let mut lines = text[..intact].lines().enumerate();
    let (_, first) = lines.next().ok_or(HarnessError::CorruptResults {
        line: 1,
        reason: "missing header".into(),
    })?;
    let header: ResultsHeader =
        serde_json::from_str(first).map_err(|e| HarnessError::CorruptResults {
            line: 1,
            reason: format!("bad header: {e}"),
        })?;
    if header.plan.plan_hash() != header.plan_hash {
        return Err(HarnessError::CorruptResults {
            line: 1,
            reason: "header plan does not match its plan_hash".into(),
        });
    }
    let mut cells = Vec::new();
    for (i, line) in lines {
        let cell: CellResult =
            serde_json::from_str(line).map_err(|e| HarnessError::CorruptResults {
                line: i + 1,
                reason: e.to_string(),
            })?;
        cells.push(cell);
    }
    Ok((ResultSet { header, cells }, intact))
}

#[derive(Debug, Clone, Default)]
pub struct RunnerOptions {
    /// Stop after this many newly executed cells.
    pub max_new_cells: Option<usize>,
    /// Append every run's raw record to this JSON Lines file.
    pub runs_log: Option<PathBuf>,
}

struct Sink {
    path: PathBuf,
    file: File,
}

impl Sink {
    fn append(&mut self, value: &impl Serialize) -> Result<(), HarnessError> {
        let mut line = serde_json::to_vec(value)?;
        line.push(b'\n');
        self.file.write_all(&line).map_err(io_err(&self.path))?;
        self.file.flush().map_err(io_err(&self.path))?;
        self.file.sync_data().map_err(io_err(&self.path))
    }
}

fn open_append(path: &Path) -> Result<Sink, HarnessError> {
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    Ok(Sink {
        path: path.to_owned(),
        file,
    })
}

/// Runs the whole plan in memory.
pub fn run_plan(plan: &ExperimentPlan) -> Result<ResultSet, HarnessError> {
    execute(plan, Vec::new(), None, &RunnerOptions::default())
}

/// Runs the plan, writing a fresh results file at `out`.
pub fn run_plan_to(
    plan: &ExperimentPlan,
    out: &Path,
    options: &RunnerOptions,
) -> Result<ResultSet, HarnessError> {
    plan.validate()?;
    File::create(out).map_err(io_err(out))?;
    let mut sink = open_append(out)?;
    sink.append(&ResultsHeader::new(plan))?;
    execute(plan, Vec::new(), Some(sink), options)
}

/// Continues the sweep recorded in `results_path`. When `expected` is given
/// its hash must match the one stored in the file.
pub fn resume(
    results_path: &Path,
    expected: Option<&ExperimentPlan>,
    options: &RunnerOptions,
) -> Result<ResultSet, HarnessError> {
    let text = std::fs::read_to_string(results_path).map_err(io_err(results_path))?;
    let (existing, intact) = parse_results(&text)?;
    if let Some(plan) = expected {
        let expected_hash = plan.plan_hash();
        if expected_hash != existing.header.plan_hash {
            return Err(HarnessError::PlanMismatch {
                expected: expected_hash,
                found: existing.header.plan_hash,
            });
        }
    }
    let plan = existing.header.plan.clone();
    let order = schedule(&plan)?;
    if existing.cells.len() > order.len() {
        return Err(HarnessError::CorruptResults {
            line: order.len() + 2,
            reason: "more records than the plan has cells".into(),
        });
    }
    for (i, (done, want)) in existing.cells.iter().zip(&order).enumerate() {
        if done.role != want.role || done.cell() != want.cell {
            return Err(HarnessError::CorruptResults {
                line: i + 2,
                reason: format!("record does not match scheduled cell {:?}", want.cell),
            });
        }
    }
    if intact < text.len() {
        log::warn!("dropping torn final record in {}", results_path.display());
        let file = OpenOptions::new()
            .write(true)
            .open(results_path)
            .map_err(io_err(results_path))?;
        file.set_len(intact as u64).map_err(io_err(results_path))?;
    }
    let sink = open_append(results_path)?;
    execute(&plan, existing.cells, Some(sink), options)
}

fn execute(
    plan: &ExperimentPlan,
    mut done: Vec<CellResult>,
    mut sink: Option<Sink>,
    options: &RunnerOptions,
) -> Result<ResultSet, HarnessError> {
    let order = schedule(plan)?;
    let max_p = *plan.worker_counts.last().expect("validated");
    let cpus = std::thread::available_parallelism().map_or(1, |n| n.get());
    if cpus < max_p {
        log::warn!("plan uses up to {max_p} workers but the host has {cpus} logical CPUs");
    }
    let mut runs_log = options.runs_log.as_deref().map(open_append).transpose()?;

    let mut baselines: BTreeMap<u64, f64> = done
        .iter()
        .filter(|c| c.role == CellRole::Baseline)
        .map(|c| (c.problem_size, c.mean_wall))
        .collect();
    let mut prepared: Option<PreparedWorkload> = None;
    for (executed, scheduled) in order[done.len()..].iter().enumerate() {
        if options.max_new_cells.is_some_and(|max| executed >= max) {
            break;
        }
        let cell = scheduled.cell;
        let fail = |source: BoxError| HarnessError::CellFailed {
            workload: plan.workload.id().to_owned(),
            workers: cell.workers,
            problem_size: cell.problem_size,
            source,
        };
        if prepared
            .as_ref()
            .is_none_or(|p| p.problem_size() != cell.problem_size)
        {
            prepared = Some(
                plan.workload
                    .prepare(cell.problem_size, plan.seed)
                    .map_err(|e| fail(e.into()))?,
            );
        }
        let workload = prepared.as_ref().expect("prepared above");
        log::info!(
            "{} {:?} p={} W={}",
            workload.id(),
            scheduled.role,
            cell.workers,
            cell.problem_size
        );
        let mut result =
            measure_cell(plan, workload, scheduled.role, cell.workers, runs_log.as_mut())
                .map_err(fail)?;
        match scheduled.role {
            CellRole::Baseline => {
                baselines.insert(cell.problem_size, result.mean_wall);
            }
            CellRole::Cell => {
                if let Some(&t1) = baselines.get(&cell.problem_size) {
                    let actual = t1 / result.mean_wall;
                    result.actual_speedup = Some(actual);
                    result.relative_error = Some(
                        relative_error(actual, result.metrics.estimated_speedup)
                            .map_err(|e| fail(e.into()))?,
                    );
                }
            }
        }
        if let Some(sink) = sink.as_mut() {
            sink.append(&result)?;
        }
        done.push(result);
    }

    Ok(ResultSet {
        header: ResultsHeader::new(plan),
        cells: done,
    })
}

fn run_once(
    workload: &PreparedWorkload,
    workers: usize,
    runs_log: Option<&mut Sink>,
) -> Result<(RunRecord, TimingBreakdown), BoxError> {
    let record = workload.run(workers)?;
    if let Some(log) = runs_log {
        log.append(&record)?;
    }
    let breakdown = aggregate(&record)?;
    Ok((record, breakdown))
}

fn measure_cell(
    plan: &ExperimentPlan,
    workload: &PreparedWorkload,
    role: CellRole,
    workers: usize,
    mut runs_log: Option<&mut Sink>,
) -> Result<CellResult, BoxError> {
    // Warm-up, not counted.
    workload.run(workers)?;

    let mut series = Vec::with_capacity(plan.repetitions);
    for _ in 0..plan.repetitions {
        series.push(run_once(workload, workers, runs_log.as_deref_mut())?.1);
    }
    let mut runs = plan.repetitions;
    let mut extra = 0;
    let mut rejected_total = 0;
    loop {
        let walls: Vec<f64> = series.iter().map(|b| b.wall_clock()).collect();
        let decision = filter_outliers(&walls, plan.outlier_side)?;
        if decision.rejected.is_empty() {
            break;
        }
        rejected_total += decision.rejected.len();
        series = series
            .into_iter()
            .enumerate()
            .filter(|(i, _)| decision.is_kept(*i))
            .map(|(_, b)| b)
            .collect();
        if !plan.rerun_outliers || extra >= MAX_EXTRA_ATTEMPTS {
            break;
        }
        let refill = decision.rejected.len().min(MAX_EXTRA_ATTEMPTS - extra);
        for _ in 0..refill {
            series.push(run_once(workload, workers, runs_log.as_deref_mut())?.1);
        }
        extra += refill;
        runs += refill;
    }
    if series.len() < plan.repetitions {
        log::warn!(
            "p={workers} W={}: only {} of {} repetitions kept",
            workload.problem_size(),
            series.len(),
            plan.repetitions
        );
    }

    let walls: Vec<f64> = series.iter().map(|b| b.wall_clock()).collect();
    let comps: Vec<f64> = series.iter().map(|b| b.total_comp()).collect();
    let mean_wall = stats::mean(&walls)?;
    let mean_total_comp = stats::mean(&comps)?;
    let mean = TimingBreakdown::new(workers, mean_wall, mean_total_comp)?;
    Ok(CellResult {
        role,
        workload_id: workload.id().to_owned(),
        workers,
        problem_size: workload.problem_size(),
        seed: workload.seed(),
        repetitions: plan.repetitions,
        runs,
        kept: series.len(),
        rejected: rejected_total,
        mean_wall,
        mean_total_comp,
        metrics: GranularityMetrics::from_breakdown(&mean)?,
        actual_speedup: None,
        relative_error: None,
        wall_samples: walls,
        completed_at: Utc::now(),
    })
}

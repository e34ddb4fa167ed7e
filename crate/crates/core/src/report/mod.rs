//! Presentation of sweep results: strong-scaling CSV, weak-scaling time and
//! speedup tables, scalability verdicts, and the published fixture check.
//!
//! Every function here is a pure transformation of its input, so output is
//! byte-for-byte reproducible for a given [`ResultSet`].

pub mod fixture;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use serde::Serialize;
use thiserror::Error;

use crate::harness::{CellResult, ResultSet, ScalingMode};
use crate::metrics::infer_gustafson_fraction;

pub use fixture::{validate_fixture, FixtureValidation};

pub const FLAG_CLAMPED: &str = "clamped_overhead";
pub const FLAG_SUPERLINEAR: &str = "superlinear";
pub const FLAG_INCOMPLETE: &str = "incomplete_samples";

/// Header of [`strong_scaling_csv`]; part of the stable interface.
pub const STRONG_CSV_HEADER: &str =
    "workers,problem_size,actual_speedup,estimated_speedup,relative_error,efficiency";

/// Default efficiency below which a strong-scaling sweep is not scalable.
pub const DEFAULT_EFFICIENCY_FLOOR: f64 = 0.5;

/// Largest accepted `(max - min) / min` of wall time along a weak track.
pub const WEAK_WALL_BAND: f64 = 0.25;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReportError {
    #[error("expected results of a {expected:?} scaling plan, got {found:?}")]
    ModeMismatch {
        expected: ScalingMode,
        found: ScalingMode,
    },
    #[error("no serial baseline for problem size {0}")]
    MissingBaseline(u64),
}

fn expect_mode(results: &ResultSet, expected: ScalingMode) -> Result<(), ReportError> {
    if results.mode() != expected {
        return Err(ReportError::ModeMismatch {
            expected,
            found: results.mode(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub workers: usize,
    pub problem_size: u64,
    pub mean_wall: f64,
    /// `None` stands for infinite granularity.
    pub granularity: Option<f64>,
    pub efficiency: f64,
    pub estimated_speedup: f64,
    pub actual_speedup: Option<f64>,
    pub relative_error: Option<f64>,
    pub anomaly_flags: BTreeSet<&'static str>,
}

impl ReportRow {
    pub fn from_cell(cell: &CellResult) -> Self {
        let mut flags = BTreeSet::new();
        if cell.metrics.clamped {
            flags.insert(FLAG_CLAMPED);
        }
        if cell.actual_speedup.is_some_and(|s| s > cell.workers as f64) {
            flags.insert(FLAG_SUPERLINEAR);
        }
        if cell.is_incomplete() {
            flags.insert(FLAG_INCOMPLETE);
        }
        Self {
            workers: cell.workers,
            problem_size: cell.problem_size,
            mean_wall: cell.mean_wall,
            granularity: cell.metrics.granularity.is_finite().then_some(cell.metrics.granularity),
            efficiency: cell.metrics.efficiency,
            estimated_speedup: cell.metrics.estimated_speedup,
            actual_speedup: cell.actual_speedup,
            relative_error: cell.relative_error,
            anomaly_flags: flags,
        }
    }
}

/// Sweep cells (baselines excluded) sorted by `(problem_size, workers)`.
pub fn report_rows(results: &ResultSet) -> Vec<ReportRow> {
    let mut rows: Vec<ReportRow> = results.sweep_cells().map(ReportRow::from_cell).collect();
    rows.sort_by_key(|r| (r.problem_size, r.workers));
    rows
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn fixed(v: Option<f64>, width: usize) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:>width$.3}"),
        Some(_) => format!("{:>width$}", "inf"),
        None => format!("{:>width$}", "-"),
    }
}

pub fn strong_scaling_csv(results: &ResultSet) -> Result<String, ReportError> {
    expect_mode(results, ScalingMode::Strong)?;
    let mut out = String::from(STRONG_CSV_HEADER);
    out.push('\n');
    for row in report_rows(results) {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            row.workers,
            row.problem_size,
            opt(row.actual_speedup),
            row.estimated_speedup,
            opt(row.relative_error),
            row.efficiency
        );
    }
    Ok(out)
}

/// Fixed-width text version of [`report_rows`].
pub fn rows_table(results: &ResultSet) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>7} {:>12} {:>10} {:>11} {:>10} {:>9} {:>9} {:>9}  flags",
        "workers", "problem_size", "mean_wall", "granularity", "efficiency", "est_S", "act_S", "rel_err"
    );
    for r in report_rows(results) {
        let flags: Vec<&str> = r.anomaly_flags.iter().copied().collect();
        let _ = writeln!(
            out,
            "{:>7} {:>12} {} {} {} {} {} {}  {}",
            r.workers,
            r.problem_size,
            fixed(Some(r.mean_wall), 10),
            fixed(Some(r.granularity.unwrap_or(f64::INFINITY)), 11),
            fixed(Some(r.efficiency), 10),
            fixed(Some(r.estimated_speedup), 9),
            fixed(r.actual_speedup, 9),
            fixed(r.relative_error, 9),
            flags.join(",")
        );
    }
    out
}

/// A labelled numeric table with optional cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub title: String,
    pub columns: Vec<String>,
    pub rows: Vec<(u64, Vec<Option<f64>>)>,
}

impl Table {
    /// Fixed-width text with three decimals.
    pub fn to_text(&self) -> String {
        let width = 12;
        let mut out = format!("{}\n{:>12}", self.title, "problem_size");
        for c in &self.columns {
            let _ = write!(out, " {c:>width$}");
        }
        out.push('\n');
        for (label, values) in &self.rows {
            let _ = write!(out, "{label:>12}");
            for v in values {
                let _ = write!(out, " {}", fixed(*v, width));
            }
            out.push('\n');
        }
        out
    }

    /// CSV at full precision.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("problem_size");
        for c in &self.columns {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (label, values) in &self.rows {
            out.push_str(&label.to_string());
            for v in values {
                out.push(',');
                out.push_str(&opt(*v));
            }
            out.push('\n');
        }
        out
    }

    pub fn value(&self, row: u64, column: &str) -> Option<f64> {
        let col = self.columns.iter().position(|c| c == column)?;
        self.rows.iter().find(|(l, _)| *l == row)?.1[col]
    }
}

/// Wall times per `(problem_size, workers)` with serial references.
#[derive(Debug, Clone, PartialEq)]
pub struct WeakGrid {
    pub worker_counts: Vec<usize>,
    pub walls: BTreeMap<u64, BTreeMap<usize, f64>>,
    pub baselines: BTreeMap<u64, f64>,
}

impl WeakGrid {
    pub fn from_results(results: &ResultSet) -> Result<Self, ReportError> {
        expect_mode(results, ScalingMode::Weak)?;
        let baselines: BTreeMap<u64, f64> = results
            .baselines()
            .into_iter()
            .map(|(size, c)| (size, c.mean_wall))
            .collect();
        let mut walls: BTreeMap<u64, BTreeMap<usize, f64>> = BTreeMap::new();
        for cell in results.sweep_cells() {
            if !baselines.contains_key(&cell.problem_size) {
                return Err(ReportError::MissingBaseline(cell.problem_size));
            }
            walls
                .entry(cell.problem_size)
                .or_default()
                .insert(cell.workers, cell.mean_wall);
        }
        Ok(Self {
            worker_counts: results.header.plan.worker_counts.clone(),
            walls,
            baselines,
        })
    }

    /// The published time table, whose serial column doubles as baseline.
    pub fn from_fixture() -> Self {
        let walls = fixture::time_grid();
        let baselines = walls.iter().map(|(s, row)| (*s, row[&1])).collect();
        Self {
            worker_counts: fixture::TIME_WORKERS.to_vec(),
            walls,
            baselines,
        }
    }

    pub fn time_table(&self) -> Table {
        Table {
            title: "Execution time [s]".into(),
            columns: self.worker_counts.iter().map(|p| format!("T_{p}")).collect(),
            rows: self
                .walls
                .iter()
                .map(|(size, row)| {
                    (*size, self.worker_counts.iter().map(|p| row.get(p).copied()).collect())
                })
                .collect(),
        }
    }

    /// `S_p = T_1 / T_p` for every `p > 1`, plus the scaled parallel fraction
    /// inferred from the largest measured `p` of each row.
    pub fn speedup_table(&self) -> Table {
        let parallel: Vec<usize> = self.worker_counts.iter().copied().filter(|&p| p > 1).collect();
        let mut columns: Vec<String> = parallel.iter().map(|p| format!("S_{p}")).collect();
        columns.push("scaled_fraction".into());
        let rows = self
            .walls
            .iter()
            .map(|(size, row)| {
                let t1 = self.baselines[size];
                let mut values: Vec<Option<f64>> =
                    parallel.iter().map(|p| row.get(p).map(|t| t1 / t)).collect();
                let fraction = parallel
                    .iter()
                    .zip(&values)
                    .rev()
                    .find_map(|(p, s)| s.map(|s| (*p, s)))
                    .and_then(|(p, s)| infer_gustafson_fraction(s, p).ok())
                    .map(|f| f.fraction);
                values.push(fraction);
                (*size, values)
            })
            .collect();
        Table {
            title: "Speedup T_1/T_p".into(),
            columns,
            rows,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeakTables {
    pub time_table: Table,
    pub speedup_table: Table,
}

impl WeakTables {
    pub fn to_text(&self) -> String {
        format!("{}\n{}", self.time_table.to_text(), self.speedup_table.to_text())
    }

    /// Both tables as CSV sections separated by an empty line.
    pub fn to_csv(&self) -> String {
        format!("{}\n{}", self.time_table.to_csv(), self.speedup_table.to_csv())
    }
}

pub fn weak_scaling_tables(results: &ResultSet) -> Result<WeakTables, ReportError> {
    let grid = WeakGrid::from_results(results)?;
    Ok(WeakTables {
        time_table: grid.time_table(),
        speedup_table: grid.speedup_table(),
    })
}

/// One point of a weak-scaling track.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrackPoint {
    pub workers: usize,
    pub problem_size: u64,
    pub mean_wall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub mode: ScalingMode,
    pub scalable: bool,
    /// Human-readable descriptions of cells that miss the criterion.
    pub failing: Vec<String>,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.scalable {
            write!(f, "scalable")?;
        } else {
            write!(f, "not scalable")?;
        }
        for cell in &self.failing {
            write!(f, "\n  {cell}")?;
        }
        Ok(())
    }
}

/// Weak verdict over explicit tracks: each track's wall time must stay within
/// [`WEAK_WALL_BAND`] of its minimum.
pub fn weak_track_verdict(tracks: &[Vec<TrackPoint>]) -> Verdict {
    let mut failing = Vec::new();
    for track in tracks {
        let min = track.iter().map(|t| t.mean_wall).fold(f64::INFINITY, f64::min);
        let max = track.iter().map(|t| t.mean_wall).fold(f64::NEG_INFINITY, f64::max);
        if track.len() > 1 && (max - min) / min > WEAK_WALL_BAND {
            failing.extend(track.iter().map(|t| {
                format!(
                    "p={} W={} wall={:.3}s (track varies {:.1}%)",
                    t.workers,
                    t.problem_size,
                    t.mean_wall,
                    100.0 * (max - min) / min
                )
            }));
        }
    }
    Verdict {
        mode: ScalingMode::Weak,
        scalable: failing.is_empty(),
        failing,
    }
}

pub fn scalability_verdict(results: &ResultSet, efficiency_floor: f64) -> Verdict {
    match results.mode() {
        ScalingMode::Strong => {
            let mut by_size: BTreeMap<u64, Vec<&CellResult>> = BTreeMap::new();
            for cell in results.sweep_cells() {
                by_size.entry(cell.problem_size).or_default().push(cell);
            }
            let mut scalable = true;
            let mut failing = Vec::new();
            for cells in by_size.values() {
                let top = cells.iter().max_by_key(|c| c.workers).expect("nonempty");
                if top.metrics.efficiency < efficiency_floor {
                    scalable = false;
                }
                failing.extend(
                    cells
                        .iter()
                        .filter(|c| c.metrics.efficiency < efficiency_floor)
                        .map(|c| {
                            format!(
                                "p={} W={} efficiency={:.3} < {efficiency_floor}",
                                c.workers, c.problem_size, c.metrics.efficiency
                            )
                        }),
                );
            }
            Verdict {
                mode: ScalingMode::Strong,
                scalable,
                failing,
            }
        }
        ScalingMode::Weak => {
            let mut tracks: BTreeMap<u64, Vec<TrackPoint>> = BTreeMap::new();
            for cell in results.sweep_cells() {
                tracks
                    .entry(cell.problem_size / cell.workers as u64)
                    .or_default()
                    .push(TrackPoint {
                        workers: cell.workers,
                        problem_size: cell.problem_size,
                        mean_wall: cell.mean_wall,
                    });
            }
            weak_track_verdict(&tracks.into_values().collect::<Vec<_>>())
        }
    }
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use granscale::harness::{
    resume, run_plan_to, ExperimentPlan, HarnessError, ResultSet, RunnerOptions, ScalingMode,
};
use granscale::report::{
    report_rows, rows_table, scalability_verdict, strong_scaling_csv, validate_fixture,
    weak_scaling_tables, DEFAULT_EFFICIENCY_FLOOR,
};
use granscale::workloads::set_core_pinning;

/// Exit status when some cells completed and a later one failed.
const EXIT_PARTIAL: u8 = 2;

#[derive(Parser)]
#[command(name = "granscale", version, about = "Granularity-based scalability estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a scaling sweep described by a plan file.
    Run {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue an interrupted sweep instead of starting over.
        #[arg(long)]
        resume: bool,
        /// Pin worker i to logical CPU i (Linux only).
        #[arg(long)]
        pin_cores: bool,
        /// Also record every individual run in this JSON Lines file.
        #[arg(long)]
        runs_log: Option<PathBuf>,
        /// Stop after executing this many cells.
        #[arg(long, hide = true)]
        max_cells: Option<usize>,
    },
    /// Render a results file.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
        /// Output path; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Efficiency below which a strong-scaling sweep is not scalable.
        #[arg(long, default_value_t = DEFAULT_EFFICIENCY_FLOOR)]
        efficiency_floor: f64,
    },
    /// Recompute the published speedup table and print the deviations.
    ValidateFixture,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Table,
    Json,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            plan,
            out,
            resume,
            pin_cores,
            runs_log,
            max_cells,
        } => {
            let options = RunnerOptions {
                max_new_cells: max_cells,
                runs_log,
            };
            match run(&plan, &out, resume, pin_cores, &options) {
                Ok(results) => {
                    if !results.is_complete() {
                        log::info!("stopped after {} cells", results.cells.len());
                    }
                    ExitCode::SUCCESS
                }
                Err(e @ HarnessError::CellFailed { .. }) => {
                    log::error!("{e}; completed cells are kept in {}", out.display());
                    ExitCode::from(EXIT_PARTIAL)
                }
                Err(e) => fail(e),
            }
        }
        Command::Report {
            input,
            format,
            out,
            efficiency_floor,
        } => match report(&input, format, efficiency_floor) {
            Ok(text) => match out {
                Some(path) => match std::fs::write(&path, text) {
                    Ok(()) => ExitCode::SUCCESS,
                    Err(e) => fail(format!("{}: {e}", path.display())),
                },
                None => {
                    print!("{text}");
                    ExitCode::SUCCESS
                }
            },
            Err(e) => fail(e),
        },
        Command::ValidateFixture => {
            let validation = validate_fixture();
            print!("{}", validation.to_text());
            if validation.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn fail(e: impl std::fmt::Display) -> ExitCode {
    log::error!("{e}");
    ExitCode::FAILURE
}

fn run(
    plan_path: &Path,
    out: &Path,
    resume_existing: bool,
    pin_cores: bool,
    options: &RunnerOptions,
) -> Result<ResultSet, HarnessError> {
    let mut plan = ExperimentPlan::load(plan_path)?;
    plan.apply_env_seed()?;
    plan.validate()?;
    set_core_pinning(pin_cores);
    if resume_existing && out.exists() {
        resume(out, Some(&plan), options)
    } else {
        run_plan_to(&plan, out, options)
    }
}

fn report(
    input: &Path,
    format: Format,
    efficiency_floor: f64,
) -> Result<String, Box<dyn std::error::Error>> {
    let results = ResultSet::load(input)?;
    let verdict = scalability_verdict(&results, efficiency_floor);
    Ok(match (format, results.mode()) {
        (Format::Csv, ScalingMode::Strong) => strong_scaling_csv(&results)?,
        (Format::Csv, ScalingMode::Weak) => weak_scaling_tables(&results)?.to_csv(),
        (Format::Table, mode) => {
            let mut text = rows_table(&results);
            if mode == ScalingMode::Weak {
                text.push('\n');
                text.push_str(&weak_scaling_tables(&results)?.to_text());
            }
            format!("{text}\n{verdict}\n")
        }
        (Format::Json, _) => {
            let value = json!({
                "plan_hash": results.header.plan_hash,
                "mode": results.mode(),
                "complete": results.is_complete(),
                "rows": report_rows(&results),
                "verdict": verdict,
            });
            serde_json::to_string_pretty(&value)? + "\n"
        }
    })
}

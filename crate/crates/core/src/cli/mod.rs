//! Batch front end: `run` solves a scenario and writes its artifacts, `compare`
//! reports the differences between two completed runs.

pub mod scenario;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::costs::Monotonicity;
use crate::equilibrium::{solve_with_progress, write_trace_csv, EquilibriumCertificate};
use crate::error::{Error, Result};
use crate::measures::{read_flow_csv, write_arc_measure_json, write_flow_csv};
use crate::mildsolution::{
    compare_runs, dynamic_programming_residual, uniqueness_crosscheck, value_function, RunComparison, UniquenessReport,
    ValueGrid,
};
pub use scenario::Scenario;

pub const EXIT_CONVERGED: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;

pub const SCENARIO_FILE: &str = "scenario.json";
pub const ETA_FILE: &str = "eta.json";
pub const FLOW_FILE: &str = "flow.csv";
pub const CERTIFICATE_FILE: &str = "certificate.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const VALUE_GRID_FILE: &str = "value_grid.csv";
pub const UNIQUENESS_FILE: &str = "uniqueness.json";

/// Calibrated tolerances for two runs of a monotone game.
pub const U_DIFFERENCE_TOL: f64 = 5e-3;
pub const MONOTONICITY_GAP_TOL: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "cmfg", version, about = "Solve and certify state-constrained mean field games")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve a scenario and write its artifacts.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Also solve from two random initializations and compare the value functions.
        #[arg(long)]
        uniqueness_check: bool,
    },
    /// Compare the artifacts of two runs.
    Compare { dir1: PathBuf, dir2: PathBuf },
}

/// Runs the command line and returns the process exit code.
pub fn main_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_CONVERGED };
        }
    };
    crate::exec::init_thread_pool_from_env();
    let outcome = match cli.command {
        Command::Run { scenario, out, seed, uniqueness_check } => run_command(&scenario, &out, seed, uniqueness_check),
        Command::Compare { dir1, dir2 } => compare_dirs(&dir1, &dir2).and_then(|r| {
            println!("{}", serde_json::to_string_pretty(&r)?);
            Ok(EXIT_CONVERGED)
        }),
    };
    outcome.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        EXIT_VALIDATION
    })
}

fn run_command(path: &Path, out: &Path, seed: Option<u64>, uniqueness: bool) -> Result<i32> {
    let mut scenario = Scenario::load(path)?;
    if let Some(s) = seed {
        scenario.seed = s;
    }
    let started = Instant::now();
    let outcome = run_scenario(&scenario, out, uniqueness, |msg| eprintln!("{msg}"))?;
    let c = &outcome.report.certificate;
    eprintln!(
        "{}: exploitability {:.3e} (tol {:.1e}), {} iterations, {:.1}s",
        if outcome.report.converged { "converged" } else { "not converged" },
        c.exploitability,
        c.exploitability_tol,
        outcome.report.iterations,
        started.elapsed().as_secs_f64()
    );
    Ok(if outcome.report.converged { EXIT_CONVERGED } else { EXIT_NOT_CONVERGED })
}

#[derive(Debug, Clone, Serialize)]
pub struct ValueDiagnostics {
    pub per_dim: usize,
    pub points: usize,
    pub unconverged_cells: usize,
    pub dynamic_programming_residual: f64,
    pub local_modulus: f64,
}

/// Contents of the certificate artifact.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub converged: bool,
    pub iterations: usize,
    pub best_iteration: usize,
    pub certificate: EquilibriumCertificate,
    pub value_function: ValueDiagnostics,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub value_grid: ValueGrid,
    pub uniqueness: Option<UniquenessReport>,
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Solves `scenario`, builds the value function and writes every artifact to
/// `out`. Artifacts are written whether or not the solve converged.
pub fn run_scenario<L: FnMut(&str)>(
    scenario: &Scenario,
    out: &Path,
    uniqueness: bool,
    mut log: L,
) -> Result<RunOutcome> {
    let inst = scenario.instance()?;
    let game = &inst.game;
    let exec = inst.solver.execution;
    fs::create_dir_all(out)?;
    fs::write(out.join(SCENARIO_FILE), scenario.to_json()? + "\n")?;

    let sol = solve_with_progress(game, &inst.solver, &inst.best_response, |r| {
        if r.iteration % 10 == 0 {
            log(&format!(
                "iteration {:>4}  exploitability {:.3e}  support {}",
                r.iteration, r.exploitability, r.support_size
            ));
        }
    })?;
    let flow = sol.eta.flow();
    write_arc_measure_json(&sol.eta, &out.join(ETA_FILE))?;
    write_flow_csv(&flow, &game.grid, create(out, FLOW_FILE)?)?;
    write_trace_csv(&sol.certificate.trace, create(out, TRACE_FILE)?)?;

    log("building the value function");
    let u = value_function(game, &flow, inst.value_grid_per_dim, &inst.best_response, inst.solver.seed, exec)?;
    u.write_csv(create(out, VALUE_GRID_FILE)?)?;
    let value_function = ValueDiagnostics {
        per_dim: inst.value_grid_per_dim,
        points: u.len(),
        unconverged_cells: u.unconverged_cells(),
        dynamic_programming_residual: dynamic_programming_residual(&u, game, &flow, exec)?,
        local_modulus: u.local_modulus(),
    };
    let report = RunReport {
        scenario: scenario.name.clone(),
        seed: scenario.seed,
        converged: sol.converged,
        iterations: sol.certificate.trace.len(),
        best_iteration: sol.best_iteration,
        certificate: sol.certificate,
        value_function,
    };
    write_json(out, CERTIFICATE_FILE, &report)?;

    let uniqueness = if uniqueness {
        log("uniqueness cross-check");
        let seeds = [scenario.seed, scenario.seed.wrapping_add(1)];
        let r = uniqueness_crosscheck(game, &inst.solver, &inst.best_response, &seeds, inst.value_grid_per_dim)?;
        write_json(out, UNIQUENESS_FILE, &r)?;
        Some(r)
    } else {
        None
    };
    Ok(RunOutcome { report, value_grid: u, uniqueness })
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    #[serde(flatten)]
    pub comparison: RunComparison,
    /// True when the running cost is strictly monotone and the terminal cost monotone.
    pub uniqueness_expected: bool,
    /// Present only when uniqueness is expected.
    pub within_tolerance: Option<bool>,
}

/// Compares two run directories of the same scenario shape.
pub fn compare_dirs(dir1: &Path, dir2: &Path) -> Result<CompareReport> {
    let load = |dir: &Path| -> Result<(Scenario, ValueGrid, Vec<crate::SpatialMeasure>)> {
        let scenario = Scenario::load(&dir.join(SCENARIO_FILE))?;
        let u = ValueGrid::read_csv(BufReader::new(File::open(dir.join(VALUE_GRID_FILE))?))?;
        let flow = read_flow_csv(BufReader::new(File::open(dir.join(FLOW_FILE))?))?;
        Ok((scenario, u, flow))
    };
    let (s1, u1, flow1) = load(dir1)?;
    let (s2, u2, flow2) = load(dir2)?;
    if s1.domain != s2.domain || s1.horizon != s2.horizon || s1.steps != s2.steps {
        return Err(Error::ShapeMismatch("runs use different domains or time grids".into()));
    }
    let inst = s1.instance()?;
    let running = inst.game.costs.running.as_ref();
    let comparison = compare_runs(&u1, &flow1, &u2, &flow2, Some(running))?;
    let uniqueness_expected = running.monotonicity() == Monotonicity::Strict
        && matches!(inst.game.costs.terminal.monotonicity(), Monotonicity::Monotone | Monotonicity::Strict);
    let within_tolerance = uniqueness_expected.then(|| {
        comparison.u_sup_difference <= U_DIFFERENCE_TOL
            && comparison.max_monotonicity_gap.is_some_and(|g| g <= MONOTONICITY_GAP_TOL)
    });
    Ok(CompareReport { comparison, uniqueness_expected, within_tolerance })
}

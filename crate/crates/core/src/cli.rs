//! Command-line front end.
//!
//! Exit codes: 0 success, 1 verification failure, 2 input error,
//! 3 non-convergence, 4 non-regularizable event.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::action::DiscretePath;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::integrator::{extend_by_symmetry, node_velocity, periodicity_check_over, CollisionMode, PeriodicityReport};
use crate::minimizer::{minimize, minimize_from, MinimizerResult};
use crate::model::{from_sorted_frame, SystemSpec};
use crate::solution::{write_atomic, SolutionFile};
use crate::verifier::{full_report, VerificationReport, VerifierOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFICATION_FAILED: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;
pub const EXIT_NON_REGULARIZABLE: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "collinear-nbody", version, about = "Collinear periodic n-body orbits with simultaneous binary collisions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Minimize the action for a config and write the solution file.
    Solve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every check on a solution and write the report.
    Verify {
        #[arg(long)]
        solution: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Integrate the orbit from its state at T/2 and report the defect.
    Integrate {
        #[arg(long)]
        solution: PathBuf,
        /// Whole number of periods 2T.
        #[arg(long, default_value_t = 1.0)]
        periods: f64,
        #[arg(long)]
        mode: Option<CollisionMode>,
        /// Trajectory CSV; the report is written beside it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export node positions for plotting.
    Export {
        #[arg(long)]
        solution: PathBuf,
        #[arg(long, value_enum)]
        format: ExportFormat,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Add finite-difference velocity columns to the CSV.
        #[arg(long)]
        velocities: bool,
    },
    /// Solve across a range of one mass.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// One-based body label of the swept mass.
        #[arg(long)]
        mass_index: usize,
        /// `A:B`
        #[arg(long)]
        range: String,
        #[arg(long)]
        steps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExportFormat {
    Csv,
    Plotdata,
}

/// Exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NonRegularizableEvent { .. } => EXIT_NON_REGULARIZABLE,
        Error::DegeneratePath => EXIT_NOT_CONVERGED,
        Error::StepFailure { .. } => EXIT_VERIFICATION_FAILED,
        _ => EXIT_INPUT,
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Solve { config, out } => {
            let outcome = cmd_solve(&config, out.as_deref())?;
            print!("{}", outcome.summary);
            println!("solution written to {}", outcome.solution_path.display());
            Ok(if outcome.converged { EXIT_OK } else { EXIT_NOT_CONVERGED })
        }
        Command::Verify { solution, out } => {
            let (report, path) = cmd_verify(&solution, out.as_deref())?;
            print!("{}", format_report(&report));
            println!("report written to {}", path.display());
            Ok(if report.pass { EXIT_OK } else { EXIT_VERIFICATION_FAILED })
        }
        Command::Integrate {
            solution,
            periods,
            mode,
            out,
        } => {
            let outcome = cmd_integrate(&solution, periods, mode, out.as_deref())?;
            let r = &outcome.report;
            println!(
                "mode {}, periods {}: defect {:.3e}, energy drift {:.3e}, {} collisions",
                r.mode, r.periods, r.defect, r.energy_drift, r.events.len()
            );
            println!("trajectory written to {}", outcome.trajectory_path.display());
            println!("report written to {}", outcome.report_path.display());
            Ok(EXIT_OK)
        }
        Command::Export {
            solution,
            format,
            out,
            velocities,
        } => {
            let path = cmd_export(&solution, format, out.as_deref(), velocities)?;
            println!("written {}", path.display());
            Ok(EXIT_OK)
        }
        Command::Sweep {
            config,
            mass_index,
            range,
            steps,
            out,
        } => {
            let (lo, hi) = parse_range(&range)?;
            let outcome = cmd_sweep(&config, mass_index, lo, hi, steps, out.as_deref())?;
            print!("{}", sweep_table(&outcome.rows));
            println!("table written to {}", outcome.table_path.display());
            let all = outcome.rows.iter().all(|r| r.converged);
            Ok(if all { EXIT_OK } else { EXIT_NOT_CONVERGED })
        }
    }
}

pub struct SolveOutcome {
    pub solution_path: PathBuf,
    pub summary_path: PathBuf,
    pub converged: bool,
    pub summary: String,
    pub solution: SolutionFile,
}

fn solve_spec(spec: &SystemSpec, cfg: &RunConfig) -> Result<MinimizerResult> {
    minimize(spec, &cfg.optimizer)
}

/// Writes the solution file (also when not converged) and its summary.
pub fn cmd_solve(config: &Path, out: Option<&Path>) -> Result<SolveOutcome> {
    let cfg = RunConfig::load(config)?;
    let result = solve_spec(&cfg.spec, &cfg)?;
    let solution = SolutionFile::new(&cfg.spec, &cfg.optimizer, &cfg.integrator, &result);
    let (solution_path, summary_path) = match out {
        Some(p) => (p.to_path_buf(), p.with_extension("summary.txt")),
        None => (cfg.output.solution.clone(), cfg.output.summary.clone()),
    };
    solution.save(&solution_path)?;
    let summary = summarize(&solution);
    write_atomic(&summary_path, summary.as_bytes())?;
    Ok(SolveOutcome {
        solution_path,
        summary_path,
        converged: result.converged,
        summary,
        solution,
    })
}

fn list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(", ")
}

pub fn summarize(sol: &SolutionFile) -> String {
    let s = &sol.spec;
    let c = &sol.convergence;
    let mut out = String::new();
    let _ = writeln!(out, "bodies      {}", s.n);
    let _ = writeln!(out, "masses      {}", list(&s.masses));
    let _ = writeln!(
        out,
        "sigma       {}",
        s.sigma.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(", ")
    );
    let _ = writeln!(out, "T           {}", s.half_period);
    let _ = writeln!(out, "symmetric   {}", s.symmetric);
    let _ = writeln!(out, "cells       {}", sol.cells);
    let _ = writeln!(out, "action      {:.12}", sol.action.total);
    let _ = writeln!(out, "  kinetic   {:.12}", sol.action.kinetic_part);
    let _ = writeln!(out, "  potential {:.12}", sol.action.potential_part);
    let _ = writeln!(out, "converged   {}", c.converged);
    let _ = writeln!(out, "gradient    {:.3e}", c.gradient_norm);
    for r in &c.restarts {
        let mark = if r.index == c.best_restart { "*" } else { " " };
        let _ = writeln!(
            out,
            "restart {}{} action {:.12} gradient {:.3e} converged {}",
            r.index, mark, r.action, r.gradient_norm, r.converged
        );
    }
    out
}

fn verifier_options(sol: &SolutionFile) -> VerifierOptions {
    VerifierOptions {
        integrator: sol.integrator,
        ..VerifierOptions::default()
    }
}

pub fn report_json(report: &VerificationReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

pub fn format_report(report: &VerificationReport) -> String {
    let mut out = String::new();
    for c in &report.checks {
        let _ = write!(
            out,
            "{:<22} {} margin {:.3e} tolerance {:.1e}",
            c.name,
            if c.pass { "pass" } else { "FAIL" },
            c.margin,
            c.tolerance
        );
        if let (false, Some(d)) = (c.pass, &c.detail) {
            let _ = write!(out, " ({d})");
        }
        out.push('\n');
    }
    let _ = writeln!(out, "overall {}", if report.pass { "pass" } else { "FAIL" });
    out
}

/// Runs the full report on a solution and writes it as JSON.
pub fn cmd_verify(solution: &Path, out: Option<&Path>) -> Result<(VerificationReport, PathBuf)> {
    let sol = SolutionFile::load(solution)?;
    let spec = sol.system_spec()?;
    let path = sol.path()?;
    let report = full_report(&path, &spec, &verifier_options(&sol));
    let out = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| solution.with_extension("report.json"));
    write_atomic(&out, report_json(&report).as_bytes())?;
    Ok((report, out))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub time: f64,
    /// One-based body labels, left body first.
    pub bodies: (usize, usize),
    pub simultaneous: bool,
    pub s_before: f64,
    pub s_after: f64,
    pub alpha_before: f64,
    pub alpha_after: f64,
    pub energy_before: f64,
    pub energy_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegrationReport {
    pub mode: CollisionMode,
    pub periods: usize,
    pub defect: f64,
    pub position_defect: f64,
    pub velocity_defect: f64,
    pub extension_deviation: f64,
    pub energy_drift: f64,
    pub event_energy_jump: f64,
    pub alpha_mismatch: f64,
    pub events: Vec<EventRecord>,
}

impl IntegrationReport {
    fn new(rep: &PeriodicityReport, spec: &SystemSpec, periods: usize) -> Self {
        let label = |rank: usize| spec.sigma.image(rank) + 1;
        Self {
            mode: rep.trajectory.mode,
            periods,
            defect: rep.defect,
            position_defect: rep.position_defect,
            velocity_defect: rep.velocity_defect,
            extension_deviation: rep.extension_deviation,
            energy_drift: rep.energy_drift,
            event_energy_jump: rep.event_energy_jump,
            alpha_mismatch: rep.alpha_mismatch,
            events: rep
                .trajectory
                .events
                .iter()
                .map(|e| EventRecord {
                    time: e.time,
                    bodies: (label(e.pair.0), label(e.pair.1)),
                    simultaneous: e.simultaneous,
                    s_before: e.before.s,
                    s_after: e.after.s,
                    alpha_before: e.before.alpha,
                    alpha_after: e.after.alpha,
                    energy_before: e.energy_before,
                    energy_after: e.energy_after,
                })
                .collect(),
        }
    }
}

pub struct IntegrateOutcome {
    pub report: IntegrationReport,
    pub trajectory_path: PathBuf,
    pub report_path: PathBuf,
}

fn whole_periods(periods: f64) -> Result<usize> {
    if periods >= 1.0 && periods.fract() == 0.0 && periods <= 1e6 {
        Ok(periods as usize)
    } else {
        Err(Error::InvalidOption(format!(
            "periods must be a positive whole number, got {periods}"
        )))
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn body_header(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |i| format!("{prefix}_{i}"))
}

fn csv_bytes(header: Vec<String>, rows: impl Iterator<Item = Vec<f64>>, path: &Path) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string()))
            .map_err(|e| csv_error(path, e))?;
    }
    w.into_inner().map_err(|e| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Integrates from `T/2` over whole periods; writes the trajectory CSV
/// (original labels) and the defect report with its event log.
pub fn cmd_integrate(
    solution: &Path,
    periods: f64,
    mode: Option<CollisionMode>,
    out: Option<&Path>,
) -> Result<IntegrateOutcome> {
    let periods = whole_periods(periods)?;
    let sol = SolutionFile::load(solution)?;
    let spec = sol.system_spec()?;
    let path = sol.path()?;
    let mut opts = sol.integrator;
    if let Some(m) = mode {
        opts.collision_mode = m;
    }
    let rep = periodicity_check_over(&path, &spec.sorted_masses(), &opts, periods)?;
    let report = IntegrationReport::new(&rep, &spec, periods);

    let trajectory_path = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| solution.with_extension("trajectory.csv"));
    let report_path = trajectory_path.with_extension("report.json");
    let n = spec.n();
    let header = std::iter::once("t".to_string())
        .chain(body_header("x", n))
        .chain(body_header("v", n))
        .collect();
    let rows = rep.trajectory.samples.iter().map(|s| {
        let mut row = vec![s.time];
        row.extend(from_sorted_frame(&s.positions, &spec.sigma));
        row.extend(from_sorted_frame(&s.velocities, &spec.sigma));
        row
    });
    write_atomic(&trajectory_path, &csv_bytes(header, rows, &trajectory_path)?)?;
    let mut json = serde_json::to_string_pretty(&report).expect("report serializes");
    json.push('\n');
    write_atomic(&report_path, json.as_bytes())?;
    Ok(IntegrateOutcome {
        report,
        trajectory_path,
        report_path,
    })
}

/// Node positions in original labels, one row `(t, x_1, ..., x_n)` per node.
pub fn labeled_rows(path: &DiscretePath, spec: &SystemSpec) -> Vec<Vec<f64>> {
    (0..=path.cells())
        .map(|k| {
            let mut row = vec![path.times()[k]];
            row.extend(from_sorted_frame(path.node(k), &spec.sigma));
            row
        })
        .collect()
}

/// CSV over `[0, T]` with columns `t, x_1..x_n` (and `v_1..v_n`), or
/// per-body `t x` blocks over the full period `[0, 2T]`.
pub fn cmd_export(solution: &Path, format: ExportFormat, out: Option<&Path>, velocities: bool) -> Result<PathBuf> {
    let sol = SolutionFile::load(solution)?;
    let spec = sol.system_spec()?;
    let path = sol.path()?;
    let n = spec.n();
    match format {
        ExportFormat::Csv => {
            let target = out
                .map(Path::to_path_buf)
                .unwrap_or_else(|| solution.with_extension("csv"));
            let mut header: Vec<String> = std::iter::once("t".to_string()).chain(body_header("x", n)).collect();
            if velocities {
                header.extend(body_header("v", n));
            }
            let rows = labeled_rows(&path, &spec).into_iter().enumerate().map(|(k, mut row)| {
                if velocities {
                    row.extend(from_sorted_frame(&node_velocity(&path, k), &spec.sigma));
                }
                row
            });
            write_atomic(&target, &csv_bytes(header, rows, &target)?)?;
            Ok(target)
        }
        ExportFormat::Plotdata => {
            let target = out
                .map(Path::to_path_buf)
                .unwrap_or_else(|| solution.with_extension("plot.dat"));
            let ext = extend_by_symmetry(&path);
            let mut text = String::new();
            for body in 0..n {
                let rank = spec.sigma.inverse().image(body);
                if body > 0 {
                    text.push_str("\n\n");
                }
                let _ = writeln!(text, "# body {} mass {}", body + 1, spec.masses[body]);
                let _ = writeln!(text, "# t x");
                for (k, t) in ext.times.iter().enumerate() {
                    let _ = writeln!(text, "{t} {}", ext.node(k)[rank]);
                }
            }
            write_atomic(&target, text.as_bytes())?;
            Ok(target)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub mass: f64,
    pub action: Option<f64>,
    pub converged: bool,
    pub checks_pass: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub table_path: PathBuf,
}

pub fn parse_range(s: &str) -> Result<(f64, f64)> {
    let bad = || Error::InvalidOption(format!("range must be `A:B`, got `{s}`"));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    let a: f64 = a.trim().parse().map_err(|_| bad())?;
    let b: f64 = b.trim().parse().map_err(|_| bad())?;
    if !(a.is_finite() && b.is_finite()) {
        return Err(bad());
    }
    Ok((a, b))
}

/// Mass values of a sweep: `steps` evenly spaced points from `lo` to `hi`.
pub fn sweep_grid(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    match steps {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..steps)
            .map(|i| lo + (hi - lo) * i as f64 / (steps - 1) as f64)
            .collect(),
    }
}

/// Solves at every grid point, warm-starting from the previous converged
/// point, and verifies each solution.
pub fn cmd_sweep(config: &Path, mass_index: usize, lo: f64, hi: f64, steps: usize, out: Option<&Path>) -> Result<SweepOutcome> {
    let cfg = RunConfig::load(config)?;
    let n = cfg.spec.n();
    if mass_index == 0 || mass_index > n {
        return Err(Error::InvalidOption(format!("mass index {mass_index} is outside 1..={n}")));
    }
    if steps == 0 {
        return Err(Error::InvalidOption("steps must be positive".into()));
    }
    let vopts = VerifierOptions {
        integrator: cfg.integrator,
        ..VerifierOptions::default()
    };
    let mut rows = Vec::with_capacity(steps);
    let mut previous: Option<DiscretePath> = None;
    for mass in sweep_grid(lo, hi, steps) {
        let mut masses = cfg.spec.masses.clone();
        masses[mass_index - 1] = mass;
        let attempt = SystemSpec {
            masses,
            ..cfg.spec.clone()
        }
        .validate()
        .and_then(|spec| {
            let result = match &previous {
                Some(start) => minimize_from(&spec, &cfg.optimizer, start)?,
                None => solve_spec(&spec, &cfg)?,
            };
            Ok((spec, result))
        });
        match attempt {
            Ok((spec, result)) => {
                let report = full_report(&result.path, &spec, &vopts);
                if result.converged {
                    previous = Some(result.path.clone());
                }
                rows.push(SweepRow {
                    mass,
                    action: Some(result.action.total),
                    converged: result.converged,
                    checks_pass: report.pass,
                    error: None,
                });
            }
            Err(e) => rows.push(SweepRow {
                mass,
                action: None,
                converged: false,
                checks_pass: false,
                error: Some(e.to_string()),
            }),
        }
    }
    let table_path = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.output.solution.with_extension("sweep.csv"));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["mass", "action", "converged", "checks_pass"])
        .map_err(|e| csv_error(&table_path, e))?;
    for r in &rows {
        w.write_record([
            r.mass.to_string(),
            r.action.map(|a| a.to_string()).unwrap_or_default(),
            r.converged.to_string(),
            r.checks_pass.to_string(),
        ])
        .map_err(|e| csv_error(&table_path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io {
        path: table_path.display().to_string(),
        message: e.to_string(),
    })?;
    write_atomic(&table_path, &bytes)?;
    Ok(SweepOutcome { rows, table_path })
}

pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut out = String::from("mass          action            converged  checks\n");
    for r in rows {
        let action = r.action.map(|a| format!("{a:.12}")).unwrap_or_else(|| "-".into());
        let _ = write!(out, "{:<13} {:<17} {:<10} {}", r.mass, action, r.converged, r.checks_pass);
        if let Some(e) = &r.error {
            let _ = write!(out, "  {e}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_includes_both_ends() {
        assert_eq!(sweep_grid(0.5, 2.0, 4), vec![0.5, 1.0, 1.5, 2.0]);
        assert_eq!(sweep_grid(0.5, 2.0, 1), vec![0.5]);
    }

    #[test]
    fn range_parsing() {
        assert_eq!(parse_range("0.5:2").unwrap(), (0.5, 2.0));
        assert!(parse_range("0.5-2").is_err());
        assert!(parse_range("a:2").is_err());
    }

    #[test]
    fn periods_must_be_whole() {
        assert_eq!(whole_periods(3.0).unwrap(), 3);
        assert!(whole_periods(1.5).is_err());
        assert!(whole_periods(0.0).is_err());
    }

    #[test]
    fn error_exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), EXIT_INPUT);
        assert_eq!(
            exit_code(&Error::NonRegularizableEvent {
                time: 0.0,
                bodies: vec![1, 2, 3]
            }),
            EXIT_NON_REGULARIZABLE
        );
    }

    #[test]
    fn unknown_format_is_a_usage_error() {
        let code = run(["collinear-nbody", "export", "--solution", "x.json", "--format", "svg"]);
        assert_eq!(code, EXIT_INPUT);
    }
}

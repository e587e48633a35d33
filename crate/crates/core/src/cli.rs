//! Command-line front end: `init`, `simulate` and `report`.
//!
//! `init` writes `convergence.csv`, `solution.csv`, `powerflow.csv` and
//! `summary.txt` to the output directory. `simulate` reads
//! `solution.csv` back and writes `waveforms.csv` and `drift.csv`.
//! `report` reads waveform files and writes `drift.csv` and
//! `harmonics.csv`.
//!
//! Exit codes: 0 on success, 1 when the solver does not converge, 2 on
//! any input or file error.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::emt::{write_waveforms, StepOptions};
use crate::netlist::{bundled, parse_system, SystemSpec};
use crate::pipeline::{initialize, prepare, simulate, InitConfig, InitOutcome};
use crate::report::{read_waveforms, state_drift, summarize, write_drift_csv, write_harmonics_csv};
use crate::shooting::{StateTag, Unknown};
use crate::solver::Preconditioning;

/// Waveforms written by `simulate` unless `--columns` is given.
pub const DEFAULT_COLUMNS: [&str; 3] = ["bus5.v.a", "G2.speed", "M5.rotor_angle"];

#[derive(Debug, Parser)]
#[command(
    name = "emt-init",
    version,
    about = "Periodic steady-state initialization of EMT simulations"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve for the periodic steady state.
    Init(InitArgs),
    /// Free-run a solution written by `init`.
    Simulate(SimulateArgs),
    /// Drift and harmonic tables from waveform CSVs.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SystemArgs {
    /// Bundled system name or path to a system file.
    pub system: String,
    /// Override the load unbalance factor.
    #[arg(long)]
    pub k: Option<f64>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InitArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    /// Integration steps per nominal period.
    #[arg(long = "step-frac")]
    pub step_frac: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub reltol: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub maxiter: Option<usize>,
    #[arg(long, overrides_with = "no_precondition")]
    pub precondition: bool,
    #[arg(long = "no-precondition", overrides_with = "precondition")]
    pub no_precondition: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    /// Solution file; `<out>/solution.csv` when omitted.
    #[arg(long)]
    pub solution: Option<PathBuf>,
    /// Step size in seconds, rounded to divide the period.
    #[arg(long, default_value_t = 250e-6)]
    pub step: f64,
    #[arg(long, default_value_t = 5)]
    pub periods: usize,
    /// Comma-separated states or device currents (`M5.i.a`).
    #[arg(long, value_delimiter = ',')]
    pub columns: Option<Vec<String>>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Nominal frequency in Hz.
    #[arg(long, default_value_t = 60.0)]
    pub freq: f64,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("solver did not converge: ‖F‖ = {norm:e} after {iterations} iterations")]
    NotConverged { norm: f64, iterations: usize },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::NotConverged { .. } => 1,
            _ => 2,
        }
    }
}

fn input(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> CliError + '_ {
    move |source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(io(path))
}

/// Parse `args` (program name first), run, and return the exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cmd: &Command) -> Result<(), CliError> {
    match cmd {
        Command::Init(a) => run_init(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Report(a) => run_report(a),
    }
}

/// Bundled name or file, with the unbalance override applied.
pub fn load_system(args: &SystemArgs) -> Result<SystemSpec, CliError> {
    let text = match bundled(&args.system) {
        Some(t) => t.to_string(),
        None => {
            let path = Path::new(&args.system);
            fs::read_to_string(path).map_err(io(path))?
        }
    };
    let mut spec = parse_system(&text).map_err(input)?;
    if let Some(k) = args.k {
        spec.set_unbalance(k).map_err(input)?;
    }
    Ok(spec)
}

fn out_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io(dir))
}

fn init_config(a: &InitArgs, spec: &SystemSpec) -> Result<InitConfig, CliError> {
    let mut solver = spec.solver.clone();
    if let Some(v) = a.tol {
        solver.tolerance = v;
    }
    if let Some(v) = a.reltol {
        solver.reltol = v;
    }
    if let Some(v) = a.eps {
        solver.eps = v;
    }
    if let Some(v) = a.maxiter {
        solver.maxiter = v;
    }
    if a.precondition {
        solver.precondition = Preconditioning::Broyden;
    }
    if a.no_precondition {
        solver.precondition = Preconditioning::Off;
    }
    if a.step_frac == Some(0) {
        return Err(input("--step-frac must be positive"));
    }
    Ok(InitConfig {
        steps_per_period: a.step_frac,
        solver: Some(solver),
        ..InitConfig::default()
    })
}

/// Human-readable account of an initialization.
pub fn summary(out: &InitOutcome, tolerance: f64, seconds: f64) -> String {
    let s = &out.stats;
    let mut text = String::new();
    let _ = writeln!(text, "unknowns            {}", out.x.len());
    let _ = writeln!(text, "steps per period    {}", out.problem.system.steps);
    let _ = writeln!(text, "converged           {}", s.converged);
    let _ = writeln!(text, "newton iterations   {}", s.iterations());
    let _ = writeln!(text, "krylov iterations   {}", s.krylov_iters());
    let _ = writeln!(text, "F evaluations       {}", s.f_evals);
    let _ = writeln!(text, "initial ||F||       {:e}", s.residual_norms[0]);
    let _ = writeln!(text, "final ||F||         {:e}", s.final_norm());
    let _ = writeln!(text, "tolerance           {tolerance:e}");
    let _ = writeln!(text, "runtime             {seconds:.2} s");
    text
}

fn run_init(a: &InitArgs) -> Result<(), CliError> {
    let spec = load_system(&a.system)?;
    let cfg = init_config(a, &spec)?;
    out_dir(&a.system.out)?;
    let start = Instant::now();
    let out = initialize(&spec, &cfg).map_err(input)?;
    let seconds = start.elapsed().as_secs_f64();

    let path = a.system.out.join("convergence.csv");
    out.stats
        .write_convergence_csv(create(&path)?)
        .map_err(csv_err(&path))?;
    let path = a.system.out.join("solution.csv");
    write_solution(&path, &out.named_solution())?;
    let path = a.system.out.join("powerflow.csv");
    out.power_flow
        .write_csv(&spec, create(&path)?)
        .map_err(csv_err(&path))?;
    let tolerance = cfg
        .solver
        .as_ref()
        .map_or(spec.solver.tolerance, |s| s.tolerance);
    let text = summary(&out, tolerance, seconds);
    let path = a.system.out.join("summary.txt");
    fs::write(&path, &text).map_err(io(&path))?;
    print!("{text}");

    if out.stats.converged {
        Ok(())
    } else {
        Err(CliError::NotConverged {
            norm: out.stats.final_norm(),
            iterations: out.stats.iterations(),
        })
    }
}

/// `name,value`, full precision.
pub fn write_solution(path: &Path, pairs: &[(String, f64)]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let rows = std::iter::once(["name".to_string(), "value".to_string()])
        .chain(pairs.iter().map(|(n, v)| [n.clone(), format!("{v:e}")]));
    for row in rows {
        w.write_record(&row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io(path))
}

pub fn read_solution(path: &Path) -> Result<Vec<(String, f64)>, CliError> {
    let mut rd = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let mut out = Vec::new();
    for (row, rec) in rd.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        let (Some(name), Some(value)) = (rec.get(0), rec.get(1)) else {
            return Err(input(format!(
                "{}: line {}: expected name,value",
                path.display(),
                row + 2
            )));
        };
        let v = value.trim().parse::<f64>().map_err(|_| {
            input(format!(
                "{}: line {}: `{value}` is not a number",
                path.display(),
                row + 2
            ))
        })?;
        out.push((name.to_string(), v));
    }
    Ok(out)
}

fn run_simulate(a: &SimulateArgs) -> Result<(), CliError> {
    if !(a.step > 0.0) || a.periods == 0 {
        return Err(input("--step and --periods must be positive"));
    }
    let spec = load_system(&a.system)?;
    out_dir(&a.system.out)?;
    let path = a
        .solution
        .clone()
        .unwrap_or_else(|| a.system.out.join("solution.csv"));
    let pairs = read_solution(&path)?;
    // the guess supplies everything that is not an unknown
    let prep = prepare(&spec, &InitConfig::default()).map_err(input)?;
    let x = prep.problem.layout.from_named(&pairs).map_err(input)?;
    let start = prep.problem.apply_unknowns(&x).map_err(input)?;
    let (sys, hist) =
        simulate(&spec, &start, a.step, a.periods, StepOptions::default()).map_err(input)?;

    let names: Vec<String> = match &a.columns {
        Some(c) => c.clone(),
        None => DEFAULT_COLUMNS.iter().map(|s| s.to_string()).collect(),
    };
    let mut columns = Vec::with_capacity(names.len());
    for name in &names {
        let v = hist
            .t
            .iter()
            .zip(&hist.x)
            .map(|(t, x)| sys.quantity(name, x, *t))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| input(format!("unknown quantity `{name}`")))?;
        columns.push((name.clone(), v));
    }
    let path = a.system.out.join("waveforms.csv");
    write_waveforms(create(&path)?, &hist.t, &columns).map_err(csv_err(&path))?;

    let states: Vec<usize> = prep
        .problem
        .layout
        .entries
        .iter()
        .filter_map(|e| match e {
            Unknown::State { index, .. } => Some(*index),
            _ => None,
        })
        .collect();
    let drift = state_drift(&hist, &states, &sys.state_names());
    let path = a.system.out.join("drift.csv");
    write_drift_csv(create(&path)?, &drift).map_err(csv_err(&path))?;

    let periodic = |name: &str| {
        prep.problem
            .layout
            .entries
            .iter()
            .zip(&prep.problem.layout.names)
            .any(|(e, n)| {
                n == name
                    && matches!(
                        e,
                        Unknown::State {
                            tag: StateTag::Periodic,
                            ..
                        }
                    )
            })
    };
    let worst = drift
        .iter()
        .filter(|d| periodic(&d.name))
        .max_by(|x, y| x.relative().total_cmp(&y.relative()));
    println!("steps per period    {}", sys.steps);
    println!("step                {:e} s", sys.h);
    println!("periods             {}", a.periods);
    if let Some(d) = worst {
        println!("worst drift         {:e} ({})", d.relative(), d.name);
    }
    Ok(())
}

fn run_report(a: &ReportArgs) -> Result<(), CliError> {
    if !(a.freq > 0.0) {
        return Err(input("--freq must be positive"));
    }
    out_dir(&a.out)?;
    let omega0 = 2.0 * std::f64::consts::PI * a.freq;
    let mut rows = Vec::new();
    for path in &a.files {
        let file = File::open(path).map_err(io(path))?;
        let w = read_waveforms(file).map_err(|e| input(format!("{}: {e}", path.display())))?;
        for (name, v) in &w.columns {
            let s = summarize(name, &w.t, v, omega0)
                .map_err(|e| input(format!("{}: {name}: {e}", path.display())))?;
            rows.push(s);
        }
    }
    let path = a.out.join("drift.csv");
    let drift: Vec<_> = rows.iter().map(|s| s.drift.clone()).collect();
    write_drift_csv(create(&path)?, &drift).map_err(csv_err(&path))?;
    let path = a.out.join("harmonics.csv");
    write_harmonics_csv(create(&path)?, &rows).map_err(csv_err(&path))?;
    println!(
        "{:<20} {:>12} {:>12} {:>9} {:>12} {:>12}",
        "name", "drift", "relative", "monotone", "h1", "h2"
    );
    for s in &rows {
        println!(
            "{:<20} {:>12.3e} {:>12.3e} {:>9} {:>12.3e} {:>12.3e}",
            s.drift.name,
            s.drift.max_abs(),
            s.drift.relative(),
            s.drift.monotone(),
            s.harmonics[1],
            s.harmonics[2]
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Command {
        Cli::try_parse_from(std::iter::once("emt-init").chain(args.iter().copied()))
            .unwrap()
            .command
    }

    #[test]
    fn solver_flags_override_the_file() {
        let Command::Init(a) = parse(&[
            "init",
            "wscc9_unbalanced",
            "--tol",
            "1e-8",
            "--maxiter",
            "7",
            "--no-precondition",
        ]) else {
            panic!("not init");
        };
        let spec = load_system(&a.system).unwrap();
        let cfg = init_config(&a, &spec).unwrap();
        let s = cfg.solver.unwrap();
        assert_eq!(s.tolerance, 1e-8);
        assert_eq!(s.maxiter, 7);
        assert_eq!(s.precondition, Preconditioning::Off);
        assert_eq!(s.reltol, spec.solver.reltol);
        assert_eq!(cfg.steps_per_period, None);
    }

    #[test]
    fn last_precondition_flag_wins() {
        let Command::Init(a) = parse(&["init", "x", "--no-precondition", "--precondition"]) else {
            panic!("not init");
        };
        assert!(a.precondition && !a.no_precondition);
    }

    #[test]
    fn simulate_defaults() {
        let Command::Simulate(a) = parse(&["simulate", "wscc9_unbalanced"]) else {
            panic!("not simulate");
        };
        assert_eq!(a.step, 250e-6);
        assert_eq!(a.periods, 5);
        assert!(a.columns.is_none());
    }

    #[test]
    fn unbalance_override_reaches_the_loads() {
        let Command::Init(a) = parse(&["init", "wscc9_unbalanced", "--k", "0.2"]) else {
            panic!("not init");
        };
        let spec = load_system(&a.system).unwrap();
        assert!(spec.loads.iter().all(|l| l.alloc_k == 0.2));
    }

    #[test]
    fn solution_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("solution.csv");
        let pairs = vec![
            ("a".to_string(), 0.1 + 0.2),
            ("b".to_string(), -1.0 / 3.0),
            ("c".to_string(), 6.02e23),
        ];
        write_solution(&path, &pairs).unwrap();
        assert_eq!(read_solution(&path).unwrap(), pairs);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(run_cli(["emt-init", "--help"]), 0);
        assert_eq!(run_cli(["emt-init"]), 2);
        assert_eq!(run_cli(["emt-init", "report", "/nonexistent/w.csv"]), 2);
    }
}

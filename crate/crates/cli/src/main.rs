//! `nmdc`: synthesize, verify, simulate and sweep neighboring-mode-dependent
//! decentralized controllers.
//!
//! Exit codes: 0 success, 1 input error, 2 synthesis infeasible,
//! 3 certificate failure or divergence.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nmdc::io::{read_model, read_pattern, read_pattern_dir, to_json, IoError, MonteCarloRecord, PatternFile, RefusalFile, ResultFile};
use nmdc::lmi::BetaU;
use nmdc::mode_atlas::InfoPattern;
use nmdc::simulate::{monte_carlo, MonteCarloConfig, UncertaintyKind};
use nmdc::solver::SolverConfig;
use nmdc::sweep::{run_sweep, write_csv};
use nmdc::synthesis::{constraint_check, cost_bound, synthesize_neighboring, SynthesisConfig, SynthesisError};

const EXIT_INPUT: u8 = 1;
const EXIT_INFEASIBLE: u8 = 2;
const EXIT_CERTIFICATE: u8 = 3;

#[derive(Parser)]
#[command(name = "nmdc", version, about = "Neighboring-mode-dependent decentralized control synthesis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize gains for one information pattern and write a result file.
    Synthesize {
        /// Model file (JSON).
        model: PathBuf,
        /// Pattern file (JSON).
        pattern: PathBuf,
        #[command(flatten)]
        solver: SolverFlags,
    },
    /// Re-check a result file against its model from scratch.
    Verify {
        model: PathBuf,
        /// Result file written by `synthesize` or `simulate`.
        result: PathBuf,
        /// Tolerance on the rank-coupling residuals (default: the one recorded in the result).
        #[arg(long)]
        tol: Option<f64>,
        /// Print every Riccati block and gain distance.
        #[arg(long)]
        verbose: bool,
    },
    /// Monte Carlo closed-loop simulation of a result.
    Simulate {
        model: PathBuf,
        result: PathBuf,
        /// Number of sample paths.
        #[arg(long, default_value_t = 200)]
        paths: usize,
        /// Simulated horizon T.
        #[arg(long, default_value_t = 50.0)]
        horizon: f64,
        /// RK4 step.
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        /// Master seed; path k uses its own derived stream.
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// none, static or sector.
        #[arg(long, default_value = "static")]
        uncertainty: UncertaintyKind,
        /// Per-path CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Result file with the Monte Carlo report attached.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print per-subsystem IQC residuals.
        #[arg(long)]
        verbose: bool,
    },
    /// Cost bounds over a directory of pattern files, as CSV.
    Sweep {
        model: PathBuf,
        /// Directory of pattern files, taken in file-name order.
        patterns: PathBuf,
        #[command(flatten)]
        solver: SolverFlags,
    },
    /// Write a pattern file for a model from a matrix such as "1,0,0;0,1,0;0,0,1".
    Pattern {
        model: PathBuf,
        matrix: String,
        /// Label stored in the file.
        #[arg(long)]
        name: Option<String>,
        /// Output path (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SolverFlags {
    /// Strictness margin of the LMIs.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Rank-coupling residual tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Iteration budget per feasibility solve, shared by its restarts.
    #[arg(long = "max-iter")]
    max_iter: Option<usize>,
    /// Perturbed restarts after a stall.
    #[arg(long)]
    restarts: Option<usize>,
    /// Seed of the restart perturbations.
    #[arg(long)]
    seed: Option<u64>,
    /// Bisection bracket on the cost level, LO:HI.
    #[arg(long = "gamma-bracket", value_parser = parse_bracket)]
    gamma_bracket: Option<(f64, f64)>,
    /// Use the stationary distribution in the cost bound.
    #[arg(long = "use-stationary")]
    use_stationary: bool,
    /// Trace solver progress on stderr.
    #[arg(long)]
    verbose: bool,
    /// Output path (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl SolverFlags {
    fn config(&self) -> SynthesisConfig {
        let d = SolverConfig::default();
        SynthesisConfig {
            solver: SolverConfig {
                epsilon: self.epsilon.unwrap_or(d.epsilon),
                residual_tolerance: self.tol.unwrap_or(d.residual_tolerance),
                max_iterations: self.max_iter.unwrap_or(d.max_iterations),
                restarts: self.restarts.unwrap_or(d.restarts),
                seed: self.seed.unwrap_or(d.seed),
                bisection_bracket: self.gamma_bracket.unwrap_or(d.bisection_bracket),
                verbose: self.verbose,
                ..d
            },
            beta_u: BetaU::Free,
            use_stationary: self.use_stationary,
        }
    }
}

fn parse_bracket(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(':').ok_or("expected LO:HI")?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("LO: {e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("HI: {e}"))?;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(format!("need finite LO < HI, got {lo}:{hi}"));
    }
    Ok((lo, hi))
}

/// A failed command: exit code plus message.
struct Failure(u8, String);

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Synthesis(s) => Failure(EXIT_CERTIFICATE, format!("cannot certify result: {s}")),
            other => Failure(EXIT_INPUT, other.to_string()),
        }
    }
}

fn input<E: ToString>(e: E) -> Failure {
    Failure(EXIT_INPUT, e.to_string())
}

fn write_output(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| input(format!("{}: {e}", p.display()))),
        None => io::stdout().write_all(text.as_bytes()).map_err(input),
    }
}

fn synthesize(model: &Path, pattern: &Path, flags: &SolverFlags) -> Result<(), Failure> {
    let model = read_model(model)?;
    let pattern = read_pattern(pattern, &model.atlas)?;
    let config = flags.config();
    let result = match synthesize_neighboring(&model, &pattern, &config) {
        Ok(r) => r,
        Err(e) => {
            let code = match e {
                SynthesisError::Infeasible { .. } | SynthesisError::Solver(_) => EXIT_INFEASIBLE,
                SynthesisError::PostCheckFailed { .. } => EXIT_CERTIFICATE,
                _ => return Err(input(e)),
            };
            // Refused designs leave diagnostics, never a result.
            if let Some(p) = flags.out.as_deref() {
                write_output(Some(p), &to_json(&RefusalFile::new(&e, &config)))?;
            }
            return Err(Failure(code, e.to_string()));
        }
    };
    let bound = cost_bound(&result, &model, config.use_stationary).map_err(input)?;
    let constraints = constraint_check(&model, &result, &config).map_err(input)?;
    let file = ResultFile::from_result(&result, &config, bound, constraints.passes(config.solver.residual_tolerance));
    write_output(flags.out.as_deref(), &to_json(&file))?;
    eprintln!(
        "feasible: gamma {} cost bound {} ({} iterations)",
        result.gamma, bound, result.diagnostics.iterations
    );
    Ok(())
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "FAIL"
    }
}

fn verify(model: &Path, result: &Path, tol: Option<f64>, verbose: bool) -> Result<(), Failure> {
    let model = read_model(model)?;
    let file = ResultFile::read(result)?;
    let rebuilt = file.to_result(&model)?;
    let config = file.config.to_config();
    let tol = tol.unwrap_or(config.solver.residual_tolerance);
    let constraints = constraint_check(&model, &rebuilt, &config).map_err(|e| Failure(EXIT_CERTIFICATE, e.to_string()))?;
    let schur = &rebuilt.schur;
    let gd = &rebuilt.gain_distance;
    let cons_ok = constraints.passes(tol);
    println!(
        "schur: {} (worst Riccati eigenvalue {:e}, max |XY-I| {:e}, max |beta_bar*beta_tilde-1| {:e})",
        verdict(schur.passed),
        schur.worst_eigenvalue(),
        schur.max_xy_gap,
        schur.max_beta_gap
    );
    println!(
        "gain-distance: {} (min slack {:e})",
        verdict(gd.passed),
        if gd.entries.is_empty() { 0.0 } else { gd.min_slack() }
    );
    println!(
        "constraints: {} (max cone violation {:e}, max rank residual {:e}, tol {:e})",
        verdict(cons_ok),
        constraints.max_cone(),
        constraints.max_rank(),
        tol
    );
    if verbose {
        for b in &schur.blocks {
            println!("  riccati subsystem {} mode {}: {:e}", b.subsystem + 1, b.mode + 1, b.max_eigenvalue);
        }
        for e in &gd.entries {
            println!("  gain distance subsystem {} mode {}: {:e} <= {:e}", e.subsystem + 1, e.mode + 1, e.distance_sq, e.beta_u);
        }
    }
    let c = &file.certificates;
    if (c.schur_passed, c.gain_distance_passed, c.constraints_passed) != (schur.passed, gd.passed, cons_ok) {
        println!("note: verdicts differ from those recorded in the result file");
    }
    if schur.passed && gd.passed && cons_ok {
        Ok(())
    } else {
        Err(Failure(EXIT_CERTIFICATE, "certificate check failed".into()))
    }
}

fn simulate(
    model: &Path,
    result: &Path,
    config: MonteCarloConfig,
    csv: Option<&Path>,
    out: Option<&Path>,
    verbose: bool,
) -> Result<(), Failure> {
    let model = read_model(model)?;
    let mut file = ResultFile::read(result)?;
    let rebuilt = file.to_result(&model)?;
    if !rebuilt.certified() {
        return Err(Failure(EXIT_CERTIFICATE, "result does not pass its certificates".into()));
    }
    let bound = cost_bound(&rebuilt, &model, rebuilt.use_stationary).map_err(input)?;
    let report = monte_carlo(&model, &rebuilt, &config).map_err(input)?;
    if let Some(p) = csv {
        let f = File::create(p).map_err(|e| input(format!("{}: {e}", p.display())))?;
        let mut w = BufWriter::new(f);
        report.write_csv(&mut w).and_then(|_| w.flush()).map_err(input)?;
    }
    println!("paths: {}  horizon: {}  dt: {}  seed: {}", config.paths, config.horizon, config.dt, config.seed);
    println!("lambda_hat: {} (SE {})", report.lambda_hat, report.cost_standard_error);
    println!("tail fraction: {}", report.tail_fraction);
    println!(
        "J_hat: {} (SE {})  cost bound: {}  truncation allowance: {}  bound respected: {}",
        report.j_hat,
        report.j_standard_error,
        bound,
        report.truncation_allowance,
        report.respects_bound(bound)
    );
    println!("iqc closure: {}", verdict(report.iqc_passed));
    if verbose {
        for (k, r) in report.iqc_local.iter().enumerate() {
            println!("  iqc subsystem {}: local {:e} interconnection {:e}", k + 1, r, report.iqc_interconnection[k]);
        }
    }
    if let Some(p) = out {
        file.monte_carlo = Some(MonteCarloRecord::from_report(&report, bound));
        write_output(Some(p), &to_json(&file))?;
    }
    if let Err((path, seed)) = report.check_divergence() {
        return Err(Failure(
            EXIT_CERTIFICATE,
            format!("{} paths diverged (first: path {path}, seed {seed})", report.diverged_paths.len()),
        ));
    }
    if !report.iqc_passed {
        return Err(Failure(EXIT_CERTIFICATE, "uncertainty realization violates its IQC".into()));
    }
    Ok(())
}

fn sweep(model: &Path, dir: &Path, flags: &SolverFlags) -> Result<(), Failure> {
    let model = read_model(model)?;
    let patterns = read_pattern_dir(dir, &model.atlas)?;
    let rows = run_sweep(&model, &patterns, &flags.config());
    let mut buf = Vec::new();
    write_csv(&rows, &mut buf).map_err(input)?;
    write_output(flags.out.as_deref(), &String::from_utf8(buf).expect("ascii"))?;
    for row in &rows {
        if let Err(e) = &row.outcome {
            eprintln!("{}: {e}", row.name);
        }
    }
    Ok(())
}

fn parse_matrix(s: &str) -> Result<Vec<Vec<i64>>, String> {
    s.split(';')
        .map(|row| {
            row.split(',')
                .map(|x| x.trim().parse::<i64>().map_err(|e| format!("'{}': {e}", x.trim())))
                .collect()
        })
        .collect()
}

fn pattern(model: &Path, matrix: &str, name: Option<String>, out: Option<&Path>) -> Result<(), Failure> {
    let model = read_model(model)?;
    let c = parse_matrix(matrix).map_err(input)?;
    let p = InfoPattern::new(&model.atlas, &c).map_err(input)?;
    write_output(out, &to_json(&PatternFile::from_pattern(&p, name)))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Synthesize { model, pattern, solver } => synthesize(&model, &pattern, &solver),
        Command::Verify { model, result, tol, verbose } => verify(&model, &result, tol, verbose),
        Command::Simulate { model, result, paths, horizon, dt, seed, uncertainty, csv, out, verbose } => {
            let config = MonteCarloConfig { paths, horizon, dt, seed, uncertainty };
            simulate(&model, &result, config, csv.as_deref(), out.as_deref(), verbose)
        }
        Command::Sweep { model, patterns, solver } => sweep(&model, &patterns, &solver),
        Command::Pattern { model, matrix, name, out } => pattern(&model, &matrix, name, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use galint::study::{
    self, ChainSpec, ConvergenceSpec, InitialLaw, ModelSource, RunSpec, ScalingOp, ScalingSpec,
};
use galint::{Error, GalerkinScheme, MechanismModel, SolverConfig};

#[derive(Parser)]
#[command(name = "galint", version, about = "Variational integrator simulations and benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a model and write the trajectory as CSV.
    Simulate(SimulateArgs),
    /// Median timings of the fast routines and their dense oracles.
    Scaling(ScalingArgs),
    /// Trajectory error against a fine lobatto(3) benchmark.
    Convergence(ConvergenceArgs),
    /// One-step Newton success rate over sampled initial conditions.
    Robustness(RobustnessArgs),
    /// Cross-check every fast routine against the finite-difference oracle.
    Check(CheckArgs),
}

#[derive(Args)]
struct ModelArgs {
    /// JSON model file.
    #[arg(long, conflicts_with = "chain")]
    model: Option<PathBuf>,
    /// Number of links of the chain pendulum.
    #[arg(long)]
    chain: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    link_mass: f64,
    #[arg(long, default_value_t = 1.0)]
    link_length: f64,
}

impl ModelArgs {
    fn source(&self, default_chain: usize) -> ModelSource {
        match &self.model {
            Some(p) => ModelSource::File(p.clone()),
            None => ModelSource::Chain(ChainSpec {
                n: self.chain.unwrap_or(default_chain),
                link_mass: self.link_mass,
                link_length: self.link_length,
            }),
        }
    }
}

#[derive(Args)]
struct SolverArgs {
    #[arg(long, default_value_t = SolverConfig::default().tol)]
    tol: f64,
    #[arg(long, default_value_t = SolverConfig::default().max_iter)]
    max_iter: usize,
}

impl SolverArgs {
    fn config(&self) -> SolverConfig {
        SolverConfig { tol: self.tol, max_iter: self.max_iter, ..Default::default() }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value = "trapezoidal")]
    scheme: String,
    #[arg(long)]
    dt: f64,
    #[arg(long)]
    horizon: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Half width of the initial angle box.
    #[arg(long, default_value_t = std::f64::consts::FRAC_PI_2)]
    angle: f64,
    /// Half width of the initial velocity box.
    #[arg(long, default_value_t = std::f64::consts::FRAC_PI_2)]
    velocity: f64,
    #[command(flatten)]
    solver: SolverArgs,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Keep the rows computed before a solver failure and exit 0.
    #[arg(long)]
    allow_failures: bool,
}

#[derive(Args)]
struct ScalingArgs {
    #[arg(long, value_delimiter = ',', default_value = "8,16,32,64,128,256")]
    n: Vec<usize>,
    #[arg(long, default_value = "simpson")]
    scheme: String,
    #[arg(long, default_value_t = 0.01)]
    dt: f64,
    #[arg(long, default_value_t = 25)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Largest n for which the dense oracle is timed.
    #[arg(long, default_value_t = 64)]
    oracle_max_n: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ConvergenceArgs {
    #[arg(long, value_delimiter = ',', default_value = "0.04,0.02,0.01,0.005")]
    dts: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "trapezoidal,simpson")]
    schemes: Vec<String>,
    #[arg(long, default_value_t = 2.0)]
    horizon: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RobustnessArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value = "trapezoidal")]
    scheme: String,
    #[arg(long, value_delimiter = ',', default_value = "0.01,0.02,0.03,0.04,0.05")]
    dts: Vec<f64>,
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Run the suite on this model instead of random trees.
    #[arg(long)]
    model: Option<PathBuf>,
}

/// Failures split by exit code: solver and check failures give 1, usage
/// and input problems give 2.
enum Failure {
    Solver(String),
    Input(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::SingularJacobian { .. }
            | Error::SingularDense { .. }
            | Error::NoConvergence { .. }
            | Error::RankDeficientConstraints { .. }
            | Error::NonFiniteForce { .. }
            | Error::NonFiniteState => Failure::Solver(e.to_string()),
            _ => Failure::Input(e.to_string()),
        }
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

fn threads() -> usize {
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    std::env::var("GALINT_THREADS").ok().and_then(|v| v.parse().ok()).filter(|&t| t > 0).unwrap_or(available)
}

fn writer(out: &Option<PathBuf>) -> Result<csv::Writer<Box<dyn Write>>, Failure> {
    let sink: Box<dyn Write> = match out {
        Some(p) => Box::new(std::fs::File::create(p).map_err(|e| Failure::Input(format!("{}: {e}", p.display())))?),
        None => Box::new(std::io::stdout().lock()),
    };
    Ok(csv::Writer::from_writer(sink))
}

fn simulate(args: SimulateArgs) -> Result<(), Failure> {
    let spec = RunSpec {
        model: args.model.source(1),
        scheme: args.scheme,
        dt: args.dt,
        horizon: args.horizon,
        seed: args.seed,
        initial: InitialLaw { angle: args.angle, velocity: args.velocity },
        solver: args.solver.config(),
    };
    let traj = study::simulate(&spec)?;
    let n = traj.rows[0].q.len();
    let mut w = writer(&args.out)?;
    w.write_record(study::trajectory_header(n))?;
    for row in &traj.rows {
        w.write_record(row.fields())?;
    }
    w.flush()?;
    match traj.failure {
        Some(e) if args.allow_failures => {
            eprintln!("stopped after {} steps: {e}", traj.rows.len() - 1);
            Ok(())
        }
        Some(e) => Err(Failure::from(e)),
        None => Ok(()),
    }
}

fn scaling(args: ScalingArgs) -> Result<(), Failure> {
    let scheme: GalerkinScheme = args.scheme.parse()?;
    let spec = ScalingSpec {
        ns: args.n,
        scheme,
        dt: args.dt,
        trials: args.trials,
        seed: args.seed,
        oracle_max_n: args.oracle_max_n,
        ops: ScalingOp::ALL.to_vec(),
    };
    let rows = study::scaling(&spec)?;
    let mut w = writer(&args.out)?;
    w.write_record(["n", "op", "median_ns"])?;
    for r in rows {
        w.write_record([r.n.to_string(), r.op.to_string(), r.median_ns.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn convergence(args: ConvergenceArgs) -> Result<(), Failure> {
    let schemes = args.schemes.iter().map(|s| s.parse()).collect::<Result<Vec<GalerkinScheme>, _>>()?;
    let spec = ConvergenceSpec::two_link(schemes, args.dts, args.horizon)?;
    let rows = study::convergence(&spec, threads())?;
    let mut w = writer(&args.out)?;
    w.write_record(["scheme", "dt", "traj_error"])?;
    for r in rows {
        w.write_record([r.scheme, r.dt.to_string(), r.traj_error.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn robustness(args: RobustnessArgs) -> Result<(), Failure> {
    let model = args.model.source(32).load()?;
    let scheme: GalerkinScheme = args.scheme.parse()?;
    let rows = study::robustness(&model, &scheme, &args.dts, args.samples, args.seed, args.solver.config(), threads());
    let mut w = writer(&args.out)?;
    w.write_record(["n", "dt", "samples", "successes", "median_iterations"])?;
    for r in rows {
        w.write_record([
            r.n.to_string(),
            r.dt.to_string(),
            r.samples.to_string(),
            r.successes.to_string(),
            r.median_iterations.map_or(String::new(), |m| m.to_string()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn check(args: CheckArgs) -> Result<(), Failure> {
    let model = args.model.map(MechanismModel::from_json_file).transpose()?;
    let report = study::check(model.as_ref(), args.seed)?;
    for item in &report.items {
        println!(
            "{} {:<32} error {:.3e} tol {:.0e}",
            if item.passed() { "PASS" } else { "FAIL" },
            item.name,
            item.error,
            item.tol
        );
    }
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Solver("oracle cross-check failed".into()))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Scaling(a) => scaling(a),
        Command::Convergence(a) => convergence(a),
        Command::Robustness(a) => robustness(a),
        Command::Check(a) => check(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Solver(m)) => {
            eprintln!("galint: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Input(m)) => {
            eprintln!("galint: {m}");
            ExitCode::from(2)
        }
    }
}

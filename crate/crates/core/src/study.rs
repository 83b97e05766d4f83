//! Experiment drivers behind the command-line tool: trajectories, timing
//! sweeps, order-of-accuracy runs, one-step robustness statistics and the
//! oracle cross-check suite.

use std::f64::consts::FRAC_PI_2;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::constraint::PointOnSphere;
use crate::del::{evaluate_del, DelProblem, DiscreteState, JointDamping, QuadraticDrag};
use crate::error::{Error, Result};
use crate::galerkin::GalerkinScheme;
use crate::linearize::{d2_discrete_lagrangian, energy_hessians, linearize_del, mass_matrix};
use crate::model::MechanismModel;
use crate::newton::{constrained_step_second_order, newton_direction, validate_force_jacobians, Integrator, SolverConfig};
use crate::oracle::{self, rel_err, rel_err_mat, FdConfig};
use crate::sample::{random_control_points, random_model, random_vector};

/// `n` identical links of the chain pendulum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChainSpec {
    pub n: usize,
    pub link_mass: f64,
    pub link_length: f64,
}

impl ChainSpec {
    pub fn new(n: usize) -> Self {
        Self { n, link_mass: 1.0, link_length: 1.0 }
    }

    pub fn build(&self) -> Result<MechanismModel> {
        if self.n == 0 {
            return Err(Error::InvalidSpec("chain needs at least one link".into()));
        }
        MechanismModel::pendulum_chain(self.n, self.link_mass, self.link_length)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModelSource {
    Chain(ChainSpec),
    File(PathBuf),
}

impl ModelSource {
    pub fn load(&self) -> Result<MechanismModel> {
        match self {
            Self::Chain(c) => c.build(),
            Self::File(p) => MechanismModel::from_json_file(p),
        }
    }
}

/// Initial joint angles and velocities drawn uniformly from boxes of the
/// given half widths.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitialLaw {
    pub angle: f64,
    pub velocity: f64,
}

impl Default for InitialLaw {
    fn default() -> Self {
        Self { angle: FRAC_PI_2, velocity: FRAC_PI_2 }
    }
}

impl InitialLaw {
    /// `q⁰`, `q̇⁰` and `p⁰ = M(q⁰) q̇⁰`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, model: &MechanismModel) -> (DVector<f64>, DVector<f64>, DiscreteState) {
        let n = model.num_bodies();
        let q = random_vector(rng, n, self.angle);
        let qd = random_vector(rng, n, self.velocity);
        let state = DiscreteState::from_velocity(model, q.clone(), &qd);
        (q, qd, state)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSpec {
    pub model: ModelSource,
    pub scheme: String,
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    pub initial: InitialLaw,
    pub solver: SolverConfig,
}

impl RunSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidSpec(format!("dt must be positive, got {}", self.dt)));
        }
        if self.horizon.is_nan() || self.horizon < self.dt {
            return Err(Error::InvalidSpec(format!("horizon {} is shorter than dt {}", self.horizon, self.dt)));
        }
        Ok(())
    }

    /// `N = round(T / Δt)`.
    pub fn num_steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRow {
    pub t: f64,
    pub q: DVector<f64>,
    pub p: DVector<f64>,
    pub energy: f64,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Debug)]
pub struct Trajectory {
    pub rows: Vec<TrajectoryRow>,
    /// Solver error that ended the run early.
    pub failure: Option<Error>,
}

pub fn trajectory_header(n: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((0..n).map(|i| format!("q{i}")));
    h.extend((0..n).map(|i| format!("p{i}")));
    h.extend(["energy", "iterations", "residual"].map(String::from));
    h
}

impl TrajectoryRow {
    pub fn fields(&self) -> Vec<String> {
        let mut f = vec![self.t.to_string()];
        f.extend(self.q.iter().map(|x| x.to_string()));
        f.extend(self.p.iter().map(|x| x.to_string()));
        f.push(self.energy.to_string());
        f.push(self.iterations.to_string());
        f.push(self.residual.to_string());
        f
    }
}

/// Integrates from `state` for `steps` steps with warm starts. Stops at the
/// first solver failure.
pub fn integrate(problem: DelProblem, state: DiscreteState, steps: usize, solver: SolverConfig) -> Trajectory {
    let model = problem.model;
    let dt = problem.dt;
    let t0 = problem.t0;
    let row = |s: &DiscreteState, iterations, residual| TrajectoryRow {
        t: t0 + s.k as f64 * dt,
        q: s.q.clone(),
        p: s.p.clone(),
        energy: s.energy(model),
        iterations,
        residual,
    };
    let mut rows = vec![row(&state, 0, 0.0)];
    let mut integ = Integrator::new(problem, state, solver);
    for _ in 0..steps {
        match integ.step() {
            Ok(d) => rows.push(row(integ.state(), d.iterations, d.residual)),
            Err(e) => return Trajectory { rows, failure: Some(e) },
        }
    }
    Trajectory { rows, failure: None }
}

pub fn simulate(spec: &RunSpec) -> Result<Trajectory> {
    spec.validate()?;
    let model = spec.model.load()?;
    let scheme: GalerkinScheme = spec.scheme.parse()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (_, _, state) = spec.initial.sample(&mut rng, &model);
    let problem = DelProblem::new(&model, &scheme, spec.dt);
    Ok(integrate(problem, state, spec.num_steps(), spec.solver))
}

/// Runs `f` over `items` on up to `threads` scoped threads, preserving order.
pub fn parallel_map<T: Sync, U: Send>(items: &[T], threads: usize, f: impl Fn(&T) -> U + Sync) -> Vec<U> {
    let threads = threads.clamp(1, items.len().max(1));
    if threads == 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let out: Mutex<Vec<Option<U>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                if k >= items.len() {
                    break;
                }
                let v = f(&items[k]);
                out.lock().expect("no panics while holding the lock")[k] = Some(v);
            });
        }
    });
    out.into_inner().expect("threads joined").into_iter().map(|v| v.expect("every item mapped")).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScalingOp {
    EvaluateDel,
    NewtonDirection,
    /// `energy_hessians` at every node plus `𝔻²𝓛_d` assembly.
    Linearize,
    OracleEvaluate,
    OracleNewton,
    OracleLinearize,
}

impl ScalingOp {
    pub const ALL: [ScalingOp; 6] = [
        Self::EvaluateDel,
        Self::NewtonDirection,
        Self::Linearize,
        Self::OracleEvaluate,
        Self::OracleNewton,
        Self::OracleLinearize,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::EvaluateDel => "evaluate_del",
            Self::NewtonDirection => "newton_direction",
            Self::Linearize => "linearize",
            Self::OracleEvaluate => "oracle_evaluate",
            Self::OracleNewton => "oracle_newton",
            Self::OracleLinearize => "oracle_linearize",
        }
    }

    pub fn is_oracle(self) -> bool {
        matches!(self, Self::OracleEvaluate | Self::OracleNewton | Self::OracleLinearize)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalingSpec {
    pub ns: Vec<usize>,
    pub scheme: GalerkinScheme,
    pub dt: f64,
    pub trials: usize,
    pub seed: u64,
    /// Oracle operations are skipped above this size.
    pub oracle_max_n: usize,
    pub ops: Vec<ScalingOp>,
}

impl ScalingSpec {
    pub fn new(ns: Vec<usize>, scheme: GalerkinScheme, trials: usize) -> Self {
        Self { ns, scheme, dt: 0.01, trials, seed: 0, oracle_max_n: 64, ops: ScalingOp::ALL.to_vec() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalingRow {
    pub n: usize,
    pub op: &'static str,
    pub median_ns: u128,
}

/// Control points along `q⁰ + c^α Δt q̇⁰` for `trials` sampled states.
pub fn scaling_samples(model: &MechanismModel, scheme: &GalerkinScheme, dt: f64, trials: usize, seed: u64) -> Vec<(DMatrix<f64>, DVector<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ model.num_bodies() as u64);
    (0..trials)
        .map(|_| {
            let (q, qd, state) = InitialLaw::default().sample(&mut rng, model);
            let qbar = DMatrix::from_fn(scheme.num_nodes(), q.len(), |a, i| q[i] + scheme.c(a) * dt * qd[i]);
            (qbar, state.p)
        })
        .collect()
}

fn median(mut v: Vec<u128>) -> u128 {
    v.sort_unstable();
    v[v.len() / 2]
}

fn time_op(problem: &DelProblem, op: ScalingOp, qbar: &DMatrix<f64>, p: &DVector<f64>) -> Result<u128> {
    let fd = FdConfig::default();
    let start = Instant::now();
    match op {
        ScalingOp::EvaluateDel => {
            std::hint::black_box(evaluate_del(problem, qbar, p)?);
        }
        ScalingOp::NewtonDirection => {
            let out = evaluate_del(problem, qbar, p)?;
            std::hint::black_box(newton_direction(problem, &out)?);
        }
        ScalingOp::Linearize => {
            std::hint::black_box(d2_discrete_lagrangian(problem.model, problem.scheme, qbar, problem.dt)?);
        }
        ScalingOp::OracleEvaluate => {
            std::hint::black_box(oracle::dense_del(problem, qbar, p)?);
        }
        ScalingOp::OracleNewton => {
            std::hint::black_box(oracle::dense_newton_direction(problem, qbar, p, &fd)?);
        }
        ScalingOp::OracleLinearize => {
            std::hint::black_box(oracle::fd_columns(qbar, 0, fd.gradient_step, |x| {
                Ok(oracle::flatten(&oracle::dense_del(problem, x, p)?.0))
            })?);
        }
    }
    Ok(start.elapsed().as_nanos())
}

/// Median wall-clock time per operation and chain size. Timings run
/// serially; one warm-up call per operation is discarded.
pub fn scaling(spec: &ScalingSpec) -> Result<Vec<ScalingRow>> {
    let mut rows = Vec::new();
    for &n in &spec.ns {
        let model = ChainSpec::new(n).build()?;
        let problem = DelProblem::new(&model, &spec.scheme, spec.dt);
        let samples = scaling_samples(&model, &spec.scheme, spec.dt, spec.trials.max(1), spec.seed);
        for &op in &spec.ops {
            if op.is_oracle() && n > spec.oracle_max_n {
                continue;
            }
            time_op(&problem, op, &samples[0].0, &samples[0].1)?;
            let times = samples.iter().map(|(qbar, p)| time_op(&problem, op, qbar, p)).collect::<Result<Vec<_>>>()?;
            rows.push(ScalingRow { n, op: op.name(), median_ns: median(times) });
        }
    }
    Ok(rows)
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let k = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / k, ly.iter().sum::<f64>() / k);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[derive(Clone, Debug)]
pub struct ConvergenceSpec {
    pub model: MechanismModel,
    pub schemes: Vec<GalerkinScheme>,
    pub dts: Vec<f64>,
    pub horizon: f64,
    pub q0: DVector<f64>,
    pub qdot0: DVector<f64>,
    pub benchmark_scheme: GalerkinScheme,
    pub benchmark_dt: f64,
    pub solver: SolverConfig,
}

impl ConvergenceSpec {
    /// 2-link chain released from rest at small angles, lobatto(3) benchmark
    /// at `Δt = 5·10⁻⁴`.
    pub fn two_link(schemes: Vec<GalerkinScheme>, dts: Vec<f64>, horizon: f64) -> Result<Self> {
        Ok(Self {
            model: ChainSpec::new(2).build()?,
            schemes,
            dts,
            horizon,
            q0: DVector::from_vec(vec![0.2, -0.15]),
            qdot0: DVector::zeros(2),
            benchmark_scheme: GalerkinScheme::lobatto(3)?,
            benchmark_dt: 5e-4,
            solver: SolverConfig { tol: 1e-13, ..Default::default() },
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub scheme: String,
    pub dt: f64,
    pub traj_error: f64,
}

fn run_positions(spec: &ConvergenceSpec, scheme: &GalerkinScheme, dt: f64, solver: SolverConfig) -> Result<Vec<DVector<f64>>> {
    let steps = (spec.horizon / dt).round() as usize;
    let state = DiscreteState::from_velocity(&spec.model, spec.q0.clone(), &spec.qdot0);
    let traj = integrate(DelProblem::new(&spec.model, scheme, dt), state, steps, solver);
    if let Some(e) = traj.failure {
        return Err(e);
    }
    Ok(traj.rows.into_iter().map(|r| r.q).collect())
}

/// `(1/T) ∫ ‖q(t) - q_d(t)‖ dt` by the trapezoid rule on the coarse grid.
pub fn trajectory_error(q: &[DVector<f64>], benchmark: &[DVector<f64>], stride: usize, dt: f64) -> f64 {
    let e: Vec<f64> = q.iter().enumerate().map(|(k, x)| (x - &benchmark[k * stride]).norm()).collect();
    let steps = e.len() - 1;
    let integral: f64 = (0..steps).map(|k| 0.5 * (e[k] + e[k + 1]) * dt).sum();
    integral / (steps as f64 * dt)
}

/// Error against the benchmark for every `(scheme, Δt)` pair. Every `Δt`
/// must be an integer multiple of the benchmark step.
pub fn convergence(spec: &ConvergenceSpec, threads: usize) -> Result<Vec<ConvergenceRow>> {
    let mut strides = Vec::new();
    for &dt in &spec.dts {
        let ratio = dt / spec.benchmark_dt;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio || ratio.round() < 1.0 {
            return Err(Error::InvalidSpec(format!("dt {dt} is not a multiple of the benchmark step {}", spec.benchmark_dt)));
        }
        strides.push(ratio.round() as usize);
    }
    let benchmark = run_positions(spec, &spec.benchmark_scheme, spec.benchmark_dt, spec.solver)?;
    let jobs: Vec<(usize, usize)> = (0..spec.schemes.len()).flat_map(|a| (0..spec.dts.len()).map(move |b| (a, b))).collect();
    parallel_map(&jobs, threads, |&(a, b)| {
        let (scheme, dt) = (&spec.schemes[a], spec.dts[b]);
        let q = run_positions(spec, scheme, dt, spec.solver)?;
        Ok(ConvergenceRow { scheme: scheme.name(), dt, traj_error: trajectory_error(&q, &benchmark, strides[b], dt) })
    })
    .into_iter()
    .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct RobustnessRow {
    pub n: usize,
    pub dt: f64,
    pub samples: usize,
    pub successes: usize,
    pub median_iterations: Option<usize>,
}

impl RobustnessRow {
    pub fn success_rate(&self) -> f64 {
        self.successes as f64 / self.samples as f64
    }
}

/// One-step solves from `samples` initial conditions per `Δt`.
pub fn robustness(
    model: &MechanismModel,
    scheme: &GalerkinScheme,
    dts: &[f64],
    samples: usize,
    seed: u64,
    solver: SolverConfig,
    threads: usize,
) -> Vec<RobustnessRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let states: Vec<DiscreteState> = (0..samples).map(|_| InitialLaw::default().sample(&mut rng, model).2).collect();
    dts.iter()
        .map(|&dt| {
            let problem = DelProblem::new(model, scheme, dt);
            let results =
                parallel_map(&states, threads, |s| crate::newton::step(&problem, s, None, &solver).ok().map(|(_, d)| d.iterations));
            let mut its: Vec<usize> = results.into_iter().flatten().collect();
            its.sort_unstable();
            RobustnessRow {
                n: model.num_bodies(),
                dt,
                samples,
                successes: its.len(),
                median_iterations: its.get(its.len() / 2).copied(),
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckItem {
    pub name: &'static str,
    pub error: f64,
    pub tol: f64,
}

impl CheckItem {
    pub fn passed(&self) -> bool {
        self.error <= self.tol
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CheckReport {
    pub items: Vec<CheckItem>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.items.iter().all(CheckItem::passed)
    }
}

fn scheme_for(s: usize) -> GalerkinScheme {
    match s {
        1 => GalerkinScheme::trapezoidal(),
        2 => GalerkinScheme::simpson(),
        s => GalerkinScheme::lobatto(s).expect("small order"),
    }
}

/// Cross-checks every fast routine against the oracle on small random
/// systems, or on `model` when given.
pub fn check(model: Option<&MechanismModel>, seed: u64) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fd = FdConfig::default();
    let mut worst = [0.0f64; 6];
    let damping = JointDamping(0.3);
    let drag = QuadraticDrag(0.2);
    let forces = crate::del::ForceSum(vec![&damping, &drag]);
    for case in 0..12 {
        let random;
        let model = match model {
            Some(m) => m,
            None => {
                random = random_model(&mut rng, 1 + case % 5);
                &random
            }
        };
        let n = model.num_bodies();
        let scheme = scheme_for(1 + case % 3);
        let dt = 0.02;
        let problem = DelProblem::new(model, &scheme, dt).with_forces(&forces);
        let qbar = random_control_points(&mut rng, &scheme, n, dt, 0.5);
        let p = random_vector(&mut rng, n, 1.0);

        let out = evaluate_del(&problem, &qbar, &p)?;
        let (r, pn) = oracle::fd_del(&problem, &qbar, &p, &fd)?;
        worst[0] = worst[0].max(rel_err_mat(&out.residuals, &r)).max(rel_err(out.next_momentum.as_slice(), pn.as_slice()));

        let dq = newton_direction(&problem, &out)?;
        let j = oracle::fd_jacobian(&problem, &qbar, &p, &fd)?;
        let dense = j.lu().solve(&(-oracle::flatten(&out.residuals))).ok_or(Error::SingularDense { rcond: 0.0 })?;
        worst[1] = worst[1].max(rel_err(oracle::flatten(&dq).as_slice(), dense.as_slice()));

        let q = random_vector(&mut rng, n, 1.5);
        let qd = random_vector(&mut rng, n, 1.5);
        let a = energy_hessians(model, &q, &qd);
        let f = oracle::fd_energy_hessians(model, &q, &qd, &fd);
        let pairs = [
            (&a.d2k_dqdot2, &f.d2k_dqdot2),
            (&a.d2k_dqdot_dq, &f.d2k_dqdot_dq),
            (&a.d2k_dq_dqdot, &f.d2k_dq_dqdot),
            (&a.d2k_dq2, &f.d2k_dq2),
            (&a.d2v_dq2, &f.d2v_dq2),
        ];
        // Blocks can vanish identically (one joint), so share one scale.
        let scale = pairs.iter().map(|(x, _)| x.amax()).fold(1e-300, f64::max);
        let e: Vec<f64> = pairs.iter().map(|(x, y)| (*x - *y).amax() / scale).collect();
        let m = mass_matrix(model, &q);
        worst[2] = worst[2].max(rel_err_mat(&m, &a.d2k_dqdot2));
        worst[2] = e.iter().fold(worst[2], |m, &x| m.max(x));

        let h = d2_discrete_lagrangian(model, &scheme, &qbar, dt)?.full();
        let hf = oracle::fd_discrete_lagrangian_hessian(model, &scheme, &qbar, dt, &fd);
        worst[3] = worst[3].max(rel_err_mat(&h, &hf));

        let lin = linearize_del(&problem, &qbar, &p)?;
        let lf = oracle::fd_linearization(&problem, &qbar, &p, &fd)?;
        let s = scheme.s();
        let stacked =
            DMatrix::from_fn(lf.nrows(), lf.ncols(), |r, c| if r < s * n { lin.dr_dq[(r, c)] } else { lin.dpnext_dq[(r - s * n, c)] });
        worst[4] = worst[4].max(rel_err_mat(&stacked, &lf));
    }
    let forces_model = model.cloned().map_or_else(|| ChainSpec::new(3).build(), Ok)?;
    worst[5] = validate_force_jacobians(&forces, &forces_model, 20, seed).max_error();

    let mut items = vec![
        CheckItem { name: "residuals_vs_fd_del", error: worst[0], tol: 1e-6 },
        CheckItem { name: "newton_vs_dense_solve", error: worst[1], tol: 1e-6 },
        CheckItem { name: "energy_hessians_vs_fd", error: worst[2], tol: 1e-5 },
        CheckItem { name: "discrete_hessian_vs_fd", error: worst[3], tol: 1e-4 },
        CheckItem { name: "linearization_vs_fd", error: worst[4], tol: 1e-5 },
        CheckItem { name: "force_jacobians_vs_fd", error: worst[5], tol: 1e-5 },
    ];
    items.push(pinned_pendulum_check(20)?);
    Ok(CheckReport { items })
}

/// Double pendulum whose tip stays on the circle through its rest position.
pub fn pinned_double_pendulum() -> Result<(MechanismModel, PointOnSphere, DiscreteState)> {
    let model = ChainSpec::new(2).build()?;
    let q0 = DVector::from_vec(vec![0.5, -0.3]);
    let cache = model.kinematics(&q0, &DVector::zeros(2));
    let tip = cache.node(1, 0).g.translation;
    let center = Vector3::new(0.0, 0.0, 0.0);
    let constraint = PointOnSphere { body: 1, point: Vector3::zeros(), center, radius: (tip - center).norm() };
    // A velocity tangent to the constraint: h_q q̇ = 0.
    use crate::constraint::Constraints;
    let jq = constraint.jacobian_q(&model, &q0, &DVector::zeros(2));
    let qd = DVector::from_vec(vec![jq[(0, 1)], -jq[(0, 0)]]) * 0.5;
    Ok((model.clone(), constraint, DiscreteState::from_velocity(&model, q0, &qd)))
}

/// Largest state difference between the recursive constrained step and the
/// dense KKT oracle over `steps` steps.
pub fn pinned_pendulum_check(steps: usize) -> Result<CheckItem> {
    let (model, constraint, mut fast) = pinned_double_pendulum()?;
    let scheme = GalerkinScheme::trapezoidal();
    let problem = DelProblem::new(&model, &scheme, 0.01);
    let config = SolverConfig::default();
    let mut dense = fast.clone();
    let mut worst = 0.0f64;
    for _ in 0..steps {
        let c = constrained_step_second_order(&problem, &fast, &constraint, &config)?;
        let (d, _, _) = oracle::dense_constrained_step(&problem, &dense, &constraint, &config)?;
        worst = worst.max((&c.state.q - &d.q).amax()).max((&c.state.p - &d.p).amax()).max(c.violation);
        fast = c.state;
        dense = d;
    }
    Ok(CheckItem { name: "constrained_step_vs_dense_kkt", error: worst, tol: 1e-6 })
}

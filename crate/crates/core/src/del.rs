//! Recursive evaluation of the discrete Euler-Lagrange residuals in `O(sn)`.
//!
//! For each node `α` the backward pass accumulates the articulated momentum
//! `μ̄_i = M̄_i v̄_i + Σ_chd μ̄_j` and impulse `Γ̄_i = F̄_i^α + Σ_chd Γ̄_j` and
//! forms `Ω̄_i = w^α Δt ad_{v̄_i}ᵀ μ̄_i + Γ̄_i`. The residuals are
//!
//! ```text
//! r_i^α = [α = 0] p_i + S̄_i^αᵀ Ω̄_i^α + Σ_β a^{αβ} S̄_i^βᵀ μ̄_i^β + Q_i^α,   α < s
//! ```
//!
//! and the `α = s` row of the same expression is `p^{k+1}`. Gravity enters as
//! the body wrench `m_i (p_i × g⃗; g⃗)`.

use nalgebra::{DMatrix, DVector, Vector3};

use crate::constraint::Constraints;
use crate::error::{Error, Result};
use crate::galerkin::GalerkinScheme;
use crate::model::{KinematicsCache, MechanismModel};
use crate::se3::{ad_dual_mul, exp_twist, hat, stack, SpatialMatrix, SpatialTransform, Twist, Wrench};

/// External wrenches and joint forces acting on a mechanism.
///
/// `body_wrench` is the spatial wrench `F̄_i` on body `i` (gravity excluded, it
/// is a model field). It may depend only on the body's own pose and spatial
/// velocity. `joint_force` is the scalar force `Q_i` on joint `i`.
///
/// Analytic Jacobians are optional. `D₁F̄` is taken with respect to the
/// left perturbation `g ↦ exp(η̂) g`, `D₂F̄` with respect to `v̄`.
pub trait ForceModel: Sync {
    fn body_wrench(&self, _i: usize, _g: &SpatialTransform, _v: &Twist, _u: &DVector<f64>, _t: f64) -> Wrench {
        Wrench::zeros()
    }

    fn joint_force(&self, _i: usize, _q: f64, _qdot: f64, _u: &DVector<f64>, _t: f64) -> f64 {
        0.0
    }

    /// `(D₁F̄, D₂F̄)` if available.
    fn body_wrench_jacobians(
        &self,
        _i: usize,
        _g: &SpatialTransform,
        _v: &Twist,
        _u: &DVector<f64>,
        _t: f64,
    ) -> Option<(SpatialMatrix, SpatialMatrix)> {
        None
    }

    /// `(∂Q/∂q, ∂Q/∂q̇)` if available.
    fn joint_force_jacobians(&self, _i: usize, _q: f64, _qdot: f64, _u: &DVector<f64>, _t: f64) -> Option<(f64, f64)> {
        None
    }
}

/// Time-dependent control vector `u(t)`.
pub trait ControlInput: Sync {
    fn sample(&self, t: f64) -> DVector<f64>;
}

impl<F: Fn(f64) -> DVector<f64> + Sync> ControlInput for F {
    fn sample(&self, t: f64) -> DVector<f64> {
        self(t)
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct NoControls;

impl ControlInput for NoControls {
    fn sample(&self, _t: f64) -> DVector<f64> {
        DVector::zeros(0)
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroForce;

impl ForceModel for ZeroForce {
    fn body_wrench_jacobians(
        &self,
        _i: usize,
        _g: &SpatialTransform,
        _v: &Twist,
        _u: &DVector<f64>,
        _t: f64,
    ) -> Option<(SpatialMatrix, SpatialMatrix)> {
        Some((SpatialMatrix::zeros(), SpatialMatrix::zeros()))
    }

    fn joint_force_jacobians(&self, _i: usize, _q: f64, _qdot: f64, _u: &DVector<f64>, _t: f64) -> Option<(f64, f64)> {
        Some((0.0, 0.0))
    }
}

/// Viscous joint damping `Q_i = -c q̇_i`.
#[derive(Clone, Copy, Debug)]
pub struct JointDamping(pub f64);

impl ForceModel for JointDamping {
    fn joint_force(&self, _i: usize, _q: f64, qdot: f64, _u: &DVector<f64>, _t: f64) -> f64 {
        -self.0 * qdot
    }

    fn body_wrench_jacobians(
        &self,
        _i: usize,
        _g: &SpatialTransform,
        _v: &Twist,
        _u: &DVector<f64>,
        _t: f64,
    ) -> Option<(SpatialMatrix, SpatialMatrix)> {
        Some((SpatialMatrix::zeros(), SpatialMatrix::zeros()))
    }

    fn joint_force_jacobians(&self, _i: usize, _q: f64, _qdot: f64, _u: &DVector<f64>, _t: f64) -> Option<(f64, f64)> {
        Some((0.0, -self.0))
    }
}

/// Quadratic drag on the spatial velocity, `F̄_i = -c |v̄_i| v̄_i`.
#[derive(Clone, Copy, Debug)]
pub struct QuadraticDrag(pub f64);

impl ForceModel for QuadraticDrag {
    fn body_wrench(&self, _i: usize, _g: &SpatialTransform, v: &Twist, _u: &DVector<f64>, _t: f64) -> Wrench {
        -self.0 * v.norm() * v
    }

    fn body_wrench_jacobians(
        &self,
        _i: usize,
        _g: &SpatialTransform,
        v: &Twist,
        _u: &DVector<f64>,
        _t: f64,
    ) -> Option<(SpatialMatrix, SpatialMatrix)> {
        let n = v.norm();
        let d2 = if n > 0.0 {
            -self.0 * (SpatialMatrix::identity() * n + v * v.transpose() / n)
        } else {
            SpatialMatrix::zeros()
        };
        Some((SpatialMatrix::zeros(), d2))
    }

    fn joint_force_jacobians(&self, _i: usize, _q: f64, _qdot: f64, _u: &DVector<f64>, _t: f64) -> Option<(f64, f64)> {
        Some((0.0, 0.0))
    }
}

/// Linear damping of the body-frame velocity, `F_i = -c v_i`, pushed to the
/// world frame. No analytic Jacobians, so solvers fall back to differences.
#[derive(Clone, Copy, Debug)]
pub struct BodyDamping(pub f64);

impl ForceModel for BodyDamping {
    fn body_wrench(&self, _i: usize, g: &SpatialTransform, v: &Twist, _u: &DVector<f64>, _t: f64) -> Wrench {
        let ainv = g.adjoint_inv();
        -self.0 * (ainv.transpose() * (ainv * v))
    }
}

/// Joint forces taken directly from the control vector, `Q_i = u_i`.
#[derive(Clone, Copy, Debug)]
pub struct JointTorques;

impl ForceModel for JointTorques {
    fn joint_force(&self, i: usize, _q: f64, _qdot: f64, u: &DVector<f64>, _t: f64) -> f64 {
        u.get(i).copied().unwrap_or(0.0)
    }

    fn body_wrench_jacobians(
        &self,
        _i: usize,
        _g: &SpatialTransform,
        _v: &Twist,
        _u: &DVector<f64>,
        _t: f64,
    ) -> Option<(SpatialMatrix, SpatialMatrix)> {
        Some((SpatialMatrix::zeros(), SpatialMatrix::zeros()))
    }

    fn joint_force_jacobians(&self, _i: usize, _q: f64, _qdot: f64, _u: &DVector<f64>, _t: f64) -> Option<(f64, f64)> {
        Some((0.0, 0.0))
    }
}

/// Sum of several force models.
pub struct ForceSum<'a>(pub Vec<&'a dyn ForceModel>);

impl ForceModel for ForceSum<'_> {
    fn body_wrench(&self, i: usize, g: &SpatialTransform, v: &Twist, u: &DVector<f64>, t: f64) -> Wrench {
        self.0.iter().map(|f| f.body_wrench(i, g, v, u, t)).sum()
    }

    fn joint_force(&self, i: usize, q: f64, qdot: f64, u: &DVector<f64>, t: f64) -> f64 {
        self.0.iter().map(|f| f.joint_force(i, q, qdot, u, t)).sum()
    }

    fn body_wrench_jacobians(
        &self,
        i: usize,
        g: &SpatialTransform,
        v: &Twist,
        u: &DVector<f64>,
        t: f64,
    ) -> Option<(SpatialMatrix, SpatialMatrix)> {
        let mut acc = (SpatialMatrix::zeros(), SpatialMatrix::zeros());
        for f in &self.0 {
            let (a, b) = f.body_wrench_jacobians(i, g, v, u, t)?;
            acc.0 += a;
            acc.1 += b;
        }
        Some(acc)
    }

    fn joint_force_jacobians(&self, i: usize, q: f64, qdot: f64, u: &DVector<f64>, t: f64) -> Option<(f64, f64)> {
        let mut acc = (0.0, 0.0);
        for f in &self.0 {
            let (a, b) = f.joint_force_jacobians(i, q, qdot, u, t)?;
            acc.0 += a;
            acc.1 += b;
        }
        Some(acc)
    }
}

fn fd_step(x: f64) -> f64 {
    1e-7f64.max(1e-7 * x.abs())
}

/// `(D₁F̄, D₂F̄)` from the model, or by central differences when absent.
pub fn wrench_jacobians(
    forces: &dyn ForceModel,
    i: usize,
    g: &SpatialTransform,
    v: &Twist,
    u: &DVector<f64>,
    t: f64,
) -> (SpatialMatrix, SpatialMatrix) {
    if let Some(j) = forces.body_wrench_jacobians(i, g, v, u, t) {
        return j;
    }
    fd_wrench_jacobians(forces, i, g, v, u, t)
}

pub fn fd_wrench_jacobians(
    forces: &dyn ForceModel,
    i: usize,
    g: &SpatialTransform,
    v: &Twist,
    u: &DVector<f64>,
    t: f64,
) -> (SpatialMatrix, SpatialMatrix) {
    let mut d1 = SpatialMatrix::zeros();
    let mut d2 = SpatialMatrix::zeros();
    for k in 0..6 {
        let mut e = Twist::zeros();
        e[k] = 1.0;
        let h = 1e-7;
        let gp = exp_twist(&e, h) * *g;
        let gm = exp_twist(&e, -h) * *g;
        let col = (forces.body_wrench(i, &gp, v, u, t) - forces.body_wrench(i, &gm, v, u, t)) / (2.0 * h);
        d1.set_column(k, &col);
        let h = fd_step(v[k]);
        let (mut vp, mut vm) = (*v, *v);
        vp[k] += h;
        vm[k] -= h;
        let col = (forces.body_wrench(i, g, &vp, u, t) - forces.body_wrench(i, g, &vm, u, t)) / (2.0 * h);
        d2.set_column(k, &col);
    }
    (d1, d2)
}

/// `(∂Q/∂q, ∂Q/∂q̇)` from the model, or by central differences when absent.
pub fn joint_jacobians(forces: &dyn ForceModel, i: usize, q: f64, qdot: f64, u: &DVector<f64>, t: f64) -> (f64, f64) {
    if let Some(j) = forces.joint_force_jacobians(i, q, qdot, u, t) {
        return j;
    }
    fd_joint_jacobians(forces, i, q, qdot, u, t)
}

pub fn fd_joint_jacobians(forces: &dyn ForceModel, i: usize, q: f64, qdot: f64, u: &DVector<f64>, t: f64) -> (f64, f64) {
    let h = fd_step(q);
    let d1 = (forces.joint_force(i, q + h, qdot, u, t) - forces.joint_force(i, q - h, qdot, u, t)) / (2.0 * h);
    let h = fd_step(qdot);
    let d2 = (forces.joint_force(i, q, qdot + h, u, t) - forces.joint_force(i, q, qdot - h, u, t)) / (2.0 * h);
    (d1, d2)
}

/// Gravity wrench `m (p × g⃗; g⃗)` on a body with mass center `p`.
pub fn gravity_wrench(mass: f64, p: &Vector3<f64>, gravity: &Vector3<f64>) -> Wrench {
    stack(&(p.cross(gravity) * mass), &(gravity * mass))
}

/// `D₁` of the gravity wrench: `[m ĝ p̂, -m ĝ; 0, 0]`.
pub fn gravity_wrench_jacobian(mass: f64, p: &Vector3<f64>, gravity: &Vector3<f64>) -> SpatialMatrix {
    let gh = hat(gravity);
    let mut d = SpatialMatrix::zeros();
    d.fixed_view_mut::<3, 3>(0, 0).copy_from(&(gh * hat(p) * mass));
    d.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-gh * mass));
    d
}

static ZERO_FORCE: ZeroForce = ZeroForce;
static NO_CONTROLS: NoControls = NoControls;

/// Everything that defines one step's equations apart from the unknowns.
#[derive(Clone, Copy)]
pub struct DelProblem<'a> {
    pub model: &'a MechanismModel,
    pub scheme: &'a GalerkinScheme,
    pub forces: &'a dyn ForceModel,
    pub controls: &'a dyn ControlInput,
    pub dt: f64,
    /// Start time `t^{k,0}` of the step.
    pub t0: f64,
}

impl<'a> DelProblem<'a> {
    pub fn new(model: &'a MechanismModel, scheme: &'a GalerkinScheme, dt: f64) -> Self {
        Self { model, scheme, forces: &ZERO_FORCE, controls: &NO_CONTROLS, dt, t0: 0.0 }
    }

    pub fn with_forces(mut self, forces: &'a dyn ForceModel) -> Self {
        self.forces = forces;
        self
    }

    pub fn with_controls(mut self, controls: &'a dyn ControlInput) -> Self {
        self.controls = controls;
        self
    }

    pub fn at_time(mut self, t0: f64) -> Self {
        self.t0 = t0;
        self
    }

    pub fn n(&self) -> usize {
        self.model.num_bodies()
    }

    pub fn s(&self) -> usize {
        self.scheme.s()
    }

    /// `t^{k,α} = t^{k,0} + c^α Δt`.
    pub fn node_time(&self, alpha: usize) -> f64 {
        self.t0 + self.scheme.c(alpha) * self.dt
    }

    /// `w^α Δt`.
    pub fn wdt(&self, alpha: usize) -> f64 {
        self.scheme.w(alpha) * self.dt
    }

    pub fn control_samples(&self) -> Vec<DVector<f64>> {
        (0..self.scheme.num_nodes()).map(|a| self.controls.sample(self.node_time(a))).collect()
    }
}

/// `(q^{k,0}, p^k)` at time index `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteState {
    pub q: DVector<f64>,
    pub p: DVector<f64>,
    pub k: usize,
}

impl DiscreteState {
    pub fn new(q: DVector<f64>, p: DVector<f64>) -> Self {
        Self { q, p, k: 0 }
    }

    /// State with momentum `p = M(q) q̇`.
    pub fn from_velocity(model: &MechanismModel, q: DVector<f64>, qdot: &DVector<f64>) -> Self {
        let p = crate::linearize::mass_matrix(model, &q) * qdot;
        Self { q, p, k: 0 }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.p.iter()).all(|x| x.is_finite())
    }

    /// Velocity estimate `q̇ = M(q)⁻¹ p`.
    pub fn velocity(&self, model: &MechanismModel) -> DVector<f64> {
        let m = crate::linearize::mass_matrix(model, &self.q);
        m.lu().solve(&self.p).unwrap_or_else(|| DVector::from_element(self.q.len(), f64::NAN))
    }

    /// `K + V` at `(q, M⁻¹p)`.
    pub fn energy(&self, model: &MechanismModel) -> f64 {
        model.energy(&self.q, &self.velocity(model))
    }
}

/// Number of `(body, node)` visits made by each sweep of one evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TraversalCount {
    pub forward: usize,
    pub backward: usize,
}

/// Residuals and the articulated quantities of one evaluation.
///
/// Per-node 6-vectors are stored at index `i * (s + 1) + α`.
#[derive(Clone, Debug)]
pub struct DelOutput {
    /// `r^α_i`, an `s × n` matrix with row `α`.
    pub residuals: DMatrix<f64>,
    pub next_momentum: DVector<f64>,
    pub mu: Vec<Wrench>,
    pub gamma: Vec<Wrench>,
    pub omega: Vec<Wrench>,
    /// Discrete body impulses `F̄^α_i = w^α Δt F̄_i(t^α)`, gravity included.
    pub impulse: Vec<Wrench>,
    /// Discrete joint impulses `Q^α_i`.
    pub joint_impulse: Vec<f64>,
    pub cache: KinematicsCache,
    pub controls: Vec<DVector<f64>>,
    pub traversal: TraversalCount,
}

impl DelOutput {
    #[inline]
    pub fn idx(&self, i: usize, alpha: usize) -> usize {
        i * self.cache.num_nodes() + alpha
    }

    /// `‖r‖∞`.
    pub fn residual_norm(&self) -> f64 {
        self.residuals.amax()
    }
}

fn check_dims(problem: &DelProblem, qbar: &DMatrix<f64>, p: &DVector<f64>) -> Result<()> {
    let n = problem.n();
    if p.len() != n {
        return Err(Error::DimensionMismatch { what: "momentum", expected: n.to_string(), got: p.len().to_string() });
    }
    if !qbar.iter().all(|x| x.is_finite()) || !p.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFiniteState);
    }
    Ok(())
}

/// Evaluates the DEL residuals at control points `qbar` (`(s+1) × n`, row `α`)
/// and incoming momentum `p`.
pub fn evaluate_del(problem: &DelProblem, qbar: &DMatrix<f64>, p: &DVector<f64>) -> Result<DelOutput> {
    check_dims(problem, qbar, p)?;
    let model = problem.model;
    let scheme = problem.scheme;
    let cache = model.forward_pass(scheme, qbar, problem.dt)?;
    let n = model.num_bodies();
    let s = scheme.s();
    let m = s + 1;
    let controls = problem.control_samples();
    let gravity = model.gravity();

    let mut mu = vec![Wrench::zeros(); n * m];
    let mut gamma = vec![Wrench::zeros(); n * m];
    let mut omega = vec![Wrench::zeros(); n * m];
    let mut impulse = vec![Wrench::zeros(); n * m];
    let mut joint_impulse = vec![0.0; n * m];
    let mut traversal = TraversalCount { forward: n * m, backward: 0 };

    for i in (0..n).rev() {
        let body = model.body(i);
        for a in 0..m {
            traversal.backward += 1;
            let k = i * m + a;
            let nd = cache.node(i, a);
            let t = problem.node_time(a);
            let wdt = problem.wdt(a);
            let f = problem.forces.body_wrench(i, &nd.g, &nd.v, &controls[a], t);
            if !f.iter().all(|x| x.is_finite()) {
                return Err(Error::NonFiniteForce { what: "body wrench", body: i, node: a });
            }
            let qf = problem.forces.joint_force(i, nd.q, nd.qdot, &controls[a], t);
            if !qf.is_finite() {
                return Err(Error::NonFiniteForce { what: "joint force", body: i, node: a });
            }
            impulse[k] = (f + gravity_wrench(body.mass, &nd.g.translation, gravity)) * wdt;
            joint_impulse[k] = qf * wdt;
            mu[k] += nd.m * nd.v;
            gamma[k] += impulse[k];
            omega[k] = ad_dual_mul(&mu[k], &nd.v) * wdt + gamma[k];
            if let Some(par) = body.joint.parent {
                let (mk, gk) = (mu[k], gamma[k]);
                mu[par * m + a] += mk;
                gamma[par * m + a] += gk;
            }
        }
    }

    let mut residuals = DMatrix::zeros(s, n);
    let mut next_momentum = DVector::zeros(n);
    for i in 0..n {
        for a in 0..m {
            let k = i * m + a;
            let mut r = cache.node(i, a).s.dot(&omega[k]) + joint_impulse[k];
            for b in 0..m {
                r += scheme.a(a, b) * cache.node(i, b).s.dot(&mu[i * m + b]);
            }
            if a == 0 {
                r += p[i];
            }
            if a < s {
                residuals[(a, i)] = r;
            } else {
                next_momentum[i] = r;
            }
        }
    }

    Ok(DelOutput { residuals, next_momentum, mu, gamma, omega, impulse, joint_impulse, cache, controls, traversal })
}

/// `p^{k+1}` alone; it does not depend on `p^k`.
pub fn discrete_momentum(problem: &DelProblem, qbar: &DMatrix<f64>) -> Result<DVector<f64>> {
    Ok(evaluate_del(problem, qbar, &DVector::zeros(problem.n()))?.next_momentum)
}

/// Residuals of the constrained system.
///
/// `lambda` is `s × m` with row `α` multiplying `A(q^{k,α})`. Returns the
/// dynamics residuals (`s × n`) and the constraint values `h(q^{k,α}, q̇^{k,α})`
/// at `α = 1..s` (`s × m`, row `α - 1`).
pub fn constrained_residual(
    problem: &DelProblem,
    qbar: &DMatrix<f64>,
    p: &DVector<f64>,
    constraints: &dyn Constraints,
    lambda: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let s = problem.s();
    let mc = constraints.dim();
    if lambda.nrows() != s || lambda.ncols() != mc {
        return Err(Error::DimensionMismatch {
            what: "multipliers",
            expected: format!("{s}x{mc}"),
            got: format!("{}x{}", lambda.nrows(), lambda.ncols()),
        });
    }
    let out = evaluate_del(problem, qbar, p)?;
    let mut r = out.residuals;
    let qdot = problem.scheme.diff_matrix() * qbar / problem.dt;
    let mut h = DMatrix::zeros(s, mc);
    for a in 0..s {
        if mc > 0 {
            let q = qbar.row(a).transpose();
            let am = constraints.force_matrix(problem.model, &q);
            let add = am * lambda.row(a).transpose();
            for i in 0..problem.n() {
                r[(a, i)] += add[i];
            }
        }
        let q = qbar.row(a + 1).transpose();
        let qd = qdot.row(a + 1).transpose();
        h.set_row(a, &constraints.value(problem.model, &q, &qd).transpose());
    }
    Ok((r, h))
}

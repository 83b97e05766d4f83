//! Slow dense reference implementations: direct evaluation of the discrete
//! Lagrangian, finite-difference residuals and Jacobians, and dense Newton
//! solves with and without constraints.
//!
//! Kinematics here use body-frame velocities, independent of the spatial
//! recursions used by the fast path.

use nalgebra::{DMatrix, DVector, Vector3};

use crate::constraint::Constraints;
use crate::del::{evaluate_del, DelProblem, DiscreteState};
use crate::error::{Error, Result};
use crate::galerkin::GalerkinScheme;
use crate::linearize::EnergyHessians;
use crate::model::MechanismModel;
use crate::newton::{checked_inverse, SolverConfig, StepDiagnostics};
use crate::se3::{ad, angular, linear, Twist};

/// Central-difference step sizes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FdConfig {
    pub gradient_step: f64,
    pub hessian_step: f64,
}

impl Default for FdConfig {
    fn default() -> Self {
        Self { gradient_step: 1e-6, hessian_step: 1e-5 }
    }
}

/// `‖a - b‖∞ / max(‖a‖∞, ‖b‖∞)`, zero when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = a.iter().chain(b).map(|x| x.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

pub fn rel_err_mat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    rel_err(a.as_slice(), b.as_slice())
}

/// `𝓛(q, q̇)` from body-frame twists `Vᵢ = Ad_{lᵢ⁻¹} V_par + Sᵢ q̇ᵢ`.
pub fn lagrangian(model: &MechanismModel, q: &[f64], qdot: &[f64]) -> f64 {
    let n = model.num_bodies();
    let mut poses = Vec::with_capacity(n);
    let mut twists: Vec<Twist> = Vec::with_capacity(n);
    let mut l = 0.0;
    for i in 0..n {
        let body = model.body(i);
        let local = body.joint.transform(q[i]);
        let (g, v) = match body.joint.parent {
            Some(p) => (poses[p] * local, local.adjoint_inv() * twists[p] + body.joint.twist * qdot[i]),
            None => (local, body.joint.twist * qdot[i]),
        };
        let k = 0.5 * v.dot(&(body.spatial_inertia() * v));
        let pot: f64 = -body.mass * model.gravity().dot(&g.translation);
        l += k - pot;
        poses.push(g);
        twists.push(v);
    }
    l
}

/// `𝓛_d = Σ_α w^α Δt 𝓛(q^α, q̇^α)`, `qbar` being `(s+1) × n`.
pub fn discrete_lagrangian(model: &MechanismModel, scheme: &GalerkinScheme, qbar: &DMatrix<f64>, dt: f64) -> f64 {
    let qdot = scheme.diff_matrix() * qbar / dt;
    (0..scheme.num_nodes())
        .map(|a| {
            let q: Vec<f64> = qbar.row(a).iter().copied().collect();
            let qd: Vec<f64> = qdot.row(a).iter().copied().collect();
            scheme.w(a) * dt * lagrangian(model, &q, &qd)
        })
        .sum()
}

/// Non-gravitational generalized forces at node `alpha`, by explicit
/// ancestor pairs: `Qᵢ + Σ_{k ⊒ i} S̄ᵢᵀ F̄ₖ`.
fn generalized_forces(problem: &DelProblem, qbar: &DMatrix<f64>, alpha: usize, u: &DVector<f64>) -> Result<DVector<f64>> {
    let model = problem.model;
    let n = model.num_bodies();
    let cache = model.forward_pass(problem.scheme, qbar, problem.dt)?;
    let t = problem.node_time(alpha);
    let mut out = DVector::<f64>::zeros(n);
    for k in 0..n {
        let nd = cache.node(k, alpha);
        let f = problem.forces.body_wrench(k, &nd.g, &nd.v, u, t);
        out[k] += problem.forces.joint_force(k, nd.q, nd.qdot, u, t);
        if !f.iter().all(|x| x.is_finite()) || !out[k].is_finite() {
            return Err(Error::NonFiniteForce { what: "oracle force", body: k, node: alpha });
        }
        for i in std::iter::once(k).chain(model.ancestors(k)) {
            out[i] += cache.node(i, alpha).s.dot(&f);
        }
    }
    Ok(out)
}

/// Residuals (`s × n`) and `p^{k+1}` from a coordinate gradient of `𝓛_d`.
fn assemble_residuals(
    problem: &DelProblem,
    qbar: &DMatrix<f64>,
    p: &DVector<f64>,
    grad: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let s = problem.s();
    let n = problem.n();
    let controls = problem.control_samples();
    let mut r = DMatrix::zeros(s, n);
    let mut pn = DVector::zeros(n);
    for a in 0..=s {
        let f = generalized_forces(problem, qbar, a, &controls[a])? * problem.wdt(a);
        for i in 0..n {
            let v = grad[(a, i)] + f[i];
            if a < s {
                r[(a, i)] = v + if a == 0 { p[i] } else { 0.0 };
            } else {
                pn[i] = v;
            }
        }
    }
    Ok((r, pn))
}

/// DEL residuals by central differences of [`discrete_lagrangian`] plus
/// directly evaluated forces.
pub fn fd_del(problem: &DelProblem, qbar: &DMatrix<f64>, p: &DVector<f64>, cfg: &FdConfig) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let (model, scheme, dt) = (problem.model, problem.scheme, problem.dt);
    let h = cfg.gradient_step;
    let mut grad = DMatrix::zeros(qbar.nrows(), qbar.ncols());
    let mut work = qbar.clone();
    for a in 0..qbar.nrows() {
        for i in 0..qbar.ncols() {
            let x = qbar[(a, i)];
            work[(a, i)] = x + h;
            let lp = discrete_lagrangian(model, scheme, &work, dt);
            work[(a, i)] = x - h;
            let lm = discrete_lagrangian(model, scheme, &work, dt);
            work[(a, i)] = x;
            grad[(a, i)] = (lp - lm) / (2.0 * h);
        }
    }
    assemble_residuals(problem, qbar, p, &grad)
}

/// `(∂K/∂q, ∂K/∂q̇, ∂V/∂q)` by explicit sums over ancestor pairs, `O(n²)`.
pub fn energy_gradients(model: &MechanismModel, q: &DVector<f64>, qdot: &DVector<f64>) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
    let n = model.num_bodies();
    let c = model.kinematics(q, qdot);
    let g = model.gravity();
    let (mut kq, mut kv, mut vq) = (DVector::zeros(n), DVector::zeros(n), DVector::zeros(n));
    for k in 0..n {
        let nk = c.node(k, 0);
        let mom = nk.m * nk.v;
        let pk = nk.g.translation;
        let mass = model.body(k).mass;
        for i in std::iter::once(k).chain(model.ancestors(k)) {
            let ni = c.node(i, 0);
            kv[i] += ni.s.dot(&mom);
            // δv̄ₖ = ad_{S̄ᵢ}(v̄ₖ - v̄ᵢ) and δM̄ₖ = -(ad_{S̄ᵢ}ᵀM̄ₖ + M̄ₖ ad_{S̄ᵢ}).
            let dv = ad(&ni.s) * (nk.v - ni.v);
            let dm = -(ad(&ni.s).transpose() * nk.m + nk.m * ad(&ni.s));
            kq[i] += nk.v.dot(&(nk.m * dv)) + 0.5 * nk.v.dot(&(dm * nk.v));
            let dp: Vector3<f64> = angular(&ni.s).cross(&pk) + linear(&ni.s);
            vq[i] -= mass * g.dot(&dp);
        }
    }
    (kq, kv, vq)
}

/// Same residuals as [`fd_del`] but from analytic node gradients, `O(sn²)`.
pub fn dense_del(problem: &DelProblem, qbar: &DMatrix<f64>, p: &DVector<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let (model, scheme, dt) = (problem.model, problem.scheme, problem.dt);
    let m = scheme.num_nodes();
    let n = model.num_bodies();
    let qdot = scheme.diff_matrix() * qbar / dt;
    let mut grad = DMatrix::zeros(m, n);
    for ga in 0..m {
        let (kq, kv, vq) = energy_gradients(model, &qbar.row(ga).transpose(), &qdot.row(ga).transpose());
        let lq = kq - vq;
        let wdt = scheme.w(ga) * dt;
        for a in 0..m {
            let coef = scheme.b(ga, a) / dt;
            for i in 0..n {
                grad[(a, i)] += wdt * (coef * kv[i] + if a == ga { lq[i] } else { 0.0 });
            }
        }
    }
    assemble_residuals(problem, qbar, p, &grad)
}

/// Central-difference Jacobian of `f` with respect to rows `1..` of `qbar`.
///
/// Columns and output rows are both ordered node-major (`α n + i`).
pub fn fd_columns(
    qbar: &DMatrix<f64>,
    first_row: usize,
    h: f64,
    mut f: impl FnMut(&DMatrix<f64>) -> Result<DVector<f64>>,
) -> Result<DMatrix<f64>> {
    let n = qbar.ncols();
    let rows = qbar.nrows() - first_row;
    let mut work = qbar.clone();
    let mut jac: Option<DMatrix<f64>> = None;
    for a in 0..rows {
        for i in 0..n {
            let x = qbar[(first_row + a, i)];
            work[(first_row + a, i)] = x + h;
            let fp = f(&work)?;
            work[(first_row + a, i)] = x - h;
            let fm = f(&work)?;
            work[(first_row + a, i)] = x;
            let j = jac.get_or_insert_with(|| DMatrix::zeros(fp.len(), rows * n));
            j.set_column(a * n + i, &((fp - fm) / (2.0 * h)));
        }
    }
    Ok(jac.unwrap_or_else(|| DMatrix::zeros(0, 0)))
}

/// Residual matrix flattened node-major.
pub fn flatten(r: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(r.len(), r.transpose().iter().copied())
}

/// `sn × sn` Jacobian of [`evaluate_del`] residuals in `q^{k,1..s}`.
pub fn fd_jacobian(problem: &DelProblem, qbar: &DMatrix<f64>, p: &DVector<f64>, cfg: &FdConfig) -> Result<DMatrix<f64>> {
    fd_columns(qbar, 1, cfg.gradient_step, |x| Ok(flatten(&evaluate_del(problem, x, p)?.residuals)))
}

/// Jacobian of residuals and `p^{k+1}` in all control points, rows
/// `[r; p^{k+1}]`.
pub fn fd_linearization(problem: &DelProblem, qbar: &DMatrix<f64>, p: &DVector<f64>, cfg: &FdConfig) -> Result<DMatrix<f64>> {
    fd_columns(qbar, 0, cfg.gradient_step, |x| {
        let out = evaluate_del(problem, x, p)?;
        let mut v = flatten(&out.residuals).as_slice().to_vec();
        v.extend(out.next_momentum.iter());
        Ok(DVector::from_vec(v))
    })
}

fn dense_solve(j: DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let inv = checked_inverse(&j).map_err(|rcond| Error::SingularDense { rcond })?;
    Ok(inv * rhs)
}

/// `-J⁻¹ r` with `J` by differences of [`dense_del`] and a dense solve.
/// Rows are control points `1..=s`, as in [`crate::newton::newton_direction`].
pub fn dense_newton_direction(problem: &DelProblem, qbar: &DMatrix<f64>, p: &DVector<f64>, cfg: &FdConfig) -> Result<DMatrix<f64>> {
    let residual = |x: &DMatrix<f64>| -> Result<DVector<f64>> { Ok(flatten(&dense_del(problem, x, p)?.0)) };
    let j = fd_columns(qbar, 1, cfg.gradient_step, residual)?;
    let r = residual(qbar)?;
    let d = dense_solve(j, &(-r))?;
    Ok(DMatrix::from_row_slice(problem.s(), problem.n(), d.as_slice()))
}

/// Energy derivatives by central differences of [`energy_gradients`].
pub fn fd_energy_hessians(model: &MechanismModel, q: &DVector<f64>, qdot: &DVector<f64>, cfg: &FdConfig) -> EnergyHessians {
    let n = model.num_bodies();
    let h = cfg.hessian_step;
    let (kq, kv, vq) = energy_gradients(model, q, qdot);
    let mut out = EnergyHessians {
        d2k_dqdot2: DMatrix::zeros(n, n),
        d2k_dqdot_dq: DMatrix::zeros(n, n),
        d2k_dq_dqdot: DMatrix::zeros(n, n),
        d2k_dq2: DMatrix::zeros(n, n),
        d2v_dq2: DMatrix::zeros(n, n),
        dk_dq: kq,
        dk_dqdot: kv,
        dv_dq: vq,
        counts: Default::default(),
    };
    for j in 0..n {
        let (mut qp, mut qm) = (q.clone(), q.clone());
        qp[j] += h;
        qm[j] -= h;
        let (kqp, kvp, vqp) = energy_gradients(model, &qp, qdot);
        let (kqm, kvm, vqm) = energy_gradients(model, &qm, qdot);
        out.d2k_dq2.set_column(j, &((kqp - kqm) / (2.0 * h)));
        out.d2k_dqdot_dq.set_column(j, &((kvp - kvm) / (2.0 * h)));
        out.d2v_dq2.set_column(j, &((vqp - vqm) / (2.0 * h)));
        let (mut vp, mut vm) = (qdot.clone(), qdot.clone());
        vp[j] += h;
        vm[j] -= h;
        let (kqp, kvp, _) = energy_gradients(model, q, &vp);
        let (kqm, kvm, _) = energy_gradients(model, q, &vm);
        out.d2k_dq_dqdot.set_column(j, &((kqp - kqm) / (2.0 * h)));
        out.d2k_dqdot2.set_column(j, &((kvp - kvm) / (2.0 * h)));
    }
    out
}

/// Hessian of [`discrete_lagrangian`] over all `(s+1)n` control coordinates
/// by second-order central differences.
pub fn fd_discrete_lagrangian_hessian(
    model: &MechanismModel,
    scheme: &GalerkinScheme,
    qbar: &DMatrix<f64>,
    dt: f64,
    cfg: &FdConfig,
) -> DMatrix<f64> {
    let (m, n) = (qbar.nrows(), qbar.ncols());
    let h = cfg.hessian_step;
    let dim = m * n;
    let mut out = DMatrix::zeros(dim, dim);
    let mut work = qbar.clone();
    let mut eval = |pairs: &[(usize, f64)]| {
        for &(k, d) in pairs {
            work[(k / n, k % n)] += d;
        }
        let v = discrete_lagrangian(model, scheme, &work, dt);
        for &(k, d) in pairs {
            work[(k / n, k % n)] -= d;
        }
        v
    };
    for a in 0..dim {
        for b in a..dim {
            let v = if a == b {
                (eval(&[(a, h)]) - 2.0 * eval(&[]) + eval(&[(a, -h)])) / (h * h)
            } else {
                (eval(&[(a, h), (b, h)]) - eval(&[(a, h), (b, -h)]) - eval(&[(a, -h), (b, h)]) + eval(&[(a, -h), (b, -h)]))
                    / (4.0 * h * h)
            };
            out[(a, b)] = v;
            out[(b, a)] = v;
        }
    }
    out
}

/// Dense Newton iteration on [`dense_del`] for one unconstrained step.
pub fn dense_step(problem: &DelProblem, state: &DiscreteState, config: &SolverConfig) -> Result<(DiscreteState, StepDiagnostics)> {
    let c = dense_constrained_step(problem, state, &crate::constraint::NoConstraints, config)?;
    Ok((c.0, c.2))
}

/// Dense KKT Newton iteration for one constrained step with unknowns
/// `(q^{k,1..s}, λ)`, equations `r + [A λ; 0] = 0` and `h(q^{k,s}, q̇^{k,s}) = 0`.
///
/// Returns the next state, the multipliers and iteration diagnostics.
pub fn dense_constrained_step(
    problem: &DelProblem,
    state: &DiscreteState,
    constraints: &dyn Constraints,
    config: &SolverConfig,
) -> Result<(DiscreteState, DVector<f64>, StepDiagnostics)> {
    let model = problem.model;
    let problem = problem.at_time(problem.t0 + state.k as f64 * problem.dt);
    let (n, s, mc) = (model.num_bodies(), problem.s(), constraints.dim());
    let a_mat = constraints.force_matrix(model, &state.q);
    let dim = s * n + mc;
    let unpack = |x: &DVector<f64>| {
        let mut qbar = DMatrix::zeros(s + 1, n);
        qbar.set_row(0, &state.q.transpose());
        for a in 0..s {
            for i in 0..n {
                qbar[(a + 1, i)] = x[a * n + i];
            }
        }
        (qbar, x.rows(s * n, mc).into_owned())
    };
    let system = |x: &DVector<f64>| -> Result<(DVector<f64>, DVector<f64>)> {
        let (qbar, lambda) = unpack(x);
        let (r, pn) = dense_del(&problem, &qbar, &state.p)?;
        let mut f = flatten(&r).as_slice().to_vec();
        let force = &a_mat * &lambda;
        for i in 0..n {
            f[i] += force[i];
        }
        let qs = qbar.row(s).transpose();
        let qds = (problem.scheme.diff_matrix().row(s) * &qbar).transpose() / problem.dt;
        f.extend(constraints.value(model, &qs, &qds).iter());
        Ok((DVector::from_vec(f), pn))
    };

    let mut x = DVector::zeros(dim);
    for a in 0..s {
        x.rows_mut(a * n, n).copy_from(&state.q);
    }
    let h = 1e-7;
    let mut diag = StepDiagnostics::default();
    loop {
        let (f, pn) = system(&x)?;
        let res = f.amax();
        diag.iterations += 1;
        diag.residual = res;
        diag.history.push(res);
        if !res.is_finite() {
            return Err(Error::NoConvergence { iterations: diag.iterations, residual: res });
        }
        let dyn_res = f.rows(0, s * n).amax();
        let con_res = f.rows(s * n, mc).amax();
        if dyn_res < config.threshold(&state.p) && con_res < config.tol {
            let (qbar, lambda) = unpack(&x);
            let next = DiscreteState { q: qbar.row(s).transpose(), p: pn, k: state.k + 1 };
            return Ok((next, lambda, diag));
        }
        if diag.iterations > config.max_iter {
            return Err(Error::NoConvergence { iterations: diag.iterations - 1, residual: res });
        }
        let mut j = DMatrix::zeros(dim, dim);
        for c in 0..dim {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[c] += h;
            xm[c] -= h;
            j.set_column(c, &((system(&xp)?.0 - system(&xm)?.0) / (2.0 * h)));
        }
        x += dense_solve(j, &(-f))?;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::del::JointDamping;
    use crate::model::{Body, Joint};
    use crate::sample::{random_control_points, random_model, random_vector};
    use crate::se3::SpatialTransform;
    use nalgebra::Matrix3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn slider(mass: f64) -> MechanismModel {
        let body = Body {
            name: "slider".into(),
            mass,
            inertia: Matrix3::identity() * 0.1,
            joint: Joint::prismatic(None, Vector3::x(), SpatialTransform::identity()),
        };
        MechanismModel::new(vec![body], Vector3::zeros()).unwrap()
    }

    #[test]
    fn constant_points_without_gravity_give_zero() {
        // Rows of the differentiation matrix sum to zero only up to rounding.
        let model = MechanismModel::pendulum_chain(3, 1.0, 1.0).unwrap().with_gravity(Vector3::zeros()).unwrap();
        let scheme = GalerkinScheme::simpson();
        let qbar = DMatrix::from_fn(3, 3, |_, i| 0.3 * i as f64);
        assert!(discrete_lagrangian(&model, &scheme, &qbar, 0.1).abs() < 1e-24);
    }

    #[test]
    fn sliding_mass_half_m() {
        let model = slider(2.5);
        let qbar = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let l = discrete_lagrangian(&model, &GalerkinScheme::trapezoidal(), &qbar, 1.0);
        assert!((l - 1.25).abs() < 1e-14);
    }

    #[test]
    fn lagrangian_matches_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = random_model(&mut rng, 6);
        let q = random_vector(&mut rng, 6, 1.0);
        let qd = random_vector(&mut rng, 6, 1.0);
        let c = model.kinematics(&q, &qd);
        let want = model.lagrangian(&c, 0);
        assert!((lagrangian(&model, q.as_slice(), qd.as_slice()) - want).abs() < 1e-12 * want.abs().max(1.0));
    }

    #[test]
    fn dense_del_matches_fd_del() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = random_model(&mut rng, 4);
        let scheme = GalerkinScheme::simpson();
        let damping = JointDamping(0.5);
        let problem = DelProblem::new(&model, &scheme, 0.02).with_forces(&damping);
        let qbar = random_control_points(&mut rng, &scheme, 4, 0.02, 0.5);
        let p = random_vector(&mut rng, 4, 1.0);
        let (r1, p1) = dense_del(&problem, &qbar, &p).unwrap();
        let (r2, p2) = fd_del(&problem, &qbar, &p, &FdConfig::default()).unwrap();
        assert!(rel_err_mat(&r1, &r2) < 1e-6);
        assert!(rel_err(p1.as_slice(), p2.as_slice()) < 1e-6);
    }

    #[test]
    fn jacobian_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = random_model(&mut rng, 3);
        let scheme = GalerkinScheme::trapezoidal();
        let problem = DelProblem::new(&model, &scheme, 0.01);
        let qbar = random_control_points(&mut rng, &scheme, 3, 0.01, 0.5);
        let p = random_vector(&mut rng, 3, 1.0);
        let a = fd_jacobian(&problem, &qbar, &p, &FdConfig::default()).unwrap();
        let b = fd_jacobian(&problem, &qbar, &p, &FdConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn one_link_jacobian_by_hand() {
        // r = p + D₁𝓛_d with 𝓛_d = Δt/2 (I ((q1-q0)/Δt)² - V(q0) - V(q1)),
        // so ∂r/∂q1 = -I/Δt.
        let model = MechanismModel::pendulum_chain(1, 1.0, 1.0).unwrap();
        let scheme = GalerkinScheme::trapezoidal();
        let dt = 0.01;
        let problem = DelProblem::new(&model, &scheme, dt);
        let j = fd_jacobian(&problem, &DMatrix::from_element(2, 1, 1e-3), &DVector::zeros(1), &FdConfig::default()).unwrap();
        let inertia = 1.0 + 1.0 / 12.0;
        assert!((j[(0, 0)] + inertia / dt).abs() < 1e-6 * inertia / dt);
    }

    #[test]
    fn halving_the_step_quarters_the_discrepancy() {
        let model = MechanismModel::pendulum_chain(3, 1.0, 1.0).unwrap();
        let scheme = GalerkinScheme::simpson();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let problem = DelProblem::new(&model, &scheme, 0.02);
        let qbar = random_control_points(&mut rng, &scheme, 3, 0.02, 0.8);
        let p = random_vector(&mut rng, 3, 1.0);
        let exact = crate::del::evaluate_del(&problem, &qbar, &p).unwrap().residuals;
        let err = |h: f64| {
            let cfg = FdConfig { gradient_step: h, ..Default::default() };
            (fd_del(&problem, &qbar, &p, &cfg).unwrap().0 - &exact).amax()
        };
        let ratio = err(2e-2) / err(1e-2);
        assert!((3.5..=4.5).contains(&ratio), "{ratio}");
    }

    #[test]
    fn dense_step_root_is_a_root_of_fd_del() {
        let model = MechanismModel::pendulum_chain(2, 1.0, 1.0).unwrap();
        let scheme = GalerkinScheme::trapezoidal();
        let problem = DelProblem::new(&model, &scheme, 0.01);
        let state = DiscreteState::new(DVector::from_vec(vec![0.4, -0.3]), DVector::from_vec(vec![0.2, 0.1]));
        let config = SolverConfig { tol: 1e-10, ..Default::default() };
        let (next, _) = dense_step(&problem, &state, &config).unwrap();
        let qbar = DMatrix::from_rows(&[state.q.transpose(), next.q.transpose()]);
        let (r, _) = fd_del(&problem, &qbar, &state.p, &FdConfig::default()).unwrap();
        assert!(r.amax() < 1e-6, "{}", r.amax());
    }
}

//! Exact Newton directions for the DEL residuals in `O(s³n)`, the implicit
//! step built on them and the constrained second-order step.
//!
//! The backward pass expresses, body by body, the joint updates `δq_i^γ` as
//! affine functions of the parent's spatial velocity variation `δ̄v̄^ρ` and
//! configuration variation `η̄^ν`:
//!
//! ```text
//! δq_i^γ = Σ_ρ X_i^{γρ} δ̄v̄_par^ρ + Σ_ν Y_i^{γν} η̄_par^ν + y_i^γ
//! ```
//!
//! Only `l`, `ζ`, `ξ̄` and `y` depend on the right-hand side, so a factored
//! backward pass can be reused for several right-hand sides.

use nalgebra::{DMatrix, DVector, RowVector6};

use crate::constraint::Constraints;
use crate::del::{
    evaluate_del, fd_joint_jacobians, fd_wrench_jacobians, gravity_wrench_jacobian, joint_jacobians, wrench_jacobians,
    DelOutput, DelProblem, DiscreteState, ForceModel,
};
use crate::error::{Error, Result};
use crate::model::MechanismModel;
use crate::se3::{ad, ad_dual, SpatialMatrix, Twist};

type Row6 = RowVector6<f64>;

/// Reciprocal condition number below which a block counts as singular.
pub const RCOND_MIN: f64 = 1e-14;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverConfig {
    /// Convergence threshold on `‖r‖∞`, relative to `max(1, ‖pᵏ‖∞)`.
    pub tol: f64,
    pub max_iter: usize,
    /// Step shrink factor of the line search. `1.0` gives pure Newton.
    pub backtrack: f64,
    pub min_step: f64,
    /// A Newton correction with `‖δq̄‖∞` below `step_tol · max(1, ‖q̄‖∞)` is
    /// applied and ends the solve. Small steps hit a residual floor near
    /// `ε ‖q̄‖ ‖M‖/Δt` before `tol` does.
    pub step_tol: f64,
}

impl SolverConfig {
    /// Absolute residual threshold for a step starting from momentum `p`.
    ///
    /// Residual terms are momenta of size up to `‖M‖ ‖Δq‖/Δt`, so a fixed
    /// absolute threshold falls below round-off on long chains.
    pub fn threshold(&self, p: &DVector<f64>) -> f64 {
        self.tol * p.amax().max(1.0)
    }
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 50, backtrack: 0.5, min_step: 2f64.powi(-20), step_tol: 1e-14 }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepDiagnostics {
    /// Residual evaluations at accepted iterates, the initial guess included.
    pub iterations: usize,
    pub residual: f64,
    /// `‖r‖∞` at every accepted iterate.
    pub history: Vec<f64>,
}

fn norm1(m: &DMatrix<f64>) -> f64 {
    m.column_iter().map(|c| c.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Inverse with a reciprocal condition estimate `1/(‖A‖₁‖A⁻¹‖₁)`.
pub(crate) fn checked_inverse(m: &DMatrix<f64>) -> std::result::Result<DMatrix<f64>, f64> {
    let lu = m.clone().lu();
    match lu.try_inverse() {
        Some(inv) => {
            let rcond = 1.0 / (norm1(m) * norm1(&inv));
            if rcond.is_finite() && rcond >= RCOND_MIN {
                Ok(inv)
            } else {
                Err(if rcond.is_finite() { rcond } else { 0.0 })
            }
        }
        None => Err(0.0),
    }
}

/// Backward-pass quantities that do not depend on the residual.
#[derive(Clone, Debug)]
struct BodyFactors {
    parent: Option<usize>,
    /// `S̄^α`, `Ṡ̄^α` for `α = 0..=s`.
    s: Vec<Twist>,
    sdot: Vec<Twist>,
    /// `ad^D_{μ̄^α} S̄^α` and `ad^D_{Γ̄^α} S̄^α`.
    mu_s: Vec<Twist>,
    gamma_s: Vec<Twist>,
    /// `H^{αγ}` at `α * s + γ - 1`, `α = 0..=s`.
    h: Vec<Twist>,
    /// `Φ^{αγ}` at `α * s + γ - 1`, `α < s`.
    phi: Vec<Twist>,
    /// `X^{γρ}` at `(γ - 1)(s + 1) + ρ`.
    x: Vec<Row6>,
    /// `Y^{γν}` at `(γ - 1) s + ν - 1`.
    y: Vec<Row6>,
    /// `Λ⁻¹`, row `γ - 1`, column `ϱ`.
    lambda_inv: DMatrix<f64>,
    /// `D^{αρ}`, `G^{αν}`, `Π^{αρ}`, `Ψ^{αν}` with the subtree folded in,
    /// kept for the variation checks.
    #[cfg_attr(not(test), allow(dead_code))]
    d: Vec<SpatialMatrix>,
    #[cfg_attr(not(test), allow(dead_code))]
    g: Vec<SpatialMatrix>,
    #[cfg_attr(not(test), allow(dead_code))]
    pi: Vec<SpatialMatrix>,
    #[cfg_attr(not(test), allow(dead_code))]
    psi: Vec<SpatialMatrix>,
}

/// Everything one solve produces, per body.
struct Sweep {
    dq: DMatrix<f64>,
    /// `l^α` and `ζ^α` accumulated from the children, `n × (s + 1)` and `n × s`.
    #[cfg_attr(not(test), allow(dead_code))]
    l: Vec<Twist>,
    #[cfg_attr(not(test), allow(dead_code))]
    zeta: Vec<Twist>,
    /// `η̄^ν` for `ν = 1..s` and `δ̄v̄^ρ` for `ρ = 0..s`.
    #[cfg_attr(not(test), allow(dead_code))]
    eta: Vec<Twist>,
    #[cfg_attr(not(test), allow(dead_code))]
    dv: Vec<Twist>,
}

/// Factored backward pass of one Newton system.
#[derive(Clone, Debug)]
pub struct NewtonFactors {
    s: usize,
    dt: f64,
    b: DMatrix<f64>,
    a: DMatrix<f64>,
    wdt: Vec<f64>,
    bodies: Vec<BodyFactors>,
}

/// Kronecker flag `σ̄^{α0}`.
#[inline]
fn not_first(alpha: usize) -> f64 {
    if alpha == 0 {
        0.0
    } else {
        1.0
    }
}

impl NewtonFactors {
    /// Runs the residual-independent part of the backward pass at the point
    /// where `out` was evaluated.
    pub fn new(problem: &DelProblem, out: &DelOutput) -> Result<Self> {
        let model = problem.model;
        let scheme = problem.scheme;
        let n = model.num_bodies();
        let s = scheme.s();
        let m = s + 1;
        let dt = problem.dt;
        let b = scheme.diff_matrix().clone();
        let a = scheme.a_matrix().clone();
        let wdt: Vec<f64> = (0..m).map(|al| problem.wdt(al)).collect();
        let zero6 = SpatialMatrix::zeros();

        // Child contributions accumulated into each parent.
        let mut d_acc = vec![zero6; n * m * m];
        let mut g_acc = vec![zero6; n * m * s];
        let mut pi_acc = vec![zero6; n * s * m];
        let mut psi_acc = vec![zero6; n * s * s];
        let mut bodies: Vec<Option<BodyFactors>> = vec![None; n];

        for i in (0..n).rev() {
            let body = model.body(i);
            let nodes: Vec<_> = (0..m).map(|al| *out.cache.node(i, al)).collect();
            let sv: Vec<Twist> = nodes.iter().map(|nd| nd.s).collect();
            let sd: Vec<Twist> = nodes.iter().map(|nd| nd.sdot).collect();
            let mu: Vec<Twist> = (0..m).map(|al| out.mu[out.idx(i, al)]).collect();
            let gam: Vec<Twist> = (0..m).map(|al| out.gamma[out.idx(i, al)]).collect();
            let mu_s: Vec<Twist> = (0..m).map(|al| ad_dual(&mu[al]) * sv[al]).collect();
            let gamma_s: Vec<Twist> = (0..m).map(|al| ad_dual(&gam[al]) * sv[al]).collect();

            // Discrete force Jacobians at nodes α < s.
            let mut d1f = Vec::with_capacity(s);
            let mut d2f = Vec::with_capacity(s);
            let mut d1q = Vec::with_capacity(s);
            let mut d2q = Vec::with_capacity(s);
            for al in 0..s {
                let nd = &nodes[al];
                let t = problem.node_time(al);
                let u = &out.controls[al];
                let (f1, f2) = wrench_jacobians(problem.forces, i, &nd.g, &nd.v, u, t);
                let f1 = f1 + gravity_wrench_jacobian(body.mass, &nd.g.translation, model.gravity());
                d1f.push(f1 * wdt[al]);
                d2f.push(f2 * wdt[al]);
                let (q1, q2) = joint_jacobians(problem.forces, i, nd.q, nd.qdot, u, t);
                d1q.push(q1 * wdt[al]);
                d2q.push(q2 * wdt[al]);
            }

            // D^{αρ}, G^{αν}, Π^{αρ}, Ψ^{αν}.
            let mut d: Vec<SpatialMatrix> = d_acc[i * m * m..(i + 1) * m * m].to_vec();
            for al in 0..m {
                d[al * m + al] += nodes[al].m;
            }
            let g: Vec<SpatialMatrix> = g_acc[i * m * s..(i + 1) * m * s].to_vec();
            let mut pi: Vec<SpatialMatrix> = pi_acc[i * s * m..(i + 1) * s * m].to_vec();
            let mut psi: Vec<SpatialMatrix> = psi_acc[i * s * s..(i + 1) * s * s].to_vec();
            for al in 0..s {
                pi[al * m + al] += d2f[al];
                if al >= 1 {
                    let fbar = out.impulse[out.idx(i, al)];
                    psi[al * s + al - 1] += d1f[al] + ad_dual(&fbar) - d2f[al] * ad(&nodes[al].v);
                }
            }

            // H^{αγ} and Φ^{αγ}.
            let mut h = vec![Twist::zeros(); m * s];
            for al in 0..m {
                for ga in 1..=s {
                    let mut acc = d[al * m + ga] * sd[ga] + g[al * s + ga - 1] * sv[ga];
                    for rho in 0..m {
                        acc += d[al * m + rho] * sv[rho] * (b[(rho, ga)] / dt);
                    }
                    h[al * s + ga - 1] = acc;
                }
            }
            let mut phi = vec![Twist::zeros(); s * s];
            for al in 0..s {
                for ga in 1..=s {
                    let mut acc = pi[al * m + ga] * sd[ga] + psi[al * s + ga - 1] * sv[ga];
                    for rho in 0..m {
                        acc += pi[al * m + rho] * sv[rho] * (b[(rho, ga)] / dt);
                    }
                    phi[al * s + ga - 1] = acc;
                }
            }

            // Θ̄^{αρ}, Ξ̄^{αν} and Λ.
            let st: Vec<Row6> = sv.iter().map(|x| x.transpose()).collect();
            let sdt: Vec<Row6> = sd.iter().map(|x| x.transpose()).collect();
            let mut theta = vec![Row6::zeros(); s * m];
            let mut xi = vec![Row6::zeros(); s * s];
            let mut lam = DMatrix::zeros(s, s);
            for al in 0..s {
                let s_admu = st[al] * ad_dual(&mu[al]);
                for rho in 0..m {
                    let mut row = sdt[al] * d[al * m + rho] * wdt[al] + st[al] * pi[al * m + rho];
                    if rho == al {
                        row += s_admu * wdt[al];
                    }
                    for be in 0..m {
                        row += st[be] * d[be * m + rho] * a[(al, be)];
                    }
                    theta[al * m + rho] = row;
                }
                for nu in 1..=s {
                    let mut row = sdt[al] * g[al * s + nu - 1] * wdt[al] + st[al] * psi[al * s + nu - 1];
                    for be in 0..m {
                        row += st[be] * g[be * s + nu - 1] * a[(al, be)];
                    }
                    xi[al * s + nu - 1] = row;
                }
                for ga in 1..=s {
                    let mut v = wdt[al] * sd[al].dot(&h[al * s + ga - 1]) + sv[al].dot(&phi[al * s + ga - 1]);
                    for be in 0..m {
                        v += a[(al, be)] * sv[be].dot(&h[be * s + ga - 1]);
                    }
                    if al == ga {
                        v += d1q[al] + wdt[al] * (s_admu * sd[al])[0];
                    }
                    v += b[(al, ga)] / dt * d2q[al];
                    lam[(al, ga - 1)] = v;
                }
            }

            let lambda_inv = checked_inverse(&lam).map_err(|rcond| {
                let lu = lam.clone().lu();
                let node = (0..s)
                    .min_by(|&p, &q| lu.u()[(p, p)].abs().total_cmp(&lu.u()[(q, q)].abs()))
                    .map_or(1, |k| k + 1);
                Error::SingularJacobian { body: i, node, rcond }
            })?;
            // Λ⁻¹ has rows γ - 1 and columns ϱ.
            let mut x = vec![Row6::zeros(); s * m];
            let mut y = vec![Row6::zeros(); s * s];
            for ga in 0..s {
                for rho in 0..m {
                    let mut acc = Row6::zeros();
                    for vr in 0..s {
                        acc -= theta[vr * m + rho] * lambda_inv[(ga, vr)];
                    }
                    x[ga * m + rho] = acc;
                }
                for nu in 0..s {
                    let mut acc = Row6::zeros();
                    for vr in 0..s {
                        acc -= xi[vr * s + nu] * lambda_inv[(ga, vr)];
                    }
                    y[ga * s + nu] = acc;
                }
            }

            if let Some(p) = body.joint.parent {
                for al in 0..m {
                    let flag = not_first(al);
                    for rho in 0..m {
                        let mut acc = d[al * m + rho];
                        for ga in 1..=s {
                            acc += h[al * s + ga - 1] * x[(ga - 1) * m + rho];
                        }
                        if al >= 1 {
                            acc -= mu_s[al] * x[(al - 1) * m + rho] * flag;
                        }
                        d_acc[(p * m + al) * m + rho] += acc;
                    }
                    for nu in 1..=s {
                        let mut acc = g[al * s + nu - 1];
                        for ga in 1..=s {
                            acc += h[al * s + ga - 1] * y[(ga - 1) * s + nu - 1];
                        }
                        if al >= 1 {
                            acc -= mu_s[al] * y[(al - 1) * s + nu - 1] * flag;
                        }
                        g_acc[(p * m + al) * s + nu - 1] += acc;
                    }
                }
                for al in 0..s {
                    let flag = not_first(al);
                    for rho in 0..m {
                        let mut acc = pi[al * m + rho];
                        for ga in 1..=s {
                            acc += phi[al * s + ga - 1] * x[(ga - 1) * m + rho];
                        }
                        if al >= 1 {
                            acc -= gamma_s[al] * x[(al - 1) * m + rho] * flag;
                        }
                        pi_acc[(p * s + al) * m + rho] += acc;
                    }
                    for nu in 1..=s {
                        let mut acc = psi[al * s + nu - 1];
                        for ga in 1..=s {
                            acc += phi[al * s + ga - 1] * y[(ga - 1) * s + nu - 1];
                        }
                        if al >= 1 {
                            acc -= gamma_s[al] * y[(al - 1) * s + nu - 1] * flag;
                        }
                        psi_acc[(p * s + al) * s + nu - 1] += acc;
                    }
                }
            }

            bodies[i] = Some(BodyFactors {
                parent: body.joint.parent,
                s: sv,
                sdot: sd,
                mu_s,
                gamma_s,
                h,
                phi,
                x,
                y,
                lambda_inv,
                d,
                g,
                pi,
                psi,
            });
        }

        Ok(Self { s, dt, b, a, wdt, bodies: bodies.into_iter().map(|b| b.expect("filled")).collect() })
    }

    /// Returns `-J⁻¹ rhs` for an `s × n` right-hand side laid out like the
    /// residuals.
    pub fn direction(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        self.sweep(rhs).dq
    }

    fn sweep(&self, rhs: &DMatrix<f64>) -> Sweep {
        let s = self.s;
        let m = s + 1;
        let n = self.bodies.len();
        assert_eq!((rhs.nrows(), rhs.ncols()), (s, n), "right-hand side shape");

        let mut l_acc = vec![Twist::zeros(); n * m];
        let mut z_acc = vec![Twist::zeros(); n * s];
        let mut ys = vec![0.0; n * s];
        for i in (0..n).rev() {
            let bf = &self.bodies[i];
            let l = &l_acc[i * m..(i + 1) * m];
            let z = &z_acc[i * s..(i + 1) * s];
            let mut rhs_i = DVector::zeros(s);
            for vr in 0..s {
                let mut xb = self.wdt[vr] * bf.sdot[vr].dot(&l[vr]) + bf.s[vr].dot(&z[vr]);
                for be in 0..m {
                    xb += self.a[(vr, be)] * bf.s[be].dot(&l[be]);
                }
                rhs_i[vr] = rhs[(vr, i)] + xb;
            }
            let y = -(&bf.lambda_inv * rhs_i);
            ys[i * s..(i + 1) * s].copy_from_slice(y.as_slice());
            if let Some(p) = bf.parent {
                for al in 0..m {
                    let mut acc = l_acc[i * m + al];
                    for ga in 1..=s {
                        acc += bf.h[al * s + ga - 1] * y[ga - 1];
                    }
                    if al >= 1 {
                        acc -= bf.mu_s[al] * y[al - 1];
                    }
                    l_acc[p * m + al] += acc;
                }
                for al in 0..s {
                    let mut acc = z_acc[i * s + al];
                    for ga in 1..=s {
                        acc += bf.phi[al * s + ga - 1] * y[ga - 1];
                    }
                    if al >= 1 {
                        acc -= bf.gamma_s[al] * y[al - 1];
                    }
                    z_acc[p * s + al] += acc;
                }
            }
        }

        // Forward pass: δq, η̄ (ν = 1..s) and δ̄v̄ (ρ = 0..s).
        let mut dq = DMatrix::zeros(s, n);
        let mut eta = vec![Twist::zeros(); n * s];
        let mut dv = vec![Twist::zeros(); n * m];
        for i in 0..n {
            let bf = &self.bodies[i];
            let (eta_par, dv_par): (Vec<Twist>, Vec<Twist>) = match bf.parent {
                Some(p) => (eta[p * s..(p + 1) * s].to_vec(), dv[p * m..(p + 1) * m].to_vec()),
                None => (vec![Twist::zeros(); s], vec![Twist::zeros(); m]),
            };
            let mut local = vec![0.0; m];
            for ga in 1..=s {
                let mut v = ys[i * s + ga - 1];
                for rho in 0..m {
                    v += (bf.x[(ga - 1) * m + rho] * dv_par[rho])[0];
                }
                for nu in 0..s {
                    v += (bf.y[(ga - 1) * s + nu] * eta_par[nu])[0];
                }
                local[ga] = v;
                dq[(ga - 1, i)] = v;
            }
            for nu in 1..=s {
                eta[i * s + nu - 1] = eta_par[nu - 1] + bf.s[nu] * local[nu];
            }
            for rho in 0..m {
                let dqd: f64 = (1..=s).map(|ga| self.b[(rho, ga)] * local[ga]).sum::<f64>() / self.dt;
                dv[i * m + rho] = dv_par[rho] + bf.sdot[rho] * local[rho] + bf.s[rho] * dqd;
            }
        }
        Sweep { dq, l: l_acc, zeta: z_acc, eta, dv }
    }

    /// `J⁻¹ B` for an `n × c` matrix `B` whose columns are residual vectors
    /// stacked node-major (entry `α n + i`).
    pub fn solve_columns(&self, cols: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.bodies.len();
        let s = self.s;
        let mut out = DMatrix::zeros(s * n, cols.ncols());
        for c in 0..cols.ncols() {
            let rhs = DMatrix::from_fn(s, n, |al, i| cols[(al * n + i, c)]);
            let d = self.direction(&rhs);
            for al in 0..s {
                for i in 0..n {
                    out[(al * n + i, c)] = -d[(al, i)];
                }
            }
        }
        out
    }
}

/// `δq̄ = -J⁻¹ r` at the point where `out` was evaluated. Row `γ - 1` holds
/// the update of control point `γ`.
pub fn newton_direction(problem: &DelProblem, out: &DelOutput) -> Result<DMatrix<f64>> {
    Ok(NewtonFactors::new(problem, out)?.direction(&out.residuals))
}

/// Control points equal to `q` at every node.
pub fn constant_guess(s: usize, q: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(s + 1, q.len(), |_, i| q[i])
}

/// Linear extrapolation `q^{k,α} = q^{k,0} + c^α (q^{k,0} - q^{k-1,0})`.
pub fn extrapolated_guess(problem: &DelProblem, q: &DVector<f64>, q_prev: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(problem.s() + 1, q.len(), |al, i| q[i] + problem.scheme.c(al) * (q[i] - q_prev[i]))
}

fn apply_update(qbar: &DMatrix<f64>, dq: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    let mut next = qbar.clone();
    for ga in 0..dq.nrows() {
        for i in 0..dq.ncols() {
            next[(ga + 1, i)] += t * dq[(ga, i)];
        }
    }
    next
}

/// Solves the DEL residuals for `q^{k,1..s}` starting from `guess` (or
/// constant control points) and returns the next state.
///
/// Node times are `problem.t0 + (k + c^α) Δt`.
pub fn step(
    problem: &DelProblem,
    state: &DiscreteState,
    guess: Option<&DMatrix<f64>>,
    config: &SolverConfig,
) -> Result<(DiscreteState, StepDiagnostics)> {
    let (next, diag, _) = solve_step(problem, state, guess, config)?;
    Ok((next, diag))
}

/// Like [`step`] but also returns the converged control points.
pub fn solve_step(
    problem: &DelProblem,
    state: &DiscreteState,
    guess: Option<&DMatrix<f64>>,
    config: &SolverConfig,
) -> Result<(DiscreteState, StepDiagnostics, DMatrix<f64>)> {
    if !state.is_finite() {
        return Err(Error::NonFiniteState);
    }
    let s = problem.s();
    let problem = problem.at_time(problem.t0 + state.k as f64 * problem.dt);
    let mut qbar = guess.cloned().unwrap_or_else(|| constant_guess(s, &state.q));
    qbar.set_row(0, &state.q.transpose());
    let mut out = evaluate_del(&problem, &qbar, &state.p)?;
    let mut res = out.residual_norm();
    let mut diag = StepDiagnostics { iterations: 1, residual: res, history: vec![res] };
    let tol = config.threshold(&state.p);
    loop {
        if !res.is_finite() {
            return Err(Error::NoConvergence { iterations: diag.iterations, residual: res });
        }
        if res < tol {
            let next = DiscreteState { q: qbar.row(s).transpose(), p: out.next_momentum.clone(), k: state.k + 1 };
            return Ok((next, diag, qbar));
        }
        if diag.iterations > config.max_iter {
            return Err(Error::NoConvergence { iterations: diag.iterations - 1, residual: res });
        }
        let dq = newton_direction(&problem, &out)?;
        if dq.amax() <= config.step_tol * qbar.amax().max(1.0) {
            qbar = apply_update(&qbar, &dq, 1.0);
            out = evaluate_del(&problem, &qbar, &state.p)?;
            diag.iterations += 1;
            diag.residual = out.residual_norm();
            diag.history.push(diag.residual);
            let next = DiscreteState { q: qbar.row(s).transpose(), p: out.next_momentum.clone(), k: state.k + 1 };
            return Ok((next, diag, qbar));
        }
        let (next_qbar, next_out) = line_search(config, out.residuals.norm(), |t| {
            let cand = apply_update(&qbar, &dq, t);
            let o = evaluate_del(&problem, &cand, &state.p)?;
            let r = o.residuals.norm();
            Ok((cand, o, r))
        })?;
        qbar = next_qbar;
        out = next_out;
        res = out.residual_norm();
        diag.iterations += 1;
        diag.residual = res;
        diag.history.push(res);
    }
}

/// Backtracking with a sufficient decrease test on a merit value.
///
/// Callers pass `‖r‖₂`, for which the Newton direction is always a descent
/// direction.
fn line_search<T, O>(
    config: &SolverConfig,
    res0: f64,
    mut trial: impl FnMut(f64) -> Result<(T, O, f64)>,
) -> Result<(T, O)> {
    let mut t = 1.0;
    loop {
        let attempt = trial(t);
        let last = config.backtrack >= 1.0 || t * config.backtrack < config.min_step;
        match attempt {
            Ok((cand, o, r)) if last || r <= (1.0 - 1e-4 * t) * res0 => return Ok((cand, o)),
            Err(e) if last => return Err(e),
            _ => t *= config.backtrack,
        }
    }
}

/// Stateful stepper with extrapolated warm starts.
pub struct Integrator<'a> {
    pub problem: DelProblem<'a>,
    pub config: SolverConfig,
    state: DiscreteState,
    prev_q: Option<DVector<f64>>,
}

impl<'a> Integrator<'a> {
    pub fn new(problem: DelProblem<'a>, state: DiscreteState, config: SolverConfig) -> Self {
        Self { problem, config, state, prev_q: None }
    }

    pub fn state(&self) -> &DiscreteState {
        &self.state
    }

    pub fn step(&mut self) -> Result<StepDiagnostics> {
        let guess = self.prev_q.as_ref().map(|qp| extrapolated_guess(&self.problem, &self.state.q, qp));
        let (next, diag) = step(&self.problem, &self.state, guess.as_ref(), &self.config)?;
        self.prev_q = Some(std::mem::replace(&mut self.state, next).q);
        Ok(diag)
    }
}

/// Result of a constrained step.
#[derive(Clone, Debug)]
pub struct ConstrainedStep {
    pub state: DiscreteState,
    /// Multipliers `λ^{k,0}`.
    pub lambda: DVector<f64>,
    pub diagnostics: StepDiagnostics,
    /// `‖h(q^{k+1}, q̇^{k+1})‖∞` at the accepted point.
    pub violation: f64,
}

/// One step of the trapezoidal scheme with constraints `h(q^{k,1}, q̇^{k,1}) = 0`
/// and forces `A(q^{k,0}) λ` in the first residual row.
///
/// Each iteration reuses one factored backward pass for `δq_r = -J⁻¹ r_q` and
/// the `m` columns of `J⁻¹ A`, then solves the `m × m` system
/// `(Dh J⁻¹ A) δλ = r_c + Dh δq_r` and sets `δq = δq_r - J⁻¹ A δλ`.
pub fn constrained_step_second_order(
    problem: &DelProblem,
    state: &DiscreteState,
    constraints: &dyn Constraints,
    config: &SolverConfig,
) -> Result<ConstrainedStep> {
    let s = problem.s();
    if s != 1 {
        return Err(Error::ConstrainedOrder(s));
    }
    if !state.is_finite() {
        return Err(Error::NonFiniteState);
    }
    let model = problem.model;
    let n = model.num_bodies();
    let mc = constraints.dim();
    let problem = problem.at_time(problem.t0 + state.k as f64 * problem.dt);
    let dt = problem.dt;
    let bss = problem.scheme.b(s, s);
    let a_mat = constraints.force_matrix(model, &state.q);

    let eval = |qbar: &DMatrix<f64>, lambda: &DVector<f64>| -> Result<(DelOutput, DMatrix<f64>, DVector<f64>, f64)> {
        let out = evaluate_del(&problem, qbar, &state.p)?;
        let mut rq = out.residuals.clone();
        let add = &a_mat * lambda;
        for i in 0..n {
            rq[(0, i)] += add[i];
        }
        let q1 = qbar.row(1).transpose();
        let qd1 = (&q1 - &state.q) * (problem.scheme.b(1, 1) / dt);
        let rc = constraints.value(model, &q1, &qd1);
        let norm = rq.amax().max(rc.amax());
        Ok((out, rq, rc, norm))
    };

    let mut qbar = constant_guess(s, &state.q);
    let mut lambda = DVector::zeros(mc);
    let (mut out, mut rq, mut rc, mut res) = eval(&qbar, &lambda)?;
    let mut diag = StepDiagnostics { iterations: 1, residual: res, history: vec![res] };
    let tol = config.threshold(&state.p);
    loop {
        if !res.is_finite() {
            return Err(Error::NoConvergence { iterations: diag.iterations, residual: res });
        }
        if rq.amax() < tol && rc.amax() < config.tol {
            let q1 = qbar.row(1).transpose();
            let next = DiscreteState { q: q1, p: out.next_momentum.clone(), k: state.k + 1 };
            return Ok(ConstrainedStep { state: next, lambda, diagnostics: diag, violation: rc.amax() });
        }
        if diag.iterations > config.max_iter {
            return Err(Error::NoConvergence { iterations: diag.iterations - 1, residual: res });
        }
        let factors = NewtonFactors::new(&problem, &out)?;
        let dq_r = factors.direction(&rq);
        let (dq, dl) = if mc == 0 {
            (dq_r, DVector::zeros(0))
        } else {
            let q1 = qbar.row(1).transpose();
            let qd1 = (&q1 - &state.q) * (problem.scheme.b(1, 1) / dt);
            let dh = constraints.jacobian_q(model, &q1, &qd1) + constraints.jacobian_qdot(model, &q1, &qd1) * (bss / dt);
            let jinv_a = factors.solve_columns(&a_mat);
            let schur = &dh * &jinv_a;
            let schur_inv = checked_inverse(&schur).map_err(|rcond| Error::RankDeficientConstraints { rcond })?;
            let dq_r_vec = DVector::from_iterator(n, dq_r.row(0).iter().copied());
            let dl = schur_inv * (&rc + &dh * &dq_r_vec);
            let dq_vec = dq_r_vec - &jinv_a * &dl;
            (DMatrix::from_row_slice(1, n, dq_vec.as_slice()), dl)
        };
        let merit = (rq.norm_squared() + rc.norm_squared()).sqrt();
        let (next, (next_lambda, o, r_q, r_c)) = line_search(config, merit, |t| {
            let cand = apply_update(&qbar, &dq, t);
            let lam = &lambda + &dl * t;
            let (o, r_q, r_c, _) = eval(&cand, &lam)?;
            let r = (r_q.norm_squared() + r_c.norm_squared()).sqrt();
            Ok((cand, (lam, o, r_q, r_c), r))
        })?;
        qbar = next;
        lambda = next_lambda;
        out = o;
        rq = r_q;
        rc = r_c;
        res = rq.amax().max(rc.amax());
        diag.iterations += 1;
        diag.residual = res;
        diag.history.push(res);
    }
}

/// Largest relative discrepancies between analytic and finite-difference
/// force Jacobians. Entries are `None` when the model has no analytic form.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ForceJacobianReport {
    pub samples: usize,
    pub d1_wrench: Option<f64>,
    pub d2_wrench: Option<f64>,
    pub d1_joint: Option<f64>,
    pub d2_joint: Option<f64>,
}

impl ForceJacobianReport {
    pub fn max_error(&self) -> f64 {
        [self.d1_wrench, self.d2_wrench, self.d1_joint, self.d2_joint].iter().flatten().fold(0.0, |a, &b| a.max(b))
    }
}

fn fold_max(acc: &mut Option<f64>, v: f64) {
    *acc = Some(acc.map_or(v, |a| a.max(v)));
}

/// Compares analytic force Jacobians with central differences at `samples`
/// random states.
pub fn validate_force_jacobians(
    forces: &dyn ForceModel,
    model: &MechanismModel,
    samples: usize,
    seed: u64,
) -> ForceJacobianReport {
    use crate::oracle::rel_err;
    use crate::sample::{random_transform, random_vec6, uniform};
    use rand::SeedableRng;

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut report = ForceJacobianReport { samples, ..Default::default() };
    let n = model.num_bodies();
    for k in 0..samples {
        let i = k % n;
        let g = random_transform(&mut rng);
        let v = random_vec6(&mut rng, 2.0);
        let u = crate::sample::random_vector(&mut rng, n, 1.0);
        let t = uniform(&mut rng, 1.0);
        let (q, qd) = (uniform(&mut rng, 2.0), uniform(&mut rng, 2.0));
        if let Some((a1, a2)) = forces.body_wrench_jacobians(i, &g, &v, &u, t) {
            let (f1, f2) = fd_wrench_jacobians(forces, i, &g, &v, &u, t);
            fold_max(&mut report.d1_wrench, rel_err(a1.as_slice(), f1.as_slice()));
            fold_max(&mut report.d2_wrench, rel_err(a2.as_slice(), f2.as_slice()));
        }
        if let Some((a1, a2)) = forces.joint_force_jacobians(i, q, qd, &u, t) {
            let (f1, f2) = fd_joint_jacobians(forces, i, q, qd, &u, t);
            fold_max(&mut report.d1_joint, rel_err(&[a1], &[f1]));
            fold_max(&mut report.d2_joint, rel_err(&[a2], &[f2]));
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraint::{JointOffset, NoConstraints};
    use crate::del::{JointDamping, QuadraticDrag, ZeroForce};
    use crate::galerkin::GalerkinScheme;
    use crate::sample::{random_control_points, random_model, random_vector};
    use nalgebra::Matrix4;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Fourth-order central difference from samples at `±ε` and `±2ε`.
    fn stencil<T>(f: [T; 4], eps: f64) -> T
    where
        T: std::ops::Sub<Output = T> + std::ops::Mul<f64, Output = T> + Copy,
    {
        let [p1, m1, p2, m2] = f;
        (p1 - m1) * (8.0 / (12.0 * eps)) - (p2 - m2) * (1.0 / (12.0 * eps))
    }

    /// Realized spatial variations along the Newton direction against the
    /// affine forms the backward pass builds for them.
    #[test]
    fn variations_along_direction_match_backward_factors() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let (damp, drag) = (JointDamping(0.4), QuadraticDrag(0.3));
        let forces = crate::del::ForceSum(vec![&damp, &drag]);
        for s in 1..=3 {
            let n = 5;
            let scheme = GalerkinScheme::lobatto(s).unwrap();
            let model = random_model(&mut rng, n);
            let dt = 0.02;
            let problem = DelProblem::new(&model, &scheme, dt).with_forces(&forces);
            let qbar = random_control_points(&mut rng, &scheme, n, dt, 0.5);
            let p = random_vector(&mut rng, n, 1.0);
            let out = evaluate_del(&problem, &qbar, &p).unwrap();
            let f = NewtonFactors::new(&problem, &out).unwrap();
            let sw = f.sweep(&out.residuals);
            let eps = 1e-4;
            let o = [eps, -eps, 2.0 * eps, -2.0 * eps].map(|t| evaluate_del(&problem, &apply_update(&qbar, &sw.dq, t), &p).unwrap());
            let m = s + 1;
            let mut worst = (0.0f64, "");
            let mut check = |what: &'static str, a: Twist, b: Twist| {
                let e = (a - b).amax() / a.amax().max(b.amax()).max(1e-3);
                if e > worst.0 {
                    worst = (e, what);
                }
            };
            for i in 0..n {
                let bf = &f.bodies[i];
                let eta = |al: usize| if al == 0 { Twist::zeros() } else { sw.eta[i * s + al - 1] };
                for al in 0..m {
                    let nd = out.cache.node(i, al);
                    let node = |k: usize| o[k].cache.node(i, al);
                    let dh: Matrix4<f64> = stencil([0, 1, 2, 3].map(|k| node(k).g.to_homogeneous()), eps);
                    // η̄ = (δg g⁻¹)^∨.
                    let x = dh * nd.g.inverse().to_homogeneous();
                    let e = Twist::new(x[(2, 1)], x[(0, 2)], x[(1, 0)], x[(0, 3)], x[(1, 3)], x[(2, 3)]);
                    check("eta", e, eta(al));
                    // δ̄S̄ = δS̄ - ad_η̄ S̄ vanishes, measured against |S̄|.
                    check("S", stencil([0, 1, 2, 3].map(|k| node(k).s), eps) - ad(&e) * nd.s + nd.s, nd.s);
                    check("v", stencil([0, 1, 2, 3].map(|k| node(k).v), eps) - ad(&e) * nd.v, sw.dv[i * m + al]);

                    let k = out.idx(i, al);
                    let dmu = stencil([0, 1, 2, 3].map(|j| o[j].mu[k]), eps) + ad(&e).transpose() * out.mu[k];
                    let mut pred = sw.l[i * m + al];
                    for rho in 0..m {
                        pred += bf.d[al * m + rho] * sw.dv[i * m + rho];
                    }
                    for nu in 1..=s {
                        pred += bf.g[al * s + nu - 1] * eta(nu);
                    }
                    check("mu", dmu, pred);

                    if al < s {
                        let dgam = stencil([0, 1, 2, 3].map(|j| o[j].gamma[k]), eps) + ad(&e).transpose() * out.gamma[k];
                        let mut pred = sw.zeta[i * s + al];
                        for rho in 0..m {
                            pred += bf.pi[al * m + rho] * sw.dv[i * m + rho];
                        }
                        for nu in 1..=s {
                            pred += bf.psi[al * s + nu - 1] * eta(nu);
                        }
                        check("gamma", dgam, pred);
                    }
                }
            }
            assert!(worst.0 < 1e-8, "s={s}: {worst:?}");
        }
    }

    #[test]
    fn newton_converges_quadratically() {
        let model = MechanismModel::pendulum_chain(4, 1.0, 1.0).unwrap();
        let scheme = GalerkinScheme::trapezoidal();
        let problem = DelProblem::new(&model, &scheme, 0.01);
        let q = DVector::from_vec(vec![0.8, -0.4, 0.3, 0.6]);
        let state = DiscreteState::from_velocity(&model, q, &DVector::from_vec(vec![2.0, -1.0, 1.5, 0.5]));
        let config = SolverConfig { tol: 1e-13, step_tol: 0.0, ..Default::default() };
        let (_, diag) = step(&problem, &state, None, &config).unwrap();
        let h = &diag.history;
        assert!(h.len() >= 4, "{h:?}");
        // Ratios above the rounding floor only.
        let c: Vec<f64> = h.windows(2).rev().take(3).filter(|w| w[1] > 1e-12).map(|w| w[1] / (w[0] * w[0])).collect();
        assert!(!c.is_empty(), "{h:?}");
        assert!(c.iter().all(|&c| c < 10.0), "{h:?} {c:?}");
    }

    #[test]
    fn zero_residual_gives_zero_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = random_model(&mut rng, 4);
        let scheme = GalerkinScheme::simpson();
        let problem = DelProblem::new(&model, &scheme, 0.01);
        let qbar = random_control_points(&mut rng, &scheme, 4, 0.01, 0.3);
        let out = evaluate_del(&problem, &qbar, &random_vector(&mut rng, 4, 1.0)).unwrap();
        let f = NewtonFactors::new(&problem, &out).unwrap();
        assert_eq!(f.direction(&DMatrix::zeros(2, 4)), DMatrix::zeros(2, 4));
    }

    #[test]
    fn single_link_small_step_matches_linear_update() {
        // Near the origin the pendulum is I q̈ = -k q with I = m l² + I_zz and
        // k = m g l. The trapezoidal DEL then reads
        //   p0 + I (q0 - q1)/Δt - Δt/2 k q0 = 0.
        let (m, l) = (1.0, 1.0);
        let model = MechanismModel::pendulum_chain(1, m, l).unwrap();
        let scheme = GalerkinScheme::trapezoidal();
        let dt = 1e-3;
        let inertia = m * l * l + m * l * l / 12.0;
        let k = m * 9.81 * l;
        let (q0, p0) = (1e-6, 2e-6);
        let problem = DelProblem::new(&model, &scheme, dt);
        let state = DiscreteState::new(DVector::from_element(1, q0), DVector::from_element(1, p0));
        let qbar = constant_guess(1, &state.q);
        let out = evaluate_del(&problem, &qbar, &state.p).unwrap();
        let dq = newton_direction(&problem, &out).unwrap();
        let q1 = q0 + dq[(0, 0)];
        let want = q0 + dt / inertia * (p0 - 0.5 * dt * k * q0);
        assert!((q1 - want).abs() < 1e-10, "{q1} vs {want}");
    }

    #[test]
    fn equilibrium_step_is_trivial() {
        let model = MechanismModel::pendulum_chain(3, 1.0, 1.0).unwrap();
        let scheme = GalerkinScheme::simpson();
        let problem = DelProblem::new(&model, &scheme, 0.01);
        let state = DiscreteState::new(DVector::zeros(3), DVector::zeros(3));
        let (next, diag) = step(&problem, &state, None, &SolverConfig::default()).unwrap();
        assert_eq!(diag.iterations, 1);
        assert_eq!(next.q, state.q);
        assert_eq!(next.p, state.p);
        assert_eq!(next.k, 1);
    }

    #[test]
    fn huge_step_reports_failure_with_diagnostics() {
        let model = MechanismModel::pendulum_chain(8, 1.0, 1.0).unwrap();
        let scheme = GalerkinScheme::trapezoidal();
        let problem = DelProblem::new(&model, &scheme, 10.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = random_vector(&mut rng, 8, std::f64::consts::FRAC_PI_2);
        let state = DiscreteState::from_velocity(&model, q, &random_vector(&mut rng, 8, 1.5));
        let config = SolverConfig { max_iter: 20, ..Default::default() };
        match step(&problem, &state, None, &config) {
            Err(Error::NoConvergence { iterations, residual }) => {
                assert!(iterations >= 1 && residual > 0.0);
            }
            Err(Error::SingularJacobian { .. }) => {}
            Ok((_, d)) => assert!(d.residual < config.tol),
            Err(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn integrator_steps_damped_chain() {
        let model = MechanismModel::pendulum_chain(4, 1.0, 0.5).unwrap();
        let scheme = GalerkinScheme::simpson();
        let damping = JointDamping(0.3);
        let problem = DelProblem::new(&model, &scheme, 0.01).with_forces(&damping);
        let state = DiscreteState::from_velocity(&model, DVector::from_element(4, 0.4), &DVector::zeros(4));
        let e0 = state.energy(&model);
        let mut integ = Integrator::new(problem, state, SolverConfig::default());
        for _ in 0..50 {
            let d = integ.step().unwrap();
            assert!(d.residual < 1e-10);
        }
        assert_eq!(integ.state().k, 50);
        assert!(integ.state().energy(&model) < e0);
    }

    #[test]
    fn constrained_without_constraints_matches_step() {
        let model = MechanismModel::pendulum_chain(3, 1.0, 1.0).unwrap();
        let scheme = GalerkinScheme::trapezoidal();
        let problem = DelProblem::new(&model, &scheme, 0.01);
        let state = DiscreteState::from_velocity(&model, DVector::from_vec(vec![0.3, -0.2, 0.5]), &DVector::zeros(3));
        let config = SolverConfig::default();
        let c = constrained_step_second_order(&problem, &state, &NoConstraints, &config).unwrap();
        let (next, _) = step(&problem, &state, None, &config).unwrap();
        assert!((c.state.q - next.q).amax() < 1e-12);
        assert!((c.state.p - next.p).amax() < 1e-12);
    }

    #[test]
    fn constrained_step_requires_trapezoid() {
        let model = MechanismModel::pendulum_chain(2, 1.0, 1.0).unwrap();
        let scheme = GalerkinScheme::simpson();
        let problem = DelProblem::new(&model, &scheme, 0.01);
        let state = DiscreteState::new(DVector::zeros(2), DVector::zeros(2));
        let r = constrained_step_second_order(&problem, &state, &NoConstraints, &SolverConfig::default());
        assert!(matches!(r, Err(Error::ConstrainedOrder(2))));
    }

    #[test]
    fn zero_constraint_gradient_is_rank_deficient() {
        struct Flat;
        impl Constraints for Flat {
            fn dim(&self) -> usize {
                1
            }
            fn value(&self, _m: &MechanismModel, _q: &DVector<f64>, _qd: &DVector<f64>) -> DVector<f64> {
                DVector::from_element(1, 1.0)
            }
            fn jacobian_q(&self, _m: &MechanismModel, q: &DVector<f64>, _qd: &DVector<f64>) -> DMatrix<f64> {
                DMatrix::zeros(1, q.len())
            }
            fn force_matrix(&self, _m: &MechanismModel, q: &DVector<f64>) -> DMatrix<f64> {
                DMatrix::from_element(q.len(), 1, 1.0)
            }
        }
        let model = MechanismModel::pendulum_chain(2, 1.0, 1.0).unwrap();
        let scheme = GalerkinScheme::trapezoidal();
        let problem = DelProblem::new(&model, &scheme, 0.01);
        let state = DiscreteState::new(DVector::zeros(2), DVector::zeros(2));
        let r = constrained_step_second_order(&problem, &state, &Flat, &SolverConfig::default());
        assert!(matches!(r, Err(Error::RankDeficientConstraints { .. })));
    }

    #[test]
    fn joint_lock_holds_joint() {
        let model = MechanismModel::pendulum_chain(3, 1.0, 1.0).unwrap();
        let scheme = GalerkinScheme::trapezoidal();
        let problem = DelProblem::new(&model, &scheme, 0.01);
        let lock = JointOffset { joint: 1, offset: 0.2 };
        let mut state = DiscreteState::new(DVector::from_vec(vec![0.4, 0.2, -0.3]), DVector::zeros(3));
        for _ in 0..20 {
            let c = constrained_step_second_order(&problem, &state, &lock, &SolverConfig::default()).unwrap();
            assert!((c.state.q[1] - 0.2).abs() < 1e-10);
            state = c.state;
        }
    }

    #[test]
    fn force_jacobian_reports() {
        let model = MechanismModel::pendulum_chain(3, 1.0, 1.0).unwrap();
        assert_eq!(validate_force_jacobians(&ZeroForce, &model, 10, 1).max_error(), 0.0);
        let r = validate_force_jacobians(&JointDamping(0.7), &model, 10, 1);
        assert!(r.d2_joint.unwrap() < 1e-9);
        let r = validate_force_jacobians(&QuadraticDrag(0.4), &model, 30, 1);
        assert!(r.max_error() < 1e-5, "{r:?}");
        let r = validate_force_jacobians(&crate::del::BodyDamping(0.4), &model, 5, 1);
        assert_eq!(r.d1_wrench, None);
    }
}

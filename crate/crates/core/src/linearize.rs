//! Analytic second derivatives of the kinetic and gravitational potential
//! energy in `O(n²)`, and the linearization of the DEL equations built from
//! them by the chain rule.

use nalgebra::{DMatrix, DVector, Vector3};

use crate::del::{joint_jacobians, wrench_jacobians, DelProblem};
use crate::error::Result;
use crate::galerkin::GalerkinScheme;
use crate::model::{KinematicsCache, MechanismModel};
use crate::se3::{ad, ad_dual, angular, hat, linear, stack, SpatialMatrix, Twist};

/// Work counters of one [`energy_hessians`] call.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct HessianCounts {
    /// Scalar entries written into the `n × n` blocks.
    pub block_writes: usize,
    /// Per-body accumulator updates in the backward pass.
    pub accumulator_updates: usize,
}

/// First and second derivatives of `K(q, q̇)` and `V(q)`.
///
/// Mixed blocks are indexed as written: `d2k_dqdot_dq[(i, j)] = ∂²K/∂q̇ᵢ∂qⱼ`.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyHessians {
    pub d2k_dqdot2: DMatrix<f64>,
    pub d2k_dqdot_dq: DMatrix<f64>,
    pub d2k_dq_dqdot: DMatrix<f64>,
    pub d2k_dq2: DMatrix<f64>,
    pub d2v_dq2: DMatrix<f64>,
    pub dk_dq: DVector<f64>,
    pub dk_dqdot: DVector<f64>,
    pub dv_dq: DVector<f64>,
    pub counts: HessianCounts,
}

impl EnergyHessians {
    fn zeros(n: usize) -> Self {
        Self {
            d2k_dqdot2: DMatrix::zeros(n, n),
            d2k_dqdot_dq: DMatrix::zeros(n, n),
            d2k_dq_dqdot: DMatrix::zeros(n, n),
            d2k_dq2: DMatrix::zeros(n, n),
            d2v_dq2: DMatrix::zeros(n, n),
            dk_dq: DVector::zeros(n),
            dk_dqdot: DVector::zeros(n),
            dv_dq: DVector::zeros(n),
            counts: HessianCounts::default(),
        }
    }

    /// `∂²L/∂q² = ∂²K/∂q² - ∂²V/∂q²`.
    pub fn d2l_dq2(&self) -> DMatrix<f64> {
        &self.d2k_dq2 - &self.d2v_dq2
    }
}

/// Mass matrix `M(q) = ∂²K/∂q̇²` by composite inertias.
pub fn mass_matrix(model: &MechanismModel, q: &DVector<f64>) -> DMatrix<f64> {
    let n = model.num_bodies();
    let cache = model.kinematics(q, &DVector::zeros(n));
    let mut composite: Vec<SpatialMatrix> = (0..n).map(|i| cache.node(i, 0).m).collect();
    for i in (0..n).rev() {
        if let Some(p) = model.parent(i) {
            let c = composite[i];
            composite[p] += c;
        }
    }
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        let f = composite[i] * cache.node(i, 0).s;
        m[(i, i)] = cache.node(i, 0).s.dot(&f);
        for j in model.ancestors(i) {
            let v = cache.node(j, 0).s.dot(&f);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// Energy derivatives at `(q, q̇)` by one forward and one backward pass and
/// an ancestor sweep per body.
pub fn energy_hessians(model: &MechanismModel, q: &DVector<f64>, qdot: &DVector<f64>) -> EnergyHessians {
    let cache = model.kinematics(q, qdot);
    energy_hessians_at(model, &cache, 0)
}

/// [`energy_hessians`] at node `alpha` of an existing kinematics cache.
pub fn energy_hessians_at(model: &MechanismModel, cache: &KinematicsCache, alpha: usize) -> EnergyHessians {
    let n = model.num_bodies();
    let g = *model.gravity();
    let mut out = EnergyHessians::zeros(n);
    let nd = |i: usize| cache.node(i, alpha);

    // Backward pass: μ̄ᵢ, 𝓜̄ᵢ, σ̄_mᵢ, σ̄_pᵢ.
    let mut mu: Vec<Twist> = (0..n).map(|i| nd(i).m * nd(i).v).collect();
    let mut comp: Vec<SpatialMatrix> = (0..n).map(|i| nd(i).m).collect();
    let mut sig_m: Vec<f64> = (0..n).map(|i| model.body(i).mass).collect();
    let mut sig_p: Vec<Vector3<f64>> = (0..n).map(|i| nd(i).g.translation * model.body(i).mass).collect();
    for i in (0..n).rev() {
        if let Some(p) = model.parent(i) {
            let (mi, ci, smi, spi) = (mu[i], comp[i], sig_m[i], sig_p[i]);
            mu[p] += mi;
            comp[p] += ci;
            sig_m[p] += smi;
            sig_p[p] += spi;
            out.counts.accumulator_updates += 1;
        }
    }

    let gh = hat(&g);
    for i in 0..n {
        let (s_i, sd_i) = (nd(i).s, nd(i).sdot);
        let ma = comp[i] * s_i;
        let mb = comp[i] * sd_i - ad_dual(&mu[i]) * s_i;
        let va = gh * (linear(&s_i) * sig_m[i] - sig_p[i].cross(&angular(&s_i)));
        out.dk_dqdot[i] = s_i.dot(&mu[i]);
        out.dk_dq[i] = sd_i.dot(&mu[i]);
        out.dv_dq[i] = -s_i.dot(&stack(&sig_p[i].cross(&g), &(g * sig_m[i])));

        for j in std::iter::once(i).chain(model.ancestors(i)) {
            let (s_j, sd_j) = (nd(j).s, nd(j).sdot);
            let kvv = s_j.dot(&ma);
            let kvq = sd_j.dot(&ma);
            let kqv = s_j.dot(&mb);
            let kqq = sd_j.dot(&mb);
            let vqq = angular(&s_j).dot(&va);
            out.d2k_dqdot2[(i, j)] = kvv;
            out.d2k_dqdot2[(j, i)] = kvv;
            // ∂²K/∂q̇ᵢ∂qⱼ and ∂²K/∂qᵢ∂q̇ⱼ for j ∈ anc(i) ∪ {i}.
            out.d2k_dqdot_dq[(i, j)] = kvq;
            out.d2k_dq_dqdot[(j, i)] = kvq;
            out.d2k_dq_dqdot[(i, j)] = kqv;
            out.d2k_dqdot_dq[(j, i)] = kqv;
            out.d2k_dq2[(i, j)] = kqq;
            out.d2k_dq2[(j, i)] = kqq;
            out.d2v_dq2[(i, j)] = vqq;
            out.d2v_dq2[(j, i)] = vqq;
            out.counts.block_writes += if i == j { 5 } else { 10 };
        }
    }
    out
}

/// `𝔻²𝓛_d` as `(s+1)²` blocks of size `n × n`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteLagrangianHessian {
    pub s: usize,
    pub n: usize,
    /// Block `(α, β)` at `α (s + 1) + β`, entry `(i, j) = ∂²𝓛_d/∂q^α_i∂q^β_j`.
    pub blocks: Vec<DMatrix<f64>>,
}

impl DiscreteLagrangianHessian {
    pub fn block(&self, alpha: usize, beta: usize) -> &DMatrix<f64> {
        &self.blocks[alpha * (self.s + 1) + beta]
    }

    /// Dense `(s+1)n` square matrix with coordinate `α n + i`.
    pub fn full(&self) -> DMatrix<f64> {
        let (m, n) = (self.s + 1, self.n);
        let mut out = DMatrix::zeros(m * n, m * n);
        for a in 0..m {
            for b in 0..m {
                out.view_mut((a * n, b * n), (n, n)).copy_from(self.block(a, b));
            }
        }
        out
    }
}

/// Node Hessians of `𝓛` at every control point of `qbar`.
fn node_hessians(model: &MechanismModel, scheme: &GalerkinScheme, qbar: &DMatrix<f64>, dt: f64) -> Result<Vec<EnergyHessians>> {
    let cache = model.forward_pass(scheme, qbar, dt)?;
    Ok((0..scheme.num_nodes()).map(|g| energy_hessians_at(model, &cache, g)).collect())
}

fn assemble_discrete(scheme: &GalerkinScheme, n: usize, dt: f64, nodes: &[EnergyHessians]) -> DiscreteLagrangianHessian {
    let m = scheme.num_nodes();
    let mut blocks = vec![DMatrix::zeros(n, n); m * m];
    for (ga, h) in nodes.iter().enumerate() {
        let wdt = scheme.w(ga) * dt;
        let lqq = h.d2l_dq2();
        for a in 0..m {
            let sa = if a == ga { 1.0 } else { 0.0 };
            let ba = scheme.b(ga, a) / dt;
            for b in 0..m {
                let sb = if b == ga { 1.0 } else { 0.0 };
                let bb = scheme.b(ga, b) / dt;
                let blk = &mut blocks[a * m + b];
                if sa * sb != 0.0 {
                    *blk += &lqq * (wdt * sa * sb);
                }
                if sa != 0.0 {
                    *blk += &h.d2k_dq_dqdot * (wdt * sa * bb);
                }
                if sb != 0.0 {
                    *blk += &h.d2k_dqdot_dq * (wdt * ba * sb);
                }
                *blk += &h.d2k_dqdot2 * (wdt * ba * bb);
            }
        }
    }
    DiscreteLagrangianHessian { s: scheme.s(), n, blocks }
}

/// `𝔻²𝓛_d(q̄)` by the chain rule through `q̇^γ = (1/Δt) Σ_β b^{γβ} q^β`.
pub fn d2_discrete_lagrangian(
    model: &MechanismModel,
    scheme: &GalerkinScheme,
    qbar: &DMatrix<f64>,
    dt: f64,
) -> Result<DiscreteLagrangianHessian> {
    let nodes = node_hessians(model, scheme, qbar, dt)?;
    Ok(assemble_discrete(scheme, model.num_bodies(), dt, &nodes))
}

/// Jacobians of the DEL residuals and of the outgoing momentum.
///
/// Residual rows are `α n + i` for `α < s`; columns over control points are
/// `β n + j` for `β = 0..=s`.
#[derive(Clone, Debug, PartialEq)]
pub struct DelLinearization {
    pub dr_dq: DMatrix<f64>,
    pub dr_dp: DMatrix<f64>,
    pub dpnext_dq: DMatrix<f64>,
}

impl DelLinearization {
    /// Columns for `q^{k,1..s}`: the Newton matrix `J`.
    pub fn newton_matrix(&self) -> DMatrix<f64> {
        let n = self.dpnext_dq.nrows();
        self.dr_dq.columns(n, self.dr_dq.ncols() - n).into_owned()
    }
}

/// Generalized force Jacobians `(∂Q/∂q, ∂Q/∂q̇)` at one node, without gravity.
///
/// With `Pᵢ` the sum of body wrenches over the subtree of `i`, the joint force
/// is `S̄ᵢᵀPᵢ + Qᵢ`. Perturbing `qⱼ` moves the subtree of `j` by `S̄ⱼ` and
/// changes its velocities by `ad_{S̄ⱼ}v̄ₖ + Ṡ̄ⱼ`.
fn force_jacobians_at(problem: &DelProblem, cache: &KinematicsCache, alpha: usize, u: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let model = problem.model;
    let n = model.num_bodies();
    let t = problem.node_time(alpha);
    let nd = |i: usize| cache.node(i, alpha);

    let mut wrench: Vec<Twist> = Vec::with_capacity(n);
    let mut a_acc: Vec<SpatialMatrix> = Vec::with_capacity(n);
    let mut b_acc: Vec<SpatialMatrix> = Vec::with_capacity(n);
    let mut dq = DMatrix::zeros(n, n);
    let mut dqd = DMatrix::zeros(n, n);
    for i in 0..n {
        let k = nd(i);
        wrench.push(problem.forces.body_wrench(i, &k.g, &k.v, u, t));
        let (d1, d2) = wrench_jacobians(problem.forces, i, &k.g, &k.v, u, t);
        a_acc.push(d1 - d2 * ad(&k.v));
        b_acc.push(d2);
        let (q1, q2) = joint_jacobians(problem.forces, i, k.q, k.qdot, u, t);
        dq[(i, i)] += q1;
        dqd[(i, i)] += q2;
    }
    for i in (0..n).rev() {
        if let Some(p) = model.parent(i) {
            let (w, a, b) = (wrench[i], a_acc[i], b_acc[i]);
            wrench[p] += w;
            a_acc[p] += a;
            b_acc[p] += b;
        }
    }
    for i in 0..n {
        let (s_i, sd_i) = (nd(i).s, nd(i).sdot);
        // Own subtree moving: j = i and descendants as seen from ancestors.
        let own = a_acc[i] * s_i + b_acc[i] * sd_i;
        let own_v = b_acc[i] * s_i;
        dq[(i, i)] += s_i.dot(&own);
        dqd[(i, i)] += s_i.dot(&own_v);
        for j in model.ancestors(i) {
            let (s_j, sd_j) = (nd(j).s, nd(j).sdot);
            // Ancestor j moves all of i's subtree and i's own axis.
            dq[(i, j)] += (ad(&s_j) * s_i).dot(&wrench[i]) + s_i.dot(&(a_acc[i] * s_j + b_acc[i] * sd_j));
            dqd[(i, j)] += s_i.dot(&(b_acc[i] * s_j));
            // Descendant i moves only its own subtree under j.
            dq[(j, i)] += s_j.dot(&own);
            dqd[(j, i)] += s_j.dot(&own_v);
        }
    }
    (dq, dqd)
}

/// Linearization of the DEL equations at `(q̄ᵏ, pᵏ)` in `O(s²n²)`.
pub fn linearize_del(problem: &DelProblem, qbar: &DMatrix<f64>, _p: &DVector<f64>) -> Result<DelLinearization> {
    let model = problem.model;
    let scheme = problem.scheme;
    let (n, s, dt) = (model.num_bodies(), scheme.s(), problem.dt);
    let m = s + 1;
    let cache = model.forward_pass(scheme, qbar, dt)?;
    let nodes: Vec<EnergyHessians> = (0..m).map(|g| energy_hessians_at(model, &cache, g)).collect();
    let hess = assemble_discrete(scheme, n, dt, &nodes);
    let controls = problem.control_samples();

    let mut full = DMatrix::zeros(m * n, m * n);
    for a in 0..m {
        for b in 0..m {
            full.view_mut((a * n, b * n), (n, n)).copy_from(hess.block(a, b));
        }
    }
    for a in 0..m {
        let (fq, fqd) = force_jacobians_at(problem, &cache, a, &controls[a]);
        let wdt = problem.wdt(a);
        for b in 0..m {
            let mut blk = full.view_mut((a * n, b * n), (n, n));
            if a == b {
                blk += &fq * wdt;
            }
            blk += &fqd * (wdt * scheme.b(a, b) / dt);
        }
    }

    let mut dr_dp = DMatrix::zeros(s * n, n);
    dr_dp.view_mut((0, 0), (n, n)).fill_with_identity();
    Ok(DelLinearization {
        dr_dq: full.rows(0, s * n).into_owned(),
        dr_dp,
        dpnext_dq: full.rows(s * n, n).into_owned(),
    })
}

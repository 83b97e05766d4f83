//! Galerkin discretization on `[0, 1]`: Lobatto nodes, quadrature weights
//! and the Lagrange differentiation matrix.
//!
//! A step of length `Δt` uses nodal velocities
//! `q̇^α = (1/Δt) Σ_β b^{αβ} q^β` and the discrete Lagrangian
//! `L_d = Σ_α w^α L(q^α, q̇^α) Δt`.

use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 12;

#[derive(Clone, Debug, PartialEq)]
pub struct GalerkinScheme {
    s: usize,
    nodes: DVector<f64>,
    weights: DVector<f64>,
    diff: DMatrix<f64>,
    a: DMatrix<f64>,
}

impl GalerkinScheme {
    /// Two-point scheme: `q̇^0 = q̇^1 = (q^1 - q^0)/Δt`, `w = (½, ½)`.
    pub fn trapezoidal() -> Self {
        Self::from_parts(
            DVector::from_vec(vec![0.0, 1.0]),
            DVector::from_vec(vec![0.5, 0.5]),
            DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, -1.0, 1.0]),
        )
    }

    /// Three-point scheme with nodes `(0, ½, 1)` and weights `(1/6, 4/6, 1/6)`.
    pub fn simpson() -> Self {
        Self::from_parts(
            DVector::from_vec(vec![0.0, 0.5, 1.0]),
            DVector::from_vec(vec![1.0 / 6.0, 4.0 / 6.0, 1.0 / 6.0]),
            DMatrix::from_row_slice(3, 3, &[-3.0, 4.0, -1.0, -1.0, 0.0, 1.0, 1.0, -4.0, 3.0]),
        )
    }

    /// `s + 1` Gauss-Lobatto points on `[0, 1]`.
    pub fn lobatto(s: usize) -> Result<Self> {
        if !(1..=MAX_ORDER).contains(&s) {
            return Err(Error::UnsupportedOrder(s));
        }
        let x = lobatto_nodes(s);
        // Lobatto weights on [-1, 1] are 2/(s(s+1) P_s(x)²); halve for [0, 1].
        let ss = (s * (s + 1)) as f64;
        let weights: Vec<f64> = x.iter().map(|&xi| 1.0 / (ss * legendre(s, xi).0.powi(2))).collect();
        let nodes: Vec<f64> = x.iter().map(|&xi| 0.5 * (xi + 1.0)).collect();
        let nodes = DVector::from_vec(nodes);
        let diff = differentiation_matrix(&nodes);
        Ok(Self::from_parts(nodes, DVector::from_vec(weights), diff))
    }

    fn from_parts(nodes: DVector<f64>, weights: DVector<f64>, diff: DMatrix<f64>) -> Self {
        let s = nodes.len() - 1;
        let a = DMatrix::from_fn(s + 1, s + 1, |i, j| weights[j] * diff[(j, i)]);
        Self { s, nodes, weights, diff, a }
    }

    /// Number of intervals between control points; the scheme has `s + 1` nodes.
    pub fn s(&self) -> usize {
        self.s
    }

    pub fn num_nodes(&self) -> usize {
        self.s + 1
    }

    /// Nodes `c^α` with `c^0 = 0` and `c^s = 1`.
    pub fn nodes(&self) -> &DVector<f64> {
        &self.nodes
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    /// `b^{αβ}`, row `α`.
    pub fn diff_matrix(&self) -> &DMatrix<f64> {
        &self.diff
    }

    /// `a^{αβ} = w^β b^{βα}`.
    pub fn a_matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    #[inline]
    pub fn c(&self, alpha: usize) -> f64 {
        self.nodes[alpha]
    }

    #[inline]
    pub fn w(&self, alpha: usize) -> f64 {
        self.weights[alpha]
    }

    #[inline]
    pub fn b(&self, alpha: usize, beta: usize) -> f64 {
        self.diff[(alpha, beta)]
    }

    #[inline]
    pub fn a(&self, alpha: usize, beta: usize) -> f64 {
        self.a[(alpha, beta)]
    }

    /// Short name: `trapezoidal` for s = 1, `simpson` for s = 2, else `lobatto:s`.
    pub fn name(&self) -> String {
        match self.s {
            1 => "trapezoidal".into(),
            2 => "simpson".into(),
            s => format!("lobatto:{s}"),
        }
    }
}

impl FromStr for GalerkinScheme {
    type Err = Error;

    /// Accepts `trapezoidal`, `simpson` and `lobatto:<s>`.
    fn from_str(name: &str) -> Result<Self> {
        match name.trim() {
            "trapezoidal" => Ok(Self::trapezoidal()),
            "simpson" => Ok(Self::simpson()),
            other => {
                let s = other
                    .strip_prefix("lobatto:")
                    .and_then(|s| s.parse::<usize>().ok())
                    .ok_or_else(|| Error::UnknownScheme(other.to_string()))?;
                Self::lobatto(s)
            }
        }
    }
}

/// `(P_s(x), P_s'(x))` by the three-term recurrence.
fn legendre(s: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if s == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=s {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let sf = s as f64;
    let dp = if (1.0 - x * x).abs() < 1e-300 {
        0.5 * sf * (sf + 1.0) * x.powi(s as i32 + 1)
    } else {
        sf * (p0 - x * p1) / (1.0 - x * x)
    };
    (p1, dp)
}

/// Lobatto points on `[-1, 1]` in increasing order.
fn lobatto_nodes(s: usize) -> Vec<f64> {
    let sf = s as f64;
    let mut x = vec![-1.0; s + 1];
    x[s] = 1.0;
    for (j, xj) in x.iter_mut().enumerate().take(s).skip(1) {
        // Chebyshev-Lobatto guess, then Newton on P_s'.
        let mut t = -(std::f64::consts::PI * j as f64 / sf).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(s, t);
            let d2p = (2.0 * t * dp - sf * (sf + 1.0) * p) / (1.0 - t * t);
            let step = dp / d2p;
            t -= step;
            if step.abs() < 1e-14 {
                break;
            }
        }
        *xj = t;
    }
    x
}

/// Lagrange differentiation matrix at `nodes` from barycentric weights.
fn differentiation_matrix(nodes: &DVector<f64>) -> DMatrix<f64> {
    let m = nodes.len();
    let lam: Vec<f64> = (0..m)
        .map(|j| 1.0 / (0..m).filter(|&k| k != j).map(|k| nodes[j] - nodes[k]).product::<f64>())
        .collect();
    let mut d = DMatrix::zeros(m, m);
    for i in 0..m {
        let mut diag = 0.0;
        for j in 0..m {
            if i != j {
                d[(i, j)] = lam[j] / lam[i] / (nodes[i] - nodes[j]);
                diag -= d[(i, j)];
            }
        }
        d[(i, i)] = diag;
    }
    d
}

use thiserror::Error;

use crate::model::Violation;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Se3Error {
    #[error("matrix is not skew-symmetric (symmetric part {0:e})")]
    NotSkewSymmetric(f64),
    #[error("not a rotation: |RᵀR - I| = {orthogonality:e}, det R = {determinant}")]
    NotRotation { orthogonality: f64, determinant: f64 },
    #[error("transform has non-finite entries")]
    NonFinite,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported scheme order s = {0} (expected 1..=12)")]
    UnsupportedOrder(usize),
    #[error("unknown scheme name `{0}`")]
    UnknownScheme(String),
    #[error("invalid model: {}", format_violations(.0))]
    InvalidModel(Vec<Violation>),
    #[error("model description: {0}")]
    ModelFormat(String),
    #[error("{what}: expected {expected}, got {got}")]
    DimensionMismatch { what: &'static str, expected: String, got: String },
    #[error("non-finite {what} at body {body}, node {node}")]
    NonFiniteForce { what: &'static str, body: usize, node: usize },
    #[error("singular Jacobian block at body {body} (reciprocal condition {rcond:e})")]
    SingularJacobian { body: usize, node: usize, rcond: f64 },
    #[error("dense Jacobian is singular (reciprocal condition {rcond:e})")]
    SingularDense { rcond: f64 },
    #[error("Newton failed to converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("constraint Schur complement is singular (reciprocal condition {rcond:e})")]
    RankDeficientConstraints { rcond: f64 },
    #[error("constrained step requires s = 1, got s = {0}")]
    ConstrainedOrder(usize),
    #[error("invalid run specification: {0}")]
    InvalidSpec(String),
    #[error("non-finite state")]
    NonFiniteState,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

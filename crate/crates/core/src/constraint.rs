//! Constraints `h(q, q̇) = 0` and their force matrices `A(q)`.

use nalgebra::{DMatrix, DVector, Vector3};

use crate::model::MechanismModel;
use crate::se3::{angular, linear};

pub trait Constraints: Sync {
    /// Number of scalar constraints `m`.
    fn dim(&self) -> usize;

    fn value(&self, model: &MechanismModel, q: &DVector<f64>, qdot: &DVector<f64>) -> DVector<f64>;

    /// `∂h/∂q`, `m × n`.
    fn jacobian_q(&self, model: &MechanismModel, q: &DVector<f64>, qdot: &DVector<f64>) -> DMatrix<f64>;

    /// `∂h/∂q̇`, `m × n`. Zero for holonomic constraints.
    fn jacobian_qdot(&self, _model: &MechanismModel, q: &DVector<f64>, _qdot: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(self.dim(), q.len())
    }

    /// `A(q)`, `n × m`. Defaults to `(∂h/∂q)ᵀ` at zero velocity.
    fn force_matrix(&self, model: &MechanismModel, q: &DVector<f64>) -> DMatrix<f64> {
        self.jacobian_q(model, q, &DVector::zeros(q.len())).transpose()
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct NoConstraints;

impl Constraints for NoConstraints {
    fn dim(&self) -> usize {
        0
    }

    fn value(&self, _model: &MechanismModel, _q: &DVector<f64>, _qdot: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(0)
    }

    fn jacobian_q(&self, _model: &MechanismModel, q: &DVector<f64>, _qdot: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(0, q.len())
    }
}

/// `h = q_j - offset`.
#[derive(Clone, Copy, Debug)]
pub struct JointOffset {
    pub joint: usize,
    pub offset: f64,
}

impl Constraints for JointOffset {
    fn dim(&self) -> usize {
        1
    }

    fn value(&self, _model: &MechanismModel, q: &DVector<f64>, _qdot: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, q[self.joint] - self.offset)
    }

    fn jacobian_q(&self, _model: &MechanismModel, q: &DVector<f64>, _qdot: &DVector<f64>) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(1, q.len());
        j[(0, self.joint)] = 1.0;
        j
    }
}

/// Keeps a body-fixed point on a sphere: `h = ½(|x - c|² - r²)`.
///
/// For a planar mechanism this is a point moving on a circle.
#[derive(Clone, Copy, Debug)]
pub struct PointOnSphere {
    pub body: usize,
    /// Point in body coordinates.
    pub point: Vector3<f64>,
    pub center: Vector3<f64>,
    pub radius: f64,
}

impl PointOnSphere {
    fn world_point(&self, model: &MechanismModel, q: &DVector<f64>) -> (Vector3<f64>, crate::model::KinematicsCache) {
        let cache = model.kinematics(q, &DVector::zeros(q.len()));
        let x = cache.node(self.body, 0).g.transform_point(&self.point);
        (x, cache)
    }
}

impl Constraints for PointOnSphere {
    fn dim(&self) -> usize {
        1
    }

    fn value(&self, model: &MechanismModel, q: &DVector<f64>, _qdot: &DVector<f64>) -> DVector<f64> {
        let (x, _) = self.world_point(model, q);
        DVector::from_element(1, 0.5 * ((x - self.center).norm_squared() - self.radius * self.radius))
    }

    fn jacobian_q(&self, model: &MechanismModel, q: &DVector<f64>, _qdot: &DVector<f64>) -> DMatrix<f64> {
        let (x, cache) = self.world_point(model, q);
        let d = x - self.center;
        let mut j = DMatrix::zeros(1, q.len());
        for a in std::iter::once(self.body).chain(model.ancestors(self.body)) {
            let s = cache.node(a, 0).s;
            // A point moves with velocity ω × x + v_O under the spatial twist.
            j[(0, a)] = d.dot(&(angular(&s).cross(&x) + linear(&s)));
        }
        j
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn joint_offset_value() {
        let model = MechanismModel::pendulum_chain(2, 1.0, 1.0).unwrap();
        let c = JointOffset { joint: 0, offset: 0.3 };
        let q = DVector::from_vec(vec![0.5, 0.0]);
        assert!((c.value(&model, &q, &q)[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn sphere_jacobian_matches_differences() {
        let model = MechanismModel::pendulum_chain(3, 1.0, 0.8).unwrap();
        let c = PointOnSphere { body: 2, point: Vector3::new(0.1, 0.0, 0.0), center: Vector3::zeros(), radius: 1.5 };
        let q = DVector::from_vec(vec![0.3, -0.7, 1.1]);
        let j = c.jacobian_q(&model, &q, &q);
        for k in 0..3 {
            let h = 1e-6;
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[k] += h;
            qm[k] -= h;
            let fd = (c.value(&model, &qp, &q)[0] - c.value(&model, &qm, &q)[0]) / (2.0 * h);
            assert!((fd - j[(0, k)]).abs() < 1e-8);
        }
    }
}

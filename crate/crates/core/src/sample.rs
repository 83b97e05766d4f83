//! Seeded random models and states for tests, checks and benchmarks.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3, Vector6};
use rand::Rng;

use crate::galerkin::GalerkinScheme;
use crate::model::{Body, Joint, MechanismModel};
use crate::se3::{exp_twist, stack, SpatialTransform};

pub fn uniform<R: Rng + ?Sized>(rng: &mut R, half_width: f64) -> f64 {
    rng.gen_range(-half_width..=half_width)
}

pub fn random_vector<R: Rng + ?Sized>(rng: &mut R, n: usize, half_width: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| uniform(rng, half_width))
}

pub fn random_vec3<R: Rng + ?Sized>(rng: &mut R, half_width: f64) -> Vector3<f64> {
    Vector3::from_fn(|_, _| uniform(rng, half_width))
}

pub fn random_vec6<R: Rng + ?Sized>(rng: &mut R, half_width: f64) -> Vector6<f64> {
    Vector6::from_fn(|_, _| uniform(rng, half_width))
}

pub fn random_unit<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = random_vec3(rng, 1.0);
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Matrix3<f64> {
    let axis = random_unit(rng);
    let angle = uniform(rng, std::f64::consts::PI);
    exp_twist(&stack(&axis, &Vector3::zeros()), angle).rotation
}

pub fn random_transform<R: Rng + ?Sized>(rng: &mut R) -> SpatialTransform {
    SpatialTransform { rotation: random_rotation(rng), translation: random_vec3(rng, 1.0) }
}

/// Random tree with `n` bodies: mixed revolute/prismatic joints, off-center
/// revolute axes, full rotational inertias and a random gravity vector.
pub fn random_model<R: Rng + ?Sized>(rng: &mut R, n: usize) -> MechanismModel {
    let bodies = (0..n)
        .map(|i| {
            let parent = if i == 0 || rng.gen_bool(0.2) { None } else { Some(rng.gen_range(0..i)) };
            let rest = SpatialTransform { rotation: random_rotation(rng), translation: random_vec3(rng, 0.6) };
            let joint = if rng.gen_bool(0.75) {
                Joint::revolute(parent, random_unit(rng), random_vec3(rng, 0.5), rest)
            } else {
                Joint::prismatic(parent, random_unit(rng), rest)
            };
            let rot = random_rotation(rng);
            let principal = Matrix3::from_diagonal(&Vector3::from_fn(|_, _| rng.gen_range(0.02..0.3)));
            let inertia = rot * principal * rot.transpose();
            Body {
                name: format!("b{i}"),
                mass: rng.gen_range(0.5..2.0),
                inertia: (inertia + inertia.transpose()) * 0.5,
                joint,
            }
        })
        .collect();
    let gravity = Vector3::new(0.0, 0.0, -9.81) + random_vec3(rng, 2.0);
    MechanismModel::new(bodies, gravity).expect("random model is valid")
}

/// Control points near a smooth path: `q^α = q0 + c^α Δt q̇0` plus jitter of
/// relative size `jitter`.
pub fn random_control_points<R: Rng + ?Sized>(
    rng: &mut R,
    scheme: &GalerkinScheme,
    n: usize,
    dt: f64,
    jitter: f64,
) -> DMatrix<f64> {
    let q0 = random_vector(rng, n, 1.2);
    let qd = random_vector(rng, n, 2.0);
    DMatrix::from_fn(scheme.num_nodes(), n, |a, i| {
        let base = q0[i] + scheme.c(a) * dt * qd[i];
        if a == 0 {
            base
        } else {
            base + jitter * dt * uniform(rng, 1.0)
        }
    })
}

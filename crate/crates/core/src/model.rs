//! Kinematic trees of 1-DOF joints and the forward pass that fills the
//! per-node spatial quantities `g_i, S̄_i, M̄_i, v̄_i, Ṡ̄_i`.
//!
//! Bodies are indexed from 0 in construction order and every parent index is
//! smaller than its child's. The origin of each body frame is the body's mass
//! center, so `M_i = diag(𝓘_i, m_i I)`.

use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Se3Error};
use crate::galerkin::GalerkinScheme;
use crate::se3::{ad_mul, angular, exp_twist, linear, stack, SpatialMatrix, SpatialTransform, Twist};

pub const UNIT_SCREW_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointKind {
    Revolute,
    Prismatic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Joint {
    pub kind: JointKind,
    /// Unit screw `S_i` in the child frame.
    pub twist: Twist,
    /// `None` attaches the body to the world frame.
    pub parent: Option<usize>,
    /// `g_{par(i),i}(0)`.
    pub rest_transform: SpatialTransform,
}

impl Joint {
    /// Revolute joint about `axis` through `anchor` (child-frame coordinates).
    pub fn revolute(parent: Option<usize>, axis: Vector3<f64>, anchor: Vector3<f64>, rest: SpatialTransform) -> Self {
        Self { kind: JointKind::Revolute, twist: stack(&axis, &anchor.cross(&axis)), parent, rest_transform: rest }
    }

    pub fn prismatic(parent: Option<usize>, axis: Vector3<f64>, rest: SpatialTransform) -> Self {
        Self { kind: JointKind::Prismatic, twist: stack(&Vector3::zeros(), &axis), parent, rest_transform: rest }
    }

    /// `g_{par(i),i}(q) = g_{par(i),i}(0) exp(Ŝ_i q)`.
    pub fn transform(&self, q: f64) -> SpatialTransform {
        self.rest_transform * exp_twist(&self.twist, q)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Body {
    pub name: String,
    pub mass: f64,
    /// Rotational inertia about the mass center, body frame.
    pub inertia: Matrix3<f64>,
    pub joint: Joint,
}

impl Body {
    /// `M_i = diag(𝓘_i, m_i I)`.
    pub fn spatial_inertia(&self) -> SpatialMatrix {
        let mut m = Matrix6::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.inertia);
        m.fixed_view_mut::<3, 3>(3, 3).copy_from(&(Matrix3::identity() * self.mass));
        m
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ViolationKind {
    NoBodies,
    Gravity,
    TopologicalOrder { parent: usize },
    UnitScrew { norm: f64 },
    PrismaticRotates { norm: f64 },
    NegativeMass(f64),
    InertiaAsymmetric(f64),
    InertiaIndefinite(f64),
    RestTransform(Se3Error),
    NonFinite,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub body: Option<usize>,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(i) = self.body {
            write!(f, "body {i}: ")?;
        }
        match &self.kind {
            ViolationKind::NoBodies => write!(f, "model has no bodies"),
            ViolationKind::Gravity => write!(f, "gravity is not finite"),
            ViolationKind::TopologicalOrder { parent } => write!(f, "parent {parent} does not precede its child"),
            ViolationKind::UnitScrew { norm } => write!(f, "revolute axis has norm {norm}, expected 1"),
            ViolationKind::PrismaticRotates { norm } => {
                write!(f, "prismatic joint needs s = 0 and |n| = 1 (|n| = {norm})")
            }
            ViolationKind::NegativeMass(m) => write!(f, "negative mass {m}"),
            ViolationKind::InertiaAsymmetric(d) => write!(f, "inertia asymmetric by {d:e}"),
            ViolationKind::InertiaIndefinite(e) => write!(f, "inertia has eigenvalue {e:e}"),
            ViolationKind::RestTransform(e) => write!(f, "rest transform: {e}"),
            ViolationKind::NonFinite => write!(f, "non-finite parameter"),
        }
    }
}

/// Checks every model invariant and returns all violations found.
pub fn validate(bodies: &[Body], gravity: &Vector3<f64>) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |body, kind| out.push(Violation { body, kind });
    if bodies.is_empty() {
        push(None, ViolationKind::NoBodies);
    }
    if !gravity.iter().all(|x| x.is_finite()) {
        push(None, ViolationKind::Gravity);
    }
    for (i, b) in bodies.iter().enumerate() {
        let at = Some(i);
        let j = &b.joint;
        let finite = b.mass.is_finite()
            && b.inertia.iter().all(|x| x.is_finite())
            && j.twist.iter().all(|x| x.is_finite());
        if !finite {
            push(at, ViolationKind::NonFinite);
            continue;
        }
        if let Some(p) = j.parent {
            if p >= i {
                push(at, ViolationKind::TopologicalOrder { parent: p });
            }
        }
        let s = angular(&j.twist).norm();
        let n = linear(&j.twist).norm();
        match j.kind {
            JointKind::Revolute if (s - 1.0).abs() > UNIT_SCREW_TOL => push(at, ViolationKind::UnitScrew { norm: s }),
            JointKind::Prismatic if s != 0.0 || (n - 1.0).abs() > UNIT_SCREW_TOL => {
                push(at, ViolationKind::PrismaticRotates { norm: n })
            }
            _ => {}
        }
        if b.mass < 0.0 {
            push(at, ViolationKind::NegativeMass(b.mass));
        }
        let asym = (b.inertia - b.inertia.transpose()).amax();
        if asym > 1e-12 {
            push(at, ViolationKind::InertiaAsymmetric(asym));
        } else {
            let min = SymmetricEigen::new(b.inertia).eigenvalues.min();
            if min < -1e-12 {
                push(at, ViolationKind::InertiaIndefinite(min));
            }
        }
        if let Err(e) = j.rest_transform.check() {
            push(at, ViolationKind::RestTransform(e));
        }
    }
    out
}

/// Immutable kinematic tree.
#[derive(Clone, Debug)]
pub struct MechanismModel {
    bodies: Vec<Body>,
    gravity: Vector3<f64>,
    children: Vec<Vec<usize>>,
    inertias: Vec<SpatialMatrix>,
}

impl MechanismModel {
    pub const DEFAULT_GRAVITY: Vector3<f64> = Vector3::new(0.0, 0.0, -9.81);

    pub fn new(bodies: Vec<Body>, gravity: Vector3<f64>) -> Result<Self> {
        let violations = validate(&bodies, &gravity);
        if !violations.is_empty() {
            return Err(Error::InvalidModel(violations));
        }
        let mut children = vec![Vec::new(); bodies.len()];
        for (i, b) in bodies.iter().enumerate() {
            if let Some(p) = b.joint.parent {
                children[p].push(i);
            }
        }
        let inertias = bodies.iter().map(Body::spatial_inertia).collect();
        Ok(Self { bodies, gravity, children, inertias })
    }

    /// Planar chain of `n` identical links swinging in the x-y plane.
    ///
    /// Each body frame sits at the link's tip mass, `length` below its parent
    /// along -y, and rotates about z through the parent's tip. The link
    /// carries a uniform-rod rotational inertia `m l²/12` about x and z.
    /// Gravity is `(0, -9.81, 0)`.
    pub fn pendulum_chain(n: usize, mass: f64, length: f64) -> Result<Self> {
        let rod = mass * length * length / 12.0;
        let bodies = (0..n)
            .map(|i| Body {
                name: format!("link{}", i + 1),
                mass,
                inertia: Matrix3::from_diagonal(&Vector3::new(rod, 0.0, rod)),
                joint: Joint::revolute(
                    i.checked_sub(1),
                    Vector3::z(),
                    Vector3::new(0.0, length, 0.0),
                    SpatialTransform::from_translation(Vector3::new(0.0, -length, 0.0)),
                ),
            })
            .collect();
        Self::new(bodies, Vector3::new(0.0, -9.81, 0.0))
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        file.into_model()
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self) -> String {
        let file = ModelFile::from_model(self);
        serde_json::to_string_pretty(&file).expect("model serializes")
    }

    pub fn with_gravity(&self, gravity: Vector3<f64>) -> Result<Self> {
        Self::new(self.bodies.clone(), gravity)
    }

    pub fn num_bodies(&self) -> usize {
        self.bodies.len()
    }

    pub fn bodies(&self) -> &[Body] {
        &self.bodies
    }

    pub fn body(&self, i: usize) -> &Body {
        &self.bodies[i]
    }

    pub fn gravity(&self) -> &Vector3<f64> {
        &self.gravity
    }

    pub fn parent(&self, i: usize) -> Option<usize> {
        self.bodies[i].joint.parent
    }

    pub fn children(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    pub fn spatial_inertia(&self, i: usize) -> &SpatialMatrix {
        &self.inertias[i]
    }

    /// Strict ancestors of `i`, nearest first.
    pub fn ancestors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        std::iter::successors(self.parent(i), move |&j| self.parent(j))
    }

    /// `a ∈ anc(i) ∪ {i}`.
    pub fn supports(&self, a: usize, i: usize) -> bool {
        a == i || (a < i && self.ancestors(i).any(|j| j == a))
    }

    /// Forward pass over all `s + 1` control points of one step.
    ///
    /// `qbar` is `(s+1) × n`, row `α` holding `q^{k,α}`.
    pub fn forward_pass(&self, scheme: &GalerkinScheme, qbar: &DMatrix<f64>, dt: f64) -> Result<KinematicsCache> {
        let n = self.num_bodies();
        let m = scheme.num_nodes();
        if qbar.nrows() != m || qbar.ncols() != n {
            return Err(Error::DimensionMismatch {
                what: "control points",
                expected: format!("{m}x{n}"),
                got: format!("{}x{}", qbar.nrows(), qbar.ncols()),
            });
        }
        let qdot = scheme.diff_matrix() * qbar / dt;
        let mut cache = KinematicsCache::empty(n, m);
        self.fill(&mut cache, |a, i| (qbar[(a, i)], qdot[(a, i)]));
        Ok(cache)
    }

    /// Kinematics at a single configuration `(q, q̇)`.
    pub fn kinematics(&self, q: &DVector<f64>, qdot: &DVector<f64>) -> KinematicsCache {
        assert_eq!(q.len(), self.num_bodies());
        assert_eq!(qdot.len(), self.num_bodies());
        let mut cache = KinematicsCache::empty(self.num_bodies(), 1);
        self.fill(&mut cache, |_, i| (q[i], qdot[i]));
        cache
    }

    fn fill(&self, cache: &mut KinematicsCache, coord: impl Fn(usize, usize) -> (f64, f64)) {
        let m = cache.num_nodes;
        for (i, body) in self.bodies.iter().enumerate() {
            for a in 0..m {
                let (q, qd) = coord(a, i);
                let local = body.joint.transform(q);
                let (g, v_par) = match body.joint.parent {
                    Some(p) => {
                        let par = &cache.nodes[p * m + a];
                        (par.g * local, par.v)
                    }
                    None => (local, Twist::zeros()),
                };
                let s = g.act_twist(&body.joint.twist);
                let ainv = g.adjoint_inv();
                let mbar = ainv.transpose() * self.inertias[i] * ainv;
                let v = v_par + s * qd;
                let sdot = ad_mul(&v, &s);
                cache.nodes[i * m + a] = NodeKinematics { g, s, m: mbar, v, sdot, q, qdot: qd };
            }
        }
    }

    /// `V_g = -Σ m_i g⃗ᵀ p_i` at node `alpha`.
    pub fn potential_energy(&self, cache: &KinematicsCache, alpha: usize) -> f64 {
        -(0..self.num_bodies())
            .map(|i| self.bodies[i].mass * self.gravity.dot(&cache.node(i, alpha).g.translation))
            .sum::<f64>()
    }

    pub fn lagrangian(&self, cache: &KinematicsCache, alpha: usize) -> f64 {
        cache.kinetic_energy(alpha) - self.potential_energy(cache, alpha)
    }

    /// Total mechanical energy `K + V` at `(q, q̇)`.
    pub fn energy(&self, q: &DVector<f64>, qdot: &DVector<f64>) -> f64 {
        let c = self.kinematics(q, qdot);
        c.kinetic_energy(0) + self.potential_energy(&c, 0)
    }
}

/// Spatial quantities of one body at one control point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NodeKinematics {
    /// `g_i`, body pose in the world frame.
    pub g: SpatialTransform,
    /// `S̄_i = Ad_{g_i} S_i`.
    pub s: Twist,
    /// `M̄_i = Ad_{g_i}⁻ᵀ M_i Ad_{g_i}⁻¹`.
    pub m: SpatialMatrix,
    /// `v̄_i`, spatial velocity.
    pub v: Twist,
    /// `Ṡ̄_i = ad_{v̄_i} S̄_i`.
    pub sdot: Twist,
    pub q: f64,
    pub qdot: f64,
}

impl Default for NodeKinematics {
    fn default() -> Self {
        Self {
            g: SpatialTransform::identity(),
            s: Twist::zeros(),
            m: SpatialMatrix::zeros(),
            v: Twist::zeros(),
            sdot: Twist::zeros(),
            q: 0.0,
            qdot: 0.0,
        }
    }
}

/// Per-body, per-node kinematics stored contiguously by body.
#[derive(Clone, Debug)]
pub struct KinematicsCache {
    num_nodes: usize,
    nodes: Vec<NodeKinematics>,
}

impl KinematicsCache {
    fn empty(n: usize, m: usize) -> Self {
        Self { num_nodes: m, nodes: vec![NodeKinematics::default(); n * m] }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_bodies(&self) -> usize {
        self.nodes.len() / self.num_nodes
    }

    #[inline]
    pub fn node(&self, i: usize, alpha: usize) -> &NodeKinematics {
        &self.nodes[i * self.num_nodes + alpha]
    }

    /// `K = ½ Σ v̄ᵢᵀ M̄ᵢ v̄ᵢ` at node `alpha`.
    pub fn kinetic_energy(&self, alpha: usize) -> f64 {
        (0..self.num_bodies())
            .map(|i| {
                let nd = self.node(i, alpha);
                0.5 * nd.v.dot(&(nd.m * nd.v))
            })
            .sum()
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    #[serde(default = "default_gravity")]
    gravity: [f64; 3],
    bodies: Vec<BodyFile>,
}

fn default_gravity() -> [f64; 3] {
    [0.0, 0.0, -9.81]
}

#[derive(Serialize, Deserialize)]
struct BodyFile {
    name: String,
    parent: String,
    mass: f64,
    inertia: [[f64; 3]; 3],
    joint: JointFile,
    rest_transform: TransformFile,
}

#[derive(Serialize, Deserialize)]
struct JointFile {
    #[serde(rename = "type")]
    kind: JointKind,
    axis: [f64; 3],
    /// A point on a revolute axis, child-frame coordinates. Defaults to the
    /// frame origin.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    anchor: Option<[f64; 3]>,
}

#[derive(Serialize, Deserialize)]
struct TransformFile {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

fn mat3(rows: &[[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::from_fn(|r, c| rows[r][c])
}

fn rows3(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)]))
}

impl ModelFile {
    fn into_model(self) -> Result<MechanismModel> {
        let index = |name: &str| self.bodies.iter().position(|b| b.name == name);
        let mut bodies = Vec::with_capacity(self.bodies.len());
        for b in &self.bodies {
            let parent = match b.parent.as_str() {
                "world" => None,
                name => Some(index(name).ok_or_else(|| {
                    Error::ModelFormat(format!("body `{}` has unknown parent `{name}`", b.name))
                })?),
            };
            let rest = SpatialTransform {
                rotation: mat3(&b.rest_transform.rotation),
                translation: Vector3::from(b.rest_transform.translation),
            };
            let axis = Vector3::from(b.joint.axis);
            let joint = match b.joint.kind {
                JointKind::Revolute => {
                    Joint::revolute(parent, axis, Vector3::from(b.joint.anchor.unwrap_or_default()), rest)
                }
                JointKind::Prismatic => Joint::prismatic(parent, axis, rest),
            };
            bodies.push(Body { name: b.name.clone(), mass: b.mass, inertia: mat3(&b.inertia), joint });
        }
        MechanismModel::new(bodies, Vector3::from(self.gravity))
    }

    fn from_model(model: &MechanismModel) -> Self {
        let bodies = model
            .bodies
            .iter()
            .map(|b| {
                let s = angular(&b.joint.twist);
                let n = linear(&b.joint.twist);
                let (axis, anchor) = match b.joint.kind {
                    // n = r × s with |s| = 1; the foot of the axis is s × n.
                    JointKind::Revolute => (s, Some(s.cross(&n))),
                    JointKind::Prismatic => (n, None),
                };
                BodyFile {
                    name: b.name.clone(),
                    parent: b.joint.parent.map_or("world".into(), |p| model.bodies[p].name.clone()),
                    mass: b.mass,
                    inertia: rows3(&b.inertia),
                    joint: JointFile { kind: b.joint.kind, axis: axis.into(), anchor: anchor.map(Into::into) },
                    rest_transform: TransformFile {
                        rotation: rows3(&b.joint.rest_transform.rotation),
                        translation: b.joint.rest_transform.translation.into(),
                    },
                }
            })
            .collect();
        Self { gravity: model.gravity.into(), bodies }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample::{random_model, random_vector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn chain3_bodies() -> Vec<Body> {
        MechanismModel::pendulum_chain(3, 1.0, 1.0).unwrap().bodies().to_vec()
    }

    #[test]
    fn validate_accepts_chain() {
        assert!(validate(&chain3_bodies(), &Vector3::zeros()).is_empty());
    }

    #[test]
    fn validate_reports_order_and_screw() {
        let mut bodies = chain3_bodies();
        bodies[1].joint.parent = Some(2);
        bodies[2].joint.twist = stack(&Vector3::new(0.0, 0.0, 0.5), &Vector3::zeros());
        let v = validate(&bodies, &Vector3::zeros());
        assert!(v.contains(&Violation { body: Some(1), kind: ViolationKind::TopologicalOrder { parent: 2 } }));
        assert!(v.iter().any(|x| x.body == Some(2) && matches!(x.kind, ViolationKind::UnitScrew { .. })));
    }

    #[test]
    fn validate_reports_inertia_problems() {
        let mut bodies = chain3_bodies();
        bodies[0].inertia[(0, 1)] = 0.3;
        bodies[1].inertia = Matrix3::from_diagonal(&Vector3::new(1.0, -0.1, 1.0));
        bodies[2].mass = -1.0;
        let v = validate(&bodies, &Vector3::zeros());
        assert!(v.iter().any(|x| x.body == Some(0) && matches!(x.kind, ViolationKind::InertiaAsymmetric(_))));
        assert!(v.iter().any(|x| x.body == Some(1) && matches!(x.kind, ViolationKind::InertiaIndefinite(_))));
        assert!(v.iter().any(|x| x.body == Some(2) && matches!(x.kind, ViolationKind::NegativeMass(_))));
        assert!(MechanismModel::new(bodies, Vector3::zeros()).is_err());
    }

    #[test]
    fn forward_pass_at_rest() {
        let model = MechanismModel::pendulum_chain(3, 1.0, 1.0).unwrap();
        let scheme = GalerkinScheme::simpson();
        let cache = model.forward_pass(&scheme, &DMatrix::zeros(3, 3), 0.01).unwrap();
        for i in 0..3 {
            for a in 0..3 {
                let nd = cache.node(i, a);
                assert_eq!(nd.g.rotation, Matrix3::identity());
                assert_eq!(nd.g.translation, Vector3::new(0.0, -(i as f64 + 1.0), 0.0));
                assert_eq!(nd.v, Twist::zeros());
            }
        }
        assert!(model.forward_pass(&scheme, &DMatrix::zeros(2, 3), 0.01).is_err());
    }

    #[test]
    fn single_revolute_rotation() {
        let body = Body {
            name: "b".into(),
            mass: 1.0,
            inertia: Matrix3::identity(),
            joint: Joint::revolute(None, Vector3::z(), Vector3::zeros(), SpatialTransform::identity()),
        };
        let model = MechanismModel::new(vec![body], Vector3::zeros()).unwrap();
        let scheme = GalerkinScheme::trapezoidal();
        let cache = model.forward_pass(&scheme, &DMatrix::from_element(2, 1, FRAC_PI_2), 0.1).unwrap();
        let want = exp_twist(&stack(&Vector3::z(), &Vector3::zeros()), FRAC_PI_2);
        assert!((cache.node(0, 1).g.rotation - want.rotation).amax() < 1e-15);
    }

    #[test]
    fn linear_samples_give_unit_velocity() {
        let model = MechanismModel::pendulum_chain(2, 1.0, 1.0).unwrap();
        for scheme in [GalerkinScheme::simpson(), GalerkinScheme::lobatto(4).unwrap()] {
            let dt = 0.05;
            let qbar = DMatrix::from_fn(scheme.num_nodes(), 2, |a, _| scheme.c(a) * dt);
            let cache = model.forward_pass(&scheme, &qbar, dt).unwrap();
            for a in 0..scheme.num_nodes() {
                for i in 0..2 {
                    assert!((cache.node(i, a).qdot - 1.0).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn one_link_energies() {
        let (m, l) = (2.0, 0.7);
        let model = MechanismModel::pendulum_chain(1, m, l).unwrap();
        let izz = m * l * l / 12.0;
        let w = 1.3;
        let k = model.kinematics(&DVector::from_element(1, 0.4), &DVector::from_element(1, w)).kinetic_energy(0);
        assert!((k - (0.5 * m * l * l * w * w + 0.5 * izz * w * w)).abs() < 1e-12);
        let zero = model.kinematics(&DVector::from_element(1, 0.4), &DVector::zeros(1)).kinetic_energy(0);
        assert_eq!(zero, 0.0);
        let v = |q: f64| {
            let c = model.kinematics(&DVector::from_element(1, q), &DVector::zeros(1));
            model.potential_energy(&c, 0)
        };
        assert!((v(PI) - v(0.0) - 2.0 * m * 9.81 * l).abs() < 1e-10);
    }

    #[test]
    fn json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = random_model(&mut rng, 5);
        let text = model.to_json_string();
        let back = MechanismModel::from_json_str(&text).unwrap();
        for (a, b) in model.bodies().iter().zip(back.bodies()) {
            assert_eq!(a.joint.parent, b.joint.parent);
            assert!((a.joint.twist - b.joint.twist).amax() < 1e-12);
            assert!((a.inertia - b.inertia).amax() < 1e-15);
        }
        let err = MechanismModel::from_json_str(&text.replace("\"world\"", "\"nowhere\""));
        assert!(matches!(err, Err(Error::ModelFormat(_))));
    }

    #[test]
    fn json_default_anchor_and_gravity() {
        let text = r#"{"bodies": [{"name": "a", "parent": "world", "mass": 1.0,
            "inertia": [[1,0,0],[0,1,0],[0,0,1]],
            "joint": {"type": "revolute", "axis": [0,0,1]},
            "rest_transform": {"rotation": [[1,0,0],[0,1,0],[0,0,1]], "translation": [0,0,0]}}]}"#;
        let m = MechanismModel::from_json_str(text).unwrap();
        assert_eq!(*m.gravity(), MechanismModel::DEFAULT_GRAVITY);
        assert_eq!(m.body(0).joint.twist, stack(&Vector3::z(), &Vector3::zeros()));
    }

    #[test]
    fn spatial_inertia_symmetric_and_energy_frame_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let model = random_model(&mut rng, 6);
            let q = random_vector(&mut rng, 6, 1.5);
            let qd = random_vector(&mut rng, 6, 1.5);
            let c = model.kinematics(&q, &qd);
            let mut k_body = 0.0;
            for i in 0..6 {
                let nd = c.node(i, 0);
                assert!((nd.m - nd.m.transpose()).amax() < 1e-10);
                let vb = nd.g.adjoint_inv() * nd.v;
                k_body += 0.5 * vb.dot(&(model.spatial_inertia(i) * vb));
            }
            assert!((k_body - c.kinetic_energy(0)).abs() < 1e-10 * (1.0 + k_body));
        }
    }
}

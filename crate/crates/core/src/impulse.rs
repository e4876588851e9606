//! Instantaneous impulse collision model used on the estimator side.
//!
//! A contact at vertex `i` with surface normal `n` produces an impulse
//! `j = lambda (n + mu t)` where `t` opposes the tangential slip of the vertex
//! and `lambda` enforces Newton restitution `n . u+ = -e n . u-` on the vertex
//! velocity `u`. Several simultaneous contacts are averaged, which keeps the
//! post-collision kinetic energy at or below the pre-collision value.

use std::path::Path;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::contact::{ContactVector, SLIP_EPSILON};
use crate::dynamics::{vertex_velocity, IcosahedronFrame, InertialParams, MavState};
use crate::error::{Result, SimError};
use crate::math::skew;

/// Restitution and sliding-friction coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RestitutionParams {
    pub restitution: f64,
    pub friction: f64,
}

impl Default for RestitutionParams {
    fn default() -> Self {
        Self { restitution: 0.4, friction: 0.4 }
    }
}

impl RestitutionParams {
    pub fn new(restitution: f64, friction: f64) -> Result<Self> {
        if !((0.0..=1.0).contains(&restitution) && friction >= 0.0 && friction.is_finite()) {
            return Err(SimError::InvalidParameter(format!(
                "restitution must be in [0,1] and friction >= 0, got e={restitution}, mu={friction}"
            )));
        }
        Ok(Self { restitution, friction })
    }
}

/// Velocity and rate jumps predicted for one collision.
#[derive(Debug, Clone, PartialEq)]
pub struct CollisionDelta {
    /// World frame.
    pub dv: Vector3<f64>,
    /// Body frame.
    pub dw: Vector3<f64>,
    /// (vertex, impulse) for every active contact, impulses in the world frame.
    pub impulses: Vec<(usize, Vector3<f64>)>,
}

/// Surface-normal proxy for vertex `i`: the beam axis, pointing from the vertex
/// back towards the vehicle centre, in the world frame.
pub fn beam_normal(frame: &IcosahedronFrame, rotation: &Rotation3<f64>, i: usize) -> Result<Vector3<f64>> {
    Ok(-(rotation * frame.beam_axis(i)?))
}

/// World-frame collision matrix: vertex velocity change per unit world impulse.
fn collision_matrix(rotation: &Rotation3<f64>, r: &Vector3<f64>, inertial: &InertialParams) -> Matrix3<f64> {
    let rm = rotation.matrix();
    let rx = skew(r);
    Matrix3::identity() / inertial.mass() - rm * rx * inertial.inertia_inv() * rx * rm.transpose()
}

fn impulse_for_vertex_velocity(
    u: &Vector3<f64>,
    k: &Matrix3<f64>,
    normal: &Vector3<f64>,
    params: &RestitutionParams,
) -> Vector3<f64> {
    let un = normal.dot(u);
    if un >= 0.0 {
        return Vector3::zeros();
    }
    let ut = u - normal * un;
    let slip = ut.norm();
    let e = params.restitution;
    let nkn = normal.dot(&(k * normal));
    assert!(nkn > 0.0, "collision matrix must be positive definite");
    let mut mu = 0.0;
    let mut t = Vector3::zeros();
    if slip > SLIP_EPSILON && params.friction > 0.0 {
        t = -ut / slip;
        let nkt = normal.dot(&(k * t));
        let tkn = t.dot(&(k * normal));
        let tkt = t.dot(&(k * t));
        mu = params.friction;
        // Keep the normal denominator well away from zero.
        if nkt < 0.0 {
            mu = mu.min(0.5 * nkn / -nkt);
        }
        // Sliding friction may stop the slip but never reverse it.
        let a = -slip * nkn - (1.0 + e) * un * tkn;
        let b = -slip * nkt - (1.0 + e) * un * tkt;
        if a >= 0.0 {
            mu = 0.0;
        } else if b > 0.0 {
            mu = mu.min(-a / b);
        }
    }
    let lambda = -(1.0 + e) * un / (nkn + mu * normal.dot(&(k * t)));
    (normal + t * mu) * lambda
}

/// Impulse at vertex `i` for surface normal `normal` (unit, world, pointing
/// towards the vehicle). Zero when the vertex is separating.
pub fn vertex_impulse(
    state_pre: &MavState,
    frame: &IcosahedronFrame,
    i: usize,
    normal: &Vector3<f64>,
    params: &RestitutionParams,
    inertial: &InertialParams,
) -> Result<Vector3<f64>> {
    let u = vertex_velocity(state_pre, frame, i)?;
    let k = collision_matrix(&state_pre.rotation, frame.offset(i)?, inertial);
    Ok(impulse_for_vertex_velocity(&u, &k, normal, params))
}

/// Applies a single world-frame impulse at vertex `i`; returns (dv world, dw body).
pub fn impulse_response(
    state: &MavState,
    frame: &IcosahedronFrame,
    i: usize,
    impulse: &Vector3<f64>,
    inertial: &InertialParams,
) -> Result<(Vector3<f64>, Vector3<f64>)> {
    let r = frame.offset(i)?;
    let dv = impulse / inertial.mass();
    let dw = inertial.inertia_inv() * r.cross(&(state.rotation.inverse() * impulse));
    Ok((dv, dw))
}

/// Averaged velocity and rate jump over all active contacts.
pub fn collision_delta(
    state_pre: &MavState,
    frame: &IcosahedronFrame,
    contacts: &ContactVector,
    params: &RestitutionParams,
    inertial: &InertialParams,
) -> Result<CollisionDelta> {
    let active: Vec<usize> = contacts.active().collect();
    if active.is_empty() {
        return Err(SimError::NoActiveContacts);
    }
    let k = active.len() as f64;
    let mut dv = Vector3::zeros();
    let mut dw = Vector3::zeros();
    let mut impulses = Vec::with_capacity(active.len());
    for i in active {
        let n = match contacts.normals[i] {
            Some(n) => n,
            None => beam_normal(frame, &state_pre.rotation, i)?,
        };
        let j = vertex_impulse(state_pre, frame, i, &n, params, inertial)?;
        let (dvi, dwi) = impulse_response(state_pre, frame, i, &j, inertial)?;
        dv += dvi;
        dw += dwi;
        impulses.push((i, j));
    }
    Ok(CollisionDelta { dv: dv / k, dw: dw / k, impulses })
}

/// One recorded single-vertex impact: vertex velocities just before and after.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpactSample {
    pub pre: Vector3<f64>,
    pub post: Vector3<f64>,
    /// Zero-based vertex index.
    pub vertex: usize,
    pub rotation: UnitQuaternion<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ImpactRow {
    pre_vx: f64,
    pre_vy: f64,
    pre_vz: f64,
    post_vx: f64,
    post_vy: f64,
    post_vz: f64,
    vertex: usize,
    qw: f64,
    qx: f64,
    qy: f64,
    qz: f64,
}

impl From<&ImpactSample> for ImpactRow {
    fn from(s: &ImpactSample) -> Self {
        let q = s.rotation.quaternion();
        Self {
            pre_vx: s.pre.x,
            pre_vy: s.pre.y,
            pre_vz: s.pre.z,
            post_vx: s.post.x,
            post_vy: s.post.y,
            post_vz: s.post.z,
            vertex: s.vertex,
            qw: q.w,
            qx: q.i,
            qy: q.j,
            qz: q.k,
        }
    }
}

impl ImpactRow {
    fn into_sample(self) -> Result<ImpactSample> {
        if self.vertex >= crate::dynamics::NUM_VERTICES {
            return Err(SimError::VertexIndex(self.vertex));
        }
        let q = nalgebra::Quaternion::new(self.qw, self.qx, self.qy, self.qz);
        if !(q.norm() > 0.0) {
            return Err(SimError::InvalidParameter("zero rotation quaternion".into()));
        }
        Ok(ImpactSample {
            pre: Vector3::new(self.pre_vx, self.pre_vy, self.pre_vz),
            post: Vector3::new(self.post_vx, self.post_vy, self.post_vz),
            vertex: self.vertex,
            rotation: UnitQuaternion::from_quaternion(q),
        })
    }
}

/// Reads an impact CSV with header
/// `pre_vx,pre_vy,pre_vz,post_vx,post_vy,post_vz,vertex,qw,qx,qy,qz`.
pub fn read_impacts_csv(path: impl AsRef<Path>) -> Result<Vec<ImpactSample>> {
    let mut rdr = csv::Reader::from_path(path)?;
    rdr.deserialize::<ImpactRow>().map(|row| row?.into_sample()).collect()
}

pub fn write_impacts_csv(path: impl AsRef<Path>, samples: &[ImpactSample]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for s in samples {
        w.serialize(ImpactRow::from(s))?;
    }
    w.flush()?;
    Ok(())
}

/// Post-impact vertex velocity predicted by the model.
pub fn predict_post_velocity(
    sample: &ImpactSample,
    frame: &IcosahedronFrame,
    params: &RestitutionParams,
    inertial: &InertialParams,
) -> Result<Vector3<f64>> {
    let rot = sample.rotation.to_rotation_matrix();
    let normal = beam_normal(frame, &rot, sample.vertex)?;
    let k = collision_matrix(&rot, frame.offset(sample.vertex)?, inertial);
    let j = impulse_for_vertex_velocity(&sample.pre, &k, &normal, params);
    Ok(sample.pre + k * j)
}

/// Outcome of [`fit_restitution_friction`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitResult {
    pub restitution: f64,
    /// `None` when the dataset carries no tangential slip to identify friction.
    pub friction: Option<f64>,
    pub residual_rms: f64,
    pub samples_used: usize,
}

impl FitResult {
    /// Fitted parameters, substituting `fallback_friction` when friction was not identifiable.
    pub fn params(&self, fallback_friction: f64) -> RestitutionParams {
        RestitutionParams { restitution: self.restitution, friction: self.friction.unwrap_or(fallback_friction) }
    }
}

const FRICTION_SEARCH_MAX: f64 = 3.0;
const FRICTION_GRID: usize = 301;

/// Least-squares fit of `(e, mu)` to observed pre/post vertex velocities.
///
/// Restitution enters the normal component linearly and is solved in closed
/// form; friction is then found by a grid scan followed by golden-section
/// refinement of the full residual.
pub fn fit_restitution_friction(
    dataset: &[ImpactSample],
    frame: &IcosahedronFrame,
    inertial: &InertialParams,
) -> Result<FitResult> {
    let usable: Vec<(ImpactSample, Vector3<f64>)> = dataset
        .iter()
        .map(|s| {
            let rot = s.rotation.to_rotation_matrix();
            Ok((*s, beam_normal(frame, &rot, s.vertex)?))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|(s, n)| n.dot(&s.pre) < 0.0)
        .collect();
    if usable.len() < 2 {
        return Err(SimError::InvalidParameter(format!(
            "need at least 2 approaching impacts, got {}",
            usable.len()
        )));
    }
    let (num, den) = usable.iter().fold((0.0, 0.0), |(a, b), (s, n)| {
        let pre = n.dot(&s.pre);
        (a - n.dot(&s.post) * pre, b + pre * pre)
    });
    let restitution = (num / den).clamp(0.0, 1.0);

    let objective = |mu: f64| -> f64 {
        let p = RestitutionParams { restitution, friction: mu };
        usable
            .iter()
            .map(|(s, _)| {
                let pred = predict_post_velocity(s, frame, &p, inertial).expect("validated sample");
                (pred - s.post).norm_squared()
            })
            .sum()
    };

    let has_slip = usable.iter().any(|(s, n)| (s.pre - n * n.dot(&s.pre)).norm() > 1e-6);
    let j0 = objective(0.0);
    let j_max = objective(FRICTION_SEARCH_MAX);
    let sensitivity = (j_max - j0).abs();
    let identifiable = has_slip && sensitivity > 1e-12 * (1.0 + j0);
    let friction = identifiable.then(|| {
        let step = FRICTION_SEARCH_MAX / (FRICTION_GRID - 1) as f64;
        let best = (0..FRICTION_GRID)
            .map(|k| k as f64 * step)
            .min_by(|a, b| objective(*a).total_cmp(&objective(*b)))
            .expect("non-empty grid");
        golden_section(&objective, (best - step).max(0.0), (best + step).min(FRICTION_SEARCH_MAX))
    });
    let final_params = RestitutionParams { restitution, friction: friction.unwrap_or(0.0) };
    let sse: f64 = usable
        .iter()
        .map(|(s, _)| (predict_post_velocity(s, frame, &final_params, inertial).expect("validated") - s.post).norm_squared())
        .sum();
    Ok(FitResult {
        restitution,
        friction,
        residual_rms: (sse / usable.len() as f64).sqrt(),
        samples_used: usable.len(),
    })
}

fn golden_section(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() < 1e-14 {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    (a + b) / 2.0
}

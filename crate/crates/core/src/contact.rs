//! Compliant point-contact model at the shell vertices, obstacle geometry and
//! binary contact sensing.

use std::collections::VecDeque;

use nalgebra::{Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::dynamics::{vertex_position, vertex_velocity, IcosahedronFrame, MavState, NUM_VERTICES};
use crate::error::{Result, SimError};

/// Horizontal direction a concave obstacle opens towards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Opening {
    NegX,
    PosX,
    NegY,
    PosY,
}

impl Opening {
    fn direction(self) -> Vector3<f64> {
        match self {
            Opening::NegX => -Vector3::x(),
            Opening::PosX => Vector3::x(),
            Opening::NegY => -Vector3::y(),
            Opening::PosY => Vector3::y(),
        }
    }
}

/// Obstacle primitives. Serialized with an explicit `type` tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ObstacleShape {
    /// Solid half-space behind the plane through `point`; `normal` points out of it.
    HalfSpace {
        #[serde(rename = "point_m")]
        point: Vector3<f64>,
        normal: Vector3<f64>,
    },
    /// Axis-aligned box.
    Box {
        #[serde(rename = "center_m")]
        center: Vector3<f64>,
        #[serde(rename = "half_extents_m")]
        half_extents: Vector3<f64>,
    },
    /// Vertical cylinder standing on `base` (bottom centre).
    Cylinder {
        #[serde(rename = "base_m")]
        base: Vector3<f64>,
        #[serde(rename = "radius_m")]
        radius: f64,
        #[serde(rename = "height_m")]
        height: f64,
    },
    /// U-shaped trap made of three boxes: a back wall and two side walls, open
    /// towards `opening`. `back_center` is the centre of the back wall's inner
    /// face at floor level.
    ConcaveU {
        #[serde(rename = "back_center_m")]
        back_center: Vector3<f64>,
        opening: Opening,
        #[serde(rename = "inner_width_m")]
        inner_width: f64,
        #[serde(rename = "depth_m")]
        depth: f64,
        #[serde(rename = "height_m")]
        height: f64,
        #[serde(rename = "thickness_m")]
        thickness: f64,
    },
}

/// Result of a point query: `depth > 0` iff the point is inside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Penetration {
    pub depth: f64,
    /// Outward normal of the obstacle surface nearest the point.
    pub normal: Vector3<f64>,
}

impl ObstacleShape {
    pub fn half_space(point: Vector3<f64>, normal: Vector3<f64>) -> Result<Self> {
        let s = Self::HalfSpace { point, normal };
        s.validate()?;
        Ok(s)
    }

    pub fn floor() -> Self {
        Self::HalfSpace { point: Vector3::zeros(), normal: Vector3::z() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SimError::InvalidParameter(m.to_string()));
        match self {
            ObstacleShape::HalfSpace { normal, point } => {
                if (normal.norm() - 1.0).abs() > 1e-9 || !point.iter().all(|x| x.is_finite()) {
                    return bad("half-space normal must be unit length");
                }
            }
            ObstacleShape::Box { half_extents, .. } => {
                if half_extents.iter().any(|h| !(*h > 0.0)) {
                    return bad("box half extents must be > 0");
                }
            }
            ObstacleShape::Cylinder { radius, height, .. } => {
                if !(*radius > 0.0 && *height > 0.0) {
                    return bad("cylinder radius and height must be > 0");
                }
            }
            ObstacleShape::ConcaveU { inner_width, depth, height, thickness, .. } => {
                if !(*inner_width > 0.0 && *depth > 0.0 && *height > 0.0 && *thickness > 0.0) {
                    return bad("concave obstacle dimensions must be > 0");
                }
            }
        }
        Ok(())
    }

    /// Signed distance (negative inside) and outward normal.
    pub fn signed_distance(&self, point: &Vector3<f64>) -> (f64, Vector3<f64>) {
        match self {
            ObstacleShape::HalfSpace { point: p0, normal } => ((point - p0).dot(normal), *normal),
            ObstacleShape::Box { center, half_extents } => box_sdf(center, half_extents, point),
            ObstacleShape::Cylinder { base, radius, height } => cylinder_sdf(base, *radius, *height, point),
            ObstacleShape::ConcaveU { .. } => self
                .u_boxes()
                .iter()
                .map(|(c, h)| box_sdf(c, h, point))
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .expect("three boxes"),
        }
    }

    /// The (center, half_extents) boxes of a concave obstacle. Empty for other shapes.
    pub fn u_boxes(&self) -> Vec<(Vector3<f64>, Vector3<f64>)> {
        let ObstacleShape::ConcaveU { back_center, opening, inner_width, depth, height, thickness } = self
        else {
            return Vec::new();
        };
        let out = opening.direction();
        let lateral = Vector3::z().cross(&out);
        let abs = |v: Vector3<f64>| v.map(f64::abs);
        let up = Vector3::z() * (height / 2.0);
        let back_c = back_center - out * (thickness / 2.0) + up;
        let back_h = abs(out) * (thickness / 2.0)
            + abs(lateral) * (inner_width / 2.0 + thickness)
            + Vector3::z() * (height / 2.0);
        let side_h = abs(out) * (depth / 2.0) + abs(lateral) * (thickness / 2.0) + Vector3::z() * (height / 2.0);
        let side_off = lateral * (inner_width / 2.0 + thickness / 2.0);
        let side_c = back_center + out * (depth / 2.0) + up;
        vec![(back_c, back_h), (side_c + side_off, side_h), (side_c - side_off, side_h)]
    }
}

fn box_sdf(center: &Vector3<f64>, half: &Vector3<f64>, point: &Vector3<f64>) -> (f64, Vector3<f64>) {
    let q = point - center;
    let excess = q.abs() - half;
    let outside = excess.map(|e| e.max(0.0));
    let out_norm = outside.norm();
    if out_norm > 0.0 {
        let n = outside.component_mul(&q.map(f64::signum)) / out_norm;
        return (out_norm, n);
    }
    // Inside: nearest face is the axis with the largest (least negative) excess.
    let axis = excess.imax();
    let mut n = Vector3::zeros();
    n[axis] = if q[axis] >= 0.0 { 1.0 } else { -1.0 };
    (excess[axis], n)
}

fn cylinder_sdf(base: &Vector3<f64>, radius: f64, height: f64, point: &Vector3<f64>) -> (f64, Vector3<f64>) {
    let rel = point - base;
    let radial = Vector3::new(rel.x, rel.y, 0.0);
    let rho = radial.norm();
    let radial_dir = if rho > 1e-12 { radial / rho } else { Vector3::x() };
    let d_rad = rho - radius;
    let (d_z, z_dir) = if rel.z < height / 2.0 { (-rel.z, -Vector3::z()) } else { (rel.z - height, Vector3::z()) };
    if d_rad > 0.0 || d_z > 0.0 {
        let a = d_rad.max(0.0);
        let b = d_z.max(0.0);
        let dist = (a * a + b * b).sqrt();
        let n = (radial_dir * a + z_dir * b) / dist;
        return (dist, n);
    }
    if d_rad > d_z {
        (d_rad, radial_dir)
    } else {
        (d_z, z_dir)
    }
}

/// Penetration depth and outward normal of `point` against `shape`.
pub fn query_penetration(shape: &ObstacleShape, point: &Vector3<f64>) -> Penetration {
    let (sd, normal) = shape.signed_distance(point);
    Penetration { depth: (-sd).max(0.0), normal }
}

/// Penalty contact coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContactMaterial {
    /// N/m
    #[serde(rename = "stiffness_n_per_m")]
    pub stiffness: f64,
    /// N s/m
    #[serde(rename = "damping_ns_per_m")]
    pub damping: f64,
    pub friction: f64,
}

impl Default for ContactMaterial {
    fn default() -> Self {
        Self { stiffness: 4000.0, damping: 15.0, friction: 0.4 }
    }
}

impl ContactMaterial {
    pub fn validate(&self) -> Result<()> {
        if !(self.stiffness > 0.0 && self.damping >= 0.0 && self.friction >= 0.0) {
            return Err(SimError::InvalidParameter(format!("invalid contact material {self:?}")));
        }
        Ok(())
    }
}

/// Tangential speeds below this produce no friction.
pub const SLIP_EPSILON: f64 = 1e-9;

/// Spring-damper normal force plus Coulomb sliding friction at one node.
///
/// The normal magnitude `k_p d - k_d (v . n)` is clamped at zero so the contact
/// never pulls. Friction opposes the tangential node velocity.
pub fn node_contact_force(depth: f64, normal: &Vector3<f64>, node_velocity: &Vector3<f64>, mat: &ContactMaterial) -> Vector3<f64> {
    if depth <= 0.0 {
        return Vector3::zeros();
    }
    let vn = node_velocity.dot(normal);
    let fn_mag = (mat.stiffness * depth - mat.damping * vn).max(0.0);
    let vt = node_velocity - normal * vn;
    let vt_norm = vt.norm();
    let friction = if vt_norm > SLIP_EPSILON { -vt / vt_norm * (mat.friction * fn_mag) } else { Vector3::zeros() };
    normal * fn_mag + friction
}

/// Per-vertex contact geometry for one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactScan {
    /// For each vertex, every obstacle it penetrates: (obstacle index, penetration).
    pub vertices: [Vec<(usize, Penetration)>; NUM_VERTICES],
}

impl ContactScan {
    pub fn deepest(&self) -> f64 {
        self.vertices
            .iter()
            .flat_map(|v| v.iter().map(|(_, p)| p.depth))
            .fold(0.0, f64::max)
    }

    pub fn flags(&self, trigger_depth: f64) -> [bool; NUM_VERTICES] {
        std::array::from_fn(|i| self.vertices[i].iter().any(|(_, p)| p.depth >= trigger_depth))
    }

    pub fn any(&self) -> bool {
        self.vertices.iter().any(|v| !v.is_empty())
    }
}

pub fn scan_contacts(state: &MavState, frame: &IcosahedronFrame, obstacles: &[ObstacleShape]) -> ContactScan {
    let vertices = std::array::from_fn(|i| {
        let x = vertex_position(state, frame, i).expect("index < 12");
        obstacles
            .iter()
            .enumerate()
            .filter_map(|(k, o)| {
                let p = query_penetration(o, &x);
                (p.depth > 0.0).then_some((k, p))
            })
            .collect()
    });
    ContactScan { vertices }
}

/// Total contact force (world) and torque (body) from all penetrating vertices.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ContactWrench {
    pub force: Vector3<f64>,
    pub torque: Vector3<f64>,
}

pub fn contact_wrench_from_scan(state: &MavState, frame: &IcosahedronFrame, scan: &ContactScan, mat: &ContactMaterial) -> ContactWrench {
    let mut out = ContactWrench::default();
    for (i, hits) in scan.vertices.iter().enumerate() {
        if hits.is_empty() {
            continue;
        }
        let v = vertex_velocity(state, frame, i).expect("index < 12");
        let r = frame.vertices()[i];
        for (_, p) in hits {
            let f = node_contact_force(p.depth, &p.normal, &v, mat);
            out.force += f;
            // (R r) x f expressed in the body frame is r x (R^T f).
            out.torque += r.cross(&(state.rotation.inverse() * f));
        }
    }
    out
}

pub fn total_contact_wrench(state: &MavState, frame: &IcosahedronFrame, obstacles: &[ObstacleShape], mat: &ContactMaterial) -> ContactWrench {
    let scan = scan_contacts(state, frame, obstacles);
    contact_wrench_from_scan(state, frame, &scan, mat)
}

/// Binary contact flags plus per-contact surface-normal estimates (world frame).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ContactVector {
    pub flags: [bool; NUM_VERTICES],
    pub normals: [Option<Vector3<f64>>; NUM_VERTICES],
}

impl ContactVector {
    pub fn from_flags(flags: [bool; NUM_VERTICES]) -> Self {
        Self { flags, normals: [None; NUM_VERTICES] }
    }

    pub fn any(&self) -> bool {
        self.flags.iter().any(|&f| f)
    }

    pub fn active(&self) -> impl Iterator<Item = usize> + '_ {
        self.flags.iter().enumerate().filter(|(_, &f)| f).map(|(i, _)| i)
    }

    pub fn count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    /// Fills normals for active flags with the beam-axis convention under `rotation`.
    pub fn with_beam_normals(mut self, frame: &IcosahedronFrame, rotation: &Rotation3<f64>) -> Self {
        for i in 0..NUM_VERTICES {
            self.normals[i] = self.flags[i].then(|| crate::impulse::beam_normal(frame, rotation, i).expect("index < 12"));
        }
        self
    }
}

/// Threshold sensor with a fixed delivery delay, sampled at the physics rate.
#[derive(Debug, Clone)]
pub struct ContactSensor {
    trigger_depth: f64,
    delay_steps: usize,
    history: VecDeque<[bool; NUM_VERTICES]>,
}

impl ContactSensor {
    /// `latency` is rounded to a whole number of physics steps of length `dt`.
    pub fn new(trigger_depth: f64, latency: f64, dt: f64) -> Result<Self> {
        if !(latency >= 0.0 && dt > 0.0 && trigger_depth >= 0.0) {
            return Err(SimError::InvalidParameter("sensor latency, dt and trigger depth must be non-negative".into()));
        }
        let delay_steps = (latency / dt).round() as usize;
        Ok(Self { trigger_depth, delay_steps, history: VecDeque::with_capacity(delay_steps + 1) })
    }

    pub fn delay_steps(&self) -> usize {
        self.delay_steps
    }

    /// Records the current geometric contact state and returns the flags as seen
    /// `latency` seconds ago (all false before enough history exists).
    pub fn sense(&mut self, state: &MavState, frame: &IcosahedronFrame, obstacles: &[ObstacleShape]) -> [bool; NUM_VERTICES] {
        let scan = scan_contacts(state, frame, obstacles);
        self.push_scan(&scan)
    }

    pub fn push_scan(&mut self, scan: &ContactScan) -> [bool; NUM_VERTICES] {
        self.history.push_back(scan.flags(self.trigger_depth));
        if self.history.len() > self.delay_steps + 1 {
            self.history.pop_front();
        }
        if self.history.len() == self.delay_steps + 1 {
            self.history[0]
        } else {
            [false; NUM_VERTICES]
        }
    }
}

/// One-shot geometric sensing with zero latency.
pub fn sense_contacts(state: &MavState, frame: &IcosahedronFrame, obstacles: &[ObstacleShape], trigger_depth: f64) -> ContactVector {
    ContactVector::from_flags(scan_contacts(state, frame, obstacles).flags(trigger_depth))
}

//! Rigid-body quadrotor dynamics, icosahedral shell geometry and fixed-step integration.
//!
//! Conventions: position and linear velocity live in the world frame, angular
//! velocity in the body frame, and `rotation` maps body vectors to world.
//! Motor thrust acts along body +z; [`ActuatorWrench::force`] is that thrust
//! already rotated into the world frame. Torques are body-frame.

use nalgebra::{Matrix3, Matrix4, Rotation3, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite_vec, Result, SimError};
use crate::math::{exp_so3, orthonormalize, skew};

pub const NUM_VERTICES: usize = 12;

/// Mass, inertia and gravity of the vehicle.
#[derive(Debug, Clone, PartialEq)]
pub struct InertialParams {
    mass: f64,
    inertia: Matrix3<f64>,
    inertia_inv: Matrix3<f64>,
    gravity: Vector3<f64>,
}

impl InertialParams {
    pub fn new(mass: f64, inertia: Matrix3<f64>, gravity: Vector3<f64>) -> Result<Self> {
        if !(mass.is_finite() && mass > 0.0) {
            return Err(SimError::InvalidParameter(format!("mass must be > 0, got {mass}")));
        }
        if (inertia - inertia.transpose()).abs().max() > 1e-12 {
            return Err(SimError::InvalidParameter("inertia must be symmetric".into()));
        }
        if inertia.cholesky().is_none() {
            return Err(SimError::InvalidParameter("inertia must be positive definite".into()));
        }
        ensure_finite_vec(&gravity, "gravity")?;
        let inertia_inv = inertia
            .try_inverse()
            .ok_or_else(|| SimError::InvalidParameter("inertia not invertible".into()))?;
        Ok(Self { mass, inertia, inertia_inv, gravity })
    }

    pub fn diagonal(mass: f64, diag: [f64; 3], gravity: Vector3<f64>) -> Result<Self> {
        Self::new(mass, Matrix3::from_diagonal(&Vector3::from(diag)), gravity)
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn inertia(&self) -> &Matrix3<f64> {
        &self.inertia
    }

    pub fn inertia_inv(&self) -> &Matrix3<f64> {
        &self.inertia_inv
    }

    pub fn gravity(&self) -> &Vector3<f64> {
        &self.gravity
    }
}

impl Default for InertialParams {
    /// 0.25 kg, diag(8e-4, 8e-4, 1.2e-3) kg m^2, g = (0, 0, -9.81).
    fn default() -> Self {
        Self::diagonal(0.25, [8e-4, 8e-4, 1.2e-3], Vector3::new(0.0, 0.0, -9.81))
            .expect("default inertial parameters are valid")
    }
}

/// Pose and twist of the vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MavState {
    pub position: Vector3<f64>,
    pub rotation: Rotation3<f64>,
    pub velocity: Vector3<f64>,
    /// Body-frame angular rate.
    pub angular_velocity: Vector3<f64>,
}

impl MavState {
    pub fn at_rest(position: Vector3<f64>) -> Self {
        Self {
            position,
            rotation: Rotation3::identity(),
            velocity: Vector3::zeros(),
            angular_velocity: Vector3::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|x| x.is_finite())
            && self.velocity.iter().all(|x| x.is_finite())
            && self.angular_velocity.iter().all(|x| x.is_finite())
            && self.rotation.matrix().iter().all(|x| x.is_finite())
    }

    /// Translational plus rotational kinetic energy.
    pub fn kinetic_energy(&self, params: &InertialParams) -> f64 {
        let w = &self.angular_velocity;
        0.5 * params.mass() * self.velocity.norm_squared() + 0.5 * w.dot(&(params.inertia() * w))
    }

    /// World-frame angular momentum about the centre of mass.
    pub fn angular_momentum_world(&self, params: &InertialParams) -> Vector3<f64> {
        self.rotation * (params.inertia() * self.angular_velocity)
    }
}

/// The twelve shell vertices of a regular icosahedron, in the body frame.
#[derive(Debug, Clone, PartialEq)]
pub struct IcosahedronFrame {
    vertices: [Vector3<f64>; NUM_VERTICES],
    radius: f64,
}

impl IcosahedronFrame {
    /// Regular icosahedron with circumradius `radius`.
    ///
    /// Vertex order: cyclic permutations of (0, ±1, ±φ); vertices `2k` and `2k+1`
    /// are *not* antipodal, use [`IcosahedronFrame::antipode`] for that.
    pub fn regular(radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(SimError::InvalidParameter(format!("shell radius must be > 0, got {radius}")));
        }
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        let raw = [
            [0.0, 1.0, phi],
            [0.0, -1.0, phi],
            [0.0, 1.0, -phi],
            [0.0, -1.0, -phi],
            [1.0, phi, 0.0],
            [-1.0, phi, 0.0],
            [1.0, -phi, 0.0],
            [-1.0, -phi, 0.0],
            [phi, 0.0, 1.0],
            [phi, 0.0, -1.0],
            [-phi, 0.0, 1.0],
            [-phi, 0.0, -1.0],
        ];
        let scale = radius / (1.0 + phi * phi).sqrt();
        let vertices = raw.map(|v| Vector3::from(v) * scale);
        Ok(Self { vertices, radius })
    }

    /// The same shell turned rigidly by `r` inside the body frame.
    pub fn rotated(&self, r: &Rotation3<f64>) -> Self {
        Self { vertices: self.vertices.map(|v| r * v), radius: self.radius }
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn vertices(&self) -> &[Vector3<f64>; NUM_VERTICES] {
        &self.vertices
    }

    /// Body-frame offset `r_i` of vertex `i` (zero-based).
    pub fn offset(&self, i: usize) -> Result<&Vector3<f64>> {
        self.vertices.get(i).ok_or(SimError::VertexIndex(i))
    }

    /// Unit beam axis of vertex `i`, pointing from the centre towards the vertex.
    pub fn beam_axis(&self, i: usize) -> Result<Vector3<f64>> {
        Ok(self.offset(i)? / self.radius)
    }

    pub fn antipode(&self, i: usize) -> Result<usize> {
        let r = self.offset(i)?;
        Ok(self
            .vertices
            .iter()
            .position(|v| (v + r).norm() < 1e-9 * self.radius)
            .expect("regular icosahedron vertices come in antipodal pairs"))
    }
}

impl Default for IcosahedronFrame {
    fn default() -> Self {
        Self::regular(0.15).expect("default shell radius is valid")
    }
}

/// Total actuator wrench. `force` is world-frame, `torque` body-frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ActuatorWrench {
    pub force: Vector3<f64>,
    pub torque: Vector3<f64>,
    /// Per-motor forces when the wrench came out of the mixer.
    pub motor_forces: Option<[f64; 4]>,
}

impl ActuatorWrench {
    pub fn new(force: Vector3<f64>, torque: Vector3<f64>) -> Self {
        Self { force, torque, motor_forces: None }
    }

    /// Body-z thrust of magnitude `thrust` rotated into the world frame.
    pub fn from_thrust(rotation: &Rotation3<f64>, thrust: f64, torque: Vector3<f64>) -> Self {
        Self::new(rotation * Vector3::new(0.0, 0.0, thrust), torque)
    }

    /// Adds an external world-frame force and body-frame torque.
    pub fn with_external(mut self, force: Vector3<f64>, torque: Vector3<f64>) -> Self {
        self.force += force;
        self.torque += torque;
        self
    }
}

/// Time derivative of [`MavState`].
#[derive(Debug, Clone, PartialEq)]
pub struct StateDerivative {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub rotation: Matrix3<f64>,
    pub angular_velocity: Vector3<f64>,
}

/// Rigid-body equations of motion:
/// `p' = v`, `v' = f/m + g`, `R' = R [w]x`, `w' = I^-1 (tau - w x I w)`.
pub fn derivative(
    state: &MavState,
    wrench: &ActuatorWrench,
    params: &InertialParams,
) -> Result<StateDerivative> {
    if !state.is_finite() {
        return Err(SimError::NonFinite("state"));
    }
    ensure_finite_vec(&wrench.force, "wrench force")?;
    ensure_finite_vec(&wrench.torque, "wrench torque")?;
    let w = &state.angular_velocity;
    let gyro = w.cross(&(params.inertia() * w));
    Ok(StateDerivative {
        position: state.velocity,
        velocity: wrench.force / params.mass() + params.gravity(),
        rotation: state.rotation.matrix() * skew(w),
        angular_velocity: params.inertia_inv() * (wrench.torque - gyro),
    })
}

/// Fixed-step integration scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    /// Velocities first, then positions with the updated velocities; attitude
    /// through the exponential map. First order, symplectic.
    #[default]
    SemiImplicitEuler,
    /// Classical fourth-order Runge-Kutta on (p, v, R, w), R re-orthonormalised.
    Rk4,
}

/// Advances `state` by `dt` under a wrench held constant over the step.
pub fn integrate_step(
    state: &MavState,
    wrench: &ActuatorWrench,
    params: &InertialParams,
    dt: f64,
    integrator: Integrator,
) -> Result<MavState> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(SimError::InvalidParameter(format!("dt must be > 0, got {dt}")));
    }
    let next = match integrator {
        Integrator::SemiImplicitEuler => {
            let d = derivative(state, wrench, params)?;
            let velocity = state.velocity + d.velocity * dt;
            let angular_velocity = state.angular_velocity + d.angular_velocity * dt;
            let rotation = state.rotation * exp_so3(&(angular_velocity * dt));
            MavState {
                position: state.position + velocity * dt,
                rotation: orthonormalize(rotation.matrix()),
                velocity,
                angular_velocity,
            }
        }
        Integrator::Rk4 => rk4_step(state, wrench, params, dt)?,
    };
    if !next.is_finite() {
        return Err(SimError::NonFinite("integrated state"));
    }
    Ok(next)
}

fn rk4_step(
    state: &MavState,
    wrench: &ActuatorWrench,
    params: &InertialParams,
    dt: f64,
) -> Result<MavState> {
    // Stages carry R as a raw matrix; it is projected back onto SO(3) at the end.
    let shifted = |d: &StateDerivative, h: f64| -> (MavState, Matrix3<f64>) {
        let m = state.rotation.matrix() + d.rotation * h;
        (
            MavState {
                position: state.position + d.position * h,
                rotation: Rotation3::from_matrix_unchecked(m),
                velocity: state.velocity + d.velocity * h,
                angular_velocity: state.angular_velocity + d.angular_velocity * h,
            },
            m,
        )
    };
    let k1 = derivative(state, wrench, params)?;
    let (s2, _) = shifted(&k1, dt / 2.0);
    let k2 = derivative(&s2, wrench, params)?;
    let (s3, _) = shifted(&k2, dt / 2.0);
    let k3 = derivative(&s3, wrench, params)?;
    let (s4, _) = shifted(&k3, dt);
    let k4 = derivative(&s4, wrench, params)?;
    let comb = |a: Vector3<f64>, b: Vector3<f64>, c: Vector3<f64>, d: Vector3<f64>| {
        (a + b * 2.0 + c * 2.0 + d) * (dt / 6.0)
    };
    let rot = state.rotation.matrix()
        + (k1.rotation + k2.rotation * 2.0 + k3.rotation * 2.0 + k4.rotation) * (dt / 6.0);
    Ok(MavState {
        position: state.position + comb(k1.position, k2.position, k3.position, k4.position),
        rotation: orthonormalize(&rot),
        velocity: state.velocity + comb(k1.velocity, k2.velocity, k3.velocity, k4.velocity),
        angular_velocity: state.angular_velocity
            + comb(k1.angular_velocity, k2.angular_velocity, k3.angular_velocity, k4.angular_velocity),
    })
}

/// World position of vertex `i`: `p + R r_i`.
pub fn vertex_position(state: &MavState, frame: &IcosahedronFrame, i: usize) -> Result<Vector3<f64>> {
    Ok(state.position + state.rotation * frame.offset(i)?)
}

/// World velocity of vertex `i`: `v + R (w x r_i)` with `w` in the body frame.
pub fn vertex_velocity(state: &MavState, frame: &IcosahedronFrame, i: usize) -> Result<Vector3<f64>> {
    let r = frame.offset(i)?;
    Ok(state.velocity + state.rotation * state.angular_velocity.cross(r))
}

/// Lowest vertex altitude (world z).
pub fn lowest_vertex_altitude(state: &MavState, frame: &IcosahedronFrame) -> f64 {
    frame
        .vertices()
        .iter()
        .map(|r| (state.position + state.rotation * r).z)
        .fold(f64::INFINITY, f64::min)
}

/// X-configuration motor allocation with per-motor saturation.
///
/// Motors sit at `(±d, ±d, 0)` with `d = arm / sqrt(2)`; order is front-left,
/// front-right, rear-right, rear-left with alternating spin directions.
#[derive(Debug, Clone, PartialEq)]
pub struct MotorMixer {
    allocation: Matrix4<f64>,
    allocation_inv: Matrix4<f64>,
    max_motor_force: f64,
}

impl MotorMixer {
    pub fn new(arm_length: f64, torque_coefficient: f64, max_motor_force: f64) -> Result<Self> {
        if !(arm_length > 0.0 && torque_coefficient > 0.0 && max_motor_force > 0.0) {
            return Err(SimError::InvalidParameter("mixer parameters must be > 0".into()));
        }
        let d = arm_length / 2f64.sqrt();
        let pos = [(d, d), (d, -d), (-d, -d), (-d, d)];
        let spin = [1.0, -1.0, 1.0, -1.0];
        let mut a = Matrix4::zeros();
        for (k, ((x, y), s)) in pos.iter().zip(spin).enumerate() {
            a[(0, k)] = 1.0;
            a[(1, k)] = *y;
            a[(2, k)] = -*x;
            a[(3, k)] = s * torque_coefficient;
        }
        let allocation_inv = a
            .try_inverse()
            .ok_or_else(|| SimError::InvalidParameter("singular mixer".into()))?;
        Ok(Self { allocation: a, allocation_inv, max_motor_force })
    }

    pub fn max_thrust(&self) -> f64 {
        4.0 * self.max_motor_force
    }

    pub fn max_motor_force(&self) -> f64 {
        self.max_motor_force
    }

    /// Allocates `(thrust, torque)` to motors, then returns the wrench actually
    /// produced. Priorities, highest first: roll and pitch torque, collective
    /// thrust, yaw torque. Roll/pitch is scaled down only if its spread alone
    /// exceeds the motor range; yaw gets whatever headroom is left.
    pub fn mix(&self, rotation: &Rotation3<f64>, thrust: f64, torque: Vector3<f64>) -> ActuatorWrench {
        let fmax = self.max_motor_force;
        let rp = self.allocation_inv * Vector4::new(0.0, torque.x, torque.y, 0.0);
        let spread = rp.max() - rp.min();
        let rp = if spread > fmax { rp * (fmax / spread) } else { rp };
        let lo = -rp.min();
        let collective = (thrust / 4.0).min(fmax - rp.max()).max(lo);
        let yaw = self.allocation_inv * Vector4::new(0.0, 0.0, 0.0, torque.z);
        let mut frac: f64 = 1.0;
        for k in 0..4 {
            let base = collective + rp[k];
            if yaw[k] > 0.0 {
                frac = frac.min((fmax - base) / yaw[k]);
            } else if yaw[k] < 0.0 {
                frac = frac.min(base / -yaw[k]);
            }
        }
        let diff = rp + yaw * frac.max(0.0);
        let motors = diff.map(|f| (f + collective).clamp(0.0, self.max_motor_force));
        let out = self.allocation * motors;
        let mut w = ActuatorWrench::from_thrust(rotation, out[0], Vector3::new(out[1], out[2], out[3]));
        w.motor_forces = Some([motors[0], motors[1], motors[2], motors[3]]);
        w
    }
}

//! Cascaded flight controller, reflexive recovery setpoint and mode supervisor.
//!
//! Position errors become a commanded thrust acceleration (specific force),
//! which fixes the desired body z axis and collective thrust. Attitude errors
//! become body rate commands, tracked by a rate loop that outputs torque.

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::contact::ContactVector;
use crate::dynamics::{IcosahedronFrame, InertialParams, MavState};
use crate::error::{Result, SimError};
use crate::impulse::beam_normal;
use crate::math::{exp_so3, log_so3, try_unit, wrap_angle};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionReference {
    pub p_des: Vector3<f64>,
    pub v_des: Vector3<f64>,
    /// Feedforward acceleration (m/s^2).
    #[serde(default)]
    pub a_des: Vector3<f64>,
    pub psi_des: f64,
}

impl PositionReference {
    pub fn hold(p: Vector3<f64>, psi: f64) -> Self {
        Self { p_des: p, v_des: Vector3::zeros(), a_des: Vector3::zeros(), psi_des: wrap_angle(psi) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerGains {
    /// Position and velocity gains, per axis (1/s^2, 1/s).
    #[serde(rename = "kp_per_s2")]
    pub kp: [f64; 3],
    #[serde(rename = "kv_per_s")]
    pub kv: [f64; 3],
    /// Attitude gain (rad/s per rad).
    #[serde(rename = "k_attitude_per_s")]
    pub k_attitude: [f64; 3],
    /// Rate loop gains (1/s, dimensionless), scaled by the inertia.
    #[serde(rename = "k_rate_per_s")]
    pub k_rate: [f64; 3],
    pub kd_rate: [f64; 3],
    /// Maximum tilt of the commanded thrust from vertical (rad).
    #[serde(rename = "max_tilt_rad")]
    pub max_tilt: f64,
    /// Bounds on the commanded thrust acceleration (m/s^2).
    #[serde(rename = "min_thrust_accel_mps2")]
    pub min_thrust_accel: f64,
    #[serde(rename = "max_thrust_accel_mps2")]
    pub max_thrust_accel: f64,
    /// Maximum commanded body rate (rad/s), bounding the roll-pitch part and the yaw part separately.
    #[serde(rename = "max_rate_radps")]
    pub max_rate: f64,
}

impl Default for ControllerGains {
    fn default() -> Self {
        Self {
            kp: [6.0, 6.0, 8.0],
            kv: [4.5, 4.5, 5.0],
            k_attitude: [12.0, 12.0, 6.0],
            k_rate: [60.0, 60.0, 30.0],
            kd_rate: [0.01, 0.01, 0.0],
            max_tilt: 45f64.to_radians(),
            min_thrust_accel: 2.0,
            max_thrust_accel: 24.0,
            max_rate: 20.0,
        }
    }
}

impl ControllerGains {
    pub fn validate(&self) -> Result<()> {
        let ok = self
            .kp
            .iter()
            .chain(&self.kv)
            .chain(&self.k_attitude)
            .chain(&self.k_rate)
            .all(|g| g.is_finite() && *g > 0.0)
            && self.kd_rate.iter().all(|g| g.is_finite() && *g >= 0.0)
            && self.max_tilt > 0.0
            && self.max_tilt < std::f64::consts::FRAC_PI_2
            && self.min_thrust_accel > 0.0
            && self.max_thrust_accel > self.min_thrust_accel
            && self.max_rate > 0.0;
        if ok {
            Ok(())
        } else {
            Err(SimError::InvalidParameter("controller gains must be positive with consistent limits".into()))
        }
    }
}

/// Clamps a thrust acceleration to the envelope, keeping the vertical part first.
pub fn saturate_thrust_accel(a: &Vector3<f64>, gains: &ControllerGains) -> Vector3<f64> {
    let z = a.z.clamp(gains.min_thrust_accel, gains.max_thrust_accel);
    let h = Vector3::new(a.x, a.y, 0.0);
    let h_max = (z * gains.max_tilt.tan()).min((gains.max_thrust_accel.powi(2) - z * z).max(0.0).sqrt());
    let hn = h.norm();
    let h = if hn > h_max { h * (h_max / hn) } else { h };
    Vector3::new(h.x, h.y, z)
}

/// PD position law with acceleration feedforward and gravity compensation; returns the commanded thrust
/// acceleration (world), equal to `-g` at zero error.
pub fn position_control(
    est: &MavState,
    reference: &PositionReference,
    gains: &ControllerGains,
    gravity: &Vector3<f64>,
) -> Vector3<f64> {
    let ep = reference.p_des - est.position;
    let ev = reference.v_des - est.velocity;
    let a = Vector3::from_fn(|k, _| gains.kp[k] * ep[k] + gains.kv[k] * ev[k]) + reference.a_des - gravity;
    saturate_thrust_accel(&a, gains)
}

/// Desired attitude and collective thrust for a thrust acceleration.
/// Returns `None` at the free-fall singularity, where the caller keeps the
/// previous attitude.
pub fn accel_to_attitude_thrust(a_cmd: &Vector3<f64>, psi_des: f64, mass: f64) -> Option<(Rotation3<f64>, f64)> {
    let b3 = try_unit(a_cmd, 1e-9)?;
    let heading = Vector3::new(psi_des.cos(), psi_des.sin(), 0.0);
    let b2 = try_unit(&b3.cross(&heading), 1e-9)?;
    let b1 = b2.cross(&b3);
    let r = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[b1, b2, b3]));
    Some((r, mass * a_cmd.norm()))
}

/// Tilt-prioritised proportional attitude law. The attitude error is split into
/// a reduced (thrust axis) part and a residual rotation about body z; each part
/// is saturated separately so a large heading error never eats into the tilt
/// correction.
pub fn attitude_control(r_est: &Rotation3<f64>, r_des: &Rotation3<f64>, gains: &ControllerGains) -> Vector3<f64> {
    let r_err = r_est.inverse() * r_des;
    let z_des = r_err * Vector3::z();
    let axis = Vector3::z().cross(&z_des);
    let angle = axis.norm().atan2(z_des.z);
    let tilt = match try_unit(&axis, 1e-12) {
        Some(a) => a * angle,
        // Aligned or exactly inverted thrust axes; flip about body x when inverted.
        None if z_des.z < 0.0 => Vector3::new(std::f64::consts::PI, 0.0, 0.0),
        None => Vector3::zeros(),
    };
    let r_yaw = exp_so3(&tilt).inverse() * r_err;
    let yaw = log_so3(&r_yaw).z;
    let mut w_tilt = Vector3::new(gains.k_attitude[0] * tilt.x, gains.k_attitude[1] * tilt.y, 0.0);
    let n = w_tilt.norm();
    if n > gains.max_rate {
        w_tilt *= gains.max_rate / n;
    }
    let w_yaw = (gains.k_attitude[2] * yaw).clamp(-gains.max_rate, gains.max_rate);
    Vector3::new(w_tilt.x, w_tilt.y, w_yaw)
}

/// Rate loop: `tau = I (k_rate e + kd_rate de/dt) + w x I w`.
pub fn rate_control(
    w_est: &Vector3<f64>,
    w_cmd: &Vector3<f64>,
    prev_error: Option<Vector3<f64>>,
    dt: f64,
    gains: &ControllerGains,
    inertial: &InertialParams,
) -> Vector3<f64> {
    let e = w_cmd - w_est;
    let de = prev_error.map_or(Vector3::zeros(), |p| (e - p) / dt);
    let u = Vector3::from_fn(|k, _| gains.k_rate[k] * e[k] + gains.kd_rate[k] * de[k]);
    inertial.inertia() * u + w_est.cross(&(inertial.inertia() * w_est))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOutput {
    /// Thrust acceleration (world), `thrust / m` along the desired body z.
    pub thrust_accel: Vector3<f64>,
    pub thrust: f64,
    pub r_des: Rotation3<f64>,
    pub w_cmd: Vector3<f64>,
    pub torque: Vector3<f64>,
}

/// Stateful wrapper over the cascade: remembers the last attitude set-point
/// and the last rate error.
#[derive(Debug, Clone)]
pub struct CascadedController {
    pub gains: ControllerGains,
    prev_r_des: Rotation3<f64>,
    prev_rate_error: Option<Vector3<f64>>,
}

impl CascadedController {
    pub fn new(gains: ControllerGains) -> Result<Self> {
        gains.validate()?;
        Ok(Self { gains, prev_r_des: Rotation3::identity(), prev_rate_error: None })
    }

    pub fn step(
        &mut self,
        est: &MavState,
        reference: &PositionReference,
        inertial: &InertialParams,
        dt: f64,
    ) -> ControlOutput {
        let a = position_control(est, reference, &self.gains, inertial.gravity());
        let (r_des, thrust) = match accel_to_attitude_thrust(&a, reference.psi_des, inertial.mass()) {
            Some((r, t)) => (r, t),
            None => (self.prev_r_des, inertial.mass() * a.norm()),
        };
        self.prev_r_des = r_des;
        let w_cmd = attitude_control(&est.rotation, &r_des, &self.gains);
        let torque = rate_control(&est.angular_velocity, &w_cmd, self.prev_rate_error, dt, &self.gains, inertial);
        self.prev_rate_error = Some(w_cmd - est.angular_velocity);
        ControlOutput { thrust_accel: a, thrust, r_des, w_cmd, torque }
    }
}

/// `p_rec = p + sqrt(|v|) * retreat`, with the altitude clamped from below.
pub fn recovery_setpoint(p: &Vector3<f64>, v: &Vector3<f64>, retreat: &Vector3<f64>, min_altitude: f64) -> Vector3<f64> {
    let mut out = p + retreat * v.norm().sqrt();
    if out.z < min_altitude {
        out.z = min_altitude;
    }
    out
}

/// Mean beam normal over the active contacts, normalised.
pub fn retreat_direction(contacts: &ContactVector, frame: &IcosahedronFrame, rotation: &Rotation3<f64>) -> Option<Vector3<f64>> {
    let sum = contacts
        .active()
        .map(|i| beam_normal(frame, rotation, i).expect("active index in range"))
        .fold(Vector3::zeros(), |a, n| a + n);
    try_unit(&sum, 1e-6)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecoveryConfig {
    #[serde(rename = "position_tolerance_m")]
    pub position_tolerance: f64,
    #[serde(rename = "speed_tolerance_mps")]
    pub speed_tolerance: f64,
    #[serde(rename = "settle_time_s")]
    pub settle_time: f64,
    #[serde(rename = "timeout_s")]
    pub timeout: f64,
    #[serde(rename = "min_altitude_m")]
    pub min_altitude: f64,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        Self { position_tolerance: 0.15, speed_tolerance: 0.3, settle_time: 0.5, timeout: 5.0, min_altitude: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum FlightMode {
    Nominal,
    Recovering { p_rec: Vector3<f64>, deadline: f64 },
    Resume,
}

impl FlightMode {
    pub fn code(&self) -> u8 {
        match self {
            FlightMode::Nominal => 0,
            FlightMode::Recovering { .. } => 1,
            FlightMode::Resume => 2,
        }
    }

    pub fn is_recovering(&self) -> bool {
        matches!(self, FlightMode::Recovering { .. })
    }
}

/// A detected collision as seen by the supervisor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollisionTrigger {
    pub retreat: Vector3<f64>,
    /// Estimated world position of the triggering point.
    pub contact_point: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SupervisorEvent {
    Recovering { p_rec: Vector3<f64> },
    Relatched { p_rec: Vector3<f64> },
    /// Recovery finished; the contact points of the event are handed to the planner.
    Resumed { points: Vec<Vector3<f64>> },
}

#[derive(Debug, Clone)]
pub struct Supervisor {
    pub cfg: RecoveryConfig,
    mode: FlightMode,
    was_triggered: bool,
    settled_since: Option<f64>,
    pending: Vec<Vector3<f64>>,
}

impl Supervisor {
    pub fn new(cfg: RecoveryConfig) -> Self {
        Self { cfg, mode: FlightMode::Nominal, was_triggered: false, settled_since: None, pending: Vec::new() }
    }

    pub fn mode(&self) -> FlightMode {
        self.mode
    }

    /// Advances the supervisor by one control step at time `t`.
    pub fn step(&mut self, trigger: Option<CollisionTrigger>, est: &MavState, t: f64) -> Option<SupervisorEvent> {
        let rising = trigger.is_some() && !self.was_triggered;
        self.was_triggered = trigger.is_some();
        if let (true, Some(trig)) = (rising, trigger) {
            let p_rec = recovery_setpoint(&est.position, &est.velocity, &trig.retreat, self.cfg.min_altitude);
            let relatch = self.mode.is_recovering();
            self.mode = FlightMode::Recovering { p_rec, deadline: t + self.cfg.timeout };
            self.settled_since = None;
            self.pending.push(trig.contact_point);
            return Some(if relatch { SupervisorEvent::Relatched { p_rec } } else { SupervisorEvent::Recovering { p_rec } });
        }
        if let FlightMode::Recovering { p_rec, deadline } = self.mode {
            let settled = (est.position - p_rec).norm() < self.cfg.position_tolerance
                && est.velocity.norm() < self.cfg.speed_tolerance;
            self.settled_since = if settled { self.settled_since.or(Some(t)) } else { None };
            let done = self.settled_since.is_some_and(|s| t - s >= self.cfg.settle_time - 1e-12) || t >= deadline;
            if done && trigger.is_none() {
                self.mode = FlightMode::Resume;
                self.settled_since = None;
                return Some(SupervisorEvent::Resumed { points: std::mem::take(&mut self.pending) });
            }
        }
        None
    }
}

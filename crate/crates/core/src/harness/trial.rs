//! One closed-loop trial: physics at the physics rate, estimation and control
//! at the control rate, pose measurements at the measurement rate.

use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::contact::{contact_wrench_from_scan, scan_contacts, ContactSensor, ContactVector, ObstacleShape};
use crate::control::{
    retreat_direction, CascadedController, CollisionTrigger, FlightMode, PositionReference, Supervisor, SupervisorEvent,
};
use crate::dynamics::{
    integrate_step, lowest_vertex_altitude, vertex_position, vertex_velocity, ActuatorWrench, Integrator, MavState,
    NUM_VERTICES,
};
use crate::error::{Result, SimError};
use crate::estimator::{CommandInput, EstimatorState, ImpulseDeps, SwitchMode};
use crate::field::{advance_reference, lyapunov_value, nearest_point, FieldConfig, ObstacleRegistry, ParametricPath};
use crate::math::{exp_so3, try_unit, wrap_angle};

use super::config::{AfterResume, Mission, ScenarioConfig, Variant};
use super::export::LogRow;
use super::scenarios::place_clutter;

/// Contacts closer than this to a previously registered point count as re-collisions.
pub const RECONTACT_RADIUS: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "reason", rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Failure,
    /// Diverged or tunnelled; excluded from success counts and reported separately.
    Invalid(String),
}

/// First penetration of a vertex into an obstacle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionEvent {
    pub t: f64,
    pub vertex: usize,
    pub obstacle: usize,
    pub position: Vector3<f64>,
    /// Vertex approach speed along the surface normal (m/s).
    pub normal_speed: f64,
    /// Centre-of-mass speed (m/s).
    pub com_speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeChange {
    pub t: f64,
    pub mode: FlightMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub seed: u64,
    pub variant: Variant,
    pub outcome: Outcome,
    /// Lowest vertex altitude over the trial (m).
    pub min_altitude: f64,
    pub floor_touched: bool,
    /// Every recovery that started also finished.
    pub recoveries_completed: bool,
    /// First time the vehicle was past `escape_tau` with `V` under threshold.
    pub reconverged_at: Option<f64>,
    pub collisions: Vec<CollisionEvent>,
    pub mode_changes: Vec<ModeChange>,
    pub registry: ObstacleRegistry,
    /// Contacts with non-floor obstacles near points registered before them.
    pub recontacts: usize,
    pub obstacles: Vec<ObstacleShape>,
    pub end_time: f64,
    pub log: Vec<LogRow>,
}

impl TrialResult {
    pub fn is_success(&self) -> bool {
        self.outcome == Outcome::Success
    }

    pub fn is_invalid(&self) -> bool {
        matches!(self.outcome, Outcome::Invalid(_))
    }

    /// First contact with an obstacle other than `floor_index`.
    pub fn first_impact(&self, floor_index: Option<usize>) -> Option<&CollisionEvent> {
        self.collisions.iter().find(|c| Some(c.obstacle) != floor_index)
    }

    pub fn recoveries(&self) -> usize {
        self.mode_changes.iter().filter(|m| m.mode.is_recovering()).count()
    }
}

/// Floor contact and completed recovery, plus reconvergence where required.
pub fn success_criterion(
    min_altitude: f64,
    floor_threshold: f64,
    recoveries_completed: bool,
    reconverged: Option<bool>,
) -> bool {
    min_altitude > floor_threshold && recoveries_completed && reconverged.unwrap_or(true)
}

/// True iff the specific-force norm exceeds `threshold`.
pub fn accelerometer_trigger(specific_force: &Vector3<f64>, threshold: f64) -> bool {
    specific_force.norm() > threshold
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub record_log: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { record_log: true }
    }
}

/// Reference generator state.
#[derive(Debug, Clone)]
enum Generator {
    Approach { origin: Vector3<f64>, dir: Vector3<f64>, s: f64, u: f64 },
    Path { speed: f64, prev_v: Option<Vector3<f64>> },
    Hold,
}

const MAX_FEEDFORWARD_ACCEL: f64 = 10.0;

struct Measurement {
    position: Vector3<f64>,
    rotation: Rotation3<f64>,
}

fn noisy_pose(state: &MavState, sp: &Normal<f64>, sa: &Normal<f64>, rng: &mut ChaCha8Rng) -> Measurement {
    let dp = Vector3::from_fn(|_, _| sp.sample(rng));
    let da = Vector3::from_fn(|_, _| sa.sample(rng));
    Measurement { position: state.position + dp, rotation: state.rotation * exp_so3(&da) }
}

pub fn run_trial(cfg: &ScenarioConfig, seed: u64) -> Result<TrialResult> {
    run_trial_with(cfg, seed, RunOptions::default())
}

pub fn run_trial_with(cfg: &ScenarioConfig, seed: u64, opts: RunOptions) -> Result<TrialResult> {
    cfg.validate()?;
    let (ctrl_ticks, meas_ticks) = cfg.rates.ticks()?;
    let dt = 1.0 / cfg.rates.physics_hz as f64;
    let dt_ctrl = dt * ctrl_ticks as f64;
    let inertial = cfg.vehicle.inertial()?;
    let frame = cfg.vehicle.frame()?;
    let mixer = cfg.vehicle.mixer()?;
    let g = *inertial.gravity();

    let mut scene_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed);
    noise_rng.set_stream(1);

    let mut obstacles = cfg.obstacles.clone();
    if let (Some(cl), Some(path)) = (&cfg.clutter, cfg.mission.path()) {
        let start = Vector3::from(cfg.initial.position_m);
        obstacles.extend(place_clutter(cl, path, &start, &mut scene_rng));
    }
    let floor_index = obstacles.iter().position(|o| matches!(o, ObstacleShape::HalfSpace { normal, .. } if normal.z > 0.999));

    let h = cfg.initial.cube_half_width_m;
    let offset = Vector3::from_fn(|_, _| if h > 0.0 { scene_rng.random_range(-h..=h) } else { 0.0 });
    let start = Vector3::from(cfg.initial.position_m) + offset;
    let yaw = wrap_angle(cfg.initial.yaw_rad);
    let mut state = MavState { rotation: Rotation3::from_axis_angle(&Vector3::z_axis(), yaw), ..MavState::at_rest(start) };

    let switch_mode = match cfg.variant {
        Variant::Proposed => SwitchMode::CollisionInclusive,
        _ => SwitchMode::ForcedOff,
    };
    let mut est = EstimatorState::new(state.clone(), &cfg.estimator, switch_mode)?;
    let deps = ImpulseDeps { frame: &frame, inertial: &inertial, restitution: &cfg.impulse };
    let mut sensor = ContactSensor::new(cfg.sensor.trigger_depth_m, cfg.sensor.latency_s, dt)?;
    let mut controller = CascadedController::new(cfg.controller)?;
    let mut supervisor = Supervisor::new(cfg.recovery);
    let mut registry = ObstacleRegistry::new();

    let sp = Normal::new(0.0, cfg.estimator.sigma_position).map_err(|e| SimError::InvalidParameter(e.to_string()))?;
    let sa = Normal::new(0.0, cfg.estimator.sigma_attitude).map_err(|e| SimError::InvalidParameter(e.to_string()))?;

    let mut reference = PositionReference::hold(start, yaw);
    let mut generator = match &cfg.mission {
        Mission::Approach { direction, .. } => {
            let dir = Vector3::from(*direction).normalize();
            reference.psi_des = if dir.xy().norm() > 1e-9 { dir.y.atan2(dir.x) } else { yaw };
            Generator::Approach { origin: start, dir, s: 0.0, u: 0.0 }
        }
        Mission::FollowPath { .. } => Generator::Path { speed: 0.0, prev_v: None },
    };
    let field_cfg = cfg.field;

    let hover = mixer.mix(&state.rotation, inertial.mass() * g.norm(), Vector3::zeros());
    let mut actuator: ActuatorWrench = hover;
    let mut prev_thrust_accel = -g;
    let mut prev_w_cmd = Vector3::zeros();
    let mut latched = [false; NUM_VERTICES];
    let mut peak_force: Option<Vector3<f64>> = None;
    let mut pending_meas: Option<Measurement> = None;
    let mut active_pairs: Vec<(usize, usize)> = Vec::new();

    let mut collisions = Vec::new();
    let mut mode_changes = Vec::new();
    let mut log = Vec::new();
    let mut min_altitude = lowest_vertex_altitude(&state, &frame);
    let mut reconverged_at = None;
    let mut invalid: Option<String> = None;

    let main_ticks = (cfg.duration_s / dt).round() as u64;
    let grace_ticks = (cfg.criteria.recovery_grace_s / dt).round() as u64;
    let mut tick: u64 = 0;
    loop {
        let t = tick as f64 * dt;
        if tick >= main_ticks && (!supervisor.mode().is_recovering() || tick >= main_ticks + grace_ticks) {
            break;
        }

        if tick % meas_ticks as u64 == 0 {
            pending_meas = Some(noisy_pose(&state, &sp, &sa, &mut noise_rng));
        }

        if tick % ctrl_ticks as u64 == 0 {
            let contacts = ContactVector::from_flags(latched).with_beam_normals(&frame, &est.mean.rotation);
            latched = [false; NUM_VERTICES];
            let cmd = CommandInput::new(prev_thrust_accel + g, prev_w_cmd)?;
            est = match est.predict(&cmd, &contacts, dt_ctrl, &cfg.estimator, &deps) {
                Ok(e) => e,
                Err(e) => {
                    invalid = Some(e.to_string());
                    break;
                }
            };
            if let Some(m) = pending_meas.take() {
                est = est.update_pose(&m.position, &m.rotation, &cfg.estimator)?.0;
            }

            let trigger = match cfg.variant {
                Variant::Proposed if contacts.any() => {
                    let retreat = retreat_direction(&contacts, &frame, &est.mean.rotation)
                        .or_else(|| try_unit(&-est.mean.velocity, 1e-6))
                        .unwrap_or_else(|| -Vector3::x());
                    let pts: Vec<_> = contacts.active().map(|i| vertex_position(&est.mean, &frame, i)).collect::<Result<_>>()?;
                    let contact_point = pts.iter().sum::<Vector3<f64>>() / pts.len() as f64;
                    Some(CollisionTrigger { retreat, contact_point })
                }
                Variant::AccelerometerBased => peak_force
                    .filter(|f| accelerometer_trigger(f, cfg.criteria.accel_threshold_mps2))
                    .map(|f| {
                        let retreat = try_unit(&(f - prev_thrust_accel), 1e-6)
                            .or_else(|| try_unit(&-est.mean.velocity, 1e-6))
                            .unwrap_or_else(|| -Vector3::x());
                        let contact_point = est.mean.position - retreat * frame.radius();
                        CollisionTrigger { retreat, contact_point }
                    }),
                _ => None,
            };
            peak_force = None;

            let before = supervisor.mode();
            match supervisor.step(trigger, &est.mean, t) {
                Some(SupervisorEvent::Resumed { points }) => {
                    for p in points {
                        registry.register(p, t);
                    }
                    let p_hold = match before {
                        FlightMode::Recovering { p_rec, .. } => p_rec,
                        _ => est.mean.position,
                    };
                    match (cfg.mission.after_resume(), &cfg.mission) {
                        (AfterResume::FollowPath, Mission::FollowPath { .. }) => {
                            reference = PositionReference::hold(est.mean.position, reference.psi_des);
                            generator = Generator::Path { speed: 0.0, prev_v: None };
                        }
                        _ => {
                            reference = PositionReference::hold(p_hold, reference.psi_des);
                            generator = Generator::Hold;
                        }
                    }
                }
                Some(_) | None => {}
            }
            let mode = supervisor.mode();
            if mode != before {
                mode_changes.push(ModeChange { t, mode });
            }

            if let FlightMode::Recovering { p_rec, .. } = mode {
                reference = PositionReference::hold(p_rec, reference.psi_des);
            } else {
                reference = next_reference(&reference, &mut generator, &cfg.mission, &field_cfg, &registry, dt_ctrl)?;
            }

            let out = controller.step(&est.mean, &reference, &inertial, dt_ctrl);
            actuator = mixer.mix(&state.rotation, out.thrust, out.torque);
            prev_thrust_accel = out.thrust_accel;
            prev_w_cmd = out.w_cmd;

            if let (Some(path), Mission::FollowPath { escape_tau: Some(et), .. }) = (cfg.mission.path(), &cfg.mission) {
                if reconverged_at.is_none() && !mode.is_recovering() {
                    let tau = nearest_point(path, &state.position, &field_cfg);
                    if tau >= *et && lyapunov_value(&state.position, path, &field_cfg) < cfg.criteria.lyapunov_threshold_m2 {
                        reconverged_at = Some(t);
                    }
                }
            }

            if opts.record_log {
                log.push(LogRow::new(t, &state, &est.mean, &reference, mode, contacts.flags));
            }
        }

        let scan = scan_contacts(&state, &frame, &obstacles);
        let flags = sensor.push_scan(&scan);
        for (l, f) in latched.iter_mut().zip(flags) {
            *l |= f;
        }
        if scan.deepest() > frame.radius() {
            invalid = Some(format!("tunnelling at t={t:.3}"));
            break;
        }
        let mut now_pairs = Vec::new();
        for (i, hits) in scan.vertices.iter().enumerate() {
            for (k, p) in hits {
                now_pairs.push((i, *k));
                if !active_pairs.contains(&(i, *k)) {
                    let v = vertex_velocity(&state, &frame, i)?;
                    collisions.push(CollisionEvent {
                        t,
                        vertex: i,
                        obstacle: *k,
                        position: vertex_position(&state, &frame, i)?,
                        normal_speed: -v.dot(&p.normal),
                        com_speed: state.velocity.norm(),
                    });
                }
            }
        }
        active_pairs = now_pairs;

        let cw = contact_wrench_from_scan(&state, &frame, &scan, &cfg.contact);
        let specific_force = (actuator.force + cw.force) / inertial.mass();
        if peak_force.is_none_or(|p| specific_force.norm() > p.norm()) {
            peak_force = Some(specific_force);
        }
        let wrench = actuator.clone().with_external(cw.force, cw.torque);
        state = match integrate_step(&state, &wrench, &inertial, dt, Integrator::SemiImplicitEuler) {
            Ok(s) => s,
            Err(e) => {
                invalid = Some(e.to_string());
                break;
            }
        };
        min_altitude = min_altitude.min(lowest_vertex_altitude(&state, &frame));
        tick += 1;
    }

    let recontacts = collisions
        .iter()
        .filter(|c| Some(c.obstacle) != floor_index)
        .filter(|c| registry.points().iter().any(|r| r.time < c.t && (r.position - c.position).norm() < RECONTACT_RADIUS))
        .count();
    let floor_touched = min_altitude <= cfg.criteria.floor_threshold_m;
    let recoveries_completed = !supervisor.mode().is_recovering();
    let needs_escape = matches!(cfg.mission, Mission::FollowPath { escape_tau: Some(_), .. });
    let outcome = match invalid {
        Some(reason) => Outcome::Invalid(reason),
        None => {
            let reconverged = needs_escape.then_some(reconverged_at.is_some());
            if success_criterion(min_altitude, cfg.criteria.floor_threshold_m, recoveries_completed, reconverged) {
                Outcome::Success
            } else {
                Outcome::Failure
            }
        }
    };
    Ok(TrialResult {
        seed,
        variant: cfg.variant,
        outcome,
        min_altitude,
        floor_touched,
        recoveries_completed,
        reconverged_at,
        collisions,
        mode_changes,
        registry,
        recontacts,
        obstacles,
        end_time: tick as f64 * dt,
        log,
    })
}

fn next_reference(
    reference: &PositionReference,
    generator: &mut Generator,
    mission: &Mission,
    field_cfg: &FieldConfig,
    registry: &ObstacleRegistry,
    dt: f64,
) -> Result<PositionReference> {
    let next: Result<PositionReference> = match (&mut *generator, mission) {
        (Generator::Approach { origin, dir, s, u }, Mission::Approach { speed_mps, accel_mps2, travel_m, .. }) => {
            let mut a = 0.0;
            if *s >= *travel_m {
                *u = 0.0;
            } else if *u < *speed_mps {
                let u_next = (*u + accel_mps2 * dt).min(*speed_mps);
                a = (u_next - *u) / dt;
                *s += 0.5 * (*u + u_next) * dt;
                *u = u_next;
            } else {
                *s += *u * dt;
            }
            if *s >= *travel_m {
                *s = *travel_m;
                *u = 0.0;
                a = 0.0;
            }
            Ok(PositionReference { p_des: *origin + *dir * *s, v_des: *dir * *u, a_des: *dir * a, psi_des: reference.psi_des })
        }
        (Generator::Path { speed, prev_v }, Mission::FollowPath { path, reference_accel_mps2, .. }) => {
            *speed = if *reference_accel_mps2 > 0.0 {
                (*speed + reference_accel_mps2 * dt).min(field_cfg.v_gf)
            } else {
                field_cfg.v_gf
            };
            let cfg = FieldConfig { v_gf: *speed, ..*field_cfg };
            let mut next = advance_reference(reference, path, &cfg, registry, dt)?;
            next.a_des = feedforward(prev_v.as_ref(), &next.v_des, dt);
            *prev_v = Some(next.v_des);
            Ok(next)
        }
        _ => Ok(PositionReference { v_des: Vector3::zeros(), a_des: Vector3::zeros(), ..*reference }),
    };
    let next = next?;
    // An open path ends: hold at its endpoint instead of chasing the field past it.
    if let (Generator::Path { .. }, Mission::FollowPath { path, .. }) = (&*generator, mission) {
        if !path.is_closed() && nearest_point(path, &next.p_des, field_cfg) >= 1.0 {
            *generator = Generator::Hold;
            return Ok(PositionReference::hold(path.h(1.0), next.psi_des));
        }
    }
    Ok(next)
}

fn feedforward(prev: Option<&Vector3<f64>>, v: &Vector3<f64>, dt: f64) -> Vector3<f64> {
    let Some(p) = prev else { return Vector3::zeros() };
    let a = (v - p) / dt;
    let n = a.norm();
    if n > MAX_FEEDFORWARD_ACCEL {
        a * (MAX_FEEDFORWARD_ACCEL / n)
    } else {
        a
    }
}

/// Path parameter and Lyapunov value of `x` with respect to `path`.
pub fn path_progress(path: &ParametricPath, x: &Vector3<f64>, cfg: &FieldConfig) -> (f64, f64) {
    (nearest_point(path, x, cfg), lyapunov_value(x, path, cfg))
}

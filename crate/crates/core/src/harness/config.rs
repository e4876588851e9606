//! Scenario files. Every dimensional key carries its unit as a suffix.

use std::path::Path;

use nalgebra::{Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::contact::{ContactMaterial, ObstacleShape};
use crate::control::{ControllerGains, RecoveryConfig};
use crate::dynamics::{IcosahedronFrame, InertialParams, MotorMixer};
use crate::error::{Result, SimError};
use crate::estimator::NoiseConfig;
use crate::field::{FieldConfig, ParametricPath};
use crate::impulse::RestitutionParams;

/// Which collision handling the vehicle runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Contact sensing, collision-inclusive estimator, reflexive recovery.
    #[default]
    Proposed,
    /// Plain estimator and controller; collisions are ignored.
    CollisionAgnostic,
    /// Plain estimator; recovery fires on an accelerometer-norm threshold.
    AccelerometerBased,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Proposed, Variant::AccelerometerBased, Variant::CollisionAgnostic];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Proposed => "proposed",
            Variant::CollisionAgnostic => "collision_agnostic",
            Variant::AccelerometerBased => "accelerometer_based",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "proposed" => Ok(Variant::Proposed),
            "collision_agnostic" | "agnostic" => Ok(Variant::CollisionAgnostic),
            "accelerometer_based" | "accelerometer" => Ok(Variant::AccelerometerBased),
            _ => Err(SimError::InvalidParameter(format!("unknown variant '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rates {
    pub physics_hz: u32,
    pub control_hz: u32,
    pub measurement_hz: u32,
}

impl Default for Rates {
    fn default() -> Self {
        Self { physics_hz: 1000, control_hz: 500, measurement_hz: 200 }
    }
}

impl Rates {
    /// Physics ticks per control step and per measurement.
    pub fn ticks(&self) -> Result<(u32, u32)> {
        let ok = self.measurement_hz > 0
            && self.control_hz >= self.measurement_hz
            && self.physics_hz >= self.control_hz
            && self.physics_hz % self.control_hz == 0
            && self.physics_hz % self.measurement_hz == 0;
        if !ok {
            return Err(SimError::InvalidParameter(
                "rates must satisfy physics >= control >= measurement > 0 with physics an integer multiple of both".into(),
            ));
        }
        Ok((self.physics_hz / self.control_hz, self.physics_hz / self.measurement_hz))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorConfig {
    pub latency_s: f64,
    pub trigger_depth_m: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self { latency_s: 0.0, trigger_depth_m: 1e-4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleConfig {
    pub mass_kg: f64,
    pub inertia_diag_kgm2: [f64; 3],
    pub gravity_mps2: [f64; 3],
    pub frame_radius_m: f64,
    /// Roll, pitch, yaw (intrinsic z-y-x) of the shell relative to the body axes.
    pub shell_rpy_rad: [f64; 3],
    pub arm_length_m: f64,
    /// Yaw torque per unit motor force.
    pub torque_coefficient_m: f64,
    pub max_motor_force_n: f64,
}

impl Default for VehicleConfig {
    fn default() -> Self {
        Self {
            mass_kg: 0.25,
            inertia_diag_kgm2: [8e-4, 8e-4, 1.2e-3],
            gravity_mps2: [0.0, 0.0, -9.81],
            frame_radius_m: 0.15,
            shell_rpy_rad: [0.0, 0.0, 0.0],
            arm_length_m: 0.08,
            torque_coefficient_m: 0.016,
            max_motor_force_n: 1.55,
        }
    }
}

impl VehicleConfig {
    pub fn inertial(&self) -> Result<InertialParams> {
        InertialParams::diagonal(self.mass_kg, self.inertia_diag_kgm2, Vector3::from(self.gravity_mps2))
    }

    pub fn frame(&self) -> Result<IcosahedronFrame> {
        let [r, p, y] = self.shell_rpy_rad;
        Ok(IcosahedronFrame::regular(self.frame_radius_m)?.rotated(&Rotation3::from_euler_angles(r, p, y)))
    }

    pub fn mixer(&self) -> Result<MotorMixer> {
        MotorMixer::new(self.arm_length_m, self.torque_coefficient_m, self.max_motor_force_n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialConfig {
    /// Nominal start (m); the vehicle starts airborne and at rest.
    pub position_m: [f64; 3],
    pub yaw_rad: f64,
    /// Half-width of the uniform cube the start is drawn from (m).
    pub cube_half_width_m: f64,
}

impl Default for InitialConfig {
    fn default() -> Self {
        Self { position_m: [0.0, 0.0, 1.5], yaw_rad: 0.0, cube_half_width_m: 0.25 }
    }
}

/// What to do once a recovery completes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AfterResume {
    /// Keep hovering at the recovery position.
    #[default]
    Hold,
    /// Restart the path reference from the current estimate.
    FollowPath,
}

/// Reference generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Mission {
    /// Straight approach: the reference accelerates from the start along
    /// `direction` to `speed_mps`, cruises, and stops after `travel_m`.
    Approach {
        direction: [f64; 3],
        speed_mps: f64,
        accel_mps2: f64,
        travel_m: f64,
        #[serde(default)]
        after_resume: AfterResume,
    },
    /// Reference advected by the guidance field of `path`.
    FollowPath {
        path: ParametricPath,
        /// Rate at which the field speed ramps up from zero (m/s^2); 0 = no ramp.
        #[serde(default)]
        reference_accel_mps2: f64,
        #[serde(default = "follow_path_default")]
        after_resume: AfterResume,
        /// Path parameter that counts as past the obstacle, for escape checks.
        #[serde(default)]
        escape_tau: Option<f64>,
    },
}

fn follow_path_default() -> AfterResume {
    AfterResume::FollowPath
}

impl Mission {
    pub fn path(&self) -> Option<&ParametricPath> {
        match self {
            Mission::FollowPath { path, .. } => Some(path),
            Mission::Approach { .. } => None,
        }
    }

    pub fn after_resume(&self) -> AfterResume {
        match self {
            Mission::Approach { after_resume, .. } | Mission::FollowPath { after_resume, .. } => *after_resume,
        }
    }
}

/// Random vertical cylinders scattered around the path, drawn per trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClutterConfig {
    pub count: usize,
    pub radius_m: f64,
    pub height_m: f64,
    /// Maximum horizontal distance of a cylinder axis from the path (m).
    pub max_offset_m: f64,
    /// Cylinders whose surface is closer than this to the nominal start are redrawn (m).
    pub start_clearance_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CriteriaConfig {
    /// Lowest vertex altitude at or below which the vehicle has touched the floor (m).
    pub floor_threshold_m: f64,
    /// Accelerometer-based trigger threshold on the specific-force norm (m/s^2).
    pub accel_threshold_mps2: f64,
    /// Path convergence bound on V (m^2).
    pub lyapunov_threshold_m2: f64,
    /// Extra time allowed to finish a recovery still running at the end (s).
    pub recovery_grace_s: f64,
}

impl Default for CriteriaConfig {
    fn default() -> Self {
        Self { floor_threshold_m: 0.0, accel_threshold_mps2: 3.0 * 9.81, lyapunov_threshold_m2: 0.1, recovery_grace_s: 6.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub variant: Variant,
    #[serde(default)]
    pub seed: u64,
    pub duration_s: f64,
    #[serde(default)]
    pub rates: Rates,
    #[serde(default)]
    pub sensor: SensorConfig,
    #[serde(default)]
    pub vehicle: VehicleConfig,
    #[serde(default)]
    pub contact: ContactMaterial,
    #[serde(default)]
    pub impulse: RestitutionParams,
    #[serde(default)]
    pub estimator: NoiseConfig,
    #[serde(default)]
    pub controller: ControllerGains,
    #[serde(default)]
    pub recovery: RecoveryConfig,
    #[serde(default)]
    pub field: FieldConfig,
    #[serde(default)]
    pub initial: InitialConfig,
    pub mission: Mission,
    #[serde(default)]
    pub criteria: CriteriaConfig,
    #[serde(default)]
    pub obstacles: Vec<ObstacleShape>,
    #[serde(default)]
    pub clutter: Option<ClutterConfig>,
}

impl ScenarioConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| SimError::InvalidParameter(format!("toml serialization: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SimError::InvalidParameter(m));
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return bad(format!("duration_s must be > 0, got {}", self.duration_s));
        }
        self.rates.ticks()?;
        if !(self.sensor.latency_s >= 0.0 && self.sensor.trigger_depth_m >= 0.0) {
            return bad("sensor latency and trigger depth must be >= 0".into());
        }
        self.vehicle.inertial()?;
        self.vehicle.frame()?;
        self.vehicle.mixer()?;
        self.contact.validate()?;
        RestitutionParams::new(self.impulse.restitution, self.impulse.friction)?;
        self.estimator.validate()?;
        self.controller.validate()?;
        self.field.validate()?;
        let r = &self.recovery;
        if !(r.position_tolerance > 0.0 && r.speed_tolerance > 0.0 && r.settle_time >= 0.0 && r.timeout > 0.0) {
            return bad("recovery tolerances must be > 0".into());
        }
        if !(self.initial.cube_half_width_m >= 0.0 && self.initial.position_m.iter().all(|x| x.is_finite())) {
            return bad("initial cube half-width must be >= 0".into());
        }
        match &self.mission {
            Mission::Approach { direction, speed_mps, accel_mps2, travel_m, .. } => {
                if Vector3::from(*direction).norm() < 1e-9 || !(*speed_mps > 0.0 && *accel_mps2 > 0.0 && *travel_m > 0.0) {
                    return bad("approach needs a direction and positive speed, acceleration and travel".into());
                }
            }
            Mission::FollowPath { path, reference_accel_mps2, .. } => {
                path.validate()?;
                if !(*reference_accel_mps2 >= 0.0) {
                    return bad("reference_accel_mps2 must be >= 0".into());
                }
            }
        }
        let c = &self.criteria;
        if !(c.accel_threshold_mps2 > 0.0 && c.lyapunov_threshold_m2 > 0.0 && c.recovery_grace_s >= 0.0) {
            return bad("criteria thresholds must be > 0".into());
        }
        for o in &self.obstacles {
            o.validate()?;
        }
        if let Some(cl) = &self.clutter {
            if self.mission.path().is_none() {
                return bad("clutter needs a follow_path mission".into());
            }
            if !(cl.radius_m > 0.0 && cl.height_m > 0.0 && cl.max_offset_m >= 0.0 && cl.start_clearance_m >= 0.0) {
                return bad("clutter dimensions must be > 0".into());
            }
        }
        Ok(())
    }
}

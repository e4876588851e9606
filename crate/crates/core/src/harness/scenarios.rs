//! Built-in experiment definitions: the wall-approach velocity sweep, the
//! cluttered ellipse and the concave trap.

use nalgebra::Vector3;
use rand::Rng;

use crate::contact::{ObstacleShape, Opening};
use crate::field::{FieldConfig, ParametricPath};

use super::config::{AfterResume, ClutterConfig, CriteriaConfig, InitialConfig, Mission, ScenarioConfig, Variant};

/// Velocity grid of the recovery table (m/s).
pub fn sweep_speeds() -> Vec<f64> {
    (1..=16).map(|k| 0.5 * k as f64).collect()
}

/// Distance from the nominal start to the wall (m).
pub const WALL_DISTANCE: f64 = 4.0;
/// Acceleration of the approach reference (m/s^2).
pub const APPROACH_ACCEL: f64 = 9.0;
/// How far past the wall plane the approach reference keeps going (m).
pub const APPROACH_OVERRUN: f64 = 0.5;

pub fn floor_index(obstacles: &[ObstacleShape]) -> Option<usize> {
    obstacles.iter().position(|o| matches!(o, ObstacleShape::HalfSpace { normal, .. } if normal.z > 0.999))
}

/// Straight approach at 1.5 m altitude toward a wall 4 m ahead; the vehicle is
/// brought up to `speed` before it reaches the wall and holds at the recovery
/// position afterwards.
pub fn sweep_config(variant: Variant, speed: f64) -> ScenarioConfig {
    let ramp_time = speed / APPROACH_ACCEL;
    let ramp_dist = 0.5 * speed * ramp_time;
    let cruise = (WALL_DISTANCE - ramp_dist).max(0.0) / speed;
    ScenarioConfig {
        name: format!("wall-{speed:.1}"),
        variant,
        seed: 1,
        duration_s: ramp_time + cruise + 6.0,
        rates: Default::default(),
        sensor: Default::default(),
        vehicle: Default::default(),
        contact: Default::default(),
        impulse: Default::default(),
        estimator: Default::default(),
        controller: Default::default(),
        recovery: Default::default(),
        field: Default::default(),
        initial: InitialConfig { position_m: [0.0, 0.0, 1.5], yaw_rad: 0.0, cube_half_width_m: 0.25 },
        mission: Mission::Approach {
            direction: [1.0, 0.0, 0.0],
            speed_mps: speed,
            accel_mps2: APPROACH_ACCEL,
            travel_m: WALL_DISTANCE + APPROACH_OVERRUN,
            after_resume: AfterResume::Hold,
        },
        criteria: CriteriaConfig::default(),
        obstacles: vec![
            ObstacleShape::floor(),
            ObstacleShape::HalfSpace { point: Vector3::new(WALL_DISTANCE, 0.0, 0.0), normal: -Vector3::x() },
        ],
        clutter: None,
    }
}

/// Horizontal 4 m x 2.5 m ellipse at 1.2 m with three cylinders on the path and
/// five more scattered within 1 m of it; flown at 4 m/s.
pub fn scenario_a_config(variant: Variant) -> ScenarioConfig {
    let path = ParametricPath::horizontal_ellipse(Vector3::new(0.0, 0.0, 1.2), 4.0, 2.5);
    let on_path = [0.25, 0.5, 0.75].map(|tau| {
        let p = path.h(tau);
        ObstacleShape::Cylinder { base: Vector3::new(p.x, p.y, 0.0), radius: 0.2, height: 3.0 }
    });
    let start = path.h(0.0);
    let mut obstacles = vec![ObstacleShape::floor()];
    obstacles.extend(on_path);
    ScenarioConfig {
        name: "cluttered-ellipse".into(),
        variant,
        seed: 1,
        duration_s: 40.0,
        rates: Default::default(),
        sensor: Default::default(),
        vehicle: Default::default(),
        contact: Default::default(),
        impulse: Default::default(),
        estimator: Default::default(),
        controller: Default::default(),
        recovery: Default::default(),
        field: FieldConfig { v_gf: 4.0, ..Default::default() },
        initial: InitialConfig { position_m: start.into(), yaw_rad: std::f64::consts::FRAC_PI_2, cube_half_width_m: 0.25 },
        mission: Mission::FollowPath {
            path,
            reference_accel_mps2: 4.0,
            after_resume: AfterResume::FollowPath,
            escape_tau: None,
        },
        criteria: CriteriaConfig::default(),
        obstacles,
        clutter: Some(ClutterConfig { count: 5, radius_m: 0.2, height_m: 3.0, max_offset_m: 1.0, start_clearance_m: 1.0 }),
    }
}

/// Straight path at 1.2 m blocked by a U-shaped obstacle opening toward the
/// vehicle (1.5 m wide, 1 m deep, back wall 6 m ahead).
pub fn scenario_b_config(variant: Variant) -> ScenarioConfig {
    let start = Vector3::new(0.0, 0.0, 1.2);
    let end = Vector3::new(14.0, 0.0, 1.2);
    let back_x = 6.0;
    let thickness = 0.1;
    ScenarioConfig {
        name: "concave-trap".into(),
        variant,
        seed: 1,
        duration_s: 60.0,
        rates: Default::default(),
        sensor: Default::default(),
        vehicle: Default::default(),
        contact: Default::default(),
        impulse: Default::default(),
        estimator: Default::default(),
        controller: Default::default(),
        recovery: Default::default(),
        field: FieldConfig { v_gf: 2.0, ..Default::default() },
        initial: InitialConfig { position_m: start.into(), yaw_rad: 0.0, cube_half_width_m: 0.25 },
        mission: Mission::FollowPath {
            path: ParametricPath::Line { start, end },
            reference_accel_mps2: 4.0,
            after_resume: AfterResume::FollowPath,
            escape_tau: Some((back_x + thickness + 0.5) / (end.x - start.x)),
        },
        criteria: CriteriaConfig::default(),
        obstacles: vec![
            ObstacleShape::floor(),
            ObstacleShape::ConcaveU {
                back_center: Vector3::new(back_x, 0.0, 0.0),
                opening: Opening::NegX,
                inner_width: 1.5,
                depth: 1.0,
                height: 1.6,
                thickness,
            },
        ],
        clutter: None,
    }
}

/// Draws `cl.count` vertical cylinders whose axes lie uniformly within
/// `max_offset_m` (horizontally) of uniformly drawn path points, redrawing any
/// that would crowd the start.
pub fn place_clutter(cl: &ClutterConfig, path: &ParametricPath, start: &Vector3<f64>, rng: &mut impl Rng) -> Vec<ObstacleShape> {
    let mut out = Vec::with_capacity(cl.count);
    let mut attempts = 0;
    while out.len() < cl.count && attempts < 10_000 {
        attempts += 1;
        let tau: f64 = rng.random_range(0.0..1.0);
        let r = cl.max_offset_m * rng.random_range(0.0f64..1.0).sqrt();
        let phi = rng.random_range(0.0..std::f64::consts::TAU);
        let c = path.h(tau) + Vector3::new(r * phi.cos(), r * phi.sin(), 0.0);
        let clearance = (c.xy() - start.xy()).norm() - cl.radius_m;
        if clearance < cl.start_clearance_m {
            continue;
        }
        out.push(ObstacleShape::Cylinder { base: Vector3::new(c.x, c.y, 0.0), radius: cl.radius_m, height: cl.height_m });
    }
    out
}

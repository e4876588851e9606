use nalgebra::{Rotation3, Vector3};
use proptest::prelude::*;

use tactile_recovery::contact::ContactVector;
use tactile_recovery::dynamics::{IcosahedronFrame, InertialParams, MavState, MotorMixer, NUM_VERTICES};
use tactile_recovery::estimator::{min_eigenvalue, CommandInput, EstimatorState, ImpulseDeps, NoiseConfig, SwitchMode};
use tactile_recovery::field::{evaluate_field, nearest_point, FieldConfig, ObstacleRegistry, ParametricPath};
use tactile_recovery::harness::trial_seed;
use tactile_recovery::impulse::{collision_delta, RestitutionParams};

fn vec3(r: f64) -> impl Strategy<Value = Vector3<f64>> {
    prop::array::uniform3(-r..r).prop_map(Vector3::from)
}

fn ellipse() -> ParametricPath {
    ParametricPath::horizontal_ellipse(Vector3::new(0.0, 0.0, 1.2), 4.0, 2.5)
}

proptest! {
    #[test]
    fn field_speed_is_constant(x in vec3(6.0), obstacles in prop::collection::vec(vec3(4.0), 0..6)) {
        let cfg = FieldConfig { v_gf: 2.5, ..Default::default() };
        let mut reg = ObstacleRegistry::new();
        for (k, c) in obstacles.iter().enumerate() {
            reg.register(*c, k as f64);
        }
        let e = evaluate_field(&x, &ellipse(), &cfg, &reg);
        prop_assert!((e.g.norm() - 2.5).abs() < 1e-9);
        // Obstacle terms never push along or against the path-following direction.
        prop_assert!(e.repulsion.dot(&e.attraction).abs() <= 1e-9 * (1.0 + e.repulsion.norm()));
    }

    #[test]
    fn nearest_point_beats_coarse_samples(x in vec3(6.0)) {
        let path = ellipse();
        let cfg = FieldConfig::default();
        let tau = nearest_point(&path, &x, &cfg);
        let found = (path.h(tau) - x).norm();
        let coarse = (0..cfg.samples)
            .map(|k| (path.h(k as f64 / cfg.samples as f64) - x).norm())
            .fold(f64::INFINITY, f64::min);
        prop_assert!(found <= coarse + 1e-12);
        prop_assert!((0.0..1.0).contains(&tau));
    }

    #[test]
    fn impacts_never_add_energy(
        axis in vec3(3.0),
        v in vec3(6.0),
        w in vec3(15.0),
        mask in 1u16..(1 << NUM_VERTICES),
        e in 0.0f64..=1.0,
        mu in 0.0f64..1.5,
    ) {
        let inertial = InertialParams::default();
        let frame = IcosahedronFrame::regular(0.15).unwrap();
        let s = MavState {
            rotation: Rotation3::from_scaled_axis(axis),
            velocity: v,
            angular_velocity: w,
            ..MavState::at_rest(Vector3::zeros())
        };
        let flags = std::array::from_fn(|i| mask & (1 << i) != 0);
        let params = RestitutionParams::new(e, mu).unwrap();
        let d = collision_delta(&s, &frame, &ContactVector::from_flags(flags), &params, &inertial).unwrap();
        let post = MavState { velocity: v + d.dv, angular_velocity: w + d.dw, ..s.clone() };
        let before = s.kinetic_energy(&inertial);
        prop_assert!(post.kinetic_energy(&inertial) <= before * (1.0 + 1e-12) + 1e-15);
    }

    #[test]
    fn motor_forces_stay_in_range(axis in vec3(3.0), thrust in 0.0f64..12.0, torque in vec3(0.5)) {
        let mixer = MotorMixer::new(0.08, 0.016, 1.55).unwrap();
        let out = mixer.mix(&Rotation3::from_scaled_axis(axis), thrust, torque);
        for f in out.motor_forces.unwrap() {
            prop_assert!((0.0..=1.55).contains(&f));
        }
    }

    #[test]
    fn covariance_stays_symmetric_and_positive(
        steps in prop::collection::vec((vec3(5.0), vec3(3.0), any::<u16>(), vec3(0.01)), 1..40),
    ) {
        let noise = NoiseConfig::default();
        let inertial = InertialParams::default();
        let frame = IcosahedronFrame::regular(0.15).unwrap();
        let restitution = RestitutionParams::default();
        let deps = ImpulseDeps { frame: &frame, inertial: &inertial, restitution: &restitution };
        let start = MavState::at_rest(Vector3::new(0.0, 0.0, 1.0));
        let mut est = EstimatorState::new(start, &noise, SwitchMode::CollisionInclusive).unwrap();
        for (k, (a, w, mask, dp)) in steps.iter().enumerate() {
            let flags = std::array::from_fn(|i| mask & (1 << i) != 0 && mask % 3 == 0);
            let contacts = ContactVector::from_flags(flags).with_beam_normals(&frame, &est.mean.rotation);
            est = est.predict(&CommandInput::new(*a, *w).unwrap(), &contacts, 2e-3, &noise, &deps).unwrap();
            if k % 3 == 0 {
                let p = est.mean.position + dp;
                let r = est.mean.rotation;
                est = est.update_pose(&p, &r, &noise).unwrap().0;
            }
            let p = &est.covariance;
            prop_assert!((p - p.transpose()).abs().max() <= 1e-9 * (1.0 + p.abs().max()));
            prop_assert!(min_eigenvalue(p) > 0.0);
        }
    }

    #[test]
    fn trial_seeds_do_not_collide(root in any::<u64>(), i in 0u64..1000, j in 0u64..1000) {
        prop_assume!(i != j);
        prop_assert_ne!(trial_seed(root, i), trial_seed(root, j));
    }
}

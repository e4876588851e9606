use tactile_recovery::contact::ObstacleShape;
use tactile_recovery::control::FlightMode;
use tactile_recovery::harness::{
    floor_index, run_batch, run_trial, run_trial_with, scenario_b_config, sweep_config, Execution, RunOptions, Variant,
};

#[test]
fn same_seed_same_trial() {
    let cfg = sweep_config(Variant::Proposed, 3.0);
    let opts = RunOptions { record_log: true };
    let a = run_trial_with(&cfg, 42, opts).unwrap();
    let b = run_trial_with(&cfg, 42, opts).unwrap();
    assert_eq!(a, b);
    let c = run_trial_with(&cfg, 43, opts).unwrap();
    assert_ne!(a.log, c.log);
}

#[test]
fn batch_is_independent_of_scheduling() {
    let cfg = sweep_config(Variant::AccelerometerBased, 5.0);
    let opts = RunOptions { record_log: false };
    let seq = run_batch(&cfg, 6, Execution::Sequential, opts).unwrap();
    let one = run_batch(&cfg, 6, Execution::ParallelWith(1), opts).unwrap();
    let four = run_batch(&cfg, 6, Execution::ParallelWith(4), opts).unwrap();
    assert_eq!(seq, one);
    assert_eq!(seq, four);
}

#[test]
fn free_flight_has_no_collisions() {
    let mut cfg = sweep_config(Variant::Proposed, 1.0);
    cfg.obstacles.retain(|o| matches!(o, ObstacleShape::HalfSpace { normal, .. } if normal.z > 0.5));
    for seed in 0..3 {
        let r = run_trial_with(&cfg, seed, RunOptions { record_log: true }).unwrap();
        assert!(r.is_success(), "{:?}", r.outcome);
        assert!(r.collisions.is_empty());
        assert!(r.mode_changes.is_empty());
        assert!(r.min_altitude > 1.0);
        let last = r.log.last().unwrap();
        // Travel is 4.5 m past the start, whose offset is within 0.25 m.
        let start = r.log[0].position();
        assert!((last.px - start.x - 4.5).abs() < 0.1, "{} {}", last.px, start.x);
        assert!(last.velocity().norm() < 0.05);
    }
}

#[test]
fn slow_impact_is_recovered() {
    for seed in 0..5 {
        let cfg = sweep_config(Variant::Proposed, 0.5);
        let r = run_trial(&cfg, seed).unwrap();
        assert!(r.is_success(), "seed {seed}: {:?}", r.outcome);
        assert!(r.recoveries() >= 1);
        assert!(r.recoveries_completed);
        assert!(!r.registry.is_empty());
    }
}

#[test]
fn accelerometer_trigger_follows_first_penetration() {
    let cfg = sweep_config(Variant::AccelerometerBased, 2.0);
    let r = run_trial(&cfg, 3).unwrap();
    let impact = r.first_impact(floor_index(&r.obstacles)).expect("wall is hit");
    let trigger = r.mode_changes.iter().find(|m| matches!(m.mode, FlightMode::Recovering { .. })).expect("trigger fires");
    // One control period (2 ms) at most, plus rounding.
    assert!(trigger.t >= impact.t);
    assert!(trigger.t - impact.t <= 0.002 + 1e-9, "{} vs {}", trigger.t, impact.t);
}

#[test]
fn agnostic_never_enters_recovery() {
    let r = run_trial(&sweep_config(Variant::CollisionAgnostic, 4.0), 2).unwrap();
    assert!(!r.collisions.is_empty());
    assert_eq!(r.recoveries(), 0);
}

#[test]
fn trap_trial_reports_escape_progress() {
    let cfg = scenario_b_config(Variant::Proposed);
    let r = run_trial(&cfg, 1).unwrap();
    assert!(!r.is_invalid());
    if let Some(t) = r.reconverged_at {
        assert!(t > 0.0 && t <= r.end_time);
    }
    // Every registered point comes from a completed recovery.
    assert!(r.registry.len() <= r.recoveries());
}

use std::path::PathBuf;

use tactile_recovery::harness::{
    export_trajectory, import_trajectory, run_trial_with, scenario_a_config, scenario_b_config, sweep_config,
    ExportFormat, RunOptions, ScenarioConfig, Variant,
};

fn scenario_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

#[test]
fn built_in_configs_round_trip_through_toml() {
    let mut configs = vec![scenario_a_config(Variant::Proposed), scenario_b_config(Variant::CollisionAgnostic)];
    configs.extend([0.5, 4.0, 8.0].map(|s| sweep_config(Variant::AccelerometerBased, s)));
    for cfg in configs {
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ScenarioConfig::from_toml_str(&text).unwrap(), cfg, "{}", cfg.name);
    }
}

#[test]
fn shipped_scenarios_match_built_ins() {
    let dir = scenario_dir();
    let trap = ScenarioConfig::load(dir.join("concave_trap.toml")).unwrap();
    assert_eq!(trap, scenario_b_config(Variant::Proposed));
    let ellipse = ScenarioConfig::load(dir.join("cluttered_ellipse.toml")).unwrap();
    let built_in = scenario_a_config(Variant::Proposed);
    assert_eq!(ellipse.mission, built_in.mission);
    assert_eq!(ellipse.clutter, built_in.clutter);
    assert_eq!(ellipse.field, built_in.field);
    assert_eq!(ellipse.obstacles.len(), built_in.obstacles.len());
    let wall = ScenarioConfig::load(dir.join("wall_4mps.toml")).unwrap();
    assert_eq!(wall.mission, sweep_config(Variant::Proposed, 4.0).mission);
}

#[test]
fn unknown_keys_and_bad_values_are_rejected() {
    let good = std::fs::read_to_string(scenario_dir().join("wall_4mps.toml")).unwrap();
    assert!(ScenarioConfig::from_toml_str(&good).is_ok());
    assert!(ScenarioConfig::from_toml_str(&good.replace("duration_s", "duration")).is_err());
    assert!(ScenarioConfig::from_toml_str(&good.replace("speed_mps = 4.0", "speed_mps = -4.0")).is_err());
    assert!(ScenarioConfig::from_toml_str(&format!("{good}\n[rates]\nphysics_hz = 1000\ncontrol_hz = 300\n")).is_err());
}

#[test]
fn exported_log_reads_back() {
    let cfg = sweep_config(Variant::Proposed, 2.0);
    let r = run_trial_with(&cfg, 1, RunOptions { record_log: true }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for (format, name) in [(ExportFormat::Csv, "log.csv"), (ExportFormat::Json, "log.json")] {
        let path = dir.path().join(name);
        export_trajectory(&r.log, format, &path).unwrap();
        let back = import_trajectory(&path, format).unwrap();
        assert_eq!(back.len(), r.log.len());
        if format == ExportFormat::Json {
            assert_eq!(back, r.log);
        }
        assert!(back.windows(2).all(|w| w[1].t > w[0].t));
    }
}

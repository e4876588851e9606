use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tactile_recovery::field::{evaluate_field, nearest_point, FieldConfig, ObstacleRegistry, ParametricPath};
use tactile_recovery::harness::{
    export_trajectory, run_batch, run_trial_with, scenario_a_config, scenario_b_config, sweep_config, sweep_speeds,
    trials_csv, velocity_sweep, Execution, ExportFormat, RunOptions, ScenarioConfig, ScenarioSummary, Variant,
    VehicleConfig,
};
use tactile_recovery::impulse::{fit_restitution_friction, read_impacts_csv};
use tactile_recovery::{Result, SimError};

#[derive(Parser)]
#[command(name = "tactile-sim", version, about = "Collision-resilient quadrotor simulator")]
struct Cli {
    /// Worker threads for batch runs (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Run batches on the calling thread.
    #[arg(long, global = true, conflicts_with = "threads")]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one trial and print its outcome.
    Trial(TrialArgs),
    /// Wall-impact velocity sweep: success counts per variant and speed.
    Sweep(SweepArgs),
    /// Cluttered-ellipse batch.
    ScenarioA(BatchArgs),
    /// Concave-trap batch.
    ScenarioB(BatchArgs),
    /// Sample the guidance field on a grid.
    FieldGrid(FieldGridArgs),
    /// Compare the nearest-point search against dense brute force.
    NearestCheck(NearestArgs),
    /// Fit restitution and friction to recorded impacts.
    Fit(FitArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Builtin {
    Wall,
    Ellipse,
    Trap,
}

#[derive(Args)]
struct TrialArgs {
    /// Scenario file (TOML).
    #[arg(long, conflicts_with = "builtin")]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "wall")]
    builtin: Builtin,
    /// Approach speed for the wall scenario (m/s).
    #[arg(long, default_value_t = 4.0)]
    speed: f64,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Write the trajectory log here.
    #[arg(long)]
    export: Option<PathBuf>,
    #[arg(long, default_value = "csv")]
    format: ExportFormat,
    /// Print the resolved scenario as TOML and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, default_value_t = 10)]
    trials: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Variants to run (default: all).
    #[arg(long, value_delimiter = ',')]
    variants: Vec<Variant>,
    /// Speeds in m/s (default: 0.5 to 8.0 in 0.5 steps).
    #[arg(long, value_delimiter = ',')]
    speeds: Vec<f64>,
    /// Write the summary CSV here.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct BatchArgs {
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Root seed (default: the scenario's own).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "proposed")]
    variant: Variant,
    /// Scenario file replacing the built-in definition.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write per-trial outcomes here.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct FieldGridArgs {
    /// Take path and field settings from a scenario file (default: the cluttered ellipse).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Grid lower corner x,y,z (m).
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [-5.0, -3.5, 1.2])]
    min: Vec<f64>,
    /// Grid upper corner x,y,z (m).
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [5.0, 3.5, 1.2])]
    max: Vec<f64>,
    /// Grid spacing (m).
    #[arg(long, default_value_t = 0.25)]
    step: f64,
    /// Registered obstacle point x,y,z (m); repeatable.
    #[arg(long = "obstacle", value_parser = parse_point)]
    obstacles: Vec<Vector3<f64>>,
    /// Output CSV (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct NearestArgs {
    #[arg(long, default_value_t = 200)]
    queries: usize,
    /// Brute-force samples of the reference search.
    #[arg(long, default_value_t = 100_000)]
    dense: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Half-width of the cube queries are drawn from (m).
    #[arg(long, default_value_t = 2.5)]
    box_half: f64,
    #[arg(long, default_value_t = 10)]
    samples: usize,
    #[arg(long, default_value_t = 5)]
    newton_iterations: usize,
}

#[derive(Args)]
struct FitArgs {
    /// Impact CSV: pre_vx,pre_vy,pre_vz,post_vx,post_vy,post_vz,vertex,qw,qx,qy,qz.
    input: PathBuf,
    /// Scenario file supplying the vehicle (default: built-in vehicle).
    #[arg(long)]
    config: Option<PathBuf>,
}

fn parse_point(s: &str) -> std::result::Result<Vector3<f64>, String> {
    let v: Vec<f64> = s.split(',').map(|t| t.trim().parse::<f64>().map_err(|e| e.to_string())).collect::<std::result::Result<_, _>>()?;
    match v[..] {
        [x, y, z] => Ok(Vector3::new(x, y, z)),
        _ => Err(format!("expected x,y,z, got '{s}'")),
    }
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => Ok(fs::write(p, text)?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let exec = match (cli.sequential, cli.threads) {
        (true, _) => Execution::Sequential,
        (false, Some(n)) => Execution::ParallelWith(n),
        (false, None) => Execution::Parallel,
    };
    match run(cli.command, exec) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cmd: Command, exec: Execution) -> Result<()> {
    match cmd {
        Command::Trial(a) => trial(a),
        Command::Sweep(a) => sweep(a, exec),
        Command::ScenarioA(a) => batch(a, exec, scenario_a_config),
        Command::ScenarioB(a) => batch(a, exec, scenario_b_config),
        Command::FieldGrid(a) => field_grid(a),
        Command::NearestCheck(a) => nearest_check(a),
        Command::Fit(a) => fit(a),
    }
}

fn trial(a: TrialArgs) -> Result<()> {
    let mut cfg = match (&a.config, a.builtin) {
        (Some(p), _) => ScenarioConfig::load(p)?,
        (None, Builtin::Wall) => sweep_config(Variant::Proposed, a.speed),
        (None, Builtin::Ellipse) => scenario_a_config(Variant::Proposed),
        (None, Builtin::Trap) => scenario_b_config(Variant::Proposed),
    };
    if let Some(v) = a.variant {
        cfg.variant = v;
    }
    if a.print_config {
        print!("{}", cfg.to_toml_string()?);
        return Ok(());
    }
    let r = run_trial_with(&cfg, a.seed, RunOptions { record_log: a.export.is_some() })?;
    println!("scenario      {}", cfg.name);
    println!("variant       {}", cfg.variant.name());
    println!("seed          {}", a.seed);
    println!("outcome       {:?}", r.outcome);
    println!("min altitude  {:.4} m", r.min_altitude);
    println!("collisions    {}", r.collisions.len());
    println!("recoveries    {} (all completed: {})", r.recoveries(), r.recoveries_completed);
    println!("registered    {}", r.registry.len());
    println!("recontacts    {}", r.recontacts);
    match r.reconverged_at {
        Some(t) => println!("reconverged   {t:.3} s"),
        None => println!("reconverged   -"),
    }
    println!("end time      {:.3} s", r.end_time);
    if let Some(p) = &a.export {
        export_trajectory(&r.log, a.format, p)?;
        println!("log           {} ({} rows)", p.display(), r.log.len());
    }
    Ok(())
}

fn sweep(a: SweepArgs, exec: Execution) -> Result<()> {
    let variants = if a.variants.is_empty() { Variant::ALL.to_vec() } else { a.variants };
    let speeds = if a.speeds.is_empty() { sweep_speeds() } else { a.speeds };
    let summary = velocity_sweep(&variants, &speeds, a.trials, a.seed, exec, sweep_config)?;
    print!("{}", summary.to_text());
    for v in &variants {
        match summary.max_recovered_speed(*v) {
            Some(s) => println!("max recovered speed [{}]: {s:.1} m/s", v.name()),
            None => println!("max recovered speed [{}]: none", v.name()),
        }
    }
    if let Some(p) = &a.csv {
        fs::write(p, summary.to_csv()?)?;
    }
    Ok(())
}

fn batch(a: BatchArgs, exec: Execution, builtin: fn(Variant) -> ScenarioConfig) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => ScenarioConfig::load(p)?,
        None => builtin(a.variant),
    };
    cfg.variant = a.variant;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let results = run_batch(&cfg, a.trials, exec, RunOptions { record_log: false })?;
    if let Some(p) = &a.csv {
        fs::write(p, trials_csv(&results)?)?;
    }
    print!("{}", ScenarioSummary::from_trials(&cfg.name, cfg.variant, &results).to_text());
    Ok(())
}

fn field_grid(a: FieldGridArgs) -> Result<()> {
    let (path, cfg): (ParametricPath, FieldConfig) = match &a.config {
        Some(p) => {
            let sc = ScenarioConfig::load(p)?;
            let path = sc.mission.path().cloned().ok_or_else(|| {
                SimError::InvalidParameter("scenario has no path".into())
            })?;
            (path, sc.field)
        }
        None => {
            let sc = scenario_a_config(Variant::Proposed);
            (sc.mission.path().cloned().expect("built-in path"), sc.field)
        }
    };
    if !(a.step.is_finite() && a.step > 0.0) {
        return Err(SimError::InvalidParameter("step must be > 0".into()));
    }
    let mut registry = ObstacleRegistry::new();
    for p in &a.obstacles {
        registry.register(*p, 0.0);
    }
    let counts: Vec<usize> = (0..3).map(|k| ((a.max[k] - a.min[k]) / a.step + 1e-9).floor().max(0.0) as usize + 1).collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["x", "y", "z", "gx", "gy", "gz"])?;
    for i in 0..counts[0] {
        for j in 0..counts[1] {
            for k in 0..counts[2] {
                let x = Vector3::new(
                    a.min[0] + i as f64 * a.step,
                    a.min[1] + j as f64 * a.step,
                    a.min[2] + k as f64 * a.step,
                );
                let g = evaluate_field(&x, &path, &cfg, &registry).g;
                w.serialize((x.x, x.y, x.z, g.x, g.y, g.z))?;
            }
        }
    }
    let text = String::from_utf8(w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?)
        .expect("csv output is utf-8");
    write_or_print(a.out.as_deref(), &text)
}

fn nearest_check(a: NearestArgs) -> Result<()> {
    let path = scenario_a_config(Variant::Proposed).mission.path().cloned().expect("built-in path");
    let cfg = FieldConfig { samples: a.samples, newton_iterations: a.newton_iterations, ..Default::default() };
    cfg.validate()?;
    if a.dense < 2 || a.queries == 0 {
        return Err(SimError::InvalidParameter("need dense >= 2 and queries >= 1".into()));
    }
    let dense: Vec<(f64, Vector3<f64>)> = (0..a.dense)
        .map(|k| {
            let t = k as f64 / a.dense as f64;
            (t, path.h(t))
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let centre = path.h(0.0) - Vector3::new(4.0, 0.0, 0.0);
    let (mut worst_dtau, mut worst_res, mut worst_gap) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..a.queries {
        let x = centre + Vector3::from_fn(|_, _| rng.random_range(-a.box_half..=a.box_half));
        let tau = nearest_point(&path, &x, &cfg);
        let (t_ref, _) = dense
            .iter()
            .map(|(t, p)| (*t, (p - x).norm_squared()))
            .min_by(|p, q| p.1.total_cmp(&q.1))
            .expect("dense is non-empty");
        let raw = (tau - t_ref).abs();
        let dtau = if path.is_closed() { raw.min(1.0 - raw) } else { raw };
        let diff = path.h(tau) - x;
        let d1 = path.dh(tau);
        let residual = diff.dot(&d1).abs() / (d1.norm() * diff.norm().max(1.0));
        let gap = diff.norm() - (path.h(t_ref) - x).norm();
        worst_dtau = worst_dtau.max(dtau);
        worst_res = worst_res.max(residual);
        worst_gap = worst_gap.max(gap);
    }
    println!("queries               {}", a.queries);
    println!("dense samples         {}", a.dense);
    println!("coarse samples        {}", a.samples);
    println!("newton iterations     {}", a.newton_iterations);
    println!("max |dtau|            {worst_dtau:.3e}");
    println!("max scaled residual   {worst_res:.3e}");
    println!("max distance excess   {worst_gap:.3e} m");
    Ok(())
}

fn fit(a: FitArgs) -> Result<()> {
    let vehicle = match &a.config {
        Some(p) => ScenarioConfig::load(p)?.vehicle,
        None => VehicleConfig::default(),
    };
    let samples = read_impacts_csv(&a.input)?;
    let r = fit_restitution_friction(&samples, &vehicle.frame()?, &vehicle.inertial()?)?;
    println!("impacts used   {} of {}", r.samples_used, samples.len());
    println!("restitution    {:.6}", r.restitution);
    match r.friction {
        Some(mu) => println!("friction       {mu:.6}"),
        None => println!("friction       not identifiable (no tangential slip)"),
    }
    println!("residual rms   {:.3e} m/s", r.residual_rms);
    Ok(())
}

//! Monte Carlo execution and aggregation.
//!
//! Every trial gets its seed from `(root seed, trial index)` alone, and results
//! are collected in job order, so summaries do not depend on the worker count.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

use super::config::{ScenarioConfig, Variant};
use super::trial::{run_trial_with, RunOptions, TrialResult};

/// SplitMix64 finaliser applied to `root + (index + 1) * golden gamma`.
pub fn trial_seed(root: u64, index: u64) -> u64 {
    let mut z = root.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// How trials are scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    /// Global rayon pool. Without the `parallel` feature both parallel
    /// variants run sequentially.
    #[default]
    Parallel,
    /// Dedicated pool with this many workers.
    ParallelWith(usize),
    Sequential,
}

/// Maps `f` over `jobs`, preserving order.
pub fn map_jobs<T, R, F>(jobs: &[T], exec: Execution, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match exec {
        Execution::Sequential => Ok(jobs.iter().map(f).collect()),
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            Ok(jobs.par_iter().map(f).collect())
        }
        #[cfg(feature = "parallel")]
        Execution::ParallelWith(n) => {
            use rayon::prelude::*;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| SimError::InvalidParameter(format!("thread pool: {e}")))?;
            Ok(pool.install(|| jobs.par_iter().map(f).collect()))
        }
        #[cfg(not(feature = "parallel"))]
        Execution::Parallel | Execution::ParallelWith(_) => Ok(jobs.iter().map(f).collect()),
    }
}

/// Runs `trials` trials of one configuration with seeds derived from `cfg.seed`.
pub fn run_batch(cfg: &ScenarioConfig, trials: usize, exec: Execution, opts: RunOptions) -> Result<Vec<TrialResult>> {
    if trials == 0 {
        return Err(SimError::InvalidParameter("trials must be >= 1".into()));
    }
    let seeds: Vec<u64> = (0..trials as u64).map(|i| trial_seed(cfg.seed, i)).collect();
    map_jobs(&seeds, exec, |&s| run_trial_with(cfg, s, opts))?.into_iter().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub variant: Variant,
    pub speed_mps: f64,
    pub trials: usize,
    pub successes: usize,
    pub failures: usize,
    pub invalid: usize,
    /// Mean centre-of-mass speed at first wall contact over trials that reached the wall.
    pub mean_impact_speed_mps: Option<f64>,
}

impl CellSummary {
    pub fn from_trials(variant: Variant, speed_mps: f64, results: &[TrialResult], floor_index: Option<usize>) -> Self {
        let successes = results.iter().filter(|r| r.is_success()).count();
        let invalid = results.iter().filter(|r| r.is_invalid()).count();
        let impacts: Vec<f64> = results.iter().filter_map(|r| r.first_impact(floor_index).map(|c| c.com_speed)).collect();
        Self {
            variant,
            speed_mps,
            trials: results.len(),
            successes,
            failures: results.len() - successes - invalid,
            invalid,
            mean_impact_speed_mps: (!impacts.is_empty()).then(|| impacts.iter().sum::<f64>() / impacts.len() as f64),
        }
    }

    /// A cell succeeds only if no trial fails.
    pub fn succeeded(&self) -> bool {
        self.successes == self.trials
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SweepSummary {
    pub cells: Vec<CellSummary>,
}

impl SweepSummary {
    pub fn speeds(&self) -> Vec<f64> {
        let mut v: Vec<f64> = Vec::new();
        for c in &self.cells {
            if !v.contains(&c.speed_mps) {
                v.push(c.speed_mps);
            }
        }
        v.sort_by(f64::total_cmp);
        v
    }

    pub fn variants(&self) -> Vec<Variant> {
        let mut v: Vec<Variant> = Vec::new();
        for c in &self.cells {
            if !v.contains(&c.variant) {
                v.push(c.variant);
            }
        }
        v
    }

    pub fn cell(&self, variant: Variant, speed: f64) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.variant == variant && c.speed_mps == speed)
    }

    /// Largest speed such that every cell up to and including it succeeded.
    pub fn max_recovered_speed(&self, variant: Variant) -> Option<f64> {
        let mut best = None;
        for s in self.speeds() {
            match self.cell(variant, s) {
                Some(c) if c.succeeded() => best = Some(s),
                _ => break,
            }
        }
        best
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["variant", "speed_mps", "trials", "successes", "failures", "invalid", "cell_success", "mean_impact_speed_mps"])?;
        for c in &self.cells {
            w.write_record([
                c.variant.name().to_string(),
                format!("{}", c.speed_mps),
                c.trials.to_string(),
                c.successes.to_string(),
                c.failures.to_string(),
                c.invalid.to_string(),
                c.succeeded().to_string(),
                c.mean_impact_speed_mps.map_or(String::new(), |v| format!("{v:.4}")),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| SimError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Aligned table: one row per variant, one column per speed, `ok`/`x` marks.
    pub fn to_text(&self) -> String {
        let speeds = self.speeds();
        let mut out = String::new();
        let _ = write!(out, "{:<22}", "variant \\ speed (m/s)");
        for s in &speeds {
            let _ = write!(out, "{s:>6.1}");
        }
        out.push('\n');
        for v in self.variants() {
            let _ = write!(out, "{:<22}", v.name());
            for s in &speeds {
                let mark = match self.cell(v, *s) {
                    Some(c) if c.succeeded() => "ok".to_string(),
                    Some(c) => format!("{}/{}", c.successes, c.trials),
                    None => "-".to_string(),
                };
                let _ = write!(out, "{mark:>6}");
            }
            out.push('\n');
        }
        out
    }
}

/// Runs every (variant, speed) cell with `trials` trials each. `make` builds the
/// configuration of a cell; trial seeds depend only on the root seed and index.
pub fn velocity_sweep<F>(
    variants: &[Variant],
    speeds: &[f64],
    trials: usize,
    root_seed: u64,
    exec: Execution,
    make: F,
) -> Result<SweepSummary>
where
    F: Fn(Variant, f64) -> ScenarioConfig,
{
    if trials == 0 {
        return Err(SimError::InvalidParameter("trials must be >= 1".into()));
    }
    let cells: Vec<(Variant, f64, ScenarioConfig)> =
        variants.iter().flat_map(|&v| speeds.iter().map(move |&s| (v, s))).map(|(v, s)| (v, s, make(v, s))).collect();
    for (_, _, c) in &cells {
        c.validate()?;
    }
    let jobs: Vec<(usize, u64)> =
        (0..cells.len()).flat_map(|c| (0..trials as u64).map(move |i| (c, trial_seed(root_seed, i)))).collect();
    let opts = RunOptions { record_log: false };
    let results = map_jobs(&jobs, exec, |&(c, seed)| run_trial_with(&cells[c].2, seed, opts))?;
    let mut summary = SweepSummary::default();
    let mut it = results.into_iter();
    for (v, s, cfg) in &cells {
        let chunk: Vec<TrialResult> = it.by_ref().take(trials).collect::<Result<_>>()?;
        let floor = super::scenarios::floor_index(&cfg.obstacles);
        summary.cells.push(CellSummary::from_trials(*v, *s, &chunk, floor));
    }
    Ok(summary)
}

/// Aggregate over a batch of path-following trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub name: String,
    pub variant: Variant,
    pub trials: usize,
    pub successes: usize,
    pub failures: usize,
    pub invalid: usize,
    pub floor_touches: usize,
    pub recoveries: usize,
    /// Recoveries completed over recoveries started.
    pub recovery_rate: f64,
    pub recontacts: usize,
    pub reconverged: usize,
    pub mean_registered: f64,
}

impl ScenarioSummary {
    pub fn from_trials(name: &str, variant: Variant, results: &[TrialResult]) -> Self {
        let successes = results.iter().filter(|r| r.is_success()).count();
        let invalid = results.iter().filter(|r| r.is_invalid()).count();
        let recoveries: usize = results.iter().map(|r| r.recoveries()).sum();
        let unfinished = results.iter().filter(|r| !r.recoveries_completed).count();
        Self {
            name: name.to_string(),
            variant,
            trials: results.len(),
            successes,
            failures: results.len() - successes - invalid,
            invalid,
            floor_touches: results.iter().filter(|r| r.floor_touched).count(),
            recoveries,
            recovery_rate: if recoveries == 0 { 1.0 } else { (recoveries - unfinished) as f64 / recoveries as f64 },
            recontacts: results.iter().map(|r| r.recontacts).sum(),
            reconverged: results.iter().filter(|r| r.reconverged_at.is_some()).count(),
            mean_registered: results.iter().map(|r| r.registry.len() as f64).sum::<f64>() / results.len().max(1) as f64,
        }
    }

    pub fn to_text(&self) -> String {
        format!(
            "{} [{}]: {}/{} succeeded ({} failed, {} invalid); floor touches {}; recoveries {} (completed {:.1}%); \
             re-collisions near registered points {}; reconverged {}; mean registered points {:.2}\n",
            self.name,
            self.variant.name(),
            self.successes,
            self.trials,
            self.failures,
            self.invalid,
            self.floor_touches,
            self.recoveries,
            100.0 * self.recovery_rate,
            self.recontacts,
            self.reconverged,
            self.mean_registered,
        )
    }
}

/// Per-trial outcome lines as CSV.
pub fn trials_csv(results: &[TrialResult]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "index", "seed", "outcome", "min_altitude_m", "collisions", "recoveries", "registered", "recontacts", "reconverged_at_s",
    ])?;
    for (i, r) in results.iter().enumerate() {
        let outcome = match &r.outcome {
            super::trial::Outcome::Success => "success".to_string(),
            super::trial::Outcome::Failure => "failure".to_string(),
            super::trial::Outcome::Invalid(why) => format!("invalid: {why}"),
        };
        w.write_record([
            i.to_string(),
            r.seed.to_string(),
            outcome,
            format!("{:.6}", r.min_altitude),
            r.collisions.len().to_string(),
            r.recoveries().to_string(),
            r.registry.len().to_string(),
            r.recontacts.to_string(),
            r.reconverged_at.map_or(String::new(), |t| format!("{t:.3}")),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| SimError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

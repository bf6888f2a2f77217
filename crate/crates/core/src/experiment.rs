//! Turning a validated config into runs, sweeps and files on disk.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::env::{Environment, SimEnv};
use crate::error::Result;
use crate::io::write_json;
use crate::learner::step_size;
use crate::linalg::op_norm;
use crate::lti::{CostOracle, LtiSystem, ReachableBox};
use crate::pipeline::{
    derive_seed, evaluate, median, oracle_clean_data, run_clean, run_etc, run_output_etc, slope_fit, ComparatorResult,
    Horizon, Mode, RegretReport, RunSettings, RunTrace, Schedule, SlopeFit,
};
use crate::pipeline::regret::SLOPE_CLAMP;

const DISTURBANCE_TAG: u64 = 3;
const MEASUREMENT_TAG: u64 = 4;
const COST_TAG: u64 = 5;
const SYNTHETIC_TAG: u64 = 6;

/// A priori bounds on inputs and signals for the configured system.
pub fn reachable_box(cfg: &ExperimentConfig, sys: &LtiSystem<f64>, l: usize) -> ReachableBox {
    let rho = cfg.system.rho;
    let eps = cfg.disturbance.epsilon;
    let eps_e = if cfg.output() { cfg.measurement.as_ref().map_or(0.0, |e| e.epsilon) } else { 0.0 };
    let c_norm = if cfg.output() { op_norm(sys.c()) } else { 1.0 };
    let acc = c_norm * eps / (1.0 - rho) + eps_e;
    let explore = if cfg.mode == Mode::Clean { 0.0 } else { (sys.m() as f64).sqrt() };
    let input = (l as f64 * cfg.d * acc).max(explore);
    let state = (op_norm(sys.b()) * input + eps) / (1.0 - rho);
    ReachableBox { signal: c_norm * state + eps_e, input }
}

/// Empirical stability envelope for Stage-2 signals:
/// `10 (|B| L D eps / (1 - rho)^2 + eps / (1 - rho))`.
pub fn stability_envelope(sys: &LtiSystem<f64>, l: usize, d: f64, eps: f64, rho: f64) -> f64 {
    10.0 * (op_norm(sys.b()) * l as f64 * d * eps / (1.0 - rho).powi(2) + eps / (1.0 - rho))
}

/// Everything needed to run one `(horizon, seed)` instance.
pub struct Instance {
    pub system: LtiSystem<f64>,
    pub env: SimEnv<f64>,
    pub cost: CostOracle<f64>,
    pub settings: RunSettings<f64>,
}

pub fn instance(cfg: &ExperimentConfig, horizon: usize, seed: u64) -> Result<Instance> {
    let system = cfg.build_system()?;
    let schedule: Schedule = cfg.schedule(horizon);
    let (n, q) = (system.n(), system.signal_dim(cfg.output()));
    let dist = cfg.disturbance.build(n, derive_seed(seed, DISTURBANCE_TAG));
    let env = if cfg.output() {
        let meas = cfg.measurement.as_ref().map(|e| e.build(system.p(), derive_seed(seed, MEASUREMENT_TAG)));
        SimEnv::output_feedback(system.clone(), dist, meas)?
    } else {
        SimEnv::state_feedback(system.clone(), dist)?
    };
    let reach = reachable_box(cfg, &system, schedule.l);
    let cost = cfg.cost.build(q, system.m(), cfg.g, reach, derive_seed(seed, COST_TAG))?;
    let settings = RunSettings {
        schedule,
        d: cfg.d,
        g: cost.g(),
        window: cfg.window,
        pe_order: schedule.l + 2 * n,
        seed,
    };
    Ok(Instance { system, env, cost, settings })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: Mode,
    pub horizon: usize,
    pub seed: u64,
    pub config_hash: String,
    pub schedule: Schedule,
    pub accounting: Horizon,
    #[serde(rename = "G")]
    pub g: f64,
    pub step_size: f64,
    pub probe_attempts: usize,
    pub max_signal_norm_stage2: f64,
    pub stability_envelope: f64,
    pub final_max_block_norm: f64,
    #[serde(flatten)]
    pub report: RegretReport,
}

pub struct RunOutcome {
    pub trace: RunTrace<f64>,
    pub report: RegretReport,
    pub comparator: ComparatorResult<f64>,
    pub summary: RunSummary,
}

/// Run the configured mode at `horizon` with `seed` and evaluate regret.
pub fn run_one(cfg: &ExperimentConfig, horizon: usize, seed: u64) -> Result<RunOutcome> {
    let Instance { system, mut env, cost, settings } = instance(cfg, horizon, seed)?;
    let mut trace = match cfg.mode {
        Mode::Clean => {
            let (u, s) = oracle_clean_data(&system, false, settings.schedule.n_rollout, settings.pe_order, seed)?;
            run_clean(&mut env, &u, &s, &cost, &settings)?
        }
        Mode::Etc => run_etc(&mut env, &cost, &settings)?,
        Mode::Output => run_output_etc(&mut env, &cost, &settings)?,
    };
    trace.config_hash = cfg.hash();
    let (report, comparator) = evaluate(&trace, env.ground_truth(), &cost, cfg.accounting())?;
    let summary = RunSummary {
        mode: cfg.mode,
        horizon,
        seed,
        config_hash: trace.config_hash.clone(),
        schedule: settings.schedule,
        accounting: cfg.accounting(),
        g: settings.g,
        step_size: step_size(settings.l(), settings.d, settings.g, horizon),
        probe_attempts: trace.probe_attempts,
        max_signal_norm_stage2: trace.max_signal_norm(Some(2)),
        stability_envelope: stability_envelope(&system, settings.l(), cfg.d, cfg.disturbance.epsilon, cfg.system.rho),
        final_max_block_norm: trace.final_params.max_block_norm(),
        report: report.clone(),
    };
    Ok(RunOutcome { trace, report, comparator, summary })
}

/// `trace.csv` and `summary.json` under `dir`.
pub fn write_run(dir: &Path, outcome: &RunOutcome) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    outcome.trace.save_csv(&dir.join("trace.csv"))?;
    write_json(&dir.join("summary.json"), &outcome.summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    #[serde(rename = "T")]
    pub horizon: usize,
    pub seed: u64,
    pub regret: f64,
    pub learner_cost: f64,
    pub comparator_cost: f64,
    #[serde(rename = "log_T")]
    pub log_t: f64,
    pub log_regret: f64,
}

impl SweepRow {
    fn new(horizon: usize, seed: u64, learner_cost: f64, comparator_cost: f64) -> Self {
        let regret = learner_cost - comparator_cost;
        Self {
            horizon,
            seed,
            regret,
            learner_cost,
            comparator_cost,
            log_t: (horizon as f64).ln(),
            log_regret: regret.max(SLOPE_CLAMP).ln(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepFailure {
    #[serde(rename = "T")]
    pub horizon: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub mode: Mode,
    pub config_hash: String,
    pub synthetic: bool,
    pub horizons: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Median regret across seeds, per horizon.
    pub median_regret: Vec<f64>,
    pub fit: Option<SlopeFit>,
    /// Largest stage-2 signal norm over its stability envelope, across runs.
    pub max_envelope_ratio: Option<f64>,
    pub failures: Vec<SweepFailure>,
}

pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    /// Per-run summaries, sorted like `rows`; empty for synthetic sweeps.
    pub runs: Vec<RunSummary>,
    pub summary: SweepSummary,
}

impl SweepOutcome {
    pub fn complete(&self) -> bool {
        self.summary.failures.is_empty()
    }
}

fn synthetic_row(cfg: &ExperimentConfig, horizon: usize, seed: u64) -> SweepRow {
    let syn = cfg.synthetic.expect("synthetic sweep");
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, SYNTHETIC_TAG));
    rng.set_stream(horizon as u64);
    let noise = 1.0 + syn.noise * (2.0 * rng.random::<f64>() - 1.0);
    SweepRow::new(horizon, seed, syn.c * (horizon as f64).powf(syn.exponent) * noise, 0.0)
}

/// Run every `(horizon, seed)` pair on `jobs` threads (0 = all cores) and
/// fit the regret exponent over per-horizon medians.
pub fn sweep(cfg: &ExperimentConfig, horizons: &[usize], seeds: &[u64], jobs: usize) -> Result<SweepOutcome> {
    let pairs: Vec<(usize, u64)> = horizons.iter().flat_map(|&t| seeds.iter().map(move |&s| (t, s))).collect();
    type Done = (SweepRow, Option<RunSummary>);
    let work = || -> Vec<std::result::Result<Done, SweepFailure>> {
        pairs
            .par_iter()
            .map(|&(t, s)| {
                if cfg.synthetic.is_some() {
                    return Ok((synthetic_row(cfg, t, s), None));
                }
                run_one(cfg, t, s)
                    .map(|o| (SweepRow::new(t, s, o.report.learner_cost, o.report.comparator_cost), Some(o.summary)))
                    .map_err(|e| SweepFailure { horizon: t, seed: s, error: e.to_string() })
            })
            .collect()
    };
    let results = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| crate::Error::Contract(format!("thread pool: {e}")))?
        .install(work);
    let mut done = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(d) => done.push(d),
            Err(f) => failures.push(f),
        }
    }
    done.sort_by_key(|d| (d.0.horizon, d.0.seed));
    let (rows, runs): (Vec<SweepRow>, Vec<Option<RunSummary>>) = done.into_iter().unzip();
    let runs: Vec<RunSummary> = runs.into_iter().flatten().collect();
    let max_envelope_ratio = runs
        .iter()
        .map(|r| r.max_signal_norm_stage2 / r.stability_envelope)
        .fold(None, |acc: Option<f64>, x| Some(acc.map_or(x, |a| a.max(x))));
    let mut done_t = Vec::new();
    let mut medians = Vec::new();
    for &t in horizons {
        let vals: Vec<f64> = rows.iter().filter(|r| r.horizon == t).map(|r| r.regret).collect();
        if !vals.is_empty() {
            done_t.push(t);
            medians.push(median(&vals));
        }
    }
    let ts: Vec<f64> = done_t.iter().map(|t| *t as f64).collect();
    let fit = slope_fit(&ts, &medians).ok();
    let summary = SweepSummary {
        mode: cfg.mode,
        config_hash: cfg.hash(),
        synthetic: cfg.synthetic.is_some(),
        horizons: done_t,
        seeds: seeds.to_vec(),
        median_regret: medians,
        fit,
        max_envelope_ratio,
        failures,
    };
    Ok(SweepOutcome { rows, runs, summary })
}

/// `regret_vs_T.csv` and `summary.json` under `dir`.
pub fn write_sweep(dir: &Path, outcome: &SweepOutcome) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut wtr = csv::Writer::from_path(dir.join("regret_vs_T.csv"))?;
    for row in &outcome.rows {
        wtr.serialize(row)?;
    }
    if outcome.rows.is_empty() {
        wtr.write_record(SWEEP_HEADER)?;
    }
    wtr.flush()?;
    write_json(&dir.join("summary.json"), &outcome.summary)
}

pub const SWEEP_HEADER: [&str; 7] = ["T", "seed", "regret", "learner_cost", "comparator_cost", "log_T", "log_regret"];

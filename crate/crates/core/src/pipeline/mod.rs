//! End-to-end runs: the clean-trajectory learner, explore-then-commit in
//! state or output feedback, and regret evaluation in hindsight.
//!
//! Runs only touch the environment through [`Environment::reset`] and
//! [`Environment::step`]; ground truth is read afterwards by [`evaluate`].

pub mod comparator;
pub mod regret;
pub mod schedule;

use std::io::Write;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::behavior::{acc_noise, at_or_zero, AccHistory, HankelPair};
use crate::controller::{adac_control, AdacParams};
use crate::env::{Environment, GroundTruth};
use crate::error::{dim_err, Error, Result};
use crate::explore::{clean_hankel, collect_rollouts_observed, estimate_phi, synthesize_clean, ProbeInput, PROBE_RETRIES};
use crate::learner::{build_sensitivity, grad_f, ogd_step, step_size, SensitivityTracker};
use crate::lti::{simulate, CostOracle, DisturbanceGen, LtiSystem};
use crate::scalar::{lit, to_f64, Real};

pub use comparator::{comparator_objective, comparator_oracle, fixed_policy_cost, ComparatorResult, QuadraticObjective, Segment};
pub use regret::{median, slope_fit, RegretReport, SlopeFit};
pub use schedule::{ceil_t23, default_i0, default_l, default_n, Schedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Learner handed a noise-free trajectory; no exploration.
    Clean,
    /// Explore-then-commit on the state.
    Etc,
    /// Explore-then-commit on noisy outputs.
    Output,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Clean => "clean",
            Mode::Etc => "etc",
            Mode::Output => "output",
        })
    }
}

/// Knobs shared by all run modes.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings<S: Real> {
    pub schedule: Schedule,
    pub d: S,
    /// Gradient bound used in the step size.
    pub g: S,
    /// Truncation window for counterfactual rollouts; `None` keeps all history.
    pub window: Option<usize>,
    /// Required excitation order of the probe, `L + 2n`.
    pub pe_order: usize,
    pub seed: u64,
}

impl<S: Real> RunSettings<S> {
    pub fn horizon(&self) -> usize {
        self.schedule.horizon
    }
    pub fn l(&self) -> usize {
        self.schedule.l
    }
}

/// Derive an independent seed for one purpose from a run seed.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const ROLLOUT_TAG: u64 = 1;
const PROBE_TAG: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord<S: Real> {
    /// Global time.
    pub t: usize,
    pub stage: u8,
    /// Signal observed before the input was applied.
    pub signal: DVector<S>,
    pub input: DVector<S>,
    /// Reconstructed accumulated disturbance; Stage 2 only.
    pub w_hat: Option<DVector<S>>,
    pub cost: S,
    /// Largest block norm of the controller that chose `input`.
    pub m_norm: S,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace<S: Real> {
    pub mode: Mode,
    pub records: Vec<StepRecord<S>>,
    pub schedule: Schedule,
    /// Global time at which the learner takes over; zero in clean mode.
    pub stage_boundary: usize,
    pub seed: u64,
    pub config_hash: String,
    pub final_params: AdacParams<S>,
    /// Probe draws needed to get a usable Hankel pair.
    pub probe_attempts: usize,
}

impl<S: Real> RunTrace<S> {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Summed cost over records with `t >= from`.
    pub fn cost_from(&self, from: usize) -> S {
        self.records.iter().filter(|r| r.t >= from).fold(S::zero(), |a, r| a + r.cost)
    }

    pub fn max_signal_norm(&self, stage: Option<u8>) -> S {
        self.records
            .iter()
            .filter(|r| stage.is_none_or(|s| r.stage == s))
            .map(|r| r.signal.norm())
            .fold(S::zero(), |a, b| a.max(b))
    }

    pub fn csv_header(&self) -> Vec<String> {
        let q = self.records.first().map_or(0, |r| r.signal.len());
        let m = self.records.first().map_or(0, |r| r.input.len());
        trace_header(q, m)
    }

    /// One row per step: `t, stage, s_*, u_*, w_hat_*, cost, m_norm`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(self.csv_header())?;
        let q = self.records.first().map_or(0, |r| r.signal.len());
        for r in &self.records {
            let mut row = vec![r.t.to_string(), r.stage.to_string()];
            row.extend(r.signal.iter().map(|v| fmt(*v)));
            row.extend(r.input.iter().map(|v| fmt(*v)));
            match &r.w_hat {
                Some(w) => row.extend(w.iter().map(|v| fmt(*v))),
                None => row.extend(std::iter::repeat_n(String::new(), q)),
            }
            row.push(fmt(r.cost));
            row.push(fmt(r.m_norm));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

pub fn trace_header(q: usize, m: usize) -> Vec<String> {
    let mut h = vec!["t".to_string(), "stage".to_string()];
    h.extend((1..=q).map(|i| format!("s_{i}")));
    h.extend((1..=m).map(|i| format!("u_{i}")));
    h.extend((1..=q).map(|i| format!("w_hat_{i}")));
    h.push("cost".into());
    h.push("m_norm".into());
    h
}

fn fmt<S: Real>(v: S) -> String {
    format!("{:e}", to_f64(v))
}

/// The online learner: reconstruct disturbances through `h`, play the
/// current controller, and take one projected gradient step per round.
/// Starts right after a reset whose observed signal is `s0`.
fn commit_stage<S: Real, E: Environment<S> + ?Sized>(
    env: &mut E,
    h: &HankelPair<S>,
    cost: &CostOracle<S>,
    settings: &RunSettings<S>,
    s0: DVector<S>,
    steps: usize,
    t0: usize,
    records: &mut Vec<StepRecord<S>>,
) -> Result<AdacParams<S>> {
    let (l, hl, m, q) = (settings.l(), h.l(), h.input_dim(), h.signal_dim());
    if env.input_dim() != m || env.signal_dim() != q {
        return Err(dim_err("commit_stage::env", format!("{m}/{q}"), format!("{}/{}", env.input_dim(), env.signal_dim())));
    }
    let lambda = step_size(l, settings.d, settings.g, settings.horizon());
    let mut params = AdacParams::zeros(l, m, q, settings.d);
    let mut hist = AccHistory::new(l, q);
    let mut tracker = settings.window.is_none().then(|| SensitivityTracker::new(h, l));
    let mut w_hat: Vec<DVector<S>> = Vec::with_capacity(steps);
    let mut inputs: Vec<DVector<S>> = Vec::with_capacity(steps);
    let mut signals: Vec<DVector<S>> = Vec::with_capacity(steps + 1);
    signals.push(s0);
    let slack: S = lit(1.0 + 1e-9);
    for tau in 0..steps {
        let map = match &tracker {
            Some(tr) => tr.map(),
            None => build_sensitivity(&w_hat, h, l, tau, settings.window)?,
        };
        let u = adac_control(&params, &hist);
        let lag_max = (1..=l).map(|i| hist.lag(i).norm()).fold(S::zero(), |a, b| a.max(b));
        let cap = from_len::<S>(l) * settings.d * lag_max * slack + lit(1e-12);
        if u.norm() > cap {
            return Err(Error::Invariant(format!("step {}: |u| = {} exceeds L*D*max|w| = {}", t0 + tau, u.norm(), cap)));
        }
        let c = cost.at(t0 + tau);
        let value = c.value(&u, &signals[tau]);
        let next = env.step(&u)?;
        if next.len() != q {
            return Err(dim_err("commit_stage::signal", q, next.len()));
        }
        inputs.push(u.clone());
        signals.push(next);
        // reconstruct w_tau from u_{tau-L+2..tau}, s_{tau-L+2}, s_{tau+1}, w_{tau-L+1}
        let first = tau as isize - hl as isize + 2;
        let window: Vec<DVector<S>> = (0..hl - 1).map(|k| at_or_zero(&inputs, first + k as isize, m)).collect();
        let s_old = if first <= 0 { DVector::zeros(q) } else { signals[first as usize].clone() };
        let w_prev = at_or_zero(&w_hat, tau as isize - hl as isize + 1, q);
        let w_t = acc_noise(&window, &s_old, &signals[tau + 1], &w_prev, h)?;
        if w_t.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invariant(format!("step {}: non-finite disturbance estimate", t0 + tau)));
        }
        let m_norm = params.max_block_norm();
        let grad = grad_f(&params, &map, &c)?;
        params = ogd_step(&params, &grad, lambda)?;
        if !params.is_feasible() {
            return Err(Error::Invariant(format!("step {}: iterate left the admissible set", t0 + tau)));
        }
        records.push(StepRecord {
            t: t0 + tau,
            stage: 2,
            signal: signals[tau].clone(),
            input: u,
            w_hat: Some(w_t.clone()),
            cost: value,
            m_norm,
        });
        hist.push(w_t.clone());
        if let Some(tr) = tracker.as_mut() {
            tr.push(w_t.clone())?;
        }
        w_hat.push(w_t);
    }
    Ok(params)
}

fn from_len<S: Real>(n: usize) -> S {
    crate::scalar::from_usize(n)
}

/// Learner handed a clean trajectory (`u_seq[k]` applied at signal
/// `s_seq[k]`): runs `T` online steps from rest.
pub fn run_clean<S: Real, E: Environment<S> + ?Sized>(
    env: &mut E,
    u_seq: &[DVector<S>],
    s_seq: &[DVector<S>],
    cost: &CostOracle<S>,
    settings: &RunSettings<S>,
) -> Result<RunTrace<S>> {
    let h = HankelPair::new(u_seq, s_seq, settings.l())?;
    let s0 = env.reset()?;
    let mut records = Vec::with_capacity(settings.horizon());
    let final_params = commit_stage(env, &h, cost, settings, s0, settings.horizon(), 0, &mut records)?;
    Ok(RunTrace {
        mode: Mode::Clean,
        records,
        schedule: settings.schedule,
        stage_boundary: 0,
        seed: settings.seed,
        config_hash: String::new(),
        final_params,
        probe_attempts: 0,
    })
}

/// Stage 1 plus Hankel construction: `I0` rollouts with +-1 inputs, the
/// Toeplitz estimate, and a probe response treated as clean data.
pub fn explore_stage<S: Real, E: Environment<S> + ?Sized>(
    env: &mut E,
    cost: &CostOracle<S>,
    settings: &RunSettings<S>,
    records: &mut Vec<StepRecord<S>>,
) -> Result<(HankelPair<S>, usize)> {
    let sch = settings.schedule;
    let mut t = 0usize;
    let batch = collect_rollouts_observed(env, sch.i0, sch.n_rollout, derive_seed(settings.seed, ROLLOUT_TAG), |s, u| {
        records.push(StepRecord {
            t,
            stage: 1,
            signal: s.clone(),
            input: u.clone(),
            w_hat: None,
            cost: cost.value(t, u, s),
            m_norm: S::zero(),
        });
        t += 1;
    })?;
    let phi_hat = estimate_phi(&batch);
    let probe_seed = derive_seed(settings.seed, PROBE_TAG);
    let m = env.input_dim();
    for attempt in 0..PROBE_RETRIES {
        let probe = ProbeInput::sample(sch.n_rollout, m, probe_seed, attempt as u64);
        if !crate::behavior::persistently_exciting(&probe.u, settings.pe_order) {
            continue;
        }
        let response = synthesize_clean(&phi_hat, &probe)?;
        match clean_hankel(&probe, &response, sch.l) {
            Ok(h) => return Ok((h, attempt + 1)),
            Err(Error::SingularRepresentation { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::Persistency { order: settings.pe_order, attempts: PROBE_RETRIES })
}

/// Explore-then-commit. Works for state or output feedback alike; the
/// environment decides what the signal is.
pub fn run_etc<S: Real, E: Environment<S> + ?Sized>(
    env: &mut E,
    cost: &CostOracle<S>,
    settings: &RunSettings<S>,
) -> Result<RunTrace<S>> {
    run_two_stage(env, cost, settings, Mode::Etc)
}

/// Explore-then-commit on outputs `y = C x + e`.
pub fn run_output_etc<S: Real, E: Environment<S> + ?Sized>(
    env: &mut E,
    cost: &CostOracle<S>,
    settings: &RunSettings<S>,
) -> Result<RunTrace<S>> {
    run_two_stage(env, cost, settings, Mode::Output)
}

fn run_two_stage<S: Real, E: Environment<S> + ?Sized>(
    env: &mut E,
    cost: &CostOracle<S>,
    settings: &RunSettings<S>,
    mode: Mode,
) -> Result<RunTrace<S>> {
    let sch = settings.schedule;
    if sch.t_s >= sch.horizon {
        return Err(Error::Contract(format!("exploration length {} leaves no steps of horizon {}", sch.t_s, sch.horizon)));
    }
    let mut records = Vec::with_capacity(sch.horizon);
    let (h, probe_attempts) = explore_stage(env, cost, settings, &mut records)?;
    let s0 = env.reset()?;
    let final_params = commit_stage(env, &h, cost, settings, s0, sch.horizon - sch.t_s, sch.t_s, &mut records)?;
    Ok(RunTrace {
        mode,
        records,
        schedule: sch,
        stage_boundary: sch.t_s,
        seed: settings.seed,
        config_hash: String::new(),
        final_params,
        probe_attempts,
    })
}

/// Noise-free trajectory of the true system under an exciting probe, for
/// clean-mode runs. Returns inputs `u_0..u_{N-1}` and signals `s_0..s_{N-1}`.
pub fn oracle_clean_data<S: Real>(
    sys: &LtiSystem<S>,
    output: bool,
    n_len: usize,
    pe_order: usize,
    seed: u64,
) -> Result<(Vec<DVector<S>>, Vec<DVector<S>>)> {
    let probe = ProbeInput::sample_exciting(n_len, sys.m(), pe_order, derive_seed(seed, PROBE_TAG))?;
    let tr = simulate(sys, &probe.u, &DisturbanceGen::zero(sys.n()), None, &DVector::zeros(sys.n()), n_len)?;
    let signals = if output { tr.outputs[..n_len].to_vec() } else { tr.states[..n_len].to_vec() };
    Ok((probe.u, signals))
}

/// Which steps enter the regret sums.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Horizon {
    /// Every step, the comparator running from rest at time zero.
    Full,
    /// Only the learner's stage, the comparator starting from rest with it.
    CommitOnly,
}

/// Hindsight segment for a trace under the chosen accounting.
pub fn segment_for<'a, S: Real>(trace: &RunTrace<S>, truth: &'a GroundTruth<S>, horizon: Horizon) -> Result<Segment<'a, S>> {
    let total = trace.schedule.horizon;
    if truth.steps() != total || trace.len() != total {
        return Err(dim_err("segment_for::steps", total, format!("{} recorded / {} traced", truth.steps(), trace.len())));
    }
    let t0 = match horizon {
        Horizon::Full => 0,
        Horizon::CommitOnly => trace.stage_boundary,
    };
    let measurement = if truth.output_feedback {
        if truth.measurement_noise.len() <= total {
            return Err(dim_err("segment_for::measurement", total + 1, truth.measurement_noise.len()));
        }
        Some(&truth.measurement_noise[t0..=total])
    } else {
        None
    };
    Ok(Segment {
        system: &truth.system,
        disturbances: &truth.disturbances[t0..total],
        measurement,
        t0,
        output: truth.output_feedback,
    })
}

/// Policy regret of a finished run against the best fixed controller.
pub fn evaluate<S: Real>(
    trace: &RunTrace<S>,
    truth: &GroundTruth<S>,
    cost: &CostOracle<S>,
    horizon: Horizon,
) -> Result<(RegretReport, ComparatorResult<S>)> {
    let seg = segment_for(trace, truth, horizon)?;
    let l = trace.final_params.l();
    let best = comparator_oracle(&seg, cost, l, trace.final_params.d())?;
    let learner = to_f64(trace.cost_from(seg.t0));
    let report = RegretReport::new(learner, to_f64(best.cost), best.converged, best.iterations, seg.len(), seg.t0);
    Ok((report, best))
}

/// Learner cost recomputed by re-simulating the recorded inputs against the
/// true system, restarting from rest at every recorded reset.
pub fn replay_learner_cost<S: Real>(trace: &RunTrace<S>, truth: &GroundTruth<S>, cost: &CostOracle<S>, from: usize) -> Result<S> {
    let sys = &truth.system;
    let mut x = DVector::<S>::zeros(sys.n());
    let mut total = S::zero();
    for r in &trace.records {
        if truth.episode_starts.contains(&r.t) {
            x = DVector::zeros(sys.n());
        }
        let s = if truth.output_feedback { sys.c() * &x + &truth.measurement_noise[r.t] } else { x.clone() };
        if r.t >= from {
            total += cost.value(r.t, &r.input, &s);
        }
        x = sys.a() * &x + sys.b() * &r.input + &truth.disturbances[r.t];
    }
    Ok(total)
}

//! Fast self-checks behind `adaclab verify`. Each check builds its own
//! small random instances from a fixed seed and compares the library
//! against a model-aware reference.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::behavior::{acc_noise, at_or_zero, extract_lstep, lstep_step, pi_traj, AccHistory, HankelPair};
use crate::config::ExperimentConfig;
use crate::controller::{adac_control, project_m, AdacParams};
use crate::env::{Environment, SealedEnv, SimEnv};
use crate::experiment::{instance, run_one};
use crate::explore::collect_rollouts;
use crate::learner::{build_sensitivity, grad_f, ogd_step, surrogate_value};
use crate::linalg::{mat_pow, max_abs_diff, stack};
use crate::lti::system::{gaussian_matrix, gaussian_vector};
use crate::lti::{
    accumulated_disturbances, observed_disturbances, simulate, step, toeplitz_phi, DisturbanceGen, DisturbanceKind,
    LtiSystem, QuadStep,
};
use crate::pipeline::{explore_stage, run_etc, run_output_etc};

/// Deliberate damage applied before the checks, to confirm they can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Shift one column of the signal Hankel matrix fed to the
    /// reconstruction check.
    CorruptHankelColumn,
}

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct Report {
    pub checks: Vec<Check>,
    pub seconds: f64,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn table(&self) -> String {
        let width = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
        let mut out = String::new();
        for c in &self.checks {
            let status = if c.passed { "PASS" } else { "FAIL" };
            out.push_str(&format!("{status}  {:<width$}  {:>7.2}s  {}\n", c.name, c.seconds, c.detail));
        }
        let n_ok = self.checks.iter().filter(|c| c.passed).count();
        out.push_str(&format!("{n_ok}/{} checks passed in {:.2}s\n", self.checks.len(), self.seconds));
        out
    }
}

type Outcome = std::result::Result<String, String>;

/// Run every check; `fault` injects damage first.
pub fn run(fault: Option<Fault>) -> Report {
    let corrupt = fault == Some(Fault::CorruptHankelColumn);
    let suite: Vec<(&'static str, Box<dyn Fn() -> Outcome>)> = vec![
        ("disturbance reconstruction", Box::new(move || reconstruction(corrupt))),
        ("L-step model", Box::new(lstep)),
        ("counterfactual replay", Box::new(counterfactual)),
        ("surrogate gradient", Box::new(gradient)),
        ("projection", Box::new(projection)),
        ("OGD feasibility", Box::new(ogd_feasibility)),
        ("rollout residual identity", Box::new(rollout_residual)),
        ("estimated-model consistency", Box::new(estimated_consistency)),
        ("stage isolation", Box::new(stage_isolation)),
        ("determinism", Box::new(determinism)),
    ];
    let start = Instant::now();
    let checks = suite
        .into_iter()
        .map(|(name, f)| {
            let t = Instant::now();
            let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| Err(panic_text(p)));
            let seconds = t.elapsed().as_secs_f64();
            match outcome {
                Ok(detail) => Check { name, passed: true, detail, seconds },
                Err(detail) => Check { name, passed: false, detail, seconds },
            }
        })
        .collect();
    Report { checks, seconds: start.elapsed().as_secs_f64() }
}

fn panic_text(p: Box<dyn std::any::Any + Send>) -> String {
    let msg = p
        .downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "unknown payload".into());
    format!("panicked: {msg}")
}

fn lib<T>(r: crate::Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn within(what: &str, err: f64, tol: f64) -> Outcome {
    if err <= tol {
        Ok(format!("{what} {err:.1e} <= {tol:.0e}"))
    } else {
        Err(format!("{what} {err:.3e} exceeds {tol:.0e}"))
    }
}

fn random_system(rng: &mut ChaCha8Rng) -> std::result::Result<LtiSystem<f64>, String> {
    let n = rng.random_range(1..=3);
    let m = rng.random_range(1..=2);
    let rho = rng.random_range(0.3..0.9);
    lib(LtiSystem::random(n, m, rho, rng))
}

/// Gaussian inputs from rest with no disturbance.
fn clean_pair(sys: &LtiSystem<f64>, n_len: usize, l: usize, output: bool, rng: &mut ChaCha8Rng) -> crate::Result<HankelPair<f64>> {
    let u: Vec<DVector<f64>> = (0..n_len).map(|_| gaussian_vector(sys.m(), rng)).collect();
    let tr = simulate(sys, &u, &DisturbanceGen::zero(sys.n()), None, &DVector::zeros(sys.n()), n_len)?;
    let s = if output { &tr.outputs[..n_len] } else { &tr.states[..n_len] };
    HankelPair::new(&u, s, l)
}

/// Reconstruct every accumulated disturbance of a recorded run.
fn reconstruct(h: &HankelPair<f64>, u: &[DVector<f64>], s: &[DVector<f64>]) -> crate::Result<Vec<DVector<f64>>> {
    let (l, m, q) = (h.l(), h.input_dim(), h.signal_dim());
    let mut w: Vec<DVector<f64>> = Vec::with_capacity(u.len());
    for t in 0..u.len() {
        let first = t as isize - l as isize + 2;
        let win: Vec<_> = (0..l - 1).map(|k| at_or_zero(u, first + k as isize, m)).collect();
        let s_old = if first <= 0 { DVector::zeros(q) } else { s[first as usize].clone() };
        let w_prev = at_or_zero(&w, t as isize - l as isize + 1, q);
        w.push(acc_noise(&win, &s_old, &s[t + 1], &w_prev, h)?);
    }
    Ok(w)
}

fn corrupt_column(h: &HankelPair<f64>) -> crate::Result<HankelPair<f64>> {
    let mut hs = h.hs().clone();
    let j = hs.ncols() / 2;
    hs.column_mut(j).add_scalar_mut(0.05);
    HankelPair::from_parts(h.hu().clone(), hs, h.l(), h.input_dim(), h.signal_dim())
}

fn reconstruction(corrupt: bool) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001);
    let mut worst = 0.0f64;
    for trial in 0..25 {
        let sys = random_system(&mut rng)?;
        let (n, m) = (sys.n(), sys.m());
        let l = (2 * n).max(2);
        let mut h = lib(clean_pair(&sys, 3 * (m + n + 1) * l, l, false, &mut rng))?;
        if corrupt && trial == 0 {
            h = lib(corrupt_column(&h))?;
        }
        let u: Vec<DVector<f64>> = (0..200).map(|_| gaussian_vector(m, &mut rng)).collect();
        let d = DisturbanceGen::new(DisturbanceKind::UniformRandom, 0.5, trial, n);
        let tr = lib(simulate(&sys, &u, &d, None, &DVector::zeros(n), 200))?;
        let w = lib(reconstruct(&h, &tr.inputs, &tr.states))?;
        let oracle = accumulated_disturbances(&sys, &tr.disturbances);
        for (a, b) in w.iter().zip(&oracle) {
            worst = worst.max((a - b).norm());
        }
    }
    within("25 systems x 200 steps, max error", worst, 1e-8)
}

fn lstep() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0002);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let sys = random_system(&mut rng)?;
        let (n, m) = (sys.n(), sys.m());
        let l = 2 * n + 1;
        let h = lib(clean_pair(&sys, 4 * (m + n + 1) * l, l, false, &mut rng))?;
        let mdl = extract_lstep(&h);
        worst = worst.max(max_abs_diff(&mdl.h2, &mat_pow(sys.a(), l - 1)));
        for k in 0..l - 1 {
            let blk = mdl.h1.columns(k * m, m).into_owned();
            worst = worst.max(max_abs_diff(&blk, &(mat_pow(sys.a(), l - 2 - k) * sys.b())));
        }
        let steps = 60;
        let u: Vec<DVector<f64>> = (0..steps).map(|_| gaussian_vector(m, &mut rng)).collect();
        let tr = lib(simulate(&sys, &u, &DisturbanceGen::zero(n), None, &DVector::zeros(n), steps))?;
        let mut rolled = vec![DVector::zeros(n)];
        let zero = DVector::zeros(n);
        for t in 0..steps {
            let first = t as isize - l as isize + 2;
            let win: Vec<_> = (0..l - 1).map(|k| at_or_zero(&u, first + k as isize, m)).collect();
            let x_old = at_or_zero(&rolled, first, n);
            rolled.push(lib(lstep_step(&mdl, &x_old, &win, &zero))?);
            worst = worst.max((&rolled[t + 1] - &tr.states[t + 1]).norm());
        }
    }
    within("20 systems, blocks and 60-step rollout", worst, 1e-8)
}

fn counterfactual() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0003);
    let mut worst = 0.0f64;
    for trial in 0..5 {
        let sys = random_system(&mut rng)?;
        let (n, m) = (sys.n(), sys.m());
        let l = (2 * n).max(2);
        let h = lib(clean_pair(&sys, 3 * (m + n + 1) * l, l, false, &mut rng))?;
        let blocks = (0..l).map(|_| gaussian_matrix(m, n, &mut rng) * 0.4).collect();
        let params = project_m(&lib(AdacParams::from_blocks(blocks, 1.0))?);
        let d = DisturbanceGen::new(DisturbanceKind::Sinusoid, 0.5, trial, n);
        let mut x = vec![DVector::zeros(n)];
        let mut u: Vec<DVector<f64>> = Vec::new();
        let mut w_hat: Vec<DVector<f64>> = Vec::new();
        let mut hist = AccHistory::new(l, n);
        for t in 0..200 {
            let ut = adac_control(&params, &hist);
            let next = lib(step(&sys, &x[t], &ut, &d.sample(t, None)))?;
            u.push(ut);
            x.push(next);
            let first = t as isize - l as isize + 2;
            let win: Vec<_> = (0..l - 1).map(|k| at_or_zero(&u, first + k as isize, m)).collect();
            let s_old = at_or_zero(&x, first.max(0), n);
            let w_prev = at_or_zero(&w_hat, t as isize - l as isize + 1, n);
            let wt = lib(acc_noise(&win, &s_old, &x[t + 1], &w_prev, &h))?;
            hist.push(wt.clone());
            w_hat.push(wt);
        }
        for t in 0..=200 {
            let sim = lib(pi_traj(&w_hat, &params, &h, t, None))?;
            worst = worst.max((sim - &x[t]).norm());
        }
    }
    within("5 runs x 200 steps, max state gap", worst, 1e-8)
}

fn gradient() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0004);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let sys = random_system(&mut rng)?;
        let (n, m) = (sys.n(), sys.m());
        let l = rng.random_range(2..=4);
        let h = lib(clean_pair(&sys, 3 * (m + n + 1) * l, l, false, &mut rng))?;
        let t = rng.random_range(1..=30);
        let w: Vec<DVector<f64>> = (0..t).map(|_| gaussian_vector(n, &mut rng) * 0.3).collect();
        let map = lib(build_sensitivity(&w, &h, l, t, None))?;
        let cost = QuadStep {
            q: DVector::from_fn(n, |_, _| 0.5 + rng.random::<f64>()),
            s_target: gaussian_vector(n, &mut rng),
            r: DVector::from_fn(m, |_, _| 0.1 + rng.random::<f64>()),
            u_target: gaussian_vector(m, &mut rng),
        };
        let blocks = (0..l).map(|_| gaussian_matrix(m, n, &mut rng) * 0.5).collect();
        let p = project_m(&lib(AdacParams::from_blocks(blocks, 1.0))?);
        let g = lib(AdacParams::from_blocks(lib(grad_f(&p, &map, &cost))?, 1.0))?.to_flat();
        let theta = p.to_flat();
        let f = |th: &DVector<f64>| -> std::result::Result<f64, String> {
            let pp = lib(AdacParams::from_flat(th, l, m, n, 1.0))?;
            lib(surrogate_value(&pp, &map, &cost))
        };
        let hstep = 1e-5;
        let mut fd = DVector::zeros(theta.len());
        for k in 0..theta.len() {
            let mut plus = theta.clone();
            plus[k] += hstep;
            let mut minus = theta.clone();
            minus[k] -= hstep;
            fd[k] = (f(&plus)? - f(&minus)?) / (2.0 * hstep);
        }
        worst = worst.max((&g - &fd).norm() / g.norm().max(1e-12));
    }
    within("50 instances, max relative error", worst, 1e-5)
}

fn random_params(rng: &mut ChaCha8Rng, l: usize, m: usize, q: usize, d: f64, scale: f64) -> std::result::Result<AdacParams<f64>, String> {
    let blocks = (0..l).map(|_| gaussian_matrix(m, q, rng) * scale).collect();
    lib(AdacParams::from_blocks(blocks, d))
}

fn projection() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0005);
    let mut worst_ratio = 0.0f64;
    for k in 0..200 {
        let (l, m, q) = (rng.random_range(1..=4), rng.random_range(1..=3), rng.random_range(1..=3));
        let d = rng.random_range(0.5..1.5);
        let a = random_params(&mut rng, l, m, q, d, 2.0)?;
        let b = random_params(&mut rng, l, m, q, d, 2.0)?;
        let (pa, pb) = (project_m(&a), project_m(&b));
        if !pa.is_feasible() {
            return Err(format!("case {k}: projection left the admissible set"));
        }
        if project_m(&pa) != pa {
            return Err(format!("case {k}: projecting twice changed the result"));
        }
        let gap = (a.to_flat() - b.to_flat()).norm();
        worst_ratio = worst_ratio.max((pa.to_flat() - pb.to_flat()).norm() / gap);
    }
    within("200 pairs idempotent; max |Pa-Pb|/|a-b|", worst_ratio, 1.0 + 1e-12)
}

fn ogd_feasibility() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0006);
    let mut steps = 0;
    for _ in 0..10 {
        let (l, m, q) = (rng.random_range(1..=5), rng.random_range(1..=2), rng.random_range(1..=3));
        let d = rng.random_range(0.1..2.0);
        let mut p = project_m(&random_params(&mut rng, l, m, q, d, 1.0)?);
        for _ in 0..100 {
            let scale = 10f64.powf(rng.random_range(-3.0..2.0));
            let g: Vec<DMatrix<f64>> = (0..l).map(|_| gaussian_matrix(m, q, &mut rng) * scale).collect();
            p = lib(ogd_step(&p, &g, rng.random_range(0.01..1.0)))?;
            if !p.is_feasible() {
                return Err(format!("iterate left the admissible set after {steps} steps"));
            }
            steps += 1;
        }
    }
    Ok(format!("{steps} projected steps stayed feasible"))
}

fn rollout_residual() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0007);
    let (i0, n_len) = (6, 8);
    let mut worst = 0.0f64;
    for output in [false, true] {
        let mut sys = lib(LtiSystem::<f64>::random(2, 1, 0.8, &mut rng))?;
        let dist = DisturbanceGen::new(DisturbanceKind::UniformRandom, 0.4, 11, 2);
        let mut env = if output {
            sys = lib(sys.with_output(gaussian_matrix(2, 2, &mut rng)))?;
            let e = DisturbanceGen::new(DisturbanceKind::UniformRandom, 0.25, 12, 2);
            lib(SimEnv::output_feedback(sys.clone(), dist, Some(e)))?
        } else {
            lib(SimEnv::state_feedback(sys.clone(), dist))?
        };
        let batch = lib(collect_rollouts(&mut env, i0, n_len, 13))?;
        let resid = &batch.x - toeplitz_phi(&sys, n_len, output) * &batch.u;
        let truth = env.ground_truth();
        for k in 0..i0 {
            let (a, b) = (k * n_len, (k + 1) * n_len);
            let w = &truth.disturbances[a..b];
            let expect = if output {
                stack(&observed_disturbances(&sys, w, &truth.measurement_noise[a..=b]))
            } else {
                stack(&accumulated_disturbances(&sys, w))
            };
            worst = worst.max((resid.column(k) - expect).amax());
        }
    }
    within("state and output batches, max entry error", worst, 1e-9)
}

const ETC_CONFIG: &str = r#"{"mode":"etc","system":{"n":2,"m":1,"rho":0.7,"seed":3},
  "disturbance":{"kind":"sinusoid","epsilon":0.1},"cost":{"kind":"quadratic_tracking"},
  "horizon":600,"D":0.1}"#;

/// With the model estimated in the first stage, every visited pair obeys
/// `x_{t+1} = H2 x_{t-L+2} + H1 u_{t-L+2..t} + w_t - H2 w_{t-L+1}`.
fn estimated_consistency() -> Outcome {
    let cfg = lib(ExperimentConfig::from_json(ETC_CONFIG))?;
    let mut run = lib(instance(&cfg, cfg.horizon, 4))?;
    let trace = lib(run_etc(&mut run.env, &run.cost, &run.settings))?;
    let mut again = lib(instance(&cfg, cfg.horizon, 4))?;
    let (h, _) = lib(explore_stage(&mut again.env, &again.cost, &again.settings, &mut Vec::new()))?;
    let mdl = extract_lstep(&h);
    let (l, m, q) = (h.l(), h.input_dim(), h.signal_dim());
    let stage2 = &trace.records[trace.stage_boundary..];
    let x: Vec<DVector<f64>> = stage2.iter().map(|r| r.signal.clone()).collect();
    let u: Vec<DVector<f64>> = stage2.iter().map(|r| r.input.clone()).collect();
    let w: Vec<DVector<f64>> = stage2.iter().map(|r| r.w_hat.clone().unwrap_or_else(|| DVector::zeros(q))).collect();
    let mut worst = 0.0f64;
    for t in 0..x.len() - 1 {
        let first = t as isize - l as isize + 2;
        let win: Vec<_> = (0..l - 1).map(|k| at_or_zero(&u, first + k as isize, m)).collect();
        let v = &w[t] - &mdl.h2 * at_or_zero(&w, t as isize - l as isize + 1, q);
        let pred = lib(lstep_step(&mdl, &at_or_zero(&x, first, q), &win, &v))?;
        worst = worst.max((pred - &x[t + 1]).norm() / (1.0 + x[t + 1].norm()));
    }
    within(&format!("{} committed steps, max relative gap", x.len() - 1), worst, 1e-8)
}

fn stage_isolation() -> Outcome {
    let mut cfg = lib(ExperimentConfig::from_json(ETC_CONFIG))?;
    let mut runs = 0;
    for output in [false, true] {
        if output {
            cfg = lib(ExperimentConfig::from_json(&ETC_CONFIG.replace(r#""etc""#, r#""output""#)))?;
        }
        let open = lib(instance(&cfg, cfg.horizon, 5))?;
        let mut sealed = SealedEnv(open.env.clone());
        let mut plain = open.env.clone();
        let run = |env: &mut dyn Environment<f64>| {
            if output {
                run_output_etc(env, &open.cost, &open.settings)
            } else {
                run_etc(env, &open.cost, &open.settings)
            }
        };
        let blind = catch_unwind(AssertUnwindSafe(|| run(&mut sealed)))
            .map_err(|p| format!("{}: {}", if output { "output" } else { "etc" }, panic_text(p)))?;
        let blind = lib(blind)?;
        let seen = lib(run(&mut plain))?;
        if blind.records != seen.records {
            return Err("sealed and open runs diverged".into());
        }
        runs += 1;
    }
    Ok(format!("{runs} two-stage runs completed without hindsight access"))
}

fn determinism() -> Outcome {
    let base = ETC_CONFIG.replace(r#""horizon":600"#, r#""horizon":300"#);
    for mode in ["clean", "etc", "output"] {
        let cfg = lib(ExperimentConfig::from_json(&base.replace(r#""etc""#, &format!("\"{mode}\""))))?;
        let a = lib(run_one(&cfg, cfg.horizon, 6))?;
        let b = lib(run_one(&cfg, cfg.horizon, 6))?;
        if a.trace != b.trace || a.summary != b.summary {
            return Err(format!("{mode}: repeated run differs"));
        }
    }
    Ok("clean, etc, output traces and summaries repeat bit for bit".into())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_check_passes_on_a_clean_build() {
        let report = run(None);
        assert!(report.passed(), "\n{}", report.table());
    }

    #[test]
    fn corrupted_hankel_column_is_caught() {
        let report = run(Some(Fault::CorruptHankelColumn));
        let failed: Vec<_> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
        assert_eq!(failed, vec!["disturbance reconstruction"], "\n{}", report.table());
    }
}

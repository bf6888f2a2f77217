//! Stage-1 exploration: random +-1 rollouts, least-squares estimate of the
//! input-to-signal Toeplitz map, and a synthetic clean trajectory built from
//! that estimate.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::behavior::{persistently_exciting, HankelPair};
use crate::env::Environment;
use crate::error::{dim_err, Error, Result};
use crate::io::{read_json, read_matrix_csv, write_json, write_matrix_csv};
use crate::linalg::{stack, unstack};
use crate::scalar::{from_usize, lit, Real};

/// Attempts at drawing a persistently exciting probe before giving up.
pub const PROBE_RETRIES: usize = 10;

/// `I0` rollouts of length `N`: column `k` of `x` stacks `s_1..s_N` of
/// rollout `k`, column `k` of `u` stacks its inputs `u_0..u_{N-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBatch<S: Real> {
    pub x: DMatrix<S>,
    pub u: DMatrix<S>,
    pub i0: usize,
    pub n: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct BatchMeta {
    #[serde(rename = "I0")]
    i0: usize,
    #[serde(rename = "N")]
    n: usize,
    input_dim: usize,
    signal_dim: usize,
}

impl<S: Real> RolloutBatch<S> {
    pub fn input_dim(&self) -> usize {
        self.u.nrows() / self.n.max(1)
    }

    pub fn signal_dim(&self) -> usize {
        self.x.nrows() / self.n.max(1)
    }

    /// Persist as `X.csv`, `U.csv` and `meta.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_matrix_csv(&dir.join("X.csv"), &self.x)?;
        write_matrix_csv(&dir.join("U.csv"), &self.u)?;
        write_json(
            &dir.join("meta.json"),
            &BatchMeta { i0: self.i0, n: self.n, input_dim: self.input_dim(), signal_dim: self.signal_dim() },
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: BatchMeta = read_json(&dir.join("meta.json"))?;
        let x: DMatrix<S> = read_matrix_csv(&dir.join("X.csv"))?;
        let u: DMatrix<S> = read_matrix_csv(&dir.join("U.csv"))?;
        if x.shape() != (meta.signal_dim * meta.n, meta.i0) || u.shape() != (meta.input_dim * meta.n, meta.i0) {
            return Err(dim_err(
                "RolloutBatch::load",
                format!("X {}x{}, U {}x{}", meta.signal_dim * meta.n, meta.i0, meta.input_dim * meta.n, meta.i0),
                format!("X {:?}, U {:?}", x.shape(), u.shape()),
            ));
        }
        Ok(Self { x, u, i0: meta.i0, n: meta.n })
    }
}

/// Run `i0` rollouts of `n` steps with i.i.d. +-1 inputs, resetting the
/// environment before each. Rollout `k` draws from stream `k` of `seed`.
pub fn collect_rollouts<S: Real, E: Environment<S> + ?Sized>(
    env: &mut E,
    i0: usize,
    n: usize,
    seed: u64,
) -> Result<RolloutBatch<S>> {
    collect_rollouts_observed(env, i0, n, seed, |_, _| {})
}

/// [`collect_rollouts`], also reporting each `(signal before the step, input)`.
pub fn collect_rollouts_observed<S: Real, E: Environment<S> + ?Sized>(
    env: &mut E,
    i0: usize,
    n: usize,
    seed: u64,
    mut observe: impl FnMut(&DVector<S>, &DVector<S>),
) -> Result<RolloutBatch<S>> {
    if i0 == 0 || n == 0 {
        return Err(Error::Contract(format!("collect_rollouts needs I0 >= 1 and N >= 1, got {i0}, {n}")));
    }
    let (m, q) = (env.input_dim(), env.signal_dim());
    let mut x = DMatrix::zeros(q * n, i0);
    let mut u = DMatrix::zeros(m * n, i0);
    for k in 0..i0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let mut before = env.reset()?;
        for t in 0..n {
            let ut = DVector::from_fn(m, |_, _| if rng.random::<bool>() { S::one() } else { -S::one() });
            observe(&before, &ut);
            let s = env.step(&ut)?;
            if s.len() != q {
                return Err(dim_err("collect_rollouts::signal", q, s.len()));
            }
            x.view_mut((t * q, k), (q, 1)).copy_from(&s);
            u.view_mut((t * m, k), (m, 1)).copy_from(&ut);
            before = s;
        }
    }
    Ok(RolloutBatch { x, u, i0, n })
}

/// `(1 / I0) X U^T`.
pub fn estimate_phi<S: Real>(batch: &RolloutBatch<S>) -> DMatrix<S> {
    &batch.x * batch.u.transpose() / from_usize::<S>(batch.i0)
}

/// Probe input: `N` vectors, each uniform on the sphere of radius `1/sqrt(N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeInput<S: Real> {
    pub u: Vec<DVector<S>>,
    pub seed: u64,
}

impl<S: Real> ProbeInput<S> {
    /// One draw; `attempt` selects an independent stream of `seed`.
    pub fn sample(n: usize, m: usize, seed: u64, attempt: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(attempt);
        let radius = 1.0 / (n as f64).sqrt();
        let u = (0..n)
            .map(|_| loop {
                let g = DVector::<f64>::from_fn(m, |_, _| rng.sample(StandardNormal));
                let norm = g.norm();
                if norm > 1e-12 {
                    break (g * (radius / norm)).map(lit);
                }
            })
            .collect();
        Self { u, seed }
    }

    /// Draw until the probe is persistently exciting of order `order`.
    pub fn sample_exciting(n: usize, m: usize, order: usize, seed: u64) -> Result<Self> {
        for attempt in 0..PROBE_RETRIES as u64 {
            let p = Self::sample(n, m, seed, attempt);
            if persistently_exciting(&p.u, order) {
                return Ok(p);
            }
        }
        Err(Error::Persistency { order, attempts: PROBE_RETRIES })
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    /// Euclidean norm of the stacked probe.
    pub fn norm(&self) -> S {
        stack(&self.u).norm()
    }
}

/// `x^d = Phi_hat u^d`, returned as the signals `s_1..s_N`.
pub fn synthesize_clean<S: Real>(phi_hat: &DMatrix<S>, probe: &ProbeInput<S>) -> Result<Vec<DVector<S>>> {
    let u = stack(&probe.u);
    if phi_hat.ncols() != u.len() || probe.is_empty() {
        return Err(dim_err("synthesize_clean", phi_hat.ncols(), u.len()));
    }
    Ok(unstack(&(phi_hat * u), phi_hat.nrows() / probe.len()))
}

/// Hankel pair from the probe and its synthesized response: inputs
/// `u_0..u_{N-1}` against signals `0, s_1, ..., s_{N-1}`.
pub fn clean_hankel<S: Real>(probe: &ProbeInput<S>, response: &[DVector<S>], l: usize) -> Result<HankelPair<S>> {
    if response.len() != probe.len() || response.is_empty() {
        return Err(dim_err("clean_hankel", probe.len(), response.len()));
    }
    let q = response[0].len();
    let mut signals = Vec::with_capacity(response.len());
    signals.push(DVector::zeros(q));
    signals.extend_from_slice(&response[..response.len() - 1]);
    HankelPair::new(&probe.u, &signals, l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::SimEnv;
    use crate::linalg::op_norm;
    use crate::lti::{accumulated_disturbances, toeplitz_phi, DisturbanceGen, DisturbanceKind, LtiSystem};
    use nalgebra::DMatrix;

    fn scalar_sys(a: f64, b: f64) -> LtiSystem<f64> {
        LtiSystem::state_feedback(DMatrix::from_element(1, 1, a), DMatrix::from_element(1, 1, b), None).unwrap()
    }

    #[test]
    fn single_step_rollout_reads_b() {
        let sys = scalar_sys(0.5, 1.5);
        let mut env = SimEnv::state_feedback(sys, DisturbanceGen::zero(1)).unwrap();
        let batch = collect_rollouts(&mut env, 1, 1, 3).unwrap();
        assert_eq!(batch.x[(0, 0)], 1.5 * batch.u[(0, 0)]);
        assert_eq!(estimate_phi(&batch)[(0, 0)], 1.5);
        for i0 in [1, 4, 9] {
            let mut env = SimEnv::state_feedback(scalar_sys(0.5, 1.5), DisturbanceGen::zero(1)).unwrap();
            let b = collect_rollouts(&mut env, i0, 1, 5).unwrap();
            assert!((estimate_phi(&b)[(0, 0)] - 1.5).abs() < 1e-15);
        }
    }

    #[test]
    fn noiseless_batch_is_toeplitz_times_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let sys = LtiSystem::<f64>::random(3, 2, 0.8, &mut rng).unwrap();
        let phi = toeplitz_phi(&sys, 7, false);
        let mut env = SimEnv::state_feedback(sys, DisturbanceGen::zero(3)).unwrap();
        let batch = collect_rollouts(&mut env, 12, 7, 6).unwrap();
        assert!((&batch.x - &phi * &batch.u).amax() < 1e-9);
        assert_eq!(env.clock(), 12 * 7);
    }

    #[test]
    fn inputs_are_balanced_signs() {
        let sys = scalar_sys(0.3, 1.0);
        let mut env = SimEnv::state_feedback(sys, DisturbanceGen::zero(1)).unwrap();
        let b = collect_rollouts(&mut env, 200, 10, 7).unwrap();
        assert!(b.u.iter().all(|v| *v == 1.0 || *v == -1.0));
        let mean = b.u.sum() / (b.u.len() as f64);
        assert!(mean.abs() <= 4.0 / (2000f64).sqrt());
    }

    #[test]
    fn residual_is_accumulated_disturbance() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let sys = LtiSystem::<f64>::random(2, 1, 0.8, &mut rng).unwrap();
        let phi = toeplitz_phi(&sys, 6, false);
        let dist = DisturbanceGen::new(DisturbanceKind::UniformRandom, 0.4, 8, 2);
        let mut env = SimEnv::state_feedback(sys.clone(), dist).unwrap();
        let batch = collect_rollouts(&mut env, 5, 6, 9).unwrap();
        let resid = &batch.x - &phi * &batch.u;
        let truth = env.ground_truth();
        for k in 0..5 {
            let w = &truth.disturbances[k * 6..(k + 1) * 6];
            let acc = stack(&accumulated_disturbances(&sys, w));
            assert!((resid.column(k) - acc).amax() < 1e-9);
        }
    }

    #[test]
    fn estimate_converges_with_many_rollouts() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let sys = LtiSystem::<f64>::random(2, 1, 0.8, &mut rng).unwrap();
        let phi = toeplitz_phi(&sys, 8, false);
        let mut env = SimEnv::state_feedback(sys, DisturbanceGen::zero(2)).unwrap();
        let b = collect_rollouts(&mut env, 4096, 8, 10).unwrap();
        assert!(op_norm(&(estimate_phi(&b) - &phi)) <= 0.1 * op_norm(&phi));
    }

    #[test]
    fn probe_has_unit_norm() {
        for seed in 0..10 {
            let p = ProbeInput::<f64>::sample(17, 2, seed, 0);
            assert!((p.norm() - 1.0).abs() < 1e-12);
            assert!(p.u.iter().all(|v| (v.norm() - 1.0 / 17f64.sqrt()).abs() < 1e-12));
        }
        let p = ProbeInput::<f64>::sample_exciting(40, 1, 8, 3).unwrap();
        assert!(persistently_exciting(&p.u, 8));
        assert!(matches!(ProbeInput::<f64>::sample_exciting(5, 1, 8, 3), Err(Error::Persistency { .. })));
    }

    #[test]
    fn synthesized_response_error_is_bounded_by_estimate_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let sys = LtiSystem::<f64>::random(2, 1, 0.8, &mut rng).unwrap();
        let phi = toeplitz_phi(&sys, 8, false);
        let dist = DisturbanceGen::new(DisturbanceKind::UniformRandom, 0.3, 1, 2);
        let mut env = SimEnv::state_feedback(sys, dist).unwrap();
        let b = collect_rollouts(&mut env, 64, 8, 11).unwrap();
        let phi_hat = estimate_phi(&b);
        let probe = ProbeInput::sample(8, 1, 12, 0);
        let xd = stack(&synthesize_clean(&phi_hat, &probe).unwrap());
        let exact = &phi * stack(&probe.u);
        assert!((xd - exact).norm() <= op_norm(&(phi_hat - &phi)) + 1e-12);
    }

    #[test]
    fn noiseless_single_step_synthesis_is_exact() {
        let mut env = SimEnv::state_feedback(scalar_sys(0.2, 2.0), DisturbanceGen::zero(1)).unwrap();
        let b = collect_rollouts(&mut env, 3, 1, 1).unwrap();
        let probe = ProbeInput::sample(1, 1, 2, 0);
        let xd = synthesize_clean(&estimate_phi(&b), &probe).unwrap();
        assert_eq!(xd[0][0], 2.0 * probe.u[0][0]);
    }

    #[test]
    fn batch_roundtrip() {
        let mut env = SimEnv::state_feedback(scalar_sys(0.2, 2.0), DisturbanceGen::zero(1)).unwrap();
        let b = collect_rollouts(&mut env, 3, 4, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        b.save(dir.path()).unwrap();
        assert_eq!(RolloutBatch::<f64>::load(dir.path()).unwrap(), b);
    }
}

//! The learner-facing environment boundary.
//!
//! A learner only ever sees `reset` and `step`; the hindsight record behind
//! `ground_truth` exists for regret evaluation after a run finishes.

use nalgebra::DVector;

use crate::error::{dim_err, Result};
use crate::lti::{DisturbanceGen, LtiSystem};
use crate::scalar::Real;

pub trait Environment<S: Real> {
    fn input_dim(&self) -> usize;
    fn signal_dim(&self) -> usize;
    /// Return the system to `x = 0` and report the signal observed there.
    fn reset(&mut self) -> Result<DVector<S>>;
    /// Apply `u` for one step and report the next signal.
    fn step(&mut self, u: &DVector<S>) -> Result<DVector<S>>;
    /// Everything that happened, including the true system and disturbances.
    fn ground_truth(&self) -> &GroundTruth<S>;
}

/// Hindsight log indexed by the global clock, which keeps running across
/// resets so disturbances are never reused.
#[derive(Debug, Clone)]
pub struct GroundTruth<S: Real> {
    pub system: LtiSystem<S>,
    pub output_feedback: bool,
    /// `states[k]` is the state before global step `k`.
    pub states: Vec<DVector<S>>,
    pub inputs: Vec<DVector<S>>,
    pub disturbances: Vec<DVector<S>>,
    /// `measurement_noise[k]` corrupts the signal observed at global time `k`.
    pub measurement_noise: Vec<DVector<S>>,
    /// Global times at which the environment was reset.
    pub episode_starts: Vec<usize>,
}

impl<S: Real> GroundTruth<S> {
    pub fn steps(&self) -> usize {
        self.inputs.len()
    }
}

/// Simulated environment backed by an [`LtiSystem`].
#[derive(Debug, Clone)]
pub struct SimEnv<S: Real> {
    disturbance: DisturbanceGen<S>,
    measurement: Option<DisturbanceGen<S>>,
    x: DVector<S>,
    clock: usize,
    truth: GroundTruth<S>,
}

impl<S: Real> SimEnv<S> {
    /// State-feedback environment: the signal is the state itself.
    pub fn state_feedback(system: LtiSystem<S>, disturbance: DisturbanceGen<S>) -> Result<Self> {
        Self::build(system, disturbance, None, false)
    }

    /// Output-feedback environment: the signal is `C x + e`.
    pub fn output_feedback(
        system: LtiSystem<S>,
        disturbance: DisturbanceGen<S>,
        measurement: Option<DisturbanceGen<S>>,
    ) -> Result<Self> {
        Self::build(system, disturbance, measurement, true)
    }

    fn build(
        system: LtiSystem<S>,
        disturbance: DisturbanceGen<S>,
        measurement: Option<DisturbanceGen<S>>,
        output_feedback: bool,
    ) -> Result<Self> {
        if disturbance.dim != system.n() {
            return Err(dim_err("SimEnv::disturbance", system.n(), disturbance.dim));
        }
        if let Some(e) = &measurement {
            if e.dim != system.p() {
                return Err(dim_err("SimEnv::measurement", system.p(), e.dim));
            }
        }
        let n = system.n();
        Ok(Self {
            disturbance,
            measurement,
            x: DVector::zeros(n),
            clock: 0,
            truth: GroundTruth {
                system,
                output_feedback,
                states: Vec::new(),
                inputs: Vec::new(),
                disturbances: Vec::new(),
                measurement_noise: Vec::new(),
                episode_starts: vec![0],
            },
        })
    }

    pub fn system(&self) -> &LtiSystem<S> {
        &self.truth.system
    }

    pub fn clock(&self) -> usize {
        self.clock
    }

    fn noise_at(&mut self, k: usize) -> DVector<S> {
        let p = self.truth.system.p();
        while self.truth.measurement_noise.len() <= k {
            let idx = self.truth.measurement_noise.len();
            let e = match &self.measurement {
                Some(g) => g.sample(idx, None),
                None => DVector::zeros(p),
            };
            self.truth.measurement_noise.push(e);
        }
        self.truth.measurement_noise[k].clone()
    }

    fn observe(&mut self) -> DVector<S> {
        if self.truth.output_feedback {
            let e = self.noise_at(self.clock);
            self.truth.system.c() * &self.x + e
        } else {
            self.x.clone()
        }
    }
}

impl<S: Real> Environment<S> for SimEnv<S> {
    fn input_dim(&self) -> usize {
        self.truth.system.m()
    }

    fn signal_dim(&self) -> usize {
        self.truth.system.signal_dim(self.truth.output_feedback)
    }

    fn reset(&mut self) -> Result<DVector<S>> {
        self.x = DVector::zeros(self.truth.system.n());
        if self.truth.episode_starts.last() != Some(&self.clock) {
            self.truth.episode_starts.push(self.clock);
        }
        Ok(self.observe())
    }

    fn step(&mut self, u: &DVector<S>) -> Result<DVector<S>> {
        if u.len() != self.input_dim() {
            return Err(dim_err("SimEnv::step", self.input_dim(), u.len()));
        }
        let w = self.disturbance.sample(self.clock, Some(&self.x));
        let next = self.truth.system.a() * &self.x + self.truth.system.b() * u + &w;
        self.truth.states.push(std::mem::replace(&mut self.x, next));
        self.truth.inputs.push(u.clone());
        self.truth.disturbances.push(w);
        self.clock += 1;
        Ok(self.observe())
    }

    fn ground_truth(&self) -> &GroundTruth<S> {
        &self.truth
    }
}

/// Wrapper that forwards `reset` and `step` but panics on any hindsight
/// read. Running a learner through it proves the learner never looked.
#[derive(Debug, Clone)]
pub struct SealedEnv<E>(pub E);

impl<S: Real, E: Environment<S>> Environment<S> for SealedEnv<E> {
    fn input_dim(&self) -> usize {
        self.0.input_dim()
    }

    fn signal_dim(&self) -> usize {
        self.0.signal_dim()
    }

    fn reset(&mut self) -> Result<DVector<S>> {
        self.0.reset()
    }

    fn step(&mut self, u: &DVector<S>) -> Result<DVector<S>> {
        self.0.step(u)
    }

    fn ground_truth(&self) -> &GroundTruth<S> {
        panic!("sealed environment: ground truth read during a run")
    }
}

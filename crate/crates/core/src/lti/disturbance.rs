use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::scalar::{lit, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisturbanceKind {
    Zero,
    Constant,
    Sinusoid,
    UniformRandom,
    /// Pushes against the sign pattern of the current state.
    SignFlipAdversary,
}

/// Bounded disturbance source; every draw satisfies `||w_t|| <= epsilon`.
///
/// Draws are a pure function of `(seed, t)` (and of the state for the
/// adversary), so replaying a time index always reproduces the same vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceGen<S: Real> {
    pub kind: DisturbanceKind,
    pub epsilon: S,
    pub seed: u64,
    pub dim: usize,
    /// Sinusoid period in steps.
    pub period: f64,
}

impl<S: Real> DisturbanceGen<S> {
    pub fn new(kind: DisturbanceKind, epsilon: S, seed: u64, dim: usize) -> Self {
        Self { kind, epsilon, seed, dim, period: 24.0 }
    }

    pub fn zero(dim: usize) -> Self {
        Self::new(DisturbanceKind::Zero, S::zero(), 0, dim)
    }

    pub fn with_period(mut self, period: f64) -> Self {
        self.period = period;
        self
    }

    fn stream(&self, t: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(t as u64);
        rng
    }

    /// Disturbance at time `t`; `state` is only consulted by the adversary.
    pub fn sample(&self, t: usize, state: Option<&DVector<S>>) -> DVector<S> {
        let d = self.dim;
        if d == 0 {
            return DVector::zeros(0);
        }
        let eps = self.epsilon;
        let scale = eps / lit::<S>((d as f64).sqrt());
        match self.kind {
            DisturbanceKind::Zero => DVector::zeros(d),
            DisturbanceKind::Constant => DVector::from_element(d, scale),
            DisturbanceKind::Sinusoid => {
                // per-coordinate phase drawn once from the seed
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5bd1_e995);
                let omega = std::f64::consts::TAU / self.period;
                DVector::from_fn(d, |_, _| {
                    let phase: f64 = rng.random::<f64>() * std::f64::consts::TAU;
                    scale * lit::<S>((omega * t as f64 + phase).sin())
                })
            }
            DisturbanceKind::UniformRandom => {
                let mut rng = self.stream(t);
                let g = DVector::<f64>::from_fn(d, |_, _| rng.sample(StandardNormal));
                let norm = g.norm();
                if norm == 0.0 {
                    return DVector::zeros(d);
                }
                let radius = rng.random::<f64>().powf(1.0 / d as f64);
                (g / norm * radius).map(|v| lit::<S>(v) * eps)
            }
            DisturbanceKind::SignFlipAdversary => match state {
                Some(x) => x.map(|v| if v >= S::zero() { -scale } else { scale }),
                None => DVector::from_element(d, -scale),
            },
        }
    }
}

/// Config-level description of a disturbance source.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DisturbanceSpec {
    pub kind: DisturbanceKind,
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default)]
    pub period: Option<f64>,
}

impl DisturbanceSpec {
    pub fn zero() -> Self {
        Self { kind: DisturbanceKind::Zero, epsilon: 0.0, period: None }
    }

    pub fn build<S: Real>(&self, dim: usize, seed: u64) -> DisturbanceGen<S> {
        let g = DisturbanceGen::new(self.kind, lit(self.epsilon), seed, dim);
        match self.period {
            Some(p) => g.with_period(p),
            None => g,
        }
    }
}

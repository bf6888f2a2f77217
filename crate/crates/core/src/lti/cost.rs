use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostKind {
    /// Fixed diagonal weights, sinusoidal signal target, zero input target.
    QuadraticTracking,
    /// Per-step random diagonal weights and random targets.
    TimevaryingLinearQuadratic,
}

/// Box in which the gradient bound is guaranteed: `||s|| <= signal`, `||u|| <= input`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReachableBox {
    pub signal: f64,
    pub input: f64,
}

/// The quadratic `c_t(u, s) = (s - s*)' Q (s - s*) + (u - u*)' R (u - u*)`
/// with diagonal `Q`, `R`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadStep<S: Real> {
    pub q: DVector<S>,
    pub s_target: DVector<S>,
    pub r: DVector<S>,
    pub u_target: DVector<S>,
}

impl<S: Real> QuadStep<S> {
    pub fn value(&self, u: &DVector<S>, s: &DVector<S>) -> S {
        let ds = s - &self.s_target;
        let du = u - &self.u_target;
        ds.component_mul(&ds).dot(&self.q) + du.component_mul(&du).dot(&self.r)
    }

    /// `(grad_u, grad_s)`.
    pub fn grad(&self, u: &DVector<S>, s: &DVector<S>) -> (DVector<S>, DVector<S>) {
        let two = lit::<S>(2.0);
        let gu = (u - &self.u_target).component_mul(&self.r) * two;
        let gs = (s - &self.s_target).component_mul(&self.q) * two;
        (gu, gs)
    }
}

/// Sequence of convex costs `c_t(u, s)` whose gradient norm on the reachable
/// box is at most `g`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostOracle<S: Real> {
    pub kind: CostKind,
    pub signal_dim: usize,
    pub input_dim: usize,
    q_weight: f64,
    r_weight: f64,
    target_amplitude: f64,
    period: f64,
    seed: u64,
    g: S,
    reach: ReachableBox,
}

impl<S: Real> CostOracle<S> {
    /// Build the cost sequence. If the requested weights would break the
    /// gradient bound `g` on `reach`, both weights are scaled down until it
    /// holds; with `g = None` the bound implied by the weights is adopted.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        kind: CostKind,
        signal_dim: usize,
        input_dim: usize,
        q_weight: f64,
        r_weight: f64,
        target_amplitude: f64,
        g: Option<f64>,
        reach: ReachableBox,
        seed: u64,
    ) -> Result<Self> {
        if q_weight < 0.0 || r_weight < 0.0 || target_amplitude < 0.0 {
            return Err(Error::Contract("cost weights and amplitude must be nonnegative".into()));
        }
        let mut oracle = Self {
            kind,
            signal_dim,
            input_dim,
            q_weight,
            r_weight,
            target_amplitude,
            period: 48.0,
            seed,
            g: S::zero(),
            reach,
        };
        let raw = oracle.gradient_bound_f64();
        let g = match g {
            Some(g) if g <= 0.0 => return Err(Error::Contract(format!("gradient bound G must be > 0, got {g}"))),
            Some(g) => {
                if raw > g {
                    let scale = g / raw;
                    oracle.q_weight *= scale;
                    oracle.r_weight *= scale;
                }
                g
            }
            None if raw > 0.0 => raw,
            None => 1.0,
        };
        oracle.g = lit(g);
        Ok(oracle)
    }

    /// Quadratic tracking with unit weights and no clipping.
    pub fn tracking(signal_dim: usize, input_dim: usize, q: f64, r: f64, amplitude: f64, reach: ReachableBox) -> Self {
        Self::new(CostKind::QuadraticTracking, signal_dim, input_dim, q, r, amplitude, None, reach, 0)
            .expect("valid tracking cost")
    }

    pub fn with_period(mut self, period: f64) -> Self {
        self.period = period;
        self
    }

    pub fn g(&self) -> S {
        self.g
    }

    pub fn reach(&self) -> ReachableBox {
        self.reach
    }

    fn weight_ceiling(&self) -> (f64, f64) {
        match self.kind {
            CostKind::QuadraticTracking => (self.q_weight, self.r_weight),
            CostKind::TimevaryingLinearQuadratic => (1.5 * self.q_weight, 1.5 * self.r_weight),
        }
    }

    fn gradient_bound_f64(&self) -> f64 {
        let (qmax, rmax) = self.weight_ceiling();
        let u_amp = self.input_target_amplitude();
        let gs = 2.0 * qmax * (self.reach.signal + self.target_amplitude);
        let gu = 2.0 * rmax * (self.reach.input + u_amp);
        (gs * gs + gu * gu).sqrt()
    }

    fn input_target_amplitude(&self) -> f64 {
        match self.kind {
            CostKind::QuadraticTracking => 0.0,
            CostKind::TimevaryingLinearQuadratic => 0.5 * self.target_amplitude,
        }
    }

    /// The cost revealed at time `t`.
    pub fn at(&self, t: usize) -> QuadStep<S> {
        let (p, m) = (self.signal_dim, self.input_dim);
        match self.kind {
            CostKind::QuadraticTracking => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x2545_f491);
                let omega = std::f64::consts::TAU / self.period;
                let amp = self.target_amplitude / (p as f64).sqrt();
                QuadStep {
                    q: DVector::from_element(p, lit(self.q_weight)),
                    s_target: DVector::from_fn(p, |_, _| {
                        let phase = rng.random::<f64>() * std::f64::consts::TAU;
                        lit(amp * (omega * t as f64 + phase).sin())
                    }),
                    r: DVector::from_element(m, lit(self.r_weight)),
                    u_target: DVector::zeros(m),
                }
            }
            CostKind::TimevaryingLinearQuadratic => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(t as u64);
                let q = DVector::from_fn(p, |_, _| lit(self.q_weight * (0.5 + rng.random::<f64>())));
                let r = DVector::from_fn(m, |_, _| lit(self.r_weight * (0.5 + rng.random::<f64>())));
                let s_target = ball_sample(&mut rng, p, self.target_amplitude);
                let u_target = ball_sample(&mut rng, m, self.input_target_amplitude());
                QuadStep { q, s_target, r, u_target }
            }
        }
    }

    pub fn value(&self, t: usize, u: &DVector<S>, s: &DVector<S>) -> S {
        self.at(t).value(u, s)
    }

    pub fn grad(&self, t: usize, u: &DVector<S>, s: &DVector<S>) -> (DVector<S>, DVector<S>) {
        self.at(t).grad(u, s)
    }
}

fn ball_sample<S: Real>(rng: &mut ChaCha8Rng, d: usize, radius: f64) -> DVector<S> {
    if d == 0 || radius == 0.0 {
        return DVector::zeros(d);
    }
    let g = DVector::<f64>::from_fn(d, |_, _| rng.sample(StandardNormal));
    let r = radius * rng.random::<f64>().powf(1.0 / d as f64);
    let norm = g.norm().max(f64::MIN_POSITIVE);
    (g * (r / norm)).map(lit)
}

/// Config-level description of the cost sequence.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CostSpec {
    pub kind: CostKind,
    #[serde(default = "one")]
    pub q: f64,
    #[serde(default = "tenth")]
    pub r: f64,
    #[serde(default)]
    pub target_amplitude: f64,
    #[serde(default)]
    pub period: Option<f64>,
}

fn one() -> f64 {
    1.0
}
fn tenth() -> f64 {
    0.1
}

impl CostSpec {
    pub fn build<S: Real>(
        &self,
        signal_dim: usize,
        input_dim: usize,
        g: Option<f64>,
        reach: ReachableBox,
        seed: u64,
    ) -> Result<CostOracle<S>> {
        let c = CostOracle::new(self.kind, signal_dim, input_dim, self.q, self.r, self.target_amplitude, g, reach, seed)?;
        Ok(match self.period {
            Some(p) => c.with_period(p),
            None => c,
        })
    }
}

//! Regret bookkeeping and log-log slope fits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SLOPE_CLAMP: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretReport {
    pub learner_cost: f64,
    pub comparator_cost: f64,
    /// `learner_cost - comparator_cost`; may be negative.
    pub regret: f64,
    pub comparator_converged: bool,
    pub comparator_iterations: usize,
    /// Number of steps both costs are summed over.
    pub steps: usize,
    /// Global time of the first evaluated step.
    pub t0: usize,
}

impl RegretReport {
    pub fn new(learner_cost: f64, comparator_cost: f64, converged: bool, iterations: usize, steps: usize, t0: usize) -> Self {
        Self {
            learner_cost,
            comparator_cost,
            regret: learner_cost - comparator_cost,
            comparator_converged: converged,
            comparator_iterations: iterations,
            steps,
            t0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub exponent: f64,
    pub intercept: f64,
    pub points: usize,
    /// Some regret was at or below zero and got clamped for the log.
    pub clamped: bool,
}

/// Least-squares slope of `ln regret` against `ln T`.
pub fn slope_fit(horizons: &[f64], regrets: &[f64]) -> Result<SlopeFit> {
    if horizons.len() != regrets.len() {
        return Err(Error::Contract(format!("slope_fit: {} horizons vs {} regrets", horizons.len(), regrets.len())));
    }
    if horizons.len() < 4 {
        return Err(Error::Contract(format!("slope_fit needs at least 4 points, got {}", horizons.len())));
    }
    if horizons.iter().any(|t| !(*t > 0.0) || !t.is_finite()) || regrets.iter().any(|r| !r.is_finite()) {
        return Err(Error::Contract("slope_fit: horizons must be positive and values finite".into()));
    }
    let clamped = regrets.iter().any(|r| *r <= SLOPE_CLAMP);
    let xs: Vec<f64> = horizons.iter().map(|t| t.ln()).collect();
    let ys: Vec<f64> = regrets.iter().map(|r| r.max(SLOPE_CLAMP).ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Contract("slope_fit: all horizons equal".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let exponent = sxy / sxx;
    Ok(SlopeFit { exponent, intercept: my - exponent * mx, points: xs.len(), clamped })
}

/// Median of a nonempty slice (mean of the middle pair for even lengths).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let k = v.len();
    if k == 0 {
        return f64::NAN;
    }
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

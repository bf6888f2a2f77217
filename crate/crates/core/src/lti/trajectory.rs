use std::io::Write;
use std::path::Path;

use nalgebra::DVector;

use crate::error::{dim_err, Error, Result};
use crate::scalar::{to_f64, Real};

use super::disturbance::DisturbanceGen;
use super::system::{step, LtiSystem};

/// A simulated run: `states[t+1] = A states[t] + B inputs[t] + disturbances[t]`
/// and `outputs[t] = C states[t] + noise[t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<S: Real> {
    pub states: Vec<DVector<S>>,
    pub inputs: Vec<DVector<S>>,
    pub outputs: Vec<DVector<S>>,
    pub disturbances: Vec<DVector<S>>,
    pub measurement_noise: Vec<DVector<S>>,
}

impl<S: Real> Trajectory<S> {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Largest one-step residual `||x_{t+1} - (A x_t + B u_t + w_t)||`.
    pub fn replay_residual(&self, sys: &LtiSystem<S>) -> S {
        (0..self.len())
            .map(|t| {
                let pred = sys.a() * &self.states[t] + sys.b() * &self.inputs[t] + &self.disturbances[t];
                (&self.states[t + 1] - pred).norm()
            })
            .fold(S::zero(), |a, b| a.max(b))
    }

    /// CSV with columns `t, x_1..x_n, u_1..u_m, w_1..w_n, y_1..y_p`; the last
    /// row has no input or disturbance.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let n = self.states.first().map_or(0, |x| x.len());
        let m = self.inputs.first().map_or(0, |u| u.len());
        let p = self.outputs.first().map_or(0, |y| y.len());
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x_{i}")));
        header.extend((1..=m).map(|i| format!("u_{i}")));
        header.extend((1..=n).map(|i| format!("w_{i}")));
        header.extend((1..=p).map(|i| format!("y_{i}")));
        wtr.write_record(&header)?;
        for t in 0..self.states.len() {
            let mut row = vec![t.to_string()];
            row.extend(self.states[t].iter().map(|v| to_f64(*v).to_string()));
            match self.inputs.get(t) {
                Some(u) => row.extend(u.iter().map(|v| to_f64(*v).to_string())),
                None => row.extend(std::iter::repeat_n(String::new(), m)),
            }
            match self.disturbances.get(t) {
                Some(w) => row.extend(w.iter().map(|v| to_f64(*v).to_string())),
                None => row.extend(std::iter::repeat_n(String::new(), n)),
            }
            match self.outputs.get(t) {
                Some(y) => row.extend(y.iter().map(|v| to_f64(*v).to_string())),
                None => row.extend(std::iter::repeat_n(String::new(), p)),
            }
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(f)
    }
}

/// Roll the system forward for `horizon` steps under an open-loop input
/// sequence. Missing inputs (when `u_seq` is shorter) are zero.
pub fn simulate<S: Real>(
    sys: &LtiSystem<S>,
    u_seq: &[DVector<S>],
    dist: &DisturbanceGen<S>,
    measurement: Option<&DisturbanceGen<S>>,
    x0: &DVector<S>,
    horizon: usize,
) -> Result<Trajectory<S>> {
    if horizon == 0 {
        return Err(Error::Contract("simulate: horizon must be >= 1".into()));
    }
    if x0.len() != sys.n() {
        return Err(dim_err("simulate::x0", sys.n(), x0.len()));
    }
    if dist.dim != sys.n() {
        return Err(dim_err("simulate::disturbance", sys.n(), dist.dim));
    }
    if let Some(e) = measurement {
        if e.dim != sys.p() {
            return Err(dim_err("simulate::measurement", sys.p(), e.dim));
        }
    }
    let zero_u = DVector::zeros(sys.m());
    let mut states = Vec::with_capacity(horizon + 1);
    let mut inputs = Vec::with_capacity(horizon);
    let mut disturbances = Vec::with_capacity(horizon);
    states.push(x0.clone());
    for t in 0..horizon {
        let u = u_seq.get(t).unwrap_or(&zero_u).clone();
        let w = dist.sample(t, Some(&states[t]));
        let next = step(sys, &states[t], &u, &w)?;
        inputs.push(u);
        disturbances.push(w);
        states.push(next);
    }
    let measurement_noise: Vec<DVector<S>> = (0..=horizon)
        .map(|t| match measurement {
            Some(e) => e.sample(t, None),
            None => DVector::zeros(sys.p()),
        })
        .collect();
    let outputs = states
        .iter()
        .zip(&measurement_noise)
        .map(|(x, e)| sys.c() * x + e)
        .collect();
    Ok(Trajectory { states, inputs, outputs, disturbances, measurement_noise })
}

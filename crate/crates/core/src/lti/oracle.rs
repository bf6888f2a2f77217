//! Model-aware reference computations. These read the true `(A, B, C)` and
//! the true disturbances, so only tests and regret evaluation call them.

use nalgebra::{DMatrix, DVector};

use crate::scalar::Real;

use super::system::LtiSystem;

/// `sum_{i=0}^{t} A^i w_{t-i}`.
pub fn accumulated_disturbance_oracle<S: Real>(sys: &LtiSystem<S>, w_seq: &[DVector<S>], t: usize) -> DVector<S> {
    assert!(t < w_seq.len(), "accumulated_disturbance_oracle: t = {t} out of range");
    let mut acc = DVector::zeros(sys.n());
    for w in &w_seq[..=t] {
        acc = sys.a() * acc + w;
    }
    acc
}

/// All accumulated disturbances `[acc_0, ..., acc_{T-1}]` in one pass.
pub fn accumulated_disturbances<S: Real>(sys: &LtiSystem<S>, w_seq: &[DVector<S>]) -> Vec<DVector<S>> {
    let mut acc = DVector::zeros(sys.n());
    w_seq
        .iter()
        .map(|w| {
            acc = sys.a() * &acc + w;
            acc.clone()
        })
        .collect()
}

/// Observed accumulated disturbances for the output-feedback wiring:
/// `C acc_t + e_{t+1}`, which is exactly the residual between `y_{t+1}` and
/// the noise-free output driven by the same inputs. `e_seq` must have at
/// least `w_seq.len() + 1` entries.
pub fn observed_disturbances<S: Real>(sys: &LtiSystem<S>, w_seq: &[DVector<S>], e_seq: &[DVector<S>]) -> Vec<DVector<S>> {
    assert!(e_seq.len() > w_seq.len(), "observed_disturbances: need e_0..e_T");
    accumulated_disturbances(sys, w_seq)
        .iter()
        .enumerate()
        .map(|(t, acc)| sys.c() * acc + &e_seq[t + 1])
        .collect()
}

/// Lower block-triangular Toeplitz map from stacked inputs `u_0..u_{N-1}` to
/// stacked signals `s_1..s_N`, with blocks `A^{i-j} B` (or `C A^{i-j} B`).
pub fn toeplitz_phi<S: Real>(sys: &LtiSystem<S>, horizon: usize, output: bool) -> DMatrix<S> {
    let (m, q) = (sys.m(), sys.signal_dim(output));
    let mut markov = Vec::with_capacity(horizon);
    let mut ak_b = sys.b().clone();
    for _ in 0..horizon {
        markov.push(if output { sys.c() * &ak_b } else { ak_b.clone() });
        ak_b = sys.a() * ak_b;
    }
    let mut phi = DMatrix::zeros(q * horizon, m * horizon);
    for i in 0..horizon {
        for j in 0..=i {
            phi.view_mut((i * q, j * m), (q, m)).copy_from(&markov[i - j]);
        }
    }
    phi
}

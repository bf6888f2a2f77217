use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::linalg::{op_norm, rank};
use crate::scalar::{lit, to_f64, Real};

/// Ground-truth linear system `x+ = A x + B u + w`, `y = C x + e`.
///
/// Only oracles, environments and evaluation code get to see one of these;
/// the learner works from input/signal data alone.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem<S: Real> {
    a: DMatrix<S>,
    b: DMatrix<S>,
    c: DMatrix<S>,
    rho: S,
}

/// Number of matrix powers inspected when certifying stability.
pub fn default_k_check(n: usize) -> usize {
    50.max(4 * n)
}

impl<S: Real> LtiSystem<S> {
    /// Build a system and validate controllability and `(1, rho)` stability.
    ///
    /// When `rho` is `None` the certified decay rate is stored instead.
    pub fn new(a: DMatrix<S>, b: DMatrix<S>, c: DMatrix<S>, rho: Option<S>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(dim_err("LtiSystem::A", "square n x n, n >= 1", format!("{:?}", a.shape())));
        }
        if b.nrows() != n || b.ncols() == 0 {
            return Err(dim_err("LtiSystem::B", format!("{n} x m"), format!("{:?}", b.shape())));
        }
        if c.ncols() != n || c.nrows() == 0 {
            return Err(dim_err("LtiSystem::C", format!("p x {n}"), format!("{:?}", c.shape())));
        }
        let ctrb = controllability_matrix(&a, &b);
        let r = rank(&ctrb, 1e-10);
        if r < n {
            return Err(Error::Uncontrollable { rank: r, n });
        }
        let rho_hat = certify_stability(&a, default_k_check(n))?;
        let rho = match rho {
            Some(rho) => {
                if rho >= S::one() || rho <= S::zero() || rho_hat > rho * lit(1.0 + 1e-12) {
                    return Err(Error::DecayRate { rho: to_f64(rho), rho_hat: to_f64(rho_hat) });
                }
                rho
            }
            None => rho_hat,
        };
        Ok(Self { a, b, c, rho })
    }

    /// State-feedback system (`C = I`).
    pub fn state_feedback(a: DMatrix<S>, b: DMatrix<S>, rho: Option<S>) -> Result<Self> {
        let n = a.nrows();
        Self::new(a, b, DMatrix::identity(n, n), rho)
    }

    /// Replace the output map, keeping `(A, B)`.
    pub fn with_output(mut self, c: DMatrix<S>) -> Result<Self> {
        if c.ncols() != self.n() || c.nrows() == 0 {
            return Err(dim_err("LtiSystem::C", format!("p x {}", self.n()), format!("{:?}", c.shape())));
        }
        self.c = c;
        Ok(self)
    }

    pub fn a(&self) -> &DMatrix<S> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<S> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<S> {
        &self.c
    }
    pub fn rho(&self) -> S {
        self.rho
    }
    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    pub fn m(&self) -> usize {
        self.b.ncols()
    }
    pub fn p(&self) -> usize {
        self.c.nrows()
    }

    /// Dimension of the fed-back signal: `n` for state feedback, `p` otherwise.
    pub fn signal_dim(&self, output: bool) -> usize {
        if output {
            self.p()
        } else {
            self.n()
        }
    }

    /// Draw a random controllable system with `||A|| = rho`, so that
    /// `||A^k|| <= rho^k` holds for every `k`.
    pub fn random<R: Rng + ?Sized>(n: usize, m: usize, rho: f64, rng: &mut R) -> Result<Self> {
        for _ in 0..64 {
            let raw = gaussian_matrix::<S, _>(n, n, rng);
            let norm = op_norm(&raw);
            if norm <= S::zero() {
                continue;
            }
            let a = raw * (lit::<S>(rho) / norm);
            let b = gaussian_matrix::<S, _>(n, m, rng);
            let ctrb = controllability_matrix(&a, &b);
            // reject nearly uncontrollable draws so downstream Hankel solves stay conditioned
            let sv = crate::linalg::singular_values_desc(&ctrb);
            if sv.len() >= n && sv[n - 1] > sv[0] * lit(1e-3) {
                if let Ok(sys) = Self::state_feedback(a, b, Some(lit(rho * (1.0 + 1e-9)))) {
                    return Ok(sys);
                }
            }
        }
        Err(Error::Contract(format!(
            "could not draw a controllable ({n},{m}) system with rho = {rho}"
        )))
    }
}

pub(crate) fn gaussian_matrix<S: Real, R: Rng + ?Sized>(r: usize, c: usize, rng: &mut R) -> DMatrix<S> {
    DMatrix::from_fn(r, c, |_, _| lit::<S>(rng.sample::<f64, _>(StandardNormal)))
}

pub(crate) fn gaussian_vector<S: Real, R: Rng + ?Sized>(d: usize, rng: &mut R) -> DVector<S> {
    DVector::from_fn(d, |_, _| lit::<S>(rng.sample::<f64, _>(StandardNormal)))
}

/// `[B, AB, ..., A^{n-1} B]`.
pub fn controllability_matrix<S: Real>(a: &DMatrix<S>, b: &DMatrix<S>) -> DMatrix<S> {
    let n = a.nrows();
    let m = b.ncols();
    let mut out = DMatrix::zeros(n, n * m);
    let mut blk = b.clone();
    for k in 0..n {
        out.view_mut((0, k * m), (n, m)).copy_from(&blk);
        blk = a * blk;
    }
    out
}

/// Certified decay rate `max_k ||A^k||^{1/k}` over `k = 1..=k_check`.
///
/// Fails on the first power whose norm is not strictly below one, since then
/// no `rho < 1` can satisfy `||A^k|| <= rho^k`.
pub fn certify_stability<S: Real>(a: &DMatrix<S>, k_check: usize) -> Result<S> {
    let n = a.nrows();
    if k_check < n {
        return Err(Error::Contract(format!("k_check = {k_check} must be >= n = {n}")));
    }
    let mut rho_hat = S::zero();
    let mut pow = DMatrix::<S>::identity(n, n);
    for k in 1..=k_check {
        pow = &pow * a;
        let norm = op_norm(&pow);
        if norm >= S::one() {
            return Err(Error::Unstable { k, norm: to_f64(norm), rho_hat: to_f64(norm.powf(lit(1.0 / k as f64))) });
        }
        let root = if norm <= S::zero() { S::zero() } else { norm.powf(lit(1.0 / k as f64)) };
        rho_hat = rho_hat.max(root);
    }
    Ok(rho_hat)
}

/// One step of `x+ = A x + B u + w`.
pub fn step<S: Real>(sys: &LtiSystem<S>, x: &DVector<S>, u: &DVector<S>, w: &DVector<S>) -> Result<DVector<S>> {
    if x.len() != sys.n() {
        return Err(dim_err("step::x", sys.n(), x.len()));
    }
    if u.len() != sys.m() {
        return Err(dim_err("step::u", sys.m(), u.len()));
    }
    if w.len() != sys.n() {
        return Err(dim_err("step::w", sys.n(), w.len()));
    }
    Ok(sys.a() * x + sys.b() * u + w)
}

/// Serializable description of a system, used by experiment configs.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SystemMatrices {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    #[serde(default)]
    pub c: Option<Vec<Vec<f64>>>,
}

pub(crate) fn matrix_from_rows<S: Real>(rows: &[Vec<f64>], what: &'static str) -> Result<DMatrix<S>> {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(dim_err(what, "non-empty rectangular matrix", format!("{r} ragged rows")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| lit(rows[i][j])))
}

pub(crate) fn matrix_to_rows<S: Real>(m: &DMatrix<S>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| to_f64(m[(i, j)])).collect())
        .collect()
}

impl SystemMatrices {
    pub fn build<S: Real>(&self, rho: Option<f64>) -> Result<LtiSystem<S>> {
        let a = matrix_from_rows::<S>(&self.a, "system.a")?;
        let b = matrix_from_rows::<S>(&self.b, "system.b")?;
        let c = match &self.c {
            Some(c) => matrix_from_rows::<S>(c, "system.c")?,
            None => DMatrix::identity(a.nrows(), a.nrows()),
        };
        LtiSystem::new(a, b, c, rho.map(lit))
    }

    pub fn from_system<S: Real>(sys: &LtiSystem<S>) -> Self {
        Self {
            a: matrix_to_rows(sys.a()),
            b: matrix_to_rows(sys.b()),
            c: Some(matrix_to_rows(sys.c())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn step_with_zero_dynamics_returns_input() {
        let sys = LtiSystem::<f64>::new(
            DMatrix::zeros(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            Some(0.5),
        );
        // A = 0 is nilpotent and certifies with rho_hat = 0
        let sys = sys.unwrap();
        let v = DVector::from_vec(vec![1.5, -2.0]);
        let x = DVector::from_vec(vec![7.0, 3.0]);
        let out = step(&sys, &x, &v, &DVector::zeros(2)).unwrap();
        assert_eq!(out, v);
    }

    #[test]
    fn step_scalar_arithmetic() {
        let sys = LtiSystem::<f64>::state_feedback(
            DMatrix::from_element(1, 1, 0.5),
            DMatrix::from_element(1, 1, 1.0),
            None,
        )
        .unwrap();
        let out = step(
            &sys,
            &DVector::from_element(1, 2.0),
            &DVector::from_element(1, 1.0),
            &DVector::from_element(1, 0.25),
        )
        .unwrap();
        assert_eq!(out[0], 2.25);
    }

    #[test]
    fn step_matches_elementwise_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let sys = LtiSystem::<f64>::random(3, 2, 0.8, &mut rng).unwrap();
            let x = gaussian_vector::<f64, _>(3, &mut rng);
            let u = gaussian_vector::<f64, _>(2, &mut rng);
            let w = gaussian_vector::<f64, _>(3, &mut rng);
            let got = step(&sys, &x, &u, &w).unwrap();
            for i in 0..3 {
                let mut acc = w[i];
                for j in 0..3 {
                    acc += sys.a()[(i, j)] * x[j];
                }
                for j in 0..2 {
                    acc += sys.b()[(i, j)] * u[j];
                }
                assert!((acc - got[i]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn step_rejects_bad_dims() {
        let sys = LtiSystem::<f64>::state_feedback(
            DMatrix::from_element(1, 1, 0.5),
            DMatrix::from_element(1, 1, 1.0),
            None,
        )
        .unwrap();
        let err = step(&sys, &DVector::zeros(2), &DVector::zeros(1), &DVector::zeros(1));
        assert!(matches!(err, Err(Error::Dimension { .. })));
    }

    #[test]
    fn certify_scaled_identity() {
        let a = DMatrix::<f64>::identity(3, 3) * 0.5;
        let rho = certify_stability(&a, 50).unwrap();
        assert!((rho - 0.5).abs() < 1e-12);
    }

    #[test]
    fn certify_rejects_nilpotent_with_unit_norm_at_k1() {
        let a = DMatrix::<f64>::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        match certify_stability(&a, 50) {
            Err(Error::Unstable { k, .. }) => assert_eq!(k, 1),
            other => panic!("expected rejection at k = 1, got {other:?}"),
        }
    }

    #[test]
    fn certify_rejects_divergent() {
        let a = DMatrix::<f64>::from_row_slice(2, 2, &[1.01, 0.0, 0.0, 0.3]);
        assert!(matches!(certify_stability(&a, 50), Err(Error::Unstable { .. })));
    }

    #[test]
    fn random_systems_respect_declared_rho() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let sys = LtiSystem::<f64>::random(3, 1, 0.9, &mut rng).unwrap();
            let mut pow = DMatrix::identity(3, 3);
            for k in 1..=default_k_check(3) {
                pow = &pow * sys.a();
                assert!(op_norm(&pow) <= sys.rho().powi(k as i32) + 1e-12);
            }
        }
    }

    #[test]
    fn uncontrollable_pair_rejected() {
        let a = DMatrix::<f64>::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.3]);
        let b = DMatrix::<f64>::from_row_slice(2, 1, &[1.0, 0.0]);
        assert!(matches!(
            LtiSystem::state_feedback(a, b, None),
            Err(Error::Uncontrollable { rank: 1, n: 2 })
        ));
    }

    #[test]
    fn generic_over_f32() {
        let sys = LtiSystem::<f32>::state_feedback(
            DMatrix::from_element(1, 1, 0.5f32),
            DMatrix::from_element(1, 1, 1.0f32),
            None,
        )
        .unwrap();
        let x = step(&sys, &DVector::from_element(1, 2.0f32), &DVector::from_element(1, 1.0), &DVector::from_element(1, 0.25))
            .unwrap();
        assert_eq!(x[0], 2.25f32);
    }
}

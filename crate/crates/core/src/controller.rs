//! Disturbance-action controllers and projection onto the admissible set:
//! the product of operator-norm balls `||M^(i)|| <= D`.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::behavior::AccHistory;
use crate::error::{dim_err, Error, Result};
use crate::io::{read_json, read_matrix_csv, write_json, write_matrix_csv};
use crate::linalg::op_norm;
use crate::scalar::{lit, to_f64, Real};

/// Relative slack under which a block counts as inside the ball. Keeps the
/// projection idempotent despite round-off on already clipped blocks.
const FEASIBLE_SLACK: f64 = 1e-12;

/// Parameters `M = [M^(1), ..., M^(L)]`, each block `m x q`, of the
/// accumulated-disturbance action controller `u_t = sum_i M^(i) w_{t-i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdacParams<S: Real> {
    blocks: Vec<DMatrix<S>>,
    d: S,
}

impl<S: Real> AdacParams<S> {
    pub fn zeros(l: usize, m: usize, q: usize, d: S) -> Self {
        Self { blocks: vec![DMatrix::zeros(m, q); l], d }
    }

    /// Wrap existing blocks. Blocks need not be feasible; call [`project_m`].
    pub fn from_blocks(blocks: Vec<DMatrix<S>>, d: S) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::Contract("AdacParams needs at least one block".into()));
        }
        if d <= S::zero() {
            return Err(Error::Contract(format!("norm bound D must be > 0, got {d}")));
        }
        let shape = blocks[0].shape();
        if let Some(bad) = blocks.iter().find(|b| b.shape() != shape) {
            return Err(dim_err("AdacParams blocks", format!("{shape:?}"), format!("{:?}", bad.shape())));
        }
        Ok(Self { blocks, d })
    }

    pub fn blocks(&self) -> &[DMatrix<S>] {
        &self.blocks
    }
    pub fn blocks_mut(&mut self) -> &mut [DMatrix<S>] {
        &mut self.blocks
    }
    pub fn d(&self) -> S {
        self.d
    }
    pub fn l(&self) -> usize {
        self.blocks.len()
    }
    pub fn m(&self) -> usize {
        self.blocks[0].nrows()
    }
    pub fn q(&self) -> usize {
        self.blocks[0].ncols()
    }

    /// Largest operator norm over the blocks.
    pub fn max_block_norm(&self) -> S {
        self.blocks.iter().map(op_norm).fold(S::zero(), |a, b| a.max(b))
    }

    pub fn is_feasible(&self) -> bool {
        let cap = self.d * lit(1.0 + FEASIBLE_SLACK);
        self.blocks.iter().all(|b| op_norm(b) <= cap)
    }

    /// Control from an explicit list of lags: `lags[i-1]` is `w_{t-i}`.
    pub fn apply(&self, lags: &[DVector<S>]) -> DVector<S> {
        let mut u = DVector::zeros(self.m());
        for (blk, w) in self.blocks.iter().zip(lags) {
            u += blk * w;
        }
        u
    }

    /// Parameters flattened block by block in column-major order.
    pub fn to_flat(&self) -> DVector<S> {
        let per = self.m() * self.q();
        let mut out = DVector::zeros(per * self.l());
        for (i, b) in self.blocks.iter().enumerate() {
            out.rows_mut(i * per, per).copy_from_slice(b.as_slice());
        }
        out
    }

    pub fn from_flat(flat: &DVector<S>, l: usize, m: usize, q: usize, d: S) -> Result<Self> {
        let per = m * q;
        if flat.len() != per * l {
            return Err(dim_err("AdacParams::from_flat", per * l, flat.len()));
        }
        let blocks = (0..l)
            .map(|i| DMatrix::from_column_slice(m, q, &flat.as_slice()[i * per..(i + 1) * per]))
            .collect();
        Self::from_blocks(blocks, d)
    }

    /// One CSV per block (`M_1.csv`, ...) plus `meta.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (i, b) in self.blocks.iter().enumerate() {
            write_matrix_csv(&dir.join(format!("M_{}.csv", i + 1)), b)?;
        }
        write_json(&dir.join("meta.json"), &ParamsMeta { l: self.l(), m: self.m(), q: self.q(), d: to_f64(self.d) })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: ParamsMeta = read_json(&dir.join("meta.json"))?;
        let blocks = (1..=meta.l)
            .map(|i| read_matrix_csv::<S>(&dir.join(format!("M_{i}.csv"))))
            .collect::<Result<Vec<_>>>()?;
        let params = Self::from_blocks(blocks, lit(meta.d))?;
        if params.m() != meta.m || params.q() != meta.q {
            return Err(dim_err("AdacParams::load", format!("{}x{}", meta.m, meta.q), format!("{}x{}", params.m(), params.q())));
        }
        Ok(params)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamsMeta {
    l: usize,
    m: usize,
    q: usize,
    d: f64,
}

/// `u_t = sum_{i=1}^{L} M^(i) w_{t-i}` with `hist` holding the last `L`
/// accumulated disturbances.
pub fn adac_control<S: Real>(params: &AdacParams<S>, hist: &AccHistory<S>) -> DVector<S> {
    let mut u = DVector::zeros(params.m());
    for (i, blk) in params.blocks().iter().enumerate() {
        u += blk * hist.lag(i + 1);
    }
    u
}

/// Euclidean projection onto the product of spectral-norm balls: each
/// block's singular values are clipped at `D`. Feasible blocks come back
/// bit-identical.
///
/// Works from the eigendecomposition of the smaller Gram matrix: with
/// `B^T B = V diag(s^2) V^T` and `P` the projector onto the directions with
/// `s_i > D`, the clipped block is `B - B P + B sum (D/s_i) v_i v_i^T`. The SVD with singular
/// vectors in nalgebra can return a wrong factorization when two singular
/// values nearly coincide, which is exactly what clipping produces.
pub fn project_m<S: Real>(params: &AdacParams<S>) -> AdacParams<S> {
    let d = params.d();
    let cap = d * lit(1.0 + FEASIBLE_SLACK);
    let blocks = params.blocks().iter().map(|b| clip_block(b, d, cap)).collect();
    AdacParams { blocks, d }
}

fn clip_block<S: Real>(b: &DMatrix<S>, d: S, cap: S) -> DMatrix<S> {
    if b.is_empty() {
        return b.clone();
    }
    let left = b.nrows() < b.ncols();
    let gram = if left { b * b.transpose() } else { b.transpose() * b };
    let eig = SymmetricEigen::new(gram);
    let k = eig.eigenvalues.len();
    let mut drop = DMatrix::zeros(k, k);
    let mut keep = DMatrix::zeros(k, k);
    let mut clipped = false;
    for (i, lam) in eig.eigenvalues.iter().enumerate() {
        let s = lam.max(S::zero()).sqrt();
        if s > cap {
            let v = eig.eigenvectors.column(i);
            let vv = v * v.transpose();
            keep += &vv * (d / s);
            drop += vv;
            clipped = true;
        }
    }
    if !clipped {
        return b.clone();
    }
    if left {
        b - &drop * b + keep * b
    } else {
        b - b * &drop + b * keep
    }
}

/// Model-aware disturbance-action baseline `u = K x + sum_i M^(i) w_{t-i}`,
/// where `w_lags[i-1]` is the true disturbance `w_{t-i}`.
pub fn dac_control<S: Real>(k: &DMatrix<S>, params: &AdacParams<S>, x: &DVector<S>, w_lags: &[DVector<S>]) -> Result<DVector<S>> {
    if k.ncols() != x.len() || k.nrows() != params.m() {
        return Err(dim_err("dac_control::K", format!("{} x {}", params.m(), x.len()), format!("{:?}", k.shape())));
    }
    Ok(k * x + params.apply(w_lags))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti::system::{gaussian_matrix, gaussian_vector};
    use crate::linalg::singular_values_desc;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_params_give_zero_input() {
        let p = AdacParams::<f64>::zeros(3, 2, 2, 1.0);
        let mut h = AccHistory::new(3, 2);
        h.push(DVector::from_vec(vec![1.0, 2.0]));
        assert_eq!(adac_control(&p, &h).norm(), 0.0);
    }

    #[test]
    fn identity_block_passes_through() {
        let p = AdacParams::from_blocks(vec![DMatrix::<f64>::identity(2, 2)], 1.0).unwrap();
        let mut h = AccHistory::new(1, 2);
        let v = DVector::from_vec(vec![0.3, -0.4]);
        h.push(v.clone());
        assert_eq!(adac_control(&p, &h), v);
    }

    #[test]
    fn control_matches_naive_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let blocks: Vec<DMatrix<f64>> = (0..4).map(|_| gaussian_matrix(2, 3, &mut rng)).collect();
            let p = AdacParams::from_blocks(blocks.clone(), 10.0).unwrap();
            let mut h = AccHistory::new(4, 3);
            let ws: Vec<DVector<f64>> = (0..6).map(|_| gaussian_vector(3, &mut rng)).collect();
            for w in &ws {
                h.push(w.clone());
            }
            let u = adac_control(&p, &h);
            for a in 0..2 {
                let mut acc = 0.0;
                for i in 1..=4 {
                    let w = &ws[ws.len() - i];
                    for b in 0..3 {
                        acc += blocks[i - 1][(a, b)] * w[b];
                    }
                }
                assert!((acc - u[a]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn feasible_blocks_unchanged_bitwise() {
        let b = DMatrix::from_row_slice(2, 2, &[0.3, -0.2, 0.1, 0.4]);
        let p = AdacParams::from_blocks(vec![b.clone(), b * 0.5], 1.0).unwrap();
        assert_eq!(project_m(&p), p);
    }

    #[test]
    fn scalar_block_clipped_to_d() {
        let p = AdacParams::from_blocks(vec![DMatrix::from_element(1, 1, 2.0 * 0.7)], 0.7).unwrap();
        assert_eq!(project_m(&p).blocks()[0][(0, 0)], 0.7);
        let n = AdacParams::from_blocks(vec![DMatrix::from_element(1, 1, -3.0)], 0.7).unwrap();
        assert_eq!(project_m(&n).blocks()[0][(0, 0)], -0.7);
    }

    #[test]
    fn clipping_keeps_lower_singular_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let d = 0.8;
        for _ in 0..20 {
            let raw: DMatrix<f64> = gaussian_matrix(2, 3, &mut rng);
            let sv = singular_values_desc(&raw);
            let scaled = &raw * (3.0 * d / sv[0]);
            let target = singular_values_desc(&scaled);
            let p = AdacParams::from_blocks(vec![scaled], d).unwrap();
            let out = singular_values_desc(&project_m(&p).blocks()[0]);
            assert!((out[0] - d).abs() < 1e-12);
            for k in 1..out.len() {
                assert!((out[k] - target[k].min(d)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn nearly_repeated_singular_values_project_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for (m, q) in [(3, 3), (2, 4), (4, 2)] {
            let k = m.min(q);
            let u = gaussian_matrix::<f64, _>(m, m, &mut rng).qr().q();
            let v = gaussian_matrix::<f64, _>(q, q, &mut rng).qr().q();
            let frame = |s: &[f64]| {
                let mut sig = DMatrix::zeros(m, q);
                for (i, x) in s.iter().enumerate() {
                    sig[(i, i)] = *x;
                }
                &u * sig * v.transpose()
            };
            let mut raw = vec![1.5, 1.5 * (1.0 + 1e-15), 0.4, 0.1];
            raw.truncate(k);
            let mut want = vec![1.0, 1.0, 0.4, 0.1];
            want.truncate(k);
            let p = AdacParams::from_blocks(vec![frame(&raw)], 1.0).unwrap();
            let out = project_m(&p);
            assert!((&out.blocks()[0] - frame(&want)).amax() < 1e-12);
            assert_eq!(project_m(&out), out);
        }
    }

    #[test]
    fn dac_reduces_to_adac_without_feedback() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let blocks: Vec<DMatrix<f64>> = (0..3).map(|_| gaussian_matrix(1, 2, &mut rng)).collect();
        let p = AdacParams::from_blocks(blocks, 5.0).unwrap();
        let mut h = AccHistory::new(3, 2);
        let ws: Vec<DVector<f64>> = (0..3).map(|_| gaussian_vector(2, &mut rng)).collect();
        for w in &ws {
            h.push(w.clone());
        }
        let lags: Vec<_> = ws.iter().rev().cloned().collect();
        let k = DMatrix::zeros(1, 2);
        let dac = dac_control(&k, &p, &DVector::from_vec(vec![4.0, 1.0]), &lags).unwrap();
        assert_eq!(dac, adac_control(&p, &h));
        let zero = dac_control(&k, &AdacParams::zeros(3, 1, 2, 1.0), &DVector::zeros(2), &lags).unwrap();
        assert_eq!(zero.norm(), 0.0);
    }

    #[test]
    fn dac_matches_naive_sum_with_feedback() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let k: DMatrix<f64> = gaussian_matrix(2, 3, &mut rng);
        let blocks: Vec<DMatrix<f64>> = (0..2).map(|_| gaussian_matrix(2, 3, &mut rng)).collect();
        let p = AdacParams::from_blocks(blocks.clone(), 5.0).unwrap();
        let x: DVector<f64> = gaussian_vector(3, &mut rng);
        let lags: Vec<DVector<f64>> = (0..2).map(|_| gaussian_vector(3, &mut rng)).collect();
        let u = dac_control(&k, &p, &x, &lags).unwrap();
        for a in 0..2 {
            let mut acc = 0.0;
            for b in 0..3 {
                acc += k[(a, b)] * x[b];
                for i in 0..2 {
                    acc += blocks[i][(a, b)] * lags[i][b];
                }
            }
            assert!((acc - u[a]).abs() < 1e-12);
        }
    }

    #[test]
    fn params_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let blocks: Vec<DMatrix<f64>> = (0..3).map(|_| gaussian_matrix(2, 2, &mut rng)).collect();
        let p = AdacParams::from_blocks(blocks, 2.0).unwrap();
        p.save(dir.path()).unwrap();
        assert!(dir.path().join("M_3.csv").exists());
        assert_eq!(AdacParams::<f64>::load(dir.path()).unwrap(), p);
    }
}

//! Non-parametric (Hankel) system representation.
//!
//! A noise-free input/signal trajectory of a controllable system spans every
//! other length-`L` trajectory through its Hankel matrices. From that we get
//! accumulated-disturbance reconstruction from live data, counterfactual
//! rollouts of a fixed controller, and the equivalent `L`-step linear model.

use std::collections::VecDeque;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::controller::AdacParams;
use crate::error::{dim_err, Error, Result};
use crate::io::{read_json, read_matrix_csv, write_json, write_matrix_csv};
use crate::linalg::{right_pinv, stack};
use crate::scalar::{lit, to_f64, Real};

/// Full-row-rank test: smallest singular value must exceed this fraction of
/// the largest.
pub const RANK_RTOL: f64 = 1e-8;

/// Block-Hankel matrix with window `l`: column `j` stacks `seq[j..j+l]`.
pub fn build_hankel<S: Real>(seq: &[DVector<S>], l: usize) -> Result<DMatrix<S>> {
    if l == 0 {
        return Err(Error::Contract("build_hankel: window length must be >= 1".into()));
    }
    if l > seq.len() {
        return Err(Error::Contract(format!("build_hankel: window {l} longer than sequence {}", seq.len())));
    }
    let d = seq[0].len();
    if let Some(bad) = seq.iter().find(|v| v.len() != d) {
        return Err(dim_err("build_hankel", d, bad.len()));
    }
    let cols = seq.len() - l + 1;
    let mut h = DMatrix::zeros(d * l, cols);
    for j in 0..cols {
        for i in 0..l {
            h.view_mut((i * d, j), (d, 1)).copy_from(&seq[i + j]);
        }
    }
    Ok(h)
}

fn full_row_rank_ratio<S: Real>(sv: &DVector<S>, rows: usize) -> (bool, f64, usize) {
    let smax = sv.iter().copied().fold(S::zero(), |a, b| a.max(b));
    if rows == 0 || sv.len() < rows || smax <= S::zero() {
        let rank = if smax <= S::zero() { 0 } else { sv.iter().filter(|s| **s > smax * lit(RANK_RTOL)).count() };
        return (false, 0.0, rank);
    }
    let smin = sv.iter().copied().fold(smax, |a, b| a.min(b));
    let ratio = to_f64(smin / smax);
    let rank = sv.iter().filter(|s| **s > smax * lit(RANK_RTOL)).count();
    (ratio > RANK_RTOL, ratio, rank)
}

/// True when the order-`order` Hankel matrix of `u_seq` has full row rank.
pub fn persistently_exciting<S: Real>(u_seq: &[DVector<S>], order: usize) -> bool {
    if order == 0 || u_seq.len() < order {
        return false;
    }
    let Ok(h) = build_hankel(u_seq, order) else { return false };
    if h.nrows() > h.ncols() {
        return false;
    }
    let sv = h.singular_values();
    full_row_rank_ratio(&sv, h.nrows()).0
}

/// Minimum-norm solution of `hux * alpha = rhs` for a wide matrix with full
/// row rank.
pub fn least_norm_solve<S: Real>(hux: &DMatrix<S>, rhs: &DVector<S>) -> Result<DVector<S>> {
    if hux.nrows() != rhs.len() {
        return Err(dim_err("least_norm_solve", hux.nrows(), rhs.len()));
    }
    Ok(checked_pinv(hux)? * rhs)
}

/// Right pseudo-inverse after the full-row-rank test. Every singular value
/// then sits above `RANK_RTOL * smax`, so a `1e-10 * smax` SVD cutoff would
/// truncate nothing and the QR route yields the same matrix.
fn checked_pinv<S: Real>(hux: &DMatrix<S>) -> Result<DMatrix<S>> {
    let rows = hux.nrows();
    let sv = hux.clone().singular_values();
    let (ok, ratio, rank) = full_row_rank_ratio(&sv, rows);
    if !ok {
        return Err(Error::SingularRepresentation { ratio, rank, rows });
    }
    right_pinv(hux).ok_or(Error::SingularRepresentation { ratio, rank, rows })
}

/// Input and signal Hankel matrices of one clean trajectory, together with
/// the factorization of the stacked matrix `[H_L(u); H_L(s)[1,:]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HankelPair<S: Real> {
    hu: DMatrix<S>,
    hs: DMatrix<S>,
    l: usize,
    source_len: usize,
    m: usize,
    q: usize,
    /// Pseudo-inverse of the stacked matrix, `cols x (mL + q)`.
    pinv: DMatrix<S>,
    /// Last block row of the signal Hankel matrix, `q x cols`.
    readout: DMatrix<S>,
    /// `readout * pinv`, the one-window predictor `[H1 | H0 | H2]`.
    predictor: DMatrix<S>,
}

impl<S: Real> HankelPair<S> {
    /// Build from a clean trajectory `(u_0, s_0), ..., (u_{N-1}, s_{N-1})`.
    pub fn new(u_seq: &[DVector<S>], s_seq: &[DVector<S>], l: usize) -> Result<Self> {
        if u_seq.len() != s_seq.len() {
            return Err(dim_err("HankelPair::new", u_seq.len(), s_seq.len()));
        }
        if l < 2 {
            return Err(Error::Contract(format!("HankelPair needs window L >= 2, got {l}")));
        }
        let hu = build_hankel(u_seq, l)?;
        let hs = build_hankel(s_seq, l)?;
        Self::from_parts(hu, hs, l, u_seq[0].len(), s_seq[0].len())
    }

    /// Build from explicit matrices, e.g. a loaded bundle or a fixture.
    pub fn from_parts(hu: DMatrix<S>, hs: DMatrix<S>, l: usize, m: usize, q: usize) -> Result<Self> {
        if l < 2 {
            return Err(Error::Contract(format!("HankelPair needs window L >= 2, got {l}")));
        }
        if hu.nrows() != m * l || hs.nrows() != q * l || hu.ncols() != hs.ncols() {
            return Err(dim_err(
                "HankelPair::from_parts",
                format!("({}, c) and ({}, c)", m * l, q * l),
                format!("{:?} and {:?}", hu.shape(), hs.shape()),
            ));
        }
        let cols = hu.ncols();
        let rows = m * l + q;
        let mut hux = DMatrix::zeros(rows, cols);
        hux.rows_mut(0, m * l).copy_from(&hu);
        hux.rows_mut(m * l, q).copy_from(&hs.rows(0, q));
        let pinv = checked_pinv(&hux)?;
        let readout = hs.rows((l - 1) * q, q).into_owned();
        let predictor = &readout * &pinv;
        Ok(Self { hu, hs, l, source_len: cols + l - 1, m, q, pinv, readout, predictor })
    }

    pub fn hu(&self) -> &DMatrix<S> {
        &self.hu
    }
    pub fn hs(&self) -> &DMatrix<S> {
        &self.hs
    }
    pub fn l(&self) -> usize {
        self.l
    }
    pub fn source_len(&self) -> usize {
        self.source_len
    }
    pub fn input_dim(&self) -> usize {
        self.m
    }
    pub fn signal_dim(&self) -> usize {
        self.q
    }
    pub fn predictor(&self) -> &DMatrix<S> {
        &self.predictor
    }

    /// The stacked matrix `[H_L(u); H_L(s)[1,:]]`.
    pub fn stacked(&self) -> DMatrix<S> {
        let mut hux = DMatrix::zeros(self.m * self.l + self.q, self.hu.ncols());
        hux.rows_mut(0, self.m * self.l).copy_from(&self.hu);
        hux.rows_mut(self.m * self.l, self.q).copy_from(&self.hs.rows(0, self.q));
        hux
    }

    /// Minimum-norm `alpha` for the stacked system.
    pub fn solve_alpha(&self, rhs: &DVector<S>) -> DVector<S> {
        &self.pinv * rhs
    }

    /// Last signal of the window selected by `alpha`: `H_L(s)[L,:] alpha`.
    pub fn readout(&self, alpha: &DVector<S>) -> DVector<S> {
        &self.readout * alpha
    }

    /// Persist as `Hu.csv`, `Hs.csv` and `meta.json`.
    pub fn save_bundle(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_matrix_csv(&dir.join("Hu.csv"), &self.hu)?;
        write_matrix_csv(&dir.join("Hs.csv"), &self.hs)?;
        write_json(
            &dir.join("meta.json"),
            &HankelMeta { l: self.l, n: self.source_len, input_dim: self.m, signal_dim: self.q },
        )
    }

    pub fn load_bundle(dir: &Path) -> Result<Self> {
        let meta: HankelMeta = read_json(&dir.join("meta.json"))?;
        let hu = read_matrix_csv(&dir.join("Hu.csv"))?;
        let hs = read_matrix_csv(&dir.join("Hs.csv"))?;
        let pair = Self::from_parts(hu, hs, meta.l, meta.input_dim, meta.signal_dim)?;
        if pair.source_len != meta.n {
            return Err(dim_err("HankelPair::load_bundle", meta.n, pair.source_len));
        }
        Ok(pair)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct HankelMeta {
    #[serde(rename = "L")]
    l: usize,
    #[serde(rename = "N")]
    n: usize,
    input_dim: usize,
    signal_dim: usize,
}

/// Reconstruct the accumulated disturbance `w_t` from live data.
///
/// * `u_window`: inputs `u_{t-L+2}, ..., u_t` (`L - 1` entries)
/// * `s_old`: signal `s_{t-L+2}`; `s_new`: signal `s_{t+1}`
/// * `w_prev`: previous reconstruction `w_{t-L+1}`
///
/// The window's last input `u_{t+1}` is padded with zero; it cannot affect
/// `s_{t+1}`.
pub fn acc_noise<S: Real>(
    u_window: &[DVector<S>],
    s_old: &DVector<S>,
    s_new: &DVector<S>,
    w_prev: &DVector<S>,
    h: &HankelPair<S>,
) -> Result<DVector<S>> {
    let (l, m, q) = (h.l, h.m, h.q);
    if u_window.len() != l - 1 {
        return Err(dim_err("acc_noise::u_window", l - 1, u_window.len()));
    }
    if let Some(bad) = u_window.iter().find(|u| u.len() != m) {
        return Err(dim_err("acc_noise::u", m, bad.len()));
    }
    if s_old.len() != q || s_new.len() != q || w_prev.len() != q {
        return Err(dim_err("acc_noise::signal", q, format!("{}/{}/{}", s_old.len(), s_new.len(), w_prev.len())));
    }
    let mut rhs = DVector::zeros(m * l + q);
    for (k, u) in u_window.iter().enumerate() {
        rhs.rows_mut(k * m, m).copy_from(u);
    }
    rhs.rows_mut(m * l, q).copy_from(&(s_old - w_prev));
    let alpha = h.solve_alpha(&rhs);
    Ok(s_new - h.readout(&alpha))
}

/// The last `L` reconstructed accumulated disturbances, newest first on
/// lookup; entries before time zero are exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct AccHistory<S: Real> {
    buf: VecDeque<DVector<S>>,
    len: usize,
}

impl<S: Real> AccHistory<S> {
    pub fn new(len: usize, dim: usize) -> Self {
        Self { buf: std::iter::repeat_n(DVector::zeros(dim), len).collect(), len }
    }

    /// Record the newest value, evicting the oldest.
    pub fn push(&mut self, w: DVector<S>) {
        if self.len == 0 {
            return;
        }
        self.buf.pop_back();
        self.buf.push_front(w);
    }

    /// `w_{t-i}` for `1 <= i <= L`, where `t` is the next time to be filled.
    pub fn lag(&self, i: usize) -> &DVector<S> {
        assert!(i >= 1 && i <= self.len, "AccHistory::lag({i}) outside 1..={}", self.len);
        &self.buf[i - 1]
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Look up `seq[idx]`, treating negative or missing indices as zero.
pub fn at_or_zero<S: Real>(seq: &[DVector<S>], idx: isize, dim: usize) -> DVector<S> {
    if idx < 0 {
        return DVector::zeros(dim);
    }
    seq.get(idx as usize).cloned().unwrap_or_else(|| DVector::zeros(dim))
}

/// Counterfactual signal `x~_t`: the state reached at time `t` had the
/// controller `params` been played at every step against the recorded
/// accumulated disturbances `w_hist = [w_0, ..., w_{t-1}]`, rolled forward
/// window by window through the Hankel representation.
///
/// With `window = Some(W)` the rollout starts from rest at `t - W`, which
/// ignores inputs older than the window.
pub fn pi_traj<S: Real>(
    w_hist: &[DVector<S>],
    params: &AdacParams<S>,
    h: &HankelPair<S>,
    t: usize,
    window: Option<usize>,
) -> Result<DVector<S>> {
    let (l, m, q) = (h.l, h.m, h.q);
    if w_hist.len() < t {
        return Err(dim_err("pi_traj::w_hist", format!(">= {t}"), w_hist.len()));
    }
    if params.m() != m || params.q() != q || params.l() != l {
        return Err(dim_err(
            "pi_traj::params",
            format!("L={l}, {m}x{q}"),
            format!("L={}, {}x{}", params.l(), params.m(), params.q()),
        ));
    }
    if t == 0 {
        return Ok(DVector::zeros(q));
    }
    let start = window.map_or(0, |w| t.saturating_sub(w));
    let w = &w_hist[..t];
    // counterfactual inputs u~_tau, tau = 0..=t, zero before the window
    let inputs: Vec<DVector<S>> = (0..=t)
        .map(|tau| {
            if tau < start {
                return DVector::zeros(m);
            }
            let lags: Vec<DVector<S>> = (1..=l).map(|i| at_or_zero(w, tau as isize - i as isize, q)).collect();
            params.apply(&lags)
        })
        .collect();
    // noise-free part of the counterfactual signal; x~_tau = clean_tau + w_{tau-1}
    let mut clean: Vec<DVector<S>> = vec![DVector::zeros(q); t + 1];
    let mut rhs = DVector::zeros(m * l + q);
    for tau in start..t {
        for k in 0..l {
            let idx = tau as isize - l as isize + 2 + k as isize;
            let u = if idx < start as isize { DVector::zeros(m) } else { at_or_zero(&inputs, idx, m) };
            rhs.rows_mut(k * m, m).copy_from(&u);
        }
        let first = tau as isize - l as isize + 2;
        let x0 = if first <= start as isize { DVector::zeros(q) } else { clean[first as usize].clone() };
        rhs.rows_mut(m * l, q).copy_from(&x0);
        let alpha = h.solve_alpha(&rhs);
        clean[tau + 1] = h.readout(&alpha);
    }
    Ok(&clean[t] + &w[t - 1])
}

/// Linear recursion over a length-`L` window extracted from a Hankel pair:
/// `s_{t+1} = H2 s_{t-L+2} + H1 [u_{t-L+2}; ...; u_t] + v_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct LStepModel<S: Real> {
    pub h1: DMatrix<S>,
    pub h0: DMatrix<S>,
    pub h2: DMatrix<S>,
}

/// Split the window predictor `[H1 | H0 | H2]`.
pub fn extract_lstep<S: Real>(h: &HankelPair<S>) -> LStepModel<S> {
    let (l, m, q) = (h.l, h.m, h.q);
    let p = &h.predictor;
    LStepModel {
        h1: p.columns(0, m * (l - 1)).into_owned(),
        h0: p.columns(m * (l - 1), m).into_owned(),
        h2: p.columns(m * l, q).into_owned(),
    }
}

/// Evaluate one `L`-step transition. `u_window` holds `L - 1` inputs.
pub fn lstep_step<S: Real>(
    model: &LStepModel<S>,
    x_old: &DVector<S>,
    u_window: &[DVector<S>],
    v: &DVector<S>,
) -> Result<DVector<S>> {
    let u = stack(u_window);
    if u.len() != model.h1.ncols() {
        return Err(dim_err("lstep_step::u_window", model.h1.ncols(), u.len()));
    }
    if x_old.len() != model.h2.ncols() || v.len() != model.h2.nrows() {
        return Err(dim_err("lstep_step::signal", model.h2.ncols(), x_old.len()));
    }
    Ok(&model.h2 * x_old + &model.h1 * u + v)
}

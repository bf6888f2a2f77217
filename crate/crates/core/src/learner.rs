//! Online gradient descent over [`AdacParams`].
//!
//! The counterfactual signal `x~_t(M)` and the decision `u_t(M)` are both
//! affine in the stacked blocks of `M`, so the surrogate gradient is an exact
//! contraction of the cost gradient with the affine coefficients.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::behavior::{extract_lstep, HankelPair, LStepModel};
use crate::controller::{project_m, AdacParams};
use crate::error::{dim_err, Result};
use crate::lti::QuadStep;
use crate::scalar::{from_usize, Real};

/// Parameter index of entry `(a, b)` of block `i` (zero-based) in the flat
/// layout of [`AdacParams::to_flat`].
pub fn flat_index(i: usize, a: usize, b: usize, m: usize, q: usize) -> usize {
    i * m * q + b * m + a
}

/// `u_t(M) = U theta` and `x~_t(M) = x0 + X theta`, `theta = M.to_flat()`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityMap<S: Real> {
    pub t: usize,
    pub l: usize,
    pub m: usize,
    pub q: usize,
    pub u_coef: DMatrix<S>,
    pub x_coef: DMatrix<S>,
    pub x_offset: DVector<S>,
}

impl<S: Real> SensitivityMap<S> {
    /// `(u_t(M), x~_t(M))`.
    pub fn evaluate(&self, params: &AdacParams<S>) -> Result<(DVector<S>, DVector<S>)> {
        let theta = params.to_flat();
        if theta.len() != self.u_coef.ncols() {
            return Err(dim_err("SensitivityMap::evaluate", self.u_coef.ncols(), theta.len()));
        }
        Ok((&self.u_coef * &theta, &self.x_offset + &self.x_coef * &theta))
    }

    /// Pull a cost gradient `(g_u, g_x)` back to parameter blocks.
    pub fn contract(&self, gu: &DVector<S>, gx: &DVector<S>) -> Vec<DMatrix<S>> {
        let flat = self.u_coef.tr_mul(gu) + self.x_coef.tr_mul(gx);
        let per = self.m * self.q;
        (0..self.l)
            .map(|i| DMatrix::from_column_slice(self.m, self.q, &flat.as_slice()[i * per..(i + 1) * per]))
            .collect()
    }
}

fn signal_at<S: Real>(w: &[DVector<S>], k: isize, q: usize) -> DVector<S> {
    if k < 0 {
        DVector::zeros(q)
    } else {
        w.get(k as usize).cloned().unwrap_or_else(|| DVector::zeros(q))
    }
}

/// From-scratch affine map for step `t`, obtained by pushing every unit
/// parameter direction through the same window recursion that
/// [`crate::behavior::pi_traj`] uses. `window` as in `pi_traj`.
pub fn build_sensitivity<S: Real>(
    w_hist: &[DVector<S>],
    h: &HankelPair<S>,
    l: usize,
    t: usize,
    window: Option<usize>,
) -> Result<SensitivityMap<S>> {
    let (hl, m, q) = (h.l(), h.input_dim(), h.signal_dim());
    if w_hist.len() < t {
        return Err(dim_err("build_sensitivity::w_hist", format!(">= {t}"), w_hist.len()));
    }
    let p = l * m * q;
    let w = &w_hist[..t];
    let start = window.map_or(0, |win| t.saturating_sub(win));
    // d u~_tau / d theta, zero before the window
    let du = |tau: isize| -> DMatrix<S> {
        let mut out = DMatrix::zeros(m, p);
        if tau < start as isize {
            return out;
        }
        for i in 0..l {
            let wl = signal_at(w, tau - 1 - i as isize, q);
            for b in 0..q {
                for a in 0..m {
                    out[(a, flat_index(i, a, b, m, q))] = wl[b];
                }
            }
        }
        out
    };
    let mut u_coef = du(t as isize);
    if t == 0 {
        u_coef.fill(S::zero());
    }
    let mut clean: Vec<DMatrix<S>> = vec![DMatrix::zeros(q, p); t + 1];
    let mut rhs = DMatrix::zeros(m * hl + q, p);
    for tau in start..t {
        for k in 0..hl {
            let idx = tau as isize - hl as isize + 2 + k as isize;
            rhs.rows_mut(k * m, m).copy_from(&du(idx));
        }
        let first = tau as isize - hl as isize + 2;
        if first <= start as isize {
            rhs.rows_mut(m * hl, q).fill(S::zero());
        } else {
            rhs.rows_mut(m * hl, q).copy_from(&clean[first as usize]);
        }
        clean[tau + 1] = h.predictor() * &rhs;
    }
    let x_offset = if t == 0 { DVector::zeros(q) } else { w[t - 1].clone() };
    let x_coef = if t == 0 { DMatrix::zeros(q, p) } else { clean[t].clone() };
    Ok(SensitivityMap { t, l, m, q, u_coef, x_coef, x_offset })
}

/// Incremental sensitivity maps for a full-history rollout.
///
/// Shift invariance of the zero-initialized window recursion means lag `i`
/// sees the lag-zero response delayed by `i` steps, so one response matrix
/// `zeta_k` (`q x mq`) per step suffices; each step costs `O(L)`.
#[derive(Debug, Clone)]
pub struct SensitivityTracker<S: Real> {
    model: LStepModel<S>,
    l: usize,
    m: usize,
    q: usize,
    hl: usize,
    w: VecDeque<DVector<S>>,
    zeta: VecDeque<DMatrix<S>>,
    pushed: usize,
}

impl<S: Real> SensitivityTracker<S> {
    /// `l` is the controller memory, which may differ from the Hankel window.
    pub fn new(h: &HankelPair<S>, l: usize) -> Self {
        let keep = l.max(h.l());
        Self {
            model: extract_lstep(h),
            l,
            m: h.input_dim(),
            q: h.signal_dim(),
            hl: h.l(),
            w: VecDeque::with_capacity(keep + 1),
            zeta: VecDeque::with_capacity(keep + 1),
            pushed: 0,
        }
    }

    /// Number of disturbances recorded so far, i.e. the next step `t`.
    pub fn t(&self) -> usize {
        self.pushed
    }

    fn keep(&self) -> usize {
        self.l.max(self.hl)
    }

    /// `w_{k-back}` from the ring, zero before time zero.
    fn w_back(&self, back: usize) -> Option<&DVector<S>> {
        self.w.get(back)
    }

    /// `w^T (x) col` laid out like the parameter columns of one block.
    fn spread(&self, col: &DMatrix<S>, w: &DVector<S>, out: &mut DMatrix<S>) {
        for b in 0..self.q {
            let wb = w[b];
            if wb == S::zero() {
                continue;
            }
            for a in 0..self.m {
                let c = b * self.m + a;
                for r in 0..self.q {
                    out[(r, c)] += col[(r, a)] * wb;
                }
            }
        }
    }

    /// Record `w_k` for `k = self.t()`.
    pub fn push(&mut self, w_k: DVector<S>) -> Result<()> {
        if w_k.len() != self.q {
            return Err(dim_err("SensitivityTracker::push", self.q, w_k.len()));
        }
        self.w.push_front(w_k);
        let (m, q, hl) = (self.m, self.q, self.hl);
        let mut z = DMatrix::zeros(q, m * q);
        // H1 block j multiplies w_{k-L+1+j}, i.e. `L-1-j` steps back
        for j in 0..hl - 1 {
            if let Some(wj) = self.w_back(hl - 1 - j) {
                let blk = self.model.h1.columns(j * m, m).into_owned();
                self.spread(&blk, wj, &mut z);
            }
        }
        let h0 = self.model.h0.clone();
        let w_now = self.w[0].clone();
        self.spread(&h0, &w_now, &mut z);
        // zeta_{k-L+1}: the ring holds zeta_{k-1}, zeta_{k-2}, ...
        if let Some(prev) = self.zeta.get(hl - 2) {
            z += &self.model.h2 * prev;
        }
        self.zeta.push_front(z);
        let keep = self.keep();
        self.w.truncate(keep);
        self.zeta.truncate(keep);
        self.pushed += 1;
        Ok(())
    }

    /// Affine map for the current step `t = self.t()`.
    pub fn map(&self) -> SensitivityMap<S> {
        let (l, m, q, t) = (self.l, self.m, self.q, self.pushed);
        let p = l * m * q;
        let mut u_coef = DMatrix::zeros(m, p);
        let mut x_coef = DMatrix::zeros(q, p);
        for i in 0..l {
            // lag i+1: w_{t-1-i} and zeta_{t-1-i} sit at ring position i
            if let Some(wl) = self.w.get(i) {
                for b in 0..q {
                    for a in 0..m {
                        u_coef[(a, flat_index(i, a, b, m, q))] = wl[b];
                    }
                }
            }
            if let Some(z) = self.zeta.get(i) {
                x_coef.columns_mut(i * m * q, m * q).copy_from(z);
            }
        }
        let x_offset = self.w.front().cloned().unwrap_or_else(|| DVector::zeros(q));
        SensitivityMap { t, l, m, q, u_coef, x_coef, x_offset }
    }
}

/// Exact gradient of `M -> c_t(u_t(M), x~_t(M))`.
pub fn grad_f<S: Real>(params: &AdacParams<S>, map: &SensitivityMap<S>, cost: &QuadStep<S>) -> Result<Vec<DMatrix<S>>> {
    let (u, x) = map.evaluate(params)?;
    let (gu, gx) = cost.grad(&u, &x);
    Ok(map.contract(&gu, &gx))
}

/// Value of the surrogate `f_t(M)`.
pub fn surrogate_value<S: Real>(params: &AdacParams<S>, map: &SensitivityMap<S>, cost: &QuadStep<S>) -> Result<S> {
    let (u, x) = map.evaluate(params)?;
    Ok(cost.value(&u, &x))
}

/// `Pi(M - lambda * grad)`.
pub fn ogd_step<S: Real>(params: &AdacParams<S>, grad: &[DMatrix<S>], lambda: S) -> Result<AdacParams<S>> {
    if grad.len() != params.l() {
        return Err(dim_err("ogd_step::grad", params.l(), grad.len()));
    }
    let mut blocks = Vec::with_capacity(grad.len());
    for (b, g) in params.blocks().iter().zip(grad) {
        if b.shape() != g.shape() {
            return Err(dim_err("ogd_step::block", format!("{:?}", b.shape()), format!("{:?}", g.shape())));
        }
        blocks.push(b - g * lambda);
    }
    Ok(project_m(&AdacParams::from_blocks(blocks, params.d())?))
}

/// `2 L D / (G sqrt(T))`.
pub fn step_size<S: Real>(l: usize, d: S, g: S, horizon: usize) -> S {
    from_usize::<S>(2 * l) * d / (g * from_usize::<S>(horizon.max(1)).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::behavior::pi_traj;
    use crate::lti::system::{gaussian_matrix, gaussian_vector};
    use crate::lti::{simulate, DisturbanceGen, LtiSystem};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn clean_pair(sys: &LtiSystem<f64>, n_len: usize, l: usize, rng: &mut ChaCha8Rng) -> HankelPair<f64> {
        let u: Vec<DVector<f64>> = (0..n_len).map(|_| gaussian_vector(sys.m(), rng)).collect();
        let tr = simulate(sys, &u, &DisturbanceGen::zero(sys.n()), None, &DVector::zeros(sys.n()), n_len).unwrap();
        HankelPair::new(&u, &tr.states[..n_len], l).unwrap()
    }

    fn random_params(l: usize, m: usize, q: usize, d: f64, rng: &mut ChaCha8Rng) -> AdacParams<f64> {
        let blocks = (0..l).map(|_| gaussian_matrix(m, q, rng) * 0.5).collect();
        project_m(&AdacParams::from_blocks(blocks, d).unwrap())
    }

    struct Instance {
        h: HankelPair<f64>,
        w: Vec<DVector<f64>>,
        l: usize,
        m: usize,
        q: usize,
    }

    fn instance(rng: &mut ChaCha8Rng, t: usize) -> Instance {
        let n = rng.random_range(1..=3);
        let m = rng.random_range(1..=2);
        let sys = LtiSystem::<f64>::random(n, m, 0.8, rng).unwrap();
        let l = rng.random_range(2..=4);
        let h = clean_pair(&sys, 3 * (m + n + 1) * l, l, rng);
        let w = (0..t).map(|_| gaussian_vector(n, rng) * 0.3).collect();
        Instance { h, w, l, m, q: n }
    }

    #[test]
    fn zero_history_gives_constant_zero_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let sys = LtiSystem::<f64>::random(2, 1, 0.7, &mut rng).unwrap();
        let h = clean_pair(&sys, 40, 4, &mut rng);
        let w = vec![DVector::zeros(2); 12];
        let map = build_sensitivity(&w, &h, 4, 12, None).unwrap();
        assert_eq!(map.u_coef.amax(), 0.0);
        assert!(map.x_coef.amax() < 1e-14);
        assert_eq!(map.x_offset.amax(), 0.0);
    }

    #[test]
    fn first_step_is_constant_in_m() {
        // at t = 1 the only lag is w_0 for x~ and the padded w_{-1} = 0 for u_0
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let sys = LtiSystem::<f64>::random(1, 1, 0.6, &mut rng).unwrap();
        let h = clean_pair(&sys, 20, 2, &mut rng);
        let w = vec![DVector::from_element(1, 0.7)];
        let map = build_sensitivity(&w, &h, 1, 1, None).unwrap();
        assert!(map.x_coef.amax() < 1e-12);
        assert_eq!(map.x_offset[0], 0.7);
        let mut tr = SensitivityTracker::new(&h, 1);
        tr.push(w[0].clone()).unwrap();
        assert!(tr.map().x_coef.amax() < 1e-12);
    }

    #[test]
    fn map_reproduces_pi_traj_on_probes() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..10 {
            let t = rng.random_range(1..25);
            let inst = instance(&mut rng, t);
            let map = build_sensitivity(&inst.w, &inst.h, inst.l, t, None).unwrap();
            for _ in 0..5 {
                let p = random_params(inst.l, inst.m, inst.q, 1.0, &mut rng);
                let (_, x) = map.evaluate(&p).unwrap();
                let oracle = pi_traj(&inst.w, &p, &inst.h, t, None).unwrap();
                assert!((x - oracle).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn windowed_map_reproduces_windowed_pi_traj() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let sys = LtiSystem::<f64>::random(2, 1, 0.8, &mut rng).unwrap();
        let h = clean_pair(&sys, 40, 4, &mut rng);
        let w: Vec<DVector<f64>> = (0..30).map(|_| gaussian_vector(2, &mut rng)).collect();
        let map = build_sensitivity(&w, &h, 4, 30, Some(9)).unwrap();
        for _ in 0..5 {
            let p = random_params(4, 1, 2, 1.0, &mut rng);
            let x = map.evaluate(&p).unwrap().1;
            assert!((x - pi_traj(&w, &p, &h, 30, Some(9)).unwrap()).norm() < 1e-9);
        }
    }

    #[test]
    fn tracker_matches_from_scratch_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        for _ in 0..12 {
            let inst = instance(&mut rng, 30);
            let mut tr = SensitivityTracker::new(&inst.h, inst.l);
            for t in 0..=30 {
                let fresh = build_sensitivity(&inst.w, &inst.h, inst.l, t, None).unwrap();
                let inc = tr.map();
                assert_eq!(inc.t, t);
                assert!((&inc.u_coef - &fresh.u_coef).amax() < 1e-12);
                assert!((&inc.x_coef - &fresh.x_coef).amax() < 1e-9, "t={t}");
                assert!((&inc.x_offset - &fresh.x_offset).amax() < 1e-15);
                if t < 30 {
                    tr.push(inst.w[t].clone()).unwrap();
                }
            }
        }
    }

    #[test]
    fn constant_cost_has_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        let inst = instance(&mut rng, 10);
        let map = build_sensitivity(&inst.w, &inst.h, inst.l, 10, None).unwrap();
        let c = QuadStep {
            q: DVector::zeros(inst.q),
            s_target: DVector::zeros(inst.q),
            r: DVector::zeros(inst.m),
            u_target: DVector::zeros(inst.m),
        };
        let p = random_params(inst.l, inst.m, inst.q, 1.0, &mut rng);
        assert!(grad_f(&p, &map, &c).unwrap().iter().all(|g| g.amax() == 0.0));
    }

    #[test]
    fn linear_cost_contraction_matches_hand_assembly() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let inst = instance(&mut rng, 15);
        let map = build_sensitivity(&inst.w, &inst.h, inst.l, 15, None).unwrap();
        let gu: DVector<f64> = gaussian_vector(inst.m, &mut rng);
        let gx: DVector<f64> = gaussian_vector(inst.q, &mut rng);
        let blocks = map.contract(&gu, &gx);
        for i in 0..inst.l {
            let wl = &inst.w[15 - 1 - i];
            for a in 0..inst.m {
                for b in 0..inst.q {
                    let col = flat_index(i, a, b, inst.m, inst.q);
                    let expect = gu[a] * wl[b] + map.x_coef.column(col).dot(&gx);
                    assert!((blocks[i][(a, b)] - expect).abs() < 1e-12);
                }
            }
        }
    }

    fn tv_cost(m: usize, q: usize, rng: &mut ChaCha8Rng) -> QuadStep<f64> {
        QuadStep {
            q: DVector::from_fn(q, |_, _| 0.5 + rng.random::<f64>()),
            s_target: gaussian_vector(q, rng),
            r: DVector::from_fn(m, |_, _| 0.1 + rng.random::<f64>()),
            u_target: gaussian_vector(m, rng),
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(38);
        for _ in 0..50 {
            let t = rng.random_range(1..=30);
            let inst = instance(&mut rng, t);
            let map = build_sensitivity(&inst.w, &inst.h, inst.l, t, None).unwrap();
            let c = tv_cost(inst.m, inst.q, &mut rng);
            let p = random_params(inst.l, inst.m, inst.q, 1.0, &mut rng);
            let g = AdacParams::from_blocks(grad_f(&p, &map, &c).unwrap(), 1.0).unwrap().to_flat();
            let theta = p.to_flat();
            let hstep = 1e-5;
            let fd = DVector::from_fn(theta.len(), |k, _| {
                let mut plus = theta.clone();
                plus[k] += hstep;
                let mut minus = theta.clone();
                minus[k] -= hstep;
                let f = |th: &DVector<f64>| {
                    let pp = AdacParams::from_flat(th, inst.l, inst.m, inst.q, 1.0).unwrap();
                    surrogate_value(&pp, &map, &c).unwrap()
                };
                (f(&plus) - f(&minus)) / (2.0 * hstep)
            });
            let rel = (&g - &fd).norm() / g.norm().max(1e-12);
            assert!(rel <= 1e-5, "relative error {rel}");
        }
    }

    #[test]
    fn ogd_step_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(39);
        let p = random_params(3, 2, 2, 1.0, &mut rng);
        let zero = vec![DMatrix::zeros(2, 2); 3];
        assert_eq!(ogd_step(&p, &zero, 0.3).unwrap(), p);

        let inner = AdacParams::from_blocks(vec![DMatrix::from_element(1, 1, 0.1)], 1.0).unwrap();
        let g = vec![DMatrix::from_element(1, 1, 0.5)];
        let next = ogd_step(&inner, &g, 0.2).unwrap();
        assert_eq!(next.blocks()[0][(0, 0)], 0.1 - 0.2 * 0.5);

        let big: Vec<DMatrix<f64>> = (0..3).map(|_| gaussian_matrix(2, 2, &mut rng) * 10.0).collect();
        let out = ogd_step(&p, &big, 1.0).unwrap();
        for b in out.blocks() {
            let smax = b.singular_values().max();
            assert!(smax <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn step_size_formula() {
        assert!((step_size(4, 1.0f64, 2.0, 100) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn static_regret_within_ogd_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let (l, m, q, d, horizon) = (3, 1, 1, 1.0, 400);
        let maps: Vec<SensitivityMap<f64>> = (0..horizon)
            .map(|t| SensitivityMap {
                t,
                l,
                m,
                q,
                u_coef: gaussian_matrix(m, l, &mut rng),
                x_coef: gaussian_matrix(q, l, &mut rng),
                x_offset: gaussian_vector(q, &mut rng),
            })
            .collect();
        let costs: Vec<QuadStep<f64>> = (0..horizon).map(|_| tv_cost(m, q, &mut rng)).collect();
        let total = |p: &AdacParams<f64>| -> f64 {
            maps.iter().zip(&costs).map(|(mp, c)| surrogate_value(p, mp, c).unwrap()).sum()
        };

        // a priori gradient bound over the feasible set
        let g_bound = maps
            .iter()
            .zip(&costs)
            .map(|(mp, c)| {
                let reach_u = mp.u_coef.abs().row_sum()[0] * d;
                let reach_x = mp.x_offset.amax() + mp.x_coef.abs().row_sum()[0] * d;
                let gu = 2.0 * c.r[0] * (reach_u + c.u_target.amax());
                let gx = 2.0 * c.q[0] * (reach_x + c.s_target.amax());
                (gu * mp.u_coef.norm() + gx * mp.x_coef.norm()).max(1e-12)
            })
            .fold(0.0, f64::max);

        let lambda = step_size(l, d, g_bound, horizon);
        let mut p = AdacParams::zeros(l, m, q, d);
        let mut learner = 0.0;
        for (mp, c) in maps.iter().zip(&costs) {
            learner += surrogate_value(&p, mp, c).unwrap();
            let g = grad_f(&p, mp, c).unwrap();
            p = ogd_step(&p, &g, lambda).unwrap();
            assert!(p.is_feasible());
        }

        // offline projected gradient descent for the best fixed parameters
        let mut best = AdacParams::zeros(l, m, q, d);
        for _ in 0..20_000 {
            let mut acc = vec![DMatrix::zeros(m, q); l];
            for (mp, c) in maps.iter().zip(&costs) {
                for (a, g) in acc.iter_mut().zip(grad_f(&best, mp, c).unwrap()) {
                    *a += g;
                }
            }
            best = ogd_step(&best, &acc, 1e-4).unwrap();
        }
        let bound = 2.0 * l as f64 * d * g_bound * (horizon as f64).sqrt();
        assert!(learner <= total(&best) + bound, "{learner} vs {} + {bound}", total(&best));
    }
}

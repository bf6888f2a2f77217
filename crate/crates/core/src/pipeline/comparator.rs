//! The best fixed controller in hindsight.
//!
//! With the true system and disturbances known, every signal and input of a
//! fixed controller is affine in its flattened parameters, and both cost
//! families are diagonal quadratics. The total cost is therefore an explicit
//! convex quadratic `J(theta) = theta' H theta / 2 + g' theta + c`, minimized
//! over the product of spectral-norm balls by accelerated projected gradient.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::controller::{project_m, AdacParams};
use crate::error::{dim_err, Error, Result};
use crate::lti::{CostOracle, LtiSystem};
use crate::scalar::{to_f64, Real};

pub const GRAD_TOL: f64 = 1e-8;
pub const MAX_ITERS: usize = 10_000;

/// Hindsight data for one evaluation segment, which starts from rest.
#[derive(Debug, Clone)]
pub struct Segment<'a, S: Real> {
    pub system: &'a LtiSystem<S>,
    /// True disturbances `w_0..w_{T-1}` of the segment.
    pub disturbances: &'a [DVector<S>],
    /// Measurement noise `e_0..e_T` in output mode, `None` otherwise.
    pub measurement: Option<&'a [DVector<S>]>,
    /// Global time of the segment's first step, used to index costs.
    pub t0: usize,
    pub output: bool,
}

impl<S: Real> Segment<'_, S> {
    pub fn len(&self) -> usize {
        self.disturbances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.disturbances.is_empty()
    }

    fn noise(&self, k: usize) -> Option<&DVector<S>> {
        self.measurement.and_then(|e| e.get(k))
    }

    /// Disturbance signal the controller acts on: the accumulated
    /// disturbance, seen through `C` and shifted noise in output mode.
    pub fn controller_inputs(&self) -> Result<Vec<DVector<S>>> {
        let sys = self.system;
        let mut acc = DVector::zeros(sys.n());
        let mut out = Vec::with_capacity(self.len());
        for (k, w) in self.disturbances.iter().enumerate() {
            acc = sys.a() * &acc + w;
            if self.output {
                let mut z = sys.c() * &acc;
                if let Some(e) = self.noise(k + 1) {
                    z += e;
                }
                out.push(z);
            } else {
                out.push(acc.clone());
            }
        }
        Ok(out)
    }
}

/// `J(theta) = theta' H theta / 2 + g' theta + c` in the layout of
/// [`AdacParams::to_flat`].
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticObjective<S: Real> {
    pub hess: DMatrix<S>,
    pub lin: DVector<S>,
    pub constant: S,
    pub l: usize,
    pub m: usize,
    pub q: usize,
    pub d: S,
}

impl<S: Real> QuadraticObjective<S> {
    pub fn value(&self, theta: &DVector<S>) -> S {
        (theta.dot(&(&self.hess * theta)) * nalgebra::convert::<f64, S>(0.5)) + self.lin.dot(theta) + self.constant
    }

    pub fn gradient(&self, theta: &DVector<S>) -> DVector<S> {
        &self.hess * theta + &self.lin
    }

    fn project(&self, theta: &DVector<S>) -> DVector<S> {
        let p = AdacParams::from_flat(theta, self.l, self.m, self.q, self.d).expect("layout fixed at construction");
        project_m(&p).to_flat()
    }
}

/// Assemble the exact quadratic total cost of a fixed controller with `l`
/// blocks on `seg`.
pub fn comparator_objective<S: Real>(seg: &Segment<'_, S>, cost: &CostOracle<S>, l: usize, d: S) -> Result<QuadraticObjective<S>> {
    let sys = seg.system;
    let (n, m) = (sys.n(), sys.m());
    let q = sys.signal_dim(seg.output);
    if cost.signal_dim != q || cost.input_dim != m {
        return Err(dim_err("comparator_objective::cost", format!("{q}/{m}"), format!("{}/{}", cost.signal_dim, cost.input_dim)));
    }
    let p = l * m * q;
    let z = seg.controller_inputs()?;
    let mut hess = DMatrix::<S>::zeros(p, p);
    let mut lin = DVector::<S>::zeros(p);
    let mut constant = S::zero();
    let two: S = nalgebra::convert(2.0);
    // state sensitivity X_k (n x p) and free response x0_k
    let mut xs = DMatrix::<S>::zeros(n, p);
    let mut x0 = DVector::<S>::zeros(n);
    let mut uk = DMatrix::<S>::zeros(m, p);
    for k in 0..seg.len() {
        uk.fill(S::zero());
        for i in 0..l {
            if k > i {
                let zl = &z[k - 1 - i];
                for b in 0..q {
                    for a in 0..m {
                        uk[(a, i * m * q + b * m + a)] = zl[b];
                    }
                }
            }
        }
        let (sk, s0) = if seg.output {
            let mut s0 = sys.c() * &x0;
            if let Some(e) = seg.noise(k) {
                s0 += e;
            }
            (sys.c() * &xs, s0)
        } else {
            (xs.clone(), x0.clone())
        };
        let c = cost.at(seg.t0 + k);
        // input part: (U theta - u*)' R (U theta - u*)
        let ru = DMatrix::from_diagonal(&c.r) * &uk;
        hess += uk.tr_mul(&ru) * two;
        lin -= ru.tr_mul(&c.u_target) * two;
        constant += c.u_target.component_mul(&c.u_target).dot(&c.r);
        // signal part: (s0 + S theta - s*)' Q (s0 + S theta - s*)
        let qs = DMatrix::from_diagonal(&c.q) * &sk;
        let off = &s0 - &c.s_target;
        hess += sk.tr_mul(&qs) * two;
        lin += qs.tr_mul(&off) * two;
        constant += off.component_mul(&off).dot(&c.q);
        xs = sys.a() * &xs + sys.b() * &uk;
        x0 = sys.a() * &x0 + &seg.disturbances[k];
    }
    let hess = (&hess + hess.transpose()) * nalgebra::convert::<f64, S>(0.5);
    Ok(QuadraticObjective { hess, lin, constant, l, m, q, d })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparatorResult<S: Real> {
    pub params: AdacParams<S>,
    /// Total cost of `params`, by direct re-simulation.
    pub cost: S,
    /// Objective value at `params` from the quadratic form.
    pub objective: S,
    pub iterations: usize,
    pub converged: bool,
    pub grad_mapping_norm: f64,
}

/// Minimize a comparator objective over the admissible set.
///
/// An ADMM pass with a once-factorized `H + rho I` gets close despite poor
/// conditioning; accelerated projected gradient with step `1 / lambda_max`
/// then polishes until the gradient mapping drops below [`GRAD_TOL`]. The
/// best objective value seen is returned.
pub fn minimize<S: Real>(obj: &QuadraticObjective<S>) -> (DVector<S>, usize, bool, f64) {
    let p = obj.lin.len();
    let zero = DVector::<S>::zeros(p);
    if p == 0 {
        return (zero, 0, true, 0.0);
    }
    let eig = SymmetricEigen::new(obj.hess.clone());
    let lmax = eig.eigenvalues.iter().copied().fold(S::zero(), |a, b| a.max(b));
    if to_f64(lmax) <= f64::MIN_POSITIVE && to_f64(obj.lin.amax()) == 0.0 {
        return (zero, 0, true, 0.0);
    }
    let lip = if to_f64(lmax) <= 0.0 { S::one() } else { lmax };
    let step = S::one() / lip;
    let grad_map = |y: &DVector<S>| -> (DVector<S>, f64) {
        let next = obj.project(&(y - obj.gradient(y) * step));
        let gm = to_f64((y - &next).norm() * lip);
        (next, gm)
    };

    let mut best = zero.clone();
    let mut best_val = obj.value(&best);
    let mut iterations = 0;
    if let Some(z) = admm(obj, &eig, lip, &mut iterations) {
        let val = obj.value(&z);
        if val < best_val {
            best = z;
            best_val = val;
        }
    }

    let mut x = best.clone();
    let mut y = best.clone();
    let mut tk = 1.0f64;
    let mut prev_val = best_val;
    while iterations < MAX_ITERS {
        let (_, gm) = grad_map(&best);
        if gm <= GRAD_TOL {
            return (best, iterations, true, gm);
        }
        iterations += 1;
        let (next, _) = grad_map(&y);
        let val = obj.value(&next);
        if val < best_val {
            best = next.clone();
            best_val = val;
        }
        if val > prev_val {
            tk = 1.0;
            x = best.clone();
            y = best.clone();
            prev_val = best_val;
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * tk * tk).sqrt());
        let beta: S = nalgebra::convert((tk - 1.0) / t_next);
        y = &next + (&next - &x) * beta;
        x = next;
        tk = t_next;
        prev_val = val;
    }
    let (_, gm) = grad_map(&best);
    (best, iterations, gm <= GRAD_TOL, gm)
}

/// ADMM on `min J(theta) + indicator(z)` subject to `theta = z`; returns the
/// feasible iterate `z`.
fn admm<S: Real>(obj: &QuadraticObjective<S>, eig: &SymmetricEigen<S, nalgebra::Dyn>, lmax: S, iterations: &mut usize) -> Option<DVector<S>> {
    let p = obj.lin.len();
    let lmin = eig.eigenvalues.iter().copied().fold(lmax, |a, b| a.min(b));
    let floor = lmax * nalgebra::convert::<f64, S>(1e-10);
    let rho = (lmax * lmin.max(floor)).sqrt();
    // (H + rho I)^{-1} through the eigendecomposition already at hand
    let inv_diag = eig.eigenvalues.map(|e| S::one() / (e.max(S::zero()) + rho));
    let solve = |rhs: &DVector<S>| -> DVector<S> {
        let v = &eig.eigenvectors;
        v * (v.tr_mul(rhs)).component_mul(&inv_diag)
    };
    let mut z = DVector::<S>::zeros(p);
    let mut dual = DVector::<S>::zeros(p);
    let tol: S = nalgebra::convert(1e-13);
    for _ in 0..MAX_ITERS / 2 {
        *iterations += 1;
        let theta = solve(&((&z - &dual) * rho - &obj.lin));
        let z_next = obj.project(&(&theta + &dual));
        let primal = (&theta - &z_next).norm();
        let dual_res = (&z_next - &z).norm() * rho;
        dual += &theta - &z_next;
        z = z_next;
        let scale = z.norm().max(S::one());
        if primal <= tol * scale && dual_res <= tol * scale * rho.max(S::one()) {
            break;
        }
    }
    z.iter().all(|v| v.is_finite()).then_some(z)
}

/// Total cost of a fixed controller on `seg` by direct simulation.
pub fn fixed_policy_cost<S: Real>(seg: &Segment<'_, S>, cost: &CostOracle<S>, params: &AdacParams<S>) -> Result<S> {
    let sys = seg.system;
    let z = seg.controller_inputs()?;
    if params.q() != sys.signal_dim(seg.output) || params.m() != sys.m() {
        return Err(dim_err("fixed_policy_cost::params", sys.m(), params.m()));
    }
    let mut x = DVector::<S>::zeros(sys.n());
    let mut total = S::zero();
    for k in 0..seg.len() {
        let lags: Vec<DVector<S>> =
            (1..=params.l()).map(|i| if k >= i { z[k - i].clone() } else { DVector::zeros(params.q()) }).collect();
        let u = params.apply(&lags);
        let s = if seg.output {
            let mut y = sys.c() * &x;
            if let Some(e) = seg.noise(k) {
                y += e;
            }
            y
        } else {
            x.clone()
        };
        total += cost.value(seg.t0 + k, &u, &s);
        x = sys.a() * &x + sys.b() * &u + &seg.disturbances[k];
    }
    Ok(total)
}

/// `(M*, J*)` over the admissible set.
pub fn comparator_oracle<S: Real>(seg: &Segment<'_, S>, cost: &CostOracle<S>, l: usize, d: S) -> Result<ComparatorResult<S>> {
    if seg.output && seg.measurement.is_some_and(|e| e.len() <= seg.len()) {
        return Err(Error::Contract("comparator_oracle: output mode needs e_0..e_T".into()));
    }
    let obj = comparator_objective(seg, cost, l, d)?;
    let (theta, iterations, converged, gm) = minimize(&obj);
    let params = AdacParams::from_flat(&theta, l, obj.m, obj.q, d)?;
    let cost_value = fixed_policy_cost(seg, cost, &params)?;
    Ok(ComparatorResult {
        objective: obj.value(&theta),
        params,
        cost: cost_value,
        iterations,
        converged,
        grad_mapping_norm: gm,
    })
}

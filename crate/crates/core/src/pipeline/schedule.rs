//! Horizon-dependent defaults for the window length, rollout length and
//! number of rollouts.

use serde::{Deserialize, Serialize};

/// `ceil(T^(2/3))`, computed exactly in integers.
pub fn ceil_t23(horizon: usize) -> usize {
    let target = (horizon as u128).pow(2);
    let mut k = (horizon as f64).powf(2.0 / 3.0).floor() as u128;
    while k.saturating_sub(1).pow(3) >= target && k > 0 {
        k -= 1;
    }
    while k.pow(3) < target {
        k += 1;
    }
    k as usize
}

/// `max(ceil(ln T), 2n)`.
pub fn default_l(horizon: usize, n: usize) -> usize {
    let log_t = (horizon.max(1) as f64).ln().ceil() as usize;
    log_t.max(2 * n).max(2)
}

/// Smallest rollout length satisfying both the `(m+n+1)L` lower bound and
/// the width needed for a persistently exciting probe of order `L + 2n`.
pub fn default_n(l: usize, n: usize, m: usize) -> usize {
    ((m + n + 1) * l).max((m + 1) * (l + 2 * n) - 1)
}

/// `ceil(ceil(T^(2/3)) / N)`.
pub fn default_i0(horizon: usize, n_rollout: usize) -> usize {
    ceil_t23(horizon).div_ceil(n_rollout.max(1)).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub horizon: usize,
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "N")]
    pub n_rollout: usize,
    #[serde(rename = "I0")]
    pub i0: usize,
    #[serde(rename = "T_s")]
    pub t_s: usize,
}

impl Schedule {
    /// Fill in any of `L`, `N`, `I0` left unset.
    pub fn resolve(horizon: usize, n: usize, m: usize, l: Option<usize>, n_rollout: Option<usize>, i0: Option<usize>) -> Self {
        let l = l.unwrap_or_else(|| default_l(horizon, n));
        let n_rollout = n_rollout.unwrap_or_else(|| default_n(l, n, m));
        let i0 = i0.unwrap_or_else(|| default_i0(horizon, n_rollout));
        Self { horizon, l, n_rollout, i0, t_s: n_rollout * i0 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_two_thirds_power() {
        assert_eq!(ceil_t23(1000), 100);
        assert_eq!(ceil_t23(8), 4);
        assert_eq!(ceil_t23(512), 64);
        assert_eq!(ceil_t23(1001), 101);
        for t in 1..5000usize {
            let k = ceil_t23(t) as u128;
            assert!(k.pow(3) >= (t as u128).pow(2));
            assert!((k - 1).pow(3) < (t as u128).pow(2));
        }
    }

    #[test]
    fn thousand_step_schedule() {
        let s = Schedule::resolve(1000, 2, 1, None, Some(25), None);
        assert_eq!(s.l, 7);
        assert_eq!(s.i0, 4);
        assert_eq!(s.t_s, 100);
        let d = Schedule::resolve(1000, 2, 1, None, None, None);
        assert_eq!(d.n_rollout, 28);
        assert!(d.t_s >= 100 && d.t_s < 100 + d.n_rollout);
    }
}

//! Brute-force reference computations used to cross-check the fast
//! algorithms. They evaluate the defining sets directly and are slow.

use crate::bisect;
use crate::error::Result;
use crate::fixed_ci::SampleSummary;
use crate::kernels::{kl_bernoulli, mb, mg, mp, psi_ext, varphi_ext, ExtReal};
use crate::rules::Rule;

/// Does `ν` (below the mean) satisfy the lower exclusion predicate on the
/// grid `{kh} ∪ {ν(1-ν)}` of variances?
fn lower_excluded(s: &SampleSummary, nu: f64, t: f64, h: f64) -> bool {
    let x = s.mean;
    let w = s.w(nu);
    let fails = |th: f64| {
        let cover = if th > w { kl_bernoulli(w, th) } else { 0.0 };
        !(psi_ext(x, nu, th).max(cover) > t)
    };
    grid_holds(nu, w, t, h, fails)
}

fn upper_excluded(s: &SampleSummary, nu: f64, t: f64, h: f64) -> bool {
    let x = s.mean;
    let w = s.w(nu);
    let fails = |th: f64| {
        let cover = if th > w { kl_bernoulli(w, th) } else { 0.0 };
        !(varphi_ext(x, nu, th).max(cover) > t)
    };
    grid_holds(nu, w, t, h, fails)
}

/// True when no grid variance fails. The most likely failure is tried
/// first; the full grid is always scanned before answering `true`.
fn grid_holds<F: Fn(f64) -> bool>(nu: f64, w: f64, t: f64, h: f64, fails: F) -> bool {
    let top = nu * (1.0 - nu);
    if top <= 0.0 {
        return true;
    }
    let k_top = (top / h).floor() as u64;
    let guess = if w >= top || kl_bernoulli(w, top) <= t {
        top
    } else {
        bisect::switch_point(w, top, 1e-12, |th| kl_bernoulli(w, th) > t).0
    };
    let k_guess = ((guess / h).floor() as u64).min(k_top);
    if fails(top) || (k_guess > 0 && fails(k_guess as f64 * h)) {
        return false;
    }
    (1..=k_top).all(|k| !fails(k as f64 * h))
}

/// Grid evaluation of the fixed-sample interval: `ν` and the variance run
/// over multiples of `step`. Returns `(L, U)`.
pub fn oracle_ci_grid(summary: &SampleSummary, delta: f64, step: f64) -> (f64, f64) {
    let t = (3.0 / delta).ln() / summary.n as f64;
    let x = summary.mean;
    let steps = (1.0 / step).round() as u64;

    let lower = if x == 0.0 {
        0.0
    } else {
        let first = ((x / step).ceil() as u64).saturating_sub(1);
        (1..=first)
            .rev()
            .map(|k| k as f64 * step)
            .filter(|&nu| nu < x)
            .find(|&nu| lower_excluded(summary, nu, t, step))
            .unwrap_or(0.0)
    };
    let upper = if x == 1.0 {
        1.0
    } else {
        let first = (x / step).floor() as u64 + 1;
        (first..steps)
            .map(|k| k as f64 * step)
            .filter(|&nu| nu > x)
            .find(|&nu| upper_excluded(summary, nu, t, step))
            .unwrap_or(1.0)
    };
    (lower, upper)
}

/// Observation family whose exponent defines a sequence of limits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Bernoulli,
    Geometric,
    Poisson,
}

impl Family {
    fn kernel(self, z: f64, theta: f64) -> Result<ExtReal> {
        match self {
            Family::Bernoulli => mb(z, theta),
            Family::Geometric => mg(z, theta),
            Family::Poisson => mp(z, theta),
        }
    }

    fn range(self) -> (f64, f64) {
        match self {
            Family::Bernoulli => (0.0, 1.0),
            Family::Geometric => (1.0, f64::INFINITY),
            Family::Poisson => (0.0, f64::INFINITY),
        }
    }
}

/// `(L, U)` where `L = inf{ν < X̄ : M(ν + r(X̄-ν), ν) > thr}` and
/// `U = sup{ν > X̄ : M(ν - r(ν-X̄), ν) > thr}` with `r = n / max(n, m)`,
/// located by bisection. `U` is infinite for unbounded families when no
/// finite bound exists below `1e12`.
pub fn oracle_sequence_limits(family: Family, n: u64, mean: f64, m: u64, threshold: f64) -> (f64, f64) {
    let r = n as f64 / n.max(m) as f64;
    let above = |v: Result<ExtReal>| v.map(|v| v.gt(threshold)).unwrap_or(false);
    let (lo, hi) = family.range();
    let tol = 1e-15 * mean.abs().max(1.0);

    let lower = if mean <= lo {
        lo
    } else {
        let (a, b) = bisect::switch_point(lo, mean, tol, |nu| above(family.kernel(nu + r * (mean - nu), nu)));
        0.5 * (a + b)
    };

    let outside = |nu: f64| !above(family.kernel(nu - r * (nu - mean), nu));
    let upper = if mean >= hi {
        hi
    } else if hi.is_finite() {
        let (a, b) = bisect::switch_point(mean, hi, tol, outside);
        0.5 * (a + b)
    } else {
        let mut far = mean + 1.0;
        while !outside(far) && far < 1e12 {
            far *= 2.0;
        }
        if !outside(far) {
            f64::INFINITY
        } else {
            let (a, b) = bisect::switch_point(mean, far, tol * far.max(1.0), outside);
            0.5 * (a + b)
        }
    };
    (lower, upper)
}

/// Stopping event of rules A, D and E written through the limits: the
/// interval `[L, U]` fits the error band around `X̄`.
pub fn sequence_event(rule: Rule, n: u64, mean: f64, m: u64, threshold: f64, epsilon: f64) -> Option<bool> {
    let (family, lo_band, hi_band) = match rule {
        Rule::A => (Family::Bernoulli, mean - epsilon, mean + epsilon),
        Rule::D => (Family::Geometric, (1.0 - epsilon) * mean, (1.0 + epsilon) * mean),
        Rule::E => (Family::Poisson, mean - epsilon, mean + epsilon),
        _ => return None,
    };
    let (l, u) = oracle_sequence_limits(family, n, mean, m, threshold);
    Some(lo_band <= l && l <= u && u <= hi_band)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn limits_bracket_the_mean() {
        let (l, u) = oracle_sequence_limits(Family::Bernoulli, 100, 0.3, 200, -0.02);
        assert!(0.0 < l && l < 0.3 && 0.3 < u && u < 1.0);
        let (l, u) = oracle_sequence_limits(Family::Poisson, 100, 2.0, 100, -0.05);
        assert!(0.0 < l && l < 2.0 && 2.0 < u && u.is_finite());
        let (l, u) = oracle_sequence_limits(Family::Geometric, 100, 3.0, 100, -0.05);
        assert!(1.0 < l && l < 3.0 && 3.0 < u && u.is_finite());
    }

    #[test]
    fn edge_means() {
        assert_eq!(oracle_sequence_limits(Family::Bernoulli, 10, 0.0, 10, -0.1).0, 0.0);
        assert_eq!(oracle_sequence_limits(Family::Bernoulli, 10, 1.0, 10, -0.1).1, 1.0);
        assert_eq!(oracle_sequence_limits(Family::Geometric, 10, 1.0, 10, -0.1).0, 1.0);
    }

    #[test]
    fn grid_interval_brackets_mean() {
        let s = SampleSummary::new(200, 0.4, 0.2).unwrap();
        let (l, u) = oracle_ci_grid(&s, 0.05, 1e-3);
        assert!(l < 0.4 && 0.4 < u, "{l} {u}");
    }
}

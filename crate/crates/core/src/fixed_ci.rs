//! Fixed-sample confidence interval and confidence region for the mean of a
//! `[0, 1]`-valued variable, using Hoeffding bounds that exploit the sample
//! variance.
//!
//! With `t = ln(3/δ)/n` and `W_ν = V̄ + (X̄ - ν)²`, the lower limit is the
//! supremum of the `ν < X̄` for which
//! `max[ψ(X̄, ν, ϑ), φ(W_ν, ϑ)·1{ϑ > W_ν}] > t` for every
//! `ϑ ∈ (0, ν(1-ν)]`; the upper limit mirrors it with `varphi`.
//! Both are found by an adaptive scan that certifies whole intervals
//! `[a, b]` of `ν` at a time through a sufficient condition checked in
//! closed form (plus one bisection).

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::bisect;
use crate::error::{invalid, Result};
use crate::kernels::{kl_bernoulli, psi_ext, varphi_ext};
use crate::rules::RunningSample;

/// Smallest step of the adaptive scan.
pub const SCAN_ETA: f64 = 1e-12;

/// Width below which the `θ*` bisection stops.
pub const THETA_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub n: u64,
    pub mean: f64,
    pub var: f64,
}

impl SampleSummary {
    /// Checks that the triple can come from `n` observations in `[0, 1]`,
    /// which forces `V̄ ≤ X̄(1 - X̄)`.
    pub fn new(n: u64, mean: f64, var: f64) -> Result<Self> {
        if n == 0 {
            return Err(invalid("summary needs at least one observation"));
        }
        if !(0.0..=1.0).contains(&mean) {
            return Err(invalid(format!("mean {mean} outside [0, 1]")));
        }
        if !(var >= 0.0) || var > mean * (1.0 - mean) + 1e-12 {
            return Err(invalid(format!(
                "variance {var} outside [0, mean(1 - mean)] for mean {mean}"
            )));
        }
        Ok(SampleSummary { n, mean, var: var.min(mean * (1.0 - mean)) })
    }

    pub fn from_sample(sample: &RunningSample) -> Result<Self> {
        let m = sample.mean().clamp(0.0, 1.0);
        SampleSummary::new(sample.n, m, sample.var().min(m * (1.0 - m)))
    }

    pub fn from_observations(xs: &[f64]) -> Result<Self> {
        let mut s = RunningSample::new();
        for &x in xs {
            s.feed(x, crate::rules::Support::Unit)?;
        }
        SampleSummary::from_sample(&s)
    }

    /// `W_ν = V̄ + (X̄ - ν)²`.
    pub fn w(&self, nu: f64) -> f64 {
        let d = self.mean - nu;
        self.var + d * d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub n: u64,
    pub mean: f64,
    pub var: f64,
    pub delta: f64,
    #[serde(rename = "L")]
    pub lower: f64,
    #[serde(rename = "U")]
    pub upper: f64,
}

impl ConfidenceInterval {
    pub fn level(&self) -> f64 {
        1.0 - self.delta
    }

    pub fn contains(&self, mu: f64) -> bool {
        self.lower <= mu && mu <= self.upper
    }
}

/// `max ν(1-ν)` over `ν ∈ [a, b]`.
fn max_variance(a: f64, b: f64) -> f64 {
    if a <= 0.5 && 0.5 <= b {
        0.25
    } else {
        (a * (1.0 - a)).max(b * (1.0 - b))
    }
}

/// Upper end of a tight bracket around the `θ ∈ (w, c)` where
/// `φ(w, θ) = t`, given `φ(w, w) = 0 < t < φ(w, c)`. The returned value
/// never undershoots the root.
fn theta_star(w: f64, c: f64, t: f64) -> f64 {
    bisect::switch_point(w, c, THETA_TOL, |th| kl_bernoulli(w, th) >= t).1
}

/// Shared case analysis for both scans. `tail(ϑ)` is the Hoeffding exponent
/// evaluated at the endpoint nearest the sample mean, `w` the second moment
/// at the far endpoint and `c` the variance ceiling over the interval.
fn certify<F: Fn(f64) -> f64>(tail: F, w: f64, c: f64, t: f64) -> bool {
    if w >= c {
        return tail(c) > t;
    }
    if !(tail(w) > t) {
        return false;
    }
    if kl_bernoulli(w, c) <= t {
        tail(c) > t
    } else {
        tail(theta_star(w, c, t)) > t
    }
}

fn check_threshold(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("threshold {t} must be positive")))
    }
}

/// Sufficient condition that every `ν ∈ [a, b]` (below the sample mean)
/// is excluded from the interval at exponent threshold `threshold`.
pub fn state_b_holds(a: f64, b: f64, summary: &SampleSummary, threshold: f64) -> Result<bool> {
    check_threshold(threshold)?;
    if !(0.0 <= a && a <= b && b < summary.mean) {
        return Err(invalid(format!(
            "need 0 <= a <= b < mean, got a = {a}, b = {b}, mean = {}",
            summary.mean
        )));
    }
    Ok(state_b_unchecked(a, b, summary, threshold))
}

fn state_b_unchecked(a: f64, b: f64, summary: &SampleSummary, t: f64) -> bool {
    let c = max_variance(a, b);
    if c <= 0.0 {
        // ν = 0 admits no variance at all, so nothing to certify.
        return true;
    }
    let x = summary.mean;
    certify(|th| psi_ext(x, b, th), summary.w(a), c, t)
}

/// Mirror of [`state_b_holds`] for `[a, b]` above the sample mean.
pub fn state_bu_holds(a: f64, b: f64, summary: &SampleSummary, threshold: f64) -> Result<bool> {
    check_threshold(threshold)?;
    if !(summary.mean < a && a <= b && b <= 1.0) {
        return Err(invalid(format!(
            "need mean < a <= b <= 1, got a = {a}, b = {b}, mean = {}",
            summary.mean
        )));
    }
    Ok(state_bu_unchecked(a, b, summary, threshold))
}

fn state_bu_unchecked(a: f64, b: f64, summary: &SampleSummary, t: f64) -> bool {
    let c = max_variance(a, b);
    if c <= 0.0 {
        return true;
    }
    let x = summary.mean;
    certify(|th| varphi_ext(x, a, th), summary.w(b), c, t)
}

/// Doubling-then-halving sweep. `advance(pos, d)` returns the candidate
/// endpoint if it stays on the near side of the mean, and `holds(pos, cand)`
/// certifies the interval between them.
fn adaptive_scan<A, H>(start: f64, d0: f64, advance: A, holds: H) -> f64
where
    A: Fn(f64, f64) -> Option<f64>,
    H: Fn(f64, f64) -> bool,
{
    let mut pos = start;
    let mut d = d0;
    loop {
        let mut l: i32 = 2;
        loop {
            l -= 1;
            d *= 2f64.powi(l);
            let mut st = false;
            if let Some(cand) = advance(pos, d) {
                if holds(pos, cand) {
                    st = true;
                    pos = cand;
                }
            }
            if d < SCAN_ETA {
                return pos;
            }
            if st {
                break;
            }
        }
    }
}

fn threshold(summary: &SampleSummary, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid(format!("delta = {delta} must lie in (0, 1)")));
    }
    Ok((3.0 / delta).ln() / summary.n as f64)
}

/// Lower confidence limit `L`; `0` when the sample mean is `0`.
pub fn lower_limit(summary: &SampleSummary, delta: f64) -> Result<f64> {
    let t = threshold(summary, delta)?;
    let x = summary.mean;
    if x == 0.0 {
        return Ok(0.0);
    }
    let d0 = (x / 8.0).max(1e-3);
    Ok(adaptive_scan(
        0.0,
        d0,
        |a, d| (a + d < x).then_some(a + d),
        |a, b| state_b_unchecked(a, b, summary, t),
    ))
}

/// Upper confidence limit `U`; `1` when the sample mean is `1`.
pub fn upper_limit(summary: &SampleSummary, delta: f64) -> Result<f64> {
    let t = threshold(summary, delta)?;
    let x = summary.mean;
    if x == 1.0 {
        return Ok(1.0);
    }
    let d0 = ((1.0 - x) / 8.0).max(1e-3);
    Ok(adaptive_scan(
        1.0,
        d0,
        |b, d| (b - d > x).then_some(b - d),
        |b, a| state_bu_unchecked(a, b, summary, t),
    ))
}

/// Interval `[L, U]` covering the mean with probability at least `1 - δ`.
pub fn ci_mean(summary: &SampleSummary, delta: f64) -> Result<ConfidenceInterval> {
    Ok(ConfidenceInterval {
        n: summary.n,
        mean: summary.mean,
        var: summary.var,
        delta,
        lower: lower_limit(summary, delta)?,
        upper: upper_limit(summary, delta)?,
    })
}

/// Threshold `ln(4/δ)/n` of the joint region.
pub fn region_threshold(summary: &SampleSummary, delta: f64) -> f64 {
    (4.0 / delta).ln() / summary.n as f64
}

/// Mean-side exponent of the region at `(ν, ϑ)`: `varphi` above the sample
/// mean, `ψ` below it.
fn mean_exponent(summary: &SampleSummary, nu: f64, theta: f64) -> f64 {
    if nu >= summary.mean {
        varphi_ext(summary.mean, nu, theta)
    } else {
        psi_ext(summary.mean, nu, theta)
    }
}

fn in_region(summary: &SampleSummary, t: f64, nu: f64, theta: f64) -> bool {
    if !(nu > 0.0 && nu < 1.0 && theta > 0.0 && theta <= nu * (1.0 - nu)) {
        return false;
    }
    mean_exponent(summary, nu, theta) < t && kl_bernoulli(summary.w(nu), theta) < t
}

/// Whether `(ν, ϑ)` lies in the `1 - δ` confidence region for
/// `(mean, variance)`.
pub fn region_contains(summary: &SampleSummary, delta: f64, nu: f64, theta: f64) -> bool {
    in_region(summary, region_threshold(summary, delta), nu, theta)
}

/// Which defining equation a boundary point solves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Curve {
    /// `ϑ = ν(1-ν)`, `ν ≥ X̄`
    C1,
    /// `varphi(X̄, ν, ϑ) = t`
    C2,
    /// `φ(W_ν, ϑ) = t`, `ν ≥ X̄`
    C3,
    /// `ϑ = ν(1-ν)`, `ν < X̄`
    D1,
    /// `ψ(X̄, ν, ϑ) = t`
    D2,
    /// `φ(W_ν, ϑ) = t`, `ν < X̄`
    D3,
}

impl fmt::Display for Curve {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPoint {
    pub curve: Curve,
    pub nu: f64,
    pub theta: f64,
    /// `|equation - t|`, zero for the envelope curves.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceRegion {
    pub n: u64,
    pub mean: f64,
    pub var: f64,
    pub delta: f64,
    pub threshold: f64,
    pub points: Vec<BoundaryPoint>,
    /// Grid lines on which a curve had no root inside its bracket.
    pub rootless: usize,
}

impl ConfidenceRegion {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("curve,nu,theta\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", p.curve, p.nu, p.theta));
        }
        out
    }
}

/// Value of the defining equation of `curve` at `(ν, ϑ)`.
pub fn curve_value(summary: &SampleSummary, curve: Curve, nu: f64, theta: f64) -> f64 {
    match curve {
        Curve::C1 | Curve::D1 => theta - nu * (1.0 - nu),
        Curve::C2 | Curve::D2 => mean_exponent(summary, nu, theta),
        Curve::C3 | Curve::D3 => kl_bernoulli(summary.w(nu), theta),
    }
}

// Root refinement goes to the resolution of f64.
const ROOT_TOL: f64 = 1e-16;
// Keeps bisection brackets strictly inside (0, 1).
const EDGE: f64 = 1e-12;

/// Samples the boundary of the confidence region on `resolution` grid lines
/// in each of `ν` and `ϑ`. Only points where the remaining constraints hold
/// (so the point really bounds the region) are returned.
pub fn region_boundary(summary: &SampleSummary, delta: f64, resolution: usize) -> Result<ConfidenceRegion> {
    if resolution < 2 {
        return Err(invalid("resolution must be at least 2"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid(format!("delta = {delta} must lie in (0, 1)")));
    }
    let t = region_threshold(summary, delta);
    let x = summary.mean;
    let mut points = Vec::new();
    let mut rootless = 0usize;
    let grid = |i: usize| (i as f64 + 0.5) / resolution as f64;

    // Does the point bound the region: the constraints other than `skip`
    // hold (weakly, since the point sits on the closure).
    let others_hold = |curve: Curve, nu: f64, theta: f64| -> bool {
        let dom = theta > 0.0 && theta <= nu * (1.0 - nu) * (1.0 + 1e-12);
        let side = match curve {
            Curve::C1 | Curve::C2 | Curve::C3 => nu >= x,
            Curve::D1 | Curve::D2 | Curve::D3 => nu < x,
        };
        let mean_ok = || mean_exponent(summary, nu, theta) <= t;
        let var_ok = || kl_bernoulli(summary.w(nu), theta) <= t;
        dom && side
            && match curve {
                Curve::C1 | Curve::D1 => mean_ok() && var_ok(),
                Curve::C2 | Curve::D2 => var_ok(),
                Curve::C3 | Curve::D3 => mean_ok(),
            }
    };
    let mut push = |curve: Curve, nu: f64, theta: f64| {
        if others_hold(curve, nu, theta) {
            let residual = match curve {
                Curve::C1 | Curve::D1 => 0.0,
                _ => (curve_value(summary, curve, nu, theta) - t).abs(),
            };
            points.push(BoundaryPoint { curve, nu, theta, residual });
        }
    };

    for i in 0..resolution {
        let nu = grid(i);
        let (env, var_curve) = if nu >= x { (Curve::C1, Curve::C3) } else { (Curve::D1, Curve::D3) };
        // Envelope ϑ = ν(1 - ν).
        push(env, nu, nu * (1.0 - nu));

        // Variance curve: φ(W_ν, ϑ) = t on either side of W_ν.
        let w = summary.w(nu);
        let top = nu * (1.0 - nu);
        let f = |th: f64| kl_bernoulli(w, th) - t;
        let lo_edge = EDGE.min(w * 0.5);
        if w > lo_edge && f(lo_edge) > 0.0 && f(w.min(top)) <= 0.0 {
            push(var_curve, nu, bisect::root(lo_edge, w.min(top), ROOT_TOL, f));
        } else {
            rootless += 1;
        }
        if w < top && f(top) > 0.0 {
            push(var_curve, nu, bisect::root(w, top, ROOT_TOL, f));
        } else {
            rootless += 1;
        }
    }

    // Mean curves: for fixed ϑ solve in ν, monotone on each side of X̄.
    for j in 0..resolution {
        let theta = 0.25 * grid(j);
        if x < 1.0 {
            let g = |nu: f64| varphi_ext(x, nu, theta) - t;
            let hi = 1.0 - EDGE;
            if x < hi && g(hi) > 0.0 {
                push(Curve::C2, bisect::root(x, hi, ROOT_TOL, g), theta);
            } else {
                rootless += 1;
            }
        }
        if x > 0.0 {
            let g = |nu: f64| psi_ext(x, nu, theta) - t;
            let lo = EDGE;
            if lo < x && g(lo) > 0.0 {
                let nu = bisect::root(lo, x, ROOT_TOL, g);
                if nu < x {
                    push(Curve::D2, nu, theta);
                }
            } else {
                rootless += 1;
            }
        }
    }

    Ok(ConfidenceRegion {
        n: summary.n,
        mean: summary.mean,
        var: summary.var,
        delta,
        threshold: t,
        points,
        rootless,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(n: u64, mean: f64, var: f64) -> SampleSummary {
        SampleSummary::new(n, mean, var).unwrap()
    }

    #[test]
    fn summary_validation() {
        assert!(SampleSummary::new(0, 0.5, 0.1).is_err());
        assert!(SampleSummary::new(10, 1.2, 0.1).is_err());
        assert!(SampleSummary::new(10, 0.1, 0.2).is_err());
        let s = SampleSummary::from_observations(&[0.0, 1.0, 1.0]).unwrap();
        assert_eq!(s.n, 3);
        assert!((s.var - 2.0 / 9.0).abs() < 1e-15);
        assert!((s.w(0.0) - (2.0 / 9.0 + 4.0 / 9.0)).abs() < 1e-15);
    }

    #[test]
    fn degenerate_means_hit_the_edges() {
        let z = summary(50, 0.0, 0.0);
        let ci = ci_mean(&z, 0.05).unwrap();
        assert_eq!(ci.lower, 0.0);
        assert!(ci.upper > 0.0 && ci.upper < 1.0);
        let o = summary(50, 1.0, 0.0);
        let ci = ci_mean(&o, 0.05).unwrap();
        assert_eq!(ci.upper, 1.0);
        assert!(ci.lower > 0.0 && ci.lower < 1.0);
    }

    #[test]
    fn interval_brackets_the_mean() {
        for &(n, m, v) in &[(100, 0.3, 0.21), (20, 0.5, 0.05), (500, 0.9, 0.01), (40, 0.02, 0.015)] {
            let ci = ci_mean(&summary(n, m, v), 0.05).unwrap();
            assert!(0.0 <= ci.lower && ci.lower < m && m < ci.upper && ci.upper <= 1.0, "{ci:?}");
        }
    }

    #[test]
    fn interval_shrinks_with_n() {
        let a = ci_mean(&summary(100, 0.3, 0.21), 0.05).unwrap();
        let b = ci_mean(&summary(400, 0.3, 0.21), 0.05).unwrap();
        assert!(b.lower >= a.lower && b.upper <= a.upper);
    }

    #[test]
    fn interval_nests_in_delta() {
        let s = summary(150, 0.4, 0.1);
        let wide = ci_mean(&s, 0.01).unwrap();
        let narrow = ci_mean(&s, 0.1).unwrap();
        assert!(wide.lower <= narrow.lower + 1e-12 && wide.upper >= narrow.upper - 1e-12);
    }

    #[test]
    fn state_b_argument_checks() {
        let s = summary(100, 0.3, 0.21);
        assert!(state_b_holds(0.2, 0.1, &s, 0.03).is_err());
        assert!(state_b_holds(0.1, 0.35, &s, 0.03).is_err());
        assert!(state_bu_holds(0.2, 0.5, &s, 0.03).is_err());
        assert!(state_b_holds(0.0, 0.01, &s, 0.0).is_err());
    }

    #[test]
    fn state_b_is_easy_far_from_the_mean() {
        let s = summary(10_000, 0.5, 0.2);
        let t = (3.0f64 / 1e-6).ln() / 10_000.0;
        assert!(state_b_holds(0.0, 0.3, &s, t).unwrap());
        assert!(!state_b_holds(0.0, 0.4999, &s, t).unwrap());
        assert!(state_bu_holds(0.7, 1.0, &s, t).unwrap());
    }

    #[test]
    fn ci_json_uses_short_limit_names() {
        let ci = ci_mean(&summary(100, 0.3, 0.21), 0.05).unwrap();
        let j = serde_json::to_value(ci).unwrap();
        assert!(j.get("L").is_some() && j.get("U").is_some());
    }

    #[test]
    fn empirical_point_is_interior() {
        let s = summary(100, 0.3, 0.15);
        assert!(region_contains(&s, 0.05, 0.3, 0.15));
        assert!(!region_contains(&s, 0.05, 0.9, 0.05));
        assert!(!region_contains(&s, 0.05, 0.3, 0.3 * 0.7 + 1e-6));
    }

    #[test]
    fn boundary_points_solve_their_equations() {
        let s = summary(80, 0.35, 0.12);
        let r = region_boundary(&s, 0.05, 64).unwrap();
        assert!(r.points.len() > 20);
        for p in &r.points {
            assert!(p.residual <= 1e-9, "{p:?}");
            assert!(p.theta > 0.0 && p.theta <= p.nu * (1.0 - p.nu) * (1.0 + 1e-12));
        }
        for c in [Curve::C2, Curve::C3, Curve::D2, Curve::D3] {
            assert!(r.points.iter().any(|p| p.curve == c), "no {c} points");
        }
        assert!(r.to_csv().starts_with("curve,nu,theta\n"));
    }
}

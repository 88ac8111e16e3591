//! Large-deviation exponents for Bernoulli/bounded, geometric and Poisson
//! means, plus the variance-aware Hoeffding exponents used by the fixed-sample
//! interval.
//!
//! `mb`, `mg` and `mp` take values on the extended reals: when the reference
//! parameter leaves its admissible range the exponent is `-inf`, represented by
//! [`ExtReal::NegInfinity`] so that threshold tests never see a NaN. A sample
//! argument outside the support of the distribution is a domain error.
//!
//! Log ratios are evaluated as `ln_1p` of a relative difference so that the
//! exponents keep their precision when both arguments are close, which is
//! exactly where stopping thresholds are crossed.

use std::cmp::Ordering;
use std::fmt;

use crate::error::{domain, Result};

/// A real number or negative infinity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExtReal {
    NegInfinity,
    Finite(f64),
}

impl ExtReal {
    pub fn is_finite(self) -> bool {
        matches!(self, ExtReal::Finite(_))
    }

    /// `self <= threshold`; negative infinity passes every finite threshold.
    pub fn le(self, threshold: f64) -> bool {
        match self {
            ExtReal::NegInfinity => true,
            ExtReal::Finite(v) => v <= threshold,
        }
    }

    /// `self > threshold`.
    pub fn gt(self, threshold: f64) -> bool {
        !self.le(threshold)
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            ExtReal::NegInfinity => None,
            ExtReal::Finite(v) => Some(v),
        }
    }

    /// IEEE view, mapping the marker to `f64::NEG_INFINITY`.
    pub fn to_f64(self) -> f64 {
        self.finite().unwrap_or(f64::NEG_INFINITY)
    }
}

impl PartialOrd for ExtReal {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match (self, other) {
            (ExtReal::NegInfinity, ExtReal::NegInfinity) => Some(Ordering::Equal),
            (ExtReal::NegInfinity, ExtReal::Finite(_)) => Some(Ordering::Less),
            (ExtReal::Finite(_), ExtReal::NegInfinity) => Some(Ordering::Greater),
            (ExtReal::Finite(a), ExtReal::Finite(b)) => a.partial_cmp(b),
        }
    }
}

impl fmt::Display for ExtReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtReal::NegInfinity => f.write_str("-inf"),
            ExtReal::Finite(v) => write!(f, "{v}"),
        }
    }
}

fn finite_arg(func: &'static str, name: &str, v: f64) -> Result<()> {
    if v.is_nan() {
        Err(domain(func, format!("{name} is NaN")))
    } else {
        Ok(())
    }
}

/// `a ln(b / a)` for `a > 0`, `b > 0`, computed as `a ln(1 + (b - a)/a)`.
#[inline]
fn x_log_ratio(a: f64, b: f64) -> f64 {
    a * ((b - a) / a).ln_1p()
}

/// Bernoulli exponent `z ln(θ/z) + (1-z) ln((1-θ)/(1-z))`.
///
/// Branches: `ln(1-θ)` at `z = 0`, `ln θ` at `z = 1`, and `-inf` whenever
/// `θ ∉ (0, 1)` (for any real `z`). Otherwise `z` must lie in `[0, 1]`.
pub fn mb(z: f64, theta: f64) -> Result<ExtReal> {
    finite_arg("mb", "z", z)?;
    finite_arg("mb", "theta", theta)?;
    if !(theta > 0.0 && theta < 1.0) {
        return Ok(ExtReal::NegInfinity);
    }
    if !(0.0..=1.0).contains(&z) {
        return Err(domain("mb", format!("z = {z} not in [0, 1]")));
    }
    let v = if z == 0.0 {
        (-theta).ln_1p()
    } else if z == 1.0 {
        theta.ln()
    } else {
        x_log_ratio(z, theta) + x_log_ratio(1.0 - z, 1.0 - theta)
    };
    Ok(ExtReal::Finite(v))
}

/// Quadratic surrogate `9 (z-θ)^2 / (2 (z+2θ)(z+2θ-3))`, an upper bound on
/// [`mb`] (Massart's inequality).
pub fn mb_massart(z: f64, theta: f64) -> Result<ExtReal> {
    finite_arg("mb_massart", "z", z)?;
    finite_arg("mb_massart", "theta", theta)?;
    if !(theta > 0.0 && theta < 1.0) {
        return Ok(ExtReal::NegInfinity);
    }
    if !(0.0..=1.0).contains(&z) {
        return Err(domain("mb_massart", format!("z = {z} not in [0, 1]")));
    }
    let d = z - theta;
    let w = z + 2.0 * theta;
    Ok(ExtReal::Finite(9.0 * d * d / (2.0 * w * (w - 3.0))))
}

/// Geometric exponent `z ln(z/θ) + (1-z) ln((1-z)/(1-θ))` on `z ≥ 1`.
///
/// `-ln θ` at `z = 1`; `-inf` whenever `θ ∉ (1, ∞)`.
pub fn mg(z: f64, theta: f64) -> Result<ExtReal> {
    finite_arg("mg", "z", z)?;
    finite_arg("mg", "theta", theta)?;
    if !(theta > 1.0) || theta.is_infinite() {
        return Ok(ExtReal::NegInfinity);
    }
    if !(z >= 1.0) || z.is_infinite() {
        return Err(domain("mg", format!("z = {z} not in [1, inf)")));
    }
    let v = if z == 1.0 {
        -theta.ln()
    } else {
        // z ln(z/θ) - (z-1) ln((z-1)/(θ-1))
        -x_log_ratio(z, theta) + x_log_ratio(z - 1.0, theta - 1.0)
    };
    Ok(ExtReal::Finite(v))
}

/// Poisson exponent `z - θ + z ln(θ/z)` on `z ≥ 0`.
///
/// `-θ` at `z = 0`; `-inf` whenever `θ ≤ 0`.
pub fn mp(z: f64, theta: f64) -> Result<ExtReal> {
    finite_arg("mp", "z", z)?;
    finite_arg("mp", "theta", theta)?;
    if !(theta > 0.0) || theta.is_infinite() {
        return Ok(ExtReal::NegInfinity);
    }
    if !(z >= 0.0) || z.is_infinite() {
        return Err(domain("mp", format!("z = {z} not in [0, inf)")));
    }
    let v = if z == 0.0 {
        -theta
    } else {
        let u = (theta - z) / z;
        z * (u.ln_1p() - u)
    };
    Ok(ExtReal::Finite(v))
}

/// Bernoulli Kullback-Leibler divergence `(1-z) ln((1-z)/(1-θ)) + z ln(z/θ)`
/// on the open square.
pub fn phi(z: f64, theta: f64) -> Result<f64> {
    if !(z > 0.0 && z < 1.0) || !(theta > 0.0 && theta < 1.0) {
        return Err(domain("phi", format!("(z, theta) = ({z}, {theta}) not in (0,1)^2")));
    }
    Ok(kl_bernoulli(z, theta))
}

/// `phi` extended to `z ∈ [0, 1]` by continuity. Caller guarantees
/// `theta ∈ (0, 1)`.
pub(crate) fn kl_bernoulli(z: f64, theta: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&z) && theta > 0.0 && theta < 1.0);
    if z == 0.0 {
        -(-theta).ln_1p()
    } else if z == 1.0 {
        -theta.ln()
    } else {
        -(x_log_ratio(z, theta) + x_log_ratio(1.0 - z, 1.0 - theta))
    }
}

/// Lower-tail Hoeffding exponent with variance `θ`:
///
/// `(1 - zν/(ν²+θ)) ln((θ + ν(ν-z))/θ) + (zν/(ν²+θ)) ln(z/ν)`
///
/// defined for `0 < z < ν < 1`, `0 < θ < 1`.
pub fn varphi(z: f64, nu: f64, theta: f64) -> Result<f64> {
    if !(z > 0.0 && z < nu && nu < 1.0) || !(theta > 0.0 && theta < 1.0) {
        return Err(domain(
            "varphi",
            format!("(z, nu, theta) = ({z}, {nu}, {theta}) violates 0 < z < nu < 1, 0 < theta < 1"),
        ));
    }
    Ok(varphi_ext(z, nu, theta))
}

/// `varphi` on the closure `0 ≤ z ≤ ν ≤ 1` (with `ν > 0`), using the
/// continuous extensions `0 ln 0 = 0` at `z = 0` and the value `0` at `z = ν`.
pub(crate) fn varphi_ext(z: f64, nu: f64, theta: f64) -> f64 {
    debug_assert!(z >= 0.0 && z <= nu && nu > 0.0 && theta > 0.0);
    if z >= nu {
        return 0.0;
    }
    let w = z * nu / (nu * nu + theta);
    let head = (1.0 - w) * (nu * (nu - z) / theta).ln_1p();
    let tail = if z == 0.0 {
        0.0
    } else {
        w * ((z - nu) / nu).ln_1p()
    };
    // The exponent is a Bernoulli divergence; rounding may leave -1e-17.
    (head + tail).max(0.0)
}

/// Upper-tail Hoeffding exponent `ψ(z, ν, θ) = varphi(1-z, 1-ν, θ)` for
/// `0 < ν < z < 1`, `0 < θ < 1`.
pub fn psi(z: f64, nu: f64, theta: f64) -> Result<f64> {
    if !(nu > 0.0 && nu < z && z < 1.0) || !(theta > 0.0 && theta < 1.0) {
        return Err(domain(
            "psi",
            format!("(z, nu, theta) = ({z}, {nu}, {theta}) violates 0 < nu < z < 1, 0 < theta < 1"),
        ));
    }
    Ok(psi_ext(z, nu, theta))
}

/// `psi` on the closure `0 ≤ ν ≤ z ≤ 1` (with `ν < 1`).
pub(crate) fn psi_ext(z: f64, nu: f64, theta: f64) -> f64 {
    varphi_ext(1.0 - z, 1.0 - nu, theta)
}

impl From<ExtReal> for f64 {
    fn from(v: ExtReal) -> f64 {
        v.to_f64()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn fin(v: Result<ExtReal>) -> f64 {
        v.unwrap().finite().expect("finite")
    }

    #[test]
    fn neg_infinity_orders_below_everything() {
        assert!(ExtReal::NegInfinity < ExtReal::Finite(f64::MIN));
        assert!(ExtReal::NegInfinity.le(-1e300));
        assert!(!ExtReal::NegInfinity.gt(-1e300));
        assert!(ExtReal::Finite(-0.5).le(-0.5));
        assert!(ExtReal::Finite(-0.4).gt(-0.5));
    }

    #[test]
    fn mb_examples() {
        assert_eq!(fin(mb(0.5, 0.5)), 0.0);
        assert!((fin(mb(0.0, 0.3)) - 0.7f64.ln()).abs() < 1e-15);
        // mpmath, 40 digits
        assert!((fin(mb(0.3, 0.5)) - -0.082_282_878_505_051_85).abs() < 1e-15);
        assert_eq!(mb(0.3, 1.2).unwrap(), ExtReal::NegInfinity);
        assert_eq!(mb(0.3, 0.0).unwrap(), ExtReal::NegInfinity);
        assert!((fin(mb(1.0, 0.4)) - 0.4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn mb_rejects_out_of_range_sample_mean() {
        assert!(matches!(mb(1.5, 0.5), Err(Error::Domain { .. })));
        assert!(matches!(mb(-0.1, 0.5), Err(Error::Domain { .. })));
        assert!(mb(f64::NAN, 0.5).is_err());
        // parameter outside (0,1) dominates: -inf for any z
        assert_eq!(mb(-3.0, 1.5).unwrap(), ExtReal::NegInfinity);
    }

    #[test]
    fn massart_examples() {
        assert_eq!(fin(mb_massart(0.5, 0.5)), 0.0);
        assert!((fin(mb_massart(0.3, 0.5)) - -0.081_447_963_800_904_98).abs() < 1e-15);
        assert_eq!(mb_massart(0.4, -0.1).unwrap(), ExtReal::NegInfinity);
    }

    #[test]
    fn mg_examples() {
        assert_eq!(fin(mg(2.0, 2.0)), 0.0);
        assert!((fin(mg(1.0, 3.0)) + 3f64.ln()).abs() < 1e-15);
        assert!((fin(mg(2.0, 3.0)) - -0.117_783_035_656_383_45).abs() < 1e-15);
        assert_eq!(mg(2.0, 1.0).unwrap(), ExtReal::NegInfinity);
        assert!(mg(0.5, 2.0).is_err());
    }

    #[test]
    fn mp_examples() {
        assert_eq!(fin(mp(4.0, 4.0)), 0.0);
        assert_eq!(fin(mp(0.0, 2.5)), -2.5);
        assert!((fin(mp(2.0, 1.0)) - (1.0 - 2.0 * 2f64.ln())).abs() < 1e-15);
        assert_eq!(mp(1.0, 0.0).unwrap(), ExtReal::NegInfinity);
        assert!(mp(-1.0, 2.0).is_err());
    }

    #[test]
    fn phi_examples() {
        assert_eq!(phi(0.5, 0.5).unwrap(), 0.0);
        assert!((phi(0.2, 0.5).unwrap() - 0.192_744_757_021_757_43).abs() < 1e-15);
        assert!(phi(0.0, 0.5).is_err());
        assert!(phi(0.5, 1.0).is_err());
    }

    #[test]
    fn varphi_psi_examples() {
        let v = varphi(0.3 - 1e-12, 0.3, 0.1).unwrap();
        assert!(v.abs() < 1e-9, "{v}");
        assert!((varphi(0.2, 0.4, 0.2).unwrap() - 0.107_667_921_692_066_65).abs() < 1e-14);
        assert_eq!(psi(0.6, 0.4, 0.2).unwrap(), varphi(0.4, 0.6, 0.2).unwrap());
        assert!((psi(0.6, 0.4, 0.2).unwrap() - 0.094_802_741_808_349_87).abs() < 1e-14);
        let p = psi(0.4 + 1e-12, 0.4, 0.05).unwrap();
        assert!(p.abs() < 1e-9, "{p}");
    }

    #[test]
    fn varphi_psi_reject_limit_points() {
        assert!(varphi(0.3, 0.3, 0.1).is_err());
        assert!(varphi(0.0, 0.3, 0.1).is_err());
        assert!(psi(0.3, 0.3, 0.1).is_err());
        assert!(varphi(0.1, 0.3, 1.0).is_err());
    }

    #[test]
    fn varphi_is_a_bernoulli_divergence() {
        // varphi(z, ν, θ) = KL(w || q) with w = zν/(ν²+θ), q = ν²/(ν²+θ)
        for &(z, nu, th) in &[(0.1, 0.5, 0.2), (0.45, 0.5, 0.01), (0.01, 0.9, 0.09)] {
            let w: f64 = z * nu / (nu * nu + th);
            let q: f64 = nu * nu / (nu * nu + th);
            let kl = w * (w / q).ln() + (1.0 - w) * ((1.0 - w) / (1.0 - q)).ln();
            assert!((varphi(z, nu, th).unwrap() - kl).abs() < 1e-13);
        }
    }

    #[test]
    fn extensions_match_closed_form_at_endpoints() {
        // z = 0: ln(1 + ν²/θ)
        let v = varphi_ext(0.0, 0.4, 0.1);
        assert!((v - (1.0f64 + 0.16 / 0.1).ln()).abs() < 1e-15);
        assert_eq!(varphi_ext(0.4, 0.4, 0.1), 0.0);
        assert!((kl_bernoulli(0.0, 0.3) + 0.7f64.ln()).abs() < 1e-15);
    }
}

//! Stage schedules: ascending sample sizes `m_1 < ... < m_s`, the confidence
//! budget spent at each stage, and the set of sample sizes at which a rule is
//! evaluated.
//!
//! Finite schedules share a uniform per-stage budget `δ/(2s)`. Unbounded
//! schedules grow geometrically and split `δ` as `δ_ℓ = δ(1-q)q^(ℓ-1)`; their
//! stages are materialised up to a horizon far beyond the safety cap, since
//! `ln δ_ℓ` falls linearly in `ℓ` while `m_ℓ` grows exponentially.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Default safety cap on the number of observations for unbounded rules.
pub const DEFAULT_CAP: u64 = 10_000_000;

/// Unbounded rules only look at stages with `m_ℓ` up to this multiple of `n`.
pub const SCAN_WINDOW: u64 = 64;

/// Sample sizes at which a stopping condition is evaluated. Always includes
/// every stage size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy", content = "k")]
pub enum CheckSet {
    #[default]
    StageOnly,
    EveryK(u64),
    All,
}

/// Which sample-size bound a finite schedule was built against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlanKind {
    /// Bounded mean, absolute error, first stage sized for rule A.
    A,
    /// Bounded mean, absolute error, first stage sized for rule B.
    B,
    /// Geometric mean, relative error.
    D,
    /// Geometric growth with summable budgets (rules C, E, F).
    Unbounded,
}

/// Generator parameters of an unbounded schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Growth {
    pub m1: u64,
    pub ratio: f64,
    pub decay: f64,
    pub cap: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSchedule {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub epsilon: Option<f64>,
    pub delta: f64,
    /// Nominal number of stages `s` used in the budget `δ/(2s)`; `None` for
    /// unbounded schedules.
    pub s: Option<usize>,
    pub rule: PlanKind,
    pub stages: Vec<u64>,
    /// `δ/(2s)` per stage for finite schedules, `δ_ℓ` for unbounded ones.
    pub budgets: Vec<f64>,
    pub check_set: CheckSet,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub growth: Option<Growth>,
}

fn check_unit_open(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("{name} = {v} must lie in (0, 1)")))
    }
}

fn ceil_u64(x: f64) -> Result<u64> {
    if !x.is_finite() || x > 9.0e15 {
        return Err(invalid(format!("sample size {x} is not representable")));
    }
    Ok((x.ceil() as u64).max(1))
}

/// Smallest final stage allowed for rules A and B: `ln(2s/δ)/(2ε²)`.
pub fn bounded_abs_final_bound(epsilon: f64, delta: f64, s: usize) -> f64 {
    (2.0 * s as f64 / delta).ln() / (2.0 * epsilon * epsilon)
}

/// Suggested first stage for rule A: `ln(2s/δ)/ln(1/(1-ε))`.
pub fn rule_a_first_bound(epsilon: f64, delta: f64, s: usize) -> f64 {
    (2.0 * s as f64 / delta).ln() / -(-epsilon).ln_1p()
}

/// Suggested first stage for rule B: `((24ε - 16ε²)/9) ln(2s/δ)/(2ε²)`.
pub fn rule_b_first_bound(epsilon: f64, delta: f64, s: usize) -> f64 {
    (24.0 * epsilon - 16.0 * epsilon * epsilon) / 9.0 * bounded_abs_final_bound(epsilon, delta, s)
}

/// Smallest final stage allowed for rule D:
/// `(1+ε) ln(2s/δ) / ((1+ε) ln(1+ε) - ε)`.
pub fn geometric_final_bound(epsilon: f64, delta: f64, s: usize) -> f64 {
    let l = (2.0 * s as f64 / delta).ln();
    (1.0 + epsilon) * l / ((1.0 + epsilon) * epsilon.ln_1p() - epsilon)
}

/// Suggested first stage for rule D: `ln(2s/δ)/ln(1+ε)`.
pub fn geometric_first_bound(epsilon: f64, delta: f64, s: usize) -> f64 {
    (2.0 * s as f64 / delta).ln() / epsilon.ln_1p()
}

/// Evenly spaced (on a log scale) stage sizes from `m1` to `ms`, rounded up
/// and repaired to be strictly increasing. Fewer than `s` stages come back
/// when the range is too narrow.
fn interpolate(m1: u64, ms: u64, s: usize) -> Vec<u64> {
    if s == 1 || m1 >= ms {
        return vec![ms];
    }
    let ratio = ms as f64 / m1 as f64;
    let mut out: Vec<u64> = Vec::with_capacity(s);
    for l in 0..s {
        let m = if l == 0 {
            m1
        } else if l == s - 1 {
            ms
        } else {
            let real = m1 as f64 * ratio.powf(l as f64 / (s - 1) as f64);
            // Rounding noise must not push an exact integer up by one.
            let r = real.round();
            if (real - r).abs() < 1e-9 * real {
                r as u64
            } else {
                real.ceil() as u64
            }
        };
        let m = match out.last() {
            Some(&prev) if m <= prev => prev + 1,
            _ => m,
        };
        if m >= ms {
            break;
        }
        out.push(m);
    }
    out.push(ms);
    out
}

fn finite(
    rule: PlanKind,
    epsilon: f64,
    delta: f64,
    s: usize,
    m1_real: f64,
    ms_real: f64,
) -> Result<StageSchedule> {
    let ms = ceil_u64(ms_real)?;
    let m1 = if s == 1 { ms } else { ceil_u64(m1_real)?.min(ms) };
    let stages = interpolate(m1, ms, s);
    let budget = delta / (2.0 * s as f64);
    Ok(StageSchedule {
        epsilon: Some(epsilon),
        delta,
        s: Some(s),
        rule,
        budgets: vec![budget; stages.len()],
        stages,
        check_set: CheckSet::StageOnly,
        growth: None,
    })
}

/// Finite schedule for a bounded mean with absolute error `ε ∈ (0, ½)`.
pub fn plan_bounded_abs(epsilon: f64, delta: f64, s: usize, rule: PlanKind) -> Result<StageSchedule> {
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(invalid(format!("epsilon = {epsilon} must lie in (0, 1/2)")));
    }
    check_unit_open("delta", delta)?;
    if s == 0 {
        return Err(invalid("s must be positive"));
    }
    let m1 = match rule {
        PlanKind::A => rule_a_first_bound(epsilon, delta, s),
        PlanKind::B => rule_b_first_bound(epsilon, delta, s),
        other => return Err(invalid(format!("plan kind {other:?} is not a bounded absolute-error plan"))),
    };
    finite(rule, epsilon, delta, s, m1, bounded_abs_final_bound(epsilon, delta, s))
}

/// Finite schedule for a geometric mean with relative error `ε ∈ (0, 1)`.
pub fn plan_geometric_mean(epsilon: f64, delta: f64, s: usize) -> Result<StageSchedule> {
    check_unit_open("epsilon", epsilon)?;
    check_unit_open("delta", delta)?;
    if s == 0 {
        return Err(invalid("s must be positive"));
    }
    finite(
        PlanKind::D,
        epsilon,
        delta,
        s,
        geometric_first_bound(epsilon, delta, s),
        geometric_final_bound(epsilon, delta, s),
    )
}

/// Unbounded schedule `m_ℓ = max(⌈m1·ratio^(ℓ-1)⌉, m_(ℓ-1) + 1)` with
/// budgets `δ_ℓ = δ(1-q)q^(ℓ-1)`. Stages are generated until the first one
/// at or beyond `cap · SCAN_WINDOW`, so every stage a rule can consult before
/// the cap is present.
pub fn plan_unbounded(delta: f64, m1: u64, ratio: f64, decay: f64, cap: u64) -> Result<StageSchedule> {
    check_unit_open("delta", delta)?;
    if m1 == 0 {
        return Err(invalid("m1 must be positive"));
    }
    if !(ratio > 1.0) || !ratio.is_finite() {
        return Err(invalid(format!("ratio = {ratio} must exceed 1")));
    }
    check_unit_open("decay", decay)?;
    if cap == 0 {
        return Err(invalid("cap must be positive"));
    }
    let horizon = cap.saturating_mul(SCAN_WINDOW).max(m1);
    let mut stages = Vec::new();
    let mut budgets = Vec::new();
    let mut real = m1 as f64;
    let mut prev = 0u64;
    let mut l = 0i32;
    loop {
        let m = (real.ceil() as u64).max(prev + 1);
        stages.push(m);
        budgets.push(budget_at(delta, decay, l as usize + 1));
        if m >= horizon {
            break;
        }
        prev = m;
        real *= ratio;
        l += 1;
    }
    Ok(StageSchedule {
        epsilon: None,
        delta,
        s: None,
        rule: PlanKind::Unbounded,
        stages,
        budgets,
        check_set: CheckSet::StageOnly,
        growth: Some(Growth { m1, ratio, decay, cap }),
    })
}

/// `ln δ_ℓ` for `δ_ℓ = δ(1-q)q^(ℓ-1)`, exact even when `δ_ℓ` underflows.
pub fn ln_budget_at(delta: f64, decay: f64, l: usize) -> f64 {
    delta.ln() + (-decay).ln_1p() + (l as f64 - 1.0) * decay.ln()
}

fn budget_at(delta: f64, decay: f64, l: usize) -> f64 {
    ln_budget_at(delta, decay, l).exp()
}

impl StageSchedule {
    pub fn with_check_set(mut self, check_set: CheckSet) -> Self {
        self.check_set = check_set;
        self
    }

    pub fn is_unbounded(&self) -> bool {
        self.growth.is_some()
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    pub fn final_stage(&self) -> u64 {
        *self.stages.last().expect("validated schedules are non-empty")
    }

    /// True when interpolation produced fewer distinct stages than `s`.
    pub fn collapsed(&self) -> bool {
        matches!(self.s, Some(s) if self.stages.len() < s)
    }

    /// Right-hand side `(1/m_ℓ) ln(budget)` of the stopping inequality at
    /// zero-based stage index `idx`: `ln(δ/(2s))` for finite schedules and
    /// `ln(δ_ℓ/2)` for unbounded ones.
    pub fn threshold(&self, idx: usize) -> f64 {
        let m = self.stages[idx] as f64;
        let ln_b = match (&self.growth, self.s) {
            (Some(g), _) => ln_budget_at(self.delta, g.decay, idx + 1) - std::f64::consts::LN_2,
            (None, Some(s)) => (self.delta / (2.0 * s as f64)).ln(),
            (None, None) => unreachable!("finite schedules always carry s"),
        };
        ln_b / m
    }

    pub fn in_check_set(&self, n: u64) -> bool {
        match self.check_set {
            CheckSet::All => true,
            CheckSet::EveryK(k) => (k > 0 && n.is_multiple_of(k)) || self.stages.binary_search(&n).is_ok(),
            CheckSet::StageOnly => self.stages.binary_search(&n).is_ok(),
        }
    }

    /// Safety cap on observations, if any.
    pub fn cap(&self) -> Option<u64> {
        self.growth.map(|g| g.cap)
    }

    /// Re-derives every structural and rule-specific constraint.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSchedule(m));
        if self.stages.is_empty() {
            return bad("no stages".into());
        }
        if self.stages[0] == 0 {
            return bad("stage sizes must be positive".into());
        }
        if self.stages.windows(2).any(|w| w[0] >= w[1]) {
            return bad("stage sizes must be strictly increasing".into());
        }
        if self.budgets.len() != self.stages.len() {
            return bad("one budget per stage required".into());
        }
        if let CheckSet::EveryK(0) = self.check_set {
            return bad("check interval k must be positive".into());
        }
        check_unit_open("delta", self.delta)?;
        match self.rule {
            PlanKind::Unbounded => {
                let g = match self.growth {
                    Some(g) => g,
                    None => return bad("unbounded schedule without growth parameters".into()),
                };
                let total: f64 = self.budgets.iter().sum();
                if total > self.delta * (1.0 + 1e-12) {
                    return bad(format!("budgets sum to {total} > delta"));
                }
                if !(g.ratio > 1.0) || !(g.decay > 0.0 && g.decay < 1.0) {
                    return bad("growth ratio must exceed 1 and decay lie in (0, 1)".into());
                }
            }
            kind => {
                let (eps, s) = match (self.epsilon, self.s) {
                    (Some(e), Some(s)) if s > 0 => (e, s),
                    _ => return bad("finite schedule needs epsilon and s".into()),
                };
                if self.stages.len() > s {
                    return bad(format!("{} stages exceed s = {s}", self.stages.len()));
                }
                let need = match kind {
                    PlanKind::D => geometric_final_bound(eps, self.delta, s),
                    _ => bounded_abs_final_bound(eps, self.delta, s),
                };
                if (self.final_stage() as f64) < need {
                    return bad(format!("final stage {} below required {need}", self.final_stage()));
                }
                let uniform = self.delta / (2.0 * s as f64);
                if self.budgets.iter().any(|&b| (b - uniform).abs() > 1e-15 * uniform.max(1.0)) {
                    return bad("finite schedules use the uniform budget delta/(2s)".into());
                }
            }
        }
        Ok(())
    }

    /// Finite schedule on caller-chosen stage sizes, validated against the
    /// rule's final-stage bound.
    pub fn custom(kind: PlanKind, epsilon: f64, delta: f64, stages: Vec<u64>) -> Result<Self> {
        if kind == PlanKind::Unbounded {
            return Err(invalid("custom stage lists are finite"));
        }
        let s = stages.len();
        let sched = StageSchedule {
            epsilon: Some(epsilon),
            delta,
            s: Some(s),
            rule: kind,
            budgets: vec![delta / (2.0 * s.max(1) as f64); s],
            stages,
            check_set: CheckSet::StageOnly,
            growth: None,
        };
        sched.validate()?;
        Ok(sched)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schedule serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let sched: StageSchedule =
            serde_json::from_str(text).map_err(|e| invalid(format!("schedule JSON: {e}")))?;
        sched.validate()?;
        Ok(sched)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_a_plan_matches_closed_forms() {
        let p = plan_bounded_abs(0.1, 0.05, 5, PlanKind::A).unwrap();
        assert_eq!(p.stages[0], 51);
        assert_eq!(p.final_stage(), 265);
        assert_eq!(p.stages.len(), 5);
        assert!((p.budgets[0] - 0.005).abs() < 1e-15);
        p.validate().unwrap();
    }

    #[test]
    fn rule_b_first_stage() {
        let p = plan_bounded_abs(0.1, 0.05, 5, PlanKind::B).unwrap();
        assert_eq!(p.stages[0], 66);
        assert_eq!(p.final_stage(), 265);
    }

    #[test]
    fn single_stage_plans() {
        let p = plan_bounded_abs(0.1, 0.05, 1, PlanKind::A).unwrap();
        assert_eq!(p.stages, vec![185]);
        let g = plan_geometric_mean(0.1, 0.05, 1).unwrap();
        assert_eq!(g.stages, vec![839]);
    }

    #[test]
    fn geometric_plan_matches_closed_forms() {
        let p = plan_geometric_mean(0.1, 0.05, 5).unwrap();
        assert_eq!(p.stages[0], 56);
        assert_eq!(p.final_stage(), 1204);
        p.validate().unwrap();
        assert!(plan_geometric_mean(1.0, 0.05, 5).is_err());
    }

    #[test]
    fn bounded_plan_rejects_large_epsilon() {
        assert!(plan_bounded_abs(0.5, 0.05, 5, PlanKind::A).is_err());
        assert!(plan_bounded_abs(0.1, 1.0, 5, PlanKind::A).is_err());
        assert!(plan_bounded_abs(0.1, 0.05, 0, PlanKind::A).is_err());
    }

    #[test]
    fn many_stages_collapse_without_error() {
        let p = plan_bounded_abs(0.1, 0.05, 400, PlanKind::A).unwrap();
        assert!(p.collapsed());
        assert_eq!(p.s, Some(400));
        p.validate().unwrap();
        assert!(p.stages.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn interpolation_tracks_the_geometric_sequence() {
        let p = plan_bounded_abs(0.05, 0.01, 8, PlanKind::A).unwrap();
        let m1 = p.stages[0] as f64;
        let ms = p.final_stage() as f64;
        for (l, &m) in p.stages.iter().enumerate() {
            let real = m1 * (ms / m1).powf(l as f64 / 7.0);
            assert!(m as f64 >= real - 1e-6 && (m as f64) < real + 1.0, "{l}: {m} vs {real}");
        }
    }

    #[test]
    fn unbounded_generator() {
        let p = plan_unbounded(0.05, 50, 2.0, 0.5, 1000).unwrap();
        assert_eq!(&p.stages[..3], &[50, 100, 200]);
        assert!((p.budgets[0] - 0.025).abs() < 1e-15);
        assert!((p.budgets[1] - 0.0125).abs() < 1e-15);
        assert!(*p.stages.last().unwrap() >= 1000 * SCAN_WINDOW);
        let first20: f64 = (1..=20).map(|l| budget_at(0.05, 0.5, l)).sum();
        assert!(first20 <= 0.05);
        let r = |l: usize| ln_budget_at(0.05, 0.5, l) / p.stages[l - 1] as f64;
        assert!(r(10).abs() < r(1).abs());
        p.validate().unwrap();
        assert!(plan_unbounded(0.05, 50, 1.0, 0.5, 1000).is_err());
    }

    #[test]
    fn unbounded_slow_growth_stays_strict() {
        let p = plan_unbounded(0.05, 1, 1.05, 0.5, 100).unwrap();
        assert!(p.stages.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(&p.stages[..3], &[1, 2, 3]);
    }

    #[test]
    fn thresholds() {
        let p = plan_bounded_abs(0.1, 0.05, 5, PlanKind::A).unwrap();
        assert!((p.threshold(0) - 0.005f64.ln() / 51.0).abs() < 1e-15);
        let u = plan_unbounded(0.05, 50, 2.0, 0.5, 1000).unwrap();
        assert!((u.threshold(1) - (0.0125f64 / 2.0).ln() / 100.0).abs() < 1e-15);
    }

    #[test]
    fn check_set_policies() {
        let p = plan_bounded_abs(0.1, 0.05, 5, PlanKind::A).unwrap();
        assert!(p.in_check_set(51) && !p.in_check_set(52));
        let e = p.clone().with_check_set(CheckSet::EveryK(10));
        assert!(e.in_check_set(60) && e.in_check_set(51) && !e.in_check_set(61));
        assert!(p.with_check_set(CheckSet::All).in_check_set(52));
    }

    #[test]
    fn json_round_trip() {
        let p = plan_bounded_abs(0.1, 0.05, 5, PlanKind::B).unwrap();
        assert_eq!(StageSchedule::from_json(&p.to_json()).unwrap(), p);
        let u = plan_unbounded(0.05, 10, 1.5, 0.5, 1000).unwrap();
        assert_eq!(StageSchedule::from_json(&u.to_json()).unwrap(), u);
    }

    #[test]
    fn custom_schedule_checks_final_bound() {
        assert!(StageSchedule::custom(PlanKind::A, 0.1, 0.05, vec![50, 100, 150]).is_err());
        assert!(StageSchedule::custom(PlanKind::A, 0.1, 0.05, vec![100, 50, 300]).is_err());
        let ok = StageSchedule::custom(PlanKind::A, 0.1, 0.05, vec![100, 200, 300]).unwrap();
        assert_eq!(ok.s, Some(3));
    }
}

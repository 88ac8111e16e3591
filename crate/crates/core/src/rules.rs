//! Streaming stopping rules.
//!
//! | rule | target              | error    | kernel | schedule  |
//! |------|---------------------|----------|--------|-----------|
//! | A    | bounded mean        | absolute | `mb`   | finite    |
//! | B    | bounded mean        | absolute | Massart closed form | finite |
//! | C    | bounded mean        | relative | `mb`   | unbounded |
//! | D    | geometric mean      | relative | `mg`   | finite    |
//! | E    | Poisson mean        | absolute | `mp`   | unbounded |
//! | F    | Poisson mean        | relative | `mp`   | unbounded |
//!
//! At every sample size in the check set each stage `ℓ` is tried in
//! ascending order with `r = n / max(n, m_ℓ)`; the first stage whose
//! inequality holds stops sampling.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kernels::{mb, mg, mp, ExtReal};
use crate::schedules::{StageSchedule, SCAN_WINDOW};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Rule {
    A,
    B,
    C,
    D,
    E,
    F,
}

/// Values an observation may take.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Support {
    /// `[0, 1]`
    Unit,
    /// `{1, 2, ...}`
    PositiveIntegers,
    /// `{0, 1, ...}`
    NonNegativeIntegers,
}

impl Support {
    pub fn name(self) -> &'static str {
        match self {
            Support::Unit => "[0, 1]",
            Support::PositiveIntegers => "{1, 2, ...}",
            Support::NonNegativeIntegers => "{0, 1, ...}",
        }
    }

    pub fn contains(self, x: f64) -> bool {
        match self {
            Support::Unit => (0.0..=1.0).contains(&x),
            Support::PositiveIntegers => x >= 1.0 && x.is_finite() && x.fract() == 0.0,
            Support::NonNegativeIntegers => x >= 0.0 && x.is_finite() && x.fract() == 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorKind {
    Absolute,
    Relative,
}

impl Rule {
    pub const ALL: [Rule; 6] = [Rule::A, Rule::B, Rule::C, Rule::D, Rule::E, Rule::F];

    pub fn support(self) -> Support {
        match self {
            Rule::A | Rule::B | Rule::C => Support::Unit,
            Rule::D => Support::PositiveIntegers,
            Rule::E | Rule::F => Support::NonNegativeIntegers,
        }
    }

    pub fn error_kind(self) -> ErrorKind {
        match self {
            Rule::A | Rule::B | Rule::E => ErrorKind::Absolute,
            Rule::C | Rule::D | Rule::F => ErrorKind::Relative,
        }
    }

    /// Rules C, E and F run on an infinite stage sequence.
    pub fn is_unbounded(self) -> bool {
        matches!(self, Rule::C | Rule::E | Rule::F)
    }

    /// Admissible margins: `(0, ½)` for A and B, `(0, 1)` for C, D and F,
    /// any positive value for E.
    pub fn check_epsilon(self, epsilon: f64) -> Result<()> {
        let ok = match self {
            Rule::A | Rule::B => epsilon > 0.0 && epsilon < 0.5,
            Rule::C | Rule::D | Rule::F => epsilon > 0.0 && epsilon < 1.0,
            Rule::E => epsilon > 0.0 && epsilon.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("epsilon = {epsilon} outside the range allowed by rule {self}")))
        }
    }

    /// Whether the guarantee this rule gives about `estimate` holds for the
    /// true parameter `truth`.
    pub fn claim_holds(self, estimate: f64, truth: f64, epsilon: f64) -> bool {
        match self {
            Rule::A | Rule::B | Rule::E => (estimate - truth).abs() < epsilon,
            Rule::C | Rule::F => (estimate - truth).abs() < epsilon * truth,
            Rule::D => (1.0 - epsilon) * estimate < truth && truth < (1.0 + epsilon) * estimate,
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Rule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(Rule::A),
            "B" => Ok(Rule::B),
            "C" => Ok(Rule::C),
            "D" => Ok(Rule::D),
            "E" => Ok(Rule::E),
            "F" => Ok(Rule::F),
            other => Err(invalid(format!("unknown rule {other:?}"))),
        }
    }
}

/// Count, sum and sum of squares of the observations seen so far.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RunningSample {
    pub n: u64,
    pub sum: f64,
    pub sum_sq: f64,
}

impl RunningSample {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `x` after checking it against `support`.
    pub fn feed(&mut self, x: f64, support: Support) -> Result<()> {
        if !support.contains(x) {
            return Err(Error::OutOfSupport { value: x, support: support.name() });
        }
        self.n += 1;
        self.sum += x;
        self.sum_sq += x * x;
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.sum / self.n as f64
        }
    }

    /// Biased sample variance `Σ(x - x̄)²/n`, clamped at zero.
    pub fn var(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        let m = self.mean();
        (self.sum_sq / self.n as f64 - m * m).max(0.0)
    }
}

/// Sample mean kept inside the support despite summation rounding.
fn clamped_mean(sample: &RunningSample, support: Support) -> f64 {
    let m = sample.mean();
    match support {
        Support::Unit => m.clamp(0.0, 1.0),
        Support::PositiveIntegers => m.max(1.0),
        Support::NonNegativeIntegers => m.max(0.0),
    }
}

/// Stopping inequality of `rule` for one stage of size `m` with right-hand
/// side `threshold = (1/m) ln(budget)`.
pub fn stage_condition(rule: Rule, n: u64, mean: f64, m: u64, threshold: f64, epsilon: f64) -> bool {
    let r = n as f64 / n.max(m) as f64;
    let le = |v: Result<ExtReal>| v.map(|v| v.le(threshold)).unwrap_or(false);
    match rule {
        Rule::A => {
            let y = 0.5 - (0.5 - mean).abs();
            le(mb(y + (epsilon - r * epsilon), y + epsilon))
        }
        Rule::B => {
            let ln_2s_over_delta = -threshold * m as f64;
            let lhs = ((mean - 0.5).abs() - epsilon + r * epsilon / 3.0).powi(2);
            let rhs = 0.25 - r * r * m as f64 * epsilon * epsilon / (2.0 * ln_2s_over_delta);
            lhs >= rhs
        }
        Rule::C => {
            if mean <= 0.0 {
                return false;
            }
            let theta = mean / (1.0 + epsilon);
            le(mb((theta * (1.0 + r * epsilon)).min(1.0), theta))
        }
        Rule::D => le(mg((1.0 + epsilon - r * epsilon) * mean, (1.0 + epsilon) * mean)),
        Rule::E => le(mp(mean + (epsilon - r * epsilon), mean + epsilon)),
        Rule::F => {
            if mean <= 0.0 {
                return false;
            }
            let theta = mean / (1.0 + epsilon);
            le(mp(theta * (1.0 + r * epsilon), theta))
        }
    }
}

/// Outcome of evaluating a rule at one sample size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Check {
    /// Smallest triggering stage, zero-based.
    pub stage: Option<usize>,
    /// An unbounded scan stopped at its window while the next stage would
    /// have triggered.
    pub truncated: bool,
}

/// Evaluates `rule` on `sample` over the stages of `schedule`. Unbounded
/// schedules are scanned up to the first stage with `m_ℓ ≥ n·SCAN_WINDOW`.
pub fn check_rule(rule: Rule, sample: &RunningSample, schedule: &StageSchedule, epsilon: f64) -> Check {
    let n = sample.n;
    if n == 0 {
        return Check::default();
    }
    let mean = clamped_mean(sample, rule.support());
    let window = n.saturating_mul(SCAN_WINDOW);
    let bounded = !schedule.is_unbounded();
    for (idx, &m) in schedule.stages.iter().enumerate() {
        if stage_condition(rule, n, mean, m, schedule.threshold(idx), epsilon) {
            return Check { stage: Some(idx), truncated: false };
        }
        if !bounded && m >= window {
            let truncated = schedule
                .stages
                .get(idx + 1)
                .is_some_and(|&next| stage_condition(rule, n, mean, next, schedule.threshold(idx + 1), epsilon));
            return Check { stage: None, truncated };
        }
    }
    Check::default()
}

pub fn check_rule_a(sample: &RunningSample, schedule: &StageSchedule, epsilon: f64) -> bool {
    check_rule(Rule::A, sample, schedule, epsilon).stage.is_some()
}

pub fn check_rule_b(sample: &RunningSample, schedule: &StageSchedule, epsilon: f64) -> bool {
    check_rule(Rule::B, sample, schedule, epsilon).stage.is_some()
}

pub fn check_rule_c(sample: &RunningSample, schedule: &StageSchedule, epsilon: f64) -> bool {
    check_rule(Rule::C, sample, schedule, epsilon).stage.is_some()
}

pub fn check_rule_d(sample: &RunningSample, schedule: &StageSchedule, epsilon: f64) -> bool {
    check_rule(Rule::D, sample, schedule, epsilon).stage.is_some()
}

pub fn check_rule_e(sample: &RunningSample, schedule: &StageSchedule, epsilon: f64) -> bool {
    check_rule(Rule::E, sample, schedule, epsilon).stage.is_some()
}

pub fn check_rule_f(sample: &RunningSample, schedule: &StageSchedule, epsilon: f64) -> bool {
    check_rule(Rule::F, sample, schedule, epsilon).stage.is_some()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopStatus {
    Stopped,
    Continue,
    CapReached,
    StreamExhausted,
    /// A finite schedule ran past its last stage without the condition
    /// holding. Planned schedules never get here.
    ScheduleExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopDecision {
    pub status: StopStatus,
    pub n: u64,
    /// One-based triggering stage.
    pub stage: Option<usize>,
    pub estimate: f64,
    pub rule: Rule,
    pub epsilon: f64,
    pub delta: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub scan_truncated: bool,
}

/// Streaming engine for one rule on one stream.
#[derive(Debug, Clone)]
pub struct Engine {
    rule: Rule,
    epsilon: f64,
    schedule: StageSchedule,
    sample: RunningSample,
    truncated: bool,
    done: Option<StopDecision>,
}

impl Engine {
    pub fn new(rule: Rule, epsilon: f64, schedule: StageSchedule) -> Result<Self> {
        rule.check_epsilon(epsilon)?;
        schedule.validate()?;
        if rule.is_unbounded() != schedule.is_unbounded() {
            return Err(invalid(format!(
                "rule {rule} needs a {} schedule",
                if rule.is_unbounded() { "unbounded" } else { "finite" }
            )));
        }
        Ok(Engine { rule, epsilon, schedule, sample: RunningSample::new(), truncated: false, done: None })
    }

    pub fn sample(&self) -> &RunningSample {
        &self.sample
    }

    pub fn schedule(&self) -> &StageSchedule {
        &self.schedule
    }

    fn decision(&self, status: StopStatus, stage: Option<usize>) -> StopDecision {
        StopDecision {
            status,
            n: self.sample.n,
            stage: stage.map(|i| i + 1),
            estimate: clamped_mean(&self.sample, self.rule.support()),
            rule: self.rule,
            epsilon: self.epsilon,
            delta: self.schedule.delta,
            scan_truncated: self.truncated,
        }
    }

    /// Feeds one observation. Returns the terminal decision once sampling
    /// ends; further observations are ignored.
    pub fn push(&mut self, x: f64) -> Result<Option<StopDecision>> {
        if let Some(d) = &self.done {
            return Ok(Some(d.clone()));
        }
        self.sample.feed(x, self.rule.support())?;
        let n = self.sample.n;
        if self.schedule.in_check_set(n) {
            let check = check_rule(self.rule, &self.sample, &self.schedule, self.epsilon);
            self.truncated |= check.truncated;
            if check.stage.is_some() {
                self.done = Some(self.decision(StopStatus::Stopped, check.stage));
            }
        }
        if self.done.is_none() {
            if let Some(cap) = self.schedule.cap() {
                if n >= cap {
                    self.done = Some(self.decision(StopStatus::CapReached, None));
                }
            } else if n >= self.schedule.final_stage() {
                self.done = Some(self.decision(StopStatus::ScheduleExhausted, None));
            }
        }
        Ok(self.done.clone())
    }

    /// Decision for a stream that ended before the rule stopped.
    pub fn finish(&self) -> StopDecision {
        self.done.clone().unwrap_or_else(|| self.decision(StopStatus::StreamExhausted, None))
    }
}

/// Runs `rule` over `stream` until it stops, hits the cap, or the stream ends.
pub fn run_to_stop<I>(stream: I, rule: Rule, schedule: &StageSchedule, epsilon: f64) -> Result<StopDecision>
where
    I: IntoIterator<Item = f64>,
{
    let mut engine = Engine::new(rule, epsilon, schedule.clone())?;
    for x in stream {
        if let Some(d) = engine.push(x)? {
            return Ok(d);
        }
    }
    Ok(engine.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedules::{plan_bounded_abs, plan_geometric_mean, plan_unbounded, PlanKind};

    fn plan_a() -> StageSchedule {
        plan_bounded_abs(0.1, 0.05, 5, PlanKind::A).unwrap()
    }

    fn sample_of(xs: &[f64]) -> RunningSample {
        let mut s = RunningSample::new();
        for &x in xs {
            s.feed(x, Support::Unit).unwrap();
        }
        s
    }

    #[test]
    fn running_sample_arithmetic() {
        let s = sample_of(&[0.5]);
        assert_eq!((s.n, s.mean()), (1, 0.5));
        let s = sample_of(&[0.0, 1.0, 1.0]);
        assert!((s.mean() - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.var() - 2.0 / 9.0).abs() < 1e-15);
        let mut s = RunningSample::new();
        assert!(matches!(s.feed(2.0, Support::Unit), Err(Error::OutOfSupport { .. })));
        assert!(s.feed(0.5, Support::PositiveIntegers).is_err());
        assert!(s.feed(0.0, Support::PositiveIntegers).is_err());
        assert!(s.feed(f64::NAN, Support::Unit).is_err());
        assert_eq!(s.n, 0);
    }

    #[test]
    fn rule_a_does_not_stop_after_one_observation() {
        let s = sample_of(&[0.5]);
        assert!(!check_rule_a(&s, &plan_a(), 0.1));
    }

    #[test]
    fn finite_rules_stop_by_the_last_stage() {
        let p = plan_a();
        for k in 0..=265 {
            let s = RunningSample { n: 265, sum: k as f64, sum_sq: k as f64 };
            assert!(check_rule_a(&s, &p, 0.1), "A, k={k}");
            assert!(check_rule_b(&s, &p, 0.1), "B, k={k}");
        }
        let g = plan_geometric_mean(0.2, 0.05, 5).unwrap();
        let ms = g.final_stage();
        for mean in [1.0, 1.01, 2.0, 5.0, 50.0, 1e4] {
            let s = RunningSample { n: ms, sum: mean * ms as f64, sum_sq: 0.0 };
            assert!(check_rule_d(&s, &g, 0.2), "D, mean={mean}");
        }
    }

    #[test]
    fn constant_ones_stop_at_first_stage() {
        let d = run_to_stop(std::iter::repeat(1.0), Rule::A, &plan_a(), 0.1).unwrap();
        assert_eq!(d.status, StopStatus::Stopped);
        assert_eq!((d.n, d.stage, d.estimate), (51, Some(1), 1.0));
    }

    #[test]
    fn empty_stream_is_exhausted() {
        let d = run_to_stop(std::iter::empty(), Rule::A, &plan_a(), 0.1).unwrap();
        assert_eq!(d.status, StopStatus::StreamExhausted);
        assert_eq!(d.n, 0);
    }

    #[test]
    fn zero_mean_never_stops_relative_rules() {
        let u = plan_unbounded(0.05, 10, 2.0, 0.5, 5000).unwrap();
        let s = RunningSample { n: 4000, sum: 0.0, sum_sq: 0.0 };
        assert!(!check_rule_c(&s, &u, 0.2));
        assert!(!check_rule_f(&s, &u, 0.2));
        let d = run_to_stop(std::iter::repeat(0.0), Rule::F, &u, 0.2).unwrap();
        assert_eq!((d.status, d.n), (StopStatus::CapReached, 5000));
    }

    #[test]
    fn rule_c_reference_decision() {
        // Direct evaluation over ℓ = 1..24 with m_ℓ = 50·2^(ℓ-1) and
        // δ_ℓ = 0.05·2^-ℓ. At n = 200 the kernel is -0.0140854 at every
        // stage with m_ℓ <= n and every threshold is below it; at n = 2000
        // stage 5 (threshold -0.0089433) is the first to trigger.
        let u = plan_unbounded(0.05, 50, 2.0, 0.5, 1_000_000).unwrap();
        let s = RunningSample { n: 200, sum: 100.0, sum_sq: 100.0 };
        assert!(!check_rule_c(&s, &u, 0.2));
        let s = RunningSample { n: 2000, sum: 1000.0, sum_sq: 1000.0 };
        assert_eq!(check_rule(Rule::C, &s, &u, 0.2).stage, Some(4));
    }

    #[test]
    fn rule_e_at_zero_mean() {
        // mp(ε - rε, ε) with n = m_1 = 20: mp(0, 0.5) = -0.5 <= ln(0.0125)/20 = -0.219
        let u = plan_unbounded(0.05, 20, 2.0, 0.5, 10_000).unwrap();
        let s = RunningSample { n: 20, sum: 0.0, sum_sq: 0.0 };
        let c = check_rule(Rule::E, &s, &u, 0.5);
        assert_eq!(c.stage, Some(0));
        let s = RunningSample { n: 5, sum: 0.0, sum_sq: 0.0 };
        assert!(!check_rule_e(&s, &u, 0.5));
    }

    #[test]
    fn rule_d_at_unit_mean_uses_log_branch() {
        let g = plan_geometric_mean(0.2, 0.05, 5).unwrap();
        let m1 = g.stages[0];
        let s = RunningSample { n: m1, sum: m1 as f64, sum_sq: m1 as f64 };
        // mg(1, 1.2) = -ln 1.2 compared against ln(0.005)/m1
        let expect = -(1.2f64.ln()) <= g.threshold(0);
        assert_eq!(stage_condition(Rule::D, m1, 1.0, m1, g.threshold(0), 0.2), expect);
        assert!(check_rule_d(&s, &g, 0.2));
    }

    #[test]
    fn engine_rejects_mismatched_schedule() {
        let u = plan_unbounded(0.05, 20, 2.0, 0.5, 10_000).unwrap();
        assert!(Engine::new(Rule::A, 0.1, u).is_err());
        assert!(Engine::new(Rule::E, 0.1, plan_a()).is_err());
        assert!(Engine::new(Rule::A, 0.6, plan_a()).is_err());
    }

    #[test]
    fn engine_reports_out_of_support_data() {
        let mut e = Engine::new(Rule::D, 0.2, plan_geometric_mean(0.2, 0.05, 5).unwrap()).unwrap();
        assert!(e.push(0.0).is_err());
        assert!(e.push(2.0).unwrap().is_none());
    }

    #[test]
    fn claims() {
        assert!(Rule::A.claim_holds(0.55, 0.5, 0.1));
        assert!(!Rule::A.claim_holds(0.625, 0.5, 0.1));
        assert!(Rule::C.claim_holds(0.55, 0.5, 0.2));
        assert!(Rule::D.claim_holds(5.0, 5.5, 0.2));
        assert!(!Rule::D.claim_holds(5.0, 6.0, 0.2));
    }

    #[test]
    fn rule_parsing() {
        assert_eq!("b".parse::<Rule>().unwrap(), Rule::B);
        assert!("G".parse::<Rule>().is_err());
    }
}

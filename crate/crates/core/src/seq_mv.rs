//! Multistage estimator of a bounded mean that uses the variance-aware
//! fixed-sample interval at each stage. Sampling stops at the first stage
//! whose interval `(L_ℓ, U_ℓ)`, built at level `1 - δ/(2s)`, fits inside
//! `[X̄ - ε, X̄ + ε]`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::fixed_ci::{ci_mean, SampleSummary};
use crate::rules::{RunningSample, StopStatus, Support};
use crate::schedules::{plan_bounded_abs, PlanKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MvPlan {
    pub epsilon: f64,
    pub delta: f64,
    pub s: usize,
    pub sizes: Vec<u64>,
}

impl MvPlan {
    /// Confidence parameter handed to each stage interval.
    pub fn stage_delta(&self) -> f64 {
        self.delta / (2.0 * self.s as f64)
    }
}

/// Stage sizes from `⌈ln(2s/δ)/ln(1/(1-ε))⌉` to `⌈ln(2s/δ)/(2ε²)⌉`,
/// geometrically spaced. Requires `ε ∈ (0, ½)`.
pub fn plan_mv(epsilon: f64, delta: f64, s: usize) -> Result<MvPlan> {
    let sched = plan_bounded_abs(epsilon, delta, s, PlanKind::A)?;
    Ok(MvPlan { epsilon, delta, s, sizes: sched.stages })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MvDecision {
    pub status: StopStatus,
    pub n: u64,
    pub stage: Option<usize>,
    pub estimate: f64,
    #[serde(rename = "L")]
    pub lower: Option<f64>,
    #[serde(rename = "U")]
    pub upper: Option<f64>,
    pub stage_sizes: Vec<u64>,
    pub epsilon: f64,
    pub delta: f64,
    /// The last stage was reached without the interval fitting inside the
    /// target band; the estimate is then not covered by the guarantee.
    pub no_inclusion: bool,
}

/// Streaming runner for [`MvPlan`].
#[derive(Debug, Clone)]
pub struct MvEngine {
    plan: MvPlan,
    sample: RunningSample,
    next: usize,
    last: Option<(f64, f64)>,
    done: Option<MvDecision>,
}

impl MvEngine {
    pub fn new(plan: MvPlan) -> Result<Self> {
        if plan.sizes.is_empty() || plan.sizes.windows(2).any(|w| w[0] >= w[1]) || plan.sizes[0] == 0 {
            return Err(invalid("stage sizes must be positive and strictly increasing"));
        }
        if !(plan.epsilon > 0.0 && plan.epsilon < 0.5) || !(plan.delta > 0.0 && plan.delta < 1.0) || plan.s == 0 {
            return Err(invalid("plan needs epsilon in (0, 1/2), delta in (0, 1) and s >= 1"));
        }
        Ok(MvEngine { plan, sample: RunningSample::new(), next: 0, last: None, done: None })
    }

    fn decision(&self, status: StopStatus, stage: Option<usize>, no_inclusion: bool) -> MvDecision {
        MvDecision {
            status,
            n: self.sample.n,
            stage,
            estimate: self.sample.mean().clamp(0.0, 1.0),
            lower: self.last.map(|b| b.0),
            upper: self.last.map(|b| b.1),
            stage_sizes: self.plan.sizes.clone(),
            epsilon: self.plan.epsilon,
            delta: self.plan.delta,
            no_inclusion,
        }
    }

    pub fn push(&mut self, x: f64) -> Result<Option<MvDecision>> {
        if let Some(d) = &self.done {
            return Ok(Some(d.clone()));
        }
        self.sample.feed(x, Support::Unit)?;
        if self.sample.n != self.plan.sizes[self.next] {
            return Ok(None);
        }
        let summary = SampleSummary::from_sample(&self.sample)?;
        let ci = ci_mean(&summary, self.plan.stage_delta())?;
        self.last = Some((ci.lower, ci.upper));
        let eps = self.plan.epsilon;
        let stage = self.next + 1;
        if summary.mean - eps <= ci.lower && ci.lower <= ci.upper && ci.upper <= summary.mean + eps {
            self.done = Some(self.decision(StopStatus::Stopped, Some(stage), false));
        } else if stage == self.plan.sizes.len() {
            self.done = Some(self.decision(StopStatus::ScheduleExhausted, Some(stage), true));
        }
        self.next += 1;
        Ok(self.done.clone())
    }

    pub fn finish(&self) -> MvDecision {
        self.done
            .clone()
            .unwrap_or_else(|| self.decision(StopStatus::StreamExhausted, None, false))
    }
}

pub fn run_mv<I: IntoIterator<Item = f64>>(stream: I, plan: &MvPlan) -> Result<MvDecision> {
    let mut engine = MvEngine::new(plan.clone())?;
    for x in stream {
        if let Some(d) = engine.push(x)? {
            return Ok(d);
        }
    }
    Ok(engine.finish())
}

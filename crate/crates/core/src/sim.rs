//! Seeded observation streams and Monte Carlo coverage experiments.
//!
//! Every stream is driven by a SplitMix64 generator (Steele, Lea and Flood,
//! 2014): a 64-bit counter advanced by `0x9E3779B97F4A7C15` and passed
//! through a fixed mixing function. Replication `r` of an experiment with
//! seed `s` uses seed `s ^ z(r)`, where `z(r)` is the first output of
//! SplitMix64 seeded with `r`. Draws are produced by the `rand_distr`
//! samplers listed on [`DistributionSpec`], so a stream is reproducible from
//! `(seed, distribution)` alone and replications can run in any order.

pub mod oracle;

use std::fmt;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, RngCore, SeedableRng};
use rand_distr::{Bernoulli, Beta, Distribution, Geometric, Poisson};
use rand_xoshiro::SplitMix64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fixed_ci::{ci_mean, SampleSummary};
use crate::rules::{run_to_stop, Rule, StopStatus};
use crate::schedules::StageSchedule;
use crate::seq_mv::{run_mv, MvPlan};

/// Source distribution of a simulated stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DistributionSpec {
    /// `{0, 1}` with `P(1) = p` (`rand_distr::Bernoulli`).
    Bernoulli { p: f64 },
    /// Beta(α, β) on `[0, 1]` (`rand_distr::Beta`).
    ScaledBeta { alpha: f64, beta: f64 },
    /// Finite distribution on `[0, 1]` (`rand::distr::weighted::WeightedIndex`).
    Discrete { support: Vec<f64>, probs: Vec<f64> },
    /// Number of trials up to and including the first success, success
    /// probability `1/mean` (`rand_distr::Geometric` plus one).
    Geometric { mean: f64 },
    /// Poisson with mean `lambda` (`rand_distr::Poisson`).
    Poisson { lambda: f64 },
}

impl DistributionSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            DistributionSpec::Bernoulli { p } => (0.0..=1.0).contains(p),
            DistributionSpec::ScaledBeta { alpha, beta } => {
                *alpha > 0.0 && *beta > 0.0 && alpha.is_finite() && beta.is_finite()
            }
            DistributionSpec::Discrete { support, probs } => {
                !support.is_empty()
                    && support.len() == probs.len()
                    && support.iter().all(|v| (0.0..=1.0).contains(v))
                    && probs.iter().all(|p| *p >= 0.0 && p.is_finite())
                    && (probs.iter().sum::<f64>() - 1.0).abs() <= 1e-12
            }
            DistributionSpec::Geometric { mean } => *mean > 1.0 && mean.is_finite(),
            DistributionSpec::Poisson { lambda } => *lambda > 0.0 && lambda.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("invalid distribution {self}")))
        }
    }

    /// True mean of the distribution.
    pub fn mean(&self) -> f64 {
        match self {
            DistributionSpec::Bernoulli { p } => *p,
            DistributionSpec::ScaledBeta { alpha, beta } => alpha / (alpha + beta),
            DistributionSpec::Discrete { support, probs } => {
                support.iter().zip(probs).map(|(v, p)| v * p).sum()
            }
            DistributionSpec::Geometric { mean } => *mean,
            DistributionSpec::Poisson { lambda } => *lambda,
        }
    }
}

impl fmt::Display for DistributionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DistributionSpec::Bernoulli { p } => write!(f, "bernoulli:{p}"),
            DistributionSpec::ScaledBeta { alpha, beta } => write!(f, "beta:{alpha},{beta}"),
            DistributionSpec::Discrete { support, probs } => {
                let parts: Vec<String> = support.iter().zip(probs).map(|(v, p)| format!("{v}={p}")).collect();
                write!(f, "discrete:{}", parts.join(","))
            }
            DistributionSpec::Geometric { mean } => write!(f, "geometric:{mean}"),
            DistributionSpec::Poisson { lambda } => write!(f, "poisson:{lambda}"),
        }
    }
}

impl FromStr for DistributionSpec {
    type Err = Error;

    /// `bernoulli:P`, `beta:A,B`, `discrete:V=P,V=P,...`, `geometric:MEAN`,
    /// `poisson:LAMBDA`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, args) = s
            .split_once(':')
            .ok_or_else(|| invalid(format!("distribution {s:?} needs the form kind:params")))?;
        let num = |t: &str| -> Result<f64> {
            t.trim().parse::<f64>().map_err(|_| invalid(format!("bad number {t:?} in {s:?}")))
        };
        let spec = match kind.trim().to_ascii_lowercase().as_str() {
            "bernoulli" => DistributionSpec::Bernoulli { p: num(args)? },
            "beta" | "scaled-beta" => {
                let (a, b) = args.split_once(',').ok_or_else(|| invalid("beta needs ALPHA,BETA"))?;
                DistributionSpec::ScaledBeta { alpha: num(a)?, beta: num(b)? }
            }
            "discrete" => {
                let mut support = Vec::new();
                let mut probs = Vec::new();
                for pair in args.split(',') {
                    let (v, p) = pair.split_once('=').ok_or_else(|| invalid("discrete needs V=P pairs"))?;
                    support.push(num(v)?);
                    probs.push(num(p)?);
                }
                DistributionSpec::Discrete { support, probs }
            }
            "geometric" => DistributionSpec::Geometric { mean: num(args)? },
            "poisson" => DistributionSpec::Poisson { lambda: num(args)? },
            other => return Err(invalid(format!("unknown distribution kind {other:?}"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

enum Sampler {
    Bernoulli(Bernoulli),
    Beta(Beta<f64>),
    Discrete(WeightedIndex<f64>, Vec<f64>),
    Geometric(Geometric),
    Poisson(Poisson<f64>),
}

/// Infinite seeded stream of draws from a [`DistributionSpec`].
pub struct Stream {
    rng: SplitMix64,
    sampler: Sampler,
}

impl Stream {
    pub fn new(spec: &DistributionSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let bad = |e: &dyn fmt::Display| invalid(format!("{spec}: {e}"));
        let sampler = match spec {
            DistributionSpec::Bernoulli { p } => Sampler::Bernoulli(Bernoulli::new(*p).map_err(|e| bad(&e))?),
            DistributionSpec::ScaledBeta { alpha, beta } => {
                Sampler::Beta(Beta::new(*alpha, *beta).map_err(|e| bad(&e))?)
            }
            DistributionSpec::Discrete { support, probs } => {
                Sampler::Discrete(WeightedIndex::new(probs).map_err(|e| bad(&e))?, support.clone())
            }
            DistributionSpec::Geometric { mean } => {
                Sampler::Geometric(Geometric::new(1.0 / mean).map_err(|e| bad(&e))?)
            }
            DistributionSpec::Poisson { lambda } => Sampler::Poisson(Poisson::new(*lambda).map_err(|e| bad(&e))?),
        };
        Ok(Stream { rng: SplitMix64::seed_from_u64(seed), sampler })
    }
}

impl Iterator for Stream {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        let rng = &mut self.rng;
        Some(match &self.sampler {
            Sampler::Bernoulli(d) => {
                if rng.sample(d) {
                    1.0
                } else {
                    0.0
                }
            }
            Sampler::Beta(d) => d.sample(rng),
            Sampler::Discrete(d, support) => support[d.sample(rng)],
            Sampler::Geometric(d) => (d.sample(rng) + 1) as f64,
            Sampler::Poisson(d) => d.sample(rng),
        })
    }
}

/// `count` draws from `spec` under `seed`.
pub fn generate(spec: &DistributionSpec, seed: u64, count: usize) -> Result<Vec<f64>> {
    Ok(Stream::new(spec, seed)?.take(count).collect())
}

/// Seed of replication `r` in an experiment seeded with `seed`.
pub fn replication_seed(seed: u64, r: u64) -> u64 {
    seed ^ SplitMix64::seed_from_u64(r).next_u64()
}

/// What a coverage experiment runs on each stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "procedure", rename_all = "kebab-case")]
pub enum Procedure {
    Rule { rule: Rule, epsilon: f64, schedule: StageSchedule },
    Mv { plan: MvPlan },
    FixedCi { n: u64, delta: f64 },
}

/// Result of one replication.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Replication {
    pub index: u64,
    pub n: u64,
    pub estimate: f64,
    pub covered: bool,
    pub cap_hit: bool,
    pub no_inclusion: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub p50: u64,
    pub p90: u64,
    pub p99: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub replications: u64,
    /// Fraction of runs whose claim held; cap hits count as failures.
    pub coverage: Option<f64>,
    pub mean_n: Option<f64>,
    pub n_quantiles: Option<Quantiles>,
    pub max_n: Option<u64>,
    pub cap_hits: u64,
    pub no_inclusion: u64,
    pub seed: u64,
    pub distribution: DistributionSpec,
    pub true_mean: f64,
    pub procedure: Procedure,
}

impl CoverageReport {
    /// Per-replication rows `index,n,estimate,covered`.
    pub fn csv(rows: &[Replication]) -> String {
        let mut out = String::from("index,n,estimate,covered\n");
        for r in rows {
            out.push_str(&format!("{},{},{},{}\n", r.index, r.n, r.estimate, r.covered as u8));
        }
        out
    }
}

fn run_one(procedure: &Procedure, spec: &DistributionSpec, truth: f64, index: u64, seed: u64) -> Result<Replication> {
    let stream = Stream::new(spec, replication_seed(seed, index))?;
    Ok(match procedure {
        Procedure::Rule { rule, epsilon, schedule } => {
            let d = run_to_stop(stream, *rule, schedule, *epsilon)?;
            let stopped = d.status == StopStatus::Stopped;
            Replication {
                index,
                n: d.n,
                estimate: d.estimate,
                covered: stopped && rule.claim_holds(d.estimate, truth, *epsilon),
                cap_hit: d.status == StopStatus::CapReached,
                no_inclusion: false,
            }
        }
        Procedure::Mv { plan } => {
            let d = run_mv(stream, plan)?;
            Replication {
                index,
                n: d.n,
                estimate: d.estimate,
                covered: (d.estimate - truth).abs() < plan.epsilon,
                cap_hit: false,
                no_inclusion: d.no_inclusion,
            }
        }
        Procedure::FixedCi { n, delta } => {
            let xs: Vec<f64> = stream.take(*n as usize).collect();
            let s = SampleSummary::from_observations(&xs)?;
            let ci = ci_mean(&s, *delta)?;
            Replication {
                index,
                n: *n,
                estimate: s.mean,
                covered: ci.contains(truth),
                cap_hit: false,
                no_inclusion: false,
            }
        }
    })
}

fn check_procedure(procedure: &Procedure, spec: &DistributionSpec) -> Result<()> {
    let unit = !matches!(spec, DistributionSpec::Geometric { .. } | DistributionSpec::Poisson { .. });
    let fits = match procedure {
        Procedure::Rule { rule, .. } => match rule {
            Rule::A | Rule::B | Rule::C => unit,
            Rule::D => matches!(spec, DistributionSpec::Geometric { .. }),
            Rule::E | Rule::F => matches!(spec, DistributionSpec::Poisson { .. }),
        },
        Procedure::Mv { .. } => unit,
        Procedure::FixedCi { n, delta } => unit && *n > 0 && *delta > 0.0 && *delta < 1.0,
    };
    if fits {
        Ok(())
    } else {
        Err(invalid(format!("procedure does not apply to {spec}")))
    }
}

/// Runs `reps` independent replications, in parallel on `workers` threads
/// (all cores when `None`). The result does not depend on the worker count.
pub fn coverage_experiment(
    procedure: &Procedure,
    spec: &DistributionSpec,
    reps: u64,
    seed: u64,
    workers: Option<usize>,
) -> Result<(CoverageReport, Vec<Replication>)> {
    spec.validate()?;
    check_procedure(procedure, spec)?;
    let truth = spec.mean();
    let job = || -> Result<Vec<Replication>> {
        (0..reps)
            .into_par_iter()
            .map(|i| run_one(procedure, spec, truth, i, seed))
            .collect()
    };
    let rows = match workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| invalid(format!("thread pool: {e}")))?
            .install(job)?,
        None => job()?,
    };

    let mut ns: Vec<u64> = rows.iter().map(|r| r.n).collect();
    ns.sort_unstable();
    let q = |p: f64| ns[((p * ns.len() as f64).ceil() as usize).clamp(1, ns.len()) - 1];
    let count = rows.len() as f64;
    let report = CoverageReport {
        replications: reps,
        coverage: (!rows.is_empty()).then(|| rows.iter().filter(|r| r.covered).count() as f64 / count),
        mean_n: (!rows.is_empty()).then(|| ns.iter().map(|&n| n as f64).sum::<f64>() / count),
        n_quantiles: (!rows.is_empty()).then(|| Quantiles { p50: q(0.5), p90: q(0.9), p99: q(0.99) }),
        max_n: ns.last().copied(),
        cap_hits: rows.iter().filter(|r| r.cap_hit).count() as u64,
        no_inclusion: rows.iter().filter(|r| r.no_inclusion).count() as u64,
        seed,
        distribution: spec.clone(),
        true_mean: truth,
        procedure: procedure.clone(),
    };
    Ok((report, rows))
}

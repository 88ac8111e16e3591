//! Command-line front end.
//!
//! Exit codes: `0` success, `2` usage or parameter error, `3` data error
//! (unreadable or out-of-support input, or a stream that ended before the
//! rule could stop).

use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::Error;
use crate::fixed_ci::{ci_mean, region_boundary, SampleSummary};
use crate::rules::{Engine, ErrorKind, Rule, RunningSample, StopStatus, Support};
use crate::schedules::{
    plan_bounded_abs, plan_geometric_mean, plan_unbounded, CheckSet, PlanKind, StageSchedule, DEFAULT_CAP,
};
use crate::seq_mv::{plan_mv, MvEngine};
use crate::sim::{coverage_experiment, CoverageReport, DistributionSpec, Procedure};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;

const DEFAULT_DELTA: f64 = 0.05;
const DEFAULT_STAGES: usize = 5;
const DEFAULT_M1: u64 = 10;
const DEFAULT_RATIO: f64 = 1.5;
const DEFAULT_DECAY: f64 = 0.5;

#[derive(Parser, Debug)]
#[command(name = "seqest", version, about = "Sequential and fixed-sample estimation of means")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the stage schedule of a rule as JSON.
    Plan(Settings),
    /// Read observations and stop by a rule; prints the decision.
    Run(Settings),
    /// Monte Carlo coverage experiment.
    Simulate(Settings),
    /// Fixed-sample confidence interval for a mean in [0, 1].
    Ci(Settings),
    /// Boundary of the joint (mean, variance) confidence region as CSV.
    Region(Settings),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum ErrorArg {
    Abs,
    Rel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Json,
    Csv,
}

/// Every option, shared by all subcommands and by the `--config` file.
/// Flags take precedence over the file.
#[derive(Args, Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct Settings {
    /// JSON file with default values for any of the options below.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Stopping rule A-F, `mv` for the variance-aware estimator, or `ci`
    /// (simulate only).
    #[arg(long)]
    rule: Option<String>,
    /// Margin of error.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Error probability.
    #[arg(long)]
    delta: Option<f64>,
    /// Number of stages s of a finite schedule.
    #[arg(long)]
    stages: Option<usize>,
    /// Error type; picks rule A (abs) or C (rel) when --rule is absent.
    #[arg(long, value_enum)]
    error: Option<ErrorArg>,
    /// Schedule JSON as printed by `plan`, used instead of a planned one.
    #[arg(long)]
    schedule: Option<PathBuf>,
    /// Evaluate the stopping condition every k observations as well as at
    /// the stages.
    #[arg(long)]
    check_every: Option<u64>,
    /// Observation file, one decimal per line; `-` for stdin.
    #[arg(long)]
    input: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<u64>,
    /// Safety cap on observations for rules C, E and F.
    #[arg(long)]
    cap: Option<u64>,
    /// First stage size of an unbounded schedule.
    #[arg(long)]
    m1: Option<u64>,
    /// Stage growth ratio of an unbounded schedule.
    #[arg(long)]
    ratio: Option<f64>,
    /// Geometric decay q of the per-stage budgets of an unbounded schedule.
    #[arg(long)]
    decay: Option<f64>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Grid lines per axis for `region`.
    #[arg(long)]
    resolution: Option<usize>,
    /// Worker threads for `simulate` (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Source distribution for `simulate`, e.g. `bernoulli:0.3`, `beta:2,5`,
    /// `discrete:0=0.5,1=0.5`, `geometric:5`, `poisson:4`.
    #[arg(long)]
    dist: Option<String>,
    /// Sample size (summary input for `ci`/`region`, sample size for
    /// `simulate --rule ci`).
    #[arg(long)]
    n: Option<u64>,
    /// Sample mean (summary input).
    #[arg(long)]
    mean: Option<f64>,
    /// Sample variance with divisor n (summary input).
    #[arg(long)]
    var: Option<f64>,
}

macro_rules! fill {
    ($dst:ident, $src:ident, $($f:ident),*) => { $( if $dst.$f.is_none() { $dst.$f = $src.$f; } )* };
}

impl Settings {
    fn with_config(mut self) -> Result<Self, CliError> {
        let Some(path) = self.config.clone() else { return Ok(self) };
        let text = fs::read_to_string(&path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let file: Settings =
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        fill!(
            self, file, rule, epsilon, delta, stages, error, schedule, check_every, input, seed, reps, cap, m1,
            ratio, decay, format, resolution, workers, dist, n, mean, var
        );
        Ok(self)
    }

    fn delta(&self) -> f64 {
        self.delta.unwrap_or(DEFAULT_DELTA)
    }

    fn epsilon(&self) -> Result<f64, CliError> {
        self.epsilon.ok_or_else(|| CliError::Usage("--epsilon is required".into()))
    }

    fn format(&self) -> Format {
        self.format.unwrap_or(Format::Json)
    }
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParameter(_) | Error::InvalidSchedule(_) => CliError::Usage(e.to_string()),
            Error::OutOfSupport { .. } | Error::Domain { .. } => CliError::Data(e.to_string()),
        }
    }
}

enum Target {
    Rule(Rule),
    Mv,
    Ci,
}

fn target(settings: &Settings) -> Result<Target, CliError> {
    let t = match settings.rule.as_deref().map(str::trim) {
        Some(r) if r.eq_ignore_ascii_case("mv") => Target::Mv,
        Some(r) if r.eq_ignore_ascii_case("ci") => Target::Ci,
        Some(r) => Target::Rule(r.parse()?),
        None => match settings.error {
            Some(ErrorArg::Rel) => Target::Rule(Rule::C),
            _ => Target::Rule(Rule::A),
        },
    };
    let kind = match &t {
        Target::Rule(rule) => rule.error_kind(),
        Target::Mv => ErrorKind::Absolute,
        Target::Ci => return Ok(t),
    };
    match (settings.error, kind) {
        (Some(ErrorArg::Abs), ErrorKind::Relative) | (Some(ErrorArg::Rel), ErrorKind::Absolute) => Err(
            CliError::Usage("--error does not match the error type of the chosen rule".into()),
        ),
        _ => Ok(t),
    }
}

fn schedule_for(rule: Rule, settings: &Settings) -> Result<StageSchedule, CliError> {
    let mut sched = if let Some(path) = &settings.schedule {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read schedule {}: {e}", path.display())))?;
        StageSchedule::from_json(&text)?
    } else {
        let delta = settings.delta();
        let s = settings.stages.unwrap_or(DEFAULT_STAGES);
        match rule {
            Rule::A => plan_bounded_abs(settings.epsilon()?, delta, s, PlanKind::A)?,
            Rule::B => plan_bounded_abs(settings.epsilon()?, delta, s, PlanKind::B)?,
            Rule::D => plan_geometric_mean(settings.epsilon()?, delta, s)?,
            Rule::C | Rule::E | Rule::F => plan_unbounded(
                delta,
                settings.m1.unwrap_or(DEFAULT_M1),
                settings.ratio.unwrap_or(DEFAULT_RATIO),
                settings.decay.unwrap_or(DEFAULT_DECAY),
                settings.cap.unwrap_or(DEFAULT_CAP),
            )?,
        }
    };
    match settings.check_every {
        Some(0) => return Err(CliError::Usage("--check-every must be positive".into())),
        Some(1) => sched = sched.with_check_set(CheckSet::All),
        Some(k) => sched = sched.with_check_set(CheckSet::EveryK(k)),
        None => {}
    }
    Ok(sched)
}

/// Rounds to 12 significant digits.
pub fn round12(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.11e}").parse().unwrap_or(x)
}

fn round_json(v: &mut Value) {
    match v {
        Value::Number(num) if num.is_f64() => {
            if let Some(r) = num.as_f64().map(round12).and_then(serde_json::Number::from_f64) {
                *num = r;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_json),
        Value::Object(map) => map.values_mut().for_each(round_json),
        _ => {}
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut v = serde_json::to_value(value).expect("output serialises");
    round_json(&mut v);
    serde_json::to_string_pretty(&v).expect("output serialises")
}

fn csv_num(x: f64) -> String {
    round12(x).to_string()
}

fn csv_opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Lazily parsed observations, one per non-blank line.
fn observations(input: &str) -> Result<Box<dyn Iterator<Item = Result<f64, CliError>>>, CliError> {
    let reader: Box<dyn BufRead> = if input == "-" {
        Box::new(BufReader::new(io::stdin()))
    } else {
        let file = fs::File::open(input).map_err(|e| CliError::Data(format!("cannot open {input}: {e}")))?;
        Box::new(BufReader::new(file))
    };
    Ok(Box::new(reader.lines().enumerate().filter_map(|(i, line)| match line {
        Err(e) => Some(Err(CliError::Data(format!("read error: {e}")))),
        Ok(l) if l.trim().is_empty() => None,
        Ok(l) => Some(
            l.trim()
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| CliError::Data(format!("line {}: {:?} is not a number", i + 1, l.trim()))),
        ),
    })))
}

fn input_path(settings: &Settings) -> &str {
    settings.input.as_deref().unwrap_or("-")
}

struct Output {
    text: String,
    code: i32,
}

type Handler = fn(&Settings) -> Result<Output, CliError>;

fn ok(text: String) -> Result<Output, CliError> {
    Ok(Output { text, code: EXIT_OK })
}

fn cmd_plan(settings: &Settings) -> Result<Output, CliError> {
    match target(settings)? {
        Target::Rule(rule) => ok(to_json(&schedule_for(rule, settings)?)),
        Target::Mv => ok(to_json(&plan_mv(
            settings.epsilon()?,
            settings.delta(),
            settings.stages.unwrap_or(DEFAULT_STAGES),
        )?)),
        Target::Ci => Err(CliError::Usage("`plan` needs a stopping rule".into())),
    }
}

fn cmd_run(settings: &Settings) -> Result<Output, CliError> {
    let stream = observations(input_path(settings))?;
    let format = settings.format();
    match target(settings)? {
        Target::Rule(rule) => {
            let mut engine = Engine::new(rule, settings.epsilon()?, schedule_for(rule, settings)?)?;
            let mut decision = None;
            for x in stream {
                if let Some(d) = engine.push(x?)? {
                    decision = Some(d);
                    break;
                }
            }
            let d = decision.unwrap_or_else(|| engine.finish());
            let text = match format {
                Format::Json => to_json(&d),
                Format::Csv => format!(
                    "status,n,stage,estimate,rule,epsilon,delta\n{},{},{},{},{},{},{}\n",
                    status_name(d.status),
                    d.n,
                    csv_opt(d.stage),
                    csv_num(d.estimate),
                    d.rule,
                    csv_num(d.epsilon),
                    csv_num(d.delta)
                ),
            };
            let code = if d.status == StopStatus::StreamExhausted { EXIT_DATA } else { EXIT_OK };
            Ok(Output { text, code })
        }
        Target::Mv => {
            let plan = plan_mv(settings.epsilon()?, settings.delta(), settings.stages.unwrap_or(DEFAULT_STAGES))?;
            let mut engine = MvEngine::new(plan)?;
            let mut decision = None;
            for x in stream {
                if let Some(d) = engine.push(x?)? {
                    decision = Some(d);
                    break;
                }
            }
            let d = decision.unwrap_or_else(|| engine.finish());
            let text = match format {
                Format::Json => to_json(&d),
                Format::Csv => format!(
                    "status,n,stage,estimate,L,U,no_inclusion\n{},{},{},{},{},{},{}\n",
                    status_name(d.status),
                    d.n,
                    csv_opt(d.stage),
                    csv_num(d.estimate),
                    csv_opt(d.lower.map(round12)),
                    csv_opt(d.upper.map(round12)),
                    d.no_inclusion
                ),
            };
            let code = if d.status == StopStatus::StreamExhausted { EXIT_DATA } else { EXIT_OK };
            Ok(Output { text, code })
        }
        Target::Ci => Err(CliError::Usage("`run` needs a stopping rule or `mv`".into())),
    }
}

fn status_name(s: StopStatus) -> String {
    serde_json::to_value(s).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
}

fn cmd_simulate(settings: &Settings) -> Result<Output, CliError> {
    let dist: DistributionSpec = settings
        .dist
        .as_deref()
        .ok_or_else(|| CliError::Usage("--dist is required".into()))?
        .parse()?;
    let procedure = match target(settings)? {
        Target::Rule(rule) => {
            Procedure::Rule { rule, epsilon: settings.epsilon()?, schedule: schedule_for(rule, settings)? }
        }
        Target::Mv => Procedure::Mv {
            plan: plan_mv(settings.epsilon()?, settings.delta(), settings.stages.unwrap_or(DEFAULT_STAGES))?,
        },
        Target::Ci => Procedure::FixedCi {
            n: settings.n.ok_or_else(|| CliError::Usage("--rule ci needs --n".into()))?,
            delta: settings.delta(),
        },
    };
    if settings.workers == Some(0) {
        return Err(CliError::Usage("--workers must be positive".into()));
    }
    let (report, rows) = coverage_experiment(
        &procedure,
        &dist,
        settings.reps.unwrap_or(1000),
        settings.seed.unwrap_or(0),
        settings.workers,
    )?;
    match settings.format() {
        Format::Json => ok(to_json(&report)),
        Format::Csv => ok(CoverageReport::csv(&rows)),
    }
}

fn summary(settings: &Settings) -> Result<SampleSummary, CliError> {
    match (settings.n, settings.mean, settings.var) {
        (Some(n), Some(mean), Some(var)) if settings.input.is_none() => Ok(SampleSummary::new(n, mean, var)?),
        (None, None, None) => {
            let mut sample = RunningSample::new();
            for x in observations(input_path(settings))? {
                sample.feed(x?, Support::Unit)?;
            }
            if sample.n == 0 {
                return Err(CliError::Data("no observations".into()));
            }
            Ok(SampleSummary::from_sample(&sample)?)
        }
        _ => Err(CliError::Usage("give either --input or all of --n, --mean and --var".into())),
    }
}

fn cmd_ci(settings: &Settings) -> Result<Output, CliError> {
    let ci = ci_mean(&summary(settings)?, settings.delta())?;
    match settings.format() {
        Format::Json => ok(to_json(&ci)),
        Format::Csv => ok(format!(
            "n,mean,var,delta,L,U\n{},{},{},{},{},{}\n",
            ci.n,
            csv_num(ci.mean),
            csv_num(ci.var),
            csv_num(ci.delta),
            csv_num(ci.lower),
            csv_num(ci.upper)
        )),
    }
}

fn cmd_region(settings: &Settings) -> Result<Output, CliError> {
    let region = region_boundary(&summary(settings)?, settings.delta(), settings.resolution.unwrap_or(200))?;
    match settings.format.unwrap_or(Format::Csv) {
        Format::Json => ok(to_json(&region)),
        Format::Csv => {
            let mut out = String::from("curve,nu,theta\n");
            for p in &region.points {
                out.push_str(&format!("{},{},{}\n", p.curve, csv_num(p.nu), csv_num(p.theta)));
            }
            ok(out)
        }
    }
}

/// Parses `args` (including the program name) and runs the subcommand,
/// writing results to `out` and diagnostics to `err`. Returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            let _ = if e.use_stderr() { write!(err, "{rendered}") } else { write!(out, "{rendered}") };
            return code;
        }
    };
    let (settings, handler): (Settings, Handler) = match cli.command {
        Command::Plan(s) => (s, cmd_plan),
        Command::Run(s) => (s, cmd_run),
        Command::Simulate(s) => (s, cmd_simulate),
        Command::Ci(s) => (s, cmd_ci),
        Command::Region(s) => (s, cmd_region),
    };
    match settings.with_config().and_then(|s| handler(&s)) {
        Ok(output) => {
            let _ = write!(out, "{}", output.text);
            if !output.text.ends_with('\n') {
                let _ = writeln!(out);
            }
            output.code
        }
        Err(CliError::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_USAGE
        }
        Err(CliError::Data(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_DATA
        }
    }
}

pub fn main() -> i32 {
    let stdout = io::stdout();
    let stderr = io::stderr();
    run(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock())
}

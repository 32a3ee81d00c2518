//! Run configuration: a flat `key = value` text format with dotted keys.
//!
//! ```text
//! preset = case1-cost1        # optional; seeds every key below
//! problem = case1-cost1
//! mode = optimize
//! kernel = gaussian           # or high-order:4
//! n_iters = 1000000
//! replications = 40
//! base_seed = 1
//! checkpoints = default       # or 1000,10000,100000
//! record_timing = true
//! override_validation = false
//! output = reports/case1      # optional
//! schedule.alpha.C = 1
//! schedule.alpha.n0 = 10000
//! schedule.alpha.e = 1
//! schedule.beta.lambda.1.C = 5
//! ```
//!
//! Schedules are `schedule.<name>.{C,n0,e}` for `alpha`, `beta.nu`,
//! `beta.lambda.<j>`, `gbeta.nu`, `gbeta.lambda.<j>`, `c`, `h` and the
//! optional `h_grad`. `n0` defaults to 0. Later lines override earlier ones.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::algorithm::RunSetup;
use crate::bench::{builtin_target, default_checkpoints, run_replications, BenchmarkResult, Target};
use crate::error::{Error, Result};
use crate::kernels::{boxed_kernel, Smoother};
use crate::problem::{builtin_by_name, ContextualProblem};
use crate::schedules::{validate, Mode, PowerSchedule, ScheduleSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum KernelChoice {
    Gaussian,
    HighOrder(usize),
}

impl fmt::Display for KernelChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelChoice::Gaussian => f.write_str("gaussian"),
            KernelChoice::HighOrder(r) => write!(f, "high-order:{r}"),
        }
    }
}

impl FromStr for KernelChoice {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s == "gaussian" {
            return Ok(KernelChoice::Gaussian);
        }
        s.strip_prefix("high-order:")
            .and_then(|r| r.parse::<usize>().ok())
            .map(KernelChoice::HighOrder)
            .ok_or_else(|| format!("unknown kernel `{s}` (expected gaussian or high-order:<r>)"))
    }
}

impl From<KernelChoice> for String {
    fn from(k: KernelChoice) -> Self {
        k.to_string()
    }
}

impl TryFrom<String> for KernelChoice {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, Self::Error> {
        s.parse()
    }
}

impl KernelChoice {
    pub fn build(&self) -> Result<Box<dyn Smoother>> {
        Ok(boxed_kernel(match self {
            KernelChoice::Gaussian => None,
            KernelChoice::HighOrder(r) => Some(*r),
        })?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub problem: String,
    pub mode: Mode,
    pub kernel: KernelChoice,
    pub schedules: ScheduleSet,
    pub n_iters: u64,
    pub replications: u64,
    pub base_seed: u64,
    /// `None` selects [`default_checkpoints`].
    pub checkpoints: Option<Vec<u64>>,
    pub record_timing: bool,
    pub override_validation: bool,
    pub output: Option<String>,
}

/// Names accepted by [`preset_config`].
pub const PRESETS: &[&str] = &[
    "case1-cost1",
    "case2-cost1",
    "case3-cost1",
    "case1-cost2",
    "case2-cost2",
    "case3-cost2",
    "portfolio",
    "portfolio-measures",
    "portfolio-gradients",
    "portfolio-accelerated",
    "median2d",
];

fn optimize_schedules(
    beta_nu: f64,
    beta_lambda: f64,
    gbeta_nu: f64,
    gbeta_lambda: f64,
    c: f64,
) -> ScheduleSet {
    ScheduleSet {
        alpha: PowerSchedule::new(1.0, 1e4, 1.0),
        beta_nu: PowerSchedule::decay(beta_nu, 0.8),
        beta_lambda: vec![PowerSchedule::decay(beta_lambda, 0.8)],
        beta_g_nu: PowerSchedule::decay(gbeta_nu, 0.8),
        beta_g_lambda: vec![PowerSchedule::decay(gbeta_lambda, 0.8)],
        c: PowerSchedule::decay(c, 0.1),
        h: PowerSchedule::decay(1.0, 0.1),
        h_grad: None,
    }
}

/// Portfolio multipliers with the given exponents for `c`, `h` and the
/// gradient bandwidth.
fn portfolio_schedules(c: f64, h: f64, h_grad: Option<f64>) -> ScheduleSet {
    let small = PowerSchedule::new(3.0, 1.0, 1.0);
    let large = PowerSchedule::new(50.0, 1.0, 1.0);
    ScheduleSet {
        alpha: PowerSchedule::new(1.0, 1.0, 1.0),
        beta_nu: small,
        beta_lambda: vec![small, large],
        beta_g_nu: small,
        beta_g_lambda: vec![small, large],
        c: PowerSchedule::decay(3.0, c),
        h: PowerSchedule::decay(0.08, h),
        h_grad: h_grad.map(|e| PowerSchedule::decay(0.08, e)),
    }
}

/// A named experiment configuration.
pub fn preset_config(name: &str) -> Result<RunConfig> {
    let base = |problem: &str, mode: Mode, kernel: KernelChoice, schedules: ScheduleSet| RunConfig {
        problem: problem.to_string(),
        mode,
        kernel,
        schedules,
        n_iters: 1_000_000,
        replications: 40,
        base_seed: 1,
        checkpoints: None,
        record_timing: true,
        override_validation: false,
        output: None,
    };
    let g = KernelChoice::Gaussian;
    let cfg = match name {
        "case1-cost1" | "case3-cost1" => base(name, Mode::Optimize, g, optimize_schedules(1.0, 1.0, 1.0, 1.0, 4.0)),
        "case2-cost1" => base(name, Mode::Optimize, g, optimize_schedules(1.0, 1.0, 1.0, 1.0, 2.0)),
        "case1-cost2" => base(name, Mode::Optimize, g, optimize_schedules(2.0, 5.0, 2.0, 25.0, 0.5)),
        "case2-cost2" => base(name, Mode::Optimize, g, optimize_schedules(2.0, 5.0, 2.0, 25.0, 1.0)),
        "case3-cost2" => base(name, Mode::Optimize, g, optimize_schedules(2.0, 5.0, 2.0, 25.0, 8.0)),
        "portfolio" => base("portfolio", Mode::Estimate, g, portfolio_schedules(0.125, 0.2, Some(0.125))),
        "portfolio-measures" => base("portfolio", Mode::Estimate, g, portfolio_schedules(0.125, 0.2, None)),
        "portfolio-gradients" => base("portfolio", Mode::Estimate, g, portfolio_schedules(0.125, 0.125, None)),
        "portfolio-accelerated" => base(
            "portfolio",
            Mode::Estimate,
            KernelChoice::HighOrder(4),
            portfolio_schedules(1.0 / 7.0, 1.0 / 9.0, Some(1.0 / 14.0)),
        ),
        "median2d" => {
            let step = PowerSchedule::new(3.0, 1.0, 1.0);
            base(
                "median2d",
                Mode::Estimate,
                g,
                ScheduleSet {
                    alpha: PowerSchedule::new(1.0, 1.0, 1.0),
                    beta_nu: step,
                    beta_lambda: vec![step],
                    beta_g_nu: step,
                    beta_g_lambda: vec![step],
                    c: PowerSchedule::decay(1.0, 0.1),
                    h: PowerSchedule::decay(1.0, 1.0 / 6.0),
                    h_grad: None,
                },
            )
        }
        other => {
            return Err(Error::Config {
                line: 0,
                message: format!("unknown preset `{other}` (known: {})", PRESETS.join(", ")),
            })
        }
    };
    Ok(cfg)
}

fn push_schedule(out: &mut String, name: &str, s: &PowerSchedule) {
    out.push_str(&format!("schedule.{name}.C = {}\n", s.scale));
    out.push_str(&format!("schedule.{name}.n0 = {}\n", s.offset));
    out.push_str(&format!("schedule.{name}.e = {}\n", s.exponent));
}

impl RunConfig {
    /// Canonical text form; [`parse_config`] reads it back unchanged.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("problem = {}\n", self.problem));
        out.push_str(&format!("mode = {}\n", self.mode));
        out.push_str(&format!("kernel = {}\n", self.kernel));
        out.push_str(&format!("n_iters = {}\n", self.n_iters));
        out.push_str(&format!("replications = {}\n", self.replications));
        out.push_str(&format!("base_seed = {}\n", self.base_seed));
        match &self.checkpoints {
            None => out.push_str("checkpoints = default\n"),
            Some(list) => {
                let items: Vec<String> = list.iter().map(u64::to_string).collect();
                out.push_str(&format!("checkpoints = {}\n", items.join(",")));
            }
        }
        out.push_str(&format!("record_timing = {}\n", self.record_timing));
        out.push_str(&format!("override_validation = {}\n", self.override_validation));
        if let Some(path) = &self.output {
            out.push_str(&format!("output = {path}\n"));
        }
        let s = &self.schedules;
        push_schedule(&mut out, "alpha", &s.alpha);
        push_schedule(&mut out, "beta.nu", &s.beta_nu);
        for (j, b) in s.beta_lambda.iter().enumerate() {
            push_schedule(&mut out, &format!("beta.lambda.{}", j + 1), b);
        }
        push_schedule(&mut out, "gbeta.nu", &s.beta_g_nu);
        for (j, b) in s.beta_g_lambda.iter().enumerate() {
            push_schedule(&mut out, &format!("gbeta.lambda.{}", j + 1), b);
        }
        push_schedule(&mut out, "c", &s.c);
        push_schedule(&mut out, "h", &s.h);
        if let Some(hg) = &s.h_grad {
            push_schedule(&mut out, "h_grad", hg);
        }
        out
    }

    /// SHA-256 of the canonical form without the output path.
    pub fn fingerprint(&self) -> String {
        let mut cfg = self.clone();
        cfg.output = None;
        Sha256::digest(cfg.serialize().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn checkpoint_list(&self) -> Vec<u64> {
        self.checkpoints.clone().unwrap_or_else(|| default_checkpoints(self.n_iters))
    }

    /// Schedule violations, as messages.
    pub fn violations(&self) -> Vec<String> {
        validate(&self.schedules, self.mode).iter().map(ToString::to_string).collect()
    }

    pub fn problem(&self) -> Result<ContextualProblem> {
        Ok(builtin_by_name(&self.problem)?)
    }

    pub fn target(&self) -> Result<Target> {
        builtin_target(&self.problem, self.mode)
    }
}

/// Everything needed to build a [`RunSetup`] from a config.
pub struct Prepared {
    pub problem: ContextualProblem,
    pub kernel: Box<dyn Smoother>,
    pub checkpoints: Vec<u64>,
    pub fingerprint: String,
}

impl Prepared {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        Ok(Self {
            problem: cfg.problem()?,
            kernel: cfg.kernel.build()?,
            checkpoints: cfg.checkpoint_list(),
            fingerprint: cfg.fingerprint(),
        })
    }

    pub fn setup<'a>(&'a self, cfg: &'a RunConfig) -> RunSetup<'a> {
        RunSetup {
            problem: &self.problem,
            schedules: &cfg.schedules,
            kernel: self.kernel.as_ref(),
            mode: cfg.mode,
            n_iters: cfg.n_iters,
            checkpoints: &self.checkpoints,
            record_timing: cfg.record_timing,
            fingerprint: Some(self.fingerprint.clone()),
        }
    }
}

/// Runs the configured replications.
pub fn run_benchmark(cfg: &RunConfig) -> Result<(BenchmarkResult, Target)> {
    let prepared = Prepared::new(cfg)?;
    let target = cfg.target()?;
    let result = run_replications(&prepared.setup(cfg), cfg.replications, cfg.base_seed, &target)?;
    Ok((result, target))
}

#[derive(Default)]
struct PartialSchedule {
    scale: Option<f64>,
    offset: Option<f64>,
    exponent: Option<f64>,
}

fn syntax(line: usize, message: impl Into<String>) -> Error {
    Error::Config {
        line,
        message: message.into(),
    }
}

fn parse_value<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse::<T>()
        .map_err(|e| syntax(line, format!("bad value `{value}` for `{key}`: {e}")))
}

/// Parses without checking the schedule conditions.
pub fn parse_config_unchecked(text: &str) -> Result<RunConfig> {
    let mut scalars: BTreeMap<String, (usize, String)> = BTreeMap::new();
    let mut schedules: BTreeMap<String, PartialSchedule> = BTreeMap::new();
    let mut seeded: Option<RunConfig> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| syntax(line, format!("expected `key = value`, got `{content}`")))?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(syntax(line, "empty key"));
        }
        if key == "preset" {
            let mut cfg = preset_config(value).map_err(|e| syntax(line, e.to_string()))?;
            for (k, (_, v)) in &scalars {
                apply_scalar(&mut cfg, k, v, line)?;
            }
            seeded = Some(cfg);
            continue;
        }
        if let Some(rest) = key.strip_prefix("schedule.") {
            let (name, field) = rest
                .rsplit_once('.')
                .ok_or_else(|| syntax(line, format!("schedule key `{key}` needs a field (C, n0 or e)")))?;
            check_schedule_name(name).map_err(|m| syntax(line, m))?;
            let v: f64 = parse_value(line, key, value)?;
            let entry = schedules.entry(name.to_string()).or_default();
            match field {
                "C" => entry.scale = Some(v),
                "n0" => entry.offset = Some(v),
                "e" => entry.exponent = Some(v),
                other => return Err(syntax(line, format!("unknown schedule field `{other}` (expected C, n0 or e)"))),
            }
            continue;
        }
        match key {
            "problem" | "mode" | "kernel" | "n_iters" | "replications" | "base_seed" | "checkpoints"
            | "record_timing" | "override_validation" | "output" => {
                if let Some(cfg) = seeded.as_mut() {
                    apply_scalar(cfg, key, value, line)?;
                }
                scalars.insert(key.to_string(), (line, value.to_string()));
            }
            other => return Err(syntax(line, format!("unknown key `{other}`"))),
        }
    }

    let mut cfg = match seeded {
        Some(cfg) => cfg,
        None => {
            for key in ["problem", "mode", "kernel", "n_iters", "replications", "base_seed"] {
                if !scalars.contains_key(key) {
                    return Err(syntax(0, format!("missing key `{key}`")));
                }
            }
            let mut cfg = RunConfig {
                problem: String::new(),
                mode: Mode::Optimize,
                kernel: KernelChoice::Gaussian,
                schedules: ScheduleSet {
                    alpha: PowerSchedule::constant(0.0),
                    beta_nu: PowerSchedule::constant(0.0),
                    beta_lambda: Vec::new(),
                    beta_g_nu: PowerSchedule::constant(0.0),
                    beta_g_lambda: Vec::new(),
                    c: PowerSchedule::constant(0.0),
                    h: PowerSchedule::constant(0.0),
                    h_grad: None,
                },
                n_iters: 0,
                replications: 0,
                base_seed: 0,
                checkpoints: None,
                record_timing: true,
                override_validation: false,
                output: None,
            };
            for (k, (line, v)) in &scalars {
                apply_scalar(&mut cfg, k, v, *line)?;
            }
            for name in ["alpha", "beta.nu", "gbeta.nu", "c", "h"] {
                if !schedules.contains_key(name) {
                    return Err(syntax(0, format!("missing schedule `{name}`")));
                }
            }
            cfg
        }
    };
    apply_schedules(&mut cfg.schedules, schedules)?;
    Ok(cfg)
}

fn check_schedule_name(name: &str) -> std::result::Result<(), String> {
    let ok = match name {
        "alpha" | "beta.nu" | "gbeta.nu" | "c" | "h" | "h_grad" => true,
        _ => ["beta.lambda.", "gbeta.lambda."].iter().any(|p| {
            name.strip_prefix(p)
                .and_then(|j| j.parse::<usize>().ok())
                .is_some_and(|j| j >= 1)
        }),
    };
    if ok {
        Ok(())
    } else {
        Err(format!("unknown schedule `{name}`"))
    }
}

fn apply_scalar(cfg: &mut RunConfig, key: &str, value: &str, line: usize) -> Result<()> {
    match key {
        "problem" => cfg.problem = value.to_string(),
        "mode" => cfg.mode = parse_value(line, key, value)?,
        "kernel" => cfg.kernel = parse_value(line, key, value)?,
        "n_iters" => cfg.n_iters = parse_value(line, key, value)?,
        "replications" => cfg.replications = parse_value(line, key, value)?,
        "base_seed" => cfg.base_seed = parse_value(line, key, value)?,
        "record_timing" => cfg.record_timing = parse_value(line, key, value)?,
        "override_validation" => cfg.override_validation = parse_value(line, key, value)?,
        "output" => cfg.output = Some(value.to_string()),
        "checkpoints" => {
            cfg.checkpoints = if value == "default" {
                None
            } else {
                let list = value
                    .split(',')
                    .map(|v| parse_value::<u64>(line, key, v.trim()))
                    .collect::<Result<Vec<_>>>()?;
                Some(list)
            }
        }
        _ => unreachable!("keys are filtered by the caller"),
    }
    Ok(())
}

fn merge(target: &mut PowerSchedule, update: &PartialSchedule) {
    if let Some(v) = update.scale {
        target.scale = v;
    }
    if let Some(v) = update.offset {
        target.offset = v;
    }
    if let Some(v) = update.exponent {
        target.exponent = v;
    }
}

fn fresh(update: &PartialSchedule, name: &str) -> Result<PowerSchedule> {
    match (update.scale, update.exponent) {
        (Some(scale), Some(exponent)) => Ok(PowerSchedule::new(scale, update.offset.unwrap_or(0.0), exponent)),
        _ => Err(syntax(0, format!("schedule `{name}` needs both C and e"))),
    }
}

fn apply_schedules(set: &mut ScheduleSet, updates: BTreeMap<String, PartialSchedule>) -> Result<()> {
    let mut lambda: BTreeMap<usize, &PartialSchedule> = BTreeMap::new();
    let mut glambda: BTreeMap<usize, &PartialSchedule> = BTreeMap::new();
    for (name, update) in &updates {
        let slot = match name.as_str() {
            "alpha" => Some(&mut set.alpha),
            "beta.nu" => Some(&mut set.beta_nu),
            "gbeta.nu" => Some(&mut set.beta_g_nu),
            "c" => Some(&mut set.c),
            "h" => Some(&mut set.h),
            "h_grad" => {
                match set.h_grad.as_mut() {
                    Some(hg) => merge(hg, update),
                    None => set.h_grad = Some(fresh(update, name)?),
                }
                None
            }
            other => {
                if let Some(j) = other.strip_prefix("beta.lambda.") {
                    lambda.insert(j.parse().expect("checked"), update);
                } else if let Some(j) = other.strip_prefix("gbeta.lambda.") {
                    glambda.insert(j.parse().expect("checked"), update);
                }
                None
            }
        };
        if let Some(slot) = slot {
            if slot.scale == 0.0 && slot.exponent == 0.0 && slot.offset == 0.0 {
                *slot = fresh(update, name)?;
            } else {
                merge(slot, update);
            }
        }
    }
    for (list, updates, name) in [
        (&mut set.beta_lambda, lambda, "beta.lambda"),
        (&mut set.beta_g_lambda, glambda, "gbeta.lambda"),
    ] {
        for (j, update) in updates {
            if j > list.len() + 1 {
                return Err(syntax(0, format!("schedule `{name}.{j}` skips index {}", list.len() + 1)));
            }
            if j == list.len() + 1 {
                list.push(fresh(update, &format!("{name}.{j}"))?);
            } else {
                merge(&mut list[j - 1], update);
            }
        }
    }
    Ok(())
}

/// Parses and, unless `override_validation` is set, checks the schedule
/// conditions and the problem's measure count.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg = parse_config_unchecked(text)?;
    check_config(&cfg)?;
    Ok(cfg)
}

/// Consistency checks applied by [`parse_config`].
pub fn check_config(cfg: &RunConfig) -> Result<()> {
    let problem = cfg.problem()?;
    let p = problem.measures;
    if cfg.schedules.beta_lambda.len() != p || cfg.schedules.beta_g_lambda.len() != p {
        return Err(syntax(
            0,
            format!(
                "problem `{}` has {p} measures but {} beta.lambda and {} gbeta.lambda schedules are configured",
                cfg.problem,
                cfg.schedules.beta_lambda.len(),
                cfg.schedules.beta_g_lambda.len()
            ),
        ));
    }
    if cfg.n_iters < 1 {
        return Err(Error::NoIterations);
    }
    if !cfg.override_validation {
        let v = cfg.violations();
        if !v.is_empty() {
            return Err(Error::Validation(v));
        }
    }
    Ok(())
}

//! Replications, error statistics, rate fits and reports.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::algorithm::{run_any, Checkpoint, RunSetup, RunTrace};
use crate::error::{Error, Result};
use crate::oracles::{
    cond_expectation_objective, cond_expectation_truth, covar_objective, covar_truth_case, portfolio_truth,
};
use crate::parallel::{map_indexed, map_indexed_sequential};
use crate::problem::{TestCase, TEST_COVAR_PHI, TEST_COVAR_PSI};
use crate::schedules::Mode;
use crate::streams::replication_seed;

/// One scalar read off a checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Component {
    Nu(usize),
    Lambda(usize),
    /// Entry `k` of the gradient of `nu_i`.
    GradNu { i: usize, k: usize },
    /// Entry `k` of the gradient of `lambda_j`.
    GradLambda { j: usize, k: usize },
}

impl Component {
    pub fn read(&self, cp: &Checkpoint) -> f64 {
        match *self {
            Component::Nu(i) => cp.nu[i],
            Component::Lambda(j) => cp.lambda[j],
            Component::GradNu { i, k } => cp.g_nu[i][k],
            Component::GradLambda { j, k } => cp.g_lambda[j][k],
        }
    }

    pub fn label(&self) -> String {
        match *self {
            Component::Nu(i) => format!("nu{}", i + 1),
            Component::Lambda(j) => format!("lambda{}", j + 1),
            Component::GradNu { i, k } => format!("Gnu{}_{}", i + 1, k + 1),
            Component::GradLambda { j, k } => format!("G{}_{}", j + 1, k + 1),
        }
    }
}

pub type Objective = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// What the errors are measured against.
#[derive(Clone)]
pub enum Target {
    /// Relative error of the true objective at `theta_n` against the optimal
    /// value; eRMSE of `theta_n` against the minimizer.
    Optimize {
        objective: Objective,
        theta_star: Vec<f64>,
        cost_star: f64,
    },
    /// Each component against its true value.
    Estimate { components: Vec<(Component, f64)> },
}

impl std::fmt::Debug for Target {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Target::Optimize {
                theta_star, cost_star, ..
            } => f
                .debug_struct("Optimize")
                .field("theta_star", theta_star)
                .field("cost_star", cost_star)
                .finish_non_exhaustive(),
            Target::Estimate { components } => f.debug_struct("Estimate").field("components", components).finish(),
        }
    }
}

/// Per-checkpoint error of one replication for one metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointError {
    pub rel_err: Option<f64>,
    pub sq_err: f64,
}

impl Target {
    pub fn labels(&self) -> Vec<String> {
        match self {
            Target::Optimize { .. } => vec!["objective".into()],
            Target::Estimate { components } => components.iter().map(|(c, _)| c.label()).collect(),
        }
    }

    pub fn truths(&self) -> Vec<f64> {
        match self {
            Target::Optimize { cost_star, .. } => vec![*cost_star],
            Target::Estimate { components } => components.iter().map(|(_, t)| *t).collect(),
        }
    }

    pub fn errors(&self, cp: &Checkpoint) -> Vec<PointError> {
        match self {
            Target::Optimize {
                objective,
                theta_star,
                cost_star,
            } => {
                let value = objective(&cp.theta);
                let sq_err = cp.theta.iter().zip(theta_star).map(|(a, b)| (a - b).powi(2)).sum();
                vec![PointError {
                    rel_err: relative_error(value, *cost_star).ok(),
                    sq_err,
                }]
            }
            Target::Estimate { components } => components
                .iter()
                .map(|(c, truth)| {
                    let est = c.read(cp);
                    PointError {
                        rel_err: relative_error(est, *truth).ok(),
                        sq_err: (est - truth).powi(2),
                    }
                })
                .collect(),
        }
    }
}

/// `(estimate - truth) / |truth|`.
pub fn relative_error(estimate: f64, truth: f64) -> Result<f64> {
    if truth == 0.0 {
        return Err(Error::Stats("relative error undefined for a zero truth; use the absolute error".into()));
    }
    Ok((estimate - truth) / truth.abs())
}

/// Root mean squared distance of the replications from the truth.
pub fn ermse(estimates: &[Vec<f64>], truth: &[f64]) -> Result<f64> {
    if estimates.is_empty() {
        return Err(Error::Stats("no replications".into()));
    }
    let mut total = 0.0;
    for e in estimates {
        if e.len() != truth.len() {
            return Err(Error::Stats(format!(
                "estimate has {} components, truth has {}",
                e.len(),
                truth.len()
            )));
        }
        total += e.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    Ok((total / estimates.len() as f64).sqrt())
}

/// Least-squares line through `(log n, log err)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root mean squared residual on the log scale.
    pub residual: f64,
    pub window: (f64, f64),
    pub points: usize,
}

/// Fits `err ~ n^slope` over the points with `n` inside `window` and positive error.
pub fn fit_rate(points: &[(f64, f64)], window: (f64, f64)) -> Result<RateFit> {
    let used: Vec<(f64, f64)> = points
        .iter()
        .filter(|(n, e)| *n >= window.0 && *n <= window.1 && *e > 0.0 && e.is_finite())
        .map(|(n, e)| (n.ln(), e.ln()))
        .collect();
    if used.len() < 3 {
        return Err(Error::Stats(format!(
            "rate fit needs at least 3 usable points in [{}, {}], got {}",
            window.0,
            window.1,
            used.len()
        )));
    }
    let k = used.len() as f64;
    let mx = used.iter().map(|p| p.0).sum::<f64>() / k;
    let my = used.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = used.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = used.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Stats("rate fit needs distinct iteration counts".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (used
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum::<f64>()
        / k)
        .sqrt();
    Ok(RateFit {
        slope,
        intercept,
        residual,
        window,
        points: used.len(),
    })
}

/// Default rate-fit window.
pub const DEFAULT_FIT_WINDOW: (f64, f64) = (1e4, 1e6);

/// Powers of ten from 10^3 up to `n_iters`, plus 30 log-spaced points over
/// `[1, n_iters]`, plus `n_iters` itself.
pub fn default_checkpoints(n_iters: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut p = 1000u64;
    while p <= n_iters {
        out.push(p);
        p = p.saturating_mul(10);
    }
    if n_iters >= 1 {
        let top = (n_iters as f64).ln();
        for i in 0..30 {
            let v = (top * i as f64 / 29.0).exp().round() as u64;
            out.push(v.clamp(1, n_iters));
        }
        out.push(n_iters);
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// Errors of one metric across checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub label: String,
    pub truth: f64,
    /// Mean signed relative error per checkpoint; `None` when the truth is zero.
    pub rel_err: Vec<Option<f64>>,
    pub ermse: Vec<f64>,
    pub slope: Option<RateFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub traces: Vec<RunTrace>,
    pub checkpoints: Vec<u64>,
    pub metrics: Vec<MetricSeries>,
    /// Mean wall time per checkpoint, in seconds.
    pub act: Vec<f64>,
    pub mode: Mode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    /// Across the rayon pool when the `parallel` feature is on.
    Parallel,
    Sequential,
}

/// Runs `reps` replications with seeds split from `base_seed`.
pub fn run_replications(setup: &RunSetup<'_>, reps: u64, base_seed: u64, target: &Target) -> Result<BenchmarkResult> {
    run_replications_with(setup, reps, base_seed, target, Execution::Parallel)
}

pub fn run_replications_with(
    setup: &RunSetup<'_>,
    reps: u64,
    base_seed: u64,
    target: &Target,
    execution: Execution,
) -> Result<BenchmarkResult> {
    if reps < 1 {
        return Err(Error::Stats("at least one replication is required".into()));
    }
    let one = |r: usize| {
        run_any(setup, replication_seed(base_seed, r as u64)).map_err(|e| Error::Replication {
            index: r as u64,
            source: Box::new(e),
        })
    };
    let traces = match execution {
        Execution::Parallel => map_indexed(reps as usize, one),
        Execution::Sequential => map_indexed_sequential(reps as usize, one),
    };
    let traces = traces.into_iter().collect::<Result<Vec<_>>>()?;
    aggregate(traces, setup.checkpoints, target, setup.mode, DEFAULT_FIT_WINDOW)
}

/// Statistics over finished traces, in replication order.
pub fn aggregate(
    traces: Vec<RunTrace>,
    checkpoints: &[u64],
    target: &Target,
    mode: Mode,
    window: (f64, f64),
) -> Result<BenchmarkResult> {
    let labels = target.labels();
    let truths = target.truths();
    let reps = traces.len() as f64;
    let k = checkpoints.len();
    let mut rel_sum = vec![vec![0.0; k]; labels.len()];
    let mut rel_ok = vec![vec![true; k]; labels.len()];
    let mut sq_sum = vec![vec![0.0; k]; labels.len()];
    let mut act = vec![0.0; k];
    for trace in &traces {
        if trace.checkpoints.len() != k {
            return Err(Error::Stats("traces disagree on checkpoints".into()));
        }
        for (c, cp) in trace.checkpoints.iter().enumerate() {
            act[c] += cp.wall_time / reps;
            for (m, e) in target.errors(cp).into_iter().enumerate() {
                match e.rel_err {
                    Some(r) => rel_sum[m][c] += r,
                    None => rel_ok[m][c] = false,
                }
                sq_sum[m][c] += e.sq_err;
            }
        }
    }
    let metrics = labels
        .into_iter()
        .enumerate()
        .map(|(m, label)| {
            let rel_err = (0..k)
                .map(|c| rel_ok[m][c].then(|| rel_sum[m][c] / reps))
                .collect();
            let ermse: Vec<f64> = sq_sum[m].iter().map(|s| (s / reps).sqrt()).collect();
            let points: Vec<(f64, f64)> = checkpoints.iter().map(|&n| n as f64).zip(ermse.iter().copied()).collect();
            MetricSeries {
                label,
                truth: truths[m],
                rel_err,
                ermse,
                slope: fit_rate(&points, window).ok(),
            }
        })
        .collect();
    Ok(BenchmarkResult {
        traces,
        checkpoints: checkpoints.to_vec(),
        metrics,
        act,
        mode,
    })
}

/// Error target for a built-in problem in the given mode.
pub fn builtin_target(name: &str, mode: Mode) -> Result<Target> {
    if name == "portfolio" {
        let t = portfolio_truth();
        let g = t.grad_lambda.expect("analytic gradients");
        return Ok(Target::Estimate {
            components: vec![
                (Component::Lambda(0), t.lambda[0]),
                (Component::Lambda(1), t.lambda[1]),
                (Component::GradLambda { j: 0, k: 0 }, g[0][0]),
                (Component::GradLambda { j: 1, k: 0 }, g[1][0]),
            ],
        });
    }
    if name == "median2d" {
        return Ok(Target::Estimate {
            components: vec![(Component::Nu(0), 0.0), (Component::Nu(1), 0.0)],
        });
    }
    let parsed = name.strip_prefix("case").and_then(|rest| {
        let (case, cost) = rest.split_once("-cost")?;
        Some((case.parse::<u8>().ok()?, cost.parse::<u8>().ok()?))
    });
    let Some((case, cost)) = parsed else {
        return Err(Error::Oracle(format!("no target for `{name}`")));
    };
    let tc = TestCase::from_index(case)?;
    let truth = match cost {
        1 => cond_expectation_truth(case, &tc.theta0())?,
        2 => covar_truth_case(case, &tc.theta0(), TEST_COVAR_PHI, TEST_COVAR_PSI)?,
        _ => return Err(Error::Oracle(format!("no target for `{name}`"))),
    };
    match mode {
        Mode::Optimize => {
            let objective: Objective = match cost {
                1 => Arc::new(move |t: &[f64]| cond_expectation_objective(tc, t)),
                _ => Arc::new(move |t: &[f64]| covar_objective(tc, t, TEST_COVAR_PHI, TEST_COVAR_PSI)),
            };
            Ok(Target::Optimize {
                objective,
                theta_star: truth.theta_star.expect("optimizer recorded"),
                cost_star: truth.cost_star.expect("optimum recorded"),
            })
        }
        Mode::Estimate => {
            let g = truth.grad_lambda.expect("analytic gradients");
            let mut components = vec![(Component::Lambda(0), truth.lambda[0])];
            components.extend(g[0].iter().enumerate().map(|(k, v)| (Component::GradLambda { j: 0, k }, *v)));
            Ok(Target::Estimate { components })
        }
    }
}

/// Files written by [`emit_report`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportPaths {
    pub trace_csv: PathBuf,
    pub summary_csv: PathBuf,
    pub table: PathBuf,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Per-checkpoint CSV: one row per replication and checkpoint.
pub fn trace_csv(result: &BenchmarkResult, target: &Target) -> String {
    let mut out = String::from("replication,n,eval_count,wall_time");
    let first = result.traces.iter().find_map(|t| t.checkpoints.first());
    if let Some(cp) = first {
        for k in 0..cp.theta.len() {
            write!(out, ",theta_{}", k + 1).unwrap();
        }
        for i in 0..cp.nu.len() {
            write!(out, ",nu_{}", i + 1).unwrap();
        }
        for j in 0..cp.lambda.len() {
            write!(out, ",lambda_{}", j + 1).unwrap();
        }
        for (i, g) in cp.g_nu.iter().enumerate() {
            for k in 0..g.len() {
                write!(out, ",gnu_{}_{}", i + 1, k + 1).unwrap();
            }
        }
        for (j, g) in cp.g_lambda.iter().enumerate() {
            for k in 0..g.len() {
                write!(out, ",g_{}_{}", j + 1, k + 1).unwrap();
            }
        }
    }
    for label in target.labels() {
        write!(out, ",rel_err_{label},sq_err_{label}").unwrap();
    }
    out.push('\n');
    for (r, trace) in result.traces.iter().enumerate() {
        for cp in &trace.checkpoints {
            write!(out, "{r},{},{},{}", cp.n, cp.eval_count, cp.wall_time).unwrap();
            let values = cp
                .theta
                .iter()
                .chain(&cp.nu)
                .chain(&cp.lambda)
                .chain(cp.g_nu.iter().flatten())
                .chain(cp.g_lambda.iter().flatten());
            for v in values {
                write!(out, ",{v}").unwrap();
            }
            for e in target.errors(cp) {
                write!(out, ",{},{}", opt(e.rel_err), e.sq_err).unwrap();
            }
            out.push('\n');
        }
    }
    out
}

/// Aggregate CSV: one row per checkpoint.
pub fn summary_csv(result: &BenchmarkResult) -> String {
    let mut out = String::from("n");
    for m in &result.metrics {
        write!(out, ",rel_err_{0},ermse_{0}", m.label).unwrap();
    }
    out.push_str(",act\n");
    for (c, n) in result.checkpoints.iter().enumerate() {
        write!(out, "{n}").unwrap();
        for m in &result.metrics {
            write!(out, ",{},{}", opt(m.rel_err[c]), m.ermse[c]).unwrap();
        }
        writeln!(out, ",{}", result.act[c]).unwrap();
    }
    out
}

fn is_power_of_ten(n: u64) -> bool {
    let mut v = n;
    while v >= 10 && v.is_multiple_of(10) {
        v /= 10;
    }
    v == 1 && n >= 1000
}

/// Plain-text table: `relative error (eRMSE)` per metric and power-of-ten
/// checkpoint, the fitted rate, and an ACT row.
pub fn table_text(result: &BenchmarkResult) -> String {
    let cols: Vec<usize> = {
        let powers: Vec<usize> = (0..result.checkpoints.len())
            .filter(|&c| is_power_of_ten(result.checkpoints[c]))
            .collect();
        if powers.is_empty() {
            (0..result.checkpoints.len()).collect()
        } else {
            powers
        }
    };
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut header = vec![String::new()];
    header.extend(cols.iter().map(|&c| format!("n={}", result.checkpoints[c])));
    header.push("rate".into());
    rows.push(header);
    for m in &result.metrics {
        let mut row = vec![m.label.clone()];
        for &c in &cols {
            let rel = m.rel_err[c].map(|r| format!("{:.2}%", 100.0 * r)).unwrap_or_else(|| "n/a".into());
            row.push(format!("{rel} ({:.2e})", m.ermse[c]));
        }
        row.push(match &m.slope {
            Some(fit) => format!("O(n^{:.2})", fit.slope),
            None => "n/a".into(),
        });
        rows.push(row);
    }
    let mut act = vec!["ACT".to_string()];
    act.extend(cols.iter().map(|&c| format!("{:.2}", result.act[c])));
    act.push(String::new());
    rows.push(act);

    let widths: Vec<usize> = (0..rows[0].len())
        .map(|i| rows.iter().map(|r| r[i].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in rows {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(cell, w)| format!("{cell:<w$}", w = *w))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

/// Writes `trace.csv`, `summary.csv` and `table.txt` under `dir`.
pub fn emit_report(result: &BenchmarkResult, target: &Target, dir: &Path) -> Result<ReportPaths> {
    fs::create_dir_all(dir)?;
    let paths = ReportPaths {
        trace_csv: dir.join("trace.csv"),
        summary_csv: dir.join("summary.csv"),
        table: dir.join("table.txt"),
    };
    fs::write(&paths.trace_csv, trace_csv(result, target))?;
    fs::write(&paths.summary_csv, summary_csv(result))?;
    fs::write(&paths.table, table_text(result))?;
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn relative_error_examples() {
        assert_eq!(relative_error(2.0, 2.0).unwrap(), 0.0);
        assert_eq!(relative_error(1.5, 2.0).unwrap(), -0.25);
        assert_abs_diff_eq!(relative_error(0.7186, 0.71844).unwrap(), 0.0002, epsilon = 5e-5);
        assert!(relative_error(1.0, 0.0).is_err());
    }

    #[test]
    fn ermse_examples() {
        assert_eq!(ermse(&[vec![1.0, 2.0], vec![1.0, 2.0]], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(ermse(&[vec![1.0], vec![-1.0]], &[0.0]).unwrap(), 1.0);
        assert!(ermse(&[vec![1.0]], &[0.0, 1.0]).is_err());
        assert!(ermse(&[], &[0.0]).is_err());
    }

    #[test]
    fn fit_rate_examples() {
        let pts: Vec<(f64, f64)> = (0..10).map(|i| 10f64.powf(4.0 + i as f64 / 4.5)).map(|n| (n, n.powf(-0.2))).collect();
        let fit = fit_rate(&pts, DEFAULT_FIT_WINDOW).unwrap();
        assert_abs_diff_eq!(fit.slope, -0.2, epsilon = 1e-12);
        let flat: Vec<(f64, f64)> = pts.iter().map(|(n, _)| (*n, 3.0)).collect();
        assert_abs_diff_eq!(fit_rate(&flat, DEFAULT_FIT_WINDOW).unwrap().slope, 0.0, epsilon = 1e-12);
        assert!(fit_rate(&pts[..2], DEFAULT_FIT_WINDOW).is_err());
    }

    #[test]
    fn checkpoints_default() {
        let c = default_checkpoints(1_000_000);
        for p in [1000, 10_000, 100_000, 1_000_000] {
            assert!(c.contains(&p));
        }
        assert!(c.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(*c.last().unwrap(), 1_000_000);
        assert!(c.iter().filter(|&&n| n >= 10_000).count() >= 10);
        assert_eq!(default_checkpoints(1), vec![1]);
    }

    #[test]
    fn table_headers() {
        assert!(is_power_of_ten(1000));
        assert!(is_power_of_ten(1_000_000));
        assert!(!is_power_of_ten(100));
        assert!(!is_power_of_ten(2000));
    }

    proptest! {
        #[test]
        fn fit_recovers_planted_exponents(slope in -2.0f64..0.5, scale in 0.01f64..100.0) {
            let pts: Vec<(f64, f64)> = (0..12)
                .map(|i| 10f64.powf(4.0 + i as f64 / 5.5))
                .map(|n| (n, scale * n.powf(slope)))
                .collect();
            let fit = fit_rate(&pts, DEFAULT_FIT_WINDOW).unwrap();
            prop_assert!((fit.slope - slope).abs() < 1e-10);
        }

        #[test]
        fn ermse_permutation_invariant(values in prop::collection::vec(-10.0f64..10.0, 2..30), shift in 0usize..29) {
            let est: Vec<Vec<f64>> = values.iter().map(|v| vec![*v]).collect();
            let mut rotated = est.clone();
            let len = rotated.len();
            rotated.rotate_left(shift % len);
            rotated.reverse();
            let a = ermse(&est, &[0.5]).unwrap();
            let b = ermse(&rotated, &[0.5]).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }
    }
}

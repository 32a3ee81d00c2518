//! Reference values for the built-in problems.
//!
//! Closed forms where they exist, a numeric minimizer for the CoVaR optima,
//! and a strip-conditioning Monte Carlo estimator that only uses the
//! problem's sampler and links, so it can cross-check the closed forms.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::parallel::map_indexed;
use crate::problem::{ContextualProblem, PortfolioParams, TestCase, TEST_ANCHOR};
use crate::streams::{stream_with_id, Purpose};

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Standard normal quantile.
pub fn norm_inv(p: f64) -> f64 {
    standard_normal().inverse_cdf(p)
}

pub fn norm_cdf(x: f64) -> f64 {
    standard_normal().cdf(x)
}

pub fn norm_pdf(x: f64) -> f64 {
    standard_normal().pdf(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Analytic,
    NumericMinimization,
    MonteCarlo { n: u64, seed: u64 },
}

/// Reference values at one decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub theta: Vec<f64>,
    pub nu: Vec<f64>,
    pub lambda: Vec<f64>,
    /// Column `i` is the gradient of `nu_i`.
    pub grad_nu: Option<Vec<Vec<f64>>>,
    pub grad_lambda: Option<Vec<Vec<f64>>>,
    pub theta_star: Option<Vec<f64>>,
    pub cost_star: Option<f64>,
    pub provenance: Provenance,
    pub nu_se: Option<Vec<f64>>,
    pub lambda_se: Option<Vec<f64>>,
    /// Strip half-widths used by the Monte Carlo estimator.
    pub band: Option<Vec<f64>>,
}

impl GroundTruth {
    fn analytic(theta: &[f64], nu: Vec<f64>, lambda: Vec<f64>, grad_nu: Vec<Vec<f64>>, grad_lambda: Vec<Vec<f64>>) -> Self {
        Self {
            theta: theta.to_vec(),
            nu,
            lambda,
            grad_nu: Some(grad_nu),
            grad_lambda: Some(grad_lambda),
            theta_star: None,
            cost_star: None,
            provenance: Provenance::Analytic,
            nu_se: None,
            lambda_se: None,
            band: None,
        }
    }
}

fn check_case_dim(case: TestCase, theta: &[f64]) -> Result<()> {
    if theta.len() != case.dim() {
        return Err(Error::Oracle(format!(
            "case {} expects {} decision components, got {}",
            case.index(),
            case.dim(),
            theta.len()
        )));
    }
    Ok(())
}

/// Gradient of `noise_scale + shift` for a test case.
fn coef_shift_gradient(case: TestCase, theta: &[f64]) -> (Vec<f64>, Vec<f64>) {
    match case {
        TestCase::One => (
            vec![5.2 * theta[0] - 4.8 * theta[1], 5.2 * theta[1] - 4.8 * theta[0]],
            vec![0.0; 2],
        ),
        TestCase::Two => (
            theta.iter().enumerate().map(|(i, t)| 2.0 * (t - (i + 1) as f64)).collect(),
            vec![0.0; theta.len()],
        ),
        TestCase::Three => (
            vec![0.0; theta.len()],
            theta.iter().enumerate().map(|(i, t)| 2.0 * t - (i + 1) as f64).collect(),
        ),
    }
}

/// Minimizer of the conditional-mean objective.
fn cond_expectation_optimum(case: TestCase) -> Vec<f64> {
    match case {
        TestCase::One => vec![0.0, 0.0],
        TestCase::Two => (1..=10).map(|i| i as f64).collect(),
        TestCase::Three => (1..=20).map(|i| i as f64 / 2.0).collect(),
    }
}

fn cond_expectation_value(case: TestCase, theta: &[f64]) -> f64 {
    let a = TEST_ANCHOR;
    case.noise_scale(theta) + case.shift(theta) + a + 0.5 * a * a
}

/// `E[Y | X = 1]` for a test case, with its analytic minimizer.
pub fn cond_expectation_truth(case: u8, theta: &[f64]) -> Result<GroundTruth> {
    let case = TestCase::from_index(case)?;
    check_case_dim(case, theta)?;
    let d = theta.len();
    let (gc, gs) = coef_shift_gradient(case, theta);
    let grad: Vec<f64> = gc.iter().zip(&gs).map(|(a, b)| a + b).collect();
    let mut truth = GroundTruth::analytic(
        theta,
        vec![TEST_ANCHOR],
        vec![cond_expectation_value(case, theta)],
        vec![vec![0.0; d]],
        vec![grad],
    );
    let star = cond_expectation_optimum(case);
    truth.cost_star = Some(cond_expectation_value(case, &star));
    truth.theta_star = Some(star);
    Ok(truth)
}

/// Values of the CoVaR objective and its gradient, no validation.
fn covar_value(case: TestCase, theta: &[f64], phi: f64, psi: f64) -> Result<(f64, f64, Vec<f64>)> {
    let coef = case.noise_scale(theta);
    if coef < 0.0 {
        return Err(Error::Oracle(format!("negative noise multiplier {coef}")));
    }
    let nu = theta[0] + norm_inv(phi);
    let zq = 1.0 + norm_inv(psi);
    let lambda = coef * zq + case.shift(theta) + nu + 0.5 * nu * nu;
    let (gc, gs) = coef_shift_gradient(case, theta);
    let mut grad: Vec<f64> = gc.iter().zip(&gs).map(|(c, s)| c * zq + s).collect();
    grad[0] += 1.0 + nu;
    Ok((nu, lambda, grad))
}

/// True CoVaR objective of a test case at `theta`; NaN where undefined.
pub fn covar_objective(case: TestCase, theta: &[f64], phi: f64, psi: f64) -> f64 {
    covar_value(case, theta, phi, psi).map(|v| v.1).unwrap_or(f64::NAN)
}

/// True conditional-mean objective of a test case at `theta`.
pub fn cond_expectation_objective(case: TestCase, theta: &[f64]) -> f64 {
    cond_expectation_value(case, theta)
}

/// Projected gradient descent with backtracking from a grid start.
fn minimize_box<F, G>(f: F, grad: G, lower: &[f64], upper: &[f64], start: Vec<f64>) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    let d = start.len();
    let project = |v: &mut [f64]| {
        for k in 0..d {
            v[k] = v[k].clamp(lower[k], upper[k]);
        }
    };
    // coarse grid on the first two coordinates, the rest held at the start
    let mut best = start;
    project(&mut best);
    let mut best_val = f(&best);
    let grid: usize = 21;
    let axes = d.min(2);
    let total = grid.pow(axes as u32);
    for idx in 0..total {
        let mut cand = best.clone();
        let mut rest = idx;
        for k in 0..axes {
            let step = rest % grid;
            rest /= grid;
            cand[k] = lower[k] + (upper[k] - lower[k]) * step as f64 / (grid - 1) as f64;
        }
        let v = f(&cand);
        if v < best_val {
            best_val = v;
            best = cand;
        }
    }
    let mut x = best;
    let mut fx = best_val;
    let mut step = 1.0;
    for _ in 0..100_000 {
        let g = grad(&x);
        let mut accepted = false;
        while step > 1e-16 {
            let mut y: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - step * b).collect();
            project(&mut y);
            let moved: f64 = y.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum();
            let fy = f(&y);
            if fy <= fx - 0.25 / step * moved {
                let done = moved.sqrt() < 1e-14;
                x = y;
                fx = fy;
                accepted = true;
                if done {
                    return x;
                }
                step *= 2.0;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    x
}

/// CoVaR objective of a test case, with a numerically certified minimizer.
pub fn covar_truth_case(case: u8, theta: &[f64], phi: f64, psi: f64) -> Result<GroundTruth> {
    let case = TestCase::from_index(case)?;
    check_case_dim(case, theta)?;
    for (name, level) in [("phi", phi), ("psi", psi)] {
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::Oracle(format!("{name} = {level} outside (0, 1)")));
        }
    }
    let d = theta.len();
    let (nu, lambda, grad) = covar_value(case, theta, phi, psi)?;
    let mut e1 = vec![0.0; d];
    e1[0] = 1.0;
    let mut truth = GroundTruth::analytic(theta, vec![nu], vec![lambda], vec![e1], vec![grad]);

    let fs = case.feasible();
    let value = |t: &[f64]| covar_value(case, t, phi, psi).map(|v| v.1).unwrap_or(f64::INFINITY);
    let gradient = |t: &[f64]| covar_value(case, t, phi, psi).map(|v| v.2).unwrap_or_else(|_| vec![0.0; d]);
    let star = minimize_box(value, gradient, fs.lower(), fs.upper(), case.theta0());
    truth.cost_star = Some(value(&star));
    truth.theta_star = Some(star);
    truth.provenance = Provenance::NumericMinimization;
    Ok(truth)
}

/// CoVaR, CoES and the covariate VaR of the delta-gamma portfolio, with
/// their sensitivities to the mean of the covariate.
pub fn portfolio_truth_with(params: &PortfolioParams) -> GroundTruth {
    let z_phi = norm_inv(params.phi);
    let z_psi = norm_inv(params.psi);
    let nu = params.theta + params.sigma_x * z_phi;
    let base = params.delta * nu + 0.5 * params.gamma * nu * nu + params.sigma_y * params.rho * z_phi;
    let spread = params.sigma_y * (1.0 - params.rho * params.rho).sqrt();
    let lambda1 = base + spread * z_psi;
    let lambda2 = base + spread * norm_pdf(z_psi) / (1.0 - params.psi);
    let slope = params.delta + params.gamma * nu;
    GroundTruth::analytic(
        &[params.theta],
        vec![nu],
        vec![lambda1, lambda2],
        vec![vec![1.0]],
        vec![vec![slope], vec![slope]],
    )
}

pub fn portfolio_truth() -> GroundTruth {
    portfolio_truth_with(&PortfolioParams::default())
}

/// Settings of the strip-conditioning estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BruteForceOptions {
    pub samples: u64,
    /// Strip half-width per covariate; defaults to `0.01 * std(x_i)`.
    pub band: Option<f64>,
    pub seed: u64,
    /// Independent batches; the standard error comes from their spread.
    pub batches: usize,
}

impl Default for BruteForceOptions {
    fn default() -> Self {
        Self {
            samples: 10_000_000,
            band: None,
            seed: 0,
            batches: 20,
        }
    }
}

/// Root of a nonincreasing step-or-continuous function, by bracketing and bisection.
fn decreasing_root<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64) -> Result<f64> {
    let (mut lo, mut hi) = (lo, hi);
    let mut width = (hi - lo).abs().max(1.0);
    let mut tries = 0;
    while f(lo) < 0.0 || f(hi) > 0.0 {
        tries += 1;
        if tries > 60 {
            return Err(Error::Oracle("no sign change while bracketing a root".into()));
        }
        if f(lo) < 0.0 {
            lo -= width;
        }
        if f(hi) > 0.0 {
            hi += width;
        }
        width *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)))
}

struct BatchEstimate {
    nu: Vec<f64>,
    lambda: Vec<f64>,
    band: Vec<f64>,
}

fn brute_force_batch(
    problem: &ContextualProblem,
    theta: &[f64],
    samples: usize,
    band: Option<f64>,
    seed: u64,
    batch: usize,
) -> Result<BatchEstimate> {
    let m = problem.covariate_dim;
    let mut rng = stream_with_id(seed, Purpose::OracleShard as u64 + batch as u64);
    let mut xs: Vec<Vec<f64>> = vec![Vec::with_capacity(samples); m];
    let mut ys = Vec::with_capacity(samples);
    let mut x = vec![0.0; m];
    for _ in 0..samples {
        ys.push((problem.sampler)(theta, &mut rng, &mut x));
        for (col, v) in xs.iter_mut().zip(&x) {
            col.push(*v);
        }
    }
    let mut nu = vec![0.0; m];
    let mut bands = vec![0.0; m];
    for i in 0..m {
        let col = &xs[i];
        let mean_q = |v: f64| col.iter().map(|&xv| problem.links.q(i, theta, xv, v)).sum::<f64>() / col.len() as f64;
        let (lo, hi) = min_max(col);
        nu[i] = decreasing_root(mean_q, lo, hi)?;
        bands[i] = match band {
            Some(b) => b,
            None => {
                let mean = col.iter().sum::<f64>() / col.len() as f64;
                let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (col.len() - 1) as f64;
                0.01 * var.sqrt()
            }
        };
    }
    let strip: Vec<f64> = (0..samples)
        .filter(|&k| (0..m).all(|i| (xs[i][k] - nu[i]).abs() <= bands[i]))
        .map(|k| ys[k])
        .collect();
    if strip.is_empty() {
        return Err(Error::Oracle(format!(
            "empty conditioning strip (half-width {bands:?} around {nu:?}); widen the band or add samples"
        )));
    }
    let (lo, hi) = min_max(&strip);
    let mut lambda = vec![0.0; problem.measures];
    for j in 0..problem.measures {
        let prefix = lambda.clone();
        let mean_m = |v: f64| {
            let mut trial = prefix.clone();
            trial[j] = v;
            strip.iter().map(|&y| problem.links.m(j, theta, y, &trial)).sum::<f64>() / strip.len() as f64
        };
        lambda[j] = decreasing_root(mean_m, lo, hi)?;
    }
    Ok(BatchEstimate {
        nu,
        lambda,
        band: bands,
    })
}

/// Monte Carlo estimate of `nu` and `lambda` at `theta` using only the
/// sampler and the links: `nu` solves the empirical root equation over all
/// draws, `lambda` the one over draws whose covariates lie within the band
/// around `nu`. Quantile levels come from the problem's links.
pub fn brute_force_measures(problem: &ContextualProblem, theta: &[f64], opts: BruteForceOptions) -> Result<GroundTruth> {
    if opts.batches < 2 {
        return Err(Error::Oracle("at least two batches are needed for a standard error".into()));
    }
    if theta.len() != problem.dim {
        return Err(Error::Oracle(format!("decision has {} components, problem expects {}", theta.len(), problem.dim)));
    }
    if let Some(b) = opts.band {
        if !(b > 0.0) {
            return Err(Error::Oracle(format!("band must be positive, got {b}")));
        }
    }
    let per_batch = (opts.samples / opts.batches as u64) as usize;
    let estimates: Vec<Result<BatchEstimate>> = map_indexed(opts.batches, |b| {
        brute_force_batch(problem, theta, per_batch, opts.band, opts.seed, b)
    });
    let estimates = estimates.into_iter().collect::<Result<Vec<_>>>()?;
    let summarize = |pick: &dyn Fn(&BatchEstimate) -> &Vec<f64>| -> (Vec<f64>, Vec<f64>) {
        let k = pick(&estimates[0]).len();
        let n = estimates.len() as f64;
        (0..k)
            .map(|i| {
                let mean = estimates.iter().map(|e| pick(e)[i]).sum::<f64>() / n;
                let var = estimates.iter().map(|e| (pick(e)[i] - mean).powi(2)).sum::<f64>() / (n - 1.0);
                (mean, (var / n).sqrt())
            })
            .unzip()
    };
    let (nu, nu_se) = summarize(&|e| &e.nu);
    let (lambda, lambda_se) = summarize(&|e| &e.lambda);
    let (band, _) = summarize(&|e| &e.band);
    Ok(GroundTruth {
        theta: theta.to_vec(),
        nu,
        lambda,
        grad_nu: None,
        grad_lambda: None,
        theta_star: None,
        cost_star: None,
        provenance: Provenance::MonteCarlo {
            n: per_batch as u64 * opts.batches as u64,
            seed: opts.seed,
        },
        nu_se: Some(nu_se),
        lambda_se: Some(lambda_se),
        band: Some(band),
    })
}

/// Reference values for a built-in problem by name, at its initial decision.
pub fn builtin_truth(name: &str) -> Result<GroundTruth> {
    if name == "portfolio" {
        return Ok(portfolio_truth());
    }
    if let Some(rest) = name.strip_prefix("case") {
        let mut parts = rest.split("-cost");
        if let (Some(Ok(case)), Some(Ok(cost))) = (parts.next().map(str::parse::<u8>), parts.next().map(str::parse::<u8>)) {
            let tc = TestCase::from_index(case)?;
            let theta = tc.theta0();
            return match cost {
                1 => cond_expectation_truth(case, &theta),
                2 => covar_truth_case(case, &theta, crate::problem::TEST_COVAR_PHI, crate::problem::TEST_COVAR_PSI),
                _ => Err(Error::Oracle(format!("no oracle for `{name}`"))),
            };
        }
    }
    if name == "median2d" {
        return Ok(GroundTruth::analytic(&[0.0], vec![0.0, 0.0], vec![0.0], vec![vec![1.0]; 2], vec![vec![2.0]]));
    }
    Err(Error::Oracle(format!("no oracle for `{name}`")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{builtin_test_case, TEST_COVAR_PHI, TEST_COVAR_PSI};
    use approx::assert_abs_diff_eq;

    #[test]
    fn normal_quantiles() {
        assert_abs_diff_eq!(norm_inv(0.95), 1.6448536269514722, epsilon = 1e-10);
        assert_abs_diff_eq!(norm_inv(0.6), 0.2533471031357997, epsilon = 1e-10);
        assert_abs_diff_eq!(norm_inv(0.5), 0.0, epsilon = 1e-14);
        for p in [1e-8, 0.01, 0.3, 0.77, 0.999] {
            assert_abs_diff_eq!(norm_cdf(norm_inv(p)), p, epsilon = 1e-10);
        }
    }

    #[test]
    fn cond_expectation_examples() {
        let t = cond_expectation_truth(1, &[0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(t.lambda[0], 1.5, epsilon = 1e-14);
        let star: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_abs_diff_eq!(cond_expectation_truth(2, &star).unwrap().lambda[0], 2.5, epsilon = 1e-12);
        let half: Vec<f64> = (1..=20).map(|i| i as f64 / 2.0).collect();
        let t3 = cond_expectation_truth(3, &half).unwrap();
        assert_abs_diff_eq!(t3.lambda[0], -715.0, epsilon = 1e-9);
        assert_eq!(t3.cost_star, Some(t3.lambda[0]));
        assert!(cond_expectation_truth(4, &[0.0]).is_err());
        assert!(cond_expectation_truth(1, &[0.0]).is_err());
    }

    #[test]
    fn cond_expectation_optimum_beats_grid() {
        for case in 1..=3u8 {
            let tc = TestCase::from_index(case).unwrap();
            let truth = cond_expectation_truth(case, &tc.theta0()).unwrap();
            let star = truth.theta_star.unwrap();
            let best = truth.cost_star.unwrap();
            let fs = tc.feasible();
            let grid = |k: usize, s: usize| fs.lower()[k] + (fs.upper()[k] - fs.lower()[k]) * s as f64 / 20.0;
            if tc.dim() == 2 {
                for a in 0..21 {
                    for b in 0..21 {
                        let v = cond_expectation_value(tc, &[grid(0, a), grid(1, b)]);
                        assert!(v >= best - 1e-12);
                    }
                }
            } else {
                for k in 0..tc.dim() {
                    for s in 0..21 {
                        let mut t = star.clone();
                        t[k] = grid(k, s);
                        assert!(cond_expectation_value(tc, &t) >= best - 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn cond_expectation_gradient_matches_differences() {
        for case in 1..=3u8 {
            let tc = TestCase::from_index(case).unwrap();
            let theta: Vec<f64> = tc.theta0().iter().enumerate().map(|(i, t)| t + 0.1 * i as f64).collect();
            let truth = cond_expectation_truth(case, &theta).unwrap();
            let g = &truth.grad_lambda.unwrap()[0];
            for k in 0..theta.len() {
                let mut up = theta.clone();
                let mut down = theta.clone();
                up[k] += 1e-5;
                down[k] -= 1e-5;
                let fd = (cond_expectation_value(tc, &up) - cond_expectation_value(tc, &down)) / 2e-5;
                assert_abs_diff_eq!(g[k], fd, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn covar_examples() {
        let t = covar_truth_case(1, &[0.0, 0.0], TEST_COVAR_PHI, TEST_COVAR_PSI).unwrap();
        assert_abs_diff_eq!(t.lambda[0], 0.0, epsilon = 1e-14);
        assert_eq!(t.provenance, Provenance::NumericMinimization);
        let star: Vec<f64> = (1..=10).map(f64::from).collect();
        let t2 = covar_truth_case(2, &star, 0.5, 0.6).unwrap();
        assert_abs_diff_eq!(t2.lambda[0], 2.75335, epsilon = 1e-5);
        let t1 = covar_truth_case(1, &[1.0, 0.0], 0.5, 0.6).unwrap();
        assert_abs_diff_eq!(t1.lambda[0], 4.75871, epsilon = 1e-5);
        assert!(covar_truth_case(1, &[0.0, 0.0], 1.0, 0.6).is_err());
    }

    #[test]
    fn covar_optima() {
        let t1 = covar_truth_case(1, &[1.0, 1.0], 0.5, 0.6).unwrap();
        let s1 = t1.theta_star.unwrap();
        assert_abs_diff_eq!(s1[0], -0.50913, epsilon = 1e-4);
        assert_abs_diff_eq!(s1[1], s1[0] * 4.8 / 5.2, epsilon = 1e-8);
        let t2 = covar_truth_case(2, &TestCase::Two.theta0(), 0.5, 0.6).unwrap();
        let s2 = t2.theta_star.unwrap();
        let k = 1.0 + norm_inv(0.6);
        assert_abs_diff_eq!(s2[0], (2.0 * k - 1.0) / (2.0 * k + 1.0), epsilon = 1e-8);
        for (i, v) in s2.iter().enumerate().skip(1) {
            assert_abs_diff_eq!(*v, (i + 1) as f64, epsilon = 1e-8);
        }
        let t3 = covar_truth_case(3, &TestCase::Three.theta0(), 0.5, 0.6).unwrap();
        let s3 = t3.theta_star.unwrap();
        assert_abs_diff_eq!(s3[0], 0.0, epsilon = 1e-8);
        for (i, v) in s3.iter().enumerate().skip(1) {
            assert_abs_diff_eq!(*v, (i + 1) as f64 / 2.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn portfolio_examples() {
        let t = portfolio_truth();
        assert_abs_diff_eq!(t.nu[0], 0.29897, epsilon = 1e-5);
        assert_abs_diff_eq!(t.lambda[0], 0.71844, epsilon = 5e-5);
        assert_abs_diff_eq!(t.grad_lambda.as_ref().unwrap()[0][0], 0.43918, epsilon = 1e-5);
        assert_eq!(t.provenance, Provenance::Analytic);
    }

    #[test]
    fn portfolio_gradients_match_differences() {
        let step = 1e-4;
        let base = PortfolioParams::default();
        let at = |theta: f64| portfolio_truth_with(&PortfolioParams { theta, ..base });
        let (up, down) = (at(base.theta + step), at(base.theta - step));
        let t = portfolio_truth();
        assert_abs_diff_eq!((up.nu[0] - down.nu[0]) / (2.0 * step), t.grad_nu.unwrap()[0][0], epsilon = 1e-6);
        let g = t.grad_lambda.unwrap();
        for j in 0..2 {
            let fd = (up.lambda[j] - down.lambda[j]) / (2.0 * step);
            assert_abs_diff_eq!(fd, g[j][0], epsilon = 1e-6);
        }
    }

    #[test]
    fn roots_and_errors() {
        assert_abs_diff_eq!(decreasing_root(|v| 3.0 - v, 0.0, 1.0).unwrap(), 3.0, epsilon = 1e-12);
        assert!(decreasing_root(|_| 1.0, 0.0, 1.0).is_err());
        let p = builtin_test_case(1, 1).unwrap();
        let opts = BruteForceOptions {
            samples: 2000,
            band: Some(1e-9),
            seed: 1,
            batches: 2,
        };
        assert!(matches!(brute_force_measures(&p, &[0.0, 0.0], opts), Err(Error::Oracle(_))));
    }

    #[test]
    fn brute_force_small_sample_is_close() {
        let p = builtin_test_case(1, 1).unwrap();
        let opts = BruteForceOptions {
            samples: 400_000,
            band: Some(0.02),
            seed: 5,
            batches: 10,
        };
        let mc = brute_force_measures(&p, &[0.0, 0.0], opts).unwrap();
        assert_abs_diff_eq!(mc.nu[0], 1.0, epsilon = 1e-9);
        assert!((mc.lambda[0] - 1.5).abs() < 5.0 * mc.lambda_se.unwrap()[0] + 1e-3);
    }
}

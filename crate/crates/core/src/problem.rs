//! Contextual problems: a black-box sampler of `(covariate, outcome)` pairs,
//! the link functions defining `nu` and `lambda`, the decision cost, and the
//! feasible box. Also the built-in benchmark problems.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::streams::SimRng;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProblemError {
    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    Dimension { what: &'static str, expected: usize, got: usize },
    #[error("invalid box: lower {lower} > upper {upper} at coordinate {index}")]
    InvalidBox { index: usize, lower: f64, upper: f64 },
    #[error("unknown built-in problem `{0}`")]
    UnknownBuiltin(String),
    #[error("probability level {name} = {value} must lie in (0, 1)")]
    Level { name: &'static str, value: f64 },
}

/// Draws one pair at `theta`: writes the covariate into `x`, returns `y`.
pub type SamplerFn = dyn Fn(&[f64], &mut SimRng, &mut [f64]) -> f64 + Send + Sync;
/// `q_i(theta, x_i, nu_i)`.
pub type CovariateLink = dyn Fn(&[f64], f64, f64) -> f64 + Send + Sync;
/// `m_j(theta, y, lambda_1..lambda_j)`; only the leading `j` entries are passed.
pub type MeasureLink = dyn Fn(&[f64], f64, &[f64]) -> f64 + Send + Sync;
/// `g(theta, lambda)`.
pub type CostFn = dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync;
/// Writes a partial gradient of `g` at `(theta, lambda)` into the output slice.
pub type CostGradFn = dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync;

/// Link functions for `nu` (one per covariate) and `lambda` (triangular).
#[derive(Clone)]
pub struct LinkSet {
    pub q_links: Vec<Arc<CovariateLink>>,
    pub m_links: Vec<Arc<MeasureLink>>,
}

impl fmt::Debug for LinkSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LinkSet")
            .field("q_links", &self.q_links.len())
            .field("m_links", &self.m_links.len())
            .finish()
    }
}

impl LinkSet {
    /// `m_j` evaluated with the leading `j + 1` entries of `lambda`.
    #[inline]
    pub fn m(&self, j: usize, theta: &[f64], y: f64, lambda: &[f64]) -> f64 {
        (self.m_links[j])(theta, y, &lambda[..=j])
    }

    #[inline]
    pub fn q(&self, i: usize, theta: &[f64], x: f64, nu: f64) -> f64 {
        (self.q_links[i])(theta, x, nu)
    }
}

/// Closed interval used to stabilize estimates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    #[inline]
    pub fn clamp(&self, v: f64) -> f64 {
        v.max(self.lo).min(self.hi)
    }
}

/// Axis-aligned feasible box.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxSet {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxSet {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, ProblemError> {
        if lower.len() != upper.len() {
            return Err(ProblemError::Dimension {
                what: "box bounds",
                expected: lower.len(),
                got: upper.len(),
            });
        }
        for (index, (&lo, &hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo <= hi) {
                return Err(ProblemError::InvalidBox {
                    index,
                    lower: lo,
                    upper: hi,
                });
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn cube(dim: usize, lo: f64, hi: f64) -> Self {
        Self {
            lower: vec![lo; dim],
            upper: vec![hi; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(t, (lo, hi))| lo <= t && t <= hi)
    }

    /// Componentwise clamp, in place.
    pub fn project_in_place(&self, theta: &mut [f64]) {
        for (t, (lo, hi)) in theta.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *t = t.max(*lo).min(*hi);
        }
    }
}

/// Euclidean projection onto the box.
pub fn project(fs: &BoxSet, theta: &[f64]) -> Result<Vec<f64>, ProblemError> {
    if theta.len() != fs.dim() {
        return Err(ProblemError::Dimension {
            what: "theta",
            expected: fs.dim(),
            got: theta.len(),
        });
    }
    let mut out = theta.to_vec();
    fs.project_in_place(&mut out);
    Ok(out)
}

/// Starting point of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialState {
    pub theta: Vec<f64>,
    pub nu: Vec<f64>,
    pub lambda: Vec<f64>,
    /// One length-`d` column per covariate.
    pub g_nu: Vec<Vec<f64>>,
    /// One length-`d` vector per measure.
    pub g_lambda: Vec<Vec<f64>>,
}

impl InitialState {
    /// All estimates set to `estimate`, all gradient entries to `gradient`.
    pub fn uniform(theta: Vec<f64>, covariates: usize, measures: usize, estimate: f64, gradient: f64) -> Self {
        let d = theta.len();
        Self {
            theta,
            nu: vec![estimate; covariates],
            lambda: vec![estimate; measures],
            g_nu: vec![vec![gradient; d]; covariates],
            g_lambda: vec![vec![gradient; d]; measures],
        }
    }
}

/// The black-box system plus everything needed to optimize against it.
#[derive(Clone)]
pub struct ContextualProblem {
    pub name: String,
    pub dim: usize,
    pub covariate_dim: usize,
    pub measures: usize,
    pub sampler: Arc<SamplerFn>,
    pub links: LinkSet,
    pub cost: Arc<CostFn>,
    pub cost_grad_theta: Arc<CostGradFn>,
    pub cost_grad_lambda: Arc<CostGradFn>,
    pub feasible: BoxSet,
    /// Applied to `nu`, `lambda` and every gradient entry after each update.
    pub measure_clip: Option<Interval>,
    /// Set when the sampler is only defined on a box; perturbed points
    /// outside it abort the run.
    pub sampler_domain: Option<BoxSet>,
    pub initial: InitialState,
}

impl fmt::Debug for ContextualProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ContextualProblem")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("covariate_dim", &self.covariate_dim)
            .field("measures", &self.measures)
            .field("feasible", &self.feasible)
            .field("measure_clip", &self.measure_clip)
            .field("initial", &self.initial)
            .finish_non_exhaustive()
    }
}

impl ContextualProblem {
    /// Checks that every component agrees on `d`, `m` and `p`.
    pub fn check_dimensions(&self) -> Result<(), ProblemError> {
        let dim = |what, expected, got| {
            if expected == got {
                Ok(())
            } else {
                Err(ProblemError::Dimension { what, expected, got })
            }
        };
        dim("feasible box", self.dim, self.feasible.dim())?;
        dim("q links", self.covariate_dim, self.links.q_links.len())?;
        dim("m links", self.measures, self.links.m_links.len())?;
        dim("initial theta", self.dim, self.initial.theta.len())?;
        dim("initial nu", self.covariate_dim, self.initial.nu.len())?;
        dim("initial lambda", self.measures, self.initial.lambda.len())?;
        dim("initial G_nu columns", self.covariate_dim, self.initial.g_nu.len())?;
        dim("initial G_lambda", self.measures, self.initial.g_lambda.len())?;
        for col in self.initial.g_nu.iter().chain(&self.initial.g_lambda) {
            dim("initial gradient length", self.dim, col.len())?;
        }
        if let Some(domain) = &self.sampler_domain {
            dim("sampler domain", self.dim, domain.dim())?;
        }
        Ok(())
    }

    /// One draw at `theta`; allocates the covariate vector.
    pub fn sample(&self, theta: &[f64], rng: &mut SimRng) -> (Vec<f64>, f64) {
        let mut x = vec![0.0; self.covariate_dim];
        let y = (self.sampler)(theta, rng, &mut x);
        (x, y)
    }

    pub fn with_initial(mut self, initial: InitialState) -> Self {
        self.initial = initial;
        self
    }
}

fn indicator(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

fn check_level(name: &'static str, value: f64) -> Result<(), ProblemError> {
    if value > 0.0 && value < 1.0 {
        Ok(())
    } else {
        Err(ProblemError::Level { name, value })
    }
}

/// Entries of the built-in link-function catalog.
#[derive(Clone)]
pub enum LinkCatalog {
    /// `lambda_1` = CoVaR, `lambda_2` = CoES, `nu` = VaR of the covariate.
    CovarCoes { phi: f64, psi: f64 },
    /// `lambda = E[c(theta, Y) | X = anchor]`.
    ConditionalExpectedCost {
        cost: Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>,
        anchor: f64,
    },
    /// Conditional mean, variance and `psi`-quantile at `X = anchor`.
    MeanVarianceQuantile { psi: f64, anchor: f64 },
}

/// Link functions for a catalog entry.
pub fn builtin_link_catalog(entry: &LinkCatalog) -> Result<LinkSet, ProblemError> {
    match entry {
        LinkCatalog::CovarCoes { phi, psi } => {
            check_level("phi", *phi)?;
            check_level("psi", *psi)?;
            let (phi, psi) = (*phi, *psi);
            Ok(LinkSet {
                q_links: vec![Arc::new(move |_t: &[f64], x: f64, nu: f64| phi - indicator(x <= nu))],
                m_links: vec![
                    Arc::new(move |_t: &[f64], y: f64, l: &[f64]| psi - indicator(y <= l[0])),
                    Arc::new(|_t: &[f64], y: f64, l: &[f64]| (y - l[1]) * indicator(y >= l[0])),
                ],
            })
        }
        LinkCatalog::ConditionalExpectedCost { cost, anchor } => {
            let cost = cost.clone();
            let anchor = *anchor;
            Ok(LinkSet {
                q_links: vec![Arc::new(move |_t: &[f64], _x: f64, nu: f64| anchor - nu)],
                m_links: vec![Arc::new(move |t: &[f64], y: f64, l: &[f64]| cost(t, y) - l[0])],
            })
        }
        LinkCatalog::MeanVarianceQuantile { psi, anchor } => {
            check_level("psi", *psi)?;
            let (psi, anchor) = (*psi, *anchor);
            Ok(LinkSet {
                q_links: vec![Arc::new(move |_t: &[f64], _x: f64, nu: f64| anchor - nu)],
                m_links: vec![
                    Arc::new(|_t: &[f64], y: f64, l: &[f64]| y - l[0]),
                    Arc::new(|_t: &[f64], y: f64, l: &[f64]| (y - l[0]).powi(2) - l[1]),
                    Arc::new(move |_t: &[f64], y: f64, l: &[f64]| psi - indicator(y <= l[2])),
                ],
            })
        }
    }
}

/// The three synthetic test systems.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestCase {
    One,
    Two,
    Three,
}

/// Objective attached to a test system.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestCost {
    /// `E[Y | X = 1]`.
    ConditionalMean,
    /// `CoVaR_{0.5, 0.6}`.
    CoVaR,
}

/// Quantile levels of the CoVaR objective.
pub const TEST_COVAR_PHI: f64 = 0.5;
pub const TEST_COVAR_PSI: f64 = 0.6;
/// Conditioning anchor of the conditional-mean objective.
pub const TEST_ANCHOR: f64 = 1.0;

impl TestCase {
    pub fn from_index(i: u8) -> Result<Self, ProblemError> {
        match i {
            1 => Ok(Self::One),
            2 => Ok(Self::Two),
            3 => Ok(Self::Three),
            _ => Err(ProblemError::UnknownBuiltin(format!("case {i}"))),
        }
    }

    pub fn index(self) -> u8 {
        match self {
            Self::One => 1,
            Self::Two => 2,
            Self::Three => 3,
        }
    }

    pub fn dim(self) -> usize {
        match self {
            Self::One => 2,
            Self::Two => 10,
            Self::Three => 20,
        }
    }

    pub fn feasible(self) -> BoxSet {
        match self {
            Self::One => BoxSet::cube(2, -2.0, 2.0),
            Self::Two => BoxSet {
                lower: (1..=10).map(|i| i as f64 - 1.0).collect(),
                upper: (1..=10).map(|i| i as f64 + 1.0).collect(),
            },
            Self::Three => BoxSet::cube(20, -20.0, 20.0),
        }
    }

    pub fn theta0(self) -> Vec<f64> {
        match self {
            Self::One => vec![1.0, 1.0],
            Self::Two => (1..=10).map(|i| i as f64 - 0.5).collect(),
            Self::Three => vec![0.0; 20],
        }
    }

    /// Multiplier of the noise `xi` in `Y`.
    pub fn noise_scale(self, theta: &[f64]) -> f64 {
        match self {
            Self::One => 2.6 * (theta[0] * theta[0] + theta[1] * theta[1]) - 4.8 * theta[0] * theta[1],
            Self::Two => {
                theta
                    .iter()
                    .enumerate()
                    .map(|(i, t)| (t - (i + 1) as f64).powi(2))
                    .sum::<f64>()
                    + 1.0
            }
            Self::Three => 1.0,
        }
    }

    /// Deterministic additive term in `Y`.
    pub fn shift(self, theta: &[f64]) -> f64 {
        match self {
            Self::One | Self::Two => 0.0,
            Self::Three => theta.iter().enumerate().map(|(i, t)| (t - (i + 1) as f64) * t).sum(),
        }
    }
}

/// `X ~ N(theta_1, 1)`, `xi ~ N(1, 1)` independent,
/// `Y = noise_scale(theta) xi + shift(theta) + X + X^2 / 2`.
pub fn builtin_test_case(case: u8, cost: u8) -> Result<ContextualProblem, ProblemError> {
    let case = TestCase::from_index(case)?;
    let cost = match cost {
        1 => TestCost::ConditionalMean,
        2 => TestCost::CoVaR,
        other => return Err(ProblemError::UnknownBuiltin(format!("cost {other}"))),
    };
    Ok(test_case_problem(case, cost))
}

pub fn test_case_problem(case: TestCase, cost: TestCost) -> ContextualProblem {
    let d = case.dim();
    let sampler = move |theta: &[f64], rng: &mut SimRng, x: &mut [f64]| -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        let xi: f64 = 1.0 + rng.sample::<f64, _>(StandardNormal);
        let cov = theta[0] + z;
        x[0] = cov;
        case.noise_scale(theta) * xi + case.shift(theta) + cov + 0.5 * cov * cov
    };
    let (links, nu0) = match cost {
        TestCost::ConditionalMean => {
            let links = LinkSet {
                q_links: vec![Arc::new(|_t: &[f64], _x: f64, nu: f64| TEST_ANCHOR - nu)],
                m_links: vec![Arc::new(|_t: &[f64], y: f64, l: &[f64]| y - l[0])],
            };
            (links, TEST_ANCHOR)
        }
        TestCost::CoVaR => {
            let links = LinkSet {
                q_links: vec![Arc::new(|_t: &[f64], x: f64, nu: f64| TEST_COVAR_PHI - indicator(x <= nu))],
                m_links: vec![Arc::new(|_t: &[f64], y: f64, l: &[f64]| {
                    TEST_COVAR_PSI - indicator(y <= l[0])
                })],
            };
            (links, 0.0)
        }
    };
    let mut initial = InitialState::uniform(case.theta0(), 1, 1, 0.0, 0.0);
    initial.nu[0] = nu0;
    let cost_idx = match cost {
        TestCost::ConditionalMean => 1,
        TestCost::CoVaR => 2,
    };
    ContextualProblem {
        name: format!("case{}-cost{}", case.index(), cost_idx),
        dim: d,
        covariate_dim: 1,
        measures: 1,
        sampler: Arc::new(sampler),
        links,
        cost: Arc::new(|_t, l| l[0]),
        cost_grad_theta: Arc::new(|_t, _l, out| out.fill(0.0)),
        cost_grad_lambda: Arc::new(|_t, _l, out| {
            out.fill(0.0);
            out[0] = 1.0;
        }),
        feasible: case.feasible(),
        measure_clip: None,
        sampler_domain: None,
        initial,
    }
}

/// Delta-gamma portfolio pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PortfolioParams {
    pub theta: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub rho: f64,
    pub delta: f64,
    pub gamma: f64,
    pub phi: f64,
    pub psi: f64,
}

impl Default for PortfolioParams {
    fn default() -> Self {
        Self {
            theta: -0.03,
            sigma_x: 0.2,
            sigma_y: 0.3,
            rho: 0.95,
            delta: 0.2,
            gamma: 0.8,
            phi: 0.95,
            psi: 0.95,
        }
    }
}

impl PortfolioParams {
    /// `Y` given the covariate value and the idiosyncratic normal `xi`.
    pub fn outcome(&self, theta: f64, x: f64, xi: f64) -> f64 {
        self.delta * x
            + 0.5 * self.gamma * x * x
            + self.sigma_y * (self.rho * (x - theta) / self.sigma_x + (1.0 - self.rho * self.rho).sqrt() * xi)
    }
}

/// CoVaR/CoES sensitivity problem on the default portfolio.
pub fn builtin_portfolio() -> ContextualProblem {
    portfolio_problem(PortfolioParams::default())
}

pub fn portfolio_problem(params: PortfolioParams) -> ContextualProblem {
    let links = builtin_link_catalog(&LinkCatalog::CovarCoes {
        phi: params.phi,
        psi: params.psi,
    })
    .expect("default portfolio levels lie in (0, 1)");
    let sampler = move |theta: &[f64], rng: &mut SimRng, x: &mut [f64]| -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        let xi: f64 = rng.sample(StandardNormal);
        let cov = theta[0] + params.sigma_x * z;
        x[0] = cov;
        params.outcome(theta[0], cov, xi)
    };
    ContextualProblem {
        name: "portfolio".into(),
        dim: 1,
        covariate_dim: 1,
        measures: 2,
        sampler: Arc::new(sampler),
        links,
        cost: Arc::new(|_t, l| l[0]),
        cost_grad_theta: Arc::new(|_t, _l, out| out.fill(0.0)),
        cost_grad_lambda: Arc::new(|_t, _l, out| {
            out.fill(0.0);
            out[0] = 1.0;
        }),
        feasible: BoxSet::cube(1, -1.0, 1.0),
        measure_clip: Some(Interval { lo: -1.0, hi: 1.0 }),
        sampler_domain: None,
        initial: InitialState::uniform(vec![params.theta], 1, 2, 0.0, 1.0),
    }
}

/// Two independent covariates `X_i ~ N(theta, 1)`, `Y = X_1 + X_2 + eps`,
/// `nu_i` the covariate medians and `lambda = E[Y | X = nu]`.
pub fn builtin_bivariate_median() -> ContextualProblem {
    let sampler = |theta: &[f64], rng: &mut SimRng, x: &mut [f64]| -> f64 {
        let x1 = theta[0] + rng.sample::<f64, _>(StandardNormal);
        let x2 = theta[0] + rng.sample::<f64, _>(StandardNormal);
        let eps: f64 = rng.sample(StandardNormal);
        x[0] = x1;
        x[1] = x2;
        x1 + x2 + eps
    };
    let median = |_t: &[f64], x: f64, nu: f64| 0.5 - indicator(x <= nu);
    ContextualProblem {
        name: "median2d".into(),
        dim: 1,
        covariate_dim: 2,
        measures: 1,
        sampler: Arc::new(sampler),
        links: LinkSet {
            q_links: vec![Arc::new(median), Arc::new(median)],
            m_links: vec![Arc::new(|_t: &[f64], y: f64, l: &[f64]| y - l[0])],
        },
        cost: Arc::new(|_t, l| l[0]),
        cost_grad_theta: Arc::new(|_t, _l, out| out.fill(0.0)),
        cost_grad_lambda: Arc::new(|_t, _l, out| out[0] = 1.0),
        feasible: BoxSet::cube(1, -1.0, 1.0),
        measure_clip: None,
        sampler_domain: None,
        initial: InitialState::uniform(vec![0.0], 2, 1, 0.5, 0.0),
    }
}

/// Built-in problem by name: `case{1,2,3}-cost{1,2}`, `portfolio`, `median2d`.
pub fn builtin_by_name(name: &str) -> Result<ContextualProblem, ProblemError> {
    if let Some(rest) = name.strip_prefix("case") {
        let mut parts = rest.split("-cost");
        let case = parts.next().and_then(|c| c.parse::<u8>().ok());
        let cost = parts.next().and_then(|c| c.parse::<u8>().ok());
        if let (Some(case), Some(cost), None) = (case, cost, parts.next()) {
            return builtin_test_case(case, cost);
        }
        return Err(ProblemError::UnknownBuiltin(name.to_string()));
    }
    match name {
        "portfolio" => Ok(builtin_portfolio()),
        "median2d" => Ok(builtin_bivariate_median()),
        _ => Err(ProblemError::UnknownBuiltin(name.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::streams::{stream, Purpose};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn projection_examples() {
        let fs = BoxSet::cube(2, -2.0, 2.0);
        assert_eq!(project(&fs, &[1.0, 1.0]).unwrap(), vec![1.0, 1.0]);
        assert_eq!(project(&fs, &[3.0, -5.0]).unwrap(), vec![2.0, -2.0]);
        let case2 = TestCase::Two.feasible();
        let start = TestCase::Two.theta0();
        assert_eq!(project(&case2, &start).unwrap(), start);
        assert!(project(&fs, &[1.0]).is_err());
        assert!(BoxSet::new(vec![1.0], vec![0.0]).is_err());
    }

    #[test]
    fn test_case_examples() {
        let p = builtin_test_case(1, 1).unwrap();
        let mut rng = stream(3, Purpose::MeasureSample);
        for _ in 0..100 {
            let (x, y) = p.sample(&[0.0, 0.0], &mut rng);
            assert_abs_diff_eq!(y, x[0] + 0.5 * x[0] * x[0], epsilon = 1e-12);
        }
        let p2 = builtin_test_case(2, 1).unwrap();
        assert_eq!(p2.links.m(0, &TestCase::Two.theta0(), 3.0, &[1.0]), 2.0);
        let p3 = builtin_test_case(1, 2).unwrap();
        assert_abs_diff_eq!(p3.links.m(0, &[0.0, 0.0], 0.0, &[1.0]), -0.4, epsilon = 1e-15);
        assert!(builtin_test_case(4, 1).is_err());
        assert!(builtin_test_case(1, 3).is_err());
        for case in 1..=3 {
            for cost in 1..=2 {
                let p = builtin_test_case(case, cost).unwrap();
                p.check_dimensions().unwrap();
                assert!(p.feasible.contains(&p.initial.theta));
            }
        }
    }

    #[test]
    fn portfolio_examples() {
        let p = builtin_portfolio();
        p.check_dimensions().unwrap();
        assert_eq!(p.links.m(1, &[-0.03], 0.5, &[0.0, 0.5]), 0.0);
        assert_abs_diff_eq!(p.links.q(0, &[-0.03], -10.0, 0.0), -0.05, epsilon = 1e-15);
        let params = PortfolioParams::default();
        assert_abs_diff_eq!(params.outcome(-0.03, -0.03, 0.0), -0.00564, epsilon = 1e-12);
    }

    #[test]
    fn catalog_examples() {
        let covar = builtin_link_catalog(&LinkCatalog::CovarCoes { phi: 0.95, psi: 0.95 }).unwrap();
        assert_abs_diff_eq!(covar.m(0, &[], 0.5, &[1.0]), -0.05, epsilon = 1e-15);
        assert_abs_diff_eq!(covar.m(0, &[], 2.0, &[1.0]), 0.95, epsilon = 1e-15);
        let cec = builtin_link_catalog(&LinkCatalog::ConditionalExpectedCost {
            cost: Arc::new(|_t, y| y * y),
            anchor: 1.0,
        })
        .unwrap();
        assert_eq!(cec.q(0, &[], 5.0, 1.0), 0.0);
        assert_eq!(cec.m(0, &[], 3.0, &[4.0]), 5.0);
        let mvq = builtin_link_catalog(&LinkCatalog::MeanVarianceQuantile { psi: 0.9, anchor: 0.0 }).unwrap();
        assert_eq!(mvq.m(1, &[], 3.0, &[1.0, 4.0]), 0.0);
        assert_abs_diff_eq!(mvq.m(2, &[], 3.0, &[1.0, 4.0, 5.0]), -0.1, epsilon = 1e-15);
        assert!(builtin_link_catalog(&LinkCatalog::CovarCoes { phi: 1.0, psi: 0.5 }).is_err());
        assert!(builtin_link_catalog(&LinkCatalog::MeanVarianceQuantile { psi: 0.0, anchor: 0.0 }).is_err());
    }

    #[test]
    fn links_are_triangular() {
        let sets = [
            builtin_link_catalog(&LinkCatalog::CovarCoes { phi: 0.9, psi: 0.8 }).unwrap(),
            builtin_link_catalog(&LinkCatalog::MeanVarianceQuantile { psi: 0.7, anchor: 0.0 }).unwrap(),
        ];
        for links in &sets {
            let p = links.m_links.len();
            let base: Vec<f64> = (0..p).map(|k| 0.3 * k as f64 - 0.2).collect();
            for j in 0..p {
                for y in [-1.5, 0.1, 0.45, 2.0] {
                    let reference = links.m(j, &[0.0], y, &base);
                    for k in (j + 1)..p {
                        let mut bumped = base.clone();
                        bumped[k] += 17.0;
                        assert_eq!(links.m(j, &[0.0], y, &bumped), reference);
                    }
                }
            }
        }
    }

    #[test]
    fn conditional_mean_near_anchor() {
        // E[Y | X = 1] at theta = (1, 0): 2.6 * E[xi] + 1 + 1/2.
        let p = builtin_test_case(1, 1).unwrap();
        let theta = [1.0, 0.0];
        let mut rng = stream(11, Purpose::MeasureSample);
        let (mut sum, mut sum2, mut count) = (0.0, 0.0, 0usize);
        for _ in 0..2_000_000 {
            let (x, y) = p.sample(&theta, &mut rng);
            if (x[0] - 1.0).abs() < 0.02 {
                let m = p.links.m(0, &theta, y, &[0.0]);
                sum += m;
                sum2 += m * m;
                count += 1;
            }
        }
        let mean = sum / count as f64;
        let se = ((sum2 / count as f64 - mean * mean) / count as f64).sqrt();
        assert!((mean - 4.1).abs() < 4.0 * se + 1e-3, "mean {mean} se {se}");
    }

    #[test]
    fn builtin_names() {
        assert_eq!(builtin_by_name("case3-cost2").unwrap().dim, 20);
        assert_eq!(builtin_by_name("portfolio").unwrap().measures, 2);
        assert_eq!(builtin_by_name("median2d").unwrap().covariate_dim, 2);
        assert!(builtin_by_name("case9-cost1").is_err());
        assert!(builtin_by_name("case1").is_err());
        assert!(builtin_by_name("nope").is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn projection_idempotent_and_nonexpansive(
            a in proptest::collection::vec(-30.0f64..30.0, 3),
            b in proptest::collection::vec(-30.0f64..30.0, 3),
        ) {
            let fs = BoxSet::new(vec![-2.0, 0.0, -5.0], vec![2.0, 1.0, 10.0]).unwrap();
            let pa = project(&fs, &a).unwrap();
            let pb = project(&fs, &b).unwrap();
            prop_assert_eq!(project(&fs, &pa).unwrap(), pa.clone());
            prop_assert!(fs.contains(&pa));
            let dist = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            prop_assert!(dist(&pa, &pb) <= dist(&a, &b) + 1e-12);
        }
    }
}

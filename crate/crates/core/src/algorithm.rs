//! The coupled recursions.
//!
//! Each iteration consumes three output pairs: one at the current decision
//! for the measure recursion, and one at each of the two simultaneously
//! perturbed decisions for the gradient recursion. Every update reads the
//! state as it was at the start of the iteration, so the measure, gradient
//! and decision updates can be computed in any order.
//!
//! `IterateState::n` counts completed iterations; a step computes iteration
//! `n + 1` and indexes every schedule with it.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kernels::{product_weight, scalar_weight, Smoother};
use crate::problem::{ContextualProblem, InitialState};
use crate::schedules::{Mode, ScheduleSet};
use crate::streams::{RunStreams, SimRng};

/// Full recursion state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterateState {
    pub n: u64,
    pub theta: Vec<f64>,
    pub nu: Vec<f64>,
    pub lambda: Vec<f64>,
    /// Column `i` estimates the gradient of `nu_i`.
    pub g_nu: Vec<Vec<f64>>,
    /// Entry `j` estimates the gradient of `lambda_j`.
    pub g_lambda: Vec<Vec<f64>>,
    /// Output pairs consumed so far.
    pub eval_count: u64,
}

impl IterateState {
    pub fn from_initial(init: &InitialState) -> Self {
        Self {
            n: 0,
            theta: init.theta.clone(),
            nu: init.nu.clone(),
            lambda: init.lambda.clone(),
            g_nu: init.g_nu.clone(),
            g_lambda: init.g_lambda.clone(),
            eval_count: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn is_finite(&self) -> bool {
        let flat = |v: &[f64]| v.iter().all(|x| x.is_finite());
        flat(&self.theta)
            && flat(&self.nu)
            && flat(&self.lambda)
            && self.g_nu.iter().all(|g| flat(g))
            && self.g_lambda.iter().all(|g| flat(g))
    }
}

/// Rademacher perturbation direction.
#[derive(Debug, Clone, PartialEq)]
pub struct Direction(Vec<f64>);

impl Direction {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.iter().all(|&e| e == 1.0 || e == -1.0) {
            Ok(Self(entries))
        } else {
            Err(Error::InvalidDirection)
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

fn fill_direction<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    for chunk in out.chunks_mut(64) {
        let bits: u64 = rng.random();
        for (k, e) in chunk.iter_mut().enumerate() {
            *e = if (bits >> k) & 1 == 1 { 1.0 } else { -1.0 };
        }
    }
}

/// `d` i.i.d. symmetric signs.
pub fn draw_direction<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Direction {
    let mut v = vec![0.0; d];
    fill_direction(rng, &mut v);
    Direction(v)
}

/// `c / max{1, |G|/sqrt(d)}` over every gradient estimate.
pub fn scaled_perturbation(c: f64, g_nu: &[Vec<f64>], g_lambda: &[Vec<f64>], d: usize) -> f64 {
    let root_d = (d as f64).sqrt();
    let largest = g_nu
        .iter()
        .chain(g_lambda)
        .map(|g| g.iter().map(|v| v * v).sum::<f64>().sqrt() / root_d)
        .fold(1.0_f64, f64::max);
    c / largest
}

/// Perturbed decision and estimates, `x +- c_bar * (Delta, Delta^T G)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Perturbation {
    pub theta_plus: Vec<f64>,
    pub theta_minus: Vec<f64>,
    pub nu_plus: Vec<f64>,
    pub nu_minus: Vec<f64>,
    pub lambda_plus: Vec<f64>,
    pub lambda_minus: Vec<f64>,
}

impl Perturbation {
    fn sized(d: usize, m: usize, p: usize) -> Self {
        Self {
            theta_plus: vec![0.0; d],
            theta_minus: vec![0.0; d],
            nu_plus: vec![0.0; m],
            nu_minus: vec![0.0; m],
            lambda_plus: vec![0.0; p],
            lambda_minus: vec![0.0; p],
        }
    }

    fn fill(&mut self, state: &IterateState, cbar: f64, dir: &[f64]) {
        for ((tp, tm), (t, e)) in self
            .theta_plus
            .iter_mut()
            .zip(self.theta_minus.iter_mut())
            .zip(state.theta.iter().zip(dir))
        {
            *tp = t + cbar * e;
            *tm = t - cbar * e;
        }
        let shift = |g: &[f64]| cbar * g.iter().zip(dir).map(|(a, b)| a * b).sum::<f64>();
        for (i, g) in state.g_nu.iter().enumerate() {
            let s = shift(g);
            self.nu_plus[i] = state.nu[i] + s;
            self.nu_minus[i] = state.nu[i] - s;
        }
        for (j, g) in state.g_lambda.iter().enumerate() {
            let s = shift(g);
            self.lambda_plus[j] = state.lambda[j] + s;
            self.lambda_minus[j] = state.lambda[j] - s;
        }
    }
}

/// Perturbed points; the decisions are not projected.
pub fn perturbed_points(state: &IterateState, cbar: f64, dir: &Direction) -> Perturbation {
    let mut out = Perturbation::sized(state.dim(), state.nu.len(), state.lambda.len());
    out.fill(state, cbar, dir.as_slice());
    out
}

/// One output pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum WeightRule {
    /// `k((nu - x)/h) / h`.
    Scalar,
    /// Product kernel over a diagonal bandwidth.
    Product,
}

impl WeightRule {
    fn for_dim(m: usize) -> Self {
        if m == 1 {
            WeightRule::Scalar
        } else {
            WeightRule::Product
        }
    }

    #[inline]
    fn weight(self, kernel: &dyn Smoother, h: &[f64], nu: &[f64], x: &[f64]) -> f64 {
        match self {
            WeightRule::Scalar => scalar_weight(kernel, h[0], nu[0], x[0]),
            WeightRule::Product => product_weight(kernel, h, nu, x),
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn measure_into(
    problem: &ContextualProblem,
    schedules: &ScheduleSet,
    kernel: &dyn Smoother,
    rule: WeightRule,
    bandwidth: &[f64],
    state: &IterateState,
    x: &[f64],
    y: f64,
    out_nu: &mut [f64],
    out_lambda: &mut [f64],
) {
    let n = state.n + 1;
    let theta = &state.theta;
    let weight = rule.weight(kernel, bandwidth, &state.nu, x);
    let beta_nu = schedules.beta_nu.at(n);
    for (i, out) in out_nu.iter_mut().enumerate() {
        *out = state.nu[i] + beta_nu * problem.links.q(i, theta, x[i], state.nu[i]);
    }
    for (j, out) in out_lambda.iter_mut().enumerate() {
        let beta = schedules.beta_lambda[j].at(n);
        *out = state.lambda[j] + beta * problem.links.m(j, theta, y, &state.lambda) * weight;
    }
    if let Some(clip) = problem.measure_clip {
        out_nu.iter_mut().chain(out_lambda.iter_mut()).for_each(|v| *v = clip.clamp(*v));
    }
}

#[allow(clippy::too_many_arguments)]
fn gradient_into(
    problem: &ContextualProblem,
    schedules: &ScheduleSet,
    kernel: &dyn Smoother,
    rule: WeightRule,
    bandwidth: &[f64],
    state: &IterateState,
    pert: &Perturbation,
    plus: (&[f64], f64),
    minus: (&[f64], f64),
    dir: &[f64],
    cbar: f64,
    out_g_nu: &mut [Vec<f64>],
    out_g_lambda: &mut [Vec<f64>],
) {
    let n = state.n + 1;
    let (x_plus, y_plus) = plus;
    let (x_minus, y_minus) = minus;
    let half_inv = 1.0 / (2.0 * cbar);
    let links = &problem.links;

    let beta_nu = schedules.beta_g_nu.at(n);
    for (i, out) in out_g_nu.iter_mut().enumerate() {
        let diff = links.q(i, &pert.theta_plus, x_plus[i], pert.nu_plus[i])
            - links.q(i, &pert.theta_minus, x_minus[i], pert.nu_minus[i]);
        let scale = beta_nu * diff * half_inv;
        for ((o, g), e) in out.iter_mut().zip(&state.g_nu[i]).zip(dir) {
            *o = g + scale * e;
        }
    }

    let k_plus = rule.weight(kernel, bandwidth, &pert.nu_plus, x_plus);
    let k_minus = rule.weight(kernel, bandwidth, &pert.nu_minus, x_minus);
    let weight = k_plus * k_minus;
    for (j, out) in out_g_lambda.iter_mut().enumerate() {
        let beta = schedules.beta_g_lambda[j].at(n);
        let diff = links.m(j, &pert.theta_plus, y_plus, &pert.lambda_plus)
            - links.m(j, &pert.theta_minus, y_minus, &pert.lambda_minus);
        let scale = beta * diff * weight * half_inv;
        for ((o, g), e) in out.iter_mut().zip(&state.g_lambda[j]).zip(dir) {
            *o = g + scale * e;
        }
    }
    if let Some(clip) = problem.measure_clip {
        for v in out_g_nu.iter_mut().chain(out_g_lambda.iter_mut()).flatten() {
            *v = clip.clamp(*v);
        }
    }
}

/// Returns `false` when the descent direction is not finite.
fn theta_into(
    problem: &ContextualProblem,
    schedules: &ScheduleSet,
    state: &IterateState,
    grad_lambda: &mut [f64],
    out_theta: &mut [f64],
) -> bool {
    let n = state.n + 1;
    (problem.cost_grad_theta)(&state.theta, &state.lambda, out_theta);
    (problem.cost_grad_lambda)(&state.theta, &state.lambda, grad_lambda);
    for (w, g) in grad_lambda.iter().zip(&state.g_lambda) {
        for (o, gk) in out_theta.iter_mut().zip(g) {
            *o += w * gk;
        }
    }
    if !out_theta.iter().all(|v| v.is_finite()) {
        return false;
    }
    let alpha = schedules.alpha.at(n);
    for (o, t) in out_theta.iter_mut().zip(&state.theta) {
        *o = t - alpha * *o;
    }
    problem.feasible.project_in_place(out_theta);
    true
}

fn bandwidth_for(schedule: &crate::schedules::PowerSchedule, n: u64, m: usize) -> Vec<f64> {
    vec![schedule.at(n); m]
}

fn non_finite(state: &IterateState, stage: &'static str) -> Error {
    Error::NonFinite {
        iteration: state.n + 1,
        stage,
        state: Box::new(state.clone()),
    }
}

/// Measure update from a pair drawn at the current decision; returns the new `(nu, lambda)`.
pub fn measure_step(
    state: &IterateState,
    sample: &Sample,
    problem: &ContextualProblem,
    schedules: &ScheduleSet,
    kernel: &dyn Smoother,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let m = problem.covariate_dim;
    let bandwidth = bandwidth_for(&schedules.h, state.n + 1, m);
    let mut nu = vec![0.0; m];
    let mut lambda = vec![0.0; problem.measures];
    measure_into(
        problem,
        schedules,
        kernel,
        WeightRule::for_dim(m),
        &bandwidth,
        state,
        &sample.x,
        sample.y,
        &mut nu,
        &mut lambda,
    );
    if nu.iter().chain(&lambda).all(|v| v.is_finite()) {
        Ok((nu, lambda))
    } else {
        Err(non_finite(state, "measure update"))
    }
}

/// Gradient update from the pairs drawn at the perturbed decisions; returns the new `(G_nu, G_lambda)`.
#[allow(clippy::too_many_arguments)]
pub fn gradient_step(
    state: &IterateState,
    plus: &Sample,
    minus: &Sample,
    pert: &Perturbation,
    dir: &Direction,
    cbar: f64,
    problem: &ContextualProblem,
    schedules: &ScheduleSet,
    kernel: &dyn Smoother,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let m = problem.covariate_dim;
    let bandwidth = bandwidth_for(schedules.gradient_bandwidth(), state.n + 1, m);
    let mut g_nu = state.g_nu.clone();
    let mut g_lambda = state.g_lambda.clone();
    gradient_into(
        problem,
        schedules,
        kernel,
        WeightRule::for_dim(m),
        &bandwidth,
        state,
        pert,
        (&plus.x, plus.y),
        (&minus.x, minus.y),
        dir.as_slice(),
        cbar,
        &mut g_nu,
        &mut g_lambda,
    );
    if g_nu.iter().chain(&g_lambda).flatten().all(|v| v.is_finite()) {
        Ok((g_nu, g_lambda))
    } else {
        Err(non_finite(state, "gradient update"))
    }
}

/// Projected descent step on the decision; returns the new `theta`.
pub fn theta_step(state: &IterateState, problem: &ContextualProblem, schedules: &ScheduleSet) -> Result<Vec<f64>> {
    let mut theta = vec![0.0; problem.dim];
    let mut grad_lambda = vec![0.0; problem.measures];
    if theta_into(problem, schedules, state, &mut grad_lambda, &mut theta) {
        Ok(theta)
    } else {
        Err(non_finite(state, "descent direction"))
    }
}

/// Snapshot recorded at a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub n: u64,
    pub eval_count: u64,
    pub theta: Vec<f64>,
    pub nu: Vec<f64>,
    pub lambda: Vec<f64>,
    pub g_nu: Vec<Vec<f64>>,
    pub g_lambda: Vec<Vec<f64>>,
    /// Seconds since the start of the run; zero when timing is off.
    pub wall_time: f64,
}

impl Checkpoint {
    fn capture(state: &IterateState, wall_time: f64) -> Self {
        Self {
            n: state.n,
            eval_count: state.eval_count,
            theta: state.theta.clone(),
            nu: state.nu.clone(),
            lambda: state.lambda.clone(),
            g_nu: state.g_nu.clone(),
            g_lambda: state.g_lambda.clone(),
            wall_time,
        }
    }
}

/// Checkpointed trajectory of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub checkpoints: Vec<Checkpoint>,
    pub fingerprint: String,
    pub seed: u64,
}

/// Everything a run needs except its seed.
pub struct RunSetup<'a> {
    pub problem: &'a ContextualProblem,
    pub schedules: &'a ScheduleSet,
    pub kernel: &'a dyn Smoother,
    pub mode: Mode,
    pub n_iters: u64,
    pub checkpoints: &'a [u64],
    pub record_timing: bool,
    /// Overrides the default fingerprint.
    pub fingerprint: Option<String>,
}

impl RunSetup<'_> {
    /// Stable hash of everything that determines the trajectory.
    pub fn fingerprint(&self) -> String {
        if let Some(f) = &self.fingerprint {
            return f.clone();
        }
        let description = format!(
            "{}|{:?}|{:?}|{}|{}|{}|{:?}",
            self.problem.name,
            self.problem.initial,
            self.schedules,
            self.kernel.label(),
            self.mode,
            self.n_iters,
            self.checkpoints
        );
        hex16(&Sha256::digest(description.as_bytes()))
    }

    fn check(&self) -> Result<()> {
        if self.n_iters < 1 {
            return Err(Error::NoIterations);
        }
        self.problem.check_dimensions()?;
        let bad = |reason: String| Error::Checkpoints {
            n_iters: self.n_iters,
            reason,
        };
        let mut prev = 0;
        for &c in self.checkpoints {
            if c <= prev {
                return Err(bad(format!("{c} does not follow {prev}")));
            }
            if c > self.n_iters {
                return Err(bad(format!("{c} exceeds the iteration count")));
            }
            prev = c;
        }
        let p = self.problem.measures;
        if self.schedules.beta_lambda.len() != p || self.schedules.beta_g_lambda.len() != p {
            return Err(Error::Problem(crate::problem::ProblemError::Dimension {
                what: "per-measure schedules",
                expected: p,
                got: self.schedules.beta_lambda.len().min(self.schedules.beta_g_lambda.len()),
            }));
        }
        Ok(())
    }
}

pub(crate) fn hex16(bytes: &[u8]) -> String {
    bytes.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Reusable buffers for one run.
struct Engine<'a> {
    setup: &'a RunSetup<'a>,
    rule: WeightRule,
    state: IterateState,
    next: IterateState,
    pert: Perturbation,
    dir: Vec<f64>,
    x0: Vec<f64>,
    x_plus: Vec<f64>,
    x_minus: Vec<f64>,
    h_meas: Vec<f64>,
    h_grad: Vec<f64>,
    grad_lambda: Vec<f64>,
}

impl<'a> Engine<'a> {
    fn new(setup: &'a RunSetup<'a>, rule: WeightRule) -> Self {
        let problem = setup.problem;
        let (d, m, p) = (problem.dim, problem.covariate_dim, problem.measures);
        let state = IterateState::from_initial(&problem.initial);
        Self {
            setup,
            rule,
            next: state.clone(),
            state,
            pert: Perturbation::sized(d, m, p),
            dir: vec![0.0; d],
            x0: vec![0.0; m],
            x_plus: vec![0.0; m],
            x_minus: vec![0.0; m],
            h_meas: vec![0.0; m],
            h_grad: vec![0.0; m],
            grad_lambda: vec![0.0; p],
        }
    }

    fn iterate(&mut self, streams: &mut RunStreams) -> Result<()> {
        let setup = self.setup;
        let problem = setup.problem;
        let schedules = setup.schedules;
        let n = self.state.n + 1;
        let sampler = &problem.sampler;

        let y0 = sampler(&self.state.theta, &mut streams.measure, &mut self.x0);

        let cbar = scaled_perturbation(
            schedules.c.at(n),
            &self.state.g_nu,
            &self.state.g_lambda,
            problem.dim,
        );
        fill_direction(&mut streams.direction, &mut self.dir);
        self.pert.fill(&self.state, cbar, &self.dir);
        if let Some(domain) = &problem.sampler_domain {
            for theta in [&self.pert.theta_plus, &self.pert.theta_minus] {
                if !domain.contains(theta) {
                    return Err(Error::OutsideSamplerDomain {
                        iteration: n,
                        theta: theta.clone(),
                    });
                }
            }
        }
        let y_plus = sampler(&self.pert.theta_plus, &mut streams.gradient, &mut self.x_plus);
        let y_minus = sampler(&self.pert.theta_minus, &mut streams.gradient, &mut self.x_minus);

        self.h_meas.fill(schedules.h.at(n));
        self.h_grad.fill(schedules.gradient_bandwidth().at(n));

        measure_into(
            problem,
            schedules,
            setup.kernel,
            self.rule,
            &self.h_meas,
            &self.state,
            &self.x0,
            y0,
            &mut self.next.nu,
            &mut self.next.lambda,
        );
        gradient_into(
            problem,
            schedules,
            setup.kernel,
            self.rule,
            &self.h_grad,
            &self.state,
            &self.pert,
            (&self.x_plus, y_plus),
            (&self.x_minus, y_minus),
            &self.dir,
            cbar,
            &mut self.next.g_nu,
            &mut self.next.g_lambda,
        );
        match setup.mode {
            Mode::Optimize => {
                if !theta_into(problem, schedules, &self.state, &mut self.grad_lambda, &mut self.next.theta) {
                    return Err(non_finite(&self.state, "descent direction"));
                }
            }
            Mode::Estimate => self.next.theta.copy_from_slice(&self.state.theta),
        }
        self.next.n = n;
        self.next.eval_count = self.state.eval_count + 3;
        if !self.next.is_finite() {
            return Err(Error::NonFinite {
                iteration: n,
                stage: "iterate",
                state: Box::new(self.next.clone()),
            });
        }
        std::mem::swap(&mut self.state, &mut self.next);
        Ok(())
    }

    fn run(mut self, seed: u64) -> Result<RunTrace> {
        let setup = self.setup;
        let mut streams = RunStreams::from_seed(seed);
        let start = Instant::now();
        let mut checkpoints = Vec::with_capacity(setup.checkpoints.len());
        let mut pending = setup.checkpoints.iter().peekable();
        for _ in 0..setup.n_iters {
            self.iterate(&mut streams)?;
            if pending.peek().is_some_and(|&&c| c == self.state.n) {
                pending.next();
                let wall = if setup.record_timing {
                    start.elapsed().as_secs_f64()
                } else {
                    0.0
                };
                checkpoints.push(Checkpoint::capture(&self.state, wall));
            }
        }
        Ok(RunTrace {
            checkpoints,
            fingerprint: setup.fingerprint(),
            seed,
        })
    }
}

/// Runs the recursions for a single covariate.
pub fn run(setup: &RunSetup<'_>, seed: u64) -> Result<RunTrace> {
    setup.check()?;
    if setup.problem.covariate_dim != 1 {
        return Err(Error::CovariateDimension {
            got: setup.problem.covariate_dim,
            reason: "use run_multivariate for vector covariates",
        });
    }
    Engine::new(setup, WeightRule::Scalar).run(seed)
}

/// Runs the recursions with product-kernel weights over `H_n = h_n I`.
pub fn run_multivariate(setup: &RunSetup<'_>, seed: u64) -> Result<RunTrace> {
    setup.check()?;
    if setup.problem.covariate_dim < 1 {
        return Err(Error::CovariateDimension {
            got: 0,
            reason: "at least one covariate is required",
        });
    }
    Engine::new(setup, WeightRule::Product).run(seed)
}

/// Dispatches on the covariate dimension.
pub fn run_any(setup: &RunSetup<'_>, seed: u64) -> Result<RunTrace> {
    if setup.problem.covariate_dim == 1 {
        run(setup, seed)
    } else {
        run_multivariate(setup, seed)
    }
}

/// Final state of a run without checkpoints; handy for quick experiments.
pub fn run_to_end(setup: &RunSetup<'_>, seed: u64) -> Result<IterateState> {
    setup.check()?;
    let mut engine = Engine::new(setup, WeightRule::for_dim(setup.problem.covariate_dim));
    let mut streams = RunStreams::from_seed(seed);
    for _ in 0..setup.n_iters {
        engine.iterate(&mut streams)?;
    }
    Ok(engine.state)
}

#[doc(hidden)]
pub fn sample_at(problem: &ContextualProblem, theta: &[f64], rng: &mut SimRng) -> Sample {
    let (x, y) = problem.sample(theta, rng);
    Sample { x, y }
}

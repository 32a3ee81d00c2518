//! Power-law step, perturbation and bandwidth sequences.
//!
//! Every sequence has the form `C / (n + n0)^e`. A [`ScheduleSet`] bundles
//! one sequence per recursion and [`validate`] checks the exponent
//! inequalities the recursions need to converge.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScheduleError {
    #[error("schedule index must be >= 1, got {0}")]
    Index(u64),
    #[error("unknown schedule preset `{0}`")]
    UnknownPreset(String),
    #[error("preset `{name}` needs a parameter in range: {reason}")]
    PresetParameter { name: String, reason: String },
}

/// `value(n) = scale / (n + offset)^exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerSchedule {
    pub scale: f64,
    pub offset: f64,
    pub exponent: f64,
}

impl PowerSchedule {
    pub const fn new(scale: f64, offset: f64, exponent: f64) -> Self {
        Self {
            scale,
            offset,
            exponent,
        }
    }

    /// `scale * n^-exponent`.
    pub const fn decay(scale: f64, exponent: f64) -> Self {
        Self::new(scale, 0.0, exponent)
    }

    pub const fn constant(scale: f64) -> Self {
        Self::new(scale, 0.0, 0.0)
    }

    pub fn value(&self, n: u64) -> Result<f64, ScheduleError> {
        if n < 1 {
            return Err(ScheduleError::Index(n));
        }
        Ok(self.at(n))
    }

    #[inline]
    pub(crate) fn at(&self, n: u64) -> f64 {
        if self.exponent == 0.0 {
            self.scale
        } else {
            self.scale / (n as f64 + self.offset).powf(self.exponent)
        }
    }
}

/// Free function form of [`PowerSchedule::value`].
pub fn schedule_value(s: &PowerSchedule, n: u64) -> Result<f64, ScheduleError> {
    s.value(n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Optimize,
    Estimate,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Optimize => f.write_str("optimize"),
            Mode::Estimate => f.write_str("estimate"),
        }
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "optimize" => Ok(Mode::Optimize),
            "estimate" => Ok(Mode::Estimate),
            other => Err(format!("unknown mode `{other}` (expected optimize|estimate)")),
        }
    }
}

/// One schedule per recursion.
///
/// `beta_*` drive the measure recursion, `beta_g_*` the gradient recursion.
/// `h` is the bandwidth of the measure recursion; `h_grad`, when set,
/// replaces it in the gradient recursion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSet {
    pub alpha: PowerSchedule,
    pub beta_nu: PowerSchedule,
    pub beta_lambda: Vec<PowerSchedule>,
    pub beta_g_nu: PowerSchedule,
    pub beta_g_lambda: Vec<PowerSchedule>,
    pub c: PowerSchedule,
    pub h: PowerSchedule,
    pub h_grad: Option<PowerSchedule>,
}

impl ScheduleSet {
    /// Unit multipliers and zero offsets for the given exponents.
    pub fn from_exponents(exps: &ScheduleExponents, measures: usize) -> Self {
        let beta = PowerSchedule::decay(1.0, exps.b);
        Self {
            alpha: PowerSchedule::decay(if exps.a.is_some() { 1.0 } else { 0.0 }, exps.a.unwrap_or(0.0)),
            beta_nu: beta,
            beta_lambda: vec![beta; measures],
            beta_g_nu: beta,
            beta_g_lambda: vec![beta; measures],
            c: PowerSchedule::decay(1.0, exps.c),
            h: PowerSchedule::decay(1.0, exps.h),
            h_grad: None,
        }
    }

    pub fn gradient_bandwidth(&self) -> &PowerSchedule {
        self.h_grad.as_ref().unwrap_or(&self.h)
    }

    fn betas(&self) -> impl Iterator<Item = (String, &PowerSchedule)> {
        std::iter::once(("beta.nu".to_string(), &self.beta_nu))
            .chain(
                self.beta_lambda
                    .iter()
                    .enumerate()
                    .map(|(j, s)| (format!("beta.lambda.{}", j + 1), s)),
            )
            .chain(std::iter::once(("gbeta.nu".to_string(), &self.beta_g_nu)))
            .chain(
                self.beta_g_lambda
                    .iter()
                    .enumerate()
                    .map(|(j, s)| (format!("gbeta.lambda.{}", j + 1), s)),
            )
    }

    /// Common exponent of the step-size family (the first one's).
    pub fn beta_exponent(&self) -> f64 {
        self.beta_nu.exponent
    }
}

/// A failed exponent condition.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// A multiplier was not strictly positive (or was non-finite).
    NonPositiveScale(String),
    NegativeOffset(String),
    /// Step-size family members disagree on the exponent.
    MixedStepExponents { name: String, exponent: f64, expected: f64 },
    StepExponentRange { b: f64 },
    AlphaExponentRange { a: f64 },
    TimescaleSeparation { a: f64, b: f64 },
    PerturbationDecay { c: f64 },
    BandwidthDecay { name: String, h: f64 },
    PerturbationBandwidthSum { c: f64, h: f64, b: f64 },
    MeasureVariance { h: f64, b: f64 },
    Summability { c: f64, h: f64, b: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonPositiveScale(name) => write!(f, "{name}: multiplier C > 0 violated"),
            Violation::NegativeOffset(name) => write!(f, "{name}: offset n0 >= 0 violated"),
            Violation::MixedStepExponents {
                name,
                exponent,
                expected,
            } => write!(
                f,
                "{name}: all step sizes share one exponent b violated ({exponent} != {expected})"
            ),
            Violation::StepExponentRange { b } => write!(f, "b ∈ (1/2, 1] violated (b = {b})"),
            Violation::AlphaExponentRange { a } => write!(f, "a ∈ (1/2, 1] violated (a = {a})"),
            Violation::TimescaleSeparation { a, b } => write!(f, "a > b violated (a = {a}, b = {b})"),
            Violation::PerturbationDecay { c } => write!(f, "c > 0 violated (c = {c})"),
            Violation::BandwidthDecay { name, h } => write!(f, "{name}: h > 0 violated (h = {h})"),
            Violation::PerturbationBandwidthSum { c, h, b } => {
                write!(f, "c + h < b/2 violated (c = {c}, h = {h}, b = {b})")
            }
            Violation::Summability { c, h, b } => {
                write!(f, "2b - 2c - 2h > 1 violated (c = {c}, h = {h}, b = {b})")
            }
            Violation::MeasureVariance { h, b } => {
                write!(f, "h < b violated for the measure bandwidth (h = {h}, b = {b})")
            }
        }
    }
}

/// Checks every exponent condition; returns an empty list when all hold.
///
/// Estimate mode ignores the `alpha` schedule entirely.
pub fn validate(set: &ScheduleSet, mode: Mode) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut named: Vec<(String, &PowerSchedule)> = set.betas().collect();
    named.push(("c".into(), &set.c));
    named.push(("h".into(), &set.h));
    if let Some(hg) = &set.h_grad {
        named.push(("h_grad".into(), hg));
    }
    if mode == Mode::Optimize {
        named.push(("alpha".into(), &set.alpha));
    }
    for (name, s) in &named {
        if !(s.scale > 0.0 && s.scale.is_finite()) {
            out.push(Violation::NonPositiveScale(name.clone()));
        }
        if !(s.offset >= 0.0 && s.offset.is_finite()) {
            out.push(Violation::NegativeOffset(name.clone()));
        }
    }

    let b = set.beta_exponent();
    for (name, s) in set.betas() {
        if s.exponent != b {
            out.push(Violation::MixedStepExponents {
                name,
                exponent: s.exponent,
                expected: b,
            });
        }
    }
    if !(b > 0.5 && b <= 1.0) {
        out.push(Violation::StepExponentRange { b });
    }
    if mode == Mode::Optimize {
        let a = set.alpha.exponent;
        if !(a > 0.5 && a <= 1.0) {
            out.push(Violation::AlphaExponentRange { a });
        }
        if !(a > b) {
            out.push(Violation::TimescaleSeparation { a, b });
        }
    }
    let c = set.c.exponent;
    if !(c > 0.0) {
        out.push(Violation::PerturbationDecay { c });
    }
    let h = set.h.exponent;
    if !(h > 0.0) {
        out.push(Violation::BandwidthDecay { name: "h".into(), h });
    }
    let hg = set.gradient_bandwidth().exponent;
    if set.h_grad.is_some() && !(hg > 0.0) {
        out.push(Violation::BandwidthDecay {
            name: "h_grad".into(),
            h: hg,
        });
    }
    if !(c + hg < b / 2.0) {
        out.push(Violation::PerturbationBandwidthSum { c, h: hg, b });
    }
    if !(2.0 * b - 2.0 * c - 2.0 * hg > 1.0) {
        out.push(Violation::Summability { c, h: hg, b });
    }
    if set.h_grad.is_some() && !(h < b) {
        out.push(Violation::MeasureVariance { h, b });
    }
    out
}

/// Exponents returned by a named preset; `a` is `None` in estimation presets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleExponents {
    pub a: Option<f64>,
    pub b: f64,
    pub c: f64,
    pub h: f64,
}

/// Named rate-optimal exponent choices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    OptimizeDefault,
    EstimateMeasures,
    EstimateGradients,
    OptimizeAccelerated(u32),
    EstimateMeasuresAccelerated(u32),
    EstimateGradientsAccelerated(u32),
    MultivariateOptimize(u32),
    MultivariateEstimate(u32),
}

impl FromStr for Preset {
    type Err = ScheduleError;

    /// Accepts `name`, `name(k)` or `name:k`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (name, arg) = match s.find(['(', ':']) {
            Some(i) => {
                let rest = s[i + 1..].trim_end_matches(')').trim();
                let arg = rest
                    .parse::<u32>()
                    .map_err(|_| ScheduleError::UnknownPreset(s.to_string()))?;
                (&s[..i], Some(arg))
            }
            None => (s, None),
        };
        let needs = |f: fn(u32) -> Preset| -> Result<Preset, ScheduleError> {
            arg.map(f).ok_or_else(|| ScheduleError::PresetParameter {
                name: name.to_string(),
                reason: "missing parameter".into(),
            })
        };
        let preset = match (name, arg) {
            ("optimize-default", None) => Preset::OptimizeDefault,
            ("estimate-measures", None) => Preset::EstimateMeasures,
            ("estimate-gradients", None) => Preset::EstimateGradients,
            ("optimize-accelerated", _) => needs(Preset::OptimizeAccelerated)?,
            ("estimate-measures-accelerated", _) => needs(Preset::EstimateMeasuresAccelerated)?,
            ("estimate-gradients-accelerated", _) => needs(Preset::EstimateGradientsAccelerated)?,
            ("multivariate-optimize", _) => needs(Preset::MultivariateOptimize)?,
            ("multivariate-estimate", _) => needs(Preset::MultivariateEstimate)?,
            _ => return Err(ScheduleError::UnknownPreset(s.to_string())),
        };
        Ok(preset)
    }
}

/// Exponents for a named preset.
///
/// Estimation presets that leave the perturbation exponent free use the
/// gradient-optimal one for the same kernel order.
pub fn preset(p: Preset) -> Result<ScheduleExponents, ScheduleError> {
    let order = |r: u32, name: &str| -> Result<f64, ScheduleError> {
        if r < 2 {
            return Err(ScheduleError::PresetParameter {
                name: name.to_string(),
                reason: format!("kernel order r >= 2 required, got {r}"),
            });
        }
        Ok(r as f64)
    };
    let dim = |m: u32, name: &str| -> Result<f64, ScheduleError> {
        if m < 1 {
            return Err(ScheduleError::PresetParameter {
                name: name.to_string(),
                reason: "covariate dimension m >= 1 required".into(),
            });
        }
        Ok(m as f64)
    };
    Ok(match p {
        Preset::OptimizeDefault => ScheduleExponents {
            a: Some(1.0),
            b: 0.8,
            c: 0.1,
            h: 0.1,
        },
        Preset::EstimateMeasures => ScheduleExponents {
            a: None,
            b: 1.0,
            c: 0.125,
            h: 0.2,
        },
        Preset::EstimateGradients => ScheduleExponents {
            a: None,
            b: 1.0,
            c: 0.125,
            h: 0.125,
        },
        Preset::OptimizeAccelerated(r) => {
            let r = order(r, "optimize-accelerated")?;
            ScheduleExponents {
                a: Some(1.0),
                b: (3.0 * r + 2.0) / (4.0 * r + 2.0),
                c: r / (8.0 * r + 4.0),
                h: 1.0 / (4.0 * r + 2.0),
            }
        }
        Preset::EstimateMeasuresAccelerated(r) => {
            let r = order(r, "estimate-measures-accelerated")?;
            ScheduleExponents {
                a: None,
                b: 1.0,
                c: r / (2.0 * (3.0 * r + 2.0)),
                h: 1.0 / (2.0 * r + 1.0),
            }
        }
        Preset::EstimateGradientsAccelerated(r) => {
            let r = order(r, "estimate-gradients-accelerated")?;
            ScheduleExponents {
                a: None,
                b: 1.0,
                c: r / (2.0 * (3.0 * r + 2.0)),
                h: 1.0 / (3.0 * r + 2.0),
            }
        }
        Preset::MultivariateOptimize(m) => {
            let m = dim(m, "multivariate-optimize")?;
            ScheduleExponents {
                a: Some(1.0),
                b: (m + 3.0) / (m + 4.0),
                c: 1.0 / (2.0 * (m + 4.0)),
                h: 1.0 / (2.0 * (m + 4.0)),
            }
        }
        Preset::MultivariateEstimate(m) => {
            let m = dim(m, "multivariate-estimate")?;
            ScheduleExponents {
                a: None,
                b: 1.0,
                c: 1.0 / (2.0 * (m + 3.0)),
                h: 1.0 / (m + 4.0),
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn set_with(a: f64, b: f64, c: f64, h: f64) -> ScheduleSet {
        ScheduleSet::from_exponents(
            &ScheduleExponents {
                a: Some(a),
                b,
                c,
                h,
            },
            1,
        )
    }

    #[test]
    fn schedule_values() {
        let alpha = PowerSchedule::new(1.0, 1e4, 1.0);
        assert_abs_diff_eq!(alpha.value(1).unwrap(), 1.0 / 10001.0, epsilon = 1e-18);
        assert_abs_diff_eq!(PowerSchedule::decay(2.0, 0.8).value(1).unwrap(), 2.0);
        let constant = PowerSchedule::constant(5.0);
        assert_eq!(constant.value(1).unwrap(), 5.0);
        assert_eq!(constant.value(123_456).unwrap(), 5.0);
        assert_eq!(alpha.value(0), Err(ScheduleError::Index(0)));
    }

    #[test]
    fn validate_examples() {
        assert!(validate(&set_with(1.0, 0.8, 0.1, 0.1), Mode::Optimize).is_empty());
        let mut est = ScheduleSet::from_exponents(
            &ScheduleExponents {
                a: None,
                b: 1.0,
                c: 0.125,
                h: 0.2,
            },
            2,
        );
        assert!(validate(&est, Mode::Estimate).is_empty());
        let bad = validate(&set_with(0.8, 0.9, 0.1, 0.1), Mode::Optimize);
        assert!(bad.iter().any(|v| v.to_string().contains("a > b")), "{bad:?}");
        let bad = validate(&set_with(1.0, 0.3, 0.1, 0.1), Mode::Optimize);
        assert!(bad.iter().any(|v| v.to_string().contains("b ∈ (1/2, 1]")));
        let bad = validate(&set_with(1.0, 0.8, 0.2, 0.25), Mode::Optimize);
        assert!(bad.iter().any(|v| v.to_string().contains("c + h < b/2")));
        let bad = validate(&set_with(1.0, 0.6, 0.14, 0.14), Mode::Optimize);
        assert_eq!(bad.len(), 1);
        assert!(matches!(bad[0], Violation::Summability { .. }));
        est.beta_lambda[1].exponent = 0.9;
        let bad = validate(&est, Mode::Estimate);
        assert!(matches!(bad[0], Violation::MixedStepExponents { .. }));
    }

    #[test]
    fn estimate_mode_ignores_alpha() {
        let mut s = set_with(0.0, 1.0, 0.125, 0.2);
        s.alpha = PowerSchedule::constant(0.0);
        assert!(validate(&s, Mode::Estimate).is_empty());
        assert!(!validate(&s, Mode::Optimize).is_empty());
    }

    #[test]
    fn preset_examples() {
        let p = preset(Preset::OptimizeAccelerated(2)).unwrap();
        assert_abs_diff_eq!(p.b, 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(p.c, 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(p.h, 0.1, epsilon = 1e-15);
        let g = preset(Preset::EstimateGradients).unwrap();
        assert_eq!((g.b, g.c, g.h), (1.0, 0.125, 0.125));
        let m = preset(Preset::MultivariateOptimize(1)).unwrap();
        assert_abs_diff_eq!(m.b, 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(m.c, 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(m.h, 0.1, epsilon = 1e-15);
        assert_eq!(
            "optimize-accelerated(4)".parse::<Preset>().unwrap(),
            Preset::OptimizeAccelerated(4)
        );
        assert!("nonsense".parse::<Preset>().is_err());
        assert!("optimize-accelerated".parse::<Preset>().is_err());
        assert!(preset(Preset::OptimizeAccelerated(1)).is_err());
    }

    #[test]
    fn accelerated_presets_reduce_at_order_two() {
        let pairs = [
            (Preset::OptimizeAccelerated(2), Preset::OptimizeDefault),
            (Preset::EstimateMeasuresAccelerated(2), Preset::EstimateMeasures),
            (Preset::EstimateGradientsAccelerated(2), Preset::EstimateGradients),
        ];
        for (acc, plain) in pairs {
            let a = preset(acc).unwrap();
            let p = preset(plain).unwrap();
            assert_eq!(a.a, p.a);
            assert_abs_diff_eq!(a.b, p.b, epsilon = 1e-15);
            assert_abs_diff_eq!(a.h, p.h, epsilon = 1e-15);
            assert_abs_diff_eq!(a.c, p.c, epsilon = 1e-15);
        }
    }

    #[test]
    fn every_preset_validates() {
        let mut all = vec![Preset::OptimizeDefault, Preset::EstimateMeasures, Preset::EstimateGradients];
        for k in 1..=8 {
            if k >= 2 {
                all.push(Preset::OptimizeAccelerated(k));
                all.push(Preset::EstimateMeasuresAccelerated(k));
                all.push(Preset::EstimateGradientsAccelerated(k));
            }
            all.push(Preset::MultivariateOptimize(k));
            all.push(Preset::MultivariateEstimate(k));
        }
        for p in all {
            let exps = preset(p).unwrap();
            let mode = if exps.a.is_some() { Mode::Optimize } else { Mode::Estimate };
            let v = validate(&ScheduleSet::from_exponents(&exps, 2), mode);
            assert!(v.is_empty(), "{p:?}: {v:?}");
        }
    }

    proptest! {
        #[test]
        fn monotone_in_n(scale in 0.01f64..100.0, offset in 0.0f64..1e4, e in 0.0f64..1.5, n in 1u64..1_000_000) {
            let s = PowerSchedule::new(scale, offset, e);
            let now = s.value(n).unwrap();
            let next = s.value(n + 1).unwrap();
            prop_assert!(now > 0.0);
            if e > 0.0 {
                prop_assert!(next < now);
            } else {
                prop_assert_eq!(next, now);
            }
        }
    }
}

//! Smoothing kernels and kernel weights.
//!
//! The Gaussian base kernel exposes exact derivatives through the
//! probabilists' Hermite recurrence, which is what the bias-reducing
//! [`HighOrderKernel`] is assembled from. Weights are `k((v - x) / h) / h`
//! in one dimension and a product of scalar kernels divided by the product
//! of bandwidths in several.

use thiserror::Error;

/// Highest derivative order the Gaussian kernel evaluates.
pub const GAUSSIAN_MAX_DERIVATIVE: usize = 16;

/// Errors raised by kernel construction and evaluation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum KernelError {
    #[error("derivative order {requested} exceeds the supported maximum {max}")]
    DerivativeOrder { requested: usize, max: usize },
    #[error("high-order kernel order must satisfy 2 <= r <= {max}, got {r}")]
    InvalidOrder { r: usize, max: usize },
    #[error("bandwidth must be positive and finite, got {0}")]
    Bandwidth(f64),
    #[error("dimension mismatch: bandwidth has {bandwidth} entries, point has {nu}, covariate has {x}")]
    Dimension { bandwidth: usize, nu: usize, x: usize },
}

/// Anything that can be evaluated as a (possibly signed) smoothing kernel.
pub trait Smoother: Send + Sync {
    fn evaluate(&self, u: f64) -> f64;

    /// Short identifier used in configs and reports.
    fn label(&self) -> String;
}

/// A symmetric density kernel with evaluable derivatives.
pub trait Kernel: Smoother {
    /// Maximum derivative order `derivative` accepts.
    fn order_of_smoothness(&self) -> usize;

    /// `l`-th derivative at `u`; `derivative(u, 0) == evaluate(u)`.
    fn derivative(&self, u: f64, l: usize) -> Result<f64, KernelError>;
}

/// Standard normal density `exp(-u^2/2) / sqrt(2 pi)`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GaussianKernel;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

impl GaussianKernel {
    /// Fills `out[l]` with `K^{(l)}(u)` for `l = 0..out.len()`.
    ///
    /// Uses `K^{(l)} = -u K^{(l-1)} - (l-1) K^{(l-2)}`.
    fn derivatives_into(u: f64, out: &mut [f64]) {
        if out.is_empty() {
            return;
        }
        let k0 = INV_SQRT_2PI * (-0.5 * u * u).exp();
        out[0] = k0;
        if out.len() > 1 {
            out[1] = -u * k0;
        }
        for l in 2..out.len() {
            out[l] = -u * out[l - 1] - (l as f64 - 1.0) * out[l - 2];
        }
    }
}

impl Smoother for GaussianKernel {
    #[inline]
    fn evaluate(&self, u: f64) -> f64 {
        INV_SQRT_2PI * (-0.5 * u * u).exp()
    }

    fn label(&self) -> String {
        "gaussian".to_string()
    }
}

impl Kernel for GaussianKernel {
    fn order_of_smoothness(&self) -> usize {
        GAUSSIAN_MAX_DERIVATIVE
    }

    fn derivative(&self, u: f64, l: usize) -> Result<f64, KernelError> {
        if l > GAUSSIAN_MAX_DERIVATIVE {
            return Err(KernelError::DerivativeOrder {
                requested: l,
                max: GAUSSIAN_MAX_DERIVATIVE,
            });
        }
        if l == 0 {
            return Ok(self.evaluate(u));
        }
        let mut buf = [0.0; GAUSSIAN_MAX_DERIVATIVE + 1];
        Self::derivatives_into(u, &mut buf[..=l]);
        Ok(buf[l])
    }
}

/// Order-`r` kernel `W(u) = sum_{l<r} C(r, l+1) / l! * u^l * K^{(l)}(u)`.
///
/// Has unit mass and vanishing moments `1..r-1`; values can be negative and
/// are never clamped.
#[derive(Debug, Clone, PartialEq)]
pub struct HighOrderKernel<K = GaussianKernel> {
    base: K,
    r: usize,
    /// `C(r, l+1) / l!` for `l = 0..r`.
    coefficients: Vec<f64>,
}

impl<K: Kernel> HighOrderKernel<K> {
    pub fn order(&self) -> usize {
        self.r
    }

    pub fn base(&self) -> &K {
        &self.base
    }

    fn weighted_sum(&self, u: f64) -> f64 {
        let mut acc = 0.0;
        let mut u_pow = 1.0;
        for (l, coef) in self.coefficients.iter().enumerate() {
            // order checked at construction
            let d = self.base.derivative(u, l).unwrap_or(f64::NAN);
            acc += coef * u_pow * d;
            u_pow *= u;
        }
        acc
    }
}

/// Builds the order-`r` kernel from `base`.
pub fn make_high_order<K: Kernel>(base: K, r: usize) -> Result<HighOrderKernel<K>, KernelError> {
    let max = base.order_of_smoothness();
    if r < 2 || r > max {
        return Err(KernelError::InvalidOrder { r, max });
    }
    let mut coefficients = Vec::with_capacity(r);
    let mut factorial = 1.0;
    for l in 0..r {
        if l > 0 {
            factorial *= l as f64;
        }
        coefficients.push(binomial(r, l + 1) / factorial);
    }
    Ok(HighOrderKernel {
        base,
        r,
        coefficients,
    })
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

impl HighOrderKernel<GaussianKernel> {
    #[inline]
    fn gaussian_eval(&self, u: f64) -> f64 {
        let mut buf = [0.0; GAUSSIAN_MAX_DERIVATIVE + 1];
        GaussianKernel::derivatives_into(u, &mut buf[..self.r]);
        let mut acc = 0.0;
        let mut u_pow = 1.0;
        for (coef, d) in self.coefficients.iter().zip(&buf[..self.r]) {
            acc += coef * u_pow * d;
            u_pow *= u;
        }
        acc
    }
}

impl Smoother for HighOrderKernel<GaussianKernel> {
    #[inline]
    fn evaluate(&self, u: f64) -> f64 {
        self.gaussian_eval(u)
    }

    fn label(&self) -> String {
        format!("high-order({})", self.r)
    }
}

/// Generic fallback for non-Gaussian bases.
pub struct GenericHighOrder<K: Kernel>(pub HighOrderKernel<K>);

impl<K: Kernel> Smoother for GenericHighOrder<K> {
    fn evaluate(&self, u: f64) -> f64 {
        self.0.weighted_sum(u)
    }

    fn label(&self) -> String {
        format!("high-order({})", self.0.r)
    }
}

/// `(1/h) k((nu - x) / h)`.
pub fn kernel_weight<S: Smoother + ?Sized>(k: &S, h: f64, nu: f64, x: f64) -> Result<f64, KernelError> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(KernelError::Bandwidth(h));
    }
    Ok(scalar_weight(k, h, nu, x))
}

/// Unchecked scalar weight; `h` must be positive.
#[inline]
pub(crate) fn scalar_weight<S: Smoother + ?Sized>(k: &S, h: f64, nu: f64, x: f64) -> f64 {
    k.evaluate((nu - x) / h) / h
}

/// Diagonal bandwidth matrix `diag(h_1, .., h_m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthMatrix(Vec<f64>);

impl BandwidthMatrix {
    pub fn diagonal(entries: Vec<f64>) -> Result<Self, KernelError> {
        if let Some(&bad) = entries.iter().find(|h| !(**h > 0.0 && h.is_finite())) {
            return Err(KernelError::Bandwidth(bad));
        }
        Ok(Self(entries))
    }

    /// `h * I_m`.
    pub fn scalar(h: f64, dim: usize) -> Result<Self, KernelError> {
        Self::diagonal(vec![h; dim])
    }

    pub fn entries(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn determinant(&self) -> f64 {
        self.0.iter().product()
    }
}

/// `prod_i k((nu_i - x_i) / h_i) / det(H)` for a product kernel.
pub fn multivariate_kernel_weight<S: Smoother + ?Sized>(
    k: &S,
    bandwidth: &BandwidthMatrix,
    nu: &[f64],
    x: &[f64],
) -> Result<f64, KernelError> {
    if nu.len() != bandwidth.dim() || x.len() != bandwidth.dim() {
        return Err(KernelError::Dimension {
            bandwidth: bandwidth.dim(),
            nu: nu.len(),
            x: x.len(),
        });
    }
    Ok(product_weight(k, bandwidth.entries(), nu, x))
}

#[inline]
pub(crate) fn product_weight<S: Smoother + ?Sized>(k: &S, h: &[f64], nu: &[f64], x: &[f64]) -> f64 {
    let mut value = 1.0;
    let mut det = 1.0;
    for ((hi, ni), xi) in h.iter().zip(nu).zip(x) {
        value *= k.evaluate((ni - xi) / hi);
        det *= hi;
    }
    value / det
}

/// Composite Simpson rule with `nodes` (odd, >= 3) equally spaced points.
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, nodes: usize) -> f64 {
    let nodes = if nodes.is_multiple_of(2) { nodes + 1 } else { nodes.max(3) };
    let intervals = nodes - 1;
    let step = (b - a) / intervals as f64;
    let mut acc = f(a) + f(b);
    for i in 1..intervals {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + step * i as f64);
    }
    acc * step / 3.0
}

/// Simpson on `[-20, 20]` with 4001 nodes, the grid used for kernel moment checks.
pub fn kernel_moment<S: Smoother + ?Sized>(k: &S, power: i32) -> f64 {
    simpson(|u| u.powi(power) * k.evaluate(u), -20.0, 20.0, 4001)
}

/// Builds a boxed smoother from a kernel choice.
pub fn boxed_kernel(order: Option<usize>) -> Result<Box<dyn Smoother>, KernelError> {
    match order {
        None => Ok(Box::new(GaussianKernel)),
        Some(r) => Ok(Box::new(make_high_order(GaussianKernel, r)?)),
    }
}

//! NGGP prior mathematics.
//!
//! The generalized gamma Lévy intensity is
//! `λ(ds) = a / Γ(1-σ) · s^(-1-σ) · e^(-τ s) ds`. Everything the engines need
//! from it reduces to three quantities: the tilted moments `κ_m(u)`, the
//! Laplace exponent `φ(u)`, and the density of the auxiliary variable `U`
//! whose mode enters the new-cluster weight `a (Û + τ)^σ`.

use alloc::format;
use alloc::vec::Vec;

use crate::math::{exp, ln, ln_1p, ln_gamma, normalize_log_weights, pow};
use crate::{Error, Result};

/// Hyperparameters `(a, σ, τ)` of the generalized gamma Lévy measure.
///
/// `σ = 0` is the Dirichlet process, `σ = 0.5` the normalized inverse
/// Gaussian process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NggpParams {
    a: f64,
    sigma: f64,
    tau: f64,
}

impl NggpParams {
    pub fn new(a: f64, sigma: f64, tau: f64) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) {
            return Err(Error::Config(format!("mass parameter a must be positive, got {a}")));
        }
        if !(0.0..1.0).contains(&sigma) {
            return Err(Error::Config(format!("sigma must lie in [0, 1), got {sigma}")));
        }
        if !(tau >= 0.0 && tau.is_finite()) {
            return Err(Error::Config(format!("tau must be non-negative, got {tau}")));
        }
        if sigma == 0.0 && tau == 0.0 {
            return Err(Error::Config("sigma = 0 requires tau > 0".into()));
        }
        Ok(Self { a, sigma, tau })
    }

    /// Dirichlet process with concentration `a`. `τ` only scales `U` and is
    /// fixed to 1.
    pub fn dirichlet(a: f64) -> Result<Self> {
        Self::new(a, 0.0, 1.0)
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn is_dirichlet(&self) -> bool {
        self.sigma == 0.0
    }
}

/// Mode of the auxiliary-variable density together with the inputs it was
/// computed from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuxiliaryU {
    pub u_hat: f64,
    pub n: u64,
    pub expected_k: f64,
}

/// `log κ_m(u) = log a + log Γ(m-σ) - log Γ(1-σ) - (m-σ) log(u+τ)`.
pub fn kappa_log(m: f64, u: f64, p: &NggpParams) -> Result<f64> {
    if !(m > p.sigma) {
        return Err(Error::Domain(format!("kappa requires m > sigma (m = {m}, sigma = {})", p.sigma)));
    }
    let shifted = u + p.tau;
    if !(shifted > 0.0) {
        return Err(Error::Domain(format!("kappa requires u + tau > 0 (got {shifted})")));
    }
    Ok(ln(p.a) + ln_gamma(m - p.sigma) - ln_gamma(1.0 - p.sigma) - (m - p.sigma) * ln(shifted))
}

/// Laplace exponent `φ(u) = ∫ (1 - e^(-u s)) λ(ds)`.
pub fn laplace_exponent(u: f64, p: &NggpParams) -> f64 {
    if p.sigma == 0.0 {
        return p.a * ln_1p(u / p.tau);
    }
    if p.tau == 0.0 {
        return p.a / p.sigma * pow(u, p.sigma);
    }
    // (a/σ) τ^σ ((1 + u/τ)^σ - 1), written to stay accurate for u << τ.
    p.a / p.sigma * pow(p.tau, p.sigma) * libm::expm1(p.sigma * ln_1p(u / p.tau))
}

fn laplace_exponent_slope(u: f64, p: &NggpParams) -> f64 {
    p.a * pow(u + p.tau, p.sigma - 1.0)
}

/// Unnormalized log density of the variational auxiliary variable:
/// `n log u - (n - a E[K]) log(u + τ) - φ(u)`.
///
/// `n` is the number of observations summarized. For `σ > 0`, `-φ(u)` equals
/// `-(a/σ)(u+τ)^σ` up to a constant; for `σ = 0` it is the gamma-process
/// exponent `-a log(1 + u/τ)`.
pub fn log_q_u(u: f64, n: u64, expected_k: f64, p: &NggpParams) -> Result<f64> {
    if !(u > 0.0) {
        return Err(Error::Domain(format!("log_q_u requires u > 0, got {u}")));
    }
    let n = n as f64;
    Ok(n * ln(u) - (n - p.a * expected_k) * ln(u + p.tau) - laplace_exponent(u, p))
}

/// Derivative of [`log_q_u`] with respect to `v = log u`.
pub fn log_q_u_slope(v: f64, n: u64, expected_k: f64, p: &NggpParams) -> f64 {
    let u = exp(v);
    let n = n as f64;
    let c = n - p.a * expected_k;
    n - c * (u / (u + p.tau)) - u * laplace_exponent_slope(u, p)
}

fn log_q_u_curvature(v: f64, n: u64, expected_k: f64, p: &NggpParams) -> f64 {
    let u = exp(v);
    let c = n as f64 - p.a * expected_k;
    let s = u + p.tau;
    -c * u * p.tau / (s * s) - p.a * u * pow(s, p.sigma - 2.0) * (p.tau + p.sigma * u)
}

const MAX_NEWTON_ITERS: usize = 300;
const MAX_BRACKET_V: f64 = 700.0;

/// Mode of the auxiliary-variable density, searched in `v = log u`.
///
/// The slope in `v` has exactly one sign change for `σ > 0` (it is a linear
/// function minus a convex one once written in `t = u/(u+τ)`), so a
/// safeguarded Newton iteration on a bracketing interval converges to the
/// global mode.
///
/// The mode grows like `E[K]^(1/σ)`; searches whose bracket would pass
/// `u = e^700` fail with [`Error::Convergence`] (use `σ = 0` instead of a
/// vanishing σ).
pub fn optimize_u(n: u64, expected_k: f64, p: &NggpParams) -> Result<AuxiliaryU> {
    if n == 0 {
        return Err(Error::Domain("optimize_u requires at least one observation".into()));
    }
    if p.sigma == 0.0 {
        return Err(Error::Domain("optimize_u is only defined for sigma > 0".into()));
    }
    if !(expected_k >= 0.0) {
        return Err(Error::Domain(format!("expected_k must be non-negative, got {expected_k}")));
    }
    let slope = |v: f64| log_q_u_slope(v, n, expected_k, p);

    let mut lo = -30.0_f64;
    let mut hi = 30.0_f64;
    let mut step = 30.0;
    while slope(lo) < 0.0 {
        if lo <= -MAX_BRACKET_V {
            return Err(Error::Convergence { last: exp(lo), iterations: 0 });
        }
        hi = lo;
        lo = (lo - step).max(-MAX_BRACKET_V);
        step *= 2.0;
    }
    step = 30.0;
    while slope(hi) > 0.0 {
        if hi >= MAX_BRACKET_V {
            return Err(Error::Convergence { last: exp(hi), iterations: 0 });
        }
        lo = hi;
        hi = (hi + step).min(MAX_BRACKET_V);
        step *= 2.0;
    }

    let mut v = 0.5 * (lo + hi);
    let mut dx_old = hi - lo;
    let mut dx = dx_old;
    let mut g = slope(v);
    let mut h = log_q_u_curvature(v, n, expected_k, p);
    for iter in 0..MAX_NEWTON_ITERS {
        if g.abs() < 1e-8 || (hi - lo) <= 4.0 * f64::EPSILON * v.abs().max(1.0) {
            return Ok(AuxiliaryU { u_hat: exp(v), n, expected_k });
        }
        if g > 0.0 {
            lo = v;
        } else {
            hi = v;
        }
        let newton_leaves = ((v - hi) * h - g) * ((v - lo) * h - g) > 0.0;
        if h >= 0.0 || newton_leaves || (2.0 * g).abs() > (dx_old * h).abs() {
            dx_old = dx;
            dx = 0.5 * (hi - lo);
            v = lo + dx;
        } else {
            dx_old = dx;
            dx = -g / h;
            v += dx;
        }
        g = slope(v);
        h = log_q_u_curvature(v, n, expected_k, p);
        if iter + 1 == MAX_NEWTON_ITERS {
            break;
        }
    }
    Err(Error::Convergence { last: exp(v), iterations: MAX_NEWTON_ITERS })
}

/// Log of the unnormalized new-cluster weight `a (Û + τ)^σ`.
///
/// Without an auxiliary value the bare mass `a` is used; callers only do this
/// when no instantiated cluster can receive mass.
pub fn log_new_cluster_weight(p: &NggpParams, u_hat: Option<f64>) -> f64 {
    match u_hat {
        Some(u) => ln(p.a) + p.sigma * ln(u + p.tau),
        None => ln(p.a),
    }
}

/// Log of `max(S_k - σ, 0)`; `-inf` for clipped clusters.
#[inline]
pub fn log_cluster_weight(s_mass: f64, p: &NggpParams) -> f64 {
    let w = s_mass - p.sigma;
    if w > 0.0 {
        ln(w)
    } else {
        f64::NEG_INFINITY
    }
}

/// Unnormalized log predictive weights: one entry per cluster followed by the
/// new-cluster entry.
pub fn log_predictive_weights(s: &[f64], u_hat: Option<f64>, p: &NggpParams) -> Vec<f64> {
    let mut out: Vec<f64> = s.iter().map(|&sk| log_cluster_weight(sk, p)).collect();
    out.push(log_new_cluster_weight(p, u_hat));
    out
}

/// Approximate predictive distribution over the `K` instantiated clusters and
/// one new cluster: `∝ max(S_k - σ, 0)` and `∝ a (Û + τ)^σ`.
///
/// If every instantiated entry is clipped the new cluster receives all mass.
pub fn predictive_weights(s: &[f64], u: Option<&AuxiliaryU>, p: &NggpParams) -> Result<Vec<f64>> {
    if let Some(bad) = s.iter().find(|&&x| !(x >= 0.0)) {
        return Err(Error::Domain(format!("cluster masses must be non-negative, got {bad}")));
    }
    if p.sigma > 0.0 && u.is_none() && !s.is_empty() {
        return Err(Error::Domain("sigma > 0 requires the auxiliary variable mode".into()));
    }
    let mut w = log_predictive_weights(s, u.map(|x| x.u_hat), p);
    normalize_log_weights(&mut w);
    Ok(w)
}

/// Folds one soft assignment into the per-cluster products `Π_i (1 - q̂_ik)`
/// and returns `E[K] = K - Σ_k Π_i (1 - q̂_ik)`.
///
/// `products` and `assignment` must be aligned (a freshly created cluster
/// enters with product 1).
pub fn expected_k_update(products: &mut [f64], assignment: &[f64]) -> f64 {
    debug_assert_eq!(products.len(), assignment.len());
    for (prod, &q) in products.iter_mut().zip(assignment) {
        *prod *= (1.0 - q).max(0.0);
    }
    expected_k(products)
}

pub fn expected_k(products: &[f64]) -> f64 {
    let k = products.len() as f64;
    (k - products.iter().sum::<f64>()).clamp(0.0, k)
}

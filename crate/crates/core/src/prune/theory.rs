//! Closed-form pruning error for Gaussian weights.
//!
//! With `W ~ N(0, σ²)` and a magnitude threshold chosen so a fraction `p` of
//! entries falls below it, every quantity reduces to the truncated second
//! moment `Q(t) = Φ(t) − ½ − t·φ(t)` at `t_p = Φ⁻¹((1+p)/2)`.

use crate::error::{Result, SalrError};
use crate::linalg::{normal_cdf_minus_half, normal_pdf, normal_quantile};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// `Q(t) = Φ(t) − ½ − t·φ(t) = ∫₀ᵗ u²φ(u) du` for `t ≥ 0`.
pub fn q_function(t: f64) -> Result<f64> {
    if t.is_nan() || t < 0.0 {
        return Err(SalrError::Domain(format!("Q(t) requires t >= 0, got {t}")));
    }
    if t == f64::INFINITY {
        return Ok(0.5);
    }
    if t < 0.25 {
        return Ok(q_series(t));
    }
    Ok(normal_cdf_minus_half(t) - t * normal_pdf(t))
}

// φ(0) Σ_k (−1)^k t^(2k+3) / (2^k k! (2k+3)); the direct form loses
// relative precision to cancellation for small t.
fn q_series(t: f64) -> f64 {
    let t2 = t * t;
    let mut term = t * t2; // t^(2k+3) / (2^k k!)
    let mut sum = 0.0;
    for k in 0..30 {
        let contrib = term / (2 * k + 3) as f64;
        sum += if k % 2 == 0 { contrib } else { -contrib };
        if contrib.abs() < 1e-18 * sum.abs() {
            break;
        }
        term *= t2 / (2.0 * (k + 1) as f64);
    }
    INV_SQRT_2PI * sum
}

fn check_sparsity(p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(SalrError::Domain(format!("sparsity must satisfy 0 <= p < 1, got {p}")));
    }
    Ok(())
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(SalrError::Domain(format!("sigma must be positive, got {sigma}")));
    }
    Ok(())
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(SalrError::Domain(format!("tau must be nonnegative, got {tau}")));
    }
    Ok(())
}

/// Standardized threshold `t_p = Φ⁻¹((1+p)/2)`.
pub fn standardized_threshold(p: f64) -> Result<f64> {
    check_sparsity(p)?;
    if p == 0.0 {
        return Ok(0.0);
    }
    normal_quantile((1.0 + p) / 2.0)
}

/// `T_p = σ·t_p`, so that `P(|W| ≤ T_p) = p`.
pub fn prune_threshold(p: f64, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    Ok(sigma * standardized_threshold(p)?)
}

/// Per-entry MSE of magnitude pruning at rate `p`: `2σ²·Q(t_p)`.
pub fn mse_closed_form(p: f64, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    Ok(2.0 * sigma * sigma * q_function(standardized_threshold(p)?)?)
}

/// Static mask on `W0`.
pub fn e1_closed(p: f64, sigma: f64) -> Result<f64> {
    mse_closed_form(p, sigma)
}

/// Mask chosen from `|U| = |W0 + Δ|`, applied to `W0` only:
/// `σ²τ²/(σ²+τ²)·p + 2σ⁴/(σ²+τ²)·Q(t_p)`.
pub fn e2_closed(p: f64, sigma: f64, tau: f64) -> Result<f64> {
    check_sigma(sigma)?;
    check_tau(tau)?;
    let q = q_function(standardized_threshold(p)?)?;
    let (s2, t2) = (sigma * sigma, tau * tau);
    let v2 = s2 + t2;
    Ok(s2 * t2 / v2 * p + 2.0 * s2 * s2 / v2 * q)
}

/// Mask chosen from `|U|`, applied to `U`: `2(σ²+τ²)·Q(t_p)`.
pub fn e3_closed(p: f64, sigma: f64, tau: f64) -> Result<f64> {
    check_sigma(sigma)?;
    check_tau(tau)?;
    let q = q_function(standardized_threshold(p)?)?;
    Ok(2.0 * (sigma * sigma + tau * tau) * q)
}

/// Differences between the three closed forms together with the
/// comparison identities commonly quoted for them.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ComparisonIdentities {
    pub e3_minus_e1: f64,
    pub e2_minus_e3: f64,
    pub e2_minus_e1: f64,
    /// `2τ²·Q(t_p)`; equals `e3 − e1`.
    pub two_tau2_q: f64,
    /// `2σ²τ²/(σ²+τ²)·t_p·φ(t_p)`; quoted as `e2 − e3`, it is in fact `e2 − e1`.
    pub two_s2t2_over_v2_t_phi: f64,
}

pub fn comparison_identities(p: f64, sigma: f64, tau: f64) -> Result<ComparisonIdentities> {
    let e1 = e1_closed(p, sigma)?;
    let e2 = e2_closed(p, sigma, tau)?;
    let e3 = e3_closed(p, sigma, tau)?;
    let t = standardized_threshold(p)?;
    let q = q_function(t)?;
    let (s2, t2) = (sigma * sigma, tau * tau);
    Ok(ComparisonIdentities {
        e3_minus_e1: e3 - e1,
        e2_minus_e3: e2 - e3,
        e2_minus_e1: e2 - e1,
        two_tau2_q: 2.0 * t2 * q,
        two_s2t2_over_v2_t_phi: 2.0 * s2 * t2 / (s2 + t2) * t * normal_pdf(t),
    })
}

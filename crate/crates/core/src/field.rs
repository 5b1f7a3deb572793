//! Smooth occupancy, the designed pseudo ground-truth distribution and the
//! Gaussian KL divergence used to supervise predicted uncertainty.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Shape, Vec3};

/// Exponents are clamped to this magnitude before `exp`.
pub const EXPONENT_CLAMP: f64 = 60.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FieldError {
    #[error("standard deviation must be positive and finite, got {0}")]
    NonPositiveSigma(f64),
    #[error("graininess coefficient alpha must be positive, got {0}")]
    InvalidAlpha(f64),
    #[error("design parameters must be positive, got k={k}, beta={beta}")]
    InvalidDesign { k: f64, beta: f64 },
}

/// Graininess of the smooth occupancy. Larger values approach binary occupancy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothOccParams {
    pub alpha: f64,
}

impl SmoothOccParams {
    pub fn new(alpha: f64) -> Result<Self, FieldError> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(FieldError::InvalidAlpha(alpha));
        }
        Ok(Self { alpha })
    }

    pub fn occupancy(&self, sdf: f64) -> f64 {
        smooth_occupancy(sdf, self.alpha)
    }
}

impl Default for SmoothOccParams {
    fn default() -> Self {
        Self { alpha: 20.0 }
    }
}

/// Peak standard deviation `k` and decay rate `beta` of the designed sigma.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignParams {
    pub k: f64,
    pub beta: f64,
}

impl DesignParams {
    pub fn new(k: f64, beta: f64) -> Result<Self, FieldError> {
        if !(k > 0.0 && beta > 0.0 && k.is_finite() && beta.is_finite()) {
            return Err(FieldError::InvalidDesign { k, beta });
        }
        Ok(Self { k, beta })
    }
}

impl Default for DesignParams {
    fn default() -> Self {
        Self { k: 0.6, beta: 4.0 }
    }
}

/// Gaussian over the occupancy value at one point. `sigma` is a standard
/// deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OccDistribution {
    pub mu: f64,
    pub sigma: f64,
}

impl OccDistribution {
    pub fn new(mu: f64, sigma: f64) -> Result<Self, FieldError> {
        check_sigma(sigma)?;
        Ok(Self { mu, sigma })
    }
}

fn check_sigma(sigma: f64) -> Result<(), FieldError> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(FieldError::NonPositiveSigma(sigma))
    }
}

/// Logistic sigmoid with the exponent clamped to `±EXPONENT_CLAMP`.
pub fn sigmoid(z: f64) -> f64 {
    let z = z.clamp(-EXPONENT_CLAMP, EXPONENT_CLAMP);
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `1 / (1 + exp(-alpha * sdf))`, with positive-inside `sdf`.
pub fn smooth_occupancy(sdf: f64, alpha: f64) -> f64 {
    sigmoid(alpha * sdf)
}

/// `k * exp(-beta * (mu_gt - 0.5)^2)`: largest on the surface, decaying as the
/// occupancy saturates toward 0 or 1.
pub fn designed_sigma(mu_gt: f64, params: &DesignParams) -> f64 {
    let d = mu_gt - 0.5;
    params.k * (-params.beta * d * d).exp()
}

/// Designed distribution for an occupancy value that is already known.
pub fn designed_from_occupancy(mu_gt: f64, params: &DesignParams) -> OccDistribution {
    OccDistribution {
        mu: mu_gt,
        sigma: designed_sigma(mu_gt, params),
    }
}

/// Pseudo ground-truth distribution at `p`: mean is the smooth occupancy of
/// the shape there, spread follows [`designed_sigma`].
pub fn designed_distribution(
    p: &Vec3,
    shape: &Shape,
    occ: &SmoothOccParams,
    design: &DesignParams,
) -> OccDistribution {
    designed_from_occupancy(occ.occupancy(shape.sdf(p)), design)
}

/// Closed-form `KL(pred || target)` between two univariate Gaussians.
pub fn gaussian_kl(pred: &OccDistribution, target: &OccDistribution) -> Result<f64, FieldError> {
    check_sigma(pred.sigma)?;
    check_sigma(target.sigma)?;
    Ok(gaussian_kl_unchecked(pred.mu, pred.sigma, target.mu, target.sigma))
}

#[inline]
pub(crate) fn gaussian_kl_unchecked(mu_p: f64, sigma_p: f64, mu_t: f64, sigma_t: f64) -> f64 {
    let dm = mu_p - mu_t;
    (sigma_t / sigma_p).ln() + (sigma_p * sigma_p + dm * dm) / (2.0 * sigma_t * sigma_t) - 0.5
}

/// Partial derivatives of [`gaussian_kl`] with respect to the predicted mean
/// and standard deviation.
#[inline]
pub(crate) fn gaussian_kl_grad(mu_p: f64, sigma_p: f64, mu_t: f64, sigma_t: f64) -> (f64, f64) {
    let inv_t2 = 1.0 / (sigma_t * sigma_t);
    ((mu_p - mu_t) * inv_t2, -1.0 / sigma_p + sigma_p * inv_t2)
}

//! Two-step exponential multistep update in log-SNR.
//!
//! With `lambda = -ln(sigma)` the probability-flow ODE reads
//! `dx/dlambda = denoised - x = epsilon`. The update is
//!
//! ```text
//! x_next = x + h * (coeff1 * epsilon + coeff2 * epsilon_previous)
//! coeff1 = phi1(-h) + phi2(-h) / r,   coeff2 = -phi2(-h) / r,   r = h_prev / h
//! ```
//!
//! The phi functions are evaluated at `-h` (decay along the step), so the
//! first-order part `x + h phi1(-h) epsilon` is exactly the DDIM update.
//!
//! `epsilon_previous` is the previous step's denoised value measured from the
//! current state, `denoised_previous - x`. Written that way the update is the
//! variable-step exponential Adams-Bashforth method on the denoised signal,
//! which is second order. Pairing the weights with the previous step's own
//! `denoised - x` instead only reaches first order.

use crate::latent::Latent;
use crate::scalar::Scalar;
use crate::schedule::log_snr_step;

use super::{check_sigma, euler_step, SamplerMemory};
use crate::error::Result;

const TAYLOR_CUTOFF: f64 = 1e-4;
const MIN_STEP_RATIO: f64 = 1e-8;
/// Learning-mode rescale of `coeff1` is limited to +-10%.
const COEFF_SCALE_MIN: f64 = 0.9;
const COEFF_SCALE_MAX: f64 = 1.1;

/// `(e^h - 1) / h`.
pub fn phi1<T: Scalar>(h: T) -> T {
    if h.abs() < T::lit(TAYLOR_CUTOFF) {
        T::one() + h / T::lit(2.0) + h * h / T::lit(6.0)
    } else {
        h.exp_m1() / h
    }
}

/// `(e^h - 1 - h) / h^2`.
pub fn phi2<T: Scalar>(h: T) -> T {
    if h.abs() < T::lit(TAYLOR_CUTOFF) {
        T::lit(0.5) + h / T::lit(6.0) + h * h / T::lit(24.0)
    } else {
        (h.exp_m1() - h) / (h * h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Res2mCoefficients<T> {
    pub coeff1: T,
    pub coeff2: T,
    /// Step-size ratio `h_prev / h`.
    pub c2: T,
    /// `phi1(-h)`; equals `coeff1 + coeff2`.
    pub phi1_h: T,
    /// `phi2(-h)`.
    pub phi2_h: T,
}

impl<T: Scalar> Res2mCoefficients<T> {
    /// Multiplies `coeff1` by `scale` and moves the difference into `coeff2`
    /// so that `coeff1 + coeff2` is unchanged.
    pub fn rescaled(self, scale: T) -> Self {
        let total = self.coeff1 + self.coeff2;
        let coeff1 = self.coeff1 * scale;
        Self {
            coeff1,
            coeff2: total - coeff1,
            ..self
        }
    }
}

/// `None` marks an invalid geometry; callers take the Euler branch.
pub fn res2m_coefficients<T: Scalar>(log_snr_step: T, log_snr_step_previous: T) -> Option<Res2mCoefficients<T>> {
    let h = log_snr_step;
    if !(h > T::zero()) || !h.is_finite() || !log_snr_step_previous.is_finite() {
        return None;
    }
    let r = log_snr_step_previous / h;
    if !(r > T::lit(MIN_STEP_RATIO)) || !r.is_finite() {
        return None;
    }
    let p1 = phi1(-h);
    let p2 = phi2(-h);
    let coeffs = Res2mCoefficients {
        coeff1: p1 + p2 / r,
        coeff2: -p2 / r,
        c2: r,
        phi1_h: p1,
        phi2_h: p2,
    };
    let finite = [coeffs.coeff1, coeffs.coeff2, p1, p2].iter().all(|v| v.is_finite());
    finite.then_some(coeffs)
}

/// One RES-2M update. Falls back to Euler on the first step, on a step onto
/// `sigma = 0`, and whenever the coefficients are invalid.
/// `coefficient_scale` is the learning-mode factor `1 / learning_ratio`,
/// clamped to `[0.9, 1.1]` here.
pub fn res2m_step<T: Scalar>(
    x: &Latent<T>,
    denoised: &Latent<T>,
    sigma_current: T,
    sigma_next: T,
    memory: &mut SamplerMemory<T>,
    coefficient_scale: Option<T>,
) -> Result<Latent<T>> {
    check_sigma(sigma_current)?;
    let epsilon = denoised.sub(x)?;
    let h = log_snr_step(sigma_current, sigma_next);

    let coeffs = match (h, memory.log_snr_step_previous, &memory.denoised_previous) {
        (Some(h), Some(h_prev), Some(_)) => res2m_coefficients(h, h_prev),
        _ => None,
    };

    let next = match (coeffs, h, &memory.denoised_previous) {
        (Some(mut c), Some(h), Some(prev)) => {
            if let Some(s) = coefficient_scale {
                let s = s.max(T::lit(COEFF_SCALE_MIN)).min(T::lit(COEFF_SCALE_MAX));
                c = c.rescaled(s);
            }
            let (a, b) = (h * c.coeff1, h * c.coeff2);
            let epsilon_previous = prev.sub(x)?;
            let blend = epsilon.zip_map(&epsilon_previous, |e, p| a * e + b * p)?;
            x.add(&blend)?
        }
        _ => euler_step(x, denoised, sigma_current, sigma_next)?,
    };

    memory.denoised_previous = Some(denoised.clone());
    memory.log_snr_step_previous = h;
    Ok(next)
}

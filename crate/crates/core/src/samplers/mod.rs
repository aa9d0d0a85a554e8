//! Per-step update rules and the trajectory runner.
//!
//! Every update takes the `denoised` estimate for the current step. On a
//! skipped step that estimate is `x + epsilon_hat`; the update code is the
//! same either way.

mod res2m;
mod trajectory;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::Latent;
use crate::scalar::Scalar;

pub use res2m::{phi1, phi2, res2m_coefficients, res2m_step, Res2mCoefficients};
pub use trajectory::{run_trajectory, StepLog, StepOutcome, Trajectory, TrajectoryResult, TrajectorySettings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    /// First-order Euler; also stands in for RES-2S and DPM++ 2S.
    Euler,
    Ddim,
    /// Adams-Bashforth 2 in sigma (DPM++ 2M, LMS).
    Ab2,
    /// Exponential two-step multistep in log-SNR.
    Res2m,
}

impl SamplerKind {
    pub const ALL: [SamplerKind; 4] = [Self::Euler, Self::Ddim, Self::Ab2, Self::Res2m];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Euler => "euler",
            Self::Ddim => "ddim",
            Self::Ab2 => "ab2",
            Self::Res2m => "res2m",
        }
    }

    /// RES-family samplers apply the extra magnitude guard on predictions.
    pub fn is_res_family(self) -> bool {
        matches!(self, Self::Res2m)
    }
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One-step memory of the multistep samplers. Empty until the first step
/// completes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SamplerMemory<T> {
    pub derivative_previous: Option<Latent<T>>,
    /// Denoised value of the previous step (RES-2M).
    pub denoised_previous: Option<Latent<T>>,
    pub log_snr_step_previous: Option<T>,
}

impl<T: Scalar> SamplerMemory<T> {
    pub fn new() -> Self {
        Self {
            derivative_previous: None,
            denoised_previous: None,
            log_snr_step_previous: None,
        }
    }
}

/// Optional adjustments a stabilizer makes to a single update.
#[derive(Debug, Clone, PartialEq)]
pub struct StepAdjust<T> {
    /// Added to the ODE derivative (Euler, DDIM, AB2).
    pub derivative_correction: Option<Latent<T>>,
    /// RES-2M learning rescale of `coeff1`, sum-preserving.
    pub coefficient_scale: Option<T>,
}

impl<T> Default for StepAdjust<T> {
    fn default() -> Self {
        Self {
            derivative_correction: None,
            coefficient_scale: None,
        }
    }
}

pub(super) fn check_sigma<T: Scalar>(sigma_current: T) -> Result<()> {
    if !(sigma_current > T::zero()) {
        return Err(Error::Domain(format!(
            "sigma_current must be positive, got {sigma_current}"
        )));
    }
    Ok(())
}

/// `(x - denoised) / sigma`.
pub fn derivative<T: Scalar>(x: &Latent<T>, denoised: &Latent<T>, sigma: T) -> Result<Latent<T>> {
    check_sigma(sigma)?;
    x.zip_map(denoised, |a, b| (a - b) / sigma)
}

/// `x + (x - denoised) / sigma_current * (sigma_next - sigma_current)`.
/// A step onto `sigma_next = 0` returns `denoised` exactly.
pub fn euler_step<T: Scalar>(x: &Latent<T>, denoised: &Latent<T>, sigma_current: T, sigma_next: T) -> Result<Latent<T>> {
    euler_step_corrected(x, denoised, sigma_current, sigma_next, None)
}

fn euler_step_corrected<T: Scalar>(
    x: &Latent<T>,
    denoised: &Latent<T>,
    sigma_current: T,
    sigma_next: T,
    correction: Option<&Latent<T>>,
) -> Result<Latent<T>> {
    check_sigma(sigma_current)?;
    x.ensure_same_shape(denoised)?;
    if sigma_next == T::zero() {
        return Ok(denoised.clone());
    }
    let time = sigma_next - sigma_current;
    let mut d = derivative(x, denoised, sigma_current)?;
    if let Some(c) = correction {
        d = d.add(c)?;
    }
    x.add_scaled(&d, time)
}

/// `denoised + (sigma_next / sigma_current) * (x - denoised)`.
pub fn ddim_step<T: Scalar>(x: &Latent<T>, denoised: &Latent<T>, sigma_current: T, sigma_next: T) -> Result<Latent<T>> {
    check_sigma(sigma_current)?;
    let scale = sigma_next / sigma_current;
    denoised.zip_map(x, |d, xi| d + scale * (xi - d))
}

/// AB2 with the fixed `1.5 / -0.5` weights, Euler when no previous derivative
/// is stored. Stores the derivative it used.
pub fn ab2_step<T: Scalar>(
    x: &Latent<T>,
    denoised: &Latent<T>,
    sigma_current: T,
    sigma_next: T,
    memory: &mut SamplerMemory<T>,
) -> Result<Latent<T>> {
    ab2_step_corrected(x, denoised, sigma_current, sigma_next, memory, None)
}

fn ab2_step_corrected<T: Scalar>(
    x: &Latent<T>,
    denoised: &Latent<T>,
    sigma_current: T,
    sigma_next: T,
    memory: &mut SamplerMemory<T>,
    correction: Option<&Latent<T>>,
) -> Result<Latent<T>> {
    let mut d = derivative(x, denoised, sigma_current)?;
    if let Some(c) = correction {
        d = d.add(c)?;
    }
    let time = sigma_next - sigma_current;
    let next = if sigma_next == T::zero() {
        denoised.clone()
    } else {
        match &memory.derivative_previous {
            Some(prev) => {
                let (a, b) = (T::lit(1.5), T::lit(-0.5));
                let blend = d.zip_map(prev, |cur, old| a * cur + b * old)?;
                x.add_scaled(&blend, time)?
            }
            None => x.add_scaled(&d, time)?,
        }
    };
    memory.derivative_previous = Some(d);
    Ok(next)
}

/// Dispatches one update for `kind`, threading sampler memory.
pub fn sampler_step<T: Scalar>(
    kind: SamplerKind,
    x: &Latent<T>,
    denoised: &Latent<T>,
    sigma_current: T,
    sigma_next: T,
    memory: &mut SamplerMemory<T>,
    adjust: &StepAdjust<T>,
) -> Result<Latent<T>> {
    let correction = adjust.derivative_correction.as_ref();
    match kind {
        SamplerKind::Euler => euler_step_corrected(x, denoised, sigma_current, sigma_next, correction),
        SamplerKind::Ddim => match correction {
            // the correction lives in derivative form, where DDIM and Euler coincide
            Some(c) => euler_step_corrected(x, denoised, sigma_current, sigma_next, Some(c)),
            None => ddim_step(x, denoised, sigma_current, sigma_next),
        },
        SamplerKind::Ab2 => ab2_step_corrected(x, denoised, sigma_current, sigma_next, memory, correction),
        SamplerKind::Res2m => res2m_step(x, denoised, sigma_current, sigma_next, memory, adjust.coefficient_scale),
    }
}

/// The next state a sampler would produce from `epsilon` without touching
/// the caller's memory. Used by the latent-space skip gate.
pub fn preview_step<T: Scalar>(
    kind: SamplerKind,
    x: &Latent<T>,
    epsilon: &Latent<T>,
    sigma_current: T,
    sigma_next: T,
    memory: &SamplerMemory<T>,
) -> Result<Latent<T>> {
    let denoised = x.add(epsilon)?;
    let mut scratch = memory.clone();
    sampler_step(kind, x, &denoised, sigma_current, sigma_next, &mut scratch, &StepAdjust::default())
}

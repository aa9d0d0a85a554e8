//! Noise-scale schedules.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Strictly decreasing sequence of noise scales. Only the final entry may
/// be zero. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule<T> {
    sigmas: Vec<T>,
}

impl<T: Scalar> Schedule<T> {
    pub fn new(sigmas: Vec<T>) -> Result<Self> {
        if sigmas.len() < 2 {
            return Err(Error::Domain(format!(
                "schedule needs at least 2 sigmas, got {}",
                sigmas.len()
            )));
        }
        let last = sigmas.len() - 1;
        for (i, &s) in sigmas.iter().enumerate() {
            if !s.is_finite() || s < T::zero() || (s == T::zero() && i != last) {
                return Err(Error::Domain(format!("sigma[{i}] = {s} is not a valid noise scale")));
            }
        }
        for (i, pair) in sigmas.windows(2).enumerate() {
            if pair[0] <= pair[1] {
                return Err(Error::Ordering(format!(
                    "sigma[{i}] = {} is not greater than sigma[{}] = {}",
                    pair[0],
                    i + 1,
                    pair[1]
                )));
            }
        }
        Ok(Self { sigmas })
    }

    pub fn sigmas(&self) -> &[T] {
        &self.sigmas
    }

    /// Number of transitions, `len - 1`.
    pub fn steps(&self) -> usize {
        self.sigmas.len() - 1
    }

    pub fn sigma(&self, index: usize) -> T {
        self.sigmas[index]
    }

    pub fn first(&self) -> T {
        self.sigmas[0]
    }

    pub fn last(&self) -> T {
        self.sigmas[self.sigmas.len() - 1]
    }

    pub fn has_zero_terminal(&self) -> bool {
        self.last() == T::zero()
    }

    /// Step size in log-SNR for transition `n`: `ln(sigma[n] / sigma[n+1])`.
    pub fn log_snr_step(&self, n: usize) -> Result<T> {
        if n >= self.steps() {
            return Err(Error::Domain(format!(
                "transition {n} out of range for {} steps",
                self.steps()
            )));
        }
        log_snr_step(self.sigmas[n], self.sigmas[n + 1]).ok_or(Error::UndefinedLogSnr { index: n })
    }
}

/// `-ln(sigma_next) + ln(sigma_current)`, or `None` when `sigma_next` is zero.
pub fn log_snr_step<T: Scalar>(sigma_current: T, sigma_next: T) -> Option<T> {
    if sigma_next <= T::zero() {
        return None;
    }
    Some(-sigma_next.ln() + sigma_current.ln())
}

fn check_bounds<T: Scalar>(steps: usize, sigma_max: T, sigma_min: T) -> Result<()> {
    if steps == 0 {
        return Err(Error::Domain("steps must be at least 1".into()));
    }
    if !(sigma_max > T::zero() && sigma_min > T::zero()) || !sigma_max.is_finite() {
        return Err(Error::Domain(format!(
            "sigma bounds must be positive and finite, got max={sigma_max} min={sigma_min}"
        )));
    }
    if sigma_min >= sigma_max {
        return Err(Error::Ordering(format!(
            "sigma_min {sigma_min} must be below sigma_max {sigma_max}"
        )));
    }
    Ok(())
}

fn finish<T: Scalar>(mut sigmas: Vec<T>, append_zero: bool) -> Result<Schedule<T>> {
    if append_zero {
        sigmas.push(T::zero());
    }
    Schedule::new(sigmas)
}

/// `steps + 1` sigmas uniformly spaced in log-SNR between the bounds, with
/// an extra terminal zero when `append_zero` is set. Endpoints are exact.
pub fn make_simple_schedule<T: Scalar>(
    steps: usize,
    sigma_max: T,
    sigma_min: T,
    append_zero: bool,
) -> Result<Schedule<T>> {
    check_bounds(steps, sigma_max, sigma_min)?;
    let lo = sigma_max.ln();
    let hi = sigma_min.ln();
    let n = T::lit(steps as f64);
    let sigmas = (0..=steps)
        .map(|i| match i {
            0 => sigma_max,
            i if i == steps => sigma_min,
            i => (lo + (hi - lo) * (T::lit(i as f64) / n)).exp(),
        })
        .collect();
    finish(sigmas, append_zero)
}

/// Karras et al. ramp: `(max^(1/rho) + t * (min^(1/rho) - max^(1/rho)))^rho`.
pub fn make_karras_schedule<T: Scalar>(
    steps: usize,
    sigma_max: T,
    sigma_min: T,
    rho: T,
    append_zero: bool,
) -> Result<Schedule<T>> {
    check_bounds(steps, sigma_max, sigma_min)?;
    if !(rho > T::zero()) || !rho.is_finite() {
        return Err(Error::Domain(format!("rho must be positive, got {rho}")));
    }
    let inv = T::one() / rho;
    let max_inv = sigma_max.powf(inv);
    let min_inv = sigma_min.powf(inv);
    let n = T::lit(steps as f64);
    let sigmas = (0..=steps)
        .map(|i| match i {
            0 => sigma_max,
            i if i == steps => sigma_min,
            i => (max_inv + T::lit(i as f64) / n * (min_inv - max_inv)).powf(rho),
        })
        .collect();
    finish(sigmas, append_zero)
}

/// High-noise stage followed by low-noise stage; an exactly repeated
/// junction sigma is kept once.
pub fn compose_two_stage<T: Scalar>(first: &Schedule<T>, second: &Schedule<T>) -> Result<Schedule<T>> {
    let junction_hi = first.last();
    let junction_lo = second.first();
    if junction_hi < junction_lo {
        return Err(Error::Composition {
            last_first: junction_hi.as_f64(),
            first_second: junction_lo.as_f64(),
        });
    }
    let skip = usize::from(junction_hi == junction_lo);
    let sigmas: Vec<T> = first
        .sigmas
        .iter()
        .chain(second.sigmas.iter().skip(skip))
        .copied()
        .collect();
    Schedule::new(sigmas).map_err(|e| match e {
        Error::Domain(msg) => Error::Domain(format!("two-stage composition: {msg}")),
        other => other,
    })
}

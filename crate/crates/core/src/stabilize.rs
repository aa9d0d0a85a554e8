//! Screening of predicted epsilons and the two stabilizers applied on skip
//! steps.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::latent::Latent;
use crate::scalar::Scalar;

pub const ABS_FLOOR: f64 = 1e-8;
pub const REL_FLOOR: f64 = 1e-6;
pub const RES_MAX_REL: f64 = 50.0;
pub const LEARNING_RATIO_MIN: f64 = 0.5;
pub const LEARNING_RATIO_MAX: f64 = 2.0;
pub const DEFAULT_BETA: f64 = 0.995;
pub const DEFAULT_CURVATURE_SCALE: f64 = 2.0;
/// Cap on `|correction| / (|derivative_hat| + 1e-8)`.
pub const GRAD_EST_MAX_REL: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationReason {
    Ok,
    Nonfinite,
    BelowAbsFloor,
    BelowRelFloor,
    TooLargeRel,
}

impl ValidationReason {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ok => "ok",
            Self::Nonfinite => "nonfinite",
            Self::BelowAbsFloor => "below_abs_floor",
            Self::BelowRelFloor => "below_rel_floor",
            Self::TooLargeRel => "too_large_rel",
        }
    }
}

impl fmt::Display for ValidationReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValidationOutcome {
    pub reason: ValidationReason,
}

impl ValidationOutcome {
    pub const OK: Self = Self {
        reason: ValidationReason::Ok,
    };

    pub fn accepted(self) -> bool {
        self.reason == ValidationReason::Ok
    }

    fn reject(reason: ValidationReason) -> Self {
        Self { reason }
    }
}

/// Shared checks for every sampler: finite values and norm, absolute floor,
/// and a floor relative to the last real epsilon when one exists.
pub fn validate_epsilon<T: Scalar>(epsilon_hat: &Latent<T>, epsilon_prev: Option<&Latent<T>>) -> ValidationOutcome {
    let norm = epsilon_hat.norm();
    if !epsilon_hat.is_finite() || !norm.is_finite() {
        return ValidationOutcome::reject(ValidationReason::Nonfinite);
    }
    if norm < T::lit(ABS_FLOOR) {
        return ValidationOutcome::reject(ValidationReason::BelowAbsFloor);
    }
    if let Some(prev) = epsilon_prev {
        if norm < T::lit(REL_FLOOR) * prev.norm() {
            return ValidationOutcome::reject(ValidationReason::BelowRelFloor);
        }
    }
    ValidationOutcome::OK
}

/// Extra cap used by the RES family: reject when `|eps_hat| > 50 |eps_prev|`.
pub fn res_magnitude_guard<T: Scalar>(epsilon_hat: &Latent<T>, epsilon_prev: &Latent<T>) -> ValidationOutcome {
    if epsilon_hat.norm() > T::lit(RES_MAX_REL) * epsilon_prev.norm() {
        ValidationOutcome::reject(ValidationReason::TooLargeRel)
    } else {
        ValidationOutcome::OK
    }
}

/// EMA of `|eps_hat| / |eps_real|`, clamped to `[0.5, 2.0]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearningState<T> {
    ratio: T,
    beta: T,
}

impl<T: Scalar> LearningState<T> {
    /// Starts at ratio 1. `beta` is clamped into `[0, 1]`.
    pub fn new(beta: T) -> Self {
        Self {
            ratio: T::one(),
            beta: beta.max(T::zero()).min(T::one()),
        }
    }

    pub fn with_ratio(beta: T, ratio: T) -> Self {
        Self {
            ratio: clamp_ratio(ratio),
            ..Self::new(beta)
        }
    }

    pub fn ratio(&self) -> T {
        self.ratio
    }

    pub fn beta(&self) -> T {
        self.beta
    }

    /// Folds in one observation and returns the updated state.
    pub fn observe_value(self, observation: T) -> Self {
        let next = self.beta * self.ratio + (T::one() - self.beta) * observation;
        Self {
            ratio: clamp_ratio(next),
            beta: self.beta,
        }
    }

    pub fn observe(self, epsilon_hat: &Latent<T>, epsilon_real: &Latent<T>) -> Self {
        let obs = epsilon_hat.norm() / (epsilon_real.norm() + T::lit(ABS_FLOOR));
        self.observe_value(obs)
    }

    /// `eps_hat / ratio`.
    pub fn apply(&self, epsilon_hat: &Latent<T>) -> Latent<T> {
        let ratio = self.ratio;
        epsilon_hat.map(|v| v / ratio)
    }
}

fn clamp_ratio<T: Scalar>(r: T) -> T {
    // NaN observations leave the ratio pinned at the lower bound
    if r.is_nan() {
        return T::lit(LEARNING_RATIO_MIN);
    }
    r.max(T::lit(LEARNING_RATIO_MIN)).min(T::lit(LEARNING_RATIO_MAX))
}

pub fn learning_observe<T: Scalar>(state: LearningState<T>, epsilon_hat: &Latent<T>, epsilon_real: &Latent<T>) -> LearningState<T> {
    state.observe(epsilon_hat, epsilon_real)
}

pub fn learning_apply<T: Scalar>(state: &LearningState<T>, epsilon_hat: &Latent<T>) -> Latent<T> {
    state.apply(epsilon_hat)
}

/// `(curvature_scale - 1) * (d_hat - d_prev)`, rescaled so its norm is at
/// most `0.25 * (|d_hat| + 1e-8)`.
pub fn grad_est_correction<T: Scalar>(
    derivative_hat: &Latent<T>,
    derivative_previous: &Latent<T>,
    curvature_scale: T,
) -> Result<Latent<T>> {
    let factor = curvature_scale - T::one();
    let raw = derivative_hat.zip_map(derivative_previous, |a, b| factor * (a - b))?;
    let raw_norm = raw.norm();
    let limit = T::lit(GRAD_EST_MAX_REL) * (derivative_hat.norm() + T::lit(ABS_FLOOR));
    if raw_norm > limit {
        Ok(raw.scale(limit / raw_norm))
    } else {
        Ok(raw)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum StabilizerMode {
    #[default]
    #[serde(rename = "none")]
    None,
    #[serde(rename = "learning")]
    Learning,
    #[serde(rename = "grad_est")]
    GradEst,
    #[serde(rename = "learn+grad_est")]
    LearnGradEst,
}

impl StabilizerMode {
    pub fn learning(self) -> bool {
        matches!(self, Self::Learning | Self::LearnGradEst)
    }

    pub fn grad_est(self) -> bool {
        matches!(self, Self::GradEst | Self::LearnGradEst)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Learning => "learning",
            Self::GradEst => "grad_est",
            Self::LearnGradEst => "learn+grad_est",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilizerConfig<T> {
    pub mode: StabilizerMode,
    pub beta: T,
    pub curvature_scale: T,
}

impl<T: Scalar> Default for StabilizerConfig<T> {
    fn default() -> Self {
        Self {
            mode: StabilizerMode::None,
            beta: T::lit(DEFAULT_BETA),
            curvature_scale: T::lit(DEFAULT_CURVATURE_SCALE),
        }
    }
}

impl<T: Scalar> StabilizerConfig<T> {
    pub fn with_mode(mode: StabilizerMode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }
}

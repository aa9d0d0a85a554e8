//! Per-step REAL / SKIP policies and their guard rails.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extrapolation::{predict, predict_with_fallback, EpsilonHistory, PredictorOrder};
use crate::latent::Latent;
use crate::samplers::{preview_step, SamplerKind, SamplerMemory};
use crate::scalar::Scalar;

pub const DEFAULT_PROTECT_FIRST: usize = 1;
pub const DEFAULT_PROTECT_LAST: usize = 1;
pub const DEFAULT_ANCHOR_INTERVAL: usize = 4;
pub const DEFAULT_MAX_CONSECUTIVE_SKIPS: usize = 2;
/// Real epsilons needed before the dual-predictor gate can run.
pub const GATE_MIN_HISTORY: usize = 3;
const RMS_FLOOR: f64 = 1e-6;

/// Which space the adaptive gate measures the h3/h2 discrepancy in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateSpace {
    /// Compare the two predicted epsilons.
    #[default]
    Epsilon,
    /// Compare the next states the sampler would produce from each.
    State,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SkipMode {
    None,
    Fixed {
        order: PredictorOrder,
        skip_calls: usize,
    },
    Adaptive {
        tolerance: f64,
        anchor_interval: usize,
        max_consecutive_skips: usize,
        gate: GateSpace,
    },
    /// Skip exactly these step indices. Overrides every guard rail.
    Explicit {
        order: PredictorOrder,
        indices: BTreeSet<usize>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkipConfig {
    pub mode: SkipMode,
    pub protect_first_steps: usize,
    pub protect_last_steps: usize,
}

impl Default for SkipConfig {
    fn default() -> Self {
        Self::none()
    }
}

impl SkipConfig {
    pub fn none() -> Self {
        Self::with_mode(SkipMode::None)
    }

    pub fn with_mode(mode: SkipMode) -> Self {
        Self {
            mode,
            protect_first_steps: DEFAULT_PROTECT_FIRST,
            protect_last_steps: DEFAULT_PROTECT_LAST,
        }
    }

    pub fn fixed(order: PredictorOrder, skip_calls: usize) -> Self {
        Self::with_mode(SkipMode::Fixed { order, skip_calls })
    }

    /// Adaptive gate with the default guard rails (anchor 4, at most 2 in a row).
    pub fn adaptive(tolerance: f64) -> Self {
        Self::with_mode(SkipMode::Adaptive {
            tolerance,
            anchor_interval: DEFAULT_ANCHOR_INTERVAL,
            max_consecutive_skips: DEFAULT_MAX_CONSECUTIVE_SKIPS,
            gate: GateSpace::Epsilon,
        })
    }

    pub fn explicit(order: PredictorOrder, indices: impl IntoIterator<Item = usize>) -> Self {
        Self::with_mode(SkipMode::Explicit {
            order,
            indices: indices.into_iter().collect(),
        })
    }

    pub fn protect(mut self, first: usize, last: usize) -> Self {
        self.protect_first_steps = first;
        self.protect_last_steps = last;
        self
    }

    pub fn validate(&self, total_steps: usize) -> Result<()> {
        match &self.mode {
            SkipMode::None => {}
            SkipMode::Fixed { skip_calls, .. } => {
                if *skip_calls < 1 {
                    return Err(Error::Config("skip_calls must be at least 1".into()));
                }
            }
            SkipMode::Adaptive {
                tolerance,
                anchor_interval,
                max_consecutive_skips,
                ..
            } => {
                if tolerance.is_nan() || *tolerance < 0.0 {
                    return Err(Error::Config(format!("tolerance must be non-negative, got {tolerance}")));
                }
                if *anchor_interval < 1 {
                    return Err(Error::Config("anchor_interval must be at least 1".into()));
                }
                if *max_consecutive_skips < 1 {
                    return Err(Error::Config("max_consecutive_skips must be at least 1".into()));
                }
            }
            SkipMode::Explicit { indices, .. } => {
                if let Some(bad) = indices.iter().find(|&&i| i < 2 || i >= total_steps) {
                    return Err(Error::Config(format!(
                        "explicit skip index {bad} outside 2..{total_steps}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Position of `step_index` relative to the protected head and tail.
    pub fn window(&self, step_index: usize, total_steps: usize) -> Window {
        if step_index < self.protect_first_steps {
            Window::Head
        } else if step_index + self.protect_last_steps >= total_steps {
            Window::Tail
        } else {
            Window::Open
        }
    }

    /// Predictor used for shadow predictions on real steps.
    pub fn shadow_order(&self) -> PredictorOrder {
        match &self.mode {
            SkipMode::None => PredictorOrder::H2,
            SkipMode::Fixed { order, .. } | SkipMode::Explicit { order, .. } => *order,
            SkipMode::Adaptive { .. } => PredictorOrder::H3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    Open,
    Head,
    Tail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum DecisionKind {
    Real,
    Skip,
}

impl DecisionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Real => "REAL",
            Self::Skip => "SKIP",
        }
    }
}

impl fmt::Display for DecisionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    /// Skipping disabled.
    None,
    ProtectedHead,
    ProtectedTail,
    InsufficientHistory,
    Cadence,
    GateAccept,
    GateReject,
    AnchorForced,
    MaxConsecutive,
    Explicit,
    ValidationReject,
}

impl SkipReason {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::ProtectedHead => "protected_head",
            Self::ProtectedTail => "protected_tail",
            Self::InsufficientHistory => "insufficient_history",
            Self::Cadence => "cadence",
            Self::GateAccept => "gate_accept",
            Self::GateReject => "gate_reject",
            Self::AnchorForced => "anchor_forced",
            Self::MaxConsecutive => "max_consecutive",
            Self::Explicit => "explicit",
            Self::ValidationReject => "validation_reject",
        }
    }
}

impl fmt::Display for SkipReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// SKIP decisions always carry the predictor order and the prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDecision<T> {
    pub kind: DecisionKind,
    pub reason: SkipReason,
    pub predictor_order_used: Option<PredictorOrder>,
    pub epsilon_hat: Option<Latent<T>>,
}

impl<T: Scalar> StepDecision<T> {
    pub fn real(reason: SkipReason) -> Self {
        Self {
            kind: DecisionKind::Real,
            reason,
            predictor_order_used: None,
            epsilon_hat: None,
        }
    }

    pub fn skip(reason: SkipReason, order: PredictorOrder, epsilon_hat: Latent<T>) -> Self {
        Self {
            kind: DecisionKind::Skip,
            reason,
            predictor_order_used: Some(order),
            epsilon_hat: Some(epsilon_hat),
        }
    }

    pub fn is_skip(&self) -> bool {
        self.kind == DecisionKind::Skip
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GuardState {
    pub consecutive_skips: usize,
    /// Steps since the last REAL call.
    pub steps_since_anchor: usize,
}

/// SKIP advances both counters, REAL resets both.
pub fn update_guard(guard: GuardState, kind: DecisionKind) -> GuardState {
    match kind {
        DecisionKind::Skip => GuardState {
            consecutive_skips: guard.consecutive_skips + 1,
            steps_since_anchor: guard.steps_since_anchor + 1,
        },
        DecisionKind::Real => GuardState::default(),
    }
}

/// `sqrt(mean(t^2))`.
pub fn rms<T: Scalar>(t: &Latent<T>) -> Result<T> {
    if t.is_empty() {
        return Err(Error::Domain("rms of an empty latent".into()));
    }
    Ok((t.sum_squares() / T::lit(t.len() as f64)).sqrt())
}

/// `rms(high - low) / max(rms(high), 1e-6)`.
pub fn relative_error<T: Scalar>(high: &Latent<T>, low: &Latent<T>) -> Result<T> {
    let diff = rms(&high.sub(low)?)?;
    Ok(diff / rms(high)?.max(T::lit(RMS_FLOOR)))
}

/// Fixed hN/sK cadence: after `anchor = max(protect_first, order history)`,
/// skip every `(skip_calls + 1)`-th step. Returns false for other modes.
pub fn fixed_skip_decision(step_index: usize, total_steps: usize, history_len: usize, config: &SkipConfig) -> bool {
    let SkipMode::Fixed { order, skip_calls } = config.mode else {
        return false;
    };
    if config.window(step_index, total_steps) != Window::Open {
        return false;
    }
    let history_order = order.required_history();
    if history_len < history_order {
        return false;
    }
    let anchor = config.protect_first_steps.max(history_order);
    if step_index < anchor {
        return false;
    }
    let cycle_length = skip_calls + 1;
    (step_index - anchor) % cycle_length == cycle_length - 1
}

fn tolerance_accepts<T: Scalar>(error: T, tolerance: f64) -> bool {
    // compared in f64 so an infinite tolerance accepts any finite error
    error.as_f64() <= tolerance
}

/// Guard checks in order: history, anchor, consecutive cap, window.
fn adaptive_guard(history_len: usize, guard: GuardState, anchor_interval: usize, max_consecutive: usize, window: Window) -> Option<SkipReason> {
    if history_len < GATE_MIN_HISTORY {
        Some(SkipReason::InsufficientHistory)
    } else if guard.steps_since_anchor + 1 >= anchor_interval {
        Some(SkipReason::AnchorForced)
    } else if guard.consecutive_skips >= max_consecutive {
        Some(SkipReason::MaxConsecutive)
    } else {
        match window {
            Window::Open => None,
            Window::Head => Some(SkipReason::ProtectedHead),
            Window::Tail => Some(SkipReason::ProtectedTail),
        }
    }
}

/// Guard rails followed by the epsilon-space h3/h2 gate. Non-adaptive
/// configs yield `REAL(none)`.
pub fn adaptive_skip_decision<T: Scalar>(
    history: &EpsilonHistory<T>,
    guard: GuardState,
    config: &SkipConfig,
    window: Window,
) -> Result<StepDecision<T>> {
    let SkipMode::Adaptive {
        tolerance,
        anchor_interval,
        max_consecutive_skips,
        ..
    } = config.mode
    else {
        return Ok(StepDecision::real(SkipReason::None));
    };
    if let Some(reason) = adaptive_guard(history.len(), guard, anchor_interval, max_consecutive_skips, window) {
        return Ok(StepDecision::real(reason));
    }
    epsilon_space_gate(history, tolerance)
}

/// Accepts `h3` when `relative_error(h3, h2) <= tolerance`.
pub fn epsilon_space_gate<T: Scalar>(history: &EpsilonHistory<T>, tolerance: f64) -> Result<StepDecision<T>> {
    let high = predict(history, PredictorOrder::H3)?;
    let low = predict(history, PredictorOrder::H2)?;
    let error = relative_error(&high, &low)?;
    Ok(if tolerance_accepts(error, tolerance) {
        StepDecision::skip(SkipReason::GateAccept, PredictorOrder::H3, high)
    } else {
        StepDecision::real(SkipReason::GateReject)
    })
}

/// Same gate, but the discrepancy is measured between the next states the
/// sampler would reach from the h3 and h2 predictions.
#[allow(clippy::too_many_arguments)]
pub fn adaptive_state_space_gate<T: Scalar>(
    x: &Latent<T>,
    sigma_current: T,
    sigma_next: T,
    sampler: SamplerKind,
    memory: &SamplerMemory<T>,
    history: &EpsilonHistory<T>,
    tolerance: f64,
) -> Result<StepDecision<T>> {
    let high = predict(history, PredictorOrder::H3)?;
    let low = predict(history, PredictorOrder::H2)?;
    let x_high = preview_step(sampler, x, &high, sigma_current, sigma_next, memory)?;
    let x_low = preview_step(sampler, x, &low, sigma_current, sigma_next, memory)?;
    let error = relative_error(&x_high, &x_low)?;
    Ok(if tolerance_accepts(error, tolerance) {
        StepDecision::skip(SkipReason::GateAccept, PredictorOrder::H3, high)
    } else {
        StepDecision::real(SkipReason::GateReject)
    })
}

/// Parses `"h3, 6, 9, 12"`: optional leading order (default h2), then
/// 0-based indices. Indices 0 and 1, duplicates, and indices at or beyond
/// `total_steps` are dropped.
pub fn parse_explicit_skips(text: &str, total_steps: usize) -> Result<(PredictorOrder, BTreeSet<usize>)> {
    let mut order = PredictorOrder::H2;
    let mut indices = BTreeSet::new();
    let tokens = text.split(',').map(str::trim).filter(|t| !t.is_empty());
    for (pos, token) in tokens.enumerate() {
        if pos == 0 {
            if let Some(o) = PredictorOrder::parse(token) {
                order = o;
                continue;
            }
        }
        let index: usize = token.parse().map_err(|_| Error::Parse {
            token: token.to_string(),
        })?;
        if index >= 2 && index < total_steps {
            indices.insert(index);
        }
    }
    Ok((order, indices))
}

/// Everything a policy may look at when deciding a step.
pub struct DecisionContext<'a, T> {
    pub step_index: usize,
    pub total_steps: usize,
    pub history: &'a EpsilonHistory<T>,
    pub guard: GuardState,
    pub x: &'a Latent<T>,
    pub sigma_current: T,
    pub sigma_next: T,
    pub sampler: SamplerKind,
    pub memory: &'a SamplerMemory<T>,
}

/// Dispatches on the configured mode.
pub fn decide<T: Scalar>(config: &SkipConfig, ctx: &DecisionContext<'_, T>) -> Result<StepDecision<T>> {
    let window = config.window(ctx.step_index, ctx.total_steps);
    match &config.mode {
        SkipMode::None => Ok(StepDecision::real(SkipReason::None)),
        SkipMode::Fixed { order, .. } => {
            if fixed_skip_decision(ctx.step_index, ctx.total_steps, ctx.history.len(), config) {
                let (eps, used) = predict_with_fallback(ctx.history, *order)?;
                return Ok(StepDecision::skip(SkipReason::Cadence, used, eps));
            }
            let reason = match window {
                Window::Head => SkipReason::ProtectedHead,
                Window::Tail => SkipReason::ProtectedTail,
                Window::Open if ctx.history.len() < order.required_history() => SkipReason::InsufficientHistory,
                Window::Open => SkipReason::Cadence,
            };
            Ok(StepDecision::real(reason))
        }
        SkipMode::Adaptive {
            tolerance,
            anchor_interval,
            max_consecutive_skips,
            gate,
        } => {
            if let Some(reason) = adaptive_guard(ctx.history.len(), ctx.guard, *anchor_interval, *max_consecutive_skips, window) {
                return Ok(StepDecision::real(reason));
            }
            match gate {
                GateSpace::Epsilon => epsilon_space_gate(ctx.history, *tolerance),
                GateSpace::State => adaptive_state_space_gate(
                    ctx.x,
                    ctx.sigma_current,
                    ctx.sigma_next,
                    ctx.sampler,
                    ctx.memory,
                    ctx.history,
                    *tolerance,
                ),
            }
        }
        SkipMode::Explicit { order, indices } => {
            if !indices.contains(&ctx.step_index) {
                return Ok(StepDecision::real(SkipReason::Explicit));
            }
            match predict_with_fallback(ctx.history, *order) {
                Ok((eps, used)) => Ok(StepDecision::skip(SkipReason::Explicit, used, eps)),
                Err(Error::History { .. }) => Ok(StepDecision::real(SkipReason::InsufficientHistory)),
                Err(e) => Err(e),
            }
        }
    }
}

use std::time::{Duration, Instant};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::extrapolation::{predict_with_fallback, EpsilonHistory, PredictorOrder};
use crate::latent::Latent;
use crate::models::{CountingDenoiser, Denoiser};
use crate::scalar::Scalar;
use crate::schedule::Schedule;
use crate::skip::{decide, update_guard, DecisionContext, DecisionKind, GuardState, SkipConfig, SkipReason, StepDecision};
use crate::stabilize::{
    grad_est_correction, res_magnitude_guard, validate_epsilon, LearningState, StabilizerConfig, ValidationReason,
};

use super::{derivative, sampler_step, SamplerKind, SamplerMemory, StepAdjust};

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySettings<T> {
    pub sampler: SamplerKind,
    pub skip: SkipConfig,
    pub stabilizer: StabilizerConfig<T>,
}

impl<T: Scalar> TrajectorySettings<T> {
    /// Plain sampler, no skipping, no stabilizer.
    pub fn baseline(sampler: SamplerKind) -> Self {
        Self {
            sampler,
            skip: SkipConfig::none(),
            stabilizer: StabilizerConfig::default(),
        }
    }

    pub fn new(sampler: SamplerKind, skip: SkipConfig) -> Self {
        Self {
            sampler,
            skip,
            stabilizer: StabilizerConfig::default(),
        }
    }

    pub fn with_stabilizer(mut self, stabilizer: StabilizerConfig<T>) -> Self {
        self.stabilizer = stabilizer;
        self
    }
}

/// One row of the per-step log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepLog {
    pub step_index: usize,
    pub sigma_current: f64,
    pub sigma_next: f64,
    pub decision: DecisionKind,
    pub reason: SkipReason,
    pub predictor_order: Option<PredictorOrder>,
    /// Euclidean norm of the epsilon the sampler consumed.
    pub epsilon_norm: f64,
    pub learning_ratio: f64,
    /// Set whenever a prediction went through validation.
    pub validation_reason: Option<ValidationReason>,
    pub cumulative_nfe: usize,
    pub step_wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct StepOutcome<T> {
    pub x_next: Latent<T>,
    pub epsilon_used: Latent<T>,
    pub decision: StepDecision<T>,
    pub wall_time: Duration,
}

#[derive(Debug, Clone)]
pub struct TrajectoryResult<T> {
    pub final_latent: Latent<T>,
    pub log: Vec<StepLog>,
    pub nfe: usize,
    pub wall_time: Duration,
}

/// Post-processes every prediction before it is used (fault injection,
/// diagnostics). Receives the step index and the raw prediction.
pub type PredictionHook<'a, T> = Box<dyn FnMut(usize, Latent<T>) -> Latent<T> + 'a>;

/// Step-by-step driver of one sampling run. Owns all mutable run state:
/// the model wrapper, epsilon history, guard counters, sampler memory and
/// learning ratio.
pub struct Trajectory<'a, T: Scalar, D> {
    settings: TrajectorySettings<T>,
    schedule: &'a Schedule<T>,
    model: CountingDenoiser<D>,
    x: Latent<T>,
    step: usize,
    history: EpsilonHistory<T>,
    guard: GuardState,
    memory: SamplerMemory<T>,
    learning: Option<LearningState<T>>,
    last_real_derivative: Option<Latent<T>>,
    log: Vec<StepLog>,
    hook: Option<PredictionHook<'a, T>>,
}

impl<'a, T: Scalar, D: Denoiser<T>> Trajectory<'a, T, D> {
    pub fn new(settings: TrajectorySettings<T>, schedule: &'a Schedule<T>, model: D, x_start: Latent<T>) -> Result<Self> {
        settings.skip.validate(schedule.steps())?;
        if !x_start.is_finite() {
            return Err(Error::NonFinite);
        }
        let learning = settings
            .stabilizer
            .mode
            .learning()
            .then(|| LearningState::new(settings.stabilizer.beta));
        Ok(Self {
            settings,
            schedule,
            model: CountingDenoiser::new(model),
            x: x_start,
            step: 0,
            history: EpsilonHistory::new(),
            guard: GuardState::default(),
            memory: SamplerMemory::new(),
            learning,
            last_real_derivative: None,
            log: Vec::with_capacity(schedule.steps()),
            hook: None,
        })
    }

    pub fn with_prediction_hook(mut self, hook: impl FnMut(usize, Latent<T>) -> Latent<T> + 'a) -> Self {
        self.hook = Some(Box::new(hook));
        self
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.schedule.steps()
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn x(&self) -> &Latent<T> {
        &self.x
    }

    pub fn history(&self) -> &EpsilonHistory<T> {
        &self.history
    }

    pub fn guard(&self) -> GuardState {
        self.guard
    }

    pub fn memory(&self) -> &SamplerMemory<T> {
        &self.memory
    }

    pub fn log(&self) -> &[StepLog] {
        &self.log
    }

    pub fn nfe(&self) -> usize {
        self.model.calls()
    }

    pub fn learning_ratio(&self) -> Option<T> {
        self.learning.map(|l| l.ratio())
    }

    pub fn model(&self) -> &D {
        self.model.inner()
    }

    /// Asks the skip policy for a decision and executes it.
    pub fn step(&mut self) -> Result<StepOutcome<T>> {
        let decision = {
            let (sigma_current, sigma_next) = self.sigmas()?;
            let ctx = DecisionContext {
                step_index: self.step,
                total_steps: self.schedule.steps(),
                history: &self.history,
                guard: self.guard,
                x: &self.x,
                sigma_current,
                sigma_next,
                sampler: self.settings.sampler,
                memory: &self.memory,
            };
            decide(&self.settings.skip, &ctx)?
        };
        self.execute(decision)
    }

    fn sigmas(&self) -> Result<(T, T)> {
        if self.is_done() {
            return Err(Error::Domain(format!(
                "trajectory already finished after {} steps",
                self.schedule.steps()
            )));
        }
        Ok((self.schedule.sigma(self.step), self.schedule.sigma(self.step + 1)))
    }

    /// Executes `decision` for the current step. A SKIP decision goes
    /// through the prediction hook, learning scaling and validation; a
    /// rejected prediction is demoted to a REAL call.
    pub fn execute(&mut self, mut decision: StepDecision<T>) -> Result<StepOutcome<T>> {
        let started = Instant::now();
        let n = self.step;
        let (sigma_current, sigma_next) = self.sigmas()?;
        let kind = self.settings.sampler;
        let stab = self.settings.stabilizer;

        let mut validation = None;
        let mut raw_prediction = None;
        let mut epsilon_used = None;

        if decision.is_skip() {
            let mut predicted = decision
                .epsilon_hat
                .take()
                .ok_or_else(|| Error::Domain("SKIP decision without a prediction".into()))?;
            if let Some(hook) = self.hook.as_mut() {
                predicted = hook(n, predicted);
            }
            let scaled = match &self.learning {
                Some(state) => state.apply(&predicted),
                None => predicted.clone(),
            };
            let previous = self.history.latest().map(|r| &r.epsilon);
            let mut outcome = validate_epsilon(&scaled, previous);
            if outcome.accepted() && kind.is_res_family() {
                if let Some(prev) = previous {
                    outcome = res_magnitude_guard(&scaled, prev);
                }
            }
            validation = Some(outcome.reason);
            raw_prediction = Some(predicted);
            if outcome.accepted() {
                decision.epsilon_hat = Some(scaled.clone());
                epsilon_used = Some(scaled);
            } else {
                let attempted = decision.predictor_order_used;
                decision = StepDecision::real(SkipReason::ValidationReject);
                decision.predictor_order_used = attempted;
            }
        }

        let epsilon = match epsilon_used {
            Some(e) => e,
            None => {
                let denoised = self.model.denoise(&self.x, sigma_current)?;
                let eps = denoised.sub(&self.x)?;
                if !eps.is_finite() {
                    return Err(Error::NumericDivergence { step: n });
                }
                if let Some(state) = self.learning {
                    let shadow = match raw_prediction.take() {
                        Some(p) => Some(p),
                        None => predict_with_fallback(&self.history, self.settings.skip.shadow_order())
                            .ok()
                            .map(|(p, _)| p),
                    };
                    if let Some(shadow) = shadow {
                        self.learning = Some(state.observe(&shadow, &eps));
                    }
                }
                self.history.push(eps.clone(), n, sigma_current)?;
                eps
            }
        };

        // both paths hand the sampler x + epsilon
        let denoised = self.x.add(&epsilon)?;
        let mut adjust = StepAdjust::default();
        if decision.is_skip() {
            if stab.mode.grad_est() && kind != SamplerKind::Res2m && sigma_next > T::zero() {
                if let Some(prev) = &self.last_real_derivative {
                    let d_hat = derivative(&self.x, &denoised, sigma_current)?;
                    adjust.derivative_correction = Some(grad_est_correction(&d_hat, prev, stab.curvature_scale)?);
                }
            }
        } else {
            self.last_real_derivative = Some(derivative(&self.x, &denoised, sigma_current)?);
            if kind == SamplerKind::Res2m {
                if let Some(state) = &self.learning {
                    adjust.coefficient_scale = Some(T::one() / state.ratio());
                }
            }
        }

        let x_next = sampler_step(kind, &self.x, &denoised, sigma_current, sigma_next, &mut self.memory, &adjust)?;
        if !x_next.is_finite() {
            return Err(Error::NumericDivergence { step: n });
        }

        self.guard = update_guard(self.guard, decision.kind);
        let wall_time = started.elapsed();
        self.log.push(StepLog {
            step_index: n,
            sigma_current: sigma_current.as_f64(),
            sigma_next: sigma_next.as_f64(),
            decision: decision.kind,
            reason: decision.reason,
            predictor_order: decision.predictor_order_used,
            epsilon_norm: epsilon.norm().as_f64(),
            learning_ratio: self.learning.map_or(1.0, |l| l.ratio().as_f64()),
            validation_reason: validation,
            cumulative_nfe: self.model.calls(),
            step_wall_time_s: wall_time.as_secs_f64(),
        });
        self.x = x_next.clone();
        self.step += 1;
        Ok(StepOutcome {
            x_next,
            epsilon_used: epsilon,
            decision,
            wall_time,
        })
    }

    /// Runs the remaining steps.
    pub fn run(mut self) -> Result<TrajectoryResult<T>> {
        let started = Instant::now();
        while !self.is_done() {
            self.step()?;
        }
        Ok(TrajectoryResult {
            nfe: self.model.calls(),
            final_latent: self.x,
            log: self.log,
            wall_time: started.elapsed(),
        })
    }
}

/// Integrates `x_start` along `schedule` under `settings`.
pub fn run_trajectory<T: Scalar, D: Denoiser<T>>(
    settings: TrajectorySettings<T>,
    model: D,
    schedule: &Schedule<T>,
    x_start: Latent<T>,
) -> Result<TrajectoryResult<T>> {
    Trajectory::new(settings, schedule, model, x_start)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{GaussianMixtureDenoiser, ScriptedDenoiser};
    use crate::schedule::make_simple_schedule;
    use crate::stabilize::StabilizerMode;

    fn gaussian() -> GaussianMixtureDenoiser<f64> {
        GaussianMixtureDenoiser::single(Latent::from_vec(vec![0.5, -0.25, 1.0]).unwrap(), 0.8).unwrap()
    }

    fn x0() -> Latent<f64> {
        Latent::from_vec(vec![3.0, -7.0, 1.5]).unwrap()
    }

    #[test]
    fn baseline_calls_model_every_step() {
        let sched = make_simple_schedule(20, 10.0, 0.05, false).unwrap();
        let r = run_trajectory(TrajectorySettings::baseline(SamplerKind::Euler), gaussian(), &sched, x0()).unwrap();
        assert_eq!(r.nfe, 20);
        assert!(r.log.iter().all(|l| l.decision == DecisionKind::Real && l.reason == SkipReason::None));
        assert_eq!(r.log.last().unwrap().cumulative_nfe, 20);
    }

    #[test]
    fn fixed_cadence_nfe() {
        let sched = make_simple_schedule(20, 10.0, 0.05, false).unwrap();
        for (k, nfe) in [(3, 16), (4, 17)] {
            let settings = TrajectorySettings::new(SamplerKind::Euler, SkipConfig::fixed(PredictorOrder::H2, k));
            let r = run_trajectory(settings, gaussian(), &sched, x0()).unwrap();
            assert_eq!(r.nfe, nfe);
        }
    }

    #[test]
    fn finished_trajectory_refuses_more_steps() {
        let sched = make_simple_schedule(2, 1.0, 0.1, false).unwrap();
        let mut t = Trajectory::new(TrajectorySettings::baseline(SamplerKind::Ddim), &sched, gaussian(), x0()).unwrap();
        t.step().unwrap();
        t.step().unwrap();
        assert!(t.is_done());
        assert!(t.step().is_err());
    }

    #[test]
    fn validation_reject_falls_back_to_model() {
        // eps history [2, 1] extrapolates to exactly zero -> below the absolute floor
        let script: Vec<_> = [2.0, 1.0, 0.5, 0.25].iter().map(|&v| Latent::scalar(v)).collect();
        let sched = make_simple_schedule(4, 4.0, 0.5, false).unwrap();
        let settings = TrajectorySettings::new(SamplerKind::Euler, SkipConfig::explicit(PredictorOrder::H2, [2]));
        let r = run_trajectory(settings, ScriptedDenoiser::new(script), &sched, Latent::scalar(1.0)).unwrap();
        let row = &r.log[2];
        assert_eq!(row.decision, DecisionKind::Real);
        assert_eq!(row.reason, SkipReason::ValidationReject);
        assert_eq!(row.validation_reason, Some(ValidationReason::BelowAbsFloor));
        assert_eq!(row.cumulative_nfe, 3);
        assert_eq!(r.nfe, 4);
    }

    #[test]
    fn learning_ratio_is_logged() {
        let sched = make_simple_schedule(12, 10.0, 0.05, false).unwrap();
        let settings = TrajectorySettings::new(SamplerKind::Ab2, SkipConfig::fixed(PredictorOrder::H2, 2))
            .with_stabilizer(StabilizerConfig { beta: 0.5, ..StabilizerConfig::with_mode(StabilizerMode::Learning) });
        let r = run_trajectory(settings, gaussian(), &sched, x0()).unwrap();
        assert!(r.log.iter().any(|l| l.learning_ratio != 1.0));
        assert!(r.log.iter().all(|l| (0.5..=2.0).contains(&l.learning_ratio)));
    }

    #[test]
    fn divergence_is_reported_with_step() {
        let nan = Latent::from_raw(vec![1], vec![f64::NAN]).unwrap();
        let script = vec![Latent::scalar(1.0), nan, Latent::scalar(1.0)];
        let sched = make_simple_schedule(3, 4.0, 0.5, false).unwrap();
        let err = run_trajectory(TrajectorySettings::baseline(SamplerKind::Euler), ScriptedDenoiser::new(script), &sched, Latent::scalar(1.0))
            .unwrap_err();
        assert!(matches!(err, Error::NumericDivergence { step: 1 }), "{err:?}");
    }
}

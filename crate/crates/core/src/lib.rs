//! Training-free step skipping for diffusion ODE samplers.
//!
//! The sampler keeps a short history of the noise residual (`epsilon =
//! denoised - x`) observed on steps that actually call the model, and on
//! selected steps substitutes a finite-difference extrapolation of the next
//! epsilon for the model call. The sampler update rules themselves are left
//! untouched: a skipped step hands the sampler `denoised = x + epsilon_hat`
//! and everything downstream runs as usual.
//!
//! The crate is organised bottom-up:
//!
//! - [`schedule`]: noise-scale schedules and log-SNR step sizes.
//! - [`models`]: analytic denoisers with closed-form ground truth.
//! - [`extrapolation`]: the h2/h3/h4 epsilon predictors.
//! - [`skip`]: per-step REAL/SKIP policies and guard rails.
//! - [`stabilize`]: prediction validation and the learning / gradient
//!   estimation stabilizers.
//! - [`samplers`]: Euler, DDIM, AB2 and RES-2M updates and the trajectory
//!   runner.
//! - [`metrics`]: SSIM / RMSE / MAE and efficiency accounting.
//! - [`harness`]: JSON-configured experiment matrices with CSV and markdown
//!   output.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the harness
//! runs in `f64`. Concrete aliases for both widths are exported here.

// `!(x > 0)` is used deliberately so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod extrapolation;
pub mod harness;
pub mod latent;
pub mod metrics;
pub mod models;
pub mod samplers;
pub mod scalar;
pub mod schedule;
pub mod skip;
pub mod stabilize;

pub use error::{Error, Result};
pub use extrapolation::{EpsilonHistory, EpsilonRecord, PredictorOrder};
pub use latent::Latent;
pub use models::{CountingDenoiser, Denoiser, GaussianMixtureDenoiser, ScriptedDenoiser};
pub use samplers::{SamplerKind, SamplerMemory, Trajectory, TrajectorySettings};
pub use scalar::Scalar;
pub use schedule::Schedule;
pub use skip::{GuardState, SkipConfig, SkipMode, StepDecision};
pub use stabilize::{LearningState, StabilizerConfig, StabilizerMode};

/// Double-precision latent.
pub type Latent64 = Latent<f64>;
/// Single-precision latent.
pub type Latent32 = Latent<f32>;
pub type Schedule64 = Schedule<f64>;
pub type Schedule32 = Schedule<f32>;
pub type EpsilonHistory64 = EpsilonHistory<f64>;
pub type EpsilonHistory32 = EpsilonHistory<f32>;
pub type GaussianMixture64 = GaussianMixtureDenoiser<f64>;
pub type GaussianMixture32 = GaussianMixtureDenoiser<f32>;

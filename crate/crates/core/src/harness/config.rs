use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::extrapolation::PredictorOrder;
use crate::latent::Latent;
use crate::models::{Denoiser, GaussianMixtureDenoiser, MixtureComponent, ScriptedDenoiser};
use crate::samplers::{SamplerKind, TrajectorySettings};
use crate::schedule::{compose_two_stage, make_karras_schedule, make_simple_schedule, Schedule};
use crate::skip::{
    parse_explicit_skips, GateSpace, SkipConfig, SkipMode, DEFAULT_ANCHOR_INTERVAL, DEFAULT_MAX_CONSECUTIVE_SKIPS,
    DEFAULT_PROTECT_FIRST, DEFAULT_PROTECT_LAST,
};
use crate::stabilize::{StabilizerConfig, StabilizerMode, DEFAULT_BETA, DEFAULT_CURVATURE_SCALE};

use super::HarnessError;

pub const DEFAULT_SIGMA_MAX: f64 = 14.6146;
pub const DEFAULT_SIGMA_MIN: f64 = 0.0292;
pub const DEFAULT_RHO: f64 = 7.0;
pub const DEFAULT_SHAPE: [usize; 4] = [1, 4, 32, 32];
pub const BASELINE_NAME: &str = "baseline";

fn config_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

fn default_name() -> String {
    "experiment".into()
}

fn default_shape() -> Vec<usize> {
    DEFAULT_SHAPE.to_vec()
}

fn default_sigma_max() -> f64 {
    DEFAULT_SIGMA_MAX
}

fn default_sigma_min() -> f64 {
    DEFAULT_SIGMA_MIN
}

fn default_rho() -> f64 {
    DEFAULT_RHO
}

fn default_one() -> f64 {
    1.0
}

fn default_beta() -> f64 {
    DEFAULT_BETA
}

fn default_curvature() -> f64 {
    DEFAULT_CURVATURE_SCALE
}

/// Top-level experiment file: one shared seed, model and schedule, a
/// baseline run and any number of skip variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub seed: u64,
    #[serde(default = "default_shape")]
    pub shape: Vec<usize>,
    pub sampler: SamplerKind,
    /// Step count for `simple` / `karras` schedules that do not set their own.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    pub schedule: ScheduleSpec,
    pub model: ModelSpec,
    #[serde(default)]
    pub variants: Vec<VariantSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleSpec {
    Simple {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        steps: Option<usize>,
        #[serde(default = "default_sigma_max")]
        sigma_max: f64,
        #[serde(default = "default_sigma_min")]
        sigma_min: f64,
        #[serde(default)]
        append_zero: bool,
    },
    Karras {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        steps: Option<usize>,
        #[serde(default = "default_sigma_max")]
        sigma_max: f64,
        #[serde(default = "default_sigma_min")]
        sigma_min: f64,
        #[serde(default = "default_rho")]
        rho: f64,
        #[serde(default)]
        append_zero: bool,
    },
    TwoStage {
        first: Box<ScheduleSpec>,
        second: Box<ScheduleSpec>,
    },
}

impl ScheduleSpec {
    pub fn build(&self, default_steps: Option<usize>) -> Result<Schedule<f64>, HarnessError> {
        let steps_for = |steps: &Option<usize>| {
            steps
                .or(default_steps)
                .ok_or_else(|| config_err("schedule needs \"steps\" (in the schedule or at the top level)"))
        };
        let schedule = match self {
            Self::Simple {
                steps,
                sigma_max,
                sigma_min,
                append_zero,
            } => make_simple_schedule(steps_for(steps)?, *sigma_max, *sigma_min, *append_zero),
            Self::Karras {
                steps,
                sigma_max,
                sigma_min,
                rho,
                append_zero,
            } => make_karras_schedule(steps_for(steps)?, *sigma_max, *sigma_min, *rho, *append_zero),
            Self::TwoStage { first, second } => {
                let a = first.build(None)?;
                let b = second.build(None)?;
                compose_two_stage(&a, &b)
            }
        };
        schedule.map_err(|e| config_err(format!("schedule: {e}")))
    }
}

/// A mean given as one constant, explicit values, or seeded standard normals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MeanSpec {
    Constant(f64),
    Values(Vec<f64>),
    Random {
        seed: u64,
        #[serde(default = "default_one")]
        scale: f64,
    },
}

impl MeanSpec {
    pub fn build(&self, shape: &[usize]) -> Result<Latent<f64>, HarnessError> {
        let n: usize = shape.iter().product();
        let data = match self {
            Self::Constant(v) => vec![*v; n],
            Self::Values(v) if v.len() == n => v.clone(),
            Self::Values(v) => {
                return Err(config_err(format!("mean has {} values, shape needs {n}", v.len())));
            }
            Self::Random { seed, scale } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                (0..n)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        scale * z
                    })
                    .collect()
            }
        };
        Latent::new(shape.to_vec(), data).map_err(|e| config_err(format!("mean: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpec {
    #[serde(default = "default_one")]
    pub weight: f64,
    pub mean: MeanSpec,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Gaussian {
        mean: MeanSpec,
        variance: f64,
    },
    GaussianMixture {
        components: Vec<ComponentSpec>,
    },
    /// Replays `epsilons[i]` on the i-th call. Each entry is one value
    /// broadcast over the latent or a full flat latent.
    Scripted {
        epsilons: Vec<Vec<f64>>,
    },
}

/// Denoiser instantiated from a [`ModelSpec`].
#[derive(Debug, Clone)]
pub enum HarnessModel {
    Mixture(GaussianMixtureDenoiser<f64>),
    Scripted(ScriptedDenoiser<f64>),
}

impl Denoiser<f64> for HarnessModel {
    fn denoise(&mut self, x: &Latent<f64>, sigma: f64) -> crate::Result<Latent<f64>> {
        match self {
            Self::Mixture(m) => m.denoise(x, sigma),
            Self::Scripted(m) => m.denoise(x, sigma),
        }
    }
}

impl ModelSpec {
    pub fn build(&self, shape: &[usize]) -> Result<HarnessModel, HarnessError> {
        let model_err = |e: crate::Error| config_err(format!("model: {e}"));
        match self {
            Self::Gaussian { mean, variance } => GaussianMixtureDenoiser::single(mean.build(shape)?, *variance)
                .map(HarnessModel::Mixture)
                .map_err(model_err),
            Self::GaussianMixture { components } => {
                let built = components
                    .iter()
                    .map(|c| {
                        Ok(MixtureComponent {
                            weight: c.weight,
                            mean: c.mean.build(shape)?,
                            variance: c.variance,
                        })
                    })
                    .collect::<Result<Vec<_>, HarnessError>>()?;
                GaussianMixtureDenoiser::new(built).map(HarnessModel::Mixture).map_err(model_err)
            }
            Self::Scripted { epsilons } => {
                let n: usize = shape.iter().product();
                let script = epsilons
                    .iter()
                    .enumerate()
                    .map(|(i, e)| {
                        let data = match e.len() {
                            1 => vec![e[0]; n],
                            len if len == n => e.clone(),
                            len => {
                                return Err(config_err(format!("scripted epsilon {i} has {len} values, expected 1 or {n}")))
                            }
                        };
                        Latent::new(shape.to_vec(), data).map_err(model_err)
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(HarnessModel::Scripted(ScriptedDenoiser::new(script)))
            }
        }
    }
}

/// Skip policy as written in the config file. Which keys matter depends on
/// `mode`; unused keys are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkipSpec {
    #[serde(default = "SkipSpec::default_mode")]
    pub mode: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<PredictorOrder>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skip_calls: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor_interval: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_consecutive_skips: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gate: Option<GateSpace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub indices: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protect_first: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protect_last: Option<usize>,
}

impl Default for SkipSpec {
    fn default() -> Self {
        Self {
            mode: Self::default_mode(),
            order: None,
            skip_calls: None,
            tolerance: None,
            anchor_interval: None,
            max_consecutive_skips: None,
            gate: None,
            indices: None,
            protect_first: None,
            protect_last: None,
        }
    }
}

impl SkipSpec {
    fn default_mode() -> String {
        "none".into()
    }

    pub fn build(&self, total_steps: usize) -> Result<SkipConfig, HarnessError> {
        let mode = match self.mode.as_str() {
            "none" => SkipMode::None,
            "fixed" => SkipMode::Fixed {
                order: self.order.unwrap_or(PredictorOrder::H2),
                skip_calls: self
                    .skip_calls
                    .ok_or_else(|| config_err("fixed skip mode needs \"skip_calls\""))?,
            },
            "adaptive" => SkipMode::Adaptive {
                tolerance: self
                    .tolerance
                    .ok_or_else(|| config_err("adaptive skip mode needs \"tolerance\""))?,
                anchor_interval: self.anchor_interval.unwrap_or(DEFAULT_ANCHOR_INTERVAL),
                max_consecutive_skips: self.max_consecutive_skips.unwrap_or(DEFAULT_MAX_CONSECUTIVE_SKIPS),
                gate: self.gate.unwrap_or_default(),
            },
            "explicit" => {
                let text = self
                    .indices
                    .as_deref()
                    .ok_or_else(|| config_err("explicit skip mode needs \"indices\""))?;
                let (parsed_order, indices) =
                    parse_explicit_skips(text, total_steps).map_err(|e| config_err(format!("indices: {e}")))?;
                SkipMode::Explicit {
                    order: self.order.unwrap_or(parsed_order),
                    indices,
                }
            }
            other => return Err(config_err(format!("unknown skip mode {other:?}"))),
        };
        let config = SkipConfig::with_mode(mode).protect(
            self.protect_first.unwrap_or(DEFAULT_PROTECT_FIRST),
            self.protect_last.unwrap_or(DEFAULT_PROTECT_LAST),
        );
        config.validate(total_steps).map_err(|e| config_err(e.to_string()))?;
        Ok(config)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilizerSpec {
    #[serde(default)]
    pub mode: StabilizerMode,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_curvature")]
    pub curvature_scale: f64,
}

impl Default for StabilizerSpec {
    fn default() -> Self {
        Self {
            mode: StabilizerMode::None,
            beta: DEFAULT_BETA,
            curvature_scale: DEFAULT_CURVATURE_SCALE,
        }
    }
}

impl StabilizerSpec {
    pub fn build(&self) -> Result<StabilizerConfig<f64>, HarnessError> {
        if !(0.0..1.0).contains(&self.beta) {
            return Err(config_err(format!("stabilizer beta must lie in [0, 1), got {}", self.beta)));
        }
        if !self.curvature_scale.is_finite() {
            return Err(config_err("stabilizer curvature_scale must be finite"));
        }
        Ok(StabilizerConfig {
            mode: self.mode,
            beta: self.beta,
            curvature_scale: self.curvature_scale,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantSpec {
    pub name: String,
    #[serde(default)]
    pub skip: SkipSpec,
    #[serde(default)]
    pub stabilizer: StabilizerSpec,
}

/// Fully resolved settings of one run; echoed into its report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub name: String,
    pub sampler: SamplerKind,
    pub schedule: ScheduleSpec,
    pub steps: usize,
    pub model: ModelSpec,
    pub seed: u64,
    pub shape: Vec<usize>,
    pub skip: SkipSpec,
    pub stabilizer: StabilizerSpec,
}

/// A validated experiment, ready to run.
#[derive(Debug, Clone)]
pub struct PreparedExperiment {
    pub config: ExperimentConfig,
    pub schedule: Schedule<f64>,
    pub model: HarnessModel,
    pub initial: Latent<f64>,
    pub runs: Vec<PreparedRun>,
}

#[derive(Debug, Clone)]
pub struct PreparedRun {
    pub slug: String,
    pub echo: RunConfig,
    pub settings: TrajectorySettings<f64>,
}

/// File-name-safe form of a variant name.
pub fn slugify(name: &str) -> String {
    let mut slug = String::with_capacity(name.len());
    for c in name.chars() {
        if c.is_ascii_alphanumeric() {
            slug.push(c.to_ascii_lowercase());
        } else if !slug.ends_with('-') {
            slug.push('-');
        }
    }
    slug.trim_matches('-').to_string()
}

/// `sigma_max * N(0, 1)` from a ChaCha8 stream seeded with `seed`.
pub fn initial_latent(seed: u64, shape: &[usize], sigma_max: f64) -> Latent<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            sigma_max * z
        })
        .collect();
    Latent::from_raw(shape.to_vec(), data).expect("shape and data agree")
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| config_err(format!("invalid config: {e}")))
    }

    /// Validates everything and builds the shared schedule, model, initial
    /// latent and per-run settings. `only` restricts the variants (the
    /// baseline always runs).
    pub fn prepare(&self, only: Option<&str>) -> Result<PreparedExperiment, HarnessError> {
        if self.shape.is_empty() || self.shape.contains(&0) {
            return Err(config_err(format!("shape must be non-empty with positive sizes, got {:?}", self.shape)));
        }
        let schedule = self.schedule.build(self.steps)?;
        let steps = schedule.steps();
        let model = self.model.build(&self.shape)?;
        let initial = initial_latent(self.seed, &self.shape, schedule.first());

        let baseline = VariantSpec {
            name: BASELINE_NAME.into(),
            skip: SkipSpec::default(),
            stabilizer: StabilizerSpec::default(),
        };
        let mut slugs = vec![BASELINE_NAME.to_string()];
        let mut runs = Vec::with_capacity(self.variants.len() + 1);
        for (i, variant) in std::iter::once(&baseline).chain(&self.variants).enumerate() {
            let slug = slugify(&variant.name);
            if i > 0 {
                if slug.is_empty() {
                    return Err(config_err(format!("variant name {:?} has no usable characters", variant.name)));
                }
                if slugs.contains(&slug) {
                    return Err(config_err(format!("variant name {:?} collides with another run", variant.name)));
                }
                slugs.push(slug.clone());
            }
            let skip = variant
                .skip
                .build(steps)
                .map_err(|e| config_err(format!("variant {:?}: {e}", variant.name)))?;
            let stabilizer = variant
                .stabilizer
                .build()
                .map_err(|e| config_err(format!("variant {:?}: {e}", variant.name)))?;
            runs.push(PreparedRun {
                slug,
                echo: RunConfig {
                    name: variant.name.clone(),
                    sampler: self.sampler,
                    schedule: self.schedule.clone(),
                    steps,
                    model: self.model.clone(),
                    seed: self.seed,
                    shape: self.shape.clone(),
                    skip: variant.skip.clone(),
                    stabilizer: variant.stabilizer,
                },
                settings: TrajectorySettings {
                    sampler: self.sampler,
                    skip,
                    stabilizer,
                },
            });
        }
        if let Some(name) = only {
            if !runs.iter().any(|r| r.echo.name == name) {
                return Err(config_err(format!("--only: no variant named {name:?}")));
            }
            runs.retain(|r| r.echo.name == BASELINE_NAME || r.echo.name == name);
        }
        Ok(PreparedExperiment {
            config: self.clone(),
            schedule,
            model,
            initial,
            runs,
        })
    }
}

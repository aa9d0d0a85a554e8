//! Denoisers with closed-form behaviour, standing in for a neural network.

use crate::error::{Error, Result};
use crate::latent::Latent;
use crate::scalar::Scalar;

/// `denoised = model(x, sigma)`: the predicted clean state.
pub trait Denoiser<T: Scalar> {
    fn denoise(&mut self, x: &Latent<T>, sigma: T) -> Result<Latent<T>>;
}

impl<T: Scalar, D: Denoiser<T> + ?Sized> Denoiser<T> for &mut D {
    fn denoise(&mut self, x: &Latent<T>, sigma: T) -> Result<Latent<T>> {
        (**self).denoise(x, sigma)
    }
}

impl<T: Scalar, D: Denoiser<T> + ?Sized> Denoiser<T> for Box<D> {
    fn denoise(&mut self, x: &Latent<T>, sigma: T) -> Result<Latent<T>> {
        (**self).denoise(x, sigma)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureComponent<T> {
    pub weight: T,
    pub mean: Latent<T>,
    /// Isotropic variance of the component.
    pub variance: T,
}

/// Exact posterior-mean denoiser for data drawn from an isotropic Gaussian
/// mixture and observed as `x = x0 + sigma * noise`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixtureDenoiser<T> {
    components: Vec<MixtureComponent<T>>,
}

impl<T: Scalar> GaussianMixtureDenoiser<T> {
    /// Weights must be positive; they are normalised to sum to one.
    pub fn new(mut components: Vec<MixtureComponent<T>>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::Domain("mixture needs at least one component".into()))?;
        let shape = first.mean.shape().to_vec();
        let mut total = T::zero();
        for (k, c) in components.iter().enumerate() {
            if !(c.weight > T::zero()) || !c.weight.is_finite() {
                return Err(Error::Domain(format!("component {k}: weight must be positive")));
            }
            if !(c.variance > T::zero()) || !c.variance.is_finite() {
                return Err(Error::Domain(format!("component {k}: variance must be positive")));
            }
            if c.mean.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    expected: shape,
                    found: c.mean.shape().to_vec(),
                });
            }
            if !c.mean.is_finite() {
                return Err(Error::NonFinite);
            }
            total = total + c.weight;
        }
        for c in &mut components {
            c.weight = c.weight / total;
        }
        Ok(Self { components })
    }

    pub fn single(mean: Latent<T>, variance: T) -> Result<Self> {
        Self::new(vec![MixtureComponent {
            weight: T::one(),
            mean,
            variance,
        }])
    }

    pub fn components(&self) -> &[MixtureComponent<T>] {
        &self.components
    }

    pub fn shape(&self) -> &[usize] {
        self.components[0].mean.shape()
    }

    /// Posterior mean `E[x0 | x]` at noise level `sigma`.
    pub fn posterior_mean(&self, x: &Latent<T>, sigma: T) -> Result<Latent<T>> {
        if !(sigma > T::zero()) {
            return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
        }
        let s2 = sigma * sigma;
        let d = T::lit(x.len() as f64);
        let half = T::lit(0.5);

        let mut logits = Vec::with_capacity(self.components.len());
        for c in &self.components {
            let total_var = c.variance + s2;
            let dist2 = x.sub(&c.mean)?.sum_squares();
            logits.push(c.weight.ln() - dist2 / (total_var + total_var) - half * d * total_var.ln());
        }
        let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
        let norm = exps.iter().copied().fold(T::zero(), |a, b| a + b);

        let mut acc = vec![T::zero(); x.len()];
        for (c, e) in self.components.iter().zip(exps) {
            let gamma = e / norm;
            let total_var = c.variance + s2;
            let wx = gamma * c.variance / total_var;
            let wm = gamma * s2 / total_var;
            for ((a, &xi), &mi) in acc.iter_mut().zip(x.as_slice()).zip(c.mean.as_slice()) {
                *a = *a + wx * xi + wm * mi;
            }
        }
        Latent::from_raw(x.shape().to_vec(), acc)
    }

    /// Closed-form probability-flow ODE solution for a single component:
    /// `m + (x_start - m) * sqrt((c + sigma_end^2) / (c + sigma_start^2))`.
    pub fn exact_solution(&self, x_start: &Latent<T>, sigma_start: T, sigma_end: T) -> Result<Latent<T>> {
        if self.components.len() != 1 {
            return Err(Error::Unsupported(format!(
                "exact solution needs a single component, model has {}",
                self.components.len()
            )));
        }
        if sigma_end < T::zero() || sigma_start < T::zero() {
            return Err(Error::Domain("sigmas must be non-negative".into()));
        }
        let c = &self.components[0];
        let factor = ((c.variance + sigma_end * sigma_end) / (c.variance + sigma_start * sigma_start)).sqrt();
        x_start.zip_map(&c.mean, |x, m| m + (x - m) * factor)
    }
}

impl<T: Scalar> Denoiser<T> for GaussianMixtureDenoiser<T> {
    fn denoise(&mut self, x: &Latent<T>, sigma: T) -> Result<Latent<T>> {
        self.posterior_mean(x, sigma)
    }
}

/// Returns `x + script[call_index]` on each call.
#[derive(Debug, Clone)]
pub struct ScriptedDenoiser<T> {
    script: Vec<Latent<T>>,
    calls: usize,
}

impl<T: Scalar> ScriptedDenoiser<T> {
    pub fn new(script: Vec<Latent<T>>) -> Self {
        Self { script, calls: 0 }
    }

    pub fn calls(&self) -> usize {
        self.calls
    }
}

impl<T: Scalar> Denoiser<T> for ScriptedDenoiser<T> {
    fn denoise(&mut self, x: &Latent<T>, _sigma: T) -> Result<Latent<T>> {
        let eps = self
            .script
            .get(self.calls)
            .ok_or(Error::ScriptExhausted { calls: self.calls })?;
        let out = x.add(eps)?;
        self.calls += 1;
        Ok(out)
    }
}

/// Counts model invocations (the NFE).
#[derive(Debug, Clone)]
pub struct CountingDenoiser<D> {
    inner: D,
    calls: usize,
}

impl<D> CountingDenoiser<D> {
    pub fn new(inner: D) -> Self {
        Self { inner, calls: 0 }
    }

    pub fn calls(&self) -> usize {
        self.calls
    }

    pub fn inner(&self) -> &D {
        &self.inner
    }

    pub fn into_inner(self) -> D {
        self.inner
    }
}

impl<T: Scalar, D: Denoiser<T>> Denoiser<T> for CountingDenoiser<D> {
    fn denoise(&mut self, x: &Latent<T>, sigma: T) -> Result<Latent<T>> {
        self.calls += 1;
        self.inner.denoise(x, sigma)
    }
}

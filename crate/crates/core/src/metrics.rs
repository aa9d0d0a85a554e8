//! Image-space comparison metrics and cost accounting.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::latent::Latent;
use crate::scalar::Scalar;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
const SSIM_MIN_RANGE: f64 = 1e-6;

fn paired<T: Scalar>(a: &Latent<T>, b: &Latent<T>) -> Result<()> {
    a.ensure_same_shape(b)?;
    if a.is_empty() {
        return Err(Error::Domain("cannot compare empty latents".into()));
    }
    Ok(())
}

pub fn rmse<T: Scalar>(a: &Latent<T>, b: &Latent<T>) -> Result<f64> {
    paired(a, b)?;
    let sum: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x.as_f64() - y.as_f64()).powi(2))
        .sum();
    Ok((sum / a.len() as f64).sqrt())
}

pub fn mae<T: Scalar>(a: &Latent<T>, b: &Latent<T>) -> Result<f64> {
    paired(a, b)?;
    let sum: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x.as_f64() - y.as_f64()).abs())
        .sum();
    Ok(sum / a.len() as f64)
}

/// Normalised 1D Gaussian taps.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let centre = (size as f64 - 1.0) / 2.0;
    let taps: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - centre;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

// Valid-mode separable filter of an h x w plane.
fn blur(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = taps.iter().enumerate().map(|(t, wt)| wt * plane[r * w + c + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = taps.iter().enumerate().map(|(t, wt)| wt * rows[(r + t) * ow + c]).sum();
        }
    }
    out
}

fn value_range(values: &[f64]) -> f64 {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    hi - lo
}

/// Mean SSIM of one plane pair with an explicit dynamic range.
pub fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize, data_range: f64) -> Result<f64> {
    if a.len() != h * w || b.len() != h * w {
        return Err(Error::ShapeMismatch {
            expected: vec![h, w],
            found: vec![a.len().min(b.len())],
        });
    }
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Domain(format!(
            "SSIM needs planes of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let taps = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let c1 = (SSIM_K1 * data_range).powi(2);
    let c2 = (SSIM_K2 * data_range).powi(2);
    let product = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect() };

    let mu_a = blur(a, h, w, &taps);
    let mu_b = blur(b, h, w, &taps);
    let aa = blur(&product(&|x, _| x * x), h, w, &taps);
    let bb = blur(&product(&|_, y| y * y), h, w, &taps);
    let ab = blur(&product(&|x, y| x * y), h, w, &taps);

    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / n as f64)
}

/// SSIM over the last two dimensions, averaged across all leading planes.
/// The dynamic range is the larger of the two inputs' value ranges.
pub fn ssim<T: Scalar>(a: &Latent<T>, b: &Latent<T>) -> Result<f64> {
    paired(a, b)?;
    let shape = a.shape();
    if shape.len() < 2 {
        return Err(Error::Domain("SSIM needs at least two dimensions".into()));
    }
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let av: Vec<f64> = a.as_slice().iter().map(|v| v.as_f64()).collect();
    let bv: Vec<f64> = b.as_slice().iter().map(|v| v.as_f64()).collect();
    let range = value_range(&av).max(value_range(&bv)).max(SSIM_MIN_RANGE);
    let plane = h * w;
    if plane == 0 {
        return Err(Error::Domain("SSIM of an empty plane".into()));
    }
    let planes = av.len() / plane;
    let mut total = 0.0;
    for p in 0..planes {
        let span = p * plane..(p + 1) * plane;
        total += ssim_plane(&av[span.clone()], &bv[span], h, w, range)?;
    }
    Ok(total / planes as f64)
}

/// Percent decrease in model calls relative to the baseline.
pub fn nfe_reduction(baseline_nfe: usize, run_nfe: usize) -> Result<f64> {
    if baseline_nfe == 0 {
        return Err(Error::Domain("baseline NFE is zero".into()));
    }
    Ok(100.0 * (baseline_nfe as f64 - run_nfe as f64) / baseline_nfe as f64)
}

/// Percent decrease in wall time relative to the baseline.
pub fn time_saved(baseline_seconds: f64, run_seconds: f64) -> Result<f64> {
    if !(baseline_seconds > 0.0 && baseline_seconds.is_finite()) {
        return Err(Error::Domain(format!("baseline time must be positive, got {baseline_seconds}")));
    }
    Ok(100.0 * (baseline_seconds - run_seconds) / baseline_seconds)
}

/// Quality and cost of one run against its same-seed baseline.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunComparison {
    /// Empty when the latent planes are smaller than the SSIM window.
    pub ssim: Option<f64>,
    pub rmse: f64,
    pub mae: f64,
    pub nfe_baseline: usize,
    pub nfe_run: usize,
    pub nfe_reduction_pct: f64,
    pub time_baseline: f64,
    pub time_run: f64,
    /// Empty when the baseline time is not positive.
    pub time_saved_pct: Option<f64>,
}

impl RunComparison {
    pub fn compute<T: Scalar>(
        baseline: &Latent<T>,
        run: &Latent<T>,
        nfe_baseline: usize,
        nfe_run: usize,
        time_baseline: f64,
        time_run: f64,
    ) -> Result<Self> {
        let ssim = match ssim(baseline, run) {
            Ok(v) => Some(v),
            Err(Error::Domain(_)) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            ssim,
            rmse: rmse(baseline, run)?,
            mae: mae(baseline, run)?,
            nfe_baseline,
            nfe_run,
            nfe_reduction_pct: nfe_reduction(nfe_baseline, nfe_run)?,
            time_baseline,
            time_run,
            time_saved_pct: time_saved(time_baseline, time_run).ok(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn lat(shape: Vec<usize>, f: impl Fn(usize) -> f64) -> Latent<f64> {
        let n = shape.iter().product();
        Latent::new(shape, (0..n).map(f).collect()).unwrap()
    }

    // Direct 2D window sum, no separability.
    fn ssim_direct(a: &[f64], b: &[f64], h: usize, w: usize, range: f64) -> f64 {
        let g = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
        let k = SSIM_WINDOW;
        let c1 = (SSIM_K1 * range).powi(2);
        let c2 = (SSIM_K2 * range).powi(2);
        let mut total = 0.0;
        let mut count = 0;
        for r in 0..=h - k {
            for c in 0..=w - k {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..k {
                    for j in 0..k {
                        let wt = g[i] * g[j];
                        let (x, y) = (a[(r + i) * w + c + j], b[(r + i) * w + c + j]);
                        ma += wt * x;
                        mb += wt * y;
                        saa += wt * x * x;
                        sbb += wt * y * y;
                        sab += wt * x * y;
                    }
                }
                let num = (2.0 * ma * mb + c1) * (2.0 * (sab - ma * mb) + c2);
                let den = (ma * ma + mb * mb + c1) * ((saa - ma * ma) + (sbb - mb * mb) + c2);
                total += num / den;
                count += 1;
            }
        }
        total / count as f64
    }

    #[test]
    fn rmse_and_mae_values() {
        let a = Latent::from_vec(vec![0.0, 0.0, 0.0, 0.0]).unwrap();
        let b = Latent::from_vec(vec![1.0, -1.0, 3.0, -3.0]).unwrap();
        assert_relative_eq!(rmse(&a, &b).unwrap(), 5.0f64.sqrt());
        assert_relative_eq!(mae(&a, &b).unwrap(), 2.0);
        let c = Latent::from_vec(vec![0.0, 2.0]).unwrap();
        let d = Latent::from_vec(vec![0.0, 0.0]).unwrap();
        assert_relative_eq!(rmse(&c, &d).unwrap(), 2.0f64.sqrt());
        assert_relative_eq!(mae(&c, &d).unwrap(), 1.0);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = Latent::<f64>::zeros(vec![2, 2]);
        let b = Latent::<f64>::zeros(vec![4]);
        assert!(rmse(&a, &b).is_err());
        assert!(mae(&a, &b).is_err());
    }

    #[test]
    fn ssim_identity_is_one() {
        let a = lat(vec![2, 16, 16], |i| (i as f64 * 0.37).sin());
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn ssim_rejects_small_planes() {
        let a = lat(vec![1, 10, 16], |i| i as f64);
        assert!(ssim(&a, &a).is_err());
    }

    #[test]
    fn ssim_constant_planes_use_range_floor() {
        let a = Latent::full(vec![12, 12], 0.5);
        assert_relative_eq!(ssim(&a, &a).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn ssim_drops_with_noise() {
        let a = lat(vec![16, 16], |i| ((i % 16) as f64 / 4.0).sin());
        let small = lat(vec![16, 16], |i| ((i % 16) as f64 / 4.0).sin() + 0.01 * ((i * 7919) % 13) as f64);
        let large = lat(vec![16, 16], |i| ((i % 16) as f64 / 4.0).sin() + 0.2 * ((i * 7919) % 13) as f64);
        let s_small = ssim(&a, &small).unwrap();
        let s_large = ssim(&a, &large).unwrap();
        assert!(s_small > s_large && s_small < 1.0, "{s_small} {s_large}");
    }

    #[test]
    fn cost_ratios() {
        assert_relative_eq!(nfe_reduction(20, 16).unwrap(), 20.0);
        assert_relative_eq!(nfe_reduction(20, 17).unwrap(), 15.0);
        assert_eq!(nfe_reduction(7, 7).unwrap(), 0.0);
        assert!(nfe_reduction(0, 1).is_err());
        assert_relative_eq!(time_saved(2.0, 1.5).unwrap(), 25.0);
        assert!(time_saved(0.0, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn separable_ssim_matches_direct(
            h in 11usize..16, w in 11usize..16,
            seed_a in prop::collection::vec(-2.0f64..2.0, 256),
            seed_b in prop::collection::vec(-2.0f64..2.0, 256),
        ) {
            let a = &seed_a[..h * w];
            let b = &seed_b[..h * w];
            let range = value_range(a).max(value_range(b)).max(SSIM_MIN_RANGE);
            let fast = ssim_plane(a, b, h, w, range).unwrap();
            let slow = ssim_direct(a, b, h, w, range);
            prop_assert!((fast - slow).abs() < 1e-10, "{} vs {}", fast, slow);
        }

        #[test]
        fn ssim_symmetric_and_bounded(
            seed_a in prop::collection::vec(-1.0f64..1.0, 144),
            seed_b in prop::collection::vec(-1.0f64..1.0, 144),
        ) {
            let a = Latent::new(vec![12, 12], seed_a).unwrap();
            let b = Latent::new(vec![12, 12], seed_b).unwrap();
            let ab = ssim(&a, &b).unwrap();
            let ba = ssim(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&ab));
        }

        #[test]
        fn rmse_bounds_mae(v in prop::collection::vec(-5.0f64..5.0, 1..40)) {
            let a = Latent::from_vec(v.clone()).unwrap();
            let b = a.zeros_like();
            prop_assert!(rmse(&a, &b).unwrap() + 1e-12 >= mae(&a, &b).unwrap());
        }
    }
}

use epsskip::samplers::{run_trajectory, sampler_step, StepAdjust};
use epsskip::schedule::{make_karras_schedule, make_simple_schedule};
use epsskip::{
    metrics, Denoiser, GaussianMixtureDenoiser, Latent, SamplerKind, SamplerMemory, Schedule, ScriptedDenoiser,
    SkipConfig, StepDecision, Trajectory, TrajectorySettings,
};
use proptest::prelude::*;

/// Least-squares slope of log(error) against log(1 / steps).
fn convergence_slope(steps: &[usize], errors: &[f64]) -> f64 {
    let xs: Vec<f64> = steps.iter().map(|&n| -(n as f64).ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    cov / var
}

fn gaussian() -> GaussianMixtureDenoiser<f64> {
    GaussianMixtureDenoiser::single(Latent::from_vec(vec![0.5, -1.0, 2.0, 0.0]).unwrap(), 0.3).unwrap()
}

fn errors_for(kind: SamplerKind, steps: &[usize]) -> Vec<f64> {
    let (sigma_max, sigma_min) = (14.6146, 0.0292);
    let model = gaussian();
    let x0 = Latent::from_vec(vec![1.0, -0.7, 0.3, 1.9]).unwrap().scale(sigma_max);
    let exact = model.exact_solution(&x0, sigma_max, sigma_min).unwrap();
    steps
        .iter()
        .map(|&n| {
            let sched = make_simple_schedule(n, sigma_max, sigma_min, false).unwrap();
            let r = run_trajectory(TrajectorySettings::baseline(kind), model.clone(), &sched, x0.clone()).unwrap();
            metrics::rmse(&r.final_latent, &exact).unwrap()
        })
        .collect()
}

const STEPS: [usize; 4] = [10, 20, 40, 80];

#[test]
fn euler_and_ddim_are_first_order() {
    for kind in [SamplerKind::Euler, SamplerKind::Ddim] {
        let slope = convergence_slope(&STEPS, &errors_for(kind, &STEPS));
        assert!((0.9..=1.1).contains(&slope), "{kind}: slope {slope}");
    }
}

#[test]
fn multistep_samplers_are_second_order() {
    for kind in [SamplerKind::Ab2, SamplerKind::Res2m] {
        let errors = errors_for(kind, &STEPS);
        let slope = convergence_slope(&STEPS, &errors);
        assert!(slope >= 1.7, "{kind}: slope {slope}, errors {errors:?}");
    }
}

/// Variation-of-constants step for `dx/dlambda = D - x` with `D` linear in
/// lambda through the last two denoised values.
fn exponential_ab2_reference(x: f64, d: f64, d_prev: Option<(f64, f64)>, sc: f64, sn: f64) -> f64 {
    if sn == 0.0 {
        return d;
    }
    let h = (sc / sn).ln();
    let decay = (-h).exp();
    let mut next = decay * x + (1.0 - decay) * d;
    if let Some((dp, h_prev)) = d_prev {
        next += (h - 1.0 + decay) / h_prev * (d - dp);
    }
    next
}

#[test]
fn res2m_matches_hand_evaluation_over_three_steps() {
    let epsilons: [f64; 3] = [0.8, -0.3, 0.45];
    let script: Vec<_> = epsilons.iter().map(|&e| Latent::scalar(e)).collect();
    let sigmas: [f64; 4] = [4.0, 2.5, 1.0, 0.3];
    let sched = Schedule::new(sigmas.to_vec()).unwrap();
    let x0: f64 = 1.7;
    let r = run_trajectory(
        TrajectorySettings::baseline(SamplerKind::Res2m),
        ScriptedDenoiser::new(script),
        &sched,
        Latent::scalar(x0),
    )
    .unwrap();

    // first step has no history: plain Euler
    let mut x = x0 + (sigmas[1] - sigmas[0]) * (-epsilons[0]) / sigmas[0];
    let mut prev = Some((x0 + epsilons[0], (sigmas[0] / sigmas[1]).ln()));
    for n in 1..3 {
        let d = x + epsilons[n];
        let next = exponential_ab2_reference(x, d, prev, sigmas[n], sigmas[n + 1]);
        prev = Some((d, (sigmas[n] / sigmas[n + 1]).ln()));
        x = next;
    }
    let got = r.final_latent.as_slice()[0];
    assert!((got - x).abs() <= 1e-12 * x.abs().max(1.0), "{got} vs {x}");
}

#[test]
fn zero_terminal_reaches_denoised() {
    let sched = make_karras_schedule(8, 10.0, 0.1, 7.0, true).unwrap();
    let mut last_model = gaussian();
    for kind in SamplerKind::ALL {
        let mut t = Trajectory::new(
            TrajectorySettings::baseline(kind),
            &sched,
            gaussian(),
            Latent::full(vec![4], 3.0),
        )
        .unwrap();
        while t.step_index() + 1 < sched.steps() {
            t.step().unwrap();
        }
        let x = t.x().clone();
        let expected = last_model.denoise(&x, sched.sigma(sched.steps() - 1)).unwrap();
        let out = t.step().unwrap().x_next;
        // denoised is formed as x + (model(x) - x)
        let rebuilt = x.add(&expected.sub(&x).unwrap()).unwrap();
        assert_eq!(out, rebuilt, "{kind}");
    }
}

fn mixture(shape: &[usize]) -> GaussianMixtureDenoiser<f64> {
    let n: usize = shape.iter().product();
    let a = Latent::new(shape.to_vec(), (0..n).map(|i| (i as f64 * 0.7).sin()).collect()).unwrap();
    let b = Latent::new(shape.to_vec(), (0..n).map(|i| (i as f64 * 0.3).cos() - 0.5).collect()).unwrap();
    GaussianMixtureDenoiser::new(vec![
        epsskip::models::MixtureComponent { weight: 0.4, mean: a, variance: 0.1 },
        epsskip::models::MixtureComponent { weight: 0.6, mean: b, variance: 0.2 },
    ])
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn skip_with_true_epsilon_equals_real_step(
        kind_index in 0usize..4,
        steps in 4usize..14,
        at_fraction in 0.0f64..1.0,
        start in prop::collection::vec(-1.0f64..1.0, 6),
    ) {
        let kind = SamplerKind::ALL[kind_index];
        let shape = [2, 3];
        let sched = make_simple_schedule(steps, 12.0, 0.05, false).unwrap();
        let x0 = Latent::new(shape.to_vec(), start).unwrap().scale(12.0);
        let at = ((steps - 1) as f64 * at_fraction) as usize;

        let settings = TrajectorySettings::new(kind, SkipConfig::none());
        let mut real = Trajectory::new(settings.clone(), &sched, mixture(&shape), x0.clone()).unwrap();
        let mut skipped = Trajectory::new(settings, &sched, mixture(&shape), x0).unwrap();
        for _ in 0..at {
            real.step().unwrap();
            skipped.step().unwrap();
        }
        let x = skipped.x().clone();
        let eps = mixture(&shape).denoise(&x, sched.sigma(at)).unwrap().sub(&x).unwrap();
        let a = real.execute(StepDecision::real(epsskip::skip::SkipReason::None)).unwrap();
        let b = skipped
            .execute(StepDecision::skip(epsskip::skip::SkipReason::Explicit, epsskip::PredictorOrder::H2, eps))
            .unwrap();
        prop_assert!(b.decision.is_skip());
        prop_assert_eq!(a.x_next.as_slice(), b.x_next.as_slice());
        prop_assert_eq!(real.memory(), skipped.memory());
    }

    #[test]
    fn ddim_without_correction_tracks_euler(
        x in -5.0f64..5.0, d in -5.0f64..5.0, sc in 0.1f64..10.0, frac in 0.0f64..1.0,
    ) {
        let sn = sc * frac;
        let mut m1 = SamplerMemory::new();
        let mut m2 = SamplerMemory::new();
        let (x, d) = (Latent::scalar(x), Latent::scalar(d));
        let e = sampler_step(SamplerKind::Euler, &x, &d, sc, sn, &mut m1, &StepAdjust::default()).unwrap();
        let g = sampler_step(SamplerKind::Ddim, &x, &d, sc, sn, &mut m2, &StepAdjust::default()).unwrap();
        prop_assert!((e.as_slice()[0] - g.as_slice()[0]).abs() <= 1e-12 * (1.0 + e.as_slice()[0].abs()));
    }
}

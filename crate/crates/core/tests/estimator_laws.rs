//! End-to-end behaviour of the unbiased estimator on the one model whose
//! smoothing distribution is known in closed form: with flat potentials and
//! uniform moves, every smoothing marginal is uniform on the unit interval.

use cbpf::coupled::{CoupledOptions, CouplingStrategy};
use cbpf::fk::{uniform_model, Path};
use cbpf::seed;
use cbpf::unbiased::{averaged_estimate, tune_lag, unbiased_estimate};

#[test]
fn estimator_mean_matches_the_uniform_smoother() {
    let t_len = 4;
    let model = uniform_model(t_len).unwrap();
    let options = CoupledOptions::new(CouplingStrategy::Jmc);
    let h = |p: &Path<f64>| vec![p.iter().sum::<f64>() / p.len() as f64];

    let tuning = tune_lag(&model, 8, &options, 11, 50, 0.9, 10_000).unwrap();
    let reps = 2_000;
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for r in 0..reps {
        let est = averaged_estimate(
            &model,
            &h,
            8,
            tuning.k,
            tuning.ell,
            tuning.lag,
            &options,
            seed::split_labelled(12, "uniform-mean", r),
            tuning.default_cap(),
        )
        .unwrap();
        sum += est.value[0];
        sumsq += est.value[0] * est.value[0];
    }
    let mean = sum / reps as f64;
    let var = (sumsq / reps as f64 - mean * mean).max(0.0);
    let se = (var / reps as f64).sqrt();
    assert!(
        (mean - 0.5).abs() < 5.0 * se.max(1e-6),
        "estimator mean = {mean}, se = {se}"
    );
}

#[test]
fn single_offset_estimator_is_also_centred() {
    let model = uniform_model(3).unwrap();
    let options = CoupledOptions::new(CouplingStrategy::Imc);
    let h = |p: &Path<f64>| vec![p[0]];

    let reps = 2_000;
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for r in 0..reps {
        let est = unbiased_estimate(
            &model,
            &h,
            6,
            3,
            1,
            &options,
            seed::split_labelled(13, "uniform-first", r),
            10_000,
        )
        .unwrap();
        sum += est.value[0];
        sumsq += est.value[0] * est.value[0];
    }
    let mean = sum / reps as f64;
    let var = (sumsq / reps as f64 - mean * mean).max(0.0);
    let se = (var / reps as f64).sqrt();
    assert!(
        (mean - 0.5).abs() < 5.0 * se.max(1e-6),
        "estimator mean = {mean}, se = {se}"
    );
}

#[test]
fn tuning_is_deterministic_in_the_seed() {
    let model = uniform_model(5).unwrap();
    let options = CoupledOptions::new(CouplingStrategy::Jic);
    let a = tune_lag(&model, 4, &options, 99, 30, 0.9, 10_000).unwrap();
    let b = tune_lag(&model, 4, &options, 99, 30, 0.9, 10_000).unwrap();
    assert_eq!(a.lag, b.lag);
    assert_eq!(a.pilot_taus, b.pilot_taus);
}

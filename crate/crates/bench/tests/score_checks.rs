//! Gradient correctness against finite differences and closed forms, the
//! transform pullback chain rule, and a full linear-Gaussian fit against a
//! derivative-free optimum of the exact likelihood.

use cbpf::coupled::{CoupledOptions, CouplingStrategy};
use cbpf::score::{
    mle_fit, AdamState, GradientSchedule, LinearGaussianFamily, MleOptions, ModelFamily,
    SvFamily, Transform, TransformedParams,
};
use cbpf_bench::oracle::{kalman_smoother, lg_synthetic, nelder_mead, sv_synthetic};
use cbpf_bench::stats::central_difference;
use cbpf::fk::SvParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn assert_gradient_matches_fd(family: &impl ModelFamily, theta: &[f64], path: &[f64]) {
    let analytic = family.log_joint_gradient(theta, path).unwrap();
    let fd = central_difference(
        |probe| family.log_joint(probe, path).unwrap(),
        theta,
        1e-5,
    );
    for (i, (a, f)) in analytic.iter().zip(&fd).enumerate() {
        let rel = (a - f).abs() / a.abs().max(1.0);
        assert!(
            rel < 1e-5,
            "component {i}: analytic {a} vs finite difference {f} (rel {rel})\ntheta {theta:?}"
        );
    }
}

/// A latent path that is plausible under the model but otherwise arbitrary.
fn random_path(rng: &mut ChaCha8Rng, t_len: usize, center: f64, spread: f64) -> Vec<f64> {
    (0..t_len)
        .map(|_| center + spread * (rng.gen::<f64>() - 0.5))
        .collect()
}

#[test]
fn linear_gaussian_gradient_matches_finite_differences() {
    let obs = lg_synthetic(0.8, 1.0, 0.7, 12, 77).unwrap().obs;
    let family = LinearGaussianFamily::new(obs);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..4 {
        let theta = vec![
            1.8 * rng.gen::<f64>() - 0.9,
            0.3 + 1.7 * rng.gen::<f64>(),
            0.3 + 1.7 * rng.gen::<f64>(),
        ];
        let path = random_path(&mut rng, 12, 0.0, 4.0);
        assert_gradient_matches_fd(&family, &theta, &path);
    }
}

#[test]
fn sv_gradient_matches_finite_differences_in_both_variance_conventions() {
    let truth = SvParams {
        mu: -1.0,
        phi: 0.9,
        rho: -0.3,
        sigma: 0.4,
    };
    let obs = sv_synthetic(&truth, 12, 78).unwrap().obs;
    for from_phi in [false, true] {
        let mut family = SvFamily::new(obs.clone());
        family.stationary_var_from_phi = from_phi;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..4 {
            let theta = vec![
                2.0 * rng.gen::<f64>() - 2.0,
                1.6 * rng.gen::<f64>() - 0.8,
                1.6 * rng.gen::<f64>() - 0.8,
                0.2 + 0.8 * rng.gen::<f64>(),
            ];
            let path = random_path(&mut rng, 12, theta[0], 2.0);
            assert_gradient_matches_fd(&family, &theta, &path);
        }
    }
}

/// With phi = rho = 0 the latent chain is iid `N(mu, sigma^2)`, so the
/// mu and sigma derivatives collapse to textbook Gaussian expressions.
#[test]
fn sv_gradient_collapses_for_independent_states() {
    let truth = SvParams {
        mu: -0.5,
        phi: 0.8,
        rho: 0.2,
        sigma: 0.5,
    };
    let obs = sv_synthetic(&truth, 10, 79).unwrap().obs;
    let family = SvFamily::new(obs);
    let (mu, sigma) = (-0.4, 0.6);
    let theta = vec![mu, 0.0, 0.0, sigma];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let path = random_path(&mut rng, 10, mu, 1.5);

    let grad = family.log_joint_gradient(&theta, &path).unwrap();
    let d_mu: f64 = path.iter().map(|x| (x - mu) / (sigma * sigma)).sum();
    let d_sigma: f64 = path
        .iter()
        .map(|x| (x - mu) * (x - mu) / sigma.powi(3) - 1.0 / sigma)
        .sum();
    assert!((grad[0] - d_mu).abs() < 1e-10, "{} vs {d_mu}", grad[0]);
    assert!((grad[3] - d_sigma).abs() < 1e-10, "{} vs {d_sigma}", grad[3]);
}

#[test]
fn transform_pullback_matches_finite_differences() {
    let transforms = vec![Transform::LogitSigned, Transform::Log, Transform::Identity];
    let params = TransformedParams::from_raw(vec![0.3, -0.7, 1.2], transforms.clone()).unwrap();
    let g = |c: &[f64]| c[0] * c[0] + c[1].sin() + c[0] * c[2];
    let c = params.constrained();
    let grad_constrained = vec![2.0 * c[0] + c[2], c[1].cos(), c[0]];
    let raw_grad = params.gradient_to_raw(&grad_constrained);

    let fd = central_difference(
        |raw| {
            let p = TransformedParams::from_raw(raw.to_vec(), transforms.clone()).unwrap();
            g(&p.constrained())
        },
        params.raw(),
        1e-6,
    );
    for (i, (a, f)) in raw_grad.iter().zip(&fd).enumerate() {
        assert!(
            (a - f).abs() < 1e-6 * a.abs().max(1.0),
            "raw component {i}: {a} vs {f}"
        );
    }
}

/// Fit the linear-Gaussian family by stochastic gradient ascent and compare
/// with a direct derivative-free maximisation of the exact Kalman
/// likelihood over the same raw coordinates.
#[test]
fn linear_gaussian_mle_matches_the_exact_likelihood_optimum() {
    let obs = lg_synthetic(0.8, 1.0, 0.5, 150, 99).unwrap().obs;
    let transforms = vec![Transform::LogitSigned, Transform::Log, Transform::Log];

    let negative_loglik = |raw: &[f64]| {
        let c: Vec<f64> = raw
            .iter()
            .zip(&transforms)
            .map(|(r, tr)| tr.to_constrained(*r))
            .collect();
        -kalman_smoother(c[0], c[1], c[2], &obs).unwrap().log_likelihood
    };
    let raw_opt = nelder_mead(negative_loglik, &[0.0, 0.0, 0.0], 0.5, 400);
    let exact_opt: Vec<f64> = raw_opt
        .iter()
        .zip(&transforms)
        .map(|(r, tr)| tr.to_constrained(*r))
        .collect();

    let family = LinearGaussianFamily::new(obs.clone());
    let init = TransformedParams::from_constrained(&[0.0, 1.0, 1.0], family.transforms()).unwrap();
    let options = MleOptions {
        n_particles: 24,
        coupled: CoupledOptions::new(CouplingStrategy::Imc),
        schedule: GradientSchedule::Markovian,
        iterations: 4_000,
        adam: AdamState::new(3).with_alpha(0.02),
        seed: 17,
    };
    let trace = mle_fit(&family, init, &options).unwrap();

    let tail = 800;
    let mut fitted = vec![0.0; 3];
    for row in trace.iter().rev().take(tail) {
        for (f, c) in fitted.iter_mut().zip(&row.constrained) {
            *f += c / tail as f64;
        }
    }
    for (i, (fit, exact)) in fitted.iter().zip(&exact_opt).enumerate() {
        assert!(
            (fit - exact).abs() < 0.1,
            "parameter {i}: sga {fit} vs kalman optimum {exact}\nfull fit {fitted:?} vs {exact_opt:?}"
        );
    }
}

//! Release gates. Every test prints one `ACCEPTANCE` verdict line (shown
//! under `--nocapture`) and then asserts it, so the whole suite doubles as a
//! scannable report: coupler exactness, kernel invariance, the closed-form
//! meeting laws, horizon scaling, estimator unbiasedness, score identities,
//! parameter recovery and byte-level CLI determinism.

use cbpf::coupled::{coupled_cbpf_transition, CoupledOptions, CouplingStrategy};
use cbpf::coupling::{
    max_couple_categorical, max_couple_generic, normalized_weights, SamplerFromFns,
    REJECTION_CAP_DEFAULT,
};
use cbpf::fk::{
    linear_gaussian_model, linear_gaussian_model_with_observations, uniform_model,
    FeynmanKacModel, Path, SvParams,
};
use cbpf::kernels::{cbpf_transition, cpf_transition, marginal_cbpf_transition, particle_filter};
use cbpf::score::{
    mle_fit, AdamState, GradientSchedule, LinearGaussianFamily, MleOptions, ModelFamily, SvFamily,
    TransformedParams,
};
use cbpf::seed;
use cbpf::unbiased::{averaged_estimate, tune_lag};
use cbpf_bench::config::{ExperimentConfig, ModelSpec};
use cbpf_bench::harness::{coupled_meeting_run, run_meeting_benchmark};
use cbpf_bench::oracle::{
    forward_backward, forward_backward_pairwise, kalman_smoother, kalman_smoother_zero_obs,
    lg_synthetic, path_index, random_hmm, random_pairwise_hmm, sv_synthetic,
};
use cbpf_bench::stats::{
    central_difference, chi2_two_sample, ks_test, ks_test_discrete, mean_and_se, normal_cdf,
    simultaneous_binomial_halfwidth,
};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn report(number: u32, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("ACCEPTANCE {number:02} {name}: {verdict} ({detail})");
    assert!(pass, "{name}: {detail}");
}

#[test]
fn acceptance_01_categorical_coupler_meeting_rate() {
    const DRAWS: u64 = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst_z = 0.0f64;
    for _ in 0..20 {
        let dim = rng.gen_range(2..=30);
        let noise =
            |rng: &mut ChaCha8Rng| 1.5 * rng.sample::<f64, _>(StandardNormal);
        let la: Vec<f64> = (0..dim).map(|_| noise(&mut rng)).collect();
        let lb: Vec<f64> = (0..dim).map(|_| noise(&mut rng)).collect();
        let pa = normalized_weights(&la).unwrap();
        let pb = normalized_weights(&lb).unwrap();
        let overlap: f64 = pa.iter().zip(&pb).map(|(&x, &y)| x.min(y)).sum();

        let mut met = 0u64;
        for _ in 0..DRAWS {
            let (i, j) = max_couple_categorical(&la, &lb, &mut rng).unwrap();
            met += u64::from(i == j);
        }
        let freq = met as f64 / DRAWS as f64;
        let sigma = (overlap * (1.0 - overlap) / DRAWS as f64).sqrt();
        worst_z = worst_z.max((freq - overlap).abs() / sigma);
    }
    report(
        1,
        "categorical coupler meeting rate",
        worst_z <= 3.0,
        &format!("worst deviation {worst_z:.2} sigma over 20 weight pairs"),
    );
}

#[test]
fn acceptance_02_generic_coupler_rate_and_marginals() {
    const RUNS: usize = 100_000;
    let logpdf = |mean: f64| move |x: &f64| -0.5 * ((x - mean) * (x - mean) + (2.0 * std::f64::consts::PI).ln());
    let p = SamplerFromFns {
        sample_fn: |rng: &mut dyn RngCore| rng.sample::<f64, _>(StandardNormal),
        log_density_fn: logpdf(0.0),
    };
    let q = SamplerFromFns {
        sample_fn: |rng: &mut dyn RngCore| 1.0 + rng.sample::<f64, _>(StandardNormal),
        log_density_fn: logpdf(1.0),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut met = 0u64;
    let mut xs = Vec::with_capacity(RUNS);
    let mut ys = Vec::with_capacity(RUNS);
    for _ in 0..RUNS {
        let (x, y, same) = max_couple_generic(&p, &q, &mut rng, REJECTION_CAP_DEFAULT).unwrap();
        met += u64::from(same);
        xs.push(x);
        ys.push(y);
    }
    let rate = met as f64 / RUNS as f64;
    let (_, p_x) = ks_test(&xs, normal_cdf);
    let (_, p_y) = ks_test(&ys, |v| normal_cdf(v - 1.0));
    let pass = (rate - 0.6171).abs() <= 0.01 && p_x > 1e-3 && p_y > 1e-3;
    report(
        2,
        "generic coupler rate and marginals",
        pass,
        &format!("rate {rate:.4} (expect 0.6171), marginal KS p {p_x:.3} / {p_y:.3}"),
    );
}

/// Per-time state occupancy of a long kernel chain, kept sweeps only.
fn occupancy<M, K>(model: &M, n_states: usize, seed: u64, kernel: K) -> Vec<Vec<f64>>
where
    M: FeynmanKacModel<State = usize>,
    K: Fn(&M, &Path<usize>, &mut ChaCha8Rng) -> Path<usize>,
{
    const KEPT: u64 = 100_000;
    const BURN: u64 = 1_000;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reference = particle_filter(model, 3, &mut rng).unwrap();
    let mut counts = vec![vec![0u64; n_states]; model.horizon()];
    for iter in 1..=(BURN + KEPT) {
        let path = kernel(model, &reference, &mut rng);
        if iter > BURN {
            for (t, &s) in path.iter().enumerate() {
                counts[t][s] += 1;
            }
        }
        reference = path;
    }
    counts
        .into_iter()
        .map(|row| row.into_iter().map(|c| c as f64 / KEPT as f64).collect())
        .collect()
}

fn worst_tv(empirical: &[Vec<f64>], exact: &[Vec<f64>]) -> f64 {
    empirical
        .iter()
        .zip(exact)
        .map(|(e, x)| 0.5 * e.iter().zip(x).map(|(a, b)| (a - b).abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

#[test]
fn acceptance_03_smoothing_kernels_match_sum_product() {
    let hmm = random_hmm(3, 5, 204);
    let exact = forward_backward(&hmm).unwrap();
    let backward = occupancy(&hmm, 3, 1031, |m, r, rng| {
        cbpf_transition(m, r, 3, rng).unwrap().path
    });
    let tracing = occupancy(&hmm, 3, 1032, |m, r, rng| {
        cpf_transition(m, r, 3, rng).unwrap().path
    });
    let pairwise = random_pairwise_hmm(3, 5, 205);
    let exact_pairwise = forward_backward_pairwise(&pairwise).unwrap();
    let marginal = occupancy(&pairwise, 3, 1033, |m, r, rng| {
        marginal_cbpf_transition(m, r, 3, rng).unwrap().path
    });

    let tvs = [
        worst_tv(&backward, &exact.marginals),
        worst_tv(&tracing, &exact.marginals),
        worst_tv(&marginal, &exact_pairwise.marginals),
    ];
    let worst = tvs.iter().fold(0.0f64, |a, &b| a.max(b));
    report(
        3,
        "smoothing kernels match sum-product",
        worst < 0.01,
        &format!(
            "per-time TV backward {:.4}, tracing {:.4}, pairwise {:.4}",
            tvs[0], tvs[1], tvs[2]
        ),
    );
}

#[test]
fn acceptance_04_flat_model_meeting_law() {
    const REPS: u64 = 10_000;
    let t_len = 50;
    let model = uniform_model(t_len).unwrap();
    let options = CoupledOptions::new(CouplingStrategy::Jmc);

    let mut tau_le_k = [0u64; 10];
    let mut first_meet_counts: Vec<u64> = Vec::new();
    for r in 0..REPS {
        let run_seed = seed::split_labelled(104, "meeting", r);
        let mut first = vec![0u64; t_len];
        let outcome = coupled_meeting_run(&model, 4, &options, run_seed, 1_000, |iter, out| {
            let mut differ = vec![false; t_len];
            for &t in &out.holes {
                differ[t] = true;
            }
            for t in 0..t_len {
                if first[t] == 0 && !differ[t] {
                    first[t] = iter;
                }
            }
        })
        .unwrap();
        assert!(outcome.completed, "replicate {r} hit the iteration cap");
        for k in 1..=10 {
            tau_le_k[k - 1] += u64::from(outcome.tau <= k as u64);
        }
        for &f in &first {
            let idx = f as usize - 1;
            if first_meet_counts.len() <= idx {
                first_meet_counts.resize(idx + 1, 0);
            }
            first_meet_counts[idx] += 1;
        }
    }

    // The meeting time is the maximum of one geometric clock per time step,
    // so its CDF is the 50-fold power of the per-step law.
    let mut worst_excess = f64::NEG_INFINITY;
    for k in 1..=10 {
        let p = (1.0 - 5.0f64.powi(-k)).powi(50);
        let emp = tau_le_k[k as usize - 1] as f64 / REPS as f64;
        let half = simultaneous_binomial_halfwidth(REPS as usize, p, 0.05, 10);
        worst_excess = worst_excess.max((emp - p).abs() - half);
    }
    let cdf: Vec<f64> = (1..=first_meet_counts.len())
        .map(|k| 1.0 - 0.2f64.powi(k as i32))
        .collect();
    let (_, p_ks) = ks_test_discrete(&first_meet_counts, &cdf);
    let pass = worst_excess <= 0.0 && p_ks > 1e-3;
    report(
        4,
        "flat model meeting law",
        pass,
        &format!("band slack {worst_excess:.5}, per-time geometric KS p {p_ks:.3}"),
    );
}

#[test]
fn acceptance_05_meeting_time_growth_with_horizon() {
    let config = ExperimentConfig {
        model: ModelSpec::Barriers { a: 0.5, w: 0.2, b: 0.5 },
        horizons: vec![512, 4096],
        particle_counts: vec![31],
        strategies: vec![
            CouplingStrategy::Jmc,
            CouplingStrategy::Imc,
            CouplingStrategy::Iic,
        ],
        replicates: 100,
        seed: 105,
        iteration_cap: 100_000,
        time_budget: None,
        out_dir: None,
        timings: false,
    };
    let result = run_meeting_benchmark(&config).unwrap();
    assert!(!result.budget_exhausted);
    let mean_tau = |strategy: CouplingStrategy, t_len: usize| -> f64 {
        let row = result
            .cost
            .iter()
            .find(|c| c.strategy == strategy && c.t_len == t_len)
            .expect("cell missing");
        assert!(row.completed, "{strategy} T={t_len} had unmet replicates");
        row.mean_tau
    };
    let ratio = |s: CouplingStrategy| mean_tau(s, 4096) / mean_tau(s, 512);
    let (r_jmc, r_imc, r_iic) = (
        ratio(CouplingStrategy::Jmc),
        ratio(CouplingStrategy::Imc),
        ratio(CouplingStrategy::Iic),
    );
    let pass = r_jmc < 2.0 && r_imc < 2.0 && r_iic > 4.0;
    report(
        5,
        "meeting time growth with horizon",
        pass,
        &format!("mean-tau ratios T=4096/T=512: jmc {r_jmc:.2}, imc {r_imc:.2}, iic {r_iic:.2}"),
    );
}

#[test]
fn acceptance_06_unbiased_mid_state_estimate() {
    const REPS: u64 = 10_000;
    let t_len = 32;
    let n = 16;
    let model = linear_gaussian_model(0.9, 1.0, 1.0, t_len).unwrap();
    let target = kalman_smoother_zero_obs(0.9, 1.0, 1.0, t_len).unwrap().means[t_len / 2];
    let options = CoupledOptions::new(CouplingStrategy::Jmc);
    let h = |p: &Path<f64>| vec![p[t_len / 2]];

    let tuning = tune_lag(
        &model,
        n,
        &options,
        seed::split_labelled(106, "tune", 0),
        200,
        0.9,
        10_000,
    )
    .unwrap();
    let cap = tuning.default_cap();
    let values: Vec<f64> = (0..REPS)
        .map(|r| {
            averaged_estimate(
                &model,
                &h,
                n,
                tuning.k,
                tuning.ell,
                tuning.lag,
                &options,
                seed::split_labelled(106, "estimate", r),
                cap,
            )
            .unwrap()
            .value[0]
        })
        .collect();
    let (mean, se) = mean_and_se(&values);
    let variance = se * se * REPS as f64;
    let pass = (mean - target).abs() <= 4.0 * se && variance.is_finite();
    report(
        6,
        "unbiased mid-state estimate",
        pass,
        &format!(
            "mean {mean:.4} vs exact {target:.4} (SE {se:.4}, lag {}), variance {variance:.4}",
            tuning.lag
        ),
    );
}

/// Largest relative gap between the analytic trajectory-gradient and central
/// finite differences of the log joint density.
fn worst_fd_gap<F: ModelFamily>(family: &F, theta: &[f64], path: &[f64]) -> f64 {
    let analytic = family.log_joint_gradient(theta, path).unwrap();
    let fd = central_difference(|th| family.log_joint(th, path).unwrap(), theta, 1e-5);
    analytic
        .iter()
        .zip(&fd)
        .map(|(a, f)| (a - f).abs() / a.abs().max(1.0))
        .fold(0.0, f64::max)
}

fn random_path(rng: &mut ChaCha8Rng, t_len: usize, center: f64, spread: f64) -> Vec<f64> {
    (0..t_len)
        .map(|_| center + spread * (rng.gen::<f64>() - 0.5))
        .collect()
}

#[test]
fn acceptance_07_score_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(107);

    let lg_family = LinearGaussianFamily::new(lg_synthetic(0.8, 1.0, 0.7, 12, 1071).unwrap().obs);
    let mut worst_rel = 0.0f64;
    for _ in 0..10 {
        let theta = vec![
            1.8 * rng.gen::<f64>() - 0.9,
            0.3 + 1.7 * rng.gen::<f64>(),
            0.3 + 1.7 * rng.gen::<f64>(),
        ];
        let path = random_path(&mut rng, 12, 0.0, 4.0);
        worst_rel = worst_rel.max(worst_fd_gap(&lg_family, &theta, &path));
    }
    let sv_truth = SvParams { mu: -1.0, phi: 0.9, rho: -0.3, sigma: 0.4 };
    let sv_family = SvFamily::new(sv_synthetic(&sv_truth, 12, 1072).unwrap().obs);
    for _ in 0..10 {
        let theta = vec![
            -2.0 * rng.gen::<f64>(),
            1.8 * rng.gen::<f64>() - 0.9,
            1.8 * rng.gen::<f64>() - 0.9,
            0.2 + 1.3 * rng.gen::<f64>(),
        ];
        let path = random_path(&mut rng, 12, -1.0, 3.0);
        worst_rel = worst_rel.max(worst_fd_gap(&sv_family, &theta, &path));
    }

    // Fisher identity: the smoothing expectation of the trajectory gradient
    // is the gradient of the data log-likelihood, exact here by Kalman.
    let theta = vec![0.8, 1.0, 0.7];
    let obs = lg_synthetic(0.8, 1.0, 0.7, 16, 1073).unwrap().obs;
    let model =
        linear_gaussian_model_with_observations(theta[0], theta[1], theta[2], obs.clone()).unwrap();
    let family = LinearGaussianFamily::new(obs.clone());
    let h = |p: &Path<f64>| family.log_joint_gradient(&theta, p).unwrap();
    let options = CoupledOptions::new(CouplingStrategy::Jmc);
    let tuning = tune_lag(
        &model,
        16,
        &options,
        seed::split_labelled(1074, "tune", 0),
        100,
        0.9,
        10_000,
    )
    .unwrap();
    const RUNS: u64 = 500;
    let estimates: Vec<Vec<f64>> = (0..RUNS)
        .map(|r| {
            averaged_estimate(
                &model,
                &h,
                16,
                tuning.k,
                tuning.ell,
                tuning.lag,
                &options,
                seed::split_labelled(1074, "estimate", r),
                tuning.default_cap(),
            )
            .unwrap()
            .value
        })
        .collect();
    let exact = central_difference(
        |th| kalman_smoother(th[0], th[1], th[2], &obs).unwrap().log_likelihood,
        &theta,
        1e-5,
    );
    let mut worst_z = 0.0f64;
    for (i, &target) in exact.iter().enumerate() {
        let component: Vec<f64> = estimates.iter().map(|v| v[i]).collect();
        let (mean, se) = mean_and_se(&component);
        worst_z = worst_z.max((mean - target).abs() / se);
    }

    let pass = worst_rel < 1e-5 && worst_z <= 3.0;
    report(
        7,
        "score identities",
        pass,
        &format!("worst FD gap {worst_rel:.2e}, score expectation within {worst_z:.2} SE"),
    );
}

#[test]
fn acceptance_08_sv_parameter_recovery() {
    let truth = SvParams { mu: -9.2, phi: 0.97, rho: -0.67, sigma: 0.20 };
    let t_len = 2_000;
    let obs = sv_synthetic(&truth, t_len, seed::split_labelled(11, "mle-data", t_len as u64))
        .unwrap()
        .obs;
    let n = obs.len() as f64;
    let mean = obs.iter().sum::<f64>() / n;
    let variance = obs.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n;

    let family = SvFamily::new(obs);
    let init = TransformedParams::from_constrained(
        &[variance.ln(), 0.0, 0.0, 1.0],
        family.transforms(),
    )
    .unwrap();
    let options = MleOptions {
        n_particles: 32,
        coupled: CoupledOptions::new(CouplingStrategy::Imc),
        schedule: GradientSchedule::Markovian,
        iterations: 5_000,
        adam: AdamState::new(family.param_dim()),
        seed: 11,
    };
    let trace = mle_fit(&family, init, &options).unwrap();

    let tail = &trace[trace.len() - 1_000..];
    let avg = |i: usize| tail.iter().map(|row| row.constrained[i]).sum::<f64>() / tail.len() as f64;
    let (phi_hat, sigma_hat) = (avg(1), avg(3));
    let pass = (phi_hat - truth.phi).abs() <= 0.03 && (sigma_hat - truth.sigma).abs() <= 0.05;
    report(
        8,
        "sv parameter recovery",
        pass,
        &format!(
            "phi {phi_hat:.3} (true {}), sigma {sigma_hat:.3} (true {})",
            truth.phi, truth.sigma
        ),
    );
}

#[test]
fn acceptance_09_coupled_marginals_match_single_chain() {
    const DRAWS: usize = 100_000;
    let hmm = random_hmm(3, 5, 109);
    let n = 3;
    let cells = 3usize.pow(5);
    let mut rng = ChaCha8Rng::seed_from_u64(1091);
    let ref_a = particle_filter(&hmm, n, &mut rng).unwrap();
    let mut ref_b = particle_filter(&hmm, n, &mut rng).unwrap();
    while *ref_b == *ref_a {
        ref_b = particle_filter(&hmm, n, &mut rng).unwrap();
    }

    let single = |reference: &Path<usize>, rng: &mut ChaCha8Rng| -> Vec<u64> {
        let mut counts = vec![0u64; cells];
        for _ in 0..DRAWS {
            let out = cbpf_transition(&hmm, reference, n, rng).unwrap();
            counts[path_index(&out.path, 3)] += 1;
        }
        counts
    };
    let single_a = single(&ref_a, &mut rng);
    let single_b = single(&ref_b, &mut rng);

    let mut worst_p = 1.0f64;
    let mut detail = String::new();
    for strategy in CouplingStrategy::ALL {
        let options = CoupledOptions::new(strategy);
        let mut counts_a = vec![0u64; cells];
        let mut counts_b = vec![0u64; cells];
        for _ in 0..DRAWS {
            let out = coupled_cbpf_transition(&hmm, &ref_a, &ref_b, n, &options, &mut rng).unwrap();
            counts_a[path_index(&out.path_a, 3)] += 1;
            counts_b[path_index(&out.path_b, 3)] += 1;
        }
        let (_, _, p_a) = chi2_two_sample(&counts_a, &single_a, 5.0);
        let (_, _, p_b) = chi2_two_sample(&counts_b, &single_b, 5.0);
        worst_p = worst_p.min(p_a).min(p_b);
        detail.push_str(&format!("{strategy} {p_a:.3}/{p_b:.3} "));
    }
    report(
        9,
        "coupled marginals match single chain",
        worst_p > 1e-3,
        &format!("chi-square p per strategy and side: {}", detail.trim_end()),
    );
}

#[test]
fn acceptance_10_thread_count_invariance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("tiny.cfg");
    std::fs::write(
        &cfg_path,
        "model.family = uniform\nmodel.T = 4\nsweep.N = 3\nsweep.strategies = jmc, iic\nreplicates = 5\nseed = 9\n",
    )
    .unwrap();

    let mut outputs = Vec::new();
    for (name, threads) in [("one", "1"), ("four", "4")] {
        let out = dir.path().join(name);
        let status = std::process::Command::new(env!("CARGO_BIN_EXE_cbpf-bench"))
            .args([
                "bench",
                "--config",
                cfg_path.to_str().unwrap(),
                "--threads",
                threads,
                "--out",
                out.to_str().unwrap(),
            ])
            .status()
            .unwrap();
        assert!(status.success());
        outputs.push((
            std::fs::read(out.join("meeting.csv")).unwrap(),
            std::fs::read(out.join("cost.csv")).unwrap(),
        ));
    }
    let pass = outputs[0] == outputs[1];
    report(
        10,
        "thread count invariance",
        pass,
        "bench outputs byte-identical across --threads 1 and 4",
    );
}

//! Exact reference computations that the Monte Carlo code is tested
//! against: closed-form Gaussian smoothing, sum-product marginals on finite
//! state spaces with brute-force enumeration as a back-check, synthetic data
//! generators and a small derivative-free optimiser. Everything here is
//! deliberately independent of the sampler internals.

use anyhow::{ensure, Context, Result};
use cbpf::fk::{FeynmanKacModel, PairwisePotentialModel, SvParams};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const LN_2PI: f64 = 1.8378770664093453;

fn normal_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (LN_2PI + var.ln() + d * d / var)
}

/// Exact smoothing moments and log-likelihood of the AR(1)-plus-noise model.
#[derive(Clone, Debug)]
pub struct KalmanSmoother {
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    pub log_likelihood: f64,
}

/// Kalman filter plus Rauch-Tung-Striebel smoother for the model
/// `X_0 ~ N(0, sigma_x^2 / (1 - rho^2))`, `X_t = rho X_{t-1} + N(0, sigma_x^2)`,
/// `Y_t = X_t + N(0, sigma_y^2)`.
pub fn kalman_smoother(rho: f64, sigma_x: f64, sigma_y: f64, obs: &[f64]) -> Result<KalmanSmoother> {
    ensure!(rho.abs() < 1.0, "|rho| must be below 1, got {rho}");
    ensure!(sigma_x > 0.0, "sigma_x must be positive, got {sigma_x}");
    ensure!(sigma_y > 0.0, "sigma_y must be positive, got {sigma_y}");
    ensure!(!obs.is_empty(), "need at least one observation");

    let t_len = obs.len();
    let vx = sigma_x * sigma_x;
    let vy = sigma_y * sigma_y;
    let v0 = vx / (1.0 - rho * rho);

    let mut m_pred = vec![0.0; t_len];
    let mut p_pred = vec![0.0; t_len];
    let mut m_filt = vec![0.0; t_len];
    let mut p_filt = vec![0.0; t_len];
    let mut log_likelihood = 0.0;
    for t in 0..t_len {
        if t == 0 {
            m_pred[t] = 0.0;
            p_pred[t] = v0;
        } else {
            m_pred[t] = rho * m_filt[t - 1];
            p_pred[t] = rho * rho * p_filt[t - 1] + vx;
        }
        let s = p_pred[t] + vy;
        log_likelihood += normal_logpdf(obs[t], m_pred[t], s);
        let gain = p_pred[t] / s;
        m_filt[t] = m_pred[t] + gain * (obs[t] - m_pred[t]);
        p_filt[t] = (1.0 - gain) * p_pred[t];
    }

    let mut means = vec![0.0; t_len];
    let mut variances = vec![0.0; t_len];
    means[t_len - 1] = m_filt[t_len - 1];
    variances[t_len - 1] = p_filt[t_len - 1];
    for t in (0..t_len - 1).rev() {
        let c = p_filt[t] * rho / p_pred[t + 1];
        means[t] = m_filt[t] + c * (means[t + 1] - m_pred[t + 1]);
        variances[t] = p_filt[t] + c * c * (variances[t + 1] - p_pred[t + 1]);
    }
    Ok(KalmanSmoother {
        means,
        variances,
        log_likelihood,
    })
}

/// The smoother for the all-zero observation record of length `t_len`.
pub fn kalman_smoother_zero_obs(
    rho: f64,
    sigma_x: f64,
    sigma_y: f64,
    t_len: usize,
) -> Result<KalmanSmoother> {
    kalman_smoother(rho, sigma_x, sigma_y, &vec![0.0; t_len])
}

/// The same smoothing moments computed the slow way: build the joint Gaussian
/// of states and observations and condition by dense linear algebra. Used to
/// cross-check the recursive smoother; only sensible for short horizons.
pub fn gaussian_conditioning_smoother(
    rho: f64,
    sigma_x: f64,
    sigma_y: f64,
    obs: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    ensure!(rho.abs() < 1.0, "|rho| must be below 1, got {rho}");
    let t_len = obs.len();
    ensure!((1..=64).contains(&t_len), "horizon {t_len} out of range for dense conditioning");
    let v0 = sigma_x * sigma_x / (1.0 - rho * rho);
    let vy = sigma_y * sigma_y;

    // Stationary AR(1) covariance: Cov(X_i, X_j) = v0 rho^{|i-j|}.
    let sxx = DMatrix::from_fn(t_len, t_len, |i, j| {
        v0 * rho.powi((i as i32 - j as i32).abs())
    });
    let syy = &sxx + DMatrix::identity(t_len, t_len) * vy;
    let chol = syy
        .cholesky()
        .context("observation covariance is not positive definite")?;
    let y = DVector::from_column_slice(obs);
    let mean = &sxx * chol.solve(&y);
    let cov = &sxx - &sxx * chol.solve(&sxx);
    Ok((
        mean.iter().copied().collect(),
        cov.diagonal().iter().copied().collect(),
    ))
}

/// A finite-state hidden Markov model in Feynman-Kac form, with per-time
/// transition matrices and potentials. Used as the exactly solvable test bed
/// for the particle kernels.
#[derive(Clone, Debug)]
pub struct DiscreteHmm {
    /// Initial probabilities over states.
    pub initial: Vec<f64>,
    /// `transitions[t - 1][from][to]` for `t = 1, ..., T - 1`.
    pub transitions: Vec<Vec<Vec<f64>>>,
    /// `potentials[t][state]`, strictly positive.
    pub potentials: Vec<Vec<f64>>,
}

impl DiscreteHmm {
    pub fn n_states(&self) -> usize {
        self.initial.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.n_states();
        let t_len = self.potentials.len();
        ensure!(k >= 1, "need at least one state");
        ensure!(t_len >= 1, "need at least one time index");
        ensure!(
            self.transitions.len() == t_len - 1,
            "expected {} transition matrices, got {}",
            t_len - 1,
            self.transitions.len()
        );
        check_simplex(&self.initial, "initial distribution")?;
        for (t, matrix) in self.transitions.iter().enumerate() {
            ensure!(matrix.len() == k, "transition matrix {t} has wrong row count");
            for row in matrix {
                check_simplex(row, &format!("transition row at t = {}", t + 1))?;
            }
        }
        for (t, g) in self.potentials.iter().enumerate() {
            ensure!(g.len() == k, "potential vector at t = {t} has wrong length");
            ensure!(
                g.iter().all(|&v| v > 0.0 && v.is_finite()),
                "potentials at t = {t} must be positive and finite"
            );
        }
        Ok(())
    }
}

fn check_simplex(probs: &[f64], what: &str) -> Result<()> {
    ensure!(
        probs.iter().all(|&p| p >= 0.0 && p.is_finite()),
        "{what} has negative or non-finite entries"
    );
    let total: f64 = probs.iter().sum();
    ensure!((total - 1.0).abs() < 1e-9, "{what} sums to {total}, not 1");
    Ok(())
}

fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

impl FeynmanKacModel for DiscreteHmm {
    type State = usize;

    fn horizon(&self) -> usize {
        self.potentials.len()
    }

    fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_categorical(&self.initial, rng)
    }

    fn log_initial(&self, x: &usize) -> f64 {
        self.initial[*x].ln()
    }

    fn sample_transition<R: Rng + ?Sized>(&self, t: usize, from: &usize, rng: &mut R) -> usize {
        sample_categorical(&self.transitions[t - 1][*from], rng)
    }

    fn log_transition(&self, t: usize, from: &usize, to: &usize) -> f64 {
        self.transitions[t - 1][*from][*to].ln()
    }

    fn log_potential(&self, t: usize, x: &usize) -> f64 {
        self.potentials[t][*x].ln()
    }
}

/// A finite-state model whose potentials beyond time zero look at adjacent
/// state pairs, exercising the marginalised kernel.
#[derive(Clone, Debug)]
pub struct PairwiseDiscreteHmm {
    pub base: DiscreteHmm,
    /// `pairwise[t - 1][prev][x]` for `t = 1, ..., T - 1`, strictly positive.
    pub pairwise: Vec<Vec<Vec<f64>>>,
}

impl PairwiseDiscreteHmm {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        let k = self.base.n_states();
        ensure!(
            self.pairwise.len() == self.base.horizon() - 1,
            "expected {} pairwise potential matrices, got {}",
            self.base.horizon() - 1,
            self.pairwise.len()
        );
        for (t, matrix) in self.pairwise.iter().enumerate() {
            ensure!(matrix.len() == k, "pairwise matrix {t} has wrong row count");
            for row in matrix {
                ensure!(row.len() == k, "pairwise matrix {t} has a short row");
                ensure!(
                    row.iter().all(|&v| v > 0.0 && v.is_finite()),
                    "pairwise potentials at t = {} must be positive",
                    t + 1
                );
            }
        }
        Ok(())
    }
}

impl FeynmanKacModel for PairwiseDiscreteHmm {
    type State = usize;

    fn horizon(&self) -> usize {
        self.base.horizon()
    }

    fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.base.sample_initial(rng)
    }

    fn log_initial(&self, x: &usize) -> f64 {
        self.base.log_initial(x)
    }

    fn sample_transition<R: Rng + ?Sized>(&self, t: usize, from: &usize, rng: &mut R) -> usize {
        self.base.sample_transition(t, from, rng)
    }

    fn log_transition(&self, t: usize, from: &usize, to: &usize) -> f64 {
        self.base.log_transition(t, from, to)
    }

    // The pair potential carries all the tilting beyond time zero.
    fn log_potential(&self, t: usize, x: &usize) -> f64 {
        if t == 0 {
            self.base.log_potential(0, x)
        } else {
            0.0
        }
    }
}

impl PairwisePotentialModel for PairwiseDiscreteHmm {
    fn log_pairwise_potential(&self, t: usize, prev: &usize, x: &usize) -> f64 {
        self.pairwise[t - 1][*prev][*x].ln()
    }
}

/// Exact per-time smoothing marginals.
#[derive(Clone, Debug)]
pub struct SmoothingMarginals {
    /// `marginals[t][state]`.
    pub marginals: Vec<Vec<f64>>,
    pub log_normalizer: f64,
}

/// Sum-product (forward-backward) smoothing marginals of a [`DiscreteHmm`].
pub fn forward_backward(hmm: &DiscreteHmm) -> Result<SmoothingMarginals> {
    hmm.validate()?;
    sum_product(hmm, |t, prev, x| {
        hmm.transitions[t - 1][prev][x] * hmm.potentials[t][x]
    })
}

/// Sum-product marginals of a [`PairwiseDiscreteHmm`].
pub fn forward_backward_pairwise(hmm: &PairwiseDiscreteHmm) -> Result<SmoothingMarginals> {
    hmm.validate()?;
    sum_product(&hmm.base, |t, prev, x| {
        hmm.base.transitions[t - 1][prev][x] * hmm.pairwise[t - 1][prev][x]
    })
}

/// Shared recursion: `kernel(t, prev, x)` is the weighted one-step factor
/// `M_t(prev, x) G_t(...)` for `t >= 1`; time zero always uses
/// `initial * potentials[0]`.
fn sum_product(
    hmm: &DiscreteHmm,
    kernel: impl Fn(usize, usize, usize) -> f64,
) -> Result<SmoothingMarginals> {
    let k = hmm.n_states();
    let t_len = hmm.horizon();

    let mut alpha = vec![vec![0.0; k]; t_len];
    let mut log_normalizer = 0.0;
    for x in 0..k {
        alpha[0][x] = hmm.initial[x] * hmm.potentials[0][x];
    }
    log_normalizer += normalize_in_place(&mut alpha[0], 0)?;
    for t in 1..t_len {
        for x in 0..k {
            alpha[t][x] = (0..k).map(|p| alpha[t - 1][p] * kernel(t, p, x)).sum();
        }
        log_normalizer += normalize_in_place(&mut alpha[t], t)?;
    }

    let mut beta = vec![vec![1.0; k]; t_len];
    for t in (0..t_len - 1).rev() {
        for x in 0..k {
            beta[t][x] = (0..k).map(|n| kernel(t + 1, x, n) * beta[t + 1][n]).sum();
        }
        normalize_in_place(&mut beta[t], t)?;
    }

    let mut marginals = vec![vec![0.0; k]; t_len];
    for t in 0..t_len {
        for x in 0..k {
            marginals[t][x] = alpha[t][x] * beta[t][x];
        }
        normalize_in_place(&mut marginals[t], t)?;
    }
    Ok(SmoothingMarginals {
        marginals,
        log_normalizer,
    })
}

fn normalize_in_place(v: &mut [f64], t: usize) -> Result<f64> {
    let total: f64 = v.iter().sum();
    ensure!(
        total > 0.0 && total.is_finite(),
        "the model assigns zero mass at time {t}"
    );
    for x in v.iter_mut() {
        *x /= total;
    }
    Ok(total.ln())
}

/// Flat index of a trajectory: digit `t` counts `n_states^t`.
pub fn path_index(path: &[usize], n_states: usize) -> usize {
    path.iter()
        .enumerate()
        .map(|(t, &x)| x * n_states.pow(t as u32))
        .sum()
}

const MAX_ENUMERATION: usize = 2_000_000;

/// The full joint smoothing distribution by brute-force enumeration, indexed
/// by [`path_index`]. Exponential in the horizon; guarded by a size limit.
pub fn enumerate_joint(hmm: &DiscreteHmm) -> Result<Vec<f64>> {
    hmm.validate()?;
    enumerate(hmm, |t, prev, x| {
        hmm.transitions[t - 1][prev][x] * hmm.potentials[t][x]
    })
}

/// Joint enumeration for the pairwise-potential model.
pub fn enumerate_joint_pairwise(hmm: &PairwiseDiscreteHmm) -> Result<Vec<f64>> {
    hmm.validate()?;
    enumerate(&hmm.base, |t, prev, x| {
        hmm.base.transitions[t - 1][prev][x] * hmm.pairwise[t - 1][prev][x]
    })
}

fn enumerate(hmm: &DiscreteHmm, kernel: impl Fn(usize, usize, usize) -> f64) -> Result<Vec<f64>> {
    let k = hmm.n_states();
    let t_len = hmm.horizon();
    let cells = k
        .checked_pow(t_len as u32)
        .filter(|&c| c <= MAX_ENUMERATION)
        .with_context(|| format!("enumeration of {k}^{t_len} paths is too large"))?;

    let mut joint = vec![0.0; cells];
    let mut path = vec![0usize; t_len];
    for (index, cell) in joint.iter_mut().enumerate() {
        let mut rest = index;
        for digit in path.iter_mut() {
            *digit = rest % k;
            rest /= k;
        }
        let mut weight = hmm.initial[path[0]] * hmm.potentials[0][path[0]];
        for t in 1..t_len {
            weight *= kernel(t, path[t - 1], path[t]);
        }
        *cell = weight;
    }
    let total: f64 = joint.iter().sum();
    ensure!(total > 0.0, "the model assigns zero total mass");
    for w in &mut joint {
        *w /= total;
    }
    Ok(joint)
}

/// Per-time marginals of an enumerated joint distribution.
pub fn marginals_from_joint(joint: &[f64], n_states: usize, t_len: usize) -> Vec<Vec<f64>> {
    let mut marginals = vec![vec![0.0; n_states]; t_len];
    for (index, &w) in joint.iter().enumerate() {
        let mut rest = index;
        for row in marginals.iter_mut() {
            row[rest % n_states] += w;
            rest /= n_states;
        }
    }
    marginals
}

/// A random but valid [`DiscreteHmm`], deterministic in the seed. Rows are
/// normalised exponential draws; potentials are log-normal, so the smoothing
/// distribution is informative but never degenerate.
pub fn random_hmm(n_states: usize, t_len: usize, seed: u64) -> DiscreteHmm {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let simplex = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let raw: Vec<f64> = (0..n_states)
            .map(|_| -(1.0 - rng.gen::<f64>()).ln())
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / total).collect()
    };
    let initial = simplex(&mut rng);
    let transitions = (1..t_len)
        .map(|_| (0..n_states).map(|_| simplex(&mut rng)).collect())
        .collect();
    let potentials = (0..t_len)
        .map(|_| {
            (0..n_states)
                .map(|_| f64::exp(rng.sample(StandardNormal)))
                .collect()
        })
        .collect();
    DiscreteHmm {
        initial,
        transitions,
        potentials,
    }
}

/// A random pairwise-potential model on top of [`random_hmm`]; the base
/// potentials beyond time zero are flattened to one since the pair potential
/// replaces them.
pub fn random_pairwise_hmm(n_states: usize, t_len: usize, seed: u64) -> PairwiseDiscreteHmm {
    let mut base = random_hmm(n_states, t_len, seed);
    for g in base.potentials.iter_mut().skip(1) {
        g.iter_mut().for_each(|v| *v = 1.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let pairwise = (1..t_len)
        .map(|_| {
            (0..n_states)
                .map(|_| {
                    (0..n_states)
                        .map(|_| f64::exp(rng.sample(StandardNormal)))
                        .collect()
                })
                .collect()
        })
        .collect();
    PairwiseDiscreteHmm { base, pairwise }
}

/// A latent trajectory with its observation record.
#[derive(Clone, Debug)]
pub struct SyntheticSeries {
    pub states: Vec<f64>,
    pub obs: Vec<f64>,
}

/// Draw from the stochastic-volatility model with leverage, consistent with
/// the smoothing model's factorisation: returns are
/// `y_t = exp(x_t / 2) eps_t` and the log-volatility innovations correlate
/// with `eps_t` at level `rho`. The initial state uses the same variance
/// convention as the smoothing model.
pub fn sv_synthetic(params: &SvParams, t_len: usize, seed: u64) -> Result<SyntheticSeries> {
    params.validate()?;
    ensure!(t_len >= 1, "need at least one time index");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let SvParams { mu, phi, rho, sigma } = *params;

    let mut states = Vec::with_capacity(t_len);
    let mut obs = Vec::with_capacity(t_len);
    let v0 = sigma * sigma / (1.0 - rho * rho);
    let mut x = mu + v0.sqrt() * rng.sample::<f64, _>(StandardNormal);
    for _ in 0..t_len {
        states.push(x);
        let eps: f64 = rng.sample(StandardNormal);
        let zeta: f64 = rng.sample(StandardNormal);
        obs.push((x / 2.0).exp() * eps);
        let eta = rho * eps + (1.0 - rho * rho).sqrt() * zeta;
        x = mu + phi * (x - mu) + sigma * eta;
    }
    Ok(SyntheticSeries { states, obs })
}

/// Draw from the AR(1)-plus-noise model with stationary initialisation.
pub fn lg_synthetic(
    rho: f64,
    sigma_x: f64,
    sigma_y: f64,
    t_len: usize,
    seed: u64,
) -> Result<SyntheticSeries> {
    ensure!(rho.abs() < 1.0, "|rho| must be below 1, got {rho}");
    ensure!(sigma_x > 0.0 && sigma_y > 0.0, "noise scales must be positive");
    ensure!(t_len >= 1, "need at least one time index");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut states = Vec::with_capacity(t_len);
    let mut obs = Vec::with_capacity(t_len);
    let v0 = sigma_x * sigma_x / (1.0 - rho * rho);
    let mut x = v0.sqrt() * rng.sample::<f64, _>(StandardNormal);
    for _ in 0..t_len {
        states.push(x);
        obs.push(x + sigma_y * rng.sample::<f64, _>(StandardNormal));
        x = rho * x + sigma_x * rng.sample::<f64, _>(StandardNormal);
    }
    Ok(SyntheticSeries { states, obs })
}

/// Nelder-Mead simplex minimisation, enough to pin down low-dimensional
/// maximum-likelihood references. Returns the best vertex after `iters`
/// reflection steps from a simplex of the given initial edge length.
pub fn nelder_mead(
    f: impl Fn(&[f64]) -> f64,
    x0: &[f64],
    step: f64,
    iters: usize,
) -> Vec<f64> {
    let dim = x0.len();
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(dim + 1);
    simplex.push(x0.to_vec());
    for i in 0..dim {
        let mut v = x0.to_vec();
        v[i] += step;
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();

    for _ in 0..iters {
        let mut order: Vec<usize> = (0..=dim).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let best = order[0];
        let worst = order[dim];
        let second_worst = order[dim - 1];

        let mut centroid = vec![0.0; dim];
        for &i in order.iter().take(dim) {
            for (c, v) in centroid.iter_mut().zip(&simplex[i]) {
                *c += v / dim as f64;
            }
        }
        let blend = |alpha: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[worst])
                .map(|(c, w)| c + alpha * (c - w))
                .collect()
        };

        let reflected = blend(1.0);
        let fr = f(&reflected);
        if fr < values[best] {
            let expanded = blend(2.0);
            let fe = f(&expanded);
            if fe < fr {
                simplex[worst] = expanded;
                values[worst] = fe;
            } else {
                simplex[worst] = reflected;
                values[worst] = fr;
            }
        } else if fr < values[second_worst] {
            simplex[worst] = reflected;
            values[worst] = fr;
        } else {
            let contracted = blend(-0.5);
            let fc = f(&contracted);
            if fc < values[worst] {
                simplex[worst] = contracted;
                values[worst] = fc;
            } else {
                let best_point = simplex[best].clone();
                for i in 0..=dim {
                    if i == best {
                        continue;
                    }
                    for (v, b) in simplex[i].iter_mut().zip(&best_point) {
                        *v = b + 0.5 * (*v - b);
                    }
                    values[i] = f(&simplex[i]);
                }
            }
        }
    }
    let best = (0..=dim).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
    simplex.swap_remove(best)
}

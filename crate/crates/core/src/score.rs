//! Stochastic-gradient maximum likelihood on top of the smoother.
//!
//! The score of the incomplete-data likelihood equals the smoothing
//! expectation of the pathwise gradient of the complete-data log density, so
//! any unbiased smoothing estimator of that gradient drives stochastic
//! gradient ascent. Two noise schedules are provided: fresh unbiased
//! estimates per iteration, or the cheap Markovian schedule that evaluates
//! the gradient along one persistent chain. Parameters live on the real line
//! through elementwise transforms so the optimiser never leaves the model's
//! domain.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::coupled::CoupledOptions;
use crate::error::Error;
use crate::fk::{
    linear_gaussian_model_with_observations, normal_logpdf, sv_model, FeynmanKacModel,
    LinearGaussianModel, Path, StochasticVolatilityModel, SvParams,
};
use crate::kernels::{cbpf_transition, particle_filter};
use crate::seed;
use crate::unbiased::{averaged_estimate, tune_lag, LagTuning};
use crate::Result;

/// Elementwise reparameterisation between a constrained parameter and its
/// unconstrained representation on the real line.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Transform {
    /// No change.
    Identity,
    /// Positive parameters: `constrained = exp(raw)`.
    Log,
    /// Parameters in (-1, 1): `constrained = 2 sigmoid(raw) - 1`.
    LogitSigned,
}

impl Transform {
    pub fn to_constrained(&self, raw: f64) -> f64 {
        match self {
            Transform::Identity => raw,
            Transform::Log => raw.exp(),
            Transform::LogitSigned => 2.0 / (1.0 + (-raw).exp()) - 1.0,
        }
    }

    pub fn to_raw(&self, constrained: f64) -> Result<f64> {
        match self {
            Transform::Identity => Ok(constrained),
            Transform::Log => {
                if constrained > 0.0 {
                    Ok(constrained.ln())
                } else {
                    Err(Error::InvalidParameter(format!(
                        "log transform needs a positive value, got {constrained}"
                    )))
                }
            }
            Transform::LogitSigned => {
                if constrained.abs() < 1.0 {
                    Ok(((1.0 + constrained) / (1.0 - constrained)).ln())
                } else {
                    Err(Error::InvalidParameter(format!(
                        "signed logit transform needs a value in (-1, 1), got {constrained}"
                    )))
                }
            }
        }
    }

    /// `d constrained / d raw`, written in terms of the constrained value.
    pub fn jacobian(&self, constrained: f64) -> f64 {
        match self {
            Transform::Identity => 1.0,
            Transform::Log => constrained,
            Transform::LogitSigned => (1.0 - constrained * constrained) / 2.0,
        }
    }
}

/// A parameter vector stored on the real line together with its transforms.
#[derive(Clone, Debug)]
pub struct TransformedParams {
    raw: Vec<f64>,
    transforms: Vec<Transform>,
}

impl TransformedParams {
    pub fn from_raw(raw: Vec<f64>, transforms: Vec<Transform>) -> Result<Self> {
        if raw.len() != transforms.len() {
            return Err(Error::LengthMismatch {
                left: raw.len(),
                right: transforms.len(),
            });
        }
        Ok(TransformedParams { raw, transforms })
    }

    pub fn from_constrained(constrained: &[f64], transforms: Vec<Transform>) -> Result<Self> {
        if constrained.len() != transforms.len() {
            return Err(Error::LengthMismatch {
                left: constrained.len(),
                right: transforms.len(),
            });
        }
        let raw = constrained
            .iter()
            .zip(&transforms)
            .map(|(&c, tf)| tf.to_raw(c))
            .collect::<Result<Vec<f64>>>()?;
        Ok(TransformedParams { raw, transforms })
    }

    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    pub fn raw_mut(&mut self) -> &mut [f64] {
        &mut self.raw
    }

    pub fn transforms(&self) -> &[Transform] {
        &self.transforms
    }

    pub fn constrained(&self) -> Vec<f64> {
        self.raw
            .iter()
            .zip(&self.transforms)
            .map(|(&r, tf)| tf.to_constrained(r))
            .collect()
    }

    /// Pull a gradient in constrained coordinates back to raw coordinates.
    pub fn gradient_to_raw(&self, grad_constrained: &[f64]) -> Vec<f64> {
        let constrained = self.constrained();
        grad_constrained
            .iter()
            .zip(&constrained)
            .zip(&self.transforms)
            .map(|((&g, &c), tf)| g * tf.jacobian(c))
            .collect()
    }
}

/// Adam optimiser state for stochastic gradient ascent.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(dim: usize) -> Self {
        AdamState {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
            alpha: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }
}

/// One Adam ascent step in place. The state is left untouched if the
/// gradient contains a non-finite component.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], gradient: &[f64]) -> Result<()> {
    if params.len() != state.m.len() || gradient.len() != state.m.len() {
        return Err(Error::LengthMismatch {
            left: params.len(),
            right: gradient.len(),
        });
    }
    if let Some(index) = gradient.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient { index });
    }
    state.t += 1;
    let b1t = 1.0 - state.beta1.powi(state.t as i32);
    let b2t = 1.0 - state.beta2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = gradient[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / b1t;
        let v_hat = state.v[i] / b2t;
        params[i] += state.alpha * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    Ok(())
}

/// A parametric family of smoothing models: builds the model at a parameter
/// point and evaluates the complete-data log density and its gradient, both
/// in constrained coordinates.
pub trait ModelFamily {
    type Model: FeynmanKacModel<State = f64>;

    fn param_dim(&self) -> usize;
    fn transforms(&self) -> Vec<Transform>;
    fn build(&self, constrained: &[f64]) -> Result<Self::Model>;
    /// `log gamma(theta; path)`: initial density, transitions and potentials
    /// of the complete path.
    fn log_joint(&self, constrained: &[f64], path: &[f64]) -> Result<f64>;
    /// Gradient of [`ModelFamily::log_joint`] with respect to the constrained
    /// parameters.
    fn log_joint_gradient(&self, constrained: &[f64], path: &[f64]) -> Result<Vec<f64>>;
}

fn dnorm_dmean(x: f64, mean: f64, var: f64) -> f64 {
    (x - mean) / var
}

fn dnorm_dvar(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 / var + d * d / (2.0 * var * var)
}

/// AR(1) latent chain observed in Gaussian noise; parameters
/// `(rho, sigma_x, sigma_y)`.
#[derive(Clone, Debug)]
pub struct LinearGaussianFamily {
    pub obs: Vec<f64>,
}

impl LinearGaussianFamily {
    pub fn new(obs: Vec<f64>) -> Self {
        LinearGaussianFamily { obs }
    }
}

impl ModelFamily for LinearGaussianFamily {
    type Model = LinearGaussianModel;

    fn param_dim(&self) -> usize {
        3
    }

    fn transforms(&self) -> Vec<Transform> {
        vec![Transform::LogitSigned, Transform::Log, Transform::Log]
    }

    fn build(&self, constrained: &[f64]) -> Result<LinearGaussianModel> {
        let [rho, sigma_x, sigma_y] = param_array(constrained)?;
        linear_gaussian_model_with_observations(rho, sigma_x, sigma_y, self.obs.clone())
    }

    fn log_joint(&self, constrained: &[f64], path: &[f64]) -> Result<f64> {
        let [rho, sigma_x, sigma_y] = param_array(constrained)?;
        check_path(path, self.obs.len())?;
        let vx = sigma_x * sigma_x;
        let vy = sigma_y * sigma_y;
        let v0 = vx / (1.0 - rho * rho);
        let mut total = normal_logpdf(path[0], 0.0, v0);
        for t in 1..path.len() {
            total += normal_logpdf(path[t], rho * path[t - 1], vx);
        }
        for (x, y) in path.iter().zip(&self.obs) {
            total += normal_logpdf(*y, *x, vy);
        }
        Ok(total)
    }

    fn log_joint_gradient(&self, constrained: &[f64], path: &[f64]) -> Result<Vec<f64>> {
        let [rho, sigma_x, sigma_y] = param_array(constrained)?;
        check_path(path, self.obs.len())?;
        let vx = sigma_x * sigma_x;
        let vy = sigma_y * sigma_y;
        let one_m_rho2 = 1.0 - rho * rho;
        let v0 = vx / one_m_rho2;

        // Initial density: v0 depends on both rho and sigma_x.
        let dv0 = dnorm_dvar(path[0], 0.0, v0);
        let mut d_rho = dv0 * v0 * 2.0 * rho / one_m_rho2;
        let mut d_sx = dv0 * 2.0 * v0 / sigma_x;
        let mut d_sy = 0.0;

        for t in 1..path.len() {
            let mean = rho * path[t - 1];
            d_rho += dnorm_dmean(path[t], mean, vx) * path[t - 1];
            d_sx += dnorm_dvar(path[t], mean, vx) * 2.0 * sigma_x;
        }
        for (x, y) in path.iter().zip(&self.obs) {
            d_sy += dnorm_dvar(*y, *x, vy) * 2.0 * sigma_y;
        }
        Ok(vec![d_rho, d_sx, d_sy])
    }
}

/// Stochastic volatility with leverage; parameters `(mu, phi, rho, sigma)`.
#[derive(Clone, Debug)]
pub struct SvFamily {
    pub obs: Vec<f64>,
    /// Mirror of the model switch: divide the initial variance by
    /// `1 - phi^2` instead of `1 - rho^2`.
    pub stationary_var_from_phi: bool,
}

impl SvFamily {
    pub fn new(obs: Vec<f64>) -> Self {
        SvFamily {
            obs,
            stationary_var_from_phi: false,
        }
    }
}

impl ModelFamily for SvFamily {
    type Model = StochasticVolatilityModel;

    fn param_dim(&self) -> usize {
        4
    }

    fn transforms(&self) -> Vec<Transform> {
        vec![
            Transform::Identity,
            Transform::LogitSigned,
            Transform::LogitSigned,
            Transform::Log,
        ]
    }

    fn build(&self, constrained: &[f64]) -> Result<StochasticVolatilityModel> {
        let [mu, phi, rho, sigma] = param_array(constrained)?;
        Ok(sv_model(SvParams { mu, phi, rho, sigma }, self.obs.clone())?
            .with_stationary_variance_from_phi(self.stationary_var_from_phi))
    }

    fn log_joint(&self, constrained: &[f64], path: &[f64]) -> Result<f64> {
        let [mu, phi, rho, sigma] = param_array(constrained)?;
        check_path(path, self.obs.len())?;
        let r0 = if self.stationary_var_from_phi { phi } else { rho };
        let v0 = sigma * sigma / (1.0 - r0 * r0);
        let vt = (1.0 - rho * rho) * sigma * sigma;
        let mut total = normal_logpdf(path[0], mu, v0);
        for t in 1..path.len() {
            let mean =
                mu + phi * (path[t - 1] - mu) + rho * sigma * (-path[t - 1] / 2.0).exp() * self.obs[t - 1];
            total += normal_logpdf(path[t], mean, vt);
        }
        for (x, y) in path.iter().zip(&self.obs) {
            // The potentials do not involve theta, but they belong to the
            // complete-data density, so keep them for finite differences.
            total += -0.5 * (crate::fk::LN_2PI + x + y * y * (-x).exp());
        }
        Ok(total)
    }

    fn log_joint_gradient(&self, constrained: &[f64], path: &[f64]) -> Result<Vec<f64>> {
        let [mu, phi, rho, sigma] = param_array(constrained)?;
        check_path(path, self.obs.len())?;
        let r0 = if self.stationary_var_from_phi { phi } else { rho };
        let one_m_r02 = 1.0 - r0 * r0;
        let v0 = sigma * sigma / one_m_r02;
        let one_m_rho2 = 1.0 - rho * rho;
        let vt = one_m_rho2 * sigma * sigma;

        // Initial density.
        let dm0 = dnorm_dmean(path[0], mu, v0);
        let dv0 = dnorm_dvar(path[0], mu, v0);
        let mut d_mu = dm0;
        let mut d_phi = 0.0;
        let mut d_rho = 0.0;
        let mut d_sigma = dv0 * 2.0 * sigma / one_m_r02;
        let dv0_dr0 = dv0 * v0 * 2.0 * r0 / one_m_r02;
        if self.stationary_var_from_phi {
            d_phi += dv0_dr0;
        } else {
            d_rho += dv0_dr0;
        }

        // Transitions: mean and variance both carry theta.
        for t in 1..path.len() {
            let lever = (-path[t - 1] / 2.0).exp() * self.obs[t - 1];
            let mean = mu + phi * (path[t - 1] - mu) + rho * sigma * lever;
            let dm = dnorm_dmean(path[t], mean, vt);
            let dv = dnorm_dvar(path[t], mean, vt);
            d_mu += dm * (1.0 - phi);
            d_phi += dm * (path[t - 1] - mu);
            d_rho += dm * sigma * lever + dv * (-2.0 * rho * sigma * sigma);
            d_sigma += dm * rho * lever + dv * 2.0 * sigma * one_m_rho2;
        }
        // Potentials are theta-free.
        Ok(vec![d_mu, d_phi, d_rho, d_sigma])
    }
}

fn param_array<const D: usize>(constrained: &[f64]) -> Result<[f64; D]> {
    constrained.try_into().map_err(|_| Error::LengthMismatch {
        left: constrained.len(),
        right: D,
    })
}

fn check_path(path: &[f64], horizon: usize) -> Result<()> {
    if path.len() != horizon {
        return Err(Error::LengthMismatch {
            left: path.len(),
            right: horizon,
        });
    }
    Ok(())
}

/// How the per-iteration gradient estimate is produced.
#[derive(Clone, Copy, Debug)]
pub enum GradientSchedule {
    /// Fresh tuned averaged unbiased estimate each iteration. The lag, first
    /// offset and window are tuned from pilot meetings before the first
    /// iteration and optionally re-tuned periodically.
    Unbiased {
        pilot_runs: usize,
        quantile: f64,
        /// Re-tune every this many iterations; `None` tunes once.
        retune_every: Option<u64>,
    },
    /// One persistent trajectory advanced by a single conditional sweep per
    /// iteration; the gradient is evaluated along the new trajectory. Each
    /// iteration is one kernel transition, at the price of Markovian noise.
    Markovian,
}

impl GradientSchedule {
    pub fn unbiased_default() -> Self {
        GradientSchedule::Unbiased {
            pilot_runs: 100,
            quantile: 0.9,
            retune_every: None,
        }
    }
}

/// Knobs of [`mle_fit`].
#[derive(Clone, Debug)]
pub struct MleOptions {
    pub n_particles: usize,
    pub coupled: CoupledOptions,
    pub schedule: GradientSchedule,
    pub iterations: u64,
    pub adam: AdamState,
    pub seed: u64,
}

/// One row of the optimisation trace.
#[derive(Clone, Debug)]
pub struct IterateRecord {
    pub iteration: u64,
    pub wall_secs: f64,
    pub raw: Vec<f64>,
    pub constrained: Vec<f64>,
    pub grad_norm: f64,
    /// Meeting time of the estimator run, for the unbiased schedule.
    pub meeting_tau: Option<u64>,
}

/// Stochastic gradient ascent on the incomplete-data likelihood.
///
/// Returns the full iterate trajectory, starting with a row for the initial
/// point. With the unbiased schedule, an estimator run that exceeds its
/// iteration cap is retried once on a fresh seed before the fit aborts.
pub fn mle_fit<F: ModelFamily>(
    family: &F,
    init: TransformedParams,
    options: &MleOptions,
) -> Result<Vec<IterateRecord>> {
    if init.raw().len() != family.param_dim() {
        return Err(Error::LengthMismatch {
            left: init.raw().len(),
            right: family.param_dim(),
        });
    }
    let start = Instant::now();
    let mut params = init;
    let mut adam = options.adam.clone();
    let mut trace = Vec::with_capacity(options.iterations as usize + 1);
    trace.push(IterateRecord {
        iteration: 0,
        wall_secs: 0.0,
        raw: params.raw().to_vec(),
        constrained: params.constrained(),
        grad_norm: 0.0,
        meeting_tau: None,
    });

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut markov_path: Option<Path<f64>> = None;
    let mut tuning: Option<LagTuning> = None;

    for iteration in 1..=options.iterations {
        let constrained = params.constrained();
        let model = family.build(&constrained)?;
        let (grad_constrained, meeting_tau) = match options.schedule {
            GradientSchedule::Markovian => {
                let path = match &markov_path {
                    Some(p) => cbpf_transition(&model, p, options.n_particles, &mut rng)?.path,
                    None => particle_filter(&model, options.n_particles, &mut rng)?,
                };
                let grad = family.log_joint_gradient(&constrained, &path)?;
                markov_path = Some(path);
                (grad, None)
            }
            GradientSchedule::Unbiased {
                pilot_runs,
                quantile,
                retune_every,
            } => {
                let needs_tuning = match (&tuning, retune_every) {
                    (None, _) => true,
                    (Some(_), Some(period)) => period > 0 && (iteration - 1) % period == 0,
                    (Some(_), None) => false,
                };
                if needs_tuning {
                    tuning = Some(tune_lag(
                        &model,
                        options.n_particles,
                        &options.coupled,
                        seed::split_labelled(options.seed, "tune", iteration),
                        pilot_runs,
                        quantile,
                        10_000,
                    )?);
                }
                let tuned = tuning.as_ref().expect("tuned above");
                let cap = tuned.default_cap();
                let h = |p: &Path<f64>| {
                    family
                        .log_joint_gradient(&constrained, p)
                        .unwrap_or_else(|_| vec![f64::NAN; family.param_dim()])
                };
                let est_seed = seed::split_labelled(options.seed, "estimate", iteration);
                let attempt = averaged_estimate(
                    &model,
                    &h,
                    options.n_particles,
                    tuned.k,
                    tuned.ell,
                    tuned.lag,
                    &options.coupled,
                    est_seed,
                    cap,
                );
                let est = match attempt {
                    Ok(e) => e,
                    Err(Error::MeetingCapExceeded { .. }) => averaged_estimate(
                        &model,
                        &h,
                        options.n_particles,
                        tuned.k,
                        tuned.ell,
                        tuned.lag,
                        &options.coupled,
                        seed::split_labelled(options.seed, "estimate-retry", iteration),
                        cap,
                    )?,
                    Err(other) => return Err(other),
                };
                let tau = est.meeting.tau;
                (est.value, Some(tau))
            }
        };

        let grad_raw = params.gradient_to_raw(&grad_constrained);
        adam_step(&mut adam, params.raw_mut(), &grad_raw)?;
        let grad_norm = grad_raw.iter().map(|g| g * g).sum::<f64>().sqrt();
        trace.push(IterateRecord {
            iteration,
            wall_secs: start.elapsed().as_secs_f64(),
            raw: params.raw().to_vec(),
            constrained: params.constrained(),
            grad_norm,
            meeting_tau,
        });
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transforms_round_trip() {
        let cases = [
            (Transform::Identity, -3.7),
            (Transform::Log, 0.42),
            (Transform::LogitSigned, -0.97),
            (Transform::LogitSigned, 0.999),
        ];
        for (tf, c) in cases {
            let raw = tf.to_raw(c).unwrap();
            assert!((tf.to_constrained(raw) - c).abs() < 1e-12, "{tf:?} at {c}");
        }
        assert!(Transform::Log.to_raw(0.0).is_err());
        assert!(Transform::LogitSigned.to_raw(1.0).is_err());
    }

    #[test]
    fn transform_jacobians_match_finite_differences() {
        let h = 1e-6;
        for tf in [Transform::Identity, Transform::Log, Transform::LogitSigned] {
            for raw in [-1.2, 0.0, 0.8] {
                let c = tf.to_constrained(raw);
                let fd = (tf.to_constrained(raw + h) - tf.to_constrained(raw - h)) / (2.0 * h);
                assert!(
                    (tf.jacobian(c) - fd).abs() < 1e-6,
                    "{tf:?} at raw = {raw}: jac {} vs fd {fd}",
                    tf.jacobian(c)
                );
            }
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_parameters() {
        let mut state = AdamState::new(2);
        let mut params = vec![1.0, -2.0];
        adam_step(&mut state, &mut params, &[0.0, 0.0]).unwrap();
        assert_eq!(params, vec![1.0, -2.0]);
    }

    #[test]
    fn adam_constant_gradient_steps_approach_alpha() {
        let mut state = AdamState::new(1);
        let mut params = vec![0.0];
        let mut prev = 0.0;
        let mut last_step = 0.0;
        for _ in 0..200 {
            adam_step(&mut state, &mut params, &[2.5]).unwrap();
            last_step = params[0] - prev;
            prev = params[0];
        }
        assert!((last_step - state.alpha).abs() < 1e-6, "step = {last_step}");
        assert!(params[0] > 0.0);
    }

    #[test]
    fn adam_without_momentum_is_sign_gradient() {
        let mut state = AdamState::new(1);
        state.beta1 = 0.0;
        state.beta2 = 0.0;
        let mut params = vec![0.0];
        adam_step(&mut state, &mut params, &[-3.0]).unwrap();
        let expected = -state.alpha * 3.0 / (3.0 + state.epsilon);
        assert!((params[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn adam_rejects_non_finite_gradients() {
        let mut state = AdamState::new(2);
        let mut params = vec![1.0, 2.0];
        let err = adam_step(&mut state, &mut params, &[1.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { index: 1 }));
        assert_eq!(params, vec![1.0, 2.0]);
        assert_eq!(state.t, 0);
    }

    #[test]
    fn zero_iterations_returns_the_initial_point_only() {
        let family = LinearGaussianFamily::new(vec![0.1, -0.2, 0.3]);
        let init = TransformedParams::from_constrained(
            &[0.5, 1.0, 1.0],
            family.transforms(),
        )
        .unwrap();
        let options = MleOptions {
            n_particles: 4,
            coupled: CoupledOptions::new(crate::coupled::CouplingStrategy::Imc),
            schedule: GradientSchedule::Markovian,
            iterations: 0,
            adam: AdamState::new(3),
            seed: 1,
        };
        let trace = mle_fit(&family, init, &options).unwrap();
        assert_eq!(trace.len(), 1);
        assert_eq!(trace[0].iteration, 0);
        let c = &trace[0].constrained;
        assert!((c[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn markovian_fit_runs_and_records_every_iteration() {
        let family = LinearGaussianFamily::new(vec![0.4, -0.1, 0.2, 0.8, -0.3]);
        let init = TransformedParams::from_constrained(
            &[0.2, 0.8, 1.2],
            family.transforms(),
        )
        .unwrap();
        let options = MleOptions {
            n_particles: 4,
            coupled: CoupledOptions::new(crate::coupled::CouplingStrategy::Imc),
            schedule: GradientSchedule::Markovian,
            iterations: 25,
            adam: AdamState::new(3),
            seed: 7,
        };
        let trace = mle_fit(&family, init, &options).unwrap();
        assert_eq!(trace.len(), 26);
        for rec in &trace[1..] {
            assert!(rec.grad_norm.is_finite());
            assert!(rec.constrained[1] > 0.0, "sigma_x left its domain");
            assert!(rec.constrained[0].abs() < 1.0, "rho left its domain");
        }
    }
}

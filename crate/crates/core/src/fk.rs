//! Feynman-Kac state-space models: an initial law, Markov transitions and
//! per-time potentials, plus the built-in benchmark models.
//!
//! Time indices are zero-based throughout the crate. A model with horizon `T`
//! has states at `t = 0, ..., T - 1`; `log_transition(t, from, to)` is the
//! density of the state at time `t` given the state at `t - 1`, so it is only
//! defined for `t >= 1`. The unnormalised density of a path is
//!
//! ```text
//! M_0(x_0) G_0(x_0) * prod_{t=1}^{T-1} M_t(x_{t-1}, x_t) G_t(x_t)
//! ```

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Error;
use crate::Result;

pub(crate) const LN_2PI: f64 = 1.8378770664093453;

/// Log density of a normal distribution parameterised by mean and variance.
pub(crate) fn normal_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (LN_2PI + var.ln() + d * d / var)
}

/// Smoothing target built from an initial density, Markov transition
/// densities and per-time potentials.
pub trait FeynmanKacModel {
    /// State at one time index. Couplings detect meetings by comparing states
    /// with `==`, so equality must be exact (bit-level for floats); anything
    /// fuzzy would silently break the unbiasedness guarantees downstream.
    type State: Clone + PartialEq;

    /// Number of time indices `T`.
    fn horizon(&self) -> usize;

    /// Draw from the time-0 law.
    fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> Self::State;

    /// Log density of the time-0 law.
    fn log_initial(&self, x: &Self::State) -> f64;

    /// Draw from `M_t(from, .)`, `1 <= t < T`.
    fn sample_transition<R: Rng + ?Sized>(
        &self,
        t: usize,
        from: &Self::State,
        rng: &mut R,
    ) -> Self::State;

    /// Log density of `M_t(from, to)`, `1 <= t < T`.
    fn log_transition(&self, t: usize, from: &Self::State, to: &Self::State) -> f64;

    /// Log potential `log G_t(x)`, `0 <= t < T`.
    fn log_potential(&self, t: usize, x: &Self::State) -> f64;
}

/// Extension for targets whose potentials look at adjacent pairs,
/// `G_t(x_{t-1}, x_t)` for `t >= 1`. The time-0 potential stays
/// single-argument. Only the marginalised kernel uses this.
pub trait PairwisePotentialModel: FeynmanKacModel {
    /// Log pairwise potential `log G_t(prev, x)`, `1 <= t < T`.
    fn log_pairwise_potential(&self, t: usize, prev: &Self::State, x: &Self::State) -> f64;
}

/// A complete trajectory `x_0, ..., x_{T-1}`; the object the kernels update.
#[derive(Clone, Debug, PartialEq)]
pub struct Path<S>(pub Vec<S>);

impl<S> std::ops::Deref for Path<S> {
    type Target = [S];

    fn deref(&self) -> &[S] {
        &self.0
    }
}

/// Shortest distance between two points of the unit torus.
pub fn torus_distance(x: f64, y: f64) -> f64 {
    let d = (x - y).rem_euclid(1.0);
    d.min(1.0 - d)
}

/// Random walk on the unit torus mixing a global uniform move (probability
/// `a`) with a local step uniform on a window of width `w`, observed through
/// a two-level potential that favours or penalises two opposite quarters of
/// the circle.
///
/// The local window wraps around the torus, so the transition density is
/// `a + (1 - a) / w` within torus distance `w / 2` of the current point and
/// `a` elsewhere.
#[derive(Clone, Debug)]
pub struct BarriersModel {
    a: f64,
    w: f64,
    b: f64,
    horizon: usize,
}

/// Build a [`BarriersModel`]. Requires `0 < a < 1`, `0 < w <= 1`,
/// `0 < b < 1` and a positive horizon.
pub fn barriers_model(a: f64, w: f64, b: f64, horizon: usize) -> Result<BarriersModel> {
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "barriers: a must lie in (0, 1), got {a}"
        )));
    }
    if !(w > 0.0 && w <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "barriers: w must lie in (0, 1], got {w}"
        )));
    }
    if !(b > 0.0 && b < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "barriers: b must lie in (0, 1), got {b}"
        )));
    }
    if horizon == 0 {
        return Err(Error::InvalidParameter("barriers: horizon is zero".into()));
    }
    Ok(BarriersModel { a, w, b, horizon })
}

impl BarriersModel {
    fn in_low_band(x: f64) -> bool {
        x <= 0.25 || (x > 0.5 && x <= 0.75)
    }
}

impl FeynmanKacModel for BarriersModel {
    type State = f64;

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        rng.gen::<f64>()
    }

    fn log_initial(&self, _x: &f64) -> f64 {
        0.0
    }

    fn sample_transition<R: Rng + ?Sized>(&self, _t: usize, from: &f64, rng: &mut R) -> f64 {
        if rng.gen::<f64>() < self.a {
            rng.gen::<f64>()
        } else {
            (from + self.w * (rng.gen::<f64>() - 0.5)).rem_euclid(1.0)
        }
    }

    fn log_transition(&self, _t: usize, from: &f64, to: &f64) -> f64 {
        if torus_distance(*from, *to) <= self.w / 2.0 {
            (self.a + (1.0 - self.a) / self.w).ln()
        } else {
            self.a.ln()
        }
    }

    fn log_potential(&self, _t: usize, x: &f64) -> f64 {
        if Self::in_low_band(*x) {
            self.b.ln()
        } else {
            (1.0 - self.b).ln()
        }
    }
}

/// Fully mixing fixture: every transition is a fresh uniform draw on `[0, 1)`
/// and all potentials are flat. Kernels on this model have closed-form
/// meeting and reference-retention laws, which makes it the main correctness
/// fixture for the couplings.
#[derive(Clone, Debug)]
pub struct UniformModel {
    horizon: usize,
}

/// Build a [`UniformModel`] with the given horizon.
pub fn uniform_model(horizon: usize) -> Result<UniformModel> {
    if horizon == 0 {
        return Err(Error::InvalidParameter("uniform: horizon is zero".into()));
    }
    Ok(UniformModel { horizon })
}

impl FeynmanKacModel for UniformModel {
    type State = f64;

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        rng.gen::<f64>()
    }

    fn log_initial(&self, _x: &f64) -> f64 {
        0.0
    }

    fn sample_transition<R: Rng + ?Sized>(&self, _t: usize, _from: &f64, rng: &mut R) -> f64 {
        rng.gen::<f64>()
    }

    fn log_transition(&self, _t: usize, _from: &f64, _to: &f64) -> f64 {
        0.0
    }

    fn log_potential(&self, _t: usize, _x: &f64) -> f64 {
        0.0
    }
}

/// Stationary AR(1) latent chain observed in Gaussian noise. The initial law
/// is the stationary distribution `N(0, sigma_x^2 / (1 - rho^2))`, transitions
/// are `N(rho x, sigma_x^2)`, and the potential at time `t` is the `N(x,
/// sigma_y^2)` density of the observation `y_t`. The plain constructor uses
/// all-zero observations.
#[derive(Clone, Debug)]
pub struct LinearGaussianModel {
    rho: f64,
    sigma_x: f64,
    sigma_y: f64,
    obs: Vec<f64>,
}

/// Build a [`LinearGaussianModel`] with zero observations at every time.
pub fn linear_gaussian_model(
    rho: f64,
    sigma_x: f64,
    sigma_y: f64,
    horizon: usize,
) -> Result<LinearGaussianModel> {
    linear_gaussian_model_with_observations(rho, sigma_x, sigma_y, vec![0.0; horizon])
}

/// Build a [`LinearGaussianModel`] observing the given data; the horizon is
/// the data length.
pub fn linear_gaussian_model_with_observations(
    rho: f64,
    sigma_x: f64,
    sigma_y: f64,
    obs: Vec<f64>,
) -> Result<LinearGaussianModel> {
    if !(rho.abs() < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "linear-gaussian: |rho| must be < 1 for stationarity, got {rho}"
        )));
    }
    if !(sigma_x > 0.0 && sigma_x.is_finite()) || !(sigma_y > 0.0 && sigma_y.is_finite()) {
        return Err(Error::InvalidParameter(
            "linear-gaussian: standard deviations must be positive and finite".into(),
        ));
    }
    if obs.is_empty() {
        return Err(Error::InvalidParameter(
            "linear-gaussian: horizon is zero".into(),
        ));
    }
    Ok(LinearGaussianModel {
        rho,
        sigma_x,
        sigma_y,
        obs,
    })
}

impl LinearGaussianModel {
    /// Stationary variance of the latent chain.
    pub fn initial_variance(&self) -> f64 {
        self.sigma_x * self.sigma_x / (1.0 - self.rho * self.rho)
    }
}

impl FeynmanKacModel for LinearGaussianModel {
    type State = f64;

    fn horizon(&self) -> usize {
        self.obs.len()
    }

    fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.initial_variance().sqrt() * z
    }

    fn log_initial(&self, x: &f64) -> f64 {
        normal_logpdf(*x, 0.0, self.initial_variance())
    }

    fn sample_transition<R: Rng + ?Sized>(&self, _t: usize, from: &f64, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.rho * from + self.sigma_x * z
    }

    fn log_transition(&self, _t: usize, from: &f64, to: &f64) -> f64 {
        normal_logpdf(*to, self.rho * from, self.sigma_x * self.sigma_x)
    }

    fn log_potential(&self, t: usize, x: &f64) -> f64 {
        normal_logpdf(self.obs[t], *x, self.sigma_y * self.sigma_y)
    }
}

/// Parameters of the stochastic volatility model with leverage.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SvParams {
    /// Mean level of the log variance.
    pub mu: f64,
    /// AR coefficient of the log variance.
    pub phi: f64,
    /// Correlation between return and volatility innovations.
    pub rho: f64,
    /// Volatility-of-volatility.
    pub sigma: f64,
}

impl SvParams {
    /// Check the stationarity and positivity constraints.
    pub fn validate(&self) -> Result<()> {
        if !self.mu.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "sv: mu must be finite, got {}",
                self.mu
            )));
        }
        if !(self.phi.abs() < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "sv: |phi| must be < 1, got {}",
                self.phi
            )));
        }
        if !(self.rho.abs() < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "sv: |rho| must be < 1, got {}",
                self.rho
            )));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "sv: sigma must be positive and finite, got {}",
                self.sigma
            )));
        }
        Ok(())
    }
}

/// Stochastic volatility with leverage. The latent log variance `x_t` drives
/// the observation variance, `y_t ~ N(0, exp(x_t))`, and because return and
/// volatility innovations are correlated the transition mean at time `t`
/// depends on the previous observation:
///
/// ```text
/// x_{t} | x_{t-1} ~ N(mu + phi (x_{t-1} - mu)
///                      + rho sigma exp(-x_{t-1} / 2) y_{t-1},
///                     (1 - rho^2) sigma^2)
/// ```
///
/// The initial variance divides `sigma^2` by `1 - rho^2`; see
/// [`StochasticVolatilityModel::with_stationary_variance_from_phi`] for the
/// variant that divides by `1 - phi^2` instead.
#[derive(Clone, Debug)]
pub struct StochasticVolatilityModel {
    params: SvParams,
    obs: Vec<f64>,
    stationary_var_from_phi: bool,
}

/// Build a [`StochasticVolatilityModel`] observing the given returns.
pub fn sv_model(params: SvParams, obs: Vec<f64>) -> Result<StochasticVolatilityModel> {
    params.validate()?;
    if obs.is_empty() {
        return Err(Error::InvalidParameter("sv: horizon is zero".into()));
    }
    Ok(StochasticVolatilityModel {
        params,
        obs,
        stationary_var_from_phi: false,
    })
}

impl StochasticVolatilityModel {
    /// Use `sigma^2 / (1 - phi^2)`, the AR(1) stationary variance, for the
    /// time-0 law instead of the default `sigma^2 / (1 - rho^2)`.
    pub fn with_stationary_variance_from_phi(mut self, yes: bool) -> Self {
        self.stationary_var_from_phi = yes;
        self
    }

    pub fn params(&self) -> &SvParams {
        &self.params
    }

    pub fn observations(&self) -> &[f64] {
        &self.obs
    }

    fn initial_variance(&self) -> f64 {
        let r = if self.stationary_var_from_phi {
            self.params.phi
        } else {
            self.params.rho
        };
        self.params.sigma * self.params.sigma / (1.0 - r * r)
    }

    fn transition_mean(&self, t: usize, from: f64) -> f64 {
        let p = &self.params;
        p.mu + p.phi * (from - p.mu) + p.rho * p.sigma * (-from / 2.0).exp() * self.obs[t - 1]
    }

    fn transition_variance(&self) -> f64 {
        let p = &self.params;
        (1.0 - p.rho * p.rho) * p.sigma * p.sigma
    }
}

impl FeynmanKacModel for StochasticVolatilityModel {
    type State = f64;

    fn horizon(&self) -> usize {
        self.obs.len()
    }

    fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.params.mu + self.initial_variance().sqrt() * z
    }

    fn log_initial(&self, x: &f64) -> f64 {
        normal_logpdf(*x, self.params.mu, self.initial_variance())
    }

    fn sample_transition<R: Rng + ?Sized>(&self, t: usize, from: &f64, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.transition_mean(t, *from) + self.transition_variance().sqrt() * z
    }

    fn log_transition(&self, t: usize, from: &f64, to: &f64) -> f64 {
        normal_logpdf(*to, self.transition_mean(t, *from), self.transition_variance())
    }

    fn log_potential(&self, t: usize, x: &f64) -> f64 {
        // N(y_t; 0, exp(x)) written out so huge |x| cannot overflow a
        // variance intermediate.
        let y = self.obs[t];
        -0.5 * (LN_2PI + x + y * y * (-x).exp())
    }
}

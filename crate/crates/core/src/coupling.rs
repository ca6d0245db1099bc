//! Categorical sampling and maximal couplings.
//!
//! Weight vectors arrive in log scale; every routine normalises with the
//! max-subtraction trick before exponentiating, so only ratios of weights
//! matter. A vector whose entries are all `-inf`, or which contains a NaN, is
//! rejected as degenerate rather than silently producing garbage draws.

use rand::{Rng, RngCore};

use crate::error::Error;
use crate::Result;

/// Numerically stable `log(sum(exp(xs)))`.
pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let mut m = f64::NEG_INFINITY;
    for &x in xs {
        if x > m {
            m = x;
        }
    }
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let mut s = 0.0;
    for &x in xs {
        s += (x - m).exp();
    }
    m + s.ln()
}

/// Normalise log weights into a probability vector.
pub fn normalized_weights(log_weights: &[f64]) -> Result<Vec<f64>> {
    let mut m = f64::NEG_INFINITY;
    for &lw in log_weights {
        if lw.is_nan() {
            return Err(Error::DegenerateWeights);
        }
        if lw > m {
            m = lw;
        }
    }
    if log_weights.is_empty() || m == f64::NEG_INFINITY {
        return Err(Error::DegenerateWeights);
    }
    let mut probs: Vec<f64> = log_weights.iter().map(|&lw| (lw - m).exp()).collect();
    let total: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= total;
    }
    Ok(probs)
}

/// Categorical distribution with a precomputed cumulative table, for repeated
/// draws from one weight vector.
#[derive(Clone, Debug)]
pub struct CategoricalDist {
    cum: Vec<f64>,
}

impl CategoricalDist {
    pub fn from_log_weights(log_weights: &[f64]) -> Result<Self> {
        Self::from_probs(normalized_weights(log_weights)?)
    }

    /// Build from nonnegative weights that already live on a linear scale.
    /// They do not need to sum to one.
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        let mut cum = probs;
        let mut acc = 0.0;
        for c in &mut cum {
            if c.is_nan() || *c < 0.0 {
                return Err(Error::DegenerateWeights);
            }
            acc += *c;
            *c = acc;
        }
        if !(acc > 0.0) {
            return Err(Error::DegenerateWeights);
        }
        Ok(CategoricalDist { cum })
    }

    /// Inverse-CDF draw; exact boundary hits resolve to the lower index.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let total = *self.cum.last().expect("non-empty by construction");
        let u = rng.gen::<f64>() * total;
        self.index_of(u)
    }

    fn index_of(&self, u: f64) -> usize {
        let i = self.cum.partition_point(|&c| c <= u);
        i.min(self.cum.len() - 1)
    }
}

/// Single draw from the categorical distribution proportional to
/// `exp(log_weights)`.
pub fn categorical_sample<R: Rng + ?Sized>(log_weights: &[f64], rng: &mut R) -> Result<usize> {
    Ok(CategoricalDist::from_log_weights(log_weights)?.sample(rng))
}

/// Maximal coupling of two categorical distributions over the same index set.
///
/// Splits each distribution into the common part `min(v_i, v~_i)` and the
/// residuals. One uniform decides the branch: with probability
/// `sum_i min(v_i, v~_i)` both indices are one draw from the common part,
/// otherwise the indices are drawn from the two residuals, whose supports are
/// disjoint. The returned pair is equal exactly when the common branch was
/// taken, and the meeting probability is exactly the total overlap.
pub fn max_couple_categorical<R: Rng + ?Sized>(
    log_weights_a: &[f64],
    log_weights_b: &[f64],
    rng: &mut R,
) -> Result<(usize, usize)> {
    if log_weights_a.len() != log_weights_b.len() {
        return Err(Error::LengthMismatch {
            left: log_weights_a.len(),
            right: log_weights_b.len(),
        });
    }
    let va = normalized_weights(log_weights_a)?;
    let vb = normalized_weights(log_weights_b)?;
    coupled_categorical_draw(&va, &vb, rng)
}

/// The branch-and-draw step of [`max_couple_categorical`], starting from
/// already-normalised probability vectors.
pub(crate) fn coupled_categorical_draw<R: Rng + ?Sized>(
    va: &[f64],
    vb: &[f64],
    rng: &mut R,
) -> Result<(usize, usize)> {
    Ok(CoupledCategorical::new(va, vb)?.draw(rng))
}

/// Maximal coupling of two categorical distributions with the overlap
/// decomposition precomputed, so one pair of weight vectors can serve many
/// index draws.
#[derive(Clone, Debug)]
pub(crate) struct CoupledCategorical {
    overlap: f64,
    common: Option<CategoricalDist>,
    residual_a: Option<CategoricalDist>,
    residual_b: Option<CategoricalDist>,
}

impl CoupledCategorical {
    /// Build from two normalised probability vectors of equal length.
    pub fn new(va: &[f64], vb: &[f64]) -> Result<Self> {
        debug_assert_eq!(va.len(), vb.len());
        let mins: Vec<f64> = va.iter().zip(vb).map(|(&a, &b)| a.min(b)).collect();
        let overlap: f64 = mins.iter().sum();
        // Round-off can leave tiny negative residuals; clamp them to zero. A
        // side whose residual carries no mass at all is stored as None.
        let ra: Vec<f64> = va.iter().zip(&mins).map(|(&v, &m)| (v - m).max(0.0)).collect();
        let rb: Vec<f64> = vb.iter().zip(&mins).map(|(&v, &m)| (v - m).max(0.0)).collect();
        Ok(CoupledCategorical {
            overlap,
            common: (overlap > 0.0).then(|| CategoricalDist::from_probs(mins)).transpose()?,
            residual_a: positive_mass(&ra).then(|| CategoricalDist::from_probs(ra)).transpose()?,
            residual_b: positive_mass(&rb).then(|| CategoricalDist::from_probs(rb)).transpose()?,
        })
    }

    /// One maximally coupled index pair.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize) {
        let u = rng.gen::<f64>();
        if u <= self.overlap {
            if let Some(common) = &self.common {
                let i = common.sample(rng);
                return (i, i);
            }
        }
        match (&self.residual_a, &self.residual_b) {
            (Some(ra), Some(rb)) => (ra.sample(rng), rb.sample(rng)),
            // Both inputs were (numerically) identical, so the residuals are
            // empty and the common part is the whole distribution.
            _ => {
                let common = self
                    .common
                    .as_ref()
                    .expect("either residuals or a common part must carry mass");
                let i = common.sample(rng);
                (i, i)
            }
        }
    }
}

fn positive_mass(probs: &[f64]) -> bool {
    probs.iter().sum::<f64>() > 0.0
}

/// A distribution that can be both sampled and evaluated in log scale. The
/// two sides of [`max_couple_generic`] each provide one of these.
pub trait DensitySampler {
    type Point;

    fn sample(&self, rng: &mut dyn RngCore) -> Self::Point;
    fn log_density(&self, x: &Self::Point) -> f64;
}

/// Density-and-sampler pair built from closures.
pub struct SamplerFromFns<Fs, Fd> {
    pub sample_fn: Fs,
    pub log_density_fn: Fd,
}

impl<X, Fs, Fd> DensitySampler for SamplerFromFns<Fs, Fd>
where
    Fs: Fn(&mut dyn RngCore) -> X,
    Fd: Fn(&X) -> f64,
{
    type Point = X;

    fn sample(&self, rng: &mut dyn RngCore) -> X {
        (self.sample_fn)(rng)
    }

    fn log_density(&self, x: &X) -> f64 {
        (self.log_density_fn)(x)
    }
}

/// Default iteration cap for the rejection loop of [`max_couple_generic`].
pub const REJECTION_CAP_DEFAULT: u64 = 1_000_000;

/// Rejection-based maximal coupling of two arbitrary distributions given by
/// density-and-sampler pairs with respect to a common dominating measure.
///
/// Draws `X ~ p` and accepts the diagonal pair `(X, X)` with probability
/// `min(1, q(X) / p(X))`; otherwise draws `Y ~ q` repeatedly, accepting with
/// probability `1 - min(1, p(Y) / q(Y))`. The boolean is `true` on the
/// diagonal branch. Density ratios are formed as `exp(log q - log p)`
/// saturated at one, so mismatched normalising constants are the caller's
/// responsibility. The expected number of rejection rounds is bounded, but a
/// pathological pair can loop for a long time; after `cap` rounds the routine
/// gives up with an error instead of hanging.
pub fn max_couple_generic<P, Q, R>(
    p: &P,
    q: &Q,
    rng: &mut R,
    cap: u64,
) -> Result<(P::Point, P::Point, bool)>
where
    P: DensitySampler,
    Q: DensitySampler<Point = P::Point>,
    P::Point: Clone,
    R: Rng,
{
    let x = p.sample(rng);
    let log_ratio = q.log_density(&x) - p.log_density(&x);
    if log_ratio >= 0.0 || rng.gen::<f64>() < log_ratio.exp() {
        return Ok((x.clone(), x, true));
    }
    for _ in 0..cap {
        let y = q.sample(rng);
        let log_ratio = p.log_density(&y) - q.log_density(&y);
        let reject_prob = if log_ratio >= 0.0 { 1.0 } else { log_ratio.exp() };
        if rng.gen::<f64>() >= reject_prob {
            return Ok((x, y, false));
        }
    }
    Err(Error::RejectionCapExceeded { cap })
}

//! Coupled conditional kernels.
//!
//! One call to [`coupled_cbpf_transition`] advances two backward-sampling
//! conditional particle filters from a pair of reference paths using common
//! randomness. Marginally each chain moves by exactly the single-chain
//! kernel; jointly the construction maximises the chance that the chains
//! produce bit-identical output, after which they stay merged forever. The
//! forward pass shares the time-0 draws, couples every later propagation step
//! with one of four [`CouplingStrategy`] variants, and the backward pass
//! maximally couples the index draws.
//!
//! Bookkeeping helpers ([`hole_profile`]) describe where two trajectories
//! still disagree.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore};

use crate::coupling::{
    max_couple_generic, normalized_weights, CategoricalDist, CoupledCategorical, DensitySampler,
    REJECTION_CAP_DEFAULT,
};
use crate::error::Error;
use crate::fk::{FeynmanKacModel, Path};
use crate::Result;

/// How the forward propagation step couples the two particle clouds.
///
/// The mixture variants operate on the predictive distributions directly and
/// cost `O(n^2)` per time step; the index variants couple ancestor draws and
/// cost `O(n)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CouplingStrategy {
    /// Joint maximal coupling: one rejection coupling of the two n-fold
    /// product predictive mixtures. Either every new particle pair is shared
    /// or the clouds are redrawn independently as blocks.
    Jmc,
    /// Independent maximal couplings: one rejection coupling of the two
    /// predictive mixtures per particle.
    Imc,
    /// Independent index coupling: maximally couple the ancestor index pair
    /// per particle, then share the transition draw exactly when the chosen
    /// ancestors carry equal states.
    Iic,
    /// Joint index coupling: one rejection coupling of the n-fold product of
    /// ancestor index laws, then share transition draws as in `Iic`.
    Jic,
}

impl CouplingStrategy {
    pub const ALL: [CouplingStrategy; 4] = [
        CouplingStrategy::Jmc,
        CouplingStrategy::Imc,
        CouplingStrategy::Iic,
        CouplingStrategy::Jic,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            CouplingStrategy::Jmc => "jmc",
            CouplingStrategy::Imc => "imc",
            CouplingStrategy::Iic => "iic",
            CouplingStrategy::Jic => "jic",
        }
    }

    /// Exponent of the per-iteration cost model: mixture couplings evaluate
    /// `n^2` transition densities per time step, index couplings `n`.
    pub fn cost_exponent(&self) -> u32 {
        match self {
            CouplingStrategy::Jmc | CouplingStrategy::Imc => 2,
            CouplingStrategy::Iic | CouplingStrategy::Jic => 1,
        }
    }
}

impl fmt::Display for CouplingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CouplingStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "jmc" => Ok(CouplingStrategy::Jmc),
            "imc" => Ok(CouplingStrategy::Imc),
            "iic" => Ok(CouplingStrategy::Iic),
            "jic" => Ok(CouplingStrategy::Jic),
            other => Err(Error::InvalidParameter(format!(
                "unknown coupling strategy '{other}' (expected jmc, imc, iic or jic)"
            ))),
        }
    }
}

/// Knobs of the coupled transition.
#[derive(Clone, Copy, Debug)]
pub struct CoupledOptions {
    pub strategy: CouplingStrategy,
    /// Iteration cap for the rejection loops of the joint couplings.
    pub rejection_cap: u64,
}

impl CoupledOptions {
    pub fn new(strategy: CouplingStrategy) -> Self {
        CoupledOptions {
            strategy,
            rejection_cap: REJECTION_CAP_DEFAULT,
        }
    }
}

/// One row of a particle cloud: the states and log weights at a single time,
/// reference slot included.
#[derive(Clone, Copy, Debug)]
pub struct CloudRow<'a, S> {
    pub states: &'a [S],
    pub log_weights: &'a [f64],
}

/// Result of one coupled transition.
#[derive(Clone, Debug)]
pub struct CoupledOutput<S> {
    pub path_a: Path<S>,
    pub path_b: Path<S>,
    /// Time indices where the two output paths still differ.
    pub holes: Vec<usize>,
    /// True when the outputs are identical everywhere.
    pub fully_met: bool,
    /// Per-time flags marking full equality of the non-reference particles
    /// after the forward pass. Time 0 is always true because the initial
    /// draws are shared.
    pub forward_couple_events: Vec<bool>,
}

/// The predictive mixture at one time step: ancestors weighted by the
/// normalised previous weights, pushed through the transition kernel. This is
/// both a sampler (ancestor index first, then the transition draw) and a log
/// density, which is what the mixture couplings need.
struct PredictiveMixture<'a, M: FeynmanKacModel> {
    model: &'a M,
    t: usize,
    states: &'a [M::State],
    log_probs: Vec<f64>,
    ancestor: CategoricalDist,
}

impl<'a, M: FeynmanKacModel> PredictiveMixture<'a, M> {
    fn new(model: &'a M, t: usize, row: CloudRow<'a, M::State>) -> Result<Self> {
        let probs = normalized_weights(row.log_weights)?;
        let log_probs = probs.iter().map(|p| p.ln()).collect();
        Ok(PredictiveMixture {
            model,
            t,
            states: row.states,
            log_probs,
            ancestor: CategoricalDist::from_probs(probs)?,
        })
    }
}

/// Upper bound on the particle count that keeps density evaluations on the
/// stack. Larger clouds fall back to a heap buffer.
const STACK_COMPONENTS: usize = 128;

impl<M: FeynmanKacModel> DensitySampler for PredictiveMixture<'_, M> {
    type Point = M::State;

    fn sample(&self, rng: &mut dyn RngCore) -> M::State {
        let a = self.ancestor.sample(rng);
        self.model.sample_transition(self.t, &self.states[a], rng)
    }

    fn log_density(&self, y: &M::State) -> f64 {
        let n = self.states.len();
        let mut stack = [0.0f64; STACK_COMPONENTS];
        let mut heap = Vec::new();
        let buf: &mut [f64] = if n <= STACK_COMPONENTS {
            &mut stack[..n]
        } else {
            heap.resize(n, 0.0);
            &mut heap[..]
        };
        let mut max = f64::NEG_INFINITY;
        for (slot, (x, lp)) in buf.iter_mut().zip(self.states.iter().zip(&self.log_probs)) {
            let term = lp + self.model.log_transition(self.t, x, y);
            *slot = term;
            if term > max {
                max = term;
            }
        }
        if max == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        let sum: f64 = buf.iter().map(|&term| (term - max).exp()).sum();
        max + sum.ln()
    }
}

/// Log density at `y` of the one-step predictive mixture built from the
/// weighted particles at time `t - 1` (reference slot included).
pub fn predictive_log_density<M: FeynmanKacModel>(
    model: &M,
    t: usize,
    states: &[M::State],
    log_weights: &[f64],
    y: &M::State,
) -> Result<f64> {
    if states.len() != log_weights.len() {
        return Err(Error::LengthMismatch {
            left: states.len(),
            right: log_weights.len(),
        });
    }
    let mixture = PredictiveMixture::new(model, t, CloudRow { states, log_weights })?;
    Ok(mixture.log_density(y))
}

/// The n-fold product of one predictive mixture, coupled as a block by the
/// joint mixture strategy.
struct ProductMixture<'a, M: FeynmanKacModel> {
    inner: &'a PredictiveMixture<'a, M>,
    count: usize,
}

impl<M: FeynmanKacModel> DensitySampler for ProductMixture<'_, M> {
    type Point = Vec<M::State>;

    fn sample(&self, rng: &mut dyn RngCore) -> Vec<M::State> {
        (0..self.count).map(|_| self.inner.sample(rng)).collect()
    }

    fn log_density(&self, ys: &Vec<M::State>) -> f64 {
        ys.iter().map(|y| self.inner.log_density(y)).sum()
    }
}

/// The n-fold product of one categorical ancestor law, coupled as a block by
/// the joint index strategy.
struct IndexProduct<'a> {
    dist: &'a CategoricalDist,
    log_probs: &'a [f64],
    count: usize,
}

impl DensitySampler for IndexProduct<'_> {
    type Point = Vec<usize>;

    fn sample(&self, rng: &mut dyn RngCore) -> Vec<usize> {
        (0..self.count).map(|_| self.dist.sample(rng)).collect()
    }

    fn log_density(&self, idx: &Vec<usize>) -> f64 {
        idx.iter().map(|&i| self.log_probs[i]).sum()
    }
}

/// Couple one forward propagation step: draw the `n` non-reference particles
/// of both chains at time `t` from the predictive mixtures over the given
/// rows at `t - 1`.
///
/// When the two rows are identical (states and weights, reference slot
/// included) the predictive mixtures coincide as distributions, so a single
/// set of draws is simulated and copied to both chains regardless of the
/// strategy.
pub fn fwd_couple<M, R>(
    model: &M,
    t: usize,
    row_a: CloudRow<'_, M::State>,
    row_b: CloudRow<'_, M::State>,
    n: usize,
    options: &CoupledOptions,
    rng: &mut R,
) -> Result<(Vec<M::State>, Vec<M::State>)>
where
    M: FeynmanKacModel,
    R: Rng,
{
    let degenerate = |err| match err {
        Error::DegenerateWeights => Error::DegenerateWeightsAt { t: t - 1 },
        other => other,
    };

    if row_a.states == row_b.states && row_a.log_weights == row_b.log_weights {
        let mixture = PredictiveMixture::new(model, t, row_a).map_err(degenerate)?;
        let xs: Vec<M::State> = (0..n).map(|_| mixture.sample(rng)).collect();
        return Ok((xs.clone(), xs));
    }

    match options.strategy {
        CouplingStrategy::Jmc => {
            let mix_a = PredictiveMixture::new(model, t, row_a).map_err(degenerate)?;
            let mix_b = PredictiveMixture::new(model, t, row_b).map_err(degenerate)?;
            let prod_a = ProductMixture { inner: &mix_a, count: n };
            let prod_b = ProductMixture { inner: &mix_b, count: n };
            let (xs_a, xs_b, _met) =
                max_couple_generic(&prod_a, &prod_b, rng, options.rejection_cap)?;
            Ok((xs_a, xs_b))
        }
        CouplingStrategy::Imc => {
            let mix_a = PredictiveMixture::new(model, t, row_a).map_err(degenerate)?;
            let mix_b = PredictiveMixture::new(model, t, row_b).map_err(degenerate)?;
            let mut xs_a = Vec::with_capacity(n);
            let mut xs_b = Vec::with_capacity(n);
            for _ in 0..n {
                let (xa, xb, _met) =
                    max_couple_generic(&mix_a, &mix_b, rng, options.rejection_cap)?;
                xs_a.push(xa);
                xs_b.push(xb);
            }
            Ok((xs_a, xs_b))
        }
        CouplingStrategy::Iic => {
            let va = normalized_weights(row_a.log_weights).map_err(degenerate)?;
            let vb = normalized_weights(row_b.log_weights).map_err(degenerate)?;
            let coupled = CoupledCategorical::new(&va, &vb)?;
            let mut xs_a = Vec::with_capacity(n);
            let mut xs_b = Vec::with_capacity(n);
            for _ in 0..n {
                let (ia, ib) = coupled.draw(rng);
                push_transition_pair(
                    model,
                    t,
                    &row_a.states[ia],
                    &row_b.states[ib],
                    &mut xs_a,
                    &mut xs_b,
                    rng,
                );
            }
            Ok((xs_a, xs_b))
        }
        CouplingStrategy::Jic => {
            let va = normalized_weights(row_a.log_weights).map_err(degenerate)?;
            let vb = normalized_weights(row_b.log_weights).map_err(degenerate)?;
            let log_pa: Vec<f64> = va.iter().map(|p| p.ln()).collect();
            let log_pb: Vec<f64> = vb.iter().map(|p| p.ln()).collect();
            let dist_a = CategoricalDist::from_probs(va)?;
            let dist_b = CategoricalDist::from_probs(vb)?;
            let prod_a = IndexProduct { dist: &dist_a, log_probs: &log_pa, count: n };
            let prod_b = IndexProduct { dist: &dist_b, log_probs: &log_pb, count: n };
            let (idx_a, idx_b, _met) =
                max_couple_generic(&prod_a, &prod_b, rng, options.rejection_cap)?;
            let mut xs_a = Vec::with_capacity(n);
            let mut xs_b = Vec::with_capacity(n);
            for (&ia, &ib) in idx_a.iter().zip(&idx_b) {
                push_transition_pair(
                    model,
                    t,
                    &row_a.states[ia],
                    &row_b.states[ib],
                    &mut xs_a,
                    &mut xs_b,
                    rng,
                );
            }
            Ok((xs_a, xs_b))
        }
    }
}

/// Index-coupled propagation: ancestors with equal states share one
/// transition draw, everything else draws independently.
fn push_transition_pair<M, R>(
    model: &M,
    t: usize,
    from_a: &M::State,
    from_b: &M::State,
    xs_a: &mut Vec<M::State>,
    xs_b: &mut Vec<M::State>,
    rng: &mut R,
) where
    M: FeynmanKacModel,
    R: Rng + ?Sized,
{
    if from_a == from_b {
        let x = model.sample_transition(t, from_a, rng);
        xs_a.push(x.clone());
        xs_b.push(x);
    } else {
        xs_a.push(model.sample_transition(t, from_a, rng));
        xs_b.push(model.sample_transition(t, from_b, rng));
    }
}

/// One coupled transition of the backward-sampling conditional particle
/// filter, advancing the references `ref_a` and `ref_b` together.
///
/// Starting from equal references, every draw is shared and the outputs are
/// bit-identical, so meetings are permanent.
pub fn coupled_cbpf_transition<M, R>(
    model: &M,
    ref_a: &Path<M::State>,
    ref_b: &Path<M::State>,
    n: usize,
    options: &CoupledOptions,
    rng: &mut R,
) -> Result<CoupledOutput<M::State>>
where
    M: FeynmanKacModel,
    R: Rng,
{
    let t_len = model.horizon();
    if ref_a.len() != t_len || ref_b.len() != t_len {
        return Err(Error::InvalidParameter(format!(
            "reference path lengths ({}, {}) do not match model horizon {}",
            ref_a.len(),
            ref_b.len(),
            t_len
        )));
    }
    if n == 0 {
        return Err(Error::InvalidParameter(
            "particle count must be at least 1".into(),
        ));
    }

    let mut particles_a: Vec<Vec<M::State>> = Vec::with_capacity(t_len);
    let mut particles_b: Vec<Vec<M::State>> = Vec::with_capacity(t_len);
    let mut lw_a: Vec<Vec<f64>> = Vec::with_capacity(t_len);
    let mut lw_b: Vec<Vec<f64>> = Vec::with_capacity(t_len);
    let mut forward_couple_events = Vec::with_capacity(t_len);

    // Time 0: the free particles are shared between the chains.
    let shared: Vec<M::State> = (0..n).map(|_| model.sample_initial(rng)).collect();
    let mut row_a = Vec::with_capacity(n + 1);
    row_a.push(ref_a[0].clone());
    row_a.extend(shared.iter().cloned());
    let mut row_b = Vec::with_capacity(n + 1);
    row_b.push(ref_b[0].clone());
    row_b.extend(shared);
    lw_a.push(row_a.iter().map(|x| model.log_potential(0, x)).collect());
    lw_b.push(row_b.iter().map(|x| model.log_potential(0, x)).collect());
    particles_a.push(row_a);
    particles_b.push(row_b);
    forward_couple_events.push(true);

    for t in 1..t_len {
        let (xs_a, xs_b) = fwd_couple(
            model,
            t,
            CloudRow {
                states: &particles_a[t - 1],
                log_weights: &lw_a[t - 1],
            },
            CloudRow {
                states: &particles_b[t - 1],
                log_weights: &lw_b[t - 1],
            },
            n,
            options,
            rng,
        )?;
        forward_couple_events.push(xs_a == xs_b);
        let mut row_a = Vec::with_capacity(n + 1);
        row_a.push(ref_a[t].clone());
        row_a.extend(xs_a);
        let mut row_b = Vec::with_capacity(n + 1);
        row_b.push(ref_b[t].clone());
        row_b.extend(xs_b);
        lw_a.push(row_a.iter().map(|x| model.log_potential(t, x)).collect());
        lw_b.push(row_b.iter().map(|x| model.log_potential(t, x)).collect());
        particles_a.push(row_a);
        particles_b.push(row_b);
    }

    // Backward pass: maximally coupled index draws, plain potentials at the
    // horizon, transition-tilted weights before it.
    let mut path_a: Vec<Option<M::State>> = vec![None; t_len];
    let mut path_b: Vec<Option<M::State>> = vec![None; t_len];

    let norm_a = normalized_weights(&lw_a[t_len - 1])
        .map_err(|_| Error::DegenerateWeightsAt { t: t_len - 1 })?;
    let norm_b = normalized_weights(&lw_b[t_len - 1])
        .map_err(|_| Error::DegenerateWeightsAt { t: t_len - 1 })?;
    let (ja, jb) = CoupledCategorical::new(&norm_a, &norm_b)?.draw(rng);
    path_a[t_len - 1] = Some(particles_a[t_len - 1][ja].clone());
    path_b[t_len - 1] = Some(particles_b[t_len - 1][jb].clone());

    let mut tilted_a: Vec<f64> = Vec::with_capacity(n + 1);
    let mut tilted_b: Vec<f64> = Vec::with_capacity(n + 1);
    for t in (0..t_len - 1).rev() {
        let next_a = path_a[t + 1].as_ref().expect("filled by previous step");
        let next_b = path_b[t + 1].as_ref().expect("filled by previous step");
        tilted_a.clear();
        tilted_a.extend(
            particles_a[t]
                .iter()
                .zip(&lw_a[t])
                .map(|(x, lw)| lw + model.log_transition(t + 1, x, next_a)),
        );
        tilted_b.clear();
        tilted_b.extend(
            particles_b[t]
                .iter()
                .zip(&lw_b[t])
                .map(|(x, lw)| lw + model.log_transition(t + 1, x, next_b)),
        );
        let norm_a =
            normalized_weights(&tilted_a).map_err(|_| Error::DegenerateWeightsAt { t })?;
        let norm_b =
            normalized_weights(&tilted_b).map_err(|_| Error::DegenerateWeightsAt { t })?;
        let (ja, jb) = CoupledCategorical::new(&norm_a, &norm_b)?.draw(rng);
        path_a[t] = Some(particles_a[t][ja].clone());
        path_b[t] = Some(particles_b[t][jb].clone());
    }

    let path_a = Path(path_a.into_iter().map(|s| s.expect("all filled")).collect::<Vec<_>>());
    let path_b = Path(path_b.into_iter().map(|s| s.expect("all filled")).collect::<Vec<_>>());
    let holes: Vec<usize> = (0..t_len).filter(|&t| path_a[t] != path_b[t]).collect();
    let fully_met = holes.is_empty();
    Ok(CoupledOutput {
        path_a,
        path_b,
        holes,
        fully_met,
        forward_couple_events,
    })
}

/// Where two trajectories disagree, and how far each time index is from the
/// nearest disagreement.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HoleProfile {
    /// Time indices where the paths differ.
    pub holes: Vec<usize>,
    /// `distances[t]` is the number of hops from `t` to the nearest hole;
    /// `None` when the paths are identical.
    pub distances: Option<Vec<usize>>,
    /// Times grouped by their distance value; empty when the paths are
    /// identical.
    pub level_sets: BTreeMap<usize, Vec<usize>>,
}

/// Compare two equal-length trajectories and lay out their disagreements.
pub fn hole_profile<S: PartialEq>(path_a: &Path<S>, path_b: &Path<S>) -> Result<HoleProfile> {
    if path_a.len() != path_b.len() {
        return Err(Error::LengthMismatch {
            left: path_a.len(),
            right: path_b.len(),
        });
    }
    let t_len = path_a.len();
    let holes: Vec<usize> = (0..t_len).filter(|&t| path_a[t] != path_b[t]).collect();
    if holes.is_empty() {
        return Ok(HoleProfile {
            holes,
            distances: None,
            level_sets: BTreeMap::new(),
        });
    }

    // Distance to the nearest hole via one sweep in each direction.
    let mut distances = vec![usize::MAX; t_len];
    let mut last: Option<usize> = None;
    for t in 0..t_len {
        if path_a[t] != path_b[t] {
            last = Some(t);
        }
        if let Some(h) = last {
            distances[t] = t - h;
        }
    }
    last = None;
    for t in (0..t_len).rev() {
        if path_a[t] != path_b[t] {
            last = Some(t);
        }
        if let Some(h) = last {
            distances[t] = distances[t].min(h - t);
        }
    }

    let mut level_sets: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (t, &d) in distances.iter().enumerate() {
        level_sets.entry(d).or_default().push(t);
    }
    Ok(HoleProfile {
        holes,
        distances: Some(distances),
        level_sets,
    })
}

//! Single-chain smoothing kernels.
//!
//! The central object is [`cbpf_transition`]: one sweep of the conditional
//! particle filter with backward sampling, a Markov kernel on complete
//! trajectories that leaves the smoothing distribution invariant. The
//! reference path always occupies particle slot 0. [`cpf_transition`] is the
//! ancestor-tracing variant (no backward draws), [`marginal_cbpf_transition`]
//! handles pairwise potentials by reweighting with predictive mixture ratios,
//! and [`particle_filter`] is the unconditional filter used to initialise
//! chains.

use rand::Rng;

use crate::coupling::{log_sum_exp, CategoricalDist};
use crate::error::Error;
use crate::fk::{FeynmanKacModel, PairwisePotentialModel, Path};
use crate::Result;

/// Particle system laid out time-major: `particles[t][i]` with matching
/// `log_weights[t][i]`. In conditional sweeps slot `i = 0` holds the
/// reference path.
#[derive(Clone, Debug)]
pub struct ParticleCloud<S> {
    pub particles: Vec<Vec<S>>,
    pub log_weights: Vec<Vec<f64>>,
    /// `ancestors[t][i]`: the index at `t - 1` that particle `(t, i)`
    /// descends from. Only the ancestor-tracing kernel records this;
    /// `ancestors[0]` is unused and stays empty.
    pub ancestors: Option<Vec<Vec<usize>>>,
}

/// Result of one conditional sweep.
#[derive(Clone, Debug)]
pub struct KernelOutput<S> {
    /// The new reference trajectory.
    pub path: Path<S>,
    /// Selected particle index at each time.
    pub selected_indices: Vec<usize>,
    /// Whether the old reference slot was selected at each time.
    pub reference_retained: Vec<bool>,
}

fn check_reference<M: FeynmanKacModel>(model: &M, reference: &Path<M::State>) -> Result<()> {
    if reference.len() != model.horizon() {
        return Err(Error::InvalidParameter(format!(
            "reference path length {} does not match model horizon {}",
            reference.len(),
            model.horizon()
        )));
    }
    Ok(())
}

fn check_particle_count(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidParameter(
            "particle count must be at least 1".into(),
        ));
    }
    Ok(())
}

/// Forward sweep of the conditional filter: slot 0 carries the reference,
/// slots `1..=n` are propagated by first drawing an ancestor from the
/// previous weights and then a transition from that ancestor.
fn conditional_forward<M, R>(
    model: &M,
    reference: &Path<M::State>,
    n: usize,
    record_ancestors: bool,
    rng: &mut R,
) -> Result<ParticleCloud<M::State>>
where
    M: FeynmanKacModel,
    R: Rng + ?Sized,
{
    let t_len = model.horizon();
    let mut particles: Vec<Vec<M::State>> = Vec::with_capacity(t_len);
    let mut log_weights: Vec<Vec<f64>> = Vec::with_capacity(t_len);
    let mut ancestors: Vec<Vec<usize>> = if record_ancestors {
        Vec::with_capacity(t_len)
    } else {
        Vec::new()
    };

    let mut row: Vec<M::State> = Vec::with_capacity(n + 1);
    row.push(reference[0].clone());
    for _ in 0..n {
        row.push(model.sample_initial(rng));
    }
    log_weights.push(row.iter().map(|x| model.log_potential(0, x)).collect());
    particles.push(row);
    if record_ancestors {
        ancestors.push(Vec::new());
    }

    for t in 1..t_len {
        let dist = CategoricalDist::from_log_weights(&log_weights[t - 1])
            .map_err(|_| Error::DegenerateWeightsAt { t: t - 1 })?;
        let mut row: Vec<M::State> = Vec::with_capacity(n + 1);
        let mut anc: Vec<usize> = Vec::with_capacity(n + 1);
        row.push(reference[t].clone());
        anc.push(0);
        for _ in 0..n {
            let a = dist.sample(rng);
            row.push(model.sample_transition(t, &particles[t - 1][a], rng));
            anc.push(a);
        }
        log_weights.push(row.iter().map(|x| model.log_potential(t, x)).collect());
        particles.push(row);
        if record_ancestors {
            ancestors.push(anc);
        }
    }

    Ok(ParticleCloud {
        particles,
        log_weights,
        ancestors: record_ancestors.then_some(ancestors),
    })
}

/// Backward-sampling pass over any particle cloud: the index at the horizon
/// is drawn from the final weights, earlier indices from the weights tilted
/// by the transition density into the already-selected successor.
pub(crate) fn backward_pass<M, R>(
    model: &M,
    cloud: &ParticleCloud<M::State>,
    rng: &mut R,
) -> Result<KernelOutput<M::State>>
where
    M: FeynmanKacModel,
    R: Rng + ?Sized,
{
    let t_len = cloud.particles.len();
    let mut indices = vec![0usize; t_len];
    let mut states: Vec<Option<M::State>> = vec![None; t_len];

    let last = CategoricalDist::from_log_weights(&cloud.log_weights[t_len - 1])
        .map_err(|_| Error::DegenerateWeightsAt { t: t_len - 1 })?
        .sample(rng);
    indices[t_len - 1] = last;
    states[t_len - 1] = Some(cloud.particles[t_len - 1][last].clone());

    let mut tilted: Vec<f64> = Vec::new();
    for t in (0..t_len - 1).rev() {
        let next = states[t + 1].as_ref().expect("filled by previous step");
        tilted.clear();
        tilted.extend(
            cloud.particles[t]
                .iter()
                .zip(&cloud.log_weights[t])
                .map(|(x, lw)| lw + model.log_transition(t + 1, x, next)),
        );
        let j = CategoricalDist::from_log_weights(&tilted)
            .map_err(|_| Error::DegenerateWeightsAt { t })?
            .sample(rng);
        indices[t] = j;
        states[t] = Some(cloud.particles[t][j].clone());
    }

    let path = Path(states.into_iter().map(|s| s.expect("all filled")).collect());
    let reference_retained = indices.iter().map(|&j| j == 0).collect();
    Ok(KernelOutput {
        path,
        selected_indices: indices,
        reference_retained,
    })
}

/// One transition of the backward-sampling conditional particle filter.
///
/// Invariant with respect to the model's smoothing distribution for any
/// `n >= 1`.
pub fn cbpf_transition<M, R>(
    model: &M,
    reference: &Path<M::State>,
    n: usize,
    rng: &mut R,
) -> Result<KernelOutput<M::State>>
where
    M: FeynmanKacModel,
    R: Rng + ?Sized,
{
    check_reference(model, reference)?;
    check_particle_count(n)?;
    let cloud = conditional_forward(model, reference, n, false, rng)?;
    backward_pass(model, &cloud, rng)
}

/// One transition of the conditional particle filter with ancestor tracing.
///
/// The forward sweep is identical to [`cbpf_transition`]; instead of backward
/// sampling, a single index is drawn at the horizon and followed back through
/// the stored ancestor lineage. Selecting the reference at any time forces
/// the reference prefix before it.
pub fn cpf_transition<M, R>(
    model: &M,
    reference: &Path<M::State>,
    n: usize,
    rng: &mut R,
) -> Result<KernelOutput<M::State>>
where
    M: FeynmanKacModel,
    R: Rng + ?Sized,
{
    check_reference(model, reference)?;
    check_particle_count(n)?;
    let cloud = conditional_forward(model, reference, n, true, rng)?;
    let ancestors = cloud.ancestors.as_ref().expect("recorded above");
    let t_len = cloud.particles.len();

    let mut indices = vec![0usize; t_len];
    indices[t_len - 1] = CategoricalDist::from_log_weights(&cloud.log_weights[t_len - 1])
        .map_err(|_| Error::DegenerateWeightsAt { t: t_len - 1 })?
        .sample(rng);
    for t in (0..t_len - 1).rev() {
        let next = indices[t + 1];
        indices[t] = if next == 0 { 0 } else { ancestors[t + 1][next] };
    }

    let path = Path(
        indices
            .iter()
            .enumerate()
            .map(|(t, &j)| cloud.particles[t][j].clone())
            .collect(),
    );
    let reference_retained = indices.iter().map(|&j| j == 0).collect();
    Ok(KernelOutput {
        path,
        selected_indices: indices,
        reference_retained,
    })
}

/// One transition of the marginalised conditional filter for models whose
/// potentials inspect adjacent state pairs.
///
/// Particles are propagated from the same weighted mixture as in
/// [`cbpf_transition`], but the new weight of a particle is the log ratio of
/// two predictive mixtures over its possible parents: one tilted by the
/// pairwise potential, one not. The backward pass tilts by both the
/// transition density and the pairwise potential into the selected successor.
/// Each sweep costs `O(n^2)` per time index. Single-argument potentials at
/// `t >= 1` are ignored by this kernel.
pub fn marginal_cbpf_transition<M, R>(
    model: &M,
    reference: &Path<M::State>,
    n: usize,
    rng: &mut R,
) -> Result<KernelOutput<M::State>>
where
    M: PairwisePotentialModel,
    R: Rng + ?Sized,
{
    check_reference(model, reference)?;
    check_particle_count(n)?;
    let t_len = model.horizon();

    let mut particles: Vec<Vec<M::State>> = Vec::with_capacity(t_len);
    let mut log_weights: Vec<Vec<f64>> = Vec::with_capacity(t_len);

    let mut row: Vec<M::State> = Vec::with_capacity(n + 1);
    row.push(reference[0].clone());
    for _ in 0..n {
        row.push(model.sample_initial(rng));
    }
    log_weights.push(row.iter().map(|x| model.log_potential(0, x)).collect());
    particles.push(row);

    let mut tilted: Vec<f64> = Vec::with_capacity(n + 1);
    let mut plain: Vec<f64> = Vec::with_capacity(n + 1);
    for t in 1..t_len {
        let dist = CategoricalDist::from_log_weights(&log_weights[t - 1])
            .map_err(|_| Error::DegenerateWeightsAt { t: t - 1 })?;
        let mut row: Vec<M::State> = Vec::with_capacity(n + 1);
        row.push(reference[t].clone());
        for _ in 0..n {
            let a = dist.sample(rng);
            row.push(model.sample_transition(t, &particles[t - 1][a], rng));
        }
        let lw: Vec<f64> = row
            .iter()
            .map(|x| {
                tilted.clear();
                plain.clear();
                for (parent, plw) in particles[t - 1].iter().zip(&log_weights[t - 1]) {
                    let m = plw + model.log_transition(t, parent, x);
                    plain.push(m);
                    tilted.push(m + model.log_pairwise_potential(t, parent, x));
                }
                log_sum_exp(&tilted) - log_sum_exp(&plain)
            })
            .collect();
        log_weights.push(lw);
        particles.push(row);
    }

    // Backward pass with pair-tilted weights.
    let mut indices = vec![0usize; t_len];
    let mut states: Vec<Option<M::State>> = vec![None; t_len];
    let last = CategoricalDist::from_log_weights(&log_weights[t_len - 1])
        .map_err(|_| Error::DegenerateWeightsAt { t: t_len - 1 })?
        .sample(rng);
    indices[t_len - 1] = last;
    states[t_len - 1] = Some(particles[t_len - 1][last].clone());
    for t in (0..t_len - 1).rev() {
        let next = states[t + 1].as_ref().expect("filled by previous step");
        tilted.clear();
        tilted.extend(particles[t].iter().zip(&log_weights[t]).map(|(x, lw)| {
            lw + model.log_transition(t + 1, x, next)
                + model.log_pairwise_potential(t + 1, x, next)
        }));
        let j = CategoricalDist::from_log_weights(&tilted)
            .map_err(|_| Error::DegenerateWeightsAt { t })?
            .sample(rng);
        indices[t] = j;
        states[t] = Some(particles[t][j].clone());
    }

    let path = Path(states.into_iter().map(|s| s.expect("all filled")).collect());
    let reference_retained = indices.iter().map(|&j| j == 0).collect();
    Ok(KernelOutput {
        path,
        selected_indices: indices,
        reference_retained,
    })
}

/// Unconditional particle filter with backward sampling: the same sweep as
/// [`cbpf_transition`] but with no reference slot. Returns a single
/// trajectory drawn approximately from the smoothing distribution; chains are
/// initialised from this.
pub fn particle_filter<M, R>(model: &M, n: usize, rng: &mut R) -> Result<Path<M::State>>
where
    M: FeynmanKacModel,
    R: Rng + ?Sized,
{
    check_particle_count(n)?;
    let t_len = model.horizon();
    let mut particles: Vec<Vec<M::State>> = Vec::with_capacity(t_len);
    let mut log_weights: Vec<Vec<f64>> = Vec::with_capacity(t_len);

    let row: Vec<M::State> = (0..n).map(|_| model.sample_initial(rng)).collect();
    log_weights.push(row.iter().map(|x| model.log_potential(0, x)).collect());
    particles.push(row);

    for t in 1..t_len {
        let dist = CategoricalDist::from_log_weights(&log_weights[t - 1])
            .map_err(|_| Error::DegenerateWeightsAt { t: t - 1 })?;
        let row: Vec<M::State> = (0..n)
            .map(|_| {
                let a = dist.sample(rng);
                model.sample_transition(t, &particles[t - 1][a], rng)
            })
            .collect();
        log_weights.push(row.iter().map(|x| model.log_potential(t, x)).collect());
        particles.push(row);
    }

    let cloud = ParticleCloud {
        particles,
        log_weights,
        ancestors: None,
    };
    Ok(backward_pass(model, &cloud, rng)?.path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fk::{barriers_model, uniform_model};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn zero_path(t_len: usize) -> Path<f64> {
        Path(vec![0.0; t_len])
    }

    #[test]
    fn kernels_reject_bad_inputs() {
        let m = uniform_model(4).unwrap();
        let mut r = rng(0);
        assert!(cbpf_transition(&m, &zero_path(3), 2, &mut r).is_err());
        assert!(cbpf_transition(&m, &zero_path(4), 0, &mut r).is_err());
        assert!(particle_filter(&m, 0, &mut r).is_err());
    }

    #[test]
    fn kernels_are_deterministic_given_the_seed() {
        let m = barriers_model(0.3, 0.2, 0.3, 6).unwrap();
        let reference = zero_path(6);
        let a = cbpf_transition(&m, &reference, 7, &mut rng(42)).unwrap();
        let b = cbpf_transition(&m, &reference, 7, &mut rng(42)).unwrap();
        assert_eq!(a.path, b.path);
        assert_eq!(a.selected_indices, b.selected_indices);
        let pa = particle_filter(&m, 7, &mut rng(11)).unwrap();
        let pb = particle_filter(&m, 7, &mut rng(11)).unwrap();
        assert_eq!(pa, pb);
    }

    #[test]
    fn output_path_matches_selected_indices() {
        let m = uniform_model(5).unwrap();
        let mut r = rng(1);
        let out = cbpf_transition(&m, &zero_path(5), 3, &mut r).unwrap();
        assert_eq!(out.path.len(), 5);
        assert_eq!(out.selected_indices.len(), 5);
        for (t, &j) in out.selected_indices.iter().enumerate() {
            assert!(j <= 3);
            assert_eq!(out.reference_retained[t], j == 0);
        }
    }

    #[test]
    fn reference_retention_rate_on_the_uniform_model() {
        // With uniform transitions and flat potentials every index is
        // selected with probability 1 / (n + 1) at every time.
        let m = uniform_model(10).unwrap();
        let n = 4;
        let mut r = rng(2);
        let runs = 10_000;
        let mut retained = 0u64;
        let mut reference = zero_path(10);
        for _ in 0..runs {
            let out = cbpf_transition(&m, &reference, n, &mut r).unwrap();
            retained += out.reference_retained.iter().filter(|&&b| b).count() as u64;
            reference = out.path;
        }
        let rate = retained as f64 / (runs as f64 * 10.0);
        let expect = 1.0 / (n as f64 + 1.0);
        // 5 sigma of a Bernoulli(0.2) mean over 1e5 draws.
        assert!((rate - expect).abs() < 5.0 * (expect * (1.0 - expect) / 1e5).sqrt() + 1e-9,
            "rate = {rate}");
    }

    #[test]
    fn single_particle_retention_is_one_half_per_time() {
        // n = 1 with flat potentials: each backward draw picks between the
        // reference and one free particle with equal probability.
        let m = uniform_model(3).unwrap();
        let mut r = rng(3);
        let runs = 20_000;
        let mut retained = [0u64; 3];
        for _ in 0..runs {
            let out = cbpf_transition(&m, &zero_path(3), 1, &mut r).unwrap();
            for (t, &kept) in out.reference_retained.iter().enumerate() {
                retained[t] += u64::from(kept);
            }
        }
        for (t, &count) in retained.iter().enumerate() {
            let rate = count as f64 / runs as f64;
            assert!((rate - 0.5).abs() < 0.012, "t = {t}, rate = {rate}");
        }
    }

    #[test]
    fn cpf_retains_reference_prefix() {
        // Whenever the traced index at time t is 0, all earlier indices must
        // be 0 as well: picking the reference forces its whole prefix.
        let m = barriers_model(0.5, 0.2, 0.3, 8).unwrap();
        let mut r = rng(4);
        for _ in 0..500 {
            let out = cpf_transition(&m, &zero_path(8), 3, &mut r).unwrap();
            if let Some(last_ref) = out.selected_indices.iter().rposition(|&j| j == 0) {
                for t in 0..last_ref {
                    assert_eq!(out.selected_indices[t], 0);
                }
            }
            // And when the reference is selected, the state is the reference
            // state exactly.
            for (t, &j) in out.selected_indices.iter().enumerate() {
                if j == 0 {
                    assert_eq!(out.path[t], 0.0);
                }
            }
        }
    }

    #[test]
    fn cpf_horizon_draw_of_zero_returns_the_whole_reference() {
        let m = uniform_model(6).unwrap();
        let reference = zero_path(6);
        let mut r = rng(5);
        let mut saw_zero = false;
        for _ in 0..2000 {
            let out = cpf_transition(&m, &reference, 3, &mut r).unwrap();
            if out.selected_indices[5] == 0 {
                saw_zero = true;
                assert_eq!(out.path.0, reference.0);
                assert!(out.reference_retained.iter().all(|&b| b));
            }
        }
        assert!(saw_zero, "horizon index 0 never sampled in 2000 runs");
    }

    #[test]
    fn horizon_one_models_work() {
        let m = uniform_model(1).unwrap();
        let mut r = rng(6);
        let out = cbpf_transition(&m, &zero_path(1), 2, &mut r).unwrap();
        assert_eq!(out.path.len(), 1);
        let out = cpf_transition(&m, &zero_path(1), 2, &mut r).unwrap();
        assert_eq!(out.path.len(), 1);
        assert!(particle_filter(&m, 2, &mut r).is_ok());
    }

    #[test]
    fn degenerate_potentials_name_the_failing_time() {
        struct Impossible;
        impl FeynmanKacModel for Impossible {
            type State = f64;
            fn horizon(&self) -> usize {
                3
            }
            fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
                rng.gen()
            }
            fn log_initial(&self, _x: &f64) -> f64 {
                0.0
            }
            fn sample_transition<R: Rng + ?Sized>(&self, _t: usize, _f: &f64, rng: &mut R) -> f64 {
                rng.gen()
            }
            fn log_transition(&self, _t: usize, _f: &f64, _to: &f64) -> f64 {
                0.0
            }
            fn log_potential(&self, t: usize, _x: &f64) -> f64 {
                if t == 1 {
                    f64::NEG_INFINITY
                } else {
                    0.0
                }
            }
        }
        let mut r = rng(7);
        let err = cbpf_transition(&Impossible, &zero_path(3), 2, &mut r).unwrap_err();
        assert!(matches!(err, Error::DegenerateWeightsAt { t: 1 }));
    }
}

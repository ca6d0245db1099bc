//! Unbiased smoothing estimation from coupled chains.
//!
//! A lagged pair of conditional-particle-filter chains started from one
//! common draw meets in finite time; telescoping the difference of the two
//! chains' functionals against the meeting time removes the burn-in bias
//! exactly. [`unbiased_estimate`] computes the single-offset estimator,
//! [`averaged_estimate`] the average over a window of offsets sharing one
//! pair of trajectories, and [`tune_lag`] picks the lag and window from pilot
//! meeting times.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::coupled::{coupled_cbpf_transition, CoupledOptions};
use crate::error::Error;
use crate::fk::{FeynmanKacModel, Path};
use crate::kernels::{cbpf_transition, particle_filter};
use crate::seed;
use crate::Result;

/// What one coupled run observed.
#[derive(Clone, Debug)]
pub struct MeetingRecord {
    /// First iteration at which the full paths were equal.
    pub tau: u64,
    /// Per-time meeting: `tau_per_time[t]` is the first iteration from which
    /// coordinate `t` stayed equal forever. Its maximum equals `tau`.
    pub tau_per_time: Vec<u64>,
    /// Seed the run was started from.
    pub seed: u64,
    /// Coupled iterations actually executed (`>= tau` when the stop rule
    /// kept the chains running past the meeting).
    pub iterations_run: u64,
    /// Wall-clock duration of the run in nanoseconds.
    pub wall_nanos: u128,
}

/// An unbiased estimate together with the run that produced it.
#[derive(Clone, Debug)]
pub struct UnbiasedEstimate {
    /// Componentwise estimate of the smoothing expectation of `h`.
    pub value: Vec<f64>,
    /// First offset used.
    pub k: u64,
    /// Last offset used (`k` for the single-offset estimator).
    pub ell: u64,
    /// Lag between the coupled chains.
    pub lag: u64,
    pub meeting: MeetingRecord,
}

/// Lag and offset window chosen from pilot meeting times.
#[derive(Clone, Debug)]
pub struct LagTuning {
    pub lag: u64,
    pub k: u64,
    pub ell: u64,
    /// Meeting times of the pilot runs, sorted.
    pub pilot_taus: Vec<u64>,
}

impl LagTuning {
    /// Iteration cap matched to the pilot runs: ten times the offset plus the
    /// mean pilot meeting time.
    pub fn default_cap(&self) -> u64 {
        let sum: u64 = self.pilot_taus.iter().sum();
        let mean = (sum as f64 / self.pilot_taus.len().max(1) as f64).ceil() as u64;
        10 * (self.k + mean.max(1))
    }
}

struct CoupledRun {
    h_lead: Vec<Vec<f64>>,
    h_lag: Vec<Vec<f64>>,
    record: MeetingRecord,
}

/// Drive the lagged coupled pair: one filter draw, `lag` single-chain
/// warm-up steps for the leading chain, then coupled transitions until the
/// chains have met and at least `min_iters` iterations have run.
fn run_coupled_pair<M, H>(
    model: &M,
    h: &H,
    n: usize,
    lag: u64,
    min_iters: u64,
    options: &CoupledOptions,
    seed: u64,
    cap: u64,
) -> Result<CoupledRun>
where
    M: FeynmanKacModel,
    H: Fn(&Path<M::State>) -> Vec<f64>,
{
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t_len = model.horizon();

    let common = particle_filter(model, n, &mut rng)?;
    let mut lead = common.clone();
    for _ in 0..lag {
        lead = cbpf_transition(model, &lead, n, &mut rng)?.path;
    }
    let mut lagged = common;

    let mut h_lead = vec![h(&lead)];
    let mut h_lag = vec![h(&lagged)];
    let mut last_unequal = vec![0u64; t_len];
    let mut met_at: Option<u64> = None;

    let mut iter = 0u64;
    loop {
        iter += 1;
        if iter > cap {
            let record = MeetingRecord {
                tau: 0,
                tau_per_time: last_unequal.iter().map(|&l| l + 1).collect(),
                seed,
                iterations_run: iter - 1,
                wall_nanos: start.elapsed().as_nanos(),
            };
            return Err(Error::MeetingCapExceeded {
                cap,
                record: Box::new(record),
            });
        }
        let out = coupled_cbpf_transition(model, &lead, &lagged, n, options, &mut rng)?;
        lead = out.path_a;
        lagged = out.path_b;
        h_lead.push(h(&lead));
        h_lag.push(h(&lagged));
        for &t in &out.holes {
            last_unequal[t] = iter;
        }
        if met_at.is_none() && out.fully_met {
            met_at = Some(iter);
        }
        if met_at.is_some() && iter >= min_iters {
            break;
        }
    }

    let record = MeetingRecord {
        tau: met_at.expect("loop exits only after meeting"),
        tau_per_time: last_unequal.iter().map(|&l| l + 1).collect(),
        seed,
        iterations_run: iter,
        wall_nanos: start.elapsed().as_nanos(),
    };
    Ok(CoupledRun {
        h_lead,
        h_lag,
        record,
    })
}

/// The single-offset estimator: `h` of the leading chain at iteration `k`
/// plus the telescoping corrections at offsets `k + lag * j` up to the
/// meeting.
fn telescoped(run: &CoupledRun, k: u64, lag: u64) -> Vec<f64> {
    let stop = run.record.tau.max(k);
    let mut value = run.h_lead[k as usize].clone();
    let mut m = k + lag;
    while m <= stop {
        let lead = &run.h_lead[m as usize];
        let lagged = &run.h_lag[m as usize];
        for (v, (a, b)) in value.iter_mut().zip(lead.iter().zip(lagged)) {
            *v += a - b;
        }
        m += lag;
    }
    value
}

/// Unbiased estimate of the smoothing expectation of `h` using offset `k`
/// and the given chain lag.
///
/// `h` maps a trajectory to a vector; components are estimated jointly from
/// the same run. Requires `lag >= 1`; fails with
/// [`Error::MeetingCapExceeded`] if the chains have not met after `cap`
/// coupled iterations.
#[allow(clippy::too_many_arguments)]
pub fn unbiased_estimate<M, H>(
    model: &M,
    h: &H,
    n: usize,
    k: u64,
    lag: u64,
    options: &CoupledOptions,
    seed: u64,
    cap: u64,
) -> Result<UnbiasedEstimate>
where
    M: FeynmanKacModel,
    H: Fn(&Path<M::State>) -> Vec<f64>,
{
    if lag == 0 {
        return Err(Error::InvalidParameter("lag must be at least 1".into()));
    }
    if cap < k.max(1) {
        return Err(Error::InvalidParameter(format!(
            "iteration cap {cap} must be at least max(k, 1) = {}",
            k.max(1)
        )));
    }
    let run = run_coupled_pair(model, h, n, lag, k, options, seed, cap)?;
    Ok(UnbiasedEstimate {
        value: telescoped(&run, k, lag),
        k,
        ell: k,
        lag,
        meeting: run.record,
    })
}

/// Average of the single-offset estimators for every offset in `k ..= ell`,
/// all computed from one pair of trajectories.
#[allow(clippy::too_many_arguments)]
pub fn averaged_estimate<M, H>(
    model: &M,
    h: &H,
    n: usize,
    k: u64,
    ell: u64,
    lag: u64,
    options: &CoupledOptions,
    seed: u64,
    cap: u64,
) -> Result<UnbiasedEstimate>
where
    M: FeynmanKacModel,
    H: Fn(&Path<M::State>) -> Vec<f64>,
{
    if lag == 0 {
        return Err(Error::InvalidParameter("lag must be at least 1".into()));
    }
    if ell < k {
        return Err(Error::InvalidParameter(format!(
            "offset window is empty: k = {k} > ell = {ell}"
        )));
    }
    if cap < ell.max(1) {
        return Err(Error::InvalidParameter(format!(
            "iteration cap {cap} must be at least max(ell, 1) = {}",
            ell.max(1)
        )));
    }
    let run = run_coupled_pair(model, h, n, lag, ell, options, seed, cap)?;
    let dim = run.h_lead[0].len();
    let mut value = vec![0.0; dim];
    for j in k..=ell {
        let z = telescoped(&run, j, lag);
        for (acc, v) in value.iter_mut().zip(z) {
            *acc += v;
        }
    }
    let count = (ell - k + 1) as f64;
    for v in &mut value {
        *v /= count;
    }
    Ok(UnbiasedEstimate {
        value,
        k,
        ell,
        lag,
        meeting: run.record,
    })
}

/// Choose the chain lag from pilot meetings: run `pilot_runs` lag-1 coupled
/// pairs, take the nearest-rank `quantile` of their meeting times as the lag,
/// reuse it as the first offset `k`, and set `ell = 5 k`.
pub fn tune_lag<M>(
    model: &M,
    n: usize,
    options: &CoupledOptions,
    seed: u64,
    pilot_runs: usize,
    quantile: f64,
    cap: u64,
) -> Result<LagTuning>
where
    M: FeynmanKacModel,
{
    if pilot_runs == 0 {
        return Err(Error::InvalidParameter(
            "lag tuning needs at least one pilot run".into(),
        ));
    }
    if !(quantile > 0.0 && quantile < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "quantile must lie strictly between 0 and 1, got {quantile}"
        )));
    }
    let h = |_: &Path<M::State>| Vec::new();
    let mut taus = Vec::with_capacity(pilot_runs);
    for r in 0..pilot_runs {
        let run = run_coupled_pair(
            model,
            &h,
            n,
            1,
            0,
            options,
            seed::split(seed, r as u64),
            cap,
        )?;
        taus.push(run.record.tau);
    }
    taus.sort_unstable();
    // Nearest-rank quantile: the ceil(q * n)-th order statistic.
    let rank = ((quantile * taus.len() as f64).ceil() as usize).clamp(1, taus.len());
    let lag = taus[rank - 1].max(1);
    Ok(LagTuning {
        lag,
        k: lag,
        ell: 5 * lag,
        pilot_taus: taus,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupled::CouplingStrategy;
    use crate::fk::uniform_model;

    fn opts(strategy: CouplingStrategy) -> CoupledOptions {
        CoupledOptions::new(strategy)
    }

    #[test]
    fn constant_h_gives_the_constant_exactly() {
        let m = uniform_model(6).unwrap();
        let h = |_: &Path<f64>| vec![4.25, -1.0];
        for strategy in CouplingStrategy::ALL {
            let est =
                unbiased_estimate(&m, &h, 4, 2, 1, &opts(strategy), 99, 10_000).unwrap();
            assert_eq!(est.value, vec![4.25, -1.0]);
        }
    }

    #[test]
    fn meeting_before_k_leaves_no_correction_terms() {
        // On the uniform model chains meet fast; pick k large enough that
        // the meeting almost surely precedes it. The estimate must then be
        // exactly h of the leading chain at iteration k.
        let m = uniform_model(3).unwrap();
        let h = |p: &Path<f64>| vec![p[1]];
        let est = unbiased_estimate(
            &m,
            &h,
            8,
            40,
            1,
            &opts(CouplingStrategy::Imc),
            7,
            10_000,
        )
        .unwrap();
        assert!(est.meeting.tau < 40, "tau = {}", est.meeting.tau);
        assert_eq!(est.meeting.iterations_run, 40);
        assert!(est.value[0].is_finite());
    }

    #[test]
    fn tau_bookkeeping_is_consistent() {
        let m = uniform_model(10).unwrap();
        for seed in 0..20 {
            let est = unbiased_estimate(
                &m,
                &|_: &Path<f64>| Vec::new(),
                4,
                0,
                1,
                &opts(CouplingStrategy::Jmc),
                seed,
                100_000,
            )
            .unwrap();
            let rec = est.meeting;
            assert_eq!(rec.tau_per_time.len(), 10);
            assert_eq!(
                rec.tau_per_time.iter().copied().max().unwrap(),
                rec.tau,
                "max per-time meeting must equal the full meeting"
            );
            assert!(rec.tau_per_time.iter().all(|&t| t >= 1));
            assert_eq!(rec.seed, seed);
        }
    }

    #[test]
    fn cap_failure_reports_partial_progress() {
        let m = uniform_model(400).unwrap();
        // One particle and a huge horizon cannot meet in two iterations.
        let err = unbiased_estimate(
            &m,
            &|_: &Path<f64>| Vec::new(),
            1,
            0,
            1,
            &opts(CouplingStrategy::Iic),
            3,
            2,
        )
        .unwrap_err();
        match err {
            Error::MeetingCapExceeded { cap, record } => {
                assert_eq!(cap, 2);
                assert_eq!(record.iterations_run, 2);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn invalid_arguments_are_rejected() {
        let m = uniform_model(3).unwrap();
        let h = |_: &Path<f64>| Vec::new();
        let o = opts(CouplingStrategy::Imc);
        assert!(unbiased_estimate(&m, &h, 2, 1, 0, &o, 0, 100).is_err());
        assert!(unbiased_estimate(&m, &h, 2, 5, 1, &o, 0, 4).is_err());
        assert!(unbiased_estimate(&m, &h, 2, 0, 1, &o, 0, 0).is_err());
        assert!(averaged_estimate(&m, &h, 2, 3, 2, 1, &o, 0, 100).is_err());
        assert!(averaged_estimate(&m, &h, 2, 3, 6, 1, &o, 0, 5).is_err());
        assert!(tune_lag(&m, 2, &o, 0, 0, 0.9, 100).is_err());
        assert!(tune_lag(&m, 2, &o, 0, 10, 1.0, 100).is_err());
    }

    #[test]
    fn averaged_estimate_with_single_offset_matches_unbiased() {
        let m = uniform_model(4).unwrap();
        let h = |p: &Path<f64>| vec![p[2]];
        let o = opts(CouplingStrategy::Imc);
        let a = unbiased_estimate(&m, &h, 4, 3, 2, &o, 5, 1000).unwrap();
        let b = averaged_estimate(&m, &h, 4, 3, 3, 2, &o, 5, 1000).unwrap();
        assert_eq!(a.value, b.value);
    }

    #[test]
    fn tuning_applies_the_nearest_rank_rule() {
        let m = uniform_model(4).unwrap();
        let tuning = tune_lag(
            &m,
            4,
            &opts(CouplingStrategy::Imc),
            11,
            20,
            0.9,
            10_000,
        )
        .unwrap();
        assert_eq!(tuning.k, tuning.lag);
        assert_eq!(tuning.ell, 5 * tuning.lag);
        assert_eq!(tuning.pilot_taus.len(), 20);
        // ceil(0.9 * 20) = 18th order statistic of the sorted pilots.
        assert_eq!(tuning.lag, tuning.pilot_taus[17].max(1));
        assert!(tuning.default_cap() > tuning.k);
    }

    #[test]
    fn median_of_three_pilot_values() {
        // Nearest-rank median of {2, 3, 7} is the 2nd order statistic, 3.
        let taus = vec![2u64, 3, 7];
        let rank = ((0.5 * 3.0f64).ceil() as usize).clamp(1, 3);
        assert_eq!(taus[rank - 1], 3);
    }
}

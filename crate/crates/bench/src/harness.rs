//! Benchmark execution: building models from specs, running replicated
//! coupled chains with derived seeds, and serialising results.
//!
//! Reproducibility contract: every replicate's generator seed is derived
//! from the root seed, the cell identity and the replicate index, and
//! replicate outputs are collected in index order, so results do not depend
//! on the number of worker threads. Wall-clock columns are written as zero
//! unless timings are explicitly requested, because real timings would break
//! byte-level reproducibility.

use std::io::{self, Write};
use std::time::Instant;

use anyhow::{ensure, Context, Result};
use cbpf::coupled::{coupled_cbpf_transition, CoupledOptions, CoupledOutput, CouplingStrategy};
use cbpf::fk::{
    barriers_model, linear_gaussian_model, sv_model, uniform_model, BarriersModel,
    FeynmanKacModel, LinearGaussianModel, Path, StochasticVolatilityModel, SvParams,
    UniformModel,
};
use cbpf::kernels::{cbpf_transition, cpf_transition, particle_filter};
use cbpf::seed;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{ExperimentConfig, ModelSpec};
use crate::oracle::sv_synthetic;

/// A concrete model built from a [`ModelSpec`] at one horizon. All built-in
/// families have scalar states.
pub enum BuiltModel {
    Barriers(BarriersModel),
    Uniform(UniformModel),
    LinearGaussian(LinearGaussianModel),
    Sv(StochasticVolatilityModel),
}

/// Dispatch a generic expression over the concrete model inside a
/// [`BuiltModel`](crate::harness::BuiltModel) reference.
#[macro_export]
macro_rules! with_model {
    ($built:expr, $m:ident => $body:expr) => {
        match $built {
            $crate::harness::BuiltModel::Barriers($m) => $body,
            $crate::harness::BuiltModel::Uniform($m) => $body,
            $crate::harness::BuiltModel::LinearGaussian($m) => $body,
            $crate::harness::BuiltModel::Sv($m) => $body,
        }
    };
}

/// Instantiate the model behind a spec at the given horizon. Stochastic
/// volatility without a data file gets synthetic observations generated from
/// its own parameters and a seed derived from the root seed and the horizon,
/// so every cell of a sweep is reproducible in isolation.
pub fn build_model(spec: &ModelSpec, t_len: usize, root_seed: u64) -> Result<BuiltModel> {
    Ok(match spec {
        ModelSpec::Barriers { a, w, b } => {
            BuiltModel::Barriers(barriers_model(*a, *w, *b, t_len)?)
        }
        ModelSpec::Uniform => BuiltModel::Uniform(uniform_model(t_len)?),
        ModelSpec::LinearGaussian {
            rho,
            sigma_x,
            sigma_y,
        } => BuiltModel::LinearGaussian(linear_gaussian_model(*rho, *sigma_x, *sigma_y, t_len)?),
        ModelSpec::Sv {
            mu,
            phi,
            rho,
            sigma,
            data,
        } => {
            let params = SvParams {
                mu: *mu,
                phi: *phi,
                rho: *rho,
                sigma: *sigma,
            };
            let obs = match data {
                Some(path) => {
                    let series = read_series(path)?;
                    ensure!(
                        series.len() >= t_len,
                        "data file {} has {} values, horizon needs {}",
                        path.display(),
                        series.len(),
                        t_len
                    );
                    series[..t_len].to_vec()
                }
                None => {
                    let data_seed = seed::split_labelled(root_seed, "sv-data", t_len as u64);
                    sv_synthetic(&params, t_len, data_seed)?.obs
                }
            };
            BuiltModel::Sv(sv_model(params, obs)?)
        }
    })
}

/// Read one float per line, ignoring blanks and `#` comments.
pub fn read_series(path: &std::path::Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read data file {}", path.display()))?;
    let mut values = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: f64 = line
            .parse()
            .with_context(|| format!("{}:{}: not a number: '{line}'", path.display(), i + 1))?;
        values.push(v);
    }
    Ok(values)
}

/// Result of one coupled replicate.
#[derive(Clone, Copy, Debug)]
pub struct MeetingOutcome {
    /// Meeting iteration, or the iteration cap if the chains never met.
    pub tau: u64,
    pub iterations: u64,
    /// False when the run stopped at the cap instead of a meeting.
    pub completed: bool,
    pub wall_nanos: u128,
}

/// Run one coupled pair from two independent particle-filter draws until the
/// chains meet or `cap` iterations have run. `on_iteration` sees every
/// coupled transition output in order, before the trajectories move on.
pub fn coupled_meeting_run<M: FeynmanKacModel>(
    model: &M,
    n: usize,
    options: &CoupledOptions,
    seed: u64,
    cap: u64,
    mut on_iteration: impl FnMut(u64, &CoupledOutput<M::State>),
) -> Result<MeetingOutcome> {
    ensure!(cap >= 1, "iteration cap must be positive");
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut path_a = particle_filter(model, n, &mut rng)?;
    let mut path_b = particle_filter(model, n, &mut rng)?;
    for iter in 1..=cap {
        let out = coupled_cbpf_transition(model, &path_a, &path_b, n, options, &mut rng)?;
        on_iteration(iter, &out);
        let met = out.fully_met;
        path_a = out.path_a;
        path_b = out.path_b;
        if met {
            return Ok(MeetingOutcome {
                tau: iter,
                iterations: iter,
                completed: true,
                wall_nanos: start.elapsed().as_nanos(),
            });
        }
    }
    Ok(MeetingOutcome {
        tau: cap,
        iterations: cap,
        completed: false,
        wall_nanos: start.elapsed().as_nanos(),
    })
}

/// One row of `meeting.csv`.
#[derive(Clone, Debug)]
pub struct MeetingRow {
    pub seed: u64,
    pub strategy: CouplingStrategy,
    pub n: usize,
    pub t_len: usize,
    pub tau: u64,
    pub wall_nanos: u128,
    pub completed: bool,
}

/// One row of `cost.csv`: a per-cell summary.
#[derive(Clone, Debug)]
pub struct CostRow {
    pub seed: u64,
    pub strategy: CouplingStrategy,
    pub n: usize,
    pub t_len: usize,
    pub mean_tau: f64,
    /// Mean meeting iterations scaled by the strategy's per-iteration cost,
    /// `N` for index couplings and `N^2` for mixture couplings.
    pub cost_factor: f64,
    pub completed: bool,
}

#[derive(Debug)]
pub struct BenchmarkResult {
    pub meeting: Vec<MeetingRow>,
    pub cost: Vec<CostRow>,
    /// True when any cell ran out of time budget before all replicates ran.
    pub budget_exhausted: bool,
}

/// Run the full (strategy, N, T) sweep of a config. Replicates run in
/// parallel on the current rayon pool; outputs are ordered by cell and
/// replicate index. The per-cell time budget is checked before each
/// replicate starts and never interrupts one mid-run, so every recorded tau
/// is genuine.
pub fn run_meeting_benchmark(config: &ExperimentConfig) -> Result<BenchmarkResult> {
    config.validate()?;
    let mut meeting = Vec::new();
    let mut cost = Vec::new();
    let mut budget_exhausted = false;

    for &strategy in &config.strategies {
        for &n in &config.particle_counts {
            for &t_len in &config.horizons {
                let cell = format!("{strategy}-N{n}-T{t_len}");
                let built = build_model(&config.model, t_len, config.seed)?;
                let options = CoupledOptions::new(strategy);
                let cell_start = Instant::now();

                let rows = (0..config.replicates)
                    .into_par_iter()
                    .map(|r| -> Result<Option<MeetingRow>> {
                        if config
                            .time_budget
                            .is_some_and(|budget| cell_start.elapsed() >= budget)
                        {
                            return Ok(None);
                        }
                        let replicate_seed = seed::split_labelled(config.seed, &cell, r as u64);
                        let outcome = with_model!(&built, m => coupled_meeting_run(
                            m,
                            n,
                            &options,
                            replicate_seed,
                            config.iteration_cap,
                            |_, _| {},
                        ))?;
                        Ok(Some(MeetingRow {
                            seed: replicate_seed,
                            strategy,
                            n,
                            t_len,
                            tau: outcome.tau,
                            wall_nanos: if config.timings { outcome.wall_nanos } else { 0 },
                            completed: outcome.completed,
                        }))
                    })
                    .collect::<Result<Vec<_>>>()?;

                let started = rows.iter().flatten().count();
                if started < config.replicates {
                    budget_exhausted = true;
                }
                let met: Vec<u64> = rows
                    .iter()
                    .flatten()
                    .filter(|row| row.completed)
                    .map(|row| row.tau)
                    .collect();
                let mean_tau = if met.is_empty() {
                    f64::NAN
                } else {
                    met.iter().sum::<u64>() as f64 / met.len() as f64
                };
                cost.push(CostRow {
                    seed: config.seed,
                    strategy,
                    n,
                    t_len,
                    mean_tau,
                    cost_factor: mean_tau * (n as f64).powi(strategy.cost_exponent() as i32),
                    completed: started == config.replicates && met.len() == started,
                });
                meeting.extend(rows.into_iter().flatten());
            }
        }
    }
    Ok(BenchmarkResult {
        meeting,
        cost,
        budget_exhausted,
    })
}

/// Iterate one coupled pair and record, per iteration, which time indices
/// still differ. Row `i` (zero-based, for iteration `i + 1`) holds `true`
/// where the two chains' states disagree; after the chains meet the
/// remaining rows are all false, which the meeting's permanence guarantees
/// without running them.
pub fn coupling_matrix<M: FeynmanKacModel>(
    model: &M,
    n: usize,
    options: &CoupledOptions,
    iterations: u64,
    seed: u64,
) -> Result<(Vec<Vec<bool>>, MeetingOutcome)> {
    let t_len = model.horizon();
    let mut matrix: Vec<Vec<bool>> = Vec::with_capacity(iterations as usize);
    let outcome = coupled_meeting_run(model, n, options, seed, iterations, |_, out| {
        let mut row = vec![false; t_len];
        for &t in &out.holes {
            row[t] = true;
        }
        matrix.push(row);
    })?;
    while (matrix.len() as u64) < iterations {
        matrix.push(vec![false; t_len]);
    }
    Ok((matrix, outcome))
}

/// How often a single-chain kernel run changes the reference at each time
/// index, after a burn-in.
pub fn reference_change_rate<M: FeynmanKacModel>(
    model: &M,
    n: usize,
    iterations: u64,
    burn_in: u64,
    seed: u64,
) -> Result<Vec<f64>> {
    ensure!(iterations > burn_in, "iterations must exceed the burn-in");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reference = particle_filter(model, n, &mut rng)?;
    let mut changes = vec![0u64; model.horizon()];
    for iter in 1..=iterations {
        let out = cbpf_transition(model, &reference, n, &mut rng)?;
        if iter > burn_in {
            for (count, (new, old)) in changes.iter_mut().zip(out.path.iter().zip(reference.iter()))
            {
                *count += u64::from(new != old);
            }
        }
        reference = out.path;
    }
    let denom = (iterations - burn_in) as f64;
    Ok(changes.into_iter().map(|c| c as f64 / denom).collect())
}

/// Which single-chain kernel a smoothing run uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelKind {
    Cbpf,
    Cpf,
}

impl std::str::FromStr for KernelKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cbpf" => Ok(KernelKind::Cbpf),
            "cpf" => Ok(KernelKind::Cpf),
            other => Err(format!("unknown kernel '{other}' (try cbpf or cpf)")),
        }
    }
}

/// Per-time summaries of a single-chain smoothing run.
#[derive(Clone, Debug)]
pub struct SmoothSummary {
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    pub change_rates: Vec<f64>,
}

/// Run a single-chain kernel for `iterations` sweeps from a particle-filter
/// draw and summarise the post-burn-in outputs per time index.
/// `on_path` sees every post-burn-in output.
pub fn run_smoothing_chain<M: FeynmanKacModel<State = f64>>(
    model: &M,
    n: usize,
    kernel: KernelKind,
    iterations: u64,
    burn_in: u64,
    seed: u64,
    mut on_path: impl FnMut(u64, &Path<f64>),
) -> Result<SmoothSummary> {
    ensure!(iterations > burn_in, "iterations must exceed the burn-in");
    let t_len = model.horizon();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reference = particle_filter(model, n, &mut rng)?;
    let mut sums = vec![0.0; t_len];
    let mut squares = vec![0.0; t_len];
    let mut changes = vec![0u64; t_len];
    for iter in 1..=iterations {
        let out = match kernel {
            KernelKind::Cbpf => cbpf_transition(model, &reference, n, &mut rng)?,
            KernelKind::Cpf => cpf_transition(model, &reference, n, &mut rng)?,
        };
        if iter > burn_in {
            on_path(iter, &out.path);
            for t in 0..t_len {
                sums[t] += out.path[t];
                squares[t] += out.path[t] * out.path[t];
                changes[t] += u64::from(out.path[t] != reference[t]);
            }
        }
        reference = out.path;
    }
    let kept = (iterations - burn_in) as f64;
    let means: Vec<f64> = sums.iter().map(|s| s / kept).collect();
    let variances = squares
        .iter()
        .zip(&means)
        .map(|(sq, m)| (sq / kept - m * m).max(0.0))
        .collect();
    let change_rates = changes.into_iter().map(|c| c as f64 / kept).collect();
    Ok(SmoothSummary {
        means,
        variances,
        change_rates,
    })
}

/// Schema version stamped on every CSV row.
pub const SCHEMA_VERSION: &str = "1";

pub fn write_meeting_csv(w: &mut dyn Write, rows: &[MeetingRow]) -> io::Result<()> {
    writeln!(w, "schema,seed,strategy,N,T,tau,wall_nanos,completed")?;
    for row in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            SCHEMA_VERSION,
            row.seed,
            row.strategy,
            row.n,
            row.t_len,
            row.tau,
            row.wall_nanos,
            row.completed
        )?;
    }
    Ok(())
}

pub fn write_cost_csv(w: &mut dyn Write, rows: &[CostRow]) -> io::Result<()> {
    writeln!(w, "schema,seed,strategy,N,T,mean_tau,cost_factor,completed")?;
    for row in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            SCHEMA_VERSION,
            row.seed,
            row.strategy,
            row.n,
            row.t_len,
            row.mean_tau,
            row.cost_factor,
            row.completed
        )?;
    }
    Ok(())
}

/// CSV form of a coupling matrix: one row per iteration, `1` marks a time
/// index where the chains differ.
pub fn write_matrix_csv(w: &mut dyn Write, matrix: &[Vec<bool>]) -> io::Result<()> {
    for row in matrix {
        let mut first = true;
        for &differ in row {
            if !first {
                write!(w, ",")?;
            }
            write!(w, "{}", u8::from(differ))?;
            first = false;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Binary PGM (P5) image of a coupling matrix: differing entries are black,
/// coupled entries white; one pixel row per iteration.
pub fn write_pgm(w: &mut dyn Write, matrix: &[Vec<bool>]) -> io::Result<()> {
    let height = matrix.len();
    let width = matrix.first().map_or(0, Vec::len);
    if height == 0 || width == 0 {
        return Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            "refusing to write an empty image",
        ));
    }
    write!(w, "P5\n{width} {height}\n255\n")?;
    let mut scanline = Vec::with_capacity(width);
    for row in matrix {
        scanline.clear();
        scanline.extend(row.iter().map(|&differ| if differ { 0u8 } else { 255 }));
        w.write_all(&scanline)?;
    }
    Ok(())
}

//! Flat key-value experiment configuration.
//!
//! The format is one `key = value` pair per line, `#` comments and blank
//! lines allowed. Lists are comma-separated. Recognised keys:
//!
//! ```text
//! model.family      barriers | uniform | lg | sv
//! model.params      family parameters (barriers: a,w,b; lg: rho,sigma_x,sigma_y;
//!                   sv: mu,phi,rho,sigma; uniform: none)
//! model.T           horizon list
//! model.data        path to an observation file for sv (one value per line);
//!                   omitted: observations are synthesised from the seed
//! sweep.N           particle count list
//! sweep.strategies  coupling strategy list (default: jmc,imc,iic,jic)
//! replicates        replicates per cell (default 100)
//! seed              root seed (default 0)
//! iteration_cap     per-replicate coupled-iteration cap (default 100000)
//! time_budget_secs  per-cell wall-clock budget (default: none)
//! out_dir           output directory (default: current directory / stdout)
//! timings           true | false: record real wall-clock nanoseconds in rows
//!                   (default false; timings break byte-level reproducibility)
//! ```

use std::path::PathBuf;
use std::time::Duration;

use anyhow::{bail, ensure, Context, Result};
use cbpf::coupled::CouplingStrategy;

/// Which model family a run works on, with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum ModelSpec {
    Barriers { a: f64, w: f64, b: f64 },
    Uniform,
    LinearGaussian { rho: f64, sigma_x: f64, sigma_y: f64 },
    Sv { mu: f64, phi: f64, rho: f64, sigma: f64, data: Option<PathBuf> },
}

impl ModelSpec {
    pub fn family_name(&self) -> &'static str {
        match self {
            ModelSpec::Barriers { .. } => "barriers",
            ModelSpec::Uniform => "uniform",
            ModelSpec::LinearGaussian { .. } => "lg",
            ModelSpec::Sv { .. } => "sv",
        }
    }

    /// Build a spec from a family name and its parameter list.
    pub fn from_parts(family: &str, params: &[f64], data: Option<PathBuf>) -> Result<ModelSpec> {
        let expect = |n: usize| -> Result<()> {
            ensure!(
                params.len() == n,
                "family '{family}' takes {n} parameters, got {}",
                params.len()
            );
            Ok(())
        };
        if family != "sv" && data.is_some() {
            bail!("model.data is only meaningful for the sv family");
        }
        Ok(match family {
            "barriers" => {
                expect(3)?;
                ModelSpec::Barriers {
                    a: params[0],
                    w: params[1],
                    b: params[2],
                }
            }
            "uniform" => {
                expect(0)?;
                ModelSpec::Uniform
            }
            "lg" => {
                expect(3)?;
                ModelSpec::LinearGaussian {
                    rho: params[0],
                    sigma_x: params[1],
                    sigma_y: params[2],
                }
            }
            "sv" => {
                expect(4)?;
                ModelSpec::Sv {
                    mu: params[0],
                    phi: params[1],
                    rho: params[2],
                    sigma: params[3],
                    data,
                }
            }
            other => bail!("unknown model family '{other}' (try barriers, uniform, lg, sv)"),
        })
    }
}

/// Everything a benchmark sweep needs; one cell per
/// (strategy, N, T) combination.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub horizons: Vec<usize>,
    pub particle_counts: Vec<usize>,
    pub strategies: Vec<CouplingStrategy>,
    pub replicates: usize,
    pub seed: u64,
    pub iteration_cap: u64,
    pub time_budget: Option<Duration>,
    pub out_dir: Option<PathBuf>,
    pub timings: bool,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(!self.horizons.is_empty(), "model.T must list at least one horizon");
        ensure!(
            self.horizons.iter().all(|&t| t >= 1),
            "horizons must be positive"
        );
        ensure!(
            !self.particle_counts.is_empty(),
            "sweep.N must list at least one particle count"
        );
        ensure!(
            self.particle_counts.iter().all(|&n| n >= 1),
            "particle counts must be positive"
        );
        ensure!(!self.strategies.is_empty(), "sweep.strategies must not be empty");
        ensure!(self.replicates >= 1, "replicates must be positive");
        ensure!(self.iteration_cap >= 1, "iteration_cap must be positive");
        Ok(())
    }
}

/// Parse a configuration file's text. Errors cite the offending line.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut family: Option<(String, usize)> = None;
    let mut params: Vec<f64> = Vec::new();
    let mut data: Option<PathBuf> = None;
    let mut horizons: Vec<usize> = Vec::new();
    let mut particle_counts: Vec<usize> = Vec::new();
    let mut strategies: Vec<CouplingStrategy> = Vec::new();
    let mut replicates = 100usize;
    let mut seed = 0u64;
    let mut iteration_cap = 100_000u64;
    let mut time_budget: Option<Duration> = None;
    let mut out_dir: Option<PathBuf> = None;
    let mut timings = false;

    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .with_context(|| format!("line {lineno}: expected 'key = value', got '{line}'"))?;
        let key = key.trim();
        let value = value.trim();
        let fail = |what: &str| format!("line {lineno}: {what} in '{line}'");

        match key {
            "model.family" => family = Some((value.to_string(), lineno)),
            "model.params" => {
                params = parse_list(value, |v| {
                    v.parse::<f64>().map_err(anyhow::Error::from)
                })
                .with_context(|| fail("bad parameter list"))?;
            }
            "model.data" => data = Some(PathBuf::from(value)),
            "model.T" => {
                horizons = parse_list(value, |v| {
                    v.parse::<usize>().map_err(anyhow::Error::from)
                })
                .with_context(|| fail("bad horizon list"))?;
            }
            "sweep.N" => {
                particle_counts = parse_list(value, |v| {
                    v.parse::<usize>().map_err(anyhow::Error::from)
                })
                .with_context(|| fail("bad particle count list"))?;
            }
            "sweep.strategies" => {
                strategies = parse_list(value, |v| {
                    v.parse::<CouplingStrategy>()
                        .map_err(|e| anyhow::anyhow!(e))
                })
                .with_context(|| fail("bad strategy list"))?;
            }
            "replicates" => {
                replicates = value.parse().with_context(|| fail("bad replicate count"))?;
            }
            "seed" => seed = value.parse().with_context(|| fail("bad seed"))?,
            "iteration_cap" => {
                iteration_cap = value.parse().with_context(|| fail("bad iteration cap"))?;
            }
            "time_budget_secs" => {
                let secs: u64 = value.parse().with_context(|| fail("bad time budget"))?;
                time_budget = Some(Duration::from_secs(secs));
            }
            "out_dir" => out_dir = Some(PathBuf::from(value)),
            "timings" => {
                timings = value
                    .parse()
                    .with_context(|| fail("bad boolean (use true or false)"))?;
            }
            other => bail!("line {lineno}: unknown key '{other}'"),
        }
    }

    let (family, family_line) = family.context("missing required key 'model.family'")?;
    let model = ModelSpec::from_parts(&family, &params, data)
        .with_context(|| format!("line {family_line}: invalid model"))?;
    if strategies.is_empty() {
        strategies = CouplingStrategy::ALL.to_vec();
    }

    let config = ExperimentConfig {
        model,
        horizons,
        particle_counts,
        strategies,
        replicates,
        seed,
        iteration_cap,
        time_budget,
        out_dir,
        timings,
    };
    config.validate()?;
    Ok(config)
}

/// Read and parse a configuration file.
pub fn load_config(path: &std::path::Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config file {}", path.display()))?;
    parse_config(&text).with_context(|| format!("in config file {}", path.display()))
}

fn parse_list<T>(value: &str, parse: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(v.trim())).collect()
}

/// Parse a comma-separated float list from the command line.
pub fn parse_float_list(value: &str) -> Result<Vec<f64>> {
    parse_list(value, |v| {
        v.parse::<f64>()
            .with_context(|| format!("'{v}' is not a number"))
    })
}

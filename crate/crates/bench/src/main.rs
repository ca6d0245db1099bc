//! Command-line front end: smoothing chains, coupled-run diagnostics,
//! meeting-time sweeps, unbiased estimates, score-based MLE and exact
//! oracles, all writing reproducible CSV/JSON/PGM outputs.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 runtime error,
//! 3 a time budget expired and the output is partial.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::time::Duration;

use anyhow::anyhow;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use cbpf::coupled::{CoupledOptions, CouplingStrategy};
use cbpf::fk::{Path as FkPath, SvParams};
use cbpf::score::{
    mle_fit, AdamState, GradientSchedule, LinearGaussianFamily, MleOptions, ModelFamily,
    SvFamily, TransformedParams,
};
use cbpf::seed;
use cbpf::unbiased::{averaged_estimate, tune_lag};
use cbpf_bench::config::{load_config, parse_float_list, ModelSpec};
use cbpf_bench::harness::{
    build_model, coupling_matrix, read_series, run_meeting_benchmark, run_smoothing_chain,
    write_cost_csv, write_matrix_csv, write_meeting_csv, write_pgm, KernelKind, SCHEMA_VERSION,
};
use cbpf_bench::oracle::{
    forward_backward, kalman_smoother, kalman_smoother_zero_obs, lg_synthetic, random_hmm,
    sv_synthetic,
};
use cbpf_bench::with_model;

#[derive(Parser)]
#[command(
    name = "cbpf-bench",
    version,
    about = "Conditional particle smoothing benchmarks: kernel chains, couplings, \
             meeting-time sweeps, unbiased estimates and maximum likelihood"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// Experiment config file (flat key=value text)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; every replicate seed is derived from it
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for replicated sweeps (0 = one per core)
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Output directory; without it results go to standard output
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Per-cell wall-clock budget in seconds
    #[arg(long = "time-budget", global = true, value_name = "SECONDS")]
    time_budget: Option<f64>,
    /// Record real wall-clock columns (breaks byte-level reproducibility)
    #[arg(long, global = true)]
    timings: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Iterate a single-chain smoothing kernel, summarise per-time marginals
    Smooth(SmoothArgs),
    /// One coupled run: meeting diagnostics and the iteration-by-time matrix
    Couple(CoupleArgs),
    /// Replicated meeting-time sweep over (strategy, N, T) from a config
    Bench,
    /// Unbiased smoothing estimate with a pilot-tuned lag
    Unbiased(UnbiasedArgs),
    /// Stochastic-gradient maximum likelihood fit, emits an iterate trace
    Mle(MleArgs),
    /// Print exact reference values (Kalman smoother, discrete marginals)
    Oracle(OracleArgs),
}

/// Model selection shared by the sampling subcommands. A config file can
/// supply everything; explicit flags win over the config.
#[derive(Args)]
struct ModelArgs {
    /// Model family: barriers, uniform, lg or sv
    #[arg(long)]
    model: Option<String>,
    /// Comma-separated family parameters (family default if omitted)
    #[arg(long, allow_hyphen_values = true)]
    params: Option<String>,
    /// Observation file for sv, one value per line
    #[arg(long)]
    data: Option<PathBuf>,
    /// Time horizon
    #[arg(long = "T", value_name = "T")]
    t_len: Option<usize>,
    /// Particle count
    #[arg(long = "N", value_name = "N")]
    n: Option<usize>,
}

#[derive(Args)]
struct SmoothArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Kernel: cbpf (backward sampling) or cpf (ancestor tracing)
    #[arg(long, default_value = "cbpf")]
    kernel: String,
    #[arg(long, default_value_t = 1_000)]
    iterations: u64,
    #[arg(long = "burn-in", default_value_t = 100)]
    burn_in: u64,
    /// Also write every post-burn-in trajectory to paths.csv (needs --out)
    #[arg(long = "emit-paths")]
    emit_paths: bool,
}

#[derive(Args)]
struct CoupleArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Forward coupling: jmc, imc, iic or jic
    #[arg(long, default_value = "jmc")]
    strategy: String,
    /// Iteration cap for the coupled run
    #[arg(long, default_value_t = 200)]
    iterations: u64,
}

#[derive(Args)]
struct UnbiasedArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Forward coupling: jmc, imc, iic or jic
    #[arg(long, default_value = "jmc")]
    strategy: String,
    /// Functional: mid-state, first-state, last-state, path-mean or states
    #[arg(long, default_value = "mid-state")]
    h: String,
    /// Pilot runs for lag tuning
    #[arg(long = "pilot-runs", default_value_t = 100)]
    pilot_runs: usize,
    /// Pilot meeting-time quantile that sets the lag
    #[arg(long, default_value_t = 0.9)]
    quantile: f64,
    /// Override the tuned lag
    #[arg(long)]
    lag: Option<u64>,
    /// Override the tuned first offset
    #[arg(long)]
    k: Option<u64>,
    /// Override the tuned last offset
    #[arg(long)]
    ell: Option<u64>,
    /// Override the iteration cap of the estimator run
    #[arg(long)]
    cap: Option<u64>,
}

#[derive(Args)]
struct MleArgs {
    /// Family to fit: lg or sv
    #[arg(long)]
    family: String,
    /// Observation file, one value per line
    #[arg(long)]
    data: Option<PathBuf>,
    /// Generate observations from these true parameters instead of --data
    #[arg(long, allow_hyphen_values = true, value_name = "PARAMS")]
    synthetic: Option<String>,
    /// Horizon for --synthetic
    #[arg(long = "T", value_name = "T")]
    t_len: Option<usize>,
    /// Particle count
    #[arg(long = "N", value_name = "N")]
    n: Option<usize>,
    /// Gradient schedule: markovian or unbiased
    #[arg(long, default_value = "markovian")]
    schedule: String,
    #[arg(long, default_value_t = 1_000)]
    iterations: u64,
    /// Adam step size
    #[arg(long, default_value_t = 0.01)]
    alpha: f64,
    /// Comma-separated initial parameters (data-driven default if omitted)
    #[arg(long, allow_hyphen_values = true)]
    init: Option<String>,
    /// Forward coupling for the unbiased schedule
    #[arg(long, default_value = "imc")]
    strategy: String,
    /// Pilot runs per tuning pass of the unbiased schedule
    #[arg(long = "pilot-runs", default_value_t = 100)]
    pilot_runs: usize,
    /// Pilot quantile of the unbiased schedule
    #[arg(long, default_value_t = 0.9)]
    quantile: f64,
    /// Re-tune the unbiased schedule every this many iterations
    #[arg(long = "retune-every")]
    retune_every: Option<u64>,
    /// Divide the sv initial variance by 1 - phi^2 instead of 1 - rho^2
    #[arg(long = "stationary-from-phi")]
    stationary_from_phi: bool,
}

#[derive(Args)]
struct OracleArgs {
    /// Reference model: lg or discrete
    #[arg(long)]
    model: String,
    /// lg parameters rho,sigma_x,sigma_y (default 0.9,1,1)
    #[arg(long, allow_hyphen_values = true)]
    params: Option<String>,
    /// Horizon (ignored for lg when --data is given)
    #[arg(long = "T", value_name = "T")]
    t_len: Option<usize>,
    /// Observations for lg; default is the zero series
    #[arg(long)]
    data: Option<PathBuf>,
    /// State count of the random discrete instance
    #[arg(long, default_value_t = 3)]
    states: usize,
    /// Seed of the random discrete instance
    #[arg(long = "hmm-seed", default_value_t = 0)]
    hmm_seed: u64,
}

/// An error plus which exit code it deserves.
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Usage(e) | Failure::Runtime(e) => e,
        }
    }
}

fn usage<T, E: Into<anyhow::Error>>(r: Result<T, E>) -> Result<T, Failure> {
    r.map_err(|e| Failure::Usage(e.into()))
}

fn runtime<T, E: Into<anyhow::Error>>(r: Result<T, E>) -> Result<T, Failure> {
    r.map_err(|e| Failure::Runtime(e.into()))
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests land here too; they are not errors.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let code = match run(cli) {
        Ok(code) => code,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error());
            failure.exit_code()
        }
    };
    std::process::exit(code);
}

fn run(cli: Cli) -> Result<i32, Failure> {
    let pool = runtime(
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.global.threads)
            .build(),
    )?;
    let global = cli.global;
    pool.install(|| match cli.command {
        Command::Smooth(args) => cmd_smooth(&global, args),
        Command::Couple(args) => cmd_couple(&global, args),
        Command::Bench => cmd_bench(&global),
        Command::Unbiased(args) => cmd_unbiased(&global, args),
        Command::Mle(args) => cmd_mle(&global, args),
        Command::Oracle(args) => cmd_oracle(&global, args),
    })
}

/// Model, sizes and seed for one sampling run, after merging flags with the
/// optional config file.
struct Resolved {
    spec: ModelSpec,
    t_len: usize,
    n: usize,
    seed: u64,
    out_dir: Option<PathBuf>,
    timings: bool,
}

fn default_params(family: &str) -> &'static [f64] {
    match family {
        "barriers" => &[0.5, 0.2, 0.5],
        "lg" => &[0.9, 1.0, 1.0],
        "sv" => &[-9.2, 0.97, -0.67, 0.2],
        _ => &[],
    }
}

fn resolve(global: &GlobalArgs, margs: &ModelArgs) -> Result<Resolved, Failure> {
    let config = match &global.config {
        Some(path) => Some(usage(load_config(path))?),
        None => None,
    };
    let spec = if let Some(family) = &margs.model {
        let params = match &margs.params {
            Some(text) => usage(parse_float_list(text))?,
            None => default_params(family).to_vec(),
        };
        usage(ModelSpec::from_parts(family, &params, margs.data.clone()))?
    } else if let Some(cfg) = &config {
        if margs.data.is_some() {
            return Err(Failure::Usage(anyhow!(
                "--data only applies together with --model sv"
            )));
        }
        cfg.model.clone()
    } else {
        return Err(Failure::Usage(anyhow!(
            "no model: pass --model or --config"
        )));
    };
    let cfg = config.as_ref();
    Ok(Resolved {
        spec,
        t_len: margs
            .t_len
            .or_else(|| cfg.and_then(|c| c.horizons.first().copied()))
            .unwrap_or(32),
        n: margs
            .n
            .or_else(|| cfg.and_then(|c| c.particle_counts.first().copied()))
            .unwrap_or(16),
        seed: global.seed.unwrap_or_else(|| cfg.map_or(0, |c| c.seed)),
        out_dir: global
            .out
            .clone()
            .or_else(|| cfg.and_then(|c| c.out_dir.clone())),
        timings: global.timings || cfg.is_some_and(|c| c.timings),
    })
}

fn parse_strategy(name: &str) -> Result<CouplingStrategy, Failure> {
    usage(name.parse::<CouplingStrategy>().map_err(anyhow::Error::msg))
}

/// A closed pipe (the reader stopped, e.g. `| head`) is a normal way to
/// consume partial output, not a failure.
fn ignore_broken_pipe(r: io::Result<()>) -> io::Result<()> {
    match r {
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
        other => other,
    }
}

fn print_stdout(text: &str) -> Result<(), Failure> {
    let stdout = io::stdout();
    let mut lock = stdout.lock();
    runtime(ignore_broken_pipe(writeln!(lock, "{text}")))
}

/// Write a named output into the output directory, or to standard output
/// when no directory was given.
fn emit(
    out_dir: &Option<PathBuf>,
    name: &str,
    f: impl FnOnce(&mut dyn Write) -> io::Result<()>,
) -> Result<(), Failure> {
    match out_dir {
        Some(dir) => {
            runtime(fs::create_dir_all(dir))?;
            let mut file = BufWriter::new(runtime(File::create(dir.join(name)))?);
            runtime(f(&mut file))?;
            runtime(file.flush())
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            runtime(ignore_broken_pipe(f(&mut lock)))
        }
    }
}

fn cmd_smooth(global: &GlobalArgs, args: SmoothArgs) -> Result<i32, Failure> {
    let r = resolve(global, &args.model)?;
    let kernel: KernelKind = usage(args.kernel.parse().map_err(anyhow::Error::msg))?;
    if args.emit_paths && r.out_dir.is_none() {
        return Err(Failure::Usage(anyhow!("--emit-paths needs --out")));
    }
    let built = runtime(build_model(&r.spec, r.t_len, r.seed))?;

    let mut paths_file = match (&r.out_dir, args.emit_paths) {
        (Some(dir), true) => {
            runtime(fs::create_dir_all(dir))?;
            let mut w = BufWriter::new(runtime(File::create(dir.join("paths.csv")))?);
            runtime(writeln!(w, "schema,seed,iteration,t,state"))?;
            Some(w)
        }
        _ => None,
    };
    let mut path_io: io::Result<()> = Ok(());
    let seed = r.seed;
    let summary = runtime(with_model!(&built, m => run_smoothing_chain(
        m,
        r.n,
        kernel,
        args.iterations,
        args.burn_in,
        seed,
        |iteration, path| {
            if let (Some(w), Ok(())) = (&mut paths_file, &path_io) {
                for (t, x) in path.iter().enumerate() {
                    if let Err(e) =
                        writeln!(w, "{SCHEMA_VERSION},{seed},{iteration},{t},{x}")
                    {
                        path_io = Err(e);
                        break;
                    }
                }
            }
        },
    )))?;
    runtime(path_io)?;
    if let Some(w) = paths_file.as_mut() {
        runtime(w.flush())?;
    }

    emit(&r.out_dir, "marginals.csv", |w| {
        writeln!(w, "schema,seed,t,mean,variance,change_rate")?;
        for t in 0..r.t_len {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                SCHEMA_VERSION, seed, t, summary.means[t], summary.variances[t],
                summary.change_rates[t]
            )?;
        }
        Ok(())
    })?;
    Ok(0)
}

#[derive(Serialize)]
struct CoupleJson {
    schema: &'static str,
    model: String,
    strategy: String,
    n: usize,
    t: usize,
    seed: u64,
    iteration_cap: u64,
    /// Meeting iteration; absent when the chains never met under the cap.
    tau: Option<u64>,
    completed: bool,
    /// Number of differing time indices after each iteration.
    hole_counts: Vec<usize>,
}

fn cmd_couple(global: &GlobalArgs, args: CoupleArgs) -> Result<i32, Failure> {
    let r = resolve(global, &args.model)?;
    let strategy = parse_strategy(&args.strategy)?;
    let built = runtime(build_model(&r.spec, r.t_len, r.seed))?;
    let options = CoupledOptions::new(strategy);
    let (matrix, outcome) = runtime(with_model!(
        &built,
        m => coupling_matrix(m, r.n, &options, args.iterations, r.seed)
    ))?;

    let json = CoupleJson {
        schema: SCHEMA_VERSION,
        model: r.spec.family_name().to_string(),
        strategy: strategy.to_string(),
        n: r.n,
        t: r.t_len,
        seed: r.seed,
        iteration_cap: args.iterations,
        tau: outcome.completed.then_some(outcome.tau),
        completed: outcome.completed,
        hole_counts: matrix
            .iter()
            .map(|row| row.iter().filter(|&&d| d).count())
            .collect(),
    };
    let text = runtime(serde_json::to_string_pretty(&json))?;
    match &r.out_dir {
        Some(dir) => {
            runtime(fs::create_dir_all(dir))?;
            let mut pgm = BufWriter::new(runtime(File::create(dir.join("matrix.pgm")))?);
            runtime(write_pgm(&mut pgm, &matrix))?;
            runtime(pgm.flush())?;
            let mut csv = BufWriter::new(runtime(File::create(dir.join("matrix.csv")))?);
            runtime(write_matrix_csv(&mut csv, &matrix))?;
            runtime(csv.flush())?;
            runtime(fs::write(dir.join("couple.json"), text + "\n"))?;
        }
        None => print_stdout(&text)?,
    }
    Ok(0)
}

fn cmd_bench(global: &GlobalArgs) -> Result<i32, Failure> {
    let path = global
        .config
        .as_ref()
        .ok_or_else(|| Failure::Usage(anyhow!("bench needs --config")))?;
    let mut config = usage(load_config(path))?;
    if let Some(seed) = global.seed {
        config.seed = seed;
    }
    if let Some(out) = &global.out {
        config.out_dir = Some(out.clone());
    }
    if let Some(secs) = global.time_budget {
        config.time_budget = Some(Duration::from_secs_f64(secs));
    }
    config.timings |= global.timings;

    let result = runtime(run_meeting_benchmark(&config))?;
    let to_stdout = config.out_dir.is_none();
    emit(&config.out_dir, "meeting.csv", |w| {
        if to_stdout {
            writeln!(w, "# meeting.csv")?;
        }
        write_meeting_csv(w, &result.meeting)
    })?;
    emit(&config.out_dir, "cost.csv", |w| {
        if to_stdout {
            writeln!(w, "# cost.csv")?;
        }
        write_cost_csv(w, &result.cost)
    })?;
    Ok(if result.budget_exhausted { 3 } else { 0 })
}

#[derive(Serialize)]
struct MeetingJson {
    tau: u64,
    iterations_run: u64,
    seed: u64,
    /// Zero unless --timings was given.
    wall_nanos: u128,
}

#[derive(Serialize)]
struct UnbiasedJson {
    schema: &'static str,
    model: String,
    strategy: String,
    h: String,
    n: usize,
    t: usize,
    seed: u64,
    value: Vec<f64>,
    lag: u64,
    k: u64,
    ell: u64,
    cap: u64,
    pilot_runs: usize,
    quantile: f64,
    meeting: MeetingJson,
}

fn make_h(choice: &str, t_len: usize) -> Result<Box<dyn Fn(&FkPath<f64>) -> Vec<f64>>, Failure> {
    let h: Box<dyn Fn(&FkPath<f64>) -> Vec<f64>> = match choice {
        "mid-state" => Box::new(move |p: &FkPath<f64>| vec![p[t_len / 2]]),
        "first-state" => Box::new(|p: &FkPath<f64>| vec![p[0]]),
        "last-state" => Box::new(move |p: &FkPath<f64>| vec![p[t_len - 1]]),
        "path-mean" => Box::new(move |p: &FkPath<f64>| {
            vec![p.iter().sum::<f64>() / t_len as f64]
        }),
        "states" => Box::new(|p: &FkPath<f64>| p.to_vec()),
        other => {
            return Err(Failure::Usage(anyhow!(
                "unknown functional '{other}' (try mid-state, first-state, last-state, \
                 path-mean or states)"
            )))
        }
    };
    Ok(h)
}

fn cmd_unbiased(global: &GlobalArgs, args: UnbiasedArgs) -> Result<i32, Failure> {
    let r = resolve(global, &args.model)?;
    let strategy = parse_strategy(&args.strategy)?;
    let h = make_h(&args.h, r.t_len)?;
    let built = runtime(build_model(&r.spec, r.t_len, r.seed))?;
    let options = CoupledOptions::new(strategy);

    let (est, cap) = runtime(with_model!(&built, m => (|| -> anyhow::Result<_> {
        let tuning = tune_lag(
            m,
            r.n,
            &options,
            seed::split_labelled(r.seed, "tune", 0),
            args.pilot_runs,
            args.quantile,
            10_000,
        )?;
        let lag = args.lag.unwrap_or(tuning.lag);
        let k = args.k.unwrap_or(tuning.k);
        let ell = args.ell.unwrap_or(tuning.ell).max(k);
        let cap = args
            .cap
            .unwrap_or_else(|| tuning.default_cap())
            .max(ell.max(1));
        let est = averaged_estimate(
            m,
            &h,
            r.n,
            k,
            ell,
            lag,
            &options,
            seed::split_labelled(r.seed, "estimate", 0),
            cap,
        )?;
        Ok((est, cap))
    })()))?;

    let json = UnbiasedJson {
        schema: SCHEMA_VERSION,
        model: r.spec.family_name().to_string(),
        strategy: strategy.to_string(),
        h: args.h.clone(),
        n: r.n,
        t: r.t_len,
        seed: r.seed,
        value: est.value.clone(),
        lag: est.lag,
        k: est.k,
        ell: est.ell,
        cap,
        pilot_runs: args.pilot_runs,
        quantile: args.quantile,
        meeting: MeetingJson {
            tau: est.meeting.tau,
            iterations_run: est.meeting.iterations_run,
            seed: est.meeting.seed,
            wall_nanos: if r.timings { est.meeting.wall_nanos } else { 0 },
        },
    };
    let text = runtime(serde_json::to_string_pretty(&json))?;
    match &r.out_dir {
        Some(dir) => {
            runtime(fs::create_dir_all(dir))?;
            runtime(fs::write(dir.join("unbiased.json"), text + "\n"))?;
        }
        None => print_stdout(&text)?,
    }
    Ok(0)
}

fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}

fn cmd_mle(global: &GlobalArgs, args: MleArgs) -> Result<i32, Failure> {
    let seed = global.seed.unwrap_or(0);
    let out_dir = global.out.clone();
    let timings = global.timings;

    let obs: Vec<f64> = match (&args.data, &args.synthetic) {
        (Some(_), Some(_)) => {
            return Err(Failure::Usage(anyhow!(
                "--data and --synthetic are mutually exclusive"
            )))
        }
        (Some(path), None) => usage(read_series(path))?,
        (None, Some(text)) => {
            let t_len = args
                .t_len
                .ok_or_else(|| Failure::Usage(anyhow!("--synthetic needs --T")))?;
            let truth = usage(parse_float_list(text))?;
            let data_seed = seed::split_labelled(seed, "mle-data", t_len as u64);
            match args.family.as_str() {
                "sv" => {
                    if truth.len() != 4 {
                        return Err(Failure::Usage(anyhow!(
                            "sv --synthetic takes mu,phi,rho,sigma"
                        )));
                    }
                    let params = SvParams {
                        mu: truth[0],
                        phi: truth[1],
                        rho: truth[2],
                        sigma: truth[3],
                    };
                    usage(sv_synthetic(&params, t_len, data_seed))?.obs
                }
                "lg" => {
                    if truth.len() != 3 {
                        return Err(Failure::Usage(anyhow!(
                            "lg --synthetic takes rho,sigma_x,sigma_y"
                        )));
                    }
                    usage(lg_synthetic(truth[0], truth[1], truth[2], t_len, data_seed))?.obs
                }
                other => return Err(Failure::Usage(anyhow!("unknown family '{other}'"))),
            }
        }
        (None, None) => {
            return Err(Failure::Usage(anyhow!("mle needs --data or --synthetic")))
        }
    };

    let schedule = match args.schedule.as_str() {
        "markovian" => GradientSchedule::Markovian,
        "unbiased" => GradientSchedule::Unbiased {
            pilot_runs: args.pilot_runs,
            quantile: args.quantile,
            retune_every: args.retune_every,
        },
        other => {
            return Err(Failure::Usage(anyhow!(
                "unknown schedule '{other}' (try markovian or unbiased)"
            )))
        }
    };
    let init = match &args.init {
        Some(text) => Some(usage(parse_float_list(text))?),
        None => None,
    };

    match args.family.as_str() {
        "lg" => {
            let family = LinearGaussianFamily::new(obs);
            let init = init.unwrap_or_else(|| vec![0.0, 1.0, 1.0]);
            let options = mle_options(&args, schedule, seed, family.param_dim())?;
            run_mle(&family, &["rho", "sigma_x", "sigma_y"], &init, &options, &out_dir, timings)
        }
        "sv" => {
            let init = init.unwrap_or_else(|| vec![sample_variance(&obs), 0.0, 0.0, 1.0]);
            let mut family = SvFamily::new(obs);
            family.stationary_var_from_phi = args.stationary_from_phi;
            let options = mle_options(&args, schedule, seed, family.param_dim())?;
            run_mle(&family, &["mu", "phi", "rho", "sigma"], &init, &options, &out_dir, timings)
        }
        other => Err(Failure::Usage(anyhow!(
            "unknown family '{other}' (try lg or sv)"
        ))),
    }
}

fn mle_options(
    args: &MleArgs,
    schedule: GradientSchedule,
    seed: u64,
    dim: usize,
) -> Result<MleOptions, Failure> {
    let strategy = parse_strategy(&args.strategy)?;
    Ok(MleOptions {
        n_particles: args.n.unwrap_or(32),
        coupled: CoupledOptions::new(strategy),
        schedule,
        iterations: args.iterations,
        adam: AdamState::new(dim).with_alpha(args.alpha),
        seed,
    })
}

fn run_mle<F: ModelFamily>(
    family: &F,
    names: &[&str],
    init_constrained: &[f64],
    options: &MleOptions,
    out_dir: &Option<PathBuf>,
    timings: bool,
) -> Result<i32, Failure> {
    let init = usage(TransformedParams::from_constrained(
        init_constrained,
        family.transforms(),
    ))?;
    let trace = runtime(mle_fit(family, init, options))?;
    let seed = options.seed;
    emit(out_dir, "trace.csv", |w| {
        write!(w, "schema,seed,iteration,wall_secs,grad_norm,meeting_tau")?;
        for name in names {
            write!(w, ",raw_{name}")?;
        }
        for name in names {
            write!(w, ",{name}")?;
        }
        writeln!(w)?;
        for row in &trace {
            let wall = if timings { row.wall_secs } else { 0.0 };
            write!(
                w,
                "{},{},{},{},{}",
                SCHEMA_VERSION, seed, row.iteration, wall, row.grad_norm
            )?;
            match row.meeting_tau {
                Some(tau) => write!(w, ",{tau}")?,
                None => write!(w, ",")?,
            }
            for v in &row.raw {
                write!(w, ",{v}")?;
            }
            for v in &row.constrained {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    })?;
    Ok(0)
}

fn cmd_oracle(global: &GlobalArgs, args: OracleArgs) -> Result<i32, Failure> {
    match args.model.as_str() {
        "lg" => {
            let params = match &args.params {
                Some(text) => usage(parse_float_list(text))?,
                None => vec![0.9, 1.0, 1.0],
            };
            if params.len() != 3 {
                return Err(Failure::Usage(anyhow!(
                    "lg oracle takes rho,sigma_x,sigma_y"
                )));
            }
            let result = match &args.data {
                Some(path) => {
                    let obs = usage(read_series(path))?;
                    usage(kalman_smoother(params[0], params[1], params[2], &obs))?
                }
                None => usage(kalman_smoother_zero_obs(
                    params[0],
                    params[1],
                    params[2],
                    args.t_len.unwrap_or(8),
                ))?,
            };
            emit(&global.out, "oracle.csv", |w| {
                writeln!(w, "t,mean,variance")?;
                for (t, (m, v)) in result.means.iter().zip(&result.variances).enumerate() {
                    writeln!(w, "{t},{m},{v}")?;
                }
                writeln!(w, "# log_likelihood {}", result.log_likelihood)
            })?;
            Ok(0)
        }
        "discrete" => {
            let hmm = random_hmm(args.states, args.t_len.unwrap_or(5), args.hmm_seed);
            let smoothing = usage(forward_backward(&hmm))?;
            emit(&global.out, "oracle.csv", |w| {
                writeln!(w, "t,state,probability")?;
                for (t, row) in smoothing.marginals.iter().enumerate() {
                    for (state, p) in row.iter().enumerate() {
                        writeln!(w, "{t},{state},{p}")?;
                    }
                }
                writeln!(w, "# log_normalizer {}", smoothing.log_normalizer)
            })?;
            Ok(0)
        }
        other => Err(Failure::Usage(anyhow!(
            "unknown oracle model '{other}' (try lg or discrete)"
        ))),
    }
}

//! Command-line front end.
//!
//! Every subcommand writes its primary artifact (CSV or model JSON) to `--out`, or to
//! standard output when `--out` is absent. With `--json` a machine-readable summary
//! goes to standard output instead; its schemas live in `schemas/`.
//!
//! Exit codes: 0 success, 1 numeric failure, 2 usage error, 3 I/O or parse error.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use nalgebra::DVector;
use serde::Serialize;

use crate::bezier::{NCurve, TimeGrid};
use crate::error::{Error, Result};
use crate::fit::{
    fit_mixture_traced, load_trajectories, predict_prior, write_trajectories_csv, FitConfig,
    Trajectory,
};
use crate::mixture::{ModelFile, NCurveMixture};
use crate::ngp::{gram, normalize_min_max, presets, write_gram_csv, KernelParams, KernelRegistry};
use crate::predict::{
    ade, default_plans, make_synthetic_with, nll_metric, refine, run_benchmark, ConditionPlan,
    NamedPlan, Prediction, SplitSpec, SynthSpec,
};

/// Point noise of generated datasets.
pub const DEFAULT_NOISE: f64 = 0.05;
/// Control-point jitter of generated datasets.
pub const DEFAULT_JITTER: f64 = 0.5;

#[derive(Debug, Parser)]
#[command(name = "ncgp", version, about = "Probabilistic Bezier curves as Gaussian processes")]
pub struct Cli {
    /// Cap on worker threads (defaults to all cores).
    #[arg(long, global = true, value_parser = positive_usize)]
    pub threads: Option<usize>,

    /// Print a JSON summary on stdout instead of the artifact.
    #[arg(long, global = true)]
    pub json: bool,

    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic trajectory dataset.
    Synth(SynthArgs),
    /// Fit an N-Curve mixture to a trajectory dataset.
    Fit(FitArgs),
    /// Export a kernel Gram matrix.
    Gram(GramArgs),
    /// Draw sequences from a model or preset prior.
    Sample(SampleArgs),
    /// Export the per-step prior of a model, optionally scoring trajectories against it.
    Predict(PredictArgs),
    /// Condition the prior on observed steps of each trajectory.
    Refine(RefineArgs),
    /// Refine on input steps, then update on later observations without a new prior.
    Update(UpdateArgs),
    /// Run the prior / posterior benchmark.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 3, value_parser = positive_usize)]
    pub prototypes: usize,
    #[arg(long, default_value_t = 100, value_parser = positive_usize)]
    pub per_prototype: usize,
    /// Standard deviation of the i.i.d. point noise.
    #[arg(long, default_value_t = DEFAULT_NOISE, value_parser = non_negative_f64)]
    pub noise: f64,
    /// Standard deviation of per-trajectory control-point offsets.
    #[arg(long, default_value_t = DEFAULT_JITTER, value_parser = non_negative_f64)]
    pub jitter: f64,
    /// Steps per trajectory.
    #[arg(long, default_value_t = 20, value_parser = at_least_two)]
    pub n: usize,
    #[arg(long, default_value_t = 2, value_parser = positive_usize)]
    pub dim: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitOptions {
    /// Mixture components.
    #[arg(long, default_value_t = 3, value_parser = positive_usize)]
    pub k: usize,
    /// Curve degree.
    #[arg(long, default_value_t = 5, value_parser = positive_usize)]
    pub degree: usize,
    #[arg(long, default_value_t = 500)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 0.1, value_parser = positive_f64)]
    pub step_size: f64,
    #[arg(long, default_value_t = 1e-6, value_parser = positive_f64)]
    pub min_variance: f64,
    #[arg(long, default_value_t = 3, value_parser = positive_usize)]
    pub restarts: usize,
}

impl FitOptions {
    fn config(&self, seed: u64) -> FitConfig {
        FitConfig {
            k: self.k,
            degree: self.degree,
            max_iters: self.max_iters,
            step_size: self.step_size,
            seed,
            min_variance: self.min_variance,
            restarts: self.restarts,
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Trajectory CSV.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub opts: FitOptions,
    #[arg(long)]
    pub seed: u64,
    /// Model JSON destination.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum KernelKind {
    Rbf,
    Linear,
    Ncurve,
}

impl KernelKind {
    fn name(self) -> &'static str {
        match self {
            Self::Rbf => "rbf",
            Self::Linear => "linear",
            Self::Ncurve => "ncurve",
        }
    }
}

#[derive(Debug, Args)]
pub struct GramArgs {
    #[arg(long, value_enum)]
    pub kernel: KernelKind,
    /// Number of equally spaced points in [0, 1].
    #[arg(long, default_value_t = 20, value_parser = at_least_two)]
    pub n: usize,
    #[arg(long, value_parser = positive_f64)]
    pub sigma: Option<f64>,
    #[arg(long, value_parser = positive_f64)]
    pub length_scale: Option<f64>,
    #[arg(long, value_parser = non_negative_f64)]
    pub sigma_b: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub c: Option<f64>,
    /// Model JSON supplying the curve for `--kernel ncurve`.
    #[arg(long, conflicts_with = "preset")]
    pub model: Option<PathBuf>,
    /// Component of `--model` to use.
    #[arg(long, default_value_t = 0)]
    pub component: usize,
    /// Built-in curve for `--kernel ncurve`: unit-pair or tapered9.
    #[arg(long)]
    pub preset: Option<String>,
    /// Min-max normalize entries to [0, 1].
    #[arg(long)]
    pub normalize: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    pub model: Option<PathBuf>,
    /// Built-in curve: unit-pair or tapered9.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long, default_value_t = 20, value_parser = at_least_two)]
    pub n: usize,
    /// Number of sequences.
    #[arg(long, default_value_t = 10, value_parser = positive_usize)]
    pub count: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Grid size; taken from `--data` when given.
    #[arg(long, value_parser = at_least_two)]
    pub n: Option<usize>,
    /// Trajectories to score against the prior.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Input steps; the rest of each trajectory is the prediction horizon.
    #[arg(long, default_value_t = 8, value_parser = positive_usize)]
    pub n_in: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RefineArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated 0-based steps to observe; defaults to the last input step.
    #[arg(long, value_delimiter = ',')]
    pub plan: Vec<usize>,
    #[arg(long, default_value_t = 0.0, value_parser = non_negative_f64)]
    pub obs_noise: f64,
    #[arg(long, default_value_t = 8, value_parser = positive_usize)]
    pub n_in: usize,
    /// Restrict to these trajectory ids (repeatable).
    #[arg(long = "traj")]
    pub traj: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct UpdateArgs {
    #[command(flatten)]
    pub refine: RefineArgs,
    /// Comma-separated 0-based steps whose observed points arrive after refinement.
    #[arg(long, value_delimiter = ',', required = true)]
    pub at: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Trajectory CSV; a synthetic dataset is generated when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 3, value_parser = positive_usize)]
    pub prototypes: usize,
    #[arg(long, default_value_t = 100, value_parser = positive_usize)]
    pub per_prototype: usize,
    #[arg(long, default_value_t = DEFAULT_NOISE, value_parser = non_negative_f64)]
    pub noise: f64,
    #[arg(long, default_value_t = DEFAULT_JITTER, value_parser = non_negative_f64)]
    pub jitter: f64,
    #[arg(long, default_value_t = 20, value_parser = at_least_two)]
    pub n: usize,
    #[arg(long, default_value_t = 2, value_parser = positive_usize)]
    pub dim: usize,
    #[arg(long, default_value_t = 8, value_parser = positive_usize)]
    pub n_in: usize,
    #[arg(long, default_value_t = 0.0, value_parser = non_negative_f64)]
    pub obs_noise: f64,
    #[command(flatten)]
    pub opts: FitOptions,
    #[arg(long)]
    pub seed: u64,
    /// Full report JSON destination.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Per-trajectory CSV destination.
    #[arg(long)]
    pub details: Option<PathBuf>,
}

impl BenchArgs {
    fn synth_spec(&self) -> SynthSpec {
        SynthSpec {
            prototypes: self.prototypes,
            per_prototype: self.per_prototype,
            noise_sigma: self.noise,
            curve_jitter: self.jitter,
            n: self.n,
            d: self.dim,
            seed: self.seed,
        }
    }
}

fn positive_usize(s: &str) -> std::result::Result<usize, String> {
    match s.parse::<usize>() {
        Ok(v) if v >= 1 => Ok(v),
        _ => Err(format!("`{s}` is not a positive integer")),
    }
}

fn at_least_two(s: &str) -> std::result::Result<usize, String> {
    match s.parse::<usize>() {
        Ok(v) if v >= 2 => Ok(v),
        _ => Err(format!("`{s}` must be an integer >= 2")),
    }
}

fn positive_f64(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("`{s}` is not a positive number")),
    }
}

fn non_negative_f64(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("`{s}` is not a non-negative number")),
    }
}

/// Parses `args` (including the program name), runs the subcommand and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .try_init();

    let mut out = BufWriter::new(std::io::stdout());
    let result = match cli.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| execute(&cli, &mut out)),
            Err(e) => Err(Error::InvalidParameter(format!("thread pool: {e}"))),
        },
        None => execute(&cli, &mut out),
    };
    let _ = out.flush();
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_io() {
        3
    } else {
        1
    }
}

/// Runs an already parsed command, writing stdout content to `out`.
pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a, cli.json, out),
        Command::Fit(a) => cmd_fit(a, cli.json, out),
        Command::Gram(a) => cmd_gram(a, cli.json, out),
        Command::Sample(a) => cmd_sample(a, cli.json, out),
        Command::Predict(a) => cmd_predict(a, cli.json, out),
        Command::Refine(a) => cmd_refine(a, None, cli.json, out),
        Command::Update(a) => cmd_refine(&a.refine, Some(&a.at), cli.json, out),
        Command::Bench(a) => cmd_bench(a, cli.json, out),
    }
}

fn require_input(path: &Path) -> Result<()> {
    std::fs::metadata(path).map(|_| ()).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn require_output(path: &Option<PathBuf>) -> Result<()> {
    let Some(p) = path else { return Ok(()) };
    let parent = p.parent().filter(|d| !d.as_os_str().is_empty());
    match parent {
        Some(dir) if !dir.is_dir() => Err(Error::Io {
            path: p.clone(),
            source: std::io::Error::new(
                std::io::ErrorKind::NotFound,
                "parent directory does not exist",
            ),
        }),
        _ => Ok(()),
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes the artifact to `dest`, or to `out` unless JSON output replaces it.
fn emit_artifact(
    dest: &Option<PathBuf>,
    json: bool,
    out: &mut dyn Write,
    write: impl FnOnce(&mut dyn Write) -> Result<()>,
) -> Result<()> {
    match dest {
        Some(p) => {
            let f = File::create(p).map_err(io_err(p))?;
            let mut w = BufWriter::new(f);
            write(&mut w)?;
            w.flush().map_err(io_err(p))?;
            info!("wrote {}", p.display());
            Ok(())
        }
        None if !json => write(out),
        None => Ok(()),
    }
}

fn emit_json<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: "<stdout>".into(),
        source: e,
    })?;
    writeln!(out, "{s}").map_err(io_err(Path::new("<stdout>")))
}

fn stdout_io(e: std::io::Error) -> Error {
    Error::Io {
        path: "<stdout>".into(),
        source: e,
    }
}

fn path_string(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

fn rows(points: &[DVector<f64>]) -> Vec<Vec<f64>> {
    points.iter().map(|p| p.iter().copied().collect()).collect()
}

fn fmt_row(vals: impl IntoIterator<Item = f64>) -> String {
    vals.into_iter()
        .map(|v| format!("{v}"))
        .collect::<Vec<_>>()
        .join(",")
}

#[derive(Serialize)]
struct SynthSummary {
    command: &'static str,
    seed: u64,
    trajectories: usize,
    steps: usize,
    dim: usize,
    prototypes: usize,
    per_prototype: usize,
    noise: f64,
    jitter: f64,
    out: Option<String>,
}

fn cmd_synth(a: &SynthArgs, json: bool, out: &mut dyn Write) -> Result<()> {
    require_output(&a.out)?;
    let data = make_synthetic_with(&SynthSpec {
        prototypes: a.prototypes,
        per_prototype: a.per_prototype,
        noise_sigma: a.noise,
        curve_jitter: a.jitter,
        n: a.n,
        d: a.dim,
        seed: a.seed,
    })?;
    info!("synthesized {} trajectories", data.len());
    emit_artifact(&a.out, json, out, |w| write_trajectories_csv(w, &data))?;
    if json {
        emit_json(
            out,
            &SynthSummary {
                command: "synth",
                seed: a.seed,
                trajectories: data.len(),
                steps: a.n,
                dim: a.dim,
                prototypes: a.prototypes,
                per_prototype: a.per_prototype,
                noise: a.noise,
                jitter: a.jitter,
                out: path_string(&a.out),
            },
        )?;
    }
    Ok(())
}

#[derive(Serialize)]
struct FitSummary {
    command: &'static str,
    seed: u64,
    trajectories: usize,
    k: usize,
    degree: usize,
    loss: f64,
    iterations: usize,
    converged: bool,
    restart: usize,
    loss_trace: Vec<f64>,
    out: Option<String>,
    model: ModelFile,
}

fn cmd_fit(a: &FitArgs, json: bool, out: &mut dyn Write) -> Result<()> {
    require_input(&a.data)?;
    require_output(&a.out)?;
    let data = load_trajectories(&a.data)?;
    let cfg = a.opts.config(a.seed);
    info!("fitting K={} L={} on {} trajectories", cfg.k, cfg.degree, data.len());
    let outcome = fit_mixture_traced(&data, &cfg)?;
    info!("final loss {:.6}", outcome.loss);
    let text = outcome.mixture.to_json();
    emit_artifact(&a.out, json, out, |w| {
        writeln!(w, "{text}").map_err(stdout_io)
    })?;
    if json {
        emit_json(
            out,
            &FitSummary {
                command: "fit",
                seed: a.seed,
                trajectories: data.len(),
                k: cfg.k,
                degree: cfg.degree,
                loss: outcome.loss,
                iterations: outcome.loss_trace.len() - 1,
                converged: outcome.converged,
                restart: outcome.restart,
                loss_trace: outcome.loss_trace.clone(),
                out: path_string(&a.out),
                model: outcome.mixture.to_model_file(),
            },
        )?;
    }
    Ok(())
}

fn preset_curve(name: &str) -> Result<NCurve> {
    presets::by_name(name).ok_or_else(|| Error::UnknownStrategy {
        kind: "preset",
        name: name.to_string(),
        available: "tapered9, unit-pair".into(),
    })
}

fn model_curve(path: &Path, component: usize) -> Result<NCurve> {
    let m = NCurveMixture::load(path)?;
    m.curves()
        .get(component)
        .cloned()
        .ok_or(Error::IndexOutOfRange {
            index: component,
            len: m.n_components(),
        })
}

#[derive(Serialize)]
struct GramSummary {
    command: &'static str,
    kernel: &'static str,
    n: usize,
    dim: usize,
    normalized: bool,
    grid: Vec<f64>,
    matrix: Vec<Vec<f64>>,
    out: Option<String>,
}

fn cmd_gram(a: &GramArgs, json: bool, out: &mut dyn Write) -> Result<()> {
    if let Some(m) = &a.model {
        require_input(m)?;
    }
    require_output(&a.out)?;
    let curve = match (a.kernel, &a.model, &a.preset) {
        (KernelKind::Ncurve, Some(m), _) => Some(model_curve(m, a.component)?),
        (KernelKind::Ncurve, None, Some(p)) => Some(preset_curve(p)?),
        (KernelKind::Ncurve, None, None) => {
            return Err(Error::InvalidParameter(
                "--kernel ncurve needs --model or --preset".into(),
            ))
        }
        _ => None,
    };
    let params = KernelParams {
        sigma: a.sigma,
        length_scale: a.length_scale,
        sigma_b: a.sigma_b,
        c: a.c,
        curve,
    };
    let kernel = KernelRegistry::with_builtins().build(a.kernel.name(), &params)?;
    let grid = TimeGrid::uniform(a.n)?;
    let d = kernel.output_dim();
    let joint = gram(kernel.as_ref(), &grid, d)?;
    let mut m = joint.dist().cov().clone();
    if a.normalize {
        m = normalize_min_max(&m);
    }
    info!("{} Gram of size {}", kernel.name(), m.nrows());
    emit_artifact(&a.out, json, out, |w| {
        write_gram_csv(w, &grid, d, &m).map_err(stdout_io)
    })?;
    if json {
        emit_json(
            out,
            &GramSummary {
                command: "gram",
                kernel: a.kernel.name(),
                n: a.n,
                dim: d,
                normalized: a.normalize,
                grid: grid.values().to_vec(),
                matrix: m.row_iter().map(|r| r.iter().copied().collect()).collect(),
                out: path_string(&a.out),
            },
        )?;
    }
    Ok(())
}

#[derive(Serialize)]
struct SampleRecord {
    sample: usize,
    component: usize,
    points: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct SampleSummary {
    command: &'static str,
    seed: u64,
    count: usize,
    n: usize,
    dim: usize,
    grid: Vec<f64>,
    samples: Vec<SampleRecord>,
    out: Option<String>,
}

fn cmd_sample(a: &SampleArgs, json: bool, out: &mut dyn Write) -> Result<()> {
    if let Some(m) = &a.model {
        require_input(m)?;
    }
    require_output(&a.out)?;
    let mixture = match (&a.model, &a.preset) {
        (Some(m), _) => NCurveMixture::load(m)?,
        (None, Some(p)) => NCurveMixture::new(vec![1.0], vec![preset_curve(p)?])?,
        (None, None) => unreachable!("clap requires --model or --preset"),
    };
    let grid = TimeGrid::uniform(a.n)?;
    let prior = predict_prior(&mixture, &grid)?;
    let draws = prior.sample(a.seed, a.count)?;
    let d = prior.dim();
    emit_artifact(&a.out, json, out, |w| {
        let dims: Vec<String> = (0..d).map(|i| format!("dim{i}")).collect();
        writeln!(w, "sample,component,step,t,{}", dims.join(",")).map_err(stdout_io)?;
        for (s, (k, seq)) in draws.iter().enumerate() {
            for (j, p) in seq.iter().enumerate() {
                writeln!(w, "{s},{k},{j},{},{}", grid.values()[j], fmt_row(p.iter().copied()))
                    .map_err(stdout_io)?;
            }
        }
        Ok(())
    })?;
    if json {
        emit_json(
            out,
            &SampleSummary {
                command: "sample",
                seed: a.seed,
                count: a.count,
                n: a.n,
                dim: d,
                grid: grid.values().to_vec(),
                samples: draws
                    .iter()
                    .enumerate()
                    .map(|(s, (k, seq))| SampleRecord {
                        sample: s,
                        component: *k,
                        points: rows(seq),
                    })
                    .collect(),
                out: path_string(&a.out),
            },
        )?;
    }
    Ok(())
}

#[derive(Serialize)]
struct StepDistribution {
    weight: f64,
    mean: Vec<Vec<f64>>,
    variance: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct Scores {
    ade_in: Option<f64>,
    ade_pred: Option<f64>,
    nll_in: Option<f64>,
    nll_pred: Option<f64>,
}

#[derive(Serialize)]
struct ScoredTrajectory {
    traj_id: String,
    #[serde(flatten)]
    scores: Scores,
}

#[derive(Serialize)]
struct PredictSummary {
    command: &'static str,
    n: usize,
    dim: usize,
    grid: Vec<f64>,
    components: Vec<StepDistribution>,
    scores: Vec<ScoredTrajectory>,
    out: Option<String>,
}

/// Per-component step means and marginal variances over absolute steps;
/// observed steps carry the observed point and zero variance.
fn step_distributions(pred: &Prediction) -> Result<Vec<StepDistribution>> {
    let d = pred.dim();
    (0..pred.mixture().n_components())
        .map(|k| {
            let mean = rows(&pred.component_sequence(k)?);
            let mut variance = vec![vec![0.0; d]; pred.n_steps()];
            for (p, &s) in pred.latent_steps().iter().enumerate() {
                let g = pred.mixture().components()[k].marginal_at(p)?;
                variance[s] = g.cov().diagonal().iter().copied().collect();
            }
            Ok(StepDistribution {
                weight: pred.weights()[k],
                mean,
                variance,
            })
        })
        .collect()
}

fn write_step_rows(
    w: &mut dyn Write,
    prefix: &str,
    grid: &TimeGrid,
    observed: &[usize],
    dists: &[StepDistribution],
) -> Result<()> {
    for (k, c) in dists.iter().enumerate() {
        for (s, (mean, var)) in c.mean.iter().zip(&c.variance).enumerate() {
            let obs = u8::from(observed.contains(&s));
            writeln!(
                w,
                "{prefix}{k},{},{s},{},{obs},{},{}",
                c.weight,
                grid.values()[s],
                fmt_row(mean.iter().copied()),
                fmt_row(var.iter().copied())
            )
            .map_err(stdout_io)?;
        }
    }
    Ok(())
}

fn step_header(d: usize) -> String {
    let means: Vec<String> = (0..d).map(|a| format!("mean{a}")).collect();
    let vars: Vec<String> = (0..d).map(|a| format!("var{a}")).collect();
    format!("component,weight,step,t,observed,{},{}", means.join(","), vars.join(","))
}

fn score(pred: &Prediction, traj: &Trajectory, split: &SplitSpec) -> Result<Scores> {
    let observed: Vec<usize> = pred.observed().iter().map(|(s, _)| *s).collect();
    let keep = |r: std::ops::Range<usize>| -> Vec<usize> {
        r.filter(|s| observed.binary_search(s).is_err()).collect()
    };
    let (ins, preds) = (keep(split.input_steps()), keep(split.prediction_steps()));
    let finite = |v: f64| v.is_finite().then_some(v);
    Ok(Scores {
        ade_in: finite(ade(pred, traj, &ins)?),
        ade_pred: finite(ade(pred, traj, &preds)?),
        nll_in: finite(nll_metric(pred, traj, &ins)?),
        nll_pred: finite(nll_metric(pred, traj, &preds)?),
    })
}

fn split_for(n: usize, n_in: usize) -> Result<SplitSpec> {
    if n_in >= n {
        return Err(Error::InvalidParameter(format!(
            "--n-in {n_in} leaves no prediction steps for length {n}"
        )));
    }
    SplitSpec::new(n_in, n - n_in)
}

fn cmd_predict(a: &PredictArgs, json: bool, out: &mut dyn Write) -> Result<()> {
    require_input(&a.model)?;
    if let Some(d) = &a.data {
        require_input(d)?;
    }
    require_output(&a.out)?;
    let mixture = NCurveMixture::load(&a.model)?;
    let data = a.data.as_deref().map(load_trajectories).transpose()?;
    let n = match (&data, a.n) {
        (Some(d), _) => d[0].len(),
        (None, Some(n)) => n,
        (None, None) => 20,
    };
    let grid = TimeGrid::uniform(n)?;
    let prior = Prediction::from_prior(predict_prior(&mixture, &grid)?);
    let dists = step_distributions(&prior)?;
    let scores = match &data {
        Some(data) => {
            let split = split_for(n, a.n_in)?;
            data.iter()
                .map(|t| {
                    Ok(ScoredTrajectory {
                        traj_id: t.id.clone(),
                        scores: score(&prior, t, &split)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?
        }
        None => Vec::new(),
    };
    emit_artifact(&a.out, json, out, |w| {
        writeln!(w, "{}", step_header(prior.dim())).map_err(stdout_io)?;
        write_step_rows(w, "", &grid, &[], &dists)
    })?;
    if json {
        emit_json(
            out,
            &PredictSummary {
                command: "predict",
                n,
                dim: prior.dim(),
                grid: grid.values().to_vec(),
                components: dists,
                scores,
                out: path_string(&a.out),
            },
        )?;
    } else if a.out.is_some() {
        for s in &scores {
            writeln!(
                out,
                "{} ade_in={:?} ade_pred={:?} nll_in={:?} nll_pred={:?}",
                s.traj_id, s.scores.ade_in, s.scores.ade_pred, s.scores.nll_in, s.scores.nll_pred
            )
            .map_err(stdout_io)?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct PosteriorRecord {
    traj_id: String,
    weights: Vec<f64>,
    ml_component: usize,
    observed_steps: Vec<usize>,
    ml_sequence: Vec<Vec<f64>>,
    #[serde(flatten)]
    scores: Scores,
}

#[derive(Serialize)]
struct RefineSummary {
    command: &'static str,
    plan: Vec<usize>,
    updated_steps: Option<Vec<usize>>,
    obs_noise: f64,
    n_in: usize,
    results: Vec<PosteriorRecord>,
    out: Option<String>,
}

fn cmd_refine(
    a: &RefineArgs,
    at: Option<&[usize]>,
    json: bool,
    out: &mut dyn Write,
) -> Result<()> {
    require_input(&a.model)?;
    require_input(&a.data)?;
    require_output(&a.out)?;
    let mixture = NCurveMixture::load(&a.model)?;
    let mut data = load_trajectories(&a.data)?;
    if !a.traj.is_empty() {
        data.retain(|t| a.traj.contains(&t.id));
        if data.is_empty() {
            return Err(Error::InvalidParameter(
                "no trajectory matches --traj".into(),
            ));
        }
    }
    let n = data[0].len();
    let split = split_for(n, a.n_in)?;
    let plan = if a.plan.is_empty() {
        ConditionPlan::posterior_a(&split, a.obs_noise)?
    } else {
        ConditionPlan::new(a.plan.clone(), a.obs_noise)?
    };
    if let Some(&s) = plan.steps().last() {
        if s >= n {
            return Err(Error::IndexOutOfRange { index: s, len: n });
        }
    }
    let grid = TimeGrid::uniform(n)?;
    let prior = predict_prior(&mixture, &grid)?;

    let mut results = Vec::with_capacity(data.len());
    let mut tables = Vec::with_capacity(data.len());
    for traj in &data {
        let mut pred = refine(&prior, traj, &plan)?;
        if let Some(at) = at {
            let obs = at
                .iter()
                .map(|&s| {
                    traj.points
                        .get(s)
                        .map(|p| (s, p.clone()))
                        .ok_or(Error::IndexOutOfRange { index: s, len: n })
                })
                .collect::<Result<Vec<_>>>()?;
            pred = pred.update(&obs, a.obs_noise)?;
        }
        info!("{}: weights {:?}", traj.id, pred.weights());
        tables.push(step_distributions(&pred)?);
        results.push(PosteriorRecord {
            traj_id: traj.id.clone(),
            weights: pred.weights().to_vec(),
            ml_component: pred.ml_component(),
            observed_steps: pred.observed().iter().map(|(s, _)| *s).collect(),
            ml_sequence: rows(&pred.ml_sequence()),
            scores: score(&pred, traj, &split)?,
        });
    }
    emit_artifact(&a.out, json, out, |w| {
        writeln!(w, "traj_id,{}", step_header(prior.dim())).map_err(stdout_io)?;
        for ((traj, dists), rec) in data.iter().zip(&tables).zip(&results) {
            let prefix = format!("{},", traj.id);
            write_step_rows(w, &prefix, &grid, &rec.observed_steps, dists)?;
        }
        Ok(())
    })?;
    if json {
        emit_json(
            out,
            &RefineSummary {
                command: if at.is_some() { "update" } else { "refine" },
                plan: plan.steps().to_vec(),
                updated_steps: at.map(|s| {
                    let mut s = s.to_vec();
                    s.sort_unstable();
                    s
                }),
                obs_noise: a.obs_noise,
                n_in: a.n_in,
                results,
                out: path_string(&a.out),
            },
        )?;
    }
    Ok(())
}

#[derive(Serialize)]
struct BenchSummary<'a> {
    command: &'static str,
    data: Option<String>,
    synthetic: Option<SynthSpec>,
    #[serde(flatten)]
    report: &'a crate::predict::BenchReport,
}

fn cmd_bench(a: &BenchArgs, json: bool, out: &mut dyn Write) -> Result<()> {
    if let Some(d) = &a.data {
        require_input(d)?;
    }
    require_output(&a.report)?;
    require_output(&a.details)?;
    let data = match &a.data {
        Some(p) => load_trajectories(p)?,
        None => make_synthetic_with(&a.synth_spec())?,
    };
    let n = data[0].len();
    let split = split_for(n, a.n_in)?;
    let plans: Vec<NamedPlan> = default_plans(&split, a.obs_noise)?;
    let report = run_benchmark(&data, &a.opts.config(a.seed), &split, &plans, a.seed)?;
    let summary = BenchSummary {
        command: "bench",
        data: path_string(&a.data),
        synthetic: a.data.is_none().then(|| a.synth_spec()),
        report: &report,
    };
    if let Some(p) = &a.report {
        let f = File::create(p).map_err(io_err(p))?;
        let mut w = BufWriter::new(f);
        let s = serde_json::to_string_pretty(&summary).map_err(|e| Error::Json {
            path: p.clone(),
            source: e,
        })?;
        writeln!(w, "{s}").map_err(io_err(p))?;
        w.flush().map_err(io_err(p))?;
    }
    if let Some(p) = &a.details {
        let f = File::create(p).map_err(io_err(p))?;
        report.write_details_csv(BufWriter::new(f))?;
    }
    if json {
        emit_json(out, &summary)
    } else {
        write!(out, "{}", report.to_table()).map_err(stdout_io)
    }
}

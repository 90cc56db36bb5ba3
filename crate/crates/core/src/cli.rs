//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
//! Reports are JSON on stdout unless `--out` is given.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::seq::index;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gradcheck::{self, GradCheckReport};
use crate::pca::{fit_normal_1d, fit_pca, histogram, infeasible_mass, reorient, Normal1D};
use crate::posedata::synth::rng_from_seed;
use crate::posedata::{
    compute_deltas, format_pose_csv, format_sequence_csv, load_pose_csv, load_sequence_csv, synth_generate,
    synth_sequence, SynthSpec,
};
use crate::priors::{
    fit_box, fit_gamma, fit_gmm_em, fit_mvn, fit_temporal_gmm, load_model, log_prob_batch, model_to_json, EmConfig,
    FitMetadata, Prior, PriorModel,
};
use crate::recovery::{recover_pose, Observation, RecoveryConfig};
use crate::vae::{self, loss_trace_csv, LossWeights, Optimizer, TrainConfig, TrainingMetadata, VaeModel};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "poseprior", version, about = "Fit, evaluate and differentiate pose priors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic pose (or sequence) CSV from a JSON spec.
    Gen(GenArgs),
    /// Fit a prior to a pose CSV (a sequence CSV for `temporal`).
    Fit(FitArgs),
    /// Per-sample log-probabilities of a dataset under a model.
    Eval(EvalArgs),
    /// Principal-component diagnostic with a 1D normal fit.
    Analyze(AnalyzeArgs),
    /// Train the rotation-matrix VAE on axis-angle poses.
    TrainVae(TrainVaeArgs),
    /// Recover a pose from a noisy observation.
    Recover(RecoverArgs),
    /// Compare analytic and finite-difference gradients.
    GradCheck(GradCheckArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub spec: PathBuf,
    /// Overrides the seed stored in the spec (default 0).
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FitKind {
    Mvn,
    Gamma,
    Gmm,
    Box,
    Temporal,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long, value_enum)]
    pub model: FitKind,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Mixture components (gmm, temporal).
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub k: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Covariance ridge added after each M-step.
    #[arg(long, default_value_t = 1e-6)]
    pub reg: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    /// Box penalty stiffness.
    #[arg(long, default_value_t = 100.0)]
    pub stiffness: f64,
    /// Box limits extend the data range by this much.
    #[arg(long, default_value_t = 0.0)]
    pub margin: f64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Dimensions to analyze (all when omitted).
    #[arg(long, value_delimiter = ',')]
    pub dims: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 3000)]
    pub samples: usize,
    #[arg(long, default_value_t = 50)]
    pub bins: usize,
    #[arg(long, default_value_t = -1e9, allow_hyphen_values = true)]
    pub feasible_lo: f64,
    #[arg(long, default_value_t = 1e9, allow_hyphen_values = true)]
    pub feasible_hi: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the histogram as CSV.
    #[arg(long)]
    pub hist: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Args)]
pub struct TrainVaeArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 20)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = vae::DEFAULT_LATENT)]
    pub latent: usize,
    /// Width of each of the two hidden layers.
    #[arg(long, default_value_t = vae::DEFAULT_HIDDEN)]
    pub hidden: usize,
    #[arg(long, value_enum, default_value_t = OptimizerKind::Adam)]
    pub optimizer: OptimizerKind,
    /// Write the per-epoch loss trace CSV here.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RecoverArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Observation JSON: `{"values": [...], "noise_sigma": s, "mask": [...]}`.
    #[arg(long)]
    pub obs: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 10_000)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1.0)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Finite-difference step (1e-5, or 1e-4 for VAE models).
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).map_err(io_err(p)),
        None => {
            let mut stdout = std::io::stdout().lock();
            match stdout.write_all(text.as_bytes()).and_then(|_| stdout.flush()) {
                // a closed reader (e.g. `| head`) is not our failure
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
                    Err(io_err(Path::new("<stdout>"))(e))
                }
                _ => Ok(()),
            }
        }
    }
}

fn emit_json<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    emit(out, &s)
}

fn gen(a: &GenArgs) -> Result<()> {
    let spec = SynthSpec::from_json(&read(&a.spec)?)?;
    let seed = a.seed.or(spec.seed).unwrap_or(0);
    let text = if spec.sequence.is_some() {
        format_sequence_csv(&synth_sequence(&spec, seed)?)
    } else {
        format_pose_csv(&synth_generate(&spec, seed)?)
    };
    emit(a.out.as_deref(), &text)
}

fn total_loglik<P: Prior + ?Sized>(p: &P, xs: &[Vec<f64>]) -> Result<f64> {
    Ok(log_prob_batch(p, xs)?.iter().sum())
}

fn fit(a: &FitArgs) -> Result<()> {
    let em = EmConfig { k: a.k as usize, seed: a.seed, reg: a.reg, tol: a.tol, max_iter: a.max_iter };
    let (model, meta) = match a.model {
        FitKind::Temporal => {
            let seq = load_sequence_csv(&a.data)?;
            let (m, f) = fit_temporal_gmm(&compute_deltas(&seq), &em)?;
            let jitter = m.gmm().components().iter().map(|c| c.gaussian.jitter()).fold(0.0, f64::max);
            let meta = FitMetadata {
                seed: Some(a.seed),
                jitter,
                iterations: f.iterations,
                final_loglik: Some(f.final_loglik()),
                training: None,
            };
            (PriorModel::TemporalGmm(m), meta)
        }
        kind => {
            let data = load_pose_csv(&a.data)?;
            match kind {
                FitKind::Mvn => {
                    let m = fit_mvn(&data)?;
                    let ll = total_loglik(&m, &data.samples)?;
                    let meta = FitMetadata { jitter: m.jitter(), final_loglik: Some(ll), ..Default::default() };
                    (PriorModel::Mvn(m), meta)
                }
                FitKind::Gamma => {
                    let m = fit_gamma(&data)?;
                    let ll = total_loglik(&m, &data.samples)?;
                    (PriorModel::Gamma(m), FitMetadata { final_loglik: Some(ll), ..Default::default() })
                }
                FitKind::Gmm => {
                    let f = fit_gmm_em(&data, &em)?;
                    let jitter = f.model.components().iter().map(|c| c.gaussian.jitter()).fold(0.0, f64::max);
                    let meta = FitMetadata {
                        seed: Some(a.seed),
                        jitter,
                        iterations: f.iterations,
                        final_loglik: Some(f.final_loglik()),
                        training: None,
                    };
                    (PriorModel::Gmm(f.model), meta)
                }
                FitKind::Box => (PriorModel::Box(fit_box(&data, a.stiffness, a.margin)?), FitMetadata::default()),
                FitKind::Temporal => unreachable!(),
            }
        }
    };
    emit(a.out.as_deref(), &model_to_json(&model, &meta)?)
}

#[derive(Serialize)]
struct EvalReport {
    model_type: String,
    count: usize,
    log_prob: Vec<f64>,
    mean: f64,
}

fn eval(a: &EvalArgs) -> Result<()> {
    let (model, _) = load_model(&a.model)?;
    let xs = match &model {
        PriorModel::TemporalGmm(_) => {
            compute_deltas(&load_sequence_csv(&a.data)?).iter().map(|d| d.stacked()).collect()
        }
        _ => load_pose_csv(&a.data)?.samples,
    };
    if xs.is_empty() {
        return Err(Error::EmptyBody);
    }
    let log_prob = log_prob_batch(&model, &xs)?;
    let mean = log_prob.iter().sum::<f64>() / log_prob.len() as f64;
    let report = EvalReport { model_type: model.model_type().to_string(), count: xs.len(), log_prob, mean };
    emit_json(a.out.as_deref(), &report)
}

#[derive(Serialize)]
struct HistogramReport {
    edges: Vec<f64>,
    counts: Vec<u64>,
}

#[derive(Serialize)]
struct AnalyzeReport {
    dims: Vec<usize>,
    eigenvalues: Vec<f64>,
    first_component: Vec<f64>,
    samples_used: usize,
    normal: Normal1D,
    feasible_lo: f64,
    feasible_hi: f64,
    infeasible_mass: f64,
    histogram: HistogramReport,
}

fn analyze(a: &AnalyzeArgs) -> Result<()> {
    if a.samples < 2 || a.bins == 0 {
        return Err(Error::invalid("analyze needs at least 2 samples and 1 bin"));
    }
    let data = load_pose_csv(&a.data)?;
    let dims: Vec<usize> = if a.dims.is_empty() { (0..data.dim).collect() } else { a.dims.clone() };
    let pca = fit_pca(&data, &dims)?;
    let picked: Vec<Vec<f64>> = if data.len() <= a.samples {
        data.samples.iter().map(|s| pca.select(s)).collect()
    } else {
        let mut rng = rng_from_seed(a.seed);
        index::sample(&mut rng, data.len(), a.samples).into_iter().map(|i| pca.select(&data.samples[i])).collect()
    };
    let coords: Vec<f64> = reorient(&pca, &picked)?.into_iter().map(|q| q[0]).collect();
    let normal = fit_normal_1d(&coords)?;
    let hist = histogram(&coords, a.bins)?;
    if let Some(p) = &a.hist {
        fs::write(p, hist.to_csv()).map_err(io_err(p))?;
    }
    let report = AnalyzeReport {
        dims,
        eigenvalues: pca.eigenvalues.clone(),
        first_component: pca.component(0),
        samples_used: coords.len(),
        normal,
        feasible_lo: a.feasible_lo,
        feasible_hi: a.feasible_hi,
        infeasible_mass: infeasible_mass(&normal, a.feasible_lo, a.feasible_hi)?,
        histogram: HistogramReport { edges: hist.edges, counts: hist.counts },
    };
    emit_json(a.out.as_deref(), &report)
}

fn train_vae(a: &TrainVaeArgs) -> Result<()> {
    let data = load_pose_csv(&a.data)?;
    if data.dim % 3 != 0 {
        return Err(Error::invalid(format!("pose width {} is not a multiple of 3", data.dim)));
    }
    let model = VaeModel::init(data.dim / 3, a.latent, &[a.hidden, a.hidden], LossWeights::default(), a.seed)?;
    let optimizer = match a.optimizer {
        OptimizerKind::Sgd => Optimizer::Sgd,
        OptimizerKind::Adam => Optimizer::adam(),
    };
    let cfg = TrainConfig { epochs: a.epochs, batch_size: a.batch, learning_rate: a.lr, seed: a.seed, optimizer };
    let (trained, trace) = vae::train(&model, &data, &cfg)?;
    if let Some(p) = &a.trace {
        fs::write(p, loss_trace_csv(&trace)).map_err(io_err(p))?;
    }
    let training = TrainingMetadata::from_run(&cfg, &trace);
    let meta = FitMetadata {
        seed: Some(a.seed),
        jitter: 0.0,
        iterations: a.epochs,
        final_loglik: None,
        training: Some(training),
    };
    emit(a.out.as_deref(), &model_to_json(&PriorModel::Vae(trained), &meta)?)
}

fn recover(a: &RecoverArgs) -> Result<()> {
    let (model, _) = load_model(&a.model)?;
    let obs: Observation = serde_json::from_str(&read(&a.obs)?)?;
    let cfg = RecoveryConfig { max_iter: a.max_iter, step: a.step, tol: a.tol };
    let result = recover_pose(&obs, &model, a.lambda, &cfg)?;
    emit_json(a.out.as_deref(), &result)
}

fn grad_check(a: &GradCheckArgs) -> Result<GradCheckReport> {
    let (model, _) = load_model(&a.model)?;
    let h = a.step.unwrap_or_else(|| gradcheck::default_step(&model));
    if !(h > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let report = gradcheck::grad_check(&model, a.count, a.seed, h)?;
    emit_json(a.out.as_deref(), &report)?;
    Ok(report)
}

/// Runs a parsed command and maps the outcome to an exit code.
pub fn execute(cli: &Cli) -> i32 {
    let outcome = match &cli.command {
        Command::Gen(a) => gen(a).map(|_| EXIT_OK),
        Command::Fit(a) => fit(a).map(|_| EXIT_OK),
        Command::Eval(a) => eval(a).map(|_| EXIT_OK),
        Command::Analyze(a) => analyze(a).map(|_| EXIT_OK),
        Command::TrainVae(a) => train_vae(a).map(|_| EXIT_OK),
        Command::Recover(a) => recover(a).map(|_| EXIT_OK),
        Command::GradCheck(a) => grad_check(a).map(|r| {
            if r.max_rel_error > gradcheck::FAIL_THRESHOLD || r.max_rel_error.is_nan() {
                eprintln!("gradient check failed: max relative error {:e}", r.max_rel_error);
                EXIT_NUMERICAL
            } else {
                EXIT_OK
            }
        }),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                EXIT_NUMERICAL
            } else {
                EXIT_DATA
            }
        }
    }
}

/// Parses `argv` (including the program name) and runs it.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(argv) {
        Ok(cli) => execute(&cli),
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn clap_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn usage_errors() {
        assert_eq!(run(["poseprior", "fit", "--model", "gmm", "--data", "x.csv", "--k", "0"]), EXIT_USAGE);
        assert_eq!(run(["poseprior", "eval", "--bogus"]), EXIT_USAGE);
        assert_eq!(run(["poseprior"]), EXIT_USAGE);
    }

    #[test]
    fn missing_file_is_data_error() {
        assert_eq!(run(["poseprior", "eval", "--model", "/nonexistent/m.json", "--data", "/nonexistent/d.csv"]), EXIT_DATA);
    }
}

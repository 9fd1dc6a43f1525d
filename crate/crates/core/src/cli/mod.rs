//! Command-line front end. Arguments are resolved into a [`Job`], which is
//! written as TOML (for replay) and then run.

mod io;
mod jobs;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use io::read_values;
pub use jobs::{
    BenchJob, CasesJob, DataOpts, EssentialJob, EvalJob, ExtractJob, FitJob, Job, LipschitzJob, LrScoresJob,
    ScoreJob, ShellJob, SplitPart, Theorem1Job, TrainJob,
};

use crate::detectors::DEFAULT_DECISION_QUANTILE;
use crate::error::{LpathError, Result};
use crate::eval::BenchConfig;
use crate::stats::{DEFAULT_P, DEFAULT_Q};
use crate::vae::{Objective, TrainConfig};

#[derive(Parser, Debug)]
#[command(name = "lpath", version, about = "Likelihood-path OOD detection with VAEs")]
struct Cli {
    /// Also write the resolved configuration to this file.
    #[arg(long, global = true, value_name = "FILE")]
    config_out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a VAE and write its checkpoint.
    Train(TrainArgs),
    /// Extract u/v/w statistics into a feature dump.
    Extract(ExtractArgs),
    /// Fit the conditioning pipeline and a detector on IID features.
    Fit(FitArgs),
    /// Score a feature dump with a fitted detector.
    Score(ScoreArgs),
    /// AUROC of two score files (higher = more OOD).
    Eval(EvalArgs),
    /// Geometry diagnostics.
    #[command(subcommand)]
    Diagnose(Diagnose),
    /// Run a benchmark description end to end.
    Bench(BenchArgs),
    /// Re-run a resolved configuration file.
    #[command(alias = "run")]
    Replay {
        config: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
enum Diagnose {
    /// Essential distance or margin trimming budgets in one dimension.
    EssentialDistance(EssentialArgs),
    /// Encoder co-Lipschitz fit and decoder Lipschitz estimates.
    Lipschitz(LipschitzArgs),
    /// Concentration of latent mean and sigma norms around their shells.
    Shell(ShellArgs),
    /// Four-way overlap split of OOD samples on u and v.
    Cases(CasesArgs),
    /// Check the guaranteed-separation inequalities over IID/OOD pairs.
    Theorem1(Theorem1Args),
    /// Average likelihood-ratio scores against an IID reference set.
    LrScores(LrArgs),
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// Directory with dataset files (default: $LPATH_DATA_DIR or ./data).
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Part of the seeded split to use.
    #[arg(long, value_enum, default_value_t = SplitPart::All)]
    split: SplitPart,
    #[arg(long, default_value_t = 0.9)]
    train_fraction: f64,
    /// Seed for the split and synthetic datasets.
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    /// Keep at most this many rows.
    #[arg(long)]
    max_rows: Option<usize>,
    /// Rows drawn for `synth:` datasets.
    #[arg(long, default_value_t = 2000)]
    synth_rows: usize,
}

impl From<DataArgs> for DataOpts {
    fn from(a: DataArgs) -> Self {
        DataOpts {
            data_dir: a.data_dir,
            split: a.split,
            train_fraction: a.train_fraction,
            split_seed: a.split_seed,
            max_rows: a.max_rows,
            synth_rows: a.synth_rows,
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// `mnist`, `fmnist[:vflip|:hflip]`, an IDX path or `synth:<spec>[@label]`.
    #[arg(long)]
    dataset: String,
    #[arg(long, default_value = "model.lpvw")]
    out: PathBuf,
    /// TOML file with training hyperparameters; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    latent: Option<usize>,
    #[arg(long)]
    objective: Option<Objective>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Hidden layer sizes, e.g. `512,256`.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    decoder_sigma: Option<f64>,
    #[arg(long)]
    kl_weight: Option<f64>,
    #[arg(long)]
    mmd_weight: Option<f64>,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args, Debug)]
struct ExtractArgs {
    #[arg(long)]
    dataset: String,
    #[arg(long)]
    model: PathBuf,
    /// Low-latent model supplying u (paired statistics).
    #[arg(long)]
    model_lo: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Statistics to keep, e.g. `u_p,u_q,v,w` (default: all nine).
    #[arg(long)]
    features: Option<String>,
    #[arg(long, default_value_t = DEFAULT_P)]
    p: f64,
    #[arg(long, default_value_t = DEFAULT_Q)]
    q: f64,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Feature dump of IID training data.
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// `copod` or `mahalanobis`.
    #[arg(long, default_value = "copod")]
    detector: String,
    /// Column names to use, e.g. `u_p,u_q,v,w`.
    #[arg(long)]
    columns: Option<String>,
    #[arg(long)]
    no_quantile: bool,
    #[arg(long)]
    no_whiten: bool,
    #[arg(long, default_value_t = DEFAULT_DECISION_QUANTILE)]
    decision_quantile: f64,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    #[arg(long)]
    detector: PathBuf,
    #[arg(long)]
    features: PathBuf,
    /// Scores CSV; printed when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    iid_scores: PathBuf,
    #[arg(long)]
    ood_scores: PathBuf,
    /// Header name of the score column (default `score`, else the last column).
    #[arg(long)]
    column: Option<String>,
    /// Write a histogram CSV of both score sets.
    #[arg(long)]
    histogram: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Benchmark TOML; defaults apply to missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for the report, per-case and latent tables and raw scores.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(group = clap::ArgGroup::new("trim").multiple(false))]
struct EssentialArgs {
    /// Two analytic laws, e.g. `gaussian:-6,1 gaussian:6,1`.
    #[arg(long, num_args = 2, value_names = ["IID", "OOD"], conflicts_with_all = ["iid_values", "ood_values"])]
    analytic: Option<Vec<String>>,
    /// File of IID values.
    #[arg(long, requires = "ood_values")]
    iid_values: Option<PathBuf>,
    #[arg(long, requires = "iid_values")]
    ood_values: Option<PathBuf>,
    /// Trim budgets for IID and OOD.
    #[arg(long, num_args = 2, value_names = ["EPS_IID", "EPS_OOD"], conflicts_with = "margin")]
    eps: Option<Vec<f64>>,
    /// Solve for the smallest total budget giving this margin.
    #[arg(long)]
    margin: Option<f64>,
    /// Trim both tails (Gaussians: mu ± k sigma).
    #[arg(long, group = "trim")]
    symmetric: bool,
    /// Trim exactly half the budget from each tail.
    #[arg(long, group = "trim")]
    symmetric_quantile: bool,
    /// Trim only the tail facing the other distribution.
    #[arg(long, group = "trim")]
    facing: bool,
    /// Column of the value files.
    #[arg(long)]
    column: Option<String>,
    /// Histogram CSV of the two samples.
    #[arg(long)]
    histogram: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct LipschitzArgs {
    #[arg(long)]
    model: PathBuf,
    /// Probe points (inputs of the encoder).
    #[arg(long)]
    dataset: String,
    #[arg(long, default_value_t = 20_000)]
    pairs: usize,
    /// Offset cap for the co-Lipschitz fit (default 10% of median input distance).
    #[arg(long)]
    k_cap: Option<f64>,
    #[arg(long, default_value_t = 64)]
    jacobian_points: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the (K, k) frontier as CSV.
    #[arg(long)]
    frontier: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args, Debug)]
struct ShellArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    dataset: String,
    /// Shell tolerance (default 0.15·sqrt(latent_dim)).
    #[arg(long)]
    eps: Option<f64>,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args, Debug)]
struct CasesArgs {
    /// IID feature dump with u and v columns.
    #[arg(long)]
    iid_features: PathBuf,
    #[arg(long)]
    ood_features: PathBuf,
    /// Write hist_u.csv, hist_v.csv and cases.csv here.
    #[arg(long)]
    histogram_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct Theorem1Args {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    iid: String,
    #[arg(long)]
    ood: String,
    #[arg(long)]
    m_inter: f64,
    /// Largest IID reconstruction error (estimated when absent).
    #[arg(long)]
    m_intra: Option<f64>,
    /// Pairs used to fit the constants.
    #[arg(long, default_value_t = 20_000)]
    fit_pairs: usize,
    /// IID/OOD pairs checked; all pairs when there are fewer.
    #[arg(long, default_value_t = 100_000)]
    max_pairs: usize,
    #[arg(long)]
    k_cap: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args, Debug)]
struct LrArgs {
    #[arg(long)]
    model: PathBuf,
    /// IID reference dataset.
    #[arg(long)]
    reference: String,
    /// Rows to score.
    #[arg(long)]
    dataset: String,
    #[arg(long, default_value_t = 64)]
    mc_samples: usize,
    #[arg(long, default_value_t = 1000)]
    max_reference: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &PathBuf) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| LpathError::InvalidConfig(format!("{}: {e}", path.display())))
}

fn resolve_train(a: TrainArgs) -> Result<Job> {
    let mut m: TrainConfig = match &a.config {
        Some(p) => read_toml(p)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = a.latent {
        m.latent_dim = v;
    }
    if let Some(v) = a.objective {
        m.objective = v;
    }
    if let Some(v) = a.epochs {
        m.epochs = v;
    }
    if let Some(v) = a.hidden {
        m.hidden_sizes = v;
    }
    if let Some(v) = a.batch_size {
        m.batch_size = v;
    }
    if let Some(v) = a.lr {
        m.learning_rate = v;
    }
    if let Some(v) = a.seed {
        m.seed = v;
    }
    if let Some(v) = a.decoder_sigma {
        m.decoder_sigma = v;
    }
    if let Some(v) = a.kl_weight {
        m.kl_weight = v;
    }
    if let Some(v) = a.mmd_weight {
        m.mmd_weight = v;
    }
    m.validate()?;
    Ok(Job::Train(TrainJob {
        dataset: a.dataset,
        out: a.out,
        data: a.data.into(),
        model: m,
    }))
}

fn resolve(cmd: Command) -> Result<Job> {
    Ok(match cmd {
        Command::Train(a) => resolve_train(a)?,
        Command::Extract(a) => Job::Extract(ExtractJob {
            dataset: a.dataset,
            model: a.model,
            model_lo: a.model_lo,
            out: a.out,
            features: a.features,
            p: a.p,
            q: a.q,
            data: a.data.into(),
        }),
        Command::Fit(a) => Job::Fit(FitJob {
            features: a.features,
            out: a.out,
            detector: a.detector,
            columns: a.columns,
            quantile_transform: !a.no_quantile,
            whiten: !a.no_whiten,
            decision_quantile: a.decision_quantile,
        }),
        Command::Score(a) => Job::Score(ScoreJob {
            detector: a.detector,
            features: a.features,
            out: a.out,
        }),
        Command::Eval(a) => Job::Eval(EvalJob {
            iid_scores: a.iid_scores,
            ood_scores: a.ood_scores,
            column: a.column,
            histogram: a.histogram,
        }),
        Command::Bench(a) => {
            let bench: BenchConfig = match &a.config {
                Some(p) => read_toml(p)?,
                None => BenchConfig::default(),
            };
            bench.validate()?;
            Job::Bench(BenchJob {
                out_dir: a.out_dir,
                bench,
            })
        }
        Command::Diagnose(d) => resolve_diagnose(d)?,
        Command::Replay { config } => {
            let text = std::fs::read_to_string(&config)?;
            Job::from_toml(&text)?
        }
    })
}

fn resolve_diagnose(d: Diagnose) -> Result<Job> {
    Ok(match d {
        Diagnose::EssentialDistance(a) => {
            let (iid, ood) = match (a.analytic, a.iid_values, a.ood_values) {
                (Some(v), None, None) => (v[0].clone(), v[1].clone()),
                (None, Some(i), Some(o)) => (i.display().to_string(), o.display().to_string()),
                _ => {
                    return Err(LpathError::InvalidConfig(
                        "give --analytic IID OOD or --iid-values and --ood-values".into(),
                    ))
                }
            };
            let mode = if a.symmetric {
                "symmetric"
            } else if a.symmetric_quantile {
                "symmetric-quantile"
            } else if a.facing {
                "facing"
            } else {
                "auto"
            };
            if a.eps.is_some() == a.margin.is_some() {
                return Err(LpathError::InvalidConfig("give exactly one of --eps or --margin".into()));
            }
            Job::EssentialDistance(EssentialJob {
                iid,
                ood,
                eps: a.eps.map(|v| [v[0], v[1]]),
                margin: a.margin,
                mode: mode.into(),
                column: a.column,
                histogram: a.histogram,
            })
        }
        Diagnose::Lipschitz(a) => Job::Lipschitz(LipschitzJob {
            model: a.model,
            dataset: a.dataset,
            pairs: a.pairs,
            k_cap: a.k_cap,
            jacobian_points: a.jacobian_points,
            seed: a.seed,
            frontier: a.frontier,
            data: a.data.into(),
        }),
        Diagnose::Shell(a) => Job::Shell(ShellJob {
            model: a.model,
            dataset: a.dataset,
            eps: a.eps,
            data: a.data.into(),
        }),
        Diagnose::Cases(a) => Job::Cases(CasesJob {
            iid_features: a.iid_features,
            ood_features: a.ood_features,
            histogram_dir: a.histogram_dir,
        }),
        Diagnose::Theorem1(a) => Job::Theorem1(Theorem1Job {
            model: a.model,
            iid: a.iid,
            ood: a.ood,
            m_inter: a.m_inter,
            m_intra: a.m_intra,
            fit_pairs: a.fit_pairs,
            max_pairs: a.max_pairs,
            k_cap: a.k_cap,
            seed: a.seed,
            data: a.data.into(),
        }),
        Diagnose::LrScores(a) => Job::LrScores(LrScoresJob {
            model: a.model,
            reference: a.reference,
            dataset: a.dataset,
            mc_samples: a.mc_samples,
            max_reference: a.max_reference,
            seed: a.seed,
            out: a.out,
            data: a.data.into(),
        }),
    })
}

/// Caps the global thread pool from `LPATH_THREADS`.
pub fn init_threads() -> Result<()> {
    let Some(v) = std::env::var_os("LPATH_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .to_str()
        .and_then(|s| s.trim().parse().ok())
        .filter(|&n| n > 0)
        .ok_or_else(|| LpathError::InvalidConfig(format!("LPATH_THREADS must be a positive integer, got {v:?}")))?;
    // A pool that already exists (a second call in one process) is kept.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn run(cli: Cli, stdout: &mut dyn Write) -> Result<()> {
    init_threads()?;
    let replay = matches!(cli.command, Command::Replay { .. });
    let job = resolve(cli.command)?;
    let target = cli.config_out.or_else(|| if replay { None } else { job.default_config_path() });
    if let Some(p) = target {
        io::write_text(&p, &job.to_toml()?)?;
    }
    job.run(stdout)
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code: 0 ok, 2 usage/config, 3 data/format,
/// 4 numeric failure.
pub fn execute<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = stderr.write_all(text.as_bytes());
                2
            } else {
                let _ = stdout.write_all(text.as_bytes());
                0
            };
        }
    };
    match run(cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

//! Fully resolved command descriptions. Each one serializes to the TOML
//! written next to its outputs and runs identically when read back.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{concatenate, Axis};
use serde::{Deserialize, Serialize};

use super::io::{read_values, write_text};
use crate::datasets::{data_dir, split, Dataset};
use crate::detectors::{load_detector, save_detector, DetectorOptions, FittedDetector};
use crate::error::{LpathError, Result};
use crate::eval::{
    auroc, freedman_diaconis_edges, histogram_csv, load_bench_dataset, run_benchmark, BenchConfig,
};
use crate::geometry::{
    classify_cases, essential_distance_1d, estimate_co_lipschitz, estimate_lipschitz, jacobian_bound,
    latent_shells, m_intra_estimate, margin_essential_eps, theorem1_check, Distribution1d, LikelihoodRatioScorer,
    TrimMode,
};
use crate::rng::stream_rng;
use crate::stats::{
    build_feature_set, extract_stats_2m_batch, extract_stats_batch, parse_selection, read_feature_set,
    write_feature_set, FeatureSet, NormKind, StatId, Statistic,
};
use crate::vae::{load_model, save_model, train, MlpVae, TrainConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SplitPart {
    #[default]
    All,
    Train,
    Test,
}

/// How dataset specs are turned into rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataOpts {
    pub data_dir: Option<PathBuf>,
    pub split: SplitPart,
    pub train_fraction: f64,
    pub split_seed: u64,
    pub max_rows: Option<usize>,
    pub synth_rows: usize,
}

impl Default for DataOpts {
    fn default() -> Self {
        DataOpts {
            data_dir: None,
            split: SplitPart::All,
            train_fraction: 0.9,
            split_seed: 0,
            max_rows: None,
            synth_rows: 2000,
        }
    }
}

impl DataOpts {
    pub fn load(&self, spec: &str) -> Result<Dataset> {
        let dir = self.data_dir.clone().unwrap_or_else(data_dir);
        let ds = load_bench_dataset(spec, &dir, self.synth_rows, self.split_seed)?;
        let ds = match self.split {
            SplitPart::All => ds,
            part => {
                let f = self.train_fraction;
                if !(f > 0.0 && f < 1.0) {
                    return Err(LpathError::InvalidConfig(format!("train_fraction must lie in (0,1), got {f}")));
                }
                let (tr, _, te) = split(&ds, (f, 0.0, 1.0 - f), self.split_seed)?;
                if part == SplitPart::Train {
                    tr
                } else {
                    te
                }
            }
        };
        let ds = match self.max_rows {
            Some(n) => ds.head(n),
            None => ds,
        };
        if ds.is_empty() {
            return Err(LpathError::InsufficientData(format!("{spec}: no rows selected")));
        }
        Ok(ds)
    }
}

fn all_stat_ids() -> Vec<StatId> {
    let mut v = Vec::new();
    for s in [Statistic::U, Statistic::V, Statistic::W] {
        for n in [NormKind::L2, NormKind::Lp, NormKind::Lq] {
            v.push(StatId::new(s, n));
        }
    }
    v
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainJob {
    pub dataset: String,
    pub out: PathBuf,
    #[serde(default)]
    pub data: DataOpts,
    #[serde(default)]
    pub model: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractJob {
    pub dataset: String,
    pub model: PathBuf,
    /// Low-latent model supplying `u` (paired extraction).
    pub model_lo: Option<PathBuf>,
    pub out: PathBuf,
    /// Column selection; all nine statistics when absent.
    pub features: Option<String>,
    pub p: f64,
    pub q: f64,
    #[serde(default)]
    pub data: DataOpts,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitJob {
    pub features: PathBuf,
    pub out: PathBuf,
    pub detector: String,
    /// Comma-separated column names; all columns when absent.
    pub columns: Option<String>,
    pub quantile_transform: bool,
    pub whiten: bool,
    pub decision_quantile: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreJob {
    pub detector: PathBuf,
    pub features: PathBuf,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalJob {
    pub iid_scores: PathBuf,
    pub ood_scores: PathBuf,
    pub column: Option<String>,
    pub histogram: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchJob {
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub bench: BenchConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EssentialJob {
    /// `gaussian:mu,sigma`, `uniform:a,b` or a file of values.
    pub iid: String,
    pub ood: String,
    /// Trim budgets; exclusive with `margin`.
    pub eps: Option<[f64; 2]>,
    /// Solve for the budgets achieving this margin.
    pub margin: Option<f64>,
    pub mode: String,
    pub column: Option<String>,
    pub histogram: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LipschitzJob {
    pub model: PathBuf,
    pub dataset: String,
    pub pairs: usize,
    pub k_cap: Option<f64>,
    pub jacobian_points: usize,
    pub seed: u64,
    pub frontier: Option<PathBuf>,
    #[serde(default)]
    pub data: DataOpts,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShellJob {
    pub model: PathBuf,
    pub dataset: String,
    /// Shell tolerance; `0.15 * sqrt(latent_dim)` when absent.
    pub eps: Option<f64>,
    #[serde(default)]
    pub data: DataOpts,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CasesJob {
    pub iid_features: PathBuf,
    pub ood_features: PathBuf,
    pub histogram_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Theorem1Job {
    pub model: PathBuf,
    pub iid: String,
    pub ood: String,
    pub m_inter: f64,
    /// Estimated on the IID rows when absent.
    pub m_intra: Option<f64>,
    pub fit_pairs: usize,
    pub max_pairs: usize,
    pub k_cap: Option<f64>,
    pub seed: u64,
    #[serde(default)]
    pub data: DataOpts,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrScoresJob {
    pub model: PathBuf,
    pub reference: String,
    pub dataset: String,
    pub mc_samples: usize,
    pub max_reference: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub data: DataOpts,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Job {
    Train(TrainJob),
    Extract(ExtractJob),
    Fit(FitJob),
    Score(ScoreJob),
    Eval(EvalJob),
    Bench(BenchJob),
    EssentialDistance(EssentialJob),
    Lipschitz(LipschitzJob),
    Shell(ShellJob),
    Cases(CasesJob),
    Theorem1(Theorem1Job),
    LrScores(LrScoresJob),
}

impl Job {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| LpathError::InvalidConfig(format!("cannot serialize config: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Job> {
        toml::from_str(text).map_err(|e| LpathError::InvalidConfig(format!("bad config: {e}")))
    }

    /// Where the resolved config goes when no explicit path is given.
    pub fn default_config_path(&self) -> Option<PathBuf> {
        let beside = |p: &Path| {
            let mut s = p.as_os_str().to_owned();
            s.push(".resolved.toml");
            PathBuf::from(s)
        };
        match self {
            Job::Train(j) => Some(beside(&j.out)),
            Job::Extract(j) => Some(beside(&j.out)),
            Job::Fit(j) => Some(beside(&j.out)),
            Job::Score(j) => j.out.as_deref().map(beside),
            Job::Bench(j) => j.out_dir.as_ref().map(|d| d.join("resolved.toml")),
            Job::LrScores(j) => j.out.as_deref().map(beside),
            Job::Lipschitz(j) => j.frontier.as_deref().map(beside),
            Job::Eval(_) | Job::EssentialDistance(_) | Job::Shell(_) | Job::Cases(_) | Job::Theorem1(_) => None,
        }
    }

    pub fn run(&self, out: &mut dyn Write) -> Result<()> {
        let text = match self {
            Job::Train(j) => run_train(j)?,
            Job::Extract(j) => run_extract(j)?,
            Job::Fit(j) => run_fit(j)?,
            Job::Score(j) => run_score(j)?,
            Job::Eval(j) => run_eval(j)?,
            Job::Bench(j) => run_bench(j)?,
            Job::EssentialDistance(j) => run_essential(j)?,
            Job::Lipschitz(j) => run_lipschitz(j)?,
            Job::Shell(j) => run_shell(j)?,
            Job::Cases(j) => run_cases(j)?,
            Job::Theorem1(j) => run_theorem1(j)?,
            Job::LrScores(j) => run_lr(j)?,
        };
        out.write_all(text.as_bytes())?;
        Ok(())
    }
}

fn run_train(j: &TrainJob) -> Result<String> {
    j.model.validate()?;
    let ds = j.data.load(&j.dataset)?;
    log::info!("training on {} rows of {}", ds.len(), ds.name);
    let (model, hist) = train(ds.data.view(), &j.model)?;
    save_model(&model, &j.out)?;
    let mut csv = String::from("epoch,train_total,train_recon,train_kl,train_mmd,val_total,val_recon,val_kl,val_mmd\n");
    for e in &hist.epochs {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{}",
            e.epoch, e.train.total, e.train.recon, e.train.kl, e.train.mmd, e.val.total, e.val.recon, e.val.kl, e.val.mmd
        );
    }
    let mut hist_path = j.out.as_os_str().to_owned();
    hist_path.push(".history.csv");
    write_text(Path::new(&hist_path), &csv)?;
    let last = hist.epochs.last().expect("at least one epoch");
    Ok(format!(
        "rows = {}\nepochs = {}\nbest_epoch = {}\nfinal_train_loss = {:?}\nfinal_val_loss = {:?}\ncheckpoint = {}\n",
        ds.len(),
        hist.epochs.len(),
        hist.best_epoch,
        last.train.total,
        last.val.total,
        j.out.display()
    ))
}

fn run_extract(j: &ExtractJob) -> Result<String> {
    let ds = j.data.load(&j.dataset)?;
    let hi = load_model(&j.model)?;
    let records = match &j.model_lo {
        Some(p) => extract_stats_2m_batch(&load_model(p)?, &hi, ds.data.view(), j.p, j.q)?,
        None => extract_stats_batch(&hi, ds.data.view(), j.p, j.q)?,
    };
    let sel = match &j.features {
        Some(s) => parse_selection(s)?,
        None => all_stat_ids(),
    };
    let fs = build_feature_set(&records, &sel)?;
    write_feature_set(&fs, &j.out)?;
    Ok(format!("rows = {}\ncolumns = {}\nout = {}\n", fs.rows(), fs.names.join(","), j.out.display()))
}

fn select_columns(fs: FeatureSet, columns: &Option<String>) -> Result<FeatureSet> {
    match columns {
        Some(c) => {
            let names: Vec<String> = c.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
            fs.select(&names)
        }
        None => Ok(fs),
    }
}

fn run_fit(j: &FitJob) -> Result<String> {
    let fs = select_columns(read_feature_set(&j.features)?, &j.columns)?;
    let opts = DetectorOptions {
        kind: j.detector.parse()?,
        quantile_transform: j.quantile_transform,
        whiten: j.whiten,
        decision_quantile: j.decision_quantile,
        ..Default::default()
    };
    let det = FittedDetector::fit(&fs, &opts)?;
    save_detector(&det, &j.out)?;
    Ok(format!(
        "detector = {}\ncolumns = {}\nrows = {}\nthreshold = {:?}\nout = {}\n",
        det.kind().as_str(),
        det.names.join(","),
        fs.rows(),
        det.scorecard.threshold(),
        j.out.display()
    ))
}

fn run_score(j: &ScoreJob) -> Result<String> {
    let det = load_detector(&j.detector)?;
    let fs = read_feature_set(&j.features)?;
    let scores = det.score(&fs)?;
    let mut csv = String::from("index,score,ood\n");
    for (i, s) in scores.iter().enumerate() {
        let _ = writeln!(csv, "{i},{s:?},{}", det.decide(*s));
    }
    match &j.out {
        Some(p) => {
            write_text(p, &csv)?;
            let flagged = scores.iter().filter(|s| det.decide(**s)).count();
            Ok(format!("rows = {}\nflagged = {flagged}\nout = {}\n", scores.len(), p.display()))
        }
        None => Ok(csv),
    }
}

fn run_eval(j: &EvalJob) -> Result<String> {
    let iid = read_values(&j.iid_scores, j.column.as_deref())?;
    let ood = read_values(&j.ood_scores, j.column.as_deref())?;
    let a = auroc(&iid, &ood)?;
    if let Some(h) = &j.histogram {
        let union: Vec<f64> = iid.iter().chain(&ood).copied().collect();
        write_text(h, &histogram_csv(&iid, &ood, &freedman_diaconis_edges(&union)?)?)?;
    }
    Ok(format!("{a:?}\n"))
}

fn run_bench(j: &BenchJob) -> Result<String> {
    let res = run_benchmark(&j.bench)?;
    let table = res.report.to_table();
    if let Some(dir) = &j.out_dir {
        write_text(&dir.join("report.csv"), &res.report.to_csv())?;
        write_text(&dir.join("report.txt"), &table)?;
        if !res.report.case_rows.is_empty() {
            write_text(&dir.join("cases.csv"), &res.report.cases_to_csv())?;
        }
        if !res.report.latent_rows.is_empty() {
            write_text(&dir.join("latent.csv"), &res.report.latent_to_csv())?;
        }
        for s in &res.scores {
            let safe = |t: &str| t.replace(|c: char| !c.is_ascii_alphanumeric() && c != '-' && c != '.', "_");
            let name = format!("scores_{}_{}_{}.csv", safe(&s.ood), s.detector, safe(&s.features));
            let mut csv = String::from("set,score\n");
            for v in &s.iid {
                let _ = writeln!(csv, "iid,{v:?}");
            }
            for v in &s.ood_scores {
                let _ = writeln!(csv, "ood,{v:?}");
            }
            write_text(&dir.join(name), &csv)?;
        }
    }
    Ok(table)
}

fn distribution(spec: &str, column: Option<&str>) -> Result<Distribution1d> {
    match spec.parse::<Distribution1d>() {
        Ok(d) => Ok(d),
        Err(_) if Path::new(spec).is_file() => Distribution1d::from_unsorted(read_values(Path::new(spec), column)?),
        Err(e) => Err(e),
    }
}

fn run_essential(j: &EssentialJob) -> Result<String> {
    let iid = distribution(&j.iid, j.column.as_deref())?;
    let ood = distribution(&j.ood, j.column.as_deref())?;
    let mode: TrimMode = j.mode.parse()?;
    let report = match (j.eps, j.margin) {
        (Some([a, b]), None) => essential_distance_1d(&iid, &ood, a, b, mode)?,
        (None, Some(m)) => margin_essential_eps(&iid, &ood, m)?,
        _ => {
            return Err(LpathError::InvalidConfig("give exactly one of --eps or --margin".into()));
        }
    };
    if let Some(h) = &j.histogram {
        let (Distribution1d::Empirical(a), Distribution1d::Empirical(b)) = (&iid, &ood) else {
            return Err(LpathError::InvalidConfig("a histogram needs sampled values on both sides".into()));
        };
        let union: Vec<f64> = a.iter().chain(b).copied().collect();
        write_text(h, &histogram_csv(a, b, &freedman_diaconis_edges(&union)?)?)?;
    }
    Ok(format!("iid = {iid}\nood = {ood}\nmode = {mode}\n{}", report.to_report()))
}

fn mu_map(model: &MlpVae) -> impl Fn(&[f64]) -> Result<Vec<f64>> + Sync + '_ {
    move |x: &[f64]| model.encode(x).map(|(m, _)| m)
}

fn dec_map(model: &MlpVae) -> impl Fn(&[f64]) -> Result<Vec<f64>> + Sync + '_ {
    move |z: &[f64]| model.decode(z)
}

fn run_lipschitz(j: &LipschitzJob) -> Result<String> {
    let model = load_model(&j.model)?;
    let ds = j.data.load(&j.dataset)?;
    let mut rng = stream_rng(j.seed, 0x11F);
    let fit = estimate_co_lipschitz(&mu_map(&model), ds.data.view(), j.pairs, j.k_cap, &mut rng)?;
    let (mu, _) = model.encode_batch(ds.data.view())?;
    let l_dec = estimate_lipschitz(&dec_map(&model), mu.view(), j.pairs, &mut rng)?;
    let jb = jacobian_bound(&model, j.jacobian_points, &mut rng)?;
    if let Some(p) = &j.frontier {
        let mut csv = String::from("K_pairwise,k\n");
        for (k, off) in &fit.frontier {
            let _ = writeln!(csv, "{k:?},{off:?}");
        }
        write_text(p, &csv)?;
    }
    let e = &fit.estimate;
    Ok(format!(
        "probes = {}\npairs = {}\nencoder_K_pairwise = {:?}\nencoder_K = {:?}\nencoder_k = {:?}\nk_cap = {:?}\n\
         encoder_zero_offset_K_pairwise = {:?}\nencoder_L = {:?}\ndecoder_L = {:?}\ndecoder_jacobian_bound = {:?}\n",
        ds.len(),
        e.pair_count,
        e.co_lipschitz,
        2.0 * e.co_lipschitz,
        e.offset,
        fit.k_cap,
        fit.zero_offset_k,
        e.lipschitz,
        l_dec,
        jb
    ))
}

fn run_shell(j: &ShellJob) -> Result<String> {
    let model = load_model(&j.model)?;
    let ds = j.data.load(&j.dataset)?;
    let eps = j.eps.unwrap_or(0.15 * (model.latent_dim() as f64).sqrt());
    let s = latent_shells(&model, ds.data.view(), eps)?;
    Ok(format!(
        "rows = {}\nlatent_dim = {}\nsqrt_latent_dim = {:?}\n{}",
        ds.len(),
        model.latent_dim(),
        (model.latent_dim() as f64).sqrt(),
        s.to_report()
    ))
}

/// Column `stat` in l2 form, possibly carrying a paired-model suffix.
fn stat_column(fs: &FeatureSet, stat: &str) -> Result<Vec<f64>> {
    let prefix = format!("{stat}@");
    let name = fs
        .names
        .iter()
        .find(|n| *n == stat || n.starts_with(&prefix))
        .ok_or_else(|| LpathError::InvalidInput(format!("feature dump has no {stat:?} column (have {:?})", fs.names)))?;
    Ok(fs.column(name).expect("present").to_vec())
}

fn run_cases(j: &CasesJob) -> Result<String> {
    let iid = read_feature_set(&j.iid_features)?;
    let ood = read_feature_set(&j.ood_features)?;
    let (ui, uo) = (stat_column(&iid, "u")?, stat_column(&ood, "u")?);
    let (vi, vo) = (stat_column(&iid, "v")?, stat_column(&ood, "v")?);
    let r = classify_cases(&ui, &uo, &vi, &vo)?;
    if let Some(dir) = &j.histogram_dir {
        write_text(&dir.join("hist_u.csv"), &histogram_csv(&ui, &uo, &r.u_region.edges)?)?;
        write_text(&dir.join("hist_v.csv"), &histogram_csv(&vi, &vo, &r.v_region.edges)?)?;
        let mut csv = String::from("index,case\n");
        for (i, c) in r.labels.iter().enumerate() {
            let _ = writeln!(csv, "{i},{c}");
        }
        write_text(&dir.join("cases.csv"), &csv)?;
    }
    Ok(r.to_report())
}

fn run_theorem1(j: &Theorem1Job) -> Result<String> {
    let model = load_model(&j.model)?;
    let iid = j.data.load(&j.iid)?;
    let ood = j.data.load(&j.ood)?;
    let m_intra = match j.m_intra {
        Some(m) => m,
        None => m_intra_estimate(&model, iid.data.view())?,
    };
    let mut rng = stream_rng(j.seed, 0x7E1);
    let probes = concatenate(Axis(0), &[iid.data.view(), ood.data.view()])
        .map_err(|e| LpathError::InvalidInput(e.to_string()))?;
    let fit = estimate_co_lipschitz(&mu_map(&model), probes.view(), j.fit_pairs, j.k_cap, &mut rng)?;
    let (mu, _) = model.encode_batch(probes.view())?;
    let l_dec = estimate_lipschitz(&dec_map(&model), mu.view(), j.fit_pairs, &mut rng)?;
    let constants = fit.estimate.clone().with_lipschitz(l_dec);
    let encoder = |x: &[f64]| model.encode(x);
    let decoder = dec_map(&model);
    let report = theorem1_check(
        &encoder,
        &decoder,
        iid.data.view(),
        ood.data.view(),
        j.m_inter,
        &constants,
        m_intra,
        j.max_pairs,
        &mut rng,
    )?;
    Ok(report.to_report())
}

fn run_lr(j: &LrScoresJob) -> Result<String> {
    let model = load_model(&j.model)?;
    let reference = j.data.load(&j.reference)?.head(j.max_reference);
    let ds = j.data.load(&j.dataset)?;
    let mut rng = stream_rng(j.seed, 0x1A);
    let scorer = LikelihoodRatioScorer::new(&model, reference.data.view(), j.mc_samples, &mut rng)?;
    let scores = scorer.score_batch(ds.data.view())?;
    let mut csv = String::from("index,lambda_x,lambda_z\n");
    for (i, (x, z)) in scores.iter().enumerate() {
        let _ = writeln!(csv, "{i},{x:?},{z:?}");
    }
    match &j.out {
        Some(p) => {
            write_text(p, &csv)?;
            let mean = |f: fn(&(f64, f64)) -> f64| scores.iter().map(f).sum::<f64>() / scores.len() as f64;
            Ok(format!(
                "rows = {}\nreference_rows = {}\nmean_lambda_x = {:?}\nmean_lambda_z = {:?}\nout = {}\n",
                scores.len(),
                reference.len(),
                mean(|p| p.0),
                mean(|p| p.1),
                p.display()
            ))
        }
        None => Ok(csv),
    }
}

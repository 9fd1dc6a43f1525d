use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::auroc::{auroc, elbo_scores};
use super::report::{CaseRow, EvalReport, EvalRow, LatentRow};
use crate::datasets::{data_dir, resolve_dataset_in, split, synth_generate, Dataset, SynthSpec};
use crate::detectors::{DetectorKind, DetectorOptions, FittedDetector};
use crate::error::{LpathError, Result};
use crate::geometry::classify_cases;
use crate::rng::derive_seed;
use crate::stats::{
    build_feature_set, default_selection, extract_stats_2m_batch, extract_stats_batch, format_selection,
    parse_selection, LPathRecord, StatId,
};
use crate::vae::{load_model, train, MlpVae, TrainConfig};

pub const ELBO_TAG: &str = "elbo";

/// Benchmark description. Every field has a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// Dataset spec (`mnist`, `fmnist:vflip`, an IDX path, or
    /// `synth:<spec>[@label]`).
    pub iid: String,
    pub ood: Vec<String>,
    pub data_dir: Option<PathBuf>,
    /// Seed for splits and synthetic data; the model has its own.
    pub seed: u64,
    /// Share of IID rows used for training; the rest is the IID test set.
    pub train_fraction: f64,
    pub max_train_rows: Option<usize>,
    /// Cap on IID test rows and on OOD rows per dataset.
    pub max_eval_rows: Option<usize>,
    /// Rows drawn for synthetic datasets.
    pub synth_rows: usize,
    pub detectors: Vec<String>,
    /// Feature selections such as `u_p,u_q,v,w`.
    pub features: Vec<String>,
    pub quantile_transform: bool,
    pub whiten: bool,
    pub elbo_baseline: bool,
    /// Per-case AUROC from the four-way overlap split.
    pub per_case: bool,
    /// COPOD on every nonempty subset of the default statistics.
    pub feature_sweep: bool,
    /// Extra models trained at these latent sizes.
    pub latent_sweep: Vec<usize>,
    /// Latent size of a second, smaller model supplying `u`.
    pub dual_latent: Option<usize>,
    /// Load the model instead of training it.
    pub model_path: Option<PathBuf>,
    pub p: f64,
    pub q: f64,
    pub model: TrainConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            iid: "mnist".into(),
            ood: vec!["fmnist".into(), "mnist:vflip".into()],
            data_dir: None,
            seed: 0,
            train_fraction: 0.9,
            max_train_rows: None,
            max_eval_rows: None,
            synth_rows: 2000,
            detectors: vec!["copod".into()],
            features: vec![format_selection(&default_selection())],
            quantile_transform: true,
            whiten: true,
            elbo_baseline: true,
            per_case: false,
            feature_sweep: false,
            latent_sweep: Vec::new(),
            dual_latent: None,
            model_path: None,
            p: 0.5,
            q: 8.0,
            model: TrainConfig::default(),
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(LpathError::InvalidConfig(format!(
                "train_fraction must lie in (0,1), got {}",
                self.train_fraction
            )));
        }
        if self.ood.is_empty() {
            return Err(LpathError::InvalidConfig("no OOD datasets given".into()));
        }
        if self.detectors.is_empty() || self.features.is_empty() {
            return Err(LpathError::InvalidConfig("need at least one detector and feature set".into()));
        }
        for d in &self.detectors {
            d.parse::<DetectorKind>()?;
        }
        for f in &self.features {
            if parse_selection(f)?.is_empty() {
                return Err(LpathError::InvalidConfig("empty feature selection".into()));
            }
        }
        if self.latent_sweep.contains(&0) || self.dual_latent == Some(0) {
            return Err(LpathError::InvalidConfig("latent sizes must be positive".into()));
        }
        self.model.validate()
    }

    fn dir(&self) -> PathBuf {
        self.data_dir.clone().unwrap_or_else(data_dir)
    }

    fn detector_options(&self, kind: DetectorKind) -> DetectorOptions {
        DetectorOptions {
            kind,
            quantile_transform: self.quantile_transform,
            whiten: self.whiten,
            ..Default::default()
        }
    }
}

fn fnv1a(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

/// Resolves a dataset spec. Synthetic specs draw `synth_rows` rows from a
/// seed derived from `seed` and the spec text (label filter excluded), so
/// `synth:blobs:3@0` and `synth:blobs:3@1` are the two halves of one draw.
pub fn load_bench_dataset(spec: &str, dir: &Path, synth_rows: usize, seed: u64) -> Result<Dataset> {
    let Some(rest) = spec.strip_prefix("synth:") else {
        return resolve_dataset_in(spec, dir);
    };
    let (body, label) = match rest.rsplit_once('@') {
        Some((b, l)) => {
            let l: u8 = l
                .parse()
                .map_err(|_| LpathError::InvalidConfig(format!("bad label filter in {spec:?}")))?;
            (b, Some(l))
        }
        None => (rest, None),
    };
    let synth: SynthSpec = body.parse()?;
    let mut ds = synth_generate(synth, synth_rows, derive_seed(seed, fnv1a(body)))?;
    if let Some(l) = label {
        let labels = ds
            .labels
            .clone()
            .ok_or_else(|| LpathError::InvalidConfig(format!("{spec:?}: dataset has no labels")))?;
        let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == l).collect();
        if idx.is_empty() {
            return Err(LpathError::InsufficientData(format!("{spec:?}: no rows with label {l}")));
        }
        ds = ds.subset(&idx, spec);
    }
    ds.name = spec.to_string();
    Ok(ds)
}

/// IID train/test split and the OOD evaluation sets.
#[derive(Clone, Debug)]
pub struct BenchData {
    pub iid_name: String,
    pub train: Dataset,
    pub test: Dataset,
    pub oods: Vec<Dataset>,
}

pub fn prepare_data(cfg: &BenchConfig) -> Result<BenchData> {
    cfg.validate()?;
    let dir = cfg.dir();
    let fractions = (cfg.train_fraction, 0.0, 1.0 - cfg.train_fraction);
    let iid = load_bench_dataset(&cfg.iid, &dir, cfg.synth_rows, cfg.seed)?;
    let (mut train, _, mut test) = split(&iid, fractions, cfg.seed)?;
    if let Some(n) = cfg.max_train_rows {
        train = train.head(n);
    }
    if let Some(n) = cfg.max_eval_rows {
        test = test.head(n);
    }
    if train.is_empty() || test.is_empty() {
        return Err(LpathError::InsufficientData(format!(
            "{}: {} train and {} test rows",
            cfg.iid,
            train.len(),
            test.len()
        )));
    }
    let oods = cfg
        .ood
        .iter()
        .map(|spec| {
            let ds = load_bench_dataset(spec, &dir, cfg.synth_rows, cfg.seed)?;
            if ds.dim() != iid.dim() {
                return Err(LpathError::InvalidConfig(format!(
                    "{spec}: dimension {} differs from IID dimension {}",
                    ds.dim(),
                    iid.dim()
                )));
            }
            // Same split as the IID data, so flipped variants flip the IID test images.
            let (_, _, t) = split(&ds, fractions, cfg.seed)?;
            let mut t = t.head(test.len());
            t.name = spec.clone();
            Ok(t)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BenchData {
        iid_name: cfg.iid.clone(),
        train,
        test,
        oods,
    })
}

pub fn train_with_latent(train_set: &Dataset, cfg: &TrainConfig, latent_dim: usize) -> Result<MlpVae> {
    let cfg = TrainConfig {
        latent_dim,
        ..cfg.clone()
    };
    Ok(train(train_set.data.view(), &cfg)?.0)
}

/// Scores for one cell.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreSet {
    pub ood: String,
    pub detector: String,
    pub features: String,
    pub iid: Vec<f64>,
    pub ood_scores: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchOutput {
    pub report: EvalReport,
    pub scores: Vec<ScoreSet>,
}

struct Records {
    train: Vec<LPathRecord>,
    test: Vec<LPathRecord>,
    oods: Vec<Vec<LPathRecord>>,
}

fn extract_all(data: &BenchData, model: &MlpVae, model_lo: Option<&MlpVae>, p: f64, q: f64) -> Result<Records> {
    let ex = |ds: &Dataset| match model_lo {
        Some(lo) => extract_stats_2m_batch(lo, model, ds.data.view(), p, q),
        None => extract_stats_batch(model, ds.data.view(), p, q),
    };
    Ok(Records {
        train: ex(&data.train)?,
        test: ex(&data.test)?,
        oods: data.oods.iter().map(ex).collect::<Result<_>>()?,
    })
}

/// Fits a detector on training records and scores the IID test set and
/// every OOD set.
fn run_cell(
    recs: &Records,
    sel: &[StatId],
    opts: &DetectorOptions,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let det = FittedDetector::fit(&build_feature_set(&recs.train, sel)?, opts)?;
    let iid = det.score(&build_feature_set(&recs.test, sel)?)?;
    let oods = recs
        .oods
        .iter()
        .map(|r| det.score(&build_feature_set(r, sel)?))
        .collect::<Result<_>>()?;
    Ok((iid, oods))
}

/// Every nonempty subset of `base`, smallest first.
pub fn feature_subsets(base: &[StatId]) -> Vec<Vec<StatId>> {
    let mut out: Vec<Vec<StatId>> = (1u32..(1 << base.len()))
        .map(|mask| {
            base.iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, s)| *s)
                .collect()
        })
        .collect();
    out.sort_by_key(Vec::len);
    out
}

/// Evaluates a trained model (optionally paired with a smaller-latent one
/// supplying `u`) on prepared data.
pub fn evaluate_model(
    cfg: &BenchConfig,
    data: &BenchData,
    model: &MlpVae,
    model_lo: Option<&MlpVae>,
) -> Result<BenchOutput> {
    cfg.validate()?;
    let recs = extract_all(data, model, model_lo, cfg.p, cfg.q)?;

    let mut cells: Vec<(DetectorKind, Vec<StatId>)> = Vec::new();
    for d in &cfg.detectors {
        for f in &cfg.features {
            cells.push((d.parse()?, parse_selection(f)?));
        }
    }
    let mut extra = Vec::new();
    if cfg.feature_sweep {
        extra.extend(feature_subsets(&default_selection()));
    }
    if cfg.per_case {
        extra.push(vec!["u".parse()?]);
        extra.push(vec!["v".parse()?]);
    }
    for sel in extra {
        if !cells.iter().any(|(k, s)| *k == DetectorKind::Copod && *s == sel) {
            cells.push((DetectorKind::Copod, sel));
        }
    }

    let scored: Vec<(Vec<f64>, Vec<Vec<f64>>)> = cells
        .par_iter()
        .map(|(kind, sel)| run_cell(&recs, sel, &cfg.detector_options(*kind)))
        .collect::<Result<_>>()?;

    let mut scores = Vec::new();
    for ((kind, sel), (iid, oods)) in cells.iter().zip(scored) {
        for (ds, o) in data.oods.iter().zip(oods) {
            scores.push(ScoreSet {
                ood: ds.name.clone(),
                detector: kind.as_str().into(),
                features: format_selection(sel),
                iid: iid.clone(),
                ood_scores: o,
            });
        }
    }
    if cfg.elbo_baseline {
        let iid = elbo_scores(model, data.test.data.view())?;
        for ds in &data.oods {
            scores.push(ScoreSet {
                ood: ds.name.clone(),
                detector: ELBO_TAG.into(),
                features: ELBO_TAG.into(),
                iid: iid.clone(),
                ood_scores: elbo_scores(model, ds.data.view())?,
            });
        }
    }

    let mut report = EvalReport::default();
    for s in &scores {
        report.rows.push(EvalRow {
            iid: data.iid_name.clone(),
            ood: s.ood.clone(),
            detector: s.detector.clone(),
            features: s.features.clone(),
            auroc: auroc(&s.iid, &s.ood_scores)?,
            n_iid: s.iid.len(),
            n_ood: s.ood_scores.len(),
        });
    }

    if cfg.per_case {
        let ui: Vec<f64> = recs.test.iter().map(|r| r.u.l2).collect();
        let vi: Vec<f64> = recs.test.iter().map(|r| r.v.l2).collect();
        for (ds, orecs) in data.oods.iter().zip(&recs.oods) {
            let uo: Vec<f64> = orecs.iter().map(|r| r.u.l2).collect();
            let vo: Vec<f64> = orecs.iter().map(|r| r.v.l2).collect();
            let cases = classify_cases(&ui, &uo, &vi, &vo)?;
            for s in scores.iter().filter(|s| s.ood == ds.name) {
                for case in 1..=4u8 {
                    let members = cases.members(case);
                    let sub: Vec<f64> = members.iter().map(|&i| s.ood_scores[i]).collect();
                    report.case_rows.push(CaseRow {
                        ood: ds.name.clone(),
                        detector: s.detector.clone(),
                        features: s.features.clone(),
                        case,
                        auroc: if sub.is_empty() { None } else { Some(auroc(&s.iid, &sub)?) },
                        n_ood: sub.len(),
                    });
                }
            }
        }
    }
    Ok(BenchOutput { report, scores })
}

/// Trains (or loads) the model, evaluates every cell and runs the
/// latent-size sweep.
pub fn run_benchmark(cfg: &BenchConfig) -> Result<BenchOutput> {
    let data = prepare_data(cfg)?;
    let model = match &cfg.model_path {
        Some(p) => load_model(p)?,
        None => train_with_latent(&data.train, &cfg.model, cfg.model.latent_dim)?,
    };
    if model.input_dim() != data.train.dim() {
        return Err(LpathError::InvalidConfig(format!(
            "model input_dim {} does not match data dimension {}",
            model.input_dim(),
            data.train.dim()
        )));
    }
    let model_lo = cfg
        .dual_latent
        .map(|m| train_with_latent(&data.train, &cfg.model, m))
        .transpose()?;
    let mut out = evaluate_model(cfg, &data, &model, model_lo.as_ref())?;

    if !cfg.latent_sweep.is_empty() {
        let kind: DetectorKind = cfg.detectors[0].parse()?;
        let sel = parse_selection(&cfg.features[0])?;
        for &m in &cfg.latent_sweep {
            let mdl = train_with_latent(&data.train, &cfg.model, m)?;
            let recs = extract_all(&data, &mdl, None, cfg.p, cfg.q)?;
            let (iid, oods) = run_cell(&recs, &sel, &cfg.detector_options(kind))?;
            for (ds, o) in data.oods.iter().zip(oods) {
                out.report.latent_rows.push(LatentRow {
                    latent_dim: m,
                    ood: ds.name.clone(),
                    detector: kind.as_str().into(),
                    features: format_selection(&sel),
                    auroc: auroc(&iid, &o)?,
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synth_cfg() -> BenchConfig {
        BenchConfig {
            iid: "synth:blobs:1.5,1,8@0".into(),
            ood: vec!["synth:blobs:1.5,1,8@1".into()],
            synth_rows: 600,
            per_case: true,
            feature_sweep: true,
            latent_sweep: vec![2],
            model: TrainConfig {
                hidden_sizes: vec![16],
                latent_dim: 3,
                epochs: 5,
                batch_size: 32,
                decoder_sigma: 0.5,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn synthetic_labels_split_one_draw() {
        let dir = Path::new(".");
        let a = load_bench_dataset("synth:blobs:4@0", dir, 50, 1).unwrap();
        let b = load_bench_dataset("synth:blobs:4@1", dir, 50, 1).unwrap();
        let all = load_bench_dataset("synth:blobs:4", dir, 50, 1).unwrap();
        assert_eq!((a.len(), b.len(), all.len()), (50, 50, 100));
        assert_eq!(a.data.row(0), all.data.row(0));
        assert_eq!(b.data.row(0), all.data.row(50));
        assert!(load_bench_dataset("synth:blobs:4@7", dir, 50, 1).is_err());
    }

    #[test]
    fn subsets() {
        let s = feature_subsets(&default_selection());
        assert_eq!(s.len(), 15);
        assert_eq!(s[0].len(), 1);
        assert_eq!(s[14].len(), 4);
    }

    #[test]
    fn synthetic_benchmark_is_deterministic() {
        let cfg = synth_cfg();
        let a = run_benchmark(&cfg).unwrap();
        let b = run_benchmark(&cfg).unwrap();
        assert_eq!(a.report, b.report);
        let r = &a.report;
        // Configured cell, 14 further sweep subsets, the per-case `u`
        // baseline (`v` is already a sweep subset) and the ELBO row.
        assert_eq!(r.rows.len(), 1 + 14 + 1 + 1);
        assert!(r.rows.iter().all(|row| (0.0..=1.0).contains(&row.auroc) && row.n_iid == 60 && row.n_ood == 60));
        assert_eq!(r.latent_rows.len(), 1);
        let total: usize = r
            .case_rows
            .iter()
            .filter(|c| c.detector == "copod" && c.features == "u_p,u_q,v,w")
            .map(|c| c.n_ood)
            .sum();
        assert_eq!(total, 60);
        assert!(r.to_table().contains("latent-dimension sweep"));
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = synth_cfg();
        let text = toml::to_string(&cfg).unwrap();
        let back: BenchConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        let partial: BenchConfig = toml::from_str("iid = \"fmnist\"\n[model]\nepochs = 3\n").unwrap();
        assert_eq!(partial.model.epochs, 3);
        assert_eq!(partial.ood, BenchConfig::default().ood);
        assert!(toml::from_str::<BenchConfig>("bogus = 1").is_err());
    }

    #[test]
    fn rejects_bad_config() {
        let mut cfg = synth_cfg();
        cfg.train_fraction = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = synth_cfg();
        cfg.detectors = vec!["knn".into()];
        assert!(matches!(cfg.validate(), Err(LpathError::InvalidConfig(_))));
        let mut cfg = synth_cfg();
        cfg.iid = "no-such-dataset".into();
        assert!(run_benchmark(&cfg).is_err());
    }
}

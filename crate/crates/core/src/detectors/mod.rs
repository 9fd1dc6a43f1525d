//! Second-stage scorers over the feature set and the training-score threshold.

mod copod;
mod file;
mod mahalanobis;

use ndarray::ArrayView2;

use crate::error::{LpathError, Result};
use crate::pipeline::FeaturePipeline;
use crate::stats::FeatureSet;

pub use copod::{copod_fit, skewness, CopodModel};
pub use file::{detector_from_bytes, detector_to_bytes, load_detector, save_detector};
pub use mahalanobis::{md_fit, MahalanobisModel};

pub const DEFAULT_DECISION_QUANTILE: f64 = 0.95;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DetectorKind {
    Copod,
    Mahalanobis,
}

impl DetectorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DetectorKind::Copod => "copod",
            DetectorKind::Mahalanobis => "md",
        }
    }
}

impl std::str::FromStr for DetectorKind {
    type Err = LpathError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "copod" => Ok(DetectorKind::Copod),
            "md" | "mahalanobis" => Ok(DetectorKind::Mahalanobis),
            other => Err(LpathError::InvalidConfig(format!(
                "unknown detector {other:?}; expected copod or md"
            ))),
        }
    }
}

impl std::fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DetectorModel {
    Copod(CopodModel),
    Mahalanobis(MahalanobisModel),
}

impl DetectorModel {
    pub fn kind(&self) -> DetectorKind {
        match self {
            DetectorModel::Copod(_) => DetectorKind::Copod,
            DetectorModel::Mahalanobis(_) => DetectorKind::Mahalanobis,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            DetectorModel::Copod(m) => m.dim(),
            DetectorModel::Mahalanobis(m) => m.dim(),
        }
    }

    pub fn score_matrix(&self, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        match self {
            DetectorModel::Copod(m) => m.score_matrix(x),
            DetectorModel::Mahalanobis(m) => m.score_matrix(x),
        }
    }
}

/// Sorted training scores and the quantile used as decision threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectorScorecard {
    scores: Vec<f64>,
    quantile: f64,
}

impl DetectorScorecard {
    pub fn new(mut scores: Vec<f64>, quantile: f64) -> Result<Self> {
        if !(quantile > 0.0 && quantile < 1.0) {
            return Err(LpathError::InvalidConfig(format!(
                "decision quantile must lie in (0,1), got {quantile}"
            )));
        }
        if scores.is_empty() {
            return Err(LpathError::InsufficientData("scorecard needs training scores".into()));
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(LpathError::InvalidInput("training scores contain NaN".into()));
        }
        scores.sort_by(f64::total_cmp);
        Ok(DetectorScorecard { scores, quantile })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn quantile(&self) -> f64 {
        self.quantile
    }

    /// Linearly interpolated empirical quantile of the training scores.
    pub fn threshold(&self) -> f64 {
        let n = self.scores.len();
        let h = (n - 1) as f64 * self.quantile;
        let lo = h.floor() as usize;
        let hi = (lo + 1).min(n - 1);
        let frac = h - lo as f64;
        if frac == 0.0 {
            self.scores[lo]
        } else {
            self.scores[lo] + frac * (self.scores[hi] - self.scores[lo])
        }
    }
}

/// True when `score` is strictly above the training-score quantile.
pub fn decide(card: &DetectorScorecard, score: f64) -> bool {
    score > card.threshold()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectorOptions {
    pub kind: DetectorKind,
    pub quantile_transform: bool,
    pub whiten: bool,
    /// Ridge added to the covariance before whitening.
    pub whitening_ridge: f64,
    /// Ridge added to the covariance for Mahalanobis.
    pub md_ridge: f64,
    pub decision_quantile: f64,
}

impl Default for DetectorOptions {
    fn default() -> Self {
        DetectorOptions {
            kind: DetectorKind::Copod,
            quantile_transform: true,
            whiten: true,
            whitening_ridge: crate::pipeline::DEFAULT_RIDGE,
            md_ridge: 1e-6,
            decision_quantile: DEFAULT_DECISION_QUANTILE,
        }
    }
}

/// Conditioning pipeline, detector and scorecard fitted on IID training features.
#[derive(Clone, Debug, PartialEq)]
pub struct FittedDetector {
    pub names: Vec<String>,
    pub pipeline: FeaturePipeline,
    pub model: DetectorModel,
    pub scorecard: DetectorScorecard,
}

impl FittedDetector {
    pub fn fit(train: &FeatureSet, opts: &DetectorOptions) -> Result<Self> {
        let pipeline = FeaturePipeline::fit(train, opts.quantile_transform, opts.whiten, opts.whitening_ridge)?;
        let x = pipeline.apply_matrix(train.matrix.view())?;
        let model = match opts.kind {
            DetectorKind::Copod => DetectorModel::Copod(copod_fit(x.view())?),
            DetectorKind::Mahalanobis => DetectorModel::Mahalanobis(md_fit(x.view(), opts.md_ridge)?),
        };
        let scores = model.score_matrix(x.view())?;
        Ok(FittedDetector {
            names: train.names.clone(),
            pipeline,
            model,
            scorecard: DetectorScorecard::new(scores, opts.decision_quantile)?,
        })
    }

    pub fn kind(&self) -> DetectorKind {
        self.model.kind()
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    /// Scores raw feature rows (columns in fitting order).
    pub fn score_matrix(&self, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.dim() {
            return Err(LpathError::shape("detector input", self.dim(), x.ncols()));
        }
        let y = self.pipeline.apply_matrix(x)?;
        self.model.score_matrix(y.view())
    }

    /// Scores a feature set, reordering its columns by name if needed.
    pub fn score(&self, x: &FeatureSet) -> Result<Vec<f64>> {
        if x.names == self.names {
            return self.score_matrix(x.matrix.view());
        }
        let sel = x.select(&self.names).map_err(|_| {
            LpathError::InvalidInput(format!(
                "feature columns {:?} do not match detector columns {:?}",
                x.names, self.names
            ))
        })?;
        self.score_matrix(sel.matrix.view())
    }

    pub fn decide(&self, score: f64) -> bool {
        decide(&self.scorecard, score)
    }
}

//! Per-sample likelihood-path statistics: residual norm `u`, latent mean
//! norm `v` and latent sigma norm `w`, with l^p / l^q variants.

mod dump;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LpathError, Result};
use crate::matrix::DataMatrix;
use crate::vae::MlpVae;

pub use dump::{feature_set_from_bytes, feature_set_to_bytes, read_feature_set, write_feature_set};

pub const DEFAULT_P: f64 = 0.5;
pub const DEFAULT_Q: f64 = 8.0;
const CHUNK: usize = 256;

/// `(sum |x_i|^p)^(1/p)`; a quasi-norm for `p < 1`.
pub fn p_norm(x: &[f64], p: f64) -> Result<f64> {
    if !(p > 0.0) {
        return Err(LpathError::Domain(format!("norm exponent must be positive, got {p}")));
    }
    if p == 2.0 {
        return Ok(x.iter().map(|v| v * v).sum::<f64>().sqrt());
    }
    if p.is_infinite() {
        return Ok(x.iter().fold(0.0, |m, v| m.max(v.abs())));
    }
    // Scale by the largest entry so large q cannot overflow.
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return Ok(0.0);
    }
    let s: f64 = x.iter().map(|v| (v.abs() / scale).powf(p)).sum();
    Ok(scale * s.powf(1.0 / p))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Statistic {
    U,
    V,
    W,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NormKind {
    L2,
    Lp,
    Lq,
}

/// A column identifier such as `u`, `u_p`, `v_q` or `w_l2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StatId {
    pub stat: Statistic,
    pub norm: NormKind,
}

impl StatId {
    pub const fn new(stat: Statistic, norm: NormKind) -> Self {
        StatId { stat, norm }
    }
}

impl FromStr for StatId {
    type Err = LpathError;

    fn from_str(s: &str) -> Result<Self> {
        let (head, tail) = s.split_once('_').unwrap_or((s, "l2"));
        let stat = match head {
            "u" => Statistic::U,
            "v" => Statistic::V,
            "w" => Statistic::W,
            _ => return Err(LpathError::InvalidConfig(format!("unknown statistic {s:?}"))),
        };
        let norm = match tail {
            "l2" => NormKind::L2,
            "p" | "lp" => NormKind::Lp,
            "q" | "lq" => NormKind::Lq,
            _ => return Err(LpathError::InvalidConfig(format!("unknown statistic {s:?}"))),
        };
        Ok(StatId { stat, norm })
    }
}

impl fmt::Display for StatId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self.stat {
            Statistic::U => "u",
            Statistic::V => "v",
            Statistic::W => "w",
        };
        match self.norm {
            NormKind::L2 => write!(f, "{s}"),
            NormKind::Lp => write!(f, "{s}_p"),
            NormKind::Lq => write!(f, "{s}_q"),
        }
    }
}

/// Parses a comma-separated selection like `u_p,u_q,v,w`.
pub fn parse_selection(s: &str) -> Result<Vec<StatId>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(str::parse)
        .collect()
}

pub fn default_selection() -> Vec<StatId> {
    use NormKind::*;
    use Statistic::*;
    vec![
        StatId::new(U, Lp),
        StatId::new(U, Lq),
        StatId::new(V, L2),
        StatId::new(W, L2),
    ]
}

pub fn format_selection(sel: &[StatId]) -> String {
    sel.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

/// l^2, l^p and l^q norms of one vector.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormTriple {
    pub l2: f64,
    pub lp: f64,
    pub lq: f64,
}

impl NormTriple {
    fn of(x: &[f64], p: f64, q: f64) -> Result<Self> {
        Ok(NormTriple {
            l2: p_norm(x, 2.0)?,
            lp: p_norm(x, p)?,
            lq: p_norm(x, q)?,
        })
    }

    fn get(&self, norm: NormKind) -> f64 {
        match norm {
            NormKind::L2 => self.l2,
            NormKind::Lp => self.lp,
            NormKind::Lq => self.lq,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RecordSource {
    /// All statistics from one model.
    Single,
    /// `u` from the low-latent model, `v`/`w` from the high-latent model.
    Dual,
}

/// Statistics of one sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LPathRecord {
    pub u: NormTriple,
    pub v: NormTriple,
    pub w: NormTriple,
    pub p: f64,
    pub q: f64,
    pub source: RecordSource,
}

impl LPathRecord {
    pub fn get(&self, id: StatId) -> f64 {
        match id.stat {
            Statistic::U => self.u.get(id.norm),
            Statistic::V => self.v.get(id.norm),
            Statistic::W => self.w.get(id.norm),
        }
    }
}

fn check_pq(p: f64, q: f64) -> Result<()> {
    if !(p > 0.0 && q > 0.0) {
        return Err(LpathError::Domain(format!("norm exponents must be positive, got p={p}, q={q}")));
    }
    Ok(())
}

/// Statistics at `z = mu_z(x)` (no sampling).
pub fn extract_stats(model: &MlpVae, x: &[f64], p: f64, q: f64) -> Result<LPathRecord> {
    let view = ArrayView2::from_shape((1, x.len()), x)
        .map_err(|e| LpathError::InvalidInput(e.to_string()))?;
    Ok(extract_stats_batch(model, view, p, q)?.remove(0))
}

fn parts(model: &MlpVae, x: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Array2<f64>, Array2<f64>)> {
    let (mu, sigma) = model.encode_batch(x)?;
    let resid = &model.decode_batch(mu.view())? - &x;
    Ok((resid, mu, sigma))
}

fn records(
    resid: &Array2<f64>,
    mu: &Array2<f64>,
    sigma: &Array2<f64>,
    p: f64,
    q: f64,
    source: RecordSource,
) -> Result<Vec<LPathRecord>> {
    (0..resid.nrows())
        .map(|i| {
            let row = |a: &Array2<f64>| a.row(i).to_vec();
            Ok(LPathRecord {
                u: NormTriple::of(&row(resid), p, q)?,
                v: NormTriple::of(&row(mu), p, q)?,
                w: NormTriple::of(&row(sigma), p, q)?,
                p,
                q,
                source,
            })
        })
        .collect()
}

/// Row-wise [`extract_stats`]; chunks are processed in parallel.
pub fn extract_stats_batch(model: &MlpVae, x: ArrayView2<'_, f64>, p: f64, q: f64) -> Result<Vec<LPathRecord>> {
    check_pq(p, q)?;
    let chunks: Vec<_> = x.axis_chunks_iter(Axis(0), CHUNK).collect();
    let out: Vec<Vec<LPathRecord>> = chunks
        .into_par_iter()
        .map(|c| {
            let (r, mu, s) = parts(model, c)?;
            records(&r, &mu, &s, p, q, RecordSource::Single)
        })
        .collect::<Result<_>>()?;
    Ok(out.into_iter().flatten().collect())
}

fn check_pair(lo: &MlpVae, hi: &MlpVae) -> Result<()> {
    if lo.input_dim() != hi.input_dim() {
        return Err(LpathError::InvalidConfig(format!(
            "paired models disagree on input_dim: {} vs {}",
            lo.input_dim(),
            hi.input_dim()
        )));
    }
    if lo.latent_dim() > hi.latent_dim() || (lo.latent_dim() == hi.latent_dim() && lo != hi) {
        return Err(LpathError::InvalidConfig(format!(
            "low-latent model must have the smaller latent_dim, got {} and {}",
            lo.latent_dim(),
            hi.latent_dim()
        )));
    }
    Ok(())
}

/// `u` from `model_lo`, `v` and `w` from `model_hi`.
pub fn extract_stats_2m(model_lo: &MlpVae, model_hi: &MlpVae, x: &[f64], p: f64, q: f64) -> Result<LPathRecord> {
    let view = ArrayView2::from_shape((1, x.len()), x)
        .map_err(|e| LpathError::InvalidInput(e.to_string()))?;
    Ok(extract_stats_2m_batch(model_lo, model_hi, view, p, q)?.remove(0))
}

pub fn extract_stats_2m_batch(
    model_lo: &MlpVae,
    model_hi: &MlpVae,
    x: ArrayView2<'_, f64>,
    p: f64,
    q: f64,
) -> Result<Vec<LPathRecord>> {
    check_pair(model_lo, model_hi)?;
    check_pq(p, q)?;
    let same = model_lo == model_hi;
    let chunks: Vec<_> = x.axis_chunks_iter(Axis(0), CHUNK).collect();
    let out: Vec<Vec<LPathRecord>> = chunks
        .into_par_iter()
        .map(|c| {
            let (resid, _, _) = parts(model_lo, c)?;
            let (_, mu, sigma) = parts(model_hi, c)?;
            let source = if same { RecordSource::Single } else { RecordSource::Dual };
            records(&resid, &mu, &sigma, p, q, source)
        })
        .collect::<Result<_>>()?;
    Ok(out.into_iter().flatten().collect())
}

/// Named feature columns, one row per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    pub names: Vec<String>,
    pub matrix: DataMatrix,
}

impl FeatureSet {
    pub fn new(names: Vec<String>, matrix: DataMatrix) -> Result<Self> {
        if names.len() != matrix.ncols() {
            return Err(LpathError::shape("feature names", matrix.ncols(), names.len()));
        }
        crate::matrix::check_finite(matrix.view(), "feature matrix")?;
        Ok(FeatureSet { names, matrix })
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn column(&self, name: &str) -> Option<ndarray::ArrayView1<'_, f64>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|j| self.matrix.column(j))
    }

    /// Columns `names` in the given order.
    pub fn select(&self, names: &[String]) -> Result<FeatureSet> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| {
                self.names
                    .iter()
                    .position(|m| m == n)
                    .ok_or_else(|| LpathError::InvalidConfig(format!("feature {n:?} not present")))
            })
            .collect::<Result<_>>()?;
        Ok(FeatureSet {
            names: names.to_vec(),
            matrix: self.matrix.select(Axis(1), &idx),
        })
    }
}

fn column_name(id: StatId, source: RecordSource) -> String {
    match source {
        RecordSource::Single => id.to_string(),
        RecordSource::Dual => {
            let tag = if id.stat == Statistic::U { "lo" } else { "hi" };
            format!("{id}@{tag}")
        }
    }
}

/// Columns in selection order. Features from paired models carry `@lo` /
/// `@hi` suffixes naming the model they came from.
pub fn build_feature_set(records: &[LPathRecord], selection: &[StatId]) -> Result<FeatureSet> {
    if selection.is_empty() {
        return Err(LpathError::InvalidConfig("feature selection is empty".into()));
    }
    let source = records.first().map_or(RecordSource::Single, |r| r.source);
    if records.iter().any(|r| r.source != source) {
        return Err(LpathError::InvalidInput("records mix single and paired sources".into()));
    }
    let names = selection.iter().map(|&id| column_name(id, source)).collect();
    let matrix = Array2::from_shape_fn((records.len(), selection.len()), |(i, j)| {
        records[i].get(selection[j])
    });
    FeatureSet::new(names, matrix)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vae::{init_model, Activation, Dense, TrainConfig};
    use ndarray::{array, Array1};
    use proptest::prelude::*;

    #[test]
    fn p_norm_examples() {
        assert_eq!(p_norm(&[3.0, 4.0], 2.0).unwrap(), 5.0);
        let half = (3f64.sqrt() + 2.0).powi(2);
        assert!((p_norm(&[3.0, 4.0], 0.5).unwrap() - half).abs() < 1e-12);
        assert!((p_norm(&[3.0, 4.0], 0.5).unwrap() - 13.928).abs() < 1e-3);
        let eight = (3f64.powi(8) + 4f64.powi(8)).powf(0.125);
        assert!((p_norm(&[3.0, 4.0], 8.0).unwrap() - eight).abs() < 1e-12);
        assert!((p_norm(&[3.0, 4.0], 8.0).unwrap() - 4.047).abs() < 1e-3);
        assert!(p_norm(&[1.0], 0.0).is_err());
        assert!(p_norm(&[1.0], -1.0).is_err());
        assert_eq!(p_norm(&[0.0, 0.0], 0.5).unwrap(), 0.0);
    }

    proptest! {
        #[test]
        fn norm_ordering(xs in proptest::collection::vec(-1e3f64..1e3, 1..40)) {
            let lq = p_norm(&xs, 8.0).unwrap();
            let l2 = p_norm(&xs, 2.0).unwrap();
            let lp = p_norm(&xs, 0.5).unwrap();
            prop_assert!(lq <= l2 * (1.0 + 1e-12));
            prop_assert!(l2 <= lp * (1.0 + 1e-12));
        }
    }

    #[test]
    fn stat_ids_parse_and_print() {
        assert_eq!("u".parse::<StatId>().unwrap(), "u_l2".parse().unwrap());
        assert_eq!("v_q".parse::<StatId>().unwrap().to_string(), "v_q");
        assert_eq!("w_l2".parse::<StatId>().unwrap().to_string(), "w");
        assert!("x".parse::<StatId>().is_err());
        assert!("u_r".parse::<StatId>().is_err());
        assert_eq!(format_selection(&default_selection()), "u_p,u_q,v,w");
        assert_eq!(parse_selection("u_p, u_q,v_l2,w").unwrap(), default_selection());
    }

    fn zero_model() -> MlpVae {
        let cfg = TrainConfig {
            hidden_sizes: vec![3],
            ..TrainConfig::default()
        };
        let mut m = init_model(&cfg, 3, 2, 7).unwrap();
        for l in m.layers_mut() {
            l.weight.fill(0.0);
        }
        m.mu_head.bias = array![3.0, 4.0];
        m.logvar_head.bias = array![0.0, 0.0];
        m.decoder.last_mut().unwrap().bias = array![1.0, 1.0, 1.0];
        m
    }

    #[test]
    fn zero_weight_model_stats() {
        let m = zero_model();
        let r = extract_stats(&m, &[1.0, 3.0, -1.0], DEFAULT_P, DEFAULT_Q).unwrap();
        assert_eq!(r.v.l2, 5.0);
        assert_eq!(r.u.l2, 8f64.sqrt());
        assert!((r.w.l2 - 2f64.sqrt()).abs() < 1e-15);
        assert!((r.u.lp - p_norm(&[0.0, 2.0, -2.0], 0.5).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn identity_model_has_zero_residual() {
        let eye = Dense {
            weight: Array2::eye(3),
            bias: Array1::zeros(3),
            activation: Activation::Identity,
        };
        let m = MlpVae::new(vec![], eye.clone(), eye.clone(), vec![eye], 0.1).unwrap();
        let r = extract_stats(&m, &[0.2, -0.5, 1.0], 0.5, 8.0).unwrap();
        assert_eq!(r.u.l2, 0.0);
        assert!((r.v.l2 - p_norm(&[0.2, -0.5, 1.0], 2.0).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn matches_encode_decode_composition() {
        let cfg = TrainConfig {
            hidden_sizes: vec![8],
            ..TrainConfig::default()
        };
        let m = init_model(&cfg, 4, 2, 7).unwrap();
        let x = [1.0; 4];
        let (mu, sigma) = m.encode(&x).unwrap();
        let xhat = m.decode(&mu).unwrap();
        let resid: Vec<f64> = x.iter().zip(&xhat).map(|(a, b)| b - a).collect();
        let r = extract_stats(&m, &x, 0.5, 8.0).unwrap();
        assert_eq!(r.u.l2, p_norm(&resid, 2.0).unwrap());
        assert_eq!(r.v.lq, p_norm(&mu, 8.0).unwrap());
        assert_eq!(r.w.lp, p_norm(&sigma, 0.5).unwrap());
        let again = extract_stats(&m, &x, 0.5, 8.0).unwrap();
        assert_eq!(r, again);
        assert!(r.w.l2 > 0.0);
    }

    #[test]
    fn batch_matches_single() {
        let cfg = TrainConfig {
            hidden_sizes: vec![5],
            ..TrainConfig::default()
        };
        let m = init_model(&cfg, 3, 2, 2).unwrap();
        let x = DataMatrix::from_shape_fn((600, 3), |(i, j)| ((i * 7 + j) % 11) as f64 / 11.0);
        let batch = extract_stats_batch(&m, x.view(), 0.5, 8.0).unwrap();
        assert_eq!(batch.len(), 600);
        for i in [0, 255, 256, 599] {
            let single = extract_stats(&m, x.row(i).as_slice().unwrap(), 0.5, 8.0).unwrap();
            assert_eq!(batch[i], single);
        }
    }

    #[test]
    fn paired_models() {
        let cfg = TrainConfig {
            hidden_sizes: vec![5],
            ..TrainConfig::default()
        };
        let lo = init_model(&cfg, 3, 1, 2).unwrap();
        let hi = init_model(&cfg, 3, 4, 3).unwrap();
        let x = [0.1, 0.4, 0.9];
        let same = extract_stats_2m(&hi, &hi, &x, 0.5, 8.0).unwrap();
        assert_eq!(same, extract_stats(&hi, &x, 0.5, 8.0).unwrap());

        let r = extract_stats_2m(&lo, &hi, &x, 0.5, 8.0).unwrap();
        assert_eq!(r.u, extract_stats(&lo, &x, 0.5, 8.0).unwrap().u);
        assert_eq!(r.v, extract_stats(&hi, &x, 0.5, 8.0).unwrap().v);
        let fs = build_feature_set(&[r], &default_selection()).unwrap();
        assert_eq!(fs.names, vec!["u_p@lo", "u_q@lo", "v@hi", "w@hi"]);

        assert!(matches!(
            extract_stats_2m(&hi, &lo, &x, 0.5, 8.0),
            Err(LpathError::InvalidConfig(_))
        ));
    }

    #[test]
    fn feature_set_building() {
        let m = zero_model();
        let recs = vec![extract_stats(&m, &[0.0, 0.0, 0.0], 0.5, 8.0).unwrap(); 3];
        let uvw = parse_selection("u,v,w").unwrap();
        let fs = build_feature_set(&recs, &uvw).unwrap();
        assert_eq!(fs.matrix.dim(), (3, 3));
        assert_eq!(fs.names, vec!["u", "v", "w"]);
        assert_eq!(fs.matrix[[0, 1]], 5.0);
        let fs4 = build_feature_set(&recs, &default_selection()).unwrap();
        assert_eq!(fs4.dim(), 4);
        assert!(matches!(
            build_feature_set(&recs, &[]),
            Err(LpathError::InvalidConfig(_))
        ));
        let sub = fs4.select(&["w".to_string(), "u_p".to_string()]).unwrap();
        assert_eq!(sub.names, vec!["w", "u_p"]);
        assert!(fs4.select(&["nope".to_string()]).is_err());
    }
}

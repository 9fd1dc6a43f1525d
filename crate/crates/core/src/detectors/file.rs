//! `LPDT` detector file. All integers are little-endian `u32`; all model
//! state is `f64`.
//!
//! ```text
//! "LPDT" version detector_tag(1=COPOD,2=MD) d
//! name_bytes names('\n'-joined)
//! flags(bit0 quantile, bit1 whitening)
//! [quantile]  n, d*n sorted values (column-major)
//! [whitening] d center values, d*d matrix (row-major)
//! COPOD: n, d*n sorted values, d skewness values
//! MD:    d mean values, d*d precision (row-major), ridge
//! decision_quantile, score_count, scores
//! ```

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{CopodModel, DetectorModel, DetectorScorecard, FittedDetector, MahalanobisModel};
use crate::binio::{len_u32, put_f64, put_f64s, put_u32, ByteReader};
use crate::error::{LpathError, Result};
use crate::pipeline::{FeaturePipeline, QuantileTransform, WhiteningTransform};

const MAGIC: &[u8; 4] = b"LPDT";
const VERSION: u32 = 1;
const TAG_COPOD: u32 = 1;
const TAG_MD: u32 = 2;
const FLAG_QUANTILE: u32 = 1;
const FLAG_WHITEN: u32 = 2;

fn put_columns(out: &mut Vec<u8>, cols: &[Vec<f64>]) -> Result<()> {
    put_u32(out, len_u32(cols.first().map_or(0, Vec::len), "row count")?);
    for c in cols {
        put_f64s(out, c);
    }
    Ok(())
}

fn read_columns(r: &mut ByteReader<'_>, d: usize, what: &str) -> Result<Vec<Vec<f64>>> {
    let n = r.u32_le("row count")? as usize;
    (0..d).map(|_| r.f64_vec(n, what)).collect()
}

fn read_square(r: &mut ByteReader<'_>, d: usize, what: &str) -> Result<Array2<f64>> {
    let at = r.offset();
    let n = d
        .checked_mul(d)
        .ok_or_else(|| LpathError::format(at, "matrix size overflows"))?;
    Ok(Array2::from_shape_vec((d, d), r.f64_vec(n, what)?).expect("length checked"))
}

pub fn detector_to_bytes(det: &FittedDetector) -> Result<Vec<u8>> {
    let d = det.dim();
    if det.model.dim() != d {
        return Err(LpathError::shape("detector model", d, det.model.dim()));
    }
    if det.names.iter().any(|n| n.contains('\n')) {
        return Err(LpathError::InvalidInput("feature names may not contain newlines".into()));
    }
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(
        &mut out,
        match det.model {
            DetectorModel::Copod(_) => TAG_COPOD,
            DetectorModel::Mahalanobis(_) => TAG_MD,
        },
    );
    put_u32(&mut out, len_u32(d, "dimension")?);
    let names = det.names.join("\n");
    put_u32(&mut out, len_u32(names.len(), "name table")?);
    out.extend_from_slice(names.as_bytes());

    let p = &det.pipeline;
    let flags = u32::from(p.quantile.is_some()) * FLAG_QUANTILE + u32::from(p.whitening.is_some()) * FLAG_WHITEN;
    put_u32(&mut out, flags);
    if let Some(q) = &p.quantile {
        put_columns(&mut out, &q.columns)?;
    }
    if let Some(w) = &p.whitening {
        put_f64s(&mut out, &w.center);
        put_f64s(&mut out, &w.matrix);
    }
    match &det.model {
        DetectorModel::Copod(m) => {
            put_columns(&mut out, &m.columns)?;
            put_f64s(&mut out, &m.skew);
        }
        DetectorModel::Mahalanobis(m) => {
            put_f64s(&mut out, &m.mean);
            put_f64s(&mut out, &m.precision);
            put_f64(&mut out, m.ridge);
        }
    }
    put_f64(&mut out, det.scorecard.quantile());
    put_u32(&mut out, len_u32(det.scorecard.scores().len(), "score count")?);
    put_f64s(&mut out, det.scorecard.scores());
    Ok(out)
}

pub fn detector_from_bytes(bytes: &[u8]) -> Result<FittedDetector> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(MAGIC)?;
    let at = r.offset();
    let version = r.u32_le("version")?;
    if version != VERSION {
        return Err(LpathError::format(at, format!("unsupported version {version}")));
    }
    let at = r.offset();
    let tag = r.u32_le("detector tag")?;
    if tag != TAG_COPOD && tag != TAG_MD {
        return Err(LpathError::format(at, format!("unknown detector tag {tag}")));
    }
    let d = r.u32_le("dimension")? as usize;
    let name_len = r.u32_le("name table length")? as usize;
    let at = r.offset();
    let table = std::str::from_utf8(r.take(name_len, "name table")?)
        .map_err(|e| LpathError::format(at, format!("name table is not UTF-8: {e}")))?;
    let names: Vec<String> = if d == 0 && table.is_empty() {
        Vec::new()
    } else {
        table.split('\n').map(str::to_owned).collect()
    };
    if names.len() != d {
        return Err(LpathError::format(at, format!("{} names for dimension {d}", names.len())));
    }

    let at = r.offset();
    let flags = r.u32_le("pipeline flags")?;
    if flags & !(FLAG_QUANTILE | FLAG_WHITEN) != 0 {
        return Err(LpathError::format(at, format!("unknown pipeline flags {flags:#x}")));
    }
    let wrap = |at: usize| move |e: LpathError| LpathError::format(at, e.to_string());
    let quantile = if flags & FLAG_QUANTILE != 0 {
        let at = r.offset();
        Some(QuantileTransform::from_sorted(read_columns(&mut r, d, "quantile table")?).map_err(wrap(at))?)
    } else {
        None
    };
    let whitening = if flags & FLAG_WHITEN != 0 {
        let center = Array1::from(r.f64_vec(d, "whitening center")?);
        let matrix = read_square(&mut r, d, "whitening matrix")?;
        Some(WhiteningTransform { center, matrix })
    } else {
        None
    };
    let at = r.offset();
    let model = if tag == TAG_COPOD {
        let columns = read_columns(&mut r, d, "COPOD table")?;
        let skew = r.f64_vec(d, "COPOD skewness")?;
        DetectorModel::Copod(CopodModel::from_parts(columns, skew).map_err(wrap(at))?)
    } else {
        let mean = Array1::from(r.f64_vec(d, "Mahalanobis mean")?);
        let precision = read_square(&mut r, d, "Mahalanobis precision")?;
        let ridge = r.f64_le("Mahalanobis ridge")?;
        DetectorModel::Mahalanobis(MahalanobisModel {
            mean,
            precision,
            ridge,
        })
    };
    let at = r.offset();
    let q = r.f64_le("decision quantile")?;
    let count = r.u32_le("score count")? as usize;
    let scores = r.f64_vec(count, "training scores")?;
    r.finish()?;
    let scorecard = DetectorScorecard::new(scores, q).map_err(wrap(at))?;
    Ok(FittedDetector {
        names,
        pipeline: FeaturePipeline { quantile, whitening },
        model,
        scorecard,
    })
}

pub fn save_detector(det: &FittedDetector, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, detector_to_bytes(det)?)?;
    Ok(())
}

pub fn load_detector(path: impl AsRef<Path>) -> Result<FittedDetector> {
    detector_from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detectors::{DetectorKind, DetectorOptions};
    use crate::matrix::DataMatrix;
    use crate::stats::FeatureSet;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fitted(kind: DetectorKind, quantile: bool, whiten: bool) -> FittedDetector {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = DataMatrix::from_shape_simple_fn((60, 2), || rng.random_range(-1.0..1.0));
        let fs = FeatureSet::new(vec!["u_p".into(), "v".into()], m).unwrap();
        let opts = DetectorOptions {
            kind,
            quantile_transform: quantile,
            whiten,
            ..Default::default()
        };
        FittedDetector::fit(&fs, &opts).unwrap()
    }

    #[test]
    fn round_trips_every_variant() {
        for kind in [DetectorKind::Copod, DetectorKind::Mahalanobis] {
            for (q, w) in [(false, false), (true, false), (false, true), (true, true)] {
                let det = fitted(kind, q, w);
                let bytes = detector_to_bytes(&det).unwrap();
                let back = detector_from_bytes(&bytes).unwrap();
                assert_eq!(back, det);
                assert_eq!(detector_to_bytes(&back).unwrap(), bytes);
            }
        }
    }

    #[test]
    fn corrupt_files_are_format_errors() {
        let bytes = detector_to_bytes(&fitted(DetectorKind::Copod, true, true)).unwrap();
        for cut in [2, 10, 40, bytes.len() - 3] {
            assert!(matches!(
                detector_from_bytes(&bytes[..cut]),
                Err(LpathError::Format { .. })
            ));
        }
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(detector_from_bytes(&bad).is_err());
        let mut bad = bytes;
        bad[..4].copy_from_slice(b"LPVW");
        assert!(detector_from_bytes(&bad).unwrap_err().to_string().contains("LPDT"));
    }
}

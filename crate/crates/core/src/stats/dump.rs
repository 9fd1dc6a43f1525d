//! `LPTH` feature dump: little-endian header, newline-joined names, `f32` rows.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::FeatureSet;
use crate::binio::{len_u32, put_f32, put_u32, ByteReader};
use crate::error::{LpathError, Result};

const MAGIC: &[u8; 4] = b"LPTH";
const VERSION: u32 = 1;

pub fn feature_set_to_bytes(fs: &FeatureSet) -> Result<Vec<u8>> {
    if fs.names.iter().any(|n| n.contains('\n')) {
        return Err(LpathError::InvalidInput("feature names may not contain newlines".into()));
    }
    let names = fs.names.join("\n");
    let name_len = u16::try_from(names.len())
        .map_err(|_| LpathError::InvalidInput("feature name table exceeds 65535 bytes".into()))?;
    let mut out = Vec::with_capacity(18 + names.len() + 4 * fs.matrix.len());
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, len_u32(fs.rows(), "row count")?);
    put_u32(&mut out, len_u32(fs.dim(), "column count")?);
    out.extend_from_slice(&name_len.to_le_bytes());
    out.extend_from_slice(names.as_bytes());
    for v in fs.matrix.iter() {
        put_f32(&mut out, *v);
    }
    Ok(out)
}

pub fn feature_set_from_bytes(bytes: &[u8]) -> Result<FeatureSet> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(MAGIC)?;
    let at = r.offset();
    let version = r.u32_le("version")?;
    if version != VERSION {
        return Err(LpathError::format(at, format!("unsupported version {version}")));
    }
    let rows = r.u32_le("row count")? as usize;
    let cols = r.u32_le("column count")? as usize;
    let name_len = r.u16_le("name table length")? as usize;
    let at = r.offset();
    let table = std::str::from_utf8(r.take(name_len, "name table")?)
        .map_err(|e| LpathError::format(at, format!("name table is not UTF-8: {e}")))?;
    let names: Vec<String> = if cols == 0 && table.is_empty() {
        Vec::new()
    } else {
        table.split('\n').map(str::to_owned).collect()
    };
    if names.len() != cols {
        return Err(LpathError::format(
            at,
            format!("{} names for {cols} columns", names.len()),
        ));
    }
    let at = r.offset();
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| LpathError::format(at, "matrix size overflows"))?;
    let data = r.f32_vec(n, "feature values")?;
    r.finish()?;
    let matrix = Array2::from_shape_vec((rows, cols), data).expect("length checked");
    FeatureSet::new(names, matrix).map_err(|e| LpathError::format(at, e.to_string()))
}

pub fn write_feature_set(fs: &FeatureSet, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, feature_set_to_bytes(fs)?)?;
    Ok(())
}

pub fn read_feature_set(path: impl AsRef<Path>) -> Result<FeatureSet> {
    feature_set_from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn sample() -> FeatureSet {
        FeatureSet::new(
            vec!["u_p".into(), "v".into(), "w@hi".into()],
            array![[1.5, 0.25, 3.0], [-2.0, 1e-3f32 as f64, 7.75]],
        )
        .unwrap()
    }

    #[test]
    fn round_trip_bitwise() {
        let fs = sample();
        let bytes = feature_set_to_bytes(&fs).unwrap();
        let back = feature_set_from_bytes(&bytes).unwrap();
        assert_eq!(back, fs);
        assert_eq!(feature_set_to_bytes(&back).unwrap(), bytes);
    }

    #[test]
    fn header_layout() {
        let bytes = feature_set_to_bytes(&sample()).unwrap();
        assert_eq!(&bytes[..4], b"LPTH");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 3);
        assert_eq!(u16::from_le_bytes(bytes[16..18].try_into().unwrap()), 10);
        assert_eq!(&bytes[18..28], b"u_p\nv\nw@hi");
        assert_eq!(bytes.len(), 28 + 6 * 4);
    }

    #[test]
    fn corrupt_inputs() {
        let bytes = feature_set_to_bytes(&sample()).unwrap();
        assert!(matches!(
            feature_set_from_bytes(&bytes[..bytes.len() - 2]),
            Err(LpathError::Format { .. })
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(feature_set_from_bytes(&bad).unwrap_err().to_string().contains("LPTH"));
    }

    #[test]
    fn empty_set_round_trips() {
        let fs = FeatureSet::new(vec!["u".into()], Array2::zeros((0, 1))).unwrap();
        let back = feature_set_from_bytes(&feature_set_to_bytes(&fs).unwrap()).unwrap();
        assert_eq!(back, fs);
    }
}

use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::{Dataset, ImageShape};
use crate::binio::ByteReader;
use crate::error::{LpathError, Result};

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;
const CIFAR_RECORD: usize = 3073;

/// Parses a big-endian IDX image file; pixels are scaled by 1/255.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(Array2<f64>, ImageShape)> {
    let mut r = ByteReader::new(bytes);
    let magic = r.u32_be("magic")?;
    if magic != IDX_IMAGES {
        return Err(LpathError::format(
            0,
            format!("bad IDX magic {magic:#010x}, expected {IDX_IMAGES:#010x}"),
        ));
    }
    let n = r.u32_be("item count")? as usize;
    let h = r.u32_be("row count")? as usize;
    let w = r.u32_be("column count")? as usize;
    if n == 0 {
        return Err(LpathError::InsufficientData("IDX file holds 0 images".into()));
    }
    let at = r.offset();
    let total = n
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .ok_or_else(|| LpathError::format(at, "image dimensions overflow"))?;
    let pixels = r.take(total, "pixels")?;
    r.finish()?;
    let data = Array2::from_shape_vec((n, h * w), pixels.iter().map(|&p| p as f64 / 255.0).collect())
        .expect("length checked");
    Ok((data, ImageShape::gray(h, w)))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut r = ByteReader::new(bytes);
    let magic = r.u32_be("magic")?;
    if magic != IDX_LABELS {
        return Err(LpathError::format(
            0,
            format!("bad IDX label magic {magic:#010x}, expected {IDX_LABELS:#010x}"),
        ));
    }
    let n = r.u32_be("item count")? as usize;
    let labels = r.take(n, "labels")?.to_vec();
    r.finish()?;
    Ok(labels)
}

pub fn load_idx(images: &Path, labels: Option<&Path>) -> Result<Dataset> {
    let (data, shape) = parse_idx_images(&fs::read(images)?)?;
    let labels = match labels {
        Some(p) => {
            let l = parse_idx_labels(&fs::read(p)?)?;
            if l.len() != data.nrows() {
                return Err(LpathError::InvalidInput(format!(
                    "{} labels for {} images",
                    l.len(),
                    data.nrows()
                )));
            }
            Some(l)
        }
        None => None,
    };
    let name = images
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(Dataset {
        name,
        data,
        image_shape: Some(shape),
        labels,
    })
}

/// CIFAR-10 binary batch: records of one label byte and 3072 channel-major pixels.
pub fn load_cifar10_bin(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path)?;
    if bytes.is_empty() {
        return Err(LpathError::InsufficientData("CIFAR file is empty".into()));
    }
    if bytes.len() % CIFAR_RECORD != 0 {
        return Err(LpathError::format(
            bytes.len() - bytes.len() % CIFAR_RECORD,
            format!("file length {} is not a multiple of {CIFAR_RECORD}", bytes.len()),
        ));
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut labels = Vec::with_capacity(n);
    let mut flat = Vec::with_capacity(n * (CIFAR_RECORD - 1));
    for rec in bytes.chunks_exact(CIFAR_RECORD) {
        labels.push(rec[0]);
        flat.extend(rec[1..].iter().map(|&p| p as f64 / 255.0));
    }
    Ok(Dataset {
        name: path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        data: Array2::from_shape_vec((n, CIFAR_RECORD - 1), flat).expect("length checked"),
        image_shape: Some(ImageShape {
            channels: 3,
            height: 32,
            width: 32,
        }),
        labels: Some(labels),
    })
}

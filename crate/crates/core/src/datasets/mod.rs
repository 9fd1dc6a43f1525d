//! Image loaders, flips, splits and synthetic generators.

mod idx;
mod synth;

use std::path::{Path, PathBuf};

use ndarray::Axis;
use rand::seq::SliceRandom;

use crate::error::{LpathError, Result};
use crate::matrix::DataMatrix;
use crate::rng::stream_rng;

pub use idx::{load_cifar10_bin, load_idx, parse_idx_images, parse_idx_labels};
pub use synth::{synth_generate, SynthSpec};

/// Image layout as `(channels, height, width)`; rows store channels in order,
/// each as a row-major `height x width` plane.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ImageShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageShape {
    pub fn gray(height: usize, width: usize) -> Self {
        ImageShape {
            channels: 1,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A named sample matrix. Image loaders scale pixels into `[0, 1]`; synthetic
/// generators may produce any real values.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub data: DataMatrix,
    pub image_shape: Option<ImageShape>,
    /// Parsed when available; never consumed by any pipeline stage.
    pub labels: Option<Vec<u8>>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, data: DataMatrix) -> Self {
        Dataset {
            name: name.into(),
            data,
            image_shape: None,
            labels: None,
        }
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    /// Rows `idx` in order, with labels carried along.
    pub fn subset(&self, idx: &[usize], name: impl Into<String>) -> Dataset {
        Dataset {
            name: name.into(),
            data: self.data.select(Axis(0), idx),
            image_shape: self.image_shape,
            labels: self
                .labels
                .as_ref()
                .map(|l| idx.iter().map(|&i| l[i]).collect()),
        }
    }

    /// First `n` rows (or all of them when `n` exceeds the row count).
    pub fn head(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx, self.name.clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlipMode {
    Horizontal,
    Vertical,
}

impl std::str::FromStr for FlipMode {
    type Err = LpathError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hflip" => Ok(FlipMode::Horizontal),
            "vflip" => Ok(FlipMode::Vertical),
            other => Err(LpathError::InvalidConfig(format!(
                "unknown flip {other:?}; expected hflip or vflip"
            ))),
        }
    }
}

/// Reverses columns (`hflip`) or rows (`vflip`) of every image plane.
pub fn flip_transform(ds: &Dataset, mode: FlipMode) -> Result<Dataset> {
    let shape = ds.image_shape.ok_or_else(|| {
        LpathError::InvalidInput(format!("dataset {} has no image shape", ds.name))
    })?;
    if shape.len() != ds.dim() {
        return Err(LpathError::shape("image shape", ds.dim(), shape.len()));
    }
    let (h, w) = (shape.height, shape.width);
    let mut out = ds.data.clone();
    for (src, mut dst) in ds.data.rows().into_iter().zip(out.rows_mut()) {
        for c in 0..shape.channels {
            let base = c * h * w;
            for r in 0..h {
                for col in 0..w {
                    let (sr, sc) = match mode {
                        FlipMode::Horizontal => (r, w - 1 - col),
                        FlipMode::Vertical => (h - 1 - r, col),
                    };
                    dst[base + r * w + col] = src[base + sr * w + sc];
                }
            }
        }
    }
    let suffix = match mode {
        FlipMode::Horizontal => "hflip",
        FlipMode::Vertical => "vflip",
    };
    Ok(Dataset {
        name: format!("{}:{suffix}", ds.name),
        data: out,
        image_shape: ds.image_shape,
        labels: ds.labels.clone(),
    })
}

/// Deterministic shuffled split into (train, val, test). Train and val sizes
/// are rounded from the fractions; test receives the remainder.
pub fn split(ds: &Dataset, fractions: (f64, f64, f64), seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let (a, b, c) = fractions;
    if [a, b, c].iter().any(|f| !(*f >= 0.0 && f.is_finite())) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(LpathError::InvalidConfig(format!(
            "split fractions {fractions:?} must be nonnegative and sum to 1"
        )));
    }
    let n = ds.len();
    let n_train = ((n as f64 * a).round() as usize).min(n);
    let n_val = ((n as f64 * b).round() as usize).min(n - n_train);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, 0x5EED));
    let train = ds.subset(&order[..n_train], format!("{}[train]", ds.name));
    let val = ds.subset(&order[n_train..n_train + n_val], format!("{}[val]", ds.name));
    let test = ds.subset(&order[n_train + n_val..], format!("{}[test]", ds.name));
    Ok((train, val, test))
}

/// Directory holding dataset files: `$LPATH_DATA_DIR`, else `./data`.
pub fn data_dir() -> PathBuf {
    std::env::var_os("LPATH_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"))
}

/// Resolves a dataset reference such as `mnist`, `fmnist:vflip`,
/// `cifar10` or a path to an IDX image file, with optional `:hflip`/`:vflip`.
pub fn resolve_dataset(spec: &str) -> Result<Dataset> {
    resolve_dataset_in(spec, &data_dir())
}

pub fn resolve_dataset_in(spec: &str, dir: &Path) -> Result<Dataset> {
    let mut parts = spec.split(':');
    let base = parts.next().unwrap_or_default();
    let flips: Vec<FlipMode> = parts.map(str::parse).collect::<Result<_>>()?;
    let mut ds = match base {
        "mnist" | "fmnist" | "fashion-mnist" => {
            let stem = if base == "mnist" { "mnist" } else { "fmnist" };
            let images = dir.join(format!("{stem}-images-idx3-ubyte"));
            let labels = dir.join(format!("{stem}-labels-idx1-ubyte"));
            let labels = labels.exists().then_some(labels);
            let mut ds = load_idx(&images, labels.as_deref())?;
            ds.name = stem.to_string();
            ds
        }
        "cifar10" => {
            let mut ds = load_cifar10_bin(&dir.join("cifar10-test.bin"))?;
            ds.name = "cifar10".into();
            ds
        }
        path if Path::new(path).is_file() => load_idx(Path::new(path), None)?,
        other => {
            return Err(LpathError::InvalidConfig(format!(
                "unknown dataset {other:?}; expected mnist, fmnist, cifar10 or an IDX file path"
            )))
        }
    };
    for f in flips {
        ds = flip_transform(&ds, f)?;
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn image_ds(data: DataMatrix, h: usize, w: usize) -> Dataset {
        Dataset {
            image_shape: Some(ImageShape::gray(h, w)),
            ..Dataset::new("t", data)
        }
    }

    #[test]
    fn flips_of_2x2() {
        // [[a b] [c d]] stored row-major.
        let ds = image_ds(array![[1.0, 2.0, 3.0, 4.0]], 2, 2);
        let h = flip_transform(&ds, FlipMode::Horizontal).unwrap();
        assert_eq!(h.data, array![[2.0, 1.0, 4.0, 3.0]]);
        let v = flip_transform(&ds, FlipMode::Vertical).unwrap();
        assert_eq!(v.data, array![[3.0, 4.0, 1.0, 2.0]]);
        assert_eq!(v.name, "t:vflip");
    }

    #[test]
    fn flips_are_involutions() {
        let data = DataMatrix::from_shape_fn((3, 12), |(i, j)| (i * 12 + j) as f64 / 36.0);
        let ds = image_ds(data, 3, 4);
        for mode in [FlipMode::Horizontal, FlipMode::Vertical] {
            let twice = flip_transform(&flip_transform(&ds, mode).unwrap(), mode).unwrap();
            assert_eq!(twice.data, ds.data);
        }
    }

    #[test]
    fn symmetric_image_unchanged_by_hflip() {
        let ds = image_ds(array![[0.1, 0.5, 0.1, 0.2, 0.9, 0.2]], 2, 3);
        assert_eq!(flip_transform(&ds, FlipMode::Horizontal).unwrap().data, ds.data);
    }

    #[test]
    fn flip_handles_channels() {
        let mut ds = image_ds(array![[1.0, 2.0, 3.0, 4.0]], 1, 2);
        ds.image_shape = Some(ImageShape {
            channels: 2,
            height: 1,
            width: 2,
        });
        let h = flip_transform(&ds, FlipMode::Horizontal).unwrap();
        assert_eq!(h.data, array![[2.0, 1.0, 4.0, 3.0]]);
    }

    #[test]
    fn flip_needs_shape() {
        let ds = Dataset::new("x", array![[1.0]]);
        assert!(flip_transform(&ds, FlipMode::Vertical).is_err());
    }

    #[test]
    fn split_sizes_and_determinism() {
        let data = DataMatrix::from_shape_fn((100, 1), |(i, _)| i as f64);
        let ds = Dataset::new("r", data);
        let (a, b, c) = split(&ds, (0.8, 0.1, 0.1), 3).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (80, 10, 10));
        let mut all: Vec<f64> = a.data.iter().chain(b.data.iter()).chain(c.data.iter()).copied().collect();
        all.sort_by(f64::total_cmp);
        assert_eq!(all, (0..100).map(|i| i as f64).collect::<Vec<_>>());

        let (a2, _, _) = split(&ds, (0.8, 0.1, 0.1), 3).unwrap();
        assert_eq!(a.data, a2.data);
        let (a3, b3, c3) = split(&ds, (0.8, 0.1, 0.1), 4).unwrap();
        assert_ne!(a.data, a3.data);
        assert_eq!((a3.len(), b3.len(), c3.len()), (80, 10, 10));
        assert!(split(&ds, (0.8, 0.3, 0.1), 3).is_err());
    }

    #[test]
    fn unknown_dataset_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            resolve_dataset_in("imagenet", dir.path()),
            Err(LpathError::InvalidConfig(_))
        ));
        assert!(resolve_dataset_in("mnist:rot90", dir.path()).is_err());
        assert!(matches!(
            resolve_dataset_in("mnist", dir.path()),
            Err(LpathError::Io(_))
        ));
    }
}

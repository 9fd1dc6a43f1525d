use std::f64::consts::TAU;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::Dataset;
use crate::error::{LpathError, Result};
use crate::rng::stream_rng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SynthSpec {
    /// Isotropic Gaussian with the same mean in every coordinate.
    Gaussian { mu: f64, sigma: f64, dim: usize },
    Uniform { a: f64, b: f64, dim: usize },
    /// Points on a circle of radius `radius` with Gaussian radial noise.
    Ring { radius: f64, noise: f64 },
    /// Two isotropic blobs centered at `-separation/2` and `+separation/2`
    /// along the first axis. The first `n` rows (label 0) form the left blob,
    /// the next `n` rows (label 1) the right one.
    BlobPair { separation: f64, spread: f64, dim: usize },
}

impl SynthSpec {
    pub fn blob_pair(separation: f64) -> Self {
        SynthSpec::BlobPair {
            separation,
            spread: 0.25,
            dim: 2,
        }
    }
}

impl std::str::FromStr for SynthSpec {
    type Err = LpathError;

    /// `gaussian:mu,sigma,dim`, `uniform:a,b,dim`, `ring:radius,noise`,
    /// `blobs:separation[,spread[,dim]]`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || LpathError::InvalidConfig(format!("cannot parse synthetic spec {s:?}"));
        let (kind, args) = s.split_once(':').ok_or_else(bad)?;
        let nums: Vec<f64> = args
            .split(',')
            .map(|a| a.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let dim = |v: f64| -> Result<usize> {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(bad())
            }
        };
        match (kind, nums.as_slice()) {
            ("gaussian", [mu, sigma, d]) => Ok(SynthSpec::Gaussian {
                mu: *mu,
                sigma: *sigma,
                dim: dim(*d)?,
            }),
            ("uniform", [a, b, d]) => Ok(SynthSpec::Uniform {
                a: *a,
                b: *b,
                dim: dim(*d)?,
            }),
            ("ring", [r, noise]) => Ok(SynthSpec::Ring {
                radius: *r,
                noise: *noise,
            }),
            ("blobs", [sep]) => Ok(SynthSpec::blob_pair(*sep)),
            ("blobs", [sep, spread]) => Ok(SynthSpec::BlobPair {
                separation: *sep,
                spread: *spread,
                dim: 2,
            }),
            ("blobs", [sep, spread, d]) => Ok(SynthSpec::BlobPair {
                separation: *sep,
                spread: *spread,
                dim: dim(*d)?,
            }),
            _ => Err(bad()),
        }
    }
}

fn positive(v: f64, what: &str) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(LpathError::InvalidConfig(format!("{what} must be positive, got {v}")))
    }
}

/// Draws `n` rows (`2n` for a blob pair) deterministically from `seed`.
pub fn synth_generate(spec: SynthSpec, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(LpathError::InvalidConfig("synthetic sample size must be positive".into()));
    }
    let mut rng = stream_rng(seed, 0x5717);
    let (name, data, labels) = match spec {
        SynthSpec::Gaussian { mu, sigma, dim } => {
            positive(sigma, "sigma")?;
            let d = Normal::new(mu, sigma).expect("sigma checked");
            let data = Array2::from_shape_simple_fn((n, dim), || d.sample(&mut rng));
            (format!("gaussian({mu},{sigma},{dim})"), data, None)
        }
        SynthSpec::Uniform { a, b, dim } => {
            if !(a < b && a.is_finite() && b.is_finite()) {
                return Err(LpathError::InvalidConfig(format!(
                    "uniform bounds must satisfy a < b, got [{a}, {b}]"
                )));
            }
            let data = Array2::from_shape_simple_fn((n, dim), || rng.random_range(a..=b));
            (format!("uniform({a},{b},{dim})"), data, None)
        }
        SynthSpec::Ring { radius, noise } => {
            positive(radius, "radius")?;
            if !(noise >= 0.0) {
                return Err(LpathError::InvalidConfig("ring noise must be nonnegative".into()));
            }
            let mut data = Array2::zeros((n, 2));
            for mut row in data.rows_mut() {
                let t = rng.random_range(0.0..TAU);
                let e: f64 = rng.sample(StandardNormal);
                let r = radius + noise * e;
                row[0] = r * t.cos();
                row[1] = r * t.sin();
            }
            (format!("ring({radius},{noise})"), data, None)
        }
        SynthSpec::BlobPair {
            separation,
            spread,
            dim,
        } => {
            positive(spread, "spread")?;
            if dim == 0 {
                return Err(LpathError::InvalidConfig("blob dimension must be positive".into()));
            }
            let mut data = Array2::zeros((2 * n, dim));
            for (i, mut row) in data.rows_mut().into_iter().enumerate() {
                for v in row.iter_mut() {
                    let e: f64 = rng.sample(StandardNormal);
                    *v = spread * e;
                }
                row[0] += if i < n { -separation / 2.0 } else { separation / 2.0 };
            }
            let labels = (0..2 * n).map(|i| u8::from(i >= n)).collect();
            (format!("blobs({separation},{spread},{dim})"), data, Some(labels))
        }
    };
    Ok(Dataset {
        name,
        data,
        image_shape: None,
        labels,
    })
}

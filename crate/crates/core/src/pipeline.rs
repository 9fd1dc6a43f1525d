//! Second-stage feature conditioning: per-column quantile Gaussianization
//! followed by ZCA whitening, both fitted on IID training features.

use nalgebra::SymmetricEigen;
use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{LpathError, Result};
use crate::matrix::{column_means, covariance, from_nalgebra, to_nalgebra};
use crate::stats::FeatureSet;

// Acklam's rational approximation coefficients.
const A: [f64; 6] = [
    -3.969683028665376e+01,
    2.209460984245205e+02,
    -2.759285104469687e+02,
    1.383577518672690e+02,
    -3.066479806614716e+01,
    2.506628277459239e+00,
];
const B: [f64; 5] = [
    -5.447609879822406e+01,
    1.615858368580409e+02,
    -1.556989798598866e+02,
    6.680131188771972e+01,
    -1.328068155288572e+01,
];
const C: [f64; 6] = [
    -7.784894002430293e-03,
    -3.223964580411365e-01,
    -2.400758277161838e+00,
    -2.549732539343734e+00,
    4.374664141464968e+00,
    2.938163982698783e+00,
];
const D: [f64; 4] = [
    7.784695709041462e-03,
    3.224671290700398e-01,
    2.445134137142996e+00,
    3.754408661907416e+00,
];
const P_LOW: f64 = 0.02425;

/// Standard normal quantile function.
pub fn inverse_normal_cdf(pr: f64) -> Result<f64> {
    if !(pr > 0.0 && pr < 1.0) {
        return Err(LpathError::Domain(format!("probability must lie in (0,1), got {pr}")));
    }
    let x = if pr < P_LOW {
        let q = (-2.0 * pr.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if pr <= 1.0 - P_LOW {
        let q = pr - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - pr).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    // One Halley step against the exact CDF.
    let e = 0.5 * libm::erfc(-x / std::f64::consts::SQRT_2) - pr;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (0.5 * x * x).exp();
    Ok(x - u / (1.0 + 0.5 * x * u))
}

/// Per-column empirical CDF followed by the normal quantile function.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantileTransform {
    pub(crate) columns: Vec<Vec<f64>>,
    pub(crate) degenerate: Vec<bool>,
}

impl QuantileTransform {
    pub(crate) fn from_sorted(columns: Vec<Vec<f64>>) -> Result<Self> {
        let n = columns.first().map_or(0, Vec::len);
        if n < 2 {
            return Err(LpathError::InsufficientData(format!(
                "quantile transform needs at least 2 rows, got {n}"
            )));
        }
        for c in &columns {
            if c.len() != n {
                return Err(LpathError::shape("quantile column", n, c.len()));
            }
            if c.windows(2).any(|w| !(w[0] <= w[1])) {
                return Err(LpathError::InvalidInput("quantile columns must be sorted".into()));
            }
        }
        let degenerate = columns.iter().map(|c| c[0] == c[n - 1]).collect();
        Ok(QuantileTransform { columns, degenerate })
    }

    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn sorted_column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn is_degenerate(&self, j: usize) -> bool {
        self.degenerate[j]
    }

    /// Midrank probability `(#{< t} + (#{= t} + 1)/2) / (n + 1)`, clamped to
    /// `[1/(n+1), n/(n+1)]`.
    pub fn probability(&self, j: usize, t: f64) -> f64 {
        let col = &self.columns[j];
        let n = col.len() as f64;
        let below = col.partition_point(|&v| v < t) as f64;
        let upto = col.partition_point(|&v| v <= t) as f64;
        let pr = (below + 0.5 * (upto - below + 1.0)) / (n + 1.0);
        pr.clamp(1.0 / (n + 1.0), n / (n + 1.0))
    }

    pub fn apply_matrix(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.dim() {
            return Err(LpathError::shape("quantile transform input", self.dim(), x.ncols()));
        }
        let mut out = x.to_owned();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            for v in col.iter_mut() {
                *v = if self.degenerate[j] {
                    0.0
                } else {
                    inverse_normal_cdf(self.probability(j, *v))?
                };
            }
        }
        Ok(out)
    }
}

pub fn fit_quantile_transform(train: &FeatureSet) -> Result<QuantileTransform> {
    crate::matrix::check_finite(train.matrix.view(), "quantile training data")?;
    let columns = train
        .matrix
        .axis_iter(Axis(1))
        .map(|c| {
            let mut v = c.to_vec();
            v.sort_by(f64::total_cmp);
            v
        })
        .collect();
    QuantileTransform::from_sorted(columns)
}

pub fn apply_quantile_transform(qt: &QuantileTransform, x: &FeatureSet) -> Result<FeatureSet> {
    Ok(FeatureSet {
        names: x.names.clone(),
        matrix: qt.apply_matrix(x.matrix.view())?,
    })
}

/// `y = W (x - center)` with symmetric `W`.
#[derive(Clone, Debug, PartialEq)]
pub struct WhiteningTransform {
    pub center: Array1<f64>,
    pub matrix: Array2<f64>,
}

impl WhiteningTransform {
    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn apply_matrix(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.dim() {
            return Err(LpathError::shape("whitening input", self.dim(), x.ncols()));
        }
        let centered = &x - &self.center;
        Ok(centered.dot(&self.matrix.t()))
    }
}

/// ZCA whitening `W = (Cov + ridge I)^(-1/2)`.
pub fn fit_whitening(train: &FeatureSet, ridge: f64) -> Result<WhiteningTransform> {
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(LpathError::InvalidConfig(format!("ridge must be nonnegative, got {ridge}")));
    }
    let x = train.matrix.view();
    let center = column_means(x);
    let mut cov = covariance(x)?;
    cov.diag_mut().mapv_inplace(|v| v + ridge);
    let eig = SymmetricEigen::new(to_nalgebra(cov.view()));
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min > 1e-12 * max.max(f64::MIN_POSITIVE)) {
        return Err(LpathError::Singular(format!(
            "covariance + ridge is not positive definite (smallest eigenvalue {min:e}); increase ridge"
        )));
    }
    let inv_sqrt = eig.eigenvalues.map(|v| 1.0 / v.sqrt());
    let w = &eig.eigenvectors * nalgebra::DMatrix::from_diagonal(&inv_sqrt) * eig.eigenvectors.transpose();
    let mut matrix = from_nalgebra(&w);
    // Symmetrize away rounding asymmetry.
    let t = matrix.t().to_owned();
    matrix = (&matrix + &t) * 0.5;
    Ok(WhiteningTransform { center, matrix })
}

pub fn apply_whitening(wt: &WhiteningTransform, x: &FeatureSet) -> Result<FeatureSet> {
    Ok(FeatureSet {
        names: x.names.clone(),
        matrix: wt.apply_matrix(x.matrix.view())?,
    })
}

pub const DEFAULT_RIDGE: f64 = 1e-6;

/// Optional quantile stage followed by optional whitening stage.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct FeaturePipeline {
    pub quantile: Option<QuantileTransform>,
    pub whitening: Option<WhiteningTransform>,
}

impl FeaturePipeline {
    pub fn fit(train: &FeatureSet, quantile: bool, whiten: bool, ridge: f64) -> Result<Self> {
        let qt = if quantile {
            Some(fit_quantile_transform(train)?)
        } else {
            None
        };
        let whitening = if whiten {
            let staged = match &qt {
                Some(q) => apply_quantile_transform(q, train)?,
                None => train.clone(),
            };
            Some(fit_whitening(&staged, ridge)?)
        } else {
            None
        };
        Ok(FeaturePipeline {
            quantile: qt,
            whitening,
        })
    }

    pub fn apply_matrix(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let mut y = match &self.quantile {
            Some(q) => q.apply_matrix(x)?,
            None => x.to_owned(),
        };
        if let Some(w) = &self.whitening {
            y = w.apply_matrix(y.view())?;
        }
        Ok(y)
    }

    pub fn apply(&self, x: &FeatureSet) -> Result<FeatureSet> {
        Ok(FeatureSet {
            names: x.names.clone(),
            matrix: self.apply_matrix(x.matrix.view())?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::DataMatrix;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Exp, StandardNormal};
    use statrs::distribution::{ContinuousCDF, Normal};

    fn fs(m: DataMatrix) -> FeatureSet {
        let names = (0..m.ncols()).map(|j| format!("c{j}")).collect();
        FeatureSet::new(names, m).unwrap()
    }

    #[test]
    fn inverse_cdf_examples() {
        assert_eq!(inverse_normal_cdf(0.5).unwrap(), 0.0);
        assert!((inverse_normal_cdf(0.975).unwrap() - 1.959963984540054).abs() < 1e-12);
        assert!(inverse_normal_cdf(0.0).is_err());
        assert!(inverse_normal_cdf(1.0).is_err());
        assert!(inverse_normal_cdf(f64::NAN).is_err());
    }

    #[test]
    fn inverse_cdf_against_reference() {
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut worst: f64 = 0.0;
        let mut probe = |p: f64| {
            let x = inverse_normal_cdf(p).unwrap();
            worst = worst.max((x - normal.inverse_cdf(p)).abs());
        };
        for k in 1..=10 {
            probe(10f64.powi(-k));
            probe(1.0 - 10f64.powi(-k));
        }
        for i in 1..1000 {
            probe(i as f64 / 1000.0);
        }
        assert!(worst <= 1e-8, "{worst}");
    }

    proptest! {
        #[test]
        fn inverse_cdf_is_odd(p in 1e-10f64..0.5) {
            let a = inverse_normal_cdf(p).unwrap();
            let b = inverse_normal_cdf(1.0 - p).unwrap();
            prop_assert!((a + b).abs() < 1e-8);
        }

        #[test]
        fn quantile_transform_is_monotone(xs in proptest::collection::vec(-50.0f64..50.0, 3..60)) {
            let train = fs(DataMatrix::from_shape_vec((xs.len(), 1), xs.clone()).unwrap());
            let qt = fit_quantile_transform(&train).unwrap();
            let y = apply_quantile_transform(&qt, &train).unwrap();
            for i in 0..xs.len() {
                for j in 0..xs.len() {
                    let (a, b) = (y.matrix[[i, 0]], y.matrix[[j, 0]]);
                    if xs[i] < xs[j] { prop_assert!(a < b); }
                    if xs[i] == xs[j] { prop_assert!(a == b); }
                }
            }
        }
    }

    #[test]
    fn quantile_fit_and_apply_examples() {
        let train = fs(array![[3.0], [1.0], [2.0]]);
        let qt = fit_quantile_transform(&train).unwrap();
        assert_eq!(qt.sorted_column(0), &[1.0, 2.0, 3.0]);
        let y = apply_quantile_transform(&qt, &train).unwrap();
        assert!(y.matrix[[2, 0]].abs() < 1e-15);
        assert!((y.matrix[[1, 0]] - inverse_normal_cdf(0.25).unwrap()).abs() < 1e-15);

        let below = apply_quantile_transform(&qt, &fs(array![[-100.0], [100.0]])).unwrap();
        assert_eq!(below.matrix[[0, 0]], inverse_normal_cdf(0.25).unwrap());
        assert_eq!(below.matrix[[1, 0]], inverse_normal_cdf(0.75).unwrap());

        let constant = fit_quantile_transform(&fs(array![[2.0], [2.0], [2.0]])).unwrap();
        assert!(constant.is_degenerate(0));
        let z = apply_quantile_transform(&constant, &fs(array![[5.0], [2.0]])).unwrap();
        assert_eq!(z.matrix, array![[0.0], [0.0]]);

        assert!(fit_quantile_transform(&fs(array![[1.0]])).is_err());
        assert!(apply_quantile_transform(&qt, &fs(array![[1.0, 2.0]])).is_err());
    }

    fn ks_vs_normal(mut v: Vec<f64>) -> f64 {
        let normal = Normal::new(0.0, 1.0).unwrap();
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        v.iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = normal.cdf(x);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn exponential_marginal_becomes_normal() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let exp = Exp::new(1.0).unwrap();
        let x = DataMatrix::from_shape_simple_fn((10_000, 1), || exp.sample(&mut rng));
        let train = fs(x);
        let qt = fit_quantile_transform(&train).unwrap();
        let y = apply_quantile_transform(&qt, &train).unwrap();
        let ks = ks_vs_normal(y.matrix.column(0).to_vec());
        assert!(ks <= 0.02, "{ks}");
    }

    fn correlated(n: usize, seed: u64) -> DataMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = DataMatrix::zeros((n, 2));
        for mut r in x.rows_mut() {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            r[0] = 2.0 * a + 1.0;
            r[1] = 0.8 * a + 0.3 * b - 4.0;
        }
        x
    }

    #[test]
    fn whitening_gives_identity_covariance() {
        let train = fs(correlated(2000, 1));
        let wt = fit_whitening(&train, 0.0).unwrap();
        let y = apply_whitening(&wt, &train).unwrap();
        let c = covariance(y.matrix.view()).unwrap();
        let eye = Array2::<f64>::eye(2);
        assert!((&c - &eye).iter().all(|d| d.abs() < 1e-6), "{c}");
        let means = column_means(y.matrix.view());
        assert!(means.iter().all(|m| m.abs() < 1e-9));
        // ZCA matrix is symmetric.
        assert!((wt.matrix[[0, 1]] - wt.matrix[[1, 0]]).abs() < 1e-15);
    }

    #[test]
    fn already_white_data_gives_near_identity() {
        // Rows are ±e1, ±e2 scaled so the unbiased covariance is exactly I.
        let s = (1.5f64).sqrt();
        let train = fs(array![[s, 0.0], [-s, 0.0], [0.0, s], [0.0, -s]]);
        let wt = fit_whitening(&train, 0.0).unwrap();
        assert!((&wt.matrix - &Array2::<f64>::eye(2)).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn rank_deficient_needs_ridge() {
        let train = fs(array![[1.0, 2.0], [2.0, 4.0], [3.0, 6.0], [4.0, 8.0]]);
        assert!(matches!(fit_whitening(&train, 0.0), Err(LpathError::Singular(_))));
        assert!(fit_whitening(&train, 1e-6).is_ok());
    }

    #[test]
    fn whitening_apply_matches_matrix_product() {
        let wt = WhiteningTransform {
            center: array![1.0, -1.0],
            matrix: array![[2.0, 0.5], [0.5, 1.0]],
        };
        let x = fs(array![[3.0, 2.0], [0.0, 0.0]]);
        let y = apply_whitening(&wt, &x).unwrap();
        // W (x - c) for x - c = (2, 3) and (-1, 1).
        assert_eq!(y.matrix, array![[5.5, 4.0], [-1.5, 0.5]]);

        let ident = WhiteningTransform {
            center: array![1.0, 2.0],
            matrix: Array2::eye(2),
        };
        assert_eq!(apply_whitening(&ident, &x).unwrap().matrix, array![[2.0, 0.0], [-1.0, -2.0]]);
        let empty = fs(DataMatrix::zeros((0, 2)));
        assert_eq!(apply_whitening(&ident, &empty).unwrap().rows(), 0);
    }

    #[test]
    fn pipeline_outputs_are_finite() {
        let train = fs(correlated(500, 9));
        let p = FeaturePipeline::fit(&train, true, true, DEFAULT_RIDGE).unwrap();
        let y = p.apply(&train).unwrap();
        assert!(y.matrix.iter().all(|v| v.is_finite()));
        let none = FeaturePipeline::fit(&train, false, false, DEFAULT_RIDGE).unwrap();
        assert_eq!(none.apply(&train).unwrap(), train);
    }
}

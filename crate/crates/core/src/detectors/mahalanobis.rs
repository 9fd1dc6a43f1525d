use nalgebra::Cholesky;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{LpathError, Result};
use crate::matrix::{column_means, covariance, from_nalgebra, to_nalgebra};

/// Mean and regularized precision of the training features.
#[derive(Clone, Debug, PartialEq)]
pub struct MahalanobisModel {
    pub mean: Array1<f64>,
    pub precision: Array2<f64>,
    pub ridge: f64,
}

impl MahalanobisModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `(x - mean)^T P (x - mean)`, floored at 0.
    pub fn score(&self, x: ArrayView1<'_, f64>) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(LpathError::shape("Mahalanobis input", self.dim(), x.len()));
        }
        let d = &x - &self.mean;
        Ok(d.dot(&self.precision.dot(&d)).max(0.0))
    }

    pub fn score_matrix(&self, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        x.axis_iter(Axis(0)).map(|r| self.score(r)).collect()
    }
}

pub fn md_fit(train: ArrayView2<'_, f64>, ridge: f64) -> Result<MahalanobisModel> {
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(LpathError::InvalidConfig(format!("ridge must be nonnegative, got {ridge}")));
    }
    crate::matrix::check_finite(train, "Mahalanobis training data")?;
    let mean = column_means(train);
    let mut cov = covariance(train)?;
    cov.diag_mut().mapv_inplace(|v| v + ridge);
    let scale = cov.diag().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let chol = Cholesky::new(to_nalgebra(cov.view())).ok_or_else(|| {
        LpathError::Singular("covariance + ridge is not positive definite; increase ridge".into())
    })?;
    let l = chol.l();
    let min_pivot = l.diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v * v));
    if !(min_pivot > 1e-12 * scale.max(f64::MIN_POSITIVE)) {
        return Err(LpathError::Singular(format!(
            "covariance + ridge is numerically singular (pivot {min_pivot:e}); increase ridge"
        )));
    }
    let mut precision = from_nalgebra(&chol.inverse());
    let t = precision.t().to_owned();
    precision = (&precision + &t) * 0.5;
    Ok(MahalanobisModel {
        mean,
        precision,
        ridge,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::DataMatrix;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn correlated(n: usize, seed: u64) -> DataMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = DataMatrix::zeros((n, 2));
        for mut r in x.rows_mut() {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            r[0] = a;
            r[1] = 0.6 * a + 0.5 * b;
        }
        x
    }

    #[test]
    fn white_data_gives_identity_precision() {
        let s = 1.5f64.sqrt();
        let x = array![[s, 0.0], [-s, 0.0], [0.0, s], [0.0, -s]];
        let m = md_fit(x.view(), 0.0).unwrap();
        assert!((&m.precision - &Array2::<f64>::eye(2)).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn precision_matches_2x2_inverse() {
        let x = correlated(500, 2);
        let m = md_fit(x.view(), 1e-6).unwrap();
        let c = covariance(x.view()).unwrap();
        let (a, b, d) = (c[[0, 0]] + 1e-6, c[[0, 1]], c[[1, 1]] + 1e-6);
        let det = a * d - b * b;
        let inv = array![[d / det, -b / det], [-b / det, a / det]];
        assert!((&m.precision - &inv).iter().all(|e| e.abs() < 1e-8));
    }

    #[test]
    fn rank_deficient_without_ridge_fails() {
        let x = array![[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]];
        assert!(matches!(md_fit(x.view(), 0.0), Err(LpathError::Singular(_))));
        assert!(md_fit(x.view(), 1e-3).is_ok());
    }

    #[test]
    fn score_examples() {
        let x = correlated(200, 3);
        let m = md_fit(x.view(), 1e-6).unwrap();
        assert!(m.score(m.mean.view()).unwrap().abs() < 1e-15);

        let ident = MahalanobisModel {
            mean: array![1.0, 1.0],
            precision: Array2::eye(2),
            ridge: 0.0,
        };
        assert_eq!(ident.score(array![4.0, 5.0].view()).unwrap(), 25.0);

        let p = &m.precision;
        let v = array![0.7, -1.2];
        let d = &v - &m.mean;
        let oracle = d[0] * (p[[0, 0]] * d[0] + p[[0, 1]] * d[1]) + d[1] * (p[[1, 0]] * d[0] + p[[1, 1]] * d[1]);
        assert!((m.score(v.view()).unwrap() - oracle).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn affine_invariance(
            a in proptest::collection::vec(-2.0f64..2.0, 4),
            shift in proptest::collection::vec(-5.0f64..5.0, 2),
            seed in 0u64..100,
        ) {
            let a = Array2::from_shape_vec((2, 2), a).unwrap();
            let det = a[[0, 0]] * a[[1, 1]] - a[[0, 1]] * a[[1, 0]];
            prop_assume!(det.abs() > 0.2);
            let b = Array1::from(shift);
            let x = correlated(100, seed);
            let y = x.dot(&a.t()) + &b;
            let mx = md_fit(x.view(), 0.0).unwrap();
            let my = md_fit(y.view(), 0.0).unwrap();
            let probe = array![0.4, -1.1];
            let probe_y = a.dot(&probe) + &b;
            let sx = mx.score(probe.view()).unwrap();
            let sy = my.score(probe_y.view()).unwrap();
            prop_assert!((sx - sy).abs() <= 1e-6 * sx.max(1.0));
        }

        #[test]
        fn invariant_to_row_order(seed in 0u64..100) {
            let x = correlated(50, seed);
            let mut rev = x.clone();
            rev.invert_axis(Axis(0));
            let a = md_fit(x.view(), 1e-6).unwrap();
            let b = md_fit(rev.view(), 1e-6).unwrap();
            let probe = array![1.0, 2.0];
            prop_assert!((a.score(probe.view()).unwrap() - b.score(probe.view()).unwrap()).abs() < 1e-9);
        }
    }
}

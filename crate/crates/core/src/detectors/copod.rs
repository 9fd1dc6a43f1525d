use ndarray::{ArrayView1, ArrayView2, Axis};

use crate::error::{LpathError, Result};

/// Sample skewness `m3 / m2^(3/2)` with population moments; 0 when undefined.
pub fn skewness(column: &[f64]) -> f64 {
    let n = column.len();
    if n < 2 {
        return 0.0;
    }
    let mean = column.iter().sum::<f64>() / n as f64;
    let (m2, m3) = column.iter().fold((0.0, 0.0), |(a, b), &x| {
        let d = x - mean;
        (a + d * d, b + d * d * d)
    });
    let (m2, m3) = (m2 / n as f64, m3 / n as f64);
    if m2 <= 0.0 {
        return 0.0;
    }
    m3 / m2.powf(1.5)
}

/// Empirical-copula outlier model: sorted training columns and skewness.
#[derive(Clone, Debug, PartialEq)]
pub struct CopodModel {
    pub(crate) columns: Vec<Vec<f64>>,
    pub(crate) skew: Vec<f64>,
}

impl CopodModel {
    pub(crate) fn from_parts(columns: Vec<Vec<f64>>, skew: Vec<f64>) -> Result<Self> {
        let n = columns.first().map_or(0, Vec::len);
        if n < 2 {
            return Err(LpathError::InsufficientData(format!("COPOD needs at least 2 rows, got {n}")));
        }
        if skew.len() != columns.len() {
            return Err(LpathError::shape("COPOD skewness", columns.len(), skew.len()));
        }
        for c in &columns {
            if c.len() != n {
                return Err(LpathError::shape("COPOD column", n, c.len()));
            }
            if c.windows(2).any(|w| !(w[0] <= w[1])) {
                return Err(LpathError::InvalidInput("COPOD columns must be sorted".into()));
            }
        }
        Ok(CopodModel { columns, skew })
    }

    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    pub fn rows(&self) -> usize {
        self.columns[0].len()
    }

    pub fn skew(&self) -> &[f64] {
        &self.skew
    }

    pub fn sorted_column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    /// `max(p_left, p_right, p_skew)` of summed negative log tail probabilities.
    pub fn score(&self, x: ArrayView1<'_, f64>) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(LpathError::shape("COPOD input", self.dim(), x.len()));
        }
        let n = self.rows() as f64;
        let floor = 1.0 / n;
        let (mut pl, mut pr, mut ps) = (0.0, 0.0, 0.0);
        for (j, &t) in x.iter().enumerate() {
            let col = &self.columns[j];
            let le = col.partition_point(|&v| v <= t) as f64;
            let ge = n - col.partition_point(|&v| v < t) as f64;
            let fl = -(le / n).clamp(floor, 1.0).ln();
            let fr = -(ge / n).clamp(floor, 1.0).ln();
            pl += fl;
            pr += fr;
            ps += if self.skew[j] < 0.0 { fl } else { fr };
        }
        Ok(pl.max(pr).max(ps))
    }

    pub fn score_matrix(&self, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        x.axis_iter(Axis(0)).map(|r| self.score(r)).collect()
    }
}

pub fn copod_fit(train: ArrayView2<'_, f64>) -> Result<CopodModel> {
    if train.nrows() < 2 {
        return Err(LpathError::InsufficientData(format!(
            "COPOD needs at least 2 rows, got {}",
            train.nrows()
        )));
    }
    crate::matrix::check_finite(train, "COPOD training data")?;
    let mut columns = Vec::with_capacity(train.ncols());
    let mut skew = Vec::with_capacity(train.ncols());
    for c in train.axis_iter(Axis(1)) {
        let v = c.to_vec();
        skew.push(skewness(&v));
        let mut s = v;
        s.sort_by(f64::total_cmp);
        columns.push(s);
    }
    CopodModel::from_parts(columns, skew)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::DataMatrix;
    use ndarray::{array, Array1};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Exp};

    #[test]
    fn skewness_examples() {
        assert_eq!(skewness(&[-1.0, 0.0, 1.0]), 0.0);
        assert_eq!(skewness(&[4.0; 5]), 0.0);
        assert_eq!(skewness(&[1.0]), 0.0);
        // mean 22, deviations -21,-20,-19,-18,78.
        let d = [-21.0f64, -20.0, -19.0, -18.0, 78.0];
        let m2 = d.iter().map(|v| v * v).sum::<f64>() / 5.0;
        let m3 = d.iter().map(|v| v * v * v).sum::<f64>() / 5.0;
        let oracle = m3 / m2.powf(1.5);
        assert!((skewness(&[1.0, 2.0, 3.0, 4.0, 100.0]) - oracle).abs() < 1e-12);
    }

    #[test]
    fn fit_examples() {
        let x = DataMatrix::from_shape_fn((10, 1), |(i, _)| (10 - i) as f64);
        let m = copod_fit(x.view()).unwrap();
        assert_eq!(m.sorted_column(0), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0]);
        assert!(m.skew()[0].abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = Exp::new(1.0).unwrap();
        let x = DataMatrix::from_shape_simple_fn((2000, 1), || e.sample(&mut rng));
        assert!(copod_fit(x.view()).unwrap().skew()[0] > 0.0);

        assert!(copod_fit(DataMatrix::zeros((0, 2)).view()).is_err());
    }

    #[test]
    fn score_examples() {
        let x = DataMatrix::from_shape_fn((100, 1), |(i, _)| (i + 1) as f64);
        let m = copod_fit(x.view()).unwrap();
        let s = m.score(array![50.5].view()).unwrap();
        assert!((s - 2f64.ln()).abs() < 1e-12);
        let far = m.score(array![1e9].view()).unwrap();
        assert!((far - 100f64.ln()).abs() < 1e-12);
        assert!(m.score(array![1.0, 2.0].view()).is_err());
    }

    fn oracle(train: &DataMatrix, x: &Array1<f64>) -> f64 {
        let n = train.nrows() as f64;
        let (mut pl, mut pr, mut ps) = (0.0, 0.0, 0.0);
        for j in 0..train.ncols() {
            let col: Vec<f64> = train.column(j).to_vec();
            let le = col.iter().filter(|&&v| v <= x[j]).count() as f64;
            let ge = col.iter().filter(|&&v| v >= x[j]).count() as f64;
            let fl = (le / n).max(1.0 / n).min(1.0);
            let fr = (ge / n).max(1.0 / n).min(1.0);
            pl -= fl.ln();
            pr -= fr.ln();
            ps -= if skewness(&col) < 0.0 { fl.ln() } else { fr.ln() };
        }
        pl.max(pr).max(ps)
    }

    #[test]
    fn matches_brute_force_tail_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let train = DataMatrix::from_shape_simple_fn((300, 3), || {
            let v: f64 = rng.random_range(-2.0..2.0);
            (v * 4.0).round() / 4.0
        });
        let m = copod_fit(train.view()).unwrap();
        for _ in 0..200 {
            let x = Array1::from_shape_simple_fn(3, || (rng.random_range(-3.0f64..3.0) * 4.0).round() / 4.0);
            assert!((m.score(x.view()).unwrap() - oracle(&train, &x)).abs() <= 1e-12);
        }
    }

    proptest! {
        #[test]
        fn monotone_outside_training_range(
            rows in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 2), 3..40),
            a in 0.0f64..10.0,
            b in 0.0f64..10.0,
        ) {
            let flat: Vec<f64> = rows.iter().flatten().copied().collect();
            let train = DataMatrix::from_shape_vec((rows.len(), 2), flat).unwrap();
            let m = copod_fit(train.view()).unwrap();
            let (lo, hi) = (a.min(b), a.max(b));
            let s_lo = m.score(array![5.0 + lo, 0.0].view()).unwrap();
            let s_hi = m.score(array![5.0 + hi, 0.0].view()).unwrap();
            prop_assert!(s_hi >= s_lo);
            let s_lo = m.score(array![0.0, -5.0 - lo].view()).unwrap();
            let s_hi = m.score(array![0.0, -5.0 - hi].view()).unwrap();
            prop_assert!(s_hi >= s_lo);
        }

        #[test]
        fn invariant_to_row_order(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let train = DataMatrix::from_shape_simple_fn((25, 2), || rng.random_range(-1.0..1.0));
            let mut rev = train.clone();
            rev.invert_axis(ndarray::Axis(0));
            let (a, b) = (copod_fit(train.view()).unwrap(), copod_fit(rev.view()).unwrap());
            let x = array![0.3, -0.9];
            prop_assert_eq!(a.score(x.view()).unwrap(), b.score(x.view()).unwrap());
        }
    }
}

//! Dense row-major sample matrices and the handful of linear-algebra helpers
//! shared across modules.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{LpathError, Result};

/// One row per sample, one column per coordinate.
pub type DataMatrix = Array2<f64>;

pub fn l2_norm(x: ArrayView1<'_, f64>) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn l2_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn column_means(x: ArrayView2<'_, f64>) -> Array1<f64> {
    x.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(x.ncols()))
}

/// Unbiased (n - 1) sample covariance.
pub fn covariance(x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let n = x.nrows();
    if n < 2 {
        return Err(LpathError::InsufficientData(format!(
            "covariance needs at least 2 rows, got {n}"
        )));
    }
    let mean = column_means(x);
    let centered = &x - &mean.broadcast(x.raw_dim()).unwrap();
    Ok(centered.t().dot(&centered) / (n as f64 - 1.0))
}

pub fn to_nalgebra(a: ArrayView2<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

pub fn from_nalgebra(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Rounds every entry to the nearest `f32`, the precision of the on-disk formats.
pub fn round_to_f32(a: &mut Array2<f64>) {
    a.mapv_inplace(|v| v as f32 as f64);
}

pub fn check_finite(x: ArrayView2<'_, f64>, what: &str) -> Result<()> {
    if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
        return Err(LpathError::InvalidInput(format!(
            "{what} contains a non-finite value at flat index {pos}"
        )));
    }
    Ok(())
}

/// Builds a matrix from rows of equal length.
pub fn from_rows(rows: &[Vec<f64>]) -> Result<DataMatrix> {
    let ncols = rows.first().map_or(0, Vec::len);
    let mut flat = Vec::with_capacity(rows.len() * ncols);
    for row in rows {
        if row.len() != ncols {
            return Err(LpathError::shape("from_rows", ncols, row.len()));
        }
        flat.extend_from_slice(row);
    }
    Array2::from_shape_vec((rows.len(), ncols), flat)
        .map_err(|e| LpathError::InvalidInput(e.to_string()))
}

/// Selects rows by index, in the given order.
pub fn select_rows(x: ArrayView2<'_, f64>, idx: &[usize]) -> DataMatrix {
    x.select(Axis(0), idx)
}

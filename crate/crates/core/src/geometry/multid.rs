//! Experimental essential distance between point clouds.

use ndarray::{ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;

use crate::error::{LpathError, Result};

fn dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean distance from each row of `from` to its `k` nearest rows of `to`.
fn knn_mean(from: ArrayView2<'_, f64>, to: ArrayView2<'_, f64>, k: usize) -> Vec<f64> {
    (0..from.nrows())
        .into_par_iter()
        .map(|i| {
            let p = from.row(i);
            let mut d: Vec<f64> = to.axis_iter(Axis(0)).map(|q| dist(p, q)).collect();
            let k = k.min(d.len());
            d.select_nth_unstable_by(k - 1, f64::total_cmp);
            d[..k].iter().sum::<f64>() / k as f64
        })
        .collect()
}

/// Multi-dimensional counterpart of the facing-tail essential distance.
/// Each sample drops the `floor(eps * n)` rows whose `k` nearest neighbours
/// in the other sample are closest on average; the result is the smallest
/// Euclidean distance between the retained rows. A heuristic: it is exact
/// for well-separated 1-D samples and has no optimality guarantee otherwise.
pub fn essential_distance_knn(
    iid: ArrayView2<'_, f64>,
    ood: ArrayView2<'_, f64>,
    eps_iid: f64,
    eps_ood: f64,
    k: usize,
) -> Result<f64> {
    if iid.nrows() == 0 || ood.nrows() == 0 {
        return Err(LpathError::InsufficientData("empty sample".into()));
    }
    if iid.ncols() != ood.ncols() {
        return Err(LpathError::shape("OOD columns", iid.ncols(), ood.ncols()));
    }
    if k == 0 {
        return Err(LpathError::InvalidConfig("k must be at least 1".into()));
    }
    for (e, what) in [(eps_iid, "eps_iid"), (eps_ood, "eps_ood")] {
        if !(0.0..1.0).contains(&e) {
            return Err(LpathError::Domain(format!("{what} must lie in [0,1), got {e}")));
        }
    }
    if iid.iter().chain(ood.iter()).any(|v| !v.is_finite()) {
        return Err(LpathError::InvalidInput("non-finite coordinates".into()));
    }
    let keep = |x: ArrayView2<'_, f64>, other: ArrayView2<'_, f64>, eps: f64| -> Vec<usize> {
        let drop = (eps * x.nrows() as f64 + 1e-9).floor() as usize;
        let score = knn_mean(x, other, k);
        let mut idx: Vec<usize> = (0..x.nrows()).collect();
        idx.sort_by(|&a, &b| score[a].total_cmp(&score[b]).then(a.cmp(&b)));
        idx.split_off(drop.min(x.nrows() - 1))
    };
    let ki = keep(iid, ood, eps_iid);
    let ko = keep(ood, iid, eps_ood);
    Ok(ki
        .par_iter()
        .map(|&a| ko.iter().map(|&b| dist(iid.row(a), ood.row(b))).fold(f64::INFINITY, f64::min))
        .reduce(|| f64::INFINITY, f64::min))
}

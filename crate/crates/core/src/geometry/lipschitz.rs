//! Sampled Lipschitz and co-Lipschitz constants of black-box vector maps.

use ndarray::{Array1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{LpathError, Result};
use crate::matrix::l2_dist;
use crate::vae::MlpVae;

/// Constants `(K, k)` of a co-Lipschitz map and `L` of a Lipschitz one, in the
/// pairwise convention `d_X <= 2K d_Z + k`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoLipschitzEstimate {
    pub co_lipschitz: f64,
    pub offset: f64,
    pub lipschitz: f64,
    pub pair_count: usize,
}

impl CoLipschitzEstimate {
    pub fn new(co_lipschitz: f64, offset: f64, lipschitz: f64, pair_count: usize) -> Result<Self> {
        if !(co_lipschitz > 0.0 && co_lipschitz.is_finite()) {
            return Err(LpathError::InvalidConfig(format!("K must be positive, got {co_lipschitz}")));
        }
        if !(offset >= 0.0 && offset.is_finite()) {
            return Err(LpathError::InvalidConfig(format!("k must be nonnegative, got {offset}")));
        }
        if !(lipschitz > 0.0 && lipschitz.is_finite()) {
            return Err(LpathError::InvalidConfig(format!("L must be positive, got {lipschitz}")));
        }
        Ok(CoLipschitzEstimate {
            co_lipschitz,
            offset,
            lipschitz,
            pair_count,
        })
    }

    /// Replaces `L`, e.g. with the decoder's constant.
    pub fn with_lipschitz(mut self, lipschitz: f64) -> Self {
        self.lipschitz = lipschitz;
        self
    }
}

/// Co-Lipschitz envelope fitted over sampled pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct CoLipschitzFit {
    /// `K`, `k` chosen under the offset cap; `L` is the forward constant of
    /// the same map on the same pairs.
    pub estimate: CoLipschitzEstimate,
    pub k_cap: f64,
    /// Smallest `K` with `k = 0`; infinite when some pair collapses.
    pub zero_offset_k: f64,
    /// `(K, k(K))` on a log grid, `K` ascending.
    pub frontier: Vec<(f64, f64)>,
}

impl CoLipschitzFit {
    /// Minimal offset `k(K) = max(0, max_pairs d_X - 2K d_Z)`.
    pub fn offset_at(pairs: &[(f64, f64)], k: f64) -> f64 {
        pairs.iter().fold(0.0f64, |acc, &(dx, dz)| acc.max(dx - 2.0 * k * dz))
    }
}

pub(crate) fn eval_rows<F>(f: &F, probes: ArrayView2<'_, f64>) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    let rows: Vec<Vec<f64>> = probes.axis_iter(Axis(0)).map(|r| r.to_vec()).collect();
    rows.par_iter().map(|r| f(r)).collect()
}

/// Index pairs: all of them when `pairs` covers every unordered pair,
/// otherwise `pairs` uniform draws of distinct indices.
fn sample_pairs<R: Rng + ?Sized>(n: usize, pairs: usize, rng: &mut R) -> Vec<(usize, usize)> {
    let total = n * n.saturating_sub(1) / 2;
    if pairs >= total {
        return (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    }
    (0..pairs)
        .map(|_| {
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            (i, j)
        })
        .collect()
}

fn check_probes(probes: ArrayView2<'_, f64>, pairs: usize) -> Result<()> {
    if probes.nrows() < 2 {
        return Err(LpathError::InsufficientData(format!(
            "need at least 2 probe points, got {}",
            probes.nrows()
        )));
    }
    if pairs == 0 {
        return Err(LpathError::InvalidConfig("pair count must be positive".into()));
    }
    crate::matrix::check_finite(probes, "probe points")
}

/// Largest `|f(a) - f(b)| / |a - b|` over sampled probe pairs: a lower bound
/// on the Lipschitz constant that can only grow with more pairs.
pub fn estimate_lipschitz<F, R>(f: &F, probes: ArrayView2<'_, f64>, pairs: usize, rng: &mut R) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
    R: Rng + ?Sized,
{
    check_probes(probes, pairs)?;
    let images = eval_rows(f, probes)?;
    let rows: Vec<Vec<f64>> = probes.axis_iter(Axis(0)).map(|r| r.to_vec()).collect();
    let mut best = 0.0f64;
    for (i, j) in sample_pairs(rows.len(), pairs, rng) {
        let dx = l2_dist(&rows[i], &rows[j]);
        if dx > 0.0 {
            best = best.max(l2_dist(&images[i], &images[j]) / dx);
        }
    }
    Ok(best)
}

/// Fits `d_X <= 2K d_Z + k` over sampled pairs. `K` is the smallest value
/// whose minimal offset stays within `k_cap` (default: 10% of the median
/// input distance).
pub fn estimate_co_lipschitz<F, R>(
    f: &F,
    probes: ArrayView2<'_, f64>,
    pairs: usize,
    k_cap: Option<f64>,
    rng: &mut R,
) -> Result<CoLipschitzFit>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
    R: Rng + ?Sized,
{
    check_probes(probes, pairs)?;
    let images = eval_rows(f, probes)?;
    let rows: Vec<Vec<f64>> = probes.axis_iter(Axis(0)).map(|r| r.to_vec()).collect();
    let dists: Vec<(f64, f64)> = sample_pairs(rows.len(), pairs, rng)
        .into_iter()
        .map(|(i, j)| (l2_dist(&rows[i], &rows[j]), l2_dist(&images[i], &images[j])))
        .filter(|&(dx, _)| dx > 0.0)
        .collect();
    if dists.is_empty() {
        return Err(LpathError::InsufficientData("all sampled probe pairs coincide".into()));
    }
    if dists.iter().all(|&(_, dz)| dz == 0.0) {
        return Err(LpathError::Domain(
            "map collapses every probe to one point; co-Lipschitz constant is unbounded".into(),
        ));
    }
    let mut dx_sorted: Vec<f64> = dists.iter().map(|p| p.0).collect();
    dx_sorted.sort_by(f64::total_cmp);
    let median = dx_sorted[dx_sorted.len() / 2];
    let cap = match k_cap {
        Some(c) if !(c >= 0.0 && c.is_finite()) => {
            return Err(LpathError::InvalidConfig(format!("k_cap must be nonnegative, got {c}")));
        }
        Some(c) => c,
        None => 0.1 * median,
    };

    let mut k_star = 0.0f64;
    let mut zero_offset = 0.0f64;
    let mut forward = 0.0f64;
    for &(dx, dz) in &dists {
        forward = forward.max(dz / dx);
        zero_offset = if dz > 0.0 { zero_offset.max(dx / (2.0 * dz)) } else { f64::INFINITY };
        if dx > cap {
            if dz == 0.0 {
                return Err(LpathError::Domain(format!(
                    "pair at input distance {dx} maps to one point; no finite K keeps k <= {cap}"
                )));
            }
            k_star = k_star.max((dx - cap) / (2.0 * dz));
        }
    }
    let k_star = if k_star > 0.0 {
        k_star
    } else {
        // Every pair already fits inside the cap; report the tightest ratio.
        dists
            .iter()
            .filter(|p| p.1 > 0.0)
            .map(|&(dx, dz)| dx / (2.0 * dz))
            .fold(f64::INFINITY, f64::min)
            .min(f64::MAX)
    };
    let offset = CoLipschitzFit::offset_at(&dists, k_star).min(cap.max(0.0));

    let hi = if zero_offset.is_finite() { zero_offset * 2.0 } else { k_star * 100.0 };
    let lo = k_star / 100.0;
    let frontier = (0..=60)
        .map(|s| {
            let k = lo * (hi / lo).powf(s as f64 / 60.0);
            (k, CoLipschitzFit::offset_at(&dists, k))
        })
        .collect();

    Ok(CoLipschitzFit {
        estimate: CoLipschitzEstimate {
            co_lipschitz: k_star,
            offset,
            lipschitz: forward,
            pair_count: dists.len(),
        },
        k_cap: cap,
        zero_offset_k: zero_offset,
        frontier,
    })
}

/// `C * sqrt(m * n)` with `C` the largest absolute decoder Jacobian entry over
/// the origin and `points` standard-normal latent draws.
pub fn jacobian_bound<R: Rng + ?Sized>(model: &MlpVae, points: usize, rng: &mut R) -> Result<f64> {
    let m = model.latent_dim();
    let n = model.input_dim();
    let mut zs = vec![Array1::<f64>::zeros(m)];
    zs.extend((0..points).map(|_| Array1::from_shape_simple_fn(m, || rng.sample(StandardNormal))));
    let c = zs
        .par_iter()
        .map(|z| {
            model
                .decoder_jacobian(z.view())
                .map(|j| j.iter().fold(0.0f64, |a, v| a.max(v.abs())))
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0f64, f64::max);
    Ok(c * ((m * n) as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vae::{Activation, Dense};
    use ndarray::{array, Array2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn linear(a: Array2<f64>) -> impl Fn(&[f64]) -> Result<Vec<f64>> + Sync {
        move |x: &[f64]| Ok(a.dot(&Array1::from(x.to_vec())).to_vec())
    }

    fn gaussian_probes(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((n, d), || rng.sample(StandardNormal))
    }

    #[test]
    fn lipschitz_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let probes = gaussian_probes(200, 2, 2);
        // Singular values 3 and 1.
        let f = linear(array![[3.0, 0.0], [0.0, 1.0]]);
        let l = estimate_lipschitz(&f, probes.view(), 10_000, &mut rng).unwrap();
        assert!(l <= 3.0 + 1e-12 && l >= 2.9, "{l}");

        let constant = |_: &[f64]| Ok(vec![1.0, 2.0]);
        assert_eq!(estimate_lipschitz(&constant, probes.view(), 100, &mut rng).unwrap(), 0.0);

        let scalar = Array2::from_shape_fn((30, 1), |(i, _)| i as f64 * 0.37 - 4.0);
        let double = |z: &[f64]| Ok(vec![2.0 * z[0]]);
        let l = estimate_lipschitz(&double, scalar.view(), 50, &mut rng).unwrap();
        assert!((l - 2.0).abs() < 1e-12);

        assert!(estimate_lipschitz(&double, scalar.slice(ndarray::s![..1, ..]), 5, &mut rng).is_err());
    }

    #[test]
    fn lipschitz_grows_with_pairs() {
        let probes = gaussian_probes(100, 3, 5);
        let f = linear(array![[1.0, 2.0, 0.0], [0.5, -1.0, 3.0]]);
        let mut prev = 0.0;
        for pairs in [10, 100, 1000] {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let l = estimate_lipschitz(&f, probes.view(), pairs, &mut rng).unwrap();
            assert!(l >= prev);
            prev = l;
        }
    }

    #[test]
    fn co_lipschitz_isometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let probes = gaussian_probes(150, 3, 4);
        let id = |x: &[f64]| Ok(x.to_vec());
        let fit = estimate_co_lipschitz(&id, probes.view(), 5000, None, &mut rng).unwrap();
        assert!(fit.estimate.co_lipschitz <= 0.5 + 1e-12);
        assert!(fit.estimate.offset <= fit.k_cap);
        assert!((fit.zero_offset_k - 0.5).abs() < 1e-12);
        assert!((fit.estimate.lipschitz - 1.0).abs() < 1e-12);
    }

    #[test]
    fn co_lipschitz_linear_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let probes = gaussian_probes(300, 2, 6);
        // Smallest singular value 0.5: d_X <= d_Z / 0.5, so K = 1 at k = 0.
        let f = linear(array![[2.0, 0.0], [0.0, 0.5]]);
        let fit = estimate_co_lipschitz(&f, probes.view(), 20_000, Some(0.0), &mut rng).unwrap();
        assert!(fit.estimate.co_lipschitz <= 1.0 + 1e-12);
        assert!(fit.estimate.co_lipschitz >= 0.95, "{}", fit.estimate.co_lipschitz);
        assert_eq!(fit.estimate.offset, 0.0);
        assert_eq!(fit.zero_offset_k, fit.estimate.co_lipschitz);
        let default = estimate_co_lipschitz(&f, probes.view(), 20_000, None, &mut rng).unwrap();
        assert!(default.estimate.co_lipschitz <= 1.0 + 1e-12 && default.estimate.co_lipschitz > 0.8);
    }

    #[test]
    fn co_lipschitz_degenerate_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let probes = gaussian_probes(100, 2, 7);
        let collapse = |_: &[f64]| Ok(vec![0.0]);
        assert!(matches!(
            estimate_co_lipschitz(&collapse, probes.view(), 1000, None, &mut rng),
            Err(LpathError::Domain(_))
        ));

        // Forgets the second coordinate: pairs differing only there never fit k = 0.
        let drop_y = |x: &[f64]| Ok(vec![x[0], 0.0]);
        let mut grid = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                grid.extend([i as f64, j as f64]);
            }
        }
        let grid = Array2::from_shape_vec((100, 2), grid).unwrap();
        assert!(estimate_co_lipschitz(&drop_y, grid.view(), 10_000, Some(1.0), &mut rng).is_err());
        let fit = estimate_co_lipschitz(&drop_y, grid.view(), 10_000, Some(100.0), &mut rng).unwrap();
        assert!(fit.zero_offset_k.is_infinite());
        let ks: Vec<f64> = fit.frontier.iter().map(|p| p.1).collect();
        assert!(ks.windows(2).all(|w| w[0] >= w[1]));
        // The offset never drops below the collapsed vertical extent.
        assert!(ks.iter().all(|&k| k >= 9.0 - 1e-12));
        assert!(ks[0] > ks[ks.len() - 1]);
    }

    fn linear_decoder(b: Array2<f64>) -> MlpVae {
        let (m, n) = b.dim();
        let head = Dense::zeros(n, m, Activation::Identity);
        let mut dec = Dense::zeros(m, n, Activation::Identity);
        dec.weight = b;
        MlpVae::new(vec![], head.clone(), head, vec![dec], 1.0).unwrap()
    }

    #[test]
    fn jacobian_bound_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = array![[1.0, -4.0, 0.5], [2.0, 0.0, -1.0]];
        let model = linear_decoder(b.clone());
        let bound = jacobian_bound(&model, 8, &mut rng).unwrap();
        assert_eq!(bound, 4.0 * 6f64.sqrt());
        let sv = nalgebra::DMatrix::from_row_slice(2, 3, b.as_slice().unwrap()).singular_values();
        assert!(bound >= sv.max());

        let zero = linear_decoder(Array2::zeros((2, 3)));
        assert_eq!(jacobian_bound(&zero, 8, &mut rng).unwrap(), 0.0);
    }

    #[test]
    fn jacobian_bound_dominates_sampled_lipschitz() {
        let cfg = crate::vae::TrainConfig {
            hidden_sizes: vec![16],
            ..Default::default()
        };
        let model = crate::vae::init_model(&cfg, 6, 3, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let bound = jacobian_bound(&model, 64, &mut rng).unwrap();
        let probes = gaussian_probes(200, 3, 8);
        let dec = |z: &[f64]| model.decode(z);
        let l = estimate_lipschitz(&dec, probes.view(), 5000, &mut rng).unwrap();
        assert!(bound >= l, "{bound} < {l}");
    }
}

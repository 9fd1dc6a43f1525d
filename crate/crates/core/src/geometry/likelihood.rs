//! Average likelihood ratios of a sample's own posterior against the best
//! posterior from a finite IID reference set.

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{LpathError, Result};
use crate::vae::MlpVae;

fn log_mean_exp(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + (v.iter().map(|x| (x - m).exp()).sum::<f64>() / v.len() as f64).ln()
}

fn log_ratio(num: f64, den: f64) -> f64 {
    if num == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else if den == f64::NEG_INFINITY {
        f64::INFINITY
    } else {
        num - den
    }
}

/// Diagonal Gaussian log density.
fn log_normal(z: ArrayView1<'_, f64>, mu: ArrayView1<'_, f64>, sigma: ArrayView1<'_, f64>) -> f64 {
    let half_log_tau = 0.5 * (2.0 * PI).ln();
    z.iter()
        .zip(mu)
        .zip(sigma)
        .map(|((&z, &m), &s)| {
            let d = (z - m) / s;
            -0.5 * d * d - s.ln() - half_log_tau
        })
        .sum()
}

/// Precomputed reference posteriors and their decoded samples. The same
/// standard-normal draws are reused for every posterior (common random numbers).
pub struct LikelihoodRatioScorer<'a> {
    model: &'a MlpVae,
    noise: Array2<f64>,
    ref_mu: Array2<f64>,
    ref_sigma: Array2<f64>,
    /// Row `r * K + k` decodes `mu_r + sigma_r * noise_k`.
    ref_decoded: Array2<f64>,
}

impl<'a> LikelihoodRatioScorer<'a> {
    pub fn new<R: Rng + ?Sized>(
        model: &'a MlpVae,
        reference: ArrayView2<'_, f64>,
        mc_samples: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if reference.nrows() == 0 {
            return Err(LpathError::InsufficientData("empty IID reference set".into()));
        }
        if mc_samples == 0 {
            return Err(LpathError::InvalidConfig("mc_samples must be at least 1".into()));
        }
        let m = model.latent_dim();
        let noise = Array2::from_shape_simple_fn((mc_samples, m), || rng.sample(StandardNormal));
        let (ref_mu, ref_sigma) = model.encode_batch(reference)?;
        let r = reference.nrows();
        let mut z = Array2::zeros((r * mc_samples, m));
        for i in 0..r {
            for k in 0..mc_samples {
                let mut row = z.row_mut(i * mc_samples + k);
                row.assign(&(&ref_mu.row(i) + &(&ref_sigma.row(i) * &noise.row(k))));
            }
        }
        let ref_decoded = model.decode_batch(z.view())?;
        Ok(LikelihoodRatioScorer {
            model,
            noise,
            ref_mu,
            ref_sigma,
            ref_decoded,
        })
    }

    fn mc(&self) -> usize {
        self.noise.nrows()
    }

    fn log_decoder_density(&self, x: ArrayView1<'_, f64>, mean: ArrayView1<'_, f64>) -> f64 {
        let s2 = self.model.decoder_sigma * self.model.decoder_sigma;
        let sq: f64 = x.iter().zip(mean).map(|(a, b)| (a - b) * (a - b)).sum();
        -sq / (2.0 * s2) - 0.5 * x.len() as f64 * (2.0 * PI * s2).ln()
    }

    /// `(lambda_x, lambda_z)` for one sample; `-inf` rather than NaN when
    /// the numerator density underflows.
    pub fn score(&self, x: &[f64]) -> Result<(f64, f64)> {
        let (mu, sigma) = self.model.encode(x)?;
        let mu = ndarray::Array1::from(mu);
        let sigma = ndarray::Array1::from(sigma);
        let z = &self.noise * &sigma + &mu;
        let decoded = self.model.decode_batch(z.view())?;
        let xv = ArrayView1::from(x);
        let k = self.mc();

        let num_x = log_mean_exp(decoded.axis_iter(Axis(0)).map(|d| self.log_decoder_density(xv, d)));
        let den_x = (0..self.ref_mu.nrows())
            .map(|r| {
                log_mean_exp((0..k).map(|j| self.log_decoder_density(xv, self.ref_decoded.row(r * k + j))))
            })
            .fold(f64::NEG_INFINITY, f64::max);

        let num_z = log_mean_exp(z.axis_iter(Axis(0)).map(|zk| log_normal(zk, mu.view(), sigma.view())));
        let den_z = (0..self.ref_mu.nrows())
            .map(|r| {
                log_mean_exp(
                    z.axis_iter(Axis(0))
                        .map(|zk| log_normal(zk, self.ref_mu.row(r), self.ref_sigma.row(r))),
                )
            })
            .fold(f64::NEG_INFINITY, f64::max);
        Ok((log_ratio(num_x, den_x), log_ratio(num_z, den_z)))
    }

    pub fn score_batch(&self, x: ArrayView2<'_, f64>) -> Result<Vec<(f64, f64)>> {
        let rows: Vec<Vec<f64>> = x.axis_iter(Axis(0)).map(|r| r.to_vec()).collect();
        rows.par_iter().map(|r| self.score(r)).collect()
    }
}

/// `(lambda_x, lambda_z)` of `x` against `iid_reference` with `mc_samples`
/// posterior draws per density.
pub fn likelihood_ratio_scores<R: Rng + ?Sized>(
    model: &MlpVae,
    x: &[f64],
    iid_reference: ArrayView2<'_, f64>,
    mc_samples: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    LikelihoodRatioScorer::new(model, iid_reference, mc_samples, rng)?.score(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{synth_generate, SynthSpec};
    use crate::vae::{train, TrainConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_model() -> (MlpVae, Array2<f64>) {
        let data = synth_generate(
            SynthSpec::Gaussian {
                mu: 0.0,
                sigma: 1.0,
                dim: 2,
            },
            1500,
            3,
        )
        .unwrap();
        let cfg = TrainConfig {
            hidden_sizes: vec![16],
            latent_dim: 2,
            epochs: 30,
            batch_size: 50,
            learning_rate: 5e-3,
            decoder_sigma: 0.3,
            seed: 1,
            ..Default::default()
        };
        let (model, _) = train(data.data.view(), &cfg).unwrap();
        (model, data.data)
    }

    #[test]
    fn log_mean_exp_is_stable() {
        let v = log_mean_exp([-1000.0, -1000.0].into_iter());
        assert!((v + 1000.0).abs() < 1e-12);
        assert_eq!(log_mean_exp([f64::NEG_INFINITY].into_iter()), f64::NEG_INFINITY);
        assert_eq!(log_ratio(f64::NEG_INFINITY, f64::NEG_INFINITY), f64::NEG_INFINITY);
    }

    #[test]
    fn self_reference_bounds() {
        let (model, data) = toy_model();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = data.row(7).to_vec();
        let single = data.slice(ndarray::s![7..8, ..]);
        let (lx, lz) = likelihood_ratio_scores(&model, &x, single, 16, &mut rng).unwrap();
        assert!(lx.abs() < 1e-9 && lz.abs() < 1e-9, "{lx} {lz}");

        let reference = data.slice(ndarray::s![..200, ..]);
        let scorer = LikelihoodRatioScorer::new(&model, reference, 32, &mut rng).unwrap();
        for i in [0, 50, 199] {
            let (lx, lz) = scorer.score(&data.row(i).to_vec()).unwrap();
            assert!(lx <= 1e-9 && lz <= 1e-9);
        }
    }

    /// Direct evaluation with plain loops and explicit densities.
    fn oracle(scorer: &LikelihoodRatioScorer<'_>, x: &[f64]) -> (f64, f64) {
        let model = scorer.model;
        let s = model.decoder_sigma;
        let dec = |x: &[f64], mean: &[f64]| -> f64 {
            x.iter()
                .zip(mean)
                .map(|(a, b)| (-(a - b) * (a - b) / (2.0 * s * s)).exp() / (s * (2.0 * PI).sqrt()))
                .product()
        };
        let lat = |z: &[f64], mu: &[f64], sd: &[f64]| -> f64 {
            (0..z.len())
                .map(|j| {
                    let d = (z[j] - mu[j]) / sd[j];
                    (-0.5 * d * d).exp() / (sd[j] * (2.0 * PI).sqrt())
                })
                .product()
        };
        let post = |mu: &[f64], sd: &[f64]| -> Vec<Vec<f64>> {
            scorer
                .noise
                .rows()
                .into_iter()
                .map(|e| (0..mu.len()).map(|j| mu[j] + sd[j] * e[j]).collect())
                .collect()
        };
        let k = scorer.noise.nrows() as f64;
        let (mu, sd) = model.encode(x).unwrap();
        let zs = post(&mu, &sd);
        let num_x = zs.iter().map(|z| dec(x, &model.decode(z).unwrap())).sum::<f64>() / k;
        let num_z = zs.iter().map(|z| lat(z, &mu, &sd)).sum::<f64>() / k;
        let (mut den_x, mut den_z) = (0.0f64, 0.0f64);
        for r in 0..scorer.ref_mu.nrows() {
            let (rm, rs) = (scorer.ref_mu.row(r).to_vec(), scorer.ref_sigma.row(r).to_vec());
            let dx = post(&rm, &rs).iter().map(|z| dec(x, &model.decode(z).unwrap())).sum::<f64>() / k;
            let dz = zs.iter().map(|z| lat(z, &rm, &rs)).sum::<f64>() / k;
            den_x = den_x.max(dx);
            den_z = den_z.max(dz);
        }
        ((num_x / den_x).ln(), (num_z / den_z).ln())
    }

    #[test]
    fn matches_direct_evaluation() {
        let (model, data) = toy_model();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let scorer = LikelihoodRatioScorer::new(&model, data.slice(ndarray::s![..50, ..]), 8, &mut rng).unwrap();
        for x in [data.row(60).to_vec(), data.row(61).to_vec(), vec![2.5, -1.0]] {
            let (lx, lz) = scorer.score(&x).unwrap();
            let (ox, oz) = oracle(&scorer, &x);
            assert!((lx - ox).abs() < 1e-8 * (1.0 + ox.abs()), "{lx} {ox}");
            assert!((lz - oz).abs() < 1e-8 * (1.0 + oz.abs()), "{lz} {oz}");
        }
    }

    #[test]
    fn far_point_is_extreme() {
        // A far point is explained by its own posterior much better than by
        // any IID posterior, so both ratios land above the IID range.
        let (model, data) = toy_model();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let scorer = LikelihoodRatioScorer::new(&model, data.slice(ndarray::s![..300, ..]), 16, &mut rng).unwrap();
        let iid = scorer.score_batch(data.slice(ndarray::s![300..700, ..])).unwrap();
        let (far_x, far_z) = scorer.score(&[9.0, -9.0]).unwrap();
        let p99 = |mut v: Vec<f64>| {
            v.sort_by(f64::total_cmp);
            v[(0.99 * (v.len() - 1) as f64) as usize]
        };
        assert!(far_x > p99(iid.iter().map(|p| p.0).collect()));
        assert!(far_z > p99(iid.iter().map(|p| p.1).collect()));
    }

    #[test]
    fn errors() {
        let (model, data) = toy_model();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = data.row(0).to_vec();
        assert!(likelihood_ratio_scores(&model, &x, data.slice(ndarray::s![..0, ..]), 4, &mut rng).is_err());
        assert!(likelihood_ratio_scores(&model, &x, data.view(), 0, &mut rng).is_err());
        assert!(likelihood_ratio_scores(&model, &[1.0], data.view(), 4, &mut rng).is_err());
    }
}

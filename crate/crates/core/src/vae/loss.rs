use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::model::{DenseCache, MlpVae};
use super::TrainConfig;
use crate::error::{LpathError, Result};

/// Batch-averaged objective terms. `total = recon + kl_weight*kl + mmd_weight*mmd`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
    pub mmd: f64,
}

/// Parameter gradients in canonical layer order.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpVae) -> Self {
        let layers = model.layers();
        Gradients {
            weights: layers.iter().map(|l| Array2::zeros(l.weight.raw_dim())).collect(),
            biases: layers.iter().map(|l| Array1::zeros(l.bias.len())).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.weights
            .iter()
            .flat_map(|w| w.iter())
            .chain(self.biases.iter().flat_map(|b| b.iter()))
            .fold(0.0, |acc, v| acc.max(v.abs()))
    }
}

fn check_sigma(sigma: &[f64]) -> Result<()> {
    if let Some(s) = sigma.iter().find(|s| !(**s > 0.0)) {
        return Err(LpathError::Domain(format!("sigma must be positive, got {s}")));
    }
    Ok(())
}

/// `z = mu + sigma * eps` with `eps` drawn from `rng`.
pub fn reparameterize<R: Rng + ?Sized>(mu: &[f64], sigma: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    if mu.len() != sigma.len() {
        return Err(LpathError::shape("reparameterize", mu.len(), sigma.len()));
    }
    check_sigma(sigma)?;
    Ok(mu
        .iter()
        .zip(sigma)
        .map(|(m, s)| {
            let e: f64 = rng.sample(StandardNormal);
            m + s * e
        })
        .collect())
}

fn kl_parts(mu: &[f64], sigma: &[f64]) -> Result<(f64, f64, f64)> {
    if mu.len() != sigma.len() {
        return Err(LpathError::shape("kl", mu.len(), sigma.len()));
    }
    check_sigma(sigma)?;
    let var: f64 = sigma.iter().map(|s| s * s).sum();
    let logvar: f64 = sigma.iter().map(|s| 2.0 * s.ln()).sum();
    let mu_sq: f64 = mu.iter().map(|m| m * m).sum();
    Ok((var - logvar - mu.len() as f64, mu_sq, mu.len() as f64))
}

/// KL(N(mu, diag sigma^2) || N(0, I)).
pub fn kl_standard(mu: &[f64], sigma: &[f64]) -> Result<f64> {
    let (base, mu_sq, _) = kl_parts(mu, sigma)?;
    Ok(0.5 * (base + mu_sq))
}

/// KL variant that pulls `||mu||^2` towards `m` rather than 0.
pub fn kl_typical(mu: &[f64], sigma: &[f64]) -> Result<f64> {
    let (base, mu_sq, m) = kl_parts(mu, sigma)?;
    Ok(0.5 * (base + (mu_sq - m).abs()))
}

fn sq_dist(a: ndarray::ArrayView1<'_, f64>, b: ndarray::ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kernel_mean(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, gamma: f64) -> f64 {
    let mut acc = 0.0;
    for ra in a.rows() {
        for rb in b.rows() {
            acc += (-gamma * sq_dist(ra, rb)).exp();
        }
    }
    acc / (a.nrows() * b.nrows()) as f64
}

/// Biased (V-statistic) squared MMD with kernel `exp(-|x-y|^2 / (2 h^2))`.
pub fn mmd_sq_biased(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, bandwidth: f64) -> Result<f64> {
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(LpathError::Domain(format!(
            "mmd bandwidth must be positive, got {bandwidth}"
        )));
    }
    if a.ncols() != b.ncols() {
        return Err(LpathError::shape("mmd", a.ncols(), b.ncols()));
    }
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(LpathError::InvalidInput("mmd needs nonempty samples".into()));
    }
    let gamma = 1.0 / (2.0 * bandwidth * bandwidth);
    Ok(kernel_mean(a, a, gamma) + kernel_mean(b, b, gamma) - 2.0 * kernel_mean(a, b, gamma))
}

/// Median pairwise Euclidean distance over the rows of `a` and `b` together.
/// Falls back to 1 when fewer than two rows exist or the median is zero.
pub fn median_bandwidth(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> f64 {
    let rows: Vec<_> = a.rows().into_iter().chain(b.rows()).collect();
    let mut d = Vec::with_capacity(rows.len() * rows.len().saturating_sub(1) / 2);
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            d.push(sq_dist(rows[i], rows[j]).sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    let n = d.len();
    let (_, hi, _) = d.select_nth_unstable_by(n / 2, f64::total_cmp);
    let hi = *hi;
    let med = if n % 2 == 1 {
        hi
    } else {
        let lo = d[..n / 2].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    };
    if med > 0.0 && med.is_finite() {
        med
    } else {
        1.0
    }
}

/// Gradient of `mmd_sq_biased(a, b, h)` with respect to the rows of `a`.
fn mmd_grad_a(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, bandwidth: f64) -> Array2<f64> {
    let gamma = 1.0 / (2.0 * bandwidth * bandwidth);
    let inv_h2 = 1.0 / (bandwidth * bandwidth);
    let na = a.nrows() as f64;
    let nb = b.nrows() as f64;
    let mut grad = Array2::zeros(a.raw_dim());
    for (i, ai) in a.rows().into_iter().enumerate() {
        let mut g = grad.row_mut(i);
        for aj in a.rows() {
            let k = (-gamma * sq_dist(ai, aj)).exp();
            let c = -2.0 / (na * na) * k * inv_h2;
            Zip::from(&mut g).and(ai).and(aj).for_each(|g, &x, &y| *g += c * (x - y));
        }
        for bj in b.rows() {
            let k = (-gamma * sq_dist(ai, bj)).exp();
            let c = 2.0 / (na * nb) * k * inv_h2;
            Zip::from(&mut g).and(ai).and(bj).for_each(|g, &x, &y| *g += c * (x - y));
        }
    }
    grad
}

fn draw_normal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

/// Loss and gradients for one mini-batch with a single reparameterized
/// sample per row. Noise is drawn from `rng` as a `(rows, latent_dim)` block,
/// followed by an equal block of prior draws when the objective uses MMD.
pub fn loss_and_grads<R: Rng + ?Sized>(
    model: &MlpVae,
    batch: ArrayView2<'_, f64>,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<(LossBreakdown, Gradients)> {
    let (eps, prior) = draw_noise(model, batch.nrows(), config, rng);
    let (loss, grads) = compute(model, batch, config, eps.view(), prior.as_ref().map(|p| p.view()), true)?;
    Ok((loss, grads.expect("gradients requested")))
}

pub(crate) fn draw_noise<R: Rng + ?Sized>(
    model: &MlpVae,
    rows: usize,
    config: &TrainConfig,
    rng: &mut R,
) -> (Array2<f64>, Option<Array2<f64>>) {
    let m = model.latent_dim();
    let eps = draw_normal(rows, m, rng);
    let prior = config
        .objective
        .uses_mmd()
        .then(|| draw_normal(rows, m, rng));
    (eps, prior)
}

/// Same as [`loss_and_grads`] with caller-supplied noise.
pub fn loss_with_noise(
    model: &MlpVae,
    batch: ArrayView2<'_, f64>,
    config: &TrainConfig,
    eps: ArrayView2<'_, f64>,
    prior: Option<ArrayView2<'_, f64>>,
) -> Result<(LossBreakdown, Gradients)> {
    let (loss, grads) = compute(model, batch, config, eps, prior, true)?;
    Ok((loss, grads.expect("gradients requested")))
}

pub(crate) fn forward_loss(
    model: &MlpVae,
    batch: ArrayView2<'_, f64>,
    config: &TrainConfig,
    eps: ArrayView2<'_, f64>,
    prior: Option<ArrayView2<'_, f64>>,
) -> Result<LossBreakdown> {
    Ok(compute(model, batch, config, eps, prior, false)?.0)
}

fn run_layers(
    layers: &[super::Dense],
    mut h: Array2<f64>,
    first_index: usize,
) -> Result<(Array2<f64>, Vec<DenseCache>)> {
    let mut caches = Vec::with_capacity(layers.len());
    for (i, layer) in layers.iter().enumerate() {
        let cache = layer.forward_cached(h, first_index + i)?;
        h = cache.output.clone();
        caches.push(cache);
    }
    Ok((h, caches))
}

fn compute(
    model: &MlpVae,
    batch: ArrayView2<'_, f64>,
    config: &TrainConfig,
    eps: ArrayView2<'_, f64>,
    prior: Option<ArrayView2<'_, f64>>,
    want_grads: bool,
) -> Result<(LossBreakdown, Option<Gradients>)> {
    let rows = batch.nrows();
    let n = model.input_dim();
    let m = model.latent_dim();
    if rows == 0 {
        return Err(LpathError::InvalidInput("empty batch".into()));
    }
    if batch.ncols() != n {
        return Err(LpathError::shape("loss batch", n, batch.ncols()));
    }
    if eps.dim() != (rows, m) {
        return Err(LpathError::shape("reparameterization noise", rows * m, eps.len()));
    }
    let uses_mmd = config.objective.uses_mmd();
    if uses_mmd && prior.is_none() {
        return Err(LpathError::InvalidInput("mmd objective needs prior draws".into()));
    }

    let ne = model.encoder.len();
    let (h, enc_caches) = run_layers(&model.encoder, batch.to_owned(), 0)?;
    let mu_cache = model.mu_head.forward_cached(h.clone(), ne)?;
    let lv_cache = model.logvar_head.forward_cached(h, ne + 1)?;
    let mu = &mu_cache.output;
    let sigma = lv_cache.output.mapv(|lv| (0.5 * lv).exp());
    if let Some(bad) = sigma.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
        return Err(LpathError::Numeric {
            layer: ne + 1,
            message: format!("encoder sigma evaluated to {bad}"),
        });
    }
    let z = mu + &(&sigma * &eps);
    let (xhat, dec_caches) = run_layers(&model.decoder, z, ne + 2)?;

    let s2 = model.decoder_sigma * model.decoder_sigma;
    let diff = &xhat - &batch;
    let sq_sum: f64 = diff.iter().map(|d| d * d).sum();
    let recon = sq_sum / (rows as f64 * 2.0 * s2) + 0.5 * n as f64 * (2.0 * PI * s2).ln();

    let mu_sq = mu.map_axis(Axis(1), |r| r.dot(&r));
    let var_sum: f64 = sigma.iter().map(|s| s * s).sum();
    let lv_sum: f64 = lv_cache.output.sum();
    let typical = config.objective.uses_typical_kl();
    let mu_term: f64 = if typical {
        mu_sq.iter().map(|s| (s - m as f64).abs()).sum()
    } else {
        mu_sq.sum()
    };
    let kl = 0.5 * (var_sum + mu_term - (rows * m) as f64 - lv_sum) / rows as f64;

    let (mmd, bandwidth) = match prior {
        Some(p) if uses_mmd => {
            if p.dim() != (rows, m) {
                return Err(LpathError::shape("prior draws", rows * m, p.len()));
            }
            let h = config
                .mmd_bandwidth
                .unwrap_or_else(|| median_bandwidth(mu.view(), p));
            (mmd_sq_biased(mu.view(), p, h)?, h)
        }
        _ => (0.0, 1.0),
    };

    let total = recon + config.kl_weight * kl + config.mmd_weight * mmd;
    if !total.is_finite() {
        return Err(LpathError::Numeric {
            layer: ne + 2 + model.decoder.len() - 1,
            message: format!("loss evaluated to {total}"),
        });
    }
    let loss = LossBreakdown { total, recon, kl, mmd };
    if !want_grads {
        return Ok((loss, None));
    }

    let nl = ne + 2 + model.decoder.len();
    let mut gw: Vec<Option<Array2<f64>>> = vec![None; nl];
    let mut gb: Vec<Option<Array1<f64>>> = vec![None; nl];

    let mut d = diff / (rows as f64 * s2);
    for (i, (layer, cache)) in model.decoder.iter().zip(&dec_caches).enumerate().rev() {
        let (d_in, w, b) = layer.backward(cache, d);
        gw[ne + 2 + i] = Some(w);
        gb[ne + 2 + i] = Some(b);
        d = d_in;
    }
    let dz = d;

    let klw = config.kl_weight / rows as f64;
    let mut d_mu = dz.clone();
    for (i, mut row) in d_mu.axis_iter_mut(Axis(0)).enumerate() {
        let sign = if typical {
            let s = mu_sq[i] - m as f64;
            if s > 0.0 {
                1.0
            } else if s < 0.0 {
                -1.0
            } else {
                0.0
            }
        } else {
            1.0
        };
        Zip::from(&mut row)
            .and(mu.row(i))
            .for_each(|g, &u| *g += klw * sign * u);
    }
    if uses_mmd && config.mmd_weight != 0.0 {
        let g = mmd_grad_a(mu.view(), prior.expect("checked above"), bandwidth);
        d_mu.scaled_add(config.mmd_weight, &g);
    }
    let mut d_lv = dz;
    Zip::from(&mut d_lv)
        .and(&eps)
        .and(&sigma)
        .for_each(|g, &e, &s| *g = 0.5 * (*g * e * s + klw * (s * s - 1.0)));

    let (dh_mu, w, b) = model.mu_head.backward(&mu_cache, d_mu);
    gw[ne] = Some(w);
    gb[ne] = Some(b);
    let (dh_lv, w, b) = model.logvar_head.backward(&lv_cache, d_lv);
    gw[ne + 1] = Some(w);
    gb[ne + 1] = Some(b);
    let mut d = dh_mu + dh_lv;
    for (i, (layer, cache)) in model.encoder.iter().zip(&enc_caches).enumerate().rev() {
        let (d_in, w, b) = layer.backward(cache, d);
        gw[i] = Some(w);
        gb[i] = Some(b);
        d = d_in;
    }

    let grads = Gradients {
        weights: gw.into_iter().map(|g| g.expect("every layer visited")).collect(),
        biases: gb.into_iter().map(|g| g.expect("every layer visited")).collect(),
    };
    Ok((loss, Some(grads)))
}

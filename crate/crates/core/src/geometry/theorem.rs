//! Guaranteed-separation bounds for encoder/decoder pairs, the intra-IID
//! reconstruction margin and latent shell concentration.

use ndarray::{ArrayView2, Axis};
use rand::Rng;
use rayon::prelude::*;

use super::lipschitz::CoLipschitzEstimate;
use crate::error::{LpathError, Result};
use crate::matrix::l2_dist;
use crate::vae::MlpVae;

/// Worst reconstruction distance `max ||x - mu_x(mu_z(x))||_2` over the rows.
pub fn m_intra_estimate(model: &MlpVae, iid: ArrayView2<'_, f64>) -> Result<f64> {
    if iid.nrows() == 0 {
        return Err(LpathError::InsufficientData("m_intra needs at least one row".into()));
    }
    let rec = model.reconstruct_batch(iid)?;
    Ok(iid
        .axis_iter(Axis(0))
        .zip(rec.axis_iter(Axis(0)))
        .map(|(x, r)| (&x - &r).mapv(|d| d * d).sum().sqrt())
        .fold(0.0, f64::max))
}

/// Right-hand sides `(latent, reconstruction)` for co-Lipschitz degrees
/// `(k_def, k)` in the preimage-diameter convention and decoder constant `l`.
pub fn theorem1_bounds(k_def: f64, k: f64, l: f64, m_inter: f64, m_intra: f64) -> Result<(f64, f64)> {
    if !(k_def > 0.0 && k >= 0.0 && l > 0.0) {
        return Err(LpathError::InvalidConfig(format!(
            "need K > 0, k >= 0, L > 0; got K = {k_def}, k = {k}, L = {l}"
        )));
    }
    if !(m_intra >= 0.0) {
        return Err(LpathError::InvalidConfig(format!("m_intra must be nonnegative, got {m_intra}")));
    }
    if !(m_inter > 2.0 * m_intra) {
        return Err(LpathError::InvalidConfig(format!(
            "margins violate m_inter > 2 * m_intra: m_inter = {m_inter}, m_intra = {m_intra}"
        )));
    }
    let latent = (m_inter - k) / k_def;
    let recon = (2.0 * k_def - l) / (2.0 * k_def) * m_inter - m_intra + k * l / (2.0 * k_def);
    Ok((latent, recon))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Theorem1Report {
    pub bound_latent: f64,
    pub bound_recon: f64,
    /// Pairs meeting the latent bound (on both means and sigmas) or the
    /// reconstruction bound.
    pub fraction_pairs_satisfying: f64,
    pub fraction_latent: f64,
    pub fraction_recon: f64,
    pub m_inter: f64,
    pub m_intra: f64,
    /// `K` converted to the preimage-diameter convention (twice the pairwise one).
    pub k_diameter: f64,
    pub offset: f64,
    pub lipschitz: f64,
    pub pair_count: usize,
}

impl Theorem1Report {
    pub fn to_report(&self) -> String {
        format!(
            "m_inter = {:?}\nm_intra = {:?}\nK_pairwise = {:?}\nK = {:?}\nk = {:?}\nL = {:?}\nL_le_K = {:?}\n\
             bound_latent = {:?}\nbound_recon = {:?}\npairs = {:?}\nfraction_latent = {:?}\n\
             fraction_recon = {:?}\nfraction_pairs_satisfying = {:?}\n",
            self.m_inter,
            self.m_intra,
            0.5 * self.k_diameter,
            self.k_diameter,
            self.offset,
            self.lipschitz,
            self.lipschitz <= self.k_diameter,
            self.bound_latent,
            self.bound_recon,
            self.pair_count,
            self.fraction_latent,
            self.fraction_recon,
            self.fraction_pairs_satisfying,
        )
    }
}

/// Evaluates both inequalities over `(x_iid, x_ood)` pairs: every pair when
/// there are at most `max_pairs`, otherwise `max_pairs` uniform draws.
/// `encoder` returns `(mu_z, sigma_z)`, `decoder` maps `z` to `mu_x`.
#[allow(clippy::too_many_arguments)]
pub fn theorem1_check<E, D, R>(
    encoder: &E,
    decoder: &D,
    iid: ArrayView2<'_, f64>,
    ood: ArrayView2<'_, f64>,
    m_inter: f64,
    constants: &CoLipschitzEstimate,
    m_intra: f64,
    max_pairs: usize,
    rng: &mut R,
) -> Result<Theorem1Report>
where
    E: Fn(&[f64]) -> Result<(Vec<f64>, Vec<f64>)> + Sync,
    D: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
    R: Rng + ?Sized,
{
    let k_def = 2.0 * constants.co_lipschitz;
    let (bound_latent, bound_recon) =
        theorem1_bounds(k_def, constants.offset, constants.lipschitz, m_inter, m_intra)?;
    if iid.nrows() == 0 || ood.nrows() == 0 {
        return Err(LpathError::InsufficientData("theorem check needs IID and OOD rows".into()));
    }
    if iid.ncols() != ood.ncols() {
        return Err(LpathError::shape("OOD rows", iid.ncols(), ood.ncols()));
    }
    if max_pairs == 0 {
        return Err(LpathError::InvalidConfig("pair count must be positive".into()));
    }
    let codes = |x: ArrayView2<'_, f64>| -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
        let rows: Vec<Vec<f64>> = x.axis_iter(Axis(0)).map(|r| r.to_vec()).collect();
        rows.par_iter().map(|r| encoder(r)).collect()
    };
    let iid_codes = codes(iid)?;
    let ood_codes = codes(ood)?;
    let ood_recon: Vec<f64> = ood
        .axis_iter(Axis(0))
        .zip(&ood_codes)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|(x, (mu, _))| decoder(mu).map(|r| l2_dist(&x.to_vec(), &r)))
        .collect::<Result<_>>()?;

    let (ni, no) = (iid.nrows(), ood.nrows());
    let pairs: Vec<(usize, usize)> = if ni.saturating_mul(no) <= max_pairs {
        (0..ni).flat_map(|i| (0..no).map(move |j| (i, j))).collect()
    } else {
        (0..max_pairs)
            .map(|_| (rng.random_range(0..ni), rng.random_range(0..no)))
            .collect()
    };
    let (mut latent, mut recon, mut either) = (0usize, 0usize, 0usize);
    for &(i, j) in &pairs {
        let (mu_i, s_i) = &iid_codes[i];
        let (mu_o, s_o) = &ood_codes[j];
        let l_ok = l2_dist(mu_i, mu_o) >= bound_latent && l2_dist(s_i, s_o) >= bound_latent;
        let r_ok = ood_recon[j] >= bound_recon;
        latent += usize::from(l_ok);
        recon += usize::from(r_ok);
        either += usize::from(l_ok || r_ok);
    }
    let n = pairs.len() as f64;
    Ok(Theorem1Report {
        bound_latent,
        bound_recon,
        fraction_pairs_satisfying: either as f64 / n,
        fraction_latent: latent as f64 / n,
        fraction_recon: recon as f64 / n,
        m_inter,
        m_intra,
        k_diameter: k_def,
        offset: constants.offset,
        lipschitz: constants.lipschitz,
        pair_count: pairs.len(),
    })
}

/// Median radius of a set of norms and the share lying within `eps` of it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShellFit {
    pub radius: f64,
    pub concentration_fraction: f64,
    pub eps_shell: f64,
}

pub fn shell_fit(norms: &[f64], eps_shell: f64) -> Result<ShellFit> {
    if norms.is_empty() {
        return Err(LpathError::InsufficientData("shell fit needs at least one norm".into()));
    }
    if !(eps_shell >= 0.0 && eps_shell.is_finite()) {
        return Err(LpathError::InvalidConfig(format!("shell tolerance must be nonnegative, got {eps_shell}")));
    }
    if norms.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(LpathError::InvalidInput("norms must be finite and nonnegative".into()));
    }
    let mut s = norms.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let radius = if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) };
    let inside = s.iter().filter(|&&v| (v - radius).abs() <= eps_shell).count();
    Ok(ShellFit {
        radius,
        concentration_fraction: inside as f64 / n as f64,
        eps_shell,
    })
}

/// Shells of the posterior mean norms (`r0`) and sigma norms (`r_i`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatentShells {
    pub mu: ShellFit,
    pub sigma: ShellFit,
}

impl LatentShells {
    pub fn to_report(&self) -> String {
        format!(
            "eps_shell = {:?}\nr0 = {:?}\nrI = {:?}\nconcentration_fraction = {:?}\nsigma_concentration_fraction = {:?}\n",
            self.mu.eps_shell,
            self.mu.radius,
            self.sigma.radius,
            self.mu.concentration_fraction,
            self.sigma.concentration_fraction,
        )
    }
}

pub fn latent_shells(model: &MlpVae, x: ArrayView2<'_, f64>, eps_shell: f64) -> Result<LatentShells> {
    let (mu, sigma) = model.encode_batch(x)?;
    let norms = |a: &ndarray::Array2<f64>| -> Vec<f64> {
        a.axis_iter(Axis(0)).map(|r| crate::matrix::l2_norm(r)).collect()
    };
    Ok(LatentShells {
        mu: shell_fit(&norms(&mu), eps_shell)?,
        sigma: shell_fit(&norms(&sigma), eps_shell)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{synth_generate, SynthSpec};
    use crate::geometry::{margin_essential_eps, Distribution1d};
    use crate::vae::{Activation, Dense};
    use ndarray::{array, Array1, Array2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bound_example() {
        let (lat, rec) = theorem1_bounds(1.0, 0.0, 1.0, 1.0, 0.1).unwrap();
        assert_eq!(lat, 1.0);
        assert!((rec - 0.4).abs() < 1e-15);
        let err = theorem1_bounds(1.0, 0.0, 1.0, 1.0, 0.5).unwrap_err();
        assert!(matches!(err, LpathError::InvalidConfig(_)));
        let msg = err.to_string();
        assert!(msg.contains("m_inter") && msg.contains("m_intra"));
    }

    fn identity_model(d: usize) -> MlpVae {
        let mut head = Dense::zeros(d, d, Activation::Identity);
        head.weight = Array2::eye(d);
        let logvar = Dense::zeros(d, d, Activation::Identity);
        MlpVae::new(vec![], head.clone(), logvar, vec![head], 1.0).unwrap()
    }

    #[test]
    fn m_intra_examples() {
        let x = array![[0.2, 0.4], [1.0, -3.0]];
        assert_eq!(m_intra_estimate(&identity_model(2), x.view()).unwrap(), 0.0);

        let mut m = identity_model(2);
        m.decoder[0].weight *= 0.5;
        let one = array![[3.0, 4.0]];
        assert!((m_intra_estimate(&m, one.view()).unwrap() - 2.5).abs() < 1e-12);
        assert!(m_intra_estimate(&m, Array2::zeros((0, 2)).view()).is_err());
    }

    #[test]
    fn shell_examples() {
        let s = shell_fit(&[2.5; 7], 0.0).unwrap();
        assert_eq!((s.radius, s.concentration_fraction), (2.5, 1.0));
        let norms: Vec<f64> = (0..10_000).map(|k| (k as f64 + 0.5) / 1000.0).collect();
        let s = shell_fit(&norms, 0.5).unwrap();
        assert!((s.radius - 5.0).abs() < 1e-9);
        assert!((s.concentration_fraction - 0.1).abs() < 1e-3);
        assert!(shell_fit(&[], 0.1).is_err());
        assert!(shell_fit(&[1.0], -0.1).is_err());
    }

    /// Linear encoder `mu = A x`, `sigma = S x + c`, decoder `B z`.
    struct Linear {
        a: Array2<f64>,
        s: Array2<f64>,
        c: Array1<f64>,
        b: Array2<f64>,
    }

    impl Linear {
        fn encode(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
            let x = Array1::from(x.to_vec());
            Ok((self.a.dot(&x).to_vec(), (self.s.dot(&x) + &self.c).to_vec()))
        }

        fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
            Ok(self.b.dot(&Array1::from(z.to_vec())).to_vec())
        }
    }

    fn instance() -> Linear {
        // sigma_min(A) = sigma_min(S) = 0.5; B reconstructs 90% of the input.
        let a = array![[1.0, 0.0], [0.0, 0.5]];
        let s = array![[0.5, 0.0], [0.0, 0.8]];
        let a_inv = array![[1.0, 0.0], [0.0, 2.0]];
        Linear {
            a,
            s,
            c: array![2.0, 2.0],
            b: a_inv * 0.9,
        }
    }

    fn check_instance(separation: f64, spread: f64, m_inter: f64, seed: u64) -> (Theorem1Report, f64) {
        let lin = instance();
        let data = synth_generate(
            SynthSpec::BlobPair {
                separation,
                spread,
                dim: 2,
            },
            2000,
            seed,
        )
        .unwrap();
        let iid = data.data.slice(ndarray::s![..2000, ..]).to_owned();
        let ood = data.data.slice(ndarray::s![2000.., ..]).to_owned();
        let proj = |x: &Array2<f64>| Distribution1d::from_unsorted(x.column(0).to_vec()).unwrap();
        let margin = margin_essential_eps(&proj(&iid), &proj(&ood), m_inter).unwrap();
        let eps_total = margin.eps_iid + margin.eps_ood;

        let enc = |x: &[f64]| lin.encode(x);
        let dec = |z: &[f64]| lin.decode(z);
        let m_intra = iid
            .axis_iter(Axis(0))
            .map(|x| l2_dist(&x.to_vec(), &dec(&enc(&x.to_vec()).unwrap().0).unwrap()))
            .fold(0.0, f64::max);
        // Pairwise K = 1 / (2 * 0.5); L = sigma_max(B) = 1.8.
        let constants = CoLipschitzEstimate::new(1.0, 0.0, 1.8, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let report = theorem1_check(&enc, &dec, iid.view(), ood.view(), m_inter, &constants, m_intra, 200_000, &mut rng)
            .unwrap();
        (report, eps_total)
    }

    #[test]
    fn linear_instance_satisfies_guarantee() {
        let (r, eps) = check_instance(10.0, 0.25, 8.0, 1);
        assert!(eps < 1e-9);
        assert!(r.fraction_pairs_satisfying >= 1.0 - eps - 0.02);
        let (r, eps) = check_instance(3.0, 1.0, 1.5, 2);
        assert!(eps > 0.1, "{eps}");
        assert!(r.fraction_pairs_satisfying >= 1.0 - eps - 0.02, "{} vs {eps}", r.fraction_pairs_satisfying);
        assert!(r.fraction_pairs_satisfying >= r.fraction_latent.max(r.fraction_recon));
    }

    #[test]
    fn check_rejects_small_margin() {
        let lin = instance();
        let enc = |x: &[f64]| lin.encode(x);
        let dec = |z: &[f64]| lin.decode(z);
        let x = array![[0.0, 0.0]];
        let c = CoLipschitzEstimate::new(1.0, 0.0, 1.0, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(theorem1_check(&enc, &dec, x.view(), x.view(), 1.0, &c, 0.6, 10, &mut rng).is_err());
    }
}

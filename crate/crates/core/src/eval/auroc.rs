use ndarray::{ArrayView2, Axis};

use crate::error::{LpathError, Result};
use crate::vae::{kl_standard, MlpVae};

fn sorted(v: &[f64], what: &str) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(LpathError::InsufficientData(format!("{what} scores are empty")));
    }
    if v.iter().any(|s| s.is_nan()) {
        return Err(LpathError::InvalidInput(format!("{what} scores contain NaN")));
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(s)
}

/// Probability that an OOD score exceeds an IID score, ties counting half
/// (Mann-Whitney with midranks). Higher scores mean more OOD.
pub fn auroc(scores_iid: &[f64], scores_ood: &[f64]) -> Result<f64> {
    let iid = sorted(scores_iid, "IID")?;
    let ood = sorted(scores_ood, "OOD")?;
    // Twice the U statistic, counted exactly in integers.
    let mut twice_u: u128 = 0;
    for &o in &ood {
        let below = iid.partition_point(|&s| s < o) as u128;
        let equal = iid.partition_point(|&s| s <= o) as u128 - below;
        twice_u += 2 * below + equal;
    }
    let denom = 2 * iid.len() as u128 * ood.len() as u128;
    // Round the smaller side so swapping the arguments gives exactly 1 - auc.
    let rest = denom - twice_u;
    Ok(if twice_u <= rest {
        twice_u as f64 / denom as f64
    } else {
        1.0 - rest as f64 / denom as f64
    })
}

/// Negative ELBO at `z = mu_z(x)`: Gaussian reconstruction term plus the
/// standard KL. Higher means more OOD.
pub fn elbo_scores(model: &MlpVae, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
    let (mu, sigma) = model.encode_batch(x)?;
    let rec = model.decode_batch(mu.view())?;
    let s2 = model.decoder_sigma * model.decoder_sigma;
    let norm = 0.5 * x.ncols() as f64 * (2.0 * std::f64::consts::PI * s2).ln();
    x.axis_iter(Axis(0))
        .zip(rec.axis_iter(Axis(0)))
        .zip(mu.axis_iter(Axis(0)).zip(sigma.axis_iter(Axis(0))))
        .map(|((xi, ri), (m, s))| {
            let sq: f64 = xi.iter().zip(ri).map(|(a, b)| (a - b) * (a - b)).sum();
            let kl = kl_standard(&m.to_vec(), &s.to_vec())?;
            Ok(sq / (2.0 * s2) + norm + kl)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute(iid: &[f64], ood: &[f64]) -> f64 {
        let mut s = 0.0;
        for &o in ood {
            for &i in iid {
                s += if o > i {
                    1.0
                } else if o == i {
                    0.5
                } else {
                    0.0
                };
            }
        }
        s / (iid.len() * ood.len()) as f64
    }

    #[test]
    fn examples() {
        assert_eq!(auroc(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(auroc(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.5);
        assert_eq!(auroc(&[1.0, 2.0], &[2.0, 3.0]).unwrap(), 0.875);
        assert!(auroc(&[], &[1.0]).is_err());
        assert!(auroc(&[1.0], &[]).is_err());
        assert!(auroc(&[f64::NAN], &[1.0]).is_err());
    }

    #[test]
    fn elbo_score_matches_hand_computation() {
        use crate::vae::{init_model, TrainConfig};
        let cfg = TrainConfig {
            hidden_sizes: vec![4],
            decoder_sigma: 0.5,
            ..Default::default()
        };
        let model = init_model(&cfg, 3, 2, 1).unwrap();
        let x = ndarray::array![[0.1, 0.5, 0.9]];
        let (mu, sigma) = model.encode(&x.row(0).to_vec()).unwrap();
        let r = model.decode(&mu).unwrap();
        let sq: f64 = x.row(0).iter().zip(&r).map(|(a, b)| (a - b) * (a - b)).sum();
        let kl: f64 = mu
            .iter()
            .zip(&sigma)
            .map(|(m, s)| 0.5 * (m * m + s * s - 1.0 - (s * s).ln()))
            .sum();
        let expect = sq / 0.5 + 1.5 * (2.0 * std::f64::consts::PI * 0.25).ln() + kl;
        let got = elbo_scores(&model, x.view()).unwrap()[0];
        assert!((got - expect).abs() < 1e-10, "{got} {expect}");
    }

    proptest! {
        #[test]
        fn matches_brute_force(
            a in proptest::collection::vec(0u8..12, 1..60),
            b in proptest::collection::vec(0u8..12, 1..60),
        ) {
            let a: Vec<f64> = a.into_iter().map(|v| f64::from(v) * 0.5).collect();
            let b: Vec<f64> = b.into_iter().map(|v| f64::from(v) * 0.5).collect();
            let fast = auroc(&a, &b).unwrap();
            prop_assert!((fast - brute(&a, &b)).abs() <= 1e-12);
            prop_assert_eq!(fast + auroc(&b, &a).unwrap(), 1.0);
        }

        #[test]
        fn continuous_inputs(
            a in proptest::collection::vec(-1e3f64..1e3, 1..80),
            b in proptest::collection::vec(-1e3f64..1e3, 1..80),
        ) {
            let fast = auroc(&a, &b).unwrap();
            prop_assert!((fast - brute(&a, &b)).abs() <= 1e-12);
            prop_assert_eq!(fast + auroc(&b, &a).unwrap(), 1.0);
            // Strictly increasing transforms leave the value unchanged.
            let ta: Vec<f64> = a.iter().map(|v| (v / 100.0).exp()).collect();
            let tb: Vec<f64> = b.iter().map(|v| (v / 100.0).exp()).collect();
            prop_assert_eq!(auroc(&ta, &tb).unwrap(), fast);
        }
    }
}

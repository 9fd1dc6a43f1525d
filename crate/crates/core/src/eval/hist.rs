use crate::error::{LpathError, Result};

/// Bin specification for [`histogram_counts`].
#[derive(Clone, Debug, PartialEq)]
pub enum Bins {
    /// Equal-width bins spanning the data range.
    Count(usize),
    /// Explicit ascending edges.
    Edges(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

fn range(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

fn equal_edges(lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
    let mut e: Vec<f64> = (0..=bins).map(|k| lo + (hi - lo) * k as f64 / bins as f64).collect();
    e[bins] = hi;
    e
}

/// Counts per bin; bins are right-open except the last, which is closed.
/// Values outside the edges are not counted.
pub fn histogram_counts(values: &[f64], bins: &Bins) -> Result<Histogram> {
    if values.iter().any(|v| v.is_nan()) {
        return Err(LpathError::InvalidInput("histogram values contain NaN".into()));
    }
    let edges = match bins {
        Bins::Count(0) => return Err(LpathError::InvalidConfig("bin count must be positive".into())),
        Bins::Count(k) => {
            if values.is_empty() {
                equal_edges(0.0, 1.0, *k)
            } else {
                let (lo, hi) = range(values);
                equal_edges(lo, hi, *k)
            }
        }
        Bins::Edges(e) => {
            if e.len() < 2 || e.windows(2).any(|w| !(w[0] < w[1])) || e.iter().any(|v| !v.is_finite()) {
                return Err(LpathError::InvalidConfig(
                    "histogram edges must be finite, strictly increasing and at least two".into(),
                ));
            }
            e.clone()
        }
    };
    let nb = edges.len() - 1;
    let mut counts = vec![0usize; nb];
    for &v in values {
        if v < edges[0] || v > edges[nb] {
            continue;
        }
        let k = edges.partition_point(|&e| e <= v).saturating_sub(1).min(nb - 1);
        counts[k] += 1;
    }
    Ok(Histogram { edges, counts })
}

/// Equal-width edges over the range of `values` with Freedman-Diaconis
/// width `2 IQR n^(-1/3)`; Sturges' rule when the IQR vanishes.
pub fn freedman_diaconis_edges(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(LpathError::InsufficientData("no values to bin".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(LpathError::InvalidInput("values must be finite".into()));
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let (lo, hi) = (s[0], s[n - 1]);
    if hi <= lo {
        return Ok(equal_edges(lo, hi, 1));
    }
    let q = |p: f64| {
        let h = (n - 1) as f64 * p;
        let i = h.floor() as usize;
        let j = (i + 1).min(n - 1);
        s[i] + (h - i as f64) * (s[j] - s[i])
    };
    let iqr = q(0.75) - q(0.25);
    let sturges = ((n as f64).log2().ceil() as usize + 1).max(1);
    let bins = if iqr > 0.0 {
        let width = 2.0 * iqr / (n as f64).cbrt();
        (((hi - lo) / width).ceil() as usize).clamp(1, 10_000)
    } else {
        sturges
    };
    Ok(equal_edges(lo, hi, bins))
}

/// `bin_left,bin_right,count_iid,count_ood` over shared edges.
pub fn histogram_csv(iid: &[f64], ood: &[f64], edges: &[f64]) -> Result<String> {
    let bins = Bins::Edges(edges.to_vec());
    let a = histogram_counts(iid, &bins)?;
    let b = histogram_counts(ood, &bins)?;
    let mut out = String::from("bin_left,bin_right,count_iid,count_ood\n");
    for k in 0..a.counts.len() {
        out.push_str(&format!("{},{},{},{}\n", edges[k], edges[k + 1], a.counts[k], b.counts[k]));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};
    use statrs::distribution::{ContinuousCDF, Normal};

    #[test]
    fn examples() {
        let h = histogram_counts(&[0.0, 1.0, 2.0, 3.0], &Bins::Edges(vec![0.0, 2.0, 4.0])).unwrap();
        assert_eq!(h.counts, vec![2, 2]);
        let h = histogram_counts(&[], &Bins::Count(3)).unwrap();
        assert_eq!(h.counts, vec![0, 0, 0]);
        // Last bin is closed on the right.
        let h = histogram_counts(&[0.0, 4.0, 5.0], &Bins::Edges(vec![0.0, 2.0, 4.0])).unwrap();
        assert_eq!(h.counts, vec![1, 1]);
        let h = histogram_counts(&[1.0, 1.0], &Bins::Count(2)).unwrap();
        assert_eq!(h.counts.iter().sum::<usize>(), 2);
        assert!(histogram_counts(&[1.0], &Bins::Edges(vec![1.0, 1.0])).is_err());
        assert!(histogram_counts(&[1.0], &Bins::Count(0)).is_err());
    }

    #[test]
    fn counts_sum_to_sample_size() {
        let vals: Vec<f64> = (0..997).map(|k| ((k * 7919) % 1000) as f64 / 10.0).collect();
        for bins in [1, 3, 17, 100] {
            let h = histogram_counts(&vals, &Bins::Count(bins)).unwrap();
            assert_eq!(h.counts.iter().sum::<usize>(), vals.len());
        }
        let e = freedman_diaconis_edges(&vals).unwrap();
        let h = histogram_counts(&vals, &Bins::Edges(e)).unwrap();
        assert_eq!(h.counts.iter().sum::<usize>(), vals.len());
    }

    #[test]
    fn normal_sample_matches_bin_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 20_000;
        let vals: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let edges: Vec<f64> = (-6..=6).map(|k| k as f64 * 0.5).collect();
        let h = histogram_counts(&vals, &Bins::Edges(edges.clone())).unwrap();
        let nd = Normal::new(0.0, 1.0).unwrap();
        for (k, &c) in h.counts.iter().enumerate() {
            let p = nd.cdf(edges[k + 1]) - nd.cdf(edges[k]);
            let sd = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((c as f64 - n as f64 * p).abs() <= 3.0 * sd + 1.0, "bin {k}: {c}");
        }
    }

    #[test]
    fn fd_edges() {
        let e = freedman_diaconis_edges(&[2.0; 5]).unwrap();
        assert_eq!(e.len(), 2);
        let vals: Vec<f64> = (0..1000).map(|k| k as f64).collect();
        let e = freedman_diaconis_edges(&vals).unwrap();
        // IQR 499.5, width 99.9, range 999 -> 10 bins.
        assert_eq!(e.len(), 11);
        assert_eq!((e[0], e[10]), (0.0, 999.0));
        assert!(freedman_diaconis_edges(&[]).is_err());
    }
}

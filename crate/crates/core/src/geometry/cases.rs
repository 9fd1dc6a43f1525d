//! Four-way split of OOD samples by whether they overlap the IID
//! distribution in reconstruction error (`u`) and latent norm (`v`).

use crate::error::{LpathError, Result};
use crate::eval::{freedman_diaconis_edges, histogram_counts, Bins};

pub const MIN_CASE_SAMPLES: usize = 10;

/// Interval between the IID and OOD histogram modes on one statistic.
#[derive(Clone, Debug, PartialEq)]
pub struct OverlapRegion {
    pub mode_iid: f64,
    pub mode_ood: f64,
    /// Closed hull of the two mode bins.
    pub lo: f64,
    pub hi: f64,
    pub edges: Vec<f64>,
}

impl OverlapRegion {
    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaseReport {
    /// Per OOD sample: 1 z-overlap + x-overlap, 2 z-separable + x-overlap,
    /// 3 z-overlap + x-separable, 4 z-separable + x-separable.
    pub labels: Vec<u8>,
    pub u_region: OverlapRegion,
    pub v_region: OverlapRegion,
}

impl CaseReport {
    pub fn counts(&self) -> [usize; 4] {
        let mut c = [0; 4];
        for &l in &self.labels {
            c[usize::from(l) - 1] += 1;
        }
        c
    }

    /// OOD indices with case label `case`.
    pub fn members(&self, case: u8) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == case).collect()
    }

    pub fn to_report(&self) -> String {
        let c = self.counts();
        let region = |r: &OverlapRegion| format!("[{:?}, {:?}] (modes iid {:?}, ood {:?})", r.lo, r.hi, r.mode_iid, r.mode_ood);
        format!(
            "overlap_rule = interval between histogram modes (Freedman-Diaconis bins)\n\
             u_overlap = {:?}\nv_overlap = {:?}\ncase1 = {:?}\ncase2 = {:?}\ncase3 = {:?}\ncase4 = {:?}\n",
            region(&self.u_region),
            region(&self.v_region),
            c[0],
            c[1],
            c[2],
            c[3]
        )
    }
}

fn mode_bin(values: &[f64], edges: &[f64]) -> Result<usize> {
    let h = histogram_counts(values, &Bins::Edges(edges.to_vec()))?;
    let mut best = 0;
    for (k, &c) in h.counts.iter().enumerate() {
        if c > h.counts[best] {
            best = k;
        }
    }
    Ok(best)
}

fn overlap_region(iid: &[f64], ood: &[f64], what: &str) -> Result<OverlapRegion> {
    if iid.len() < MIN_CASE_SAMPLES || ood.len() < MIN_CASE_SAMPLES {
        return Err(LpathError::InsufficientData(format!(
            "{what}: need at least {MIN_CASE_SAMPLES} samples per side, got {} IID and {} OOD",
            iid.len(),
            ood.len()
        )));
    }
    let union: Vec<f64> = iid.iter().chain(ood).copied().collect();
    let edges = freedman_diaconis_edges(&union)?;
    let (bi, bo) = (mode_bin(iid, &edges)?, mode_bin(ood, &edges)?);
    let center = |b: usize| 0.5 * (edges[b] + edges[b + 1]);
    Ok(OverlapRegion {
        mode_iid: center(bi),
        mode_ood: center(bo),
        lo: edges[bi.min(bo)],
        hi: edges[bi.max(bo) + 1],
        edges,
    })
}

/// Labels every OOD sample with its case from the `u` and `v` overlap regions.
pub fn classify_cases(u_iid: &[f64], u_ood: &[f64], v_iid: &[f64], v_ood: &[f64]) -> Result<CaseReport> {
    if u_ood.len() != v_ood.len() {
        return Err(LpathError::shape("OOD v statistics", u_ood.len(), v_ood.len()));
    }
    let u_region = overlap_region(u_iid, u_ood, "u")?;
    let v_region = overlap_region(v_iid, v_ood, "v")?;
    let labels = u_ood
        .iter()
        .zip(v_ood)
        .map(|(&u, &v)| match (v_region.contains(v), u_region.contains(u)) {
            (true, true) => 1,
            (false, true) => 2,
            (true, false) => 3,
            (false, false) => 4,
        })
        .collect();
    Ok(CaseReport {
        labels,
        u_region,
        v_region,
    })
}

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// One (IID, OOD, detector, features) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub iid: String,
    pub ood: String,
    pub detector: String,
    pub features: String,
    pub auroc: f64,
    pub n_iid: usize,
    pub n_ood: usize,
}

/// AUROC restricted to the OOD samples of one case (all IID samples kept).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseRow {
    pub ood: String,
    pub detector: String,
    pub features: String,
    pub case: u8,
    /// `None` when the case holds no OOD samples.
    pub auroc: Option<f64>,
    pub n_ood: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentRow {
    pub latent_dim: usize,
    pub ood: String,
    pub detector: String,
    pub features: String,
    pub auroc: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub case_rows: Vec<CaseRow>,
    pub latent_rows: Vec<LatentRow>,
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl EvalReport {
    pub fn find(&self, ood: &str, detector: &str, features: &str) -> Option<&EvalRow> {
        self.rows
            .iter()
            .find(|r| r.ood == ood && r.detector == detector && r.features == features)
    }

    pub fn case_auroc(&self, ood: &str, detector: &str, features: &str, case: u8) -> Option<f64> {
        self.case_rows
            .iter()
            .find(|r| r.ood == ood && r.detector == detector && r.features == features && r.case == case)
            .and_then(|r| r.auroc)
    }

    /// Index of the best row for each (IID, OOD) pair.
    fn best_rows(&self) -> Vec<bool> {
        let mut best = vec![false; self.rows.len()];
        for (i, r) in self.rows.iter().enumerate() {
            let top = self
                .rows
                .iter()
                .filter(|o| o.iid == r.iid && o.ood == r.ood)
                .map(|o| o.auroc)
                .fold(f64::NEG_INFINITY, f64::max);
            best[i] = r.auroc == top;
        }
        best
    }

    /// `iid,ood,detector,features,auroc,n_iid,n_ood`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iid,ood,detector,features,auroc,n_iid,n_ood\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                csv_field(&r.iid),
                csv_field(&r.ood),
                csv_field(&r.detector),
                csv_field(&r.features),
                r.auroc,
                r.n_iid,
                r.n_ood
            );
        }
        s
    }

    pub fn cases_to_csv(&self) -> String {
        let mut s = String::from("ood,detector,features,case,auroc,n_ood\n");
        for r in &self.case_rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                csv_field(&r.ood),
                csv_field(&r.detector),
                csv_field(&r.features),
                r.case,
                r.auroc.map_or_else(|| "NA".to_string(), |a| a.to_string()),
                r.n_ood
            );
        }
        s
    }

    pub fn latent_to_csv(&self) -> String {
        let mut s = String::from("latent_dim,ood,detector,features,auroc\n");
        for r in &self.latent_rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.latent_dim,
                csv_field(&r.ood),
                csv_field(&r.detector),
                csv_field(&r.features),
                r.auroc
            );
        }
        s
    }

    /// Aligned text table; `*` marks the best cell of each IID/OOD pair.
    pub fn to_table(&self) -> String {
        let best = self.best_rows();
        let header = ["iid", "ood", "detector", "features", "auroc", "n_iid", "n_ood", ""];
        let body: Vec<[String; 8]> = self
            .rows
            .iter()
            .zip(&best)
            .map(|(r, &b)| {
                [
                    r.iid.clone(),
                    r.ood.clone(),
                    r.detector.clone(),
                    r.features.clone(),
                    format!("{:.4}", r.auroc),
                    r.n_iid.to_string(),
                    r.n_ood.to_string(),
                    if b { "*".into() } else { String::new() },
                ]
            })
            .collect();
        let mut width = header.map(str::len);
        for row in &body {
            for (w, c) in width.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let mut s = String::new();
        let line = |s: &mut String, cells: &[&str]| {
            let parts: Vec<String> = cells
                .iter()
                .zip(width)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect();
            let _ = writeln!(s, "{}", parts.join("  ").trim_end());
        };
        line(&mut s, &header);
        for row in &body {
            let cells: Vec<&str> = row.iter().map(String::as_str).collect();
            line(&mut s, &cells);
        }
        if !self.case_rows.is_empty() {
            let _ = writeln!(s, "\nper-case AUROC (case: 1 z+x overlap, 2 z separable, 3 x separable, 4 both separable)");
            for r in &self.case_rows {
                let a = r.auroc.map_or_else(|| "NA".to_string(), |a| format!("{a:.4}"));
                let _ = writeln!(s, "{}  {}  {}  case {}  {}  n_ood={}", r.ood, r.detector, r.features, r.case, a, r.n_ood);
            }
        }
        if !self.latent_rows.is_empty() {
            let _ = writeln!(s, "\nlatent-dimension sweep");
            for r in &self.latent_rows {
                let _ = writeln!(s, "m={}  {}  {}  {}  {:.4}", r.latent_dim, r.ood, r.detector, r.features, r.auroc);
            }
        }
        s
    }
}

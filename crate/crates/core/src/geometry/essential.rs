//! One-dimensional nearly essential supports and the distances between them.

use std::fmt;
use std::str::FromStr;

use crate::error::{LpathError, Result};
use crate::pipeline::inverse_normal_cdf;

/// A one-dimensional distribution given by a sorted sample or in closed form.
#[derive(Clone, Debug, PartialEq)]
pub enum Distribution1d {
    Empirical(Vec<f64>),
    Gaussian { mu: f64, sigma: f64 },
    Uniform { a: f64, b: f64 },
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

impl Distribution1d {
    /// Validates and wraps a sorted sample.
    pub fn empirical(sorted: Vec<f64>) -> Result<Self> {
        if sorted.is_empty() {
            return Err(LpathError::InsufficientData("empty sample".into()));
        }
        if sorted.iter().any(|v| !v.is_finite()) {
            return Err(LpathError::InvalidInput("sample contains non-finite values".into()));
        }
        if sorted.windows(2).any(|w| w[0] > w[1]) {
            return Err(LpathError::InvalidInput("sample must be sorted ascending".into()));
        }
        Ok(Distribution1d::Empirical(sorted))
    }

    /// Sorts `values` and wraps them.
    pub fn from_unsorted(mut values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| v.is_nan()) {
            return Err(LpathError::InvalidInput("sample contains NaN".into()));
        }
        values.sort_by(f64::total_cmp);
        Self::empirical(values)
    }

    pub fn gaussian(mu: f64, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite() && mu.is_finite()) {
            return Err(LpathError::InvalidConfig(format!("invalid Gaussian({mu}, {sigma})")));
        }
        Ok(Distribution1d::Gaussian { mu, sigma })
    }

    pub fn uniform(a: f64, b: f64) -> Result<Self> {
        if !(a < b && a.is_finite() && b.is_finite()) {
            return Err(LpathError::InvalidConfig(format!("invalid Uniform({a}, {b})")));
        }
        Ok(Distribution1d::Uniform { a, b })
    }

    fn validate(&self) -> Result<()> {
        match self {
            Distribution1d::Empirical(v) => Self::empirical(v.clone()).map(|_| ()),
            Distribution1d::Gaussian { mu, sigma } => Self::gaussian(*mu, *sigma).map(|_| ()),
            Distribution1d::Uniform { a, b } => Self::uniform(*a, *b).map(|_| ()),
        }
    }

    pub fn is_empirical(&self) -> bool {
        matches!(self, Distribution1d::Empirical(_))
    }

    /// `P(X <= x)`.
    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            Distribution1d::Empirical(v) => v.partition_point(|&s| s <= x) as f64 / v.len() as f64,
            Distribution1d::Gaussian { mu, sigma } => std_normal_cdf((x - mu) / sigma),
            Distribution1d::Uniform { a, b } => ((x - a) / (b - a)).clamp(0.0, 1.0),
        }
    }

    /// Density; `None` for empirical samples.
    pub fn pdf(&self, x: f64) -> Option<f64> {
        match self {
            Distribution1d::Empirical(_) => None,
            Distribution1d::Gaussian { mu, sigma } => {
                let d = (x - mu) / sigma;
                Some((-0.5 * d * d).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt()))
            }
            Distribution1d::Uniform { a, b } => Some(if (*a..=*b).contains(&x) { 1.0 / (b - a) } else { 0.0 }),
        }
    }

    /// `P(X < x)`.
    pub fn cdf_below(&self, x: f64) -> f64 {
        match self {
            Distribution1d::Empirical(v) => v.partition_point(|&s| s < x) as f64 / v.len() as f64,
            _ => self.cdf(x),
        }
    }

    /// Quantile function; `±inf` at the ends for unbounded laws.
    pub fn quantile(&self, p: f64) -> f64 {
        match self {
            Distribution1d::Empirical(v) => {
                let i = ((p * v.len() as f64).ceil() as usize).clamp(1, v.len());
                v[i - 1]
            }
            Distribution1d::Gaussian { mu, sigma } => {
                if p <= 0.0 {
                    f64::NEG_INFINITY
                } else if p >= 1.0 {
                    f64::INFINITY
                } else {
                    mu + sigma * inverse_normal_cdf(p).expect("p in (0,1)")
                }
            }
            Distribution1d::Uniform { a, b } => a + p.clamp(0.0, 1.0) * (b - a),
        }
    }

    pub fn median(&self) -> f64 {
        match self {
            Distribution1d::Empirical(v) => {
                let n = v.len();
                if n % 2 == 1 {
                    v[n / 2]
                } else {
                    0.5 * (v[n / 2 - 1] + v[n / 2])
                }
            }
            Distribution1d::Gaussian { mu, .. } => *mu,
            Distribution1d::Uniform { a, b } => 0.5 * (a + b),
        }
    }

    /// Reflection `x -> -x`.
    pub fn mirrored(&self) -> Self {
        match self {
            Distribution1d::Empirical(v) => Distribution1d::Empirical(v.iter().rev().map(|x| -x).collect()),
            Distribution1d::Gaussian { mu, sigma } => Distribution1d::Gaussian {
                mu: -mu,
                sigma: *sigma,
            },
            Distribution1d::Uniform { a, b } => Distribution1d::Uniform { a: -b, b: -a },
        }
    }

    /// Retained `[lo, hi]` after removing `lo_mass` below and `hi_mass` above.
    fn retained(&self, lo_mass: f64, hi_mass: f64) -> (f64, f64) {
        match self {
            Distribution1d::Empirical(v) => {
                let n = v.len();
                let lo = trim_count(lo_mass, n);
                let hi = trim_count(hi_mass, n);
                if lo + hi >= n {
                    (f64::INFINITY, f64::NEG_INFINITY)
                } else {
                    (v[lo], v[n - 1 - hi])
                }
            }
            _ => (self.quantile(lo_mass), self.quantile(1.0 - hi_mass)),
        }
    }
}

/// Number of sample points that fit in a trimming budget of `mass`.
fn trim_count(mass: f64, n: usize) -> usize {
    ((mass * n as f64) + 1e-9).floor() as usize
}

impl FromStr for Distribution1d {
    type Err = LpathError;

    /// `gaussian:mu,sigma` or `uniform:a,b`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, args) = s
            .split_once(':')
            .ok_or_else(|| LpathError::InvalidConfig(format!("expected kind:args, got {s:?}")))?;
        let nums = args
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|_| LpathError::InvalidConfig(format!("bad number {t:?} in {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if nums.len() != 2 {
            return Err(LpathError::InvalidConfig(format!("{s:?} needs exactly two parameters")));
        }
        match kind {
            "gaussian" | "normal" => Self::gaussian(nums[0], nums[1]),
            "uniform" => Self::uniform(nums[0], nums[1]),
            other => Err(LpathError::InvalidConfig(format!(
                "unknown distribution {other:?}; expected gaussian or uniform"
            ))),
        }
    }
}

impl fmt::Display for Distribution1d {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Distribution1d::Empirical(v) => write!(f, "empirical(n={})", v.len()),
            Distribution1d::Gaussian { mu, sigma } => write!(f, "gaussian:{mu},{sigma}"),
            Distribution1d::Uniform { a, b } => write!(f, "uniform:{a},{b}"),
        }
    }
}

/// Where the trimming budget is spent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum TrimMode {
    /// Symmetric for Gaussians, facing tails otherwise.
    #[default]
    Auto,
    /// All mass removed from the tail nearest the other distribution.
    Facing,
    /// Both tails trimmed; Gaussians keep `mu ± k sigma` for the smallest
    /// integer `k` whose two-sided tail mass fits the budget.
    Symmetric,
    /// Both tails trimmed by exactly half the budget.
    SymmetricQuantile,
}

impl FromStr for TrimMode {
    type Err = LpathError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(TrimMode::Auto),
            "facing" => Ok(TrimMode::Facing),
            "symmetric" => Ok(TrimMode::Symmetric),
            "symmetric-quantile" => Ok(TrimMode::SymmetricQuantile),
            other => Err(LpathError::InvalidConfig(format!(
                "unknown trim mode {other:?}; expected auto, facing, symmetric or symmetric-quantile"
            ))),
        }
    }
}

impl fmt::Display for TrimMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrimMode::Auto => "auto",
            TrimMode::Facing => "facing",
            TrimMode::Symmetric => "symmetric",
            TrimMode::SymmetricQuantile => "symmetric-quantile",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EssentialDistanceReport {
    pub eps_iid: f64,
    pub eps_ood: f64,
    /// Gap between the retained supports, floored at 0.
    pub distance: f64,
    /// Midpoint of the gap (or of the overlap when there is no gap).
    pub threshold: f64,
    /// Margin the trimming was solved for, if any.
    pub m_inter: Option<f64>,
}

impl EssentialDistanceReport {
    pub fn to_report(&self) -> String {
        let mut s = format!(
            "eps_iid = {:?}\neps_ood = {:?}\ndistance = {:?}\nthreshold = {:?}\n",
            self.eps_iid, self.eps_ood, self.distance, self.threshold
        );
        if let Some(m) = self.m_inter {
            s.push_str(&format!("m_inter = {m:?}\n"));
        }
        s
    }
}

fn check_eps(eps: f64, what: &str) -> Result<()> {
    if !(0.0..1.0).contains(&eps) {
        return Err(LpathError::InvalidConfig(format!("{what} must lie in [0,1), got {eps}")));
    }
    Ok(())
}

/// Half-width multiplier `k` for the `mu ± k sigma` rule.
fn sigma_rule_k(eps: f64) -> f64 {
    (1..=40)
        .map(f64::from)
        .find(|&k| 2.0 * (1.0 - std_normal_cdf(k)) <= eps)
        .unwrap_or(f64::INFINITY)
}

fn retained_support(d: &Distribution1d, eps: f64, mode: TrimMode, far_is_high: bool) -> (f64, f64) {
    let symmetric = match mode {
        TrimMode::Auto => matches!(d, Distribution1d::Gaussian { .. }),
        TrimMode::Facing => false,
        TrimMode::Symmetric | TrimMode::SymmetricQuantile => true,
    };
    if !symmetric {
        // Trim only the tail facing the other distribution.
        return if far_is_high { d.retained(eps, 0.0) } else { d.retained(0.0, eps) };
    }
    match (mode, d) {
        (TrimMode::Auto | TrimMode::Symmetric, Distribution1d::Gaussian { mu, sigma }) => {
            let k = sigma_rule_k(eps);
            (mu - k * sigma, mu + k * sigma)
        }
        _ => d.retained(0.5 * eps, 0.5 * eps),
    }
}

/// Gap between the nearly essential supports of `iid` and `ood` after removing
/// `eps_iid` and `eps_ood` of their mass.
pub fn essential_distance_1d(
    iid: &Distribution1d,
    ood: &Distribution1d,
    eps_iid: f64,
    eps_ood: f64,
    mode: TrimMode,
) -> Result<EssentialDistanceReport> {
    check_eps(eps_iid, "eps_iid")?;
    check_eps(eps_ood, "eps_ood")?;
    iid.validate()?;
    ood.validate()?;
    let ood_above = ood.median() >= iid.median();
    let (i_lo, i_hi) = retained_support(iid, eps_iid, mode, !ood_above);
    let (o_lo, o_hi) = retained_support(ood, eps_ood, mode, ood_above);
    let (near_i, near_o) = if ood_above { (i_hi, o_lo) } else { (i_lo, o_hi) };
    let gap = if ood_above { near_o - near_i } else { near_i - near_o };
    let distance = if gap.is_nan() { 0.0 } else { gap.max(0.0) };
    Ok(EssentialDistanceReport {
        eps_iid,
        eps_ood,
        distance,
        threshold: 0.5 * (near_i + near_o),
        m_inter: None,
    })
}

/// Smallest total trimming `eps_iid + eps_ood` that leaves the two supports
/// at least `m_inter` apart. Ties are broken toward balanced budgets.
pub fn margin_essential_eps(
    iid: &Distribution1d,
    ood: &Distribution1d,
    m_inter: f64,
) -> Result<EssentialDistanceReport> {
    if !(m_inter >= 0.0 && m_inter.is_finite()) {
        return Err(LpathError::InvalidConfig(format!("m_inter must be nonnegative, got {m_inter}")));
    }
    iid.validate()?;
    ood.validate()?;
    // Work with the OOD distribution on the right; mirror back at the end.
    let ood_above = ood.median() >= iid.median();
    let (i, o) = if ood_above {
        (iid.clone(), ood.clone())
    } else {
        (iid.mirrored(), ood.mirrored())
    };
    let eps_i = |a: f64| 1.0 - i.cdf(a);
    let eps_o = |a: f64| o.cdf_below(a + m_inter);

    let cut = if i.is_empirical() && o.is_empirical() {
        sweep_empirical(&i, &o, m_inter)
    } else {
        solve_analytic(&i, &o, m_inter)
    };
    let (ei, eo) = (eps_i(cut), eps_o(cut));
    let (near_i, near_o) = match (&i, &o) {
        (Distribution1d::Empirical(xi), Distribution1d::Empirical(xo)) => {
            let k = xi.partition_point(|&v| v <= cut);
            let j = xo.partition_point(|&v| v < cut + m_inter);
            (
                if k == 0 { f64::NEG_INFINITY } else { xi[k - 1] },
                xo.get(j).copied().unwrap_or(f64::INFINITY),
            )
        }
        _ => (i.quantile(1.0 - ei), o.quantile(eo)),
    };
    let gap = near_o - near_i;
    let distance = if gap.is_nan() { m_inter } else { gap.max(m_inter) };
    let mid = if near_i.is_finite() && near_o.is_finite() {
        0.5 * (near_i + near_o)
    } else {
        cut + 0.5 * m_inter
    };
    Ok(EssentialDistanceReport {
        eps_iid: ei,
        eps_ood: eo,
        distance,
        threshold: if ood_above { mid } else { -mid },
        m_inter: Some(m_inter),
    })
}

fn better(total: f64, imbalance: f64, best: (f64, f64)) -> bool {
    const TOL: f64 = 1e-12;
    total < best.0 - TOL || (total <= best.0 + TOL && imbalance < best.1)
}

/// Exhaustive sweep over every cut where either budget changes.
fn sweep_empirical(i: &Distribution1d, o: &Distribution1d, m: f64) -> f64 {
    let (Distribution1d::Empirical(xi), Distribution1d::Empirical(xo)) = (i, o) else {
        unreachable!("empirical inputs")
    };
    let mut best_cut = f64::NEG_INFINITY;
    let mut best = (1.0, 1.0);
    for a in xi.iter().copied().chain(xo.iter().map(|y| y - m)) {
        let ei = 1.0 - i.cdf(a);
        let eo = o.cdf_below(a + m);
        if better(ei + eo, (ei - eo).abs(), best) {
            best = (ei + eo, (ei - eo).abs());
            best_cut = a;
        }
    }
    best_cut
}

/// Grid search with breakpoints, then either golden-section refinement or,
/// on a flat optimum, the balanced cut inside the flat stretch.
fn solve_analytic(i: &Distribution1d, o: &Distribution1d, m: f64) -> f64 {
    let objective = |a: f64| (1.0 - i.cdf(a)) + o.cdf_below(a + m);
    let imbalance = |a: f64| (1.0 - i.cdf(a)) - o.cdf_below(a + m);

    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut breaks = Vec::new();
    for (d, shift) in [(i, 0.0), (o, m)] {
        for p in [1e-12, 1.0 - 1e-12] {
            let q = d.quantile(p) - shift;
            lo = lo.min(q);
            hi = hi.max(q);
        }
        match d {
            Distribution1d::Uniform { a, b } => breaks.extend([a - shift, b - shift]),
            Distribution1d::Empirical(v) => breaks.extend(v.iter().map(|x| x - shift)),
            Distribution1d::Gaussian { mu, .. } => breaks.push(mu - shift),
        }
    }
    const GRID: usize = 4000;
    let mut pts: Vec<f64> = (0..=GRID).map(|k| lo + (hi - lo) * k as f64 / GRID as f64).collect();
    pts.extend(breaks);
    pts.retain(|p| p.is_finite());
    pts.sort_by(f64::total_cmp);
    pts.dedup();

    let vals: Vec<f64> = pts.iter().map(|&a| objective(a)).collect();
    let best = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let tol = 1e-12;
    let near: Vec<usize> = (0..pts.len()).filter(|&k| vals[k] <= best + tol).collect();
    let (first, last) = (near[0], *near.last().expect("nonempty"));

    if pts[last] > pts[first] && near.len() > 1 {
        // Flat optimum: pick the balanced point with Illinois regula falsi.
        let (mut a0, mut a1) = (pts[first], pts[last]);
        let (mut h0, mut h1) = (imbalance(a0), imbalance(a1));
        if h0 <= 0.0 {
            return a0;
        }
        if h1 >= 0.0 {
            return a1;
        }
        let mut side = 0i8;
        for _ in 0..200 {
            let c = a0 - h0 * (a1 - a0) / (h1 - h0);
            let hc = imbalance(c);
            if hc == 0.0 || (a1 - a0).abs() <= 1e-15 * (1.0 + c.abs()) {
                return c;
            }
            if hc > 0.0 {
                a0 = c;
                h0 = hc;
                if side == 1 {
                    h1 *= 0.5;
                }
                side = 1;
            } else {
                a1 = c;
                h1 = hc;
                if side == -1 {
                    h0 *= 0.5;
                }
                side = -1;
            }
        }
        return 0.5 * (a0 + a1);
    }

    let k = first;
    let mut a = pts[k.saturating_sub(1)];
    let mut b = pts[(k + 1).min(pts.len() - 1)];
    // With densities on both sides, bisect the derivative: golden section
    // only locates a smooth minimum to about sqrt(machine epsilon).
    let slope = |x: f64| Some(o.pdf(x + m)? - i.pdf(x)?);
    if let (Some(sa), Some(sb)) = (slope(a), slope(b)) {
        if sa < 0.0 && sb > 0.0 {
            let (mut l, mut r) = (a, b);
            loop {
                let c = 0.5 * (l + r);
                if c <= l || c >= r {
                    break;
                }
                if slope(c).expect("density") < 0.0 {
                    l = c;
                } else {
                    r = c;
                }
            }
            return 0.5 * (l + r);
        }
    }
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    for _ in 0..200 {
        if (b - a).abs() <= 1e-14 * (1.0 + a.abs()) {
            break;
        }
        if objective(c) <= objective(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - g * (b - a);
        d = a + g * (b - a);
    }
    let mid = 0.5 * (a + b);
    if objective(mid) <= objective(pts[k]) {
        mid
    } else {
        pts[k]
    }
}

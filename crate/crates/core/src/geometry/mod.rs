//! Metric-geometry diagnostics: essential distances, Lipschitz-type
//! constants, guaranteed-separation bounds, shell concentration, the
//! four-case split and likelihood-ratio scores. Distances in input and
//! latent space are Euclidean.

mod cases;
mod essential;
mod likelihood;
mod lipschitz;
mod multid;
mod theorem;

pub use cases::{classify_cases, CaseReport, OverlapRegion, MIN_CASE_SAMPLES};
pub use essential::{essential_distance_1d, margin_essential_eps, Distribution1d, EssentialDistanceReport, TrimMode};
pub use likelihood::{likelihood_ratio_scores, LikelihoodRatioScorer};
pub use multid::essential_distance_knn;
pub use lipschitz::{
    estimate_co_lipschitz, estimate_lipschitz, jacobian_bound, CoLipschitzEstimate, CoLipschitzFit,
};
pub use theorem::{
    latent_shells, m_intra_estimate, shell_fit, theorem1_bounds, theorem1_check, LatentShells, ShellFit,
    Theorem1Report,
};

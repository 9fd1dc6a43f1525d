//! AUROC, histograms and benchmark orchestration.

mod auroc;
mod bench;
mod hist;
mod report;

pub use auroc::{auroc, elbo_scores};
pub use bench::{
    evaluate_model, feature_subsets, load_bench_dataset, prepare_data, run_benchmark, train_with_latent,
    BenchConfig, BenchData, BenchOutput, ScoreSet, ELBO_TAG,
};
pub use hist::{freedman_diaconis_edges, histogram_counts, histogram_csv, Bins, Histogram};
pub use report::{CaseRow, EvalReport, EvalRow, LatentRow};

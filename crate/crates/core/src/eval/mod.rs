//! Metrics, experiment protocols, score densities and throughput.

pub mod bench;
pub mod experiments;
pub mod kde;
pub mod metrics;

pub use bench::{bench_throughput, BenchReport, StageRates, StageTimes, REFERENCE};
pub use experiments::{
    forest_outputs, run_filter_comparison, train_background_vae, train_filter, FittedVae, run_hybrid_comparison, run_novelty, ExperimentConfig, ExperimentContext,
    FilterComparison, HybridComparison, NoveltyReport, NoveltySpec, ScoreGroups, TrainedVae,
};
pub use kde::{density_csv, export_score_density, kde, roc_csv, silverman_bandwidth, DensityCurve};
pub use metrics::{confusion_metrics, format_table, roc_auc, ConfusionCounts, EvalReport, ReportDelta, RocCurve};

//! Optical material classification.
//!
//! Synthetic light traces stand in for the 100 Hz ambient-light sensor; six
//! summary statistics per trace feed k-NN and random-forest classifiers that
//! are scored with stratified k-fold cross-validation. Simulated vehicles do
//! not run the classifiers: they draw predictions from a per-condition
//! confusion model instead.

mod bench;
mod classifier;
mod confusion;
mod features;
mod stats;
mod trace;

pub use bench::{
    bench_sensing, build_dataset, kfold_cv, separability, BenchConfig, BenchRow, BenchTable,
    bench_sensing_with, kfold_cv_with, ConditionSubset, ForestParams, GeneratorChoice,
};
pub use classifier::{fit, fit_with, predict, ClassifierKind, ClassifierModel, Sample, Standardizer};
pub use confusion::{sample_confusion, ConfusionModel, ConfusionSpec, SENSING_STREAM};
pub use features::{extract_features, FeatureVector};
pub use stats::{kruskal_wallis, KruskalWallis};
pub use trace::{generate_trace, GeneratorEntry, GeneratorSpec, LightTrace};

//! Dataset handling: file I/O, feature ranking, synthetic data, fold splits.

pub mod biserial;
pub mod dataset;
pub mod folds;
pub mod io;
pub mod standardize;
pub mod synth;

pub use biserial::{point_biserial, rank_features, select_top_k, BiserialScore, FeatureRanking};
pub use dataset::{labels_from_one_hot, one_hot, Dataset};
pub use folds::{kfold_split, FoldSplit};
pub use io::{load_dataset, save_dataset, DatasetFormat, DatasetMetadata};
pub use standardize::Standardizer;
pub use synth::{synth_generate, SynthConfig};

//! Experiment reproduction: datasets, synthetic generators, nested
//! cross-validation and the kNN consistency study.

mod consistency;
mod cv;
mod dataset;
mod synthetic;

pub use consistency::{
    knn_consistency_study, sample_field, ConsistencyRow, LinearRamp, ProbabilityField, Threshold,
};
pub use cv::{
    cross_validate, stratified_folds, CvConfig, CvReport, FoldResult, GridCell, DEFAULT_C_GRID,
    DEFAULT_LAMBDA_GRID,
};
pub use dataset::{load_csv, load_features, normalize, Dataset, LabelColumn, Normalization};
pub use synthetic::{circle_label, make_blobs, make_circle_dataset, CIRCLE_HALF_WIDTH, CIRCLE_RADIUS};

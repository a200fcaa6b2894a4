//! Optimisation, cross-validation and evaluation.

pub mod adam;
pub mod data;
pub mod fit;
pub mod metrics;
pub mod split;

pub use adam::{adam_step, Adam, AdamConfig};
pub use data::{load_manifest, read_frames, read_voxel_file, Dataset, StreamFormat};
pub use fit::{
    cross_validate, embeddings, evaluate, predict_scores, predictions, train_fold, write_cross_validation,
    write_epoch_log, write_report_files, CrossValidation, CrossValidationReport, EpochLog, FoldResult, FoldStatus,
    FoldSummary, Selection, TrainConfig,
};
pub use metrics::{pr_curve, ClassMetrics, MetricsReport, PrPoint, Prediction};
pub use split::{kfold_split, Fold};

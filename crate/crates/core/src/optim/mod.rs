//! Loss, parameter updates, and evaluation metrics.

mod adam;
mod loss;
mod report;

pub use adam::{adam_step_tensor, Adam, AdamHyper, OptimError};
pub use loss::{bce_loss, BceBatch, LossError, PROB_CLAMP_EPS};
pub use report::{
    classification_report, ClassMetrics, ClassificationReport, ConfusionMatrix, ReportError,
};

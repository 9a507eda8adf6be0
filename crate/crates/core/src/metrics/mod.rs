//! Segmentation metrics and the Dice training loss.

pub mod auc;
pub mod confusion;
pub mod dice;
pub mod report;

pub use auc::{auc, roc_curve, RocCurve};
pub use confusion::{confusion, scalar_metrics, ConfusionCounts, ScalarMetrics};
pub use dice::{dice_coefficient, one_hot_foreground, DICE_EPS};
pub use report::{report_csv, write_report, ReportRow};

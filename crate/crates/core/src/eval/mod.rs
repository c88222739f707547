//! Label mapping, action-prediction accuracy, the supervised baseline, and
//! the transfer comparison.

pub mod labels;
pub mod log;
pub mod report;
pub mod supervised;
pub mod transfer;

pub use labels::{collapse_9_to_3, map_steering_to_action, Confusion, Label};
pub use log::{generate_drive_log, DriveLogConfig, LabeledDriveLog};
pub use report::{evaluate_on_log, EvalReport, Method, RewardSummary};
pub use supervised::{train_supervised_baseline, SupervisedConfig};
pub use transfer::{transfer_experiment, TransferConfig};

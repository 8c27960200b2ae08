//! Losses, matching, soft labels, the EMA teacher and the training loop.

pub mod data;
pub mod labels;
pub mod losses;
pub mod matching;
pub mod teacher;
pub mod trainer;

pub use data::{load_samples, render_view, Sample};
pub use labels::{make_soft_labels, LabelMode};
pub use losses::{comp_loss, extra_loss, CompLoss, ExtraLossKind, LossWeights};
pub use matching::{match_predictions, Assignment};
pub use teacher::{canvas_layout, ema_update, CanvasLayout, EmaTeacher};
pub use trainer::{train, EpochLog, StepLosses, TrainConfig, Trainer};

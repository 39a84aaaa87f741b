//! Training: losses, optimizer, densification, and the three-stage
//! coarse-to-fine schedule.

pub mod adam;
pub mod densify;
pub mod loss;
pub mod run;
pub mod schedule;

pub use adam::{adam_step, expon_lr, AdamConfig, AdamState};
pub use densify::{densify_and_prune, DensifyAccum, DensifyConfig, DensifyStats};
pub use loss::{
    normal_loss, photometric_loss, psnr, reg_loss, ssim, total_loss, LossTerms, LAMBDA_DSSIM,
    LAMBDA_NORMAL,
};
pub use run::{
    init_model, run_schedule, InitConfig, LearningRates, MetricsRow, TrainConfig, TrainOutcome,
    METRICS_CSV_HEADER,
};
pub use schedule::{Stage, StageSchedule};

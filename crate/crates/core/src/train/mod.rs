//! Complementary and supervised training loops, losses, evaluation and the
//! loss-landscape probe.

mod config;
mod eval;
mod losses;
mod probe;
mod report;
mod run;

pub use config::{Mode, TrainConfig};
pub use eval::{baseline_rmse, evaluate, evaluate_rmse, RmseReport};
pub use losses::{
    optimizer_step, step_complementary, step_supervised, LossBreakdown, LossContext, LossVars,
    DIVERGENCE_LIMIT,
};
pub use probe::{probe_loss_landscape, probe_step, ProbePoint, DEFAULT_PROBE_MULTIPLIER};
pub use report::{metrics_csv, probe_csv, timing_csv, write_text, METRICS_HEADER};
pub use run::{
    run_training, Draw, EpochMetrics, Observer, RunMetrics, Sampler, TrainResult, TrainingSplit,
};

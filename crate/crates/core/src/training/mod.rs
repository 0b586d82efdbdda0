//! Optimization, data, the training loop and the ablation driver.

pub mod ablation;
pub mod data;
pub mod optim;
pub mod trainer;

pub use ablation::{ablation_csv, default_arms, run_ablation, AblationRow, ABLATION_HEADER};
pub use data::{
    augment, gen_synthetic, load_cifar_bin, parse_cifar_bin, CifarFormat, Dataset, Source,
    SyntheticParams, SYNTHETIC_MEAN, SYNTHETIC_STD,
};
pub use optim::{cross_entropy, sgd_step, OptimState, StepSchedule};
pub use trainer::{
    evaluate, train, trajectory_rows, EpochMetrics, Evaluation, TrainConfig, TrainReport,
    TrajectoryRow,
};

/// `lr = base · 0.1^⌊epoch / drop_every⌋`
pub fn lr_schedule(base: f64, drop_every: usize, epoch: usize) -> f64 {
    StepSchedule { base, drop_every }.lr(epoch)
}

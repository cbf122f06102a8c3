//! Windowing, optimisation, early stopping, grid search and metrics.

pub mod config;
pub mod grid;
pub mod metrics;
pub mod optim;
pub mod train;
pub mod windows;

pub use config::{LossKind, Monitor, PlateauConfig, TrainConfig};
pub use grid::{describe, grid_search, select_best, GridResult, GridSpec, LeaderboardEntry};
pub use metrics::{mean_std, metric, MetricKind};
pub use optim::{adam_step, AdamConfig, AdamState};
pub use train::{
    evaluate_loss, series_predictions, train, train_from, EpochRecord, FrameSet, History, Segment,
    SeriesSplits, TrainData, Trained,
};
pub use windows::{make_windows, Window};

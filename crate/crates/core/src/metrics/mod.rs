//! Evaluation: hand-eye composition of estimates, causal smoothing, error
//! tables and the throughput harness.

mod bench;
mod filter;
mod report;
mod series;

pub use bench::{bench, BenchReport};
pub use filter::{unwrap_angles, Butterworth2, DEFAULT_CUTOFF_HZ};
pub use report::{
    axis_errors, evaluate, nrmse, reduction, rmse, trajectory_metrics, Group, GroupMetrics, GroupSummary, MeanStd,
    MetricsReport, NrmseRange, TrajectoryMetrics,
};
pub use series::{
    hand_eye, pose_rows, read_pose_rows, series_from_rows, write_pose_csv, PoseRow, PoseSeries, SeriesSource,
    POSE_CSV_HEADER,
};

#[cfg(test)]
mod tests;

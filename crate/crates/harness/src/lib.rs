//! Experiment orchestration for the contralsp explainer.
//!
//! A JSON [`ExperimentConfig`] names a regime, explainers and seeds;
//! [`run_experiment`] generates data, trains or loads the target, fits the
//! explainers, scores them and writes reports, tables, saliency CSVs and
//! optional heatmaps. [`run_ablation`] repeats the learned explainer with
//! components switched off or hyperparameters swept.

pub mod ablation;
pub mod cache;
pub mod config;
pub mod error;
pub mod experiment;
pub mod heatmap;
pub mod tables;

pub use ablation::{run_ablation, AblationTable, Toggle};
pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
pub use experiment::{run_experiment, run_experiment_with, ExperimentSummary, RunOptions};

/// Keeps freed tensor buffers on the heap instead of returning them to the
/// kernel after every graph; on glibc the default thresholds make a fit
/// spend most of its time in `mmap`/`munmap`.
pub fn tune_allocator() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    // SAFETY: mallopt only adjusts allocator tunables and is called before
    // any worker threads start.
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 32 << 20);
        libc::mallopt(libc::M_TRIM_THRESHOLD, i32::MAX);
    }
}

//! Training loop, optimizer schedule, metrics, subgroup partitioning,
//! robustness suite, ablation runner, and scaling benchmarks.

pub mod ablate;
pub mod bench;
pub mod checkpoint;
pub mod gradchecks;
pub mod metrics;
pub mod partition;
pub mod robust;
pub mod schedule;
pub mod train;

pub use ablate::{run_ablation, standard_grid, AblationCell, AblationRow};
pub use bench::{bench_scaling, fit_linear, BenchRow, CountingAlloc, MemProbe, ScalingFit};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use gradchecks::{gradcheck_cross_loss, gradcheck_intra_loss, gradcheck_model};
pub use metrics::{depth_order_accuracy, evaluate, MetricsReport};
pub use partition::{partition_subgroups, Subgroup, DEFAULT_MAX_SUBGROUP};
pub use robust::{run_robustness, RobustnessRow};
pub use schedule::CosineRestartSchedule;
pub use train::{train, StepLog, TrainConfig, Trainer};

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),

    #[error(transparent)]
    Scene(#[from] crate::scenegen::SceneError),

    #[error(transparent)]
    Container(#[from] crate::scenegen::ContainerError),

    #[error(transparent)]
    Diff(#[from] crate::diffcore::DiffError),

    #[error("io at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json at {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("invalid checkpoint: {0}")]
    BadCheckpoint(String),

    #[error("non-finite loss component {component} = {value} at step {step}")]
    NonFiniteLoss {
        component: String,
        step: usize,
        value: f64,
    },

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl TrainError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        TrainError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

//! Simultaneous clustering of subjects and recovery of heterogeneous sparse
//! conditional-dependence graphs from spatial-by-temporal data.
//!
//! The crate is organised bottom-up:
//!
//! * [`solvers`]: lasso coordinate descent, group prox, truncated L1, Cholesky.
//! * [`covariance`]: kernel-smoothed spatial covariance of one subject.
//! * [`glasso`]: graphical lasso with time-blocked cross-validation.
//! * [`sprclust`]: the sparse fusion-penalized clustering solver (DC + ADMM).
//! * [`tuning`]: subsampling concordance criterion for the penalty triple.
//! * [`simgen`]: synthetic matrix-normal scenarios and evaluation metrics.
//! * [`pipeline`]: end-to-end orchestration, edge-proportion analysis, reports.

pub mod covariance;
pub mod error;
pub mod glasso;
pub mod pipeline;
pub mod rng;
pub mod simgen;
pub mod solvers;
pub mod sprclust;
pub mod tuning;

pub use covariance::{KernelConfig, SubjectSeries};
pub use error::{Error, Result};
pub use glasso::{ConnectivityFeatures, PrecisionEstimate};
pub use pipeline::{EdgeProportionTable, PipelineConfig, RunReport};
pub use simgen::{ClusterMetrics, GraphMetrics, GroundTruth, Scenario, ScenarioSpec};
pub use solvers::{DenseMatrix, LassoProblem, SolverOptions};
pub use sprclust::{DcState, SprclustConfig, SprclustFit};
pub use tuning::{ConcordanceReport, TuningGrid};

//! Cross-layer soft-error resilience for ML inference.
//!
//! Workloads are split into code regions. Crucial regions run under
//! hardware redundant execution (HaRE) and are never corrupted; non-crucial
//! regions run under lightweight software-hardware resiliency (SHR): their
//! data-flow values can be hit by soft errors, but store addresses are
//! verified and committed values pass bound checkers. The crate measures how
//! much accuracy each non-crucial region costs under fault injection,
//! greedily picks a configuration that stays under an accuracy-loss
//! threshold, and prices it with an analytic completion-time model.
//!
//! Kernels are generic over [`Scalar`]; the aliases below fix the default
//! single-precision pipeline.

pub mod analysis;
pub mod error;
pub mod fault;
pub mod harness;
pub mod manifest;
pub mod mnist;
pub mod model;
pub mod perf;
pub mod resilience;
pub mod scalar;
pub mod workloads;

pub use error::{Error, Result};
pub use model::{
    all_candidates, validate_region_set, AccuracyReport, BoundMode, BoundSpec, Configuration, FaultSpec, RegionClass,
    RegionDescriptor, RegionTable, ValueModel,
};
pub use scalar::Scalar;
pub use workloads::{WorkloadKind, CONTROL};

pub type Sample = mnist::Sample<f32>;
pub type Dataset = mnist::Dataset<f32>;
pub type WorkloadInstance = workloads::WorkloadInstance<f32>;
pub type PreparedWorkload<'a> = workloads::PreparedWorkload<'a, f32>;
pub type ExecutionTrace = workloads::ExecutionTrace<f32>;
pub type InjectionEvent = workloads::InjectionEvent<f32>;
pub type Cnn = workloads::cnn::Cnn<f32>;
pub type Mlp = workloads::mlp::Mlp<f32>;
pub type Knn = workloads::knn::Knn<f32>;
pub type TrialResult = fault::TrialResult<f32>;
pub type CostModel = perf::CostModel<f64>;
pub type OverheadReport = perf::OverheadReport<f64>;

/// Directory holding the shipped MNIST subset, weights and region manifests.
pub fn fixture_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

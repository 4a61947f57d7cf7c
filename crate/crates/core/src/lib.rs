//! Support-map-driven extrinsic calibration for LiDAR–camera rigs.
//!
//! The crate is organized along the calibration pipeline:
//!
//! - [`geometry`]: SE(3) algebra, pinhole projection and pose errors.
//! - [`scene_sim`]: synthetic class-labelled scenes, a perturbed initial
//!   estimate and a class-aware cross-modal residual oracle.
//! - [`support_map`]: scores residuals and accumulates them into a dense,
//!   normalized image-plane support map.
//! - [`refine`]: support-proportional correspondence sampling and weighted
//!   Levenberg–Marquardt refinement of the extrinsics.
//! - [`analysis`]: class-wise residual statistics and variant comparison.
//! - [`experiment`]: the seeded end-to-end harness tying the stages together.
//!
//! ```
//! use supportcal::geometry::{se3_exp, se3_log, Twist};
//! use nalgebra::Vector3;
//!
//! let xi = Twist::new(Vector3::new(0.1, 0.0, 0.0), Vector3::new(0.0, 0.2, 0.0));
//! let back = se3_log(&se3_exp(&xi)).unwrap();
//! assert!((back.to_vector() - xi.to_vector()).amax() < 1e-10);
//! ```

pub mod analysis;
pub mod experiment;
pub mod fsutil;
pub mod geometry;
pub mod refine;
pub mod scene_sim;
pub mod seed;
pub mod support_map;

use thiserror::Error;

pub use analysis::{AnalysisError, ClassResidualStats, VariantComparison};
pub use experiment::{ExperimentConfig, ExperimentReport};
pub use geometry::{CameraIntrinsics, GeometryError, Pixel, Pose, PoseError, Twist};
pub use refine::{RefineError, RefineOptions, RefineResult, SamplingPlan};
pub use scene_sim::{Correspondence, Scene, SceneError, SceneSpec, SemanticClass};
pub use support_map::{SupportMap, SupportMapError, SupportMapParams};

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    SupportMap(#[from] SupportMapError),
    #[error(transparent)]
    Refine(#[from] RefineError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

pub type Result<T> = std::result::Result<T, Error>;

//! Per-group intrinsic dimension estimation and clustered pushforward
//! generative models for point-cloud data.
//!
//! The pipeline: load or synthesize a dataset (`data`, `synth`), estimate
//! intrinsic dimension per group from exact nearest-neighbour distances
//! (`knn`, `idest`), partition the data (`cluster` or labels), fit one
//! two-step pushforward model per cluster and mix them by cluster size
//! (`twostep`, `clustered`), then score samples (`eval`) or reweight a
//! classifier by per-class dimension (`weights`). `repro` holds the canned
//! seeded experiments.
//!
//! Core math is generic over the storage scalar ([`Scalar`]: f32 or f64);
//! distances, estimators, and fits always accumulate in f64, in a fixed
//! order, so a given seed reproduces results bit-for-bit across reruns and
//! thread counts.

pub mod cluster;
pub mod clustered;
pub mod data;
pub mod error;
pub mod eval;
pub mod idest;
pub mod knn;
pub mod linalg;
pub mod parallel;
pub mod repro;
pub mod rng;
pub mod scalar;
pub mod synth;
pub mod twostep;
pub mod weights;

pub use data::{DataMatrix, GroupIndex};
pub use error::{Error, Result};
pub use scalar::Scalar;

/// Dataset matrix stored as f32 (the raw binary format).
pub type MatrixF32 = DataMatrix<f32>;
/// Dataset matrix stored as f64 (the CSV format and all internal math).
pub type MatrixF64 = DataMatrix<f64>;

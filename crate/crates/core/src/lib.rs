//! Evidential two-source segmentation toolkit.
//!
//! Converts per-class evidence volumes from two independent predictors into
//! belief masses, fuses them with a class-aware evidential combination rule,
//! scores each voxel's reliability, and provides the curriculum weighting and
//! Fisher-information evidential loss used to train on the fused pseudo-labels.
//!
//! The numerical kernels are generic over [`Scalar`] (`f32` or `f64`);
//! the `*64` aliases below fix the scalar to `f64`, which is what the volume
//! pipeline and CLI use.

pub mod curriculum;
pub mod demo;
pub mod edl;
mod error;
pub mod fusion;
pub mod losses;
pub mod metrics;
pub mod numeric;
pub mod special;
pub mod synth;
pub mod volume_io;

pub use error::{Error, Result};
pub use numeric::Scalar;

pub type EvidenceVector64 = edl::EvidenceVector<f64>;
pub type BeliefAssignment64 = edl::BeliefAssignment<f64>;
pub type DirichletParams64 = edl::DirichletParams<f64>;
pub type Gpma64 = edl::Gpma<f64>;
pub type FusionConfig64 = fusion::FusionConfig<f64>;
pub type FusedVoxel64 = fusion::FusedVoxel<f64>;
pub type CurriculumConfig64 = curriculum::CurriculumConfig<f64>;
pub type IedlConfig64 = losses::IedlConfig<f64>;
pub type WarmupConfig64 = losses::WarmupConfig<f64>;

pub type EvidenceVector32 = edl::EvidenceVector<f32>;
pub type Gpma32 = edl::Gpma<f32>;

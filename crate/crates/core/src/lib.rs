//! Tensor-train surrogates for multivariate probability densities.
//!
//! The crate builds a TT approximation of an unnormalized density from
//! pointwise evaluations (alternating cross interpolation with maxvol
//! pivoting), draws exact samples from the surrogate by the
//! conditional-distribution (inverse Rosenblatt) method, and corrects the
//! surrogate bias with independence Metropolis-Hastings, importance-weighted
//! ratio estimators (with i.i.d. or randomized lattice seeds), and two-level
//! control-variate estimators.
//!
//! All numerical kernels are generic over the floating-point type through
//! [`scalar::Scalar`]; `f64` aliases are exported at the crate root.

pub mod baseline;
pub mod cd;
pub mod cross;
pub mod estimators;
pub mod linalg;
pub mod qmc;
pub mod scalar;
pub mod targets;
pub mod tt;
pub mod tt_io;

pub use baseline::{am_run, AmConfig};
pub use cd::{invert_cdf, CdSampler, SampleBatch, SeedKind};
pub use cross::{cross_approximate, CrossConfig, CrossResult};
pub use estimators::{iact, importance_estimate, lemma_diagnostics, mh_correct, two_level_iw, two_level_mh, ChainResult, EstimateReport, WeightedEstimate};
pub use linalg::{maxvol, maxvol_with_basis, Matrix};
pub use qmc::{build_generating_vector, lattice_points, LatticeRule};
pub use scalar::Scalar;
pub use targets::TargetDensity;
pub use tt::{Core, Grid, TtTensor};

/// `f64` aliases for the main types.
pub type Grid64 = tt::Grid<f64>;
pub type TtTensor64 = tt::TtTensor<f64>;
pub type Matrix64 = linalg::Matrix<f64>;
/// `f32` aliases.
pub type Grid32 = tt::Grid<f32>;
pub type TtTensor32 = tt::TtTensor<f32>;

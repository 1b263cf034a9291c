//! Core algorithms for principal-component uncertainty quantification:
//! posterior sample stacks, SVD-based uncertainty axes and intervals,
//! risk-controlling (Learn then Test) calibration, and evaluation metrics.
//!
//! The crate is `no_std`-compatible (`alloc` required); IO, file formats
//! and the command-line front end live in the companion `puq-cli` crate.

#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod approximation;
pub mod calibration;
pub mod ltt;
pub mod metrics;
pub mod samplers;
pub mod seed;
pub mod tensor;

pub use approximation::{approximate, empirical_quantile, pixelwise_baseline, BasisKind, PrincipalBasis};
pub use calibration::{
    adaptive_k, coverage_loss, da_puq_calibrate, e_puq_calibrate, rda_puq_calibrate,
    reconstruction_loss, CalibrationResult, LambdaGrid, Method, RiskConfig,
};
pub use metrics::{uncertainty_volume, RiskReport, VolumeConfig};
pub use samplers::{DatasetPair, GaussianTask, PosteriorSampler, SampleStack};
pub use seed::SeedSpec;
pub use tensor::{FlatVector, ImageTensor, PatchMode, PatchSpec};

//! Regularized tensor regression for structured point clouds.
//!
//! A structured point cloud is a grid of surface measurements stored as an
//! order-3 tensor (two spatial modes plus a sample mode). This crate links
//! such tensors to scalar process variables through low-dimensional basis
//! expansions of the coefficient tensor, and provides:
//!
//! * dense order-3 tensor algebra ([`tensor`]),
//! * Kronecker-separable noise covariance models ([`cov`]),
//! * spline / sine bases with roughness penalties ([`basis`]),
//! * closed-form GLS, projected, and penalized estimators plus the
//!   one-step alternating decomposition-regression and baselines
//!   ([`regress`]),
//! * GCV / BIC tuning ([`tuning`]),
//! * synthetic generators and a replication benchmark ([`simgen`]),
//! * heteroscedastic residual-variance modeling ([`hetero`]),
//! * quadratic-programming process optimization ([`procopt`]),
//! * binary tensor and CSV matrix file formats ([`io`]).

pub mod basis;
pub mod cov;
pub mod error;
pub mod hetero;
pub mod io;
pub mod linalg;
pub mod procopt;
pub mod regress;
pub mod simgen;
pub mod tensor;
pub mod tuning;

pub use error::{Error, Result};
pub use tensor::{Matrix, Tensor3, Vector};

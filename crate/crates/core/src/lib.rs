//! Differentiable global covariance pooling with a scaling eigen branch,
//! eigenvalue attribution tools and a synthetic experiment harness.

pub mod attribution;
pub mod diagnostics;
pub mod error;
pub mod export;
pub mod gcp;
pub mod harness;
pub mod linalg;
pub mod spectral;

pub use error::{Error, Result};
pub use gcp::{gcp_backward, gcp_forward, GcpConfig, GcpState};
pub use linalg::{fro_inner, fro_norm, sym_eig, Mat, SymEig};
pub use spectral::{eig_backward, mat_fn, mat_fn_backward, EigGrad, SpectralFn};

//! Dense real matrices, Frobenius products, the Jacobi symmetric
//! eigensolver and the SPM1 matrix file format.

mod eig;
mod io;
mod mat;

pub use eig::{compose, sym_eig, SymEig};
pub use io::{load_spm, read_spm, save_spm, write_spm, SPM_MAGIC};
pub use mat::{fro_inner, fro_norm, Mat};

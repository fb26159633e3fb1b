//! Dense small-matrix kernels shared by every geometric routine.
//!
//! Everything here is a pure function of its inputs; randomness only enters
//! through an explicitly passed [`random::Rng`] or seed.

mod decomp;
mod funcs;
mod matrix;
pub mod random;

pub use decomp::{eig_sym, qr_compact, svd_thin, Svd, SymEig};
pub use funcs::{expm, expm_sym, invsqrtm_spd, logm_spd, polar_orthogonal, spd_eig, sqrtm_spd};
pub use matrix::DenseMatrix;
pub use random::rand_orthonormal;

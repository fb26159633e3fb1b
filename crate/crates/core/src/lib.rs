pub mod error;
pub mod linalg;
pub mod manifolds;

pub use error::{Error, Result};
pub mod quotient;
pub mod frechet;
pub mod lift;
pub mod baselines;
pub mod toy;
pub mod bundle;
pub mod synth;
pub mod merge;
pub mod selfcheck;

//! Factor manifolds: Stiefel under the canonical metric, SPD under the
//! affine-invariant metric, and the Cayley primitives.

mod cayley;
mod spd;
mod stiefel;

pub use cayley::{cayley_lift, cayley_log, cayley_retract, FactoredSkew, LIFT_SIGMA_MIN};
pub use spd::{spd_distance, spd_exp, spd_inner, spd_log, spd_norm, SpdPoint};
pub use stiefel::{
    orthonormality_defect, stiefel_exp, stiefel_inner, stiefel_log, stiefel_log_with,
    stiefel_norm, stiefel_project, LogOptions, StiefelPoint, STIEFEL_TOL,
};

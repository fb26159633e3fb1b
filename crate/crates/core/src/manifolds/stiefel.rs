//! Stiefel manifold `St(n, r)` under the canonical metric
//! `⟨ζ, η⟩_U = Tr(ζᵀ (I - ½ U Uᵀ) η)`.

use crate::error::{Error, Result};
use crate::linalg::{expm, qr_compact, DenseMatrix};

/// Orthonormality tolerance enforced by [`StiefelPoint::new`].
pub const STIEFEL_TOL: f64 = 1e-10;

/// An `n x r` matrix with orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct StiefelPoint {
    u: DenseMatrix,
}

impl StiefelPoint {
    pub fn new(u: DenseMatrix) -> Result<Self> {
        if u.rows() < u.cols() {
            return Err(Error::dim(format!("Stiefel point needs n >= r, got {:?}", u.shape())));
        }
        let defect = orthonormality_defect(&u);
        if !(defect <= STIEFEL_TOL) {
            return Err(Error::Domain(format!(
                "columns are not orthonormal (‖UᵀU - I‖_F = {defect:.3e})"
            )));
        }
        Ok(Self { u })
    }

    pub(crate) fn new_unchecked(u: DenseMatrix) -> Self {
        Self { u }
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.u
    }

    pub fn into_matrix(self) -> DenseMatrix {
        self.u
    }

    /// Ambient dimension.
    pub fn n(&self) -> usize {
        self.u.rows()
    }

    pub fn rank(&self) -> usize {
        self.u.cols()
    }

    /// Right action `U O`.
    pub fn rotate(&self, o: &DenseMatrix) -> Self {
        Self::new_unchecked(self.u.matmul(o))
    }
}

pub fn orthonormality_defect(u: &DenseMatrix) -> f64 {
    (&u.tr_matmul(u) - &DenseMatrix::identity(u.cols())).norm_fro()
}

fn check_shape(u: &StiefelPoint, x: &DenseMatrix, what: &str) -> Result<()> {
    if x.shape() != u.u.shape() {
        return Err(Error::dim(format!(
            "{what} has shape {:?}, base point {:?}",
            x.shape(),
            u.u.shape()
        )));
    }
    Ok(())
}

/// Canonical metric. Accepts raw (non-tangent) vectors as well.
pub fn stiefel_inner(u: &StiefelPoint, zeta: &DenseMatrix, eta: &DenseMatrix) -> Result<f64> {
    check_shape(u, zeta, "ζ")?;
    check_shape(u, eta, "η")?;
    let uz = u.u.tr_matmul(zeta);
    let ue = u.u.tr_matmul(eta);
    Ok(zeta.dot(eta) - 0.5 * uz.dot(&ue))
}

pub fn stiefel_norm(u: &StiefelPoint, zeta: &DenseMatrix) -> f64 {
    stiefel_inner(u, zeta, zeta)
        .expect("tangent shape matches base point")
        .max(0.0)
        .sqrt()
}

/// Projection onto `T_U St = {ζ : Uᵀζ skew}`: removes the `U sym(UᵀX)` normal part.
pub fn stiefel_project(u: &StiefelPoint, x: &DenseMatrix) -> DenseMatrix {
    assert_eq!(u.u.shape(), x.shape(), "stiefel_project shape mismatch");
    let sym = u.u.tr_matmul(x).sym();
    x - &u.u.matmul(&sym)
}

/// Riemannian exponential of the canonical metric.
///
/// With `A = Uᵀη` and the compact QR `(I - UUᵀ)η = Q R`,
/// `Exp_U(η) = [U Q] expm([[A, -Rᵀ], [R, 0]]) [I; 0]`.
pub fn stiefel_exp(u: &StiefelPoint, eta: &DenseMatrix) -> StiefelPoint {
    assert_eq!(u.u.shape(), eta.shape(), "stiefel_exp shape mismatch");
    let (n, r) = u.u.shape();
    if r == 0 {
        return u.clone();
    }
    let uteta = u.u.tr_matmul(eta);
    let a = uteta.skew();
    let w = eta - &u.u.matmul(&uteta);
    let (q, rr) = if n >= 2 * r {
        // QR of [U, W]: the trailing block of Q is orthogonal to U even
        // when W is rank deficient.
        let (qf, rf) = qr_compact(&DenseMatrix::hstack(&[&u.u, &w])).expect("n >= 2r");
        (qf.columns(r, 2 * r), rf.block(r, 2 * r, r, 2 * r))
    } else {
        qr_compact(&w).expect("n >= r")
    };
    let mut block = DenseMatrix::zeros(2 * r, 2 * r);
    block.set_block(0, 0, &a);
    block.set_block(0, r, &rr.transpose().scale(-1.0));
    block.set_block(r, 0, &rr);
    let e = expm(&block);
    let m = e.block(0, r, 0, r);
    let nn = e.block(r, 2 * r, 0, r);
    let out = &u.u.matmul(&m) + &q.matmul(&nn);
    StiefelPoint::new_unchecked(out)
}

/// Controls for the shooting logarithm.
#[derive(Debug, Clone, Copy)]
pub struct LogOptions {
    /// Residual `‖U1 - Exp_U(η)‖_F` at which the iteration is accepted.
    pub tol: f64,
    /// Residual the iteration keeps polishing towards while it still improves.
    pub target: f64,
    pub max_iter: usize,
}

impl Default for LogOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            target: 1e-13,
            max_iter: 200,
        }
    }
}

pub fn stiefel_log(u: &StiefelPoint, u1: &StiefelPoint) -> Result<DenseMatrix> {
    stiefel_log_with(u, u1, &LogOptions::default())
}

/// Canonical-metric logarithm by shooting: repeatedly correct the initial
/// velocity by the tangent projection of the endpoint residual, halving the
/// correction while it fails to reduce the residual.
///
/// The geodesic stays in `span[U, U1]`, so for `n > 2r` the shooting runs in
/// an orthonormal `2r`-frame `W = [U, Q]` and the result is mapped back.
pub fn stiefel_log_with(
    u: &StiefelPoint,
    u1: &StiefelPoint,
    opts: &LogOptions,
) -> Result<DenseMatrix> {
    if u.u.shape() != u1.u.shape() {
        return Err(Error::dim(format!(
            "stiefel_log between {:?} and {:?}",
            u.u.shape(),
            u1.u.shape()
        )));
    }
    let (n, r) = u.u.shape();
    if r == 0 || n <= 2 * r {
        return shoot(u, u1, opts);
    }
    let normal = u1.u.add_scaled(&u.u.matmul(&u.u.tr_matmul(&u1.u)), -1.0);
    let (qf, _) = qr_compact(&DenseMatrix::hstack(&[&u.u, &normal]))?;
    let w = DenseMatrix::hstack(&[&u.u, &qf.columns(r, 2 * r)]);
    let base = StiefelPoint::new_unchecked(DenseMatrix::eye(2 * r, r));
    let target = StiefelPoint::new_unchecked(w.tr_matmul(&u1.u));
    Ok(w.matmul(&shoot(&base, &target, opts)?))
}

fn shoot(u: &StiefelPoint, u1: &StiefelPoint, opts: &LogOptions) -> Result<DenseMatrix> {
    let mut eta = stiefel_project(u, &(&u1.u - &u.u));
    let mut residual_mat = &u1.u - stiefel_exp(u, &eta).matrix();
    let mut residual = residual_mat.norm_fro();
    let mut iterations = 0;
    while residual > opts.target && iterations < opts.max_iter {
        iterations += 1;
        let step = stiefel_project(u, &residual_mat);
        let mut c = 1.0;
        let mut accepted = false;
        for _ in 0..12 {
            let cand = eta.add_scaled(&step, c);
            let cand_res = &u1.u - stiefel_exp(u, &cand).matrix();
            let r = cand_res.norm_fro();
            if r < residual {
                eta = cand;
                residual_mat = cand_res;
                // Stop polishing once progress stalls below the acceptance tolerance.
                let stalled = residual <= opts.tol && r > 0.5 * residual;
                residual = r;
                accepted = true;
                if stalled {
                    iterations = opts.max_iter;
                }
                break;
            }
            c *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if residual > opts.tol {
        return Err(Error::LogFailure {
            residual,
            iterations,
        });
    }
    Ok(eta)
}

//! SPD manifold under the affine-invariant metric `Tr(B⁻¹ ζ B⁻¹ η)`.

use crate::error::{Error, Result};
use crate::linalg::{expm_sym, spd_eig, DenseMatrix};

/// Symmetric positive definite matrix with its square root and inverse
/// square root cached.
#[derive(Debug, Clone)]
pub struct SpdPoint {
    b: DenseMatrix,
    sqrt: DenseMatrix,
    inv_sqrt: DenseMatrix,
    lambda_min: f64,
}

impl PartialEq for SpdPoint {
    fn eq(&self, other: &Self) -> bool {
        self.b == other.b
    }
}

impl SpdPoint {
    pub fn new(b: DenseMatrix) -> Result<Self> {
        if !b.is_square() {
            return Err(Error::dim(format!("SPD point must be square, got {:?}", b.shape())));
        }
        let asym = (&b - &b.transpose()).norm_fro();
        if asym > 1e-10 * b.norm_fro().max(f64::MIN_POSITIVE) {
            return Err(Error::Domain(format!("matrix is not symmetric (asymmetry {asym:.3e})")));
        }
        Self::from_symmetric(b.sym())
    }

    /// Symmetrizes before the SPD check.
    pub(crate) fn from_symmetric(b: DenseMatrix) -> Result<Self> {
        let e = spd_eig(&b)?;
        let sqrt = e.map(f64::sqrt);
        let inv_sqrt = e.map(|l| 1.0 / l.sqrt());
        Ok(Self {
            lambda_min: e.values[0],
            b,
            sqrt,
            inv_sqrt,
        })
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.b
    }

    pub fn dim(&self) -> usize {
        self.b.rows()
    }

    pub fn sqrt(&self) -> &DenseMatrix {
        &self.sqrt
    }

    pub fn inv_sqrt(&self) -> &DenseMatrix {
        &self.inv_sqrt
    }

    pub fn inverse(&self) -> DenseMatrix {
        self.inv_sqrt.matmul(&self.inv_sqrt).sym()
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    /// Congruence `Oᵀ B O` by an orthogonal matrix; the cached roots transform
    /// the same way.
    pub fn congruence(&self, o: &DenseMatrix) -> Self {
        let t = |m: &DenseMatrix| o.tr_matmul(m).matmul(o).sym();
        Self {
            b: t(&self.b),
            sqrt: t(&self.sqrt),
            inv_sqrt: t(&self.inv_sqrt),
            lambda_min: self.lambda_min,
        }
    }

    /// `B^{-1/2} X B^{-1/2}`.
    fn whiten(&self, x: &DenseMatrix) -> DenseMatrix {
        self.inv_sqrt.matmul(x).matmul(&self.inv_sqrt)
    }
}

fn check_tangent(b: &SpdPoint, x: &DenseMatrix) -> Result<()> {
    if x.shape() != b.b.shape() {
        return Err(Error::dim(format!(
            "SPD tangent {:?} at base {:?}",
            x.shape(),
            b.b.shape()
        )));
    }
    Ok(())
}

pub fn spd_inner(b: &SpdPoint, zeta: &DenseMatrix, eta: &DenseMatrix) -> Result<f64> {
    check_tangent(b, zeta)?;
    check_tangent(b, eta)?;
    let z = b.whiten(zeta);
    let e = b.whiten(eta);
    Ok(z.transpose().dot(&e))
}

pub fn spd_norm(b: &SpdPoint, zeta: &DenseMatrix) -> f64 {
    spd_inner(b, zeta, zeta)
        .expect("tangent shape matches base point")
        .max(0.0)
        .sqrt()
}

/// `Exp_B(η) = B^{1/2} exp(B^{-1/2} η B^{-1/2}) B^{1/2}`.
pub fn spd_exp(b: &SpdPoint, eta: &DenseMatrix) -> Result<SpdPoint> {
    check_tangent(b, eta)?;
    let mid = expm_sym(&b.whiten(&eta.sym()))?;
    SpdPoint::from_symmetric(b.sqrt.matmul(&mid).matmul(&b.sqrt).sym())
}

/// `Log_B(C) = B^{1/2} log(B^{-1/2} C B^{-1/2}) B^{1/2}`.
pub fn spd_log(b: &SpdPoint, c: &SpdPoint) -> Result<DenseMatrix> {
    if b.dim() != c.dim() {
        return Err(Error::dim(format!("spd_log between {} and {}", b.dim(), c.dim())));
    }
    let e = spd_eig(&b.whiten(&c.b).sym())?;
    let mid = e.map(f64::ln);
    Ok(b.sqrt.matmul(&mid).matmul(&b.sqrt).sym())
}

/// `‖log(B^{-1/2} C B^{-1/2})‖_F`.
pub fn spd_distance(b: &SpdPoint, c: &SpdPoint) -> Result<f64> {
    if b.dim() != c.dim() {
        return Err(Error::dim(format!("spd_distance between {} and {}", b.dim(), c.dim())));
    }
    let e = spd_eig(&b.whiten(&c.b).sym())?;
    Ok(e.values.iter().map(|l| l.ln().powi(2)).sum::<f64>().sqrt())
}

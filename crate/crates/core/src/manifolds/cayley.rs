//! Cayley pseudo-lift and retraction on the Stiefel manifold, kept in
//! factored form `Ω = L S Lᵀ` so nothing `n x n` is ever formed.

use super::stiefel::{StiefelPoint, STIEFEL_TOL};
use crate::error::{Error, Result};
use crate::linalg::{svd_thin, DenseMatrix};

/// Minimum singular value of `sk(XᵀQ)` accepted by [`cayley_lift`].
pub const LIFT_SIGMA_MIN: f64 = 1e-10;

/// Skew-symmetric `Ω = L S Lᵀ ∈ so(n)` with `S` skew and `m x m`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactoredSkew {
    n: usize,
    l: DenseMatrix,
    s: DenseMatrix,
}

impl FactoredSkew {
    pub fn new(l: DenseMatrix, s: DenseMatrix) -> Result<Self> {
        if !s.is_square() || s.rows() != l.cols() {
            return Err(Error::dim(format!(
                "FactoredSkew core {:?} does not match factor {:?}",
                s.shape(),
                l.shape()
            )));
        }
        let asym = (&s + &s.transpose()).max_abs();
        if asym > 1e-12 * (1.0 + s.max_abs()) {
            return Err(Error::Domain(format!("core is not skew (‖S + Sᵀ‖ = {asym:.3e})")));
        }
        Ok(Self {
            n: l.rows(),
            s: s.skew(),
            l,
        })
    }

    pub fn zero(n: usize) -> Self {
        Self {
            n,
            l: DenseMatrix::zeros(n, 0),
            s: DenseMatrix::zeros(0, 0),
        }
    }

    /// Skew generator whose Cayley curve through `U` has initial velocity `ζ`:
    /// `Ω = ½(a Uᵀ - U aᵀ)` with `a = (I - ½UUᵀ)ζ`.
    pub fn from_tangent(u: &StiefelPoint, zeta: &DenseMatrix) -> Result<Self> {
        let um = u.matrix();
        if zeta.shape() != um.shape() {
            return Err(Error::dim(format!(
                "tangent {:?} at base {:?}",
                zeta.shape(),
                um.shape()
            )));
        }
        let r = um.cols();
        let a = zeta.add_scaled(&um.matmul(&um.tr_matmul(zeta)), -0.5);
        let l = DenseMatrix::hstack(&[&a, um]);
        let mut s = DenseMatrix::zeros(2 * r, 2 * r);
        s.set_block(0, r, &DenseMatrix::identity(r).scale(0.5));
        s.set_block(r, 0, &DenseMatrix::identity(r).scale(-0.5));
        Ok(Self { n: um.rows(), l, s })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn factor(&self) -> &DenseMatrix {
        &self.l
    }

    pub fn core(&self) -> &DenseMatrix {
        &self.s
    }

    /// Dense `n x n` form. Diagnostics and small cases only.
    pub fn to_dense(&self) -> DenseMatrix {
        if self.s.rows() == 0 {
            return DenseMatrix::zeros(self.n, self.n);
        }
        self.l.matmul(&self.s).matmul_tr(&self.l)
    }

    /// `Ω X`.
    pub fn apply(&self, x: &DenseMatrix) -> DenseMatrix {
        assert_eq!(x.rows(), self.n, "FactoredSkew::apply shape mismatch");
        if self.s.rows() == 0 {
            return DenseMatrix::zeros(x.rows(), x.cols());
        }
        self.l.matmul(&self.s.matmul(&self.l.tr_matmul(x)))
    }

    /// Initial velocity `2 Ω X` of `t ↦ Cay(tΩ) X`.
    pub fn velocity(&self, x: &StiefelPoint) -> DenseMatrix {
        self.apply(x.matrix()).scale(2.0)
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            n: self.n,
            l: self.l.clone(),
            s: self.s.scale(s),
        }
    }
}

/// Pseudo-lift `Ω = ½(Q - X) sk(XᵀQ)⁻¹ (Q - X)ᵀ` with `sk(M) = ½(Mᵀ - M)`.
pub fn cayley_lift(x: &StiefelPoint, q: &StiefelPoint) -> Result<FactoredSkew> {
    if x.matrix().shape() != q.matrix().shape() {
        return Err(Error::dim(format!(
            "cayley_lift between {:?} and {:?}",
            x.matrix().shape(),
            q.matrix().shape()
        )));
    }
    let m = x.matrix().tr_matmul(q.matrix());
    let sk = m.transpose().skew();
    let sigma_min = svd_thin(&sk).s.last().copied().unwrap_or(0.0);
    if !(sigma_min > LIFT_SIGMA_MIN) {
        return Err(Error::LiftFailure { sigma_min });
    }
    let inv = sk.inverse().map_err(|_| Error::LiftFailure { sigma_min })?;
    let s = inv.scale(0.5).skew();
    let l = q.matrix() - x.matrix();
    Ok(FactoredSkew { n: l.rows(), l, s })
}

/// Inverse of the Cayley retraction used by [`FactoredSkew::from_tangent`]:
/// the tangent `ζ` at `X` with `Cay(Ω(ζ)) X = Q`.
///
/// With `M = I + XᵀQ`, the normal part is `N = 2(I - XXᵀ)Q M⁻¹` and the
/// skew part `C = (XᵀQ - I + ½NᵀQ) M⁻¹`, giving `ζ = 2XC + N`. Fails when
/// `M` is (numerically) singular.
pub fn cayley_log(x: &StiefelPoint, q: &StiefelPoint) -> Result<DenseMatrix> {
    let (xm, qm) = (x.matrix(), q.matrix());
    if xm.shape() != qm.shape() {
        return Err(Error::dim(format!(
            "cayley_log between {:?} and {:?}",
            xm.shape(),
            qm.shape()
        )));
    }
    let r = xm.cols();
    let xtq = xm.tr_matmul(qm);
    let m = DenseMatrix::identity(r).add_scaled(&xtq, 1.0);
    let sigma_min = svd_thin(&m).s.last().copied().unwrap_or(0.0);
    if !(sigma_min > LIFT_SIGMA_MIN) {
        return Err(Error::LiftFailure { sigma_min });
    }
    let mt = m.transpose();
    let fail = |_| Error::LiftFailure { sigma_min };
    // Right division by M as a solve with Mᵀ.
    let perp = qm.add_scaled(&xm.matmul(&xtq), -1.0).scale(2.0);
    let n = mt.solve(&perp.transpose()).map_err(fail)?.transpose();
    let rhs = xtq
        .add_scaled(&DenseMatrix::identity(r), -1.0)
        .add_scaled(&n.tr_matmul(qm), 0.5);
    let c = mt.solve(&rhs.transpose()).map_err(fail)?.transpose().skew();
    let out = xm.matmul(&c).scale(2.0).add_scaled(&n, 1.0);
    if !out.is_finite() {
        return Err(Error::LiftFailure { sigma_min });
    }
    Ok(out)
}

/// `Cay(sΩ) X = (I + sΩ)(I - sΩ)⁻¹ X` through `m x m` solves only.
///
/// With `G = LᵀL`, `(I - sLSLᵀ)⁻¹ = I + sL(I - sSG)⁻¹SLᵀ`.
pub fn cayley_retract(x: &StiefelPoint, omega: &FactoredSkew, scale: f64) -> Result<StiefelPoint> {
    let xm = x.matrix();
    if omega.n != xm.rows() {
        return Err(Error::dim(format!(
            "skew generator on R^{} applied to {:?}",
            omega.n,
            xm.shape()
        )));
    }
    let m = omega.s.rows();
    if m == 0 || scale == 0.0 {
        return Ok(x.clone());
    }
    let l = &omega.l;
    let g = l.tr_matmul(l);
    let sys = DenseMatrix::identity(m).add_scaled(&omega.s.matmul(&g), -scale);
    let ltx = l.tr_matmul(xm);
    let inner = sys
        .solve(&omega.s.matmul(&ltx))
        .map_err(|_| Error::RetractFailure)?;
    let y = xm.add_scaled(&l.matmul(&inner), scale);
    let out = y.add_scaled(&l.matmul(&omega.s.matmul(&l.tr_matmul(&y))), scale);
    if !out.is_finite() {
        return Err(Error::RetractFailure);
    }
    // Orthonormality is exact in exact arithmetic; a large defect means the
    // small system was numerically singular.
    if super::stiefel::orthonormality_defect(&out) > 1e3 * STIEFEL_TOL {
        return Err(Error::RetractFailure);
    }
    Ok(StiefelPoint::new_unchecked(out))
}

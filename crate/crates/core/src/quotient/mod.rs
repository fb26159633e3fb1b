//! The polar quotient `(St(d_out, r) × SPD(r) × St(d_in, r)) / O(r)` of
//! rank-`r` updates `ΔW = U B Vᵀ`.

mod align;
mod tangent;

pub use align::{align, align_from, align_with, quotient_distance, AlignOptions, Alignment, DISTANCE_ALIGN_ITERS};
pub use tangent::{
    factor_log, gauge_drift, gauge_equation_lhs, horizontal_project, total_exp, total_inner,
    total_log, total_log_with_fallback, total_norm, vertical, GeodesicMode, TangentTriple,
};

use crate::error::{Error, Result};
use crate::linalg::{qr_compact, svd_thin, DenseMatrix};
use crate::manifolds::{SpdPoint, StiefelPoint};

/// Relative floor applied to the singular values of the `r x r` core in
/// [`from_lowrank`].
pub const RANK_FLOOR: f64 = 1e-8;

/// A representative `(U, B, V)` of a point on the quotient.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarPoint {
    u: StiefelPoint,
    b: SpdPoint,
    v: StiefelPoint,
}

impl PolarPoint {
    pub fn new(u: StiefelPoint, b: SpdPoint, v: StiefelPoint) -> Result<Self> {
        if u.rank() != b.dim() || v.rank() != b.dim() {
            return Err(Error::dim(format!(
                "factor ranks differ: U has {}, B is {}x{}, V has {}",
                u.rank(),
                b.dim(),
                b.dim(),
                v.rank()
            )));
        }
        Ok(Self { u, b, v })
    }

    /// Validates each dense factor.
    pub fn from_factors(u: DenseMatrix, b: DenseMatrix, v: DenseMatrix) -> Result<Self> {
        Self::new(StiefelPoint::new(u)?, SpdPoint::new(b)?, StiefelPoint::new(v)?)
    }

    pub fn u(&self) -> &StiefelPoint {
        &self.u
    }

    pub fn b(&self) -> &SpdPoint {
        &self.b
    }

    pub fn v(&self) -> &StiefelPoint {
        &self.v
    }

    pub fn rank(&self) -> usize {
        self.b.dim()
    }

    pub fn d_out(&self) -> usize {
        self.u.n()
    }

    pub fn d_in(&self) -> usize {
        self.v.n()
    }

    /// `(G, H) = (U B^{1/2}, V B^{1/2})`, a balanced low-rank factorization.
    pub fn to_lowrank(&self) -> (DenseMatrix, DenseMatrix) {
        (
            self.u.matrix().matmul(self.b.sqrt()),
            self.v.matrix().matmul(self.b.sqrt()),
        )
    }

    fn same_shape(&self, other: &Self) -> Result<()> {
        if (self.d_out(), self.d_in(), self.rank()) != (other.d_out(), other.d_in(), other.rank()) {
            return Err(Error::dim(format!(
                "points live on different quotients: ({}, {}, r={}) vs ({}, {}, r={})",
                self.d_out(),
                self.d_in(),
                self.rank(),
                other.d_out(),
                other.d_in(),
                other.rank()
            )));
        }
        Ok(())
    }
}

/// What to do when the core of a low-rank factorization is numerically singular.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RankPolicy {
    /// Raise small singular values to `RANK_FLOOR · σ_max` and report it.
    #[default]
    Clamp,
    /// Fail with a rank-deficiency error instead.
    Strict,
}

/// Polar factorization of `G Hᵀ` without forming it.
pub fn from_lowrank(g: &DenseMatrix, h: &DenseMatrix) -> Result<PolarPoint> {
    from_lowrank_with(g, h, RankPolicy::Clamp).map(|(p, _)| p)
}

/// Like [`from_lowrank`], also returning a warning when singular values were clamped.
pub fn from_lowrank_with(
    g: &DenseMatrix,
    h: &DenseMatrix,
    policy: RankPolicy,
) -> Result<(PolarPoint, Option<String>)> {
    let r = g.cols();
    if h.cols() != r {
        return Err(Error::dim(format!("G has {} columns, H has {}", r, h.cols())));
    }
    if r == 0 {
        return Err(Error::dim("rank must be positive"));
    }
    if g.rows() < r || h.rows() < r {
        return Err(Error::dim(format!(
            "rank {r} exceeds a dimension of ({}, {})",
            g.rows(),
            h.rows()
        )));
    }
    if !g.is_finite() || !h.is_finite() {
        return Err(Error::NonFinite("low-rank factors"));
    }
    let (qg, rg) = qr_compact(g)?;
    let (qh, rh) = qr_compact(h)?;
    let svd = svd_thin(&rg.matmul_tr(&rh));
    let smax = svd.s[0];
    let floor = RANK_FLOOR * smax;
    let effective = svd.s.iter().filter(|&&s| s > floor).count();
    if smax == 0.0 || (policy == RankPolicy::Strict && effective < r) {
        return Err(Error::RankDeficient {
            effective_rank: effective,
            rank: r,
        });
    }
    let warning = (effective < r).then(|| {
        format!(
            "rank clamped: {} of {r} singular values raised to {floor:.3e}",
            r - effective
        )
    });
    let s: Vec<f64> = svd.s.iter().map(|&s| s.max(floor)).collect();
    let u = StiefelPoint::new_unchecked(qg.matmul(&svd.u));
    let v = StiefelPoint::new_unchecked(qh.matmul(&svd.v));
    let b = SpdPoint::from_symmetric(DenseMatrix::from_diag(&s))?;
    Ok((PolarPoint { u, b, v }, warning))
}

/// Best rank-`r` polar point of `G Hᵀ` (leading `r` singular triplets).
/// Falls back to a dense SVD when the factors are wider than they are tall.
pub fn truncate_lowrank(g: &DenseMatrix, h: &DenseMatrix, r: usize) -> Result<PolarPoint> {
    if g.cols() != h.cols() {
        return Err(Error::dim(format!("G has {} columns, H has {}", g.cols(), h.cols())));
    }
    if g.cols() <= g.rows() && g.cols() <= h.rows() {
        let (qg, rg) = qr_compact(g)?;
        let (qh, rh) = qr_compact(h)?;
        let svd = svd_thin(&rg.matmul_tr(&rh));
        polar_from_svd(&qg.matmul(&svd.u), &svd.s, &qh.matmul(&svd.v), r)
    } else {
        truncate_dense(&g.matmul_tr(h), r)
    }
}

/// Best rank-`r` polar point of a dense matrix.
pub fn truncate_dense(m: &DenseMatrix, r: usize) -> Result<PolarPoint> {
    let svd = svd_thin(m);
    polar_from_svd(&svd.u, &svd.s, &svd.v, r)
}

fn polar_from_svd(u: &DenseMatrix, s: &[f64], v: &DenseMatrix, r: usize) -> Result<PolarPoint> {
    if r == 0 || r > s.len() {
        return Err(Error::dim(format!("cannot truncate to rank {r} from {} singular values", s.len())));
    }
    let smax = s[0];
    let effective = s.iter().take(r).filter(|&&x| x > RANK_FLOOR * smax).count();
    if smax == 0.0 || effective < r {
        return Err(Error::RankDeficient {
            effective_rank: effective,
            rank: r,
        });
    }
    PolarPoint::new(
        StiefelPoint::new_unchecked(u.columns(0, r)),
        SpdPoint::from_symmetric(DenseMatrix::from_diag(&s[..r]))?,
        StiefelPoint::new_unchecked(v.columns(0, r)),
    )
}

/// `U B Vᵀ`.
pub fn to_dense(p: &PolarPoint) -> DenseMatrix {
    p.u.matrix().matmul(p.b.matrix()).matmul_tr(p.v.matrix())
}

/// Orthogonal `r x r` gauge.
#[derive(Debug, Clone, PartialEq)]
pub struct GaugeRotation {
    o: DenseMatrix,
}

impl GaugeRotation {
    pub fn new(o: DenseMatrix) -> Result<Self> {
        if !o.is_square() {
            return Err(Error::dim(format!("gauge must be square, got {:?}", o.shape())));
        }
        let defect = (&o.tr_matmul(&o) - &DenseMatrix::identity(o.rows())).norm_fro();
        if !(defect <= 1e-10) {
            return Err(Error::Domain(format!("gauge is not orthogonal (defect {defect:.3e})")));
        }
        Ok(Self { o })
    }

    pub(crate) fn new_unchecked(o: DenseMatrix) -> Self {
        Self { o }
    }

    pub fn identity(r: usize) -> Self {
        Self {
            o: DenseMatrix::identity(r),
        }
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.o
    }

    /// `self · other`.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            o: self.o.matmul(&other.o),
        }
    }
}

/// Right action `(U O, Oᵀ B O, V O)`.
pub fn gauge_apply(p: &PolarPoint, o: &GaugeRotation) -> PolarPoint {
    assert_eq!(o.o.rows(), p.rank(), "gauge size does not match rank");
    PolarPoint {
        u: p.u.rotate(&o.o),
        b: p.b.congruence(&o.o),
        v: p.v.rotate(&o.o),
    }
}

#[cfg(test)]
pub(crate) mod testutil {
    pub use crate::synth::{nearby, perturb, random_gauge, random_point, random_tangent};
}

//! Tangent triples, total-space Exp/Log and the horizontal/vertical split.

use super::PolarPoint;
use crate::error::{Error, Result};
use crate::linalg::{eig_sym, DenseMatrix};
use crate::manifolds::{
    cayley_log, cayley_retract, spd_exp, spd_inner, spd_log, stiefel_exp, stiefel_inner,
    stiefel_log, FactoredSkew, StiefelPoint,
};

/// How geodesic steps on the Stiefel factors are taken. The SPD factor always
/// uses its exact exponential and logarithm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GeodesicMode {
    /// Canonical-metric Exp and shooting Log.
    #[default]
    Exact,
    /// Cayley retraction and its inverse.
    Cayley,
}

/// Tangent vector `(ζ_U, ζ_B, ζ_V)` at a [`PolarPoint`].
#[derive(Debug, Clone, PartialEq)]
pub struct TangentTriple {
    pub u: DenseMatrix,
    pub b: DenseMatrix,
    pub v: DenseMatrix,
    /// Set by [`horizontal_project`].
    pub horizontal: bool,
}

impl TangentTriple {
    pub fn new(u: DenseMatrix, b: DenseMatrix, v: DenseMatrix) -> Self {
        Self {
            u,
            b,
            v,
            horizontal: false,
        }
    }

    pub fn zeros(p: &PolarPoint) -> Self {
        let r = p.rank();
        Self {
            u: DenseMatrix::zeros(p.d_out(), r),
            b: DenseMatrix::zeros(r, r),
            v: DenseMatrix::zeros(p.d_in(), r),
            horizontal: true,
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            u: self.u.scale(s),
            b: self.b.scale(s),
            v: self.v.scale(s),
            horizontal: self.horizontal,
        }
    }

    /// `self + s · other`.
    pub fn add_scaled(&self, other: &Self, s: f64) -> Self {
        Self {
            u: self.u.add_scaled(&other.u, s),
            b: self.b.add_scaled(&other.b, s),
            v: self.v.add_scaled(&other.v, s),
            horizontal: self.horizontal && other.horizontal,
        }
    }

    /// Plain Frobenius norm of the stacked components.
    pub fn norm_fro(&self) -> f64 {
        (self.u.dot(&self.u) + self.b.dot(&self.b) + self.v.dot(&self.v)).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.b.is_finite() && self.v.is_finite()
    }

    fn check(&self, p: &PolarPoint) -> Result<()> {
        let r = p.rank();
        if self.u.shape() != (p.d_out(), r) || self.b.shape() != (r, r) || self.v.shape() != (p.d_in(), r) {
            return Err(Error::dim(format!(
                "tangent shapes {:?}/{:?}/{:?} at a point of shape ({}, {}, r={r})",
                self.u.shape(),
                self.b.shape(),
                self.v.shape(),
                p.d_out(),
                p.d_in()
            )));
        }
        Ok(())
    }
}

/// Product metric: canonical on both Stiefel factors, affine-invariant on B.
pub fn total_inner(p: &PolarPoint, xi: &TangentTriple, eta: &TangentTriple) -> f64 {
    xi.check(p).and(eta.check(p)).expect("tangent shapes match the base point");
    stiefel_inner(p.u(), &xi.u, &eta.u).expect("checked")
        + spd_inner(p.b(), &xi.b, &eta.b).expect("checked")
        + stiefel_inner(p.v(), &xi.v, &eta.v).expect("checked")
}

pub fn total_norm(p: &PolarPoint, xi: &TangentTriple) -> f64 {
    total_inner(p, xi, xi).max(0.0).sqrt()
}

/// Log on one Stiefel factor. In Cayley mode this inverts the Cayley
/// retraction and falls back to the exact logarithm when that is singular;
/// the flag reports the fallback.
pub fn factor_log(u: &StiefelPoint, u1: &StiefelPoint, mode: GeodesicMode) -> Result<(DenseMatrix, bool)> {
    match mode {
        GeodesicMode::Exact => Ok((stiefel_log(u, u1)?, false)),
        GeodesicMode::Cayley => match cayley_log(u, u1) {
            Ok(vel) => Ok((vel, false)),
            Err(Error::LiftFailure { .. }) => Ok((stiefel_log(u, u1)?, true)),
            Err(e) => Err(e),
        },
    }
}

/// Raw total-space log. Cayley mode inverts the Cayley retraction on
/// both Stiefel factors and propagates its failures.
pub fn total_log(p: &PolarPoint, q: &PolarPoint, mode: GeodesicMode) -> Result<TangentTriple> {
    p.same_shape(q)?;
    let (u, v) = match mode {
        GeodesicMode::Exact => (stiefel_log(p.u(), q.u())?, stiefel_log(p.v(), q.v())?),
        GeodesicMode::Cayley => (cayley_log(p.u(), q.u())?, cayley_log(p.v(), q.v())?),
    };
    Ok(TangentTriple::new(u, spd_log(p.b(), q.b())?, v))
}

/// [`total_log`] with the per-factor fallback of [`factor_log`]; the flag is
/// set when any factor fell back to the exact logarithm.
pub fn total_log_with_fallback(
    p: &PolarPoint,
    q: &PolarPoint,
    mode: GeodesicMode,
) -> Result<(TangentTriple, bool)> {
    p.same_shape(q)?;
    let (u, fu) = factor_log(p.u(), q.u(), mode)?;
    let (v, fv) = factor_log(p.v(), q.v(), mode)?;
    Ok((TangentTriple::new(u, spd_log(p.b(), q.b())?, v), fu || fv))
}

fn stiefel_step(u: &StiefelPoint, zeta: &DenseMatrix, step: f64, mode: GeodesicMode) -> Result<StiefelPoint> {
    match mode {
        GeodesicMode::Exact => Ok(stiefel_exp(u, &zeta.scale(step))),
        GeodesicMode::Cayley => cayley_retract(u, &FactoredSkew::from_tangent(u, zeta)?, step),
    }
}

/// Moves along `step · ξ`.
pub fn total_exp(p: &PolarPoint, xi: &TangentTriple, step: f64, mode: GeodesicMode) -> Result<PolarPoint> {
    xi.check(p)?;
    if step == 0.0 {
        return Ok(p.clone());
    }
    PolarPoint::new(
        stiefel_step(p.u(), &xi.u, step, mode)?,
        spd_exp(p.b(), &xi.b.scale(step))?,
        stiefel_step(p.v(), &xi.v, step, mode)?,
    )
}

/// `B⁻¹ Ω B + B Ω B⁻¹ - Ω`.
pub fn gauge_equation_lhs(p: &PolarPoint, omega: &DenseMatrix) -> DenseMatrix {
    let b = p.b().matrix();
    let binv = p.b().inverse();
    binv.matmul(omega)
        .matmul(b)
        .add_scaled(&b.matmul(omega).matmul(&binv), 1.0)
        .add_scaled(omega, -1.0)
}

/// Skew `Ω` whose vertical vector `(UΩ, BΩ - ΩB, VΩ)` is the orthogonal
/// projection of `ξ` onto the gauge orbit direction.
///
/// Solved in the eigenbasis of `B`, where the equation is entrywise with
/// coefficients `λ_i/λ_j + λ_j/λ_i - 1 ≥ 1`.
pub fn gauge_drift(p: &PolarPoint, xi: &TangentTriple) -> DenseMatrix {
    xi.check(p).expect("tangent shapes match the base point");
    let binv = p.b().inverse();
    let stiefel_part = p.v().matrix().tr_matmul(&xi.v).add_scaled(&p.u().matrix().tr_matmul(&xi.u), 1.0);
    let spd_part = binv.matmul(&xi.b).add_scaled(&xi.b.matmul(&binv), -1.0);
    let rhs = stiefel_part.scale(0.5).add_scaled(&spd_part, -1.0).skew();

    let eig = eig_sym(p.b().matrix()).expect("SPD factor is symmetric");
    let q = &eig.vectors;
    let lam = &eig.values;
    let mut w = q.tr_matmul(&rhs).matmul(q);
    let r = lam.len();
    for i in 0..r {
        for j in 0..r {
            let c = lam[i] / lam[j] + lam[j] / lam[i] - 1.0;
            debug_assert!(c >= 1.0 - 1e-12, "gauge coefficient {c} < 1");
            w[(i, j)] /= c;
        }
    }
    q.matmul(&w).matmul_tr(q).skew()
}

/// `(UΩ, BΩ - ΩB, VΩ)`.
pub fn vertical(p: &PolarPoint, omega: &DenseMatrix) -> TangentTriple {
    let b = p.b().matrix();
    TangentTriple::new(
        p.u().matrix().matmul(omega),
        b.matmul(omega).add_scaled(&omega.matmul(b), -1.0),
        p.v().matrix().matmul(omega),
    )
}

/// `ξ - vertical(gauge_drift(ξ))`.
pub fn horizontal_project(p: &PolarPoint, xi: &TangentTriple) -> TangentTriple {
    let omega = gauge_drift(p, xi);
    let mut out = xi.add_scaled(&vertical(p, &omega), -1.0);
    out.horizontal = true;
    out
}

#[cfg(test)]
mod tests {
    use super::super::testutil::*;
    use super::super::PolarPoint;
    use super::*;
    use crate::linalg::random::{rand_skew, Rng};

    #[test]
    fn log_of_self_is_zero() {
        let mut rng = Rng::seeded(1);
        let p = random_point(9, 7, 3, &mut rng);
        for mode in [GeodesicMode::Exact, GeodesicMode::Cayley] {
            assert!(total_log(&p, &p, mode).unwrap().norm_fro() < 1e-14);
        }
    }

    #[test]
    fn log_with_only_b_changed() {
        let mut rng = Rng::seeded(2);
        let p = random_point(9, 7, 3, &mut rng);
        let c = crate::manifolds::SpdPoint::new(crate::linalg::random::rand_spd(3, 0.5, &mut rng)).unwrap();
        let q = PolarPoint::new(p.u().clone(), c.clone(), p.v().clone()).unwrap();
        let t = total_log(&p, &q, GeodesicMode::Exact).unwrap();
        assert!(t.u.max_abs() < 1e-14 && t.v.max_abs() < 1e-14);
        assert!((&t.b - &spd_log(p.b(), &c).unwrap()).max_abs() < 1e-14);
    }

    #[test]
    fn exact_roundtrip() {
        let mut rng = Rng::seeded(3);
        for _ in 0..5 {
            let p = random_point(12, 10, 4, &mut rng);
            let q = perturb(&p, 0.4, &mut rng);
            let t = total_log(&p, &q, GeodesicMode::Exact).unwrap();
            let back = total_exp(&p, &t, 1.0, GeodesicMode::Exact).unwrap();
            assert!((back.u().matrix() - q.u().matrix()).max_abs() < 1e-7);
            assert!((back.b().matrix() - q.b().matrix()).max_abs() < 1e-7);
            assert!((back.v().matrix() - q.v().matrix()).max_abs() < 1e-7);
        }
    }

    #[test]
    fn cayley_roundtrip() {
        let mut rng = Rng::seeded(4);
        let p = random_point(12, 10, 4, &mut rng);
        let q = perturb(&p, 0.3, &mut rng);
        let xi = total_log(&p, &q, GeodesicMode::Cayley).unwrap();
        let back = total_exp(&p, &xi, 1.0, GeodesicMode::Cayley).unwrap();
        assert!((back.u().matrix() - q.u().matrix()).max_abs() < 1e-12);
        assert!((back.v().matrix() - q.v().matrix()).max_abs() < 1e-12);
        assert!((back.b().matrix() - q.b().matrix()).max_abs() < 1e-10);
    }

    #[test]
    fn exp_trivial_cases() {
        let mut rng = Rng::seeded(5);
        let p = random_point(8, 6, 2, &mut rng);
        let z = TangentTriple::zeros(&p);
        let xi = random_tangent(&p, &mut rng);
        for mode in [GeodesicMode::Exact, GeodesicMode::Cayley] {
            let a = total_exp(&p, &z, 1.0, mode).unwrap();
            assert!((a.u().matrix() - p.u().matrix()).max_abs() < 1e-14);
            assert_eq!(total_exp(&p, &xi, 0.0, mode).unwrap(), p);
        }
    }

    #[test]
    fn exact_and_cayley_steps_agree_to_second_order() {
        let mut rng = Rng::seeded(6);
        let p = random_point(10, 8, 3, &mut rng);
        let xi = random_tangent(&p, &mut rng);
        let diff = |s: f64| {
            let a = total_exp(&p, &xi, s, GeodesicMode::Exact).unwrap();
            let b = total_exp(&p, &xi, s, GeodesicMode::Cayley).unwrap();
            (a.u().matrix() - b.u().matrix()).norm_fro() + (a.v().matrix() - b.v().matrix()).norm_fro()
        };
        let (d1, d2) = (diff(0.04), diff(0.02));
        let order = (d1 / d2).log2();
        assert!(order >= 2.0 - 0.05, "order {order}");
    }

    #[test]
    fn gauge_drift_identity_base() {
        let mut rng = Rng::seeded(7);
        let mut p = random_point(8, 6, 3, &mut rng);
        p = PolarPoint::new(p.u().clone(), crate::manifolds::SpdPoint::new(DenseMatrix::identity(3)).unwrap(), p.v().clone()).unwrap();
        let xi = random_tangent(&p, &mut rng);
        let rhs = p.v().matrix().tr_matmul(&xi.v).add_scaled(&p.u().matrix().tr_matmul(&xi.u), 1.0).scale(0.5).skew();
        assert!((&gauge_drift(&p, &xi) - &rhs).max_abs() < 1e-13);
    }

    #[test]
    fn gauge_drift_recovers_vertical_generator() {
        let mut rng = Rng::seeded(8);
        for _ in 0..10 {
            let p = random_point(9, 7, 4, &mut rng);
            let om = rand_skew(4, 1.0, &mut rng);
            let got = gauge_drift(&p, &vertical(&p, &om));
            assert!((&got - &om).max_abs() < 1e-9);
        }
    }

    #[test]
    fn gauge_drift_solves_its_equation() {
        let mut rng = Rng::seeded(9);
        let p = random_point(9, 7, 5, &mut rng);
        let xi = random_tangent(&p, &mut rng);
        let om = gauge_drift(&p, &xi);
        assert!((&om + &om.transpose()).max_abs() < 1e-12);
        let binv = p.b().inverse();
        let rhs = p.v().matrix().tr_matmul(&xi.v).add_scaled(&p.u().matrix().tr_matmul(&xi.u), 1.0).scale(0.5)
            .add_scaled(&binv.matmul(&xi.b).add_scaled(&xi.b.matmul(&binv), -1.0), -1.0)
            .skew();
        let res = (&gauge_equation_lhs(&p, &om) - &rhs).norm_fro();
        assert!(res < 1e-10 * rhs.norm_fro(), "residual {res}");
    }

    #[test]
    fn horizontal_projection_properties() {
        let mut rng = Rng::seeded(10);
        let p = random_point(10, 8, 4, &mut rng);
        let xi = random_tangent(&p, &mut rng);
        let h = horizontal_project(&p, &xi);
        assert!(h.horizontal);
        assert!(gauge_drift(&p, &h).norm_fro() < 1e-9 * (1.0 + xi.norm_fro()));
        let hh = horizontal_project(&p, &h);
        assert!(hh.add_scaled(&h, -1.0).norm_fro() < 1e-9);
        for _ in 0..20 {
            let v = vertical(&p, &rand_skew(4, 1.0, &mut rng));
            assert!(total_inner(&p, &h, &v).abs() < 1e-9);
        }
        let vert = vertical(&p, &rand_skew(4, 1.0, &mut rng));
        assert!(horizontal_project(&p, &vert).norm_fro() < 1e-9);
        let recon = h.add_scaled(&vertical(&p, &gauge_drift(&p, &xi)), 1.0);
        assert!(recon.add_scaled(&xi, -1.0).norm_fro() < 1e-9);
    }
}

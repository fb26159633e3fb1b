//! Quotient-compatible lift of rank-`r` points to rank `R`, completing each
//! adapter with the dominant directions of its peers' projected residual.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::random::{gaussian, Rng};
use crate::linalg::{qr_compact, svd_thin, DenseMatrix};
use crate::manifolds::{SpdPoint, StiefelPoint};
use crate::quotient::PolarPoint;

/// Singular values of the residual core below `CUTOFF` times the larger of
/// `σ_max` and the peer core norm count as zero.
pub const CUTOFF: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct LiftConfig {
    pub target_rank: usize,
    /// `T x T` peer coefficients `a_ts`, zero diagonal. `None` means one for every peer.
    pub coeffs: Option<Vec<Vec<f64>>>,
    /// Seed for padding columns when the residual has too few directions.
    pub seed: u64,
    pub allow_padding: bool,
}

impl LiftConfig {
    pub fn new(target_rank: usize) -> Self {
        Self {
            target_rank,
            coeffs: None,
            seed: 0,
            allow_padding: true,
        }
    }

    fn coeff(&self, t: usize, s: usize) -> f64 {
        match &self.coeffs {
            Some(a) => a[t][s],
            None if t == s => 0.0,
            None => 1.0,
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if let Some(a) = &self.coeffs {
            if a.len() != n || a.iter().any(|row| row.len() != n) {
                return Err(Error::Config(format!("peer coefficients must be {n}x{n}")));
            }
            for (t, row) in a.iter().enumerate() {
                if row.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || row[t] != 0.0 {
                    return Err(Error::Config(
                        "peer coefficients must be nonnegative with a zero diagonal".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Geometric mean of the smallest eigenvalues of the `B` factors.
pub fn spd_filler(points: &[PolarPoint]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::EmptyInput("no points for the SPD filler"));
    }
    let logs: f64 = points.iter().map(|p| p.b().lambda_min().ln()).sum();
    Ok((logs / points.len() as f64).exp())
}

/// `R_t = E_U K E_Vᵀ` in factored form.
#[derive(Debug, Clone)]
pub struct ResidualCore {
    pub eu: DenseMatrix,
    pub k: DenseMatrix,
    pub ev: DenseMatrix,
    /// Frobenius norm of the weighted peer cores before projection.
    pub scale: f64,
}

impl ResidualCore {
    pub fn to_dense(&self) -> DenseMatrix {
        self.eu.matmul(&self.k).matmul_tr(&self.ev)
    }
}

/// Orthonormal span `E` and coefficients `G` with `A = E G`.
fn thin_span(a: &DenseMatrix) -> Result<(DenseMatrix, DenseMatrix)> {
    if a.rows() >= a.cols() {
        qr_compact(a)
    } else {
        Ok((DenseMatrix::identity(a.rows()), a.clone()))
    }
}

/// Peer residual of task `t` projected off its own row and column spaces.
pub fn residual_core(t: usize, points: &[PolarPoint], coeffs: &LiftConfig) -> Result<ResidualCore> {
    if t >= points.len() {
        return Err(Error::dim(format!("task index {t} out of {} points", points.len())));
    }
    let ut = points[t].u().matrix();
    let vt = points[t].v().matrix();
    let mut a_parts = Vec::new();
    let mut c_parts = Vec::new();
    let mut m_parts = Vec::new();
    for (s, p) in points.iter().enumerate() {
        let a = if s == t { 0.0 } else { coeffs.coeff(t, s) };
        if a == 0.0 {
            continue;
        }
        let us = p.u().matrix();
        let vs = p.v().matrix();
        a_parts.push(us.add_scaled(&ut.matmul(&ut.tr_matmul(us)), -1.0));
        c_parts.push(vs.add_scaled(&vt.matmul(&vt.tr_matmul(vs)), -1.0));
        m_parts.push(p.b().matrix().scale(a));
    }
    if a_parts.is_empty() {
        return Err(Error::LiftDegenerate(format!("task {t} has no peers")));
    }
    let a = DenseMatrix::hstack(&a_parts.iter().collect::<Vec<_>>());
    let c = DenseMatrix::hstack(&c_parts.iter().collect::<Vec<_>>());
    let m = DenseMatrix::block_diag(&m_parts.iter().collect::<Vec<_>>());
    let (eu, g) = thin_span(&a)?;
    let (ev, h) = thin_span(&c)?;
    let k = g.matmul(&m).matmul_tr(&h);
    let scale = m.norm_fro();
    Ok(ResidualCore { eu, k, ev, scale })
}

/// Columns of `x` projected off `basis` and orthonormalized.
fn orthonormalize_against(x: &DenseMatrix, basis: &DenseMatrix) -> Result<DenseMatrix> {
    let y = x.add_scaled(&basis.matmul(&basis.tr_matmul(x)), -1.0);
    // Twice is enough for columns already nearly orthogonal to `basis`.
    let y = y.add_scaled(&basis.matmul(&basis.tr_matmul(&y)), -1.0);
    Ok(qr_compact(&y)?.0)
}

/// Up to `want` completion directions for one side, padded with seeded
/// random columns when the residual has fewer.
fn completion(
    base: &DenseMatrix,
    directions: DenseMatrix,
    want: usize,
    rng: &mut Rng,
    allow_padding: bool,
) -> Result<(DenseMatrix, usize)> {
    let have = directions.cols();
    let cleaned = if have > 0 {
        orthonormalize_against(&directions, base)?
    } else {
        directions
    };
    if have >= want {
        return Ok((cleaned, 0));
    }
    if !allow_padding {
        return Err(Error::LiftDegenerate(format!(
            "residual has {have} directions, {want} needed and padding is disabled"
        )));
    }
    let span = DenseMatrix::hstack(&[base, &cleaned]);
    let pad = orthonormalize_against(&gaussian(base.rows(), want - have, rng), &span)?;
    Ok((DenseMatrix::hstack(&[&cleaned, &pad]), want - have))
}

fn lift_one(
    t: usize,
    points: &[PolarPoint],
    config: &LiftConfig,
    c: f64,
) -> Result<(PolarPoint, Option<String>)> {
    let p = &points[t];
    let extra = config.target_rank - p.rank();
    let (ul, vl, count) = match residual_core(t, points, config) {
        Ok(core) => {
            let svd = svd_thin(&core.k);
            // Relative to the peer cores, so roundoff from cancelled residuals is dropped.
            let smax = svd.s.first().copied().unwrap_or(0.0);
            let floor = CUTOFF * smax.max(core.scale);
            let count = svd.s.iter().filter(|&&s| s > floor).count().min(extra);
            (
                core.eu.matmul(&svd.u.columns(0, count)),
                core.ev.matmul(&svd.v.columns(0, count)),
                count,
            )
        }
        Err(Error::LiftDegenerate(_)) if config.allow_padding => (
            DenseMatrix::zeros(p.d_out(), 0),
            DenseMatrix::zeros(p.d_in(), 0),
            0,
        ),
        Err(e) => return Err(e),
    };
    let mut rng = Rng::seeded(config.seed ^ (t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let (uperp, padded) = completion(p.u().matrix(), ul, extra, &mut rng, config.allow_padding)?;
    let (vperp, _) = completion(p.v().matrix(), vl, extra, &mut rng, config.allow_padding)?;
    let u = DenseMatrix::hstack(&[p.u().matrix(), &uperp]);
    let v = DenseMatrix::hstack(&[p.v().matrix(), &vperp]);
    let b = DenseMatrix::block_diag(&[p.b().matrix(), &DenseMatrix::identity(extra).scale(c)]);
    let lifted = PolarPoint::new(
        StiefelPoint::new(u)?,
        SpdPoint::new(b)?,
        StiefelPoint::new(v)?,
    )?;
    let warning = (padded > 0).then(|| {
        format!("task {t}: residual has {count} directions, padded {padded} random columns")
    });
    Ok((lifted, warning))
}

/// Lifts every point to `config.target_rank`: `Û = [U_t, U_t⊥]`,
/// `B̂ = blkdiag(B_t, c I)`, `V̂ = [V_t, V_t⊥]`.
pub fn lift_adapters(points: &[PolarPoint], config: &LiftConfig) -> Result<(Vec<PolarPoint>, Vec<String>)> {
    let first = points.first().ok_or(Error::EmptyInput("no points to lift"))?;
    let (d_out, d_in, r) = (first.d_out(), first.d_in(), first.rank());
    if points.iter().any(|p| (p.d_out(), p.d_in(), p.rank()) != (d_out, d_in, r)) {
        return Err(Error::dim("points to lift disagree in shape"));
    }
    let big = config.target_rank;
    if big <= r || big > d_out.min(d_in) {
        return Err(Error::Config(format!(
            "target rank {big} must satisfy {r} < R <= {}",
            d_out.min(d_in)
        )));
    }
    config.validate(points.len())?;
    let c = spd_filler(points)?;
    let results: Vec<(PolarPoint, Option<String>)> = (0..points.len())
        .into_par_iter()
        .map(|t| lift_one(t, points, config, c))
        .collect::<Result<_>>()?;
    let mut warnings = Vec::new();
    let mut lifted = Vec::with_capacity(results.len());
    for (p, w) in results {
        lifted.push(p);
        warnings.extend(w);
    }
    Ok((lifted, warnings))
}

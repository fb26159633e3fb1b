//! Reference merge rules: weighted Euclidean averaging and diagonal Fisher merging.

use crate::error::{Error, Result};
use crate::linalg::{svd_thin, DenseMatrix};
use crate::manifolds::{SpdPoint, StiefelPoint};
use crate::quotient::PolarPoint;

fn check_weight_len(weights: &[f64], n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::EmptyInput("no inputs to average"));
    }
    if weights.len() != n {
        return Err(Error::InvalidWeights(format!("{} weights for {n} inputs", weights.len())));
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::InvalidWeights("weights must be finite".into()));
    }
    Ok(())
}

/// `λ Σ w_i Δ_i`.
pub fn euclid_average(deltas: &[DenseMatrix], weights: &[f64], lambda: f64) -> Result<DenseMatrix> {
    check_weight_len(weights, deltas.len())?;
    let shape = deltas[0].shape();
    let mut out = DenseMatrix::zeros(shape.0, shape.1);
    for (d, &w) in deltas.iter().zip(weights) {
        if d.shape() != shape {
            return Err(Error::dim(format!("delta shapes {shape:?} and {:?}", d.shape())));
        }
        out = out.add_scaled(d, lambda * w);
    }
    Ok(out)
}

/// [`euclid_average`] of polar points as the exact factored sum `G Hᵀ`
/// with `G = [λ w_i U_i B_i]`, `H = [V_i]`.
pub fn euclid_average_factored(
    points: &[PolarPoint],
    weights: &[f64],
    lambda: f64,
) -> Result<(DenseMatrix, DenseMatrix)> {
    check_weight_len(weights, points.len())?;
    let shape = (points[0].d_out(), points[0].d_in());
    if points.iter().any(|p| (p.d_out(), p.d_in()) != shape) {
        return Err(Error::dim("points disagree in shape"));
    }
    let gs: Vec<DenseMatrix> = points
        .iter()
        .zip(weights)
        .map(|(p, &w)| p.u().matrix().matmul(p.b().matrix()).scale(lambda * w))
        .collect();
    let g = DenseMatrix::hstack(&gs.iter().collect::<Vec<_>>());
    let h = DenseMatrix::hstack(&points.iter().map(|p| p.v().matrix()).collect::<Vec<_>>());
    Ok((g, h))
}

/// Closest matrix with orthonormal columns (`P Qᵀ` from the thin SVD).
fn nearest_orthonormal(m: &DenseMatrix) -> Result<DenseMatrix> {
    let svd = svd_thin(m);
    let smax = svd.s.first().copied().unwrap_or(0.0);
    let effective = svd.s.iter().filter(|&&s| s > 1e-12 * smax).count();
    if smax == 0.0 || effective < m.cols() {
        return Err(Error::RankDeficient {
            effective_rank: effective,
            rank: m.cols(),
        });
    }
    Ok(svd.u.matmul_tr(&svd.v))
}

/// Averages `U`, `B` and `V` separately in whatever gauge the inputs carry,
/// then projects the factors back onto their manifolds. Depends on the gauge;
/// kept to exhibit that failure mode.
pub fn naive_factor_average(points: &[PolarPoint], weights: &[f64]) -> Result<PolarPoint> {
    check_weight_len(weights, points.len())?;
    let p0 = &points[0];
    let (mut u, mut b, mut v) = (
        DenseMatrix::zeros(p0.d_out(), p0.rank()),
        DenseMatrix::zeros(p0.rank(), p0.rank()),
        DenseMatrix::zeros(p0.d_in(), p0.rank()),
    );
    for (p, &w) in points.iter().zip(weights) {
        if (p.d_out(), p.d_in(), p.rank()) != (p0.d_out(), p0.d_in(), p0.rank()) {
            return Err(Error::dim("points disagree in shape"));
        }
        u = u.add_scaled(p.u().matrix(), w);
        b = b.add_scaled(p.b().matrix(), w);
        v = v.add_scaled(p.v().matrix(), w);
    }
    PolarPoint::new(
        StiefelPoint::new(nearest_orthonormal(&u)?)?,
        SpdPoint::new(b.sym())?,
        StiefelPoint::new(nearest_orthonormal(&v)?)?,
    )
}

/// Parameter vectors with their diagonal Fisher information.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherBundle {
    thetas: Vec<Vec<f64>>,
    fishers: Vec<Vec<f64>>,
}

impl FisherBundle {
    pub fn new(thetas: Vec<Vec<f64>>, fishers: Vec<Vec<f64>>) -> Result<Self> {
        if thetas.is_empty() {
            return Err(Error::EmptyInput("Fisher bundle has no models"));
        }
        if fishers.len() != thetas.len() {
            return Err(Error::dim(format!(
                "{} parameter vectors but {} Fisher vectors",
                thetas.len(),
                fishers.len()
            )));
        }
        let n = thetas[0].len();
        if thetas.iter().chain(&fishers).any(|v| v.len() != n) {
            return Err(Error::dim("Fisher bundle vectors differ in length"));
        }
        if thetas.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("Fisher bundle parameters"));
        }
        if fishers.iter().flatten().any(|f| !(f.is_finite() && *f >= 0.0)) {
            return Err(Error::Domain("Fisher entries must be finite and nonnegative".into()));
        }
        Ok(Self { thetas, fishers })
    }

    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.thetas[0].len()
    }

    pub fn thetas(&self) -> &[Vec<f64>] {
        &self.thetas
    }

    pub fn fishers(&self) -> &[Vec<f64>] {
        &self.fishers
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FisherMerge {
    pub theta: Vec<f64>,
    /// Coordinates where every Fisher entry was zero; those use the plain mean.
    pub fallback_coords: Vec<usize>,
}

/// `θ* = (Σ F_i θ_i) ⊘ (Σ F_i)` per coordinate. Optional scalar weights
/// multiply each `F_i`.
pub fn fisher_merge(bundle: &FisherBundle, weights: Option<&[f64]>) -> Result<FisherMerge> {
    let t = bundle.len();
    let w: Vec<f64> = match weights {
        Some(w) => {
            check_weight_len(w, t)?;
            if w.iter().any(|x| *x < 0.0) {
                return Err(Error::InvalidWeights("weights must be nonnegative".into()));
            }
            w.to_vec()
        }
        None => vec![1.0; t],
    };
    let mut theta = Vec::with_capacity(bundle.dim());
    let mut fallback_coords = Vec::new();
    for j in 0..bundle.dim() {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..t {
            let f = w[i] * bundle.fishers[i][j];
            num += f * bundle.thetas[i][j];
            den += f;
        }
        if den > 0.0 {
            theta.push(num / den);
        } else {
            fallback_coords.push(j);
            theta.push(bundle.thetas.iter().map(|th| th[j]).sum::<f64>() / t as f64);
        }
    }
    Ok(FisherMerge {
        theta,
        fallback_coords,
    })
}

/// `Σ_i (θ - θ_i)ᵀ F_i (θ - θ_i)`.
pub fn quad_surrogate_value(theta: &[f64], bundle: &FisherBundle) -> Result<f64> {
    if theta.len() != bundle.dim() {
        return Err(Error::dim(format!(
            "parameter length {} vs bundle dimension {}",
            theta.len(),
            bundle.dim()
        )));
    }
    let mut total = 0.0;
    for (th, f) in bundle.thetas.iter().zip(&bundle.fishers) {
        for j in 0..theta.len() {
            let d = theta[j] - th[j];
            total += f[j] * d * d;
        }
    }
    Ok(total)
}

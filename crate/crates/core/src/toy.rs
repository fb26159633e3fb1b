//! Two-parameter network `x ↦ θ₁θ₂x` on `(ℝ*)²` with the rescaling symmetry
//! `(θ₁, θ₂) ↦ (aθ₁, θ₂/a)`. Everything here has a closed form.

use std::fmt::Write as _;

use serde::Serialize;

use crate::baselines::{fisher_merge, FisherBundle};
use crate::error::{Error, Result};
use crate::frechet::check_weights;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ToyPoint {
    theta1: f64,
    theta2: f64,
}

impl ToyPoint {
    pub fn new(theta1: f64, theta2: f64) -> Result<Self> {
        if !(theta1.is_finite() && theta2.is_finite()) {
            return Err(Error::NonFinite("toy parameters"));
        }
        if theta1 == 0.0 || theta2 == 0.0 {
            return Err(Error::Domain(format!("toy point ({theta1}, {theta2}) has a zero coordinate")));
        }
        Ok(Self { theta1, theta2 })
    }

    pub fn theta1(&self) -> f64 {
        self.theta1
    }

    pub fn theta2(&self) -> f64 {
        self.theta2
    }

    /// `(aθ₁, θ₂/a)`.
    pub fn act(&self, a: f64) -> Result<Self> {
        Self::new(a * self.theta1, self.theta2 / a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyFisherInputs {
    pub sxx: f64,
    pub sigma2: f64,
}

impl ToyFisherInputs {
    pub fn new(sxx: f64, sigma2: f64) -> Result<Self> {
        if !(sxx.is_finite() && sxx >= 0.0) {
            return Err(Error::Domain(format!("S_xx = {sxx} must be finite and nonnegative")));
        }
        if !(sigma2.is_finite() && sigma2 > 0.0) {
            return Err(Error::Domain(format!("noise variance {sigma2} must be positive")));
        }
        Ok(Self { sxx, sigma2 })
    }
}

/// `θ₂²η₁ζ₁ + θ₁²η₂ζ₂`.
pub fn toy_inner(theta: &ToyPoint, eta: [f64; 2], zeta: [f64; 2]) -> f64 {
    theta.theta2 * theta.theta2 * eta[0] * zeta[0] + theta.theta1 * theta.theta1 * eta[1] * zeta[1]
}

/// `η₁/θ₁ − η₂/θ₂`; zero iff `η` is horizontal.
pub fn toy_is_horizontal(theta: &ToyPoint, eta: [f64; 2]) -> f64 {
    eta[0] / theta.theta1 - eta[1] / theta.theta2
}

/// Tangent to the orbit through `θ`.
pub fn toy_vertical(theta: &ToyPoint) -> [f64; 2] {
    [theta.theta1, -theta.theta2]
}

pub fn toy_predictor(theta: &ToyPoint) -> f64 {
    theta.theta1 * theta.theta2
}

/// `θ_k(t) = θ_k(0) sqrt(1 + 2 η_k(0) t / θ_k(0))`. This is the geodesic for
/// horizontal `η₀`; for other velocities it is only the formula.
pub fn toy_geodesic(theta0: &ToyPoint, eta0: [f64; 2], t: f64) -> Result<ToyPoint> {
    let arg1 = 1.0 + 2.0 * eta0[0] / theta0.theta1 * t;
    let arg2 = 1.0 + 2.0 * eta0[1] / theta0.theta2 * t;
    for arg in [arg1, arg2] {
        if !(arg > 0.0) {
            return Err(Error::GeodesicDomain { value: arg });
        }
    }
    ToyPoint::new(theta0.theta1 * arg1.sqrt(), theta0.theta2 * arg2.sqrt())
}

/// Orbit motion `(θ₁eˢ, θ₂e⁻ˢ)`.
pub fn toy_orbit(theta: &ToyPoint, s: f64) -> ToyPoint {
    ToyPoint {
        theta1: theta.theta1 * s.exp(),
        theta2: theta.theta2 * (-s).exp(),
    }
}

/// `|θ₁θ₂ − κ₁κ₂|`, also across sign components.
pub fn toy_quotient_distance(theta: &ToyPoint, kappa: &ToyPoint) -> f64 {
    (toy_predictor(theta) - toy_predictor(kappa)).abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ToyMean {
    pub predictor: f64,
    pub representative: ToyPoint,
}

/// Weighted average of predictors, with representative
/// `(√|w*|, sign(w*)√|w*|)`.
pub fn toy_frechet(points: &[ToyPoint], weights: &[f64]) -> Result<ToyMean> {
    if points.is_empty() {
        return Err(Error::EmptyInput("no toy points"));
    }
    check_weights(weights, points.len())?;
    let w: f64 = points.iter().zip(weights).map(|(p, w)| w * toy_predictor(p)).sum();
    if w == 0.0 {
        return Err(Error::NoRepresentative);
    }
    let root = w.abs().sqrt();
    Ok(ToyMean {
        predictor: w,
        representative: ToyPoint::new(root, w.signum() * root)?,
    })
}

/// `(S_xx/σ²) [[θ₂², θ₁θ₂], [θ₁θ₂, θ₁²]]`.
pub fn toy_fim(theta: &ToyPoint, inputs: &ToyFisherInputs) -> [[f64; 2]; 2] {
    let c = inputs.sxx / inputs.sigma2;
    let (a, b) = (theta.theta1, theta.theta2);
    [[c * b * b, c * a * b], [c * a * b, c * a * a]]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ToyPathology {
    pub fisher_merge: [f64; 2],
    pub quotient_predictor: f64,
    pub quotient_representative: ToyPoint,
}

/// Fisher-merges `θ` with `−θ` using the diagonal toy Fisher of each, and
/// averages the predictors of the same pair.
pub fn toy_fisher_pathology(theta: &ToyPoint, inputs: &ToyFisherInputs) -> Result<ToyPathology> {
    let flipped = ToyPoint::new(-theta.theta1, -theta.theta2)?;
    let pathology = fisher_pair(theta, &flipped, inputs)?;
    let mean = toy_frechet(&[*theta, flipped], &[0.5, 0.5])?;
    Ok(ToyPathology {
        fisher_merge: pathology,
        quotient_predictor: mean.predictor,
        quotient_representative: mean.representative,
    })
}

/// Diagonal Fisher merge of two toy points.
pub fn fisher_pair(a: &ToyPoint, b: &ToyPoint, inputs: &ToyFisherInputs) -> Result<[f64; 2]> {
    let diag = |p: &ToyPoint| {
        let f = toy_fim(p, inputs);
        vec![f[0][0], f[1][1]]
    };
    let bundle = FisherBundle::new(
        vec![vec![a.theta1, a.theta2], vec![b.theta1, b.theta2]],
        vec![diag(a), diag(b)],
    )?;
    let m = fisher_merge(&bundle, None)?;
    Ok([m.theta[0], m.theta[1]])
}

#[derive(Debug, Clone, PartialEq)]
pub enum CurveSpec {
    /// `(θ₁eᵗ, θ₂e⁻ᵗ)` for `t ∈ [-1, 1]`.
    Orbit { theta: ToyPoint },
    /// Closed-form geodesic for `t ∈ [0, t_max]`.
    Geodesic { from: ToyPoint, vel: [f64; 2], t_max: f64 },
    /// Inputs at `t = 0..T`, naive parameter average at `t = T`, predictor
    /// mean representative at `t = T + 1`.
    MergeComparison { points: Vec<ToyPoint>, weights: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRow {
    pub t: f64,
    pub theta1: f64,
    pub theta2: f64,
    pub predictor: f64,
}

impl CurveRow {
    fn at(t: f64, p: &ToyPoint) -> Self {
        Self {
            t,
            theta1: p.theta1,
            theta2: p.theta2,
            predictor: toy_predictor(p),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Curve {
    pub rows: Vec<CurveRow>,
    /// Samples that fell outside the geodesic domain, with their message.
    pub skipped: Vec<(f64, String)>,
}

impl Curve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,theta1,theta2,predictor\n");
        for r in &self.rows {
            let _ = writeln!(out, "{:.16e},{:.16e},{:.16e},{:.16e}", r.t, r.theta1, r.theta2, r.predictor);
        }
        out
    }
}

fn grid(lo: f64, hi: f64, n: usize, i: usize) -> f64 {
    lo + (hi - lo) * i as f64 / (n - 1) as f64
}

pub fn emit_curves(spec: &CurveSpec, resolution: usize) -> Result<Curve> {
    let mut curve = Curve::default();
    match spec {
        CurveSpec::Orbit { theta } => {
            check_resolution(resolution)?;
            for i in 0..resolution {
                let t = grid(-1.0, 1.0, resolution, i);
                curve.rows.push(CurveRow::at(t, &toy_orbit(theta, t)));
            }
        }
        CurveSpec::Geodesic { from, vel, t_max } => {
            check_resolution(resolution)?;
            for i in 0..resolution {
                let t = grid(0.0, *t_max, resolution, i);
                match toy_geodesic(from, *vel, t) {
                    Ok(p) => curve.rows.push(CurveRow::at(t, &p)),
                    Err(e) => curve.skipped.push((t, e.to_string())),
                }
            }
        }
        CurveSpec::MergeComparison { points, weights } => {
            let mean = toy_frechet(points, weights)?;
            for (i, p) in points.iter().enumerate() {
                curve.rows.push(CurveRow::at(i as f64, p));
            }
            let n = points.len() as f64;
            let naive = points.iter().zip(weights).fold([0.0, 0.0], |acc, (p, w)| {
                [acc[0] + w * p.theta1, acc[1] + w * p.theta2]
            });
            curve.rows.push(CurveRow {
                t: n,
                theta1: naive[0],
                theta2: naive[1],
                predictor: naive[0] * naive[1],
            });
            curve.rows.push(CurveRow::at(n + 1.0, &mean.representative));
        }
    }
    Ok(curve)
}

fn check_resolution(resolution: usize) -> Result<()> {
    if resolution < 2 {
        return Err(Error::Config(format!("resolution {resolution} must be at least 2")));
    }
    Ok(())
}

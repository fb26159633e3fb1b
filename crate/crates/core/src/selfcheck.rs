//! Fast invariant suite behind `quomerge selfcheck`.

use serde::Serialize;

use crate::baselines::{fisher_merge, FisherBundle};
use crate::error::Result;
use crate::frechet::{frechet_mean_quotient, FrechetConfig};
use crate::lift::{lift_adapters, LiftConfig};
use crate::linalg::random::{gaussian, Rng};
use crate::linalg::DenseMatrix;
use crate::manifolds::{
    cayley_retract, orthonormality_defect, spd_exp, spd_log, stiefel_exp, stiefel_log, stiefel_project,
    FactoredSkew,
};
use crate::quotient::{
    from_lowrank, gauge_apply, horizontal_project, quotient_distance, to_dense, total_inner, vertical,
};
use crate::synth::{nearby, random_gauge, random_point, random_tangent};
use crate::toy::{emit_curves, toy_fisher_pathology, CurveSpec, ToyFisherInputs, ToyPoint};

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    /// Measured error; the check passes when `value <= tolerance`.
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

type Check = (&'static str, f64, fn(&mut Rng) -> Result<f64>);

const CHECKS: &[Check] = &[
    ("stiefel_exp_log_roundtrip", 1e-8, stiefel_roundtrip),
    ("spd_exp_log_roundtrip", 1e-10, spd_roundtrip),
    ("cayley_retraction_orthonormal", 1e-12, cayley_orthonormal),
    ("lowrank_gauge_invariance", 1e-8, lowrank_gauge),
    ("same_orbit_distance_zero", 1e-7, same_orbit),
    ("distance_gauge_invariance", 1e-6, distance_gauge),
    ("horizontal_projection_orthogonal", 1e-10, horizontal_orthogonal),
    ("frechet_of_one_orbit", 1e-6, frechet_orbit),
    ("lift_keeps_leading_block", 1e-9, lift_block),
    ("fisher_closed_form", 1e-15, fisher_closed_form),
    ("toy_fisher_pathology", 1e-12, toy_pathology),
    ("toy_predictor_linear", 1e-12, toy_linear),
];

pub fn check_names() -> Vec<&'static str> {
    CHECKS.iter().map(|c| c.0).collect()
}

/// Runs every check with a fixed seed. `corrupt` names a check whose
/// tolerance is replaced by `-1` so it must fail.
pub fn run_selfcheck(corrupt: Option<&str>) -> Vec<CheckResult> {
    CHECKS
        .iter()
        .enumerate()
        .map(|(i, &(name, tol, f))| {
            let tolerance = if corrupt == Some(name) { -1.0 } else { tol };
            let mut rng = Rng::seeded(0x5E1F ^ i as u64);
            let value = f(&mut rng).unwrap_or(f64::INFINITY);
            CheckResult {
                name,
                value,
                tolerance,
                passed: value <= tolerance,
            }
        })
        .collect()
}

fn stiefel_roundtrip(rng: &mut Rng) -> Result<f64> {
    let p = random_point(12, 12, 3, rng);
    let eta = stiefel_project(p.u(), &gaussian(12, 3, rng));
    let eta = eta.scale(0.5 / eta.norm_fro());
    let q = stiefel_exp(p.u(), &eta);
    Ok((&stiefel_log(p.u(), &q)? - &eta).norm_fro())
}

fn spd_roundtrip(rng: &mut Rng) -> Result<f64> {
    let p = random_point(6, 6, 4, rng);
    let z = gaussian(4, 4, rng).sym();
    let eta = p.b().sqrt().matmul(&z.scale(1.0 / z.norm_fro())).matmul(p.b().sqrt());
    let c = spd_exp(p.b(), &eta)?;
    Ok((&spd_log(p.b(), &c)? - &eta).norm_fro() / eta.norm_fro())
}

fn cayley_orthonormal(rng: &mut Rng) -> Result<f64> {
    let p = random_point(40, 40, 4, rng);
    let zeta = stiefel_project(p.u(), &gaussian(40, 4, rng));
    let omega = FactoredSkew::from_tangent(p.u(), &zeta)?;
    let y = cayley_retract(p.u(), &omega, 0.7)?;
    Ok(orthonormality_defect(y.matrix()))
}

fn lowrank_gauge(rng: &mut Rng) -> Result<f64> {
    let g = gaussian(10, 3, rng);
    let h = gaussian(9, 3, rng);
    let a = gaussian(3, 3, rng).add_scaled(&DenseMatrix::identity(3), 3.0);
    let p = from_lowrank(&g, &h)?;
    let q = from_lowrank(&g.matmul(&a), &h.matmul(&a.inverse()?.transpose()))?;
    quotient_distance(&p, &q)
}

fn same_orbit(rng: &mut Rng) -> Result<f64> {
    let p = random_point(14, 11, 4, rng);
    let q = gauge_apply(&p, &random_gauge(4, rng));
    quotient_distance(&p, &q)
}

fn distance_gauge(rng: &mut Rng) -> Result<f64> {
    let p = random_point(14, 11, 3, rng);
    let q = nearby(&p, 0.4, rng);
    let d = quotient_distance(&p, &q)?;
    let dg = quotient_distance(&gauge_apply(&p, &random_gauge(3, rng)), &gauge_apply(&q, &random_gauge(3, rng)))?;
    Ok((d - dg).abs() / d.max(1e-300))
}

fn horizontal_orthogonal(rng: &mut Rng) -> Result<f64> {
    let p = random_point(10, 8, 3, rng);
    let h = horizontal_project(&p, &random_tangent(&p, rng));
    let omega = gaussian(3, 3, rng).skew();
    Ok(total_inner(&p, &h, &vertical(&p, &omega)).abs())
}

fn frechet_orbit(rng: &mut Rng) -> Result<f64> {
    let p = random_point(12, 10, 3, rng);
    let pts: Vec<_> = (0..3).map(|_| gauge_apply(&p, &random_gauge(3, rng))).collect();
    let (mu, _) = frechet_mean_quotient(&pts, &FrechetConfig::default())?;
    quotient_distance(&mu, &p)
}

fn lift_block(rng: &mut Rng) -> Result<f64> {
    let pts: Vec<_> = (0..3).map(|_| random_point(12, 10, 2, rng)).collect();
    let (lifted, _) = lift_adapters(&pts, &LiftConfig::new(5))?;
    let mut worst: f64 = 0.0;
    for (p, l) in pts.iter().zip(&lifted) {
        let lead = l
            .u()
            .matrix()
            .columns(0, 2)
            .matmul(&l.b().matrix().block(0, 2, 0, 2))
            .matmul_tr(&l.v().matrix().columns(0, 2));
        worst = worst.max((&lead - &to_dense(p)).max_abs());
    }
    Ok(worst)
}

fn fisher_closed_form(_: &mut Rng) -> Result<f64> {
    let b = FisherBundle::new(vec![vec![0.0], vec![3.0]], vec![vec![2.0], vec![1.0]])?;
    Ok((fisher_merge(&b, None)?.theta[0] - 1.0).abs())
}

fn toy_pathology(_: &mut Rng) -> Result<f64> {
    let p = toy_fisher_pathology(&ToyPoint::new(1.0, 1.0)?, &ToyFisherInputs::new(1.0, 1.0)?)?;
    Ok(p.fisher_merge[0].abs().max(p.fisher_merge[1].abs()).max((p.quotient_predictor - 1.0).abs()))
}

fn toy_linear(_: &mut Rng) -> Result<f64> {
    let curve = emit_curves(
        &CurveSpec::Geodesic {
            from: ToyPoint::new(1.0, 1.0)?,
            vel: [0.5, 0.5],
            t_max: 1.0,
        },
        11,
    )?;
    Ok(curve.rows.iter().map(|r| (r.predictor - (1.0 + 2.0 * 0.5 * r.t)).abs()).fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        let results = run_selfcheck(None);
        for r in &results {
            assert!(r.passed, "{r:?}");
        }
        assert_eq!(results.len(), check_names().len());
    }

    #[test]
    fn corruption_fails_the_named_check() {
        let results = run_selfcheck(Some("toy_predictor_linear"));
        let failed: Vec<_> = results.iter().filter(|r| !r.passed).map(|r| r.name).collect();
        assert_eq!(failed, vec!["toy_predictor_linear"]);
    }
}

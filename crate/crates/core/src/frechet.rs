//! Weighted Fréchet means: on the polar quotient (with orbit alignment and
//! horizontal gradient descent) and on the single factor manifolds.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifolds::{
    spd_exp, spd_log, spd_norm, stiefel_exp, stiefel_log, stiefel_norm, SpdPoint, StiefelPoint,
};
use crate::quotient::{
    align_from, horizontal_project, quotient_distance, total_exp, total_norm,
    truncate_lowrank, AlignOptions, GaugeRotation, GeodesicMode, PolarPoint, TangentTriple, DISTANCE_ALIGN_ITERS,
};
use crate::linalg::DenseMatrix;

/// Where the iteration starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitStrategy {
    /// The input with the largest weight; ties go to the lowest index.
    #[default]
    Index,
    /// Rank-`r` truncation of the weighted dense average.
    EuclideanSvd,
}

#[derive(Debug, Clone)]
pub struct FrechetConfig {
    /// Nonnegative, summing to one. Empty means uniform.
    pub weights: Vec<f64>,
    pub alpha: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub align_iters_first: usize,
    pub align_iters_rest: usize,
    pub mode: GeodesicMode,
    pub tau: f64,
    pub init: InitStrategy,
    /// Step halvings tried before the iteration is declared stalled.
    pub max_backtracks: usize,
}

impl Default for FrechetConfig {
    fn default() -> Self {
        Self {
            weights: Vec::new(),
            alpha: 1.0,
            tol: 1e-8,
            max_iter: 100,
            align_iters_first: 5,
            align_iters_rest: 2,
            mode: GeodesicMode::Exact,
            tau: 1.0,
            init: InitStrategy::Index,
            max_backtracks: 5,
        }
    }
}

impl FrechetConfig {
    /// Weights for `n` inputs after validation.
    pub fn resolved_weights(&self, n: usize) -> Result<Vec<f64>> {
        if n == 0 {
            return Err(Error::EmptyInput("no points to average"));
        }
        if self.weights.is_empty() {
            return Ok(vec![1.0 / n as f64; n]);
        }
        check_weights(&self.weights, n)?;
        Ok(self.weights.clone())
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("tol", self.tol), ("tau", self.tau)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Weights must be finite, nonnegative and sum to one within `1e-12`.
pub fn check_weights(w: &[f64], n: usize) -> Result<()> {
    if w.len() != n {
        return Err(Error::InvalidWeights(format!("{} weights for {n} inputs", w.len())));
    }
    if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::InvalidWeights("weights must be finite and nonnegative".into()));
    }
    let sum: f64 = w.iter().sum();
    if (sum - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidWeights(format!("weights sum to {sum}, not 1")));
    }
    Ok(())
}

/// Scales nonnegative raw weights to sum to one.
pub fn normalize_weights(raw: &[f64]) -> Result<Vec<f64>> {
    if raw.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::InvalidWeights("weights must be finite and nonnegative".into()));
    }
    let sum: f64 = raw.iter().sum();
    if !(sum > 0.0) {
        return Err(Error::InvalidWeights("weights sum to zero".into()));
    }
    Ok(raw.iter().map(|x| x / sum).collect())
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct FrechetReport {
    /// Number of iterates evaluated; the length of both traces.
    pub iterations: usize,
    pub functional_trace: Vec<f64>,
    pub gradient_trace: Vec<f64>,
    pub converged: bool,
    pub warnings: Vec<String>,
}

impl FrechetReport {
    fn warn(&mut self, msg: impl Into<String>) {
        let msg = msg.into();
        if !self.warnings.contains(&msg) {
            self.warnings.push(msg);
        }
    }
}

fn check_shapes(points: &[PolarPoint]) -> Result<()> {
    let first = points.first().ok_or(Error::EmptyInput("no points to average"))?;
    let key = (first.d_out(), first.d_in(), first.rank());
    for p in points {
        if (p.d_out(), p.d_in(), p.rank()) != key {
            return Err(Error::dim(format!(
                "inputs disagree in shape: {key:?} vs {:?}",
                (p.d_out(), p.d_in(), p.rank())
            )));
        }
    }
    Ok(())
}

/// `½ Σ w_i d(μ, x_i)²` with [`quotient_distance`].
pub fn frechet_functional(mu: &PolarPoint, points: &[PolarPoint], weights: &[f64]) -> Result<f64> {
    check_shapes(points)?;
    check_weights(weights, points.len())?;
    let d: Vec<f64> = points
        .par_iter()
        .zip(weights.par_iter())
        .map(|(x, &w)| if w == 0.0 { Ok(0.0) } else { quotient_distance(mu, x) })
        .collect::<Result<_>>()?;
    Ok(0.5 * d.iter().zip(weights).map(|(d, w)| w * d * d).sum::<f64>())
}

struct Evaluation {
    value: f64,
    /// `Σ w_i Π^H Log_μ(x_i*)`, the negative Riemannian gradient.
    direction: TangentTriple,
    grad_norm: f64,
    degenerate: bool,
    fell_back: bool,
    /// Per-input gauge found by the alignment; warm start for the next evaluation.
    gauges: Vec<Option<GaugeRotation>>,
}

fn evaluate(
    mu: &PolarPoint,
    points: &[PolarPoint],
    weights: &[f64],
    opts: &AlignOptions,
    warm: Option<&[Option<GaugeRotation>]>,
) -> Result<Evaluation> {
    let parts: Vec<Option<(f64, TangentTriple, bool, bool, GaugeRotation)>> = points
        .par_iter()
        .zip(weights.par_iter())
        .enumerate()
        .map(|(i, (x, &w))| {
            if w == 0.0 {
                return Ok(None);
            }
            let start = warm.and_then(|g| g[i].as_ref());
            let a = align_from(mu, x, opts, start)?;
            let h = horizontal_project(mu, &a.log);
            Ok(Some((w * a.objective(), h.scale(w), a.degenerate, a.fell_back, a.gauge)))
        })
        .collect::<Result<_>>()?;
    let mut value = 0.0;
    let mut direction = TangentTriple::zeros(mu);
    let mut degenerate = false;
    let mut fell_back = false;
    let mut gauges = Vec::with_capacity(parts.len());
    for part in parts {
        let Some((wd2, h, deg, fb, gauge)) = part else {
            gauges.push(None);
            continue;
        };
        value += 0.5 * wd2;
        direction = direction.add_scaled(&h, 1.0);
        degenerate |= deg;
        fell_back |= fb;
        gauges.push(Some(gauge));
    }
    direction.horizontal = true;
    let grad_norm = total_norm(mu, &direction);
    Ok(Evaluation {
        value,
        direction,
        grad_norm,
        degenerate,
        fell_back,
        gauges,
    })
}

/// Negative Riemannian gradient `Σ w_i η_i` of the functional at `μ`, with
/// alignments run to the same budget as [`quotient_distance`].
pub fn frechet_gradient(
    mu: &PolarPoint,
    points: &[PolarPoint],
    weights: &[f64],
    mode: GeodesicMode,
) -> Result<TangentTriple> {
    check_shapes(points)?;
    check_weights(weights, points.len())?;
    let opts = AlignOptions {
        inner_iters: DISTANCE_ALIGN_ITERS,
        mode,
        ..AlignOptions::default()
    };
    Ok(evaluate(mu, points, weights, &opts, None)?.direction)
}

fn initial_point(points: &[PolarPoint], weights: &[f64], init: InitStrategy) -> Result<PolarPoint> {
    match init {
        InitStrategy::Index => Ok(points[start_index(weights)].clone()),
        InitStrategy::EuclideanSvd => {
            let gs: Vec<DenseMatrix> = points
                .iter()
                .zip(weights)
                .map(|(p, &w)| p.u().matrix().matmul(p.b().matrix()).scale(w))
                .collect();
            let hs: Vec<&DenseMatrix> = points.iter().map(|p| p.v().matrix()).collect();
            let g = DenseMatrix::hstack(&gs.iter().collect::<Vec<_>>());
            let h = DenseMatrix::hstack(&hs);
            truncate_lowrank(&g, &h, points[0].rank())
        }
    }
}

/// Weighted Fréchet mean on the quotient.
///
/// Each iteration aligns every input to the iterate, sums the horizontal logs,
/// and steps along the sum with backtracking. An iteration whose every
/// halving fails to decrease the functional ends the run with a warning and
/// keeps the current iterate.
pub fn frechet_mean_quotient(
    points: &[PolarPoint],
    config: &FrechetConfig,
) -> Result<(PolarPoint, FrechetReport)> {
    check_shapes(points)?;
    config.validate()?;
    let weights = config.resolved_weights(points.len())?;
    let mut report = FrechetReport::default();
    let mut mu = initial_point(points, &weights, config.init)?;

    // Logs and the functional are always exact so that the summed logs stay
    // the true negative gradient; `config.mode` only picks the update step.
    let align_opts = |iters| AlignOptions {
        inner_iters: iters,
        tau: config.tau,
        mode: GeodesicMode::Exact,
        ..AlignOptions::default()
    };
    let note = |report: &mut FrechetReport, e: &Evaluation| {
        if e.degenerate {
            report.warn("degenerate Procrustes alignment; identity gauge used");
        }
        if e.fell_back {
            report.warn("Cayley lift unavailable for some factors; exact logarithm used");
        }
    };

    let mut eval = evaluate(&mu, points, &weights, &align_opts(config.align_iters_first), None)?;
    note(&mut report, &eval);
    for k in 0..config.max_iter {
        report.functional_trace.push(eval.value);
        report.gradient_trace.push(eval.grad_norm);
        report.iterations += 1;
        if !(eval.value.is_finite() && eval.grad_norm.is_finite()) {
            return Err(Error::NonFinite("Fréchet functional"));
        }
        if eval.grad_norm < config.tol {
            report.converged = true;
            break;
        }
        if k + 1 == config.max_iter {
            break;
        }
        let rest = align_opts(config.align_iters_rest);
        let mut step = config.alpha;
        let mut next = None;
        for _ in 0..=config.max_backtracks {
            if let Ok(cand) = total_exp(&mu, &eval.direction, step, config.mode) {
                if let Ok(e) = evaluate(&cand, points, &weights, &rest, Some(&eval.gauges)) {
                    if e.value <= eval.value * (1.0 + 1e-13) {
                        next = Some((cand, e));
                        break;
                    }
                }
            }
            step *= 0.5;
        }
        match next {
            Some((cand, e)) => {
                if step < config.alpha {
                    report.warn("step size reduced by backtracking");
                }
                note(&mut report, &e);
                mu = cand;
                eval = e;
            }
            None => {
                report.warn(format!(
                    "stalled: no descent after {} step halvings",
                    config.max_backtracks
                ));
                break;
            }
        }
    }
    if !report.converged {
        report.warn(format!(
            "not converged: gradient norm {:.3e} >= tol {:.1e}",
            eval.grad_norm, config.tol
        ));
    }
    Ok((mu, report))
}

fn single_weights(weights: &[f64], n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::EmptyInput("no points to average"));
    }
    if weights.is_empty() {
        return Ok(vec![1.0 / n as f64; n]);
    }
    check_weights(weights, n)?;
    Ok(weights.to_vec())
}

/// Index of the largest weight, lowest index on ties.
fn start_index(w: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in w.iter().enumerate() {
        if x > w[best] {
            best = i;
        }
    }
    best
}

/// Karcher mean on SPD by the fixed-point iteration `B ← Exp_B(Σ w_i Log_B(B_i))`.
pub fn frechet_mean_spd(points: &[SpdPoint], weights: &[f64]) -> Result<SpdPoint> {
    let w = single_weights(weights, points.len())?;
    let mut b = points[start_index(&w)].clone();
    for _ in 0..500 {
        let mut g = DenseMatrix::zeros(b.dim(), b.dim());
        for (p, &wi) in points.iter().zip(&w) {
            if wi > 0.0 {
                g = g.add_scaled(&spd_log(&b, p)?, wi);
            }
        }
        if spd_norm(&b, &g) < 1e-13 {
            return Ok(b);
        }
        b = spd_exp(&b, &g)?;
    }
    Ok(b)
}

/// Intrinsic mean on one Stiefel factor under the canonical metric.
pub fn frechet_mean_stiefel(points: &[StiefelPoint], weights: &[f64]) -> Result<StiefelPoint> {
    let w = single_weights(weights, points.len())?;
    let mut u = points[start_index(&w)].clone();
    for _ in 0..500 {
        let mut g = DenseMatrix::zeros(u.n(), u.rank());
        for (p, &wi) in points.iter().zip(&w) {
            if wi > 0.0 {
                g = g.add_scaled(&stiefel_log(&u, p)?, wi);
            }
        }
        if stiefel_norm(&u, &g) < 1e-11 {
            return Ok(u);
        }
        u = stiefel_exp(&u, &g);
    }
    Ok(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::random::{rand_spd, Rng};
    use crate::quotient::testutil::*;
    use crate::quotient::{gauge_apply, total_inner};

    #[test]
    fn weights_validation() {
        assert!(check_weights(&[0.5, 0.5], 2).is_ok());
        assert!(check_weights(&[0.5, 0.6], 2).is_err());
        assert!(check_weights(&[1.5, -0.5], 2).is_err());
        assert!(check_weights(&[1.0], 2).is_err());
        assert_eq!(normalize_weights(&[1.0, 3.0]).unwrap(), vec![0.25, 0.75]);
        assert!(normalize_weights(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn functional_examples() {
        let mut rng = Rng::seeded(1);
        let p = random_point(10, 8, 2, &mut rng);
        assert!(frechet_functional(&p, &[p.clone(), p.clone()], &[0.5, 0.5]).unwrap() < 1e-20);
        let q = nearby(&p, 0.3, &mut rng);
        let d = quotient_distance(&p, &q).unwrap();
        assert!((frechet_functional(&p, &[q.clone()], &[1.0]).unwrap() - 0.5 * d * d).abs() < 1e-15);
        let r = nearby(&p, 0.3, &mut rng);
        let dr = quotient_distance(&p, &r).unwrap();
        let f = frechet_functional(&p, &[q, r], &[0.3, 0.7]).unwrap();
        assert_eq!(f, 0.5 * (0.3 * d * d + 0.7 * dr * dr));
    }

    #[test]
    fn identical_inputs_collapse() {
        let mut rng = Rng::seeded(2);
        let p = random_point(12, 10, 4, &mut rng);
        let pts: Vec<_> = (0..3).map(|_| gauge_apply(&p, &random_gauge(4, &mut rng))).collect();
        let (mu, rep) = frechet_mean_quotient(&pts, &FrechetConfig::default()).unwrap();
        assert!(rep.converged);
        assert!(quotient_distance(&mu, &pts[0]).unwrap() < 1e-10);
    }

    #[test]
    fn scalar_spd_pair_gives_geometric_mean() {
        let u = StiefelPoint::new(DenseMatrix::eye(3, 1)).unwrap();
        let mk = |b: f64| {
            PolarPoint::new(u.clone(), SpdPoint::new(DenseMatrix::from_diag(&[b])).unwrap(), u.clone()).unwrap()
        };
        let (mu, rep) = frechet_mean_quotient(&[mk(1.0), mk(4.0)], &FrechetConfig::default()).unwrap();
        assert!(rep.converged);
        assert!((mu.b().matrix()[(0, 0)] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn random_triple_is_stationary_and_monotone() {
        let mut rng = Rng::seeded(3);
        let base = random_point(16, 12, 4, &mut rng);
        let pts: Vec<_> = (0..3).map(|_| nearby(&base, 0.4, &mut rng)).collect();
        let w = vec![1.0 / 3.0; 3];
        let (mu, rep) = frechet_mean_quotient(&pts, &FrechetConfig::default()).unwrap();
        assert!(rep.converged, "{rep:?}");
        assert_eq!(rep.functional_trace.len(), rep.iterations);
        for pair in rep.functional_trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12);
        }
        let f = frechet_functional(&mu, &pts, &w).unwrap();
        for x in &pts {
            assert!(f <= frechet_functional(x, &pts, &w).unwrap() + 1e-9);
        }
    }

    #[test]
    fn weight_degeneracy_returns_first_orbit() {
        let mut rng = Rng::seeded(4);
        let base = random_point(10, 9, 3, &mut rng);
        let pts: Vec<_> = (0..3).map(|_| nearby(&base, 0.4, &mut rng)).collect();
        let cfg = FrechetConfig {
            weights: vec![1.0, 0.0, 0.0],
            ..FrechetConfig::default()
        };
        let (mu, _) = frechet_mean_quotient(&pts, &cfg).unwrap();
        assert!(quotient_distance(&mu, &pts[0]).unwrap() < 1e-7);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = Rng::seeded(5);
        let base = random_point(10, 8, 2, &mut rng);
        let pts: Vec<_> = (0..3).map(|_| nearby(&base, 0.3, &mut rng)).collect();
        let w = vec![0.2, 0.3, 0.5];
        let mu = nearby(&base, 0.1, &mut rng);
        let eta = frechet_gradient(&mu, &pts, &w, GeodesicMode::Exact).unwrap();
        let h = 1e-3;
        for _ in 0..10 {
            let dir = horizontal_project(&mu, &random_tangent(&mu, &mut rng));
            let plus = total_exp(&mu, &dir, h, GeodesicMode::Exact).unwrap();
            let minus = total_exp(&mu, &dir, -h, GeodesicMode::Exact).unwrap();
            let fd = (frechet_functional(&plus, &pts, &w).unwrap() - frechet_functional(&minus, &pts, &w).unwrap())
                / (2.0 * h);
            let analytic = -total_inner(&mu, &eta, &dir);
            assert!((fd - analytic).abs() < 1e-5 * analytic.abs().max(1e-3), "{fd} vs {analytic}");
        }
    }

    #[test]
    fn euclidean_init_is_supported() {
        let mut rng = Rng::seeded(6);
        let base = random_point(10, 8, 2, &mut rng);
        let pts: Vec<_> = (0..3).map(|_| nearby(&base, 0.3, &mut rng)).collect();
        let cfg = FrechetConfig {
            init: InitStrategy::EuclideanSvd,
            ..FrechetConfig::default()
        };
        let (_, rep) = frechet_mean_quotient(&pts, &cfg).unwrap();
        assert!(rep.converged);
    }

    #[test]
    fn spd_mean_oracles() {
        let one = SpdPoint::new(DenseMatrix::from_diag(&[1.0])).unwrap();
        let four = SpdPoint::new(DenseMatrix::from_diag(&[4.0])).unwrap();
        let m = frechet_mean_spd(&[one, four], &[]).unwrap();
        assert!((m.matrix()[(0, 0)] - 2.0).abs() < 1e-12);

        let a = SpdPoint::new(DenseMatrix::from_diag(&[1.0, 9.0, 2.0])).unwrap();
        let b = SpdPoint::new(DenseMatrix::from_diag(&[4.0, 1.0, 8.0])).unwrap();
        let m = frechet_mean_spd(&[a.clone(), b], &[0.5, 0.5]).unwrap();
        assert!((m.matrix() - &DenseMatrix::from_diag(&[2.0, 3.0, 4.0])).max_abs() < 1e-12);

        let m = frechet_mean_spd(&[a.clone(), a.clone()], &[]).unwrap();
        assert!((m.matrix() - a.matrix()).max_abs() < 1e-14);

        let mut rng = Rng::seeded(7);
        let pts: Vec<_> = (0..4).map(|_| SpdPoint::new(rand_spd(4, 0.8, &mut rng)).unwrap()).collect();
        let m = frechet_mean_spd(&pts, &[]).unwrap();
        let mut g = DenseMatrix::zeros(4, 4);
        for p in &pts {
            g = g.add_scaled(&spd_log(&m, p).unwrap(), 0.25);
        }
        assert!(spd_norm(&m, &g) < 1e-10);
    }

    #[test]
    fn stiefel_mean_oracles() {
        let at = |a: f64| StiefelPoint::new(DenseMatrix::from_rows(&[&[a.cos()], &[a.sin()]])).unwrap();
        let m = frechet_mean_stiefel(&[at(0.4), at(-0.4)], &[]).unwrap();
        assert!((m.matrix()[(0, 0)] - 1.0).abs() < 1e-8 && m.matrix()[(1, 0)].abs() < 1e-8);

        let mut rng = Rng::seeded(8);
        let base = random_point(9, 9, 3, &mut rng);
        let pts: Vec<_> = (0..3).map(|_| perturb(&base, 0.3, &mut rng).u().clone()).collect();
        let m = frechet_mean_stiefel(&pts, &[]).unwrap();
        let mut g = DenseMatrix::zeros(9, 3);
        for p in &pts {
            g = g.add_scaled(&stiefel_log(&m, p).unwrap(), 1.0 / 3.0);
        }
        assert!(stiefel_norm(&m, &g) < 1e-8);
        let same = frechet_mean_stiefel(&[pts[0].clone(), pts[0].clone()], &[]).unwrap();
        assert!((same.matrix() - pts[0].matrix()).max_abs() < 1e-12);
    }
}

//! Orbit alignment: Procrustes start, then gradient steps on the gauge.

use super::tangent::{gauge_drift, total_log_with_fallback, total_norm, GeodesicMode, TangentTriple};
use super::{gauge_apply, GaugeRotation, PolarPoint};
use crate::error::{Error, Result};
use crate::linalg::{expm, polar_orthogonal, DenseMatrix};

#[derive(Debug, Clone, Copy)]
pub struct AlignOptions {
    pub inner_iters: usize,
    /// Initial gauge step; halved on non-decrease.
    pub tau: f64,
    pub max_halvings: usize,
    pub mode: GeodesicMode,
    /// Stop once the vertical generator is smaller than this.
    pub tol: f64,
}

impl Default for AlignOptions {
    fn default() -> Self {
        Self {
            inner_iters: 5,
            tau: 1.0,
            max_halvings: 4,
            mode: GeodesicMode::Exact,
            tol: 1e-13,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Alignment {
    /// `O*` with `aligned = gauge_apply(Q, O*)`.
    pub gauge: GaugeRotation,
    pub aligned: PolarPoint,
    /// Raw total log from `P` to `aligned` in the requested mode.
    pub log: TangentTriple,
    /// Squared total-space distance after Procrustes and after each accepted step.
    pub objective_trace: Vec<f64>,
    /// The Procrustes matrix was singular and the identity was used instead.
    pub degenerate: bool,
    /// Some factor log fell back from Cayley to the exact logarithm.
    pub fell_back: bool,
}

impl Alignment {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace holds the initial objective")
    }
}

pub fn align(p: &PolarPoint, q: &PolarPoint, inner_iters: usize, tau: f64) -> Result<Alignment> {
    align_with(
        p,
        q,
        &AlignOptions {
            inner_iters,
            tau,
            ..AlignOptions::default()
        },
    )
}

fn evaluate(p: &PolarPoint, q: &PolarPoint, mode: GeodesicMode) -> Result<(TangentTriple, f64, bool)> {
    let (log, fell_back) = total_log_with_fallback(p, q, mode)?;
    let n = total_norm(p, &log);
    Ok((log, n * n, fell_back))
}

/// Approximately minimizes the total-space distance from `P` over the orbit of `Q`.
pub fn align_with(p: &PolarPoint, q: &PolarPoint, opts: &AlignOptions) -> Result<Alignment> {
    align_from(p, q, opts, None)
}

/// [`align_with`] starting from `start` instead of the Procrustes gauge.
pub fn align_from(
    p: &PolarPoint,
    q: &PolarPoint,
    opts: &AlignOptions,
    start: Option<&GaugeRotation>,
) -> Result<Alignment> {
    p.same_shape(q)?;
    let r = p.rank();
    let (mut o, degenerate) = match start {
        Some(g) if g.matrix().rows() == r => (g.matrix().clone(), false),
        Some(_) => return Err(Error::dim("warm-start gauge has the wrong size")),
        None => {
            let m = q
                .u()
                .matrix()
                .tr_matmul(p.u().matrix())
                .add_scaled(&q.v().matrix().tr_matmul(p.v().matrix()), 1.0);
            match polar_orthogonal(&m) {
                Ok(o) => (o, false),
                Err(Error::DegenerateAlignment) => (DenseMatrix::identity(r), true),
                Err(e) => return Err(e),
            }
        }
    };
    let mut aligned = gauge_apply(q, &GaugeRotation::new_unchecked(o.clone()));
    let (mut log, mut obj, mut fell_back) = evaluate(p, &aligned, opts.mode)?;
    let mut trace = vec![obj];

    for _ in 0..opts.inner_iters {
        let omega = gauge_drift(p, &log);
        if omega.norm_fro() <= opts.tol {
            break;
        }
        let mut t = opts.tau;
        let mut accepted = false;
        for _ in 0..=opts.max_halvings {
            let cand_o = o.matmul(&expm(&omega.scale(-t)));
            let cand = gauge_apply(q, &GaugeRotation::new_unchecked(cand_o.clone()));
            if let Ok((cand_log, cand_obj, fb)) = evaluate(p, &cand, opts.mode) {
                if cand_obj <= obj {
                    o = cand_o;
                    aligned = cand;
                    log = cand_log;
                    obj = cand_obj;
                    fell_back |= fb;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
        trace.push(obj);
    }

    Ok(Alignment {
        gauge: GaugeRotation::new_unchecked(o),
        aligned,
        log,
        objective_trace: trace,
        degenerate,
        fell_back,
    })
}

/// Inner-iteration budget used by [`quotient_distance`].
pub const DISTANCE_ALIGN_ITERS: usize = 50;

/// `‖Log_P(Q*)‖_P` at the aligned representative `Q*`. An upper bound on the
/// orbit minimum, computed with exact logarithms.
pub fn quotient_distance(p: &PolarPoint, q: &PolarPoint) -> Result<f64> {
    let a = align_with(
        p,
        q,
        &AlignOptions {
            inner_iters: DISTANCE_ALIGN_ITERS,
            ..AlignOptions::default()
        },
    )?;
    Ok(a.objective().max(0.0).sqrt())
}

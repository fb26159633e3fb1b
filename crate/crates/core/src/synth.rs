//! Seeded random points, tangents and synthetic adapter bundles.

use crate::bundle::{AdapterBundle, LayerRecord, Representation};
use crate::error::{Error, Result};
use crate::linalg::random::{gaussian, orthonormal_from, rand_spd, Rng};
use crate::linalg::DenseMatrix;
use crate::manifolds::{spd_exp, stiefel_exp, stiefel_project, SpdPoint, StiefelPoint};
use crate::quotient::{gauge_apply, total_norm, GaugeRotation, PolarPoint, TangentTriple};

/// Haar-ish frames and a `B` with log-eigenvalues in `[-0.7, 0.7]`.
pub fn random_point(d_out: usize, d_in: usize, r: usize, rng: &mut Rng) -> PolarPoint {
    PolarPoint::new(
        StiefelPoint::new(orthonormal_from(d_out, r, rng).expect("d_out >= r")).expect("orthonormal"),
        SpdPoint::new(rand_spd(r, 0.7, rng)).expect("spd"),
        StiefelPoint::new(orthonormal_from(d_in, r, rng).expect("d_in >= r")).expect("orthonormal"),
    )
    .expect("consistent shapes")
}

pub fn random_gauge(r: usize, rng: &mut Rng) -> GaugeRotation {
    GaugeRotation::new(orthonormal_from(r, r, rng).expect("square frame")).expect("orthogonal")
}

/// Invertible `r x r` matrix with singular values in `[e^-spread, e^spread]`.
pub fn random_gl(r: usize, spread: f64, rng: &mut Rng) -> DenseMatrix {
    let p = orthonormal_from(r, r, rng).expect("square frame");
    let q = orthonormal_from(r, r, rng).expect("square frame");
    let s: Vec<f64> = (0..r).map(|_| rng.uniform(-spread, spread).exp()).collect();
    p.matmul(&DenseMatrix::from_diag(&s)).matmul_tr(&q)
}

fn unit(m: DenseMatrix) -> DenseMatrix {
    let n = m.norm_fro();
    if n > 0.0 {
        m.scale(1.0 / n)
    } else {
        m
    }
}

/// Random tangent triple (not horizontal) with unit factor norms. A factor
/// whose tangent space is trivial (square orthogonal `U` of rank one) stays zero.
pub fn random_tangent(p: &PolarPoint, rng: &mut Rng) -> TangentTriple {
    let tu = stiefel_project(p.u(), &gaussian(p.d_out(), p.rank(), rng));
    let tv = stiefel_project(p.v(), &gaussian(p.d_in(), p.rank(), rng));
    let tb = p.b().sqrt().matmul(&gaussian(p.rank(), p.rank(), rng).sym()).matmul(p.b().sqrt());
    TangentTriple::new(unit(tu), unit(tb.sym()), unit(tv))
}

/// Point at total-space distance `size` from `p` along a random direction.
pub fn perturb(p: &PolarPoint, size: f64, rng: &mut Rng) -> PolarPoint {
    let t = random_tangent(p, rng);
    let t = t.scale(size / total_norm(p, &t));
    PolarPoint::new(
        stiefel_exp(p.u(), &t.u),
        spd_exp(p.b(), &t.b).expect("finite tangent"),
        stiefel_exp(p.v(), &t.v),
    )
    .expect("consistent shapes")
}

/// [`perturb`] followed by a random gauge.
pub fn nearby(p: &PolarPoint, size: f64, rng: &mut Rng) -> PolarPoint {
    let q = perturb(p, size, rng);
    gauge_apply(&q, &random_gauge(p.rank(), rng))
}

#[derive(Debug, Clone)]
pub struct LayerShape {
    pub name: String,
    pub d_out: usize,
    pub d_in: usize,
    pub rank: usize,
}

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub layers: Vec<LayerShape>,
    pub tasks: usize,
    /// Total-space distance of each task from the shared per-layer base point.
    pub spread: f64,
    pub seed: u64,
    pub with_fisher: bool,
}

impl SynthConfig {
    /// `layers` square `d x d` layers of rank `r`.
    pub fn uniform(layers: usize, d: usize, r: usize, tasks: usize, seed: u64) -> Self {
        Self {
            layers: (0..layers)
                .map(|i| LayerShape {
                    name: format!("layer{i}"),
                    d_out: d,
                    d_in: d,
                    rank: r,
                })
                .collect(),
            tasks,
            spread: 0.3,
            seed,
            with_fisher: false,
        }
    }
}

/// One low-rank bundle per task. Every layer of every task sits near a
/// shared base point and is stored in a random `GL(r)` gauge.
pub fn synth_family(cfg: &SynthConfig) -> Result<Vec<AdapterBundle>> {
    if cfg.tasks == 0 {
        return Err(Error::EmptyInput("no tasks to synthesize"));
    }
    if !(cfg.spread.is_finite() && cfg.spread >= 0.0) {
        return Err(Error::Config(format!("spread {} must be nonnegative", cfg.spread)));
    }
    let mut rng = Rng::seeded(cfg.seed);
    let mut bundles: Vec<AdapterBundle> = (0..cfg.tasks)
        .map(|t| {
            let mut b = AdapterBundle::new(format!("task-{t}"), "synthetic");
            b.metadata.insert("seed".into(), cfg.seed.to_string());
            b
        })
        .collect();
    for shape in &cfg.layers {
        if shape.rank == 0 || shape.rank > shape.d_out.min(shape.d_in) {
            return Err(Error::dim(format!(
                "layer {}: rank {} does not fit {}x{}",
                shape.name, shape.rank, shape.d_out, shape.d_in
            )));
        }
        let base = random_point(shape.d_out, shape.d_in, shape.rank, &mut rng);
        for bundle in &mut bundles {
            let p = nearby(&base, cfg.spread, &mut rng);
            let (g, h) = p.to_lowrank();
            let a = random_gl(shape.rank, 0.5, &mut rng);
            let ainv_t = a.inverse()?.transpose();
            let mut rec = LayerRecord::lowrank(shape.name.clone(), g.matmul(&a), h.matmul(&ainv_t))?;
            if cfg.with_fisher {
                rec.fisher = Some((0..shape.d_out * shape.d_in).map(|_| rng.uniform(0.1, 1.0)).collect());
            }
            bundle.push(rec)?;
        }
    }
    Ok(bundles)
}

/// Same updates in a different gauge: `GL(r)` for low-rank layers, `O(r)`
/// for polar ones.
pub fn regauge(bundle: &AdapterBundle, seed: u64) -> Result<AdapterBundle> {
    let mut rng = Rng::seeded(seed);
    let mut out = bundle.clone();
    for l in &mut out.layers {
        let r = l.rank();
        l.repr = match &l.repr {
            Representation::LowRank { g, h } => {
                let a = random_gl(r, 0.5, &mut rng);
                let ainv_t = a.inverse()?.transpose();
                Representation::LowRank {
                    g: g.matmul(&a),
                    h: h.matmul(&ainv_t),
                }
            }
            Representation::Polar { u, b, v } => {
                let o = random_gauge(r, &mut rng);
                let o = o.matrix();
                Representation::Polar {
                    u: u.matmul(o),
                    b: o.tr_matmul(b).matmul(o).sym(),
                    v: v.matmul(o),
                }
            }
        };
    }
    Ok(out)
}

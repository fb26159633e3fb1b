//! Bundle-level merging: per-layer conversion, optional rank lift, then the
//! quotient Fréchet mean or one of the baselines.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{euclid_average_factored, fisher_merge, FisherBundle};
use crate::bundle::{AdapterBundle, LayerRecord};
use crate::error::{Error, Result};
use crate::frechet::{frechet_mean_quotient, FrechetConfig, FrechetReport};
use crate::lift::{lift_adapters, LiftConfig};
use crate::linalg::DenseMatrix;
use crate::manifolds::{SpdPoint, StiefelPoint};
use crate::quotient::{quotient_distance, truncate_dense, truncate_lowrank, GeodesicMode, PolarPoint, RankPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MergeMode {
    #[default]
    Geodesic,
    GeodesicCayley,
    Euclid,
    Fisher,
}

impl MergeMode {
    pub fn as_str(self) -> &'static str {
        match self {
            MergeMode::Geodesic => "geodesic",
            MergeMode::GeodesicCayley => "geodesic-cayley",
            MergeMode::Euclid => "euclid",
            MergeMode::Fisher => "fisher",
        }
    }

    fn geodesic_mode(self) -> Option<GeodesicMode> {
        match self {
            MergeMode::Geodesic => Some(GeodesicMode::Exact),
            MergeMode::GeodesicCayley => Some(GeodesicMode::Cayley),
            _ => None,
        }
    }
}

impl fmt::Display for MergeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MergeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "geodesic" => Ok(MergeMode::Geodesic),
            "geodesic-cayley" => Ok(MergeMode::GeodesicCayley),
            "euclid" => Ok(MergeMode::Euclid),
            "fisher" => Ok(MergeMode::Fisher),
            other => Err(Error::Config(format!(
                "unknown mode {other:?}; expected geodesic, geodesic-cayley, euclid or fisher"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MergeOptions {
    pub mode: MergeMode,
    /// Normalized weights, one per input. `None` means uniform.
    pub weights: Option<Vec<f64>>,
    /// Target rank `R`. Geodesic modes lift the inputs; baselines truncate
    /// their output to it.
    pub rank_lift: Option<usize>,
    /// Solver settings; its `weights` and `mode` are overridden per run.
    pub frechet: FrechetConfig,
    /// Task-arithmetic coefficient applied to the merged update.
    pub scale: f64,
    pub seed: u64,
    /// Worker threads for per-layer parallelism. `None` uses the global pool.
    pub jobs: Option<usize>,
    pub rank_policy: RankPolicy,
    pub name: String,
}

impl Default for MergeOptions {
    fn default() -> Self {
        Self {
            mode: MergeMode::Geodesic,
            weights: None,
            rank_lift: None,
            frechet: FrechetConfig::default(),
            scale: 1.0,
            seed: 0,
            jobs: None,
            rank_policy: RankPolicy::Clamp,
            name: "merged".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub name: String,
    pub mode: MergeMode,
    pub iterations: usize,
    pub functional_trace: Vec<f64>,
    pub gradient_trace: Vec<f64>,
    pub converged: bool,
    pub warnings: Vec<String>,
    /// Quotient distance from the merged layer to each (lifted) input.
    pub quotient_residuals: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct MergeOutcome {
    pub bundle: AdapterBundle,
    /// Sorted by layer name.
    pub layers: Vec<LayerReport>,
}

impl MergeOutcome {
    pub fn nonconverged(&self) -> Vec<String> {
        self.layers.iter().filter(|l| !l.converged).map(|l| l.name.clone()).collect()
    }

    /// `Err(NotConverged)` naming the failing layers unless `allow` is set.
    pub fn require_converged(&self, allow: bool) -> Result<()> {
        let bad = self.nonconverged();
        if allow || bad.is_empty() {
            Ok(())
        } else {
            Err(Error::NotConverged(bad))
        }
    }
}

/// Every bundle must have the same layer names, shapes and ranks.
pub fn check_layer_sets(bundles: &[AdapterBundle]) -> Result<()> {
    let first = bundles.first().ok_or(Error::EmptyInput("no input bundles"))?;
    let names = |b: &AdapterBundle| b.layers.iter().map(|l| l.name.clone()).collect::<BTreeSet<_>>();
    let want = names(first);
    for b in &bundles[1..] {
        let got = names(b);
        if got != want {
            let diff: Vec<_> = want.symmetric_difference(&got).cloned().collect();
            return Err(Error::LayerMismatch(format!(
                "bundles {:?} and {:?} differ in layers {}",
                first.name,
                b.name,
                diff.join(", ")
            )));
        }
        for l in &b.layers {
            let f = first.layer(&l.name).expect("same names");
            let (a, c) = ((f.d_out(), f.d_in(), f.rank()), (l.d_out(), l.d_in(), l.rank()));
            if a != c {
                return Err(Error::LayerMismatch(format!(
                    "layer {}: (d_out, d_in, rank) {a:?} in {:?} but {c:?} in {:?}",
                    l.name, first.name, b.name
                )));
            }
        }
    }
    Ok(())
}

fn layer_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add((index as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// `λ · (U B Vᵀ)` with `λ` folded into `B` (and the sign into `U`).
fn fold_scale(p: &PolarPoint, lambda: f64) -> Result<PolarPoint> {
    if lambda == 1.0 {
        return Ok(p.clone());
    }
    let u = if lambda < 0.0 { p.u().matrix().scale(-1.0) } else { p.u().matrix().clone() };
    PolarPoint::new(
        StiefelPoint::new(u)?,
        SpdPoint::new(p.b().matrix().scale(lambda.abs()))?,
        p.v().clone(),
    )
}

fn residuals(mu: &PolarPoint, points: &[PolarPoint]) -> Result<Vec<f64>> {
    points.par_iter().map(|p| quotient_distance(mu, p)).collect()
}

fn lowrank_record(name: &str, p: &PolarPoint) -> Result<LayerRecord> {
    let (g, h) = p.to_lowrank();
    LayerRecord::lowrank(name, g, h)
}

fn merge_layer(index: usize, name: &str, inputs: &[AdapterBundle], weights: &[f64], opts: &MergeOptions) -> Result<(LayerRecord, LayerReport)> {
    let records: Vec<&LayerRecord> = inputs.iter().map(|b| b.layer(name).expect("checked layer sets")).collect();
    let mut warnings = Vec::new();
    let mut points = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        let (p, w) = rec.to_point(opts.rank_policy)?;
        if let Some(w) = w {
            warnings.push(format!("input {i}: {w}"));
        }
        points.push(p);
    }
    let r = points[0].rank();
    let max_rank = points[0].d_out().min(points[0].d_in());
    let target = opts.rank_lift.unwrap_or(r);
    if target < r || target > max_rank {
        return Err(Error::LiftDegenerate(format!(
            "layer {name}: target rank {target} outside {r}..={max_rank}"
        )));
    }

    let mut report = LayerReport {
        name: name.to_string(),
        mode: opts.mode,
        iterations: 0,
        functional_trace: Vec::new(),
        gradient_trace: Vec::new(),
        converged: true,
        warnings: Vec::new(),
        quotient_residuals: Vec::new(),
    };

    let record = match opts.mode.geodesic_mode() {
        Some(mode) => {
            if target > r {
                let cfg = LiftConfig {
                    seed: layer_seed(opts.seed, index),
                    ..LiftConfig::new(target)
                };
                let (lifted, lift_warnings) = lift_adapters(&points, &cfg).map_err(|e| match e {
                    Error::LiftDegenerate(m) | Error::Config(m) => Error::LiftDegenerate(format!("layer {name}: {m}")),
                    other => other,
                })?;
                warnings.extend(lift_warnings);
                points = lifted;
            }
            let cfg = FrechetConfig {
                weights: weights.to_vec(),
                mode,
                ..opts.frechet.clone()
            };
            let (mu, fr): (PolarPoint, FrechetReport) = frechet_mean_quotient(&points, &cfg)?;
            report.iterations = fr.iterations;
            report.functional_trace = fr.functional_trace;
            report.gradient_trace = fr.gradient_trace;
            report.converged = fr.converged;
            warnings.extend(fr.warnings);
            report.quotient_residuals = residuals(&mu, &points)?;
            LayerRecord::polar(name, &fold_scale(&mu, opts.scale)?)
        }
        None if opts.mode == MergeMode::Euclid => {
            let (g, h) = euclid_average_factored(&points, weights, 1.0)?;
            let out = truncate_lowrank(&g, &h, target)?;
            if target == r {
                report.quotient_residuals = residuals(&out, &points)?;
            }
            lowrank_record(name, &fold_scale(&out, opts.scale)?)?
        }
        None => {
            let fishers: Option<Vec<Vec<f64>>> = records.iter().map(|r| r.fisher.clone()).collect();
            let fishers = fishers.ok_or_else(|| Error::Config(format!("layer {name}: fisher mode needs a Fisher tensor on every input")))?;
            let thetas: Vec<Vec<f64>> = records.iter().map(|r| r.to_dense().into_vec()).collect();
            let merged = fisher_merge(&FisherBundle::new(thetas, fishers)?, Some(weights))?;
            if !merged.fallback_coords.is_empty() {
                warnings.push(format!(
                    "{} coordinates had zero total Fisher and use the plain mean",
                    merged.fallback_coords.len()
                ));
            }
            let dense = DenseMatrix::new(points[0].d_out(), points[0].d_in(), merged.theta)?;
            let out = truncate_dense(&dense, target)?;
            if target == r {
                report.quotient_residuals = residuals(&out, &points)?;
            }
            lowrank_record(name, &fold_scale(&out, opts.scale)?)?
        }
    };
    let mut seen = BTreeSet::new();
    report.warnings = warnings.into_iter().filter(|w| seen.insert(w.clone())).collect();
    Ok((record, report))
}

/// Merges matching layers across `inputs`. Non-convergence is reported, not
/// raised; see [`MergeOutcome::require_converged`].
pub fn merge_bundles(inputs: &[AdapterBundle], opts: &MergeOptions) -> Result<MergeOutcome> {
    check_layer_sets(inputs)?;
    if !(opts.scale.is_finite() && opts.scale != 0.0) {
        return Err(Error::Config(format!("scale {} must be finite and nonzero", opts.scale)));
    }
    let weights = match &opts.weights {
        Some(w) => {
            crate::frechet::check_weights(w, inputs.len())?;
            w.clone()
        }
        None => vec![1.0 / inputs.len() as f64; inputs.len()],
    };
    let names: Vec<String> = inputs[0].layers.iter().map(|l| l.name.clone()).collect();
    let run = || -> Result<Vec<(LayerRecord, LayerReport)>> {
        names
            .par_iter()
            .enumerate()
            .map(|(i, name)| merge_layer(i, name, inputs, &weights, opts))
            .collect()
    };
    let results = match opts.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(run)?,
        None => run()?,
    };

    let mut bundle = AdapterBundle::new(opts.name.clone(), inputs[0].base_model.clone());
    bundle.metadata.insert("merge.mode".into(), opts.mode.to_string());
    bundle.metadata.insert("merge.inputs".into(), inputs.iter().map(|b| b.name.as_str()).collect::<Vec<_>>().join(","));
    bundle.metadata.insert("merge.weights".into(), weights.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(","));
    bundle.metadata.insert("merge.scale".into(), opts.scale.to_string());
    let mut layers = Vec::with_capacity(results.len());
    for (rec, rep) in results {
        bundle.push(rec)?;
        layers.push(rep);
    }
    layers.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(MergeOutcome { bundle, layers })
}

/// Quotient distance per layer, sorted by layer name.
pub fn distance_bundles(a: &AdapterBundle, b: &AdapterBundle, policy: RankPolicy) -> Result<Vec<(String, f64)>> {
    check_layer_sets(&[a.clone(), b.clone()])?;
    let mut names: Vec<&str> = a.layers.iter().map(|l| l.name.as_str()).collect();
    names.sort_unstable();
    names
        .par_iter()
        .map(|name| {
            let (p, _) = a.layer(name).expect("checked").to_point(policy)?;
            let (q, _) = b.layer(name).expect("checked").to_point(policy)?;
            Ok((name.to_string(), quotient_distance(&p, &q)?))
        })
        .collect()
}

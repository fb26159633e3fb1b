//! C interface to the `quomerge` core.
//!
//! Every function returns a [`QmStatus`]. On failure the message is kept in a
//! thread-local slot readable through [`qm_last_error`]. Objects cross the
//! boundary as opaque handles that must be released with the matching
//! `*_free` function. Matrices are row-major `double` arrays.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use quomerge::bundle::{read_bundle, write_bundle, AdapterBundle};
use quomerge::frechet::{frechet_mean_quotient, FrechetConfig};
use quomerge::linalg::DenseMatrix;
use quomerge::merge::{distance_bundles, merge_bundles, MergeMode, MergeOptions};
use quomerge::quotient::{from_lowrank, quotient_distance, to_dense, PolarPoint, RankPolicy};
use quomerge::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    LayerMismatch = 3,
    NotConverged = 4,
    LiftDegenerate = 5,
    Io = 6,
    Format = 7,
    Numerical = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QmMergeMode {
    Geodesic = 0,
    GeodesicCayley = 1,
    Euclid = 2,
    Fisher = 3,
}

/// Merge settings. Start from [`qm_merge_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct QmMergeOptions {
    pub mode: QmMergeMode,
    /// Target rank; 0 keeps the input rank.
    pub rank_lift: usize,
    pub alpha: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub scale: f64,
    pub seed: u64,
    /// Worker threads; 0 uses the global pool.
    pub jobs: usize,
    /// Fail on rank-deficient inputs instead of clamping.
    pub strict_rank: bool,
    /// Return the merged bundle even when some layer did not converge.
    pub allow_nonconverged: bool,
}

/// An adapter bundle.
pub struct QmBundle(AdapterBundle);

/// A point of the quotient manifold.
pub struct QmPoint(PolarPoint);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(msg));
}

struct Failure(QmStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::LayerMismatch(_) => QmStatus::LayerMismatch,
            Error::NotConverged(_) => QmStatus::NotConverged,
            Error::LiftDegenerate(_) => QmStatus::LiftDegenerate,
            Error::Io { .. } => QmStatus::Io,
            Error::Manifest { .. }
            | Error::UnsupportedVersion(_)
            | Error::ShapeMismatch { .. }
            | Error::Checksum { .. } => QmStatus::Format,
            Error::Dimension(_)
            | Error::EmptyInput(_)
            | Error::InvalidWeights(_)
            | Error::Config(_)
            | Error::NonFinite(_) => QmStatus::InvalidArgument,
            _ => QmStatus::Numerical,
        };
        Failure(status, e.to_string())
    }
}

fn fail<T>(status: QmStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> QmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
            QmStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            QmStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().map_or_else(|| fail(QmStatus::NullPointer, format!("{what} is null")), Ok)
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().map_or_else(|| fail(QmStatus::NullPointer, format!("{what} is null")), Ok)
}

unsafe fn c_path(p: *const c_char) -> Result<String, Failure> {
    if p.is_null() {
        return fail(QmStatus::NullPointer, "path is null");
    }
    match CStr::from_ptr(p).to_str() {
        Ok(s) => Ok(s.to_string()),
        Err(_) => fail(QmStatus::InvalidArgument, "path is not valid UTF-8"),
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return fail(QmStatus::NullPointer, format!("{what} is null"));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn weights(p: *const f64, n: usize) -> Result<Option<Vec<f64>>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        Ok(Some(std::slice::from_raw_parts(p, n).to_vec()))
    }
}

fn copy_out(src: &[f64], out: *mut f64, len: usize) -> Result<(), Failure> {
    if len < src.len() {
        return fail(QmStatus::BufferTooSmall, format!("buffer holds {len} values, need {}", src.len()));
    }
    if out.is_null() {
        return fail(QmStatus::NullPointer, "output buffer is null");
    }
    unsafe { ptr::copy_nonoverlapping(src.as_ptr(), out, src.len()) };
    Ok(())
}

fn policy(strict: bool) -> RankPolicy {
    if strict {
        RankPolicy::Strict
    } else {
        RankPolicy::Clamp
    }
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn qm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or null after a
/// successful call. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn qm_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qm_bundle_read(path: *const c_char, out: *mut *mut QmBundle) -> QmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let bundle = read_bundle(c_path(path)?)?;
        *out = Box::into_raw(Box::new(QmBundle(bundle)));
        Ok(())
    })
}

/// # Safety
/// `bundle` must come from this library and `path` be nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn qm_bundle_write(bundle: *const QmBundle, path: *const c_char) -> QmStatus {
    guard(|| {
        let b = deref(bundle, "bundle")?;
        write_bundle(&b.0, c_path(path)?)?;
        Ok(())
    })
}

/// # Safety
/// `bundle` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qm_bundle_free(bundle: *mut QmBundle) {
    if !bundle.is_null() {
        drop(Box::from_raw(bundle));
    }
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn qm_bundle_layer_count(bundle: *const QmBundle, out: *mut usize) -> QmStatus {
    guard(|| {
        *out_ptr(out, "out")? = deref(bundle, "bundle")?.0.layers.len();
        Ok(())
    })
}

/// Copies the nul-terminated name of layer `index` into `buf`. `needed`,
/// when non-null, receives the required size including the terminator.
///
/// # Safety
/// `buf` must hold `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn qm_bundle_layer_name(
    bundle: *const QmBundle,
    index: usize,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> QmStatus {
    guard(|| {
        let b = deref(bundle, "bundle")?;
        let Some(layer) = b.0.layers.get(index) else {
            return fail(QmStatus::InvalidArgument, format!("layer index {index} out of range"));
        };
        let name = layer.name.as_bytes();
        if let Some(n) = needed.as_mut() {
            *n = name.len() + 1;
        }
        if len < name.len() + 1 {
            return fail(QmStatus::BufferTooSmall, format!("name needs {} bytes", name.len() + 1));
        }
        if buf.is_null() {
            return fail(QmStatus::NullPointer, "buf is null");
        }
        ptr::copy_nonoverlapping(name.as_ptr().cast(), buf, name.len());
        *buf.add(name.len()) = 0;
        Ok(())
    })
}

/// Output rows, input columns and rank of layer `index`. Null outputs are
/// skipped.
///
/// # Safety
/// Non-null pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn qm_bundle_layer_shape(
    bundle: *const QmBundle,
    index: usize,
    d_out: *mut usize,
    d_in: *mut usize,
    rank: *mut usize,
) -> QmStatus {
    guard(|| {
        let b = deref(bundle, "bundle")?;
        let Some(layer) = b.0.layers.get(index) else {
            return fail(QmStatus::InvalidArgument, format!("layer index {index} out of range"));
        };
        for (p, v) in [(d_out, layer.d_out()), (d_in, layer.d_in()), (rank, layer.rank())] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Writes the dense update of layer `index`, `d_out * d_in` values.
///
/// # Safety
/// `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn qm_bundle_layer_dense(
    bundle: *const QmBundle,
    index: usize,
    out: *mut f64,
    len: usize,
) -> QmStatus {
    guard(|| {
        let b = deref(bundle, "bundle")?;
        let Some(layer) = b.0.layers.get(index) else {
            return fail(QmStatus::InvalidArgument, format!("layer index {index} out of range"));
        };
        copy_out(layer.to_dense().as_slice(), out, len)
    })
}

#[no_mangle]
pub extern "C" fn qm_merge_options_default() -> QmMergeOptions {
    let d = MergeOptions::default();
    QmMergeOptions {
        mode: QmMergeMode::Geodesic,
        rank_lift: 0,
        alpha: d.frechet.alpha,
        tol: d.frechet.tol,
        max_iter: d.frechet.max_iter,
        scale: d.scale,
        seed: d.seed,
        jobs: 0,
        strict_rank: false,
        allow_nonconverged: false,
    }
}

impl QmMergeOptions {
    fn to_options(self, weights: Option<Vec<f64>>) -> MergeOptions {
        let mode = match self.mode {
            QmMergeMode::Geodesic => MergeMode::Geodesic,
            QmMergeMode::GeodesicCayley => MergeMode::GeodesicCayley,
            QmMergeMode::Euclid => MergeMode::Euclid,
            QmMergeMode::Fisher => MergeMode::Fisher,
        };
        MergeOptions {
            mode,
            weights,
            rank_lift: (self.rank_lift > 0).then_some(self.rank_lift),
            frechet: FrechetConfig {
                alpha: self.alpha,
                tol: self.tol,
                max_iter: self.max_iter,
                ..FrechetConfig::default()
            },
            scale: self.scale,
            seed: self.seed,
            jobs: (self.jobs > 0).then_some(self.jobs),
            rank_policy: policy(self.strict_rank),
            ..MergeOptions::default()
        }
    }
}

/// Merges `n` bundles. `weights` may be null for uniform weights; otherwise
/// it holds `n` nonnegative values summing to one. `options` may be null for
/// the defaults.
///
/// # Safety
/// `bundles` must hold `n` valid handles.
#[no_mangle]
pub unsafe extern "C" fn qm_merge(
    bundles: *const *const QmBundle,
    n: usize,
    weights_ptr: *const f64,
    options: *const QmMergeOptions,
    out: *mut *mut QmBundle,
) -> QmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        if n == 0 {
            return fail(QmStatus::InvalidArgument, "no input bundles");
        }
        if bundles.is_null() {
            return fail(QmStatus::NullPointer, "bundles is null");
        }
        let inputs = std::slice::from_raw_parts(bundles, n)
            .iter()
            .map(|&b| deref(b, "bundle").map(|b| b.0.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let o = options.as_ref().copied().unwrap_or_else(|| qm_merge_options_default());
        let outcome = merge_bundles(&inputs, &o.to_options(weights(weights_ptr, n)?))?;
        outcome.require_converged(o.allow_nonconverged)?;
        *out = Box::into_raw(Box::new(QmBundle(outcome.bundle)));
        Ok(())
    })
}

/// Per-layer quotient distance between two bundles with the same layers,
/// written in the layer order of `a`.
///
/// # Safety
/// `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn qm_bundle_distance(
    a: *const QmBundle,
    b: *const QmBundle,
    strict_rank: bool,
    out: *mut f64,
    len: usize,
) -> QmStatus {
    guard(|| {
        let a = deref(a, "a")?;
        let b = deref(b, "b")?;
        let by_name = distance_bundles(&a.0, &b.0, policy(strict_rank))?;
        let ordered: Vec<f64> = a
            .0
            .layers
            .iter()
            .map(|l| by_name.iter().find(|(n, _)| *n == l.name).map_or(f64::NAN, |d| d.1))
            .collect();
        copy_out(&ordered, out, len)
    })
}

/// Builds a point from the low-rank pair `G` (`d_out x r`) and `H`
/// (`d_in x r`), representing `G Hᵀ`.
///
/// # Safety
/// `g` must hold `d_out * r` and `h` `d_in * r` doubles.
#[no_mangle]
pub unsafe extern "C" fn qm_point_from_lowrank(
    g: *const f64,
    d_out: usize,
    h: *const f64,
    d_in: usize,
    r: usize,
    out: *mut *mut QmPoint,
) -> QmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let g = DenseMatrix::new(d_out, r, slice(g, d_out * r, "g")?.to_vec())?;
        let h = DenseMatrix::new(d_in, r, slice(h, d_in * r, "h")?.to_vec())?;
        *out = Box::into_raw(Box::new(QmPoint(from_lowrank(&g, &h)?)));
        Ok(())
    })
}

/// # Safety
/// `point` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qm_point_free(point: *mut QmPoint) {
    if !point.is_null() {
        drop(Box::from_raw(point));
    }
}

/// # Safety
/// Non-null pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn qm_point_shape(
    point: *const QmPoint,
    d_out: *mut usize,
    d_in: *mut usize,
    rank: *mut usize,
) -> QmStatus {
    guard(|| {
        let p = &deref(point, "point")?.0;
        for (ptr, v) in [(d_out, p.d_out()), (d_in, p.d_in()), (rank, p.rank())] {
            if let Some(ptr) = ptr.as_mut() {
                *ptr = v;
            }
        }
        Ok(())
    })
}

/// Writes `U B Vᵀ`, `d_out * d_in` values.
///
/// # Safety
/// `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn qm_point_dense(point: *const QmPoint, out: *mut f64, len: usize) -> QmStatus {
    guard(|| copy_out(to_dense(&deref(point, "point")?.0).as_slice(), out, len))
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn qm_point_distance(p: *const QmPoint, q: *const QmPoint, out: *mut f64) -> QmStatus {
    guard(|| {
        let d = quotient_distance(&deref(p, "p")?.0, &deref(q, "q")?.0)?;
        *out_ptr(out, "out")? = d;
        Ok(())
    })
}

/// Weighted quotient Fréchet mean of `n` points of equal shape and rank.
/// `weights` may be null for uniform weights. `iterations`, when non-null,
/// receives the iteration count. Returns `QM_STATUS_NOT_CONVERGED` without
/// a result if the iteration stops early.
///
/// # Safety
/// `points` must hold `n` valid handles.
#[no_mangle]
pub unsafe extern "C" fn qm_frechet_mean(
    points: *const *const QmPoint,
    n: usize,
    weights_ptr: *const f64,
    iterations: *mut usize,
    out: *mut *mut QmPoint,
) -> QmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        if n == 0 {
            return fail(QmStatus::InvalidArgument, "no input points");
        }
        if points.is_null() {
            return fail(QmStatus::NullPointer, "points is null");
        }
        let pts = std::slice::from_raw_parts(points, n)
            .iter()
            .map(|&p| deref(p, "point").map(|p| p.0.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let config = FrechetConfig {
            weights: weights(weights_ptr, n)?.unwrap_or_default(),
            ..FrechetConfig::default()
        };
        let (mean, report) = frechet_mean_quotient(&pts, &config)?;
        if let Some(it) = iterations.as_mut() {
            *it = report.iterations;
        }
        if !report.converged {
            return fail(QmStatus::NotConverged, format!("no convergence after {} iterations", report.iterations));
        }
        *out = Box::into_raw(Box::new(QmPoint(mean)));
        Ok(())
    })
}

//! Adapter bundles on disk: a directory holding `manifest.json` and one raw
//! little-endian row-major `.bin` file per tensor.
//!
//! ```text
//! bundle/
//!   manifest.json
//!   000-q_proj.g.bin
//!   000-q_proj.h.bin
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{svd_thin, DenseMatrix};
use crate::manifolds::{orthonormality_defect, STIEFEL_TOL};
use crate::quotient::{from_lowrank_with, PolarPoint, RankPolicy};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Stored polar frames whose orthonormality defect is below this are
/// re-orthonormalized on load instead of rejected (covers `f32` storage).
pub const REORTHO_TOL: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    #[default]
    F64,
}

impl Dtype {
    fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Representation {
    /// `ΔW = G Hᵀ`.
    LowRank { g: DenseMatrix, h: DenseMatrix },
    /// `ΔW = U B Vᵀ`.
    Polar {
        u: DenseMatrix,
        b: DenseMatrix,
        v: DenseMatrix,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerRecord {
    pub name: String,
    pub repr: Representation,
    /// Diagonal Fisher of the dense update, row-major `d_out x d_in`.
    pub fisher: Option<Vec<f64>>,
    pub scale: f64,
    pub dtype: Dtype,
}

impl LayerRecord {
    pub fn lowrank(name: impl Into<String>, g: DenseMatrix, h: DenseMatrix) -> Result<Self> {
        let rec = Self {
            name: name.into(),
            repr: Representation::LowRank { g, h },
            fisher: None,
            scale: 1.0,
            dtype: Dtype::F64,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn polar(name: impl Into<String>, p: &PolarPoint) -> Self {
        Self {
            name: name.into(),
            repr: Representation::Polar {
                u: p.u().matrix().clone(),
                b: p.b().matrix().clone(),
                v: p.v().matrix().clone(),
            },
            fisher: None,
            scale: 1.0,
            dtype: Dtype::F64,
        }
    }

    pub fn d_out(&self) -> usize {
        match &self.repr {
            Representation::LowRank { g, .. } => g.rows(),
            Representation::Polar { u, .. } => u.rows(),
        }
    }

    pub fn d_in(&self) -> usize {
        match &self.repr {
            Representation::LowRank { h, .. } => h.rows(),
            Representation::Polar { v, .. } => v.rows(),
        }
    }

    pub fn rank(&self) -> usize {
        match &self.repr {
            Representation::LowRank { g, .. } => g.cols(),
            Representation::Polar { u, .. } => u.cols(),
        }
    }

    pub fn is_polar(&self) -> bool {
        matches!(self.repr, Representation::Polar { .. })
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::dim("layer name is empty"));
        }
        let (d_out, d_in, r) = (self.d_out(), self.d_in(), self.rank());
        let ok = match &self.repr {
            Representation::LowRank { g, h } => h.cols() == r && g.rows() == d_out,
            Representation::Polar { u, b, v } => b.shape() == (r, r) && v.cols() == r && u.rows() == d_out,
        };
        if !ok {
            return Err(Error::dim(format!("layer {}: factor shapes disagree", self.name)));
        }
        if r == 0 || r > d_out.min(d_in) {
            return Err(Error::dim(format!(
                "layer {}: rank {r} outside 1..={}",
                self.name,
                d_out.min(d_in)
            )));
        }
        if let Some(f) = &self.fisher {
            if f.len() != d_out * d_in {
                return Err(Error::dim(format!(
                    "layer {}: Fisher vector has {} entries, expected {}",
                    self.name,
                    f.len(),
                    d_out * d_in
                )));
            }
        }
        if !(self.scale.is_finite() && self.scale != 0.0) {
            return Err(Error::Domain(format!("layer {}: scale must be finite and nonzero", self.name)));
        }
        Ok(())
    }

    /// Polar point of `scale · ΔW`, with a warning if singular values were
    /// clamped or stored frames were re-orthonormalized.
    pub fn to_point(&self, policy: RankPolicy) -> Result<(PolarPoint, Option<String>)> {
        self.validate()?;
        match &self.repr {
            Representation::LowRank { g, h } => from_lowrank_with(&g.scale(self.scale), h, policy),
            Representation::Polar { u, b, v } => {
                let mut notes = Vec::new();
                let u = self.frame(u, "U", &mut notes)?;
                let v = self.frame(v, "V", &mut notes)?;
                let u = if self.scale < 0.0 { u.scale(-1.0) } else { u };
                let b = b.scale(self.scale.abs());
                let p = PolarPoint::from_factors(u, b.sym(), v)?;
                Ok((p, (!notes.is_empty()).then(|| notes.join("; "))))
            }
        }
    }

    fn frame(&self, m: &DenseMatrix, which: &str, notes: &mut Vec<String>) -> Result<DenseMatrix> {
        let defect = orthonormality_defect(m);
        if defect <= STIEFEL_TOL {
            return Ok(m.clone());
        }
        if defect <= REORTHO_TOL {
            let svd = svd_thin(m);
            notes.push(format!("{which} re-orthonormalized (defect {defect:.2e})"));
            return Ok(svd.u.matmul_tr(&svd.v));
        }
        Err(Error::Domain(format!(
            "layer {}: stored {which} is not orthonormal (defect {defect:.3e})",
            self.name
        )))
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let m = match &self.repr {
            Representation::LowRank { g, h } => g.matmul_tr(h),
            Representation::Polar { u, b, v } => u.matmul(b).matmul_tr(v),
        };
        m.scale(self.scale)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdapterBundle {
    pub name: String,
    pub base_model: String,
    pub layers: Vec<LayerRecord>,
    pub metadata: BTreeMap<String, String>,
}

impl AdapterBundle {
    pub fn new(name: impl Into<String>, base_model: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            base_model: base_model.into(),
            ..Self::default()
        }
    }

    pub fn push(&mut self, layer: LayerRecord) -> Result<()> {
        layer.validate()?;
        if self.layer(&layer.name).is_some() {
            return Err(Error::dim(format!("duplicate layer name {}", layer.name)));
        }
        self.layers.push(layer);
        Ok(())
    }

    pub fn layer(&self, name: &str) -> Option<&LayerRecord> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for l in &self.layers {
            l.validate()?;
            if !seen.insert(l.name.as_str()) {
                return Err(Error::dim(format!("duplicate layer name {}", l.name)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    file: String,
    dtype: Dtype,
    shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    crc32c: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum ReprKind {
    Lowrank,
    Polar,
}

fn default_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerEntry {
    name: String,
    d_out: usize,
    d_in: usize,
    rank: usize,
    representation: ReprKind,
    #[serde(default = "default_scale")]
    scale: f64,
    tensors: BTreeMap<String, TensorEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fisher: Option<TensorEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    name: String,
    base_model: String,
    layers: Vec<LayerEntry>,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
}

fn manifest_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Manifest {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn tensor_keys(kind: ReprKind) -> &'static [&'static str] {
    match kind {
        ReprKind::Lowrank => &["g", "h"],
        ReprKind::Polar => &["u", "b", "v"],
    }
}

fn decode(bytes: &[u8], dtype: Dtype) -> Vec<f64> {
    match dtype {
        Dtype::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64)
            .collect(),
        Dtype::F64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect(),
    }
}

fn encode(values: &[f64], dtype: Dtype) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * dtype.size());
    for &x in values {
        match dtype {
            Dtype::F32 => out.extend_from_slice(&(x as f32).to_le_bytes()),
            Dtype::F64 => out.extend_from_slice(&x.to_le_bytes()),
        }
    }
    out
}

fn load_tensor(dir: &Path, manifest: &Path, entry: &TensorEntry, want: &[usize]) -> Result<Vec<f64>> {
    if entry.file.is_empty() || entry.file.contains(['/', '\\']) || entry.file == ".." || entry.file == "." {
        return Err(manifest_err(manifest, format!("tensor file name {:?} is not a plain file name", entry.file)));
    }
    if entry.shape != want {
        return Err(manifest_err(
            manifest,
            format!("{}: shape {:?} does not match layer dimensions {want:?}", entry.file, entry.shape),
        ));
    }
    let path = dir.join(&entry.file);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let expected_bytes = entry.shape.iter().product::<usize>() * entry.dtype.size();
    if bytes.len() != expected_bytes {
        return Err(Error::ShapeMismatch {
            file: path,
            declared: entry.shape.clone(),
            expected_bytes,
            found_bytes: bytes.len(),
        });
    }
    if let Some(expected) = entry.crc32c {
        let found = crc32c::crc32c(&bytes);
        if found != expected {
            return Err(Error::Checksum {
                file: path,
                expected,
                found,
            });
        }
    }
    let values = decode(&bytes, entry.dtype);
    if values.iter().any(|x| !x.is_finite()) {
        return Err(manifest_err(manifest, format!("{} contains non-finite values", entry.file)));
    }
    Ok(values)
}

/// Loads and validates a bundle. Nothing is returned unless every tensor
/// loads and checks out.
pub fn read_bundle(path: impl AsRef<Path>) -> Result<AdapterBundle> {
    let dir = path.as_ref();
    let mpath = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| manifest_err(&mpath, e.to_string()))?;
    let version = raw
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| manifest_err(&mpath, "missing format_version"))?;
    if version != FORMAT_VERSION as u64 {
        return Err(Error::UnsupportedVersion(version.min(u32::MAX as u64) as u32));
    }
    let manifest: Manifest = serde_json::from_value(raw).map_err(|e| manifest_err(&mpath, e.to_string()))?;

    let mut bundle = AdapterBundle::new(manifest.name, manifest.base_model);
    bundle.metadata = manifest.metadata;
    for entry in manifest.layers {
        let keys = tensor_keys(entry.representation);
        if entry.tensors.len() != keys.len() || keys.iter().any(|k| !entry.tensors.contains_key(*k)) {
            return Err(manifest_err(
                &mpath,
                format!("layer {}: {:?} layers need tensors {keys:?}", entry.name, entry.representation),
            ));
        }
        let dtype = entry.tensors[keys[0]].dtype;
        if entry.tensors.values().any(|t| t.dtype != dtype) {
            return Err(manifest_err(&mpath, format!("layer {}: mixed dtypes", entry.name)));
        }
        let (d_out, d_in, r) = (entry.d_out, entry.d_in, entry.rank);
        let load = |key: &str, rows: usize, cols: usize| -> Result<DenseMatrix> {
            let data = load_tensor(dir, &mpath, &entry.tensors[key], &[rows, cols])?;
            DenseMatrix::new(rows, cols, data)
        };
        let repr = match entry.representation {
            ReprKind::Lowrank => Representation::LowRank {
                g: load("g", d_out, r)?,
                h: load("h", d_in, r)?,
            },
            ReprKind::Polar => Representation::Polar {
                u: load("u", d_out, r)?,
                b: load("b", r, r)?,
                v: load("v", d_in, r)?,
            },
        };
        let fisher = match &entry.fisher {
            Some(t) => Some(load_tensor(dir, &mpath, t, &[d_out, d_in])?),
            None => None,
        };
        let layer = LayerRecord {
            name: entry.name,
            repr,
            fisher,
            scale: entry.scale,
            dtype,
        };
        bundle.push(layer).map_err(|e| manifest_err(&mpath, e.to_string()))?;
    }
    Ok(bundle)
}

fn file_stem(index: usize, name: &str) -> String {
    let clean: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') { c } else { '_' })
        .collect();
    format!("{index:03}-{clean}")
}

/// Manifest plus file contents, in write order.
fn render(bundle: &AdapterBundle) -> Result<(String, Vec<(String, Vec<u8>)>)> {
    bundle.validate()?;
    let mut files = Vec::new();
    let mut layers = Vec::new();
    for (i, l) in bundle.layers.iter().enumerate() {
        let stem = file_stem(i, &l.name);
        let mut add = |key: &str, shape: Vec<usize>, values: &[f64]| {
            let file = format!("{stem}.{key}.bin");
            let bytes = encode(values, l.dtype);
            let entry = TensorEntry {
                file: file.clone(),
                dtype: l.dtype,
                shape,
                crc32c: Some(crc32c::crc32c(&bytes)),
            };
            files.push((file, bytes));
            entry
        };
        let mut tensors = BTreeMap::new();
        let representation = match &l.repr {
            Representation::LowRank { g, h } => {
                tensors.insert("g".to_string(), add("g", vec![g.rows(), g.cols()], g.as_slice()));
                tensors.insert("h".to_string(), add("h", vec![h.rows(), h.cols()], h.as_slice()));
                ReprKind::Lowrank
            }
            Representation::Polar { u, b, v } => {
                tensors.insert("u".to_string(), add("u", vec![u.rows(), u.cols()], u.as_slice()));
                tensors.insert("b".to_string(), add("b", vec![b.rows(), b.cols()], b.as_slice()));
                tensors.insert("v".to_string(), add("v", vec![v.rows(), v.cols()], v.as_slice()));
                ReprKind::Polar
            }
        };
        let fisher = l.fisher.as_ref().map(|f| add("fisher", vec![l.d_out(), l.d_in()], f));
        layers.push(LayerEntry {
            name: l.name.clone(),
            d_out: l.d_out(),
            d_in: l.d_in(),
            rank: l.rank(),
            representation,
            scale: l.scale,
            tensors,
            fisher,
        });
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        name: bundle.name.clone(),
        base_model: bundle.base_model.clone(),
        layers,
        metadata: bundle.metadata.clone(),
    };
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    text.push('\n');
    Ok((text, files))
}

static TMP_COUNTER: AtomicUsize = AtomicUsize::new(0);

/// Writes into a sibling temporary directory and renames it into place. An
/// existing bundle at `path` is replaced; any other non-empty directory is
/// left alone and reported.
pub fn write_bundle(bundle: &AdapterBundle, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (manifest, files) = render(bundle)?;
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let leaf = path
        .file_name()
        .ok_or_else(|| Error::io(path, std::io::Error::new(std::io::ErrorKind::InvalidInput, "no file name")))?;
    let tmp = parent.join(format!(
        ".{}.tmp-{}-{}",
        leaf.to_string_lossy(),
        std::process::id(),
        TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    let result = (|| {
        fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        for (name, bytes) in &files {
            let p = tmp.join(name);
            fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
        }
        let mp = tmp.join(MANIFEST_FILE);
        fs::write(&mp, manifest.as_bytes()).map_err(|e| Error::io(&mp, e))?;
        clear_destination(path)?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    })();
    if result.is_err() {
        let _ = fs::remove_dir_all(&tmp);
    }
    result
}

fn clear_destination(path: &Path) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    if path.join(MANIFEST_FILE).is_file() {
        return fs::remove_dir_all(path).map_err(|e| Error::io(path, e));
    }
    let empty = path.is_dir() && fs::read_dir(path).map_err(|e| Error::io(path, e))?.next().is_none();
    if empty {
        return fs::remove_dir(path).map_err(|e| Error::io(path, e));
    }
    Err(Error::io(
        path,
        std::io::Error::new(std::io::ErrorKind::AlreadyExists, "destination exists and is not a bundle"),
    ))
}

/// Converts every layer to polar form with its scale folded into `B`.
/// Returns per-layer warnings as `(layer, message)`.
pub fn to_polar_bundle(bundle: &AdapterBundle, policy: RankPolicy) -> Result<(AdapterBundle, Vec<(String, String)>)> {
    let mut out = AdapterBundle::new(bundle.name.clone(), bundle.base_model.clone());
    out.metadata = bundle.metadata.clone();
    let mut warnings = Vec::new();
    for l in &bundle.layers {
        if l.is_polar() && l.scale == 1.0 {
            out.push(l.clone())?;
            continue;
        }
        let (p, warning) = l.to_point(policy)?;
        if let Some(w) = warning {
            warnings.push((l.name.clone(), w));
        }
        let mut rec = LayerRecord::polar(l.name.clone(), &p);
        rec.fisher = l.fisher.clone();
        rec.dtype = l.dtype;
        out.push(rec)?;
    }
    Ok((out, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::random::{gaussian, Rng};
    use crate::quotient::{quotient_distance, to_dense};

    fn fixture(seed: u64) -> AdapterBundle {
        let mut rng = Rng::seeded(seed);
        let mut b = AdapterBundle::new("fixture", "base-1");
        b.metadata.insert("task".into(), "unit".into());
        b.push(LayerRecord::lowrank("blocks.0/attn q", gaussian(6, 2, &mut rng), gaussian(5, 2, &mut rng)).unwrap())
            .unwrap();
        let mut l = LayerRecord::lowrank("blocks.0.mlp", gaussian(4, 3, &mut rng), gaussian(7, 3, &mut rng)).unwrap();
        l.fisher = Some((0..28).map(|i| i as f64 * 0.25).collect());
        l.scale = 0.5;
        b.push(l).unwrap();
        let p = crate::synth::random_point(5, 4, 2, &mut rng);
        b.push(LayerRecord::polar("head", &p)).unwrap();
        b
    }

    fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
        fs::read_dir(dir)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
            })
            .collect()
    }

    #[test]
    fn roundtrip_is_byte_stable() {
        let tmp = tempfile::tempdir().unwrap();
        let b = fixture(1);
        let a = tmp.path().join("a");
        write_bundle(&b, &a).unwrap();
        let back = read_bundle(&a).unwrap();
        assert_eq!(back, b);
        let c = tmp.path().join("c");
        write_bundle(&back, &c).unwrap();
        assert_eq!(files(&a), files(&c));
        // Overwriting an existing bundle works and stays identical.
        write_bundle(&back, &a).unwrap();
        assert_eq!(files(&a), files(&c));
        let leftovers: Vec<_> = fs::read_dir(tmp.path())
            .unwrap()
            .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with('.'))
            .collect();
        assert!(leftovers.is_empty());
    }

    #[test]
    fn manifest_field_order() {
        let tmp = tempfile::tempdir().unwrap();
        write_bundle(&fixture(2), tmp.path().join("b")).unwrap();
        let text = fs::read_to_string(tmp.path().join("b").join(MANIFEST_FILE)).unwrap();
        let pos: Vec<_> = ["\"format_version\"", "\"name\"", "\"base_model\"", "\"layers\"", "\"metadata\""]
            .iter()
            .map(|k| text.find(k).unwrap())
            .collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn f32_roundtrip() {
        let tmp = tempfile::tempdir().unwrap();
        let mut b = fixture(3);
        for l in &mut b.layers {
            l.dtype = Dtype::F32;
        }
        write_bundle(&b, tmp.path().join("a")).unwrap();
        let back = read_bundle(tmp.path().join("a")).unwrap();
        write_bundle(&back, tmp.path().join("b")).unwrap();
        assert_eq!(files(&tmp.path().join("a")), files(&tmp.path().join("b")));
        let (p, _) = back.layer("head").unwrap().to_point(RankPolicy::Clamp).unwrap();
        assert!((&to_dense(&p) - &b.layer("head").unwrap().to_dense()).max_abs() < 1e-5);
    }

    fn edit_manifest(dir: &Path, f: impl FnOnce(&mut serde_json::Value)) {
        let mp = dir.join(MANIFEST_FILE);
        let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&mp).unwrap()).unwrap();
        f(&mut v);
        fs::write(&mp, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let tmp = tempfile::tempdir().unwrap();
        let mut rng = Rng::seeded(4);
        let mut b = AdapterBundle::new("x", "base");
        b.push(LayerRecord::lowrank("l", gaussian(3, 2, &mut rng), gaussian(3, 2, &mut rng)).unwrap())
            .unwrap();
        let dir = tmp.path().join("b");
        write_bundle(&b, &dir).unwrap();
        edit_manifest(&dir, |v| {
            v["layers"][0]["d_out"] = 4.into();
            v["layers"][0]["tensors"]["g"]["shape"] = serde_json::json!([4, 2]);
        });
        assert!(matches!(read_bundle(&dir), Err(Error::ShapeMismatch { found_bytes: 48, expected_bytes: 64, .. })));
    }

    #[test]
    fn checksum_version_and_missing_file() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("b");
        write_bundle(&fixture(5), &dir).unwrap();
        let victim = dir.join("002-head.b.bin");
        let mut bytes = fs::read(&victim).unwrap();
        bytes[0] ^= 1;
        fs::write(&victim, &bytes).unwrap();
        assert!(matches!(read_bundle(&dir), Err(Error::Checksum { .. })));

        write_bundle(&fixture(5), &dir).unwrap();
        edit_manifest(&dir, |v| v["format_version"] = 7.into());
        assert!(matches!(read_bundle(&dir), Err(Error::UnsupportedVersion(7))));

        write_bundle(&fixture(5), &dir).unwrap();
        fs::remove_file(dir.join("000-blocks.0_attn_q.h.bin")).unwrap();
        assert!(matches!(read_bundle(&dir), Err(Error::Io { .. })));

        assert!(matches!(read_bundle(tmp.path().join("nothing")), Err(Error::Io { .. })));

        write_bundle(&fixture(5), &dir).unwrap();
        edit_manifest(&dir, |v| v["layers"][0]["tensors"]["g"]["file"] = "../escape.bin".into());
        assert!(matches!(read_bundle(&dir), Err(Error::Manifest { .. })));
    }

    #[test]
    fn refuses_to_clobber_foreign_directory() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("busy");
        fs::create_dir(&dir).unwrap();
        fs::write(dir.join("keep.txt"), b"x").unwrap();
        assert!(write_bundle(&fixture(6), &dir).is_err());
        assert_eq!(fs::read(dir.join("keep.txt")).unwrap(), b"x");
    }

    #[test]
    fn polar_conversion() {
        let b = fixture(7);
        let (p, warnings) = to_polar_bundle(&b, RankPolicy::Clamp).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(p.layer("head"), b.layer("head"));
        for (orig, conv) in b.layers.iter().zip(&p.layers) {
            assert!(conv.is_polar());
            assert_eq!(conv.scale, 1.0);
            let d = orig.to_dense();
            assert!((&conv.to_dense() - &d).norm_fro() <= 1e-9 * d.norm_fro());
        }
        assert_eq!(p.layers[1].fisher, b.layers[1].fisher);
        let (again, _) = to_polar_bundle(&p, RankPolicy::Clamp).unwrap();
        assert_eq!(again, p);
    }

    #[test]
    fn gl_gauged_copy_converts_to_same_orbit() {
        let mut rng = Rng::seeded(8);
        let g = gaussian(9, 3, &mut rng);
        let h = gaussian(8, 3, &mut rng);
        let a = gaussian(3, 3, &mut rng).add_scaled(&DenseMatrix::identity(3), 2.0);
        let ainv_t = a.inverse().unwrap().transpose();
        let l1 = LayerRecord::lowrank("l", g.clone(), h.clone()).unwrap();
        let l2 = LayerRecord::lowrank("l", g.matmul(&a), h.matmul(&ainv_t)).unwrap();
        let (p1, _) = l1.to_point(RankPolicy::Clamp).unwrap();
        let (p2, _) = l2.to_point(RankPolicy::Clamp).unwrap();
        assert!(quotient_distance(&p1, &p2).unwrap() < 1e-8);
    }

    #[test]
    fn negative_scale_on_polar_layer() {
        let mut rng = Rng::seeded(9);
        let p = crate::synth::random_point(6, 5, 2, &mut rng);
        let mut l = LayerRecord::polar("l", &p);
        l.scale = -2.0;
        let (q, _) = l.to_point(RankPolicy::Clamp).unwrap();
        assert!((&to_dense(&q) - &to_dense(&p).scale(-2.0)).max_abs() < 1e-12);
    }
}

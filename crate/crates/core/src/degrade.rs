//! Synthetic degradation and paired datasets.
//!
//! Two degradations are provided:
//!
//! * a translucent-film model: per layer, Gaussian blur, a blend toward a
//!   global light colour (scatter), and a mean-preserving contrast reduction;
//! * atmospheric scattering haze `I = J·t + A·(1 - t)`.
//!
//! Datasets are directories of lossless PNGs plus a JSON manifest whose paths
//! are relative to the manifest file.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::gaussian_blur;
use crate::tensor::ImageTensor;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilmFilterParams {
    pub layers: u32,
    pub blur_sigma: f64,
    pub scatter_alpha: f64,
    pub contrast_gain: f64,
    pub light_color: [f64; 3],
    pub seed: u64,
    /// Std of seeded Gaussian grain added per layer; 0 disables it.
    #[serde(default)]
    pub grain: f64,
}

impl Default for FilmFilterParams {
    fn default() -> Self {
        Self {
            layers: 1,
            blur_sigma: 1.2,
            scatter_alpha: 0.22,
            contrast_gain: 0.8,
            light_color: [0.86, 0.86, 0.84],
            seed: 0,
            grain: 0.0,
        }
    }
}

impl FilmFilterParams {
    pub fn with_layers(layers: u32) -> Self {
        Self {
            layers,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers < 1 {
            return Err(Error::validation("layers", "must be >= 1"));
        }
        if !(self.blur_sigma > 0.0 && self.blur_sigma.is_finite()) {
            return Err(Error::validation(
                "blur_sigma",
                format!("must be > 0, got {}", self.blur_sigma),
            ));
        }
        if !(0.0..1.0).contains(&self.scatter_alpha) {
            return Err(Error::validation(
                "scatter_alpha",
                format!("must be in [0, 1), got {}", self.scatter_alpha),
            ));
        }
        if !(self.contrast_gain > 0.0 && self.contrast_gain <= 1.0) {
            return Err(Error::validation(
                "contrast_gain",
                format!("must be in (0, 1], got {}", self.contrast_gain),
            ));
        }
        if self.light_color.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::validation("light_color", "components must be in [0, 1]"));
        }
        if !(self.grain >= 0.0 && self.grain.is_finite()) {
            return Err(Error::validation("grain", "must be >= 0"));
        }
        Ok(())
    }
}

pub fn apply_film_filter(img: &ImageTensor, p: &FilmFilterParams) -> Result<ImageTensor> {
    p.validate()?;
    img.ensure_channels(&[3])?;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut out = img.clone();
    for _ in 0..p.layers {
        out = gaussian_blur(&out, p.blur_sigma)?;
        let a = p.scatter_alpha;
        for px in out.as_mut_slice().chunks_exact_mut(3) {
            for (v, l) in px.iter_mut().zip(p.light_color) {
                *v = (1.0 - a) * *v + a * l;
            }
        }
        let n = out.pixels() as f64;
        let mut mean = [0.0; 3];
        for px in out.as_slice().chunks_exact(3) {
            for c in 0..3 {
                mean[c] += px[c];
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        for px in out.as_mut_slice().chunks_exact_mut(3) {
            for c in 0..3 {
                px[c] = mean[c] + p.contrast_gain * (px[c] - mean[c]);
            }
        }
        if p.grain > 0.0 {
            let normal = Normal::new(0.0, p.grain).expect("validated grain");
            for v in out.as_mut_slice() {
                *v += normal.sample(&mut rng);
            }
        }
        out = out.clamp01();
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Transmission {
    Constant(f64),
    /// Single-channel map with the image's height and width.
    PerPixel(ImageTensor),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HazeParams {
    pub atmospheric_light: [f64; 3],
    pub transmission: Transmission,
}

impl HazeParams {
    pub fn constant(t: f64, a: [f64; 3]) -> Self {
        Self {
            atmospheric_light: a,
            transmission: Transmission::Constant(t),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.atmospheric_light.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::validation("atmospheric_light", "components must be in [0, 1]"));
        }
        let ok = |t: f64| t > 0.0 && t <= 1.0;
        match &self.transmission {
            Transmission::Constant(t) if !ok(*t) => {
                Err(Error::validation("transmission", format!("must be in (0, 1], got {t}")))
            }
            Transmission::PerPixel(m) if m.channels() != 1 || !m.as_slice().iter().all(|&t| ok(t)) => Err(
                Error::validation("transmission", "map must be single-channel with values in (0, 1]"),
            ),
            _ => Ok(()),
        }
    }
}

pub fn synthesize_haze(clear: &ImageTensor, h: &HazeParams) -> Result<ImageTensor> {
    h.validate()?;
    clear.ensure_channels(&[3])?;
    if let Transmission::PerPixel(m) = &h.transmission {
        if (m.height(), m.width()) != (clear.height(), clear.width()) {
            return Err(Error::ShapeMismatch {
                left: clear.shape().to_string(),
                right: format!("transmission {}", m.shape()),
            });
        }
    }
    let a = h.atmospheric_light;
    Ok(ImageTensor::from_fn(clear.height(), clear.width(), 3, |y, x, c| {
        let t = match &h.transmission {
            Transmission::Constant(t) => *t,
            Transmission::PerPixel(m) => m.get(y, x, 0),
        };
        (clear.get(y, x, c) * t + a[c] * (1.0 - t)).clamp(0.0, 1.0)
    }))
}

/// One item of a generation spec.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Degradation {
    Film(FilmFilterParams),
    Haze(HazeParams),
}

impl Degradation {
    pub fn apply(&self, img: &ImageTensor) -> Result<ImageTensor> {
        match self {
            Degradation::Film(p) => apply_film_filter(img, p),
            Degradation::Haze(h) => synthesize_haze(img, h),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Degradation::Film(p) => p.validate(),
            Degradation::Haze(h) => h.validate(),
        }
    }

    /// Condition labels recorded in the manifest.
    pub fn conditions(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        match self {
            Degradation::Film(p) => {
                m.insert("filter".into(), "film".into());
                m.insert("layers".into(), p.layers.to_string());
            }
            Degradation::Haze(h) => {
                m.insert("filter".into(), "haze".into());
                if let Transmission::Constant(t) = h.transmission {
                    m.insert("transmission".into(), format!("{t}"));
                }
            }
        }
        m
    }

    /// The film layer sweep 1, 2, 3 with default optics.
    pub fn film_layer_sweep() -> Vec<Degradation> {
        (1..=3)
            .map(|l| Degradation::Film(FilmFilterParams::with_layers(l)))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub clear: PathBuf,
    pub degraded: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<Degradation>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub conditions: BTreeMap<String, String>,
    /// Optional pre-computed enhanced image.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enhanced: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Self {
        Self {
            schema_version: MANIFEST_SCHEMA_VERSION,
            seed: None,
            entries,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::validation(
                "schema_version",
                format!("unsupported manifest version {}", self.schema_version),
            ));
        }
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::validation("entries", format!("duplicate sample id `{}`", e.id)));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let m: DatasetManifest = serde_json::from_slice(&bytes)?;
        m.validate()?;
        Ok(m)
    }
}

/// A decoded (clear, degraded) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedSample {
    pub id: String,
    pub clear: ImageTensor,
    pub degraded: ImageTensor,
    pub conditions: BTreeMap<String, String>,
}

impl PairedSample {
    pub fn new(id: impl Into<String>, clear: ImageTensor, degraded: ImageTensor) -> Result<Self> {
        clear.ensure_same_shape(&degraded)?;
        Ok(Self {
            id: id.into(),
            clear,
            degraded,
            conditions: BTreeMap::new(),
        })
    }
}

fn manifest_dir(manifest: &Path) -> PathBuf {
    manifest
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

/// Loads every pair of a manifest, in manifest order.
pub fn ingest_paired_dataset(manifest: impl AsRef<Path>) -> Result<Vec<PairedSample>> {
    let manifest = manifest.as_ref();
    let m = DatasetManifest::load(manifest)?;
    let root = manifest_dir(manifest);
    m.entries
        .iter()
        .map(|e| {
            let load = |rel: &Path| {
                let p = root.join(rel);
                if !p.is_file() {
                    return Err(Error::Sample {
                        id: e.id.clone(),
                        reason: format!("missing file {}", p.display()),
                    });
                }
                ImageTensor::load(&p).map_err(|err| Error::Sample {
                    id: e.id.clone(),
                    reason: err.to_string(),
                })
            };
            let clear = load(&e.clear)?;
            let degraded = load(&e.degraded)?;
            if clear.shape() != degraded.shape() {
                return Err(Error::Sample {
                    id: e.id.clone(),
                    reason: format!("clear is {} but degraded is {}", clear.shape(), degraded.shape()),
                });
            }
            Ok(PairedSample {
                id: e.id.clone(),
                clear,
                degraded,
                conditions: e.conditions.clone(),
            })
        })
        .collect()
}

/// Writes in-memory pairs as `clear/<id>.png`, `degraded/<id>.png` and a
/// manifest under `dir`; returns the manifest path.
pub fn write_paired_dataset(samples: &[PairedSample], dir: impl AsRef<Path>, seed: Option<u64>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let mut entries = Vec::with_capacity(samples.len());
    for s in samples {
        let clear = PathBuf::from("clear").join(format!("{}.png", s.id));
        let degraded = PathBuf::from("degraded").join(format!("{}.png", s.id));
        s.clear.save_png(dir.join(&clear))?;
        s.degraded.save_png(dir.join(&degraded))?;
        entries.push(ManifestEntry {
            id: s.id.clone(),
            clear,
            degraded,
            params: None,
            conditions: s.conditions.clone(),
            enhanced: None,
        });
    }
    let manifest = DatasetManifest {
        seed,
        ..DatasetManifest::new(entries)
    };
    manifest.validate()?;
    let path = dir.join(MANIFEST_FILE);
    manifest.save(&path)?;
    Ok(path)
}

/// Builds a manifest for `<root>/clear/<name>.<ext>` + `<root>/shadow/<name>.<ext>`.
pub fn manifest_from_paired_dir(root: impl AsRef<Path>) -> Result<DatasetManifest> {
    let root = root.as_ref();
    let clear = list_files(&root.join("clear"))?;
    let shadow = list_files(&root.join("shadow"))?;
    let by_stem: BTreeMap<String, &PathBuf> = shadow.iter().map(|p| (file_stem(p), p)).collect();
    let mut entries = Vec::new();
    for c in &clear {
        let stem = file_stem(c);
        if let Some(s) = by_stem.get(&stem) {
            entries.push(ManifestEntry {
                id: stem,
                clear: PathBuf::from("clear").join(c.file_name().expect("file")),
                degraded: PathBuf::from("shadow").join(s.file_name().expect("file")),
                params: None,
                conditions: BTreeMap::new(),
                enhanced: None,
            });
        }
    }
    let m = DatasetManifest::new(entries);
    m.validate()?;
    Ok(m)
}

fn file_stem(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Regular, non-hidden files of a directory, sorted by name.
pub fn list_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        let hidden = entry.file_name().to_string_lossy().starts_with('.');
        if path.is_file() && !hidden {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

#[derive(Clone, Debug)]
pub struct GenerateOutcome {
    pub manifest: DatasetManifest,
    pub manifest_path: PathBuf,
    /// Inputs that could not be used, with the reason.
    pub skipped: Vec<(PathBuf, String)>,
}

fn seed_for(base: u64, id: &str) -> u64 {
    // FNV-1a over the id, mixed into the base seed
    let mut h: u64 = 0xcbf29ce484222325;
    for b in id.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100000001b3);
    }
    base ^ h
}

/// Degrades every image of `clear_dir` with every spec item and writes
/// `clear/`, `degraded/` and `manifest.json` under `out_dir`.
pub fn generate_dataset(
    clear_dir: impl AsRef<Path>,
    specs: &[Degradation],
    out_dir: impl AsRef<Path>,
    seed: u64,
) -> Result<GenerateOutcome> {
    let clear_dir = clear_dir.as_ref();
    let out_dir = out_dir.as_ref();
    if specs.is_empty() {
        return Err(Error::validation("spec", "at least one degradation is required"));
    }
    for s in specs {
        s.validate()?;
    }
    let inputs = list_files(clear_dir)?;
    if inputs.is_empty() {
        return Err(Error::validation(
            "clear_dir",
            format!("{} contains no images", clear_dir.display()),
        ));
    }
    for sub in ["clear", "degraded"] {
        let d = out_dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }

    let mut skipped = Vec::new();
    let mut stems = HashSet::new();
    let mut work = Vec::new();
    for p in inputs {
        let stem = file_stem(&p);
        if !stems.insert(stem.clone()) {
            skipped.push((p, format!("duplicate basename `{stem}`")));
            continue;
        }
        work.push((p, stem));
    }

    let results: Vec<(PathBuf, Result<Vec<ManifestEntry>>)> = work
        .par_iter()
        .map(|(path, stem)| {
            let r = (|| {
                let img = ImageTensor::load(path)?;
                let clear_rel = PathBuf::from("clear").join(format!("{stem}.png"));
                img.save_png(out_dir.join(&clear_rel))?;
                let mut entries = Vec::with_capacity(specs.len());
                for (k, spec) in specs.iter().enumerate() {
                    let id = format!("{stem}__s{k}");
                    let mut spec = spec.clone();
                    if let Degradation::Film(p) = &mut spec {
                        p.seed = seed_for(p.seed ^ seed, &id);
                    }
                    let degraded = spec.apply(&img)?;
                    let rel = PathBuf::from("degraded").join(format!("{id}.png"));
                    degraded.save_png(out_dir.join(&rel))?;
                    entries.push(ManifestEntry {
                        id,
                        clear: clear_rel.clone(),
                        degraded: rel,
                        conditions: spec.conditions(),
                        params: Some(spec),
                        enhanced: None,
                    });
                }
                Ok(entries)
            })();
            (path.clone(), r)
        })
        .collect();

    let mut entries = Vec::new();
    for (path, r) in results {
        match r {
            Ok(e) => entries.extend(e),
            Err(e) => skipped.push((path, e.to_string())),
        }
    }
    if entries.is_empty() {
        return Err(Error::validation(
            "clear_dir",
            format!("no readable images in {}", clear_dir.display()),
        ));
    }
    entries.sort_by(|a, b| a.id.cmp(&b.id));
    let manifest = DatasetManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        seed: Some(seed),
        entries,
    };
    let manifest_path = out_dir.join(MANIFEST_FILE);
    manifest.save(&manifest_path)?;
    Ok(GenerateOutcome {
        manifest,
        manifest_path,
        skipped,
    })
}

fn lerp3(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

/// A deterministic synthetic scene: a gradient background, a few filled
/// shapes and a band of fine stripes, quantized to 8 bits.
pub fn synthetic_scene(seed: u64, height: usize, width: usize) -> ImageTensor {
    enum Shape {
        Disc { cy: f64, cx: f64, r: f64 },
        Rect { y0: f64, x0: f64, y1: f64, x1: f64 },
        Stripes { y0: f64, y1: f64, period: f64, angle: f64 },
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let color = |rng: &mut ChaCha8Rng| [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
    let bg0 = color(&mut rng);
    let bg1 = color(&mut rng);
    let vertical = rng.random::<bool>();
    let (h, w) = (height as f64, width as f64);
    let n_shapes = rng.random_range(4..8);
    let mut shapes = Vec::with_capacity(n_shapes);
    for _ in 0..n_shapes {
        let col = color(&mut rng);
        let s = match rng.random_range(0..3) {
            0 => Shape::Disc {
                cy: rng.random::<f64>() * h,
                cx: rng.random::<f64>() * w,
                r: (0.08 + 0.2 * rng.random::<f64>()) * h.min(w),
            },
            1 => {
                let (y0, x0) = (rng.random::<f64>() * h, rng.random::<f64>() * w);
                Shape::Rect {
                    y0,
                    x0,
                    y1: y0 + (0.1 + 0.35 * rng.random::<f64>()) * h,
                    x1: x0 + (0.1 + 0.35 * rng.random::<f64>()) * w,
                }
            }
            _ => {
                let y0 = rng.random::<f64>() * h;
                Shape::Stripes {
                    y0,
                    y1: y0 + (0.15 + 0.25 * rng.random::<f64>()) * h,
                    period: 6.0 + 8.0 * rng.random::<f64>(),
                    angle: rng.random::<f64>() * std::f64::consts::PI,
                }
            }
        };
        shapes.push((s, col));
    }
    ImageTensor::from_fn(height, width, 3, |y, x, c| {
        let (fy, fx) = (y as f64 + 0.5, x as f64 + 0.5);
        let t = if vertical { fy / h } else { fx / w };
        let mut px = lerp3(bg0, bg1, t);
        for (s, col) in &shapes {
            let inside = match s {
                Shape::Disc { cy, cx, r } => (fy - cy).powi(2) + (fx - cx).powi(2) <= r * r,
                Shape::Rect { y0, x0, y1, x1 } => fy >= *y0 && fy < *y1 && fx >= *x0 && fx < *x1,
                Shape::Stripes { y0, y1, period, angle } => {
                    let u = fx * angle.cos() + fy * angle.sin();
                    fy >= *y0 && fy < *y1 && (u / period).rem_euclid(1.0) < 0.5
                }
            };
            if inside {
                px = *col;
            }
        }
        (px[c] * 255.0).round() / 255.0
    })
}

/// Std of the seeded Gaussian texture added to test charts.
pub const CHART_TEXTURE: f64 = 0.04;

/// A synthetic scene with fine Gaussian texture, quantized to 8 bits.
pub fn test_chart(seed: u64, height: usize, width: usize) -> ImageTensor {
    let scene = synthetic_scene(seed, height, width);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.rotate_left(17) ^ 0x5eed);
    let normal = Normal::new(0.0, CHART_TEXTURE).expect("positive std");
    let mut out = scene;
    for v in out.as_mut_slice() {
        *v += normal.sample(&mut rng);
    }
    out.clamp01().quantize8()
}

/// `count` test charts with consecutive seeds.
pub fn chart_set(count: usize, height: usize, width: usize, seed: u64) -> Vec<ImageTensor> {
    (0..count as u64)
        .map(|i| test_chart(seed.wrapping_add(i), height, width))
        .collect()
}

/// Range of haze parameters drawn per pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HazeRange {
    pub transmission: (f64, f64),
    pub light: (f64, f64),
}

impl Default for HazeRange {
    fn default() -> Self {
        Self {
            transmission: (0.35, 0.6),
            light: (0.75, 0.95),
        }
    }
}

/// In-memory haze pairs over synthetic scenes (gray atmospheric light,
/// constant transmission per image, degraded image quantized to 8 bits).
pub fn synthetic_haze_pairs(
    count: usize,
    height: usize,
    width: usize,
    seed: u64,
    range: HazeRange,
) -> Result<Vec<PairedSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    (0..count)
        .map(|i| {
            let clear = synthetic_scene(seed.wrapping_add(i as u64), height, width);
            let t = rng.random_range(range.transmission.0..=range.transmission.1);
            let a = rng.random_range(range.light.0..=range.light.1);
            let degraded = synthesize_haze(&clear, &HazeParams::constant(t, [a, a, a]))?.quantize8();
            let mut s = PairedSample::new(format!("haze{i:04}"), clear, degraded)?;
            s.conditions.insert("filter".into(), "haze".into());
            Ok(s)
        })
        .collect()
}

//! Keypoint parsing, estimator adapters and the detection-rate / precision
//! metrics.
//!
//! For an image pair with clear detections `C` and test detections `E`:
//!
//! * `N_c`, `N_e`: present keypoints in `C` and `E`;
//! * `N_te`: present keypoints of `E` whose same-part keypoint in the paired
//!   clear skeleton is present and within `distance_threshold` pixels
//!   (inclusive);
//! * `DR = N_e / N_c`, `SmAP = N_te / N_e`.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::process::Command;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::degrade::DatasetManifest;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub part_id: usize,
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
}

impl Keypoint {
    pub fn is_present(&self) -> bool {
        self.confidence > 0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    pub person_id: usize,
    /// One slot per body part, ordered by part id.
    pub keypoints: Vec<Keypoint>,
}

impl Skeleton {
    /// Builds a skeleton from a flat `[x, y, c, ...]` array; zero-confidence
    /// triples become absent keypoints.
    pub fn from_flat(person_id: usize, flat: &[f64]) -> Result<Self> {
        if !flat.len().is_multiple_of(3) {
            return Err(Error::KeypointParse {
                offset: 0,
                message: format!(
                    "person {person_id}: keypoint array length {} is not a multiple of 3",
                    flat.len()
                ),
            });
        }
        let keypoints = flat
            .chunks_exact(3)
            .enumerate()
            .map(|(part_id, t)| {
                let confidence = if t[2] > 0.0 { t[2].min(1.0) } else { 0.0 };
                Keypoint {
                    part_id,
                    x: t[0],
                    y: t[1],
                    confidence,
                }
            })
            .collect();
        Ok(Self { person_id, keypoints })
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.keypoints.iter().flat_map(|k| [k.x, k.y, k.confidence]).collect()
    }

    pub fn present(&self) -> impl Iterator<Item = &Keypoint> {
        self.keypoints.iter().filter(|k| k.is_present())
    }

    pub fn present_count(&self) -> u64 {
        self.present().count() as u64
    }

    /// Mean position of the present keypoints.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let n = self.present_count();
        if n == 0 {
            return None;
        }
        let (sx, sy) = self.present().fold((0.0, 0.0), |(sx, sy), k| (sx + k.x, sy + k.y));
        Some((sx / n as f64, sy / n as f64))
    }

    /// Marks keypoints outside `[0, width) × [0, height)` absent.
    pub fn clip_to_bounds(&mut self, width: f64, height: f64) {
        for k in &mut self.keypoints {
            if !(k.x >= 0.0 && k.x < width && k.y >= 0.0 && k.y < height) {
                k.confidence = 0.0;
            }
        }
    }
}

/// Body-part model, inferred from the keypoint array length.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartMap {
    Coco18,
    Body25,
    Other(usize),
}

impl PartMap {
    pub fn from_parts(n: usize) -> Self {
        match n {
            18 => PartMap::Coco18,
            25 => PartMap::Body25,
            n => PartMap::Other(n),
        }
    }

    pub fn parts(self) -> usize {
        match self {
            PartMap::Coco18 => 18,
            PartMap::Body25 => 25,
            PartMap::Other(n) => n,
        }
    }
}

#[derive(Deserialize)]
struct PoseFile {
    #[serde(default)]
    people: Vec<PersonEntry>,
}

#[derive(Serialize, Deserialize)]
struct PersonEntry {
    #[serde(default)]
    pose_keypoints_2d: Vec<f64>,
}

fn byte_offset(text: &[u8], line: usize, column: usize) -> usize {
    // serde_json reports 1-based line and column
    let mut offset = 0;
    for (i, l) in text.split(|&b| b == b'\n').enumerate() {
        if i + 1 == line {
            return (offset + column.saturating_sub(1)).min(text.len());
        }
        offset += l.len() + 1;
    }
    text.len()
}

/// Parses the `{people: [{pose_keypoints_2d: [...]}]}` estimator format.
pub fn parse_pose_json(bytes: &[u8]) -> Result<Vec<Skeleton>> {
    let file: PoseFile = serde_json::from_slice(bytes).map_err(|e| Error::KeypointParse {
        offset: byte_offset(bytes, e.line(), e.column()),
        message: e.to_string(),
    })?;
    file.people
        .iter()
        .enumerate()
        .map(|(i, p)| Skeleton::from_flat(i, &p.pose_keypoints_2d))
        .collect()
}

/// Serializes skeletons in the estimator format.
pub fn to_pose_json(people: &[Skeleton]) -> Result<String> {
    let v = serde_json::json!({
        "version": 1.3,
        "people": people.iter().map(|s| PersonEntry { pose_keypoints_2d: s.to_flat() }).collect::<Vec<_>>(),
    });
    Ok(serde_json::to_string(&v)?)
}

pub trait PoseEstimator: Send + Sync {
    fn name(&self) -> String;
    fn estimate(&self, image: &Path) -> Result<Vec<Skeleton>>;
}

/// Looks up `<fixtures>/<image parent dir>/<stem>.json`, then
/// `<fixtures>/<stem>.json`.
#[derive(Clone, Debug)]
pub struct MockEstimator {
    pub fixtures: PathBuf,
}

impl MockEstimator {
    pub fn new(fixtures: impl Into<PathBuf>) -> Self {
        Self {
            fixtures: fixtures.into(),
        }
    }

    pub fn fixture_for(&self, image: &Path) -> Option<PathBuf> {
        let stem = image.file_stem()?.to_string_lossy().into_owned();
        let parent = image.parent().and_then(|p| p.file_name());
        let mut candidates = Vec::new();
        if let Some(parent) = parent {
            candidates.push(self.fixtures.join(parent).join(format!("{stem}.json")));
        }
        candidates.push(self.fixtures.join(format!("{stem}.json")));
        candidates.into_iter().find(|c| c.is_file())
    }
}

impl PoseEstimator for MockEstimator {
    fn name(&self) -> String {
        format!("mock:{}", self.fixtures.display())
    }

    fn estimate(&self, image: &Path) -> Result<Vec<Skeleton>> {
        let path = self
            .fixture_for(image)
            .ok_or_else(|| Error::Estimator(format!("no fixture for {}", image.display())))?;
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        parse_pose_json(&bytes)
    }
}

/// Runs a pose binary on a one-image directory and reads back its JSON.
///
/// `args` may contain `{image_dir}` and `{output_dir}` placeholders. The
/// output file is `<stem>_keypoints.json`, or failing that the only `.json`
/// file starting with the stem.
#[derive(Clone, Debug)]
pub struct ExternalEstimator {
    pub program: PathBuf,
    pub args: Vec<String>,
}

impl ExternalEstimator {
    pub fn new(program: impl Into<PathBuf>) -> Self {
        Self {
            program: program.into(),
            args: [
                "--image_dir",
                "{image_dir}",
                "--write_json",
                "{output_dir}",
                "--display",
                "0",
                "--render_pose",
                "0",
            ]
            .map(String::from)
            .to_vec(),
        }
    }
}

impl PoseEstimator for ExternalEstimator {
    fn name(&self) -> String {
        format!("external:{}", self.program.display())
    }

    fn estimate(&self, image: &Path) -> Result<Vec<Skeleton>> {
        let work = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
        let in_dir = work.path().join("in");
        let out_dir = work.path().join("out");
        for d in [&in_dir, &out_dir] {
            std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        let name = image
            .file_name()
            .ok_or_else(|| Error::Estimator(format!("{} is not a file", image.display())))?;
        std::fs::copy(image, in_dir.join(name)).map_err(|e| Error::io(image, e))?;
        let args: Vec<String> = self
            .args
            .iter()
            .map(|a| {
                a.replace("{image_dir}", &in_dir.to_string_lossy())
                    .replace("{output_dir}", &out_dir.to_string_lossy())
            })
            .collect();
        let out = Command::new(&self.program)
            .args(&args)
            .output()
            .map_err(|e| Error::Estimator(format!("cannot run {}: {e}", self.program.display())))?;
        if !out.status.success() {
            return Err(Error::Estimator(format!(
                "{} exited with {}: {}",
                self.program.display(),
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        let stem = image
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let preferred = out_dir.join(format!("{stem}_keypoints.json"));
        let path = if preferred.is_file() {
            preferred
        } else {
            let mut found: Vec<PathBuf> = std::fs::read_dir(&out_dir)
                .map_err(|e| Error::io(&out_dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    p.extension().is_some_and(|x| x == "json")
                        && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with(&stem))
                })
                .collect();
            if found.len() != 1 {
                return Err(Error::Estimator(format!(
                    "expected one JSON output for {stem}, found {}; stderr: {}",
                    found.len(),
                    String::from_utf8_lossy(&out.stderr).trim()
                )));
            }
            found.remove(0)
        };
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        parse_pose_json(&bytes)
    }
}

/// `external:<program>` or `mock:<fixture dir>`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EstimatorSpec {
    External(PathBuf),
    Mock(PathBuf),
}

impl std::str::FromStr for EstimatorSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            Some(("external", p)) if !p.is_empty() => Ok(EstimatorSpec::External(p.into())),
            Some(("mock", p)) if !p.is_empty() => Ok(EstimatorSpec::Mock(p.into())),
            _ => Err(Error::validation(
                "estimator",
                format!("expected external:<path> or mock:<dir>, got `{s}`"),
            )),
        }
    }
}

impl EstimatorSpec {
    pub fn build(&self) -> Box<dyn PoseEstimator> {
        match self {
            EstimatorSpec::External(p) => Box::new(ExternalEstimator::new(p)),
            EstimatorSpec::Mock(p) => Box::new(MockEstimator::new(p)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    pub distance_threshold: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            distance_threshold: 10.0,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.distance_threshold > 0.0 && self.distance_threshold.is_finite()) {
            return Err(Error::validation("distance_threshold", "must be > 0"));
        }
        Ok(())
    }
}

/// Greedy nearest-centroid pairing of test and clear skeletons, as
/// `(enh index, clear index)` pairs. Skeletons with no present keypoint are
/// never paired.
pub fn pair_persons(enh: &[Skeleton], clear: &[Skeleton]) -> Vec<(usize, usize)> {
    let mut cands = Vec::new();
    for (i, e) in enh.iter().enumerate() {
        let Some((ex, ey)) = e.centroid() else { continue };
        for (j, c) in clear.iter().enumerate() {
            if let Some((cx, cy)) = c.centroid() {
                cands.push(((ex - cx).powi(2) + (ey - cy).powi(2), i, j));
            }
        }
    }
    cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let (mut used_e, mut used_c) = (vec![false; enh.len()], vec![false; clear.len()]);
    let mut pairs = Vec::new();
    for (_, i, j) in cands {
        if !used_e[i] && !used_c[j] {
            used_e[i] = true;
            used_c[j] = true;
            pairs.push((i, j));
        }
    }
    pairs.sort_unstable();
    pairs
}

/// Integer counts behind DR and SmAP for one image.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub n_c: u64,
    pub n_e: u64,
    pub n_te: u64,
}

impl MatchCounts {
    pub fn detection_rate(&self) -> Option<f64> {
        (self.n_c > 0).then(|| self.n_e as f64 / self.n_c as f64)
    }

    pub fn smap(&self) -> Option<f64> {
        (self.n_e > 0).then(|| self.n_te as f64 / self.n_e as f64)
    }
}

pub fn match_counts(enh: &[Skeleton], clear: &[Skeleton], m: &MatchConfig) -> MatchCounts {
    let n_c = clear.iter().map(Skeleton::present_count).sum();
    let n_e = enh.iter().map(Skeleton::present_count).sum();
    let thr2 = m.distance_threshold * m.distance_threshold;
    let mut n_te = 0;
    for (i, j) in pair_persons(enh, clear) {
        let by_part: HashMap<usize, &Keypoint> = clear[j].present().map(|k| (k.part_id, k)).collect();
        for k in enh[i].present() {
            if let Some(c) = by_part.get(&k.part_id) {
                let d2 = (k.x - c.x).powi(2) + (k.y - c.y).powi(2);
                if d2 <= thr2 {
                    n_te += 1;
                }
            }
        }
    }
    MatchCounts { n_c, n_e, n_te }
}

/// `N_e / N_c`; undefined when the clear image has no detections.
pub fn detection_rate(enh: &[Skeleton], clear: &[Skeleton]) -> Result<f64> {
    match_counts(enh, clear, &MatchConfig::default())
        .detection_rate()
        .ok_or_else(|| Error::Undefined("detection rate: clear image has no detected keypoints (N_c = 0)".into()))
}

/// `N_te / N_e`; undefined when the test image has no detections.
pub fn smap(enh: &[Skeleton], clear: &[Skeleton], m: &MatchConfig) -> Result<f64> {
    m.validate()?;
    match_counts(enh, clear, m)
        .smap()
        .ok_or_else(|| Error::Undefined("SmAP: test image has no detected keypoints (N_e = 0)".into()))
}

pub const COMPARISONS: [&str; 2] = ["shadow", "enhanced"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageEval {
    pub id: String,
    pub condition: String,
    pub comparison: String,
    pub counts: MatchCounts,
    pub dr: Option<f64>,
    pub smap: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub condition: String,
    pub comparison: String,
    /// Images with `N_c > 0`.
    pub images: u64,
    pub n_c: u64,
    pub n_e: u64,
    pub n_te: u64,
    pub dr_mean: Option<f64>,
    pub smap_mean: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalFailure {
    pub id: String,
    pub image: PathBuf,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub distance_threshold: f64,
    pub estimator: String,
    pub rows: Vec<AggregateRow>,
    pub images: Vec<ImageEval>,
    pub failures: Vec<EvalFailure>,
    /// `(id, comparison)` of images left out of DR means because `N_c = 0`.
    pub excluded: Vec<(String, String)>,
}

pub const CSV_HEADER: [&str; 8] = [
    "condition",
    "comparison",
    "images",
    "N_c",
    "N_e",
    "N_te",
    "DR_mean",
    "SmAP_mean",
];

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.6}")).unwrap_or_default()
}

impl EvalReport {
    /// Groups per-image results by `(condition, comparison)`.
    pub fn aggregate(images: &[ImageEval]) -> Vec<AggregateRow> {
        let mut groups: BTreeMap<(String, usize, String), Vec<&ImageEval>> = BTreeMap::new();
        for r in images {
            let order = COMPARISONS
                .iter()
                .position(|c| *c == r.comparison)
                .unwrap_or(COMPARISONS.len());
            groups
                .entry((r.condition.clone(), order, r.comparison.clone()))
                .or_default()
                .push(r);
        }
        groups
            .into_iter()
            .map(|((condition, _, comparison), rs)| {
                let kept: Vec<&&ImageEval> = rs.iter().filter(|r| r.counts.n_c > 0).collect();
                let mean = |vals: Vec<f64>| (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
                AggregateRow {
                    condition,
                    comparison,
                    images: kept.len() as u64,
                    n_c: kept.iter().map(|r| r.counts.n_c).sum(),
                    n_e: kept.iter().map(|r| r.counts.n_e).sum(),
                    n_te: kept.iter().map(|r| r.counts.n_te).sum(),
                    dr_mean: mean(kept.iter().filter_map(|r| r.dr).collect()),
                    smap_mean: mean(kept.iter().filter_map(|r| r.smap).collect()),
                }
            })
            .collect()
    }

    pub fn to_csv(&self) -> Result<String> {
        rows_to_csv(&self.rows)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

pub fn rows_to_csv(rows: &[AggregateRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::validation("csv", e.to_string());
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.condition.clone(),
            r.comparison.clone(),
            r.images.to_string(),
            r.n_c.to_string(),
            r.n_e.to_string(),
            r.n_te.to_string(),
            fmt_opt(r.dr_mean),
            fmt_opt(r.smap_mean),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::validation("csv", e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Reads rows written by [`rows_to_csv`].
pub fn rows_from_csv(text: &str) -> Result<Vec<AggregateRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let csv_err = |e: csv::Error| Error::validation("csv", e.to_string());
    let headers = r.headers().map_err(csv_err)?.clone();
    if headers.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(Error::validation("csv", format!("unexpected header {:?}", headers)));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let int = |i: usize| -> Result<u64> {
            rec[i]
                .parse()
                .map_err(|_| Error::validation(CSV_HEADER[i], format!("not an integer: `{}`", &rec[i])))
        };
        let opt = |i: usize| -> Result<Option<f64>> {
            if rec[i].is_empty() {
                return Ok(None);
            }
            rec[i]
                .parse()
                .map(Some)
                .map_err(|_| Error::validation(CSV_HEADER[i], format!("not a number: `{}`", &rec[i])))
        };
        rows.push(AggregateRow {
            condition: rec[0].to_string(),
            comparison: rec[1].to_string(),
            images: int(2)?,
            n_c: int(3)?,
            n_e: int(4)?,
            n_te: int(5)?,
            dr_mean: opt(6)?,
            smap_mean: opt(7)?,
        });
    }
    Ok(rows)
}

/// Condition label of a manifest entry: the chosen keys as `k=v` joined by
/// `;` (all keys when `group_by` is empty), or `all`.
pub fn condition_label(conditions: &BTreeMap<String, String>, group_by: &[String]) -> String {
    let parts: Vec<String> = if group_by.is_empty() {
        conditions.iter().map(|(k, v)| format!("{k}={v}")).collect()
    } else {
        group_by
            .iter()
            .filter_map(|k| conditions.get(k).map(|v| format!("{k}={v}")))
            .collect()
    };
    if parts.is_empty() {
        "all".into()
    } else {
        parts.join(";")
    }
}

#[derive(Clone, Debug, Default)]
pub struct EvalOptions {
    pub matching: MatchConfig,
    /// Directory of enhanced images named `<degraded stem>.png`; entries
    /// with an `enhanced` path use that instead.
    pub enhanced_dir: Option<PathBuf>,
    pub group_by: Vec<String>,
    /// Restrict evaluation to these sample ids.
    pub only_ids: Option<std::collections::BTreeSet<String>>,
}

/// Runs the estimator over every pair of a manifest and aggregates DR and
/// SmAP of the shadow and enhanced images against the clear image.
pub fn evaluate_dataset(manifest_path: &Path, estimator: &dyn PoseEstimator, opts: &EvalOptions) -> Result<EvalReport> {
    opts.matching.validate()?;
    let manifest = DatasetManifest::load(manifest_path)?;
    let root = manifest_path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."))
        .to_path_buf();

    struct Job {
        id: String,
        condition: String,
        clear: PathBuf,
        tests: Vec<(&'static str, PathBuf)>,
    }
    let jobs: Vec<Job> = manifest
        .entries
        .iter()
        .filter(|e| opts.only_ids.as_ref().is_none_or(|ids| ids.contains(&e.id)))
        .map(|e| {
            let degraded = root.join(&e.degraded);
            let mut tests = vec![(COMPARISONS[0], degraded.clone())];
            let enhanced = match (&e.enhanced, &opts.enhanced_dir) {
                (Some(p), _) => Some(root.join(p)),
                (None, Some(d)) => degraded
                    .file_stem()
                    .map(|n| d.join(format!("{}.png", n.to_string_lossy()))),
                (None, None) => None,
            };
            if let Some(p) = enhanced {
                tests.push((COMPARISONS[1], p));
            }
            Job {
                id: e.id.clone(),
                condition: condition_label(&e.conditions, &opts.group_by),
                clear: root.join(&e.clear),
                tests,
            }
        })
        .collect();

    // clear images are often shared between entries
    let mut clear_paths: Vec<&PathBuf> = jobs.iter().map(|j| &j.clear).collect();
    clear_paths.sort();
    clear_paths.dedup();
    let clear_results: HashMap<&PathBuf, Result<Vec<Skeleton>>> = clear_paths
        .par_iter()
        .map(|p| (*p, estimator.estimate(p)))
        .collect::<Vec<_>>()
        .into_iter()
        .collect();

    let per_job: Vec<(Vec<ImageEval>, Vec<EvalFailure>)> = jobs
        .par_iter()
        .map(|j| {
            let mut evals = Vec::new();
            let mut failures = Vec::new();
            let clear = match &clear_results[&j.clear] {
                Ok(c) => c,
                Err(e) => {
                    failures.push(EvalFailure {
                        id: j.id.clone(),
                        image: j.clear.clone(),
                        error: e.to_string(),
                    });
                    return (evals, failures);
                }
            };
            for (comparison, path) in &j.tests {
                match estimator.estimate(path) {
                    Ok(test) => {
                        let counts = match_counts(&test, clear, &opts.matching);
                        evals.push(ImageEval {
                            id: j.id.clone(),
                            condition: j.condition.clone(),
                            comparison: comparison.to_string(),
                            counts,
                            dr: counts.detection_rate(),
                            smap: counts.smap(),
                        });
                    }
                    Err(e) => failures.push(EvalFailure {
                        id: j.id.clone(),
                        image: path.clone(),
                        error: e.to_string(),
                    }),
                }
            }
            (evals, failures)
        })
        .collect();

    let mut images = Vec::new();
    let mut failures = Vec::new();
    for (e, f) in per_job {
        images.extend(e);
        failures.extend(f);
    }
    let excluded = images
        .iter()
        .filter(|r| r.counts.n_c == 0)
        .map(|r| (r.id.clone(), r.comparison.clone()))
        .collect();
    Ok(EvalReport {
        distance_threshold: opts.matching.distance_threshold,
        estimator: estimator.name(),
        rows: EvalReport::aggregate(&images),
        images,
        failures,
        excluded,
    })
}

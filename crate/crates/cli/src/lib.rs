//! The `shadowpose` command line.
//!
//! Every subcommand prints one JSON summary line on stdout and writes
//! `summary.json` (which records the seed) into its output directory. Files
//! named in a summary are relative to that directory. Exit codes: 0 success,
//! 2 validation error, 3 runtime failure.

pub mod plot;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

use shadowpose::degrade::{
    chart_set, generate_dataset, ingest_paired_dataset, list_files, synthetic_haze_pairs, write_paired_dataset,
    Degradation, HazeRange, PairedSample,
};
use shadowpose::loss::LossToggles;
use shadowpose::pose::{
    evaluate_dataset, rows_from_csv, rows_to_csv, AggregateRow, EstimatorSpec, EvalOptions, MatchConfig, COMPARISONS,
};
use shadowpose::quality::{quality_score, shadow_ratio, sseq_features, QualityScore, Regressor};
use shadowpose::train::{heldout_ssim, prepare_samples, TrainConfig, TrainLog, Trainer};
use shadowpose::{Checkpoint, ImageTensor, Network, ResizePolicy};

use plot::GroupedBars;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Validation(_) => "validation",
            CliError::Runtime(_) => "runtime",
        }
    }
}

impl From<shadowpose::Error> for CliError {
    fn from(e: shadowpose::Error) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(
    name = "shadowpose",
    version,
    about = "Shadow-image enhancement and pose evaluation pipeline"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Degrade clear images (or synthetic charts) into a paired dataset.
    Generate(GenerateArgs),
    /// Train the enhancement network on a paired dataset.
    Train(TrainArgs),
    /// Enhance every image of a directory with a checkpoint.
    Enhance(EnhanceArgs),
    /// Compute DR / SmAP of shadow and enhanced images against clear ones.
    Evaluate(EvaluateArgs),
    /// Train and evaluate the full model and the three single-loss ablations.
    Ablate(AblateArgs),
    /// Quality scores and shadow ratio.
    Score(ScoreArgs),
    /// Merge evaluation CSVs and draw grouped-bar plots.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Directory of clear source images.
    #[arg(long)]
    pub clear_dir: Option<PathBuf>,
    /// Generate this many synthetic test charts as sources instead.
    #[arg(long)]
    pub charts: Option<usize>,
    /// Side length of synthetic charts.
    #[arg(long, default_value_t = 256)]
    pub size: usize,
    /// JSON array of degradations; defaults to the 1/2/3-layer film sweep.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset manifest (overrides the config's `dataset`).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Train on this many in-memory synthetic haze pairs (written under `<out>/data`).
    #[arg(long)]
    pub synthetic_haze: Option<usize>,
    /// JSON training config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<u64>,
    /// Enabled loss terms, e.g. `sl,pl,el`.
    #[arg(long)]
    pub toggles: Option<String>,
    /// Resume from this checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EnhanceArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// `scale` or `center-crop`.
    #[arg(long, default_value = "scale")]
    pub resize_policy: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// `external:<program>` or `mock:<fixture dir>`.
    #[arg(long)]
    pub estimator: String,
    /// Directory of enhanced images named `<degraded stem>.png`.
    #[arg(long)]
    pub enhanced: Option<PathBuf>,
    /// SmAP distance threshold in pixels.
    #[arg(long, default_value_t = 10.0)]
    pub threshold: f64,
    /// Comma-separated condition keys to group by (default: all keys).
    #[arg(long)]
    pub group_by: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub synthetic_haze: Option<usize>,
    /// Base JSON training config shared by all variants.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<u64>,
    /// Pose estimator for DR / SmAP; without it only SSIM is reported.
    #[arg(long)]
    pub estimator: Option<String>,
    #[arg(long, default_value_t = 10.0)]
    pub threshold: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Images to score.
    pub images: Vec<PathBuf>,
    /// Regressor weights file; the entropy proxy is used without it.
    #[arg(long)]
    pub regressor: Option<PathBuf>,
    /// Clear image for a shadow ratio.
    #[arg(long, requires = "shadow")]
    pub clear: Option<PathBuf>,
    #[arg(long, requires = "clear")]
    pub shadow: Option<PathBuf>,
    /// Injected clear score for a shadow ratio.
    #[arg(long, requires = "shadow_score")]
    pub clear_score: Option<f64>,
    #[arg(long, requires = "clear_score")]
    pub shadow_score: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Evaluation CSV files.
    #[arg(long = "input", required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Runs a parsed command and returns its summary.
pub fn run(cli: Cli) -> CliResult<Value> {
    let (name, mut summary, out) = match cli.command {
        Command::Generate(a) => ("generate", generate(&a)?, Some(a.out)),
        Command::Train(a) => ("train", train(&a)?, Some(a.out)),
        Command::Enhance(a) => ("enhance", enhance(&a)?, Some(a.out)),
        Command::Evaluate(a) => ("evaluate", evaluate(&a)?, Some(a.out)),
        Command::Ablate(a) => ("ablate", ablate(&a)?, Some(a.out)),
        Command::Score(a) => ("score", score(&a)?, None),
        Command::Report(a) => ("report", report(&a)?, Some(a.out)),
    };
    summary.insert("command".into(), json!(name));
    summary.insert("status".into(), json!("ok"));
    let summary = Value::Object(summary);
    if let Some(out) = out {
        write_text(
            &out.join("summary.json"),
            &(serde_json::to_string_pretty(&summary).expect("json") + "\n"),
        )?;
    }
    Ok(summary)
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn parse_policy(s: &str) -> CliResult<ResizePolicy> {
    match s {
        "scale" => Ok(ResizePolicy::Scale),
        "center-crop" => Ok(ResizePolicy::CenterCrop),
        other => Err(CliError::Validation(format!(
            "resize policy must be scale or center-crop, got `{other}`"
        ))),
    }
}

fn generate(a: &GenerateArgs) -> CliResult<Map<String, Value>> {
    let specs: Vec<Degradation> = match &a.config {
        Some(p) => read_json(p)?,
        None => Degradation::film_layer_sweep(),
    };
    let source = match (&a.clear_dir, a.charts) {
        (Some(_), Some(_)) => return Err(CliError::Validation("use either --clear-dir or --charts".into())),
        (Some(d), None) => d.clone(),
        (None, Some(n)) => {
            if n == 0 || a.size < 8 {
                return Err(CliError::Validation("--charts needs N > 0 and --size >= 8".into()));
            }
            let dir = a.out.join("source");
            for (i, c) in chart_set(n, a.size, a.size, a.seed).iter().enumerate() {
                c.save_png(dir.join(format!("chart{i:03}.png")))?;
            }
            dir
        }
        (None, None) => {
            return Err(CliError::Validation(
                "one of --clear-dir or --charts is required".into(),
            ))
        }
    };
    let outcome = generate_dataset(&source, &specs, &a.out, a.seed)?;
    for (p, reason) in &outcome.skipped {
        eprintln!("warning: skipped {}: {reason}", p.display());
    }
    let mut m = Map::new();
    m.insert("seed".into(), json!(a.seed));
    m.insert("entries".into(), json!(outcome.manifest.entries.len()));
    m.insert("manifest".into(), json!(shadowpose::degrade::MANIFEST_FILE));
    m.insert(
        "skipped".into(),
        json!(outcome
            .skipped
            .iter()
            .map(|(p, r)| json!({"path": p, "reason": r}))
            .collect::<Vec<_>>()),
    );
    Ok(m)
}

fn load_train_config(path: Option<&PathBuf>) -> CliResult<TrainConfig> {
    match path {
        Some(p) => read_json(p),
        None => Ok(TrainConfig::default()),
    }
}

/// Resolves the dataset (manifest or synthetic) into train and held-out pairs
/// at the network input size, plus the manifest path.
fn load_training_data(
    cfg: &mut TrainConfig,
    dataset: Option<&PathBuf>,
    synthetic: Option<usize>,
    out: &Path,
) -> CliResult<(Vec<PairedSample>, Vec<PairedSample>, PathBuf)> {
    let [h, w, _] = cfg.network.input_size;
    let manifest = match (dataset, synthetic) {
        (Some(_), Some(_)) => return Err(CliError::Validation("use either --dataset or --synthetic-haze".into())),
        (None, Some(n)) => {
            if n == 0 {
                return Err(CliError::Validation("--synthetic-haze needs N > 0".into()));
            }
            let pairs = synthetic_haze_pairs(n, h, w, cfg.seed, HazeRange::default())?;
            write_paired_dataset(&pairs, out.join("data"), Some(cfg.seed))?
        }
        (Some(d), None) => d.clone(),
        (None, None) => cfg.dataset.clone().ok_or_else(|| {
            CliError::Validation("a dataset is required (--dataset, --synthetic-haze or config `dataset`)".into())
        })?,
    };
    cfg.dataset = Some(manifest.clone());
    let samples = ingest_paired_dataset(&manifest)?;
    if samples.len() <= cfg.holdout {
        return Err(CliError::Validation(format!(
            "dataset has {} pairs but holdout is {}",
            samples.len(),
            cfg.holdout
        )));
    }
    let mut samples = prepare_samples(samples, cfg.resize_policy, h, w)?;
    let eval = samples.split_off(samples.len() - cfg.holdout);
    Ok((samples, eval, manifest))
}

fn train(a: &TrainArgs) -> CliResult<Map<String, Value>> {
    let mut cfg = load_train_config(a.config.as_ref())?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(s) = a.steps {
        cfg.steps = s;
    }
    if let Some(t) = &a.toggles {
        cfg.toggles = LossToggles::parse(t)?;
    }
    cfg.validate()?;
    std::fs::create_dir_all(&a.out).map_err(|e| io_err(&a.out, e))?;
    let (train_set, eval_set, _) = load_training_data(&mut cfg, a.dataset.as_ref(), a.synthetic_haze, &a.out)?;
    let log_path = a.out.join("train_log.ndjson");
    let ck_path = a.out.join("checkpoint.ckpt");

    let mut trainer = match &a.checkpoint {
        Some(p) => Trainer::resume(&Checkpoint::load(p)?, cfg.clone(), train_set, eval_set)?,
        None => Trainer::new(cfg.clone(), train_set, eval_set)?,
    };
    let prior = match (&a.checkpoint, log_path.is_file()) {
        (Some(_), true) => TrainLog::load(&log_path)?
            .records
            .into_iter()
            .filter(|r| match r {
                shadowpose::train::LogRecord::Step(s) => s.step <= trainer.step(),
                shadowpose::train::LogRecord::Eval(e) => e.step <= trainer.step(),
            })
            .collect(),
        _ => Vec::new(),
    };
    let start = trainer.step();
    let outcome = trainer.run();
    if cfg.eval_every > 0 && outcome.is_ok() && trainer.step() % cfg.eval_every != 0 {
        trainer.evaluate()?;
    }
    let mut log = TrainLog { records: prior };
    log.records.extend(trainer.log().records.iter().copied());
    log.save(&log_path)?;
    trainer.checkpoint()?.save(&ck_path)?;
    write_text(
        &a.out.join("train_config.json"),
        &(serde_json::to_string_pretty(trainer.config()).expect("json") + "\n"),
    )?;
    outcome?;

    let last = log.steps().last().copied();
    let eval = log.evals().last().copied();
    let mut m = Map::new();
    m.insert("seed".into(), json!(cfg.seed));
    m.insert("steps_run".into(), json!(trainer.step() - start));
    m.insert("step".into(), json!(trainer.step()));
    m.insert("final_total".into(), json!(last.map(|s| s.total)));
    m.insert("heldout_ssim".into(), json!(eval.map(|e| e.heldout_ssim)));
    m.insert("degraded_ssim".into(), json!(eval.map(|e| e.degraded_ssim)));
    m.insert("checkpoint".into(), json!("checkpoint.ckpt"));
    m.insert("log".into(), json!("train_log.ndjson"));
    Ok(m)
}

/// Enhances one image at the network input size and maps it back.
pub fn enhance_image(net: &Network, policy: ResizePolicy, img: &ImageTensor) -> shadowpose::Result<ImageTensor> {
    let [h, w, _] = net.config().input_size;
    let x = policy.apply(img, h, w)?;
    let y = net.forward(&x)?;
    Ok(policy.restore(&y, img)?.clamp01())
}

fn enhance(a: &EnhanceArgs) -> CliResult<Map<String, Value>> {
    let policy = parse_policy(&a.resize_policy)?;
    let net = Checkpoint::load(&a.checkpoint)?.to_network()?;
    let inputs = list_files(&a.input)?;
    std::fs::create_dir_all(&a.out).map_err(|e| io_err(&a.out, e))?;
    if inputs.is_empty() {
        eprintln!("0 images in {}", a.input.display());
    }
    let mut written = Vec::new();
    let mut failures = Vec::new();
    for p in &inputs {
        let stem = p
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let r = ImageTensor::load(p)
            .and_then(|img| enhance_image(&net, policy, &img))
            .and_then(|e| {
                let dest = a.out.join(format!("{stem}.png"));
                e.save_png(&dest).map(|_| dest)
            });
        match r {
            Ok(dest) => written.push(dest),
            Err(e) => {
                eprintln!("warning: {}: {e}", p.display());
                failures.push(json!({"path": p, "error": e.to_string()}));
            }
        }
    }
    let mut m = Map::new();
    m.insert("seed".into(), json!(a.seed));
    m.insert("images".into(), json!(written.len()));
    m.insert("failures".into(), Value::Array(failures));
    Ok(m)
}

fn evaluate(a: &EvaluateArgs) -> CliResult<Map<String, Value>> {
    let estimator = a.estimator.parse::<EstimatorSpec>()?.build();
    let opts = EvalOptions {
        matching: MatchConfig {
            distance_threshold: a.threshold,
        },
        enhanced_dir: a.enhanced.clone(),
        group_by: a
            .group_by
            .as_deref()
            .map(|g| {
                g.split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect()
            })
            .unwrap_or_default(),
        only_ids: None,
    };
    let report = evaluate_dataset(&a.dataset, estimator.as_ref(), &opts)?;
    for f in &report.failures {
        eprintln!("warning: {} ({}): {}", f.id, f.image.display(), f.error);
    }
    write_text(&a.out.join("eval_report.csv"), &report.to_csv()?)?;
    write_text(&a.out.join("eval_report.json"), &report.to_json()?)?;
    let mut m = Map::new();
    m.insert("seed".into(), json!(a.seed));
    m.insert("rows".into(), json!(report.rows.len()));
    m.insert("images".into(), json!(report.images.len()));
    m.insert("failures".into(), json!(report.failures.len()));
    m.insert("excluded".into(), json!(report.excluded.len()));
    m.insert("csv".into(), json!("eval_report.csv"));
    Ok(m)
}

/// The four ablation variants in grid column order.
pub const VARIANTS: [(&str, LossToggles); 4] = [
    ("full", LossToggles::ALL),
    (
        "no_sl",
        LossToggles {
            use_structural: false,
            use_perceptual: true,
            use_edge: true,
        },
    ),
    (
        "no_pl",
        LossToggles {
            use_structural: true,
            use_perceptual: false,
            use_edge: true,
        },
    ),
    (
        "no_el",
        LossToggles {
            use_structural: true,
            use_perceptual: true,
            use_edge: false,
        },
    ),
];

fn fmt_cell(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.6}")).unwrap_or_default()
}

fn ablate(a: &AblateArgs) -> CliResult<Map<String, Value>> {
    let mut base = load_train_config(a.config.as_ref())?;
    if let Some(s) = a.seed {
        base.seed = s;
    }
    if let Some(s) = a.steps {
        base.steps = s;
    }
    base.validate()?;
    let estimator = a
        .estimator
        .as_deref()
        .map(str::parse::<EstimatorSpec>)
        .transpose()?
        .map(|e| e.build());
    let matching = MatchConfig {
        distance_threshold: a.threshold,
    };
    matching.validate()?;
    std::fs::create_dir_all(&a.out).map_err(|e| io_err(&a.out, e))?;
    let (train_set, mut eval_set, manifest) =
        load_training_data(&mut base, a.dataset.as_ref(), a.synthetic_haze, &a.out)?;
    if eval_set.is_empty() {
        eval_set = train_set.clone();
    }
    let eval_ids: BTreeSet<String> = eval_set.iter().map(|s| s.id.clone()).collect();
    let originals: Vec<PairedSample> = ingest_paired_dataset(&manifest)?
        .into_iter()
        .filter(|s| eval_ids.contains(&s.id))
        .collect();
    let manifest_doc = shadowpose::degrade::DatasetManifest::load(&manifest)?;

    let mut runs = Vec::new();
    for (name, toggles) in VARIANTS {
        let cfg = TrainConfig {
            toggles,
            ..base.clone()
        };
        let dir = a.out.join(name);
        let mut trainer = Trainer::new(cfg, train_set.clone(), Vec::new())?;
        let outcome = trainer.run();
        trainer.log().save(dir.join("train_log.ndjson")).or_else(|_| {
            std::fs::create_dir_all(&dir).map_err(|e| shadowpose::Error::Checkpoint(e.to_string()))?;
            trainer.log().save(dir.join("train_log.ndjson"))
        })?;
        trainer.checkpoint()?.save(dir.join("checkpoint.ckpt"))?;
        let status = match &outcome {
            Ok(()) => "ok".to_string(),
            Err(e) => format!("aborted: {e}"),
        };
        let (ssim, degraded_ssim) = heldout_ssim(trainer.network(), &eval_set, &base.ssim)?;

        let (mut dr, mut smap) = (None, None);
        if let Some(est) = &estimator {
            let enhanced_dir = dir.join("enhanced");
            for s in &originals {
                let entry = manifest_doc
                    .entries
                    .iter()
                    .find(|e| e.id == s.id)
                    .expect("id from manifest");
                let stem = entry
                    .degraded
                    .file_stem()
                    .map(|x| x.to_string_lossy().into_owned())
                    .unwrap_or_default();
                enhance_image(trainer.network(), base.resize_policy, &s.degraded)?
                    .save_png(enhanced_dir.join(format!("{stem}.png")))?;
            }
            let report = evaluate_dataset(
                &manifest,
                est.as_ref(),
                &EvalOptions {
                    matching,
                    enhanced_dir: Some(enhanced_dir),
                    group_by: Vec::new(),
                    only_ids: Some(eval_ids.clone()),
                },
            )?;
            let enh: Vec<_> = report
                .images
                .iter()
                .filter(|r| r.comparison == COMPARISONS[1] && r.counts.n_c > 0)
                .collect();
            let mean = |v: Vec<f64>| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
            dr = mean(enh.iter().filter_map(|r| r.dr).collect());
            smap = mean(enh.iter().filter_map(|r| r.smap).collect());
            write_text(&dir.join("eval_report.csv"), &report.to_csv()?)?;
        }
        let final_total = trainer.log().steps().last().map(|s| s.total);
        runs.push(json!({
            "variant": name,
            "toggles": toggles,
            "status": status,
            "steps": trainer.step(),
            "final_total": final_total,
            "heldout_ssim": ssim,
            "degraded_ssim": degraded_ssim,
            "DR": dr,
            "SmAP": smap,
        }));
    }

    let cell = |r: &Value, k: &str| fmt_cell(r[k].as_f64());
    let mut grid = String::from("metric");
    for (name, _) in VARIANTS {
        grid.push(',');
        grid.push_str(name);
    }
    grid.push('\n');
    for metric in ["DR", "SmAP"] {
        grid.push_str(metric);
        for r in &runs {
            grid.push(',');
            grid.push_str(&cell(r, metric));
        }
        grid.push('\n');
    }
    write_text(&a.out.join("ablation_grid.csv"), &grid)?;

    let mut table = String::from("variant,status,steps,final_total,heldout_ssim,degraded_ssim,DR,SmAP\n");
    for r in &runs {
        table.push_str(&format!(
            "{},\"{}\",{},{},{},{},{},{}\n",
            r["variant"].as_str().unwrap_or_default(),
            r["status"].as_str().unwrap_or_default().replace('"', "'"),
            r["steps"],
            cell(r, "final_total"),
            cell(r, "heldout_ssim"),
            cell(r, "degraded_ssim"),
            cell(r, "DR"),
            cell(r, "SmAP"),
        ));
    }
    write_text(&a.out.join("ablation_runs.csv"), &table)?;

    let mut m = Map::new();
    m.insert("seed".into(), json!(base.seed));
    m.insert("variants".into(), Value::Array(runs));
    m.insert("grid".into(), json!("ablation_grid.csv"));
    Ok(m)
}

fn score_image(path: &Path, regressor: Option<&Regressor>) -> CliResult<QualityScore> {
    let img = ImageTensor::load(path)?;
    Ok(quality_score(&sseq_features(&img)?, regressor)?)
}

fn score(a: &ScoreArgs) -> CliResult<Map<String, Value>> {
    let regressor = a.regressor.as_ref().map(Regressor::load).transpose()?;
    if a.images.is_empty() && a.clear.is_none() && a.clear_score.is_none() {
        return Err(CliError::Validation(
            "nothing to score: pass images, --clear/--shadow or --clear-score/--shadow-score".into(),
        ));
    }
    let mut scores = Vec::new();
    for p in &a.images {
        let q = score_image(p, regressor.as_ref())?;
        scores.push(json!({"image": p, "value": q.value, "source": q.source}));
    }
    let mut m = Map::new();
    m.insert("seed".into(), json!(a.seed));
    m.insert("scores".into(), Value::Array(scores));
    let pair = match (&a.clear, &a.shadow, a.clear_score, a.shadow_score) {
        (Some(c), Some(s), _, _) => Some((score_image(c, regressor.as_ref())?, score_image(s, regressor.as_ref())?)),
        (_, _, Some(c), Some(s)) => Some((QualityScore::injected(c), QualityScore::injected(s))),
        _ => None,
    };
    if let Some((c, s)) = pair {
        let sr = shadow_ratio(c, s)?;
        m.insert(
            "shadow_ratio".into(),
            json!({"clear": c.value, "shadow": s.value, "source": c.source, "value": sr}),
        );
    }
    Ok(m)
}

/// Builds DR and SmAP charts from aggregate rows; groups are conditions,
/// series are comparisons. Missing cells are `None`.
pub fn charts_from_rows(rows: &[AggregateRow]) -> (GroupedBars, GroupedBars, Vec<String>) {
    let mut groups: Vec<String> = Vec::new();
    let mut series: Vec<String> = COMPARISONS.iter().map(|s| s.to_string()).collect();
    for r in rows {
        if !groups.contains(&r.condition) {
            groups.push(r.condition.clone());
        }
        if !series.contains(&r.comparison) {
            series.push(r.comparison.clone());
        }
    }
    let mut warnings = Vec::new();
    let mut cells = |pick: fn(&AggregateRow) -> Option<f64>, metric: &str| -> Vec<Vec<Option<f64>>> {
        series
            .iter()
            .map(|s| {
                groups
                    .iter()
                    .map(|g| {
                        let v = rows
                            .iter()
                            .find(|r| &r.condition == g && &r.comparison == s)
                            .and_then(pick);
                        if v.is_none() {
                            warnings.push(format!("{metric}: no value for condition `{g}`, series `{s}`"));
                        }
                        v
                    })
                    .collect()
            })
            .collect()
    };
    let dr_vals = cells(|r| r.dr_mean, "DR");
    let smap_vals = cells(|r| r.smap_mean, "SmAP");
    let chart = |title: &str, values| GroupedBars {
        title: title.into(),
        y_label: title.into(),
        groups: groups.clone(),
        series: series.clone(),
        values,
    };
    (chart("DR", dr_vals), chart("SmAP", smap_vals), warnings)
}

fn report(a: &ReportArgs) -> CliResult<Map<String, Value>> {
    let mut rows = Vec::new();
    for p in &a.inputs {
        let text = std::fs::read_to_string(p).map_err(|e| io_err(p, e))?;
        rows.extend(rows_from_csv(&text)?);
    }
    if rows.is_empty() {
        return Err(CliError::Validation("no evaluation rows in the input CSVs".into()));
    }
    let (dr, smap, warnings) = charts_from_rows(&rows);
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    write_text(&a.out.join("report.csv"), &rows_to_csv(&rows)?)?;
    write_text(&a.out.join("dr.svg"), &dr.to_svg())?;
    write_text(&a.out.join("smap.svg"), &smap.to_svg())?;
    let mut m = Map::new();
    m.insert("seed".into(), json!(a.seed));
    m.insert("rows".into(), json!(rows.len()));
    m.insert("conditions".into(), json!(dr.groups));
    m.insert("warnings".into(), json!(warnings));
    Ok(m)
}

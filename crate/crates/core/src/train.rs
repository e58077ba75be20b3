//! Training loop, optimizers, NDJSON log and resumable checkpoints.
//!
//! Batches are a pure function of `(seed, step)`: sample positions run over a
//! sequence of per-epoch permutations, so a resumed run needs no RNG state
//! beyond the step counter stored in the checkpoint.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::degrade::PairedSample;
use crate::error::{Error, Result};
use crate::features::{ExtractorSource, FeatureExtractor};
use crate::imaging::{mean_ssim, SsimParams};
use crate::loss::{composite_loss_with_grad, LossBreakdown, LossConfig, LossToggles, NormScaling};
use crate::nn::{Checkpoint, CheckpointMeta, Gradients, NamedTensor, Network, NetworkConfig};
use crate::tensor::ResizePolicy;

/// Number of trailing step records stored in checkpoint metadata.
const LOSS_TAIL: usize = 10;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    SgdMomentum,
    #[default]
    AdaptiveMoment,
}

/// Learning-rate multiplier as a function of the step index.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Cosine decay from 1 to `floor` over `horizon` steps, then `floor`.
    Cosine { horizon: u64, floor: f64 },
}

impl LrSchedule {
    /// Multiplier for the update that produces step `step + 1`.
    pub fn factor(&self, step: u64) -> f64 {
        match *self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Cosine { horizon, floor } => {
                let p = (step as f64 / horizon.max(1) as f64).min(1.0);
                floor + (1.0 - floor) * 0.5 * (1.0 + (std::f64::consts::PI * p).cos())
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            LrSchedule::Cosine { horizon, floor } if horizon == 0 || !(0.0..=1.0).contains(&floor) => Err(
                Error::validation("lr_schedule", "cosine needs horizon > 0 and floor in [0, 1]"),
            ),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_schedule: LrSchedule,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub toggles: LossToggles,
    /// Held-out evaluation cadence in steps; 0 disables snapshots.
    pub eval_every: u64,
    pub dataset: Option<PathBuf>,
    pub resize_policy: ResizePolicy,
    /// Trailing manifest entries reserved for held-out evaluation.
    pub holdout: usize,
    pub network: NetworkConfig,
    pub feature_extractor: ExtractorSource,
    pub norm_scaling: NormScaling,
    pub ssim: SsimParams,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 8,
            learning_rate: 1e-4,
            lr_schedule: LrSchedule::Constant,
            optimizer: OptimizerKind::AdaptiveMoment,
            seed: 0,
            toggles: LossToggles::ALL,
            eval_every: 100,
            dataset: None,
            resize_policy: ResizePolicy::Scale,
            holdout: 0,
            network: NetworkConfig::default(),
            feature_extractor: ExtractorSource::default(),
            norm_scaling: NormScaling::Sum,
            ssim: SsimParams::default(),
            clip_norm: Some(5.0),
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Fields that may differ between a checkpoint's config and a resume config.
pub const RESUME_MUTABLE_FIELDS: [&str; 2] = ["steps", "eval_every"];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::validation("steps", "must be > 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("batch_size", "must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::validation("learning_rate", "must be > 0"));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::validation("clip_norm", "must be > 0"));
            }
        }
        for (field, v) in [
            ("momentum", self.momentum),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::validation(field, "must be in [0, 1)"));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::validation("epsilon", "must be > 0"));
        }
        self.lr_schedule.validate()?;
        self.toggles.validate()?;
        self.ssim.validate()?;
        self.network.validate()
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            toggles: self.toggles,
            ssim: self.ssim,
            norm: self.norm_scaling,
            report_disabled: true,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    /// Checks that `next` only differs from `self` in whitelisted fields.
    pub fn check_resume_compatible(&self, next: &TrainConfig) -> Result<()> {
        let stored = self.network.fingerprint();
        let computed = next.network.fingerprint();
        if stored != computed {
            return Err(Error::Fingerprint { stored, computed });
        }
        let strip = |c: &TrainConfig| -> Result<serde_json::Map<String, serde_json::Value>> {
            let serde_json::Value::Object(mut m) = serde_json::to_value(c)? else {
                unreachable!("config serializes to an object")
            };
            for f in RESUME_MUTABLE_FIELDS {
                m.remove(f);
            }
            Ok(m)
        };
        let (a, b) = (strip(self)?, strip(next)?);
        let changed: Vec<&str> = a
            .keys()
            .filter(|k| a.get(*k) != b.get(*k))
            .map(String::as_str)
            .collect();
        if !changed.is_empty() {
            return Err(Error::validation(
                "resume",
                format!(
                    "only {} may change on resume; changed: {}",
                    RESUME_MUTABLE_FIELDS.join(", "),
                    changed.join(", ")
                ),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub total: f64,
    pub sl: f64,
    pub pl: f64,
    pub el: f64,
    pub pl_mse: f64,
    pub pl_mae: f64,
    pub pl_feat: f64,
    pub grad_norm: f64,
    pub wall_time_s: f64,
}

impl StepRecord {
    fn new(step: u64, b: &LossBreakdown, grad_norm: f64, wall_time_s: f64) -> Self {
        Self {
            step,
            total: b.total,
            sl: b.sl,
            pl: b.pl(),
            el: b.el,
            pl_mse: b.pl_mse,
            pl_mae: b.pl_mae,
            pl_feat: b.pl_feat,
            grad_norm,
            wall_time_s,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: u64,
    /// Mean SSIM(enhanced, clear) on the held-out pairs.
    pub heldout_ssim: f64,
    /// Mean SSIM(degraded, clear) on the same pairs.
    pub degraded_ssim: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LogRecord {
    Step(StepRecord),
    Eval(EvalRecord),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
}

impl TrainLog {
    pub fn steps(&self) -> impl Iterator<Item = &StepRecord> {
        self.records.iter().filter_map(|r| match r {
            LogRecord::Step(s) => Some(s),
            LogRecord::Eval(_) => None,
        })
    }

    pub fn evals(&self) -> impl Iterator<Item = &EvalRecord> {
        self.records.iter().filter_map(|r| match r {
            LogRecord::Eval(e) => Some(e),
            LogRecord::Step(_) => None,
        })
    }

    pub fn totals(&self) -> Vec<f64> {
        self.steps().map(|s| s.total).collect()
    }

    /// Step indices strictly increase and every value is finite.
    pub fn validate(&self) -> Result<()> {
        let mut last = 0;
        for s in self.steps() {
            if s.step <= last {
                return Err(Error::validation(
                    "train_log",
                    format!("step {} follows {}", s.step, last),
                ));
            }
            last = s.step;
            let vals = [s.total, s.sl, s.pl, s.el, s.pl_mse, s.pl_mae, s.pl_feat, s.grad_norm];
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::validation(
                    "train_log",
                    format!("non-finite value at step {}", s.step),
                ));
            }
        }
        Ok(())
    }

    pub fn to_ndjson(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_ndjson(s: &str) -> Result<Self> {
        let records = s
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self { records })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_ndjson()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_ndjson(&s)
    }
}

/// First and second moment buffers, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    momentum: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    t: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(cfg: &TrainConfig, net: &Network) -> Self {
        let shapes: Vec<usize> = net
            .layers()
            .iter()
            .flat_map(|l| [l.weight.len(), l.bias.len()])
            .collect();
        let second = match cfg.optimizer {
            OptimizerKind::AdaptiveMoment => shapes.iter().map(|&n| vec![0.0; n]).collect(),
            OptimizerKind::SgdMomentum => Vec::new(),
        };
        Self {
            kind: cfg.optimizer,
            lr: cfg.learning_rate,
            momentum: cfg.momentum,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
            t: 0,
            first: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second,
        }
    }

    /// Applies one update with learning rate `lr_scale · lr`.
    pub fn step(&mut self, net: &mut Network, g: &Gradients, lr_scale: f64) {
        self.t += 1;
        let lr = self.lr * lr_scale;
        let params = net.layers_mut().iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]);
        match self.kind {
            OptimizerKind::SgdMomentum => {
                for ((p, g), v) in params.zip(g.iter()).zip(&mut self.first) {
                    for i in 0..p.len() {
                        v[i] = self.momentum * v[i] + g[i];
                        p[i] -= lr * v[i];
                    }
                }
            }
            OptimizerKind::AdaptiveMoment => {
                let t = self.t as i32;
                let c1 = 1.0 - self.beta1.powi(t);
                let c2 = 1.0 - self.beta2.powi(t);
                for (((p, g), m), v) in params.zip(g.iter()).zip(&mut self.first).zip(&mut self.second) {
                    for i in 0..p.len() {
                        m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                        v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                        let mh = m[i] / c1;
                        let vh = v[i] / c2;
                        p[i] -= lr * mh / (vh.sqrt() + self.epsilon);
                    }
                }
            }
        }
    }

    /// Buffers named `<parameter>.m` / `<parameter>.v`.
    pub fn state_tensors(&self, param_names: &[String]) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        for (suffix, bufs) in [("m", &self.first), ("v", &self.second)] {
            for (name, b) in param_names.iter().zip(bufs) {
                out.push(NamedTensor {
                    name: format!("{name}.{suffix}"),
                    shape: vec![b.len()],
                    data: b.clone(),
                });
            }
        }
        out
    }

    pub fn load_state(&mut self, param_names: &[String], state: &[NamedTensor], t: u64) -> Result<()> {
        for (suffix, bufs) in [("m", &mut self.first), ("v", &mut self.second)] {
            for (name, b) in param_names.iter().zip(bufs.iter_mut()) {
                let key = format!("{name}.{suffix}");
                let src = state
                    .iter()
                    .find(|s| s.name == key)
                    .ok_or_else(|| Error::Checkpoint(format!("optimizer state `{key}` missing")))?;
                if src.data.len() != b.len() {
                    return Err(Error::Checkpoint(format!("optimizer state `{key}` has wrong length")));
                }
                b.copy_from_slice(&src.data);
            }
        }
        self.t = t;
        Ok(())
    }
}

/// Resizes both images of every sample to `height × width`.
pub fn prepare_samples(
    samples: Vec<PairedSample>,
    policy: ResizePolicy,
    height: usize,
    width: usize,
) -> Result<Vec<PairedSample>> {
    samples
        .into_iter()
        .map(|mut s| {
            if (s.clear.height(), s.clear.width()) != (height, width) {
                s.clear = policy.apply(&s.clear, height, width)?;
                s.degraded = policy.apply(&s.degraded, height, width)?;
            }
            Ok(s)
        })
        .collect()
}

/// Mean SSIM(forward(degraded), clear) and mean SSIM(degraded, clear).
pub fn heldout_ssim(net: &Network, samples: &[PairedSample], p: &SsimParams) -> Result<(f64, f64)> {
    let pairs: Vec<(f64, f64)> = samples
        .par_iter()
        .map(|s| {
            let e = net.forward(&s.degraded)?;
            Ok((mean_ssim(&e, &s.clear, p)?, mean_ssim(&s.degraded, &s.clear, p)?))
        })
        .collect::<Result<_>>()?;
    let n = pairs.len().max(1) as f64;
    Ok((
        pairs.iter().map(|p| p.0).sum::<f64>() / n,
        pairs.iter().map(|p| p.1).sum::<f64>() / n,
    ))
}

pub struct Trainer {
    cfg: TrainConfig,
    net: Network,
    opt: Optimizer,
    phi: Box<dyn FeatureExtractor>,
    train: Vec<PairedSample>,
    eval: Vec<PairedSample>,
    step: u64,
    log: TrainLog,
    epoch_cache: Option<(u64, Vec<usize>)>,
    /// Loss tail inherited from the checkpoint this run resumed from.
    prior_tail: Vec<serde_json::Value>,
}

impl std::fmt::Debug for Trainer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Trainer")
            .field("step", &self.step)
            .field("train", &self.train.len())
            .field("eval", &self.eval.len())
            .finish_non_exhaustive()
    }
}

impl Trainer {
    /// Fresh network initialized from `cfg.seed`.
    pub fn new(cfg: TrainConfig, train: Vec<PairedSample>, eval: Vec<PairedSample>) -> Result<Self> {
        cfg.validate()?;
        let net = Network::build(cfg.network.clone(), cfg.seed)?;
        Self::with_network(cfg, net, train, eval)
    }

    pub fn with_network(
        cfg: TrainConfig,
        net: Network,
        train: Vec<PairedSample>,
        eval: Vec<PairedSample>,
    ) -> Result<Self> {
        cfg.validate()?;
        if net.config().fingerprint() != cfg.network.fingerprint() {
            return Err(Error::Fingerprint {
                stored: cfg.network.fingerprint(),
                computed: net.config().fingerprint(),
            });
        }
        if train.is_empty() {
            return Err(Error::validation("dataset", "no training samples"));
        }
        let [h, w, c] = cfg.network.input_size;
        for s in train.iter().chain(&eval) {
            let shape = s.degraded.shape();
            if (shape.height, shape.width, shape.channels) != (h, w, c) || s.clear.shape() != shape {
                return Err(Error::Sample {
                    id: s.id.clone(),
                    reason: format!(
                        "expected {h}x{w}x{c} pairs, got {} / {}",
                        s.degraded.shape(),
                        s.clear.shape()
                    ),
                });
            }
        }
        let phi = cfg.feature_extractor.instantiate()?;
        let opt = Optimizer::new(&cfg, &net);
        Ok(Self {
            cfg,
            net,
            opt,
            phi,
            train,
            eval,
            step: 0,
            log: TrainLog::default(),
            epoch_cache: None,
            prior_tail: Vec::new(),
        })
    }

    /// Continues from a checkpoint written by [`Trainer::checkpoint`].
    pub fn resume(
        ck: &Checkpoint,
        cfg: TrainConfig,
        train: Vec<PairedSample>,
        eval: Vec<PairedSample>,
    ) -> Result<Self> {
        let stored: TrainConfig = match &ck.meta.train_config {
            Some(v) => serde_json::from_value(v.clone())?,
            None => return Err(Error::Checkpoint("checkpoint carries no training config".into())),
        };
        if cfg.network.fingerprint() != ck.fingerprint {
            return Err(Error::Fingerprint {
                stored: ck.fingerprint.clone(),
                computed: cfg.network.fingerprint(),
            });
        }
        stored.check_resume_compatible(&cfg)?;
        let net = ck.to_network()?;
        let mut t = Self::with_network(cfg, net, train, eval)?;
        let names = t.net.parameter_names();
        t.opt.load_state(&names, &ck.optimizer, ck.meta.step)?;
        t.step = ck.meta.step;
        t.prior_tail = ck.meta.loss_tail.clone();
        Ok(t)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn log(&self) -> &TrainLog {
        &self.log
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Updates the step budget (a whitelisted resume change).
    pub fn set_steps(&mut self, steps: u64) -> Result<()> {
        if steps == 0 {
            return Err(Error::validation("steps", "must be > 0"));
        }
        self.cfg.steps = steps;
        Ok(())
    }

    fn epoch_permutation(&mut self, epoch: u64) -> &[usize] {
        if self.epoch_cache.as_ref().map(|c| c.0) != Some(epoch) {
            let mut perm: Vec<usize> = (0..self.train.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ epoch.wrapping_mul(0x9e37_79b9_7f4a_7c15));
            perm.shuffle(&mut rng);
            self.epoch_cache = Some((epoch, perm));
        }
        &self.epoch_cache.as_ref().expect("filled").1
    }

    /// Sample indices of 0-based step `s`.
    pub fn batch_indices(&mut self, s: u64) -> Vec<usize> {
        let n = self.train.len() as u64;
        let b = self.cfg.batch_size as u64;
        (s * b..(s + 1) * b)
            .map(|pos| {
                let (epoch, k) = (pos / n, (pos % n) as usize);
                self.epoch_permutation(epoch)[k]
            })
            .collect()
    }

    /// Batch-averaged loss and gradient at the current parameters.
    pub fn batch_gradient(&self, indices: &[usize]) -> Result<(LossBreakdown, Gradients)> {
        let loss_cfg = self.cfg.loss_config();
        let per_sample: Vec<(LossBreakdown, Gradients)> = indices
            .par_iter()
            .map(|&i| {
                let s = &self.train[i];
                let (out, cache) = self.net.forward_train(&s.degraded)?;
                let (b, g_out) = composite_loss_with_grad(&out, &s.clear, &loss_cfg, self.phi.as_ref())?;
                let mut g = Gradients::zeros_like(&self.net);
                self.net.backward(&cache, &g_out, &mut g)?;
                Ok((b, g))
            })
            .collect::<Result<_>>()?;
        let mut grads = Gradients::zeros_like(&self.net);
        for (_, g) in &per_sample {
            grads.add_assign(g);
        }
        grads.scale(1.0 / indices.len() as f64);
        let breakdowns: Vec<LossBreakdown> = per_sample.into_iter().map(|p| p.0).collect();
        Ok((LossBreakdown::mean(&breakdowns), grads))
    }

    /// One optimizer step. On a non-finite loss or gradient the parameters
    /// are left untouched and an error is returned.
    pub fn step_once(&mut self) -> Result<StepRecord> {
        let started = Instant::now();
        let indices = self.batch_indices(self.step);
        let (b, mut grads) = self.batch_gradient(&indices)?;
        let norm = grads.global_norm();
        let next = self.step + 1;
        if !b.is_finite() || !norm.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: next,
                detail: format!(
                    "total={} sl={} pl={} el={} grad_norm={norm}; parameters kept from step {}",
                    b.total,
                    b.sl,
                    b.pl(),
                    b.el,
                    self.step
                ),
            });
        }
        if let Some(c) = self.cfg.clip_norm {
            if norm > c {
                grads.scale(c / norm);
            }
        }
        let scale = self.cfg.lr_schedule.factor(self.step);
        self.opt.step(&mut self.net, &grads, scale);
        self.step = next;
        let rec = StepRecord::new(next, &b, norm, started.elapsed().as_secs_f64());
        self.log.records.push(LogRecord::Step(rec));
        if self.cfg.eval_every > 0 && next.is_multiple_of(self.cfg.eval_every) && !self.eval.is_empty() {
            self.evaluate()?;
        }
        Ok(rec)
    }

    /// Records a held-out snapshot at the current step.
    pub fn evaluate(&mut self) -> Result<Option<EvalRecord>> {
        if self.eval.is_empty() {
            return Ok(None);
        }
        let (e, d) = heldout_ssim(&self.net, &self.eval, &self.cfg.ssim)?;
        let rec = EvalRecord {
            step: self.step,
            heldout_ssim: e,
            degraded_ssim: d,
        };
        self.log.records.push(LogRecord::Eval(rec));
        Ok(Some(rec))
    }

    /// Runs until `cfg.steps` steps have been taken in total.
    pub fn run(&mut self) -> Result<()> {
        self.run_with(|_| {})
    }

    pub fn run_with(&mut self, mut on_step: impl FnMut(&StepRecord)) -> Result<()> {
        while self.step < self.cfg.steps {
            let rec = self.step_once()?;
            on_step(&rec);
        }
        Ok(())
    }

    /// Snapshot of the network, optimizer state and training metadata.
    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let steps: Vec<&StepRecord> = self.log.steps().collect();
        // timings are left out so checkpoints are byte-reproducible
        let mut tail = self.prior_tail.clone();
        for r in &steps[steps.len().saturating_sub(LOSS_TAIL)..] {
            let mut v = serde_json::to_value(r)?;
            if let Some(m) = v.as_object_mut() {
                m.remove("wall_time_s");
            }
            tail.push(v);
        }
        let tail = tail.split_off(tail.len().saturating_sub(LOSS_TAIL));
        let meta = CheckpointMeta {
            seed: self.cfg.seed,
            step: self.step,
            loss_tail: tail,
            train_config: Some(serde_json::to_value(&self.cfg)?),
        };
        let names = self.net.parameter_names();
        Ok(Checkpoint::from_network(&self.net, meta).with_optimizer(self.opt.state_tensors(&names)))
    }
}

/// Trains a fresh network for `cfg.steps` steps.
pub fn train(cfg: TrainConfig, train: Vec<PairedSample>, eval: Vec<PairedSample>) -> Result<(Checkpoint, TrainLog)> {
    let mut t = Trainer::new(cfg, train, eval)?;
    t.run()?;
    if t.cfg.eval_every > 0 && t.step % t.cfg.eval_every != 0 {
        t.evaluate()?;
    }
    Ok((t.checkpoint()?, t.log.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degrade::{synthetic_haze_pairs, HazeRange};

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            steps: 6,
            batch_size: 2,
            learning_rate: 1e-3,
            network: NetworkConfig::scaled(12, 12, 4),
            feature_extractor: ExtractorSource::Identity,
            eval_every: 3,
            ..Default::default()
        }
    }

    fn data(n: usize) -> Vec<PairedSample> {
        synthetic_haze_pairs(n, 12, 12, 7, HazeRange::default()).unwrap()
    }

    #[test]
    fn cosine_schedule_end_points() {
        let s = LrSchedule::Cosine {
            horizon: 10,
            floor: 0.1,
        };
        assert_eq!(s.factor(0), 1.0);
        assert!((s.factor(5) - 0.55).abs() < 1e-12);
        assert!((s.factor(10) - 0.1).abs() < 1e-12);
        assert!((s.factor(50) - 0.1).abs() < 1e-12);
        assert_eq!(LrSchedule::Constant.factor(7), 1.0);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { steps: 0, ..tiny_cfg() }.validate().is_err());
        assert!(TrainConfig {
            batch_size: 0,
            ..tiny_cfg()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            learning_rate: 0.0,
            ..tiny_cfg()
        }
        .validate()
        .is_err());
        tiny_cfg().validate().unwrap();
    }

    #[test]
    fn config_json_round_trip_and_unknown_fields() {
        let cfg = tiny_cfg();
        let s = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<TrainConfig>(&s).unwrap(), cfg);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"stepz": 3}"#).is_err());
        let partial: TrainConfig = serde_json::from_str(r#"{"steps": 3, "optimizer": "sgd-momentum"}"#).unwrap();
        assert_eq!(partial.optimizer, OptimizerKind::SgdMomentum);
        assert_eq!(partial.batch_size, 8);
    }

    #[test]
    fn batches_cover_each_epoch() {
        let mut t = Trainer::new(
            TrainConfig {
                batch_size: 5,
                ..tiny_cfg()
            },
            data(5),
            vec![],
        )
        .unwrap();
        let mut a = t.batch_indices(0);
        a.sort();
        assert_eq!(a, vec![0, 1, 2, 3, 4]);
        assert_eq!(t.batch_indices(3), t.batch_indices(3));
    }

    #[test]
    fn log_is_monotone_and_round_trips() {
        let (_, log) = train(tiny_cfg(), data(3), data(2)).unwrap();
        log.validate().unwrap();
        assert_eq!(log.steps().count(), 6);
        assert_eq!(log.evals().map(|e| e.step).collect::<Vec<_>>(), vec![3, 6]);
        assert_eq!(TrainLog::from_ndjson(&log.to_ndjson().unwrap()).unwrap(), log);
    }

    #[test]
    fn sgd_momentum_runs() {
        let cfg = TrainConfig {
            optimizer: OptimizerKind::SgdMomentum,
            ..tiny_cfg()
        };
        let (ck, _) = train(cfg, data(2), vec![]).unwrap();
        assert_eq!(ck.meta.step, 6);
        assert_eq!(ck.optimizer.len(), ck.params.len());
    }

    #[test]
    fn resume_rejects_architecture_and_other_changes() {
        let mut t = Trainer::new(tiny_cfg(), data(2), vec![]).unwrap();
        t.step_once().unwrap();
        let ck = t.checkpoint().unwrap();
        let wider = TrainConfig {
            network: NetworkConfig::scaled(12, 12, 6),
            ..tiny_cfg()
        };
        assert!(matches!(
            Trainer::resume(&ck, wider, data(2), vec![]),
            Err(Error::Fingerprint { .. })
        ));
        let lr = TrainConfig {
            learning_rate: 0.5,
            ..tiny_cfg()
        };
        assert!(Trainer::resume(&ck, lr, data(2), vec![]).unwrap_err().is_validation());
        let more = TrainConfig {
            steps: 10,
            eval_every: 0,
            ..tiny_cfg()
        };
        let r = Trainer::resume(&ck, more, data(2), vec![]).unwrap();
        assert_eq!(r.step(), 1);
    }

    #[test]
    fn non_finite_loss_keeps_last_good_parameters() {
        let mut t = Trainer::new(tiny_cfg(), data(2), vec![]).unwrap();
        t.step_once().unwrap();
        let good = t.network().clone();
        t.train[0].degraded.as_mut_slice()[0] = f64::NAN;
        t.train[1].degraded.as_mut_slice()[0] = f64::NAN;
        match t.step_once() {
            Err(Error::NonFiniteLoss { step, .. }) => assert_eq!(step, 2),
            other => panic!("{other:?}"),
        }
        assert_eq!(t.network(), &good);
        assert_eq!(t.step(), 1);
        assert_eq!(t.checkpoint().unwrap().meta.step, 1);
    }
}

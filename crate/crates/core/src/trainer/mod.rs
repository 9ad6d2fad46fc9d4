//! Alternating generator / cleaner training over batches and epochs.

mod ipc;

pub use ipc::{ipc_filter, IpcMethod, IpcResult};

use rand::seq::SliceRandom;
use serde::Serialize;
use thiserror::Error;

use crate::cluster::{ClusterError, Samples};
use crate::features::TokenSequence;
use crate::labels::{LabelState, EXCLUDED};
use crate::models::{
    self, assign_initial_labels, build_pair, clean_labels, instance_errors, CleanPhase, Cleaner, Generator, ModelConfig,
    ModelError, ModelPair, Target,
};
use crate::rng;
use crate::tensor::{adam_step, AdamConfig, Graph, OptimizerState, Scalar, Tensor};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no feature sequences to train on")]
    EmptyInput,
    #[error("non-finite {which} loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { which: &'static str, epoch: usize, batch: usize },
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("unknown ablation variant {0:?}")]
    UnknownVariant(String),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// How texture-labelled instances are treated by the generator after the
/// first epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DlMode {
    /// Reconstruction target becomes the fixed Gaussian.
    Target,
    /// The fixed Gaussian replaces both input and target.
    Input,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Convergence {
    /// Largest fraction of changed labels that counts as stable.
    pub eps: f64,
    /// Consecutive stable epochs required.
    pub patience: usize,
}

impl Default for Convergence {
    fn default() -> Self {
        Self { eps: 0.005, patience: 5 }
    }
}

/// Training learning rate; a few optimiser steps per batch at this rate let
/// the first epoch's labels form before the cleaner takes over.
pub const DEFAULT_LR: f64 = 3e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// IPC cluster count.
    pub clusters: usize,
    pub ipc_method: IpcMethod,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Cleaner gate on the first epoch: a non-texture label flips to texture
    /// when the cleaner score exceeds this.
    pub beta_c: f64,
    pub seed: u64,
    pub use_ipc: bool,
    pub use_cleaner: bool,
    pub use_generator: bool,
    pub use_dl: bool,
    pub dl_mode: DlMode,
    pub pair: ModelPair,
    pub model: ModelConfig,
    pub adam: AdamConfig,
    /// Optimiser steps per batch for each model.
    pub generator_steps: usize,
    pub cleaner_steps: usize,
    /// When seeding labels from IPC clusters, the larger one is non-texture.
    pub larger_is_non_texture: bool,
    pub convergence: Option<Convergence>,
    /// Keep every epoch's standard reconstruction errors and labels in the
    /// outcome.
    pub track_errors: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            clusters: 5,
            ipc_method: IpcMethod::KMeans,
            batch_size: 128,
            max_epochs: 200,
            beta_c: 0.9,
            seed: 0,
            use_ipc: true,
            use_cleaner: true,
            use_generator: true,
            use_dl: true,
            dl_mode: DlMode::Target,
            pair: ModelPair::Transformer,
            model: ModelConfig::default(),
            adam: AdamConfig {
                lr: DEFAULT_LR,
                ..AdamConfig::default()
            },
            generator_steps: 20,
            cleaner_steps: 20,
            larger_is_non_texture: true,
            convergence: Some(Convergence::default()),
            track_errors: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.clusters < 2 {
            return bad(format!("cluster count {} is below 2", self.clusters));
        }
        if self.batch_size < 2 {
            return bad(format!("batch size {} is below 2", self.batch_size));
        }
        if self.max_epochs < 1 {
            return bad("max_epochs must be at least 1".into());
        }
        if !(self.beta_c > 0.0 && self.beta_c < 1.0) {
            return bad(format!("beta_c {} is outside (0, 1)", self.beta_c));
        }
        if !self.use_generator && !self.use_cleaner {
            return bad("at least one of generator and cleaner must run".into());
        }
        if !self.use_generator && !self.use_ipc {
            return bad("labels without a generator are seeded from the clustering".into());
        }
        if let Some(c) = self.convergence {
            if !(c.eps >= 0.0) || c.patience == 0 {
                return bad("convergence needs eps ≥ 0 and patience ≥ 1".into());
            }
        }
        Ok(())
    }
}

/// One line of training progress.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-instance generator loss over the epoch's batches.
    pub tlg_loss: Option<f64>,
    pub tlc_loss: Option<f64>,
    pub texture: usize,
    pub non_texture: usize,
    pub change_fraction: f64,
}

/// Which reconstruction error scored each labelled instance after the
/// first epoch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Audit {
    pub standard_errors: usize,
    pub gaussian_errors: usize,
    pub texture_processed: usize,
    pub non_texture_processed: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Final label per input sequence (1 texture, 0 non-texture).
    pub labels: Vec<u8>,
    pub centers: Vec<usize>,
    pub records: Vec<EpochRecord>,
    pub audit: Audit,
    /// Per epoch, every instance's standard reconstruction error (empty
    /// unless tracking was requested or no generator ran).
    pub error_history: Vec<Vec<f64>>,
    /// Per epoch, every instance's label (empty unless tracking was requested).
    pub label_history: Vec<Vec<u8>>,
    /// Instances the first epoch trained on.
    pub first_epoch_set: Vec<usize>,
    pub converged: bool,
}

impl TrainOutcome {
    /// Labels scattered to facets; facets without a sequence are excluded.
    pub fn label_state(&self, facet_count: usize) -> LabelState {
        let mut labels = vec![EXCLUDED; facet_count];
        for (&c, &l) in self.centers.iter().zip(&self.labels) {
            labels[c] = l as i8;
        }
        LabelState::from_labels(labels)
    }
}

/// True iff each of the last `patience` transitions changed fewer than
/// `eps` of the labels.
pub fn convergence_check(history: &[Vec<u8>], eps: f64, patience: usize) -> bool {
    if history.len() < patience + 1 || patience == 0 {
        return false;
    }
    history.windows(2).rev().take(patience).all(|w| change_fraction(&w[0], &w[1]) < eps)
}

pub fn change_fraction(a: &[u8], b: &[u8]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).filter(|(x, y)| x != y).count() as f64 / a.len() as f64
}

/// Splits `order` into `ceil(len / size)` batches of near-equal size.
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let n = order.len();
    if n == 0 {
        return Vec::new();
    }
    let m = n.div_ceil(size);
    let mut out = Vec::with_capacity(m);
    let mut start = 0;
    for b in 0..m {
        let end = start + n / m + usize::from(b < n % m);
        out.push(&order[start..end]);
        start = end;
    }
    out
}

struct Trainer<'a, T: Scalar> {
    cfg: &'a TrainConfig,
    generator: Box<dyn Generator<T>>,
    cleaner: Box<dyn Cleaner<T>>,
    gen_inputs: Vec<Tensor<T>>,
    cls_inputs: Vec<Tensor<T>>,
    gen_opt: OptimizerState<T>,
    cls_opt: OptimizerState<T>,
    epoch: usize,
    batch: usize,
}

impl<T: Scalar> Trainer<'_, T> {
    fn check(&self, v: f64, which: &'static str) -> Result<f64, TrainError> {
        if v.is_finite() {
            Ok(v)
        } else {
            Err(TrainError::NonFiniteLoss {
                which,
                epoch: self.epoch,
                batch: self.batch,
            })
        }
    }

    /// Generator steps on a batch; returns the last loss per instance.
    fn train_generator(&mut self, idx: &[usize], targets: &[Target]) -> Result<f64, TrainError> {
        let mut last = 0.0;
        for _ in 0..self.cfg.generator_steps {
            let inputs: Vec<&Tensor<T>> = idx.iter().map(|&i| &self.gen_inputs[i]).collect();
            let mut g = Graph::new();
            let b = g.bind(self.generator.params());
            let l = models::tlg_loss(&mut g, &b, self.generator.as_ref(), &inputs, targets)?;
            last = self.check(g.value(l.loss).item().as_f64(), "generator")? / idx.len() as f64;
            let grads = g.backward(l.loss).for_params(&b, self.generator.params());
            adam_step(self.generator.params_mut(), &grads, &mut self.gen_opt).map_err(ModelError::from)?;
        }
        Ok(last)
    }

    fn train_cleaner(&mut self, idx: &[usize], labels: &[u8]) -> Result<f64, TrainError> {
        let mut last = 0.0;
        for _ in 0..self.cfg.cleaner_steps {
            let inputs: Vec<&Tensor<T>> = idx.iter().map(|&i| &self.cls_inputs[i]).collect();
            let mut g = Graph::new();
            let b = g.bind(self.cleaner.params());
            let (loss, _) = models::tlc_loss(&mut g, &b, self.cleaner.as_ref(), &inputs, labels)?;
            last = self.check(g.value(loss).item().as_f64(), "cleaner")?;
            let grads = g.backward(loss).for_params(&b, self.cleaner.params());
            adam_step(self.cleaner.params_mut(), &grads, &mut self.cls_opt).map_err(ModelError::from)?;
        }
        Ok(last)
    }

    /// Errors of the current generator against the given targets.
    fn errors(&self, idx: &[usize], targets: &[Target]) -> Result<Vec<f64>, TrainError> {
        let inputs: Vec<&Tensor<T>> = idx.iter().map(|&i| &self.gen_inputs[i]).collect();
        let mut g = Graph::new();
        let b = g.bind(self.generator.params());
        let l = models::tlg_loss(&mut g, &b, self.generator.as_ref(), &inputs, targets)?;
        let e = instance_errors(g.value(l.recon), &l.target, idx.len());
        for &v in &e {
            self.check(v, "reconstruction")?;
        }
        Ok(e)
    }

    fn scores(&self, idx: &[usize]) -> Result<Vec<f64>, TrainError> {
        let inputs: Vec<&Tensor<T>> = idx.iter().map(|&i| &self.cls_inputs[i]).collect();
        Ok(models::predict_batch(self.cleaner.as_ref(), &inputs)?)
    }

    fn standard_errors(&self, n: usize) -> Result<Vec<f64>, TrainError> {
        let all: Vec<usize> = (0..n).collect();
        let mut out = Vec::with_capacity(n);
        for chunk in all.chunks(self.cfg.batch_size.max(1)) {
            out.extend(self.errors(chunk, &vec![Target::Input; chunk.len()])?);
        }
        Ok(out)
    }
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Runs the alternating training loop over all sequences and returns the
/// final labels.
pub fn run_algorithm1(features: &[TokenSequence], cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    run_algorithm1_with(features, cfg, &mut |_| {})
}

/// As [`run_algorithm1`], reporting every finished epoch to `progress`.
pub fn run_algorithm1_with(
    features: &[TokenSequence],
    cfg: &TrainConfig,
    progress: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome, TrainError> {
    run_typed::<f32>(features, cfg, progress)
}

fn run_typed<T: Scalar>(
    features: &[TokenSequence],
    cfg: &TrainConfig,
    progress: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome, TrainError> {
    if features.is_empty() {
        return Err(TrainError::EmptyInput);
    }
    cfg.validate()?;
    let n = features.len();
    let (generator, cleaner) = build_pair::<T>(cfg.pair, &cfg.model, cfg.seed)?;
    let gen_inputs = features.iter().map(|f| generator.prepare(f)).collect::<Result<Vec<_>, _>>()?;
    let cls_inputs = features.iter().map(|f| cleaner.prepare(f)).collect::<Result<Vec<_>, _>>()?;
    let mut tr = Trainer {
        cfg,
        gen_opt: OptimizerState::new(generator.params(), cfg.adam),
        cls_opt: OptimizerState::new(cleaner.params(), cfg.adam),
        generator,
        cleaner,
        gen_inputs,
        cls_inputs,
        epoch: 1,
        batch: 0,
    };

    let flat: Vec<f64> = features.iter().flat_map(|f| f.data.iter().map(|&v| v as f64)).collect();
    let samples = Samples::new(&flat, features[0].data.len().max(1))?;
    let ipc = if cfg.use_ipc {
        Some(ipc_filter(samples, cfg.clusters, cfg.ipc_method, cfg.seed)?)
    } else {
        None
    };
    let first_set: Vec<usize> = match &ipc {
        Some(r) => r.kept.clone(),
        None => (0..n).collect(),
    };

    let mut labels: Vec<u8> = match (&ipc, cfg.use_generator) {
        (Some(r), false) => r
            .nearest_major(samples)
            .into_iter()
            .map(|largest| u8::from(largest != cfg.larger_is_non_texture))
            .collect(),
        _ => vec![0; n],
    };
    let mut shuffle = rng::stream(cfg.seed, "batches");
    let mut history: Vec<Vec<u8>> = Vec::new();
    let mut records = Vec::new();
    let mut audit = Audit::default();
    let mut error_history = Vec::new();
    let mut converged = false;

    for epoch in 1..=cfg.max_epochs {
        tr.epoch = epoch;
        let before = labels.clone();
        let (mut g_losses, mut c_losses) = (Vec::new(), Vec::new());
        if epoch == 1 {
            let mut order = first_set.clone();
            order.shuffle(&mut shuffle);
            for (bi, idx) in batches(&order, cfg.batch_size).into_iter().enumerate() {
                tr.batch = bi;
                let mut l: Vec<u8> = if cfg.use_generator {
                    let targets = vec![Target::Input; idx.len()];
                    g_losses.push(tr.train_generator(idx, &targets)?);
                    assign_initial_labels(&tr.errors(idx, &targets)?)?
                } else {
                    idx.iter().map(|&i| labels[i]).collect()
                };
                if cfg.use_cleaner {
                    c_losses.push(tr.train_cleaner(idx, &l)?);
                    l = clean_labels(&tr.scores(idx)?, CleanPhase::FirstEpoch { prior: &l }, cfg.beta_c)?;
                }
                for (&i, &v) in idx.iter().zip(&l) {
                    labels[i] = v;
                }
            }
            // label every instance with the first-epoch models
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut shuffle);
            for idx in batches(&order, cfg.batch_size) {
                let mut l: Vec<u8> = if cfg.use_generator {
                    assign_initial_labels(&tr.errors(idx, &vec![Target::Input; idx.len()])?)?
                } else {
                    idx.iter().map(|&i| labels[i]).collect()
                };
                if cfg.use_cleaner {
                    l = clean_labels(&tr.scores(idx)?, CleanPhase::FirstEpoch { prior: &l }, cfg.beta_c)?;
                }
                for (&i, &v) in idx.iter().zip(&l) {
                    labels[i] = v;
                }
            }
        } else {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut shuffle);
            for (bi, idx) in batches(&order, cfg.batch_size).into_iter().enumerate() {
                tr.batch = bi;
                let current: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
                let mut next = current.clone();
                if cfg.use_generator {
                    let targets: Vec<Target> = current
                        .iter()
                        .map(|&l| match (l == 1 && cfg.use_dl, cfg.dl_mode) {
                            (false, _) => Target::Input,
                            (true, DlMode::Target) => Target::Gaussian,
                            (true, DlMode::Input) => Target::GaussianInput,
                        })
                        .collect();
                    g_losses.push(tr.train_generator(idx, &targets)?);
                    let e = tr.errors(idx, &targets)?;
                    for t in &targets {
                        if *t == Target::Input {
                            audit.standard_errors += 1;
                        } else {
                            audit.gaussian_errors += 1;
                        }
                    }
                    for &l in &current {
                        if l == 1 {
                            audit.texture_processed += 1;
                        } else {
                            audit.non_texture_processed += 1;
                        }
                    }
                    if !cfg.use_cleaner {
                        let standard = if targets.iter().all(|t| *t == Target::Input) {
                            e
                        } else {
                            tr.errors(idx, &vec![Target::Input; idx.len()])?
                        };
                        next = assign_initial_labels(&standard)?;
                    }
                }
                if cfg.use_cleaner {
                    c_losses.push(tr.train_cleaner(idx, &current)?);
                    next = clean_labels(&tr.scores(idx)?, CleanPhase::Later, cfg.beta_c)?;
                }
                for (&i, &v) in idx.iter().zip(&next) {
                    labels[i] = v;
                }
            }
        }

        if cfg.track_errors && cfg.use_generator {
            error_history.push(tr.standard_errors(n)?);
        }
        let record = EpochRecord {
            epoch,
            tlg_loss: mean(&g_losses),
            tlc_loss: mean(&c_losses),
            texture: labels.iter().filter(|&&l| l == 1).count(),
            non_texture: labels.iter().filter(|&&l| l == 0).count(),
            change_fraction: change_fraction(&before, &labels),
        };
        progress(&record);
        records.push(record);
        history.push(labels.clone());
        if let Some(c) = cfg.convergence {
            if convergence_check(&history, c.eps, c.patience) {
                converged = true;
                break;
            }
        }
    }

    Ok(TrainOutcome {
        labels,
        centers: features.iter().map(|f| f.center).collect(),
        records,
        audit,
        error_history,
        label_history: if cfg.track_errors { history } else { Vec::new() },
        first_epoch_set: first_set,
        converged,
    })
}

/// Ablation variants, in report order.
pub const VARIANTS: [&str; 6] = ["w/o-ipc", "w/o-cleaner", "w/o-generator", "w/o-dl", "alg+mlc", "full"];

/// Configuration of a named ablation variant derived from `base`.
pub fn variant_config(variant: &str, base: &TrainConfig) -> Result<TrainConfig, TrainError> {
    let mut cfg = base.clone();
    match variant {
        "full" => {}
        "w/o-ipc" => cfg.use_ipc = false,
        "w/o-cleaner" => cfg.use_cleaner = false,
        "w/o-generator" => cfg.use_generator = false,
        "w/o-dl" => cfg.use_dl = false,
        "alg+mlc" => cfg.pair = ModelPair::Dense,
        other => return Err(TrainError::UnknownVariant(other.to_string())),
    }
    Ok(cfg)
}

pub fn run_ablation(variant: &str, features: &[TokenSequence], base: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    run_algorithm1(features, &variant_config(variant, base)?)
}

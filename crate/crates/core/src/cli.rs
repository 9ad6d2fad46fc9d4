//! Command-line front end. Progress goes to stderr, records to stdout.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::eval::{self, BaselineMethod, Mask, Pattern, RunRecord, SynthSpec};
use crate::features::{self, ExtractorKind, FeatureError, TokenConfig};
use crate::labels::{read_labels, write_labels};
use crate::mesh::{self, load_mesh, MeshFormat};
use crate::models::{self, ModelConfig, ModelPair};
use crate::patch::{DescriptorKind, PatchConfig, PatchError};
use crate::pipeline::{self, PipelineError, SegmentConfig};
use crate::trainer::{self, Convergence, DlMode, IpcMethod, TrainConfig, TrainError, DEFAULT_LR};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "texseg", version, about = "Unsupervised texture segmentation of triangle meshes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Segment a mesh into texture / non-texture facets.
    Segment {
        mesh: PathBuf,
        /// Label CSV output.
        #[arg(long)]
        out: PathBuf,
        /// Also write a per-facet coloured PLY.
        #[arg(long)]
        ply: Option<PathBuf>,
        /// Precomputed feature file replacing the built-in extractor.
        #[arg(long)]
        features: Option<PathBuf>,
        #[command(flatten)]
        opts: SegmentArgs,
    },
    /// Score predicted labels against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Run name in the record.
        #[arg(long, default_value = "eval")]
        name: String,
    },
    /// Two-way clustering baseline on the frozen features.
    Baseline {
        mesh: PathBuf,
        #[arg(long, default_value = "kmeans2", value_parser = ["kmeans2", "gmm2", "dbscan"])]
        method: String,
        #[arg(long, default_value_t = 1.0)]
        eps: f64,
        #[arg(long, default_value_t = 5)]
        min_pts: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Align to and score against this ground truth.
        #[arg(long)]
        gt: Option<PathBuf>,
        #[command(flatten)]
        opts: SegmentArgs,
    },
    /// Write a synthetic textured grid and its ground truth.
    Synth {
        #[arg(long, default_value = "sine", value_parser = ["sine", "bumps", "none"])]
        pattern: String,
        /// `half-plane`, `disc`, `disc:<radius>` or `full`.
        #[arg(long, default_value = "half-plane")]
        mask: String,
        #[arg(long, default_value_t = 64)]
        side: usize,
        #[arg(long, default_value_t = 0.1)]
        amplitude: f64,
        /// Angular frequency; defaults to 8 periods across the grid.
        #[arg(long)]
        frequency: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
    /// Run ablation variants of the training loop.
    Ablate {
        mesh: PathBuf,
        /// `all` or a comma-separated list of variant names.
        #[arg(long, default_value = "all")]
        variants: String,
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long)]
        features: Option<PathBuf>,
        #[command(flatten)]
        opts: SegmentArgs,
    },
    /// Finite-difference gradient checks of the models.
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Extract frozen features of a mesh to a feature file.
    Features {
        mesh: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        opts: SegmentArgs,
    },
}

/// Flags shared by every command that runs the pipeline.
#[derive(Debug, Clone, Args)]
pub struct SegmentArgs {
    /// Mesh format: obj, ply or auto.
    #[arg(long, default_value = "auto")]
    pub format: MeshFormat,
    #[arg(long, default_value_t = 24)]
    pub grid: usize,
    /// Descriptor channels.
    #[arg(long, default_value = "SV,LD,Cur", value_delimiter = ',')]
    pub channels: Vec<DescriptorKind>,
    #[arg(long)]
    pub no_standardize: bool,
    #[arg(long, default_value_t = 2)]
    pub support_rings: usize,
    #[arg(long, default_value = "identity-pool")]
    pub extractor: ExtractorKind,
    #[arg(long, default_value_t = 0)]
    pub extractor_seed: u64,
    #[arg(long, default_value_t = 256)]
    pub dim: usize,
    #[arg(long, default_value_t = 16)]
    pub tokens: usize,
    #[arg(long)]
    pub no_positional: bool,
    /// Seed of all training randomness.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub clusters: usize,
    #[arg(long, default_value = "kmeans")]
    pub ipc: IpcMethod,
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 200)]
    pub max_epochs: usize,
    #[arg(long, default_value_t = 0.9)]
    pub beta_c: f64,
    #[arg(long)]
    pub no_ipc: bool,
    #[arg(long)]
    pub no_cleaner: bool,
    #[arg(long)]
    pub no_generator: bool,
    #[arg(long)]
    pub no_dl: bool,
    /// Feed the fixed Gaussian as input too, not only as target.
    #[arg(long)]
    pub dl_input: bool,
    #[arg(long, default_value = "transformer", value_parser = ["transformer", "dense"])]
    pub pair: String,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 4)]
    pub mlp_ratio: usize,
    #[arg(long)]
    pub no_latent_norm: bool,
    #[arg(long, default_value_t = DEFAULT_LR)]
    pub lr: f64,
    #[arg(long, default_value_t = 20)]
    pub generator_steps: usize,
    #[arg(long, default_value_t = 20)]
    pub cleaner_steps: usize,
    /// Label-change fraction below which an epoch counts as stable.
    #[arg(long, default_value_t = 0.005)]
    pub converge_eps: f64,
    #[arg(long, default_value_t = 5)]
    pub patience: usize,
    /// Always run `max_epochs`.
    #[arg(long)]
    pub no_convergence: bool,
    /// Suppress per-epoch progress lines.
    #[arg(long, short)]
    pub quiet: bool,
    /// Drop the extra facets on non-manifold edges instead of failing; they
    /// are labelled as excluded.
    #[arg(long)]
    pub permissive: bool,
}

impl SegmentArgs {
    pub fn config(&self) -> SegmentConfig {
        let train_defaults = TrainConfig::default();
        SegmentConfig {
            patch: PatchConfig {
                grid: self.grid,
                channels: self.channels.clone(),
                standardize: !self.no_standardize,
                support_rings: self.support_rings,
            },
            extractor: self.extractor,
            extractor_seed: self.extractor_seed,
            dim: self.dim,
            tokens: TokenConfig {
                tokens: self.tokens,
                positional: !self.no_positional,
            },
            train: TrainConfig {
                clusters: self.clusters,
                ipc_method: self.ipc,
                batch_size: self.batch_size,
                max_epochs: self.max_epochs,
                beta_c: self.beta_c,
                seed: self.seed,
                use_ipc: !self.no_ipc,
                use_cleaner: !self.no_cleaner,
                use_generator: !self.no_generator,
                use_dl: !self.no_dl,
                dl_mode: if self.dl_input { DlMode::Input } else { DlMode::Target },
                pair: if self.pair == "dense" { ModelPair::Dense } else { ModelPair::Transformer },
                model: ModelConfig {
                    tokens: self.tokens,
                    width: if self.tokens == 0 { 0 } else { self.dim / self.tokens },
                    layers: self.layers,
                    heads: self.heads,
                    mlp_ratio: self.mlp_ratio,
                    normalize_latent: !self.no_latent_norm,
                },
                adam: crate::tensor::AdamConfig {
                    lr: self.lr,
                    ..train_defaults.adam
                },
                generator_steps: self.generator_steps,
                cleaner_steps: self.cleaner_steps,
                convergence: (!self.no_convergence).then_some(Convergence {
                    eps: self.converge_eps,
                    patience: self.patience,
                }),
                ..train_defaults
            },
        }
    }
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(String),
}

type Outcome<T = ()> = Result<T, Failure>;

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

/// Configuration mistakes are usage errors; everything else is a runtime
/// failure.
fn classify(e: PipelineError) -> Failure {
    match &e {
        PipelineError::Patch(PatchError::BadGridSize(_))
        | PipelineError::Feature(FeatureError::IndivisibleDimension { .. })
        | PipelineError::Train(TrainError::Config(_) | TrainError::UnknownVariant(_)) => Failure::Usage(e.to_string()),
        _ => Failure::Runtime(e.to_string()),
    }
}

fn with_path(path: &Path, e: impl std::fmt::Display) -> Failure {
    let msg = e.to_string();
    let shown = path.display().to_string();
    if msg.contains(&shown) {
        Failure::Runtime(msg)
    } else {
        Failure::Runtime(format!("{shown}: {msg}"))
    }
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code.
pub fn run_cli<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = if code == EXIT_OK {
                write!(out, "{}", e.render())
            } else {
                write!(err, "{}", e.render())
            };
            return code;
        }
    };
    match run(cli.command, out, err) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(m)) => {
            let _ = writeln!(err, "error: {m}\n\nFor more information, try '--help'.");
            EXIT_USAGE
        }
        Err(Failure::Runtime(m)) => {
            let _ = writeln!(err, "error: {m}");
            EXIT_RUNTIME
        }
    }
}

fn validated(opts: &SegmentArgs) -> Outcome<SegmentConfig> {
    let cfg = opts.config();
    cfg.validate().map_err(classify)?;
    Ok(cfg)
}

/// A loaded mesh and, under `--permissive`, the facets dropped from it.
struct Loaded {
    mesh: mesh::Mesh,
    dropped: Vec<usize>,
}

fn load(path: &Path, opts: &SegmentArgs) -> Outcome<Loaded> {
    let mesh = load_mesh(path, opts.format).map_err(|e| with_path(path, e))?;
    let dropped = if opts.permissive {
        mesh::Adjacency::non_manifold_facets(&mesh)
    } else {
        Vec::new()
    };
    Ok(Loaded { mesh, dropped })
}

/// Features keyed by facet ids of the loaded mesh.
fn mesh_features(m: &Loaded, cfg: &SegmentConfig) -> Outcome<(Vec<features::FeatureVector>, usize)> {
    if m.dropped.is_empty() {
        return pipeline::mesh_features(&m.mesh, cfg).map_err(classify);
    }
    let (reduced, kept) = m.mesh.without_facets(&m.dropped).map_err(runtime)?;
    let (mut feats, _) = pipeline::mesh_features(&reduced, cfg).map_err(classify)?;
    for f in &mut feats {
        f.center = kept[f.center];
    }
    let excluded = m.mesh.facet_count() - feats.len();
    Ok((feats, excluded))
}

fn features_for(
    mesh: &Loaded,
    cfg: &SegmentConfig,
    precomputed: Option<&Path>,
) -> Outcome<Vec<features::FeatureVector>> {
    match precomputed {
        Some(p) => {
            let f = features::load_features(p).map_err(|e| with_path(p, e))?;
            if let Some(v) = f.iter().find(|v| v.dim() != cfg.dim) {
                return Err(Failure::Usage(format!(
                    "feature file has dimension {}, but --dim is {}",
                    v.dim(),
                    cfg.dim
                )));
            }
            Ok(f.into_iter().filter(|v| mesh.dropped.binary_search(&v.center).is_err()).collect())
        }
        None => mesh_features(mesh, cfg).map(|(f, _)| f),
    }
}

fn progress<'a>(quiet: bool, err: &'a mut dyn Write, tag: &'a str) -> impl FnMut(&trainer::EpochRecord) + 'a {
    move |r| {
        if !quiet {
            let _ = writeln!(
                err,
                "[{tag}] epoch {} texture {} non-texture {} changed {:.4} tlg {} tlc {}",
                r.epoch,
                r.texture,
                r.non_texture,
                r.change_fraction,
                r.tlg_loss.map_or("-".into(), |v| format!("{v:.4}")),
                r.tlc_loss.map_or("-".into(), |v| format!("{v:.4}")),
            );
        }
    }
}

fn report(runs: &[RunRecord], out: &mut dyn Write, err: &mut dyn Write) -> Outcome {
    let rep = eval::emit_report(runs).map_err(runtime)?;
    write!(out, "{}", rep.records).map_err(runtime)?;
    write!(err, "{}", rep.table).map_err(runtime)?;
    Ok(())
}

fn run(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Outcome {
    match cmd {
        Command::Segment {
            mesh,
            out: labels_out,
            ply,
            features,
            opts,
        } => {
            let cfg = validated(&opts)?;
            let loaded = load(&mesh, &opts)?;
            let m = &loaded.mesh;
            let feats = features_for(&loaded, &cfg, features.as_deref())?;
            let seg = pipeline::segment_features(&feats, m.facet_count(), &cfg, &mut progress(opts.quiet, err, "segment"))
                .map_err(classify)?;
            write_labels(&seg.labels, &labels_out).map_err(runtime)?;
            if let Some(p) = ply {
                mesh::write_labeled_ply(m, &seg.labels, &p).map_err(|e| with_path(&p, e))?;
            }
            let summary = serde_json::json!({
                "facets": m.facet_count(),
                "labelled": feats.len(),
                "texture": seg.labels.count(crate::labels::TEXTURE),
                "non_texture": seg.labels.count(crate::labels::NON_TEXTURE),
                "epochs": seg.outcome.records.len(),
                "converged": seg.outcome.converged,
            });
            writeln!(out, "{summary}").map_err(runtime)
        }
        Command::Eval { pred, gt, name } => {
            let start = Instant::now();
            let p = read_labels(&pred).map_err(runtime)?;
            let g = read_labels(&gt).map_err(runtime)?;
            let m = eval::evaluate(&p, &g).map_err(runtime)?;
            report(
                &[RunRecord {
                    name,
                    metrics: m,
                    runtime_seconds: start.elapsed().as_secs_f64(),
                }],
                out,
                err,
            )
        }
        Command::Baseline {
            mesh,
            method,
            eps,
            min_pts,
            out: labels_out,
            gt,
            opts,
        } => {
            let cfg = validated(&opts)?;
            let method = match method.as_str() {
                "gmm2" => BaselineMethod::Gmm2,
                "dbscan" => BaselineMethod::Dbscan { eps, min_pts },
                _ => BaselineMethod::KMeans2,
            };
            let start = Instant::now();
            let loaded = load(&mesh, &opts)?;
            let m = &loaded.mesh;
            let feats = features_for(&loaded, &cfg, None)?;
            let mut labels = eval::baseline_segment(&feats, m.facet_count(), method, opts.seed).map_err(runtime)?;
            if let Some(gt) = gt {
                let truth = read_labels(&gt).map_err(runtime)?;
                let (aligned, flipped) = eval::align_to_truth(&labels, &truth).map_err(runtime)?;
                if flipped && !opts.quiet {
                    let _ = writeln!(err, "[baseline] clusters swapped to match ground truth");
                }
                labels = aligned;
                let metrics = eval::evaluate(&labels, &truth).map_err(runtime)?;
                report(
                    &[RunRecord {
                        name: method.name().to_string(),
                        metrics,
                        runtime_seconds: start.elapsed().as_secs_f64(),
                    }],
                    out,
                    err,
                )?;
            }
            if let Some(p) = labels_out {
                write_labels(&labels, &p).map_err(runtime)?;
            }
            Ok(())
        }
        Command::Synth {
            pattern,
            mask,
            side,
            amplitude,
            frequency,
            seed,
            out: obj,
            gt,
        } => {
            let pattern = match pattern.as_str() {
                "bumps" => Pattern::Bumps,
                "none" => Pattern::None,
                _ => Pattern::Sine,
            };
            let mask: Mask = mask.parse().map_err(Failure::Usage)?;
            let spec = SynthSpec {
                side,
                mask,
                pattern,
                amplitude,
                frequency: frequency.unwrap_or(8.0 * std::f64::consts::TAU / side.max(1) as f64),
                seed,
            };
            let (m, truth) = eval::synth_textured_mesh(&spec).map_err(|e| Failure::Usage(e.to_string()))?;
            mesh::write_obj(&m, &obj).map_err(|e| with_path(&obj, e))?;
            write_labels(&truth, &gt).map_err(runtime)?;
            let summary = serde_json::json!({
                "facets": m.facet_count(),
                "texture": truth.count(crate::labels::TEXTURE),
            });
            writeln!(out, "{summary}").map_err(runtime)
        }
        Command::Ablate {
            mesh,
            variants,
            gt,
            features,
            opts,
        } => {
            let cfg = validated(&opts)?;
            let names: Vec<String> = if variants == "all" {
                trainer::VARIANTS.iter().map(|s| s.to_string()).collect()
            } else {
                variants.split(',').map(|s| s.trim().to_string()).collect()
            };
            for n in &names {
                trainer::variant_config(n, &cfg.train).map_err(|e| classify(e.into()))?;
            }
            let loaded = load(&mesh, &opts)?;
            let m = &loaded.mesh;
            let truth = gt.map(|p| read_labels(&p).map_err(runtime)).transpose()?;
            let feats = features_for(&loaded, &cfg, features.as_deref())?;
            let mut runs = Vec::new();
            for n in &names {
                let start = Instant::now();
                let vcfg = SegmentConfig {
                    train: trainer::variant_config(n, &cfg.train).map_err(|e| classify(e.into()))?,
                    ..cfg.clone()
                };
                let seg = pipeline::segment_features(&feats, m.facet_count(), &vcfg, &mut progress(opts.quiet, err, n))
                    .map_err(classify)?;
                match &truth {
                    Some(t) => runs.push(RunRecord {
                        name: n.clone(),
                        metrics: eval::evaluate(&seg.labels, t).map_err(runtime)?,
                        runtime_seconds: start.elapsed().as_secs_f64(),
                    }),
                    None => {
                        let rec = serde_json::json!({
                            "name": n,
                            "texture": seg.labels.count(crate::labels::TEXTURE),
                            "non_texture": seg.labels.count(crate::labels::NON_TEXTURE),
                            "runtime_seconds": start.elapsed().as_secs_f64(),
                        });
                        writeln!(out, "{rec}").map_err(runtime)?;
                    }
                }
            }
            if !runs.is_empty() {
                report(&runs, out, err)?;
            }
            Ok(())
        }
        Command::Gradcheck {
            samples,
            seed,
            tolerance,
        } => {
            let entries = models::gradient_suite(samples, seed).map_err(runtime)?;
            let mut failed = Vec::new();
            for e in &entries {
                writeln!(out, "{}", serde_json::to_string(e).map_err(runtime)?).map_err(runtime)?;
                if !(e.max_rel_error < tolerance) {
                    failed.push(e.name);
                }
            }
            if failed.is_empty() {
                Ok(())
            } else {
                Err(Failure::Runtime(format!("gradient check failed for {}", failed.join(", "))))
            }
        }
        Command::Features { mesh, out: path, opts } => {
            let cfg = validated(&opts)?;
            let loaded = load(&mesh, &opts)?;
            let (feats, excluded) = mesh_features(&loaded, &cfg)?;
            features::write_features(&feats, &path).map_err(|e| with_path(&path, e))?;
            let summary = serde_json::json!({
                "features": feats.len(),
                "dim": cfg.dim,
                "excluded": excluded,
            });
            writeln!(out, "{summary}").map_err(runtime)
        }
    }
}


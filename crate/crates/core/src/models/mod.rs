//! Label generator / label cleaner pairs.
//!
//! A generator reconstructs its input; its reconstruction error seeds the
//! pseudo-labels. A cleaner is a binary classifier trained on those labels
//! whose scores relabel each batch. Two pairs are provided: the transformer
//! pair ([`Tlg`], [`Tlc`]) and the dense pair ([`Alg`], [`Mlc`]).

mod dense;
mod gradsuite;
mod rules;
mod transformer;

pub use dense::{Alg, Mlc, ALG_WIDTHS};
pub use gradsuite::{gradient_suite, SuiteEntry};
pub use rules::{
    assign_initial_labels, at_least_mean, clean_labels, compute_error, tlc_loss_value, CleanPhase, ErrorMode,
};
pub use transformer::{tlg_inverse, tlg_project, Tlc, Tlg};

use thiserror::Error;

use crate::features::TokenSequence;
use crate::tensor::{Bound, Graph, ParamSet, Scalar, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("batch has {found} entries, expected {expected}")]
    BatchMismatch { expected: usize, found: usize },
    #[error("input shape {found:?} does not match model shape {expected:?}")]
    ShapeMismatch { expected: (usize, usize), found: (usize, usize) },
    #[error("non-finite error {value} at batch index {index}")]
    NonFiniteError { index: usize, value: f64 },
    #[error("threshold {0} is outside (0, 1)")]
    BadThreshold(f64),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    /// Sequence length `n_k`.
    pub tokens: usize,
    /// Token width `d`.
    pub width: usize,
    /// Transformer layers `L`.
    pub layers: usize,
    pub heads: usize,
    /// MLP hidden width as a multiple of `d`.
    pub mlp_ratio: usize,
    /// Layer-normalise the generator's latent, so the inverse projector
    /// has to recover each token's offset and scale.
    pub normalize_latent: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            tokens: 16,
            width: 16,
            layers: 2,
            heads: 4,
            mlp_ratio: 4,
            normalize_latent: true,
        }
    }
}

impl ModelConfig {
    pub fn feature_dim(&self) -> usize {
        self.tokens * self.width
    }
}

/// Which generator / cleaner architectures to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelPair {
    Transformer,
    Dense,
}

/// Reconstructs a stack of instances. Every instance is a `rows × cols`
/// matrix in the model's own input space.
pub trait Generator<T: Scalar>: Send + Sync {
    fn params(&self) -> &ParamSet<T>;
    fn params_mut(&mut self) -> &mut ParamSet<T>;
    /// `(rows, cols)` of one instance.
    fn instance_shape(&self) -> (usize, usize);
    /// Model-space input of a token sequence.
    fn prepare(&self, g: &TokenSequence) -> Result<Tensor<T>, ModelError>;
    /// Fixed Gaussian target, one instance in shape.
    fn gaussian(&self) -> &Tensor<T>;
    /// Records the reconstruction of `x`, a stack of `count` instances.
    fn reconstruct(&self, g: &mut Graph<T>, b: &Bound, x: Var, count: usize) -> Var;
}

/// Maps a stack of instances to one texture probability each.
pub trait Cleaner<T: Scalar>: Send + Sync {
    fn params(&self) -> &ParamSet<T>;
    fn params_mut(&mut self) -> &mut ParamSet<T>;
    fn instance_shape(&self) -> (usize, usize);
    fn prepare(&self, g: &TokenSequence) -> Result<Tensor<T>, ModelError>;
    /// Records `[count, 1]` probabilities.
    fn predict(&self, g: &mut Graph<T>, b: &Bound, x: Var, count: usize) -> Var;
}

/// Stacks same-shaped instances row-wise.
pub fn stack<T: Scalar>(items: &[&Tensor<T>], shape: (usize, usize)) -> Result<Tensor<T>, ModelError> {
    if items.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let mut data = Vec::with_capacity(items.len() * shape.0 * shape.1);
    for t in items {
        let found = (t.rows(), t.cols());
        if found != shape {
            return Err(ModelError::ShapeMismatch { expected: shape, found });
        }
        data.extend_from_slice(t.data());
    }
    Ok(Tensor::new(vec![items.len() * shape.0, shape.1], data)?)
}

pub(crate) fn token_matrix<T: Scalar>(g: &TokenSequence, expected: (usize, usize)) -> Result<Tensor<T>, ModelError> {
    if (g.tokens, g.width) != expected {
        return Err(ModelError::ShapeMismatch {
            expected,
            found: (g.tokens, g.width),
        });
    }
    Ok(Tensor::new(
        vec![g.tokens, g.width],
        g.data.iter().map(|&v| T::of(v as f64)).collect(),
    )?)
}

/// Where an instance's reconstruction is pulled during generator training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    /// Its own input.
    Input,
    /// The fixed Gaussian.
    Gaussian,
    /// The fixed Gaussian, which also replaces the input.
    GaussianInput,
}

/// Recorded generator objective over a batch.
pub struct TlgLoss {
    pub loss: Var,
    pub recon: Var,
    pub target: Tensor<f64>,
}

/// `Σᵢ ‖tᵢ − ĝᵢ‖₁` with `tᵢ` the input or the fixed Gaussian per
/// `targets[i]`.
pub fn tlg_loss<T: Scalar, G: Generator<T> + ?Sized>(
    g: &mut Graph<T>,
    b: &Bound,
    model: &G,
    inputs: &[&Tensor<T>],
    targets: &[Target],
) -> Result<TlgLoss, ModelError> {
    if inputs.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    if targets.len() != inputs.len() {
        return Err(ModelError::BatchMismatch {
            expected: inputs.len(),
            found: targets.len(),
        });
    }
    let shape = model.instance_shape();
    let gauss = model.gaussian();
    let fed: Vec<&Tensor<T>> = inputs
        .iter()
        .zip(targets)
        .map(|(&x, t)| if *t == Target::GaussianInput { gauss } else { x })
        .collect();
    let x = stack(&fed, shape)?;
    let want: Vec<&Tensor<T>> = inputs
        .iter()
        .zip(targets)
        .map(|(&x, t)| if *t == Target::Input { x } else { gauss })
        .collect();
    let target = stack(&want, shape)?;
    let xv = g.input(x);
    let recon = model.reconstruct(g, b, xv, inputs.len());
    let tv = g.input(target.clone());
    let loss = g.l1(recon, tv);
    Ok(TlgLoss {
        loss,
        recon,
        target: target.cast(),
    })
}

/// Per-instance `‖tᵢ − ĝᵢ‖₁` from a recorded reconstruction.
pub fn instance_errors<T: Scalar>(recon: &Tensor<T>, target: &Tensor<f64>, count: usize) -> Vec<f64> {
    let per = recon.len() / count.max(1);
    recon
        .data()
        .chunks(per)
        .zip(target.data().chunks(per))
        .map(|(r, t)| r.iter().zip(t).map(|(&a, &b)| (a.as_f64() - b).abs()).sum())
        .collect()
}

/// Mean binary cross-entropy of the cleaner on a labelled batch.
pub fn tlc_loss<T: Scalar, C: Cleaner<T> + ?Sized>(
    g: &mut Graph<T>,
    b: &Bound,
    model: &C,
    inputs: &[&Tensor<T>],
    labels: &[u8],
) -> Result<(Var, Var), ModelError> {
    if inputs.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    if labels.len() != inputs.len() {
        return Err(ModelError::BatchMismatch {
            expected: inputs.len(),
            found: labels.len(),
        });
    }
    let x = g.input(stack(inputs, model.instance_shape())?);
    let phi = model.predict(g, b, x, inputs.len());
    let loss = g.bce_mean(phi, labels.iter().map(|&l| T::of(l as f64)).collect());
    Ok((loss, phi))
}

/// Reconstructions of a batch without recording gradients for later use.
pub fn reconstruct_batch<T: Scalar, G: Generator<T> + ?Sized>(model: &G, inputs: &[&Tensor<T>]) -> Result<Tensor<T>, ModelError> {
    let x = stack(inputs, model.instance_shape())?;
    let mut g = Graph::new();
    let b = g.bind(model.params());
    let xv = g.input(x);
    let r = model.reconstruct(&mut g, &b, xv, inputs.len());
    Ok(g.value(r).clone())
}

/// Cleaner probabilities for a batch.
pub fn predict_batch<T: Scalar, C: Cleaner<T> + ?Sized>(model: &C, inputs: &[&Tensor<T>]) -> Result<Vec<f64>, ModelError> {
    let x = stack(inputs, model.instance_shape())?;
    let mut g = Graph::new();
    let b = g.bind(model.params());
    let xv = g.input(x);
    let p = model.predict(&mut g, &b, xv, inputs.len());
    Ok(g.value(p).data().iter().map(|v| v.as_f64()).collect())
}

/// Builds the generator and cleaner of a model pair.
pub fn build_pair<T: Scalar>(
    pair: ModelPair,
    cfg: &ModelConfig,
    seed: u64,
) -> Result<(Box<dyn Generator<T>>, Box<dyn Cleaner<T>>), ModelError> {
    Ok(match pair {
        ModelPair::Transformer => (Box::new(Tlg::new(cfg, seed)?), Box::new(Tlc::new(cfg, seed)?)),
        ModelPair::Dense => (Box::new(Alg::new(cfg, seed)), Box::new(Mlc::new(cfg, seed))),
    })
}

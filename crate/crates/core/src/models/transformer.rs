//! Transformer label generator (projector + inverse projector) and
//! transformer label cleaner.

use crate::features::TokenSequence;
use crate::rng;
use crate::tensor::nn::{mlp, msa_blocks, LayerNorm, Linear, Mlp, Msa};
use crate::tensor::{Bound, Graph, ParamSet, Scalar, Tensor, Var};

use super::{token_matrix, Cleaner, Generator, ModelConfig, ModelError};

/// Pre-LN self-attention and MLP, each with a residual connection.
#[derive(Debug, Clone, Copy)]
struct EncoderLayer {
    ln1: LayerNorm,
    attn: Msa,
    ln2: LayerNorm,
    mlp: Mlp,
}

impl EncoderLayer {
    fn register<T: Scalar>(p: &mut ParamSet<T>, prefix: &str, cfg: &ModelConfig, r: &mut rng::Rng) -> Result<Self, ModelError> {
        Ok(Self {
            ln1: LayerNorm::register(p, &format!("{prefix}.ln1"), cfg.width),
            attn: Msa::register(p, &format!("{prefix}.attn"), cfg.width, cfg.heads, r)?,
            ln2: LayerNorm::register(p, &format!("{prefix}.ln2"), cfg.width),
            mlp: Mlp::register(p, &format!("{prefix}.mlp"), cfg.width, cfg.mlp_ratio * cfg.width, r),
        })
    }

    fn forward<T: Scalar>(&self, g: &mut Graph<T>, b: &Bound, x: Var, block: usize) -> Var {
        let h = self.ln1.forward(g, b, x);
        let a = msa_blocks(g, b, &self.attn, h, h, h, block);
        let x = g.add(a, x);
        let h = self.ln2.forward(g, b, x);
        let m = mlp(g, b, &self.mlp, h);
        g.add(m, x)
    }
}

/// One inverse-projector layer: attention with biased queries and keys over
/// the current state, cross-attention back to the latent, then an MLP.
#[derive(Debug, Clone, Copy)]
struct InverseLayer {
    ln_z: LayerNorm,
    self_attn: Msa,
    ln_hat: LayerNorm,
    ln_latent: LayerNorm,
    cross_attn: Msa,
    ln_out: LayerNorm,
    mlp: Mlp,
}

impl InverseLayer {
    fn register<T: Scalar>(p: &mut ParamSet<T>, prefix: &str, cfg: &ModelConfig, r: &mut rng::Rng) -> Result<Self, ModelError> {
        Ok(Self {
            ln_z: LayerNorm::register(p, &format!("{prefix}.ln_z"), cfg.width),
            self_attn: Msa::register(p, &format!("{prefix}.self_attn"), cfg.width, cfg.heads, r)?,
            ln_hat: LayerNorm::register(p, &format!("{prefix}.ln_hat"), cfg.width),
            ln_latent: LayerNorm::register(p, &format!("{prefix}.ln_latent"), cfg.width),
            cross_attn: Msa::register(p, &format!("{prefix}.cross_attn"), cfg.width, cfg.heads, r)?,
            ln_out: LayerNorm::register(p, &format!("{prefix}.ln_out"), cfg.width),
            mlp: Mlp::register(p, &format!("{prefix}.mlp"), cfg.width, cfg.mlp_ratio * cfg.width, r),
        })
    }

    fn forward<T: Scalar>(&self, g: &mut Graph<T>, b: &Bound, z: Var, z0: Var, bias: Var, block: usize) -> Var {
        let v = self.ln_z.forward(g, b, z);
        let qk = g.add_tile(v, bias);
        let a = msa_blocks(g, b, &self.self_attn, qk, qk, v, block);
        let z_hat = g.add(a, z);
        let h = self.ln_hat.forward(g, b, z_hat);
        let q_hat = g.add_tile(h, bias);
        let kv = self.ln_latent.forward(g, b, z0);
        let a = msa_blocks(g, b, &self.cross_attn, q_hat, kv, kv, block);
        let z_tilde = g.add(a, z_hat);
        let h = self.ln_out.forward(g, b, z_tilde);
        let m = mlp(g, b, &self.mlp, h);
        g.add(m, z_tilde)
    }
}

/// Transformer label generator.
#[derive(Debug, Clone)]
pub struct Tlg<T> {
    cfg: ModelConfig,
    params: ParamSet<T>,
    projector: Vec<EncoderLayer>,
    inverse: Vec<InverseLayer>,
    latent_ln: Option<LayerNorm>,
    bias: usize,
    gaussian: Tensor<T>,
}

impl<T: Scalar> Tlg<T> {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        let mut r = rng::stream(seed, "tlg-init");
        let mut params = ParamSet::new();
        let projector = (0..cfg.layers)
            .map(|l| EncoderLayer::register(&mut params, &format!("tlg.proj.{l}"), cfg, &mut r))
            .collect::<Result<Vec<_>, _>>()?;
        let inverse = (0..cfg.layers)
            .map(|l| InverseLayer::register(&mut params, &format!("tlg.inv.{l}"), cfg, &mut r))
            .collect::<Result<Vec<_>, _>>()?;
        let bias = params.normal("tlg.inv.bias", &[cfg.tokens, cfg.width], crate::tensor::nn::INIT_STD, &mut r);
        let latent_ln = cfg
            .normalize_latent
            .then(|| LayerNorm::register(&mut params, "tlg.latent", cfg.width));
        let gaussian = Tensor::randn(&[cfg.tokens, cfg.width], 1.0, &mut rng::stream(seed, "gaussian-target"));
        Ok(Self {
            cfg: *cfg,
            params,
            projector,
            inverse,
            latent_ln,
            bias,
            gaussian,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Slot of the learned bias `b`.
    pub fn bias_slot(&self) -> usize {
        self.bias
    }

    /// Records the latent `p_L` of a stack of sequences.
    pub fn project(&self, g: &mut Graph<T>, b: &Bound, x: Var) -> Var {
        let p = self.projector
            .iter()
            .fold(x, |p, layer| layer.forward(g, b, p, self.cfg.tokens));
        match self.latent_ln {
            Some(ln) => ln.forward(g, b, p),
            None => p,
        }
    }

    /// Records the reconstruction from a stack of latents.
    pub fn inverse(&self, g: &mut Graph<T>, b: &Bound, latent: Var) -> Var {
        let bias = b[self.bias];
        self.inverse
            .iter()
            .fold(latent, |z, layer| layer.forward(g, b, z, latent, bias, self.cfg.tokens))
    }

    /// Names of every attention output projection and MLP output layer, the
    /// residual branches of the generator.
    pub fn branch_outputs(&self) -> Vec<Linear> {
        let mut out = Vec::new();
        for l in &self.projector {
            out.extend([l.attn.out, l.mlp.fc2]);
        }
        for l in &self.inverse {
            out.extend([l.self_attn.out, l.cross_attn.out, l.mlp.fc2]);
        }
        out
    }

    /// Value projections of the inverse projector's attentions.
    pub fn inverse_value_projections(&self) -> Vec<Linear> {
        self.inverse.iter().flat_map(|l| [l.self_attn.v, l.cross_attn.v]).collect()
    }
}

fn run_single<T: Scalar>(tlg: &Tlg<T>, x: Tensor<T>, f: impl Fn(&Tlg<T>, &mut Graph<T>, &Bound, Var) -> Var) -> Tensor<T> {
    let mut g = Graph::new();
    let b = g.bind(&tlg.params);
    let xv = g.input(x);
    let y = f(tlg, &mut g, &b, xv);
    g.value(y).clone()
}

/// Latent representation of one token sequence.
pub fn tlg_project<T: Scalar>(seq: &TokenSequence, tlg: &Tlg<T>) -> Result<Tensor<T>, ModelError> {
    let x = tlg.prepare(seq)?;
    Ok(run_single(tlg, x, |m, g, b, v| m.project(g, b, v)))
}

/// Reconstruction from one latent.
pub fn tlg_inverse<T: Scalar>(latent: &Tensor<T>, tlg: &Tlg<T>) -> Result<Tensor<T>, ModelError> {
    let expected = tlg.instance_shape();
    let found = (latent.rows(), latent.cols());
    if latent.shape().len() != 2 || found != expected {
        return Err(ModelError::ShapeMismatch { expected, found });
    }
    Ok(run_single(tlg, latent.clone(), |m, g, b, v| m.inverse(g, b, v)))
}

impl<T: Scalar> Generator<T> for Tlg<T> {
    fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    fn instance_shape(&self) -> (usize, usize) {
        (self.cfg.tokens, self.cfg.width)
    }

    fn prepare(&self, g: &TokenSequence) -> Result<Tensor<T>, ModelError> {
        token_matrix(g, self.instance_shape())
    }

    fn gaussian(&self) -> &Tensor<T> {
        &self.gaussian
    }

    fn reconstruct(&self, g: &mut Graph<T>, b: &Bound, x: Var, _count: usize) -> Var {
        let latent = self.project(g, b, x);
        self.inverse(g, b, latent)
    }
}

/// Transformer label cleaner: encoder stack, mean pooling over tokens, one
/// dense unit and a sigmoid.
#[derive(Debug, Clone)]
pub struct Tlc<T> {
    cfg: ModelConfig,
    params: ParamSet<T>,
    layers: Vec<EncoderLayer>,
    head: Linear,
}

impl<T: Scalar> Tlc<T> {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        let mut r = rng::stream(seed, "tlc-init");
        let mut params = ParamSet::new();
        let layers = (0..cfg.layers)
            .map(|l| EncoderLayer::register(&mut params, &format!("tlc.enc.{l}"), cfg, &mut r))
            .collect::<Result<Vec<_>, _>>()?;
        let head = Linear::register(&mut params, "tlc.head", cfg.width, 1, &mut r);
        Ok(Self {
            cfg: *cfg,
            params,
            layers,
            head,
        })
    }

    pub fn head(&self) -> Linear {
        self.head
    }
}

impl<T: Scalar> Cleaner<T> for Tlc<T> {
    fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    fn instance_shape(&self) -> (usize, usize) {
        (self.cfg.tokens, self.cfg.width)
    }

    fn prepare(&self, g: &TokenSequence) -> Result<Tensor<T>, ModelError> {
        token_matrix(g, self.instance_shape())
    }

    fn predict(&self, g: &mut Graph<T>, b: &Bound, x: Var, _count: usize) -> Var {
        let h = self
            .layers
            .iter()
            .fold(x, |h, layer| layer.forward(g, b, h, self.cfg.tokens));
        let pooled = g.mean_blocks(h, self.cfg.tokens);
        let logit = self.head.forward(g, b, pooled);
        g.sigmoid(logit)
    }
}

//! Finite-difference checks of the building blocks and both training
//! losses, at 64-bit precision.

use std::time::Instant;

use rand_distr::{Distribution, Normal};
use serde::Serialize;

use super::{build_pair, tlc_loss, tlg_loss, ModelConfig, ModelError, ModelPair, Target};
use crate::rng;
use crate::tensor::nn::{self, Mlp, Msa};
use crate::tensor::{grad_check, Bound, GradCheckReport, Graph, ParamSet, Tensor, Var};

/// Step of the central differences.
pub const STEP: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct SuiteEntry {
    pub name: &'static str,
    pub max_rel_error: f64,
    pub coordinates: usize,
    pub worst: Option<(String, usize)>,
    pub seconds: f64,
}

fn entry(name: &'static str, start: Instant, r: GradCheckReport) -> SuiteEntry {
    SuiteEntry {
        name,
        max_rel_error: r.max_rel_error,
        coordinates: r.coordinates,
        worst: r.worst,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Moves every parameter off its initial value so no gradient is
/// degenerate by symmetry.
fn jitter(p: &mut ParamSet<f64>, std: f64, r: &mut rng::Rng) {
    let nd = Normal::new(0.0, std).unwrap();
    for s in 0..p.len() {
        p.get_mut(s).data_mut().iter_mut().for_each(|v| *v += nd.sample(r));
    }
}

/// Scalar readout `Σ y ⊙ w` with fixed random weights.
fn readout(g: &mut Graph<f64>, y: Var, r: &mut rng::Rng) -> Var {
    let (rows, cols) = (g.value(y).rows(), g.value(y).cols());
    let w = g.input(Tensor::randn(&[cols, 1], 1.0, r));
    let z = g.matmul(y, w);
    let ones = g.input(Tensor::full(&[1, rows], 1.0));
    g.matmul(ones, z)
}

/// Runs the five checks, each on `samples` coordinates.
pub fn gradient_suite(samples: usize, seed: u64) -> Result<Vec<SuiteEntry>, ModelError> {
    let mut out = Vec::new();
    let mut r = rng::stream(seed, "gradcheck");

    let t = Instant::now();
    let mut p = ParamSet::<f64>::new();
    p.normal("x", &[12, 16], 1.0, &mut r);
    let ln = nn::LayerNorm::register(&mut p, "ln", 16);
    jitter(&mut p, 0.3, &mut r);
    let rs = r.clone();
    let rep = grad_check(&p, STEP, samples, &mut r, |g, b| {
        let y = ln.forward(g, b, b[0]);
        readout(g, y, &mut rs.clone())
    })?;
    out.push(entry("layer_norm", t, rep));

    let t = Instant::now();
    let mut p = ParamSet::<f64>::new();
    p.normal("x", &[12, 16], 1.0, &mut r);
    let msa = Msa::register_std(&mut p, "msa", 16, 4, 0.3, &mut r)?;
    let rs = r.clone();
    let rep = grad_check(&p, STEP, samples, &mut r, |g, b| {
        let y = nn::msa_blocks(g, b, &msa, b[0], b[0], b[0], 6);
        readout(g, y, &mut rs.clone())
    })?;
    out.push(entry("msa", t, rep));

    let t = Instant::now();
    let mut p = ParamSet::<f64>::new();
    p.normal("x", &[12, 16], 1.0, &mut r);
    let mlp = Mlp::register(&mut p, "mlp", 16, 32, &mut r);
    jitter(&mut p, 0.3, &mut r);
    let rs = r.clone();
    let rep = grad_check(&p, STEP, samples, &mut r, |g, b| {
        let y = nn::mlp(g, b, &mlp, b[0]);
        readout(g, y, &mut rs.clone())
    })?;
    out.push(entry("mlp", t, rep));

    let cfg = ModelConfig {
        tokens: 4,
        width: 8,
        heads: 2,
        ..ModelConfig::default()
    };
    let (mut gen, mut cls) = build_pair::<f64>(ModelPair::Transformer, &cfg, seed)?;
    jitter(gen.params_mut(), 0.2, &mut r);
    jitter(cls.params_mut(), 0.2, &mut r);
    let inputs: Vec<Tensor<f64>> = (0..3).map(|_| Tensor::randn(&[4, 8], 1.0, &mut r)).collect();
    let refs: Vec<&Tensor<f64>> = inputs.iter().collect();

    let t = Instant::now();
    let targets = [Target::Input, Target::Gaussian, Target::Input];
    let rep = grad_check(gen.params(), STEP, samples, &mut r, |g, b: &Bound| {
        tlg_loss(g, b, gen.as_ref(), &refs, &targets).expect("shapes checked").loss
    })?;
    out.push(entry("tlg_loss", t, rep));

    let t = Instant::now();
    let rep = grad_check(cls.params(), STEP, samples, &mut r, |g, b: &Bound| {
        tlc_loss(g, b, cls.as_ref(), &refs, &[1, 0, 1]).expect("shapes checked").0
    })?;
    out.push(entry("tlc_loss", t, rep));
    Ok(out)
}

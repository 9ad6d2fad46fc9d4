//! Dense ablation pair: an autoencoder label generator and an MLP label
//! cleaner over flattened features.

use crate::features::TokenSequence;
use crate::rng;
use crate::tensor::nn::Linear;
use crate::tensor::{Bound, Graph, ParamSet, Scalar, Tensor, Var};

use super::{Cleaner, Generator, ModelConfig, ModelError};

/// Output widths of the autoencoder's layers.
pub const ALG_WIDTHS: [usize; 7] = [1024, 512, 256, 128, 256, 512, 1024];

fn flatten<T: Scalar>(g: &TokenSequence, dim: usize) -> Result<Vec<f64>, ModelError> {
    if g.data.len() != dim {
        return Err(ModelError::ShapeMismatch {
            expected: (1, dim),
            found: (1, g.data.len()),
        });
    }
    Ok(g.data.iter().map(|&v| v as f64).collect())
}

/// Autoencoder label generator. Inputs are mapped to the first layer's width
/// by a fixed seeded projection when the feature width differs.
#[derive(Debug, Clone)]
pub struct Alg<T> {
    dim: usize,
    /// `dim × 1024`, absent when `dim == 1024`.
    projection: Option<Vec<f64>>,
    params: ParamSet<T>,
    layers: Vec<Linear>,
    gaussian: Tensor<T>,
}

impl<T: Scalar> Alg<T> {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Self {
        let dim = cfg.feature_dim();
        let width = ALG_WIDTHS[0];
        let projection = (dim != width).then(|| {
            let mut r = rng::stream(seed, "alg-projection");
            Tensor::<f64>::randn(&[dim, width], 1.0 / (dim as f64).sqrt(), &mut r).into_data()
        });
        let mut r = rng::stream(seed, "alg-init");
        let mut params = ParamSet::new();
        let mut fan_in = width;
        let layers = ALG_WIDTHS
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let l = Linear::register(&mut params, &format!("alg.fc{i}"), fan_in, w, &mut r);
                fan_in = w;
                l
            })
            .collect();
        let gaussian = Tensor::randn(&[1, width], 1.0, &mut rng::stream(seed, "gaussian-target"));
        Self {
            dim,
            projection,
            params,
            layers,
            gaussian,
        }
    }

    pub fn widths(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.fan_out).collect()
    }
}

impl<T: Scalar> Generator<T> for Alg<T> {
    fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    fn instance_shape(&self) -> (usize, usize) {
        (1, ALG_WIDTHS[0])
    }

    fn prepare(&self, g: &TokenSequence) -> Result<Tensor<T>, ModelError> {
        let x = flatten::<T>(g, self.dim)?;
        let width = ALG_WIDTHS[0];
        let y: Vec<T> = match &self.projection {
            None => x.iter().map(|&v| T::of(v)).collect(),
            Some(p) => {
                let mut y = vec![0.0; width];
                for (i, &xi) in x.iter().enumerate() {
                    for (o, &w) in y.iter_mut().zip(&p[i * width..(i + 1) * width]) {
                        *o += xi * w;
                    }
                }
                y.into_iter().map(T::of).collect()
            }
        };
        Ok(Tensor::new(vec![1, width], y)?)
    }

    fn gaussian(&self) -> &Tensor<T> {
        &self.gaussian
    }

    fn reconstruct(&self, g: &mut Graph<T>, b: &Bound, x: Var, _count: usize) -> Var {
        let last = self.layers.len() - 1;
        self.layers.iter().enumerate().fold(x, |h, (i, l)| {
            let y = l.forward(g, b, h);
            if i == last {
                y
            } else {
                g.gelu(y)
            }
        })
    }
}

/// Three-layer MLP label cleaner over flattened features.
#[derive(Debug, Clone)]
pub struct Mlc<T> {
    dim: usize,
    params: ParamSet<T>,
    layers: [Linear; 3],
}

impl<T: Scalar> Mlc<T> {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Self {
        let dim = cfg.feature_dim();
        let hidden = (cfg.mlp_ratio * cfg.width).max(8);
        let mut r = rng::stream(seed, "mlc-init");
        let mut params = ParamSet::new();
        let layers = [
            Linear::register(&mut params, "mlc.fc0", dim, hidden, &mut r),
            Linear::register(&mut params, "mlc.fc1", hidden, hidden, &mut r),
            Linear::register(&mut params, "mlc.fc2", hidden, 1, &mut r),
        ];
        Self { dim, params, layers }
    }
}

impl<T: Scalar> Cleaner<T> for Mlc<T> {
    fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    fn instance_shape(&self) -> (usize, usize) {
        (1, self.dim)
    }

    fn prepare(&self, g: &TokenSequence) -> Result<Tensor<T>, ModelError> {
        let x = flatten::<T>(g, self.dim)?;
        Ok(Tensor::new(vec![1, self.dim], x.into_iter().map(T::of).collect())?)
    }

    fn predict(&self, g: &mut Graph<T>, b: &Bound, x: Var, _count: usize) -> Var {
        let h = self.layers[0].forward(g, b, x);
        let h = g.gelu(h);
        let h = self.layers[1].forward(g, b, h);
        let h = g.gelu(h);
        let logit = self.layers[2].forward(g, b, h);
        g.sigmoid(logit)
    }
}

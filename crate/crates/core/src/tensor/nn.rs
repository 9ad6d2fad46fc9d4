//! Transformer building blocks: parameter layouts plus forward passes that
//! record onto a [`Graph`].

use rand::Rng;

use super::{Bound, Graph, ParamSet, Result, Scalar, TensorError, Var};

/// Standard deviation of the `N(0, σ²)` weight initialisation.
pub const INIT_STD: f64 = 0.02;

/// `y = x W + b` with `W: [in, out]`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: usize,
    pub b: usize,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn register<T: Scalar>(
        p: &mut ParamSet<T>,
        prefix: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self::register_with_std(p, prefix, fan_in, fan_out, INIT_STD, rng)
    }

    pub fn register_with_std<T: Scalar>(
        p: &mut ParamSet<T>,
        prefix: &str,
        fan_in: usize,
        fan_out: usize,
        std: f64,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            w: p.normal(format!("{prefix}.weight"), &[fan_in, fan_out], std, rng),
            b: p.zeros(format!("{prefix}.bias"), &[fan_out]),
            fan_in,
            fan_out,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, b: &Bound, x: Var) -> Var {
        let y = g.matmul(x, b[self.w]);
        g.add_row(y, b[self.b])
    }
}

/// Gain and bias of a layer normalisation.
#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gain: usize,
    pub bias: usize,
}

impl LayerNorm {
    pub fn register<T: Scalar>(p: &mut ParamSet<T>, prefix: &str, d: usize) -> Self {
        Self {
            gain: p.ones(format!("{prefix}.gain"), &[d]),
            bias: p.zeros(format!("{prefix}.bias"), &[d]),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, b: &Bound, x: Var) -> Var {
        layer_norm(g, x, b[self.gain], b[self.bias])
    }
}

/// `(x − mean) / √(var + 1e-5) · gain + bias` over the last axis.
pub fn layer_norm<T: Scalar>(g: &mut Graph<T>, x: Var, gain: Var, bias: Var) -> Var {
    g.layer_norm(x, gain, bias)
}

/// Multi-head self-attention projections.
#[derive(Debug, Clone, Copy)]
pub struct Msa {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
    pub width: usize,
}

impl Msa {
    pub fn register<T: Scalar>(
        p: &mut ParamSet<T>,
        prefix: &str,
        width: usize,
        heads: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Self::register_std(p, prefix, width, heads, INIT_STD, rng)
    }

    pub fn register_std<T: Scalar>(
        p: &mut ParamSet<T>,
        prefix: &str,
        width: usize,
        heads: usize,
        std: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if heads == 0 || width % heads != 0 {
            return Err(TensorError::HeadsIndivisible { heads, width });
        }
        Ok(Self {
            q: Linear::register_with_std(p, &format!("{prefix}.q"), width, width, std, rng),
            k: Linear::register_with_std(p, &format!("{prefix}.k"), width, width, std, rng),
            v: Linear::register_with_std(p, &format!("{prefix}.v"), width, width, std, rng),
            out: Linear::register_with_std(p, &format!("{prefix}.out"), width, width, std, rng),
            heads,
            width,
        })
    }
}

/// Scaled dot-product attention per head (scale `1/√(d/heads)`), heads
/// concatenated and passed through the output projection.
pub fn msa<T: Scalar>(g: &mut Graph<T>, b: &Bound, p: &Msa, q: Var, k: Var, v: Var) -> Var {
    let rows = g.value(q).rows();
    msa_blocks(g, b, p, q, k, v, rows)
}

/// [`msa`] over a stack of sequences: each group of `block` consecutive rows
/// attends only within itself.
pub fn msa_blocks<T: Scalar>(g: &mut Graph<T>, b: &Bound, p: &Msa, q: Var, k: Var, v: Var, block: usize) -> Var {
    let qp = p.q.forward(g, b, q);
    let kp = p.k.forward(g, b, k);
    let vp = p.v.forward(g, b, v);
    let scale = T::of(1.0 / ((p.width / p.heads) as f64).sqrt());
    let heads = g.block_attention(qp, kp, vp, block, p.heads, scale);
    p.out.forward(g, b, heads)
}

/// As [`msa`] for a single sequence, built from per-head primitives and also
/// returning each head's `[n, n]` attention matrix.
pub fn msa_with_attention<T: Scalar>(
    g: &mut Graph<T>,
    b: &Bound,
    p: &Msa,
    q: Var,
    k: Var,
    v: Var,
) -> (Var, Vec<Var>) {
    let qp = p.q.forward(g, b, q);
    let kp = p.k.forward(g, b, k);
    let vp = p.v.forward(g, b, v);
    let hd = p.width / p.heads;
    let scale = T::of(1.0 / (hd as f64).sqrt());
    let mut heads = Vec::with_capacity(p.heads);
    let mut attn = Vec::with_capacity(p.heads);
    for h in 0..p.heads {
        let qh = g.slice_cols(qp, h * hd, hd);
        let kh = g.slice_cols(kp, h * hd, hd);
        let vh = g.slice_cols(vp, h * hd, hd);
        let kt = g.transpose(kh);
        let scores = g.matmul(qh, kt);
        let scores = g.scale(scores, scale);
        let a = g.softmax(scores);
        attn.push(a);
        heads.push(g.matmul(a, vh));
    }
    let cat = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads) };
    (p.out.forward(g, b, cat), attn)
}

/// Two fully connected layers with a GELU in between.
#[derive(Debug, Clone, Copy)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn register<T: Scalar>(p: &mut ParamSet<T>, prefix: &str, width: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            fc1: Linear::register(p, &format!("{prefix}.fc1"), width, hidden, rng),
            fc2: Linear::register(p, &format!("{prefix}.fc2"), hidden, width, rng),
        }
    }
}

pub fn mlp<T: Scalar>(g: &mut Graph<T>, b: &Bound, p: &Mlp, x: Var) -> Var {
    let h = p.fc1.forward(g, b, x);
    let h = g.gelu(h);
    p.fc2.forward(g, b, h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;

    fn rng() -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(5)
    }

    #[test]
    fn layer_norm_of_unit_pair() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::from_f64(&[1, 2], &[1.0, -1.0]).unwrap());
        let gain = g.input(Tensor::full(&[2], 1.0));
        let bias = g.input(Tensor::zeros(&[2]));
        let y = layer_norm(&mut g, x, gain, bias);
        let v = g.value(y).data();
        assert!((v[0] - 1.0).abs() < 1e-4 && (v[1] + 1.0).abs() < 1e-4, "{v:?}");
    }

    #[test]
    fn layer_norm_of_constant_is_zero() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::full(&[1, 5], 3.7));
        let gain = g.input(Tensor::full(&[5], 1.0));
        let bias = g.input(Tensor::zeros(&[5]));
        let y = layer_norm(&mut g, x, gain, bias);
        assert!(g.value(y).data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn layer_norm_moments() {
        let mut r = rng();
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::randn(&[1, 64], 3.0, &mut r).map(|v| v + 2.0));
        let gain = g.input(Tensor::full(&[64], 1.0));
        let bias = g.input(Tensor::zeros(&[64]));
        let y = layer_norm(&mut g, x, gain, bias);
        let v = g.value(y).data();
        let mean = v.iter().sum::<f64>() / 64.0;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 64.0;
        assert!(mean.abs() < 1e-9);
        assert!((var - 1.0).abs() < 1e-3);
    }

    fn identity_msa(width: usize, heads: usize) -> (ParamSet<f64>, Msa) {
        let mut p = ParamSet::new();
        let m = Msa::register(&mut p, "a", width, heads, &mut rng()).unwrap();
        for lin in [m.q, m.k, m.v, m.out] {
            let w = p.get_mut(lin.w);
            for i in 0..width {
                for j in 0..width {
                    w.data_mut()[i * width + j] = if i == j { 1.0 } else { 0.0 };
                }
            }
        }
        (p, m)
    }

    #[test]
    fn single_token_attention_returns_values() {
        let (p, m) = identity_msa(8, 2);
        let mut g = Graph::new();
        let b = g.bind(&p);
        let q = g.input(Tensor::randn(&[1, 8], 1.0, &mut rng()));
        let k = g.input(Tensor::randn(&[1, 8], 1.0, &mut rng()));
        let v = g.input(Tensor::from_f64(&[1, 8], &[1., 2., 3., 4., 5., 6., 7., 8.]).unwrap());
        let y = msa(&mut g, &b, &m, q, k, v);
        assert_eq!(g.value(y).data(), g.value(v).data());
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let mut p = ParamSet::<f64>::new();
        let m = Msa::register(&mut p, "a", 16, 4, &mut rng()).unwrap();
        let mut g = Graph::new();
        let b = g.bind(&p);
        let x = g.input(Tensor::randn(&[9, 16], 4.0, &mut rng()));
        let (_, attn) = msa_with_attention(&mut g, &b, &m, x, x, x);
        for a in attn {
            for row in g.value(a).data().chunks(9) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn attention_is_permutation_equivariant() {
        let mut p = ParamSet::<f64>::new();
        let m = Msa::register(&mut p, "a", 8, 2, &mut rng()).unwrap();
        let x = Tensor::randn(&[5, 8], 1.0, &mut rng());
        let perm = [3usize, 0, 4, 1, 2];
        let px = Tensor::from_fn(&[5, 8], |i| x.data()[perm[i / 8] * 8 + i % 8]);
        let run = |t: &Tensor<f64>| {
            let mut g = Graph::new();
            let b = g.bind(&p);
            let xi = g.input(t.clone());
            let y = msa(&mut g, &b, &m, xi, xi, xi);
            g.value(y).clone()
        };
        let (y, py) = (run(&x), run(&px));
        for r in 0..5 {
            for c in 0..8 {
                assert!((py.data()[r * 8 + c] - y.data()[perm[r] * 8 + c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fused_attention_matches_per_head_graph() {
        let mut p = ParamSet::<f64>::new();
        let m = Msa::register_std(&mut p, "a", 8, 2, 0.5, &mut rng()).unwrap();
        let x = Tensor::randn(&[6, 8], 1.0, &mut rng());
        let w = Tensor::randn(&[8, 1], 1.0, &mut rng());
        let run = |fused: bool| {
            let mut g = Graph::new();
            let b = g.bind(&p);
            let xi = g.input(x.clone());
            let y = if fused {
                msa(&mut g, &b, &m, xi, xi, xi)
            } else {
                msa_with_attention(&mut g, &b, &m, xi, xi, xi).0
            };
            let wi = g.input(w.clone());
            let z = g.matmul(y, wi);
            let t = g.input(Tensor::zeros(&[6, 1]));
            let loss = g.l1(z, t);
            let grads = g.backward(loss).for_params(&b, &p);
            (g.value(y).clone(), grads)
        };
        let (ya, ga) = run(true);
        let (yb, gb) = run(false);
        for (a, b) in ya.data().iter().zip(yb.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        for (ta, tb) in ga.iter().zip(&gb) {
            for (a, b) in ta.data().iter().zip(tb.data()) {
                assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn stacked_blocks_match_separate_sequences() {
        let mut p = ParamSet::<f64>::new();
        let m = Msa::register_std(&mut p, "a", 8, 4, 0.5, &mut rng()).unwrap();
        let x = Tensor::randn(&[12, 8], 1.0, &mut rng());
        let mut g = Graph::new();
        let b = g.bind(&p);
        let xi = g.input(x.clone());
        let all = msa_blocks(&mut g, &b, &m, xi, xi, xi, 4);
        for blk in 0..3 {
            let part = Tensor::new(vec![4, 8], x.data()[blk * 32..(blk + 1) * 32].to_vec()).unwrap();
            let pi = g.input(part);
            let y = msa(&mut g, &b, &m, pi, pi, pi);
            for (a, c) in g.value(y).data().iter().zip(&g.value(all).data()[blk * 32..(blk + 1) * 32]) {
                assert!((a - c).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn heads_must_divide_width() {
        let mut p = ParamSet::<f64>::new();
        assert!(matches!(
            Msa::register(&mut p, "a", 10, 4, &mut rng()),
            Err(TensorError::HeadsIndivisible { .. })
        ));
    }

    #[test]
    fn zero_mlp_gives_zero() {
        let mut p = ParamSet::<f64>::new();
        let m = Mlp::register(&mut p, "m", 4, 16, &mut rng());
        for lin in [m.fc1, m.fc2] {
            p.get_mut(lin.w).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let mut g = Graph::new();
        let b = g.bind(&p);
        let x = g.input(Tensor::randn(&[3, 4], 1.0, &mut rng()));
        let y = mlp(&mut g, &b, &m, x);
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_second_layer_ignores_input() {
        let mut p = ParamSet::<f64>::new();
        let m = Mlp::register(&mut p, "m", 4, 4, &mut rng());
        for i in 0..4 {
            p.get_mut(m.fc1.w).data_mut()[i * 4 + i] = 1.0;
        }
        p.get_mut(m.fc2.w).data_mut().iter_mut().for_each(|v| *v = 0.0);
        let mut g = Graph::new();
        let b = g.bind(&p);
        let x = g.input(Tensor::randn(&[2, 4], 5.0, &mut rng()));
        let y = mlp(&mut g, &b, &m, x);
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }
}

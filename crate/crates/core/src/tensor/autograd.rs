//! Tape-based reverse-mode differentiation over 2-D tensors.
//!
//! A [`Graph`] records every operation in creation order, so parents always
//! have smaller indices than their children and a reverse sweep visits
//! nodes in a valid topological order.

use super::{ParamSet, Scalar, Tensor};

const LN_EPS: f64 = 1e-5;
const BCE_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Input,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    AddTile(Var, Var),
    Scale(Var, T),
    Transpose(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    Reshape(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Softmax(Var),
    Gelu(Var),
    Sigmoid(Var),
    MeanRows(Var),
    SumScalars(Vec<Var>),
    L1(Var, Var),
    Bce(Var, T),
    BlockAttention {
        q: Var,
        k: Var,
        v: Var,
        block: usize,
        heads: usize,
        scale: T,
        /// `blocks × heads × block × block` attention weights.
        attn: Vec<T>,
    },
    MeanBlocks(Var, usize),
    BceMean(Var, Vec<T>),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Parameter leaves of one [`ParamSet`] bound into a graph, by slot.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl std::ops::Index<usize> for Bound {
    type Output = Var;

    fn index(&self, slot: usize) -> &Var {
        &self.vars[slot]
    }
}

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Recording context. Single-threaded; independent graphs may be used
/// concurrently.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

fn shape2<T: Scalar>(t: &Tensor<T>) -> (usize, usize) {
    (t.rows(), t.cols())
}

fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

fn transpose<T: Scalar>(a: &[T], m: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

fn gelu<T: Scalar>(x: T) -> (T, T) {
    let c = T::of((2.0 / std::f64::consts::PI).sqrt());
    let k = T::of(0.044715);
    let half = T::of(0.5);
    let three = T::of(3.0);
    let inner = c * (x + k * x * x * x);
    let t = inner.tanh();
    let y = half * x * (T::one() + t);
    let dy = half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + three * k * x * x);
    (y, dy)
}

fn sign<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        // subgradient of |x| at the kink
        T::zero()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Constant input (gradients are still tracked, see [`Gradients::of`]).
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Input)
    }

    /// Adds a leaf for every tensor of `params`.
    pub fn bind(&mut self, params: &ParamSet<T>) -> Bound {
        let vars = params
            .tensors()
            .iter()
            .map(|t| self.push(t.clone(), Op::Param))
            .collect();
        Bound { vars }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = shape2(self.value(a));
        let (k2, n) = shape2(self.value(b));
        assert_eq!(k, k2, "matmul inner dimensions");
        let out = matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push(Tensor::new(vec![m, n], out).unwrap(), Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.len(), vb.len(), "add operands");
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let shape = va.shape().to_vec();
        self.push(Tensor::new(shape, data).unwrap(), Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.len(), vb.len(), "sub operands");
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x - y).collect();
        let shape = va.shape().to_vec();
        self.push(Tensor::new(shape, data).unwrap(), Op::Sub(a, b))
    }

    /// Adds a length-`d` row vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (va, vr) = (self.value(a), self.value(row));
        let d = va.cols();
        assert_eq!(vr.len(), d, "add_row width");
        let mut data = va.data().to_vec();
        for chunk in data.chunks_mut(d) {
            for (x, &b) in chunk.iter_mut().zip(vr.data()) {
                *x += b;
            }
        }
        let shape = va.shape().to_vec();
        self.push(Tensor::new(shape, data).unwrap(), Op::AddRow(a, row))
    }

    /// Adds a `[r, d]` tile to every group of `r` consecutive rows of `a`.
    pub fn add_tile(&mut self, a: Var, tile: Var) -> Var {
        let (va, vt) = (self.value(a), self.value(tile));
        let n = vt.len();
        assert!(va.cols() == vt.cols() && n > 0 && va.len() % n == 0, "add_tile shapes");
        let mut out = va.clone();
        for chunk in out.data_mut().chunks_mut(n) {
            for (o, &t) in chunk.iter_mut().zip(vt.data()) {
                *o += t;
            }
        }
        self.push(out, Op::AddTile(a, tile))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let v = self.value(a).map(|x| x * c);
        self.push(v, Op::Scale(a, c))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (m, n) = shape2(self.value(a));
        let data = transpose(self.value(a).data(), m, n);
        self.push(Tensor::new(vec![n, m], data).unwrap(), Op::Transpose(a))
    }

    /// Columns `start..start + width`.
    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Var {
        let (m, n) = shape2(self.value(a));
        assert!(start + width <= n, "slice_cols range");
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(m * width);
        for i in 0..m {
            data.extend_from_slice(&src[i * n + start..i * n + start + width]);
        }
        self.push(Tensor::new(vec![m, width], data).unwrap(), Op::SliceCols(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let m = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        let n: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                let v = self.value(p);
                assert_eq!(v.rows(), m, "concat_cols rows");
                data.extend_from_slice(&v.data()[i * w..(i + 1) * w]);
            }
        }
        self.push(Tensor::new(vec![m, n], data).unwrap(), Op::ConcatCols(parts.to_vec()))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let v = self.value(a).clone().reshape(shape).expect("reshape preserves size");
        self.push(v, Op::Reshape(a))
    }

    /// Layer normalisation over the last axis with biased variance and
    /// ε = 1e-5.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let vx = self.value(x);
        let d = vx.cols();
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        assert!(g.len() == d && b.len() == d, "layer_norm parameter width");
        let eps = T::of(LN_EPS);
        let dn = T::of(d as f64);
        let mut xhat = Vec::with_capacity(vx.len());
        let mut rstd = Vec::with_capacity(vx.rows());
        let mut out = Vec::with_capacity(vx.len());
        for row in vx.data().chunks(d) {
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let r = T::one() / (var + eps).sqrt();
            rstd.push(r);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * r;
                xhat.push(h);
                out.push(h * g[j] + b[j]);
            }
        }
        let shape = vx.shape().to_vec();
        self.push(
            Tensor::new(shape, out).unwrap(),
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
        )
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let d = va.cols();
        let mut out = Vec::with_capacity(va.len());
        for row in va.data().chunks(d) {
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let e: Vec<T> = row.iter().map(|&v| (v - mx).exp()).collect();
            let s: T = e.iter().copied().sum();
            out.extend(e.into_iter().map(|v| v / s));
        }
        if cfg!(debug_assertions) {
            for row in out.chunks(d) {
                let s: f64 = row.iter().map(|v| v.as_f64()).sum();
                debug_assert!((s - 1.0).abs() < 1e-5, "softmax row sums to {s}");
            }
        }
        let shape = va.shape().to_vec();
        self.push(Tensor::new(shape, out).unwrap(), Op::Softmax(a))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| gelu(x).0);
        self.push(v, Op::Gelu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| T::one() / (T::one() + (-x).exp()));
        self.push(v, Op::Sigmoid(a))
    }

    /// Mean over rows: `[m, d] → [1, d]`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let (m, d) = shape2(va);
        let mut out = vec![T::zero(); d];
        for row in va.data().chunks(d) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        let inv = T::one() / T::of(m as f64);
        out.iter_mut().for_each(|v| *v *= inv);
        self.push(Tensor::new(vec![1, d], out).unwrap(), Op::MeanRows(a))
    }

    /// Sum of scalar nodes.
    pub fn sum_scalars(&mut self, parts: &[Var]) -> Var {
        let s = parts.iter().map(|&p| self.value(p).item()).sum();
        self.push(Tensor::scalar(s), Op::SumScalars(parts.to_vec()))
    }

    /// `Σ |a − b|`; the subgradient at `a = b` is taken as 0.
    pub fn l1(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.len(), vb.len(), "l1 operands");
        let s = va.data().iter().zip(vb.data()).map(|(&x, &y)| (x - y).abs()).sum();
        self.push(Tensor::scalar(s), Op::L1(a, b))
    }

    /// Binary cross-entropy of a probability node against a fixed label,
    /// with the probability clamped to `[1e-7, 1 − 1e-7]`.
    pub fn bce(&mut self, p: Var, label: T) -> Var {
        let pv = clamp_prob(self.value(p).item());
        let loss = -(label * pv.ln() + (T::one() - label) * (T::one() - pv).ln());
        self.push(Tensor::scalar(loss), Op::Bce(p, label))
    }

    /// Scaled dot-product attention applied independently to every group of
    /// `block` consecutive rows and to every `width/heads` column slice.
    /// Heads are written back to their own column slice.
    pub fn block_attention(&mut self, q: Var, k: Var, v: Var, block: usize, heads: usize, scale: T) -> Var {
        let (vq, vk, vv) = (self.value(q), self.value(k), self.value(v));
        let (m, w) = shape2(vq);
        assert!(vk.shape() == vq.shape() && vv.shape() == vq.shape(), "attention operands");
        assert!(block > 0 && m % block == 0 && heads > 0 && w % heads == 0, "attention blocking");
        let hd = w / heads;
        let (qd, kd, vd) = (vq.data(), vk.data(), vv.data());
        let mut out = vec![T::zero(); m * w];
        let mut attn = vec![T::zero(); m * heads * block];
        for b in 0..m / block {
            for h in 0..heads {
                let a = &mut attn[(b * heads + h) * block * block..(b * heads + h + 1) * block * block];
                for i in 0..block {
                    let qi = &qd[(b * block + i) * w + h * hd..][..hd];
                    let row = &mut a[i * block..(i + 1) * block];
                    let mut mx = T::neg_infinity();
                    for (j, r) in row.iter_mut().enumerate() {
                        let kj = &kd[(b * block + j) * w + h * hd..][..hd];
                        *r = qi.iter().zip(kj).map(|(&x, &y)| x * y).sum::<T>() * scale;
                        mx = mx.max(*r);
                    }
                    let mut sum = T::zero();
                    for r in row.iter_mut() {
                        *r = (*r - mx).exp();
                        sum += *r;
                    }
                    for r in row.iter_mut() {
                        *r /= sum;
                    }
                    debug_assert!(
                        (row.iter().map(|v| v.as_f64()).sum::<f64>() - 1.0).abs() < 1e-5,
                        "attention row does not sum to 1"
                    );
                    let o = &mut out[(b * block + i) * w + h * hd..][..hd];
                    for (j, &aij) in row.iter().enumerate() {
                        let vj = &vd[(b * block + j) * w + h * hd..][..hd];
                        for (ov, &x) in o.iter_mut().zip(vj) {
                            *ov += aij * x;
                        }
                    }
                }
            }
        }
        self.push(
            Tensor::new(vec![m, w], out).unwrap(),
            Op::BlockAttention {
                q,
                k,
                v,
                block,
                heads,
                scale,
                attn,
            },
        )
    }

    /// Attention weights recorded by a [`Graph::block_attention`] node, laid
    /// out `blocks × heads × block × block`.
    pub fn attention_weights(&self, v: Var) -> Option<&[T]> {
        match &self.nodes[v.0].op {
            Op::BlockAttention { attn, .. } => Some(attn),
            _ => None,
        }
    }

    /// Mean over each group of `block` consecutive rows: `[m, d] → [m/block, d]`.
    pub fn mean_blocks(&mut self, a: Var, block: usize) -> Var {
        let va = self.value(a);
        let (m, d) = shape2(va);
        assert!(block > 0 && m % block == 0, "mean_blocks blocking");
        let inv = T::one() / T::of(block as f64);
        let mut out = vec![T::zero(); (m / block) * d];
        for (r, row) in va.data().chunks(d).enumerate() {
            for (o, &v) in out[(r / block) * d..(r / block + 1) * d].iter_mut().zip(row) {
                *o += v * inv;
            }
        }
        self.push(Tensor::new(vec![m / block, d], out).unwrap(), Op::MeanBlocks(a, block))
    }

    /// Mean binary cross-entropy of `p` (one probability per element)
    /// against fixed labels, with probabilities clamped to `[1e-7, 1 − 1e-7]`.
    pub fn bce_mean(&mut self, p: Var, labels: Vec<T>) -> Var {
        let vp = self.value(p);
        assert_eq!(vp.len(), labels.len(), "bce_mean operands");
        let n = T::of(labels.len() as f64);
        let loss = vp
            .data()
            .iter()
            .zip(&labels)
            .map(|(&raw, &l)| {
                let pv = clamp_prob(raw);
                -(l * pv.ln() + (T::one() - l) * (T::one() - pv).ln())
            })
            .sum::<T>()
            / n;
        self.push(Tensor::scalar(loss), Op::BceMean(p, labels))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Input | Op::Param) {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            let mut acc = |v: Var, g: Tensor<T>| {
                assert!(v.0 < i, "graph cycle: node {i} depends on {}", v.0);
                match &mut grads[v.0] {
                    Some(t) => t.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            };
            match &node.op {
                Op::Input | Op::Param => {}
                Op::MatMul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let (m, k) = shape2(va);
                    let n = vb.cols();
                    let bt = transpose(vb.data(), k, n);
                    let ga = matmul(gy.data(), &bt, m, n, k);
                    let at = transpose(va.data(), m, k);
                    let gb = matmul(&at, gy.data(), k, m, n);
                    acc(*a, Tensor::new(va.shape().to_vec(), ga).unwrap());
                    acc(*b, Tensor::new(vb.shape().to_vec(), gb).unwrap());
                }
                Op::Add(a, b) => {
                    acc(*a, gy.clone().reshape(self.value(*a).shape()).unwrap());
                    acc(*b, gy.reshape(self.value(*b).shape()).unwrap());
                }
                Op::Sub(a, b) => {
                    acc(*b, gy.map(|v| -v).reshape(self.value(*b).shape()).unwrap());
                    acc(*a, gy.reshape(self.value(*a).shape()).unwrap());
                }
                Op::AddRow(a, row) => {
                    let d = gy.cols();
                    let mut gr = vec![T::zero(); d];
                    for chunk in gy.data().chunks(d) {
                        for (o, &v) in gr.iter_mut().zip(chunk) {
                            *o += v;
                        }
                    }
                    acc(*row, Tensor::new(self.value(*row).shape().to_vec(), gr).unwrap());
                    acc(*a, gy);
                }
                Op::AddTile(a, tile) => {
                    let vt = self.value(*tile);
                    let mut gt = vec![T::zero(); vt.len()];
                    for chunk in gy.data().chunks(vt.len()) {
                        for (o, &v) in gt.iter_mut().zip(chunk) {
                            *o += v;
                        }
                    }
                    acc(*tile, Tensor::new(vt.shape().to_vec(), gt).unwrap());
                    acc(*a, gy);
                }
                Op::Scale(a, c) => acc(*a, gy.map(|v| v * *c)),
                Op::Transpose(a) => {
                    let (n, m) = shape2(&gy);
                    let data = transpose(gy.data(), n, m);
                    acc(*a, Tensor::new(self.value(*a).shape().to_vec(), data).unwrap());
                }
                Op::SliceCols(a, start) => {
                    let va = self.value(*a);
                    let (m, n) = shape2(va);
                    let w = gy.cols();
                    let mut g = vec![T::zero(); m * n];
                    for r in 0..m {
                        g[r * n + start..r * n + start + w].copy_from_slice(&gy.data()[r * w..(r + 1) * w]);
                    }
                    acc(*a, Tensor::new(va.shape().to_vec(), g).unwrap());
                }
                Op::ConcatCols(parts) => {
                    let (m, n) = shape2(&gy);
                    let mut off = 0;
                    for p in parts {
                        let w = self.value(*p).cols();
                        let mut g = Vec::with_capacity(m * w);
                        for r in 0..m {
                            g.extend_from_slice(&gy.data()[r * n + off..r * n + off + w]);
                        }
                        off += w;
                        acc(*p, Tensor::new(self.value(*p).shape().to_vec(), g).unwrap());
                    }
                }
                Op::Reshape(a) => acc(*a, gy.reshape(self.value(*a).shape()).unwrap()),
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    rstd,
                } => {
                    let d = gy.cols();
                    let g = self.value(*gain).data();
                    let dn = T::of(d as f64);
                    let mut gx = Vec::with_capacity(gy.len());
                    let mut gg = vec![T::zero(); d];
                    let mut gb = vec![T::zero(); d];
                    for (r, (dy, xh)) in gy.data().chunks(d).zip(xhat.chunks(d)).enumerate() {
                        let mut mean_dxh = T::zero();
                        let mut mean_dxh_xh = T::zero();
                        for j in 0..d {
                            let dxh = dy[j] * g[j];
                            mean_dxh += dxh;
                            mean_dxh_xh += dxh * xh[j];
                            gg[j] += dy[j] * xh[j];
                            gb[j] += dy[j];
                        }
                        mean_dxh /= dn;
                        mean_dxh_xh /= dn;
                        for j in 0..d {
                            let dxh = dy[j] * g[j];
                            gx.push(rstd[r] * (dxh - mean_dxh - xh[j] * mean_dxh_xh));
                        }
                    }
                    acc(*gain, Tensor::new(self.value(*gain).shape().to_vec(), gg).unwrap());
                    acc(*bias, Tensor::new(self.value(*bias).shape().to_vec(), gb).unwrap());
                    acc(*x, Tensor::new(self.value(*x).shape().to_vec(), gx).unwrap());
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let d = y.cols();
                    let mut g = Vec::with_capacity(y.len());
                    for (yr, gr) in y.data().chunks(d).zip(gy.data().chunks(d)) {
                        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        g.extend(yr.iter().zip(gr).map(|(&yv, &gv)| yv * (gv - dot)));
                    }
                    acc(*a, Tensor::new(y.shape().to_vec(), g).unwrap());
                }
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    let data = x.data().iter().zip(gy.data()).map(|(&xv, &g)| g * gelu(xv).1).collect();
                    acc(*a, Tensor::new(x.shape().to_vec(), data).unwrap());
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    let data = y
                        .data()
                        .iter()
                        .zip(gy.data())
                        .map(|(&s, &g)| g * s * (T::one() - s))
                        .collect();
                    acc(*a, Tensor::new(y.shape().to_vec(), data).unwrap());
                }
                Op::MeanRows(a) => {
                    let va = self.value(*a);
                    let (m, d) = shape2(va);
                    let inv = T::one() / T::of(m as f64);
                    let mut g = Vec::with_capacity(m * d);
                    for _ in 0..m {
                        g.extend(gy.data().iter().map(|&v| v * inv));
                    }
                    acc(*a, Tensor::new(va.shape().to_vec(), g).unwrap());
                }
                Op::SumScalars(parts) => {
                    for p in parts {
                        acc(*p, Tensor::full(self.value(*p).shape(), gy.item()));
                    }
                }
                Op::L1(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let s = gy.item();
                    let ga: Vec<T> = va.data().iter().zip(vb.data()).map(|(&x, &y)| s * sign(x - y)).collect();
                    let gb = ga.iter().map(|&v| -v).collect();
                    acc(*a, Tensor::new(va.shape().to_vec(), ga).unwrap());
                    acc(*b, Tensor::new(vb.shape().to_vec(), gb).unwrap());
                }
                Op::Bce(p, label) => {
                    let raw = self.value(*p).item();
                    let lo = T::of(BCE_CLAMP);
                    let g = if raw < lo || raw > T::one() - lo {
                        T::zero()
                    } else {
                        gy.item() * (raw - *label) / (raw * (T::one() - raw))
                    };
                    acc(*p, Tensor::full(self.value(*p).shape(), g));
                }
                Op::BlockAttention {
                    q,
                    k,
                    v,
                    block,
                    heads,
                    scale,
                    attn,
                } => {
                    let (block, heads, scale) = (*block, *heads, *scale);
                    let (qd, kd, vd) = (self.value(*q).data(), self.value(*k).data(), self.value(*v).data());
                    let (m, w) = shape2(&gy);
                    let hd = w / heads;
                    let go = gy.data();
                    let (mut gq, mut gk, mut gv) = (vec![T::zero(); m * w], vec![T::zero(); m * w], vec![T::zero(); m * w]);
                    let mut ds = vec![T::zero(); block];
                    for b in 0..m / block {
                        for h in 0..heads {
                            let a = &attn[(b * heads + h) * block * block..(b * heads + h + 1) * block * block];
                            for i in 0..block {
                                let gi = &go[(b * block + i) * w + h * hd..][..hd];
                                let row = &a[i * block..(i + 1) * block];
                                // dA_ij = dO_i · V_j, then the softmax Jacobian
                                let mut dot = T::zero();
                                for j in 0..block {
                                    let vj = &vd[(b * block + j) * w + h * hd..][..hd];
                                    let da: T = gi.iter().zip(vj).map(|(&x, &y)| x * y).sum();
                                    ds[j] = da;
                                    dot += da * row[j];
                                }
                                for j in 0..block {
                                    ds[j] = row[j] * (ds[j] - dot) * scale;
                                }
                                for j in 0..block {
                                    let (aij, sij) = (row[j], ds[j]);
                                    let rj = (b * block + j) * w + h * hd;
                                    let ri = (b * block + i) * w + h * hd;
                                    for c in 0..hd {
                                        gv[rj + c] += aij * gi[c];
                                        gq[ri + c] += sij * kd[rj + c];
                                        gk[rj + c] += sij * qd[ri + c];
                                    }
                                }
                            }
                        }
                    }
                    let shape = vec![m, w];
                    acc(*q, Tensor::new(shape.clone(), gq).unwrap());
                    acc(*k, Tensor::new(shape.clone(), gk).unwrap());
                    acc(*v, Tensor::new(shape, gv).unwrap());
                }
                Op::MeanBlocks(a, block) => {
                    let va = self.value(*a);
                    let (m, d) = shape2(va);
                    let inv = T::one() / T::of(*block as f64);
                    let mut g = Vec::with_capacity(m * d);
                    for r in 0..m {
                        g.extend(gy.data()[(r / block) * d..(r / block + 1) * d].iter().map(|&v| v * inv));
                    }
                    acc(*a, Tensor::new(va.shape().to_vec(), g).unwrap());
                }
                Op::BceMean(p, labels) => {
                    let vp = self.value(*p);
                    let lo = T::of(BCE_CLAMP);
                    let s = gy.item() / T::of(labels.len() as f64);
                    let g = vp
                        .data()
                        .iter()
                        .zip(labels)
                        .map(|(&raw, &l)| {
                            if raw < lo || raw > T::one() - lo {
                                T::zero()
                            } else {
                                s * (raw - l) / (raw * (T::one() - raw))
                            }
                        })
                        .collect();
                    acc(*p, Tensor::new(vp.shape().to_vec(), g).unwrap());
                }
            }
        }
        Gradients { grads }
    }
}

fn clamp_prob<T: Scalar>(p: T) -> T {
    let lo = T::of(BCE_CLAMP);
    p.max(lo).min(T::one() - lo)
}

/// Result of a backward sweep.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of any node; `None` if the loss does not depend on it.
    pub fn of(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradients for every parameter slot, zero for parameters off the path.
    pub fn for_params(&self, bound: &Bound, params: &ParamSet<T>) -> Vec<Tensor<T>> {
        bound
            .vars()
            .iter()
            .zip(params.tensors())
            .map(|(&v, t)| self.of(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect()
    }
}

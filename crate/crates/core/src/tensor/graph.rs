// Tape-based reverse-mode autodiff.
//
// Nodes are appended in evaluation order, so parents always precede children
// and a single reverse sweep visits every node at most once.

use super::kernels::{self, gemm_nn, gemm_nt, gemm_tn};
use super::{Real, Tensor};
use crate::error::{Result, SabrError};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Scale,
}

/// Second operand of [`Graph::elementwise`]: a same-shape node or a scalar
/// broadcast over every element.
#[derive(Clone, Copy, Debug)]
pub enum Operand<T> {
    Var(Var),
    Scalar(T),
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
    },
    BatchMatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        a: Var,
        s: T,
    },
    AddScalar {
        a: Var,
    },
    AddBroadcast {
        a: Var,
        b: Var,
    },
    MulBroadcast {
        a: Var,
        b: Var,
    },
    Softmax {
        a: Var,
    },
    LayerNorm {
        x: Var,
        gain: Option<Var>,
        bias: Option<Var>,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Gelu {
        a: Var,
    },
    Silu {
        a: Var,
    },
    Sum {
        a: Var,
    },
    Mean {
        a: Var,
        axis: usize,
    },
    Mse {
        a: Var,
        b: Var,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Slice {
        a: Var,
        axis: usize,
        start: usize,
    },
    Reshape {
        a: Var,
    },
    Permute {
        a: Var,
        perm: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Append-only computation tape.
#[derive(Debug, Default)]
pub struct Graph<T: Real = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

// Splits a shape at `axis` into (outer, extent, inner) element counts.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn gelu_parts<T: Real>(x: T) -> (T, T) {
    let c = T::of((2.0 / std::f64::consts::PI).sqrt());
    let k = T::of(0.044715);
    let half = T::of(0.5);
    let u = c * (x + k * x * x * x);
    let th = u.tanh();
    let y = half * x * (T::one() + th);
    let dy = half * (T::one() + th)
        + half * x * (T::one() - th * th) * c * (T::one() + T::of(3.0) * k * x * x);
    (y, dy)
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf without gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(SabrError::Dimension(format!("matmul of {sa:?} and {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        gemm_nn(self.data(a), self.data(b), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Tensor {
                shape: vec![m, n],
                data: out,
            },
            Op::MatMul { a, b },
            rg,
        ))
    }

    /// Batched product over a shared leading extent: `[B,m,k]·[B,k,n]`, or
    /// `[B,m,k]·[B,n,k]ᵀ` when `trans_b`.
    pub fn batch_matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let bad = || {
            SabrError::Dimension(format!(
                "batch_matmul of {sa:?} and {sb:?} (trans_b={trans_b})"
            ))
        };
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(bad());
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let n = if trans_b { sb[1] } else { sb[2] };
        let kb = if trans_b { sb[2] } else { sb[1] };
        if kb != k {
            return Err(bad());
        }
        let mut out = vec![T::zero(); batch * m * n];
        let (da, db) = (self.data(a), self.data(b));
        for i in 0..batch {
            let ai = &da[i * m * k..(i + 1) * m * k];
            let bi = &db[i * k * n..(i + 1) * k * n];
            let ci = &mut out[i * m * n..(i + 1) * m * n];
            if trans_b {
                gemm_nt(ai, bi, ci, m, k, n);
            } else {
                gemm_nn(ai, bi, ci, m, k, n);
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Tensor {
                shape: vec![batch, m, n],
                data: out,
            },
            Op::BatchMatMul { a, b, trans_b },
            rg,
        ))
    }

    /// Affine map over the last axis: `x[…×in]·w[in×out] + b[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        let fin = *sx.last().unwrap();
        if sw.len() != 2 || sw[0] != fin {
            return Err(SabrError::Dimension(format!(
                "linear of {sx:?} with weight {sw:?}"
            )));
        }
        let fout = sw[1];
        if let Some(b) = b {
            if self.shape(b) != [fout] {
                return Err(SabrError::Dimension(format!(
                    "linear bias {:?} for width {fout}",
                    self.shape(b)
                )));
            }
        }
        let rows = self.value(x).len() / fin;
        let mut out = match b {
            Some(b) => {
                let bd = self.data(b);
                let mut o = Vec::with_capacity(rows * fout);
                for _ in 0..rows {
                    o.extend_from_slice(bd);
                }
                o
            }
            None => vec![T::zero(); rows * fout],
        };
        gemm_nn(self.data(x), self.data(w), &mut out, rows, fin, fout);
        let mut shape = sx;
        *shape.last_mut().unwrap() = fout;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(Tensor { shape, data: out }, Op::Linear { x, w, b }, rg))
    }

    pub fn elementwise(&mut self, kind: Elementwise, a: Var, b: Operand<T>) -> Result<Var> {
        match (kind, b) {
            (Elementwise::Add, Operand::Var(b)) => self.add(a, b),
            (Elementwise::Sub, Operand::Var(b)) => self.sub(a, b),
            (Elementwise::Mul | Elementwise::Scale, Operand::Var(b)) => self.mul(a, b),
            (Elementwise::Add, Operand::Scalar(s)) => Ok(self.add_scalar(a, s)),
            (Elementwise::Sub, Operand::Scalar(s)) => Ok(self.add_scalar(a, -s)),
            (Elementwise::Mul | Elementwise::Scale, Operand::Scalar(s)) => Ok(self.scale(a, s)),
        }
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(SabrError::Dimension(format!(
                "{what} of {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor {
            shape: self.shape(a).to_vec(),
            data,
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let t = self.zip_with(a, b, |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Add { a, b }, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let t = self.zip_with(a, b, |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Sub { a, b }, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let t = self.zip_with(a, b, |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Mul { a, b }, rg))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let data = self.data(a).iter().map(|&x| x * s).collect();
        let t = Tensor {
            shape: self.shape(a).to_vec(),
            data,
        };
        let rg = self.rg(a);
        self.push(t, Op::Scale { a, s }, rg)
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        let data = self.data(a).iter().map(|&x| x + s).collect();
        let t = Tensor {
            shape: self.shape(a).to_vec(),
            data,
        };
        let rg = self.rg(a);
        self.push(t, Op::AddScalar { a }, rg)
    }

    fn check_suffix(&self, a: Var, b: Var, what: &str) -> Result<usize> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(SabrError::Dimension(format!(
                "{what}: {sb:?} is not a trailing block of {sa:?}"
            )));
        }
        Ok(self.value(b).len())
    }

    /// `a + b` where `b`'s shape equals the trailing dimensions of `a`; `b`
    /// is repeated over the leading ones.
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let n = self.check_suffix(a, b, "add_broadcast")?;
        let bd = self.data(b);
        let data = self
            .data(a)
            .chunks(n)
            .flat_map(|ch| ch.iter().zip(bd).map(|(&x, &y)| x + y))
            .collect();
        let t = Tensor {
            shape: self.shape(a).to_vec(),
            data,
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::AddBroadcast { a, b }, rg))
    }

    /// `a ⊙ b` with the same repetition rule as [`Graph::add_broadcast`].
    pub fn mul_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let n = self.check_suffix(a, b, "mul_broadcast")?;
        let bd = self.data(b);
        let data = self
            .data(a)
            .chunks(n)
            .flat_map(|ch| ch.iter().zip(bd).map(|(&x, &y)| x * y))
            .collect();
        let t = Tensor {
            shape: self.shape(a).to_vec(),
            data,
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::MulBroadcast { a, b }, rg))
    }

    /// Softmax over the last axis with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let n = *shape.last().unwrap();
        let src = self.data(a);
        if src.iter().any(|v| !v.is_finite()) {
            return Err(SabrError::NumericInput(
                "softmax input contains non-finite values".into(),
            ));
        }
        let mut out = Vec::with_capacity(src.len());
        for row in src.chunks(n) {
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let start = out.len();
            let mut sum = T::zero();
            for &v in row {
                let e = (v - mx).exp();
                sum += e;
                out.push(e);
            }
            let inv = T::one() / sum;
            for v in &mut out[start..] {
                *v *= inv;
            }
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor { shape, data: out }, Op::Softmax { a }, rg))
    }

    /// Layer normalization over the last axis, with optional affine gain
    /// and bias of the last extent.
    pub fn layer_norm(
        &mut self,
        x: Var,
        gain: Option<Var>,
        bias: Option<Var>,
        eps: T,
    ) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().unwrap();
        for p in [gain, bias].into_iter().flatten() {
            if self.shape(p) != [d] {
                return Err(SabrError::Dimension(format!(
                    "layer_norm affine {:?} for width {d}",
                    self.shape(p)
                )));
            }
        }
        let src = self.data(x);
        let rows = src.len() / d;
        let dn = T::of(d as f64);
        let mut xhat = Vec::with_capacity(src.len());
        let mut rstd = Vec::with_capacity(rows);
        for row in src.chunks(d) {
            let mean = row.iter().fold(T::zero(), |s, &v| s + v) / dn;
            let var = row
                .iter()
                .fold(T::zero(), |s, &v| s + (v - mean) * (v - mean))
                / dn;
            let r = T::one() / (var + eps).sqrt();
            rstd.push(r);
            xhat.extend(row.iter().map(|&v| (v - mean) * r));
        }
        let g = gain.map(|g| self.data(g).to_vec());
        let b = bias.map(|b| self.data(b).to_vec());
        let mut out = xhat.clone();
        for row in out.chunks_mut(d) {
            if let Some(g) = &g {
                row.iter_mut().zip(g).for_each(|(v, &gv)| *v *= gv);
            }
            if let Some(b) = &b {
                row.iter_mut().zip(b).for_each(|(v, &bv)| *v += bv);
            }
        }
        let rg = self.rg(x) || gain.is_some_and(|g| self.rg(g)) || bias.is_some_and(|b| self.rg(b));
        Ok(self.push(
            Tensor { shape, data: out },
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let data = self.data(a).iter().map(|&x| gelu_parts(x).0).collect();
        let t = Tensor {
            shape: self.shape(a).to_vec(),
            data,
        };
        let rg = self.rg(a);
        self.push(t, Op::Gelu { a }, rg)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let data = self.data(a).iter().map(|&x| x * sigmoid(x)).collect();
        let t = Tensor {
            shape: self.shape(a).to_vec(),
            data,
        };
        let rg = self.rg(a);
        self.push(t, Op::Silu { a }, rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().fold(T::zero(), |s, &v| s + v);
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum { a }, rg)
    }

    /// Mean along `axis`; the axis is removed (rank-1 input gives shape `[1]`).
    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(SabrError::Dimension(format!(
                "mean axis {axis} out of range for {shape:?}"
            )));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let src = self.data(a);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for j in 0..n {
                let base = (o * n + j) * inner;
                for i in 0..inner {
                    out[o * inner + i] += src[base + i];
                }
            }
        }
        let inv = T::one() / T::of(n as f64);
        out.iter_mut().for_each(|v| *v *= inv);
        let mut oshape = shape;
        oshape.remove(axis);
        if oshape.is_empty() {
            oshape.push(1);
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor {
                shape: oshape,
                data: out,
            },
            Op::Mean { a, axis },
            rg,
        ))
    }

    /// Mean squared difference over all elements, as a `[1]` tensor.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mse")?;
        let n = T::of(self.value(a).len() as f64);
        let s = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .fold(T::zero(), |s, (&x, &y)| s + (x - y) * (x - y));
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::scalar(s / n), Op::Mse { a, b }, rg))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(parts[0]).to_vec();
        if axis >= first.len() {
            return Err(SabrError::Dimension(format!(
                "concat axis {axis} out of range for {first:?}"
            )));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len()
                || s.iter()
                    .enumerate()
                    .any(|(i, &e)| i != axis && e != first[i])
            {
                return Err(SabrError::Dimension(format!(
                    "concat of {first:?} and {s:?} along {axis}"
                )));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&first, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let ext = self.shape(p)[axis];
                let d = self.data(p);
                out.extend_from_slice(&d[o * ext * inner..(o + 1) * ext * inner]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor { shape, data: out },
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
        ))
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(SabrError::Dimension(format!(
                "slice [{start}, {start}+{len}) on axis {axis} of {shape:?}"
            )));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let src = self.data(a);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut oshape = shape;
        oshape[axis] = len;
        let rg = self.rg(a);
        Ok(self.push(
            Tensor {
                shape: oshape,
                data: out,
            },
            Op::Slice { a, axis, start },
            rg,
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::Reshape { a }, rg))
    }

    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len()
            || perm
                .iter()
                .any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true))
        {
            return Err(SabrError::Dimension(format!(
                "permutation {perm:?} for {shape:?}"
            )));
        }
        let (data, oshape) = kernels::permute(self.data(a), &shape, perm);
        let rg = self.rg(a);
        Ok(self.push(
            Tensor {
                shape: oshape,
                data,
            },
            Op::Permute {
                a,
                perm: perm.to_vec(),
            },
            rg,
        ))
    }

    /// Swap the two axes of a rank-2 tensor.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        if self.shape(a).len() != 2 {
            return Err(SabrError::Dimension(format!(
                "transpose of rank-{} tensor",
                self.shape(a).len()
            )));
        }
        self.permute(a, &[1, 0])
    }

    /// Gradient of the last backward root with respect to `v`. Leaves that
    /// require a gradient but were unreachable report zeros.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        let shape = self.shape(v).to_vec();
        match self.grads.get(v.0).and_then(|g| g.as_ref()) {
            Some(g) => Some(Tensor {
                shape,
                data: g.clone(),
            }),
            None if self.rg(v) => Some(Tensor::zeros(&shape)),
            None => None,
        }
    }

    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).len() != 1 {
            return Err(SabrError::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                self.shape(root)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![T::one()]);
        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let nodes = &self.nodes;
        // adds into the parent's gradient buffer when it needs one
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let n = nodes[v.0].value.len();
            let buf = grads[v.0].get_or_insert_with(|| vec![T::zero(); n]);
            f(buf);
        };
        let val = |v: Var| nodes[v.0].value.data();
        let shp = |v: Var| nodes[v.0].value.shape();

        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (m, k) = (shp(*a)[0], shp(*a)[1]);
                let n = shp(*b)[1];
                acc(*a, &mut |da| gemm_nt(g, val(*b), da, m, n, k));
                acc(*b, &mut |db| gemm_tn(val(*a), g, db, m, k, n));
            }
            Op::BatchMatMul { a, b, trans_b } => {
                let (batch, m, k) = (shp(*a)[0], shp(*a)[1], shp(*a)[2]);
                let n = node.value.shape()[2];
                let (av, bv) = (val(*a), val(*b));
                acc(*a, &mut |da| {
                    for i in 0..batch {
                        let gi = &g[i * m * n..(i + 1) * m * n];
                        let bi = &bv[i * k * n..(i + 1) * k * n];
                        let dai = &mut da[i * m * k..(i + 1) * m * k];
                        if *trans_b {
                            gemm_nn(gi, bi, dai, m, n, k);
                        } else {
                            gemm_nt(gi, bi, dai, m, n, k);
                        }
                    }
                });
                acc(*b, &mut |db| {
                    for i in 0..batch {
                        let gi = &g[i * m * n..(i + 1) * m * n];
                        let ai = &av[i * m * k..(i + 1) * m * k];
                        let dbi = &mut db[i * k * n..(i + 1) * k * n];
                        if *trans_b {
                            gemm_tn(gi, ai, dbi, m, n, k);
                        } else {
                            gemm_tn(ai, gi, dbi, m, k, n);
                        }
                    }
                });
            }
            Op::Linear { x, w, b } => {
                let (fin, fout) = (shp(*w)[0], shp(*w)[1]);
                let rows = g.len() / fout;
                acc(*x, &mut |dx| gemm_nt(g, val(*w), dx, rows, fout, fin));
                acc(*w, &mut |dw| gemm_tn(val(*x), g, dw, rows, fin, fout));
                if let Some(b) = b {
                    acc(*b, &mut |db| {
                        for row in g.chunks(fout) {
                            db.iter_mut().zip(row).for_each(|(d, &v)| *d += v);
                        }
                    });
                }
            }
            Op::Add { a, b } => {
                acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(d, &v)| *d += v));
                acc(*b, &mut |d| d.iter_mut().zip(g).for_each(|(d, &v)| *d += v));
            }
            Op::Sub { a, b } => {
                acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(d, &v)| *d += v));
                acc(*b, &mut |d| d.iter_mut().zip(g).for_each(|(d, &v)| *d -= v));
            }
            Op::Mul { a, b } => {
                let (av, bv) = (val(*a), val(*b));
                acc(*a, &mut |d| {
                    d.iter_mut()
                        .zip(g)
                        .zip(bv)
                        .for_each(|((d, &v), &y)| *d += v * y)
                });
                acc(*b, &mut |d| {
                    d.iter_mut()
                        .zip(g)
                        .zip(av)
                        .for_each(|((d, &v), &x)| *d += v * x)
                });
            }
            Op::Scale { a, s } => {
                acc(*a, &mut |d| {
                    d.iter_mut().zip(g).for_each(|(d, &v)| *d += v * *s)
                });
            }
            Op::AddScalar { a } => {
                acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(d, &v)| *d += v));
            }
            Op::AddBroadcast { a, b } => {
                let n = val(*b).len();
                acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(d, &v)| *d += v));
                acc(*b, &mut |d| {
                    for ch in g.chunks(n) {
                        d.iter_mut().zip(ch).for_each(|(d, &v)| *d += v);
                    }
                });
            }
            Op::MulBroadcast { a, b } => {
                let (av, bv) = (val(*a), val(*b));
                let n = bv.len();
                acc(*a, &mut |d| {
                    for (dch, gch) in d.chunks_mut(n).zip(g.chunks(n)) {
                        dch.iter_mut()
                            .zip(gch)
                            .zip(bv)
                            .for_each(|((d, &v), &y)| *d += v * y);
                    }
                });
                acc(*b, &mut |d| {
                    for (gch, ach) in g.chunks(n).zip(av.chunks(n)) {
                        d.iter_mut()
                            .zip(gch)
                            .zip(ach)
                            .for_each(|((d, &v), &x)| *d += v * x);
                    }
                });
            }
            Op::Softmax { a } => {
                let y = node.value.data();
                let n = *node.value.shape().last().unwrap();
                acc(*a, &mut |d| {
                    for ((dr, gr), yr) in d.chunks_mut(n).zip(g.chunks(n)).zip(y.chunks(n)) {
                        let dot = gr
                            .iter()
                            .zip(yr)
                            .fold(T::zero(), |s, (&gv, &yv)| s + gv * yv);
                        dr.iter_mut()
                            .zip(gr)
                            .zip(yr)
                            .for_each(|((d, &gv), &yv)| *d += yv * (gv - dot));
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let d = *node.value.shape().last().unwrap();
                let dn = T::of(d as f64);
                let gv = gain.map(&val);
                acc(*x, &mut |dx| {
                    let mut dxhat = vec![T::zero(); d];
                    for (r, ((dxr, gr), xr)) in dx
                        .chunks_mut(d)
                        .zip(g.chunks(d))
                        .zip(xhat.chunks(d))
                        .enumerate()
                    {
                        for j in 0..d {
                            dxhat[j] = match gv {
                                Some(gw) => gr[j] * gw[j],
                                None => gr[j],
                            };
                        }
                        let m1 = dxhat.iter().fold(T::zero(), |s, &v| s + v) / dn;
                        let m2 = dxhat
                            .iter()
                            .zip(xr)
                            .fold(T::zero(), |s, (&a, &b)| s + a * b)
                            / dn;
                        for j in 0..d {
                            dxr[j] += rstd[r] * (dxhat[j] - m1 - xr[j] * m2);
                        }
                    }
                });
                if let Some(gn) = gain {
                    acc(*gn, &mut |dg| {
                        for (gr, xr) in g.chunks(d).zip(xhat.chunks(d)) {
                            dg.iter_mut()
                                .zip(gr)
                                .zip(xr)
                                .for_each(|((d, &gv), &xv)| *d += gv * xv);
                        }
                    });
                }
                if let Some(bn) = bias {
                    acc(*bn, &mut |db| {
                        for gr in g.chunks(d) {
                            db.iter_mut().zip(gr).for_each(|(d, &gv)| *d += gv);
                        }
                    });
                }
            }
            Op::Gelu { a } => {
                let av = val(*a);
                acc(*a, &mut |d| {
                    d.iter_mut()
                        .zip(g)
                        .zip(av)
                        .for_each(|((d, &v), &x)| *d += v * gelu_parts(x).1)
                });
            }
            Op::Silu { a } => {
                let av = val(*a);
                acc(*a, &mut |d| {
                    d.iter_mut().zip(g).zip(av).for_each(|((d, &v), &x)| {
                        let s = sigmoid(x);
                        *d += v * s * (T::one() + x * (T::one() - s));
                    })
                });
            }
            Op::Sum { a } => {
                acc(*a, &mut |d| d.iter_mut().for_each(|d| *d += g[0]));
            }
            Op::Mean { a, axis } => {
                let (outer, n, inner) = split_axis(shp(*a), *axis);
                let inv = T::one() / T::of(n as f64);
                acc(*a, &mut |d| {
                    for o in 0..outer {
                        for j in 0..n {
                            let base = (o * n + j) * inner;
                            for i in 0..inner {
                                d[base + i] += g[o * inner + i] * inv;
                            }
                        }
                    }
                });
            }
            Op::Mse { a, b } => {
                let (av, bv) = (val(*a), val(*b));
                let c = T::of(2.0) * g[0] / T::of(av.len() as f64);
                acc(*a, &mut |d| {
                    d.iter_mut()
                        .zip(av)
                        .zip(bv)
                        .for_each(|((d, &x), &y)| *d += c * (x - y))
                });
                acc(*b, &mut |d| {
                    d.iter_mut()
                        .zip(av)
                        .zip(bv)
                        .for_each(|((d, &x), &y)| *d -= c * (x - y))
                });
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = split_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for &p in parts {
                    let ext = shp(p)[*axis];
                    acc(p, &mut |d| {
                        for o in 0..outer {
                            let src = &g
                                [(o * total + offset) * inner..(o * total + offset + ext) * inner];
                            let dst = &mut d[o * ext * inner..(o + 1) * ext * inner];
                            dst.iter_mut().zip(src).for_each(|(d, &v)| *d += v);
                        }
                    });
                    offset += ext;
                }
            }
            Op::Slice { a, axis, start } => {
                let (outer, n, inner) = split_axis(shp(*a), *axis);
                let len = node.value.shape()[*axis];
                acc(*a, &mut |d| {
                    for o in 0..outer {
                        let base = (o * n + start) * inner;
                        let src = &g[o * len * inner..(o + 1) * len * inner];
                        d[base..base + len * inner]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(d, &v)| *d += v);
                    }
                });
            }
            Op::Reshape { a } => {
                acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(d, &v)| *d += v));
            }
            Op::Permute { a, perm } => {
                let inv = kernels::inverse_perm(perm);
                let (back, _) = kernels::permute(g, node.value.shape(), &inv);
                acc(*a, &mut |d| {
                    d.iter_mut().zip(&back).for_each(|(d, &v)| *d += v)
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_selector() {
        let mut g = Graph::<f64>::new();
        let i2 = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let m = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let c = g.matmul(i2, m).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);

        let row = g.constant(t(&[1, 2], &[1.0, 0.0]));
        let col = g.constant(t(&[2, 1], &[5.0, 7.0]));
        let c = g.matmul(row, col).unwrap();
        assert_eq!(g.value(c).data(), &[5.0]);
    }

    #[test]
    fn matmul_shape_mismatch_names_both() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("dimension"), "{err}");
    }

    #[test]
    fn elementwise_identities() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[3], &[1.0, 2.0, 3.0]));
        let a = g
            .elementwise(Elementwise::Add, x, Operand::Scalar(0.0))
            .unwrap();
        assert_eq!(g.value(a), g.value(x));
        let m = g
            .elementwise(Elementwise::Mul, x, Operand::Scalar(1.0))
            .unwrap();
        assert_eq!(g.value(m), g.value(x));
        let s = g
            .elementwise(Elementwise::Scale, x, Operand::Scalar(2.0))
            .unwrap();
        assert_eq!(g.value(s).data(), &[2.0, 4.0, 6.0]);
        let y = g.constant(t(&[2], &[1.0, 2.0]));
        assert!(matches!(
            g.elementwise(Elementwise::Sub, x, Operand::Var(y)),
            Err(SabrError::Dimension(_))
        ));
    }

    #[test]
    fn softmax_symmetric_and_stable() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[3], &[0.0, 0.0, 0.0]));
        let s = g.softmax(x).unwrap();
        for &v in g.value(s).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let x = g.constant(t(&[2], &[1000.0, 0.0]));
        let s = g.softmax(x).unwrap();
        assert_eq!(g.value(s).data(), &[1.0, 0.0]);

        let x = g.constant(t(&[2], &[f64::NAN, 0.0]));
        assert!(matches!(g.softmax(x), Err(SabrError::NumericInput(_))));
    }

    #[test]
    fn layer_norm_edge_cases() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[2, 3], &[5.0, 5.0, 5.0, 1.0, 2.0, 4.0]));
        let ones = g.constant(Tensor::full(&[3], 1.0));
        let zeros = g.constant(Tensor::zeros(&[3]));
        let y = g.layer_norm(x, Some(ones), Some(zeros), 1e-5).unwrap();
        assert_eq!(&g.value(y).data()[..3], &[0.0, 0.0, 0.0]);

        let gz = g.constant(Tensor::zeros(&[3]));
        let b = g.constant(t(&[3], &[0.5, -1.0, 2.0]));
        let y = g.layer_norm(x, Some(gz), Some(b), 1e-5).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, -1.0, 2.0, 0.5, -1.0, 2.0]);
    }

    #[test]
    fn small_ops_fixed_points() {
        let mut g = Graph::<f64>::new();
        let z = g.constant(t(&[1], &[0.0]));
        let y = g.gelu(z);
        assert_eq!(g.value(y).data(), &[0.0]);

        let x = g.constant(t(&[2, 2], &[1.0, -2.0, 3.5, 0.25]));
        let m = g.mse(x, x).unwrap();
        assert_eq!(g.value(m).data(), &[0.0]);

        let a = g.constant(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let at = g.transpose(a).unwrap();
        let att = g.transpose(at).unwrap();
        assert_eq!(g.value(att), g.value(a));
        assert!(g.mean(a, 2).is_err());
        assert!(g.concat(&[a, a], 3).is_err());
    }

    #[test]
    fn backward_linear_and_fanout() {
        let mut g = Graph::<f64>::new();
        let x = g.param(t(&[3], &[1.0, -1.0, 2.0]));
        let y = g.scale(x, 2.0);
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2.0, 2.0, 2.0]);

        let mut g = Graph::<f64>::new();
        let x = g.param(t(&[2], &[0.3, 0.4]));
        let y = g.add(x, x).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn unreachable_leaf_gets_zero_and_nonscalar_root_fails() {
        let mut g = Graph::<f64>::new();
        let x = g.param(t(&[2], &[1.0, 2.0]));
        let unused = g.param(t(&[2], &[3.0, 4.0]));
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(unused).unwrap().data(), &[0.0, 0.0]);
        assert!(matches!(g.backward(x), Err(SabrError::Contract(_))));
    }
}

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;

use super::tensor::{broadcast_shape, contiguous_strides, for_each_broadcast, numel, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Unary {
    Sigmoid,
    Tanh,
    Relu,
    Erf,
    Exp,
    Log,
    Abs,
    Square,
    Sqrt,
    Softplus,
}

impl Unary {
    fn name(self) -> &'static str {
        match self {
            Unary::Sigmoid => "sigmoid",
            Unary::Tanh => "tanh",
            Unary::Relu => "relu",
            Unary::Erf => "erf",
            Unary::Exp => "exp",
            Unary::Log => "log",
            Unary::Abs => "abs",
            Unary::Square => "square",
            Unary::Sqrt => "sqrt",
            Unary::Softplus => "softplus",
        }
    }

    fn apply<S: Scalar>(self, x: S) -> S {
        match self {
            Unary::Sigmoid => sigmoid(x),
            Unary::Tanh => x.tanh(),
            Unary::Relu => x.max(S::zero()),
            Unary::Erf => x.gauss_erf(),
            Unary::Exp => x.exp(),
            Unary::Log => x.ln(),
            Unary::Abs => x.abs(),
            Unary::Square => x * x,
            Unary::Sqrt => x.sqrt(),
            Unary::Softplus => softplus(x),
        }
    }
}

#[inline]
pub fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

#[inline]
pub fn softplus<S: Scalar>(x: S) -> S {
    // log(1 + e^x) without overflow
    x.max(S::zero()) + (-x.abs()).exp().ln_1p()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

/// Activations kept from a fused GRU step for the backward pass.
#[derive(Debug)]
pub(crate) struct GruSaved<S> {
    pub z: Vec<S>,
    pub r: Vec<S>,
    pub n: Vec<S>,
    pub rh: Vec<S>,
}

#[derive(Debug)]
pub(crate) enum Op<S> {
    Leaf,
    Binary(Binary, usize, usize),
    Unary(Unary, usize),
    Scale(usize, S),
    Offset(usize),
    Clamp(usize, S, S),
    MatMul(usize, usize),
    Sum(usize),
    SumAxis(usize, usize),
    Concat(Vec<usize>, usize),
    Slice { src: usize, axis: usize, start: usize },
    Broadcast(usize),
    Reshape(usize),
    Permute(usize, Vec<usize>),
    GatherRows(usize, Vec<usize>),
    GruCell {
        gx: usize,
        step: usize,
        h: usize,
        u: usize,
        saved: GruSaved<S>,
    },
}

#[derive(Debug)]
pub(crate) struct Node<S> {
    pub value: Tensor<S>,
    pub op: Op<S>,
    pub requires_grad: bool,
}

/// Append-only tape of tensor operations.
///
/// Nodes are pushed in evaluation order, so parents always have smaller
/// indices than their children and a reverse sweep is a valid topological
/// order for backpropagation. Every op validates shapes up front and
/// rejects non-finite results.
#[derive(Debug, Default)]
pub struct Graph<S> {
    pub(crate) nodes: Vec<Node<S>>,
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<S>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, name: &'static str, value: Tensor<S>, op: Op<S>, parents: &[usize]) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::Numerics { op: name });
        }
        let requires_grad = parents.iter().any(|&p| self.nodes[p].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let shape = broadcast_shape(ta.shape(), tb.shape())?;
        let (da, db) = (ta.data(), tb.data());
        let mut out = vec![S::zero(); numel(&shape)];
        match kind {
            Binary::Add => for_each_broadcast(&shape, ta.shape(), tb.shape(), |o, i, j| out[o] = da[i] + db[j]),
            Binary::Sub => for_each_broadcast(&shape, ta.shape(), tb.shape(), |o, i, j| out[o] = da[i] - db[j]),
            Binary::Mul => for_each_broadcast(&shape, ta.shape(), tb.shape(), |o, i, j| out[o] = da[i] * db[j]),
            Binary::Div => for_each_broadcast(&shape, ta.shape(), tb.shape(), |o, i, j| out[o] = da[i] / db[j]),
        }
        let name = match kind {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
        };
        let value = Tensor::new(shape, out)?;
        self.push(name, value, Op::Binary(kind, a.0, b.0), &[a.0, b.0])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Div, a, b)
    }

    fn unary(&mut self, kind: Unary, a: Var) -> Result<Var> {
        let value = self.value(a).map(|x| kind.apply(x));
        self.push(kind.name(), value, Op::Unary(kind, a.0), &[a.0])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Sigmoid, a)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Tanh, a)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Relu, a)
    }

    pub fn erf(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Erf, a)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Exp, a)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Log, a)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Abs, a)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Square, a)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Sqrt, a)
    }

    /// `ln(1 + e^x)`, stable for large |x|.
    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Softplus, a)
    }

    pub fn scale(&mut self, a: Var, c: S) -> Result<Var> {
        let value = self.value(a).map(|x| x * c);
        self.push("scale", value, Op::Scale(a.0, c), &[a.0])
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -S::one())
    }

    pub fn add_scalar(&mut self, a: Var, c: S) -> Result<Var> {
        let value = self.value(a).map(|x| x + c);
        self.push("add_scalar", value, Op::Offset(a.0), &[a.0])
    }

    /// `c - a`.
    pub fn rsub_scalar(&mut self, c: S, a: Var) -> Result<Var> {
        let n = self.neg(a)?;
        self.add_scalar(n, c)
    }

    pub fn clamp(&mut self, a: Var, lo: S, hi: S) -> Result<Var> {
        if !(lo < hi) {
            return Err(Error::Config(format!("clamp needs lo < hi, got [{lo}, {hi}]")));
        }
        let value = self.value(a).map(|x| x.max(lo).min(hi));
        self.push("clamp", value, Op::Clamp(a.0, lo, hi), &[a.0])
    }

    /// Matrix product. Supported operand ranks:
    /// `[M,K]·[K,N]`, `[B,M,K]·[B,K,N]` and `[B,M,K]·[K,N]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        let out = match (sa.len(), sb.len()) {
            (2, 2) => {
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if sb[0] != k {
                    return Err(shape_err!("matmul {:?} x {:?}", sa, sb));
                }
                let mut c = vec![S::zero(); m * n];
                S::gemm(m, k, n, S::one(), ta.data(), (k as isize, 1), tb.data(), (n as isize, 1), S::zero(), &mut c, (n as isize, 1));
                Tensor::new(vec![m, n], c)?
            }
            (3, 2) => {
                let (bt, m, k, n) = (sa[0], sa[1], sa[2], sb[1]);
                if sb[0] != k {
                    return Err(shape_err!("matmul {:?} x {:?}", sa, sb));
                }
                let mut c = vec![S::zero(); bt * m * n];
                S::gemm(bt * m, k, n, S::one(), ta.data(), (k as isize, 1), tb.data(), (n as isize, 1), S::zero(), &mut c, (n as isize, 1));
                Tensor::new(vec![bt, m, n], c)?
            }
            (3, 3) => {
                let (bt, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
                if sb[0] != bt || sb[1] != k {
                    return Err(shape_err!("batched matmul {:?} x {:?}", sa, sb));
                }
                let mut c = vec![S::zero(); bt * m * n];
                for i in 0..bt {
                    S::gemm(
                        m,
                        k,
                        n,
                        S::one(),
                        &ta.data()[i * m * k..],
                        (k as isize, 1),
                        &tb.data()[i * k * n..],
                        (n as isize, 1),
                        S::zero(),
                        &mut c[i * m * n..],
                        (n as isize, 1),
                    );
                }
                Tensor::new(vec![bt, m, n], c)?
            }
            _ => return Err(shape_err!("matmul unsupported ranks {:?} x {:?}", sa, sb)),
        };
        self.push("matmul", out, Op::MatMul(a.0, b.0), &[a.0, b.0])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: S = self.value(a).data().iter().copied().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(a.0), &[a.0])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel();
        if n == 0 {
            return Err(shape_err!("mean of empty tensor"));
        }
        let s = self.sum(a)?;
        self.scale(s, S::one() / S::lit(n as f64))
    }

    /// Sums out `axis` (the axis is removed from the shape).
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let t = self.value(a);
        let shape = t.shape();
        if axis >= shape.len() {
            return Err(shape_err!("sum_axis {} on {:?}", axis, shape));
        }
        let outer = numel(&shape[..axis]);
        let len = shape[axis];
        let inner = numel(&shape[axis + 1..]);
        let mut out = vec![S::zero(); outer * inner];
        let d = t.data();
        for o in 0..outer {
            for l in 0..len {
                let src = &d[(o * len + l) * inner..(o * len + l + 1) * inner];
                let dst = &mut out[o * inner..(o + 1) * inner];
                for (x, &y) in dst.iter_mut().zip(src) {
                    *x = *x + y;
                }
            }
        }
        let mut new_shape = shape.to_vec();
        new_shape.remove(axis);
        let value = Tensor::new(new_shape, out)?;
        self.push("sum_axis", value, Op::SumAxis(a.0, axis), &[a.0])
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let len = *self
            .shape(a)
            .get(axis)
            .ok_or_else(|| shape_err!("mean_axis {} on {:?}", axis, self.shape(a)))?;
        if len == 0 {
            return Err(shape_err!("mean over empty axis"));
        }
        let s = self.sum_axis(a, axis)?;
        self.scale(s, S::one() / S::lit(len as f64))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or_else(|| shape_err!("concat of nothing"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(shape_err!("concat axis {} on {:?}", axis, base));
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            if s.len() != base.len()
                || s.iter().zip(&base).enumerate().any(|(i, (x, y))| i != axis && x != y)
            {
                return Err(shape_err!("concat mismatch {:?} vs {:?}", s, base));
            }
            total += s[axis];
        }
        let outer = numel(&base[..axis]);
        let inner = numel(&base[axis + 1..]);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let t = self.value(*p);
                let chunk = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let value = Tensor::new(shape, out)?;
        let ids: Vec<usize> = parts.iter().map(|v| v.0).collect();
        self.push("concat", value, Op::Concat(ids.clone(), axis), &ids)
    }

    /// Stacks equally shaped tensors along a new axis.
    pub fn stack(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let mut expanded = Vec::with_capacity(parts.len());
        for &p in parts {
            let mut s = self.shape(p).to_vec();
            if axis > s.len() {
                return Err(shape_err!("stack axis {} on {:?}", axis, s));
            }
            s.insert(axis, 1);
            expanded.push(self.reshape(p, &s)?);
        }
        self.concat(&expanded, axis)
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        let shape = t.shape();
        if axis >= shape.len() || start >= end || end > shape[axis] {
            return Err(shape_err!("slice {}..{} on axis {} of {:?}", start, end, axis, shape));
        }
        let outer = numel(&shape[..axis]);
        let len = shape[axis];
        let inner = numel(&shape[axis + 1..]);
        let mut out = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            out.extend_from_slice(&t.data()[(o * len + start) * inner..(o * len + end) * inner]);
        }
        let mut new_shape = shape.to_vec();
        new_shape[axis] = end - start;
        let value = Tensor::new(new_shape, out)?;
        self.push("slice", value, Op::Slice { src: a.0, axis, start }, &[a.0])
    }

    pub fn broadcast_to(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let src = self.shape(a).to_vec();
        if broadcast_shape(&src, shape)? != shape {
            return Err(shape_err!("cannot broadcast {:?} to {:?}", src, shape));
        }
        let d = self.value(a).data();
        let mut out = vec![S::zero(); numel(shape)];
        for_each_broadcast(shape, &src, shape, |o, i, _| out[o] = d[i]);
        let value = Tensor::new(shape.to_vec(), out)?;
        self.push("broadcast", value, Op::Broadcast(a.0), &[a.0])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        self.push("reshape", value, Op::Reshape(a.0), &[a.0])
    }

    /// Axis permutation: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let value = permute_tensor(self.value(a), perm)?;
        self.push("permute", value, Op::Permute(a.0, perm.to_vec()), &[a.0])
    }

    /// Selects blocks along axis 0 (indices may repeat).
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let value = self.value(a).rows(indices)?;
        self.push("gather_rows", value, Op::GatherRows(a.0, indices.to_vec()), &[a.0])
    }

    /// One GRU step reading pre-projected inputs at time `step`.
    ///
    /// `gx` is `[N,T,3H]` holding `W x_t + b` with gate blocks ordered
    /// (update, reset, candidate); `h` is `[N,H]`; `u` is `[H,3H]`. Computes
    ///
    /// ```text
    /// z  = σ(gx_z + h U_z)
    /// r  = σ(gx_r + h U_r)
    /// n  = tanh(gx_n + (r ⊙ h) U_n)
    /// h' = (1 − z) ⊙ h + z ⊙ n
    /// ```
    pub fn gru_cell(&mut self, gx: Var, step: usize, h: Var, u: Var) -> Result<Var> {
        let (tg, th, tu) = (self.value(gx), self.value(h), self.value(u));
        let (sg, sh, su) = (tg.shape(), th.shape(), tu.shape());
        if sg.len() != 3 || sh.len() != 2 || su.len() != 2 {
            return Err(shape_err!("gru_cell ranks {:?} {:?} {:?}", sg, sh, su));
        }
        let (nb, steps, h3) = (sg[0], sg[1], sg[2]);
        let hid = sh[1];
        if sh[0] != nb || h3 != 3 * hid || su[0] != hid || su[1] != h3 || step >= steps {
            return Err(shape_err!("gru_cell shapes {:?} {:?} {:?} step {}", sg, sh, su, step));
        }
        let (g, hv, uv) = (tg.data(), th.data(), tu.data());
        let mut pre = vec![S::zero(); nb * h3];
        for i in 0..nb {
            let src = &g[(i * steps + step) * h3..(i * steps + step + 1) * h3];
            pre[i * h3..(i + 1) * h3].copy_from_slice(src);
        }
        let ld = h3 as isize;
        S::gemm(nb, hid, 2 * hid, S::one(), hv, (hid as isize, 1), uv, (ld, 1), S::one(), &mut pre, (ld, 1));
        let m = nb * hid;
        let (mut z, mut r, mut rh) = (vec![S::zero(); m], vec![S::zero(); m], vec![S::zero(); m]);
        for i in 0..nb {
            for j in 0..hid {
                let k = i * hid + j;
                z[k] = sigmoid(pre[i * h3 + j]);
                r[k] = sigmoid(pre[i * h3 + hid + j]);
                rh[k] = r[k] * hv[k];
            }
        }
        S::gemm(nb, hid, hid, S::one(), &rh, (hid as isize, 1), &uv[2 * hid..], (ld, 1), S::one(), &mut pre[2 * hid..], (ld, 1));
        let mut n = vec![S::zero(); m];
        let mut out = vec![S::zero(); m];
        for i in 0..nb {
            for j in 0..hid {
                let k = i * hid + j;
                n[k] = pre[i * h3 + 2 * hid + j].tanh();
                out[k] = (S::one() - z[k]) * hv[k] + z[k] * n[k];
            }
        }
        let value = Tensor::new(vec![nb, hid], out)?;
        let op = Op::GruCell {
            gx: gx.0,
            step,
            h: h.0,
            u: u.0,
            saved: GruSaved { z, r, n, rh },
        };
        self.push("gru_cell", value, op, &[gx.0, h.0, u.0])
    }
}

pub(crate) fn permute_tensor<S: Scalar>(t: &Tensor<S>, perm: &[usize]) -> Result<Tensor<S>> {
    let shape = t.shape();
    let rank = shape.len();
    let mut check = perm.to_vec();
    check.sort_unstable();
    if perm.len() != rank || check.iter().enumerate().any(|(i, &p)| i != p) {
        return Err(shape_err!("invalid permutation {:?} for {:?}", perm, shape));
    }
    let src_strides = contiguous_strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| src_strides[p]).collect();
    let total = t.numel();
    let mut out = Vec::with_capacity(total);
    if rank == 0 {
        return Ok(t.clone());
    }
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    let d = t.data();
    for _ in 0..total {
        out.push(d[off]);
        let mut ax = rank;
        while ax > 0 {
            ax -= 1;
            idx[ax] += 1;
            off += strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            off -= strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    Tensor::new(out_shape, out)
}

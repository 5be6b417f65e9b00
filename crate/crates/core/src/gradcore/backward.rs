use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

use super::graph::{permute_tensor, sigmoid, Binary, Graph, Node, Op, Unary, Var};
use super::tensor::{for_each_broadcast, numel, Tensor};

/// Gradients of a scalar root with respect to every trainable leaf.
#[derive(Debug)]
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient for `v`, or `None` when `v` is not a trainable leaf reached
    /// from the root.
    pub fn get(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<S>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }

    /// Gradient for `v`, zeros when it did not influence the root.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor<S> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

type Buffers<S> = Vec<Option<Vec<S>>>;

fn buffer<'a, S: Scalar>(grads: &'a mut Buffers<S>, nodes: &[Node<S>], p: usize) -> Option<&'a mut Vec<S>> {
    if !nodes[p].requires_grad {
        return None;
    }
    Some(grads[p].get_or_insert_with(|| vec![S::zero(); nodes[p].value.numel()]))
}

fn add_into<S: Scalar>(dst: &mut [S], src: &[S]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

impl<S: Scalar> Graph<S> {
    /// Reverse-mode sweep from a scalar `root`.
    ///
    /// Kinks use fixed subgradients: `clamp` and `relu` pass 1 strictly
    /// inside their linear region and 0 at or beyond the boundary; `abs`
    /// uses 0 at the origin.
    pub fn backward(&self, root: Var) -> Result<Gradients<S>> {
        let root_node = self
            .nodes
            .get(root.0)
            .ok_or_else(|| shape_err!("unknown root node {}", root.0))?;
        if root_node.value.numel() != 1 {
            return Err(shape_err!(
                "backward needs a scalar root, got shape {:?}",
                root_node.value.shape()
            ));
        }
        let nodes = &self.nodes[..=root.0];
        let mut grads: Buffers<S> = (0..nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![S::one()]);

        for k in (0..nodes.len()).rev() {
            let node = &nodes[k];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[k].take() else { continue };
            self.propagate(k, &g, &mut grads)?;
        }

        let grads = grads
            .into_iter()
            .zip(nodes)
            .map(|(g, node)| match (&node.op, g) {
                (Op::Leaf, Some(g)) if node.requires_grad => Tensor::new(node.value.shape().to_vec(), g).ok(),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn propagate(&self, k: usize, g: &[S], grads: &mut Buffers<S>) -> Result<()> {
        let nodes = &self.nodes;
        let node = &nodes[k];
        match &node.op {
            Op::Leaf => {}
            Op::Binary(kind, a, b) => {
                let (ta, tb) = (&nodes[*a].value, &nodes[*b].value);
                let (da, db) = (ta.data(), tb.data());
                let out = node.value.shape();
                let need_a = nodes[*a].requires_grad;
                let need_b = nodes[*b].requires_grad;
                let mut la = vec![S::zero(); if need_a { da.len() } else { 0 }];
                let mut lb = vec![S::zero(); if need_b { db.len() } else { 0 }];
                for_each_broadcast(out, ta.shape(), tb.shape(), |o, i, j| {
                    let go = g[o];
                    let (ga, gb) = match kind {
                        Binary::Add => (go, go),
                        Binary::Sub => (go, -go),
                        Binary::Mul => (go * db[j], go * da[i]),
                        Binary::Div => (go / db[j], -go * da[i] / (db[j] * db[j])),
                    };
                    if need_a {
                        la[i] = la[i] + ga;
                    }
                    if need_b {
                        lb[j] = lb[j] + gb;
                    }
                });
                if let Some(buf) = buffer(grads, nodes, *a) {
                    add_into(buf, &la);
                }
                if let Some(buf) = buffer(grads, nodes, *b) {
                    add_into(buf, &lb);
                }
            }
            Op::Unary(kind, a) => {
                let x = nodes[*a].value.data();
                let y = node.value.data();
                let two_over_sqrt_pi = S::lit(std::f64::consts::FRAC_2_SQRT_PI);
                let half = S::lit(0.5);
                if let Some(buf) = buffer(grads, nodes, *a) {
                    for i in 0..buf.len() {
                        let d = match kind {
                            Unary::Sigmoid => y[i] * (S::one() - y[i]),
                            Unary::Tanh => S::one() - y[i] * y[i],
                            Unary::Relu => {
                                if x[i] > S::zero() {
                                    S::one()
                                } else {
                                    S::zero()
                                }
                            }
                            Unary::Erf => two_over_sqrt_pi * (-x[i] * x[i]).exp(),
                            Unary::Exp => y[i],
                            Unary::Log => S::one() / x[i],
                            Unary::Abs => {
                                if x[i] > S::zero() {
                                    S::one()
                                } else if x[i] < S::zero() {
                                    -S::one()
                                } else {
                                    S::zero()
                                }
                            }
                            Unary::Square => x[i] + x[i],
                            Unary::Sqrt => half / y[i],
                            Unary::Softplus => sigmoid(x[i]),
                        };
                        buf[i] = buf[i] + g[i] * d;
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(buf) = buffer(grads, nodes, *a) {
                    for (b, &gi) in buf.iter_mut().zip(g) {
                        *b = *b + gi * *c;
                    }
                }
            }
            Op::Offset(a) | Op::Reshape(a) => {
                if let Some(buf) = buffer(grads, nodes, *a) {
                    add_into(buf, g);
                }
            }
            Op::Clamp(a, lo, hi) => {
                let x = nodes[*a].value.data();
                if let Some(buf) = buffer(grads, nodes, *a) {
                    for i in 0..buf.len() {
                        if x[i] > *lo && x[i] < *hi {
                            buf[i] = buf[i] + g[i];
                        }
                    }
                }
            }
            Op::MatMul(a, b) => self.matmul_backward(*a, *b, g, grads),
            Op::Sum(a) => {
                if let Some(buf) = buffer(grads, nodes, *a) {
                    for v in buf.iter_mut() {
                        *v = *v + g[0];
                    }
                }
            }
            Op::SumAxis(a, axis) => {
                let shape = nodes[*a].value.shape();
                let outer = numel(&shape[..*axis]);
                let len = shape[*axis];
                let inner = numel(&shape[*axis + 1..]);
                if let Some(buf) = buffer(grads, nodes, *a) {
                    for o in 0..outer {
                        let src = &g[o * inner..(o + 1) * inner];
                        for l in 0..len {
                            add_into(&mut buf[(o * len + l) * inner..(o * len + l + 1) * inner], src);
                        }
                    }
                }
            }
            Op::Concat(parts, axis) => {
                let out = node.value.shape();
                let outer = numel(&out[..*axis]);
                let inner = numel(&out[*axis + 1..]);
                let total = out[*axis];
                let mut offset = 0;
                for &p in parts {
                    let len = nodes[p].value.shape()[*axis];
                    if let Some(buf) = buffer(grads, nodes, p) {
                        for o in 0..outer {
                            let src = &g[(o * total + offset) * inner..(o * total + offset + len) * inner];
                            add_into(&mut buf[o * len * inner..(o + 1) * len * inner], src);
                        }
                    }
                    offset += len;
                }
            }
            Op::Slice { src, axis, start } => {
                let shape = nodes[*src].value.shape();
                let outer = numel(&shape[..*axis]);
                let len = shape[*axis];
                let inner = numel(&shape[*axis + 1..]);
                let width = node.value.shape()[*axis];
                if let Some(buf) = buffer(grads, nodes, *src) {
                    for o in 0..outer {
                        let dst = &mut buf[(o * len + start) * inner..(o * len + start + width) * inner];
                        add_into(dst, &g[o * width * inner..(o + 1) * width * inner]);
                    }
                }
            }
            Op::Broadcast(a) => {
                let out = node.value.shape();
                let src = nodes[*a].value.shape();
                if let Some(buf) = buffer(grads, nodes, *a) {
                    for_each_broadcast(out, src, out, |o, i, _| buf[i] = buf[i] + g[o]);
                }
            }
            Op::Permute(a, perm) => {
                let mut inverse = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inverse[p] = i;
                }
                let gt = Tensor::new(node.value.shape().to_vec(), g.to_vec())?;
                let back = permute_tensor(&gt, &inverse)?;
                if let Some(buf) = buffer(grads, nodes, *a) {
                    add_into(buf, back.data());
                }
            }
            Op::GatherRows(a, idx) => {
                let block = numel(&nodes[*a].value.shape()[1..]);
                if let Some(buf) = buffer(grads, nodes, *a) {
                    for (r, &i) in idx.iter().enumerate() {
                        add_into(&mut buf[i * block..(i + 1) * block], &g[r * block..(r + 1) * block]);
                    }
                }
            }
            Op::GruCell { gx, step, h, u, saved } => self.gru_backward(*gx, *step, *h, *u, saved, g, grads),
        }
        Ok(())
    }

    fn matmul_backward(&self, a: usize, b: usize, g: &[S], grads: &mut Buffers<S>) {
        let nodes = &self.nodes;
        let (ta, tb) = (&nodes[a].value, &nodes[b].value);
        let (sa, sb) = (ta.shape(), tb.shape());
        // (batches, m, k, n, rhs batched)
        let (batches, m, k, n, rhs_batched) = match (sa.len(), sb.len()) {
            (2, 2) => (1, sa[0], sa[1], sb[1], false),
            (3, 2) => (1, sa[0] * sa[1], sa[2], sb[1], false),
            _ => (sa[0], sa[1], sa[2], sb[2], true),
        };
        let (ki, ni) = (k as isize, n as isize);
        if let Some(buf) = buffer(grads, nodes, a) {
            for bi in 0..batches {
                let rhs = if rhs_batched { &tb.data()[bi * k * n..] } else { tb.data() };
                // dA += G · Bᵀ
                S::gemm(m, n, k, S::one(), &g[bi * m * n..], (ni, 1), rhs, (1, ni), S::one(), &mut buf[bi * m * k..], (ki, 1));
            }
        }
        if let Some(buf) = buffer(grads, nodes, b) {
            for bi in 0..batches {
                let dst = if rhs_batched { &mut buf[bi * k * n..] } else { &mut buf[..] };
                // dB += Aᵀ · G
                S::gemm(k, m, n, S::one(), &ta.data()[bi * m * k..], (1, ki), &g[bi * m * n..], (ni, 1), S::one(), dst, (ni, 1));
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn gru_backward(
        &self,
        gx: usize,
        step: usize,
        h: usize,
        u: usize,
        saved: &super::graph::GruSaved<S>,
        g: &[S],
        grads: &mut Buffers<S>,
    ) {
        let nodes = &self.nodes;
        let hv = nodes[h].value.data();
        let uv = nodes[u].value.data();
        let nb = nodes[h].value.shape()[0];
        let hid = nodes[h].value.shape()[1];
        let h3 = 3 * hid;
        let ld = h3 as isize;
        let hi = hid as isize;
        let (z, r, n, rh) = (&saved.z, &saved.r, &saved.n, &saved.rh);

        let mut dpre = vec![S::zero(); nb * h3];
        let mut dh = vec![S::zero(); nb * hid];
        for i in 0..nb {
            for j in 0..hid {
                let q = i * hid + j;
                let dn = g[q] * z[q];
                let dz = g[q] * (n[q] - hv[q]);
                dh[q] = g[q] * (S::one() - z[q]);
                dpre[i * h3 + j] = dz * z[q] * (S::one() - z[q]);
                dpre[i * h3 + 2 * hid + j] = dn * (S::one() - n[q] * n[q]);
            }
        }
        // d(r ⊙ h) = dpre_n · U_nᵀ
        let mut drh = vec![S::zero(); nb * hid];
        S::gemm(nb, hid, hid, S::one(), &dpre[2 * hid..], (ld, 1), &uv[2 * hid..], (1, ld), S::zero(), &mut drh, (hi, 1));
        for i in 0..nb {
            for j in 0..hid {
                let q = i * hid + j;
                dpre[i * h3 + hid + j] = drh[q] * hv[q] * r[q] * (S::one() - r[q]);
                dh[q] = dh[q] + drh[q] * r[q];
            }
        }
        if nodes[h].requires_grad {
            // dh += dpre_zr · U_zrᵀ
            S::gemm(nb, 2 * hid, hid, S::one(), &dpre, (ld, 1), uv, (1, ld), S::one(), &mut dh, (hi, 1));
            if let Some(buf) = buffer(grads, nodes, h) {
                add_into(buf, &dh);
            }
        }
        if let Some(buf) = buffer(grads, nodes, u) {
            S::gemm(hid, nb, 2 * hid, S::one(), hv, (1, hi), &dpre, (ld, 1), S::one(), buf, (ld, 1));
            S::gemm(hid, nb, hid, S::one(), rh, (1, hi), &dpre[2 * hid..], (ld, 1), S::one(), &mut buf[2 * hid..], (ld, 1));
        }
        let steps = nodes[gx].value.shape()[1];
        if let Some(buf) = buffer(grads, nodes, gx) {
            for i in 0..nb {
                let dst = &mut buf[(i * steps + step) * h3..(i * steps + step + 1) * h3];
                add_into(dst, &dpre[i * h3..(i + 1) * h3]);
            }
        }
    }
}

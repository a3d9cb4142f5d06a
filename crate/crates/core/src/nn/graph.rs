//! Reverse-mode differentiation over a recorded list of tensor ops.
//!
//! A [`Graph`] borrows the parameter store immutably, records every op of
//! one forward pass, and [`Graph::backward`] pushes a seed gradient back
//! through the record into a [`Gradients`] accumulator.

use super::kernels::{col2im, gemm, im2col, ConvGeometry, Layout};
use super::{Gradients, ParamId, ParamStore, Tensor};

const NORM_EPS: f32 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul { a: Var, b: Var, trans_b: bool },
    Add(Var, Var),
    AddBias { x: Var, bias: Var },
    Mul(Var, Var),
    Scale(Var, f32),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    SigmoidPrefix { x: Var, len: usize },
    SoftmaxRows(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, mean: Vec<f32>, rstd: Vec<f32> },
    GroupNorm { x: Var, gamma: Var, beta: Var, groups: usize, mean: Vec<f32>, rstd: Vec<f32> },
    Conv2d { x: Var, w: Var, b: Var, stride: usize, pad: usize },
    ConvTranspose2d { x: Var, w: Var, b: Var, stride: usize, pad: usize },
    Reshape(Var),
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    SliceRows { x: Var, start: usize },
    MeanRows(Var),
}

#[derive(Debug)]
struct Node {
    value: Option<Tensor>,
    op: Op,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    assert_eq!(shape.len(), 2, "expected a matrix, got shape {shape:?}");
    (shape[0], shape[1])
}

fn nchw(shape: &[usize]) -> (usize, usize, usize, usize) {
    assert_eq!(shape.len(), 4, "expected NCHW, got shape {shape:?}");
    (shape[0], shape[1], shape[2], shape[3])
}

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

fn add_into(acc: &mut [f32], g: &[f32]) {
    for (a, b) in acc.iter_mut().zip(g) {
        *a += b;
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.params.get(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value: Some(value), op });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    /// `a · b` for matrices `[m, k] · [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_impl(a, b, false)
    }

    /// `a · bᵀ` for `[m, k]` and `[n, k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Var {
        let (m, k) = rows_cols(self.shape(a));
        let (br, bc) = rows_cols(self.shape(b));
        let (kb, n, lb) = if trans_b {
            (bc, br, Layout::transposed(bc))
        } else {
            (br, bc, Layout::row_major(bc))
        };
        assert_eq!(k, kb, "matmul inner dims {k} vs {kb}");
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            Layout::row_major(k),
            self.value(b).data(),
            lb,
            &mut out,
            0.0,
        );
        self.push(Tensor::new(&[m, n], out), Op::MatMul { a, b, trans_b })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "add shape mismatch");
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(va.shape(), data);
        self.push(t, Op::Add(a, b))
    }

    /// Adds `bias[n]` along the last axis of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Var {
        let (vx, vb) = (self.value(x), self.value(bias));
        let n = vb.len();
        assert_eq!(*vx.shape().last().unwrap(), n, "bias length mismatch");
        let data = vx
            .data()
            .chunks(n)
            .flat_map(|row| row.iter().zip(vb.data()).map(|(a, b)| a + b))
            .collect();
        let t = Tensor::new(vx.shape(), data);
        self.push(t, Op::AddBias { x, bias })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "mul shape mismatch");
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let t = Tensor::new(va.shape(), data);
        self.push(t, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, s: f32) -> Var {
        let vx = self.value(x);
        let t = Tensor::new(vx.shape(), vx.data().iter().map(|v| v * s).collect());
        self.push(t, Op::Scale(x, s))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f32) -> f32, op: Op) -> Var {
        let vx = self.value(x);
        let t = Tensor::new(vx.shape(), vx.data().iter().map(|&v| f(v)).collect());
        self.push(t, op)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f32::tanh, Op::Tanh(x))
    }

    /// Sigmoid on the first `len` elements, identity elsewhere.
    pub fn sigmoid_prefix(&mut self, x: Var, len: usize) -> Var {
        let vx = self.value(x);
        assert!(len <= vx.len());
        let data = vx
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| if i < len { sigmoid(v) } else { v })
            .collect();
        let t = Tensor::new(vx.shape(), data);
        self.push(t, Op::SigmoidPrefix { x, len })
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        let (_, n) = rows_cols(vx.shape());
        let mut data = Vec::with_capacity(vx.len());
        for row in vx.data().chunks(n) {
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let exps: Vec<f32> = row.iter().map(|v| (v - max).exp()).collect();
            let sum: f32 = exps.iter().sum();
            data.extend(exps.iter().map(|e| e / sum));
        }
        let t = Tensor::new(vx.shape(), data);
        self.push(t, Op::SoftmaxRows(x))
    }

    /// Normalizes each row of `[m, n]` then applies `gamma[n]`, `beta[n]`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let vx = self.value(x);
        let (m, n) = rows_cols(vx.shape());
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        assert_eq!(g.len(), n);
        let mut out = vec![0.0; m * n];
        let mut means = Vec::with_capacity(m);
        let mut rstds = Vec::with_capacity(m);
        for (r, row) in vx.data().chunks(n).enumerate() {
            let (mean, rstd) = moments(row);
            for j in 0..n {
                out[r * n + j] = (row[j] - mean) * rstd * g[j] + b[j];
            }
            means.push(mean);
            rstds.push(rstd);
        }
        let t = Tensor::new(&[m, n], out);
        self.push(
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                mean: means,
                rstd: rstds,
            },
        )
    }

    /// Group normalization over `[N, C, H, W]` with per-channel affine.
    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize) -> Var {
        let vx = self.value(x);
        let (n, c, h, w) = nchw(vx.shape());
        assert!(c % groups == 0, "channels {c} not divisible by groups {groups}");
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let per_group = c / groups * h * w;
        let plane = h * w;
        let mut out = vec![0.0; vx.len()];
        let mut means = Vec::with_capacity(n * groups);
        let mut rstds = Vec::with_capacity(n * groups);
        for (gi, chunk) in vx.data().chunks(per_group).enumerate() {
            let (mean, rstd) = moments(chunk);
            let base = gi * per_group;
            for (e, &v) in chunk.iter().enumerate() {
                let ch = (base + e) / plane % c;
                out[base + e] = (v - mean) * rstd * g[ch] + b[ch];
            }
            means.push(mean);
            rstds.push(rstd);
        }
        let t = Tensor::new(vx.shape(), out);
        self.push(
            t,
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                mean: means,
                rstd: rstds,
            },
        )
    }

    /// Square-kernel convolution of `[N, C, H, W]` with `w[O, C, k, k]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let (n, c, h, wd) = nchw(self.shape(x));
        let (o, wc, k, k2) = nchw(self.shape(w));
        assert_eq!(c, wc, "conv input channels");
        assert_eq!(k, k2);
        let geo = ConvGeometry::conv(c, h, wd, k, stride, pad);
        let (p, ckk) = (geo.out_h * geo.out_w, c * k * k);
        let mut out = vec![0.0; n * o * p];
        let mut cols = vec![0.0; ckk * p];
        let (xv, wv, bv) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
        for img in 0..n {
            im2col(&geo, &xv[img * c * h * wd..(img + 1) * c * h * wd], &mut cols);
            let dst = &mut out[img * o * p..(img + 1) * o * p];
            for (oc, row) in dst.chunks_mut(p).enumerate() {
                row.fill(bv[oc]);
            }
            gemm(o, ckk, p, wv, Layout::row_major(ckk), &cols, Layout::row_major(p), dst, 1.0);
        }
        let t = Tensor::new(&[n, o, geo.out_h, geo.out_w], out);
        self.push(t, Op::Conv2d { x, w, b, stride, pad })
    }

    /// Transposed convolution of `[N, Cin, Hin, Win]` with
    /// `w[Cin, Cout, k, k]` producing `[N, Cout, out_h, out_w]`; the output
    /// size must be one that a stride/pad convolution maps back to the input.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
        out_h: usize,
        out_w: usize,
    ) -> Var {
        let (n, cin, hin, win) = nchw(self.shape(x));
        let (wc, cout, k, _) = nchw(self.shape(w));
        assert_eq!(cin, wc, "transposed conv input channels");
        let geo = ConvGeometry::conv(cout, out_h, out_w, k, stride, pad);
        assert_eq!(
            (geo.out_h, geo.out_w),
            (hin, win),
            "output {out_h}x{out_w} is not consistent with input {hin}x{win}"
        );
        let (pin, ckk, pout) = (hin * win, cout * k * k, out_h * out_w);
        let mut out = vec![0.0; n * cout * pout];
        let mut cols = vec![0.0; ckk * pin];
        let (xv, wv, bv) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
        for img in 0..n {
            gemm(
                ckk,
                cin,
                pin,
                wv,
                Layout::transposed(ckk),
                &xv[img * cin * pin..(img + 1) * cin * pin],
                Layout::row_major(pin),
                &mut cols,
                0.0,
            );
            let dst = &mut out[img * cout * pout..(img + 1) * cout * pout];
            for (oc, plane) in dst.chunks_mut(pout).enumerate() {
                plane.fill(bv[oc]);
            }
            col2im(&geo, &cols, dst);
        }
        let t = Tensor::new(&[n, cout, out_h, out_w], out);
        self.push(t, Op::ConvTranspose2d { x, w, b, stride, pad })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let t = self.value(x).clone().reshaped(shape);
        self.push(t, Op::Reshape(x))
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let vx = self.value(x);
        let (_, n) = rows_cols(vx.shape());
        assert!(start + len <= n);
        let data: Vec<f32> = vx.data().chunks(n).flat_map(|r| r[start..start + len].iter().copied()).collect();
        let m = data.len() / len.max(1);
        self.push(Tensor::new(&[m, len], data), Op::SliceCols { x, start })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let m = rows_cols(self.shape(parts[0])).0;
        let widths: Vec<usize> = parts.iter().map(|&p| rows_cols(self.shape(p)).1).collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for r in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                assert_eq!(rows_cols(self.shape(p)).0, m, "concat row mismatch");
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        self.push(Tensor::new(&[m, total], data), Op::ConcatCols(parts.to_vec()))
    }

    /// Rows `start..start + len` of a matrix.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let vx = self.value(x);
        let (m, n) = rows_cols(vx.shape());
        assert!(start + len <= m);
        let data = vx.data()[start * n..(start + len) * n].to_vec();
        self.push(Tensor::new(&[len, n], data), Op::SliceRows { x, start })
    }

    /// Mean over rows: `[m, n] → [1, n]`.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        let (m, n) = rows_cols(vx.shape());
        let mut acc = vec![0.0f32; n];
        for row in vx.data().chunks(n) {
            add_into(&mut acc, row);
        }
        let inv = 1.0 / m as f32;
        acc.iter_mut().for_each(|a| *a *= inv);
        self.push(Tensor::new(&[1, n], acc), Op::MeanRows(x))
    }

    /// Backpropagates `seed` (shaped like `root`) and accumulates parameter
    /// gradients.
    pub fn backward(&self, root: Var, seed: &Tensor, grads: &mut Gradients) {
        assert_eq!(seed.shape(), self.shape(root), "seed shape mismatch");
        let mut node_grads: Vec<Option<Vec<f32>>> = vec![None; root.0 + 1];
        node_grads[root.0] = Some(seed.data().to_vec());

        for idx in (0..=root.0).rev() {
            let Some(g) = node_grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let mut send = |target: Var, grad: Vec<f32>| match &mut node_grads[target.0] {
                Some(acc) => add_into(acc, &grad),
                slot @ None => *slot = Some(grad),
            };
            match &node.op {
                Op::Input => {}
                Op::Param(id) => grads.accumulate(*id, &g),
                Op::MatMul { a, b, trans_b } => {
                    let (m, k) = rows_cols(self.shape(*a));
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    let n = g.len() / m;
                    let mut da = vec![0.0; m * k];
                    let db = if *trans_b {
                        // C = A·Bᵀ, B is [n, k]
                        gemm(m, n, k, &g, Layout::row_major(n), bv, Layout::row_major(k), &mut da, 0.0);
                        let mut db = vec![0.0; n * k];
                        gemm(n, m, k, &g, Layout::transposed(n), av, Layout::row_major(k), &mut db, 0.0);
                        db
                    } else {
                        // C = A·B, B is [k, n]
                        gemm(m, n, k, &g, Layout::row_major(n), bv, Layout::transposed(n), &mut da, 0.0);
                        let mut db = vec![0.0; k * n];
                        gemm(k, m, n, av, Layout::transposed(k), &g, Layout::row_major(n), &mut db, 0.0);
                        db
                    };
                    send(*a, da);
                    send(*b, db);
                }
                Op::Add(a, b) => {
                    send(*a, g.clone());
                    send(*b, g);
                }
                Op::AddBias { x, bias } => {
                    let n = self.value(*bias).len();
                    let mut db = vec![0.0; n];
                    for row in g.chunks(n) {
                        add_into(&mut db, row);
                    }
                    send(*bias, db);
                    send(*x, g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    let da = g.iter().zip(bv).map(|(g, b)| g * b).collect();
                    let db = g.iter().zip(av).map(|(g, a)| g * a).collect();
                    send(*a, da);
                    send(*b, db);
                }
                Op::Scale(x, s) => send(*x, g.iter().map(|v| v * s).collect()),
                Op::Relu(x) => {
                    let y = node.value.as_ref().unwrap().data();
                    send(*x, g.iter().zip(y).map(|(g, &y)| if y > 0.0 { *g } else { 0.0 }).collect());
                }
                Op::Sigmoid(x) => {
                    let y = node.value.as_ref().unwrap().data();
                    send(*x, g.iter().zip(y).map(|(g, &y)| g * y * (1.0 - y)).collect());
                }
                Op::Tanh(x) => {
                    let y = node.value.as_ref().unwrap().data();
                    send(*x, g.iter().zip(y).map(|(g, &y)| g * (1.0 - y * y)).collect());
                }
                Op::SigmoidPrefix { x, len } => {
                    let y = node.value.as_ref().unwrap().data();
                    let dx = g
                        .iter()
                        .zip(y)
                        .enumerate()
                        .map(|(i, (g, &y))| if i < *len { g * y * (1.0 - y) } else { *g })
                        .collect();
                    send(*x, dx);
                }
                Op::SoftmaxRows(x) => {
                    let y = node.value.as_ref().unwrap();
                    let n = y.shape()[1];
                    let mut dx = vec![0.0; g.len()];
                    for ((gr, yr), dr) in g.chunks(n).zip(y.data().chunks(n)).zip(dx.chunks_mut(n)) {
                        let dot: f32 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            dr[j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    send(*x, dx);
                }
                Op::LayerNorm { x, gamma, beta, mean, rstd } => {
                    let xv = self.value(*x).data();
                    let gv = self.value(*gamma).data();
                    let n = gv.len();
                    let mut dx = vec![0.0; xv.len()];
                    let mut dgamma = vec![0.0; n];
                    let mut dbeta = vec![0.0; n];
                    for r in 0..mean.len() {
                        let span = r * n..(r + 1) * n;
                        let channel = |e: usize| e;
                        norm_backward(
                            &xv[span.clone()],
                            &g[span.clone()],
                            mean[r],
                            rstd[r],
                            gv,
                            channel,
                            &mut dx[span],
                            &mut dgamma,
                            &mut dbeta,
                        );
                    }
                    send(*x, dx);
                    send(*gamma, dgamma);
                    send(*beta, dbeta);
                }
                Op::GroupNorm { x, gamma, beta, groups, mean, rstd } => {
                    let xv = self.value(*x);
                    let (_, c, h, w) = nchw(xv.shape());
                    let gv = self.value(*gamma).data();
                    let plane = h * w;
                    let per_group = c / groups * plane;
                    let mut dx = vec![0.0; xv.len()];
                    let mut dgamma = vec![0.0; c];
                    let mut dbeta = vec![0.0; c];
                    for gi in 0..mean.len() {
                        let base = gi * per_group;
                        let span = base..base + per_group;
                        let channel = |e: usize| (base + e) / plane % c;
                        norm_backward(
                            &xv.data()[span.clone()],
                            &g[span.clone()],
                            mean[gi],
                            rstd[gi],
                            gv,
                            channel,
                            &mut dx[span],
                            &mut dgamma,
                            &mut dbeta,
                        );
                    }
                    send(*x, dx);
                    send(*gamma, dgamma);
                    send(*beta, dbeta);
                }
                Op::Conv2d { x, w, b, stride, pad } => {
                    let (n, c, h, wd) = nchw(self.shape(*x));
                    let (o, _, k, _) = nchw(self.shape(*w));
                    let geo = ConvGeometry::conv(c, h, wd, k, *stride, *pad);
                    let (p, ckk, img_len) = (geo.out_h * geo.out_w, c * k * k, c * h * wd);
                    let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                    let mut dx = vec![0.0; xv.len()];
                    let mut dw = vec![0.0; o * ckk];
                    let mut db = vec![0.0; o];
                    let mut cols = vec![0.0; ckk * p];
                    let mut dcols = vec![0.0; ckk * p];
                    for img in 0..n {
                        let gimg = &g[img * o * p..(img + 1) * o * p];
                        for (oc, row) in gimg.chunks(p).enumerate() {
                            db[oc] += row.iter().sum::<f32>();
                        }
                        im2col(&geo, &xv[img * img_len..(img + 1) * img_len], &mut cols);
                        gemm(o, p, ckk, gimg, Layout::row_major(p), &cols, Layout::transposed(p), &mut dw, 1.0);
                        gemm(ckk, o, p, wv, Layout::transposed(ckk), gimg, Layout::row_major(p), &mut dcols, 0.0);
                        col2im(&geo, &dcols, &mut dx[img * img_len..(img + 1) * img_len]);
                    }
                    send(*x, dx);
                    send(*w, dw);
                    send(*b, db);
                }
                Op::ConvTranspose2d { x, w, b, stride, pad } => {
                    let (n, cin, hin, win) = nchw(self.shape(*x));
                    let (_, cout, k, _) = nchw(self.shape(*w));
                    let (_, _, out_h, out_w) = nchw(node.value.as_ref().unwrap().shape());
                    let geo = ConvGeometry::conv(cout, out_h, out_w, k, *stride, *pad);
                    let (pin, ckk, pout) = (hin * win, cout * k * k, out_h * out_w);
                    let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                    let mut dx = vec![0.0; xv.len()];
                    let mut dw = vec![0.0; cin * ckk];
                    let mut db = vec![0.0; cout];
                    let mut dcols = vec![0.0; ckk * pin];
                    for img in 0..n {
                        let gimg = &g[img * cout * pout..(img + 1) * cout * pout];
                        for (oc, plane) in gimg.chunks(pout).enumerate() {
                            db[oc] += plane.iter().sum::<f32>();
                        }
                        im2col(&geo, gimg, &mut dcols);
                        let ximg = &xv[img * cin * pin..(img + 1) * cin * pin];
                        gemm(
                            cin,
                            ckk,
                            pin,
                            wv,
                            Layout::row_major(ckk),
                            &dcols,
                            Layout::row_major(pin),
                            &mut dx[img * cin * pin..(img + 1) * cin * pin],
                            0.0,
                        );
                        gemm(cin, pin, ckk, ximg, Layout::row_major(pin), &dcols, Layout::transposed(pin), &mut dw, 1.0);
                    }
                    send(*x, dx);
                    send(*w, dw);
                    send(*b, db);
                }
                Op::Reshape(x) => send(*x, g),
                Op::SliceCols { x, start } => {
                    let (m, n) = rows_cols(self.shape(*x));
                    let len = g.len() / m;
                    let mut dx = vec![0.0; m * n];
                    for r in 0..m {
                        dx[r * n + start..r * n + start + len].copy_from_slice(&g[r * len..(r + 1) * len]);
                    }
                    send(*x, dx);
                }
                Op::ConcatCols(parts) => {
                    let total: usize = parts.iter().map(|&p| self.shape(p)[1]).sum();
                    let m = g.len() / total;
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.shape(p)[1];
                        let mut dp = Vec::with_capacity(m * w);
                        for r in 0..m {
                            dp.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                        }
                        send(p, dp);
                        offset += w;
                    }
                }
                Op::SliceRows { x, start } => {
                    let (m, n) = rows_cols(self.shape(*x));
                    let mut dx = vec![0.0; m * n];
                    dx[start * n..start * n + g.len()].copy_from_slice(&g);
                    send(*x, dx);
                }
                Op::MeanRows(x) => {
                    let (m, n) = rows_cols(self.shape(*x));
                    let inv = 1.0 / m as f32;
                    let mut dx = Vec::with_capacity(m * n);
                    for _ in 0..m {
                        dx.extend(g.iter().map(|v| v * inv));
                    }
                    send(*x, dx);
                }
            }
        }
    }
}

/// Mean and reciprocal standard deviation (biased variance).
fn moments(xs: &[f32]) -> (f32, f32) {
    let n = xs.len() as f32;
    let mean = xs.iter().sum::<f32>() / n;
    let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n;
    (mean, 1.0 / (var + NORM_EPS).sqrt())
}

#[allow(clippy::too_many_arguments)]
fn norm_backward(
    x: &[f32],
    g: &[f32],
    mean: f32,
    rstd: f32,
    gamma: &[f32],
    channel: impl Fn(usize) -> usize,
    dx: &mut [f32],
    dgamma: &mut [f32],
    dbeta: &mut [f32],
) {
    let m = x.len() as f32;
    let mut sum_dxhat = 0.0;
    let mut sum_dxhat_xhat = 0.0;
    for e in 0..x.len() {
        let ch = channel(e);
        let xhat = (x[e] - mean) * rstd;
        let dxhat = g[e] * gamma[ch];
        sum_dxhat += dxhat;
        sum_dxhat_xhat += dxhat * xhat;
        dgamma[ch] += g[e] * xhat;
        dbeta[ch] += g[e];
    }
    for e in 0..x.len() {
        let xhat = (x[e] - mean) * rstd;
        let dxhat = g[e] * gamma[channel(e)];
        dx[e] = rstd / m * (m * dxhat - sum_dxhat - xhat * sum_dxhat_xhat);
    }
}

//! Tape-based reverse-mode autodiff over row-major f32 tensors.
//!
//! A `Graph` is an append-only Wengert list: every op evaluates eagerly,
//! records its inputs and saved activations, and `backward` replays the
//! tape in reverse. Node ids are topological by construction.

use ndarray::ArrayView2;

use super::conv::{col2im, im2col, ConvGeom};
use super::error::{NumError, Result};

pub type NodeId = usize;

/// Handle into a `Graph`. Cheap to copy; all storage lives in the graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Tensor {
    pub id: NodeId,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Neg,
    Scale(f32),
    Shift,
    AddBiasRow,
    AddBiasChan { hw: usize },
    Matmul { m: usize, k: usize, n: usize },
    Conv2d { geom: ConvGeom, out_ch: usize },
    Deconv2d { geom: ConvGeom, in_ch: usize },
    Relu,
    Silu,
    Tanh,
    Sigmoid,
    Abs,
    SoftmaxRows { cols: usize },
    SumAll,
    MeanAll,
    Concat { widths: Vec<usize> },
    Reshape,
    StopGrad,
    Associate { beta: f32, slots: usize },
    ScaleByScalar,
    CrossEntropyAt { index: usize, cols: usize },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Neg => "neg",
            Op::Scale(_) => "scale",
            Op::Shift => "shift",
            Op::AddBiasRow => "add_bias_row",
            Op::AddBiasChan { .. } => "add_bias_chan",
            Op::Matmul { .. } => "matmul",
            Op::Conv2d { .. } => "conv2d",
            Op::Deconv2d { .. } => "deconv2d",
            Op::Relu => "relu",
            Op::Silu => "silu",
            Op::Tanh => "tanh",
            Op::Sigmoid => "sigmoid",
            Op::Abs => "abs",
            Op::SoftmaxRows { .. } => "softmax",
            Op::SumAll => "sum",
            Op::MeanAll => "mean",
            Op::Concat { .. } => "concat",
            Op::Reshape => "reshape",
            Op::StopGrad => "stop_gradient",
            Op::Associate { .. } => "associate",
            Op::ScaleByScalar => "scale_by_scalar",
            Op::CrossEntropyAt { .. } => "cross_entropy_at",
        }
    }
}

struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    shape: Vec<usize>,
    value: Vec<f32>,
    saved: Vec<f32>,
    requires_grad: bool,
    grad: Option<Vec<f32>>,
}

pub struct Graph {
    nodes: Vec<Node>,
    seed: u64,
}

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

impl Graph {
    pub fn new(seed: u64) -> Self {
        Graph {
            nodes: Vec::new(),
            seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, t: Tensor) -> &[f32] {
        &self.nodes[t.id].value
    }

    pub fn shape(&self, t: Tensor) -> &[usize] {
        &self.nodes[t.id].shape
    }

    pub fn numel(&self, t: Tensor) -> usize {
        self.nodes[t.id].value.len()
    }

    pub fn grad(&self, t: Tensor) -> Option<&[f32]> {
        self.nodes[t.id].grad.as_deref()
    }

    pub fn requires_grad(&self, t: Tensor) -> bool {
        self.nodes[t.id].requires_grad
    }

    /// Association weights saved by the `associate` op, shaped [rows, nz, slots].
    pub fn saved_assoc_weights(&self, t: Tensor) -> &[f32] {
        &self.nodes[t.id].saved
    }

    fn push(
        &mut self,
        op: Op,
        inputs: Vec<NodeId>,
        shape: Vec<usize>,
        value: Vec<f32>,
        saved: Vec<f32>,
    ) -> Result<Tensor> {
        let id = self.nodes.len();
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        if !value.iter().all(|v| v.is_finite()) {
            return Err(NumError::NonFinite {
                node: id,
                op: op.name(),
            });
        }
        let requires_grad = match op {
            Op::StopGrad => false,
            _ => inputs.iter().any(|&i| self.nodes[i].requires_grad),
        };
        self.nodes.push(Node {
            op,
            inputs,
            shape,
            value,
            saved,
            requires_grad,
            grad: None,
        });
        Ok(Tensor { id })
    }

    pub fn leaf(&mut self, data: Vec<f32>, shape: &[usize], requires_grad: bool) -> Result<Tensor> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(NumError::ShapeMismatch {
                node: self.nodes.len(),
                expected: shape.to_vec(),
                got: vec![data.len()],
            });
        }
        let t = self.push(Op::Leaf, vec![], shape.to_vec(), data, vec![])?;
        self.nodes[t.id].requires_grad = requires_grad;
        Ok(t)
    }

    pub fn constant(&mut self, data: Vec<f32>, shape: &[usize]) -> Result<Tensor> {
        self.leaf(data, shape, false)
    }

    pub fn scalar(&mut self, v: f32) -> Result<Tensor> {
        self.constant(vec![v], &[1])
    }

    fn check_same_shape(&self, a: Tensor, b: Tensor) -> Result<()> {
        if self.nodes[a.id].shape != self.nodes[b.id].shape {
            return Err(NumError::ShapeMismatch {
                node: self.nodes.len(),
                expected: self.nodes[a.id].shape.clone(),
                got: self.nodes[b.id].shape.clone(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.check_same_shape(a, b)?;
        let v: Vec<f32> = self.nodes[a.id]
            .value
            .iter()
            .zip(&self.nodes[b.id].value)
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.nodes[a.id].shape.clone();
        self.push(Op::Add, vec![a.id, b.id], shape, v, vec![])
    }

    pub fn sub(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.check_same_shape(a, b)?;
        let v: Vec<f32> = self.nodes[a.id]
            .value
            .iter()
            .zip(&self.nodes[b.id].value)
            .map(|(x, y)| x - y)
            .collect();
        let shape = self.nodes[a.id].shape.clone();
        self.push(Op::Sub, vec![a.id, b.id], shape, v, vec![])
    }

    pub fn mul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.check_same_shape(a, b)?;
        let v: Vec<f32> = self.nodes[a.id]
            .value
            .iter()
            .zip(&self.nodes[b.id].value)
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.nodes[a.id].shape.clone();
        self.push(Op::Mul, vec![a.id, b.id], shape, v, vec![])
    }

    pub fn neg(&mut self, a: Tensor) -> Result<Tensor> {
        let v: Vec<f32> = self.nodes[a.id].value.iter().map(|x| -x).collect();
        let shape = self.nodes[a.id].shape.clone();
        self.push(Op::Neg, vec![a.id], shape, v, vec![])
    }

    pub fn scale(&mut self, a: Tensor, c: f32) -> Result<Tensor> {
        let v: Vec<f32> = self.nodes[a.id].value.iter().map(|x| x * c).collect();
        let shape = self.nodes[a.id].shape.clone();
        self.push(Op::Scale(c), vec![a.id], shape, v, vec![])
    }

    pub fn shift(&mut self, a: Tensor, c: f32) -> Result<Tensor> {
        let v: Vec<f32> = self.nodes[a.id].value.iter().map(|x| x + c).collect();
        let shape = self.nodes[a.id].shape.clone();
        self.push(Op::Shift, vec![a.id], shape, v, vec![])
    }

    /// x: [n, d], bias: [d].
    pub fn add_bias_row(&mut self, x: Tensor, bias: Tensor) -> Result<Tensor> {
        let xs = self.nodes[x.id].shape.clone();
        let bs = self.nodes[bias.id].shape.clone();
        if xs.len() != 2 || bs != vec![xs[1]] {
            return Err(NumError::ShapeMismatch {
                node: self.nodes.len(),
                expected: xs,
                got: bs,
            });
        }
        let d = xs[1];
        let bv = &self.nodes[bias.id].value;
        let v: Vec<f32> = self.nodes[x.id]
            .value
            .iter()
            .enumerate()
            .map(|(i, x)| x + bv[i % d])
            .collect();
        self.push(Op::AddBiasRow, vec![x.id, bias.id], xs, v, vec![])
    }

    /// x: [n, c, h, w], bias: [c].
    pub fn add_bias_chan(&mut self, x: Tensor, bias: Tensor) -> Result<Tensor> {
        let xs = self.nodes[x.id].shape.clone();
        let bs = self.nodes[bias.id].shape.clone();
        if xs.len() != 4 || bs != vec![xs[1]] {
            return Err(NumError::ShapeMismatch {
                node: self.nodes.len(),
                expected: xs,
                got: bs,
            });
        }
        let (c, hw) = (xs[1], xs[2] * xs[3]);
        let bv = &self.nodes[bias.id].value;
        let v: Vec<f32> = self.nodes[x.id]
            .value
            .iter()
            .enumerate()
            .map(|(i, x)| x + bv[(i / hw) % c])
            .collect();
        self.push(Op::AddBiasChan { hw }, vec![x.id, bias.id], xs, v, vec![])
    }

    /// a: [m, k], b: [k, n].
    pub fn matmul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let ashape = self.nodes[a.id].shape.clone();
        let bshape = self.nodes[b.id].shape.clone();
        if ashape.len() != 2 || bshape.len() != 2 || ashape[1] != bshape[0] {
            return Err(NumError::ShapeMismatch {
                node: self.nodes.len(),
                expected: ashape,
                got: bshape,
            });
        }
        let (m, k, n) = (ashape[0], ashape[1], bshape[1]);
        let v = matmul_raw(&self.nodes[a.id].value, &self.nodes[b.id].value, m, k, n);
        self.push(Op::Matmul { m, k, n }, vec![a.id, b.id], vec![m, n], v, vec![])
    }

    /// x: [n, c, h, w], w: [co, c, k, k]. Saves the batched im2col buffer.
    pub fn conv2d(&mut self, x: Tensor, w: Tensor, stride: usize, pad: usize) -> Result<Tensor> {
        let xs = self.nodes[x.id].shape.clone();
        let ws = self.nodes[w.id].shape.clone();
        if xs.len() != 4 || ws.len() != 4 || ws[1] != xs[1] || ws[2] != ws[3] {
            return Err(NumError::ShapeMismatch {
                node: self.nodes.len(),
                expected: xs,
                got: ws,
            });
        }
        let geom = ConvGeom {
            channels: xs[1],
            height: xs[2],
            width: xs[3],
            kernel: ws[2],
            stride,
            pad,
        };
        let (batch, out_ch) = (xs[0], ws[0]);
        let (ho, wo) = (geom.out_height(), geom.out_width());
        let per = ho * wo;
        let cols = batch * per;
        let mut col = vec![0.0f32; geom.col_rows() * cols];
        let in_sz = geom.channels * geom.height * geom.width;
        for b in 0..batch {
            im2col(
                &self.nodes[x.id].value[b * in_sz..(b + 1) * in_sz],
                &geom,
                &mut col,
                b * per,
                cols,
            );
        }
        // y_all [co, batch*per] = w_mat [co, ckk] . col
        let y_all = matmul_raw(&self.nodes[w.id].value, &col, out_ch, geom.col_rows(), cols);
        let mut v = vec![0.0f32; batch * out_ch * per];
        for b in 0..batch {
            for c in 0..out_ch {
                let src = &y_all[c * cols + b * per..c * cols + (b + 1) * per];
                v[(b * out_ch + c) * per..(b * out_ch + c + 1) * per].copy_from_slice(src);
            }
        }
        self.push(
            Op::Conv2d { geom, out_ch },
            vec![x.id, w.id],
            vec![batch, out_ch, ho, wo],
            v,
            col,
        )
    }

    /// Transposed convolution. x: [n, ci, h, w], w: [ci, co, k, k];
    /// output is [n, co, (h-1)*stride - 2*pad + k, ...].
    pub fn deconv2d(&mut self, x: Tensor, w: Tensor, stride: usize, pad: usize) -> Result<Tensor> {
        let xs = self.nodes[x.id].shape.clone();
        let ws = self.nodes[w.id].shape.clone();
        if xs.len() != 4 || ws.len() != 4 || ws[0] != xs[1] || ws[2] != ws[3] {
            return Err(NumError::ShapeMismatch {
                node: self.nodes.len(),
                expected: xs,
                got: ws,
            });
        }
        let (batch, in_ch, h, w_in) = (xs[0], xs[1], xs[2], xs[3]);
        let (out_ch, k) = (ws[1], ws[2]);
        let out_h = (h - 1) * stride + k - 2 * pad;
        let out_w = (w_in - 1) * stride + k - 2 * pad;
        // geom describes the adjoint conv mapping the output back to x.
        let geom = ConvGeom {
            channels: out_ch,
            height: out_h,
            width: out_w,
            kernel: k,
            stride,
            pad,
        };
        debug_assert_eq!(geom.out_height(), h);
        debug_assert_eq!(geom.out_width(), w_in);
        let per = h * w_in;
        let in_sz = in_ch * per;
        let out_sz = out_ch * out_h * out_w;
        // col [co*k*k, per] = w_mat^T [cokk, ci] . x_mat [ci, per], per sample
        let wt = transpose_raw(&self.nodes[w.id].value, in_ch, geom.col_rows());
        let mut v = vec![0.0f32; batch * out_sz];
        for b in 0..batch {
            let col = matmul_raw(
                &wt,
                &self.nodes[x.id].value[b * in_sz..(b + 1) * in_sz],
                geom.col_rows(),
                in_ch,
                per,
            );
            col2im(&col, &geom, 0, per, &mut v[b * out_sz..(b + 1) * out_sz]);
        }
        self.push(
            Op::Deconv2d { geom, in_ch },
            vec![x.id, w.id],
            vec![batch, out_ch, out_h, out_w],
            v,
            vec![],
        )
    }

    fn unary(&mut self, a: Tensor, op: Op, f: impl Fn(f32) -> f32) -> Result<Tensor> {
        let v: Vec<f32> = self.nodes[a.id].value.iter().map(|x| f(*x)).collect();
        let shape = self.nodes[a.id].shape.clone();
        self.push(op, vec![a.id], shape, v, vec![])
    }

    pub fn relu(&mut self, a: Tensor) -> Result<Tensor> {
        self.unary(a, Op::Relu, |x| x.max(0.0))
    }

    pub fn silu(&mut self, a: Tensor) -> Result<Tensor> {
        self.unary(a, Op::Silu, |x| x * sigmoid(x))
    }

    pub fn tanh(&mut self, a: Tensor) -> Result<Tensor> {
        self.unary(a, Op::Tanh, |x| x.tanh())
    }

    pub fn sigmoid(&mut self, a: Tensor) -> Result<Tensor> {
        self.unary(a, Op::Sigmoid, sigmoid)
    }

    pub fn abs(&mut self, a: Tensor) -> Result<Tensor> {
        self.unary(a, Op::Abs, |x| x.abs())
    }

    /// Row-wise softmax over the last axis of a 2-D tensor.
    pub fn softmax_rows(&mut self, a: Tensor) -> Result<Tensor> {
        let shape = self.nodes[a.id].shape.clone();
        if shape.len() != 2 {
            return Err(NumError::ShapeMismatch {
                node: self.nodes.len(),
                expected: vec![0, 0],
                got: shape,
            });
        }
        let cols = shape[1];
        let mut v = self.nodes[a.id].value.clone();
        for row in v.chunks_mut(cols) {
            softmax_inplace(row);
        }
        self.push(Op::SoftmaxRows { cols }, vec![a.id], shape, v, vec![])
    }

    pub fn sum_all(&mut self, a: Tensor) -> Result<Tensor> {
        let s: f32 = self.nodes[a.id].value.iter().sum();
        self.push(Op::SumAll, vec![a.id], vec![1], vec![s], vec![])
    }

    pub fn mean_all(&mut self, a: Tensor) -> Result<Tensor> {
        let n = self.nodes[a.id].value.len() as f32;
        let s: f32 = self.nodes[a.id].value.iter().sum();
        self.push(Op::MeanAll, vec![a.id], vec![1], vec![s / n], vec![])
    }

    /// Concatenate 2-D tensors [n, d_i] along axis 1.
    pub fn concat_cols(&mut self, parts: &[Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(NumError::InvalidArgument("concat of zero tensors".into()));
        }
        let rows = self.nodes[parts[0].id].shape[0];
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let s = &self.nodes[p.id].shape;
            if s.len() != 2 || s[0] != rows {
                return Err(NumError::ShapeMismatch {
                    node: self.nodes.len(),
                    expected: vec![rows, 0],
                    got: s.clone(),
                });
            }
            widths.push(s[1]);
        }
        let total: usize = widths.iter().sum();
        let mut v = vec![0.0f32; rows * total];
        let mut off = 0;
        for (p, &w) in parts.iter().zip(&widths) {
            let src = &self.nodes[p.id].value;
            for r in 0..rows {
                v[r * total + off..r * total + off + w].copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            off += w;
        }
        self.push(
            Op::Concat { widths },
            parts.iter().map(|p| p.id).collect(),
            vec![rows, total],
            v,
            vec![],
        )
    }

    pub fn reshape(&mut self, a: Tensor, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.nodes[a.id].value.len() {
            return Err(NumError::ShapeMismatch {
                node: self.nodes.len(),
                expected: self.nodes[a.id].shape.clone(),
                got: shape.to_vec(),
            });
        }
        let v = self.nodes[a.id].value.clone();
        self.push(Op::Reshape, vec![a.id], shape.to_vec(), v, vec![])
    }

    /// Forward identity, backward annihilator.
    pub fn stop_gradient(&mut self, a: Tensor) -> Result<Tensor> {
        let v = self.nodes[a.id].value.clone();
        let shape = self.nodes[a.id].shape.clone();
        self.push(Op::StopGrad, vec![a.id], shape, v, vec![])
    }

    /// Pointwise codebook association. z: [rows, nz], codebook: [nz, slots].
    /// Per scalar z_j: weights = softmax(beta * -(|z_j - V_j|)), out = weights . V_j.
    /// Saves the row-stochastic weights for inspection.
    pub fn associate(&mut self, z: Tensor, codebook: Tensor, beta: f32) -> Result<Tensor> {
        let zs = self.nodes[z.id].shape.clone();
        let cs = self.nodes[codebook.id].shape.clone();
        if zs.len() != 2 || cs.len() != 2 || zs[1] != cs[0] {
            return Err(NumError::ShapeMismatch {
                node: self.nodes.len(),
                expected: zs,
                got: cs,
            });
        }
        let (rows, nz, slots) = (zs[0], zs[1], cs[1]);
        let mut weights = vec![0.0f32; rows * nz * slots];
        let mut out = vec![0.0f32; rows * nz];
        let cb = &self.nodes[codebook.id].value;
        let zv = &self.nodes[z.id].value;
        let mut logits = vec![0.0f32; slots];
        for r in 0..rows {
            for j in 0..nz {
                let zj = zv[r * nz + j];
                let vals = &cb[j * slots..(j + 1) * slots];
                for (l, v) in logits.iter_mut().zip(vals) {
                    *l = -beta * (zj - v).abs();
                }
                softmax_inplace(&mut logits);
                let mut acc = 0.0f32;
                for (w, v) in logits.iter().zip(vals) {
                    acc += w * v;
                }
                out[r * nz + j] = acc;
                weights[(r * nz + j) * slots..(r * nz + j + 1) * slots].copy_from_slice(&logits);
            }
        }
        self.push(
            Op::Associate { beta, slots },
            vec![z.id, codebook.id],
            vec![rows, nz],
            out,
            weights,
        )
    }

    /// x * s with scalar tensor s of shape [1].
    pub fn scale_by_scalar(&mut self, x: Tensor, s: Tensor) -> Result<Tensor> {
        if self.nodes[s.id].value.len() != 1 {
            return Err(NumError::ShapeMismatch {
                node: self.nodes.len(),
                expected: vec![1],
                got: self.nodes[s.id].shape.clone(),
            });
        }
        let c = self.nodes[s.id].value[0];
        let v: Vec<f32> = self.nodes[x.id].value.iter().map(|x| x * c).collect();
        let shape = self.nodes[x.id].shape.clone();
        self.push(Op::ScaleByScalar, vec![x.id, s.id], shape, v, vec![])
    }

    /// Mean over rows of -log softmax(row)[index]. logits: [n, k].
    pub fn cross_entropy_at(&mut self, logits: Tensor, index: usize) -> Result<Tensor> {
        let shape = self.nodes[logits.id].shape.clone();
        if shape.len() != 2 || index >= shape[1] {
            return Err(NumError::InvalidArgument(format!(
                "cross_entropy_at index {index} out of range for shape {shape:?}"
            )));
        }
        let cols = shape[1];
        let mut loss = 0.0f32;
        for row in self.nodes[logits.id].value.chunks(cols) {
            let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f32>().ln();
            loss += lse - row[index];
        }
        loss /= shape[0] as f32;
        self.push(
            Op::CrossEntropyAt { index, cols },
            vec![logits.id],
            vec![1],
            vec![loss],
            vec![],
        )
    }

    /// Convenience: mean((a-b)^2).
    pub fn mse(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        self.mean_all(sq)
    }

    /// Convenience: sum(w^2).
    pub fn sum_squares(&mut self, w: Tensor) -> Result<Tensor> {
        let sq = self.mul(w, w)?;
        self.sum_all(sq)
    }

    /// Straight-through reroute: forward value of `hard`, gradient of `soft`.
    pub fn straight_through(&mut self, soft: Tensor, hard: Tensor) -> Result<Tensor> {
        let detached = self.stop_gradient(soft)?;
        let hard_sg = self.stop_gradient(hard)?;
        let diff = self.sub(hard_sg, detached)?;
        self.add(soft, diff)
    }

    /// Reverse pass from a scalar loss. Gradients accumulate additively
    /// across fan-out and are stored on every `requires_grad` node.
    pub fn backward(&mut self, loss: Tensor) -> Result<()> {
        let n = self.nodes.len();
        if loss.id >= n {
            return Err(NumError::Detached { node: loss.id });
        }
        if self.nodes[loss.id].value.len() != 1 {
            return Err(NumError::NonScalarLoss {
                shape: self.nodes[loss.id].shape.clone(),
            });
        }
        if !self.nodes[loss.id].requires_grad {
            return Err(NumError::Detached { node: loss.id });
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[loss.id].grad = Some(vec![1.0]);
        for id in (0..=loss.id).rev() {
            if self.nodes[id].grad.is_none() || !self.nodes[id].requires_grad {
                continue;
            }
            self.backprop_node(id);
        }
        Ok(())
    }

    fn accum(&mut self, id: NodeId, contrib: &[f32]) {
        if !self.nodes[id].requires_grad {
            return;
        }
        let n = self.nodes[id].value.len();
        let g = self.nodes[id].grad.get_or_insert_with(|| vec![0.0; n]);
        for (a, b) in g.iter_mut().zip(contrib) {
            *a += b;
        }
    }

    fn backprop_node(&mut self, id: NodeId) {
        let dy = self.nodes[id].grad.clone().unwrap();
        let op = self.nodes[id].op.clone();
        let inputs = self.nodes[id].inputs.clone();
        match op {
            Op::Leaf | Op::StopGrad => {}
            Op::Add => {
                self.accum(inputs[0], &dy);
                self.accum(inputs[1], &dy);
            }
            Op::Sub => {
                self.accum(inputs[0], &dy);
                let neg: Vec<f32> = dy.iter().map(|v| -v).collect();
                self.accum(inputs[1], &neg);
            }
            Op::Mul => {
                let da: Vec<f32> = dy
                    .iter()
                    .zip(&self.nodes[inputs[1]].value)
                    .map(|(g, b)| g * b)
                    .collect();
                let db: Vec<f32> = dy
                    .iter()
                    .zip(&self.nodes[inputs[0]].value)
                    .map(|(g, a)| g * a)
                    .collect();
                self.accum(inputs[0], &da);
                self.accum(inputs[1], &db);
            }
            Op::Neg => {
                let dx: Vec<f32> = dy.iter().map(|v| -v).collect();
                self.accum(inputs[0], &dx);
            }
            Op::Scale(c) => {
                let dx: Vec<f32> = dy.iter().map(|v| v * c).collect();
                self.accum(inputs[0], &dx);
            }
            Op::Shift => {
                self.accum(inputs[0], &dy);
            }
            Op::AddBiasRow => {
                self.accum(inputs[0], &dy);
                let d = self.nodes[inputs[1]].value.len();
                let mut db = vec![0.0f32; d];
                for (i, g) in dy.iter().enumerate() {
                    db[i % d] += g;
                }
                self.accum(inputs[1], &db);
            }
            Op::AddBiasChan { hw } => {
                self.accum(inputs[0], &dy);
                let c = self.nodes[inputs[1]].value.len();
                let mut db = vec![0.0f32; c];
                for (i, g) in dy.iter().enumerate() {
                    db[(i / hw) % c] += g;
                }
                self.accum(inputs[1], &db);
            }
            Op::Matmul { m, k, n } => {
                // da = dy . b^T ; db = a^T . dy
                let b_t = transpose_raw(&self.nodes[inputs[1]].value, k, n);
                let da = matmul_raw(&dy, &b_t, m, n, k);
                self.accum(inputs[0], &da);
                let a_t = transpose_raw(&self.nodes[inputs[0]].value, m, k);
                let db = matmul_raw(&a_t, &dy, k, m, n);
                self.accum(inputs[1], &db);
            }
            Op::Conv2d { geom, out_ch } => {
                let batch = self.nodes[inputs[0]].shape[0];
                let per = geom.out_height() * geom.out_width();
                let cols = batch * per;
                // reorder dy [n,co,ho,wo] -> dy_mat [co, n*per]
                let mut dy_mat = vec![0.0f32; out_ch * cols];
                for b in 0..batch {
                    for c in 0..out_ch {
                        let src = &dy[(b * out_ch + c) * per..(b * out_ch + c + 1) * per];
                        dy_mat[c * cols + b * per..c * cols + (b + 1) * per].copy_from_slice(src);
                    }
                }
                let col = std::mem::take(&mut self.nodes[id].saved);
                // dw = dy_mat . col^T
                let col_t = transpose_raw(&col, geom.col_rows(), cols);
                let dw = matmul_raw(&dy_mat, &col_t, out_ch, cols, geom.col_rows());
                self.accum(inputs[1], &dw);
                // dx = col2im(w^T . dy_mat)
                if self.nodes[inputs[0]].requires_grad {
                    let w_t = transpose_raw(&self.nodes[inputs[1]].value, out_ch, geom.col_rows());
                    let dcol = matmul_raw(&w_t, &dy_mat, geom.col_rows(), out_ch, cols);
                    let in_sz = geom.channels * geom.height * geom.width;
                    let mut dx = vec![0.0f32; batch * in_sz];
                    for b in 0..batch {
                        col2im(&dcol, &geom, b * per, cols, &mut dx[b * in_sz..(b + 1) * in_sz]);
                    }
                    self.accum(inputs[0], &dx);
                }
                self.nodes[id].saved = col;
            }
            Op::Deconv2d { geom, in_ch } => {
                let batch = self.nodes[inputs[0]].shape[0];
                let per = geom.out_height() * geom.out_width(); // == input h*w
                let in_sz = in_ch * per;
                let out_sz = geom.channels * geom.height * geom.width;
                let ckk = geom.col_rows();
                let mut dw = vec![0.0f32; in_ch * ckk];
                let mut dx = vec![0.0f32; batch * in_sz];
                let need_dx = self.nodes[inputs[0]].requires_grad;
                let w_mat = &self.nodes[inputs[1]].value;
                for b in 0..batch {
                    let mut col = vec![0.0f32; ckk * per];
                    im2col(&dy[b * out_sz..(b + 1) * out_sz], &geom, &mut col, 0, per);
                    if need_dx {
                        let d = matmul_raw(w_mat, &col, in_ch, ckk, per);
                        dx[b * in_sz..(b + 1) * in_sz].copy_from_slice(&d);
                    }
                    // dw += x_mat . col^T
                    let x_mat = &self.nodes[inputs[0]].value[b * in_sz..(b + 1) * in_sz];
                    let col_t = transpose_raw(&col, ckk, per);
                    let dwb = matmul_raw(x_mat, &col_t, in_ch, per, ckk);
                    for (a, v) in dw.iter_mut().zip(&dwb) {
                        *a += v;
                    }
                }
                if need_dx {
                    self.accum(inputs[0], &dx);
                }
                self.accum(inputs[1], &dw);
            }
            Op::Relu => {
                let dx: Vec<f32> = dy
                    .iter()
                    .zip(&self.nodes[inputs[0]].value)
                    .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                    .collect();
                self.accum(inputs[0], &dx);
            }
            Op::Silu => {
                let dx: Vec<f32> = dy
                    .iter()
                    .zip(&self.nodes[inputs[0]].value)
                    .map(|(g, x)| {
                        let s = sigmoid(*x);
                        g * (s + x * s * (1.0 - s))
                    })
                    .collect();
                self.accum(inputs[0], &dx);
            }
            Op::Tanh => {
                let dx: Vec<f32> = dy
                    .iter()
                    .zip(&self.nodes[id].value)
                    .map(|(g, y)| g * (1.0 - y * y))
                    .collect();
                self.accum(inputs[0], &dx);
            }
            Op::Sigmoid => {
                let dx: Vec<f32> = dy
                    .iter()
                    .zip(&self.nodes[id].value)
                    .map(|(g, y)| g * y * (1.0 - y))
                    .collect();
                self.accum(inputs[0], &dx);
            }
            Op::Abs => {
                let dx: Vec<f32> = dy
                    .iter()
                    .zip(&self.nodes[inputs[0]].value)
                    .map(|(g, x)| g * sign(*x))
                    .collect();
                self.accum(inputs[0], &dx);
            }
            Op::SoftmaxRows { cols } => {
                let y = &self.nodes[id].value;
                let mut dx = vec![0.0f32; y.len()];
                for r in 0..y.len() / cols {
                    let yr = &y[r * cols..(r + 1) * cols];
                    let gr = &dy[r * cols..(r + 1) * cols];
                    let dot: f32 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for c in 0..cols {
                        dx[r * cols + c] = yr[c] * (gr[c] - dot);
                    }
                }
                self.accum(inputs[0], &dx);
            }
            Op::SumAll => {
                let g = dy[0];
                let n = self.nodes[inputs[0]].value.len();
                self.accum(inputs[0], &vec![g; n]);
            }
            Op::MeanAll => {
                let n = self.nodes[inputs[0]].value.len();
                let g = dy[0] / n as f32;
                self.accum(inputs[0], &vec![g; n]);
            }
            Op::Concat { widths } => {
                let total: usize = widths.iter().sum();
                let rows = self.nodes[id].shape[0];
                let mut off = 0;
                for (idx, &w) in widths.iter().enumerate() {
                    let mut dpart = vec![0.0f32; rows * w];
                    for r in 0..rows {
                        dpart[r * w..(r + 1) * w]
                            .copy_from_slice(&dy[r * total + off..r * total + off + w]);
                    }
                    self.accum(inputs[idx], &dpart);
                    off += w;
                }
            }
            Op::Reshape => {
                self.accum(inputs[0], &dy);
            }
            Op::Associate { beta, slots } => {
                let shape = self.nodes[id].shape.clone();
                let (rows, nz) = (shape[0], shape[1]);
                let weights = std::mem::take(&mut self.nodes[id].saved);
                let zv = self.nodes[inputs[0]].value.clone();
                let cb = self.nodes[inputs[1]].value.clone();
                let y = self.nodes[id].value.clone();
                let mut dz = vec![0.0f32; rows * nz];
                let mut dcb = vec![0.0f32; nz * slots];
                for r in 0..rows {
                    for j in 0..nz {
                        let g = dy[r * nz + j];
                        if g == 0.0 {
                            continue;
                        }
                        let zj = zv[r * nz + j];
                        let yj = y[r * nz + j];
                        let w = &weights[(r * nz + j) * slots..(r * nz + j + 1) * slots];
                        let vals = &cb[j * slots..(j + 1) * slots];
                        // dy/dz = beta * (y * sum_k w_k s_k - sum_k w_k v_k s_k),
                        // with s_k = sign(z - v_k).
                        let mut ws = 0.0f32;
                        let mut wvs = 0.0f32;
                        for k in 0..slots {
                            let s = sign(zj - vals[k]);
                            ws += w[k] * s;
                            wvs += w[k] * vals[k] * s;
                        }
                        dz[r * nz + j] += g * beta * (yj * ws - wvs);
                        // dy/dv_k = w_k * (1 + beta * s_k * (v_k - y))
                        for k in 0..slots {
                            let s = sign(zj - vals[k]);
                            dcb[j * slots + k] += g * w[k] * (1.0 + beta * s * (vals[k] - yj));
                        }
                    }
                }
                self.accum(inputs[0], &dz);
                self.accum(inputs[1], &dcb);
                self.nodes[id].saved = weights;
            }
            Op::ScaleByScalar => {
                let c = self.nodes[inputs[1]].value[0];
                let dx: Vec<f32> = dy.iter().map(|g| g * c).collect();
                self.accum(inputs[0], &dx);
                let ds: f32 = dy
                    .iter()
                    .zip(&self.nodes[inputs[0]].value)
                    .map(|(g, x)| g * x)
                    .sum();
                self.accum(inputs[1], &[ds]);
            }
            Op::CrossEntropyAt { index, cols } => {
                let x = &self.nodes[inputs[0]].value;
                let rows = x.len() / cols;
                let g = dy[0] / rows as f32;
                let mut dx = vec![0.0f32; x.len()];
                for r in 0..rows {
                    let row = &x[r * cols..(r + 1) * cols];
                    let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
                    let denom: f32 = row.iter().map(|v| (v - max).exp()).sum();
                    for c in 0..cols {
                        let p = (row[c] - max).exp() / denom;
                        dx[r * cols + c] = g * (p - if c == index { 1.0 } else { 0.0 });
                    }
                }
                self.accum(inputs[0], &dx);
            }
        }
    }
}

fn sign(x: f32) -> f32 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn softmax_inplace(row: &mut [f32]) {
    let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

pub(crate) fn matmul_raw(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let av = ArrayView2::from_shape((m, k), a).expect("lhs shape");
    let bv = ArrayView2::from_shape((k, n), b).expect("rhs shape");
    let c = av.dot(&bv);
    c.into_raw_vec_and_offset().0
}

pub(crate) fn transpose_raw(a: &[f32], rows: usize, cols: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

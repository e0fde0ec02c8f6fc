use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::kernels;
use super::tensor::Tensor;
use super::NumericsError;

pub type NodeId = usize;

const LAYER_NORM_EPS: f64 = 1e-5;

/// Recorded operation plus whatever the backward pass needs.
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    /// [m,k]x[k,n], [B,m,k]x[k,n] or [B,m,k]x[B,k,n].
    Matmul(NodeId, NodeId),
    /// Last-dim bias broadcast.
    BiasAdd(NodeId, NodeId),
    /// x: [B, rest..], table: [rest..], broadcast over the leading dim.
    AddTable(NodeId, NodeId),
    /// Swap the last two dims of a 2-D or 3-D tensor.
    Transpose(NodeId),
    Permute(NodeId, Vec<usize>),
    Reshape(NodeId),
    Concat(NodeId, NodeId, usize),
    Slice {
        input: NodeId,
        axis: usize,
        start: usize,
        len: usize,
    },
    /// Row lookup into a [V, D] table.
    Gather(NodeId, Vec<usize>),
    Softmax(NodeId),
    LayerNorm {
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        means: Vec<f64>,
        inv_stds: Vec<f64>,
    },
    Sum(NodeId),
    Mean(NodeId),
    MseLoss {
        pred: NodeId,
        target: NodeId,
        mask: Option<Vec<bool>>,
        selected: usize,
    },
    WeightedCe {
        logits: NodeId,
        labels: Vec<u8>,
        weights: Vec<f64>,
        probs: Vec<f64>,
    },
    KdLoss {
        student: NodeId,
        teacher: NodeId,
        student_probs: Vec<f64>,
        teacher_probs: Vec<f64>,
    },
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Gradients of the leaf parameters produced by one backward sweep.
#[derive(Debug, Default)]
pub struct Gradients {
    map: HashMap<NodeId, Vec<f64>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&[f64]> {
        self.map.get(&id).map(|v| v.as_slice())
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.map.contains_key(&id)
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }
}

/// Append-only reverse-mode tape. Nodes are recorded in topological order by
/// construction; `backward` walks them once in reverse.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id].requires_grad
    }

    pub fn leaf(&mut self, tensor: Tensor) -> NodeId {
        let requires_grad = tensor.requires_grad();
        self.push(Op::Leaf, tensor, requires_grad)
    }

    /// Convenience leaf that never receives gradients.
    pub fn constant(&mut self, tensor: Tensor) -> NodeId {
        self.push(Op::Leaf, tensor.with_requires_grad(false), false)
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        self.nodes.len() - 1
    }

    fn needs_grad(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|&id| self.nodes[id].requires_grad)
    }

    fn check_same_shape(
        &self,
        op: &'static str,
        a: NodeId,
        b: NodeId,
    ) -> Result<(), NumericsError> {
        if self.nodes[a].value.shape() != self.nodes[b].value.shape() {
            return Err(NumericsError::ShapeMismatch {
                op,
                lhs: self.nodes[a].value.shape().to_vec(),
                rhs: self.nodes[b].value.shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        self.check_same_shape("add", a, b)?;
        let data = self.nodes[a]
            .value
            .data()
            .iter()
            .zip(self.nodes[b].value.data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::new(self.nodes[a].value.shape().to_vec(), data)?;
        Ok(self.push(Op::Add(a, b), value, self.needs_grad(&[a, b])))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        self.check_same_shape("sub", a, b)?;
        let data = self.nodes[a]
            .value
            .data()
            .iter()
            .zip(self.nodes[b].value.data())
            .map(|(x, y)| x - y)
            .collect();
        let value = Tensor::new(self.nodes[a].value.shape().to_vec(), data)?;
        Ok(self.push(Op::Sub(a, b), value, self.needs_grad(&[a, b])))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        self.check_same_shape("mul", a, b)?;
        let data = self.nodes[a]
            .value
            .data()
            .iter()
            .zip(self.nodes[b].value.data())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::new(self.nodes[a].value.shape().to_vec(), data)?;
        Ok(self.push(Op::Mul(a, b), value, self.needs_grad(&[a, b])))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId, NumericsError> {
        let data = self.nodes[a].value.data().iter().map(|x| x * factor).collect();
        let value = Tensor::new(self.nodes[a].value.shape().to_vec(), data)?;
        Ok(self.push(Op::Scale(a, factor), value, self.needs_grad(&[a])))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId, NumericsError> {
        let data = self.nodes[a].value.data().iter().map(|x| x.max(0.0)).collect();
        let value = Tensor::new(self.nodes[a].value.shape().to_vec(), data)?;
        Ok(self.push(Op::Relu(a), value, self.needs_grad(&[a])))
    }

    /// Matrix product: [m,k]x[k,n], [B,m,k]x[k,n] or [B,m,k]x[B,k,n].
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let (av, bv) = (&self.nodes[a].value, &self.nodes[b].value);
        let mismatch = || NumericsError::ShapeMismatch {
            op: "matmul",
            lhs: av.shape().to_vec(),
            rhs: bv.shape().to_vec(),
        };
        let value = match (av.ndim(), bv.ndim()) {
            (2, 2) => {
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let (k2, n) = (bv.shape()[0], bv.shape()[1]);
                if k != k2 {
                    return Err(mismatch());
                }
                Tensor::new(vec![m, n], kernels::matmul(av.data(), bv.data(), m, k, n))?
            }
            (3, 2) => {
                let (bt, m, k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
                let (k2, n) = (bv.shape()[0], bv.shape()[1]);
                if k != k2 {
                    return Err(mismatch());
                }
                let mut out = vec![0.0; bt * m * n];
                for i in 0..bt {
                    kernels::matmul_accum(
                        &mut out[i * m * n..(i + 1) * m * n],
                        &av.data()[i * m * k..(i + 1) * m * k],
                        bv.data(),
                        m,
                        k,
                        n,
                    );
                }
                Tensor::new(vec![bt, m, n], out)?
            }
            (3, 3) => {
                let (bt, m, k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
                let (b2, k2, n) = (bv.shape()[0], bv.shape()[1], bv.shape()[2]);
                if bt != b2 || k != k2 {
                    return Err(mismatch());
                }
                let mut out = vec![0.0; bt * m * n];
                for i in 0..bt {
                    kernels::matmul_accum(
                        &mut out[i * m * n..(i + 1) * m * n],
                        &av.data()[i * m * k..(i + 1) * m * k],
                        &bv.data()[i * k * n..(i + 1) * k * n],
                        m,
                        k,
                        n,
                    );
                }
                Tensor::new(vec![bt, m, n], out)?
            }
            _ => return Err(mismatch()),
        };
        Ok(self.push(Op::Matmul(a, b), value, self.needs_grad(&[a, b])))
    }

    /// Add a 1-D bias over the last dimension.
    pub fn bias_add(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId, NumericsError> {
        let (xv, bv) = (&self.nodes[x].value, &self.nodes[bias].value);
        let n = *xv.shape().last().unwrap_or(&0);
        if bv.ndim() != 1 || bv.shape()[0] != n {
            return Err(NumericsError::ShapeMismatch {
                op: "bias_add",
                lhs: xv.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(n) {
            for (v, b) in row.iter_mut().zip(bv.data()) {
                *v += b;
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.push(Op::BiasAdd(x, bias), value, self.needs_grad(&[x, bias])))
    }

    /// Add a table of shape `x.shape[1..]`, broadcast over the leading dim.
    pub fn add_table(&mut self, x: NodeId, table: NodeId) -> Result<NodeId, NumericsError> {
        let (xv, tv) = (&self.nodes[x].value, &self.nodes[table].value);
        if xv.ndim() < 2 || xv.shape()[1..] != *tv.shape() {
            return Err(NumericsError::ShapeMismatch {
                op: "add_table",
                lhs: xv.shape().to_vec(),
                rhs: tv.shape().to_vec(),
            });
        }
        let block = tv.len();
        let mut data = xv.data().to_vec();
        for chunk in data.chunks_mut(block) {
            for (v, t) in chunk.iter_mut().zip(tv.data()) {
                *v += t;
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.push(Op::AddTable(x, table), value, self.needs_grad(&[x, table])))
    }

    /// Swap the last two dims of a 2-D or 3-D tensor.
    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId, NumericsError> {
        let av = &self.nodes[a].value;
        let value = transpose_last_two(av)?;
        Ok(self.push(Op::Transpose(a), value, self.needs_grad(&[a])))
    }

    pub fn permute(&mut self, a: NodeId, axes: &[usize]) -> Result<NodeId, NumericsError> {
        let av = &self.nodes[a].value;
        let value = permute_tensor(av, axes)?;
        Ok(self.push(Op::Permute(a, axes.to_vec()), value, self.needs_grad(&[a])))
    }

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId, NumericsError> {
        let value = self.nodes[a].value.reshaped(shape)?;
        Ok(self.push(Op::Reshape(a), value, self.needs_grad(&[a])))
    }

    /// Concatenate two tensors along `axis`; all other dims must agree.
    pub fn concat(&mut self, a: NodeId, b: NodeId, axis: usize) -> Result<NodeId, NumericsError> {
        let (av, bv) = (&self.nodes[a].value, &self.nodes[b].value);
        let mismatch = || NumericsError::ShapeMismatch {
            op: "concat",
            lhs: av.shape().to_vec(),
            rhs: bv.shape().to_vec(),
        };
        if av.ndim() != bv.ndim() || axis >= av.ndim() {
            return Err(mismatch());
        }
        for d in 0..av.ndim() {
            if d != axis && av.shape()[d] != bv.shape()[d] {
                return Err(mismatch());
            }
        }
        let mut shape = av.shape().to_vec();
        shape[axis] += bv.shape()[axis];
        let outer: usize = av.shape()[..axis].iter().product();
        let inner: usize = av.shape()[axis + 1..].iter().product();
        let a_block = av.shape()[axis] * inner;
        let b_block = bv.shape()[axis] * inner;
        let mut data = Vec::with_capacity(av.len() + bv.len());
        for o in 0..outer {
            data.extend_from_slice(&av.data()[o * a_block..(o + 1) * a_block]);
            data.extend_from_slice(&bv.data()[o * b_block..(o + 1) * b_block]);
        }
        let value = Tensor::new(shape, data)?;
        Ok(self.push(Op::Concat(a, b, axis), value, self.needs_grad(&[a, b])))
    }

    /// Select `len` consecutive entries along `axis` starting at `start`.
    pub fn slice(
        &mut self,
        input: NodeId,
        axis: usize,
        start: usize,
        len: usize,
    ) -> Result<NodeId, NumericsError> {
        let iv = &self.nodes[input].value;
        if axis >= iv.ndim() || start + len > iv.shape()[axis] || len == 0 {
            return Err(NumericsError::Contract {
                op: "slice",
                expected: "a nonempty in-bounds range",
                actual: iv.shape().to_vec(),
            });
        }
        let outer: usize = iv.shape()[..axis].iter().product();
        let inner: usize = iv.shape()[axis + 1..].iter().product();
        let in_block = iv.shape()[axis] * inner;
        let mut shape = iv.shape().to_vec();
        shape[axis] = len;
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * in_block + start * inner;
            data.extend_from_slice(&iv.data()[base..base + len * inner]);
        }
        let value = Tensor::new(shape, data)?;
        Ok(self.push(
            Op::Slice {
                input,
                axis,
                start,
                len,
            },
            value,
            self.needs_grad(&[input]),
        ))
    }

    /// Row lookup into a [V, D] table (embedding lookup).
    pub fn gather(&mut self, table: NodeId, indices: &[usize]) -> Result<NodeId, NumericsError> {
        let tv = &self.nodes[table].value;
        let (vocab, dim) = tv.as_matrix_dims("gather")?;
        if let Some(&bad) = indices.iter().find(|&&ix| ix >= vocab) {
            return Err(NumericsError::BadNodeId(bad));
        }
        let mut data = Vec::with_capacity(indices.len() * dim);
        for &ix in indices {
            data.extend_from_slice(&tv.data()[ix * dim..(ix + 1) * dim]);
        }
        let value = Tensor::new(vec![indices.len(), dim], data)?;
        Ok(self.push(
            Op::Gather(table, indices.to_vec()),
            value,
            self.needs_grad(&[table]),
        ))
    }

    /// Numerically stable softmax over the last dimension.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId, NumericsError> {
        let av = &self.nodes[a].value;
        if !av.all_finite() {
            return Err(NumericsError::NonFiniteInput("softmax"));
        }
        let cols = *av.shape().last().ok_or(NumericsError::Contract {
            op: "softmax",
            expected: "a tensor with at least one dimension",
            actual: vec![],
        })?;
        let mut data = av.data().to_vec();
        for row in data.chunks_mut(cols) {
            kernels::softmax_row(row);
        }
        let value = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(Op::Softmax(a), value, self.needs_grad(&[a])))
    }

    /// Layer normalization over the last dimension with affine parameters.
    pub fn layer_norm(
        &mut self,
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
    ) -> Result<NodeId, NumericsError> {
        let (xv, gv, bv) = (
            &self.nodes[input].value,
            &self.nodes[gamma].value,
            &self.nodes[beta].value,
        );
        let cols = *xv.shape().last().unwrap_or(&0);
        if gv.shape() != [cols] || bv.shape() != [cols] || cols == 0 {
            return Err(NumericsError::ShapeMismatch {
                op: "layer_norm",
                lhs: xv.shape().to_vec(),
                rhs: gv.shape().to_vec(),
            });
        }
        let (out, means, inv_stds) =
            kernels::layernorm_forward(xv.data(), gv.data(), bv.data(), cols, LAYER_NORM_EPS);
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        Ok(self.push(
            Op::LayerNorm {
                input,
                gamma,
                beta,
                means,
                inv_stds,
            },
            value,
            self.needs_grad(&[input, gamma, beta]),
        ))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId, NumericsError> {
        let total: f64 = self.nodes[a].value.data().iter().sum();
        Ok(self.push(Op::Sum(a), Tensor::scalar(total), self.needs_grad(&[a])))
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId, NumericsError> {
        let n = self.nodes[a].value.len();
        if n == 0 {
            return Err(NumericsError::Contract {
                op: "mean",
                expected: "a nonempty tensor",
                actual: vec![0],
            });
        }
        let total: f64 = self.nodes[a].value.data().iter().sum();
        Ok(self.push(
            Op::Mean(a),
            Tensor::scalar(total / n as f64),
            self.needs_grad(&[a]),
        ))
    }

    /// Mean squared error over all cells, or over `mask`-selected cells only.
    pub fn mse_loss(
        &mut self,
        pred: NodeId,
        target: NodeId,
        mask: Option<&[bool]>,
    ) -> Result<NodeId, NumericsError> {
        self.check_same_shape("mse_loss", pred, target)?;
        let pv = &self.nodes[pred].value;
        if let Some(m) = mask {
            if m.len() != pv.len() {
                return Err(NumericsError::ShapeMismatch {
                    op: "mse_loss",
                    lhs: pv.shape().to_vec(),
                    rhs: vec![m.len()],
                });
            }
        }
        let loss = kernels::masked_mse(pv.data(), self.nodes[target].value.data(), mask)
            .ok_or(NumericsError::DegenerateMask)?;
        let selected = match mask {
            None => pv.len(),
            Some(m) => m.iter().filter(|&&b| b).count(),
        };
        let requires = self.needs_grad(&[pred, target]);
        Ok(self.push(
            Op::MseLoss {
                pred,
                target,
                mask: mask.map(|m| m.to_vec()),
                selected,
            },
            Tensor::scalar(loss),
            requires,
        ))
    }

    /// Mean over the batch of `w[y_i] * (-log softmax(z_i)[y_i])`.
    pub fn weighted_ce(
        &mut self,
        logits: NodeId,
        labels: &[u8],
        class_weights: &[f64],
    ) -> Result<NodeId, NumericsError> {
        let lv = &self.nodes[logits].value;
        let (batch, classes) = lv.as_matrix_dims("weighted_ce")?;
        if labels.len() != batch || class_weights.len() != classes {
            return Err(NumericsError::ShapeMismatch {
                op: "weighted_ce",
                lhs: lv.shape().to_vec(),
                rhs: vec![labels.len(), class_weights.len()],
            });
        }
        for &w in class_weights {
            if !(w > 0.0) {
                return Err(NumericsError::BadClassWeight(w));
            }
        }
        let mut probs = lv.data().to_vec();
        let mut total = 0.0;
        for (i, row) in lv.data().chunks(classes).enumerate() {
            let y = labels[i] as usize;
            if y >= classes {
                return Err(NumericsError::BadLabel(labels[i], classes - 1));
            }
            total += class_weights[y] * -kernels::log_softmax_at(row, y);
            kernels::softmax_row(&mut probs[i * classes..(i + 1) * classes]);
        }
        let requires = self.needs_grad(&[logits]);
        Ok(self.push(
            Op::WeightedCe {
                logits,
                labels: labels.to_vec(),
                weights: class_weights.to_vec(),
                probs,
            },
            Tensor::scalar(total / batch as f64),
            requires,
        ))
    }

    /// Mean over the batch of the squared Euclidean distance between the two
    /// softmax distributions.
    pub fn kd_loss(&mut self, student: NodeId, teacher: NodeId) -> Result<NodeId, NumericsError> {
        self.check_same_shape("kd_loss", student, teacher)?;
        let sv = &self.nodes[student].value;
        let (batch, classes) = sv.as_matrix_dims("kd_loss")?;
        let mut student_probs = sv.data().to_vec();
        let mut teacher_probs = self.nodes[teacher].value.data().to_vec();
        for i in 0..batch {
            kernels::softmax_row(&mut student_probs[i * classes..(i + 1) * classes]);
            kernels::softmax_row(&mut teacher_probs[i * classes..(i + 1) * classes]);
        }
        let mut total = 0.0;
        for (p, q) in student_probs.iter().zip(&teacher_probs) {
            let d = p - q;
            total += d * d;
        }
        let requires = self.needs_grad(&[student, teacher]);
        Ok(self.push(
            Op::KdLoss {
                student,
                teacher,
                student_probs,
                teacher_probs,
            },
            Tensor::scalar(total / batch as f64),
            requires,
        ))
    }

    /// Inverted dropout: identity in eval mode, otherwise multiply by a
    /// Bernoulli keep-mask scaled by 1/(1-p).
    pub fn dropout(
        &mut self,
        x: NodeId,
        p: f64,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<NodeId, NumericsError> {
        if !(0.0..1.0).contains(&p) {
            return Err(NumericsError::BadHyperparam {
                name: "dropout",
                value: p,
            });
        }
        if !train || p == 0.0 {
            return Ok(x);
        }
        let keep_scale = 1.0 / (1.0 - p);
        let xv = &self.nodes[x].value;
        let mask_data: Vec<f64> = (0..xv.len())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep_scale })
            .collect();
        let mask = self.constant(Tensor::new(xv.shape().to_vec(), mask_data)?);
        self.mul(x, mask)
    }

    /// Reverse sweep from a scalar root. Returns the gradient of the root
    /// with respect to every leaf that requires gradients.
    pub fn backward(&self, root: NodeId) -> Result<Gradients, NumericsError> {
        let root_node = self.nodes.get(root).ok_or(NumericsError::BadNodeId(root))?;
        if !root_node.value.is_scalar() {
            return Err(NumericsError::Contract {
                op: "backward",
                expected: "a scalar root",
                actual: root_node.value.shape().to_vec(),
            });
        }
        let mut result = Gradients::default();
        if !root_node.requires_grad {
            log::warn!("backward on a detached root: no gradients to compute");
            return Ok(result);
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(root + 1);
        grads.resize_with(root + 1, || None);
        grads[root] = Some(vec![1.0]);

        for id in (0..=root).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads)?;
            if matches!(self.nodes[id].op, Op::Leaf) {
                result.map.insert(id, g);
            }
        }
        Ok(result)
    }

    /// Add `contribution` into the gradient buffer of `id` (skipped entirely
    /// for nodes that do not require gradients, so those buffers are never
    /// allocated).
    fn accum(
        &self,
        grads: &mut [Option<Vec<f64>>],
        id: NodeId,
        write: impl FnOnce(&mut [f64]),
    ) {
        if !self.nodes[id].requires_grad {
            return;
        }
        let buf = grads[id].get_or_insert_with(|| vec![0.0; self.nodes[id].value.len()]);
        write(buf);
    }

    fn propagate(
        &self,
        id: NodeId,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) -> Result<(), NumericsError> {
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accum(grads, *a, |buf| add_into(buf, g, 1.0));
                self.accum(grads, *b, |buf| add_into(buf, g, 1.0));
            }
            Op::Sub(a, b) => {
                self.accum(grads, *a, |buf| add_into(buf, g, 1.0));
                self.accum(grads, *b, |buf| add_into(buf, g, -1.0));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.nodes[*a].value.data(), self.nodes[*b].value.data());
                self.accum(grads, *a, |buf| {
                    for i in 0..buf.len() {
                        buf[i] += g[i] * bv[i];
                    }
                });
                self.accum(grads, *b, |buf| {
                    for i in 0..buf.len() {
                        buf[i] += g[i] * av[i];
                    }
                });
            }
            Op::Scale(a, factor) => {
                let f = *factor;
                self.accum(grads, *a, |buf| add_into(buf, g, f));
            }
            Op::Relu(a) => {
                let av = self.nodes[*a].value.data();
                self.accum(grads, *a, |buf| {
                    for i in 0..buf.len() {
                        if av[i] > 0.0 {
                            buf[i] += g[i];
                        }
                    }
                });
            }
            Op::Matmul(a, b) => self.backward_matmul(*a, *b, g, grads),
            Op::BiasAdd(x, bias) => {
                let n = self.nodes[*bias].value.len();
                self.accum(grads, *x, |buf| add_into(buf, g, 1.0));
                self.accum(grads, *bias, |buf| {
                    for row in g.chunks(n) {
                        for (b, v) in buf.iter_mut().zip(row) {
                            *b += v;
                        }
                    }
                });
            }
            Op::AddTable(x, table) => {
                let block = self.nodes[*table].value.len();
                self.accum(grads, *x, |buf| add_into(buf, g, 1.0));
                self.accum(grads, *table, |buf| {
                    for chunk in g.chunks(block) {
                        for (b, v) in buf.iter_mut().zip(chunk) {
                            *b += v;
                        }
                    }
                });
            }
            Op::Transpose(a) => {
                let out_shape = self.nodes[id].value.shape().to_vec();
                let g_tensor = Tensor::new(out_shape, g.to_vec())?;
                let gt = transpose_last_two(&g_tensor)?;
                self.accum(grads, *a, |buf| add_into(buf, gt.data(), 1.0));
            }
            Op::Permute(a, axes) => {
                let mut inverse = vec![0usize; axes.len()];
                for (i, &ax) in axes.iter().enumerate() {
                    inverse[ax] = i;
                }
                let g_tensor = Tensor::new(self.nodes[id].value.shape().to_vec(), g.to_vec())?;
                let gp = permute_tensor(&g_tensor, &inverse)?;
                self.accum(grads, *a, |buf| add_into(buf, gp.data(), 1.0));
            }
            Op::Reshape(a) => {
                self.accum(grads, *a, |buf| add_into(buf, g, 1.0));
            }
            Op::Concat(a, b, axis) => {
                let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                let outer: usize = av.shape()[..*axis].iter().product();
                let inner: usize = av.shape()[*axis + 1..].iter().product();
                let a_block = av.shape()[*axis] * inner;
                let b_block = bv.shape()[*axis] * inner;
                let g_block = a_block + b_block;
                self.accum(grads, *a, |buf| {
                    for o in 0..outer {
                        let src = &g[o * g_block..o * g_block + a_block];
                        add_into(&mut buf[o * a_block..(o + 1) * a_block], src, 1.0);
                    }
                });
                self.accum(grads, *b, |buf| {
                    for o in 0..outer {
                        let src = &g[o * g_block + a_block..(o + 1) * g_block];
                        add_into(&mut buf[o * b_block..(o + 1) * b_block], src, 1.0);
                    }
                });
            }
            Op::Slice {
                input,
                axis,
                start,
                len,
            } => {
                let iv = &self.nodes[*input].value;
                let outer: usize = iv.shape()[..*axis].iter().product();
                let inner: usize = iv.shape()[*axis + 1..].iter().product();
                let in_block = iv.shape()[*axis] * inner;
                let out_block = len * inner;
                self.accum(grads, *input, |buf| {
                    for o in 0..outer {
                        let dst = o * in_block + start * inner;
                        add_into(
                            &mut buf[dst..dst + out_block],
                            &g[o * out_block..(o + 1) * out_block],
                            1.0,
                        );
                    }
                });
            }
            Op::Gather(table, indices) => {
                let dim = self.nodes[*table].value.shape()[1];
                self.accum(grads, *table, |buf| {
                    for (row, &ix) in indices.iter().enumerate() {
                        add_into(
                            &mut buf[ix * dim..(ix + 1) * dim],
                            &g[row * dim..(row + 1) * dim],
                            1.0,
                        );
                    }
                });
            }
            Op::Softmax(a) => {
                let out = self.nodes[id].value.data();
                let cols = *self.nodes[id].value.shape().last().unwrap();
                self.accum(grads, *a, |buf| {
                    for r in 0..out.len() / cols {
                        let p = &out[r * cols..(r + 1) * cols];
                        let gr = &g[r * cols..(r + 1) * cols];
                        let dot: f64 = p.iter().zip(gr).map(|(pi, gi)| pi * gi).sum();
                        let dst = &mut buf[r * cols..(r + 1) * cols];
                        for j in 0..cols {
                            dst[j] += p[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::LayerNorm {
                input,
                gamma,
                beta,
                means,
                inv_stds,
            } => {
                let xv = self.nodes[*input].value.data();
                let gv = self.nodes[*gamma].value.data();
                let cols = gv.len();
                let rows = xv.len() / cols;
                self.accum(grads, *beta, |buf| {
                    for row in g.chunks(cols) {
                        for (b, v) in buf.iter_mut().zip(row) {
                            *b += v;
                        }
                    }
                });
                self.accum(grads, *gamma, |buf| {
                    for r in 0..rows {
                        for j in 0..cols {
                            let xhat = (xv[r * cols + j] - means[r]) * inv_stds[r];
                            buf[j] += g[r * cols + j] * xhat;
                        }
                    }
                });
                self.accum(grads, *input, |buf| {
                    for r in 0..rows {
                        let gr = &g[r * cols..(r + 1) * cols];
                        let xr = &xv[r * cols..(r + 1) * cols];
                        let mut mean_dxhat = 0.0;
                        let mut mean_dxhat_xhat = 0.0;
                        for j in 0..cols {
                            let xhat = (xr[j] - means[r]) * inv_stds[r];
                            let dxhat = gr[j] * gv[j];
                            mean_dxhat += dxhat;
                            mean_dxhat_xhat += dxhat * xhat;
                        }
                        mean_dxhat /= cols as f64;
                        mean_dxhat_xhat /= cols as f64;
                        let dst = &mut buf[r * cols..(r + 1) * cols];
                        for j in 0..cols {
                            let xhat = (xr[j] - means[r]) * inv_stds[r];
                            let dxhat = gr[j] * gv[j];
                            dst[j] += inv_stds[r] * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
                        }
                    }
                });
            }
            Op::Sum(a) => {
                let s = g[0];
                self.accum(grads, *a, |buf| {
                    for b in buf.iter_mut() {
                        *b += s;
                    }
                });
            }
            Op::Mean(a) => {
                let s = g[0] / self.nodes[*a].value.len() as f64;
                self.accum(grads, *a, |buf| {
                    for b in buf.iter_mut() {
                        *b += s;
                    }
                });
            }
            Op::MseLoss {
                pred,
                target,
                mask,
                selected,
            } => {
                let pv = self.nodes[*pred].value.data();
                let tv = self.nodes[*target].value.data();
                let scale = 2.0 * g[0] / *selected as f64;
                let selected_at = |i: usize| mask.as_ref().map_or(true, |m| m[i]);
                self.accum(grads, *pred, |buf| {
                    for i in 0..buf.len() {
                        if selected_at(i) {
                            buf[i] += scale * (pv[i] - tv[i]);
                        }
                    }
                });
                self.accum(grads, *target, |buf| {
                    for i in 0..buf.len() {
                        if selected_at(i) {
                            buf[i] -= scale * (pv[i] - tv[i]);
                        }
                    }
                });
            }
            Op::WeightedCe {
                logits,
                labels,
                weights,
                probs,
            } => {
                let classes = weights.len();
                let batch = labels.len();
                let scale = g[0] / batch as f64;
                self.accum(grads, *logits, |buf| {
                    for (i, &y) in labels.iter().enumerate() {
                        let w = weights[y as usize] * scale;
                        let p = &probs[i * classes..(i + 1) * classes];
                        let dst = &mut buf[i * classes..(i + 1) * classes];
                        for j in 0..classes {
                            let indicator = if j == y as usize { 1.0 } else { 0.0 };
                            dst[j] += w * (p[j] - indicator);
                        }
                    }
                });
            }
            Op::KdLoss {
                student,
                teacher,
                student_probs,
                teacher_probs,
            } => {
                let classes = self.nodes[*student].value.shape()[1];
                let batch = self.nodes[*student].value.shape()[0];
                let scale = 2.0 * g[0] / batch as f64;
                // d/dp of the squared distance, then the softmax VJP.
                let through_softmax = |buf: &mut [f64], probs: &[f64], sign: f64| {
                    for r in 0..batch {
                        let p = &probs[r * classes..(r + 1) * classes];
                        let q_p = &student_probs[r * classes..(r + 1) * classes];
                        let q_t = &teacher_probs[r * classes..(r + 1) * classes];
                        let d: Vec<f64> = (0..classes)
                            .map(|j| sign * scale * (q_p[j] - q_t[j]))
                            .collect();
                        let dot: f64 = p.iter().zip(&d).map(|(pi, di)| pi * di).sum();
                        let dst = &mut buf[r * classes..(r + 1) * classes];
                        for j in 0..classes {
                            dst[j] += p[j] * (d[j] - dot);
                        }
                    }
                };
                self.accum(grads, *student, |buf| {
                    through_softmax(buf, student_probs, 1.0)
                });
                self.accum(grads, *teacher, |buf| {
                    through_softmax(buf, teacher_probs, -1.0)
                });
            }
        }
        Ok(())
    }

    fn backward_matmul(&self, a: NodeId, b: NodeId, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let (av, bv) = (&self.nodes[a].value, &self.nodes[b].value);
        match (av.ndim(), bv.ndim()) {
            (2, 2) => {
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                self.accum(grads, a, |buf| {
                    kernels::matmul_a_bt_accum(buf, g, bv.data(), m, n, k);
                });
                self.accum(grads, b, |buf| {
                    kernels::matmul_at_b_accum(buf, av.data(), g, k, m, n);
                });
            }
            (3, 2) => {
                let (bt, m, k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
                let n = bv.shape()[1];
                self.accum(grads, a, |buf| {
                    for i in 0..bt {
                        kernels::matmul_a_bt_accum(
                            &mut buf[i * m * k..(i + 1) * m * k],
                            &g[i * m * n..(i + 1) * m * n],
                            bv.data(),
                            m,
                            n,
                            k,
                        );
                    }
                });
                self.accum(grads, b, |buf| {
                    for i in 0..bt {
                        kernels::matmul_at_b_accum(
                            buf,
                            &av.data()[i * m * k..(i + 1) * m * k],
                            &g[i * m * n..(i + 1) * m * n],
                            k,
                            m,
                            n,
                        );
                    }
                });
            }
            (3, 3) => {
                let (bt, m, k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
                let n = bv.shape()[2];
                self.accum(grads, a, |buf| {
                    for i in 0..bt {
                        kernels::matmul_a_bt_accum(
                            &mut buf[i * m * k..(i + 1) * m * k],
                            &g[i * m * n..(i + 1) * m * n],
                            &bv.data()[i * k * n..(i + 1) * k * n],
                            m,
                            n,
                            k,
                        );
                    }
                });
                self.accum(grads, b, |buf| {
                    for i in 0..bt {
                        kernels::matmul_at_b_accum(
                            &mut buf[i * k * n..(i + 1) * k * n],
                            &av.data()[i * m * k..(i + 1) * m * k],
                            &g[i * m * n..(i + 1) * m * n],
                            k,
                            m,
                            n,
                        );
                    }
                });
            }
            _ => unreachable!("matmul forward rejected these shapes"),
        }
    }
}

fn add_into(buf: &mut [f64], src: &[f64], factor: f64) {
    debug_assert_eq!(buf.len(), src.len());
    for (b, s) in buf.iter_mut().zip(src) {
        *b += factor * s;
    }
}

fn transpose_last_two(t: &Tensor) -> Result<Tensor, NumericsError> {
    match t.ndim() {
        2 => {
            let (m, n) = (t.shape()[0], t.shape()[1]);
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                for j in 0..n {
                    out[j * m + i] = t.data()[i * n + j];
                }
            }
            Tensor::new(vec![n, m], out)
        }
        3 => {
            let (b, m, n) = (t.shape()[0], t.shape()[1], t.shape()[2]);
            let mut out = vec![0.0; b * m * n];
            for bi in 0..b {
                let src = &t.data()[bi * m * n..(bi + 1) * m * n];
                let dst = &mut out[bi * m * n..(bi + 1) * m * n];
                for i in 0..m {
                    for j in 0..n {
                        dst[j * m + i] = src[i * n + j];
                    }
                }
            }
            Tensor::new(vec![b, n, m], out)
        }
        _ => Err(NumericsError::Contract {
            op: "transpose",
            expected: "a 2-D or 3-D tensor",
            actual: t.shape().to_vec(),
        }),
    }
}

fn permute_tensor(t: &Tensor, axes: &[usize]) -> Result<Tensor, NumericsError> {
    let ndim = t.ndim();
    let mut seen = vec![false; ndim];
    if axes.len() != ndim || axes.iter().any(|&a| a >= ndim || std::mem::replace(&mut seen[a], true)) {
        return Err(NumericsError::Contract {
            op: "permute",
            expected: "a permutation of the tensor axes",
            actual: t.shape().to_vec(),
        });
    }
    let in_shape = t.shape();
    let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
    let mut in_strides = vec![1usize; ndim];
    for d in (0..ndim.saturating_sub(1)).rev() {
        in_strides[d] = in_strides[d + 1] * in_shape[d + 1];
    }
    let mut out = vec![0.0; t.len()];
    let mut coords = vec![0usize; ndim];
    for (flat, slot) in out.iter_mut().enumerate() {
        let mut rem = flat;
        for d in (0..ndim).rev() {
            coords[d] = rem % out_shape[d];
            rem /= out_shape[d];
        }
        let mut src = 0;
        for d in 0..ndim {
            src += coords[d] * in_strides[axes[d]];
        }
        *slot = t.data()[src];
    }
    Tensor::new(out_shape, out)
}

//! Tape-based reverse-mode autodiff over [`Tensor`] values.
//!
//! Every operation appends a node to the tape, so nodes are already in
//! topological order and `backward` is a single reverse sweep. A tape is
//! built per forward pass and dropped afterwards; parameters live outside
//! the tape and enter as leaves.

use super::{Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    /// lhs_rank1 records whether the left operand was promoted from rank 1.
    MatMul { lhs: Var, rhs: Var, lhs_rank1: bool },
    Transpose(Var),
    /// broadcast: rhs is a rank-1 vector replicated over the rows of lhs.
    Add { lhs: Var, rhs: Var, broadcast: bool },
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    SoftmaxLast(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    Chunk { parent: Var, axis: usize, n_chunks: usize, index: usize },
    Mean(Var),
    /// Sum of squared differences between the two inputs.
    Sse(Var, Var),
    Reshape(Var),
}

struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Tensor>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> &Tensor {
        &self.grads[var.0]
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value)
    }

    /// Matrix product. Accepts (m,k)x(k,n) and, for convenience, a rank-1
    /// left operand treated as a single row (k)x(k,n) -> (n).
    pub fn matmul(&mut self, lhs: Var, rhs: Var) -> Result<Var, TensorError> {
        let a = self.value(lhs);
        let b = self.value(rhs);
        let mismatch = |a: &Tensor, b: &Tensor| TensorError::ShapeMismatch {
            op: "matmul",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        };
        if b.rank() != 2 {
            return Err(mismatch(a, b));
        }
        let (m, k, lhs_rank1) = match a.rank() {
            1 => (1, a.shape()[0], true),
            2 => (a.shape()[0], a.shape()[1], false),
            _ => return Err(mismatch(a, b)),
        };
        let (k2, n) = (b.shape()[0], b.shape()[1]);
        if k != k2 {
            return Err(mismatch(a, b));
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let av = a.data()[i * k + p];
                if av == 0.0 {
                    continue;
                }
                let brow = &b.data()[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += av * brow[j];
                }
            }
        }
        let value = if lhs_rank1 {
            Tensor::vector(out)
        } else {
            Tensor::new(vec![m, n], out)?
        };
        Ok(self.push(Op::MatMul { lhs, rhs, lhs_rank1 }, value))
    }

    pub fn transpose(&mut self, input: Var) -> Result<Var, TensorError> {
        let a = self.value(input);
        if a.rank() != 2 {
            return Err(TensorError::InvalidShape {
                op: "transpose",
                shape: a.shape().to_vec(),
            });
        }
        let (m, n) = (a.shape()[0], a.shape()[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = a.data()[i * n + j];
            }
        }
        let value = Tensor::new(vec![n, m], out)?;
        Ok(self.push(Op::Transpose(input), value))
    }

    /// Elementwise addition. A rank-1 right operand matching the last axis
    /// of a rank-2 left operand is replicated over rows; no other implicit
    /// broadcasting exists.
    pub fn add(&mut self, lhs: Var, rhs: Var) -> Result<Var, TensorError> {
        let a = self.value(lhs);
        let b = self.value(rhs);
        if a.shape() == b.shape() {
            let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
            let value = Tensor::new(a.shape().to_vec(), data)?;
            return Ok(self.push(Op::Add { lhs, rhs, broadcast: false }, value));
        }
        if a.rank() == 2 && b.rank() == 1 && a.shape()[1] == b.shape()[0] {
            let (m, n) = (a.shape()[0], a.shape()[1]);
            let mut data = a.data().to_vec();
            for i in 0..m {
                for j in 0..n {
                    data[i * n + j] += b.data()[j];
                }
            }
            let value = Tensor::new(vec![m, n], data)?;
            return Ok(self.push(Op::Add { lhs, rhs, broadcast: true }, value));
        }
        Err(TensorError::ShapeMismatch {
            op: "add",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        })
    }

    pub fn mul(&mut self, lhs: Var, rhs: Var) -> Result<Var, TensorError> {
        let a = self.value(lhs);
        let b = self.value(rhs);
        if a.shape() != b.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "mul",
                left: a.shape().to_vec(),
                right: b.shape().to_vec(),
            });
        }
        let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(a.shape().to_vec(), data)?;
        Ok(self.push(Op::Mul(lhs, rhs), value))
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        let a = self.value(input);
        let data = a.data().iter().map(|x| x * factor).collect();
        let value = Tensor::new(a.shape().to_vec(), data).expect("same shape");
        self.push(Op::Scale(input, factor), value)
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let a = self.value(input);
        let data = a.data().iter().map(|x| 1.0 / (1.0 + (-x).exp())).collect();
        let value = Tensor::new(a.shape().to_vec(), data).expect("same shape");
        self.push(Op::Sigmoid(input), value)
    }

    pub fn tanh(&mut self, input: Var) -> Var {
        let a = self.value(input);
        let data = a.data().iter().map(|x| x.tanh()).collect();
        let value = Tensor::new(a.shape().to_vec(), data).expect("same shape");
        self.push(Op::Tanh(input), value)
    }

    /// Numerically stable softmax over the last axis.
    pub fn softmax_last(&mut self, input: Var) -> Result<Var, TensorError> {
        let a = self.value(input);
        let n = *a.shape().last().ok_or(TensorError::EmptySoftmaxAxis)?;
        if n == 0 {
            return Err(TensorError::EmptySoftmaxAxis);
        }
        let mut data = a.data().to_vec();
        for row in data.chunks_mut(n) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let value = Tensor::new(a.shape().to_vec(), data)?;
        Ok(self.push(Op::SoftmaxLast(input), value))
    }

    /// Concatenate rank-1 tensors (axis 0) or rank-2 tensors along `axis`.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var, TensorError> {
        assert!(!inputs.is_empty(), "concat of zero tensors");
        let rank = self.value(inputs[0]).rank();
        if rank == 1 {
            if axis != 0 {
                return Err(TensorError::InvalidShape {
                    op: "concat",
                    shape: vec![axis],
                });
            }
            let mut data = Vec::new();
            for &v in inputs {
                data.extend_from_slice(self.value(v).data());
            }
            let value = Tensor::vector(data);
            return Ok(self.push(Op::Concat { inputs: inputs.to_vec(), axis }, value));
        }
        if rank != 2 || axis > 1 {
            return Err(TensorError::InvalidShape {
                op: "concat",
                shape: self.value(inputs[0]).shape().to_vec(),
            });
        }
        let other = 1 - axis;
        let fixed = self.value(inputs[0]).shape()[other];
        for &v in inputs {
            let s = self.value(v).shape();
            if s.len() != 2 || s[other] != fixed {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    left: self.value(inputs[0]).shape().to_vec(),
                    right: s.to_vec(),
                });
            }
        }
        let value = if axis == 0 {
            let mut data = Vec::new();
            let mut rows = 0;
            for &v in inputs {
                rows += self.value(v).shape()[0];
                data.extend_from_slice(self.value(v).data());
            }
            Tensor::new(vec![rows, fixed], data)?
        } else {
            let total_cols: usize = inputs.iter().map(|&v| self.value(v).shape()[1]).sum();
            let mut data = Vec::with_capacity(fixed * total_cols);
            for i in 0..fixed {
                for &v in inputs {
                    let t = self.value(v);
                    let c = t.shape()[1];
                    data.extend_from_slice(&t.data()[i * c..(i + 1) * c]);
                }
            }
            Tensor::new(vec![fixed, total_cols], data)?
        };
        Ok(self.push(Op::Concat { inputs: inputs.to_vec(), axis }, value))
    }

    /// Split into `n_chunks` equal pieces along `axis`.
    pub fn split(&mut self, input: Var, axis: usize, n_chunks: usize) -> Result<Vec<Var>, TensorError> {
        let t = self.value(input).clone();
        let shape = t.shape().to_vec();
        if axis >= shape.len() || shape[axis] % n_chunks != 0 || n_chunks == 0 {
            return Err(TensorError::InvalidShape { op: "split", shape });
        }
        let chunk_extent = shape[axis] / n_chunks;
        let mut out = Vec::with_capacity(n_chunks);
        for index in 0..n_chunks {
            let value = if shape.len() == 1 {
                Tensor::vector(t.data()[index * chunk_extent..(index + 1) * chunk_extent].to_vec())
            } else if axis == 0 {
                let cols = shape[1];
                Tensor::new(
                    vec![chunk_extent, cols],
                    t.data()[index * chunk_extent * cols..(index + 1) * chunk_extent * cols].to_vec(),
                )?
            } else {
                let (rows, cols) = (shape[0], shape[1]);
                let mut data = Vec::with_capacity(rows * chunk_extent);
                for i in 0..rows {
                    let base = i * cols + index * chunk_extent;
                    data.extend_from_slice(&t.data()[base..base + chunk_extent]);
                }
                Tensor::new(vec![rows, chunk_extent], data)?
            };
            let t_ref = self.push(Op::Chunk { parent: input, axis, n_chunks, index }, value);
            out.push(t_ref);
        }
        Ok(out)
    }

    pub fn mean(&mut self, input: Var) -> Var {
        let a = self.value(input);
        let m = a.data().iter().sum::<f64>() / a.numel() as f64;
        self.push(Op::Mean(input), Tensor::scalar(m))
    }

    /// Sum of squared differences, the training-loss reduction.
    pub fn sse(&mut self, lhs: Var, rhs: Var) -> Result<Var, TensorError> {
        let a = self.value(lhs);
        let b = self.value(rhs);
        if a.shape() != b.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "sse",
                left: a.shape().to_vec(),
                right: b.shape().to_vec(),
            });
        }
        let s = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        Ok(self.push(Op::Sse(lhs, rhs), Tensor::scalar(s)))
    }

    pub fn reshape(&mut self, input: Var, shape: Vec<usize>) -> Result<Var, TensorError> {
        let a = self.value(input);
        if shape.iter().product::<usize>() != a.numel() {
            return Err(TensorError::InvalidShape { op: "reshape", shape });
        }
        let value = Tensor::new(shape, a.data().to_vec())?;
        Ok(self.push(Op::Reshape(input), value))
    }

    /// Reverse sweep from a scalar loss. Returns a gradient per node; leaves
    /// not on any path to the loss keep their zero gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        let loss_value = self.value(loss);
        if !loss_value.is_scalar() {
            return Err(TensorError::NotScalar {
                op: "backward",
                shape: loss_value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Tensor> = self
            .nodes
            .iter()
            .map(|n| Tensor::zeros(n.value.shape().to_vec()))
            .collect();
        grads[loss.0].data_mut()[0] = 1.0;

        for idx in (0..=loss.0).rev() {
            let dy = grads[idx].clone();
            if dy.data().iter().all(|&v| v == 0.0) {
                continue;
            }
            match &self.nodes[idx].op {
                Op::Leaf => {}
                Op::MatMul { lhs, rhs, lhs_rank1 } => {
                    let a = self.value(*lhs);
                    let b = self.value(*rhs);
                    let (m, k) = if *lhs_rank1 {
                        (1, a.shape()[0])
                    } else {
                        (a.shape()[0], a.shape()[1])
                    };
                    let n = b.shape()[1];
                    // dA = dY . B^T
                    {
                        let da = grads[lhs.0].data_mut();
                        for i in 0..m {
                            for p in 0..k {
                                let mut acc = 0.0;
                                for j in 0..n {
                                    acc += dy.data()[i * n + j] * b.data()[p * n + j];
                                }
                                da[i * k + p] += acc;
                            }
                        }
                    }
                    // dB = A^T . dY
                    {
                        let db = grads[rhs.0].data_mut();
                        for p in 0..k {
                            for i in 0..m {
                                let av = a.data()[i * k + p];
                                if av == 0.0 {
                                    continue;
                                }
                                for j in 0..n {
                                    db[p * n + j] += av * dy.data()[i * n + j];
                                }
                            }
                        }
                    }
                }
                Op::Transpose(input) => {
                    let (n, m) = (dy.shape()[0], dy.shape()[1]);
                    let da = grads[input.0].data_mut();
                    for i in 0..n {
                        for j in 0..m {
                            da[j * n + i] += dy.data()[i * m + j];
                        }
                    }
                }
                Op::Add { lhs, rhs, broadcast } => {
                    for (g, d) in grads[lhs.0].data_mut().iter_mut().zip(dy.data()) {
                        *g += d;
                    }
                    if *broadcast {
                        let n = self.value(*rhs).shape()[0];
                        let db = grads[rhs.0].data_mut();
                        for (j, d) in dy.data().iter().enumerate() {
                            db[j % n] += d;
                        }
                    } else {
                        for (g, d) in grads[rhs.0].data_mut().iter_mut().zip(dy.data()) {
                            *g += d;
                        }
                    }
                }
                Op::Mul(lhs, rhs) => {
                    let a = self.value(*lhs).data().to_vec();
                    let b = self.value(*rhs).data().to_vec();
                    for ((g, d), bv) in grads[lhs.0].data_mut().iter_mut().zip(dy.data()).zip(&b) {
                        *g += d * bv;
                    }
                    for ((g, d), av) in grads[rhs.0].data_mut().iter_mut().zip(dy.data()).zip(&a) {
                        *g += d * av;
                    }
                }
                Op::Scale(input, factor) => {
                    for (g, d) in grads[input.0].data_mut().iter_mut().zip(dy.data()) {
                        *g += factor * d;
                    }
                }
                Op::Sigmoid(input) => {
                    let y = self.nodes[idx].value.data().to_vec();
                    for ((g, d), yv) in grads[input.0].data_mut().iter_mut().zip(dy.data()).zip(&y) {
                        *g += d * yv * (1.0 - yv);
                    }
                }
                Op::Tanh(input) => {
                    let y = self.nodes[idx].value.data().to_vec();
                    for ((g, d), yv) in grads[input.0].data_mut().iter_mut().zip(dy.data()).zip(&y) {
                        *g += d * (1.0 - yv * yv);
                    }
                }
                Op::SoftmaxLast(input) => {
                    let y = &self.nodes[idx].value;
                    let n = *y.shape().last().unwrap();
                    let da = grads[input.0].data_mut();
                    for r in 0..y.numel() / n {
                        let yrow = &y.data()[r * n..(r + 1) * n];
                        let drow = &dy.data()[r * n..(r + 1) * n];
                        let dot: f64 = yrow.iter().zip(drow).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            da[r * n + j] += yrow[j] * (drow[j] - dot);
                        }
                    }
                }
                Op::Concat { inputs, axis } => {
                    let rank = self.value(inputs[0]).rank();
                    if rank == 1 || *axis == 0 {
                        let mut offset = 0;
                        for &v in inputs {
                            let len = self.value(v).numel();
                            for (g, d) in grads[v.0]
                                .data_mut()
                                .iter_mut()
                                .zip(&dy.data()[offset..offset + len])
                            {
                                *g += d;
                            }
                            offset += len;
                        }
                    } else {
                        let rows = self.value(inputs[0]).shape()[0];
                        let total_cols = dy.shape()[1];
                        let mut col_offset = 0;
                        for &v in inputs {
                            let c = self.value(v).shape()[1];
                            let dv = grads[v.0].data_mut();
                            for i in 0..rows {
                                for j in 0..c {
                                    dv[i * c + j] += dy.data()[i * total_cols + col_offset + j];
                                }
                            }
                            col_offset += c;
                        }
                    }
                }
                Op::Chunk { parent, axis, n_chunks, index } => {
                    let pshape = self.value(*parent).shape().to_vec();
                    let extent = pshape[*axis] / n_chunks;
                    let dp = grads[parent.0].data_mut();
                    if pshape.len() == 1 || *axis == 0 {
                        let row_len = if pshape.len() == 1 { 1 } else { pshape[1] };
                        let offset = index * extent * row_len;
                        for (g, d) in dp[offset..offset + extent * row_len].iter_mut().zip(dy.data()) {
                            *g += d;
                        }
                    } else {
                        let cols = pshape[1];
                        for i in 0..pshape[0] {
                            for j in 0..extent {
                                dp[i * cols + index * extent + j] += dy.data()[i * extent + j];
                            }
                        }
                    }
                }
                Op::Mean(input) => {
                    let n = self.value(*input).numel() as f64;
                    let d = dy.data()[0] / n;
                    for g in grads[input.0].data_mut() {
                        *g += d;
                    }
                }
                Op::Sse(lhs, rhs) => {
                    let a = self.value(*lhs).data().to_vec();
                    let b = self.value(*rhs).data().to_vec();
                    let d = dy.data()[0];
                    for ((g, av), bv) in grads[lhs.0].data_mut().iter_mut().zip(&a).zip(&b) {
                        *g += 2.0 * d * (av - bv);
                    }
                    for ((g, av), bv) in grads[rhs.0].data_mut().iter_mut().zip(&a).zip(&b) {
                        *g -= 2.0 * d * (av - bv);
                    }
                }
                Op::Reshape(input) => {
                    for (g, d) in grads[input.0].data_mut().iter_mut().zip(dy.data()) {
                        *g += d;
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng;

    /// Compare every input gradient against central finite differences.
    fn check_grads<F>(inputs: &[Tensor], build: F)
    where
        F: Fn(&mut Tape, &[Var]) -> Var,
    {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().cloned().map(|t| tape.leaf(t)).collect();
        let loss = build(&mut tape, &vars);
        assert!(tape.value(loss).is_scalar(), "test losses must be scalar");
        let grads = tape.backward(loss).unwrap();

        let step = 1e-5;
        for (i, input) in inputs.iter().enumerate() {
            for j in 0..input.numel() {
                let eval = |delta: f64| {
                    let mut tape = Tape::new();
                    let vars: Vec<Var> = inputs
                        .iter()
                        .enumerate()
                        .map(|(k, t)| {
                            let mut t = t.clone();
                            if k == i {
                                t.data_mut()[j] += delta;
                            }
                            tape.leaf(t)
                        })
                        .collect();
                    let loss = build(&mut tape, &vars);
                    tape.value(loss).item()
                };
                let fd = (eval(step) - eval(-step)) / (2.0 * step);
                let an = grads.get(vars[i]).data()[j];
                let denom = fd.abs().max(an.abs()).max(1e-6);
                assert!(
                    ((fd - an) / denom).abs() < 1e-4,
                    "input {i} element {j}: finite-difference {fd} vs reverse-mode {an}"
                );
            }
        }
    }

    fn random_tensor(shape: Vec<usize>, rng: &mut seed::ChaCha12Rng) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        Tensor::new(shape, data).unwrap()
    }

    fn rng() -> seed::ChaCha12Rng {
        seed::stream_rng(99, "tape-test")
    }

    #[test]
    fn matmul_gradients() {
        let mut r = rng();
        let inputs = [random_tensor(vec![3, 4], &mut r), random_tensor(vec![4, 2], &mut r)];
        check_grads(&inputs, |t, v| {
            let y = t.matmul(v[0], v[1]).unwrap();
            let z = t.constant(Tensor::zeros(vec![3, 2]));
            t.sse(y, z).unwrap()
        });
    }

    #[test]
    fn matmul_rank1_lhs_gradients() {
        let mut r = rng();
        let inputs = [random_tensor(vec![4], &mut r), random_tensor(vec![4, 3], &mut r)];
        check_grads(&inputs, |t, v| {
            let y = t.matmul(v[0], v[1]).unwrap();
            let z = t.constant(Tensor::zeros(vec![3]));
            t.sse(y, z).unwrap()
        });
    }

    #[test]
    fn transpose_gradients() {
        let mut r = rng();
        let inputs = [random_tensor(vec![2, 3], &mut r), random_tensor(vec![2, 3], &mut r)];
        check_grads(&inputs, |t, v| {
            let at = t.transpose(v[0]).unwrap();
            let bt = t.transpose(v[1]).unwrap();
            let y = t.matmul(at, v[1]).unwrap();
            let z = t.matmul(bt, v[0]).unwrap();
            t.sse(y, z).unwrap()
        });
    }

    #[test]
    fn add_and_broadcast_add_gradients() {
        let mut r = rng();
        let inputs = [
            random_tensor(vec![3, 4], &mut r),
            random_tensor(vec![4], &mut r),
            random_tensor(vec![3, 4], &mut r),
        ];
        check_grads(&inputs, |t, v| {
            let y = t.add(v[0], v[1]).unwrap();
            let y = t.add(y, v[2]).unwrap();
            let z = t.constant(Tensor::zeros(vec![3, 4]));
            t.sse(y, z).unwrap()
        });
    }

    #[test]
    fn elementwise_op_gradients() {
        let mut r = rng();
        let inputs = [random_tensor(vec![5], &mut r), random_tensor(vec![5], &mut r)];
        check_grads(&inputs, |t, v| {
            let a = t.sigmoid(v[0]);
            let b = t.tanh(v[1]);
            let p = t.mul(a, b).unwrap();
            let p = t.scale(p, -1.75);
            let z = t.constant(Tensor::zeros(vec![5]));
            t.sse(p, z).unwrap()
        });
    }

    #[test]
    fn softmax_gradients() {
        let mut r = rng();
        let inputs = [random_tensor(vec![2, 4], &mut r)];
        check_grads(&inputs, |t, v| {
            let s = t.softmax_last(v[0]).unwrap();
            let w = t.constant(Tensor::new(vec![2, 4], (0..8).map(|i| i as f64 * 0.3 - 1.0).collect()).unwrap());
            let y = t.mul(s, w).unwrap();
            let z = t.constant(Tensor::zeros(vec![2, 4]));
            t.sse(y, z).unwrap()
        });
    }

    #[test]
    fn concat_and_split_gradients() {
        let mut r = rng();
        let inputs = [
            random_tensor(vec![2, 3], &mut r),
            random_tensor(vec![2, 3], &mut r),
            random_tensor(vec![4], &mut r),
        ];
        check_grads(&inputs, |t, v| {
            let rows = t.concat(&[v[0], v[1]], 0).unwrap();
            let cols = t.concat(&[v[0], v[1]], 1).unwrap();
            let row_chunks = t.split(rows, 0, 4).unwrap();
            let col_chunks = t.split(cols, 1, 2).unwrap();
            let vec_chunks = t.split(v[2], 0, 2).unwrap();
            let a = t.concat(&[row_chunks[0], row_chunks[3]], 0).unwrap();
            let b = t.mul(col_chunks[0], col_chunks[1]).unwrap();
            let s1 = t.sse(a, b).unwrap();
            let s2 = t.sse(vec_chunks[0], vec_chunks[1]).unwrap();
            let both = t.concat(&[s1, s2], 0).unwrap();
            let m = t.mean(both);
            t.reshape(m, vec![1]).map(|v| t.mean(v)).unwrap()
        });
    }

    #[test]
    fn mean_and_reshape_gradients() {
        let mut r = rng();
        let inputs = [random_tensor(vec![3, 2], &mut r)];
        check_grads(&inputs, |t, v| {
            let flat = t.reshape(v[0], vec![6]).unwrap();
            let s = t.sigmoid(flat);
            t.mean(s)
        });
    }

    #[test]
    fn mlp_composite_gradients() {
        let mut r = rng();
        let inputs = [
            random_tensor(vec![4], &mut r),
            random_tensor(vec![4, 3], &mut r),
            random_tensor(vec![3], &mut r),
            random_tensor(vec![3, 2], &mut r),
            random_tensor(vec![2], &mut r),
        ];
        check_grads(&inputs, |t, v| {
            let h = t.matmul(v[0], v[1]).unwrap();
            let h = t.add(h, v[2]).unwrap();
            let h = t.tanh(h);
            let o = t.matmul(h, v[3]).unwrap();
            let o = t.add(o, v[4]).unwrap();
            let z = t.constant(Tensor::vector(vec![0.5, -0.5]));
            t.sse(o, z).unwrap()
        });
    }

    #[test]
    fn sigmoid_derivative_at_zero_is_quarter() {
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::vector(vec![0.0]));
        let s = tape.sigmoid(z);
        let loss = tape.mean(s);
        let grads = tape.backward(loss).unwrap();
        assert!((grads.get(z).data()[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn loss_at_minimum_has_zero_gradient() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::vector(vec![1.0, -2.0, 0.5]));
        let b = tape.constant(Tensor::vector(vec![1.0, -2.0, 0.5]));
        let loss = tape.sse(a, b).unwrap();
        assert_eq!(tape.value(loss).item(), 0.0);
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(a).data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn backward_is_linear_in_the_loss() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![0.3, -1.2, 0.7]));
        let s = tape.tanh(x);
        let z = tape.constant(Tensor::zeros(vec![3]));
        let loss = tape.sse(s, z).unwrap();
        let scaled = tape.scale(loss, 3.5);
        let g1 = tape.backward(loss).unwrap();
        let g2 = tape.backward(scaled).unwrap();
        for (a, b) in g1.get(x).data().iter().zip(g2.get(x).data()) {
            assert!((3.5 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let mut tape = Tape::new();
        let used = tape.leaf(Tensor::vector(vec![1.0]));
        let unused = tape.leaf(Tensor::vector(vec![5.0, 6.0]));
        let z = tape.constant(Tensor::zeros(vec![1]));
        let loss = tape.sse(used, z).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(unused).data(), &[0.0, 0.0]);
        assert_ne!(grads.get(used).data()[0], 0.0);
    }

    #[test]
    fn shape_errors_are_reported() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::new(vec![2, 3], vec![0.0; 6]).unwrap());
        let b = tape.leaf(Tensor::new(vec![2, 3], vec![0.0; 6]).unwrap());
        assert!(matches!(tape.matmul(a, b), Err(TensorError::ShapeMismatch { op: "matmul", .. })));
        let v = tape.leaf(Tensor::vector(vec![0.0; 2]));
        assert!(matches!(tape.add(a, v), Err(TensorError::ShapeMismatch { op: "add", .. })));
        assert!(matches!(tape.mul(a, v), Err(TensorError::ShapeMismatch { op: "mul", .. })));
        assert!(matches!(tape.split(a, 1, 2), Err(TensorError::InvalidShape { op: "split", .. })));
        assert!(matches!(tape.reshape(a, vec![4]), Err(TensorError::InvalidShape { op: "reshape", .. })));
        assert!(matches!(tape.backward(a), Err(TensorError::NotScalar { .. })));
    }

    #[test]
    fn concat_then_split_round_trips_values() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = tape.leaf(Tensor::new(vec![2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap());
        let joined = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(tape.value(joined).data(), &[1.0, 2.0, 5.0, 6.0, 3.0, 4.0, 7.0, 8.0]);
        let parts = tape.split(joined, 1, 2).unwrap();
        assert_eq!(tape.value(parts[0]).data(), tape.value(a).data());
        assert_eq!(tape.value(parts[1]).data(), tape.value(b).data());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![2, 3], vec![700.0, 1.0, -700.0, 0.1, 0.2, 0.3]).unwrap());
        let s = tape.softmax_last(x).unwrap();
        for row in tape.value(s).data().chunks(3) {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|v| v.is_finite() && *v >= 0.0));
        }
    }
}

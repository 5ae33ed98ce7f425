//! Dense `f64` tensors and a reverse-mode tape.
//!
//! The tape is a flat list of nodes in creation order, so every node's
//! parents precede it and the reverse sweep is a single backwards walk.
//! A tape is built fresh for each forward pass and thrown away afterwards.
//!
//! Only the handful of primitives needed for dense ReLU networks, squared
//! error and hinge penalties are supported. Everything is rank 0, 1 or 2.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

/// Row-major dense array.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(contract(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    /// Builds an `(n, d)` matrix from equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != cols {
                return Err(contract(format!(
                    "row {i} has {} entries, expected {cols}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            shape: vec![rows.len(), cols],
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Number of rows of a matrix (1 for vectors and scalars).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            _ => 1,
        }
    }

    /// Number of columns of a matrix (length for vectors).
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1],
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.cols().max(1))
    }

    /// Selects rows by index into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let c = self.cols();
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            shape: vec![indices.len(), c],
            data,
        }
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(contract(format!(
                "expected a scalar, found shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    fn expect_matrix(&self, what: &str) -> Result<(usize, usize)> {
        if self.shape.len() != 2 {
            return Err(contract(format!(
                "{what} must be a matrix, found shape {:?}",
                self.shape
            )));
        }
        Ok((self.shape[0], self.shape[1]))
    }
}

/// `x · wᵀ` for `x: (n, k)` and `w: (m, k)`.
fn matmul_nt(x: &[f64], w: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for (xr, or) in x.chunks_exact(k).zip(out.chunks_exact_mut(m)) {
        for (o, wr) in or.iter_mut().zip(w.chunks_exact(k)) {
            *o = xr.iter().zip(wr).map(|(a, b)| a * b).sum();
        }
    }
    out
}

/// `a · b` for `a: (n, m)` and `b: (m, k)`.
fn matmul_nn(a: &[f64], b: &[f64], n: usize, m: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * k];
    for (ar, or) in a.chunks_exact(m).zip(out.chunks_exact_mut(k)) {
        for (&av, br) in ar.iter().zip(b.chunks_exact(k)) {
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in or.iter_mut().zip(br) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `aᵀ · b` for `a: (n, m)` and `b: (n, k)`.
fn matmul_tn(a: &[f64], b: &[f64], n: usize, m: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for (ar, br) in a.chunks_exact(m).zip(b.chunks_exact(k)).take(n) {
        for (&av, or) in ar.iter().zip(out.chunks_exact_mut(k)) {
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in or.iter_mut().zip(br) {
                *o += av * bv;
            }
        }
    }
    out
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    /// `input · weightᵀ`
    MatMulT { input: NodeId, weight: NodeId },
    /// Adds a bias vector to every row.
    AddBias { input: NodeId, bias: NodeId },
    Relu(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Square(NodeId),
    Mean(NodeId),
    Sum(NodeId),
    Scale(NodeId, f64),
    /// `input · coeffsᵀ + offsets` with constant `coeffs: (m, k)` and
    /// `offsets: (n, m)`.
    Affine {
        input: NodeId,
        coeffs: Tensor,
        offsets: Tensor,
    },
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Record of one forward pass.
#[derive(Clone, Debug, Default)]
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
        &self.nodes[id.0].value
    }

    /// Parent nodes of `id` in recording order.
    pub fn parents(&self, id: NodeId) -> Vec<NodeId> {
        match &self.nodes[id.0].op {
            Op::Leaf => vec![],
            Op::MatMulT { input, weight } => vec![*input, *weight],
            Op::AddBias { input, bias } => vec![*input, *bias],
            Op::Add(a, b) | Op::Sub(a, b) => vec![*a, *b],
            Op::Relu(x) | Op::Square(x) | Op::Mean(x) | Op::Sum(x) | Op::Scale(x, _) => vec![*x],
            Op::Affine { input, .. } => vec![*input],
        }
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    fn check(&self, id: NodeId) -> Result<()> {
        if id.0 >= self.nodes.len() {
            return Err(contract(format!("node {} is not on this tape", id.0)));
        }
        Ok(())
    }

    /// Registers an input or parameter.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn matmul_t(&mut self, input: NodeId, weight: NodeId) -> Result<NodeId> {
        self.check(input)?;
        self.check(weight)?;
        let value = eval_matmul_t(self.value(input), self.value(weight))?;
        Ok(self.push(Op::MatMulT { input, weight }, value))
    }

    pub fn add_bias(&mut self, input: NodeId, bias: NodeId) -> Result<NodeId> {
        self.check(input)?;
        self.check(bias)?;
        let value = eval_add_bias(self.value(input), self.value(bias))?;
        Ok(self.push(Op::AddBias { input, bias }, value))
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x)?;
        let value = self.value(x).map(relu);
        Ok(self.push(Op::Relu(x), value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.binary(a, b, |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), value))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.binary(a, b, |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b), value))
    }

    pub fn square(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x)?;
        let value = self.value(x).map(|v| v * v);
        Ok(self.push(Op::Square(x), value))
    }

    /// Mean over every entry; produces a scalar.
    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x)?;
        let t = self.value(x);
        if t.is_empty() {
            return Err(contract("mean of an empty tensor"));
        }
        let value = Tensor::scalar(t.data.iter().sum::<f64>() / t.len() as f64);
        Ok(self.push(Op::Mean(x), value))
    }

    /// Sum over every entry; produces a scalar.
    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x)?;
        let value = Tensor::scalar(self.value(x).data.iter().sum());
        Ok(self.push(Op::Sum(x), value))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> Result<NodeId> {
        self.check(x)?;
        let value = self.value(x).map(|v| v * factor);
        Ok(self.push(Op::Scale(x, factor), value))
    }

    /// Row-wise affine map with constant coefficients, `input · coeffsᵀ + offsets`.
    pub fn affine(&mut self, input: NodeId, coeffs: Tensor, offsets: Tensor) -> Result<NodeId> {
        self.check(input)?;
        let value = eval_affine(self.value(input), &coeffs, &offsets)?;
        Ok(self.push(
            Op::Affine {
                input,
                coeffs,
                offsets,
            },
            value,
        ))
    }

    fn binary(&self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.check(a)?;
        self.check(b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape != tb.shape {
            return Err(contract(format!(
                "elementwise shapes differ: {:?} vs {:?}",
                ta.shape, tb.shape
            )));
        }
        Ok(ta.zip(tb, f))
    }

    /// Recomputes every node from the recorded leaves.
    pub fn replay(&self) -> Result<Vec<Tensor>> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match &node.op {
                Op::Leaf => node.value.clone(),
                Op::MatMulT { input, weight } => {
                    eval_matmul_t(&values[input.0], &values[weight.0])?
                }
                Op::AddBias { input, bias } => eval_add_bias(&values[input.0], &values[bias.0])?,
                Op::Relu(x) => values[x.0].map(relu),
                Op::Add(a, b) => values[a.0].zip(&values[b.0], |x, y| x + y),
                Op::Sub(a, b) => values[a.0].zip(&values[b.0], |x, y| x - y),
                Op::Square(x) => values[x.0].map(|v| v * v),
                Op::Mean(x) => {
                    let t = &values[x.0];
                    Tensor::scalar(t.data.iter().sum::<f64>() / t.len() as f64)
                }
                Op::Sum(x) => Tensor::scalar(values[x.0].data.iter().sum()),
                Op::Scale(x, f) => values[x.0].map(|v| v * f),
                Op::Affine {
                    input,
                    coeffs,
                    offsets,
                } => eval_affine(&values[input.0], coeffs, offsets)?,
            };
            values.push(v);
        }
        Ok(values)
    }

    /// Reverse sweep seeded with `cotangent` at `output`. Returns the adjoint
    /// of every node, `None` where nothing flowed.
    fn backward(&self, output: NodeId, cotangent: Tensor) -> Vec<Option<Tensor>> {
        let mut adj: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        adj[output.0] = Some(cotangent);

        for i in (0..=output.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    adj[i] = Some(g);
                    continue;
                }
                Op::MatMulT { input, weight } => {
                    let x = self.value(*input);
                    let w = self.value(*weight);
                    let (n, k) = (x.shape[0], x.shape[1]);
                    let m = w.shape[0];
                    let dx = matmul_nn(&g.data, &w.data, n, m, k);
                    let dw = matmul_tn(&g.data, &x.data, n, m, k);
                    accumulate(&mut adj, *input, Tensor { shape: x.shape.clone(), data: dx });
                    accumulate(&mut adj, *weight, Tensor { shape: w.shape.clone(), data: dw });
                }
                Op::AddBias { input, bias } => {
                    let m = g.cols();
                    let mut db = vec![0.0; m];
                    for row in g.data.chunks_exact(m) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    let bshape = self.value(*bias).shape.clone();
                    accumulate(&mut adj, *bias, Tensor { shape: bshape, data: db });
                    accumulate(&mut adj, *input, g);
                }
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    // Subgradient at exactly zero is taken as zero.
                    let d = g.zip(xv, |gv, v| if v > 0.0 { gv } else { 0.0 });
                    accumulate(&mut adj, *x, d);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, g.clone());
                    accumulate(&mut adj, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, *b, g.map(|v| -v));
                    accumulate(&mut adj, *a, g);
                }
                Op::Square(x) => {
                    let d = g.zip(self.value(*x), |gv, v| 2.0 * v * gv);
                    accumulate(&mut adj, *x, d);
                }
                Op::Mean(x) => {
                    let t = self.value(*x);
                    let s = g.data[0] / t.len() as f64;
                    accumulate(&mut adj, *x, t.map(|_| s));
                }
                Op::Sum(x) => {
                    let s = g.data[0];
                    accumulate(&mut adj, *x, self.value(*x).map(|_| s));
                }
                Op::Scale(x, f) => {
                    let f = *f;
                    accumulate(&mut adj, *x, g.map(|v| v * f));
                }
                Op::Affine { input, coeffs, .. } => {
                    let x = self.value(*input);
                    let (n, k) = (x.shape[0], x.shape[1]);
                    let m = coeffs.shape[0];
                    let dx = matmul_nn(&g.data, &coeffs.data, n, m, k);
                    accumulate(&mut adj, *input, Tensor { shape: x.shape.clone(), data: dx });
                }
            }
        }
        adj
    }

    /// Gradient of a scalar node with respect to each of `params`.
    ///
    /// Parameters the loss does not depend on get zero blocks.
    pub fn grad(&self, loss: NodeId, params: &[NodeId]) -> Result<GradientVector> {
        self.check(loss)?;
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(contract(format!(
                "gradient needs a scalar loss, node has shape {:?}",
                lv.shape
            )));
        }
        let seed = Tensor {
            shape: lv.shape.clone(),
            data: vec![1.0],
        };
        self.pull_back(loss, seed, params)
    }

    /// Vector-Jacobian product `cotangentᵀ · ∂output/∂params`.
    pub fn vjp(
        &self,
        output: NodeId,
        cotangent: &Tensor,
        params: &[NodeId],
    ) -> Result<GradientVector> {
        self.check(output)?;
        if self.value(output).shape != cotangent.shape {
            return Err(contract(format!(
                "cotangent shape {:?} does not match output shape {:?}",
                cotangent.shape,
                self.value(output).shape
            )));
        }
        self.pull_back(output, cotangent.clone(), params)
    }

    fn pull_back(
        &self,
        output: NodeId,
        seed: Tensor,
        params: &[NodeId],
    ) -> Result<GradientVector> {
        for &p in params {
            self.check(p)?;
            if !matches!(self.nodes[p.0].op, Op::Leaf) {
                return Err(contract(format!("node {} is not a leaf", p.0)));
            }
        }
        let mut adj = self.backward(output, seed);
        let blocks = params
            .iter()
            .map(|p| {
                adj.get_mut(p.0)
                    .and_then(Option::take)
                    .unwrap_or_else(|| Tensor::zeros(self.value(*p).shape.clone()))
            })
            .collect();
        Ok(GradientVector::new(blocks))
    }
}

fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

fn accumulate(adj: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    match &mut adj[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn eval_matmul_t(x: &Tensor, w: &Tensor) -> Result<Tensor> {
    let (n, k) = x.expect_matrix("matmul input")?;
    let (m, kw) = w.expect_matrix("matmul weight")?;
    if k != kw {
        return Err(contract(format!(
            "matmul inner dimensions differ: input has {k} columns, weight has {kw}"
        )));
    }
    Ok(Tensor {
        shape: vec![n, m],
        data: matmul_nt(&x.data, &w.data, n, k, m),
    })
}

fn eval_add_bias(x: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (_, m) = x.expect_matrix("bias input")?;
    if b.shape != [m] {
        return Err(contract(format!(
            "bias shape {:?} does not fit {m} columns",
            b.shape
        )));
    }
    let mut data = x.data.clone();
    for row in data.chunks_exact_mut(m) {
        for (v, bv) in row.iter_mut().zip(&b.data) {
            *v += bv;
        }
    }
    Ok(Tensor {
        shape: x.shape.clone(),
        data,
    })
}

fn eval_affine(x: &Tensor, coeffs: &Tensor, offsets: &Tensor) -> Result<Tensor> {
    let (n, k) = x.expect_matrix("affine input")?;
    let (m, kc) = coeffs.expect_matrix("affine coefficients")?;
    if kc != k || offsets.shape != [n, m] {
        return Err(contract(format!(
            "affine map shapes do not line up: input {:?}, coefficients {:?}, offsets {:?}",
            x.shape, coeffs.shape, offsets.shape
        )));
    }
    let mut data = matmul_nt(&x.data, &coeffs.data, n, k, m);
    for (v, o) in data.iter_mut().zip(&offsets.data) {
        *v += o;
    }
    Ok(Tensor {
        shape: vec![n, m],
        data,
    })
}

/// Per-parameter gradient blocks together with their joint L2 norm.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientVector {
    blocks: Vec<Tensor>,
    norm: f64,
}

impl GradientVector {
    pub fn new(blocks: Vec<Tensor>) -> Self {
        let norm = l2_norm(&blocks);
        Self { blocks, norm }
    }

    /// All-zero vector mirroring the given shapes.
    pub fn zeros_like(blocks: &[Tensor]) -> Self {
        Self {
            blocks: blocks.iter().map(|b| Tensor::zeros(b.shape.clone())).collect(),
            norm: 0.0,
        }
    }

    pub fn blocks(&self) -> &[Tensor] {
        &self.blocks
    }

    pub fn into_blocks(self) -> Vec<Tensor> {
        self.blocks
    }

    /// L2 norm of all entries taken together.
    pub fn global_norm(&self) -> f64 {
        self.norm
    }

    pub fn is_zero(&self) -> bool {
        self.blocks.iter().all(|b| b.data.iter().all(|&v| v == 0.0))
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().all(Tensor::is_finite)
    }

    pub fn num_entries(&self) -> usize {
        self.blocks.iter().map(Tensor::len).sum()
    }

    /// Entries of every block concatenated in order.
    pub fn flatten(&self) -> Vec<f64> {
        self.blocks.iter().flat_map(|b| b.data.iter().copied()).collect()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.blocks
            .iter()
            .zip(&other.blocks)
            .flat_map(|(a, b)| a.data.iter().zip(&b.data))
            .map(|(x, y)| x * y)
            .sum()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self::new(self.blocks.iter().map(|b| b.map(|v| v * factor)).collect())
    }

    /// `self + factor · other`
    pub fn add_scaled(&self, other: &Self, factor: f64) -> Self {
        Self::new(
            self.blocks
                .iter()
                .zip(&other.blocks)
                .map(|(a, b)| a.zip(b, |x, y| x + factor * y))
                .collect(),
        )
    }

    pub fn matches_shapes(&self, params: &[Tensor]) -> bool {
        self.blocks.len() == params.len()
            && self.blocks.iter().zip(params).all(|(g, p)| g.shape == p.shape)
    }
}

/// Scaled two-pass norm so large entries cannot overflow the sum of squares.
fn l2_norm(blocks: &[Tensor]) -> f64 {
    let max = blocks
        .iter()
        .flat_map(|b| b.data.iter())
        .fold(0.0_f64, |m, v| m.max(v.abs()));
    if max == 0.0 || !max.is_finite() {
        return max;
    }
    let sum: f64 = blocks
        .iter()
        .flat_map(|b| b.data.iter())
        .map(|v| (v / max) * (v / max))
        .sum();
    max * sum.sqrt()
}

/// Free-function form of [`GradientVector::global_norm`].
pub fn global_norm(g: &GradientVector) -> f64 {
    g.global_norm()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn square_gradient() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::scalar(3.0));
        let sq = tape.square(w).unwrap();
        let loss = tape.sum(sq).unwrap();
        let g = tape.grad(loss, &[w]).unwrap();
        assert_eq!(g.blocks()[0].data(), &[6.0]);
    }

    #[test]
    fn unreached_parameter_gets_zero_block() {
        let mut tape = Tape::new();
        let x = tape.leaf(m(&[&[1.0, 2.0]]));
        let w = tape.leaf(m(&[&[0.5, -1.0]]));
        let b = tape.leaf(Tensor::vector(vec![0.3]));
        let y = tape.matmul_t(x, w).unwrap();
        let loss = tape.mean(y).unwrap();
        let g = tape.grad(loss, &[w, b]).unwrap();
        assert_eq!(g.blocks()[0].data(), &[1.0, 2.0]);
        assert_eq!(g.blocks()[1].data(), &[0.0]);
        assert_eq!(g.blocks()[1].shape(), &[1]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let y = tape.square(x).unwrap();
        assert!(matches!(tape.grad(y, &[x]), Err(crate::Error::Contract(_))));
    }

    #[test]
    fn linear_layer_vjp_with_basis_cotangent() {
        let x = vec![0.7, -1.3, 2.0];
        let mut tape = Tape::new();
        let xs = tape.leaf(m(&[&x]));
        let w = tape.leaf(Tensor::new(vec![2, 3], vec![0.1, 0.2, 0.3, -0.4, 0.5, 0.6]).unwrap());
        let b = tape.leaf(Tensor::vector(vec![0.0, 1.0]));
        let z = tape.matmul_t(xs, w).unwrap();
        let y = tape.add_bias(z, b).unwrap();
        let e1 = m(&[&[0.0, 1.0]]);
        let g = tape.vjp(y, &e1, &[w, b]).unwrap();
        assert_eq!(g.blocks()[0].data(), &[0.0, 0.0, 0.0, 0.7, -1.3, 2.0]);
        assert_eq!(g.blocks()[1].data(), &[0.0, 1.0]);
    }

    #[test]
    fn zero_cotangent_gives_zero_vector() {
        let mut tape = Tape::new();
        let xs = tape.leaf(m(&[&[1.0, 2.0]]));
        let w = tape.leaf(m(&[&[1.0, 1.0], &[2.0, -1.0]]));
        let y = tape.matmul_t(xs, w).unwrap();
        let r = tape.relu(y).unwrap();
        let g = tape.vjp(r, &Tensor::zeros(vec![1, 2]), &[w]).unwrap();
        assert!(g.is_zero());
        assert_eq!(g.global_norm(), 0.0);
    }

    #[test]
    fn vjp_shape_mismatch() {
        let mut tape = Tape::new();
        let xs = tape.leaf(m(&[&[1.0, 2.0]]));
        let r = tape.relu(xs).unwrap();
        let err = tape.vjp(r, &Tensor::zeros(vec![2, 1]), &[xs]);
        assert!(matches!(err, Err(crate::Error::Contract(_))));
    }

    #[test]
    fn norms() {
        assert_eq!(GradientVector::new(vec![Tensor::zeros(vec![4])]).global_norm(), 0.0);
        let g = GradientVector::new(vec![Tensor::vector(vec![3.0]), Tensor::vector(vec![4.0])]);
        assert_eq!(global_norm(&g), 5.0);
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![0.0, 1.0, -1.0]));
        let r = tape.relu(x).unwrap();
        let s = tape.sum(r).unwrap();
        let g = tape.grad(s, &[x]).unwrap();
        assert_eq!(g.blocks()[0].data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn replay_reproduces_values() {
        let mut tape = Tape::new();
        let x = tape.leaf(m(&[&[1.0, -2.0], &[0.5, 0.25]]));
        let w = tape.leaf(m(&[&[0.3, -0.7], &[1.1, 0.2], &[-0.5, 0.9]]));
        let b = tape.leaf(Tensor::vector(vec![0.1, -0.1, 0.0]));
        let z = tape.matmul_t(x, w).unwrap();
        let z = tape.add_bias(z, b).unwrap();
        let h = tape.relu(z).unwrap();
        let c = Tensor::new(vec![1, 3], vec![1.0, -1.0, 2.0]).unwrap();
        let o = Tensor::new(vec![2, 1], vec![0.5, -0.5]).unwrap();
        let a = tape.affine(h, c, o).unwrap();
        let sq = tape.square(a).unwrap();
        let s = tape.scale(sq, 0.5).unwrap();
        let _ = tape.mean(s).unwrap();
        let replayed = tape.replay().unwrap();
        for (i, v) in replayed.iter().enumerate() {
            assert_eq!(v, tape.value(NodeId(i)));
        }
    }

    #[test]
    fn parents_precede_children() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::vector(vec![1.0]));
        let b = tape.leaf(Tensor::vector(vec![2.0]));
        let c = tape.add(a, b).unwrap();
        let d = tape.sub(c, a).unwrap();
        for i in 0..tape.len() {
            for p in tape.parents(NodeId(i)) {
                assert!(p.index() < i);
            }
        }
        assert_eq!(tape.parents(d), vec![c, a]);
    }
}

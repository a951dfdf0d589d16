use super::kernels::{matmul, matmul_at, matmul_bt, sigmoid};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }

    #[cfg(test)]
    pub(crate) fn from_index_for_tests(i: usize) -> Self {
        Var(i)
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    SliceCols { x: Var, start: usize },
    Embedding { table: Var, ids: Vec<usize> },
    L2NormRows { x: Var, norms: Vec<T> },
    Hinge(Var),
    RowMax { x: Var, argmax: Vec<usize> },
    SumAll(Var),
    MeanAll(Var),
    SumRows(Var),
    Scale(Var, T),
    Shift(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

/// Records a forward computation for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so reverse insertion order is a
/// valid reverse topological order and backward visits each node once.
/// Broadcasting is limited to adding a `1×n` row vector to every row of a
/// matrix ([`Tape::add_row`]); any other shape disagreement is an error.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records a leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn matrix(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        self.nodes[v.0].value.require_matrix(op)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix(a, "matmul")?;
        let (k2, n) = self.matrix(b, "matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", &[m, k], &[k2, n]));
        }
        let data = matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let value = Tensor::new(vec![m, n], data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ`; with unit-norm rows this is the cosine similarity matrix.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix(a, "matmul_bt")?;
        let (n, k2) = self.matrix(b, "matmul_bt")?;
        if k != k2 {
            return Err(Error::shape("matmul_bt", &[m, k], &[n, k2]));
        }
        let data = matmul_bt(self.value(a).data(), self.value(b).data(), m, k, n);
        let value = Tensor::new(vec![m, n], data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMulBt(a, b), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        self.matrix(x, "transpose")?;
        let value = self.value(x).transpose();
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Transpose(x), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = zip_map(self.value(a), self.value(b), |x, y| x + y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    /// Adds a `1×n` row vector to every row of an `m×n` matrix.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (m, n) = self.matrix(x, "add_row")?;
        let (r, n2) = self.matrix(row, "add_row")?;
        if r != 1 || n != n2 {
            return Err(Error::shape("add_row", &[m, n], &[r, n2]));
        }
        let rv = self.value(row).data();
        let mut data = self.value(x).data().to_vec();
        for chunk in data.chunks_mut(n.max(1)) {
            for (v, &b) in chunk.iter_mut().zip(rv) {
                *v = *v + b;
            }
        }
        let value = Tensor::new(vec![m, n], data)?;
        let rg = self.rg(&[x, row]);
        Ok(self.push(value, Op::AddRow(x, row), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = zip_map(self.value(a), self.value(b), |x, y| x * y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        let rg = self.rg(&[x]);
        self.push(value, Op::Sigmoid(x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(T::tanh);
        let rg = self.rg(&[x]);
        self.push(value, Op::Tanh(x), rg)
    }

    /// Concatenates matrices along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = *inputs.first().ok_or(Error::Empty("concat inputs"))?;
        let (r0, c0) = self.matrix(first, "concat")?;
        let mut shapes = Vec::with_capacity(inputs.len());
        for &v in inputs {
            let (r, c) = self.matrix(v, "concat")?;
            let ok = match axis {
                0 => c == c0,
                1 => r == r0,
                _ => false,
            };
            if !ok {
                return Err(Error::shape("concat", &[r0, c0], &[r, c]));
            }
            shapes.push((r, c));
        }
        let value = if axis == 0 {
            let rows = shapes.iter().map(|s| s.0).sum();
            let mut data = Vec::with_capacity(rows * c0);
            for &v in inputs {
                data.extend_from_slice(self.value(v).data());
            }
            Tensor::new(vec![rows, c0], data)?
        } else {
            let cols: usize = shapes.iter().map(|s| s.1).sum();
            let mut data = Vec::with_capacity(r0 * cols);
            for i in 0..r0 {
                for &v in inputs {
                    data.extend_from_slice(self.value(v).row(i));
                }
            }
            Tensor::new(vec![r0, cols], data)?
        };
        let rg = self.rg(inputs);
        Ok(self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.matrix(x, "slice_cols")?;
        if start > end || end > n {
            return Err(Error::shape("slice_cols", &[m, n], &[start, end]));
        }
        let src = self.value(x);
        let mut data = Vec::with_capacity(m * (end - start));
        for i in 0..m {
            data.extend_from_slice(&src.row(i)[start..end]);
        }
        let value = Tensor::new(vec![m, end - start], data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::SliceCols { x, start }, rg))
    }

    /// Gathers rows of `table` by token id.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, _) = self.matrix(table, "embedding")?;
        if let Some(&bad) = ids.iter().find(|&&id| id >= v) {
            return Err(Error::TokenOutOfRange { id: bad, size: v });
        }
        let value = self.value(table).gather_rows(ids);
        let rg = self.rg(&[table]);
        Ok(self.push(
            value,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Scales each row to unit L2 norm. All-zero rows stay zero and pass no
    /// gradient.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.matrix(x, "l2_normalize_rows")?;
        let src = self.value(x);
        let mut norms = Vec::with_capacity(m);
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            let row = src.row(i);
            let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
            norms.push(norm);
            if norm > T::zero() {
                data.extend(row.iter().map(|&v| v / norm));
            } else {
                data.extend(std::iter::repeat_n(T::zero(), n));
            }
        }
        let value = Tensor::new(vec![m, n], data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::L2NormRows { x, norms }, rg))
    }

    /// `max(0, x)` elementwise; the subgradient at exactly 0 is 0.
    pub fn hinge(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        let rg = self.rg(&[x]);
        self.push(value, Op::Hinge(x), rg)
    }

    /// Per-row maximum as an `m×1` column. Ties resolve to the first index and
    /// gradient flows only to that entry.
    pub fn row_max(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.matrix(x, "row_max")?;
        if n == 0 {
            return Err(Error::Empty("row_max over zero columns"));
        }
        let src = self.value(x);
        let mut argmax = Vec::with_capacity(m);
        let mut data = Vec::with_capacity(m);
        for i in 0..m {
            let row = src.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            argmax.push(best);
            data.push(row[best]);
        }
        let value = Tensor::new(vec![m, 1], data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::RowMax { x, argmax }, rg))
    }

    pub fn row_argmax(&self, v: Var) -> Option<&[usize]> {
        match &self.nodes[v.0].op {
            Op::RowMax { argmax, .. } => Some(argmax),
            _ => None,
        }
    }

    /// Sum of all elements, accumulated front to back, as a `1×1` tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().fold(T::zero(), |acc, &v| acc + v);
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::SumAll(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let n = T::from_usize(src.numel().max(1)).unwrap_or_else(T::one);
        let s = src.data().iter().fold(T::zero(), |acc, &v| acc + v) / n;
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::MeanAll(x), rg)
    }

    /// Per-row sums as an `m×1` column, each accumulated left to right.
    pub fn sum_rows(&mut self, x: Var) -> Result<Var> {
        let (m, _) = self.matrix(x, "sum_rows")?;
        let src = self.value(x);
        let data = (0..m)
            .map(|i| src.row(i).iter().fold(T::zero(), |acc, &v| acc + v))
            .collect();
        let value = Tensor::new(vec![m, 1], data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::SumRows(x), rg))
    }

    pub fn scale(&mut self, x: Var, k: T) -> Var {
        let value = self.value(x).map(|v| v * k);
        let rg = self.rg(&[x]);
        self.push(value, Op::Scale(x, k), rg)
    }

    /// Adds a constant to every element.
    pub fn shift(&mut self, x: Var, k: T) -> Var {
        let value = self.value(x).map(|v| v + k);
        let rg = self.rg(&[x]);
        self.push(value, Op::Shift(x), rg)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(op, sa, sb));
        }
        Ok(())
    }

    /// Reverse pass from a scalar `loss`. The tape is left intact, so calling
    /// this twice yields identical gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.nodes.is_empty() {
            return Err(Error::EmptyTape);
        }
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(lv.shape(), T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.requires_grad(*a) {
                    let da = matmul_bt(g.data(), bv.data(), m, n, k);
                    self.accumulate(grads, *a, tensor(vec![m, k], da));
                }
                if self.requires_grad(*b) {
                    let db = matmul_at(av.data(), g.data(), m, k, n);
                    self.accumulate(grads, *b, tensor(vec![k, n], db));
                }
            }
            Op::MatMulBt(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.rows());
                if self.requires_grad(*a) {
                    let da = matmul(g.data(), bv.data(), m, n, k);
                    self.accumulate(grads, *a, tensor(vec![m, k], da));
                }
                if self.requires_grad(*b) {
                    let db = matmul_at(g.data(), av.data(), m, n, k);
                    self.accumulate(grads, *b, tensor(vec![n, k], db));
                }
            }
            Op::Transpose(x) => self.accumulate(grads, *x, g.transpose()),
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::AddRow(x, row) => {
                self.accumulate(grads, *x, g.clone());
                if self.requires_grad(*row) {
                    let n = g.cols();
                    let mut acc = vec![T::zero(); n];
                    for i in 0..g.rows() {
                        for (a, &v) in acc.iter_mut().zip(g.row(i)) {
                            *a = *a + v;
                        }
                    }
                    self.accumulate(grads, *row, tensor(vec![1, n], acc));
                }
            }
            Op::Mul(a, b) => {
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, zip_map(g, self.value(*b), |x, y| x * y));
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, zip_map(g, self.value(*a), |x, y| x * y));
                }
            }
            Op::Sigmoid(x) => {
                let d = zip_map(g, out, |gv, y| gv * y * (T::one() - y));
                self.accumulate(grads, *x, d);
            }
            Op::Tanh(x) => {
                let d = zip_map(g, out, |gv, y| gv * (T::one() - y * y));
                self.accumulate(grads, *x, d);
            }
            Op::Concat { inputs, axis } => {
                if *axis == 0 {
                    let mut offset = 0;
                    for &v in inputs {
                        let (r, c) = (self.value(v).rows(), self.value(v).cols());
                        let part = g.data()[offset..offset + r * c].to_vec();
                        offset += r * c;
                        self.accumulate(grads, v, tensor(vec![r, c], part));
                    }
                } else {
                    let mut col = 0;
                    for &v in inputs {
                        let (r, c) = (self.value(v).rows(), self.value(v).cols());
                        let mut part = Vec::with_capacity(r * c);
                        for i in 0..r {
                            part.extend_from_slice(&g.row(i)[col..col + c]);
                        }
                        col += c;
                        self.accumulate(grads, v, tensor(vec![r, c], part));
                    }
                }
            }
            Op::SliceCols { x, start } => {
                if self.requires_grad(*x) {
                    let src = self.value(*x);
                    let (m, n) = (src.rows(), src.cols());
                    let w = g.cols();
                    let mut d = vec![T::zero(); m * n];
                    for i in 0..m {
                        d[i * n + start..i * n + start + w].copy_from_slice(g.row(i));
                    }
                    self.accumulate(grads, *x, tensor(vec![m, n], d));
                }
            }
            Op::Embedding { table, ids } => {
                if self.requires_grad(*table) {
                    let tv = self.value(*table);
                    let e = tv.cols();
                    let mut d = vec![T::zero(); tv.numel()];
                    for (row, &id) in ids.iter().enumerate() {
                        let dst = &mut d[id * e..(id + 1) * e];
                        for (a, &v) in dst.iter_mut().zip(g.row(row)) {
                            *a = *a + v;
                        }
                    }
                    self.accumulate(grads, *table, tensor(tv.shape().to_vec(), d));
                }
            }
            Op::L2NormRows { x, norms } => {
                let n = out.cols();
                let mut d = vec![T::zero(); out.numel()];
                for (i, &norm) in norms.iter().enumerate() {
                    if norm <= T::zero() {
                        continue;
                    }
                    let y = out.row(i);
                    let gy = g.row(i);
                    let dot = y.iter().zip(gy).fold(T::zero(), |a, (&p, &q)| a + p * q);
                    for j in 0..n {
                        d[i * n + j] = (gy[j] - y[j] * dot) / norm;
                    }
                }
                self.accumulate(grads, *x, tensor(out.shape().to_vec(), d));
            }
            Op::Hinge(x) => {
                let d = zip_map(g, self.value(*x), |gv, xv| if xv > T::zero() { gv } else { T::zero() });
                self.accumulate(grads, *x, d);
            }
            Op::RowMax { x, argmax } => {
                let src = self.value(*x);
                let n = src.cols();
                let mut d = vec![T::zero(); src.numel()];
                for (i, &j) in argmax.iter().enumerate() {
                    d[i * n + j] = g.data()[i];
                }
                self.accumulate(grads, *x, tensor(src.shape().to_vec(), d));
            }
            Op::SumAll(x) => {
                let shape = self.value(*x).shape();
                self.accumulate(grads, *x, Tensor::filled(shape, g.item()));
            }
            Op::MeanAll(x) => {
                let src = self.value(*x);
                let n = T::from_usize(src.numel().max(1)).unwrap_or_else(T::one);
                self.accumulate(grads, *x, Tensor::filled(src.shape(), g.item() / n));
            }
            Op::SumRows(x) => {
                let src = self.value(*x);
                let n = src.cols();
                let mut d = Vec::with_capacity(src.numel());
                for &gi in g.data() {
                    d.extend(std::iter::repeat_n(gi, n));
                }
                self.accumulate(grads, *x, tensor(src.shape().to_vec(), d));
            }
            Op::Scale(x, k) => {
                let k = *k;
                self.accumulate(grads, *x, g.map(|v| v * k));
            }
            Op::Shift(x) => self.accumulate(grads, *x, g.clone()),
        }
    }
}

fn tensor<T: Scalar>(shape: Vec<usize>, data: Vec<T>) -> Tensor<T> {
    Tensor::new(shape, data).expect("gradient shape matches its forward value")
}

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    tensor(a.shape().to_vec(), data)
}

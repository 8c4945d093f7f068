//! Dense row-major `f64` tensors and a per-forward-pass reverse-mode tape.
//!
//! Every operation appends a node holding its value and the inputs it was
//! computed from. [`Tape::backward`] walks the nodes once in reverse order and
//! leaves `dLoss/dLeaf` on every leaf created with [`Tape::param`]. A tape is
//! single-use: build a fresh one for each forward pass.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if shape.is_empty() || shape.contains(&0) || expected != data.len() {
            return Err(Error::InvalidShape {
                shape,
                len: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        assert!(!shape.is_empty() && !shape.contains(&0), "extents must be positive");
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Rank-1 tensor; panics on an empty slice.
    pub fn vector(data: Vec<f64>) -> Self {
        assert!(!data.is_empty(), "vector must be non-empty");
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
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

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        if self.shape.len() > 1 {
            self.shape[1]
        } else {
            1
        }
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on a tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    MatVec(Var, Var),
    VecMat(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRows(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Vec<f64>),
    Sigmoid(Var),
    Tanh(Var),
    Concat { parts: Vec<Var>, axis: usize },
    Slice { input: Var, start: usize },
    Stack(Vec<Var>),
    Row { matrix: Var, index: usize },
    Sum(Var),
    AddN(Vec<Var>),
    Softmax(Var),
    CrossEntropy { logits: Var, target: usize },
    BceWithLogits { logits: Var, targets: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    consumed: bool,
}

/// Dot product with four independent accumulators so the loop vectorizes;
/// the summation order is fixed, so results stay deterministic.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-subtracted softmax; masked positions are exactly zero.
pub fn softmax_values(x: &[f64], mask: Option<&[bool]>) -> Result<Vec<f64>> {
    let keep = |i: usize| mask.is_none_or(|m| m[i]);
    if !(0..x.len()).any(keep) {
        return Err(Error::AllMasked("softmax"));
    }
    if (0..x.len()).any(|i| keep(i) && !x[i].is_finite()) {
        return Err(Error::NonFinite("softmax input".into()));
    }
    let max = (0..x.len())
        .filter(|&i| keep(i))
        .map(|i| x[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = (0..x.len())
        .map(|i| if keep(i) { (x[i] - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= total);
    Ok(out)
}

/// Numerically stable log-softmax.
pub fn log_softmax_values(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    x.iter().map(|v| v - lse).collect()
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that receives a gradient on backward.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf without a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    fn data(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value.data
    }

    /// Gradient of a parameter leaf after [`Tape::backward`]; leaves the loss
    /// does not reach get zeros. `None` for non-parameters or before backward.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        if !self.consumed || !node.needs_grad || !matches!(node.op, Op::Leaf) {
            return None;
        }
        let data = self
            .grads
            .get(v.0)
            .and_then(|g| g.clone())
            .unwrap_or_else(|| vec![0.0; node.value.len()]);
        Some(Tensor {
            shape: node.value.shape.clone(),
            data,
        })
    }

    /// Moves a parameter gradient out of the tape; later calls for the
    /// same leaf return zeros.
    pub fn take_grad(&mut self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        if !self.consumed || !node.needs_grad || !matches!(node.op, Op::Leaf) {
            return None;
        }
        let data = self
            .grads
            .get_mut(v.0)
            .and_then(Option::take)
            .unwrap_or_else(|| vec![0.0; node.value.len()]);
        Some(Tensor {
            shape: node.value.shape.clone(),
            data,
        })
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::ShapeMismatch {
            op,
            left: self.shape(a).to_vec(),
            right: self.shape(b).to_vec(),
        }
    }

    fn dims2(&self, v: Var) -> Option<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Some((*r, *c)),
            _ => None,
        }
    }

    /// `[m×k] · [k×n] → [m×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (Some((m, k)), Some((k2, n))) = (self.dims2(a), self.dims2(b)) else {
            return Err(self.mismatch("matmul", a, b));
        };
        if k != k2 {
            return Err(self.mismatch("matmul", a, b));
        }
        let (ad, bd) = (self.data(a), self.data(b));
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let av = ad[i * k + p];
                if av == 0.0 {
                    continue;
                }
                let brow = &bd[p * n..(p + 1) * n];
                for (o, bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        let needs = self.needs(&[a, b]);
        Ok(self.push(Tensor { shape: vec![m, n], data: out }, Op::MatMul(a, b), needs))
    }

    /// `[m×k] · [n×k]ᵀ → [m×n]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (Some((m, k)), Some((n, k2))) = (self.dims2(a), self.dims2(b)) else {
            return Err(self.mismatch("matmul_nt", a, b));
        };
        if k != k2 {
            return Err(self.mismatch("matmul_nt", a, b));
        }
        let (ad, bd) = (self.data(a), self.data(b));
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let arow = &ad[i * k..(i + 1) * k];
            for j in 0..n {
                let brow = &bd[j * k..(j + 1) * k];
                out[i * n + j] = dot(arow, brow);
            }
        }
        let needs = self.needs(&[a, b]);
        Ok(self.push(Tensor { shape: vec![m, n], data: out }, Op::MatMulNt(a, b), needs))
    }

    /// `[r×c] · [c] → [r]`.
    pub fn matvec(&mut self, m: Var, x: Var) -> Result<Var> {
        let Some((r, c)) = self.dims2(m) else {
            return Err(self.mismatch("matvec", m, x));
        };
        if self.shape(x) != [c] {
            return Err(self.mismatch("matvec", m, x));
        }
        let (md, xd) = (self.data(m), self.data(x));
        let out: Vec<f64> = (0..r)
            .map(|i| dot(&md[i * c..(i + 1) * c], xd))
            .collect();
        let needs = self.needs(&[m, x]);
        Ok(self.push(Tensor { shape: vec![r], data: out }, Op::MatVec(m, x), needs))
    }

    /// `[n] · [n×c] → [c]`, i.e. a weighted sum of the matrix rows.
    pub fn vecmat(&mut self, x: Var, m: Var) -> Result<Var> {
        let Some((n, c)) = self.dims2(m) else {
            return Err(self.mismatch("vecmat", x, m));
        };
        if self.shape(x) != [n] {
            return Err(self.mismatch("vecmat", x, m));
        }
        let (xd, md) = (self.data(x), self.data(m));
        let mut out = vec![0.0; c];
        for i in 0..n {
            let w = xd[i];
            for (o, v) in out.iter_mut().zip(&md[i * c..(i + 1) * c]) {
                *o += w * v;
            }
        }
        let needs = self.needs(&[x, m]);
        Ok(self.push(Tensor { shape: vec![c], data: out }, Op::VecMat(x, m), needs))
    }

    fn zip_same(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch(name, a, b));
        }
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| f(*x, *y)).collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(&[a, b]);
        Ok(self.push(Tensor { shape, data }, op, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds `v [c]` to every row of `m [n×c]`.
    pub fn add_rows(&mut self, m: Var, v: Var) -> Result<Var> {
        let Some((_, c)) = self.dims2(m) else {
            return Err(self.mismatch("add_rows", m, v));
        };
        if self.shape(v) != [c] {
            return Err(self.mismatch("add_rows", m, v));
        }
        let vd = self.data(v);
        let data = self
            .data(m)
            .chunks(c)
            .flat_map(|row| row.iter().zip(vd).map(|(x, y)| x + y))
            .collect();
        let shape = self.shape(m).to_vec();
        let needs = self.needs(&[m, v]);
        Ok(self.push(Tensor { shape, data }, Op::AddRows(m, v), needs))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let data = self.data(a).iter().map(|x| x * c).collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(&[a]);
        self.push(Tensor { shape, data }, Op::Scale(a, c), needs)
    }

    /// Elementwise product with a constant (e.g. a dropout mask).
    pub fn mul_const(&mut self, a: Var, k: Vec<f64>) -> Result<Var> {
        if k.len() != self.data(a).len() {
            return Err(Error::ShapeMismatch {
                op: "mul_const",
                left: self.shape(a).to_vec(),
                right: vec![k.len()],
            });
        }
        let data = self.data(a).iter().zip(&k).map(|(x, y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(&[a]);
        Ok(self.push(Tensor { shape, data }, Op::MulConst(a, k), needs))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let data = self.data(a).iter().map(|&x| sigmoid(x)).collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(&[a]);
        self.push(Tensor { shape, data }, Op::Sigmoid(a), needs)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let data = self.data(a).iter().map(|x| x.tanh()).collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(&[a]);
        self.push(Tensor { shape, data }, Op::Tanh(a), needs)
    }

    /// Concatenates along `axis`; every other extent must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts.first().ok_or(Error::EmptyInput("concat"))?;
        let rank = self.shape(first).len();
        if axis >= rank {
            return Err(Error::Config(format!("concat axis {axis} on rank {rank}")));
        }
        let mut shape = self.shape(first).to_vec();
        shape[axis] = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == rank && (0..rank).all(|d| d == axis || s[d] == shape[d]);
            if !compatible {
                return Err(self.mismatch("concat", first, p));
            }
            shape[axis] += s[axis];
        }
        let outer: usize = shape[..axis].iter().product();
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &p in parts {
                let inner: usize = self.shape(p)[axis..].iter().product();
                data.extend_from_slice(&self.data(p)[o * inner..(o + 1) * inner]);
            }
        }
        let needs = self.needs(parts);
        Ok(self.push(
            Tensor { shape, data },
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            needs,
        ))
    }

    /// Contiguous sub-vector `[start, start + len)` of a rank-1 tensor.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let n = self.data(a).len();
        if self.shape(a).len() != 1 || len == 0 || start + len > n {
            return Err(Error::IndexOutOfRange {
                what: "slice end",
                index: start + len,
                len: n,
            });
        }
        let data = self.data(a)[start..start + len].to_vec();
        let needs = self.needs(&[a]);
        Ok(self.push(Tensor { shape: vec![len], data }, Op::Slice { input: a, start }, needs))
    }

    /// Stacks equal-length vectors as the rows of a matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Result<Var> {
        let first = *rows.first().ok_or(Error::EmptyInput("stack"))?;
        let width = self.data(first).len();
        let mut data = Vec::with_capacity(rows.len() * width);
        for &r in rows {
            if self.shape(r) != [width] {
                return Err(self.mismatch("stack", first, r));
            }
            data.extend_from_slice(self.data(r));
        }
        let needs = self.needs(rows);
        Ok(self.push(
            Tensor {
                shape: vec![rows.len(), width],
                data,
            },
            Op::Stack(rows.to_vec()),
            needs,
        ))
    }

    /// Row `index` of a matrix as a vector.
    pub fn row(&mut self, matrix: Var, index: usize) -> Result<Var> {
        let Some((r, c)) = self.dims2(matrix) else {
            return Err(Error::ShapeMismatch {
                op: "row",
                left: self.shape(matrix).to_vec(),
                right: vec![],
            });
        };
        if index >= r {
            return Err(Error::IndexOutOfRange {
                what: "row",
                index,
                len: r,
            });
        }
        let data = self.data(matrix)[index * c..(index + 1) * c].to_vec();
        let needs = self.needs(&[matrix]);
        Ok(self.push(Tensor { shape: vec![c], data }, Op::Row { matrix, index }, needs))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.data(a).iter().sum();
        let needs = self.needs(&[a]);
        self.push(Tensor::scalar(total), Op::Sum(a), needs)
    }

    /// Sum of same-shaped tensors.
    pub fn add_n(&mut self, vars: &[Var]) -> Result<Var> {
        let first = *vars.first().ok_or(Error::EmptyInput("add_n"))?;
        let mut data = vec![0.0; self.data(first).len()];
        for &v in vars {
            if self.shape(v) != self.shape(first) {
                return Err(self.mismatch("add_n", first, v));
            }
            for (o, x) in data.iter_mut().zip(self.data(v)) {
                *o += x;
            }
        }
        let shape = self.shape(first).to_vec();
        let needs = self.needs(vars);
        Ok(self.push(Tensor { shape, data }, Op::AddN(vars.to_vec()), needs))
    }

    /// Softmax of a vector; `mask[i] == false` forces output `i` to zero.
    pub fn softmax(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let n = self.data(x).len();
        if self.shape(x).len() != 1 {
            return Err(Error::ShapeMismatch {
                op: "softmax",
                left: self.shape(x).to_vec(),
                right: vec![n],
            });
        }
        if let Some(m) = mask {
            if m.len() != n {
                return Err(Error::ShapeMismatch {
                    op: "softmax mask",
                    left: vec![n],
                    right: vec![m.len()],
                });
            }
        }
        let data = softmax_values(self.data(x), mask)?;
        let needs = self.needs(&[x]);
        Ok(self.push(Tensor { shape: vec![n], data }, Op::Softmax(x), needs))
    }

    /// `-log softmax(logits)[target]` as a scalar.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let n = self.data(logits).len();
        if target >= n {
            return Err(Error::IndexOutOfRange {
                what: "target id",
                index: target,
                len: n,
            });
        }
        let value = -log_softmax_values(self.data(logits))[target];
        let needs = self.needs(&[logits]);
        Ok(self.push(Tensor::scalar(value), Op::CrossEntropy { logits, target }, needs))
    }

    /// Mean binary cross-entropy between `sigmoid(logits)` and `targets`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        let x = self.data(logits);
        if x.len() != targets.len() {
            return Err(Error::ShapeMismatch {
                op: "bce_with_logits",
                left: self.shape(logits).to_vec(),
                right: vec![targets.len()],
            });
        }
        let total: f64 = x
            .iter()
            .zip(targets)
            .map(|(&x, &y)| x.max(0.0) - x * y + (-x.abs()).exp().ln_1p())
            .sum();
        let value = total / x.len() as f64;
        let needs = self.needs(&[logits]);
        Ok(self.push(
            Tensor::scalar(value),
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
            },
            needs,
        ))
    }

    /// Reverse pass from a scalar loss. Consumes the tape.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if self.data(loss).len() != 1 {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        self.consumed = true;
        let nodes = &self.nodes;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        fn slot<'g>(grads: &'g mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> Option<&'g mut [f64]> {
            let node = &nodes[v.0];
            if !node.needs_grad {
                return None;
            }
            Some(grads[v.0].get_or_insert_with(|| vec![0.0; node.value.len()]))
        }

        // Outer products `g xᵀ` into parameter matrices are applied after the
        // sweep, one matrix row at a time, instead of once per use.
        let mut deferred: BTreeMap<usize, Vec<(Vec<f64>, usize)>> = BTreeMap::new();

        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if matches!(node.op, Op::Leaf) || !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let out = &node.value.data;
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let k = nodes[a.0].value.shape[1];
                    let n = nodes[b.0].value.shape[1];
                    let (ad, bd) = (&nodes[a.0].value.data, &nodes[b.0].value.data);
                    if let Some(da) = slot(&mut grads, nodes, *a) {
                        for (da_row, g_row) in da.chunks_exact_mut(k).zip(g.chunks_exact(n)) {
                            for (d, b_row) in da_row.iter_mut().zip(bd.chunks_exact(n)) {
                                *d += dot(g_row, b_row);
                            }
                        }
                    }
                    if let Some(db) = slot(&mut grads, nodes, *b) {
                        for (a_row, g_row) in ad.chunks_exact(k).zip(g.chunks_exact(n)) {
                            for (&av, db_row) in a_row.iter().zip(db.chunks_exact_mut(n)) {
                                if av != 0.0 {
                                    db_row.iter_mut().zip(g_row).for_each(|(d, gv)| *d += av * gv);
                                }
                            }
                        }
                    }
                }
                Op::MatMulNt(a, b) => {
                    let k = nodes[a.0].value.shape[1];
                    let n = nodes[b.0].value.shape[0];
                    let (ad, bd) = (&nodes[a.0].value.data, &nodes[b.0].value.data);
                    if let Some(da) = slot(&mut grads, nodes, *a) {
                        for (da_row, g_row) in da.chunks_exact_mut(k).zip(g.chunks_exact(n)) {
                            for (&gv, b_row) in g_row.iter().zip(bd.chunks_exact(k)) {
                                if gv != 0.0 {
                                    da_row.iter_mut().zip(b_row).for_each(|(d, bv)| *d += gv * bv);
                                }
                            }
                        }
                    }
                    if let Some(db) = slot(&mut grads, nodes, *b) {
                        for (a_row, g_row) in ad.chunks_exact(k).zip(g.chunks_exact(n)) {
                            for (&gv, db_row) in g_row.iter().zip(db.chunks_exact_mut(k)) {
                                if gv != 0.0 {
                                    db_row.iter_mut().zip(a_row).for_each(|(d, av)| *d += gv * av);
                                }
                            }
                        }
                    }
                }
                Op::MatVec(m, x) => {
                    let c = nodes[m.0].value.shape[1];
                    let (md, xd) = (&nodes[m.0].value.data, &nodes[x.0].value.data);
                    if let Some(dx) = slot(&mut grads, nodes, *x) {
                        for (row, &gi) in md.chunks_exact(c).zip(&g) {
                            if gi != 0.0 {
                                dx.iter_mut().zip(row).for_each(|(d, mv)| *d += gi * mv);
                            }
                        }
                    }
                    if matches!(nodes[m.0].op, Op::Leaf) {
                        if nodes[m.0].needs_grad {
                            deferred.entry(m.0).or_default().push((g, x.0));
                        }
                    } else if let Some(dm) = slot(&mut grads, nodes, *m) {
                        for (row, &gi) in dm.chunks_exact_mut(c).zip(&g) {
                            if gi != 0.0 {
                                row.iter_mut().zip(xd).for_each(|(d, xv)| *d += gi * xv);
                            }
                        }
                    }
                }
                Op::VecMat(x, m) => {
                    let c = nodes[m.0].value.shape[1];
                    let (xd, md) = (&nodes[x.0].value.data, &nodes[m.0].value.data);
                    if let Some(dx) = slot(&mut grads, nodes, *x) {
                        for (d, row) in dx.iter_mut().zip(md.chunks_exact(c)) {
                            *d += dot(row, &g);
                        }
                    }
                    if let Some(dm) = slot(&mut grads, nodes, *m) {
                        for (row, &xi) in dm.chunks_exact_mut(c).zip(xd) {
                            if xi != 0.0 {
                                row.iter_mut().zip(&g).for_each(|(d, gv)| *d += xi * gv);
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    if let Some(da) = slot(&mut grads, nodes, *a) {
                        da.iter_mut().zip(&g).for_each(|(d, v)| *d += v);
                    }
                    if let Some(db) = slot(&mut grads, nodes, *b) {
                        db.iter_mut().zip(&g).for_each(|(d, v)| *d += v);
                    }
                }
                Op::Sub(a, b) => {
                    if let Some(da) = slot(&mut grads, nodes, *a) {
                        da.iter_mut().zip(&g).for_each(|(d, v)| *d += v);
                    }
                    if let Some(db) = slot(&mut grads, nodes, *b) {
                        db.iter_mut().zip(&g).for_each(|(d, v)| *d -= v);
                    }
                }
                Op::Mul(a, b) => {
                    let (ad, bd) = (&nodes[a.0].value.data, &nodes[b.0].value.data);
                    if let Some(da) = slot(&mut grads, nodes, *a) {
                        for ((d, v), y) in da.iter_mut().zip(&g).zip(bd) {
                            *d += v * y;
                        }
                    }
                    if let Some(db) = slot(&mut grads, nodes, *b) {
                        for ((d, v), x) in db.iter_mut().zip(&g).zip(ad) {
                            *d += v * x;
                        }
                    }
                }
                Op::AddRows(m, v) => {
                    let c = nodes[v.0].value.data.len();
                    if let Some(dm) = slot(&mut grads, nodes, *m) {
                        dm.iter_mut().zip(&g).for_each(|(d, x)| *d += x);
                    }
                    if let Some(dv) = slot(&mut grads, nodes, *v) {
                        for row in g.chunks(c) {
                            dv.iter_mut().zip(row).for_each(|(d, x)| *d += x);
                        }
                    }
                }
                Op::Scale(a, c) => {
                    if let Some(da) = slot(&mut grads, nodes, *a) {
                        da.iter_mut().zip(&g).for_each(|(d, v)| *d += c * v);
                    }
                }
                Op::MulConst(a, k) => {
                    if let Some(da) = slot(&mut grads, nodes, *a) {
                        for ((d, v), kv) in da.iter_mut().zip(&g).zip(k) {
                            *d += v * kv;
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    if let Some(da) = slot(&mut grads, nodes, *a) {
                        for ((d, v), y) in da.iter_mut().zip(&g).zip(out) {
                            *d += v * y * (1.0 - y);
                        }
                    }
                }
                Op::Tanh(a) => {
                    if let Some(da) = slot(&mut grads, nodes, *a) {
                        for ((d, v), y) in da.iter_mut().zip(&g).zip(out) {
                            *d += v * (1.0 - y * y);
                        }
                    }
                }
                Op::Concat { parts, axis } => {
                    let outer: usize = node.value.shape[..*axis].iter().product();
                    let mut offset = 0;
                    for o in 0..outer {
                        for p in parts {
                            let inner: usize = nodes[p.0].value.shape[*axis..].iter().product();
                            if let Some(dp) = slot(&mut grads, nodes, *p) {
                                dp[o * inner..(o + 1) * inner]
                                    .iter_mut()
                                    .zip(&g[offset..offset + inner])
                                    .for_each(|(d, v)| *d += v);
                            }
                            offset += inner;
                        }
                    }
                }
                Op::Slice { input, start } => {
                    if let Some(da) = slot(&mut grads, nodes, *input) {
                        da[*start..*start + g.len()]
                            .iter_mut()
                            .zip(&g)
                            .for_each(|(d, v)| *d += v);
                    }
                }
                Op::Stack(rows) => {
                    let width = node.value.shape[1];
                    for (r, v) in rows.iter().enumerate() {
                        if let Some(dv) = slot(&mut grads, nodes, *v) {
                            dv.iter_mut()
                                .zip(&g[r * width..(r + 1) * width])
                                .for_each(|(d, x)| *d += x);
                        }
                    }
                }
                Op::Row { matrix, index } => {
                    let c = g.len();
                    if let Some(dm) = slot(&mut grads, nodes, *matrix) {
                        dm[index * c..(index + 1) * c]
                            .iter_mut()
                            .zip(&g)
                            .for_each(|(d, v)| *d += v);
                    }
                }
                Op::Sum(a) => {
                    if let Some(da) = slot(&mut grads, nodes, *a) {
                        da.iter_mut().for_each(|d| *d += g[0]);
                    }
                }
                Op::AddN(vars) => {
                    for v in vars {
                        if let Some(dv) = slot(&mut grads, nodes, *v) {
                            dv.iter_mut().zip(&g).for_each(|(d, x)| *d += x);
                        }
                    }
                }
                Op::Softmax(x) => {
                    let dot: f64 = g.iter().zip(out).map(|(a, b)| a * b).sum();
                    if let Some(dx) = slot(&mut grads, nodes, *x) {
                        for ((d, gv), y) in dx.iter_mut().zip(&g).zip(out) {
                            *d += y * (gv - dot);
                        }
                    }
                }
                Op::CrossEntropy { logits, target } => {
                    let probs = softmax_values(&nodes[logits.0].value.data, None)?;
                    if let Some(dl) = slot(&mut grads, nodes, *logits) {
                        for (j, (d, p)) in dl.iter_mut().zip(&probs).enumerate() {
                            let onehot = if j == *target { 1.0 } else { 0.0 };
                            *d += g[0] * (p - onehot);
                        }
                    }
                }
                Op::BceWithLogits { logits, targets } => {
                    let x = &nodes[logits.0].value.data;
                    let n = x.len() as f64;
                    if let Some(dl) = slot(&mut grads, nodes, *logits) {
                        for ((d, xv), y) in dl.iter_mut().zip(x).zip(targets) {
                            *d += g[0] * (sigmoid(*xv) - y) / n;
                        }
                    }
                }
            }
        }
        for (leaf, uses) in deferred {
            let c = nodes[leaf].value.shape[1];
            let dm = slot(&mut grads, nodes, Var(leaf)).expect("deferred leaves need gradients");
            for (i, row) in dm.chunks_exact_mut(c).enumerate() {
                for (g, x) in &uses {
                    let gi = g[i];
                    if gi != 0.0 {
                        row.iter_mut().zip(&nodes[*x].value.data).for_each(|(d, xv)| *d += gi * xv);
                    }
                }
            }
        }
        for (i, node) in nodes.iter().enumerate() {
            if !(matches!(node.op, Op::Leaf) && node.needs_grad) {
                grads[i] = None;
            }
        }
        self.grads = grads;
        Ok(())
    }
}

use std::rc::Rc;

use super::tape::{Node, Op, Var};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Binary {
    Add,
    Sub,
    Mul,
}

/// Pointwise nonlinearities.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Relu,
    /// Tanh approximation of the Gaussian error linear unit.
    Gelu,
    Exp,
    Log,
    Tanh,
    Sigmoid,
    Softplus,
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

impl Unary {
    fn name(self) -> &'static str {
        match self {
            Unary::Relu => "relu",
            Unary::Gelu => "gelu",
            Unary::Exp => "exp",
            Unary::Log => "log",
            Unary::Tanh => "tanh",
            Unary::Sigmoid => "sigmoid",
            Unary::Softplus => "softplus",
        }
    }

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Relu => x.max(0.0),
            Unary::Gelu => 0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh()),
            Unary::Exp => x.exp(),
            Unary::Log => x.ln(),
            Unary::Tanh => x.tanh(),
            Unary::Sigmoid => sigmoid(x),
            Unary::Softplus => softplus(x),
        }
    }

    /// Derivative given the input `x` and output `y`.
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::Gelu => {
                let th = (GELU_K * (x + GELU_C * x * x * x)).tanh();
                0.5 * (1.0 + th)
                    + 0.5 * x * (1.0 - th * th) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
            }
            Unary::Exp => y,
            Unary::Log => 1.0 / x,
            Unary::Tanh => 1.0 - y * y,
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Softplus => sigmoid(x),
        }
    }
}

/// Output shape of a broadcasting binary op. The smaller operand must be a
/// scalar or a trailing suffix of the larger one.
fn broadcast_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Vec<usize>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa == sb {
        return Ok(sa.to_vec());
    }
    let err = || Error::Shape {
        op,
        left: sa.to_vec(),
        right: sb.to_vec(),
    };
    let (big, small) = if (a.len(), sa.len()) >= (b.len(), sb.len()) {
        (sa, sb)
    } else {
        (sb, sa)
    };
    let small_len: usize = small.iter().product();
    if small_len == 1 || big.ends_with(small) {
        Ok(big.to_vec())
    } else if big.len() >= small.len() && big.iter().product::<usize>() % small_len == 0 {
        // Trailing suffix after stripping leading unit axes, e.g. [1, d] against [n, d].
        let trimmed: Vec<usize> = small.iter().copied().skip_while(|&d| d == 1).collect();
        if big.ends_with(&trimmed) {
            Ok(big.to_vec())
        } else {
            Err(err())
        }
    } else {
        Err(err())
    }
}

impl<'t> Var<'t> {
    fn same_tape(&self, other: &Var<'t>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "vars from different tapes"
        );
    }

    fn binary(self, other: Var<'t>, kind: Binary) -> Result<Var<'t>> {
        self.same_tape(&other);
        let (a, b) = (self.value(), other.value());
        let name = match kind {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
        };
        let shape = broadcast_shape(name, &a, &b)?;
        let n: usize = shape.iter().product();
        let (ad, bd) = (a.data(), b.data());
        let (la, lb) = (ad.len(), bd.len());
        let mut out = Vec::with_capacity(n);
        match kind {
            Binary::Add => out.extend((0..n).map(|i| ad[i % la] + bd[i % lb])),
            Binary::Sub => out.extend((0..n).map(|i| ad[i % la] - bd[i % lb])),
            Binary::Mul => out.extend((0..n).map(|i| ad[i % la] * bd[i % lb])),
        }
        let tracked = self.is_tracked() || other.is_tracked();
        Ok(self.tape.push(
            Tensor::from_parts(shape, out),
            Op::Binary {
                kind,
                a: self.id,
                b: other.id,
            },
            tracked,
        ))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Binary::Add)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Binary::Sub)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Binary::Mul)
    }

    pub fn square(self) -> Result<Var<'t>> {
        self.binary(self, Binary::Mul)
    }

    pub fn scale(self, c: f64) -> Result<Var<'t>> {
        let a = self.value();
        let out = a.data().iter().map(|x| x * c).collect();
        Ok(self.tape.push(
            Tensor::from_parts(a.shape().to_vec(), out),
            Op::Scale { a: self.id, c },
            self.is_tracked(),
        ))
    }

    /// Adds a constant to every element.
    pub fn shift(self, c: f64) -> Result<Var<'t>> {
        let a = self.value();
        let out = a.data().iter().map(|x| x + c).collect();
        Ok(self.tape.push(
            Tensor::from_parts(a.shape().to_vec(), out),
            Op::Shift { a: self.id },
            self.is_tracked(),
        ))
    }

    pub fn neg(self) -> Result<Var<'t>> {
        self.scale(-1.0)
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        let (a, b) = (self.value(), other.value());
        if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(Error::Shape {
                op: "matmul",
                left: a.shape().to_vec(),
                right: b.shape().to_vec(),
            });
        }
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let out = matmul_raw(a.data(), b.data(), m, k, n);
        Ok(self.tape.push(
            Tensor::from_parts(vec![m, n], out),
            Op::MatMul {
                a: self.id,
                b: other.id,
            },
            self.is_tracked() || other.is_tracked(),
        ))
    }

    /// Transpose of a matrix (copying).
    pub fn t(self) -> Result<Var<'t>> {
        let a = self.value();
        if a.shape().len() != 2 {
            return Err(Error::Shape {
                op: "transpose",
                left: a.shape().to_vec(),
                right: vec![],
            });
        }
        let (m, n) = (a.shape()[0], a.shape()[1]);
        let out = transpose_raw(a.data(), m, n);
        Ok(self.tape.push(
            Tensor::from_parts(vec![n, m], out),
            Op::Transpose { a: self.id },
            self.is_tracked(),
        ))
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Var<'t>> {
        let a = (*self.value()).clone().reshaped(shape)?;
        Ok(self
            .tape
            .push(a, Op::Reshape { a: self.id }, self.is_tracked()))
    }

    pub fn unary(self, kind: Unary) -> Result<Var<'t>> {
        let a = self.value();
        let mut out = Vec::with_capacity(a.len());
        for (i, &x) in a.data().iter().enumerate() {
            if kind == Unary::Log && x <= 0.0 {
                return Err(Error::Numeric {
                    op: kind.name(),
                    index: i,
                    value: x,
                });
            }
            let y = kind.apply(x);
            if !y.is_finite() {
                return Err(Error::Numeric {
                    op: kind.name(),
                    index: i,
                    value: x,
                });
            }
            out.push(y);
        }
        Ok(self.tape.push(
            Tensor::from_parts(a.shape().to_vec(), out),
            Op::Unary { a: self.id, kind },
            self.is_tracked(),
        ))
    }

    pub fn relu(self) -> Result<Var<'t>> {
        self.unary(Unary::Relu)
    }

    pub fn gelu(self) -> Result<Var<'t>> {
        self.unary(Unary::Gelu)
    }

    pub fn exp(self) -> Result<Var<'t>> {
        self.unary(Unary::Exp)
    }

    pub fn log(self) -> Result<Var<'t>> {
        self.unary(Unary::Log)
    }

    pub fn tanh(self) -> Result<Var<'t>> {
        self.unary(Unary::Tanh)
    }

    pub fn sigmoid(self) -> Result<Var<'t>> {
        self.unary(Unary::Sigmoid)
    }

    pub fn softplus(self) -> Result<Var<'t>> {
        self.unary(Unary::Softplus)
    }

    /// Softmax over the last axis.
    pub fn softmax(self) -> Result<Var<'t>> {
        let a = self.value();
        let c = a.cols();
        let mut out = a.data().to_vec();
        for row in out.chunks_exact_mut(c) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        Ok(self.tape.push(
            Tensor::from_parts(a.shape().to_vec(), out),
            Op::Softmax { a: self.id },
            self.is_tracked(),
        ))
    }

    pub fn sum(self) -> Result<Var<'t>> {
        let s = self.value().data().iter().sum();
        Ok(self
            .tape
            .push(Tensor::scalar(s), Op::Sum { a: self.id }, self.is_tracked()))
    }

    pub fn mean(self) -> Result<Var<'t>> {
        let a = self.value();
        let s = a.data().iter().sum::<f64>() / a.len() as f64;
        Ok(self
            .tape
            .push(Tensor::scalar(s), Op::Mean { a: self.id }, self.is_tracked()))
    }

    /// Column means of an `n × d` matrix, as `1 × d`.
    pub fn mean_rows(self) -> Result<Var<'t>> {
        let a = self.value();
        let (r, c) = (a.rows(), a.cols());
        let mut out = vec![0.0; c];
        for row in a.data().chunks_exact(c) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= r as f64);
        Ok(self.tape.push(
            Tensor::from_parts(vec![1, c], out),
            Op::MeanRows { a: self.id },
            self.is_tracked(),
        ))
    }

    /// Column maxima of an `n × d` matrix, as `1 × d`. Ties go to the first row.
    pub fn max_rows(self) -> Result<Var<'t>> {
        let a = self.value();
        let c = a.cols();
        let mut out = a.row(0).to_vec();
        let mut arg = vec![0usize; c];
        for (r, row) in a.data().chunks_exact(c).enumerate().skip(1) {
            for j in 0..c {
                if row[j] > out[j] {
                    out[j] = row[j];
                    arg[j] = r;
                }
            }
        }
        Ok(self.tape.push(
            Tensor::from_parts(vec![1, c], out),
            Op::MaxRows { a: self.id, arg },
            self.is_tracked(),
        ))
    }

    /// Max-pool over consecutive groups of `group` rows: `(n·group) × d → n × d`.
    pub fn group_max(self, group: usize) -> Result<Var<'t>> {
        let a = self.value();
        let (r, c) = (a.rows(), a.cols());
        if group == 0 || r % group != 0 {
            return Err(Error::Shape {
                op: "group_max",
                left: a.shape().to_vec(),
                right: vec![group],
            });
        }
        let n = r / group;
        let d = a.data();
        let mut out = vec![f64::NEG_INFINITY; n * c];
        let mut arg = vec![0usize; n * c];
        for g in 0..n {
            for k in 0..group {
                let row = g * group + k;
                let src = &d[row * c..(row + 1) * c];
                let dst = &mut out[g * c..(g + 1) * c];
                for j in 0..c {
                    if src[j] > dst[j] {
                        dst[j] = src[j];
                        arg[g * c + j] = row;
                    }
                }
            }
        }
        Ok(self.tape.push(
            Tensor::from_parts(vec![n, c], out),
            Op::GroupMax { a: self.id, arg },
            self.is_tracked(),
        ))
    }

    /// Row gather (`out[i] = self[index[i]]`). Rows may repeat.
    pub fn gather_rows(self, index: impl Into<Rc<[usize]>>) -> Result<Var<'t>> {
        let index: Rc<[usize]> = index.into();
        let a = self.value();
        let (r, c) = (a.rows(), a.cols());
        if index.is_empty() {
            return Err(Error::contract("gather_rows with an empty index"));
        }
        let mut out = Vec::with_capacity(index.len() * c);
        for &i in index.iter() {
            if i >= r {
                return Err(Error::Shape {
                    op: "gather_rows",
                    left: a.shape().to_vec(),
                    right: vec![i],
                });
            }
            out.extend_from_slice(a.row(i));
        }
        Ok(self.tape.push(
            Tensor::from_parts(vec![index.len(), c], out),
            Op::Gather { a: self.id, index },
            self.is_tracked(),
        ))
    }

    pub fn concat_cols(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("concat_cols of nothing"))?;
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let r = values[0].rows();
        for v in &values {
            if v.rows() != r || v.shape().len() != 2 {
                return Err(Error::Shape {
                    op: "concat_cols",
                    left: values[0].shape().to_vec(),
                    right: v.shape().to_vec(),
                });
            }
        }
        let total: usize = values.iter().map(|v| v.cols()).sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for v in &values {
                out.extend_from_slice(v.row(i));
            }
        }
        Ok(first.tape.push(
            Tensor::from_parts(vec![r, total], out),
            Op::ConcatCols {
                parts: parts.iter().map(|p| p.id).collect(),
            },
            parts.iter().any(|p| p.is_tracked()),
        ))
    }

    pub fn concat_rows(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("concat_rows of nothing"))?;
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let c = values[0].cols();
        let mut rows = 0;
        let mut out = Vec::new();
        for v in &values {
            if v.cols() != c || v.shape().len() != 2 {
                return Err(Error::Shape {
                    op: "concat_rows",
                    left: values[0].shape().to_vec(),
                    right: v.shape().to_vec(),
                });
            }
            rows += v.rows();
            out.extend_from_slice(v.data());
        }
        Ok(first.tape.push(
            Tensor::from_parts(vec![rows, c], out),
            Op::ConcatRows {
                parts: parts.iter().map(|p| p.id).collect(),
            },
            parts.iter().any(|p| p.is_tracked()),
        ))
    }

    pub fn slice_cols(self, start: usize, end: usize) -> Result<Var<'t>> {
        let a = self.value();
        let (r, c) = (a.rows(), a.cols());
        if start >= end || end > c || a.shape().len() != 2 {
            return Err(Error::Shape {
                op: "slice_cols",
                left: a.shape().to_vec(),
                right: vec![start, end],
            });
        }
        let w = end - start;
        let mut out = Vec::with_capacity(r * w);
        for i in 0..r {
            out.extend_from_slice(&a.row(i)[start..end]);
        }
        Ok(self.tape.push(
            Tensor::from_parts(vec![r, w], out),
            Op::SliceCols { a: self.id, start },
            self.is_tracked(),
        ))
    }

    /// Normalizes each row to zero mean and unit variance (no affine part).
    pub fn layer_norm(self, eps: f64) -> Result<Var<'t>> {
        let a = self.value();
        let c = a.cols();
        let mut out = a.data().to_vec();
        let mut inv_std = Vec::with_capacity(a.rows());
        for row in out.chunks_exact_mut(c) {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * inv;
            }
            inv_std.push(inv);
        }
        Ok(self.tape.push(
            Tensor::from_parts(a.shape().to_vec(), out),
            Op::LayerNorm {
                a: self.id,
                inv_std,
            },
            self.is_tracked(),
        ))
    }

    /// Applies a per-row affine map: `self` is an `n × 12` field (row-major
    /// 3×3 matrix then translation), `points` is `n × 3`.
    pub fn apply_field(self, points: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&points);
        let (f, p) = (self.value(), points.value());
        if f.shape() != [p.rows(), 12] || p.shape() != [f.rows(), 3] {
            return Err(Error::Shape {
                op: "apply_field",
                left: f.shape().to_vec(),
                right: p.shape().to_vec(),
            });
        }
        let n = p.rows();
        let mut out = vec![0.0; n * 3];
        for i in 0..n {
            let fr = f.row(i);
            let pr = p.row(i);
            for r in 0..3 {
                out[i * 3 + r] =
                    fr[3 * r] * pr[0] + fr[3 * r + 1] * pr[1] + fr[3 * r + 2] * pr[2] + fr[9 + r];
            }
        }
        Ok(self.tape.push(
            Tensor::from_parts(vec![n, 3], out),
            Op::ApplyField {
                field: self.id,
                points: points.id,
            },
            self.is_tracked() || points.is_tracked(),
        ))
    }

    /// Scalar function of `self` evaluated outside the tape, with its
    /// gradient supplied eagerly (used for nearest-neighbour losses).
    pub fn eager_scalar(self, value: f64, grad: Vec<f64>) -> Result<Var<'t>> {
        if grad.len() != self.value().len() {
            return Err(Error::Shape {
                op: "eager_scalar",
                left: self.shape(),
                right: vec![grad.len()],
            });
        }
        Ok(self.tape.push(
            Tensor::scalar(value),
            Op::Eager { a: self.id, grad },
            self.is_tracked(),
        ))
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

fn slot<'g>(
    nodes: &[Node],
    grads: &'g mut [Option<Vec<f64>>],
    id: usize,
) -> Option<&'g mut Vec<f64>> {
    if !nodes[id].tracked {
        return None;
    }
    let len = nodes[id].value.len();
    Some(grads[id].get_or_insert_with(|| vec![0.0; len]))
}

/// Propagates `g` (gradient of node `id`) into its parents.
pub(crate) fn backprop(nodes: &[Node], id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let out = &nodes[id].value;
    match &nodes[id].op {
        Op::Leaf | Op::Param => {}
        Op::Binary { kind, a, b } => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            let (la, lb) = (av.len(), bv.len());
            let (ad, bd) = (av.data(), bv.data());
            if let Some(ga) = slot(nodes, grads, *a) {
                match kind {
                    Binary::Add | Binary::Sub => {
                        for (i, gi) in g.iter().enumerate() {
                            ga[i % la] += gi;
                        }
                    }
                    Binary::Mul => {
                        for (i, gi) in g.iter().enumerate() {
                            ga[i % la] += gi * bd[i % lb];
                        }
                    }
                }
            }
            if let Some(gb) = slot(nodes, grads, *b) {
                match kind {
                    Binary::Add => {
                        for (i, gi) in g.iter().enumerate() {
                            gb[i % lb] += gi;
                        }
                    }
                    Binary::Sub => {
                        for (i, gi) in g.iter().enumerate() {
                            gb[i % lb] -= gi;
                        }
                    }
                    Binary::Mul => {
                        for (i, gi) in g.iter().enumerate() {
                            gb[i % lb] += gi * ad[i % la];
                        }
                    }
                }
            }
        }
        Op::Scale { a, c } => {
            if let Some(ga) = slot(nodes, grads, *a) {
                for (d, gi) in ga.iter_mut().zip(g) {
                    *d += gi * c;
                }
            }
        }
        Op::Shift { a } | Op::Reshape { a } => {
            if let Some(ga) = slot(nodes, grads, *a) {
                for (d, gi) in ga.iter_mut().zip(g) {
                    *d += gi;
                }
            }
        }
        Op::MatMul { a, b } => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
            if let Some(ga) = slot(nodes, grads, *a) {
                // dA = dC · Bᵀ
                let bd = bv.data();
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let brow = &bd[p * n..(p + 1) * n];
                        let mut s = 0.0;
                        for (x, y) in grow.iter().zip(brow) {
                            s += x * y;
                        }
                        ga[i * k + p] += s;
                    }
                }
            }
            if let Some(gb) = slot(nodes, grads, *b) {
                // dB = Aᵀ · dC
                let ad = av.data();
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let aip = ad[i * k + p];
                        if aip == 0.0 {
                            continue;
                        }
                        let dst = &mut gb[p * n..(p + 1) * n];
                        for (d, gi) in dst.iter_mut().zip(grow) {
                            *d += aip * gi;
                        }
                    }
                }
            }
        }
        Op::Transpose { a } => {
            if let Some(ga) = slot(nodes, grads, *a) {
                let (m, n) = (out.shape()[1], out.shape()[0]);
                for i in 0..m {
                    for j in 0..n {
                        ga[i * n + j] += g[j * m + i];
                    }
                }
            }
        }
        Op::Unary { a, kind } => {
            let x = nodes[*a].value.data();
            let y = out.data();
            if let Some(ga) = slot(nodes, grads, *a) {
                for i in 0..g.len() {
                    ga[i] += g[i] * kind.derivative(x[i], y[i]);
                }
            }
        }
        Op::Softmax { a } => {
            let c = out.cols();
            if let Some(ga) = slot(nodes, grads, *a) {
                for ((yr, gr), dr) in out
                    .data()
                    .chunks_exact(c)
                    .zip(g.chunks_exact(c))
                    .zip(ga.chunks_exact_mut(c))
                {
                    let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                    for j in 0..c {
                        dr[j] += yr[j] * (gr[j] - dot);
                    }
                }
            }
        }
        Op::Sum { a } => {
            if let Some(ga) = slot(nodes, grads, *a) {
                ga.iter_mut().for_each(|d| *d += g[0]);
            }
        }
        Op::Mean { a } => {
            if let Some(ga) = slot(nodes, grads, *a) {
                let s = g[0] / ga.len() as f64;
                ga.iter_mut().for_each(|d| *d += s);
            }
        }
        Op::MeanRows { a } => {
            let c = out.cols();
            if let Some(ga) = slot(nodes, grads, *a) {
                let r = ga.len() / c;
                for row in ga.chunks_exact_mut(c) {
                    for (d, gi) in row.iter_mut().zip(g) {
                        *d += gi / r as f64;
                    }
                }
            }
        }
        Op::MaxRows { a, arg } => {
            let c = out.cols();
            if let Some(ga) = slot(nodes, grads, *a) {
                for j in 0..c {
                    ga[arg[j] * c + j] += g[j];
                }
            }
        }
        Op::GroupMax { a, arg } => {
            let c = out.cols();
            if let Some(ga) = slot(nodes, grads, *a) {
                for (i, gi) in g.iter().enumerate() {
                    ga[arg[i] * c + i % c] += gi;
                }
            }
        }
        Op::Gather { a, index } => {
            let c = out.cols();
            if let Some(ga) = slot(nodes, grads, *a) {
                for (row, &src) in index.iter().enumerate() {
                    let dst = &mut ga[src * c..(src + 1) * c];
                    for (d, gi) in dst.iter_mut().zip(&g[row * c..(row + 1) * c]) {
                        *d += gi;
                    }
                }
            }
        }
        Op::ConcatCols { parts } => {
            let total = out.cols();
            let r = out.rows();
            let mut offset = 0;
            for &p in parts {
                let w = nodes[p].value.cols();
                if let Some(gp) = slot(nodes, grads, p) {
                    for i in 0..r {
                        let src = &g[i * total + offset..i * total + offset + w];
                        for (d, s) in gp[i * w..(i + 1) * w].iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
                offset += w;
            }
        }
        Op::ConcatRows { parts } => {
            let mut offset = 0;
            for &p in parts {
                let len = nodes[p].value.len();
                if let Some(gp) = slot(nodes, grads, p) {
                    for (d, s) in gp.iter_mut().zip(&g[offset..offset + len]) {
                        *d += s;
                    }
                }
                offset += len;
            }
        }
        Op::SliceCols { a, start } => {
            let w = out.cols();
            let c = nodes[*a].value.cols();
            if let Some(ga) = slot(nodes, grads, *a) {
                for i in 0..out.rows() {
                    for j in 0..w {
                        ga[i * c + start + j] += g[i * w + j];
                    }
                }
            }
        }
        Op::LayerNorm { a, inv_std } => {
            let c = out.cols();
            if let Some(ga) = slot(nodes, grads, *a) {
                for (r, ((yr, gr), dr)) in out
                    .data()
                    .chunks_exact(c)
                    .zip(g.chunks_exact(c))
                    .zip(ga.chunks_exact_mut(c))
                    .enumerate()
                {
                    let gsum: f64 = gr.iter().sum();
                    let gy: f64 = gr.iter().zip(yr).map(|(g, y)| g * y).sum();
                    let k = inv_std[r] / c as f64;
                    for j in 0..c {
                        dr[j] += k * (c as f64 * gr[j] - gsum - yr[j] * gy);
                    }
                }
            }
        }
        Op::ApplyField { field, points } => {
            let (fv, pv) = (&nodes[*field].value, &nodes[*points].value);
            let n = pv.rows();
            if let Some(gf) = slot(nodes, grads, *field) {
                for i in 0..n {
                    let p = pv.row(i);
                    for r in 0..3 {
                        let gr = g[i * 3 + r];
                        for c in 0..3 {
                            gf[i * 12 + 3 * r + c] += gr * p[c];
                        }
                        gf[i * 12 + 9 + r] += gr;
                    }
                }
            }
            if let Some(gp) = slot(nodes, grads, *points) {
                for i in 0..n {
                    let f = fv.row(i);
                    for c in 0..3 {
                        let mut s = 0.0;
                        for r in 0..3 {
                            s += g[i * 3 + r] * f[3 * r + c];
                        }
                        gp[i * 3 + c] += s;
                    }
                }
            }
        }
        Op::Eager { a, grad } => {
            if let Some(ga) = slot(nodes, grads, *a) {
                for (d, s) in ga.iter_mut().zip(grad) {
                    *d += g[0] * s;
                }
            }
        }
        Op::Scan(node) => super::scan::backprop(nodes, node, g, grads),
    }
}

pub(crate) fn accumulate_into(
    nodes: &[Node],
    grads: &mut [Option<Vec<f64>>],
    id: usize,
    src: &[f64],
) {
    if let Some(dst) = slot(nodes, grads, id) {
        for (d, s) in dst.iter_mut().zip(src) {
            *d += s;
        }
    }
}

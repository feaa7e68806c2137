//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Nodes are appended in evaluation order, so walking the tape backwards is
//! a valid reverse topological order. A tape is single-owner: build one per
//! sample, run [`Tape::backward`], and merge the resulting [`Gradients`].

use std::collections::HashMap;

use super::params::{Gradients, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulScalar(Var, Var),
    MulCol(Var, Var),
    Affine(Var, f64),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    GatherRows(Var, Vec<usize>),
    Softmax(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Gelu(Var),
    Sin(Var),
    Cos(Var),
    Sum(Var),
    Mean(Var),
    BceWithLogits(Var, Vec<f64>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
    param_order: Vec<String>,
    frozen: bool,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    /// A tape whose parameters are constants: gradients flow only into
    /// leaves created with `requires_grad = true`.
    pub fn frozen() -> Tape {
        Tape {
            frozen: true,
            ..Tape::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Leaf bound to a named parameter; repeated calls return the same var.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let t = store
            .get(name)
            .ok_or_else(|| Error::Argument(format!("unknown parameter {name:?}")))?
            .clone();
        let v = self.leaf(t, !self.frozen);
        self.params.insert(name.to_string(), v);
        self.param_order.push(name.to_string());
        Ok(v)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.as_matrix()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.shape(a);
        let (k2, m) = self.shape(b);
        if k != k2 {
            return Err(Error::dim("matmul", format!("({n}×{k}) · ({k2}×{m})")));
        }
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let orow = &mut out[i * m..(i + 1) * m];
            for x in 0..k {
                let aix = av[i * k + x];
                if aix == 0.0 {
                    continue;
                }
                let brow = &bv[x * m..(x + 1) * m];
                for (o, bb) in orow.iter_mut().zip(brow) {
                    *o += aix * bb;
                }
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(n, m, out)?, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (n, m) = self.shape(a);
        let av = self.value(a).data();
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                out[j * n + i] = av[i * m + j];
            }
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::Transpose(a), rg))
    }

    fn same_shape(&self, name: &'static str, a: Var, b: Var) -> Result<(usize, usize)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::dim(name, format!("{sa:?} vs {sb:?}")));
        }
        Ok(sa)
    }

    fn zip_with(&mut self, name: &'static str, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let (n, m) = self.same_shape(name, a, b)?;
        let out = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| f(*x, *y)).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(n, m, out)?, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// `a + row` with a `1 × m` row broadcast over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (n, m) = self.shape(a);
        if self.shape(row) != (1, m) {
            return Err(Error::dim("add_row", format!("({n}×{m}) + {:?}", self.shape(row))));
        }
        let r = self.value(row).data();
        let out = self.value(a).data().iter().enumerate().map(|(i, x)| x + r[i % m]).collect();
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(Tensor::matrix(n, m, out)?, Op::AddRow(a, row), rg))
    }

    /// `a * s` for a `1 × 1` var `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.shape(s) != (1, 1) {
            return Err(Error::dim("mul_scalar", format!("scalar operand has shape {:?}", self.shape(s))));
        }
        let (n, m) = self.shape(a);
        let sv = self.value(s).item();
        let out = self.value(a).data().iter().map(|x| x * sv).collect();
        let rg = self.rg(a) || self.rg(s);
        Ok(self.push(Tensor::matrix(n, m, out)?, Op::MulScalar(a, s), rg))
    }

    /// Scales row `i` of `a` by `col[i]`, where `col` is `n × 1`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (n, m) = self.shape(a);
        if self.shape(col) != (n, 1) {
            return Err(Error::dim("mul_col", format!("({n}×{m}) rows scaled by {:?}", self.shape(col))));
        }
        let c = self.value(col).data();
        let out = self.value(a).data().iter().enumerate().map(|(i, x)| x * c[i / m.max(1)]).collect();
        let rg = self.rg(a) || self.rg(col);
        Ok(self.push(Tensor::matrix(n, m, out)?, Op::MulCol(a, col), rg))
    }

    /// `mul * a + add` with constant coefficients.
    pub fn affine(&mut self, a: Var, mul: f64, add: f64) -> Result<Var> {
        let (n, m) = self.shape(a);
        let out = self.value(a).data().iter().map(|x| mul * x + add).collect();
        let rg = self.rg(a);
        Ok(self.push(Tensor::matrix(n, m, out)?, Op::Affine(a, mul), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.affine(a, s, 0.0)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::dim("concat_cols", "no inputs"));
        };
        let n = self.shape(first).0;
        if let Some(bad) = parts.iter().find(|&&p| self.shape(p).0 != n) {
            return Err(Error::dim("concat_cols", format!("row counts {n} vs {}", self.shape(*bad).0)));
        }
        let m: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut out = Vec::with_capacity(n * m);
        for i in 0..n {
            for &p in parts {
                out.extend_from_slice(self.value(p).row_slice(i));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::matrix(n, m, out)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::dim("concat_rows", "no inputs"));
        };
        let m = self.shape(first).1;
        if let Some(bad) = parts.iter().find(|&&p| self.shape(p).1 != m) {
            return Err(Error::dim("concat_rows", format!("column counts {m} vs {}", self.shape(*bad).1)));
        }
        let n: usize = parts.iter().map(|&p| self.shape(p).0).sum();
        let mut out = Vec::with_capacity(n * m);
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::matrix(n, m, out)?, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (n, m) = self.shape(a);
        if start > end || end > m {
            return Err(Error::dim("slice_cols", format!("{start}..{end} of {m} columns")));
        }
        let mut out = Vec::with_capacity(n * (end - start));
        for i in 0..n {
            out.extend_from_slice(&self.value(a).row_slice(i)[start..end]);
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::matrix(n, end - start, out)?, Op::SliceCols(a, start), rg))
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (n, m) = self.shape(a);
        if start > end || end > n {
            return Err(Error::dim("slice_rows", format!("{start}..{end} of {n} rows")));
        }
        let out = self.value(a).data()[start * m..end * m].to_vec();
        let rg = self.rg(a);
        Ok(self.push(Tensor::matrix(end - start, m, out)?, Op::SliceRows(a, start), rg))
    }

    /// Embedding-style row gather; indices may repeat.
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let (n, m) = self.shape(a);
        if let Some(bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::dim("gather_rows", format!("index {bad} out of {n} rows")));
        }
        let mut out = Vec::with_capacity(indices.len() * m);
        for &i in indices {
            out.extend_from_slice(self.value(a).row_slice(i));
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::matrix(indices.len(), m, out)?, Op::GatherRows(a, indices.to_vec()), rg))
    }

    /// Row-wise softmax.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        self.masked_softmax_rows(a, None)
    }

    /// Row-wise softmax restricted to `mask` (row-major, `true` = allowed).
    /// Disallowed entries are exactly 0; rows with no allowed entry are all 0.
    pub fn masked_softmax_rows(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        let (n, m) = self.shape(a);
        if let Some(mask) = mask {
            if mask.len() != n * m {
                return Err(Error::dim("softmax", format!("mask of {} entries for ({n}×{m})", mask.len())));
            }
        }
        let allowed = |idx: usize| mask.is_none_or(|mk| mk[idx]);
        let av = self.value(a).data();
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let row = i * m..(i + 1) * m;
            let max = row.clone().filter(|&j| allowed(j)).map(|j| av[j]).fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let mut z = 0.0;
            for j in row.clone() {
                if allowed(j) {
                    let e = (av[j] - max).exp();
                    out[j] = e;
                    z += e;
                }
            }
            for j in row {
                out[j] /= z;
            }
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::matrix(n, m, out)?, Op::Softmax(a), rg))
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let (n, m) = self.shape(a);
        let out = self.value(a).data().iter().map(|&x| f(x)).collect();
        let rg = self.rg(a);
        Ok(self.push(Tensor::matrix(n, m, out)?, op, rg))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Tanh(a), f64::tanh)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Relu(a), |x| x.max(0.0))
    }

    /// Tanh approximation of GELU.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Gelu(a), |x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()))
    }

    pub fn sin(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Sin(a), f64::sin)
    }

    pub fn cos(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Cos(a), f64::cos)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        Ok(self.push(Tensor::scalar(s), Op::Sum(a), rg))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let n = v.numel();
        if n == 0 {
            return Err(Error::dim("mean", "empty input"));
        }
        let s = v.data().iter().sum::<f64>() / n as f64;
        let rg = self.rg(a);
        Ok(self.push(Tensor::scalar(s), Op::Mean(a), rg))
    }

    /// Mean binary cross-entropy between logits and a constant target.
    pub fn bce_with_logits(&mut self, logits: Var, target: &[f64]) -> Result<Var> {
        let v = self.value(logits);
        if v.numel() != target.len() || target.is_empty() {
            return Err(Error::dim("bce_with_logits", format!("{} logits vs {} targets", v.numel(), target.len())));
        }
        let n = target.len() as f64;
        let loss = v
            .data()
            .iter()
            .zip(target)
            .map(|(&x, &y)| x.max(0.0) - x * y + (-x.abs()).exp().ln_1p())
            .sum::<f64>()
            / n;
        let rg = self.rg(logits);
        Ok(self.push(Tensor::scalar(loss), Op::BceWithLogits(logits, target.to_vec()), rg))
    }

    /// Reverse pass from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.shape(root) != (1, 1) {
            return Err(Error::dim("backward", format!("root must be scalar, got {:?}", self.shape(root))));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::scalar(1.0));
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let mut by_name = std::collections::BTreeMap::new();
        for name in &self.param_order {
            let v = self.params[name];
            if !self.rg(v) {
                continue;
            }
            let g = grads[v.0].take().unwrap_or_else(|| {
                let (r, c) = self.shape(v);
                Tensor::zeros(r, c)
            });
            let g = Tensor::new(self.value(v).shape().to_vec(), g.into_data())?;
            by_name.insert(name.clone(), g);
        }
        let leaves = grads
            .into_iter()
            .enumerate()
            .filter(|(i, g)| g.is_some() && matches!(self.nodes[*i].op, Op::Leaf))
            .map(|(i, g)| (i, g.unwrap()))
            .collect();
        Ok(Gradients::new(by_name, leaves))
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let out = &self.nodes[i].value;
        let gd = g.data();
        let mat = |r: usize, c: usize, d: Vec<f64>| Tensor::matrix(r, c, d).expect("gradient shape");
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (n, k) = self.shape(*a);
                let m = self.shape(*b).1;
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                if self.rg(*a) {
                    let mut da = vec![0.0; n * k];
                    for r in 0..n {
                        for x in 0..k {
                            da[r * k + x] = (0..m).map(|j| gd[r * m + j] * bv[x * m + j]).sum();
                        }
                    }
                    self.accumulate(grads, *a, mat(n, k, da));
                }
                if self.rg(*b) {
                    let mut db = vec![0.0; k * m];
                    for r in 0..n {
                        for x in 0..k {
                            let arx = av[r * k + x];
                            if arx == 0.0 {
                                continue;
                            }
                            for j in 0..m {
                                db[x * m + j] += arx * gd[r * m + j];
                            }
                        }
                    }
                    self.accumulate(grads, *b, mat(k, m, db));
                }
            }
            Op::Transpose(a) => {
                let (n, m) = self.shape(*a);
                let mut da = vec![0.0; n * m];
                for r in 0..n {
                    for c in 0..m {
                        da[r * m + c] = gd[c * n + r];
                    }
                }
                self.accumulate(grads, *a, mat(n, m, da));
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                let mut neg = g.clone();
                neg.scale_in_place(-1.0);
                self.accumulate(grads, *b, neg);
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.clone());
                let (n, m) = self.shape(*a);
                let mut dr = vec![0.0; m];
                for r in 0..n {
                    for c in 0..m {
                        dr[c] += gd[r * m + c];
                    }
                }
                self.accumulate(grads, *row, mat(1, m, dr));
            }
            Op::Mul(a, b) => {
                let (n, m) = self.shape(*a);
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                if self.rg(*a) {
                    self.accumulate(grads, *a, mat(n, m, gd.iter().zip(bv).map(|(x, y)| x * y).collect()));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, mat(n, m, gd.iter().zip(av).map(|(x, y)| x * y).collect()));
                }
            }
            Op::MulScalar(a, s) => {
                let (n, m) = self.shape(*a);
                let sv = self.value(*s).item();
                if self.rg(*a) {
                    self.accumulate(grads, *a, mat(n, m, gd.iter().map(|x| x * sv).collect()));
                }
                if self.rg(*s) {
                    let ds = gd.iter().zip(self.value(*a).data()).map(|(x, y)| x * y).sum();
                    self.accumulate(grads, *s, Tensor::scalar(ds));
                }
            }
            Op::MulCol(a, col) => {
                let (n, m) = self.shape(*a);
                let cv = self.value(*col).data();
                if self.rg(*a) {
                    let da = gd.iter().enumerate().map(|(k, x)| x * cv[k / m.max(1)]).collect();
                    self.accumulate(grads, *a, mat(n, m, da));
                }
                if self.rg(*col) {
                    let av = self.value(*a).data();
                    let dc = (0..n).map(|r| (0..m).map(|c| gd[r * m + c] * av[r * m + c]).sum()).collect();
                    self.accumulate(grads, *col, mat(n, 1, dc));
                }
            }
            Op::Affine(a, mul) => {
                let (n, m) = self.shape(*a);
                self.accumulate(grads, *a, mat(n, m, gd.iter().map(|x| x * mul).collect()));
            }
            Op::ConcatCols(parts) => {
                let (n, total) = out.as_matrix();
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p).1;
                    if self.rg(p) {
                        let mut dp = Vec::with_capacity(n * w);
                        for r in 0..n {
                            dp.extend_from_slice(&gd[r * total + offset..r * total + offset + w]);
                        }
                        self.accumulate(grads, p, mat(n, w, dp));
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let m = out.cols();
                let mut offset = 0;
                for &p in parts {
                    let h = self.shape(p).0;
                    if self.rg(p) {
                        self.accumulate(grads, p, mat(h, m, gd[offset * m..(offset + h) * m].to_vec()));
                    }
                    offset += h;
                }
            }
            Op::SliceCols(a, start) => {
                let (n, m) = self.shape(*a);
                let w = out.cols();
                let mut da = vec![0.0; n * m];
                for r in 0..n {
                    da[r * m + start..r * m + start + w].copy_from_slice(&gd[r * w..(r + 1) * w]);
                }
                self.accumulate(grads, *a, mat(n, m, da));
            }
            Op::SliceRows(a, start) => {
                let (n, m) = self.shape(*a);
                let mut da = vec![0.0; n * m];
                da[start * m..start * m + gd.len()].copy_from_slice(gd);
                self.accumulate(grads, *a, mat(n, m, da));
            }
            Op::GatherRows(a, idx) => {
                let (n, m) = self.shape(*a);
                let mut da = vec![0.0; n * m];
                for (r, &src) in idx.iter().enumerate() {
                    for c in 0..m {
                        da[src * m + c] += gd[r * m + c];
                    }
                }
                self.accumulate(grads, *a, mat(n, m, da));
            }
            Op::Softmax(a) => {
                let (n, m) = out.as_matrix();
                let y = out.data();
                let mut da = vec![0.0; n * m];
                for r in 0..n {
                    let row = r * m..(r + 1) * m;
                    let dot: f64 = row.clone().map(|j| y[j] * gd[j]).sum();
                    for j in row {
                        da[j] = y[j] * (gd[j] - dot);
                    }
                }
                self.accumulate(grads, *a, mat(n, m, da));
            }
            Op::Sigmoid(a) => {
                let d = out.data().iter().zip(gd).map(|(y, g)| g * y * (1.0 - y)).collect();
                self.accumulate(grads, *a, mat(out.rows(), out.cols(), d));
            }
            Op::Tanh(a) => {
                let d = out.data().iter().zip(gd).map(|(y, g)| g * (1.0 - y * y)).collect();
                self.accumulate(grads, *a, mat(out.rows(), out.cols(), d));
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                let d = x.iter().zip(gd).map(|(x, g)| if *x > 0.0 { *g } else { 0.0 }).collect();
                self.accumulate(grads, *a, mat(out.rows(), out.cols(), d));
            }
            Op::Gelu(a) => {
                let x = self.value(*a).data();
                let d = x
                    .iter()
                    .zip(gd)
                    .map(|(&x, g)| {
                        let th = (GELU_C * (x + GELU_A * x * x * x)).tanh();
                        let dinner = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
                        g * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * dinner)
                    })
                    .collect();
                self.accumulate(grads, *a, mat(out.rows(), out.cols(), d));
            }
            Op::Sin(a) => {
                let x = self.value(*a).data();
                let d = x.iter().zip(gd).map(|(x, g)| g * x.cos()).collect();
                self.accumulate(grads, *a, mat(out.rows(), out.cols(), d));
            }
            Op::Cos(a) => {
                let x = self.value(*a).data();
                let d = x.iter().zip(gd).map(|(x, g)| -g * x.sin()).collect();
                self.accumulate(grads, *a, mat(out.rows(), out.cols(), d));
            }
            Op::Sum(a) => {
                let (n, m) = self.shape(*a);
                self.accumulate(grads, *a, Tensor::filled(n, m, g.item()));
            }
            Op::Mean(a) => {
                let (n, m) = self.shape(*a);
                self.accumulate(grads, *a, Tensor::filled(n, m, g.item() / (n * m) as f64));
            }
            Op::BceWithLogits(a, target) => {
                let (n, m) = self.shape(*a);
                let scale = g.item() / target.len() as f64;
                let x = self.value(*a).data();
                let d = x.iter().zip(target).map(|(&x, &y)| scale * (sigmoid(x) - y)).collect();
                self.accumulate(grads, *a, mat(n, m, d));
            }
        }
    }
}

//! Reverse-mode differentiation over a closed set of matrix primitives.
//!
//! A [`Tape`] records every forward operation together with its output
//! value. [`Tape::backward`] walks the record in reverse from a scalar loss
//! and accumulates the gradient of every parameter leaf into a
//! [`ParamStore`].

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::numeric::{Matrix, ParamStore};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    id: usize,
    tape: u64,
}

/// Row groups for segment reductions, stored compactly.
///
/// Output row `i` reduces over input rows `members[offsets[i]..offsets[i+1]]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segments {
    offsets: Vec<usize>,
    members: Vec<usize>,
}

impl Segments {
    pub fn from_lists<L: AsRef<[usize]>>(lists: &[L]) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        let mut members = Vec::new();
        offsets.push(0);
        for l in lists {
            members.extend_from_slice(l.as_ref());
            offsets.push(members.len());
        }
        Self { offsets, members }
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn group(&self, i: usize) -> &[usize] {
        &self.members[self.offsets[i]..self.offsets[i + 1]]
    }

    fn max_member(&self) -> Option<usize> {
        self.members.iter().copied().max()
    }
}

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(String),
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Mul(usize, usize),
    Affine(usize, f64),
    Relu(usize),
    Sigmoid(usize),
    Tanh(usize),
    Ln(usize),
    Clamp(usize, f64, f64),
    ConcatCols(usize, usize),
    ConcatRows(Vec<usize>),
    SliceCols(usize, usize),
    GatherRows(usize, Vec<usize>),
    SegmentMean(usize, Segments),
    /// Source row chosen for every output entry, `None` for empty groups.
    SegmentMax(usize, Vec<Option<usize>>),
    Mean(usize),
    Sum(usize),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.id >= self.nodes.len() {
            return Err(Error::NoForward(format!(
                "variable {} was not recorded on this tape",
                v.id
            )));
        }
        Ok(v.id)
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            id: self.nodes.len() - 1,
            tape: self.id,
        }
    }

    fn rg(&self, id: usize) -> bool {
        self.nodes[id].requires_grad
    }

    pub fn value(&self, v: Var) -> Result<&Matrix> {
        let id = self.check(v)?;
        Ok(&self.nodes[id].value)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Records the current value of a stored parameter as a differentiable leaf.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let value = store.value(name)?.clone();
        Ok(self.push(value, Op::Param(name.to_string()), true))
    }

    /// Records a parameter value that should not receive gradients.
    pub fn frozen(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        Ok(self.constant(store.value(name)?.clone()))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = (self.check(a)?, self.check(b)?);
        let value = self.nodes[a].value.matmul(&self.nodes[b].value)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let a = self.check(a)?;
        let value = self.nodes[a].value.transpose();
        let rg = self.rg(a);
        Ok(self.push(value, Op::Transpose(a), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = (self.check(a)?, self.check(b)?);
        let value = self.nodes[a].value.add(&self.nodes[b].value)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    /// Broadcast add of a `1 x cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (a, b) = (self.check(a)?, self.check(row)?);
        let value = self.nodes[a].value.add_row(&self.nodes[b].value)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::AddRow(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = (self.check(a)?, self.check(b)?);
        let value = self.nodes[a].value.mul(&self.nodes[b].value)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// `scale * a + shift`, entrywise.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Result<Var> {
        let a = self.check(a)?;
        let value = self.nodes[a].value.affine(scale, shift)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Affine(a, scale), rg))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let a = self.check(a)?;
        let value = self.nodes[a].value.relu()?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Relu(a), rg))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let a = self.check(a)?;
        let value = self.nodes[a].value.sigmoid()?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Sigmoid(a), rg))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let a = self.check(a)?;
        let value = self.nodes[a].value.tanh()?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Tanh(a), rg))
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        let a = self.check(a)?;
        let value = self.nodes[a].value.ln()?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Ln(a), rg))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let a = self.check(a)?;
        let value = self.nodes[a].value.clamp(lo, hi)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Clamp(a, lo, hi), rg))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = (self.check(a)?, self.check(b)?);
        let value = self.nodes[a].value.concat_cols(&self.nodes[b].value)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::ConcatCols(a, b), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let ids = parts
            .iter()
            .map(|&p| self.check(p))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Matrix> = ids.iter().map(|&i| &self.nodes[i].value).collect();
        let value = Matrix::concat_rows(&refs)?;
        let rg = ids.iter().any(|&i| self.rg(i));
        Ok(self.push(value, Op::ConcatRows(ids), rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let a = self.check(a)?;
        let value = self.nodes[a].value.slice_cols(start, end)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::SliceCols(a, start), rg))
    }

    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let a = self.check(a)?;
        let value = self.nodes[a].value.gather_rows(indices)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::GatherRows(a, indices.to_vec()), rg))
    }

    /// Row `i` of the output is the mean of the rows of `a` in group `i`;
    /// empty groups produce a zero row.
    pub fn segment_mean(&mut self, a: Var, segments: &Segments) -> Result<Var> {
        let a = self.check(a)?;
        let src = &self.nodes[a].value;
        if let Some(m) = segments.max_member() {
            if m >= src.rows() {
                return Err(Error::ShapeMismatch {
                    op: "segment_mean",
                    left: src.shape(),
                    right: (m, 0),
                });
            }
        }
        let cols = src.cols();
        let mut out = Matrix::zeros(segments.len(), cols);
        for i in 0..segments.len() {
            let group = segments.group(i);
            if group.is_empty() {
                continue;
            }
            let row = out.row_mut(i);
            for &m in group {
                for (o, &v) in row.iter_mut().zip(src.row(m)) {
                    *o += v;
                }
            }
            let n = group.len() as f64;
            row.iter_mut().for_each(|v| *v /= n);
        }
        let rg = self.rg(a);
        Ok(self.push(out, Op::SegmentMean(a, segments.clone()), rg))
    }

    /// Row `i` of the output is the elementwise max over the rows of `a` in
    /// group `i`; empty groups produce a zero row. Ties go to the earliest
    /// member of the group.
    pub fn segment_max(&mut self, a: Var, segments: &Segments) -> Result<Var> {
        let a = self.check(a)?;
        let src = &self.nodes[a].value;
        if let Some(m) = segments.max_member() {
            if m >= src.rows() {
                return Err(Error::ShapeMismatch {
                    op: "segment_max",
                    left: src.shape(),
                    right: (m, 0),
                });
            }
        }
        let cols = src.cols();
        let mut out = Matrix::zeros(segments.len(), cols);
        let mut arg = vec![None; segments.len() * cols];
        for i in 0..segments.len() {
            let group = segments.group(i);
            let Some((&first, rest)) = group.split_first() else {
                continue;
            };
            out.row_mut(i).copy_from_slice(src.row(first));
            arg[i * cols..(i + 1) * cols].iter_mut().for_each(|x| *x = Some(first));
            for &m in rest {
                for (c, &v) in src.row(m).iter().enumerate() {
                    if v > out.get(i, c) {
                        out.set(i, c, v);
                        arg[i * cols + c] = Some(m);
                    }
                }
            }
        }
        let rg = self.rg(a);
        Ok(self.push(out, Op::SegmentMax(a, arg), rg))
    }

    /// Mean over all rows (`1 x cols`).
    pub fn row_mean(&mut self, a: Var) -> Result<Var> {
        let rows = self.value(a)?.rows();
        self.segment_mean(a, &Segments::from_lists(&[(0..rows).collect::<Vec<_>>()]))
    }

    /// Elementwise max over all rows (`1 x cols`).
    pub fn row_max(&mut self, a: Var) -> Result<Var> {
        let rows = self.value(a)?.rows();
        self.segment_max(a, &Segments::from_lists(&[(0..rows).collect::<Vec<_>>()]))
    }

    /// Mean of every entry, as a 1x1 value.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let a = self.check(a)?;
        let v = &self.nodes[a].value;
        let n = v.data().len();
        if n == 0 {
            return Err(Error::EmptyInput("mean of an empty matrix"));
        }
        let value = Matrix::scalar(v.sum() / n as f64)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Mean(a), rg))
    }

    /// Sum of every entry, as a 1x1 value.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let a = self.check(a)?;
        let value = Matrix::scalar(self.nodes[a].value.sum())?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Sum(a), rg))
    }

    /// Accumulates d(loss)/d(param) into `store` for every parameter leaf
    /// that the loss depends on. Gradients are added to whatever the store
    /// already holds.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let loss = self.check(loss)?;
        let shape = self.nodes[loss].value.shape();
        if shape != (1, 1) {
            return Err(Error::ShapeMismatch {
                op: "backward",
                left: shape,
                right: (1, 1),
            });
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; loss + 1];
        grads[loss] = Some(Matrix::filled(1, 1, 1.0));

        for id in (0..=loss).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            match &node.op {
                Op::Constant => {}
                Op::Param(name) => store.accumulate_grad(name, &g)?,
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.rg(a) {
                        let d = g.matmul(&self.nodes[b].value.transpose())?;
                        self.acc(&mut grads, a, d)?;
                    }
                    if self.rg(b) {
                        let d = self.nodes[a].value.transpose().matmul(&g)?;
                        self.acc(&mut grads, b, d)?;
                    }
                }
                Op::Transpose(a) => self.acc(&mut grads, *a, g.transpose())?,
                Op::Add(a, b) => {
                    if self.rg(*b) {
                        self.acc(&mut grads, *b, g.clone())?;
                    }
                    self.acc(&mut grads, *a, g)?;
                }
                Op::AddRow(a, b) => {
                    if self.rg(*b) {
                        let mut d = Matrix::zeros(1, g.cols());
                        for r in 0..g.rows() {
                            for (o, &v) in d.data_mut().iter_mut().zip(g.row(r)) {
                                *o += v;
                            }
                        }
                        self.acc(&mut grads, *b, d)?;
                    }
                    self.acc(&mut grads, *a, g)?;
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.rg(a) {
                        let d = g.mul(&self.nodes[b].value)?;
                        self.acc(&mut grads, a, d)?;
                    }
                    if self.rg(b) {
                        let d = g.mul(&self.nodes[a].value)?;
                        self.acc(&mut grads, b, d)?;
                    }
                }
                Op::Affine(a, scale) => self.acc(&mut grads, *a, g.affine(*scale, 0.0)?)?,
                Op::Relu(a) => {
                    let mut d = g;
                    for (dv, &x) in d.data_mut().iter_mut().zip(self.nodes[*a].value.data()) {
                        if x <= 0.0 {
                            *dv = 0.0;
                        }
                    }
                    self.acc(&mut grads, *a, d)?;
                }
                Op::Sigmoid(a) => {
                    let mut d = g;
                    for (dv, &s) in d.data_mut().iter_mut().zip(node.value.data()) {
                        *dv *= s * (1.0 - s);
                    }
                    self.acc(&mut grads, *a, d)?;
                }
                Op::Tanh(a) => {
                    let mut d = g;
                    for (dv, &t) in d.data_mut().iter_mut().zip(node.value.data()) {
                        *dv *= 1.0 - t * t;
                    }
                    self.acc(&mut grads, *a, d)?;
                }
                Op::Ln(a) => {
                    let mut d = g;
                    for (dv, &x) in d.data_mut().iter_mut().zip(self.nodes[*a].value.data()) {
                        *dv /= x;
                    }
                    self.acc(&mut grads, *a, d)?;
                }
                Op::Clamp(a, lo, hi) => {
                    let mut d = g;
                    for (dv, &x) in d.data_mut().iter_mut().zip(self.nodes[*a].value.data()) {
                        if x < *lo || x > *hi {
                            *dv = 0.0;
                        }
                    }
                    self.acc(&mut grads, *a, d)?;
                }
                Op::ConcatCols(a, b) => {
                    let split = self.nodes[*a].value.cols();
                    if self.rg(*a) {
                        self.acc(&mut grads, *a, g.slice_cols(0, split)?)?;
                    }
                    if self.rg(*b) {
                        self.acc(&mut grads, *b, g.slice_cols(split, g.cols())?)?;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let rows = self.nodes[p].value.rows();
                        if self.rg(p) {
                            let idx: Vec<usize> = (start..start + rows).collect();
                            self.acc(&mut grads, p, g.gather_rows(&idx)?)?;
                        }
                        start += rows;
                    }
                }
                Op::SliceCols(a, start) => {
                    let src = &self.nodes[*a].value;
                    let mut d = Matrix::zeros(src.rows(), src.cols());
                    for r in 0..g.rows() {
                        d.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                    }
                    self.acc(&mut grads, *a, d)?;
                }
                Op::GatherRows(a, indices) => {
                    let src = &self.nodes[*a].value;
                    let mut d = Matrix::zeros(src.rows(), src.cols());
                    for (r, &i) in indices.iter().enumerate() {
                        for (o, &v) in d.row_mut(i).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    self.acc(&mut grads, *a, d)?;
                }
                Op::SegmentMean(a, segments) => {
                    let src = &self.nodes[*a].value;
                    let mut d = Matrix::zeros(src.rows(), src.cols());
                    for i in 0..segments.len() {
                        let group = segments.group(i);
                        if group.is_empty() {
                            continue;
                        }
                        let inv = 1.0 / group.len() as f64;
                        for &m in group {
                            for (o, &v) in d.row_mut(m).iter_mut().zip(g.row(i)) {
                                *o += v * inv;
                            }
                        }
                    }
                    self.acc(&mut grads, *a, d)?;
                }
                Op::SegmentMax(a, arg) => {
                    let src = &self.nodes[*a].value;
                    let cols = src.cols();
                    let mut d = Matrix::zeros(src.rows(), cols);
                    for (k, choice) in arg.iter().enumerate() {
                        if let Some(m) = choice {
                            let (i, c) = (k / cols, k % cols);
                            let cur = d.get(*m, c);
                            d.set(*m, c, cur + g.get(i, c));
                        }
                    }
                    self.acc(&mut grads, *a, d)?;
                }
                Op::Mean(a) => {
                    let src = &self.nodes[*a].value;
                    let n = src.data().len() as f64;
                    let gv = g.as_scalar()? / n;
                    self.acc(&mut grads, *a, Matrix::filled(src.rows(), src.cols(), gv))?;
                }
                Op::Sum(a) => {
                    let src = &self.nodes[*a].value;
                    let gv = g.as_scalar()?;
                    self.acc(&mut grads, *a, Matrix::filled(src.rows(), src.cols(), gv))?;
                }
            }
        }
        Ok(())
    }

    fn acc(&self, grads: &mut [Option<Matrix>], id: usize, delta: Matrix) -> Result<()> {
        if !self.nodes[id].requires_grad {
            return Ok(());
        }
        match &mut grads[id] {
            Some(existing) => {
                for (e, d) in existing.data_mut().iter_mut().zip(delta.data()) {
                    *e += d;
                }
                if existing.data().iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("backward"));
                }
            }
            slot @ None => *slot = Some(delta),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(name: &str, m: Matrix) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert(name, m).unwrap();
        s
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut store = store_with("w", Matrix::from_rows(&[vec![1.0, -2.0], vec![3.0, 0.5]]).unwrap());
        let mut tape = Tape::new();
        let w = tape.param(&store, "w").unwrap();
        let loss = tape.sum(w).unwrap();
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad("w").unwrap(), &Matrix::filled(2, 2, 1.0));
    }

    #[test]
    fn relu_subgradient() {
        let mut store = store_with("w", Matrix::from_rows(&[vec![-1.0, 2.0]]).unwrap());
        let mut tape = Tape::new();
        let w = tape.param(&store, "w").unwrap();
        let r = tape.relu(w).unwrap();
        let loss = tape.sum(r).unwrap();
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad("w").unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn relu_gradient_at_zero_is_zero() {
        let mut store = store_with("w", Matrix::from_rows(&[vec![0.0]]).unwrap());
        let mut tape = Tape::new();
        let w = tape.param(&store, "w").unwrap();
        let r = tape.relu(w).unwrap();
        let loss = tape.sum(r).unwrap();
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad("w").unwrap().data(), &[0.0]);
    }

    #[test]
    fn gradients_accumulate_across_calls() {
        let mut store = store_with("w", Matrix::filled(1, 1, 3.0));
        for _ in 0..2 {
            let mut tape = Tape::new();
            let w = tape.param(&store, "w").unwrap();
            let sq = tape.mul(w, w).unwrap();
            let loss = tape.sum(sq).unwrap();
            tape.backward(loss, &mut store).unwrap();
        }
        assert_eq!(store.grad("w").unwrap().data(), &[12.0]);
    }

    #[test]
    fn backward_on_foreign_variable_fails() {
        let mut store = store_with("w", Matrix::filled(1, 1, 1.0));
        let mut other = Tape::new();
        let w = other.param(&store, "w").unwrap();
        let loss = other.sum(w).unwrap();
        let empty = Tape::new();
        assert!(matches!(empty.backward(loss, &mut store), Err(Error::NoForward(_))));
    }

    #[test]
    fn backward_requires_scalar() {
        let mut store = store_with("w", Matrix::filled(2, 2, 1.0));
        let mut tape = Tape::new();
        let w = tape.param(&store, "w").unwrap();
        assert!(tape.backward(w, &mut store).is_err());
    }

    #[test]
    fn frozen_parameters_get_no_gradient() {
        let mut store = store_with("w", Matrix::filled(1, 1, 2.0));
        let mut tape = Tape::new();
        let w = tape.frozen(&store, "w").unwrap();
        let loss = tape.sum(w).unwrap();
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad("w").unwrap().data(), &[0.0]);
    }

    #[test]
    fn segment_reductions_forward() {
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![4.0, -1.0]]).unwrap());
        let seg = Segments::from_lists(&[vec![0, 1], vec![], vec![2, 0]]);
        let m = tape.segment_mean(x, &seg).unwrap();
        assert_eq!(tape.value(m).unwrap().data(), &[0.5, 0.5, 0.0, 0.0, 2.5, -0.5]);
        let mx = tape.segment_max(x, &seg).unwrap();
        assert_eq!(tape.value(mx).unwrap().data(), &[1.0, 1.0, 0.0, 0.0, 4.0, 0.0]);
        let bad = Segments::from_lists(&[vec![7]]);
        assert!(tape.segment_mean(x, &bad).is_err());
    }
}

use std::cell::RefCell;
use std::collections::BTreeMap;

use super::kernels::{gelu, gelu_grad, gemm, gemm_acc, sigmoid, softplus, transpose};
use super::{ParamStore, Real};
use crate::error::{Error, Result};

/// Records operations of one forward pass for reverse-mode differentiation.
///
/// Every value on the tape is a matrix; scalars are 1×1 and vectors are 1×n.
pub struct Tape<T: Real> {
    nodes: RefCell<Vec<Node<T>>>,
    leaf_grads: RefCell<BTreeMap<usize, Vec<T>>>,
}

struct Node<T> {
    rows: usize,
    cols: usize,
    value: Vec<T>,
    op: Op<T>,
    requires_grad: bool,
}

enum Op<T> {
    Leaf,
    MatMul(usize, usize),
    MatMulBt(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    AddRow(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    MulConst(usize, Vec<T>),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Gelu(usize),
    Map {
        x: usize,
        derivative: Vec<T>,
    },
    SoftmaxRows(usize),
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Gather {
        table: usize,
        ids: Vec<usize>,
    },
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceRows {
        x: usize,
        start: usize,
    },
    SliceCols {
        x: usize,
        start: usize,
    },
    Unfold {
        x: usize,
        width: usize,
        starts: Vec<usize>,
    },
    MaxRows {
        x: usize,
        argmax: Vec<usize>,
    },
    Sum(usize),
    LogisticLoss {
        z: usize,
        sigma: T,
        label: T,
    },
    CrossEntropySum {
        logits: usize,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Real> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            leaf_grads: RefCell::new(BTreeMap::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, rows: usize, cols: usize, value: Vec<T>, op: Op<T>, requires_grad: bool) -> Var<'_, T> {
        debug_assert_eq!(rows * cols, value.len());
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            rows,
            cols,
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn leaf(&self, rows: usize, cols: usize, value: Vec<T>, requires_grad: bool) -> Result<Var<'_, T>> {
        if rows == 0 || cols == 0 || rows * cols != value.len() {
            return Err(Error::Shape {
                op: "leaf",
                left: vec![rows, cols],
                right: vec![value.len()],
            });
        }
        Ok(self.push(rows, cols, value, Op::Leaf, requires_grad))
    }

    /// A differentiable input.
    pub fn variable(&self, rows: usize, cols: usize, value: Vec<T>) -> Result<Var<'_, T>> {
        self.leaf(rows, cols, value, true)
    }

    /// An input that never receives a gradient.
    pub fn constant(&self, rows: usize, cols: usize, value: Vec<T>) -> Result<Var<'_, T>> {
        self.leaf(rows, cols, value, false)
    }

    pub fn scalar(&self, value: T) -> Var<'_, T> {
        self.push(1, 1, vec![value], Op::Leaf, true)
    }

    /// Gradient accumulated on a leaf by previous backward passes.
    pub fn grad(&self, var: Var<'_, T>) -> Option<Vec<T>> {
        self.leaf_grads.borrow().get(&var.id).cloned()
    }

    fn shape_of(&self, id: usize) -> (usize, usize) {
        let nodes = self.nodes.borrow();
        (nodes[id].rows, nodes[id].cols)
    }

    fn needs(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    /// Column-wise concatenation; all parts share the row count.
    pub fn concat_cols<'a>(&'a self, parts: &[Var<'a, T>]) -> Result<Var<'a, T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("concat_cols of zero parts"))?;
        let rows = first.rows();
        for p in parts {
            if p.rows() != rows {
                return Err(Error::Shape {
                    op: "concat_cols",
                    left: vec![rows, first.cols()],
                    right: vec![p.rows(), p.cols()],
                });
            }
        }
        let cols: usize = parts.iter().map(|p| p.cols()).sum();
        let mut out = Vec::with_capacity(rows * cols);
        {
            let nodes = self.nodes.borrow();
            for r in 0..rows {
                for p in parts {
                    let n = &nodes[p.id];
                    out.extend_from_slice(&n.value[r * n.cols..(r + 1) * n.cols]);
                }
            }
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let rg = self.needs(&ids);
        Ok(self.push(rows, cols, out, Op::ConcatCols(ids), rg))
    }

    /// Row-wise concatenation; all parts share the column count.
    pub fn concat_rows<'a>(&'a self, parts: &[Var<'a, T>]) -> Result<Var<'a, T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("concat_rows of zero parts"))?;
        let cols = first.cols();
        for p in parts {
            if p.cols() != cols {
                return Err(Error::Shape {
                    op: "concat_rows",
                    left: vec![first.rows(), cols],
                    right: vec![p.rows(), p.cols()],
                });
            }
        }
        let rows: usize = parts.iter().map(|p| p.rows()).sum();
        let mut out = Vec::with_capacity(rows * cols);
        {
            let nodes = self.nodes.borrow();
            for p in parts {
                out.extend_from_slice(&nodes[p.id].value);
            }
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let rg = self.needs(&ids);
        Ok(self.push(rows, cols, out, Op::ConcatRows(ids), rg))
    }

    /// Runs the reverse sweep from `loss`, adding into leaf gradients.
    ///
    /// Leaf gradients are never reset here: calling this twice on the same
    /// loss doubles them.
    fn backward_from(&self, loss: usize) -> Result<()> {
        let nodes = self.nodes.borrow();
        if nodes[loss].value.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got {}x{}",
                nodes[loss].rows, nodes[loss].cols
            )));
        }
        if !nodes[loss].requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(loss + 1);
        grads.resize_with(loss + 1, || None);
        grads[loss] = Some(vec![T::one()]);
        let mut leaf_grads = self.leaf_grads.borrow_mut();

        for id in (0..=loss).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            let (rows, cols) = (node.rows, node.cols);
            match &node.op {
                Op::Leaf => match leaf_grads.get_mut(&id) {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                    None => {
                        leaf_grads.insert(id, g);
                    }
                },
                Op::MatMul(a, b) => {
                    let (na, nb) = (&nodes[*a], &nodes[*b]);
                    let k = na.cols;
                    if na.requires_grad {
                        let bt = transpose(&nb.value, k, cols);
                        gemm_acc(&g, &bt, slot(&mut grads, *a, rows * k), rows, cols, k);
                    }
                    if nb.requires_grad {
                        let at = transpose(&na.value, rows, k);
                        gemm_acc(&at, &g, slot(&mut grads, *b, k * cols), k, rows, cols);
                    }
                }
                Op::MatMulBt(a, b) => {
                    let (na, nb) = (&nodes[*a], &nodes[*b]);
                    let k = na.cols;
                    if na.requires_grad {
                        gemm_acc(&g, &nb.value, slot(&mut grads, *a, rows * k), rows, cols, k);
                    }
                    if nb.requires_grad {
                        let gt = transpose(&g, rows, cols);
                        gemm_acc(&gt, &na.value, slot(&mut grads, *b, cols * k), cols, rows, k);
                    }
                }
                Op::Add(a, b) => {
                    for &i in [a, b] {
                        if nodes[i].requires_grad {
                            add_assign(slot(&mut grads, i, g.len()), &g);
                        }
                    }
                }
                Op::Sub(a, b) => {
                    if nodes[*a].requires_grad {
                        add_assign(slot(&mut grads, *a, g.len()), &g);
                    }
                    if nodes[*b].requires_grad {
                        let s = slot(&mut grads, *b, g.len());
                        s.iter_mut().zip(&g).for_each(|(s, v)| *s -= *v);
                    }
                }
                Op::AddRow(a, b) => {
                    if nodes[*a].requires_grad {
                        add_assign(slot(&mut grads, *a, g.len()), &g);
                    }
                    if nodes[*b].requires_grad {
                        let s = slot(&mut grads, *b, cols);
                        for row in g.chunks(cols) {
                            add_assign(s, row);
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    if nodes[a].requires_grad {
                        let other = &nodes[b].value;
                        let s = slot(&mut grads, a, g.len());
                        for ((s, gv), o) in s.iter_mut().zip(&g).zip(other) {
                            *s += *gv * *o;
                        }
                    }
                    if nodes[b].requires_grad {
                        let other = &nodes[a].value;
                        let s = slot(&mut grads, b, g.len());
                        for ((s, gv), o) in s.iter_mut().zip(&g).zip(other) {
                            *s += *gv * *o;
                        }
                    }
                }
                Op::Scale(a, c) => {
                    if nodes[*a].requires_grad {
                        let s = slot(&mut grads, *a, g.len());
                        s.iter_mut().zip(&g).for_each(|(s, v)| *s += *v * *c);
                    }
                }
                Op::MulConst(a, m) => {
                    if nodes[*a].requires_grad {
                        let s = slot(&mut grads, *a, g.len());
                        for ((s, gv), mv) in s.iter_mut().zip(&g).zip(m) {
                            *s += *gv * *mv;
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    if nodes[*a].requires_grad {
                        let y = &node.value;
                        let s = slot(&mut grads, *a, g.len());
                        for ((s, gv), yv) in s.iter_mut().zip(&g).zip(y) {
                            *s += *gv * *yv * (T::one() - *yv);
                        }
                    }
                }
                Op::Tanh(a) => {
                    if nodes[*a].requires_grad {
                        let y = &node.value;
                        let s = slot(&mut grads, *a, g.len());
                        for ((s, gv), yv) in s.iter_mut().zip(&g).zip(y) {
                            *s += *gv * (T::one() - *yv * *yv);
                        }
                    }
                }
                Op::Relu(a) => {
                    if nodes[*a].requires_grad {
                        let x = &nodes[*a].value;
                        let s = slot(&mut grads, *a, g.len());
                        for ((s, gv), xv) in s.iter_mut().zip(&g).zip(x) {
                            if *xv > T::zero() {
                                *s += *gv;
                            }
                        }
                    }
                }
                Op::Gelu(a) => {
                    if nodes[*a].requires_grad {
                        let x = &nodes[*a].value;
                        let s = slot(&mut grads, *a, g.len());
                        for ((s, gv), xv) in s.iter_mut().zip(&g).zip(x) {
                            *s += *gv * gelu_grad(*xv);
                        }
                    }
                }
                Op::Map { x, derivative } => {
                    if nodes[*x].requires_grad {
                        let s = slot(&mut grads, *x, g.len());
                        for ((s, gv), d) in s.iter_mut().zip(&g).zip(derivative) {
                            *s += *gv * *d;
                        }
                    }
                }
                Op::SoftmaxRows(a) => {
                    if nodes[*a].requires_grad {
                        let y = &node.value;
                        let s = slot(&mut grads, *a, g.len());
                        for r in 0..rows {
                            let yr = &y[r * cols..(r + 1) * cols];
                            let gr = &g[r * cols..(r + 1) * cols];
                            let dot: T = yr.iter().zip(gr).map(|(a, b)| *a * *b).sum();
                            let sr = &mut s[r * cols..(r + 1) * cols];
                            for c in 0..cols {
                                sr[c] += yr[c] * (gr[c] - dot);
                            }
                        }
                    }
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    rstd,
                } => {
                    let gain_v = &nodes[*gain].value;
                    if nodes[*gain].requires_grad {
                        let s = slot(&mut grads, *gain, cols);
                        for r in 0..rows {
                            for c in 0..cols {
                                s[c] += g[r * cols + c] * xhat[r * cols + c];
                            }
                        }
                    }
                    if nodes[*bias].requires_grad {
                        let s = slot(&mut grads, *bias, cols);
                        for row in g.chunks(cols) {
                            add_assign(s, row);
                        }
                    }
                    if nodes[*x].requires_grad {
                        let n = T::from_usize(cols);
                        let s = slot(&mut grads, *x, g.len());
                        let mut dxhat = vec![T::zero(); cols];
                        for r in 0..rows {
                            let xr = &xhat[r * cols..(r + 1) * cols];
                            let mut mean_d = T::zero();
                            let mut mean_dx = T::zero();
                            for c in 0..cols {
                                dxhat[c] = g[r * cols + c] * gain_v[c];
                                mean_d += dxhat[c];
                                mean_dx += dxhat[c] * xr[c];
                            }
                            mean_d = mean_d / n;
                            mean_dx = mean_dx / n;
                            for c in 0..cols {
                                s[r * cols + c] += rstd[r] * (dxhat[c] - mean_d - xr[c] * mean_dx);
                            }
                        }
                    }
                }
                Op::Gather { table, ids } => {
                    if nodes[*table].requires_grad {
                        let tn = &nodes[*table];
                        let s = slot(&mut grads, *table, tn.value.len());
                        for (r, &i) in ids.iter().enumerate() {
                            add_assign(&mut s[i * cols..(i + 1) * cols], &g[r * cols..(r + 1) * cols]);
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let pc = nodes[p].cols;
                        if nodes[p].requires_grad {
                            let s = slot(&mut grads, p, rows * pc);
                            for r in 0..rows {
                                add_assign(
                                    &mut s[r * pc..(r + 1) * pc],
                                    &g[r * cols + offset..r * cols + offset + pc],
                                );
                            }
                        }
                        offset += pc;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = nodes[p].value.len();
                        if nodes[p].requires_grad {
                            add_assign(slot(&mut grads, p, len), &g[offset..offset + len]);
                        }
                        offset += len;
                    }
                }
                Op::SliceRows { x, start } => {
                    if nodes[*x].requires_grad {
                        let len = nodes[*x].value.len();
                        let s = slot(&mut grads, *x, len);
                        add_assign(&mut s[start * cols..(start + rows) * cols], &g);
                    }
                }
                Op::SliceCols { x, start } => {
                    if nodes[*x].requires_grad {
                        let xc = nodes[*x].cols;
                        let len = nodes[*x].value.len();
                        let s = slot(&mut grads, *x, len);
                        for r in 0..rows {
                            add_assign(&mut s[r * xc + start..r * xc + start + cols], &g[r * cols..(r + 1) * cols]);
                        }
                    }
                }
                Op::Unfold { x, width, starts } => {
                    if nodes[*x].requires_grad {
                        let (xr, xc) = (nodes[*x].rows, nodes[*x].cols);
                        let s = slot(&mut grads, *x, xr * xc);
                        for (w, &st) in starts.iter().enumerate() {
                            for j in 0..*width {
                                let src = st + j;
                                if src >= xr {
                                    break;
                                }
                                let off = w * cols + j * xc;
                                add_assign(&mut s[src * xc..(src + 1) * xc], &g[off..off + xc]);
                            }
                        }
                    }
                }
                Op::MaxRows { x, argmax } => {
                    if nodes[*x].requires_grad {
                        let xc = nodes[*x].cols;
                        let len = nodes[*x].value.len();
                        let s = slot(&mut grads, *x, len);
                        for (c, &r) in argmax.iter().enumerate() {
                            s[r * xc + c] += g[c];
                        }
                    }
                }
                Op::Sum(a) => {
                    if nodes[*a].requires_grad {
                        let len = nodes[*a].value.len();
                        let s = slot(&mut grads, *a, len);
                        s.iter_mut().for_each(|v| *v += g[0]);
                    }
                }
                Op::LogisticLoss { z, sigma, label } => {
                    if nodes[*z].requires_grad {
                        slot(&mut grads, *z, 1)[0] += g[0] * (*sigma - *label);
                    }
                }
                Op::CrossEntropySum { logits, targets, probs } => {
                    if nodes[*logits].requires_grad {
                        let lc = nodes[*logits].cols;
                        let s = slot(&mut grads, *logits, probs.len());
                        for (r, &t) in targets.iter().enumerate() {
                            for c in 0..lc {
                                let onehot = if c == t { T::one() } else { T::zero() };
                                s[r * lc + c] += g[0] * (probs[r * lc + c] - onehot);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn slot<T: Real>(grads: &mut [Option<Vec<T>>], id: usize, len: usize) -> &mut Vec<T> {
    grads[id].get_or_insert_with(|| vec![T::zero(); len])
}

fn add_assign<T: Real>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += *s);
}

fn shape_err(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::Shape {
        op,
        left: vec![a.0, a.1],
        right: vec![b.0, b.1],
    }
}

impl<'t, T: Real> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn rows(&self) -> usize {
        self.tape.shape_of(self.id).0
    }

    pub fn cols(&self) -> usize {
        self.tape.shape_of(self.id).1
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.shape_of(self.id)
    }

    pub fn value(&self) -> Vec<T> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    /// Value of a 1×1 node.
    pub fn item(&self) -> T {
        self.tape.nodes.borrow()[self.id].value[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.tape.grad(*self)
    }

    pub fn backward(&self) -> Result<()> {
        self.tape.backward_from(self.id)
    }

    fn unary(&self, f: impl Fn(T) -> T, op: impl FnOnce(usize) -> Op<T>) -> Var<'t, T> {
        let (rows, cols, value, rg) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            (n.rows, n.cols, n.value.iter().map(|&v| f(v)).collect(), n.requires_grad)
        };
        self.tape.push(rows, cols, value, op(self.id), rg)
    }

    fn binary_same(
        &self,
        other: &Var<'t, T>,
        name: &'static str,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var<'t, T>> {
        let (a, b) = (self.shape(), other.shape());
        if a != b {
            return Err(shape_err(name, a, b));
        }
        let value = {
            let nodes = self.tape.nodes.borrow();
            nodes[self.id]
                .value
                .iter()
                .zip(&nodes[other.id].value)
                .map(|(&x, &y)| f(x, y))
                .collect()
        };
        let rg = self.tape.needs(&[self.id, other.id]);
        Ok(self.tape.push(a.0, a.1, value, op, rg))
    }

    /// Standard matrix product.
    pub fn matmul(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.shape(), other.shape());
        if a.1 != b.0 {
            return Err(shape_err("matmul", a, b));
        }
        let value = {
            let nodes = self.tape.nodes.borrow();
            gemm(&nodes[self.id].value, &nodes[other.id].value, a.0, a.1, b.1)
        };
        let rg = self.tape.needs(&[self.id, other.id]);
        Ok(self.tape.push(a.0, b.1, value, Op::MatMul(self.id, other.id), rg))
    }

    /// `self · otherᵀ`
    pub fn matmul_t(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.shape(), other.shape());
        if a.1 != b.1 {
            return Err(shape_err("matmul_t", a, b));
        }
        let value = {
            let nodes = self.tape.nodes.borrow();
            let bt = transpose(&nodes[other.id].value, b.0, b.1);
            gemm(&nodes[self.id].value, &bt, a.0, a.1, b.0)
        };
        let rg = self.tape.needs(&[self.id, other.id]);
        Ok(self.tape.push(a.0, b.0, value, Op::MatMulBt(self.id, other.id), rg))
    }

    pub fn add(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary_same(other, "add", |a, b| a + b, Op::Add(self.id, other.id))
    }

    pub fn sub(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary_same(other, "sub", |a, b| a - b, Op::Sub(self.id, other.id))
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary_same(other, "mul", |a, b| a * b, Op::Mul(self.id, other.id))
    }

    /// Adds a 1×n row to every row.
    pub fn add_row(&self, row: &Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.shape(), row.shape());
        if b.0 != 1 || b.1 != a.1 {
            return Err(shape_err("add_row", a, b));
        }
        let value = {
            let nodes = self.tape.nodes.borrow();
            let r = &nodes[row.id].value;
            nodes[self.id]
                .value
                .chunks(a.1)
                .flat_map(|x| x.iter().zip(r).map(|(&x, &y)| x + y))
                .collect()
        };
        let rg = self.tape.needs(&[self.id, row.id]);
        Ok(self.tape.push(a.0, a.1, value, Op::AddRow(self.id, row.id), rg))
    }

    /// `self · weight + bias`, the affine map used by every dense layer.
    pub fn linear(&self, weight: &Var<'t, T>, bias: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.matmul(weight)?.add_row(bias)
    }

    pub fn scale(&self, c: T) -> Var<'t, T> {
        self.unary(|v| v * c, |id| Op::Scale(id, c))
    }

    /// Elementwise product with a constant array (dropout masks).
    pub fn mul_const(&self, mask: Vec<T>) -> Result<Var<'t, T>> {
        let (r, c) = self.shape();
        if mask.len() != r * c {
            return Err(shape_err("mul_const", (r, c), (1, mask.len())));
        }
        let value = {
            let nodes = self.tape.nodes.borrow();
            nodes[self.id].value.iter().zip(&mask).map(|(&a, &b)| a * b).collect()
        };
        let rg = self.requires_grad();
        Ok(self.tape.push(r, c, value, Op::MulConst(self.id, mask), rg))
    }

    pub fn sigmoid(&self) -> Var<'t, T> {
        self.unary(sigmoid, Op::Sigmoid)
    }

    pub fn tanh(&self) -> Var<'t, T> {
        self.unary(|v| v.tanh(), Op::Tanh)
    }

    pub fn relu(&self) -> Var<'t, T> {
        self.unary(|v| v.max(T::zero()), Op::Relu)
    }

    pub fn gelu(&self) -> Var<'t, T> {
        self.unary(gelu, Op::Gelu)
    }

    /// Elementwise `f` with caller-supplied derivative `df`.
    pub fn map_with_derivative(&self, f: impl Fn(T) -> T, df: impl Fn(T) -> T) -> Var<'t, T> {
        let (rows, cols, value, derivative, rg) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            (
                n.rows,
                n.cols,
                n.value.iter().map(|&v| f(v)).collect(),
                n.value.iter().map(|&v| df(v)).collect(),
                n.requires_grad,
            )
        };
        self.tape.push(
            rows,
            cols,
            value,
            Op::Map {
                x: self.id,
                derivative,
            },
            rg,
        )
    }

    /// Row-wise softmax. `mask[c] == false` excludes column `c`; excluded
    /// columns get exactly zero weight.
    pub fn softmax_rows(&self, mask: Option<&[bool]>) -> Result<Var<'t, T>> {
        let (rows, cols) = self.shape();
        if let Some(m) = mask {
            if m.len() != cols {
                return Err(shape_err("softmax_rows", (rows, cols), (1, m.len())));
            }
            if !m.iter().any(|&b| b) {
                return Err(Error::DegenerateMask { row: 0 });
            }
        }
        let keep = |c: usize| mask.is_none_or(|m| m[c]);
        let value = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let mut out = vec![T::zero(); rows * cols];
            for r in 0..rows {
                let xr = &x[r * cols..(r + 1) * cols];
                let mut max = T::neg_infinity();
                for (c, &v) in xr.iter().enumerate() {
                    if keep(c) && v > max {
                        max = v;
                    }
                }
                let or = &mut out[r * cols..(r + 1) * cols];
                let mut sum = T::zero();
                for c in 0..cols {
                    if keep(c) {
                        or[c] = (xr[c] - max).exp();
                        sum += or[c];
                    }
                }
                or.iter_mut().for_each(|v| *v = *v / sum);
            }
            out
        };
        let rg = self.requires_grad();
        Ok(self.tape.push(rows, cols, value, Op::SoftmaxRows(self.id), rg))
    }

    /// Normalizes each row to zero mean and unit variance, then applies
    /// `gain` and `bias` (both 1×cols).
    pub fn layer_norm(&self, gain: &Var<'t, T>, bias: &Var<'t, T>, eps: T) -> Result<Var<'t, T>> {
        let (rows, cols) = self.shape();
        if cols < 2 {
            return Err(Error::DegenerateInput(format!(
                "layer_norm needs a last dimension of at least 2, got {cols}"
            )));
        }
        for p in [gain, bias] {
            if p.shape() != (1, cols) {
                return Err(shape_err("layer_norm", (rows, cols), p.shape()));
            }
        }
        let (value, xhat, rstd) = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let gv = &nodes[gain.id].value;
            let bv = &nodes[bias.id].value;
            let n = T::from_usize(cols);
            let mut out = vec![T::zero(); rows * cols];
            let mut xhat = vec![T::zero(); rows * cols];
            let mut rstd = vec![T::zero(); rows];
            for r in 0..rows {
                let xr = &x[r * cols..(r + 1) * cols];
                let mean = xr.iter().copied().sum::<T>() / n;
                let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
                let rs = T::one() / (var + eps).sqrt();
                rstd[r] = rs;
                for c in 0..cols {
                    let h = (xr[c] - mean) * rs;
                    xhat[r * cols + c] = h;
                    out[r * cols + c] = h * gv[c] + bv[c];
                }
            }
            (out, xhat, rstd)
        };
        let rg = self.tape.needs(&[self.id, gain.id, bias.id]);
        Ok(self.tape.push(
            rows,
            cols,
            value,
            Op::LayerNorm {
                x: self.id,
                gain: gain.id,
                bias: bias.id,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// Selects rows of an embedding table.
    pub fn gather_rows(&self, ids: &[usize]) -> Result<Var<'t, T>> {
        let (rows, cols) = self.shape();
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(Error::validation(format!("row index {bad} out of range for table of {rows} rows")));
        }
        if ids.is_empty() {
            return Err(Error::contract("gather of zero rows"));
        }
        let value = {
            let nodes = self.tape.nodes.borrow();
            let t = &nodes[self.id].value;
            let mut out = Vec::with_capacity(ids.len() * cols);
            for &i in ids {
                out.extend_from_slice(&t[i * cols..(i + 1) * cols]);
            }
            out
        };
        let rg = self.requires_grad();
        Ok(self.tape.push(
            ids.len(),
            cols,
            value,
            Op::Gather {
                table: self.id,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Var<'t, T>> {
        let (rows, cols) = self.shape();
        if len == 0 || start + len > rows {
            return Err(shape_err("slice_rows", (rows, cols), (start, len)));
        }
        let value = self.tape.nodes.borrow()[self.id].value[start * cols..(start + len) * cols].to_vec();
        let rg = self.requires_grad();
        Ok(self.tape.push(len, cols, value, Op::SliceRows { x: self.id, start }, rg))
    }

    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Var<'t, T>> {
        let (rows, cols) = self.shape();
        if len == 0 || start + len > cols {
            return Err(shape_err("slice_cols", (rows, cols), (start, len)));
        }
        let value = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let mut out = Vec::with_capacity(rows * len);
            for r in 0..rows {
                out.extend_from_slice(&x[r * cols + start..r * cols + start + len]);
            }
            out
        };
        let rg = self.requires_grad();
        Ok(self.tape.push(rows, len, value, Op::SliceCols { x: self.id, start }, rg))
    }

    /// Gathers `width` consecutive rows starting at each of `starts` into one
    /// row of `width·cols` values. Rows past the end read as zeros.
    pub fn unfold(&self, width: usize, starts: &[usize]) -> Result<Var<'t, T>> {
        let (rows, cols) = self.shape();
        if width == 0 || starts.is_empty() {
            return Err(Error::contract("unfold needs a positive width and at least one window"));
        }
        if let Some(&bad) = starts.iter().find(|&&s| s >= rows) {
            return Err(shape_err("unfold", (rows, cols), (bad, width)));
        }
        let out_cols = width * cols;
        let value = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let mut out = vec![T::zero(); starts.len() * out_cols];
            for (w, &st) in starts.iter().enumerate() {
                let avail = width.min(rows - st);
                out[w * out_cols..w * out_cols + avail * cols].copy_from_slice(&x[st * cols..(st + avail) * cols]);
            }
            out
        };
        let rg = self.requires_grad();
        Ok(self.tape.push(
            starts.len(),
            out_cols,
            value,
            Op::Unfold {
                x: self.id,
                width,
                starts: starts.to_vec(),
            },
            rg,
        ))
    }

    /// Column-wise maximum over the first `count` rows, as a 1×cols row.
    pub fn max_rows(&self, count: usize) -> Result<Var<'t, T>> {
        let (rows, cols) = self.shape();
        if count == 0 || count > rows {
            return Err(shape_err("max_rows", (rows, cols), (count, cols)));
        }
        let (value, argmax) = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let mut best = x[..cols].to_vec();
            let mut arg = vec![0usize; cols];
            for r in 1..count {
                for c in 0..cols {
                    let v = x[r * cols + c];
                    if v > best[c] {
                        best[c] = v;
                        arg[c] = r;
                    }
                }
            }
            (best, arg)
        };
        let rg = self.requires_grad();
        Ok(self.tape.push(1, cols, value, Op::MaxRows { x: self.id, argmax }, rg))
    }

    pub fn sum(&self) -> Var<'t, T> {
        let (value, rg) = {
            let nodes = self.tape.nodes.borrow();
            (nodes[self.id].value.iter().copied().sum::<T>(), nodes[self.id].requires_grad)
        };
        self.tape.push(1, 1, vec![value], Op::Sum(self.id), rg)
    }

    pub fn mean(&self) -> Var<'t, T> {
        let n = T::from_usize(self.tape.nodes.borrow()[self.id].value.len());
        self.sum().scale(T::one() / n)
    }

    /// Binary cross-entropy of a single logit against a 0/1 label, in log space.
    pub fn logistic_loss(&self, label: u8) -> Result<Var<'t, T>> {
        if label > 1 {
            return Err(Error::validation(format!("label must be 0 or 1, got {label}")));
        }
        if self.shape() != (1, 1) {
            return Err(shape_err("logistic_loss", self.shape(), (1, 1)));
        }
        let z = self.item();
        let y = T::from_usize(label as usize);
        // -[y ln σ(z) + (1-y) ln(1-σ(z))] = softplus(z) - y z
        let loss = softplus(z) - y * z;
        let rg = self.requires_grad();
        Ok(self.tape.push(
            1,
            1,
            vec![loss],
            Op::LogisticLoss {
                z: self.id,
                sigma: sigmoid(z),
                label: y,
            },
            rg,
        ))
    }

    /// Sum over rows of the softmax cross-entropy against `targets`.
    pub fn cross_entropy_sum(&self, targets: &[usize]) -> Result<Var<'t, T>> {
        let (rows, cols) = self.shape();
        if targets.len() != rows {
            return Err(shape_err("cross_entropy_sum", (rows, cols), (targets.len(), 1)));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= cols) {
            return Err(Error::validation(format!("target {bad} out of range for {cols} classes")));
        }
        let (loss, probs) = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let mut probs = vec![T::zero(); rows * cols];
            let mut loss = T::zero();
            for (r, &t) in targets.iter().enumerate() {
                let xr = &x[r * cols..(r + 1) * cols];
                let max = xr.iter().copied().fold(T::neg_infinity(), T::max);
                let pr = &mut probs[r * cols..(r + 1) * cols];
                let mut sum = T::zero();
                for c in 0..cols {
                    pr[c] = (xr[c] - max).exp();
                    sum += pr[c];
                }
                pr.iter_mut().for_each(|p| *p = *p / sum);
                loss += max + sum.ln() - xr[t];
            }
            (loss, probs)
        };
        let rg = self.requires_grad();
        Ok(self.tape.push(
            1,
            1,
            vec![loss],
            Op::CrossEntropySum {
                logits: self.id,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }
}

/// Parameters of a [`ParamStore`] made available on a tape, bound lazily on
/// first use.
pub struct Bound<'t, 'p, T: Real> {
    tape: &'t Tape<T>,
    store: &'p ParamStore<T>,
    slots: RefCell<Vec<Option<usize>>>,
}

impl<'t, 'p, T: Real> Bound<'t, 'p, T> {
    pub fn new(tape: &'t Tape<T>, store: &'p ParamStore<T>) -> Self {
        Bound {
            tape,
            store,
            slots: RefCell::new(vec![None; store.len()]),
        }
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn store(&self) -> &'p ParamStore<T> {
        self.store
    }

    pub fn get(&self, name: &str) -> Result<Var<'t, T>> {
        let id = self
            .store
            .id(name)
            .ok_or_else(|| Error::contract(format!("parameter {name:?} is not registered")))?;
        if let Some(node) = self.slots.borrow()[id] {
            return Ok(Var { tape: self.tape, id: node });
        }
        let t = self.store.tensor(id);
        let (rows, cols) = t.matrix_dims();
        let var = self.tape.leaf(rows, cols, t.data().to_vec(), t.requires_grad)?;
        self.slots.borrow_mut()[id] = Some(var.id);
        Ok(var)
    }

    /// Gradients of every bound trainable parameter, keyed by parameter id.
    pub fn into_grads(self) -> Vec<(usize, Vec<T>)> {
        let leaf = self.tape.leaf_grads.borrow();
        self.slots
            .into_inner()
            .into_iter()
            .enumerate()
            .filter_map(|(pid, node)| {
                let node = node?;
                leaf.get(&node).map(|g| (pid, g.clone()))
            })
            .collect()
    }
}

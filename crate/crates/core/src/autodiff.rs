//! Tape-based reverse-mode differentiation over row-major rank-2 arrays.
//! One tape per forward pass; backward walks the recording in exact
//! reverse order and accumulates adjoints additively, so a value consumed
//! twice receives the sum of both adjoints.

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

/// Handle into a tape. Copyable; the tape owns the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    id: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Var {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_scalar(&self) -> bool {
        self.rows == 1 && self.cols == 1
    }
}

enum Op {
    Leaf,
    Matmul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    ScalarMul(Var, f64),
    /// array scaled by a learnable 1x1 variable
    ScaleVar(Var, Var),
    /// a (m x n) plus a bias row (1 x n) broadcast over rows
    AddBias(Var, Var),
    Tanh(Var),
    Relu(Var),
    GatherRows(Var, Rc<Vec<usize>>),
    ScatterAddRows(Var, Rc<Vec<usize>>),
    /// per-row constant scale
    ScaleRows(Var, Rc<Vec<f64>>),
    /// M x for a constant sparse M
    Spmm(Var, Rc<SparseMatrix>),
    /// M^T x for a constant sparse M
    SpmmT(Var, Rc<SparseMatrix>),
    Sum(Var),
    Mean(Var),
    SquaredNorm(Var),
    ConcatCols(Var, Var),
    /// same data, different rows/cols split (row-major layout is shared)
    Reshape(Var),
}

struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    grads: RefCell<Vec<Vec<f64>>>,
}

fn shape_err(prim: &str, detail: String) -> Error {
    Error::Invalid(format!("{prim}: {detail}"))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, rows: usize, cols: usize, value: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node { rows, cols, value, op });
        Var { id, rows, cols }
    }

    /// Differentiable leaf.
    pub fn var(&self, rows: usize, cols: usize, data: Vec<f64>) -> Result<Var> {
        if data.len() != rows * cols {
            return Err(shape_err("var", format!("{} values for {rows}x{cols}", data.len())));
        }
        Ok(self.push(rows, cols, data, Op::Leaf))
    }

    /// Leaf that is held constant; gradients still flow to it harmlessly.
    pub fn constant(&self, rows: usize, cols: usize, data: Vec<f64>) -> Result<Var> {
        self.var(rows, cols, data)
    }

    pub fn scalar(&self, v: f64) -> Var {
        self.push(1, 1, vec![v], Op::Leaf)
    }

    pub fn value(&self, v: Var) -> Vec<f64> {
        self.nodes.borrow()[v.id].value.clone()
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes.borrow()[v.id].value[0]
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        if a.cols != b.rows {
            return Err(shape_err(
                "matmul",
                format!("{}x{} times {}x{}", a.rows, a.cols, b.rows, b.cols),
            ));
        }
        let nodes = self.nodes.borrow();
        let (av, bv) = (&nodes[a.id].value, &nodes[b.id].value);
        let mut out = vec![0.0; a.rows * b.cols];
        for i in 0..a.rows {
            for k in 0..a.cols {
                let aik = av[i * a.cols + k];
                if aik == 0.0 {
                    continue;
                }
                let brow = &bv[k * b.cols..(k + 1) * b.cols];
                let orow = &mut out[i * b.cols..(i + 1) * b.cols];
                for (o, &x) in orow.iter_mut().zip(brow) {
                    *o += aik * x;
                }
            }
        }
        drop(nodes);
        Ok(self.push(a.rows, b.cols, out, Op::Matmul(a, b)))
    }

    fn elementwise(&self, prim: &str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        if a.rows != b.rows || a.cols != b.cols {
            return Err(shape_err(
                prim,
                format!("{}x{} against {}x{}", a.rows, a.cols, b.rows, b.cols),
            ));
        }
        let nodes = self.nodes.borrow();
        let out: Vec<f64> = nodes[a.id]
            .value
            .iter()
            .zip(&nodes[b.id].value)
            .map(|(&x, &y)| f(x, y))
            .collect();
        drop(nodes);
        Ok(self.push(a.rows, a.cols, out, op))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scalar_mul(&self, a: Var, c: f64) -> Var {
        let out: Vec<f64> = self.nodes.borrow()[a.id].value.iter().map(|&x| c * x).collect();
        self.push(a.rows, a.cols, out, Op::ScalarMul(a, c))
    }

    /// a scaled by the learnable scalar s (1x1).
    pub fn scale_var(&self, a: Var, s: Var) -> Result<Var> {
        if !s.is_scalar() {
            return Err(shape_err("scale_var", format!("scale is {}x{}", s.rows, s.cols)));
        }
        let nodes = self.nodes.borrow();
        let sv = nodes[s.id].value[0];
        let out: Vec<f64> = nodes[a.id].value.iter().map(|&x| sv * x).collect();
        drop(nodes);
        Ok(self.push(a.rows, a.cols, out, Op::ScaleVar(a, s)))
    }

    pub fn add_bias(&self, a: Var, bias: Var) -> Result<Var> {
        if bias.rows != 1 || bias.cols != a.cols {
            return Err(shape_err(
                "add_bias",
                format!("bias {}x{} onto {}x{}", bias.rows, bias.cols, a.rows, a.cols),
            ));
        }
        let nodes = self.nodes.borrow();
        let (av, bv) = (&nodes[a.id].value, &nodes[bias.id].value);
        let mut out = av.clone();
        for r in 0..a.rows {
            for c in 0..a.cols {
                out[r * a.cols + c] += bv[c];
            }
        }
        drop(nodes);
        Ok(self.push(a.rows, a.cols, out, Op::AddBias(a, bias)))
    }

    pub fn tanh(&self, a: Var) -> Var {
        let out: Vec<f64> = self.nodes.borrow()[a.id].value.iter().map(|x| x.tanh()).collect();
        self.push(a.rows, a.cols, out, Op::Tanh(a))
    }

    pub fn relu(&self, a: Var) -> Var {
        let out: Vec<f64> = self.nodes.borrow()[a.id].value.iter().map(|x| x.max(0.0)).collect();
        self.push(a.rows, a.cols, out, Op::Relu(a))
    }

    pub fn gather_rows(&self, a: Var, idx: &[usize]) -> Result<Var> {
        if let Some(&bad) = idx.iter().find(|&&i| i >= a.rows) {
            return Err(shape_err("gather_rows", format!("row {bad} of {}", a.rows)));
        }
        let nodes = self.nodes.borrow();
        let av = &nodes[a.id].value;
        let mut out = Vec::with_capacity(idx.len() * a.cols);
        for &i in idx {
            out.extend_from_slice(&av[i * a.cols..(i + 1) * a.cols]);
        }
        drop(nodes);
        Ok(self.push(idx.len(), a.cols, out, Op::GatherRows(a, Rc::new(idx.to_vec()))))
    }

    /// Rows of a summed into out_rows buckets: out[idx[r]] += a[r].
    pub fn scatter_add_rows(&self, a: Var, idx: &[usize], out_rows: usize) -> Result<Var> {
        if idx.len() != a.rows {
            return Err(shape_err(
                "scatter_add_rows",
                format!("{} indices for {} rows", idx.len(), a.rows),
            ));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= out_rows) {
            return Err(shape_err("scatter_add_rows", format!("row {bad} of {out_rows}")));
        }
        let nodes = self.nodes.borrow();
        let av = &nodes[a.id].value;
        let mut out = vec![0.0; out_rows * a.cols];
        for (r, &i) in idx.iter().enumerate() {
            for c in 0..a.cols {
                out[i * a.cols + c] += av[r * a.cols + c];
            }
        }
        drop(nodes);
        Ok(self.push(out_rows, a.cols, out, Op::ScatterAddRows(a, Rc::new(idx.to_vec()))))
    }

    pub fn scale_rows(&self, a: Var, s: &[f64]) -> Result<Var> {
        if s.len() != a.rows {
            return Err(shape_err(
                "scale_rows",
                format!("{} scales for {} rows", s.len(), a.rows),
            ));
        }
        let nodes = self.nodes.borrow();
        let av = &nodes[a.id].value;
        let mut out = av.clone();
        for (r, &sr) in s.iter().enumerate() {
            for c in 0..a.cols {
                out[r * a.cols + c] *= sr;
            }
        }
        drop(nodes);
        Ok(self.push(a.rows, a.cols, out, Op::ScaleRows(a, Rc::new(s.to_vec()))))
    }

    /// M x with constant sparse M, x of shape (M.cols, d).
    pub fn spmm(&self, m: &Rc<SparseMatrix>, x: Var) -> Result<Var> {
        let (rows, cols) = m.shape();
        if x.rows != cols {
            return Err(shape_err("spmm", format!("{rows}x{cols} times {}x{}", x.rows, x.cols)));
        }
        let out = m.matmul_dense(&self.nodes.borrow()[x.id].value, x.cols);
        Ok(self.push(rows, x.cols, out, Op::Spmm(x, Rc::clone(m))))
    }

    /// M^T x with constant sparse M, x of shape (M.rows, d).
    pub fn spmm_t(&self, m: &Rc<SparseMatrix>, x: Var) -> Result<Var> {
        let (rows, cols) = m.shape();
        if x.rows != rows {
            return Err(shape_err("spmm_t", format!("{cols}x{rows} times {}x{}", x.rows, x.cols)));
        }
        let out = m.matmul_dense_transpose(&self.nodes.borrow()[x.id].value, x.cols);
        Ok(self.push(cols, x.cols, out, Op::SpmmT(x, Rc::clone(m))))
    }

    pub fn sum(&self, a: Var) -> Var {
        let s: f64 = self.nodes.borrow()[a.id].value.iter().sum();
        self.push(1, 1, vec![s], Op::Sum(a))
    }

    pub fn mean(&self, a: Var) -> Var {
        let nodes = self.nodes.borrow();
        let v = &nodes[a.id].value;
        let s: f64 = v.iter().sum();
        let m = s / v.len() as f64;
        drop(nodes);
        self.push(1, 1, vec![m], Op::Mean(a))
    }

    pub fn squared_norm(&self, a: Var) -> Var {
        let s: f64 = self.nodes.borrow()[a.id].value.iter().map(|x| x * x).sum();
        self.push(1, 1, vec![s], Op::SquaredNorm(a))
    }

    pub fn reshape(&self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        if rows * cols != a.len() {
            return Err(shape_err(
                "reshape",
                format!("{}x{} into {rows}x{cols}", a.rows, a.cols),
            ));
        }
        let value = self.nodes.borrow()[a.id].value.clone();
        Ok(self.push(rows, cols, value, Op::Reshape(a)))
    }

    pub fn concat_cols(&self, a: Var, b: Var) -> Result<Var> {
        if a.rows != b.rows {
            return Err(shape_err(
                "concat_cols",
                format!("{} rows against {}", a.rows, b.rows),
            ));
        }
        let nodes = self.nodes.borrow();
        let (av, bv) = (&nodes[a.id].value, &nodes[b.id].value);
        let cols = a.cols + b.cols;
        let mut out = Vec::with_capacity(a.rows * cols);
        for r in 0..a.rows {
            out.extend_from_slice(&av[r * a.cols..(r + 1) * a.cols]);
            out.extend_from_slice(&bv[r * b.cols..(r + 1) * b.cols]);
        }
        drop(nodes);
        Ok(self.push(a.rows, cols, out, Op::ConcatCols(a, b)))
    }

    /// Reverse pass from a scalar loss; adjoints for every node become
    /// available through grad().
    pub fn backward(&self, loss: Var) -> Result<()> {
        if !loss.is_scalar() {
            return Err(Error::Invalid(format!(
                "backward needs a scalar loss, got {}x{}",
                loss.rows, loss.cols
            )));
        }
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Vec<f64>> = nodes.iter().map(|n| vec![0.0; n.value.len()]).collect();
        grads[loss.id][0] = 1.0;

        for id in (0..=loss.id).rev() {
            let g = std::mem::take(&mut grads[id]);
            let node = &nodes[id];
            match &node.op {
                Op::Leaf => {}
                Op::Matmul(a, b) => {
                    let (av, bv) = (&nodes[a.id].value, &nodes[b.id].value);
                    let ga = &mut grads[a.id];
                    for i in 0..a.rows {
                        for k in 0..a.cols {
                            let mut s = 0.0;
                            for j in 0..b.cols {
                                s += g[i * b.cols + j] * bv[k * b.cols + j];
                            }
                            ga[i * a.cols + k] += s;
                        }
                    }
                    let gb = &mut grads[b.id];
                    for k in 0..a.cols {
                        for j in 0..b.cols {
                            let mut s = 0.0;
                            for i in 0..a.rows {
                                s += av[i * a.cols + k] * g[i * b.cols + j];
                            }
                            gb[k * b.cols + j] += s;
                        }
                    }
                }
                Op::Add(a, b) => {
                    for (ga, &gi) in grads[a.id].iter_mut().zip(&g) {
                        *ga += gi;
                    }
                    for (gb, &gi) in grads[b.id].iter_mut().zip(&g) {
                        *gb += gi;
                    }
                }
                Op::Sub(a, b) => {
                    for (ga, &gi) in grads[a.id].iter_mut().zip(&g) {
                        *ga += gi;
                    }
                    for (gb, &gi) in grads[b.id].iter_mut().zip(&g) {
                        *gb -= gi;
                    }
                }
                Op::Mul(a, b) => {
                    let bv = nodes[b.id].value.clone();
                    for ((ga, &gi), &x) in grads[a.id].iter_mut().zip(&g).zip(&bv) {
                        *ga += gi * x;
                    }
                    let av = nodes[a.id].value.clone();
                    for ((gb, &gi), &x) in grads[b.id].iter_mut().zip(&g).zip(&av) {
                        *gb += gi * x;
                    }
                }
                Op::ScalarMul(a, c) => {
                    for (ga, &gi) in grads[a.id].iter_mut().zip(&g) {
                        *ga += c * gi;
                    }
                }
                Op::ScaleVar(a, s) => {
                    let sv = nodes[s.id].value[0];
                    let av = &nodes[a.id].value;
                    let mut ds = 0.0;
                    for (&gi, &x) in g.iter().zip(av) {
                        ds += gi * x;
                    }
                    for (ga, &gi) in grads[a.id].iter_mut().zip(&g) {
                        *ga += sv * gi;
                    }
                    grads[s.id][0] += ds;
                }
                Op::AddBias(a, bias) => {
                    for (ga, &gi) in grads[a.id].iter_mut().zip(&g) {
                        *ga += gi;
                    }
                    let gb = &mut grads[bias.id];
                    for r in 0..node.rows {
                        for c in 0..node.cols {
                            gb[c] += g[r * node.cols + c];
                        }
                    }
                }
                Op::Tanh(a) => {
                    for ((ga, &gi), &y) in grads[a.id].iter_mut().zip(&g).zip(&node.value) {
                        *ga += gi * (1.0 - y * y);
                    }
                }
                Op::Relu(a) => {
                    let av = &nodes[a.id].value;
                    for ((ga, &gi), &x) in grads[a.id].iter_mut().zip(&g).zip(av) {
                        if x > 0.0 {
                            *ga += gi;
                        }
                    }
                }
                Op::GatherRows(a, idx) => {
                    let ga = &mut grads[a.id];
                    for (r, &i) in idx.iter().enumerate() {
                        for c in 0..node.cols {
                            ga[i * node.cols + c] += g[r * node.cols + c];
                        }
                    }
                }
                Op::ScatterAddRows(a, idx) => {
                    // backward of scatter-add is a gather of the adjoint
                    let ga = &mut grads[a.id];
                    for (r, &i) in idx.iter().enumerate() {
                        for c in 0..node.cols {
                            ga[r * node.cols + c] += g[i * node.cols + c];
                        }
                    }
                }
                Op::ScaleRows(a, s) => {
                    let ga = &mut grads[a.id];
                    for (r, &sr) in s.iter().enumerate() {
                        for c in 0..node.cols {
                            ga[r * node.cols + c] += sr * g[r * node.cols + c];
                        }
                    }
                }
                Op::Spmm(x, m) => {
                    let gx = m.matmul_dense_transpose(&g, node.cols);
                    for (go, gi) in grads[x.id].iter_mut().zip(gx) {
                        *go += gi;
                    }
                }
                Op::SpmmT(x, m) => {
                    let gx = m.matmul_dense(&g, node.cols);
                    for (go, gi) in grads[x.id].iter_mut().zip(gx) {
                        *go += gi;
                    }
                }
                Op::Sum(a) => {
                    for ga in grads[a.id].iter_mut() {
                        *ga += g[0];
                    }
                }
                Op::Mean(a) => {
                    let n = nodes[a.id].value.len() as f64;
                    for ga in grads[a.id].iter_mut() {
                        *ga += g[0] / n;
                    }
                }
                Op::SquaredNorm(a) => {
                    let av = &nodes[a.id].value;
                    for (ga, &x) in grads[a.id].iter_mut().zip(av) {
                        *ga += 2.0 * g[0] * x;
                    }
                }
                Op::ConcatCols(a, b) => {
                    let ga = &mut grads[a.id];
                    for r in 0..node.rows {
                        for c in 0..a.cols {
                            ga[r * a.cols + c] += g[r * node.cols + c];
                        }
                    }
                    let gb = &mut grads[b.id];
                    for r in 0..node.rows {
                        for c in 0..b.cols {
                            gb[r * b.cols + c] += g[r * node.cols + a.cols + c];
                        }
                    }
                }
                Op::Reshape(a) => {
                    for (ga, &gi) in grads[a.id].iter_mut().zip(&g) {
                        *ga += gi;
                    }
                }
            }
            grads[id] = g;
        }
        drop(nodes);
        *self.grads.borrow_mut() = grads;
        Ok(())
    }

    pub fn grad(&self, v: Var) -> Result<Vec<f64>> {
        let grads = self.grads.borrow();
        if v.id >= grads.len() {
            return Err(Error::Invalid("gradient requested before backward".into()));
        }
        Ok(grads[v.id].clone())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub pass: bool,
    pub max_rel_err: f64,
}

fn rel_err(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs());
    if denom < 1e-6 {
        (a - b).abs()
    } else {
        (a - b).abs() / denom
    }
}

/// Compare the tape gradient of f against central differences coordinate
/// by coordinate. f receives a fresh tape and the flat input as an
/// (n x 1) leaf and must return a scalar loss.
pub fn grad_check<F>(f: F, x: &[f64], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&Tape, Var) -> Result<Var>,
{
    let tape = Tape::new();
    let xv = tape.var(x.len(), 1, x.to_vec())?;
    let loss = f(&tape, xv)?;
    tape.backward(loss)?;
    let analytic = tape.grad(xv)?;

    let eval = |pt: &[f64]| -> Result<f64> {
        let tape = Tape::new();
        let xv = tape.var(pt.len(), 1, pt.to_vec())?;
        let loss = f(&tape, xv)?;
        Ok(tape.scalar_value(loss))
    };

    let mut max_err: f64 = 0.0;
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = eval(&probe)?;
        probe[i] = x[i] - h;
        let down = eval(&probe)?;
        probe[i] = x[i];
        let fd = (up - down) / (2.0 * h);
        max_err = max_err.max(rel_err(analytic[i], fd));
    }
    Ok(GradCheckReport { pass: max_err < tol, max_rel_err: max_err })
}

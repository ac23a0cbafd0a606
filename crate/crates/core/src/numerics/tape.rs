//! Reverse-mode tape over row-major matrices.
//!
//! Every value on the tape is a `rows × cols` matrix; vectors are single
//! rows. Parameters are read in place from the borrowed [`ParameterSet`];
//! intermediate values live in one flat arena.

use super::tensor::{Gradients, ParamId, ParameterSet};
use super::NumericsError;

/// Added to masked logits before normalization.
pub const MASK_LOGIT: f64 = -1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub rows: usize,
    pub cols: usize,
}

impl Shape {
    pub fn new(rows: usize, cols: usize) -> Self {
        Shape { rows, cols }
    }

    pub fn len(self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}, {}]", self.rows, self.cols)
    }
}

/// Handle to a tape value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy)]
enum Loc {
    Arena(usize),
    Param(ParamId),
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    OuterAdd(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    LeakyRelu(Var, f64),
    Exp(Var),
    Softmax(Var),
    LogSoftmax(Var, Option<Vec<bool>>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    StackRows(Vec<Var>),
    Row(Var, usize),
    Gather(Var, Vec<usize>),
    MeanRows(Var),
    Sum(Var),
    Pick(Var, usize),
    BceWithLogits(Var, Vec<f64>),
}

#[derive(Debug, Clone)]
struct Node {
    shape: Shape,
    loc: Loc,
    op: Op,
    requires_grad: bool,
}

/// Computation record for one forward pass.
#[derive(Debug)]
pub struct Tape<'p> {
    params: &'p ParameterSet,
    nodes: Vec<Node>,
    arena: Vec<f64>,
}

fn shape_err(op: &'static str, a: Shape, b: Shape) -> NumericsError {
    NumericsError::Shape {
        op,
        left: a.to_string(),
        right: b.to_string(),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn masked(mask: Option<&[bool]>, cols: usize, r: usize, c: usize) -> bool {
    match mask {
        None => false,
        Some(m) if m.len() == cols => !m[c],
        Some(m) => !m[r * cols + c],
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParameterSet) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            arena: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParameterSet {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        let node = &self.nodes[v.0];
        match node.loc {
            Loc::Arena(off) => &self.arena[off..off + node.shape.len()],
            Loc::Param(id) => self.params.get(id).data(),
        }
    }

    /// The single value of a 1×1 result.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    fn push(&mut self, shape: Shape, data: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.len(), data.len());
        let off = self.arena.len();
        self.arena.extend_from_slice(&data);
        self.nodes.push(Node {
            shape,
            loc: Loc::Arena(off),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn grad_of(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Trainable parameter as a matrix (vectors become one row).
    pub fn param(&mut self, id: ParamId) -> Var {
        let (rows, cols) = self.params.get(id).matrix_dims();
        self.nodes.push(Node {
            shape: Shape::new(rows, cols),
            loc: Loc::Param(id),
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; no gradient flows into it.
    pub fn constant(
        &mut self,
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    ) -> Result<Var, NumericsError> {
        if rows * cols != data.len() {
            return Err(NumericsError::Storage {
                shape: vec![rows, cols],
                len: data.len(),
            });
        }
        Ok(self.push(Shape::new(rows, cols), data, Op::Leaf, false))
    }

    pub fn row_vector(&mut self, data: &[f64]) -> Var {
        self.push(Shape::new(1, data.len()), data.to_vec(), Op::Leaf, false)
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.push(
            Shape::new(rows, cols),
            vec![0.0; rows * cols],
            Op::Leaf,
            false,
        )
    }

    fn elementwise(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, NumericsError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err(name, sa, sb));
        }
        let data = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let g = self.grad_of(&[a, b]);
        Ok(self.push(sa, data, op, g))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.elementwise("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.elementwise("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.elementwise("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `a` (m×n) plus the row `b` (1×n) added to every row.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.rows != 1 || sb.cols != sa.cols {
            return Err(shape_err("add_row", sa, sb));
        }
        let bv = self.value(b);
        let data = self
            .value(a)
            .chunks(sa.cols.max(1))
            .flat_map(|row| row.iter().zip(bv).map(|(x, y)| x + y))
            .collect();
        let g = self.grad_of(&[a, b]);
        Ok(self.push(sa, data, Op::AddRow(a, b), g))
    }

    /// Column `a` (m×1) plus row `b` (1×n), broadcast to m×n.
    pub fn outer_add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.cols != 1 || sb.rows != 1 {
            return Err(shape_err("outer_add", sa, sb));
        }
        let (av, bv) = (self.value(a), self.value(b));
        let data = av
            .iter()
            .flat_map(|x| bv.iter().map(move |y| x + y))
            .collect();
        let g = self.grad_of(&[a, b]);
        Ok(self.push(Shape::new(sa.rows, sb.cols), data, Op::OuterAdd(a, b), g))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let data = self.value(a).iter().map(|x| x * c).collect();
        let g = self.grad_of(&[a]);
        self.push(self.shape(a), data, Op::Scale(a, c), g)
    }

    /// `a` (m×k) times `b` (k×n).
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.cols != sb.rows {
            return Err(shape_err("matmul", sa, sb));
        }
        let (m, k, n) = (sa.rows, sa.cols, sb.cols);
        let (av, bv) = (self.value(a), self.value(b));
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            let out = &mut data[i * n..(i + 1) * n];
            for p in 0..k {
                let x = av[i * k + p];
                if x == 0.0 {
                    continue;
                }
                for (o, &y) in out.iter_mut().zip(&bv[p * n..(p + 1) * n]) {
                    *o += x * y;
                }
            }
        }
        let g = self.grad_of(&[a, b]);
        Ok(self.push(Shape::new(m, n), data, Op::MatMul(a, b), g))
    }

    /// `a` (m×k) times the transpose of `b` (n×k); the linear-layer product
    /// for weights stored as `[out, in]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.cols != sb.cols {
            return Err(shape_err("matmul_nt", sa, sb));
        }
        let (m, k, n) = (sa.rows, sa.cols, sb.rows);
        let (av, bv) = (self.value(a), self.value(b));
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            let ar = &av[i * k..(i + 1) * k];
            for j in 0..n {
                data.push(dot(ar, &bv[j * k..(j + 1) * k]));
            }
        }
        let g = self.grad_of(&[a, b]);
        Ok(self.push(Shape::new(m, n), data, Op::MatMulNt(a, b), g))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let data = self.value(a).iter().map(|&x| f(x)).collect();
        let g = self.grad_of(&[a]);
        self.push(self.shape(a), data, op, g)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(
            a,
            |x| if x > 0.0 { x } else { slope * x },
            Op::LeakyRelu(a, slope),
        )
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    fn check_mask(
        &self,
        name: &'static str,
        a: Var,
        mask: Option<&[bool]>,
    ) -> Result<(), NumericsError> {
        let s = self.shape(a);
        if let Some(m) = mask {
            if m.len() != s.cols && m.len() != s.len() {
                return Err(NumericsError::Shape {
                    op: name,
                    left: s.to_string(),
                    right: format!("mask of {}", m.len()),
                });
            }
            for r in 0..s.rows {
                let any = (0..s.cols).any(|c| !masked(Some(m), s.cols, r, c));
                if !any {
                    return Err(NumericsError::EmptyMask(name));
                }
            }
        }
        Ok(())
    }

    /// Row-wise softmax. Masked entries (mask `false`) get exactly zero.
    /// A mask of length `cols` applies to every row.
    pub fn softmax(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var, NumericsError> {
        self.check_mask("softmax", a, mask)?;
        let s = self.shape(a);
        let x = self.value(a);
        let mut data = vec![0.0; s.len()];
        for r in 0..s.rows {
            let row = &x[r * s.cols..(r + 1) * s.cols];
            let shifted: Vec<f64> = (0..s.cols)
                .map(|c| {
                    if masked(mask, s.cols, r, c) {
                        row[c] + MASK_LOGIT
                    } else {
                        row[c]
                    }
                })
                .collect();
            let max = shifted.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = shifted.iter().map(|v| (v - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            for c in 0..s.cols {
                data[r * s.cols + c] = if masked(mask, s.cols, r, c) {
                    0.0
                } else {
                    exps[c] / z
                };
            }
        }
        let g = self.grad_of(&[a]);
        Ok(self.push(s, data, Op::Softmax(a), g))
    }

    /// Row-wise log-softmax. Masked entries are pinned to [`MASK_LOGIT`]
    /// and receive no gradient.
    pub fn log_softmax(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var, NumericsError> {
        self.check_mask("log_softmax", a, mask)?;
        let s = self.shape(a);
        let x = self.value(a);
        let mut data = vec![0.0; s.len()];
        for r in 0..s.rows {
            let row = &x[r * s.cols..(r + 1) * s.cols];
            let live: Vec<usize> = (0..s.cols)
                .filter(|&c| !masked(mask, s.cols, r, c))
                .collect();
            let max = live
                .iter()
                .map(|&c| row[c])
                .fold(f64::NEG_INFINITY, f64::max);
            let lse = max + live.iter().map(|&c| (row[c] - max).exp()).sum::<f64>().ln();
            for c in 0..s.cols {
                data[r * s.cols + c] = if masked(mask, s.cols, r, c) {
                    MASK_LOGIT
                } else {
                    row[c] - lse
                };
            }
        }
        let g = self.grad_of(&[a]);
        Ok(self.push(s, data, Op::LogSoftmax(a, mask.map(<[bool]>::to_vec)), g))
    }

    /// Joins values with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let Some(&first) = parts.first() else {
            return Err(NumericsError::Empty("concat_cols"));
        };
        let rows = self.shape(first).rows;
        for &p in parts {
            if self.shape(p).rows != rows {
                return Err(shape_err("concat_cols", self.shape(first), self.shape(p)));
            }
        }
        let cols: usize = parts.iter().map(|&p| self.shape(p).cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                let c = self.shape(p).cols;
                data.extend_from_slice(&self.value(p)[r * c..(r + 1) * c]);
            }
        }
        let g = self.grad_of(parts);
        Ok(self.push(
            Shape::new(rows, cols),
            data,
            Op::ConcatCols(parts.to_vec()),
            g,
        ))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        let s = self.shape(a);
        if start + len > s.cols {
            return Err(shape_err("slice_cols", s, Shape::new(s.rows, start + len)));
        }
        let x = self.value(a);
        let data = (0..s.rows)
            .flat_map(|r| {
                x[r * s.cols + start..r * s.cols + start + len]
                    .iter()
                    .copied()
            })
            .collect();
        let g = self.grad_of(&[a]);
        Ok(self.push(Shape::new(s.rows, len), data, Op::SliceCols(a, start), g))
    }

    /// Stacks values with equal column counts vertically.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let Some(&first) = parts.first() else {
            return Err(NumericsError::Empty("stack_rows"));
        };
        let cols = self.shape(first).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.cols != cols {
                return Err(shape_err("stack_rows", self.shape(first), s));
            }
            rows += s.rows;
            data.extend_from_slice(self.value(p));
        }
        let g = self.grad_of(parts);
        Ok(self.push(
            Shape::new(rows, cols),
            data,
            Op::StackRows(parts.to_vec()),
            g,
        ))
    }

    pub fn row(&mut self, a: Var, i: usize) -> Result<Var, NumericsError> {
        let s = self.shape(a);
        if i >= s.rows {
            return Err(shape_err("row", s, Shape::new(i + 1, s.cols)));
        }
        let data = self.value(a)[i * s.cols..(i + 1) * s.cols].to_vec();
        let g = self.grad_of(&[a]);
        Ok(self.push(Shape::new(1, s.cols), data, Op::Row(a, i), g))
    }

    /// Embedding lookup: rows `ids` of `table`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var, NumericsError> {
        let s = self.shape(table);
        if ids.is_empty() {
            return Err(NumericsError::Empty("gather_rows"));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= s.rows) {
            return Err(NumericsError::Index {
                op: "gather_rows",
                index: bad,
                len: s.rows,
            });
        }
        let x = self.value(table);
        let data = ids
            .iter()
            .flat_map(|&i| x[i * s.cols..(i + 1) * s.cols].iter().copied())
            .collect();
        let g = self.grad_of(&[table]);
        Ok(self.push(
            Shape::new(ids.len(), s.cols),
            data,
            Op::Gather(table, ids.to_vec()),
            g,
        ))
    }

    /// Column means, 1×cols.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let s = self.shape(a);
        let x = self.value(a);
        let mut data = vec![0.0; s.cols];
        for r in 0..s.rows {
            for (d, v) in data.iter_mut().zip(&x[r * s.cols..(r + 1) * s.cols]) {
                *d += v;
            }
        }
        let n = s.rows.max(1) as f64;
        for d in &mut data {
            *d /= n;
        }
        let g = self.grad_of(&[a]);
        self.push(Shape::new(1, s.cols), data, Op::MeanRows(a), g)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).iter().sum();
        let g = self.grad_of(&[a]);
        self.push(Shape::new(1, 1), vec![total], Op::Sum(a), g)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.shape(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let m = self.mul(a, b)?;
        Ok(self.sum(m))
    }

    /// Element `index` (row-major) as a 1×1 value.
    pub fn pick(&mut self, a: Var, index: usize) -> Result<Var, NumericsError> {
        let len = self.shape(a).len();
        if index >= len {
            return Err(NumericsError::Index {
                op: "pick",
                index,
                len,
            });
        }
        let v = self.value(a)[index];
        let g = self.grad_of(&[a]);
        Ok(self.push(Shape::new(1, 1), vec![v], Op::Pick(a, index), g))
    }

    /// `-log softmax(logits)[target]` over the unmasked entries.
    pub fn cross_entropy_with_logits(
        &mut self,
        logits: Var,
        target: usize,
        mask: Option<&[bool]>,
    ) -> Result<Var, NumericsError> {
        let lp = self.log_softmax(logits, mask)?;
        let picked = self.pick(lp, target)?;
        Ok(self.scale(picked, -1.0))
    }

    /// Mean binary cross-entropy between `sigmoid(logits)` and `targets`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var, NumericsError> {
        let s = self.shape(logits);
        if targets.len() != s.len() {
            return Err(shape_err(
                "bce_with_logits",
                s,
                Shape::new(1, targets.len()),
            ));
        }
        let x = self.value(logits);
        let total: f64 = x
            .iter()
            .zip(targets)
            .map(|(&x, &y)| x.max(0.0) - x * y + (-x.abs()).exp().ln_1p())
            .sum();
        let g = self.grad_of(&[logits]);
        Ok(self.push(
            Shape::new(1, 1),
            vec![total / s.len().max(1) as f64],
            Op::BceWithLogits(logits, targets.to_vec()),
            g,
        ))
    }

    /// Accumulates d`loss`/dθ into `grads`. `loss` must be 1×1.
    pub fn backward(&self, loss: Var, grads: &mut Gradients) -> Result<(), NumericsError> {
        let s = self.shape(loss);
        if s.len() != 1 {
            return Err(NumericsError::NonScalarLoss(s.to_string()));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut g = vec![0.0; self.arena.len()];
        let mut touched = vec![false; self.nodes.len()];
        let Loc::Arena(off) = self.nodes[loss.0].loc else {
            // A bare 1×1 parameter as the loss.
            if let Loc::Param(id) = self.nodes[loss.0].loc {
                grads.get_mut(id)[0] += 1.0;
            }
            return Ok(());
        };
        g[off] = 1.0;
        touched[loss.0] = true;

        for k in (0..=loss.0).rev() {
            if !touched[k] || !self.nodes[k].requires_grad {
                continue;
            }
            let node = &self.nodes[k];
            let Loc::Arena(off) = node.loc else { continue };
            let out = g[off..off + node.shape.len()].to_vec();
            let mut sink = Sink {
                tape: self,
                arena: &mut g,
                grads,
                touched: &mut touched,
            };
            self.backprop(k, &out, &mut sink);
        }
        Ok(())
    }

    fn backprop(&self, k: usize, go: &[f64], sink: &mut Sink<'_, '_>) {
        let node = &self.nodes[k];
        let s = node.shape;
        let y = self.value(Var(k));
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                sink.add(*a, |d| axpy(d, go, 1.0));
                sink.add(*b, |d| axpy(d, go, 1.0));
            }
            Op::Sub(a, b) => {
                sink.add(*a, |d| axpy(d, go, 1.0));
                sink.add(*b, |d| axpy(d, go, -1.0));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                sink.add(*a, |d| {
                    for i in 0..d.len() {
                        d[i] += go[i] * bv[i];
                    }
                });
                sink.add(*b, |d| {
                    for i in 0..d.len() {
                        d[i] += go[i] * av[i];
                    }
                });
            }
            Op::AddRow(a, b) => {
                sink.add(*a, |d| axpy(d, go, 1.0));
                sink.add(*b, |d| {
                    for row in go.chunks(s.cols.max(1)) {
                        axpy(d, row, 1.0);
                    }
                });
            }
            Op::OuterAdd(a, b) => {
                sink.add(*a, |d| {
                    for (r, row) in go.chunks(s.cols.max(1)).enumerate() {
                        d[r] += row.iter().sum::<f64>();
                    }
                });
                sink.add(*b, |d| {
                    for row in go.chunks(s.cols.max(1)) {
                        axpy(d, row, 1.0);
                    }
                });
            }
            Op::Scale(a, c) => sink.add(*a, |d| axpy(d, go, *c)),
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, kk, n) = (sa.rows, sa.cols, sb.cols);
                let (av, bv) = (self.value(*a), self.value(*b));
                // dA = dC Bᵀ
                sink.add(*a, |d| {
                    for i in 0..m {
                        for p in 0..kk {
                            d[i * kk + p] += dot(&go[i * n..(i + 1) * n], &bv[p * n..(p + 1) * n]);
                        }
                    }
                });
                // dB = Aᵀ dC
                sink.add(*b, |d| {
                    for i in 0..m {
                        for p in 0..kk {
                            let x = av[i * kk + p];
                            if x == 0.0 {
                                continue;
                            }
                            axpy(&mut d[p * n..(p + 1) * n], &go[i * n..(i + 1) * n], x);
                        }
                    }
                });
            }
            Op::MatMulNt(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, kk, n) = (sa.rows, sa.cols, sb.rows);
                let (av, bv) = (self.value(*a), self.value(*b));
                // dA = dC B
                sink.add(*a, |d| {
                    for i in 0..m {
                        for j in 0..n {
                            let gij = go[i * n + j];
                            if gij != 0.0 {
                                axpy(&mut d[i * kk..(i + 1) * kk], &bv[j * kk..(j + 1) * kk], gij);
                            }
                        }
                    }
                });
                // dB = dCᵀ A
                sink.add(*b, |d| {
                    for i in 0..m {
                        for j in 0..n {
                            let gij = go[i * n + j];
                            if gij != 0.0 {
                                axpy(&mut d[j * kk..(j + 1) * kk], &av[i * kk..(i + 1) * kk], gij);
                            }
                        }
                    }
                });
            }
            Op::Sigmoid(a) => sink.add(*a, |d| {
                for i in 0..d.len() {
                    d[i] += go[i] * y[i] * (1.0 - y[i]);
                }
            }),
            Op::Tanh(a) => sink.add(*a, |d| {
                for i in 0..d.len() {
                    d[i] += go[i] * (1.0 - y[i] * y[i]);
                }
            }),
            Op::LeakyRelu(a, slope) => {
                let x = self.value(*a);
                sink.add(*a, |d| {
                    for i in 0..d.len() {
                        d[i] += go[i] * if x[i] > 0.0 { 1.0 } else { *slope };
                    }
                });
            }
            Op::Exp(a) => sink.add(*a, |d| {
                for i in 0..d.len() {
                    d[i] += go[i] * y[i];
                }
            }),
            Op::Softmax(a) => sink.add(*a, |d| {
                for r in 0..s.rows {
                    let range = r * s.cols..(r + 1) * s.cols;
                    let inner = dot(&go[range.clone()], &y[range.clone()]);
                    for i in range {
                        d[i] += y[i] * (go[i] - inner);
                    }
                }
            }),
            Op::LogSoftmax(a, mask) => sink.add(*a, |d| {
                for r in 0..s.rows {
                    let live: Vec<usize> = (0..s.cols)
                        .filter(|&c| !masked(mask.as_deref(), s.cols, r, c))
                        .collect();
                    let total: f64 = live.iter().map(|&c| go[r * s.cols + c]).sum();
                    for &c in &live {
                        let i = r * s.cols + c;
                        d[i] += go[i] - y[i].exp() * total;
                    }
                }
            }),
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let c = self.shape(p).cols;
                    sink.add(p, |d| {
                        for r in 0..s.rows {
                            axpy(
                                &mut d[r * c..(r + 1) * c],
                                &go[r * s.cols + start..r * s.cols + start + c],
                                1.0,
                            );
                        }
                    });
                    start += c;
                }
            }
            Op::SliceCols(a, start) => {
                let full = self.shape(*a).cols;
                sink.add(*a, |d| {
                    for r in 0..s.rows {
                        axpy(
                            &mut d[r * full + start..r * full + start + s.cols],
                            &go[r * s.cols..(r + 1) * s.cols],
                            1.0,
                        );
                    }
                });
            }
            Op::StackRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let n = self.shape(p).len();
                    sink.add(p, |d| axpy(d, &go[start..start + n], 1.0));
                    start += n;
                }
            }
            Op::Row(a, i) => sink.add(*a, |d| {
                axpy(&mut d[i * s.cols..(i + 1) * s.cols], go, 1.0);
            }),
            Op::Gather(table, ids) => sink.add(*table, |d| {
                for (r, &i) in ids.iter().enumerate() {
                    axpy(
                        &mut d[i * s.cols..(i + 1) * s.cols],
                        &go[r * s.cols..(r + 1) * s.cols],
                        1.0,
                    );
                }
            }),
            Op::MeanRows(a) => {
                let rows = self.shape(*a).rows;
                let inv = 1.0 / rows.max(1) as f64;
                sink.add(*a, |d| {
                    for r in 0..rows {
                        axpy(&mut d[r * s.cols..(r + 1) * s.cols], go, inv);
                    }
                });
            }
            Op::Sum(a) => sink.add(*a, |d| {
                for x in d.iter_mut() {
                    *x += go[0];
                }
            }),
            Op::Pick(a, i) => sink.add(*a, |d| d[*i] += go[0]),
            Op::BceWithLogits(a, targets) => {
                let x = self.value(*a);
                let n = targets.len().max(1) as f64;
                sink.add(*a, |d| {
                    for i in 0..d.len() {
                        d[i] += go[0] * (sigmoid(x[i]) - targets[i]) / n;
                    }
                });
            }
        }
    }
}

/// Routes input gradients to the arena or to parameter buffers.
struct Sink<'t, 'g> {
    tape: &'t Tape<'t>,
    arena: &'g mut Vec<f64>,
    grads: &'g mut Gradients,
    touched: &'g mut Vec<bool>,
}

impl Sink<'_, '_> {
    fn add(&mut self, v: Var, f: impl FnOnce(&mut [f64])) {
        let node = &self.tape.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        self.touched[v.0] = true;
        match node.loc {
            Loc::Arena(off) => f(&mut self.arena[off..off + node.shape.len()]),
            Loc::Param(id) => f(self.grads.get_mut(id)),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(dst: &mut [f64], src: &[f64], alpha: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += alpha * s;
    }
}

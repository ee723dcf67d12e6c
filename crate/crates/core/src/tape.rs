//! Reverse-mode automatic differentiation over dense, row-major `f64` matrices.
//!
//! A [`Graph`] records every operation applied to its [`Var`] handles. Calling
//! [`Graph::backward`] on a scalar output walks the record in reverse and
//! returns the gradient of that scalar with respect to every node.
//!
//! Binary elementwise operations broadcast their right operand when its shape
//! is `1×1`, `1×c` or `r×1`.

use std::cell::{Ref, RefCell};
use std::fmt;

/// Dense row-major matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix({}x{}) ", self.rows, self.cols)?;
        f.debug_list().entries(self.data.chunks(self.cols.max(1))).finish()
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data length does not match {rows}x{cols}");
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn scalar(value: f64) -> Self {
        Self::new(1, 1, vec![value])
    }

    pub fn row_vector(data: &[f64]) -> Self {
        Self::new(1, data.len(), data.to_vec())
    }

    pub fn column_vector(data: &[f64]) -> Self {
        Self::new(data.len(), 1, data.to_vec())
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::new(self.rows, self.cols, self.data.iter().map(|&x| f(x)).collect())
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.set(c, r, self.get(r, c));
            }
        }
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch {:?} x {:?}", self.shape(), other.shape());
        let mut out = Matrix::zeros(self.rows, other.cols);
        gemm(
            GemmArg::plain(self),
            GemmArg::plain(other),
            &mut out,
            0.0,
        );
        out
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// View of a matrix for gemm, optionally transposed.
struct GemmArg<'a> {
    data: &'a [f64],
    rows: usize,
    cols: usize,
    row_stride: isize,
    col_stride: isize,
}

impl<'a> GemmArg<'a> {
    fn plain(m: &'a Matrix) -> Self {
        Self { data: &m.data, rows: m.rows, cols: m.cols, row_stride: m.cols as isize, col_stride: 1 }
    }

    fn transposed(m: &'a Matrix) -> Self {
        Self { data: &m.data, rows: m.cols, cols: m.rows, row_stride: 1, col_stride: m.cols as isize }
    }
}

/// `out = a·b + beta·out`
fn gemm(a: GemmArg<'_>, b: GemmArg<'_>, out: &mut Matrix, beta: f64) {
    assert_eq!(a.cols, b.rows);
    assert_eq!((a.rows, b.cols), out.shape());
    if a.rows == 0 || b.cols == 0 {
        return;
    }
    if a.cols == 0 {
        if beta == 0.0 {
            out.data.iter_mut().for_each(|x| *x = 0.0);
        }
        return;
    }
    // SAFETY: the strides and dimensions describe in-bounds views of the
    // backing slices, as asserted above.
    unsafe {
        matrixmultiply::dgemm(
            a.rows,
            a.cols,
            b.cols,
            1.0,
            a.data.as_ptr(),
            a.row_stride,
            a.col_stride,
            b.data.as_ptr(),
            b.row_stride,
            b.col_stride,
            beta,
            out.data.as_mut_ptr(),
            out.cols as isize,
            1,
        );
    }
}

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug)]
enum UnaryKind {
    Sigmoid,
    Tanh,
    Exp,
    LeakyRelu(f64),
    Scale(f64),
    AddScalar(f64),
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Binary(BinaryKind, Var, Var),
    Unary(UnaryKind, Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SelectRows(Var, Vec<usize>),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    RowNorm(Var),
    RowMin(Var, Vec<usize>),
    MaskedSoftmax(Var),
    PairSum(Var, Var),
    LstmC { gates: Var, c_prev: Var, acts: Matrix },
    LstmH { gates: Var, c: Var, o: Matrix, tanh_c: Matrix },
}

struct Node {
    value: Matrix,
    op: Op,
}

/// Recorded computation. Nodes are appended in evaluation order.
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

impl Graph {
    pub fn new() -> Self {
        keep_freed_memory();
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Matrix, op: Op) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var(nodes.len() - 1)
    }

    /// Inserts a leaf node (input or parameter).
    pub fn leaf(&self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> Ref<'_, Matrix> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.shape(), (1, 1), "not a scalar");
        m.data[0]
    }

    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(&self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    fn binary(&self, kind: BinaryKind, a: Var, b: Var) -> Var {
        let value = {
            let x = self.value(a);
            let y = self.value(b);
            let (r, c) = x.shape();
            let (yr, yc) = y.shape();
            assert!(
                (yr == r || yr == 1) && (yc == c || yc == 1),
                "cannot broadcast {:?} onto {:?}",
                y.shape(),
                x.shape()
            );
            let mut out = Vec::with_capacity(r * c);
            for i in 0..r {
                let yi = if yr == 1 { 0 } else { i };
                for j in 0..c {
                    let yj = if yc == 1 { 0 } else { j };
                    let p = x.data[i * c + j];
                    let q = y.data[yi * yc + yj];
                    out.push(match kind {
                        BinaryKind::Add => p + q,
                        BinaryKind::Sub => p - q,
                        BinaryKind::Mul => p * q,
                    });
                }
            }
            Matrix::new(r, c, out)
        };
        self.push(value, Op::Binary(kind, a, b))
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        self.binary(BinaryKind::Mul, a, b)
    }

    /// Fused LSTM cell over pre-activations `gates = [i | f | g | o]`
    /// (`n×4h`) and the previous cell state (`n×h`). Returns `(h, c)`.
    pub fn lstm_cell(&self, gates: Var, c_prev: Var) -> (Var, Var) {
        let (acts, c, o, tanh_c, h) = {
            let z = self.value(gates);
            let cp = self.value(c_prev);
            let (n, width) = z.shape();
            let hid = width / 4;
            assert_eq!(width, 4 * hid, "gate width must be a multiple of 4");
            assert_eq!(cp.shape(), (n, hid), "cell state shape");
            let acts: Vec<f64> = z
                .data
                .iter()
                .enumerate()
                .map(|(k, &x)| if (k % width) / hid == 2 { x.tanh() } else { sigmoid(x) })
                .collect();
            let mut c = Vec::with_capacity(n * hid);
            let mut o = Vec::with_capacity(n * hid);
            let mut tanh_c = Vec::with_capacity(n * hid);
            let mut h = Vec::with_capacity(n * hid);
            for r in 0..n {
                let a = &acts[r * width..(r + 1) * width];
                for j in 0..hid {
                    let cj = a[hid + j] * cp.data[r * hid + j] + a[j] * a[2 * hid + j];
                    let t = cj.tanh();
                    c.push(cj);
                    o.push(a[3 * hid + j]);
                    tanh_c.push(t);
                    h.push(a[3 * hid + j] * t);
                }
            }
            let m = |d| Matrix::new(n, hid, d);
            (Matrix::new(n, width, acts), m(c), m(o), m(tanh_c), m(h))
        };
        let c = self.push(c, Op::LstmC { gates, c_prev, acts });
        let h = self.push(h, Op::LstmH { gates, c, o, tanh_c });
        (h, c)
    }

    fn unary(&self, kind: UnaryKind, a: Var) -> Var {
        let value = self.value(a).map(|x| match kind {
            UnaryKind::Sigmoid => sigmoid(x),
            UnaryKind::Tanh => x.tanh(),
            UnaryKind::Exp => x.exp(),
            UnaryKind::LeakyRelu(s) => {
                if x > 0.0 {
                    x
                } else {
                    s * x
                }
            }
            UnaryKind::Scale(s) => s * x,
            UnaryKind::AddScalar(s) => x + s,
        });
        self.push(value, Op::Unary(kind, a))
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        self.unary(UnaryKind::Sigmoid, a)
    }

    pub fn tanh(&self, a: Var) -> Var {
        self.unary(UnaryKind::Tanh, a)
    }

    pub fn exp(&self, a: Var) -> Var {
        self.unary(UnaryKind::Exp, a)
    }

    pub fn leaky_relu(&self, a: Var, slope: f64) -> Var {
        self.unary(UnaryKind::LeakyRelu(slope), a)
    }

    pub fn scale(&self, a: Var, s: f64) -> Var {
        self.unary(UnaryKind::Scale(s), a)
    }

    pub fn add_scalar(&self, a: Var, s: f64) -> Var {
        self.unary(UnaryKind::AddScalar(s), a)
    }

    pub fn concat_cols(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let value = {
            let vals: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
            let rows = vals[0].rows;
            let cols: usize = vals.iter().map(|m| m.cols).sum();
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for m in &vals {
                    assert_eq!(m.rows, rows, "concat_cols row mismatch");
                    data.extend_from_slice(m.row(r));
                }
            }
            Matrix::new(rows, cols, data)
        };
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let value = {
            let vals: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
            let cols = vals[0].cols;
            let mut data = Vec::new();
            let mut rows = 0;
            for m in &vals {
                assert_eq!(m.cols, cols, "concat_rows column mismatch");
                data.extend_from_slice(&m.data);
                rows += m.rows;
            }
            Matrix::new(rows, cols, data)
        };
        self.push(value, Op::ConcatRows(parts.to_vec()))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&self, a: Var, start: usize, end: usize) -> Var {
        let value = {
            let x = self.value(a);
            assert!(start <= end && end <= x.cols);
            let mut data = Vec::with_capacity(x.rows * (end - start));
            for r in 0..x.rows {
                data.extend_from_slice(&x.row(r)[start..end]);
            }
            Matrix::new(x.rows, end - start, data)
        };
        self.push(value, Op::SliceCols(a, start))
    }

    /// Gathers rows by index; indices may repeat.
    pub fn select_rows(&self, a: Var, idx: &[usize]) -> Var {
        let value = {
            let x = self.value(a);
            let mut data = Vec::with_capacity(idx.len() * x.cols);
            for &i in idx {
                data.extend_from_slice(x.row(i));
            }
            Matrix::new(idx.len(), x.cols, data)
        };
        self.push(value, Op::SelectRows(a, idx.to_vec()))
    }

    pub fn reshape(&self, a: Var, rows: usize, cols: usize) -> Var {
        let value = {
            let x = self.value(a);
            Matrix::new(rows, cols, x.data.clone())
        };
        self.push(value, Op::Reshape(a))
    }

    pub fn sum(&self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    pub fn mean(&self, a: Var) -> Var {
        let value = {
            let x = self.value(a);
            Matrix::scalar(x.sum() / x.len() as f64)
        };
        self.push(value, Op::Mean(a))
    }

    /// Per-row sums, `r×1`.
    pub fn row_sum(&self, a: Var) -> Var {
        let value = {
            let x = self.value(a);
            Matrix::new(x.rows, 1, (0..x.rows).map(|r| x.row(r).iter().sum()).collect())
        };
        self.push(value, Op::RowSum(a))
    }

    /// Per-row Euclidean norms, `r×1`.
    pub fn row_norm(&self, a: Var) -> Var {
        let value = {
            let x = self.value(a);
            Matrix::new(
                x.rows,
                1,
                (0..x.rows).map(|r| x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt()).collect(),
            )
        };
        self.push(value, Op::RowNorm(a))
    }

    /// Per-row minimum, `r×1`. Ties resolve to the first column.
    pub fn row_min(&self, a: Var) -> Var {
        let (value, arg) = {
            let x = self.value(a);
            let mut vals = Vec::with_capacity(x.rows);
            let mut arg = Vec::with_capacity(x.rows);
            for r in 0..x.rows {
                let (j, v) = x
                    .row(r)
                    .iter()
                    .enumerate()
                    .fold((0, f64::INFINITY), |(bj, bv), (j, &v)| if v < bv { (j, v) } else { (bj, bv) });
                vals.push(v);
                arg.push(j);
            }
            (Matrix::new(x.rows, 1, vals), arg)
        };
        self.push(value, Op::RowMin(a, arg))
    }

    /// Row-wise softmax restricted to entries where `mask` is true; masked
    /// entries are exactly zero. Rows with no admissible entry are all zero.
    pub fn masked_softmax(&self, a: Var, mask: &[bool]) -> Var {
        let value = {
            let x = self.value(a);
            assert_eq!(mask.len(), x.len());
            let mut out = Matrix::zeros(x.rows, x.cols);
            for r in 0..x.rows {
                let base = r * x.cols;
                let max = (0..x.cols)
                    .filter(|&c| mask[base + c])
                    .map(|c| x.data[base + c])
                    .fold(f64::NEG_INFINITY, f64::max);
                if max == f64::NEG_INFINITY {
                    continue;
                }
                let mut total = 0.0;
                for c in 0..x.cols {
                    if mask[base + c] {
                        let e = (x.data[base + c] - max).exp();
                        out.data[base + c] = e;
                        total += e;
                    }
                }
                for c in 0..x.cols {
                    out.data[base + c] /= total;
                }
            }
            out
        };
        self.push(value, Op::MaskedSoftmax(a))
    }

    pub fn softmax_rows(&self, a: Var) -> Var {
        let n = self.value(a).len();
        self.masked_softmax(a, &vec![true; n])
    }

    /// `out[i][j] = p[i] + q[j]` for column vectors `p` (r×1) and `q` (c×1).
    pub fn pair_sum(&self, p: Var, q: Var) -> Var {
        let value = {
            let x = self.value(p);
            let y = self.value(q);
            assert_eq!(x.cols, 1);
            assert_eq!(y.cols, 1);
            let mut out = Matrix::zeros(x.rows, y.rows);
            for i in 0..x.rows {
                for j in 0..y.rows {
                    out.set(i, j, x.data[i] + y.data[j]);
                }
            }
            out
        };
        self.push(value, Op::PairSum(p, q))
    }

    /// Gradients of the scalar `output` with respect to every node.
    pub fn backward(&self, output: Var) -> Gradients {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[output.0].value.shape(), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<Matrix>> = (0..nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let av = &nodes[a.0].value;
                    let bv = &nodes[b.0].value;
                    let da = grads[a.0].get_or_insert_with(|| Matrix::zeros(av.rows, av.cols));
                    gemm(GemmArg::plain(&g), GemmArg::transposed(bv), da, 1.0);
                    let db = grads[b.0].get_or_insert_with(|| Matrix::zeros(bv.rows, bv.cols));
                    gemm(GemmArg::transposed(av), GemmArg::plain(&g), db, 1.0);
                }
                Op::Binary(kind, a, b) => {
                    let av = &nodes[a.0].value;
                    let bv = &nodes[b.0].value;
                    let (r, c) = av.shape();
                    let (br, bc) = bv.shape();
                    let mut da = Matrix::zeros(r, c);
                    let mut db = Matrix::zeros(br, bc);
                    for i in 0..r {
                        let bi = if br == 1 { 0 } else { i };
                        for j in 0..c {
                            let bj = if bc == 1 { 0 } else { j };
                            let gij = g.data[i * c + j];
                            let k = bi * bc + bj;
                            match kind {
                                BinaryKind::Add => {
                                    da.data[i * c + j] = gij;
                                    db.data[k] += gij;
                                }
                                BinaryKind::Sub => {
                                    da.data[i * c + j] = gij;
                                    db.data[k] -= gij;
                                }
                                BinaryKind::Mul => {
                                    da.data[i * c + j] = gij * bv.data[k];
                                    db.data[k] += gij * av.data[i * c + j];
                                }
                            }
                        }
                    }
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Unary(kind, a) => {
                    let x = &nodes[a.0].value;
                    let y = &node.value;
                    let data = g
                        .data
                        .iter()
                        .zip(&x.data)
                        .zip(&y.data)
                        .map(|((&gi, &xi), &yi)| match kind {
                            UnaryKind::Sigmoid => gi * yi * (1.0 - yi),
                            UnaryKind::Tanh => gi * (1.0 - yi * yi),
                            UnaryKind::Exp => gi * yi,
                            UnaryKind::LeakyRelu(s) => {
                                if xi > 0.0 {
                                    gi
                                } else {
                                    gi * s
                                }
                            }
                            UnaryKind::Scale(s) => gi * s,
                            UnaryKind::AddScalar(_) => gi,
                        })
                        .collect();
                    accumulate(&mut grads, *a, Matrix::new(x.rows, x.cols, data));
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let (pr, pc) = nodes[p.0].value.shape();
                        let mut d = Vec::with_capacity(pr * pc);
                        for r in 0..pr {
                            d.extend_from_slice(&g.row(r)[offset..offset + pc]);
                        }
                        accumulate(&mut grads, *p, Matrix::new(pr, pc, d));
                        offset += pc;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let (pr, pc) = nodes[p.0].value.shape();
                        let d = g.data[offset * pc..(offset + pr) * pc].to_vec();
                        accumulate(&mut grads, *p, Matrix::new(pr, pc, d));
                        offset += pr;
                    }
                }
                Op::SliceCols(a, start) => {
                    let (ar, ac) = nodes[a.0].value.shape();
                    let da = grads[a.0].get_or_insert_with(|| Matrix::zeros(ar, ac));
                    for r in 0..ar {
                        for c in 0..g.cols {
                            da.data[r * ac + start + c] += g.data[r * g.cols + c];
                        }
                    }
                }
                Op::SelectRows(a, idx) => {
                    let (ar, ac) = nodes[a.0].value.shape();
                    let da = grads[a.0].get_or_insert_with(|| Matrix::zeros(ar, ac));
                    for (k, &i) in idx.iter().enumerate() {
                        for c in 0..ac {
                            da.data[i * ac + c] += g.data[k * ac + c];
                        }
                    }
                }
                Op::Reshape(a) => {
                    let (ar, ac) = nodes[a.0].value.shape();
                    accumulate(&mut grads, *a, Matrix::new(ar, ac, g.data.clone()));
                }
                Op::Sum(a) => {
                    let (ar, ac) = nodes[a.0].value.shape();
                    accumulate(&mut grads, *a, Matrix::filled(ar, ac, g.data[0]));
                }
                Op::Mean(a) => {
                    let (ar, ac) = nodes[a.0].value.shape();
                    let n = (ar * ac) as f64;
                    accumulate(&mut grads, *a, Matrix::filled(ar, ac, g.data[0] / n));
                }
                Op::RowSum(a) => {
                    let (ar, ac) = nodes[a.0].value.shape();
                    let mut d = Matrix::zeros(ar, ac);
                    for r in 0..ar {
                        for c in 0..ac {
                            d.data[r * ac + c] = g.data[r];
                        }
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::RowNorm(a) => {
                    let x = &nodes[a.0].value;
                    let mut d = Matrix::zeros(x.rows, x.cols);
                    for r in 0..x.rows {
                        let n = node.value.data[r];
                        if n > 0.0 {
                            for c in 0..x.cols {
                                d.data[r * x.cols + c] = g.data[r] * x.data[r * x.cols + c] / n;
                            }
                        }
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::RowMin(a, arg) => {
                    let (ar, ac) = nodes[a.0].value.shape();
                    let mut d = Matrix::zeros(ar, ac);
                    for r in 0..ar {
                        d.data[r * ac + arg[r]] = g.data[r];
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::MaskedSoftmax(a) => {
                    let y = &node.value;
                    let mut d = Matrix::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for c in 0..y.cols {
                            d.data[r * y.cols + c] = yr[c] * (gr[c] - dot);
                        }
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::PairSum(p, q) => {
                    let (r, c) = g.shape();
                    let mut dp = Matrix::zeros(r, 1);
                    let mut dq = Matrix::zeros(c, 1);
                    for i in 0..r {
                        for j in 0..c {
                            let v = g.data[i * c + j];
                            dp.data[i] += v;
                            dq.data[j] += v;
                        }
                    }
                    accumulate(&mut grads, *p, dp);
                    accumulate(&mut grads, *q, dq);
                }
                Op::LstmH { gates, c, o, tanh_c } => {
                    let (n, hid) = g.shape();
                    let mut dc = Matrix::zeros(n, hid);
                    let dz = grads[gates.0].get_or_insert_with(|| Matrix::zeros(n, 4 * hid));
                    for r in 0..n {
                        for j in 0..hid {
                            let k = r * hid + j;
                            let (gk, ok, tk) = (g.data[k], o.data[k], tanh_c.data[k]);
                            dz.data[r * 4 * hid + 3 * hid + j] += gk * tk * ok * (1.0 - ok);
                            dc.data[k] = gk * ok * (1.0 - tk * tk);
                        }
                    }
                    accumulate(&mut grads, *c, dc);
                }
                Op::LstmC { gates, c_prev, acts } => {
                    let (n, hid) = g.shape();
                    let cp = &nodes[c_prev.0].value;
                    let mut dcp = Matrix::zeros(n, hid);
                    let dz = grads[gates.0].get_or_insert_with(|| Matrix::zeros(n, 4 * hid));
                    for r in 0..n {
                        let a = &acts.data[r * 4 * hid..(r + 1) * 4 * hid];
                        let d = &mut dz.data[r * 4 * hid..(r + 1) * 4 * hid];
                        for j in 0..hid {
                            let k = r * hid + j;
                            let gk = g.data[k];
                            let (i, f, cand) = (a[j], a[hid + j], a[2 * hid + j]);
                            d[j] += gk * cand * i * (1.0 - i);
                            d[hid + j] += gk * cp.data[k] * f * (1.0 - f);
                            d[2 * hid + j] += gk * i * (1.0 - cand * cand);
                            dcp.data[k] = gk * f;
                        }
                    }
                    accumulate(&mut grads, *c_prev, dcp);
                }
            }
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }
}

/// Graphs allocate and free large buffers every step. By default glibc hands
/// those back to the kernel and faults them in again on the next step.
fn keep_freed_memory() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    {
        static ONCE: std::sync::Once = std::sync::Once::new();
        ONCE.call_once(|| unsafe {
            libc::mallopt(libc::M_MMAP_THRESHOLD, 32 << 20);
            libc::mallopt(libc::M_TRIM_THRESHOLD, 1 << 30);
        });
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, d: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&d),
        slot @ None => *slot = Some(d),
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

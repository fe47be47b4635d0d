//! Matrix-valued reverse-mode differentiation tape.
//!
//! Every value on the tape is a dense row-major `Mat`. Operations record
//! their inputs; [`Tape::backward`] walks the tape in reverse and returns
//! the adjoint of every node that depends on a leaf marked as requiring a
//! gradient. Reductions run in fixed index order, so repeated runs are
//! bitwise identical.

use std::rc::Rc;

#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data length does not match shape");
        Mat { rows, cols, data }
    }

    pub fn from_rows3(rows: &[[f64; 3]]) -> Self {
        Mat::from_vec(rows.len(), 3, rows.iter().flatten().copied().collect())
    }

    pub fn to_rows3(&self) -> Vec<[f64; 3]> {
        assert_eq!(self.cols, 3);
        self.data.chunks_exact(3).map(|r| [r[0], r[1], r[2]]).collect()
    }

    pub fn scalar(v: f64) -> Self {
        Mat::from_vec(1, 1, vec![v])
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols;
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn add_assign(&mut self, other: &Mat) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        Mat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }
}

/// `a · b`
pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.cols, b.rows, "matmul shape mismatch");
    let mut out = Mat::zeros(a.rows, b.cols);
    let n = b.cols;
    for i in 0..a.rows {
        let orow = &mut out.data[i * n..(i + 1) * n];
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k];
            if aik == 0.0 {
                continue;
            }
            let brow = &b.data[k * n..(k + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
    out
}

/// `a · bᵀ`
fn matmul_nt(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.cols, b.cols);
    let mut out = Mat::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let arow = a.row(i);
        for j in 0..b.rows {
            let brow = b.row(j);
            let mut acc = 0.0;
            for (x, y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            out.data[i * b.rows + j] = acc;
        }
    }
    out
}

/// `aᵀ · b`
fn matmul_tn(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.rows, b.rows);
    let mut out = Mat::zeros(a.cols, b.cols);
    let n = b.cols;
    for r in 0..a.rows {
        let arow = a.row(r);
        let brow = b.row(r);
        for (k, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out.data[k * n..(k + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Silu(Var),
    Tanh(Var),
    Log(Var),
    Sqrt(Var),
    Recip(Var),
    MulCol(Var, Var),
    SumCols(Var),
    SumRows(Var),
    Sum(Var),
    Gather(Var, Rc<[usize]>),
    ScatterAdd(Var, Rc<[usize]>),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SoftmaxRows(Var),
    Rbf(Var, Rc<[f64]>, f64),
}

struct Node {
    value: Mat,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`].
pub struct Grads {
    grads: Vec<Option<Mat>>,
}

impl Grads {
    /// Gradient for `v`, or `None` when `v` does not influence the seed.
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Mat> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Mat, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A leaf that participates in differentiation.
    pub fn param(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that is treated as a constant.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = matmul(self.value(a), self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::MatMul(a, b), ng)
    }

    /// Adds a `1×m` row vector to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let av = self.value(a);
        let bv = self.value(bias);
        assert_eq!(bv.rows, 1);
        assert_eq!(av.cols, bv.cols, "bias width mismatch");
        let mut out = av.clone();
        for r in 0..out.rows {
            for (o, b) in out.row_mut(r).iter_mut().zip(&bv.data) {
                *o += *b;
            }
        }
        let ng = self.ng(a) || self.ng(bias);
        self.push(out, Op::AddBias(a, bias), ng)
    }

    /// `x · w + b`
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let y = self.matmul(x, w);
        self.add_bias(y, b)
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Mat {
        let av = self.value(a);
        let bv = self.value(b);
        assert_eq!(av.shape(), bv.shape(), "elementwise shape mismatch");
        Mat {
            rows: av.rows,
            cols: av.cols,
            data: av.data.iter().zip(&bv.data).map(|(&x, &y)| f(x, y)).collect(),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_with(a, b, |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_with(a, b, |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_with(a, b, |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).map(|x| x * k);
        let ng = self.ng(a);
        self.push(v, Op::Scale(a, k), ng)
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).map(|x| x + k);
        let ng = self.ng(a);
        self.push(v, Op::AddScalar(a), ng)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * sigmoid(x));
        let ng = self.ng(a);
        self.push(v, Op::Silu(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        let ng = self.ng(a);
        self.push(v, Op::Tanh(a), ng)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::ln);
        let ng = self.ng(a);
        self.push(v, Op::Log(a), ng)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::sqrt);
        let ng = self.ng(a);
        self.push(v, Op::Sqrt(a), ng)
    }

    pub fn recip(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| 1.0 / x);
        let ng = self.ng(a);
        self.push(v, Op::Recip(a), ng)
    }

    /// Multiplies row `i` of `a` by `col[i]` (`col` is `n×1`).
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let av = self.value(a);
        let cv = self.value(col);
        assert_eq!(cv.cols, 1);
        assert_eq!(av.rows, cv.rows, "column broadcast mismatch");
        let mut out = av.clone();
        for r in 0..out.rows {
            let c = cv.data[r];
            for o in out.row_mut(r) {
                *o *= c;
            }
        }
        let ng = self.ng(a) || self.ng(col);
        self.push(out, Op::MulCol(a, col), ng)
    }

    /// Row sums, `n×m → n×1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let data = (0..av.rows).map(|r| av.row(r).iter().sum()).collect();
        let out = Mat::from_vec(av.rows, 1, data);
        let ng = self.ng(a);
        self.push(out, Op::SumCols(a), ng)
    }

    /// Column sums, `n×m → 1×m`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut out = Mat::zeros(1, av.cols);
        for r in 0..av.rows {
            for (o, x) in out.data.iter_mut().zip(av.row(r)) {
                *o += *x;
            }
        }
        let ng = self.ng(a);
        self.push(out, Op::SumRows(a), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        let ng = self.ng(a);
        self.push(Mat::scalar(s), Op::Sum(a), ng)
    }

    /// Row `k` of the output is row `idx[k]` of `a`.
    pub fn gather(&mut self, a: Var, idx: Rc<[usize]>) -> Var {
        let av = self.value(a);
        let mut out = Mat::zeros(idx.len(), av.cols);
        for (k, &i) in idx.iter().enumerate() {
            out.row_mut(k).copy_from_slice(av.row(i));
        }
        let ng = self.ng(a);
        self.push(out, Op::Gather(a, idx), ng)
    }

    /// Row `k` of `a` is added into row `idx[k]` of an `n_out`-row result.
    pub fn scatter_add(&mut self, a: Var, idx: Rc<[usize]>, n_out: usize) -> Var {
        let av = self.value(a);
        assert_eq!(av.rows, idx.len());
        let mut out = Mat::zeros(n_out, av.cols);
        for (k, &i) in idx.iter().enumerate() {
            for (o, x) in out.row_mut(i).iter_mut().zip(av.row(k)) {
                *o += *x;
            }
        }
        let ng = self.ng(a);
        self.push(out, Op::ScatterAdd(a, idx), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Mat::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let pv = self.value(p);
                assert_eq!(pv.rows, rows, "concat_cols row mismatch");
                out.data[r * cols + off..r * cols + off + pv.cols].copy_from_slice(pv.row(r));
                off += pv.cols;
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(out, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.cols, cols, "concat_rows column mismatch");
            data.extend_from_slice(&pv.data);
            rows += pv.rows;
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(Mat::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for r in 0..out.rows {
            let row = out.row_mut(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for x in row.iter_mut() {
                *x = (*x - m).exp();
                z += *x;
            }
            for x in row.iter_mut() {
                *x /= z;
            }
        }
        let ng = self.ng(a);
        self.push(out, Op::SoftmaxRows(a), ng)
    }

    /// Gaussian radial basis expansion of an `n×1` column:
    /// `out[i,k] = exp(-gamma (d_i - centers_k)^2)`.
    pub fn rbf(&mut self, d: Var, centers: Rc<[f64]>, gamma: f64) -> Var {
        let dv = self.value(d);
        assert_eq!(dv.cols, 1);
        let k = centers.len();
        let mut out = Mat::zeros(dv.rows, k);
        for i in 0..dv.rows {
            let di = dv.data[i];
            for (c, &mu) in centers.iter().enumerate() {
                out.data[i * k + c] = (-gamma * (di - mu) * (di - mu)).exp();
            }
        }
        let ng = self.ng(d);
        self.push(out, Op::Rbf(d, centers, gamma), ng)
    }

    /// Reverse sweep seeded with `seed` (same shape as `root`).
    pub fn backward(&self, root: Var, seed: Mat) -> Grads {
        assert_eq!(self.value(root).shape(), seed.shape(), "seed shape mismatch");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(seed);
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Grads { grads }
    }

    /// Reverse sweep from a `1×1` node with unit seed.
    pub fn backward_scalar(&self, root: Var) -> Grads {
        self.backward(root, Mat::scalar(1.0))
    }

    fn acc(&self, grads: &mut [Option<Mat>], v: Var, g: Mat) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Mat, grads: &mut [Option<Mat>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.ng(*a) {
                    self.acc(grads, *a, matmul_nt(g, self.value(*b)));
                }
                if self.ng(*b) {
                    self.acc(grads, *b, matmul_tn(self.value(*a), g));
                }
            }
            Op::AddBias(a, b) => {
                if self.ng(*b) {
                    let mut gb = Mat::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (o, x) in gb.data.iter_mut().zip(g.row(r)) {
                            *o += *x;
                        }
                    }
                    self.acc(grads, *b, gb);
                }
                self.acc(grads, *a, g.clone());
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.clone());
                if self.ng(*b) {
                    self.acc(grads, *b, g.map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    let bv = self.value(*b);
                    let d = g.data.iter().zip(&bv.data).map(|(x, y)| x * y).collect();
                    self.acc(grads, *a, Mat::from_vec(g.rows, g.cols, d));
                }
                if self.ng(*b) {
                    let av = self.value(*a);
                    let d = g.data.iter().zip(&av.data).map(|(x, y)| x * y).collect();
                    self.acc(grads, *b, Mat::from_vec(g.rows, g.cols, d));
                }
            }
            Op::Scale(a, k) => self.acc(grads, *a, g.map(|x| x * k)),
            Op::AddScalar(a) => self.acc(grads, *a, g.clone()),
            Op::Silu(a) => {
                let x = self.value(*a);
                let d = g
                    .data
                    .iter()
                    .zip(&x.data)
                    .map(|(gv, &xv)| {
                        let s = sigmoid(xv);
                        gv * s * (1.0 + xv * (1.0 - s))
                    })
                    .collect();
                self.acc(grads, *a, Mat::from_vec(g.rows, g.cols, d));
            }
            Op::Tanh(a) => {
                let d = g.data.iter().zip(&y.data).map(|(gv, yv)| gv * (1.0 - yv * yv)).collect();
                self.acc(grads, *a, Mat::from_vec(g.rows, g.cols, d));
            }
            Op::Log(a) => {
                let x = self.value(*a);
                let d = g.data.iter().zip(&x.data).map(|(gv, xv)| gv / xv).collect();
                self.acc(grads, *a, Mat::from_vec(g.rows, g.cols, d));
            }
            Op::Sqrt(a) => {
                let d = g.data.iter().zip(&y.data).map(|(gv, yv)| gv * 0.5 / yv).collect();
                self.acc(grads, *a, Mat::from_vec(g.rows, g.cols, d));
            }
            Op::Recip(a) => {
                let d = g.data.iter().zip(&y.data).map(|(gv, yv)| -gv * yv * yv).collect();
                self.acc(grads, *a, Mat::from_vec(g.rows, g.cols, d));
            }
            Op::MulCol(a, c) => {
                let av = self.value(*a);
                let cv = self.value(*c);
                if self.ng(*a) {
                    let mut ga = g.clone();
                    for r in 0..ga.rows {
                        let k = cv.data[r];
                        for x in ga.row_mut(r) {
                            *x *= k;
                        }
                    }
                    self.acc(grads, *a, ga);
                }
                if self.ng(*c) {
                    let d = (0..g.rows)
                        .map(|r| g.row(r).iter().zip(av.row(r)).map(|(x, y)| x * y).sum())
                        .collect();
                    self.acc(grads, *c, Mat::from_vec(g.rows, 1, d));
                }
            }
            Op::SumCols(a) => {
                let av = self.value(*a);
                let mut ga = Mat::zeros(av.rows, av.cols);
                for r in 0..av.rows {
                    let k = g.data[r];
                    ga.row_mut(r).fill(k);
                }
                self.acc(grads, *a, ga);
            }
            Op::SumRows(a) => {
                let av = self.value(*a);
                let mut ga = Mat::zeros(av.rows, av.cols);
                for r in 0..av.rows {
                    ga.row_mut(r).copy_from_slice(&g.data);
                }
                self.acc(grads, *a, ga);
            }
            Op::Sum(a) => {
                let av = self.value(*a);
                self.acc(grads, *a, Mat::from_vec(av.rows, av.cols, vec![g.data[0]; av.data.len()]));
            }
            Op::Gather(a, idx) => {
                let av = self.value(*a);
                let mut ga = Mat::zeros(av.rows, av.cols);
                for (k, &i) in idx.iter().enumerate() {
                    for (o, x) in ga.row_mut(i).iter_mut().zip(g.row(k)) {
                        *o += *x;
                    }
                }
                self.acc(grads, *a, ga);
            }
            Op::ScatterAdd(a, idx) => {
                let mut ga = Mat::zeros(idx.len(), g.cols);
                for (k, &i) in idx.iter().enumerate() {
                    ga.row_mut(k).copy_from_slice(g.row(i));
                }
                self.acc(grads, *a, ga);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let pc = self.value(p).cols;
                    if self.ng(p) {
                        let mut gp = Mat::zeros(g.rows, pc);
                        for r in 0..g.rows {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[off..off + pc]);
                        }
                        self.acc(grads, p, gp);
                    }
                    off += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let n = pv.data.len();
                    if self.ng(p) {
                        let gp = Mat::from_vec(pv.rows, pv.cols, g.data[off..off + n].to_vec());
                        self.acc(grads, p, gp);
                    }
                    off += n;
                }
            }
            Op::SoftmaxRows(a) => {
                let mut ga = Mat::zeros(g.rows, g.cols);
                for r in 0..g.rows {
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for (c, o) in ga.row_mut(r).iter_mut().enumerate() {
                        *o = yr[c] * (gr[c] - dot);
                    }
                }
                self.acc(grads, *a, ga);
            }
            Op::Rbf(d, centers, gamma) => {
                let dv = self.value(*d);
                let k = centers.len();
                let data = (0..dv.rows)
                    .map(|i| {
                        let di = dv.data[i];
                        (0..k)
                            .map(|c| g.data[i * k + c] * y.data[i * k + c] * (-2.0 * gamma * (di - centers[c])))
                            .sum()
                    })
                    .collect();
                self.acc(grads, *d, Mat::from_vec(dv.rows, 1, data));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central-difference check of a scalar function of one leaf.
    fn check(build: impl Fn(&mut Tape, Var) -> Var, x0: Mat) {
        let mut tape = Tape::new();
        let x = tape.param(x0.clone());
        let out = build(&mut tape, x);
        let grads = tape.backward_scalar(out);
        let g = grads.get(x).cloned().unwrap_or_else(|| Mat::zeros(x0.rows, x0.cols));
        let h = 1e-6;
        for i in 0..x0.data.len() {
            let eval = |delta: f64| {
                let mut xp = x0.clone();
                xp.data[i] += delta;
                let mut t = Tape::new();
                let xv = t.param(xp);
                let o = build(&mut t, xv);
                t.value(o).data[0]
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let err = (fd - g.data[i]).abs() / fd.abs().max(1e-3);
            assert!(err < 1e-6, "component {i}: analytic {} vs fd {fd}", g.data[i]);
        }
    }

    fn sample() -> Mat {
        Mat::from_vec(3, 2, vec![0.3, -1.2, 0.7, 2.1, -0.4, 0.9])
    }

    #[test]
    fn matmul_bias_silu_gradient() {
        let w = Mat::from_vec(2, 3, vec![0.5, -0.2, 0.1, 0.3, 0.8, -0.6]);
        check(
            move |t, x| {
                let wv = t.constant(w.clone());
                let b = t.constant(Mat::from_vec(1, 3, vec![0.1, 0.2, -0.3]));
                let h = t.linear(x, wv, b);
                let s = t.silu(h);
                let q = t.mul(s, s);
                t.sum(q)
            },
            sample(),
        );
    }

    #[test]
    fn gather_scatter_concat_gradient() {
        check(
            |t, x| {
                let idx: Rc<[usize]> = Rc::from(vec![2, 0, 0, 1]);
                let g = t.gather(x, idx.clone());
                let tg = t.tanh(g);
                let sc = t.scatter_add(tg, Rc::from(vec![1, 1, 0, 2]), 3);
                let cat = t.concat_cols(&[sc, x]);
                let rows = t.concat_rows(&[cat, cat]);
                let sq = t.mul(rows, rows);
                let s = t.sum_rows(sq);
                let s2 = t.sum_cols(s);
                t.sum(s2)
            },
            sample(),
        );
    }

    #[test]
    fn softmax_log_recip_sqrt_gradient() {
        check(
            |t, x| {
                let p = t.softmax_rows(x);
                let l = t.log(p);
                let d2 = t.mul(x, x);
                let c = t.sum_cols(d2);
                let c1 = t.add_scalar(c, 1.0);
                let r = t.sqrt(c1);
                let inv = t.recip(r);
                let m = t.mul_col(l, inv);
                let s = t.scale(m, 0.7);
                t.sum(s)
            },
            sample(),
        );
    }

    #[test]
    fn rbf_gradient() {
        check(
            |t, x| {
                let d2 = t.mul(x, x);
                let c = t.sum_cols(d2);
                let d = t.sqrt(c);
                let e = t.rbf(d, Rc::from(vec![0.0, 0.5, 1.0, 2.0]), 1.7);
                let s = t.sub(e, e);
                let s = t.add(s, e);
                t.sum(s)
            },
            sample(),
        );
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let c = t.constant(Mat::scalar(2.0));
        let p = t.param(Mat::scalar(3.0));
        let y = t.mul(c, p);
        let grads = t.backward_scalar(y);
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(p).unwrap().data[0], 2.0);
    }
}

//! Minimal reverse-mode differentiation over dense row-major f64 matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters are
//! borrowed, not copied; after [`Tape::backward`] their gradients can be
//! accumulated into a caller-owned buffer with [`Tape::accumulate_param_grads`].

use serde::{Deserialize, Serialize};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data does not match {rows}x{cols}");
        Mat { rows, cols, data }
    }

    pub fn row(v: Vec<f64>) -> Self {
        Mat {
            rows: 1,
            cols: v.len(),
            data: v,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    fn add_assign(&mut self, other: &Mat) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Geometry of a 2-D convolution over a `[channels, height * width]` input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_channels: usize,
    pub out_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
}

impl ConvGeom {
    pub fn out_hw(&self) -> (usize, usize) {
        let o = |n: usize| (n + 2 * self.pad - self.kernel) / self.stride + 1;
        (o(self.height), o(self.width))
    }

    /// Weight shape `[out_channels, in_channels / groups * kernel^2]`.
    pub fn weight_shape(&self) -> (usize, usize) {
        (
            self.out_channels,
            self.in_channels / self.groups * self.kernel * self.kernel,
        )
    }
}

enum Op {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    MulCol(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Gelu(Var),
    Conv2d { x: Var, w: Var, b: Var, g: ConvGeom },
    LayerNorm { x: Var, g: Var, b: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    SoftmaxRows(Var),
    Gather { src: Var, idx: Vec<usize> },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    MeanRows(Var),
    Reshape(Var),
}

enum Value {
    Owned(Mat),
    Param(usize),
}

struct Node {
    value: Value,
    op: Op,
    param: Option<usize>,
}

pub struct Tape<'p> {
    params: &'p [Mat],
    nodes: Vec<Node>,
    grads: Vec<Option<Mat>>,
}

fn gelu(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let y = 0.5 * x * (1.0 + t);
    let du = C * (1.0 + 3.0 * 0.044715 * x * x);
    let dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
    (y, dy)
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p [Mat]) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat {
        match &self.nodes[v.0].value {
            Value::Owned(m) => m,
            Value::Param(i) => &self.params[*i],
        }
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input.
    pub fn constant(&mut self, m: Mat) -> Var {
        self.push(m, Op::Leaf)
    }

    /// Leaf bound to parameter `id` of the borrowed parameter list.
    pub fn param(&mut self, id: usize) -> Var {
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Leaf,
            param: Some(id),
        });
        Var(self.nodes.len() - 1)
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        let m = self.value(v);
        (m.rows, m.cols)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shape mismatch");
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data.iter().zip(&y.data).map(|(p, q)| p + q).collect();
        let m = Mat::from_vec(x.rows, x.cols, data);
        self.push(m, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul shape mismatch");
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data.iter().zip(&y.data).map(|(p, q)| p * q).collect();
        let m = Mat::from_vec(x.rows, x.cols, data);
        self.push(m, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let x = self.value(a);
        let m = Mat::from_vec(x.rows, x.cols, x.data.iter().map(|v| v * s).collect());
        self.push(m, Op::Scale(a, s))
    }

    /// `a [r, c] + b [1, c]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert!(y.rows == 1 && y.cols == x.cols, "add_row shape mismatch");
        let mut m = x.clone();
        for row in m.data.chunks_exact_mut(x.cols) {
            for (v, bb) in row.iter_mut().zip(&y.data) {
                *v += bb;
            }
        }
        self.push(m, Op::AddRow(a, b))
    }

    /// `a [r, c] * v [r, 1]` broadcast over columns.
    pub fn mul_col(&mut self, a: Var, v: Var) -> Var {
        let (x, y) = (self.value(a), self.value(v));
        assert!(y.cols == 1 && y.rows == x.rows, "mul_col shape mismatch");
        let mut m = x.clone();
        for (row, s) in m.data.chunks_exact_mut(x.cols).zip(&y.data) {
            for v in row {
                *v *= s;
            }
        }
        self.push(m, Op::MulCol(a, v))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.cols, y.rows, "matmul shape mismatch");
        let mut m = Mat::zeros(x.rows, y.cols);
        for i in 0..x.rows {
            let out = &mut m.data[i * y.cols..(i + 1) * y.cols];
            for k in 0..x.cols {
                let s = x.data[i * x.cols + k];
                if s == 0.0 {
                    continue;
                }
                for (o, w) in out.iter_mut().zip(&y.data[k * y.cols..(k + 1) * y.cols]) {
                    *o += s * w;
                }
            }
        }
        self.push(m, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut m = Mat::zeros(x.cols, x.rows);
        for r in 0..x.rows {
            for c in 0..x.cols {
                m.data[c * x.rows + r] = x.data[r * x.cols + c];
            }
        }
        self.push(m, Op::Transpose(a))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let m = Mat::from_vec(x.rows, x.cols, x.data.iter().map(|&v| gelu(v).0).collect());
        self.push(m, Op::Gelu(a))
    }

    /// Convolution of `x [in_channels, h * w]` by `w` with per-channel bias
    /// `b [1, out_channels]`; output `[out_channels, ho * wo]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, g: ConvGeom) -> Var {
        let (xi, wi, bi) = (self.value(x), self.value(w), self.value(b));
        assert_eq!((xi.rows, xi.cols), (g.in_channels, g.height * g.width), "conv input shape");
        assert_eq!((wi.rows, wi.cols), g.weight_shape(), "conv weight shape");
        assert_eq!((bi.rows, bi.cols), (1, g.out_channels), "conv bias shape");
        let (ho, wo) = g.out_hw();
        let mut out = Mat::zeros(g.out_channels, ho * wo);
        conv_loop(&g, |oc, ic, wk, xo, oo| {
            out.data[oc * ho * wo + oo] += wi.data[oc * wi.cols + wk] * xi.data[ic * xi.cols + xo];
        });
        for oc in 0..g.out_channels {
            for v in &mut out.data[oc * ho * wo..(oc + 1) * ho * wo] {
                *v += bi.data[oc];
            }
        }
        self.push(out, Op::Conv2d { x, w, b, g })
    }

    /// Layer normalisation over each row with affine `g`, `b` of shape `[1, cols]`.
    pub fn layer_norm(&mut self, x: Var, g: Var, b: Var) -> Var {
        let (xi, gi, bi) = (self.value(x), self.value(g), self.value(b));
        assert!(gi.cols == xi.cols && bi.cols == xi.cols, "layer_norm shape mismatch");
        let n = xi.cols as f64;
        let mut out = Mat::zeros(xi.rows, xi.cols);
        let mut xhat = vec![0.0; xi.len()];
        let mut rstd = vec![0.0; xi.rows];
        for r in 0..xi.rows {
            let row = &xi.data[r * xi.cols..(r + 1) * xi.cols];
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let rs = 1.0 / (var + LN_EPS).sqrt();
            rstd[r] = rs;
            for c in 0..xi.cols {
                let h = (row[c] - mean) * rs;
                xhat[r * xi.cols + c] = h;
                out.data[r * xi.cols + c] = h * gi.data[c] + bi.data[c];
            }
        }
        self.push(out, Op::LayerNorm { x, g, b, xhat, rstd })
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut m = x.clone();
        for row in m.data.chunks_exact_mut(x.cols) {
            softmax_in_place(row);
        }
        self.push(m, Op::SoftmaxRows(a))
    }

    /// `out.data[i] = src.data[idx[i]]`, shaped `rows x cols`.
    pub fn gather(&mut self, src: Var, idx: Vec<usize>, rows: usize, cols: usize) -> Var {
        assert_eq!(idx.len(), rows * cols, "gather index length");
        let s = self.value(src);
        let m = Mat::from_vec(rows, cols, idx.iter().map(|&i| s.data[i]).collect());
        self.push(m, Op::Gather { src, idx })
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.cols, cols, "concat_rows width mismatch");
            data.extend_from_slice(&m.data);
            rows += m.rows;
        }
        self.push(Mat::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut m = Mat::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let x = self.value(p);
            assert_eq!(x.rows, rows, "concat_cols height mismatch");
            for r in 0..rows {
                m.data[r * cols + off..r * cols + off + x.cols]
                    .copy_from_slice(&x.data[r * x.cols..(r + 1) * x.cols]);
            }
            off += x.cols;
        }
        self.push(m, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let x = self.value(a);
        let m = Mat::from_vec(end - start, x.cols, x.data[start * x.cols..end * x.cols].to_vec());
        self.push(m, Op::SliceRows(a, start))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let x = self.value(a);
        let w = end - start;
        let mut m = Mat::zeros(x.rows, w);
        for r in 0..x.rows {
            m.data[r * w..(r + 1) * w].copy_from_slice(&x.data[r * x.cols + start..r * x.cols + end]);
        }
        self.push(m, Op::SliceCols(a, start))
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut m = Mat::zeros(1, x.cols);
        for row in x.data.chunks_exact(x.cols) {
            for (o, v) in m.data.iter_mut().zip(row) {
                *o += v;
            }
        }
        let n = x.rows as f64;
        m.data.iter_mut().for_each(|v| *v /= n);
        self.push(m, Op::MeanRows(a))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let x = self.value(a);
        assert_eq!(x.len(), rows * cols, "reshape size mismatch");
        let m = Mat::from_vec(rows, cols, x.data.clone());
        self.push(m, Op::Reshape(a))
    }

    fn grad_mut(&mut self, v: Var) -> &mut Mat {
        let (r, c) = self.shape(v);
        self.grads[v.0].get_or_insert_with(|| Mat::zeros(r, c))
    }

    /// Back-propagates `seed` (d output) from `out` through the tape.
    pub fn backward(&mut self, out: Var, seed: Mat) {
        assert_eq!(self.shape(out), (seed.rows, seed.cols), "seed shape");
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[out.0] = Some(seed);
        for i in (0..=out.0).rev() {
            let Some(dy) = self.grads[i].take() else { continue };
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
            self.backprop(Var(i), &op, &dy);
            self.nodes[i].op = op;
            self.grads[i] = Some(dy);
        }
    }

    fn backprop(&mut self, y: Var, op: &Op, dy: &Mat) {
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.grad_mut(*a).add_assign(dy);
                self.grad_mut(*b).add_assign(dy);
            }
            Op::Mul(a, b) => {
                let da: Vec<f64> = dy.data.iter().zip(&self.value(*b).data).map(|(g, v)| g * v).collect();
                let db: Vec<f64> = dy.data.iter().zip(&self.value(*a).data).map(|(g, v)| g * v).collect();
                add_data(self.grad_mut(*a), &da);
                add_data(self.grad_mut(*b), &db);
            }
            Op::Scale(a, s) => {
                let d: Vec<f64> = dy.data.iter().map(|g| g * s).collect();
                add_data(self.grad_mut(*a), &d);
            }
            Op::AddRow(a, b) => {
                self.grad_mut(*a).add_assign(dy);
                let gb = self.grad_mut(*b);
                for row in dy.data.chunks_exact(dy.cols) {
                    for (o, g) in gb.data.iter_mut().zip(row) {
                        *o += g;
                    }
                }
            }
            Op::MulCol(a, v) => {
                let (x, s) = (self.value(*a), self.value(*v));
                let mut da = dy.clone();
                let mut dv = vec![0.0; s.rows];
                for (r, dvr) in dv.iter_mut().enumerate() {
                    for c in 0..dy.cols {
                        let g = dy.data[r * dy.cols + c];
                        da.data[r * dy.cols + c] = g * s.data[r];
                        *dvr += g * x.data[r * x.cols + c];
                    }
                }
                self.grad_mut(*a).add_assign(&da);
                add_data(self.grad_mut(*v), &dv);
            }
            Op::MatMul(a, b) => {
                let (x, w) = (self.value(*a), self.value(*b));
                // dA = dY W^T, dB = X^T dY
                let mut da = Mat::zeros(x.rows, x.cols);
                for i in 0..x.rows {
                    let g = &dy.data[i * dy.cols..(i + 1) * dy.cols];
                    for k in 0..x.cols {
                        let wr = &w.data[k * w.cols..(k + 1) * w.cols];
                        da.data[i * x.cols + k] = g.iter().zip(wr).map(|(p, q)| p * q).sum();
                    }
                }
                let mut db = Mat::zeros(w.rows, w.cols);
                for i in 0..x.rows {
                    let g = &dy.data[i * dy.cols..(i + 1) * dy.cols];
                    for k in 0..x.cols {
                        let s = x.data[i * x.cols + k];
                        if s == 0.0 {
                            continue;
                        }
                        for (o, gv) in db.data[k * w.cols..(k + 1) * w.cols].iter_mut().zip(g) {
                            *o += s * gv;
                        }
                    }
                }
                self.grad_mut(*a).add_assign(&da);
                self.grad_mut(*b).add_assign(&db);
            }
            Op::Transpose(a) => {
                let mut d = Mat::zeros(dy.cols, dy.rows);
                for r in 0..dy.rows {
                    for c in 0..dy.cols {
                        d.data[c * dy.rows + r] = dy.data[r * dy.cols + c];
                    }
                }
                self.grad_mut(*a).add_assign(&d);
            }
            Op::Gelu(a) => {
                let d: Vec<f64> = dy
                    .data
                    .iter()
                    .zip(&self.value(*a).data)
                    .map(|(g, &x)| g * gelu(x).1)
                    .collect();
                add_data(self.grad_mut(*a), &d);
            }
            Op::Conv2d { x, w, b, g } => {
                let (xi, wi) = (self.value(*x), self.value(*w));
                let (ho, wo) = g.out_hw();
                let mut dx = Mat::zeros(xi.rows, xi.cols);
                let mut dw = Mat::zeros(wi.rows, wi.cols);
                conv_loop(g, |oc, ic, wk, xo, oo| {
                    let gv = dy.data[oc * ho * wo + oo];
                    dx.data[ic * xi.cols + xo] += wi.data[oc * wi.cols + wk] * gv;
                    dw.data[oc * wi.cols + wk] += xi.data[ic * xi.cols + xo] * gv;
                });
                let db: Vec<f64> = dy.data.chunks_exact(ho * wo).map(|c| c.iter().sum()).collect();
                self.grad_mut(*x).add_assign(&dx);
                self.grad_mut(*w).add_assign(&dw);
                add_data(self.grad_mut(*b), &db);
            }
            Op::LayerNorm { x, g, b, xhat, rstd } => {
                let n = dy.cols;
                let gi = self.value(*g).data.clone();
                let mut dx = Mat::zeros(dy.rows, n);
                let mut dg = vec![0.0; n];
                let mut db = vec![0.0; n];
                for r in 0..dy.rows {
                    let gy = &dy.data[r * n..(r + 1) * n];
                    let xh = &xhat[r * n..(r + 1) * n];
                    let dxh: Vec<f64> = gy.iter().zip(&gi).map(|(a, b)| a * b).collect();
                    let m1 = dxh.iter().sum::<f64>() / n as f64;
                    let m2 = dxh.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                    for c in 0..n {
                        dx.data[r * n + c] = rstd[r] * (dxh[c] - m1 - xh[c] * m2);
                        dg[c] += gy[c] * xh[c];
                        db[c] += gy[c];
                    }
                }
                self.grad_mut(*x).add_assign(&dx);
                add_data(self.grad_mut(*g), &dg);
                add_data(self.grad_mut(*b), &db);
            }
            Op::SoftmaxRows(a) => {
                let yv = self.value(y);
                let mut d = Mat::zeros(dy.rows, dy.cols);
                for r in 0..dy.rows {
                    let s = r * dy.cols..(r + 1) * dy.cols;
                    let p = &yv.data[s.clone()];
                    let g = &dy.data[s.clone()];
                    let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
                    for (o, (pv, gv)) in d.data[s].iter_mut().zip(p.iter().zip(g)) {
                        *o = pv * (gv - dot);
                    }
                }
                self.grad_mut(*a).add_assign(&d);
            }
            Op::Gather { src, idx } => {
                let gs = self.grad_mut(*src);
                for (g, &i) in dy.data.iter().zip(idx) {
                    gs.data[i] += g;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    let d = dy.data[off..off + len].to_vec();
                    add_data(self.grad_mut(p), &d);
                    off += len;
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols;
                    let mut d = Vec::with_capacity(dy.rows * w);
                    for r in 0..dy.rows {
                        d.extend_from_slice(&dy.data[r * dy.cols + off..r * dy.cols + off + w]);
                    }
                    add_data(self.grad_mut(p), &d);
                    off += w;
                }
            }
            Op::SliceRows(a, start) => {
                let cols = dy.cols;
                let ga = self.grad_mut(*a);
                for (o, g) in ga.data[start * cols..].iter_mut().zip(&dy.data) {
                    *o += g;
                }
            }
            Op::SliceCols(a, start) => {
                let ga = self.grad_mut(*a);
                let cols = ga.cols;
                for r in 0..dy.rows {
                    for c in 0..dy.cols {
                        ga.data[r * cols + start + c] += dy.data[r * dy.cols + c];
                    }
                }
            }
            Op::MeanRows(a) => {
                let ga = self.grad_mut(*a);
                let n = ga.rows as f64;
                for row in ga.data.chunks_exact_mut(dy.cols) {
                    for (o, g) in row.iter_mut().zip(&dy.data) {
                        *o += g / n;
                    }
                }
            }
            Op::Reshape(a) => add_data(self.grad_mut(*a), &dy.data),
        }
    }

    /// Gradient of a node after [`Tape::backward`], if it was reached.
    pub fn grad(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Adds every parameter leaf's gradient into `out[param_id]`.
    pub fn accumulate_param_grads(&self, out: &mut [Mat]) {
        for (node, g) in self.nodes.iter().zip(&self.grads) {
            if let (Some(id), Some(g)) = (node.param, g) {
                out[id].add_assign(g);
            }
        }
    }
}

fn add_data(m: &mut Mat, d: &[f64]) {
    for (a, b) in m.data.iter_mut().zip(d) {
        *a += b;
    }
}

/// Calls `f(out_channel, in_channel, weight_col, input_offset, output_offset)`
/// for every multiply-accumulate of the convolution.
fn conv_loop(g: &ConvGeom, mut f: impl FnMut(usize, usize, usize, usize, usize)) {
    let (ho, wo) = g.out_hw();
    let cin_g = g.in_channels / g.groups;
    let cout_g = g.out_channels / g.groups;
    let k = g.kernel;
    for oc in 0..g.out_channels {
        let grp = oc / cout_g;
        for icl in 0..cin_g {
            let ic = grp * cin_g + icl;
            for ky in 0..k {
                for kx in 0..k {
                    let wk = (icl * k + ky) * k + kx;
                    for oy in 0..ho {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.height as isize {
                            continue;
                        }
                        for ox in 0..wo {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix < 0 || ix >= g.width as isize {
                                continue;
                            }
                            f(oc, ic, wk, iy as usize * g.width + ix as usize, oy * wo + ox);
                        }
                    }
                }
            }
        }
    }
}

/// Numerically stable in-place softmax.
pub fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v /= s;
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut p = logits.to_vec();
    softmax_in_place(&mut p);
    p
}

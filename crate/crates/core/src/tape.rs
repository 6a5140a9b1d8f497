//! Reverse-mode differentiation over a recorded operation graph.
//!
//! Values are computed eagerly as nodes are pushed; `backward` walks the
//! node list in reverse and accumulates adjoints. Only the operators used by
//! the denoiser, the conditioning encoders and the kinematic losses exist.

use std::borrow::Cow;

use crate::tensor::{gemm_nn, gemm_nt, gemm_tn, Mat};

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
    MatMulNT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    AddCol(Var, Var),
    Scale(Var, f64),
    Silu(Var),
    GroupNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
        xhat: Mat,
        rstd: Vec<f64>,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Mat,
        rstd: Vec<f64>,
    },
    SoftmaxRows(Var),
    Im2Col {
        x: Var,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    Upsample2(Var),
    ConcatRows(Var, Var),
    ConcatCols(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    GatherRows {
        table: Var,
        ids: Vec<usize>,
    },
    BoneLengths {
        x: Var,
        bones: Vec<(usize, usize)>,
    },
    ColVariance(Var),
    SelectCols {
        x: Var,
        idx: Vec<usize>,
    },
    MeanAll(Var),
    MeanSquare(Var),
    Sqrt(Var),
}

struct Node<'a> {
    value: Cow<'a, Mat>,
    op: Op,
    needs_grad: bool,
}

/// Recorded computation. One tape per forward/backward pass.
#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
pub struct Grads {
    grads: Vec<Option<Mat>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Mat> {
        self.grads[v.0].take()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl<'a> Tape<'a> {
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

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    fn push(&mut self, value: Mat, op: Op, needs_grad: bool) -> Var {
        self.push_cow(Cow::Owned(value), op, needs_grad)
    }

    fn push_cow(&mut self, value: Cow<'a, Mat>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Differentiable leaf (a parameter).
    pub fn param(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Constant leaf; no adjoint is accumulated for it.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Differentiable leaf borrowing its value.
    pub fn param_ref(&mut self, value: &'a Mat) -> Var {
        self.push_cow(Cow::Borrowed(value), Op::Leaf, true)
    }

    /// Constant leaf borrowing its value.
    pub fn constant_ref(&mut self, value: &'a Mat) -> Var {
        self.push_cow(Cow::Borrowed(value), Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::MatMul(a, b), ng)
    }

    /// `a * b^T`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let mut value = Mat::zeros(av.rows(), bv.rows());
        gemm_nt(av, bv, &mut value);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::MatMulNT(a, b), ng)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let ng = self.ng(a);
        self.push(value, Op::Transpose(a), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip(self.value(b), |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip(self.value(b), |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip(self.value(b), |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Mul(a, b), ng)
    }

    /// `a[m,n] + row[1,n]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let mut value = self.value(a).clone();
        let r = self.value(row);
        debug_assert_eq!(r.shape(), (1, value.cols()));
        for i in 0..value.rows() {
            for (o, b) in value.row_mut(i).iter_mut().zip(r.data()) {
                *o += b;
            }
        }
        let ng = self.ng(a) || self.ng(row);
        self.push(value, Op::AddRow(a, row), ng)
    }

    /// `a[m,n] + col[m,1]` broadcast over columns.
    pub fn add_col(&mut self, a: Var, col: Var) -> Var {
        let mut value = self.value(a).clone();
        let c = self.value(col);
        debug_assert_eq!(c.shape(), (value.rows(), 1));
        for i in 0..value.rows() {
            let b = c.data()[i];
            for o in value.row_mut(i) {
                *o += b;
            }
        }
        let ng = self.ng(a) || self.ng(col);
        self.push(value, Op::AddCol(a, col), ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scale(s);
        let ng = self.ng(a);
        self.push(value, Op::Scale(a, s), ng)
    }

    /// Sigmoid-weighted linear unit, `x * sigmoid(x)`.
    pub fn silu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x * sigmoid(x));
        let ng = self.ng(a);
        self.push(value, Op::Silu(a), ng)
    }

    /// Group normalization of a `channels x length` map with per-channel
    /// affine `gamma`, `beta` of shape `channels x 1`.
    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize, eps: f64) -> Var {
        let xv = self.value(x);
        let (c, l) = xv.shape();
        debug_assert!(groups > 0 && c % groups == 0);
        let cg = c / groups;
        let count = (cg * l) as f64;
        let mut xhat = Mat::zeros(c, l);
        let mut rstd = Vec::with_capacity(groups);
        for g in 0..groups {
            let span = &xv.data()[g * cg * l..(g + 1) * cg * l];
            let mean = span.iter().sum::<f64>() / count;
            let var = span.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
            let rs = 1.0 / (var + eps).sqrt();
            for (o, v) in xhat.data_mut()[g * cg * l..(g + 1) * cg * l]
                .iter_mut()
                .zip(span)
            {
                *o = (v - mean) * rs;
            }
            rstd.push(rs);
        }
        let (gv, bv) = (self.value(gamma), self.value(beta));
        let mut value = xhat.clone();
        for ch in 0..c {
            let (s, b) = (gv.data()[ch], bv.data()[ch]);
            for o in value.row_mut(ch) {
                *o = *o * s + b;
            }
        }
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        self.push(
            value,
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                xhat,
                rstd,
            },
            ng,
        )
    }

    /// Per-row layer normalization with `gamma`, `beta` of shape `1 x cols`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let (n, d) = xv.shape();
        let mut xhat = Mat::zeros(n, d);
        let mut rstd = Vec::with_capacity(n);
        for i in 0..n {
            let row = xv.row(i);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + eps).sqrt();
            for (o, v) in xhat.row_mut(i).iter_mut().zip(row) {
                *o = (v - mean) * rs;
            }
            rstd.push(rs);
        }
        let (gv, bv) = (self.value(gamma), self.value(beta));
        let mut value = xhat.clone();
        for i in 0..n {
            for ((o, s), b) in value.row_mut(i).iter_mut().zip(gv.data()).zip(bv.data()) {
                *o = *o * s + b;
            }
        }
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            ng,
        )
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for i in 0..value.rows() {
            softmax_in_place(value.row_mut(i));
        }
        let ng = self.ng(a);
        self.push(value, Op::SoftmaxRows(a), ng)
    }

    /// Unfolds a `channels x length` map into `(channels*kernel) x out_len`
    /// columns with zero padding, so a 1D convolution becomes one matmul.
    pub fn im2col(&mut self, x: Var, kernel: usize, stride: usize, pad: usize) -> Var {
        let xv = self.value(x);
        let (c, l) = xv.shape();
        let out_len = (l + 2 * pad - kernel) / stride + 1;
        let mut value = Mat::zeros(c * kernel, out_len);
        for ch in 0..c {
            let src = xv.row(ch);
            for k in 0..kernel {
                let dst = value.row_mut(ch * kernel + k);
                for (o, d) in dst.iter_mut().enumerate() {
                    let pos = (o * stride + k) as isize - pad as isize;
                    if pos >= 0 && (pos as usize) < l {
                        *d = src[pos as usize];
                    }
                }
            }
        }
        let ng = self.ng(x);
        self.push(
            value,
            Op::Im2Col {
                x,
                kernel,
                stride,
                pad,
            },
            ng,
        )
    }

    /// Nearest-neighbour doubling along the length axis.
    pub fn upsample2(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (c, l) = xv.shape();
        let mut value = Mat::zeros(c, 2 * l);
        for ch in 0..c {
            let src = xv.row(ch);
            let dst = value.row_mut(ch);
            for (i, &v) in src.iter().enumerate() {
                dst[2 * i] = v;
                dst[2 * i + 1] = v;
            }
        }
        let ng = self.ng(x);
        self.push(value, Op::Upsample2(x), ng)
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        debug_assert_eq!(av.cols(), bv.cols());
        let mut data = Vec::with_capacity(av.len() + bv.len());
        data.extend_from_slice(av.data());
        data.extend_from_slice(bv.data());
        let value = Mat::from_vec(av.rows() + bv.rows(), av.cols(), data).expect("concat shape");
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::ConcatRows(a, b), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut value = Mat::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let pv = self.value(p);
            debug_assert_eq!(pv.rows(), rows);
            for i in 0..rows {
                value.row_mut(i)[off..off + pv.cols()].copy_from_slice(pv.row(i));
            }
            off += pv.cols();
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(value, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        let value = Mat::from_fn(xv.rows(), len, |r, c| xv.get(r, start + c));
        let ng = self.ng(x);
        self.push(value, Op::SliceCols { x, start }, ng)
    }

    /// Row lookup `table[ids[i], :]` (embedding).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Var {
        let tv = self.value(table);
        let mut value = Mat::zeros(ids.len(), tv.cols());
        for (i, &id) in ids.iter().enumerate() {
            value.row_mut(i).copy_from_slice(tv.row(id));
        }
        let ng = self.ng(table);
        self.push(
            value,
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
            ng,
        )
    }

    /// Per-frame bone lengths of a `frames x 3J` motion. Joint 0 is the
    /// origin of bone geometry; its channels hold root translation.
    pub fn bone_lengths(&mut self, x: Var, bones: &[(usize, usize)]) -> Var {
        let xv = self.value(x);
        let value = bone_lengths_of(xv, bones);
        let ng = self.ng(x);
        self.push(
            value,
            Op::BoneLengths {
                x,
                bones: bones.to_vec(),
            },
            ng,
        )
    }

    /// Unbiased variance of each column over rows; `1 x cols`.
    pub fn col_variance(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (n, m) = xv.shape();
        let mut value = Mat::zeros(1, m);
        for j in 0..m {
            let mean = (0..n).map(|i| xv.get(i, j)).sum::<f64>() / n as f64;
            let ss: f64 = (0..n).map(|i| (xv.get(i, j) - mean).powi(2)).sum();
            value.data_mut()[j] = ss / (n as f64 - 1.0);
        }
        let ng = self.ng(x);
        self.push(value, Op::ColVariance(x), ng)
    }

    pub fn select_cols(&mut self, x: Var, idx: &[usize]) -> Var {
        let xv = self.value(x);
        let value = Mat::from_fn(xv.rows(), idx.len(), |r, c| xv.get(r, idx[c]));
        let ng = self.ng(x);
        self.push(
            value,
            Op::SelectCols {
                x,
                idx: idx.to_vec(),
            },
            ng,
        )
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let value = Mat::filled(1, 1, self.value(a).mean());
        let ng = self.ng(a);
        self.push(value, Op::MeanAll(a), ng)
    }

    pub fn mean_square(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let value = Mat::filled(1, 1, av.sum_squares() / av.len() as f64);
        let ng = self.ng(a);
        self.push(value, Op::MeanSquare(a), ng)
    }

    /// Element-wise square root; the adjoint at exactly zero is taken as 0.
    pub fn sqrt(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v.max(0.0).sqrt());
        let ng = self.ng(a);
        self.push(value, Op::Sqrt(a), ng)
    }

    /// Accumulates d`out`/d(node) for every node, seeding `out` with ones.
    pub fn backward(&self, out: Var) -> Grads {
        let seed = Mat::filled(
            self.value(out).rows(),
            self.value(out).cols(),
            1.0,
        );
        self.backward_with(out, seed)
    }

    pub fn backward_with(&self, out: Var, seed: Mat) -> Grads {
        let mut grads: Vec<Option<Mat>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(seed);
        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                grads[idx] = Some(g);
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Grads { grads }
    }

    fn accum(&self, grads: &mut [Option<Mat>], v: Var, f: impl FnOnce(&mut Mat)) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        let slot = &mut grads[v.0];
        if slot.is_none() {
            let (r, c) = self.nodes[v.0].value.shape();
            *slot = Some(Mat::zeros(r, c));
        }
        f(slot.as_mut().unwrap());
    }

    fn propagate(&self, node: &Node<'a>, g: &Mat, grads: &mut [Option<Mat>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.accum(grads, *a, |ga| gemm_nt(g, bv, ga));
                self.accum(grads, *b, |gb| gemm_tn(av, g, gb));
            }
            Op::MatMulNT(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.accum(grads, *a, |ga| gemm_nn(g, bv, ga));
                self.accum(grads, *b, |gb| gemm_tn(g, av, gb));
            }
            Op::Transpose(a) => {
                let gt = g.transpose();
                self.accum(grads, *a, |ga| ga.add_assign(&gt));
            }
            Op::Add(a, b) => {
                self.accum(grads, *a, |ga| ga.add_assign(g));
                self.accum(grads, *b, |gb| gb.add_assign(g));
            }
            Op::Sub(a, b) => {
                self.accum(grads, *a, |ga| ga.add_assign(g));
                self.accum(grads, *b, |gb| gb.axpy(-1.0, g));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.accum(grads, *a, |ga| {
                    for ((o, gv), y) in ga.data_mut().iter_mut().zip(g.data()).zip(bv.data()) {
                        *o += gv * y;
                    }
                });
                self.accum(grads, *b, |gb| {
                    for ((o, gv), x) in gb.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                        *o += gv * x;
                    }
                });
            }
            Op::AddRow(a, row) => {
                self.accum(grads, *a, |ga| ga.add_assign(g));
                self.accum(grads, *row, |gr| {
                    for i in 0..g.rows() {
                        for (o, v) in gr.data_mut().iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                });
            }
            Op::AddCol(a, col) => {
                self.accum(grads, *a, |ga| ga.add_assign(g));
                self.accum(grads, *col, |gc| {
                    for i in 0..g.rows() {
                        gc.data_mut()[i] += g.row(i).iter().sum::<f64>();
                    }
                });
            }
            Op::Scale(a, s) => {
                self.accum(grads, *a, |ga| ga.axpy(*s, g));
            }
            Op::Silu(a) => {
                let av = self.value(*a);
                self.accum(grads, *a, |ga| {
                    for ((o, gv), &x) in ga.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                        let s = sigmoid(x);
                        *o += gv * (s + x * s * (1.0 - s));
                    }
                });
            }
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                xhat,
                rstd,
            } => {
                let (c, l) = xhat.shape();
                let gv = self.value(*gamma);
                self.accum(grads, *gamma, |gg| {
                    for ch in 0..c {
                        gg.data_mut()[ch] += g
                            .row(ch)
                            .iter()
                            .zip(xhat.row(ch))
                            .map(|(a, b)| a * b)
                            .sum::<f64>();
                    }
                });
                self.accum(grads, *beta, |gb| {
                    for ch in 0..c {
                        gb.data_mut()[ch] += g.row(ch).iter().sum::<f64>();
                    }
                });
                self.accum(grads, *x, |gx| {
                    let cg = c / groups;
                    let count = (cg * l) as f64;
                    for (grp, &rs) in rstd.iter().enumerate() {
                        let mut sum_d = 0.0;
                        let mut sum_dx = 0.0;
                        for ch in grp * cg..(grp + 1) * cg {
                            let s = gv.data()[ch];
                            for (gy, xh) in g.row(ch).iter().zip(xhat.row(ch)) {
                                let d = gy * s;
                                sum_d += d;
                                sum_dx += d * xh;
                            }
                        }
                        for ch in grp * cg..(grp + 1) * cg {
                            let s = gv.data()[ch];
                            let out = gx.row_mut(ch);
                            for ((o, gy), xh) in out.iter_mut().zip(g.row(ch)).zip(xhat.row(ch)) {
                                *o += rs / count * (count * gy * s - sum_d - xh * sum_dx);
                            }
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let (n, d) = xhat.shape();
                let gv = self.value(*gamma);
                self.accum(grads, *gamma, |gg| {
                    for i in 0..n {
                        for ((o, gy), xh) in gg.data_mut().iter_mut().zip(g.row(i)).zip(xhat.row(i)) {
                            *o += gy * xh;
                        }
                    }
                });
                self.accum(grads, *beta, |gb| {
                    for i in 0..n {
                        for (o, gy) in gb.data_mut().iter_mut().zip(g.row(i)) {
                            *o += gy;
                        }
                    }
                });
                self.accum(grads, *x, |gx| {
                    let df = d as f64;
                    for i in 0..n {
                        let mut sum_d = 0.0;
                        let mut sum_dx = 0.0;
                        for ((gy, s), xh) in g.row(i).iter().zip(gv.data()).zip(xhat.row(i)) {
                            sum_d += gy * s;
                            sum_dx += gy * s * xh;
                        }
                        let rs = rstd[i];
                        let out = gx.row_mut(i);
                        for (((o, gy), s), xh) in
                            out.iter_mut().zip(g.row(i)).zip(gv.data()).zip(xhat.row(i))
                        {
                            *o += rs / df * (df * gy * s - sum_d - xh * sum_dx);
                        }
                    }
                });
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                self.accum(grads, *a, |ga| {
                    for i in 0..y.rows() {
                        let dot: f64 = g.row(i).iter().zip(y.row(i)).map(|(a, b)| a * b).sum();
                        for ((o, gy), yv) in ga.row_mut(i).iter_mut().zip(g.row(i)).zip(y.row(i)) {
                            *o += yv * (gy - dot);
                        }
                    }
                });
            }
            Op::Im2Col {
                x,
                kernel,
                stride,
                pad,
            } => {
                let (c, l) = self.value(*x).shape();
                self.accum(grads, *x, |gx| {
                    for ch in 0..c {
                        for k in 0..*kernel {
                            let src = g.row(ch * kernel + k);
                            let dst = gx.row_mut(ch);
                            for (o, &gv) in src.iter().enumerate() {
                                let pos = (o * stride + k) as isize - *pad as isize;
                                if pos >= 0 && (pos as usize) < l {
                                    dst[pos as usize] += gv;
                                }
                            }
                        }
                    }
                });
            }
            Op::Upsample2(x) => {
                self.accum(grads, *x, |gx| {
                    for ch in 0..gx.rows() {
                        let src = g.row(ch);
                        for (i, o) in gx.row_mut(ch).iter_mut().enumerate() {
                            *o += src[2 * i] + src[2 * i + 1];
                        }
                    }
                });
            }
            Op::ConcatRows(a, b) => {
                let ra = self.value(*a).rows();
                let rb = self.value(*b).rows();
                self.accum(grads, *a, |ga| ga.add_assign(&g.slice_rows(0, ra)));
                self.accum(grads, *b, |gb| gb.add_assign(&g.slice_rows(ra, rb)));
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    self.accum(grads, p, |gp| {
                        for i in 0..g.rows() {
                            for (o, v) in gp.row_mut(i).iter_mut().zip(&g.row(i)[off..off + w]) {
                                *o += v;
                            }
                        }
                    });
                    off += w;
                }
            }
            Op::SliceCols { x, start } => {
                self.accum(grads, *x, |gx| {
                    for i in 0..g.rows() {
                        let w = g.cols();
                        for (o, v) in gx.row_mut(i)[*start..start + w].iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                });
            }
            Op::GatherRows { table, ids } => {
                self.accum(grads, *table, |gt| {
                    for (i, &id) in ids.iter().enumerate() {
                        for (o, v) in gt.row_mut(id).iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                });
            }
            Op::BoneLengths { x, bones } => {
                let xv = self.value(*x);
                let lens = &node.value;
                self.accum(grads, *x, |gx| {
                    for n in 0..xv.rows() {
                        for (b, &(child, parent)) in bones.iter().enumerate() {
                            let len = lens.get(n, b);
                            if len == 0.0 {
                                continue;
                            }
                            let coef = g.get(n, b) / len;
                            for k in 0..3 {
                                let pc = joint_coord(xv, n, child, k);
                                let pp = joint_coord(xv, n, parent, k);
                                let dv = coef * (pc - pp);
                                if child != 0 {
                                    gx.data_mut()[n * xv.cols() + 3 * child + k] += dv;
                                }
                                if parent != 0 {
                                    gx.data_mut()[n * xv.cols() + 3 * parent + k] -= dv;
                                }
                            }
                        }
                    }
                });
            }
            Op::ColVariance(x) => {
                let xv = self.value(*x);
                let (n, m) = xv.shape();
                self.accum(grads, *x, |gx| {
                    for j in 0..m {
                        let mean = (0..n).map(|i| xv.get(i, j)).sum::<f64>() / n as f64;
                        let coef = 2.0 * g.data()[j] / (n as f64 - 1.0);
                        for i in 0..n {
                            gx.data_mut()[i * m + j] += coef * (xv.get(i, j) - mean);
                        }
                    }
                });
            }
            Op::SelectCols { x, idx } => {
                self.accum(grads, *x, |gx| {
                    for i in 0..g.rows() {
                        for (c, &src) in idx.iter().enumerate() {
                            let cols = gx.cols();
                            gx.data_mut()[i * cols + src] += g.get(i, c);
                        }
                    }
                });
            }
            Op::MeanAll(a) => {
                let n = self.value(*a).len() as f64;
                let s = g.data()[0] / n;
                self.accum(grads, *a, |ga| {
                    for o in ga.data_mut() {
                        *o += s;
                    }
                });
            }
            Op::MeanSquare(a) => {
                let av = self.value(*a);
                let s = 2.0 * g.data()[0] / av.len() as f64;
                self.accum(grads, *a, |ga| ga.axpy(s, av));
            }
            Op::Sqrt(a) => {
                let y = &node.value;
                self.accum(grads, *a, |ga| {
                    for ((o, gv), &yv) in ga.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        if yv > 0.0 {
                            *o += gv * 0.5 / yv;
                        }
                    }
                });
            }
        }
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
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

#[inline]
fn joint_coord(x: &Mat, frame: usize, joint: usize, axis: usize) -> f64 {
    if joint == 0 {
        0.0
    } else {
        x.get(frame, 3 * joint + axis)
    }
}

pub(crate) fn bone_lengths_of(x: &Mat, bones: &[(usize, usize)]) -> Mat {
    Mat::from_fn(x.rows(), bones.len(), |n, b| {
        let (child, parent) = bones[b];
        (0..3)
            .map(|k| {
                let d = joint_coord(x, n, child, k) - joint_coord(x, n, parent, k);
                d * d
            })
            .sum::<f64>()
            .sqrt()
    })
}

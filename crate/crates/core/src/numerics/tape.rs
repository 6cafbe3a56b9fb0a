//! Reverse-mode differentiation over a linear tape of primitive applications.
//!
//! A [`Tape`] borrows a [`ParamStore`] read-only. Forward methods append a node
//! and return a [`Var`] handle; [`Tape::backward`] walks the nodes in reverse
//! creation order (a valid reverse topological order, since inputs always
//! precede outputs) and accumulates adjoints into a [`Grads`] map.
//!
//! Shape mismatches are configuration bugs and panic with the offending shapes.
//! All reductions run in index order, so replaying a computation yields
//! bit-identical values.

use super::params::{Grads, ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    LogSumExpRows(Var),
    SumAll(Var),
    SumAxis(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    Transpose(Var),
    Reshape(Var),
    Embedding(Var, Vec<usize>),
    Pick(Var, Vec<usize>),
    Conv1d(Var, Var, Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::AddRow(..) => "add_row",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Relu(_) => "relu",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::SoftmaxRows(_) => "softmax",
            Op::LogSoftmaxRows(_) => "log_softmax",
            Op::LogSumExpRows(_) => "logsumexp",
            Op::SumAll(_) => "sum",
            Op::SumAxis(..) => "sum_axis",
            Op::ConcatCols(_) => "concat_cols",
            Op::ConcatRows(_) => "concat_rows",
            Op::SliceCols(..) => "slice_cols",
            Op::Transpose(_) => "transpose",
            Op::Reshape(_) => "reshape",
            Op::Embedding(..) => "embedding",
            Op::Pick(..) => "pick",
            Op::Conv1d(..) => "conv1d",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
}

pub struct Tape<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

impl<'p> Tape<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_vars: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Signs of every ReLU input on the tape, in recording order. Two
    /// evaluations with equal patterns lie on the same linear piece.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(a) => Some(a),
                _ => None,
            })
            .flat_map(|a| self.value(a).data().iter().map(|&v| v > 0.0))
            .collect()
    }

    /// Leaf for a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let v = self.push(self.store.get(id).clone(), Op::Param(id));
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let (m, k) = (va.rows(), va.cols());
        let (k2, n) = (vb.rows(), vb.cols());
        assert_eq!(
            k,
            k2,
            "matmul shape mismatch: {:?} x {:?}",
            va.shape(),
            vb.shape()
        );
        let out = matmul_kernel(va.data(), vb.data(), m, k, n);
        self.push(Tensor::matrix(m, n, out), Op::MatMul(a, b))
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) {
        let (sa, sb) = (self.value(a), self.value(b));
        assert!(
            sa.rows() == sb.rows() && sa.cols() == sb.cols(),
            "{op} shape mismatch: {:?} vs {:?}",
            sa.shape(),
            sb.shape()
        );
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.same_shape("add", a, b);
        let out = zip_map(self.value(a), self.value(b), |x, y| x + y);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.same_shape("sub", a, b);
        let out = zip_map(self.value(a), self.value(b), |x, y| x - y);
        self.push(out, Op::Sub(a, b))
    }

    /// `a[m x n] + row[n]`, broadcasting the row over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (va, vr) = (self.value(a), self.value(row));
        let n = va.cols();
        assert_eq!(
            vr.numel(),
            n,
            "add_row shape mismatch: {:?} + row {:?}",
            va.shape(),
            vr.shape()
        );
        let mut out = va.clone();
        for chunk in out.data_mut().chunks_mut(n) {
            for (o, r) in chunk.iter_mut().zip(vr.data()) {
                *o += r;
            }
        }
        self.push(out, Op::AddRow(a, row))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.same_shape("mul", a, b);
        let out = zip_map(self.value(a), self.value(b), |x, y| x * y);
        self.push(out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f32) -> Var {
        let out = self.value(a).map(|x| x * c);
        self.push(out, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f32) -> Var {
        let out = self.value(a).map(|x| x + c);
        self.push(out, Op::AddScalar(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f32::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f32::exp);
        self.push(out, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f32::ln);
        self.push(out, Op::Log(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let mut out = va.clone();
        let n = va.cols();
        for row in out.data_mut().chunks_mut(n) {
            softmax_in_place(row);
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let mut out = va.clone();
        let n = va.cols();
        for row in out.data_mut().chunks_mut(n) {
            let lse = logsumexp(row);
            for x in row.iter_mut() {
                *x -= lse;
            }
        }
        self.push(out, Op::LogSoftmaxRows(a))
    }

    /// Row-wise log-sum-exp, `[m x n] -> [m x 1]`.
    pub fn logsumexp_rows(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let n = va.cols();
        let out: Vec<f32> = va.data().chunks(n).map(logsumexp).collect();
        let m = out.len();
        self.push(Tensor::matrix(m, 1, out), Op::LogSumExpRows(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel() as f32;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Sum over `axis` of a matrix: axis 0 gives `[1 x n]`, axis 1 gives `[m x 1]`.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Var {
        let va = self.value(a);
        let (m, n) = (va.rows(), va.cols());
        let out = match axis {
            0 => {
                let mut acc = vec![0.0; n];
                for row in va.data().chunks(n) {
                    for (s, x) in acc.iter_mut().zip(row) {
                        *s += x;
                    }
                }
                Tensor::matrix(1, n, acc)
            }
            1 => Tensor::matrix(m, 1, va.data().chunks(n).map(|r| r.iter().sum()).collect()),
            _ => panic!("sum_axis: axis {axis} out of range for {:?}", va.shape()),
        };
        self.push(out, Op::SumAxis(a, axis))
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Var {
        let va = self.value(a);
        let len = if axis == 0 { va.rows() } else { va.cols() } as f32;
        let s = self.sum_axis(a, axis);
        self.scale(s, 1.0 / len)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let m = self.value(parts[0]).rows();
        for &p in parts {
            assert_eq!(
                self.value(p).rows(),
                m,
                "concat_cols row mismatch: {:?}",
                parts.iter().map(|&q| self.value(q).shape().to_vec()).collect::<Vec<_>>()
            );
        }
        let n: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Vec::with_capacity(m * n);
        for r in 0..m {
            for &p in parts {
                out.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        self.push(Tensor::matrix(m, n, out), Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let n = self.value(parts[0]).cols();
        let mut out = Vec::new();
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.cols(), n, "concat_rows column mismatch: {:?}", v.shape());
            out.extend_from_slice(v.data());
        }
        let m = out.len() / n;
        self.push(Tensor::matrix(m, n, out), Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let va = self.value(a);
        let (m, n) = (va.rows(), va.cols());
        assert!(
            start + len <= n && len > 0,
            "slice_cols [{start}, {}) out of range for {:?}",
            start + len,
            va.shape()
        );
        let mut out = Vec::with_capacity(m * len);
        for r in 0..m {
            out.extend_from_slice(&va.row_slice(r)[start..start + len]);
        }
        self.push(Tensor::matrix(m, len, out), Op::SliceCols(a, start))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let (m, n) = (va.rows(), va.cols());
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            for c in 0..n {
                out[c * m + r] = va.data()[r * n + c];
            }
        }
        self.push(Tensor::matrix(n, m, out), Op::Transpose(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let out = self.value(a).clone().reshaped(shape);
        self.push(out, Op::Reshape(a))
    }

    /// Gathers rows of `table[v x d]` for each id, giving `[ids.len() x d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Var {
        let vt = self.value(table);
        let (v, d) = (vt.rows(), vt.cols());
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            assert!(id < v, "embedding id {id} out of range for table {:?}", vt.shape());
            out.extend_from_slice(vt.row_slice(id));
        }
        self.push(
            Tensor::matrix(ids.len(), d, out),
            Op::Embedding(table, ids.to_vec()),
        )
    }

    /// Selects one column per row: `out[r] = a[r, cols[r]]`, shape `[m x 1]`.
    pub fn pick(&mut self, a: Var, cols: &[usize]) -> Var {
        let va = self.value(a);
        let (m, n) = (va.rows(), va.cols());
        assert_eq!(cols.len(), m, "pick needs one column per row of {:?}", va.shape());
        let out = cols
            .iter()
            .enumerate()
            .map(|(r, &c)| {
                assert!(c < n, "pick column {c} out of range for {:?}", va.shape());
                va.data()[r * n + c]
            })
            .collect();
        self.push(Tensor::matrix(m, 1, out), Op::Pick(a, cols.to_vec()))
    }

    /// Same-length 1-D convolution with replicate-edge padding.
    ///
    /// `input` is `[c_in x t]`, `kernel` is `[c_out x c_in x w]` with odd `w`,
    /// `bias` has `c_out` values. Output is `[c_out x t]`.
    pub fn conv1d(&mut self, input: Var, kernel: Var, bias: Var) -> Var {
        let (vx, vk, vb) = (self.value(input), self.value(kernel), self.value(bias));
        let ks = vk.shape();
        assert!(
            ks.len() == 3 && ks[2] % 2 == 1,
            "conv1d kernel must be [c_out, c_in, odd width], got {ks:?}"
        );
        let (c_out, c_in, w) = (ks[0], ks[1], ks[2]);
        assert_eq!(
            vx.rows(),
            c_in,
            "conv1d input {:?} does not match kernel {ks:?}",
            vx.shape()
        );
        assert_eq!(vb.numel(), c_out, "conv1d bias {:?} vs kernel {ks:?}", vb.shape());
        let t = vx.cols();
        let idx = conv_index(t, w);
        let x = vx.data();
        let k = vk.data();
        let mut out = vec![0.0; c_out * t];
        for o in 0..c_out {
            let orow = &mut out[o * t..(o + 1) * t];
            orow.fill(vb.data()[o]);
            for c in 0..c_in {
                let xrow = &x[c * t..(c + 1) * t];
                let krow = &k[(o * c_in + c) * w..(o * c_in + c + 1) * w];
                for (ti, o_val) in orow.iter_mut().enumerate() {
                    let src = &idx[ti * w..(ti + 1) * w];
                    let mut acc = 0.0;
                    for (kv, &s) in krow.iter().zip(src) {
                        acc += kv * xrow[s];
                    }
                    *o_val += acc;
                }
            }
        }
        self.push(
            Tensor::matrix(c_out, t, out),
            Op::Conv1d(input, kernel, bias),
        )
    }

    /// Gradients of the scalar `loss` with respect to every parameter leaf.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        adj[loss.0] = Some(Tensor::full(lv.shape(), 1.0));
        let mut grads = Grads::empty(self.store.len());

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            let y = &node.value;
            let mut out: Vec<(Var, Tensor)> = Vec::with_capacity(3);
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => grads.accumulate_into(*id, &g),
                Op::MatMul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (va.rows(), va.cols(), vb.cols());
                    // dA = dC * B^T
                    let mut da = vec![0.0; m * k];
                    for r in 0..m {
                        let grow = &g.data()[r * n..(r + 1) * n];
                        for (kk, d) in da[r * k..(r + 1) * k].iter_mut().enumerate() {
                            *d = dot(grow, &vb.data()[kk * n..(kk + 1) * n]);
                        }
                    }
                    // dB = A^T * dC
                    let mut db = vec![0.0; k * n];
                    for r in 0..m {
                        let grow = &g.data()[r * n..(r + 1) * n];
                        let arow = &va.data()[r * k..(r + 1) * k];
                        for (kk, &av) in arow.iter().enumerate() {
                            if av != 0.0 {
                                axpy(av, grow, &mut db[kk * n..(kk + 1) * n]);
                            }
                        }
                    }
                    let sa = va.shape().to_vec();
                    let sb = vb.shape().to_vec();
                    out.push((*a, Tensor::new(sa, da)));
                    out.push((*b, Tensor::new(sb, db)));
                }
                Op::Add(a, b) => {
                    out.push((*a, g.clone().reshaped(self.shape(*a))));
                    out.push((*b, g.reshaped(self.shape(*b))));
                }
                Op::Sub(a, b) => {
                    let neg = g.map(|x| -x).reshaped(self.shape(*b));
                    out.push((*a, g.reshaped(self.shape(*a))));
                    out.push((*b, neg));
                }
                Op::AddRow(a, row) => {
                    let n = g.cols();
                    let mut dr = vec![0.0; n];
                    for chunk in g.data().chunks(n) {
                        for (s, x) in dr.iter_mut().zip(chunk) {
                            *s += x;
                        }
                    }
                    let sr = self.shape(*row).to_vec();
                    out.push((*row, Tensor::new(sr, dr)));
                    out.push((*a, g));
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let da = zip_map(&g, vb, |gx, bx| gx * bx).reshaped(va.shape());
                    let db = zip_map(&g, va, |gx, ax| gx * ax).reshaped(vb.shape());
                    out.push((*a, da));
                    out.push((*b, db));
                }
                Op::Scale(a, c) => out.push((*a, g.map(|x| x * c))),
                Op::AddScalar(a) => out.push((*a, g)),
                Op::Sigmoid(a) => {
                    out.push((*a, zip_map(&g, y, |gx, s| gx * s * (1.0 - s))))
                }
                Op::Tanh(a) => {
                    out.push((*a, zip_map(&g, y, |gx, t| gx * (1.0 - t * t))))
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let d = zip_map(&g, x, |gx, xv| if xv > 0.0 { gx } else { 0.0 });
                    out.push((*a, d))
                }
                Op::Exp(a) => out.push((*a, zip_map(&g, y, |gx, e| gx * e))),
                Op::Log(a) => {
                    let x = self.value(*a);
                    out.push((*a, zip_map(&g, x, |gx, xv| gx / xv)))
                }
                Op::SoftmaxRows(a) => {
                    let n = y.cols();
                    let mut d = g.clone();
                    for (drow, yrow) in d.data_mut().chunks_mut(n).zip(y.data().chunks(n)) {
                        let s = dot(drow, yrow);
                        for (dv, yv) in drow.iter_mut().zip(yrow) {
                            *dv = yv * (*dv - s);
                        }
                    }
                    out.push((*a, d))
                }
                Op::LogSoftmaxRows(a) => {
                    let n = y.cols();
                    let mut d = g.clone();
                    for (drow, yrow) in d.data_mut().chunks_mut(n).zip(y.data().chunks(n)) {
                        let s: f32 = drow.iter().sum();
                        for (dv, yv) in drow.iter_mut().zip(yrow) {
                            *dv -= yv.exp() * s;
                        }
                    }
                    out.push((*a, d))
                }
                Op::LogSumExpRows(a) => {
                    let x = self.value(*a);
                    let n = x.cols();
                    let mut d = x.clone();
                    for (r, row) in d.data_mut().chunks_mut(n).enumerate() {
                        let lse = y.data()[r];
                        let gr = g.data()[r];
                        for v in row.iter_mut() {
                            *v = gr * (*v - lse).exp();
                        }
                    }
                    out.push((*a, d))
                }
                Op::SumAll(a) => {
                    let s = g.item();
                    out.push((*a, Tensor::full(self.shape(*a), s)))
                }
                Op::SumAxis(a, axis) => {
                    let x = self.value(*a);
                    let (m, n) = (x.rows(), x.cols());
                    let mut d = vec![0.0; m * n];
                    for r in 0..m {
                        for c in 0..n {
                            d[r * n + c] = if *axis == 0 { g.data()[c] } else { g.data()[r] };
                        }
                    }
                    out.push((*a, Tensor::new(x.shape().to_vec(), d)))
                }
                Op::ConcatCols(parts) => {
                    let m = g.rows();
                    let n = g.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let pv = self.value(p);
                        let pc = pv.cols();
                        let mut d = Vec::with_capacity(m * pc);
                        for r in 0..m {
                            d.extend_from_slice(&g.data()[r * n + offset..r * n + offset + pc]);
                        }
                        offset += pc;
                        out.push((p, Tensor::new(pv.shape().to_vec(), d)));
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let pv = self.value(p);
                        let len = pv.numel();
                        let d = g.data()[offset..offset + len].to_vec();
                        offset += len;
                        out.push((p, Tensor::new(pv.shape().to_vec(), d)));
                    }
                }
                Op::SliceCols(a, start) => {
                    let x = self.value(*a);
                    let (m, n) = (x.rows(), x.cols());
                    let len = g.cols();
                    let mut d = vec![0.0; m * n];
                    for r in 0..m {
                        d[r * n + start..r * n + start + len]
                            .copy_from_slice(&g.data()[r * len..(r + 1) * len]);
                    }
                    out.push((*a, Tensor::new(x.shape().to_vec(), d)))
                }
                Op::Transpose(a) => {
                    let (m, n) = (g.rows(), g.cols());
                    let mut d = vec![0.0; m * n];
                    for r in 0..m {
                        for c in 0..n {
                            d[c * m + r] = g.data()[r * n + c];
                        }
                    }
                    out.push((*a, Tensor::new(self.shape(*a).to_vec(), d)))
                }
                Op::Reshape(a) => out.push((*a, g.reshaped(self.shape(*a)))),
                Op::Embedding(table, ids) => {
                    let vt = self.value(*table);
                    let d = vt.cols();
                    let mut dt = vec![0.0; vt.numel()];
                    for (r, &id) in ids.iter().enumerate() {
                        for (t, gv) in dt[id * d..(id + 1) * d]
                            .iter_mut()
                            .zip(&g.data()[r * d..(r + 1) * d])
                        {
                            *t += gv;
                        }
                    }
                    out.push((*table, Tensor::new(vt.shape().to_vec(), dt)))
                }
                Op::Pick(a, cols) => {
                    let x = self.value(*a);
                    let n = x.cols();
                    let mut d = vec![0.0; x.numel()];
                    for (r, &c) in cols.iter().enumerate() {
                        d[r * n + c] += g.data()[r];
                    }
                    out.push((*a, Tensor::new(x.shape().to_vec(), d)))
                }
                Op::Conv1d(input, kernel, bias) => {
                    let (vx, vk) = (self.value(*input), self.value(*kernel));
                    let ks = vk.shape();
                    let (c_out, c_in, w) = (ks[0], ks[1], ks[2]);
                    let t = vx.cols();
                    let idx = conv_index(t, w);
                    let mut dx = vec![0.0; vx.numel()];
                    let mut dk = vec![0.0; vk.numel()];
                    let mut db = vec![0.0; c_out];
                    for o in 0..c_out {
                        let grow = &g.data()[o * t..(o + 1) * t];
                        db[o] = grow.iter().sum();
                        for c in 0..c_in {
                            let xrow = &vx.data()[c * t..(c + 1) * t];
                            let kbase = (o * c_in + c) * w;
                            for (ti, &gv) in grow.iter().enumerate() {
                                let src = &idx[ti * w..(ti + 1) * w];
                                for (j, &s) in src.iter().enumerate() {
                                    dk[kbase + j] += gv * xrow[s];
                                    dx[c * t + s] += gv * vk.data()[kbase + j];
                                }
                            }
                        }
                    }
                    let sb = self.shape(*bias).to_vec();
                    out.push((*input, Tensor::new(vx.shape().to_vec(), dx)));
                    out.push((*kernel, Tensor::new(ks.to_vec(), dk)));
                    out.push((*bias, Tensor::new(sb, db)));
                }
            }
            for (v, t) in out {
                if !t.is_finite() {
                    return Err(Error::NonFinite(node.op.name()));
                }
                accumulate(&mut adj, v, t);
            }
        }
        Ok(grads)
    }
}

fn accumulate(adj: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut adj[v.0] {
        Some(t) => t.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f32, f32) -> f32) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data)
}

/// Source indices for replicate-padded convolution: entry `[t * w + j]` is the
/// input position read by tap `j` at output position `t`.
fn conv_index(t: usize, w: usize) -> Vec<usize> {
    let pad = (w / 2) as isize;
    let last = t as isize - 1;
    let mut idx = Vec::with_capacity(t * w);
    for ti in 0..t as isize {
        for j in 0..w as isize {
            idx.push((ti + j - pad).clamp(0, last) as usize);
        }
    }
    idx
}

#[inline]
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f32, x: &[f32], y: &mut [f32]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

pub(crate) fn matmul_kernel(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0; m * n];
    for r in 0..m {
        let orow = &mut out[r * n..(r + 1) * n];
        for (kk, &av) in a[r * k..(r + 1) * k].iter().enumerate() {
            if av != 0.0 {
                axpy(av, &b[kk * n..(kk + 1) * n], orow);
            }
        }
    }
    out
}

#[inline]
pub fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logsumexp(xs: &[f32]) -> f32 {
    let m = xs.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f32>().ln()
}

pub fn softmax_in_place(xs: &mut [f32]) {
    let m = xs.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut total = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - m).exp();
        total += *x;
    }
    for x in xs.iter_mut() {
        *x /= total;
    }
}

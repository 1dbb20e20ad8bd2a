//! Tape-based reverse-mode differentiation over 2-D tensors.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{ParamGrads, ParamId, ParamStore};
use super::tensor::{gemm, matmul, Tensor};
use crate::dsp::{StftPlan, C64};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

struct LstmCache {
    hidden: usize,
    gates: Vec<f64>,
    cells: Vec<f64>,
}

struct SiSnrCache {
    est_c: Vec<f64>,
    ref_c: Vec<f64>,
    dot: f64,
    ref_energy: f64,
    target_energy: f64,
    noise_energy: f64,
    clamped: bool,
}

enum Op {
    Input,
    Param(ParamId),
    MatMul { a: Var, ta: bool, b: Var, tb: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Log(Var),
    SoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols { a: Var, start: usize },
    SliceRows { a: Var, start: usize },
    MeanRows(Var),
    Sum(Var),
    Reshape(Var),
    Transpose(Var),
    ComplexAbs { re: Var, im: Var },
    Dropout { a: Var, mask: Vec<f64> },
    Lstm { gx: Var, wh: Var, cache: LstmCache },
    Istft { re: Var, im: Var, plan: StftPlan, frames: usize },
    SiSnr { est: Var, cache: SiSnrCache },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients {
    inputs: HashMap<usize, Tensor>,
    pub params: ParamGrads,
}

impl Gradients {
    /// Gradient of an input leaf created with `requires_grad`.
    pub fn input(&self, v: Var) -> Option<&Tensor> {
        self.inputs.get(&v.0)
    }
}

pub struct Graph<'a> {
    store: &'a ParamStore,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
    training: bool,
    rng: ChaCha8Rng,
    warnings: Vec<String>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'a> Graph<'a> {
    /// `training` enables dropout; `seed` drives dropout masks.
    pub fn new(store: &'a ParamStore, training: bool, seed: u64) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            training,
            rng: ChaCha8Rng::seed_from_u64(seed),
            warnings: Vec::new(),
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match self.nodes[v.0].op {
            Op::Param(id) => self.store.get(id),
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.value(v).shape()
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).data[0]
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Constant leaf (no gradient).
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Input,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Input leaf whose gradient is reported by `backward`.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Input,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: Tensor::default(),
            op: Op::Param(id),
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(op, &sa, &sb));
        }
        Ok(())
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let x = self.value(a);
        let value = Tensor {
            rows: x.rows,
            cols: x.cols,
            data: x.data.iter().map(|&v| f(v)).collect(),
        };
        self.push(value, op, &[a])
    }

    /// `op(a) op(b)` where `ta` / `tb` select transposition.
    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let ka = if ta { sa[0] } else { sa[1] };
        let kb = if tb { sb[1] } else { sb[0] };
        if ka != kb {
            return Err(Error::shape("matmul", &sa, &sb));
        }
        let value = matmul(self.value(a), ta, self.value(b), tb);
        Ok(self.push(value, Op::MatMul { a, ta, b, tb }, &[a, b]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, false, b, false)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let mut value = self.value(a).clone();
        for (x, y) in value.data.iter_mut().zip(&self.value(b).data) {
            *x -= y;
        }
        Ok(self.push(value, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let mut value = self.value(a).clone();
        for (x, y) in value.data.iter_mut().zip(&self.value(b).data) {
            *x *= y;
        }
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    /// Adds a `1 x cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        if sr != [1, sa[1]] {
            return Err(Error::shape("add_row", &sa, &sr));
        }
        let mut value = self.value(a).clone();
        let r = &self.value(row).data;
        for chunk in value.data.chunks_mut(sa[1].max(1)) {
            for (x, y) in chunk.iter_mut().zip(r) {
                *x += y;
            }
        }
        Ok(self.push(value, Op::AddRow(a, row), &[a, row]))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.map(a, Op::Scale(a, k), |v| v * k)
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        self.map(a, Op::AddScalar(a), |v| v + k)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, Op::Tanh(a), f64::tanh)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.map(a, Op::Log(a), f64::ln)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut value = x.clone();
        for row in value.data.chunks_mut(x.cols.max(1)) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            row.iter_mut().for_each(|v| *v /= s);
        }
        self.push(value, Op::SoftmaxRows(a), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.shape(parts[0])[0];
        for &p in parts {
            if self.shape(p)[0] != rows {
                return Err(Error::shape("concat_cols", &self.shape(parts[0]), &self.shape(p)));
            }
        }
        let cols: usize = parts.iter().map(|&p| self.shape(p)[1]).sum();
        let mut value = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let t = self.value(p);
                value.data[r * cols + off..r * cols + off + t.cols].copy_from_slice(t.row_slice(r));
                off += t.cols;
            }
        }
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.shape(parts[0])[1];
        for &p in parts {
            if self.shape(p)[1] != cols {
                return Err(Error::shape("concat_rows", &self.shape(parts[0]), &self.shape(p)));
            }
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(&self.value(p).data);
        }
        let rows = data.len() / cols.max(1);
        let value = Tensor { rows, cols, data };
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(a);
        if start > end || end > s[1] {
            return Err(Error::shape("slice_cols", &s, &[start, end]));
        }
        let x = self.value(a);
        let w = end - start;
        let mut value = Tensor::zeros(s[0], w);
        for r in 0..s[0] {
            value.data[r * w..(r + 1) * w].copy_from_slice(&x.row_slice(r)[start..end]);
        }
        Ok(self.push(value, Op::SliceCols { a, start }, &[a]))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(a);
        if start > end || end > s[0] {
            return Err(Error::shape("slice_rows", &s, &[start, end]));
        }
        let x = self.value(a);
        let value = Tensor {
            rows: end - start,
            cols: s[1],
            data: x.data[start * s[1]..end * s[1]].to_vec(),
        };
        Ok(self.push(value, Op::SliceRows { a, start }, &[a]))
    }

    /// Mean over rows, giving `1 x cols`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s[0] == 0 {
            return Err(Error::shape("mean_rows", &s, &[1, s[1]]));
        }
        let x = self.value(a);
        let mut value = Tensor::zeros(1, s[1]);
        for r in 0..s[0] {
            for (o, v) in value.data.iter_mut().zip(x.row_slice(r)) {
                *o += v;
            }
        }
        value.scale_assign(1.0 / s[0] as f64);
        Ok(self.push(value, Op::MeanRows(a), &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let s = self.shape(a);
        if s[0] * s[1] != rows * cols {
            return Err(Error::shape("reshape", &s, &[rows, cols]));
        }
        let value = Tensor {
            rows,
            cols,
            data: self.value(a).data.clone(),
        };
        Ok(self.push(value, Op::Reshape(a), &[a]))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a), &[a])
    }

    /// `sqrt(re^2 + im^2 + eps)`.
    pub fn complex_abs(&mut self, re: Var, im: Var, eps: f64) -> Result<Var> {
        self.same_shape("complex_abs", re, im)?;
        let (r, i) = (self.value(re), self.value(im));
        let value = Tensor {
            rows: r.rows,
            cols: r.cols,
            data: r.data.iter().zip(&i.data).map(|(a, b)| (a * a + b * b + eps).sqrt()).collect(),
        };
        Ok(self.push(value, Op::ComplexAbs { re, im }, &[re, im]))
    }

    /// Inverted dropout; identity outside training mode.
    pub fn dropout(&mut self, a: Var, rate: f64) -> Var {
        if !self.training || rate <= 0.0 {
            return a;
        }
        let keep = 1.0 - rate;
        let n = self.value(a).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if self.rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let x = self.value(a);
        let value = Tensor {
            rows: x.rows,
            cols: x.cols,
            data: x.data.iter().zip(&mask).map(|(v, m)| v * m).collect(),
        };
        self.push(value, Op::Dropout { a, mask }, &[a])
    }

    /// Unidirectional LSTM over a sequence. `gx` is `T x 4H` (input projection plus bias,
    /// gate order input, forget, cell, output); `wh` is `H x 4H`. Returns `T x H`.
    pub fn lstm(&mut self, gx: Var, wh: Var) -> Result<Var> {
        let (sg, sw) = (self.shape(gx), self.shape(wh));
        let h = sw[0];
        if sw[1] != 4 * h || sg[1] != 4 * h {
            return Err(Error::shape("lstm", &sg, &sw));
        }
        let t_len = sg[0];
        let x = self.value(gx);
        let w = self.value(wh);
        let mut gates = vec![0.0; t_len * 4 * h];
        let mut cells = vec![0.0; t_len * h];
        let mut out = Tensor::zeros(t_len, h);
        let mut z = Tensor::zeros(1, 4 * h);
        let mut h_prev = Tensor::zeros(1, h);
        let mut c_prev = vec![0.0; h];
        for t in 0..t_len {
            z.data.copy_from_slice(x.row_slice(t));
            if t > 0 {
                gemm(1.0, &h_prev, false, w, false, 1.0, &mut z);
            }
            let g = &mut gates[t * 4 * h..(t + 1) * 4 * h];
            for k in 0..h {
                let i = sigmoid(z.data[k]);
                let f = sigmoid(z.data[h + k]);
                let c_hat = z.data[2 * h + k].tanh();
                let o = sigmoid(z.data[3 * h + k]);
                g[k] = i;
                g[h + k] = f;
                g[2 * h + k] = c_hat;
                g[3 * h + k] = o;
                let c = f * c_prev[k] + i * c_hat;
                cells[t * h + k] = c;
                c_prev[k] = c;
                let hv = o * c.tanh();
                out.data[t * h + k] = hv;
                h_prev.data[k] = hv;
            }
        }
        let cache = LstmCache { hidden: h, gates, cells };
        Ok(self.push(out, Op::Lstm { gx, wh, cache }, &[gx, wh]))
    }

    /// Weighted overlap-add synthesis of a `T x F` complex spectrogram given as real and
    /// imaginary parts. Returns `1 x len`.
    pub fn istft(&mut self, re: Var, im: Var, plan: &StftPlan, len: usize) -> Result<Var> {
        self.same_shape("istft", re, im)?;
        let s = self.shape(re);
        if s[1] != plan.config().bins() {
            return Err(Error::shape("istft", &s, &[s[0], plan.config().bins()]));
        }
        let spec: Vec<C64> = self
            .value(re)
            .data
            .iter()
            .zip(&self.value(im).data)
            .map(|(&a, &b)| C64::new(a, b))
            .collect();
        let y = plan.synthesize(&spec, s[0], len);
        let op = Op::Istft {
            re,
            im,
            plan: plan.clone(),
            frames: s[0],
        };
        Ok(self.push(Tensor::row(y), op, &[re, im]))
    }

    /// Scale-invariant SNR (dB) of a `1 x S` estimate against a fixed reference. Both are
    /// mean-centred; the result is clamped to `[-cap_db, cap_db]` (zero gradient when
    /// clamped). An all-zero reference gives `-cap_db` and records a warning.
    pub fn si_snr(&mut self, est: Var, reference: &[f64], cap_db: f64) -> Result<Var> {
        let s = self.shape(est);
        if s[0] != 1 || s[1] != reference.len() {
            return Err(Error::shape("si_snr", &s, &[1, reference.len()]));
        }
        let e = &self.value(est).data;
        let cache = si_snr_parts(e, reference, cap_db);
        let value = si_snr_from_parts(&cache, cap_db);
        if cache.ref_energy == 0.0 {
            self.warnings.push("si_snr: all-zero reference scored as -cap".into());
        }
        Ok(self.push(Tensor::scalar(value), Op::SiSnr { est, cache }, &[est]))
    }

    /// Reverse pass from a `1 x 1` root.
    pub fn backward(&mut self, root: Var) -> Result<Gradients> {
        if self.shape(root) != [1, 1] {
            return Err(Error::shape("backward", &self.shape(root), &[1, 1]));
        }
        let n = root.0 + 1;
        let mut grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(1.0));
        let mut out = Gradients {
            inputs: HashMap::new(),
            params: ParamGrads::zeros_like(self.store),
        };
        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            match &self.nodes[i].op {
                Op::Input => {
                    out.inputs.insert(i, g);
                }
                Op::Param(id) => out.params.accumulate(*id, &g),
                _ => self.propagate(i, &g, &mut grads),
            }
        }
        Ok(out)
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(t) => t.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn acc_with(&self, grads: &mut [Option<Tensor>], v: Var, f: impl FnOnce(&mut Tensor)) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        let s = self.shape(v);
        let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(s[0], s[1]));
        f(slot);
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        let elementwise = |a: Var, d: &dyn Fn(usize) -> f64| -> Tensor {
            let s = self.shape(a);
            Tensor {
                rows: s[0],
                cols: s[1],
                data: (0..g.len()).map(|k| g.data[k] * d(k)).collect(),
            }
        };
        match &node.op {
            Op::Input | Op::Param(_) => unreachable!(),
            Op::MatMul { a, ta, b, tb } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (a, b, ta, tb) = (*a, *b, *ta, *tb);
                self.acc_with(grads, a, |da| {
                    if ta {
                        gemm(1.0, bv, tb, g, true, 1.0, da);
                    } else {
                        gemm(1.0, g, false, bv, !tb, 1.0, da);
                    }
                });
                self.acc_with(grads, b, |db| {
                    if tb {
                        gemm(1.0, g, true, av, ta, 1.0, db);
                    } else {
                        gemm(1.0, av, !ta, g, false, 1.0, db);
                    }
                });
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.clone());
                let mut n = g.clone();
                n.scale_assign(-1.0);
                self.acc(grads, *b, n);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.acc(grads, *a, elementwise(*a, &|k| bv.data[k]));
                self.acc(grads, *b, elementwise(*b, &|k| av.data[k]));
            }
            Op::AddRow(a, row) => {
                self.acc(grads, *a, g.clone());
                self.acc_with(grads, *row, |dr| {
                    for chunk in g.data.chunks(g.cols.max(1)) {
                        for (o, v) in dr.data.iter_mut().zip(chunk) {
                            *o += v;
                        }
                    }
                });
            }
            Op::Scale(a, k) => {
                let mut d = g.clone();
                d.scale_assign(*k);
                self.acc(grads, *a, d);
            }
            Op::AddScalar(a) => self.acc(grads, *a, g.clone()),
            Op::Sigmoid(a) => self.acc(grads, *a, elementwise(*a, &|k| y.data[k] * (1.0 - y.data[k]))),
            Op::Tanh(a) => self.acc(grads, *a, elementwise(*a, &|k| 1.0 - y.data[k] * y.data[k])),
            Op::Log(a) => {
                let x = self.value(*a);
                self.acc(grads, *a, elementwise(*a, &|k| 1.0 / x.data[k]));
            }
            Op::SoftmaxRows(a) => {
                let mut d = Tensor::zeros(y.rows, y.cols);
                for r in 0..y.rows {
                    let (yr, gr) = (y.row_slice(r), g.row_slice(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for c in 0..y.cols {
                        d.data[r * y.cols + c] = yr[c] * (gr[c] - dot);
                    }
                }
                self.acc(grads, *a, d);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = self.shape(p)[1];
                    self.acc_with(grads, p, |dp| {
                        for r in 0..g.rows {
                            for (o, v) in dp.data[r * w..(r + 1) * w].iter_mut().zip(&g.row_slice(r)[off..off + w]) {
                                *o += v;
                            }
                        }
                    });
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    self.acc_with(grads, p, |dp| {
                        for (o, v) in dp.data.iter_mut().zip(&g.data[off..off + n]) {
                            *o += v;
                        }
                    });
                    off += n;
                }
            }
            Op::SliceCols { a, start } => {
                let w = g.cols;
                let cols = self.shape(*a)[1];
                self.acc_with(grads, *a, |da| {
                    for r in 0..g.rows {
                        for (o, v) in da.data[r * cols + start..r * cols + start + w].iter_mut().zip(g.row_slice(r)) {
                            *o += v;
                        }
                    }
                });
            }
            Op::SliceRows { a, start } => {
                let cols = g.cols;
                self.acc_with(grads, *a, |da| {
                    for (o, v) in da.data[start * cols..start * cols + g.len()].iter_mut().zip(&g.data) {
                        *o += v;
                    }
                });
            }
            Op::MeanRows(a) => {
                let s = self.shape(*a);
                let k = 1.0 / s[0] as f64;
                self.acc_with(grads, *a, |da| {
                    for chunk in da.data.chunks_mut(s[1].max(1)) {
                        for (o, v) in chunk.iter_mut().zip(&g.data) {
                            *o += v * k;
                        }
                    }
                });
            }
            Op::Sum(a) => {
                let s = self.shape(*a);
                self.acc(grads, *a, Tensor::full(s[0], s[1], g.data[0]));
            }
            Op::Reshape(a) => {
                let s = self.shape(*a);
                self.acc(grads, *a, Tensor { rows: s[0], cols: s[1], data: g.data.clone() });
            }
            Op::Transpose(a) => self.acc(grads, *a, g.transpose()),
            Op::ComplexAbs { re, im } => {
                let (r, m) = (self.value(*re), self.value(*im));
                self.acc(grads, *re, elementwise(*re, &|k| r.data[k] / y.data[k]));
                self.acc(grads, *im, elementwise(*im, &|k| m.data[k] / y.data[k]));
            }
            Op::Dropout { a, mask } => self.acc(grads, *a, elementwise(*a, &|k| mask[k])),
            Op::Lstm { gx, wh, cache } => {
                let (dgx, dwh) = lstm_backward(self.value(*wh), y, cache, g);
                self.acc(grads, *gx, dgx);
                self.acc(grads, *wh, dwh);
            }
            Op::Istft { re, im, plan, frames } => {
                let (gr, gi) = plan.synthesize_adjoint(&g.data, *frames);
                let bins = plan.config().bins();
                self.acc(grads, *re, Tensor { rows: *frames, cols: bins, data: gr });
                self.acc(grads, *im, Tensor { rows: *frames, cols: bins, data: gi });
            }
            Op::SiSnr { est, cache } => {
                if cache.clamped {
                    return;
                }
                let k = 10.0 / std::f64::consts::LN_10 * g.data[0];
                let a = 2.0 * cache.dot / cache.ref_energy / cache.target_energy;
                let alpha = cache.dot / cache.ref_energy;
                let b = 2.0 / cache.noise_energy;
                let mut d: Vec<f64> = cache
                    .est_c
                    .iter()
                    .zip(&cache.ref_c)
                    .map(|(&e, &r)| k * (a * r - b * (e - alpha * r)))
                    .collect();
                // mean-centring is a projection, so its adjoint re-centres the gradient
                let mean = d.iter().sum::<f64>() / d.len() as f64;
                d.iter_mut().for_each(|v| *v -= mean);
                self.acc(grads, *est, Tensor::row(d));
            }
        }
    }
}

fn lstm_backward(w: &Tensor, out: &Tensor, cache: &LstmCache, g: &Tensor) -> (Tensor, Tensor) {
    let h = cache.hidden;
    let t_len = out.rows;
    let mut dz_all = Tensor::zeros(t_len, 4 * h);
    let mut dh_next = Tensor::zeros(1, h);
    let mut dc_next = vec![0.0; h];
    let mut dz = Tensor::zeros(1, 4 * h);
    for t in (0..t_len).rev() {
        let gates = &cache.gates[t * 4 * h..(t + 1) * 4 * h];
        for k in 0..h {
            let (i, f, c_hat, o) = (gates[k], gates[h + k], gates[2 * h + k], gates[3 * h + k]);
            let c = cache.cells[t * h + k];
            let c_prev = if t > 0 { cache.cells[(t - 1) * h + k] } else { 0.0 };
            let tc = c.tanh();
            let dh = g.data[t * h + k] + dh_next.data[k];
            let d_o = dh * tc;
            let dc = dh * o * (1.0 - tc * tc) + dc_next[k];
            let di = dc * c_hat;
            let dg = dc * i;
            let df = dc * c_prev;
            dc_next[k] = dc * f;
            dz.data[k] = di * i * (1.0 - i);
            dz.data[h + k] = df * f * (1.0 - f);
            dz.data[2 * h + k] = dg * (1.0 - c_hat * c_hat);
            dz.data[3 * h + k] = d_o * o * (1.0 - o);
        }
        dz_all.data[t * 4 * h..(t + 1) * 4 * h].copy_from_slice(&dz.data);
        if t > 0 {
            gemm(1.0, &dz, false, w, true, 0.0, &mut dh_next);
        }
    }
    // dW_h = sum_t h_{t-1}^T dz_t
    let mut dw = Tensor::zeros(h, 4 * h);
    if t_len > 1 {
        let h_prev = Tensor {
            rows: t_len - 1,
            cols: h,
            data: out.data[..(t_len - 1) * h].to_vec(),
        };
        let dz_tail = Tensor {
            rows: t_len - 1,
            cols: 4 * h,
            data: dz_all.data[4 * h..].to_vec(),
        };
        gemm(1.0, &h_prev, true, &dz_tail, false, 0.0, &mut dw);
    }
    (dz_all, dw)
}

fn si_snr_parts(est: &[f64], reference: &[f64], cap_db: f64) -> SiSnrCache {
    let n = est.len().max(1) as f64;
    let me = est.iter().sum::<f64>() / n;
    let mr = reference.iter().sum::<f64>() / n;
    let est_c: Vec<f64> = est.iter().map(|v| v - me).collect();
    let ref_c: Vec<f64> = reference.iter().map(|v| v - mr).collect();
    let dot: f64 = est_c.iter().zip(&ref_c).map(|(a, b)| a * b).sum();
    let ref_energy: f64 = ref_c.iter().map(|v| v * v).sum();
    let est_energy: f64 = est_c.iter().map(|v| v * v).sum();
    let (target_energy, noise_energy) = if ref_energy > 0.0 {
        let alpha = dot / ref_energy;
        let noise: f64 = est_c.iter().zip(&ref_c).map(|(e, r)| (e - alpha * r).powi(2)).sum();
        (alpha * alpha * ref_energy, noise)
    } else {
        (0.0, est_energy)
    };
    let mut cache = SiSnrCache {
        est_c,
        ref_c,
        dot,
        ref_energy,
        target_energy,
        noise_energy,
        clamped: true,
    };
    let raw = 10.0 * (target_energy / noise_energy).log10();
    cache.clamped = !(ref_energy > 0.0 && raw.is_finite() && raw.abs() < cap_db);
    cache
}

fn si_snr_from_parts(c: &SiSnrCache, cap_db: f64) -> f64 {
    if c.ref_energy == 0.0 {
        return -cap_db;
    }
    let raw = 10.0 * (c.target_energy / c.noise_energy).log10();
    if raw.is_nan() && c.target_energy == 0.0 && c.noise_energy == 0.0 {
        // zero estimate: no target, no noise
        return -cap_db;
    }
    raw.clamp(-cap_db, cap_db)
}

/// Plain Si-SNR in dB with the same conventions as [`Graph::si_snr`].
pub fn si_snr_value(est: &[f64], reference: &[f64], cap_db: f64) -> f64 {
    si_snr_from_parts(&si_snr_parts(est, reference, cap_db), cap_db)
}

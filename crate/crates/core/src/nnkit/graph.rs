//! Tape-based reverse-mode differentiation. Every op appends a node holding its
//! forward value; [`Graph::backward`] walks the tape once in reverse.

use std::collections::HashMap;

use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{invalid, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MulScalar(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    AddRowBias(Var, Var),
    AddChannelBias(Var, Var),
    Conv1d {
        x: Var,
        w: Var,
        stride: usize,
        pad: usize,
    },
    Upsample2(Var),
    LeakyRelu(Var, f64),
    SoftmaxRows(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    Sum(Var),
    SumSq(Var),
    StopGrad,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

/// Gradients of one backward pass, indexed by node.
#[derive(Debug)]
pub struct Grads(Vec<Option<Tensor>>);

impl Grads {
    pub fn of(&self, v: Var) -> Option<&Tensor> {
        self.0.get(v.0).and_then(|g| g.as_ref())
    }
}

fn same_shape(a: &Tensor, b: &Tensor, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return invalid(format!(
            "{op}: shape mismatch {:?} vs {:?}",
            a.shape(),
            b.shape()
        ));
    }
    Ok(())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        debug_assert!(value.all_finite(), "non-finite value from {op:?}");
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Input whose gradient is tracked.
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Binds a stored parameter. Repeated binds return the same node so shared
    /// weights accumulate a single gradient.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(
            store.value(id).clone(),
            Op::Param,
            store.is_trainable(id),
        );
        self.params.insert(id, v);
        v
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "add")?;
        let data = zip(self.value(a), self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(data, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "sub")?;
        let data = zip(self.value(a), self.value(b), |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(data, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "mul")?;
        let data = zip(self.value(a), self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(data, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let data = map(self.value(a), |x| s * x);
        let rg = self.rg(a);
        self.push(data, Op::Scale(a, s), rg)
    }

    /// Multiplies every entry of `a` by the single entry of `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return invalid(format!(
                "mul_scalar: scalar operand has shape {:?}",
                self.value(s).shape()
            ));
        }
        let k = self.value(s).data()[0];
        let data = map(self.value(a), |x| k * x);
        let rg = self.rg(a) || self.rg(s);
        Ok(self.push(data, Op::MulScalar(a, s), rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.value(a).dims2()?;
        let (k2, m) = self.value(b).dims2()?;
        if k != k2 {
            return invalid(format!("matmul: inner dimensions {k} and {k2} differ"));
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), n, k, m);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(n, m, out)?, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.value(a).dims2()?;
        let out = transpose_raw(self.value(a).data(), r, c);
        let rg = self.rg(a);
        Ok(self.push(Tensor::matrix(c, r, out)?, Op::Transpose(a), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshaped(shape.to_vec())?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    /// `x[n, m] + b[m]` on every row.
    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (n, m) = self.value(x).dims2()?;
        if self.value(b).len() != m {
            return invalid(format!(
                "add_row_bias: bias of {} values for {m} columns",
                self.value(b).len()
            ));
        }
        let mut out = self.value(x).clone();
        let bias = self.value(b).data();
        for r in 0..n {
            for (o, bv) in out.data_mut()[r * m..(r + 1) * m].iter_mut().zip(bias) {
                *o += bv;
            }
        }
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(out, Op::AddRowBias(x, b), rg))
    }

    /// `x[c, l] + b[c]` along every channel row.
    pub fn add_channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (c, l) = self.value(x).dims2()?;
        if self.value(b).len() != c {
            return invalid(format!(
                "add_channel_bias: bias of {} values for {c} channels",
                self.value(b).len()
            ));
        }
        let mut out = self.value(x).clone();
        let bias = self.value(b).data();
        for ch in 0..c {
            for o in &mut out.data_mut()[ch * l..(ch + 1) * l] {
                *o += bias[ch];
            }
        }
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(out, Op::AddChannelBias(x, b), rg))
    }

    /// 1-d convolution of `x[c_in, l]` with `w[c_out, c_in, k]`, zero padding.
    pub fn conv1d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let (cin, l) = self.value(x).dims2()?;
        let (cout, wcin, k) = match self.value(w).shape()[..] {
            [a, b, c] => (a, b, c),
            _ => {
                return invalid(format!(
                    "conv1d: kernel must be 3-d, got {:?}",
                    self.value(w).shape()
                ))
            }
        };
        if wcin != cin {
            return invalid(format!(
                "conv1d: kernel expects {wcin} input channels, got {cin}"
            ));
        }
        if stride == 0 || l + 2 * pad < k {
            return invalid(format!(
                "conv1d: invalid geometry (length {l}, kernel {k}, stride {stride}, pad {pad})"
            ));
        }
        let lout = (l + 2 * pad - k) / stride + 1;
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        let mut out = vec![0.0; cout * lout];
        for o in 0..cout {
            let yrow = &mut out[o * lout..(o + 1) * lout];
            for c in 0..cin {
                let xrow = &xd[c * l..(c + 1) * l];
                for kk in 0..k {
                    let wv = wd[(o * cin + c) * k + kk];
                    for (p, y) in yrow.iter_mut().enumerate() {
                        let src = (p * stride + kk) as isize - pad as isize;
                        if src >= 0 && (src as usize) < l {
                            *y += wv * xrow[src as usize];
                        }
                    }
                }
            }
        }
        let rg = self.rg(x) || self.rg(w);
        Ok(self.push(
            Tensor::matrix(cout, lout, out)?,
            Op::Conv1d { x, w, stride, pad },
            rg,
        ))
    }

    /// Nearest-neighbour upsampling by two along the length axis of `x[c, l]`.
    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let (c, l) = self.value(x).dims2()?;
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(2 * c * l);
        for ch in 0..c {
            for &v in &xd[ch * l..(ch + 1) * l] {
                out.push(v);
                out.push(v);
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::matrix(c, 2 * l, out)?, Op::Upsample2(x), rg))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let data = map(self.value(x), |v| if v > 0.0 { v } else { slope * v });
        let rg = self.rg(x);
        self.push(data, Op::LeakyRelu(x, slope), rg)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(c).take(r) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let rg = self.rg(x);
        Ok(self.push(out, Op::SoftmaxRows(x), rg))
    }

    /// Stacks 2-d tensors with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return invalid("concat_rows: no inputs");
        }
        let (_, c) = self.value(parts[0]).dims2()?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, pc) = self.value(p).dims2()?;
            if pc != c {
                return invalid(format!("concat_rows: column counts {c} and {pc} differ"));
            }
            rows += r;
            out.extend_from_slice(self.value(p).data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::matrix(rows, c, out)?, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Joins 2-d tensors with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return invalid("concat_cols: no inputs");
        }
        let (r, _) = self.value(parts[0]).dims2()?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = self.value(p).dims2()?;
            if pr != r {
                return invalid(format!("concat_cols: row counts {r} and {pr} differ"));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for row in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[row * w..(row + 1) * w]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::matrix(r, total, out)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, count: usize) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        if count == 0 || start + count > r {
            return invalid(format!(
                "slice_rows: rows {start}..{} out of 0..{r}",
                start + count
            ));
        }
        let out = self.value(x).data()[start * c..(start + count) * c].to_vec();
        let rg = self.rg(x);
        Ok(self.push(Tensor::matrix(count, c, out)?, Op::SliceRows(x, start), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn sum_sq(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().map(|v| v * v).sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::SumSq(x), rg)
    }

    /// Mean of squared differences.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let n = self.value(d).len() as f64;
        let s = self.sum_sq(d);
        Ok(self.scale(s, 1.0 / n))
    }

    /// Identity on values, blocks all gradient flow into `x`.
    pub fn stop_gradient(&mut self, x: Var) -> Var {
        let t = self.value(x).clone();
        self.push(t, Op::StopGrad, false)
    }

    /// Reverse pass from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        if self.value(loss).len() != 1 {
            return invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        if !self.rg(loss) {
            return Ok(Grads(grads));
        }
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.backprop_node(node, &gy, &mut grads);
            grads[i] = Some(gy);
        }
        Ok(Grads(grads))
    }

    fn backprop_node(&self, node: &Node, gy: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut send = |v: Var, g: Tensor| {
            if !self.rg(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&g),
                slot => *slot = Some(g),
            }
        };
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf | Op::Param | Op::StopGrad => {}
            Op::Add(a, b) => {
                send(*a, gy.clone());
                send(*b, gy.clone());
            }
            Op::Sub(a, b) => {
                send(*a, gy.clone());
                send(*b, map(gy, |g| -g));
            }
            Op::Mul(a, b) => {
                send(*a, zip(gy, val(*b), |g, y| g * y));
                send(*b, zip(gy, val(*a), |g, x| g * x));
            }
            Op::Scale(a, s) => send(*a, map(gy, |g| s * g)),
            Op::MulScalar(a, s) => {
                let k = val(*s).data()[0];
                send(*a, map(gy, |g| k * g));
                let ds: f64 = gy.data().iter().zip(val(*a).data()).map(|(g, x)| g * x).sum();
                send(*s, Tensor::new(val(*s).shape().to_vec(), vec![ds]).expect("scalar"));
            }
            Op::MatMul(a, b) => {
                let (n, k) = val(*a).dims2().expect("2-d");
                let (_, m) = val(*b).dims2().expect("2-d");
                if self.rg(*a) {
                    let bt = transpose_raw(val(*b).data(), k, m);
                    let da = matmul_raw(gy.data(), &bt, n, m, k);
                    send(*a, Tensor::matrix(n, k, da).expect("shape"));
                }
                if self.rg(*b) {
                    let at = transpose_raw(val(*a).data(), n, k);
                    let db = matmul_raw(&at, gy.data(), k, n, m);
                    send(*b, Tensor::matrix(k, m, db).expect("shape"));
                }
            }
            Op::Transpose(a) => {
                let (r, c) = val(*a).dims2().expect("2-d");
                send(*a, Tensor::matrix(r, c, transpose_raw(gy.data(), c, r)).expect("shape"));
            }
            Op::Reshape(a) => {
                send(*a, gy.clone().reshaped(val(*a).shape().to_vec()).expect("shape"));
            }
            Op::AddRowBias(x, b) => {
                send(*x, gy.clone());
                let (_, m) = gy.dims2().expect("2-d");
                let mut db = vec![0.0; m];
                for row in gy.data().chunks(m) {
                    for (d, g) in db.iter_mut().zip(row) {
                        *d += g;
                    }
                }
                send(*b, Tensor::new(val(*b).shape().to_vec(), db).expect("shape"));
            }
            Op::AddChannelBias(x, b) => {
                send(*x, gy.clone());
                let (_, l) = gy.dims2().expect("2-d");
                let db = gy.data().chunks(l).map(|r| r.iter().sum()).collect();
                send(*b, Tensor::new(val(*b).shape().to_vec(), db).expect("shape"));
            }
            Op::Conv1d { x, w, stride, pad } => {
                let (cin, l) = val(*x).dims2().expect("2-d");
                let [cout, _, k] = val(*w).shape()[..] else { unreachable!() };
                let lout = gy.dims2().expect("2-d").1;
                let xd = val(*x).data();
                let wd = val(*w).data();
                let gd = gy.data();
                let mut dx = vec![0.0; cin * l];
                let mut dw = vec![0.0; cout * cin * k];
                for o in 0..cout {
                    let grow = &gd[o * lout..(o + 1) * lout];
                    for c in 0..cin {
                        let xrow = &xd[c * l..(c + 1) * l];
                        for kk in 0..k {
                            let wi = (o * cin + c) * k + kk;
                            let wv = wd[wi];
                            let mut acc = 0.0;
                            for (p, &g) in grow.iter().enumerate() {
                                let src = (p * stride + kk) as isize - *pad as isize;
                                if src >= 0 && (src as usize) < l {
                                    let s = src as usize;
                                    acc += g * xrow[s];
                                    dx[c * l + s] += g * wv;
                                }
                            }
                            dw[wi] += acc;
                        }
                    }
                }
                send(*x, Tensor::matrix(cin, l, dx).expect("shape"));
                send(*w, Tensor::new(vec![cout, cin, k], dw).expect("shape"));
            }
            Op::Upsample2(x) => {
                let dx = gy.data().chunks(2).map(|p| p[0] + p[1]).collect();
                send(*x, Tensor::new(val(*x).shape().to_vec(), dx).expect("shape"));
            }
            Op::LeakyRelu(x, slope) => {
                send(*x, zip(gy, val(*x), |g, v| if v > 0.0 { g } else { slope * g }));
            }
            Op::SoftmaxRows(x) => {
                let (_, c) = val(*x).dims2().expect("2-d");
                let y = node.value.data();
                let mut dx = vec![0.0; y.len()];
                for ((drow, yrow), grow) in dx.chunks_mut(c).zip(y.chunks(c)).zip(gy.data().chunks(c)) {
                    let dot: f64 = yrow.iter().zip(grow).map(|(a, b)| a * b).sum();
                    for ((d, yv), gv) in drow.iter_mut().zip(yrow).zip(grow) {
                        *d = yv * (gv - dot);
                    }
                }
                send(*x, Tensor::new(val(*x).shape().to_vec(), dx).expect("shape"));
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = val(p).len();
                    let part = gy.data()[off..off + n].to_vec();
                    send(p, Tensor::new(val(p).shape().to_vec(), part).expect("shape"));
                    off += n;
                }
            }
            Op::ConcatCols(parts) => {
                let (r, total) = gy.dims2().expect("2-d");
                let mut col = 0;
                for &p in parts {
                    let w = val(p).dims2().expect("2-d").1;
                    let mut part = Vec::with_capacity(r * w);
                    for row in 0..r {
                        part.extend_from_slice(&gy.data()[row * total + col..row * total + col + w]);
                    }
                    send(p, Tensor::matrix(r, w, part).expect("shape"));
                    col += w;
                }
            }
            Op::SliceRows(x, start) => {
                let (_, c) = val(*x).dims2().expect("2-d");
                let mut dx = Tensor::zeros(val(*x).shape());
                dx.data_mut()[start * c..start * c + gy.len()].copy_from_slice(gy.data());
                send(*x, dx);
            }
            Op::Sum(x) => {
                let g = gy.data()[0];
                send(*x, map(val(*x), |_| g));
            }
            Op::SumSq(x) => {
                let g = gy.data()[0];
                send(*x, map(val(*x), |v| 2.0 * g * v));
            }
        }
    }

    /// Parameter gradients reached by a backward pass.
    pub fn param_grads<'a>(&'a self, grads: &'a Grads) -> impl Iterator<Item = (ParamId, &'a Tensor)> + 'a {
        self.params
            .iter()
            .filter_map(move |(&id, &v)| grads.of(v).map(|g| (id, g)))
    }

    pub fn param_var(&self, id: ParamId) -> Option<Var> {
        self.params.get(&id).copied()
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect()).expect("same shape")
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::new(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
    .expect("same shape")
}

fn matmul_raw(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, bv) in orow.iter_mut().zip(&b[p * m..(p + 1) * m]) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tensor::split_axis;
use super::{AutodiffError, Gradients, ParamId, ParamStore, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    BatchMatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Concat(Vec<Var>, usize),
    Slice { x: Var, axis: usize, start: usize },
    Reshape(Var),
    Transpose(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Elu(Var),
    Softmax(Var, usize),
    LayerNorm { x: Var, inv_std: Vec<f64> },
    Dropout(Var, Vec<f64>),
    Embedding(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    Pinball { pred: Var, target: Vec<f64>, quantiles: Vec<f64> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::BatchMatMul(..) => "bmm",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddBias(..) => "add_bias",
            Op::Scale(..) => "scale",
            Op::Concat(..) => "concat",
            Op::Slice { .. } => "slice",
            Op::Reshape(_) => "reshape",
            Op::Transpose(_) => "transpose",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Exp(_) => "exp",
            Op::Elu(_) => "elu",
            Op::Softmax(..) => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Dropout(..) => "dropout",
            Op::Embedding(..) => "embedding",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Pinball { .. } => "pinball",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
}

pub const LAYER_NORM_EPS: f64 = 1e-9;

/// Tape of one forward computation. Parameters are borrowed from a
/// [`ParamStore`]; dropout is active only when the graph carries an RNG.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<Var>>,
    dropout_rng: Option<ChaCha8Rng>,
}

fn mismatch(msg: String) -> AutodiffError {
    AutodiffError::ShapeMismatch(msg)
}

impl<'p> Graph<'p> {
    /// Evaluation-mode graph: dropout is the identity.
    pub fn new(params: &'p ParamStore) -> Self {
        Graph { params, nodes: Vec::new(), param_nodes: vec![None; params.len()], dropout_rng: None }
    }

    /// Training / Monte Carlo graph: dropout masks are drawn from `rng`.
    pub fn with_dropout(params: &'p ParamStore, rng: ChaCha8Rng) -> Self {
        Graph { dropout_rng: Some(rng), ..Graph::new(params) }
    }

    pub fn dropout_active(&self) -> bool {
        self.dropout_rng.is_some()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var, AutodiffError> {
        if !value.is_finite() {
            return Err(AutodiffError::NonFiniteValue(op.name().to_string()));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn input(&mut self, t: Tensor) -> Result<Var, AutodiffError> {
        self.push(t, Op::Input)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes[id.0] {
            return v;
        }
        let value = self.params.get(id).clone();
        self.nodes.push(Node { value, op: Op::Param(id) });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(v);
        v
    }

    /// `[.., k] × [k, n] → [.., n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sb.len() != 2 || sa.is_empty() || *sa.last().unwrap() != sb[0] {
            return Err(mismatch(format!("matmul {sa:?} x {sb:?}")));
        }
        let (k, n) = (sb[0], sb[1]);
        let m = self.value(a).numel() / k;
        let out = matmul_kernel(self.value(a).data(), self.value(b).data(), m, k, n);
        let mut shape = sa;
        *shape.last_mut().unwrap() = n;
        self.push(Tensor::new(shape, out)?, Op::MatMul(a, b))
    }

    /// `[G, m, k] × [G, k, n] → [G, m, n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(mismatch(format!("bmm {sa:?} x {sb:?}")));
        }
        let (g, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(g * m * n);
        for i in 0..g {
            out.extend(matmul_kernel(&ad[i * m * k..(i + 1) * m * k], &bd[i * k * n..(i + 1) * k * n], m, k, n));
        }
        self.push(Tensor::new(vec![g, m, n], out)?, Op::BatchMatMul(a, b))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<(), AutodiffError> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch(format!("{what} {:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var, AutodiffError> {
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(p, q)| f(*p, *q)).collect();
        let t = Tensor::new(x.shape().to_vec(), data)?;
        self.push(t, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape(a, b, "add")?;
        self.zip_with(a, b, Op::Add(a, b), |p, q| p + q)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape(a, b, "sub")?;
        self.zip_with(a, b, Op::Sub(a, b), |p, q| p - q)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape(a, b, "mul")?;
        self.zip_with(a, b, Op::Mul(a, b), |p, q| p * q)
    }

    /// Adds `b` to every trailing block of `a`; `b.shape` must equal the
    /// trailing dimensions of `a`.
    pub fn add_bias(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(mismatch(format!("add_bias {sa:?} + {sb:?}")));
        }
        let bd = self.value(b).data().to_vec();
        let x = self.value(a);
        let data = x.data().iter().enumerate().map(|(i, v)| v + bd[i % bd.len()]).collect();
        let t = Tensor::new(x.shape().to_vec(), data)?;
        self.push(t, Op::AddBias(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var, AutodiffError> {
        let x = self.value(a);
        let t = Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| v * s).collect())?;
        self.push(t, Op::Scale(a, s))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var, AutodiffError> {
        let first = self.shape(*xs.first().ok_or_else(|| mismatch("concat of nothing".into()))?).to_vec();
        if axis >= first.len() {
            return Err(mismatch(format!("concat axis {axis} for rank {}", first.len())));
        }
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            if s.len() != first.len() || s.iter().enumerate().any(|(d, &e)| d != axis && e != first[d]) {
                return Err(mismatch(format!("concat {first:?} with {s:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&first, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &x in xs {
                let t = self.value(x);
                let w = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * w..(o + 1) * w]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        self.push(Tensor::new(shape, data)?, Op::Concat(xs.to_vec(), axis))
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || start + len > s[axis] || len == 0 {
            return Err(mismatch(format!("slice {start}..{} of axis {axis} in {s:?}", start + len)));
        }
        let (outer, ax, inner) = split_axis(&s, axis);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * ax * inner + start * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        self.push(Tensor::new(shape, data)?, Op::Slice { x, axis, start })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        let t = self.value(x);
        if shape.iter().product::<usize>() != t.numel() {
            return Err(mismatch(format!("reshape {:?} to {shape:?}", t.shape())));
        }
        let t = t.clone().with_shape(shape.to_vec());
        self.push(t, Op::Reshape(x))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 {
            return Err(mismatch(format!("transpose of rank {}", s.len())));
        }
        let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
        let data = transpose_kernel(self.value(x).data(), r, c);
        let mut shape = s;
        let n = shape.len();
        shape.swap(n - 2, n - 1);
        self.push(Tensor::new(shape, data)?, Op::Transpose(x))
    }

    fn map(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var, AutodiffError> {
        let t = self.value(x);
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| f(*v)).collect())?;
        self.push(out, op)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.map(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.map(x, Op::Tanh(x), f64::tanh)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.map(x, Op::Exp(x), f64::exp)
    }

    pub fn elu(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.map(x, Op::Elu(x), |v| if v > 0.0 { v } else { v.exp_m1() })
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var, AutodiffError> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(mismatch(format!("softmax axis {axis} for {s:?}")));
        }
        let (outer, ax, inner) = split_axis(&s, axis);
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| o * ax * inner + k * inner + i;
                let max = (0..ax).map(|k| src[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for k in 0..ax {
                    let e = (src[idx(k)] - max).exp();
                    out[idx(k)] = e;
                    z += e;
                }
                for k in 0..ax {
                    out[idx(k)] /= z;
                }
            }
        }
        self.push(Tensor::new(s, out)?, Op::Softmax(x, axis))
    }

    /// Normalizes each last-axis row to zero mean and unit variance (no affine).
    pub fn layer_norm(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let t = self.value(x);
        let d = t.last_dim();
        let rows = t.numel() / d;
        let mut out = vec![0.0; t.numel()];
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &t.data()[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for (o, v) in out[r * d..(r + 1) * d].iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
            inv_std.push(is);
        }
        let shape = t.shape().to_vec();
        self.push(Tensor::new(shape, out)?, Op::LayerNorm { x, inv_std })
    }

    /// Inverted dropout; the identity when the graph has no RNG or `rate == 0`.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var, AutodiffError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(AutodiffError::InvalidArgument(format!("dropout rate {rate} outside [0, 1)")));
        }
        let Some(rng) = self.dropout_rng.as_mut() else { return Ok(x) };
        if rate == 0.0 {
            return Ok(x);
        }
        let n = self.nodes[x.0].value.numel();
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..n).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep }).collect();
        let t = self.value(x);
        let data = t.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::new(t.shape().to_vec(), data)?;
        self.push(out, Op::Dropout(x, mask))
    }

    /// Rows of `table` (`[V, d]`) gathered by `indices` → `[n, d]`.
    pub fn embedding(&mut self, table: Var, indices: &[usize]) -> Result<Var, AutodiffError> {
        let s = self.shape(table).to_vec();
        if s.len() != 2 {
            return Err(mismatch(format!("embedding table {s:?}")));
        }
        let (v, d) = (s[0], s[1]);
        if let Some(bad) = indices.iter().find(|&&i| i >= v) {
            return Err(mismatch(format!("embedding index {bad} >= {v}")));
        }
        let src = self.value(table).data();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        self.push(Tensor::new(vec![indices.len(), d], data)?, Op::Embedding(table, indices.to_vec()))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let t = self.value(x);
        let m = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push(Tensor::scalar(m), Op::Mean(x))
    }

    /// Mean quantile loss of `pred` (`[.., Q]`) against `target` (one value per
    /// leading position) over the quantile levels `quantiles`.
    pub fn pinball(&mut self, pred: Var, target: &[f64], quantiles: &[f64]) -> Result<Var, AutodiffError> {
        let t = self.value(pred);
        let q = quantiles.len();
        if t.last_dim() != q || t.numel() != target.len() * q {
            return Err(mismatch(format!("pinball pred {:?}, {} targets, {q} quantiles", t.shape(), target.len())));
        }
        let mut total = 0.0;
        for (row, y) in t.data().chunks(q).zip(target) {
            for (yh, &qq) in row.iter().zip(quantiles) {
                total += quantile_loss_unchecked(*y, *yh, qq);
            }
        }
        let loss = total / t.numel() as f64;
        self.push(
            Tensor::scalar(loss),
            Op::Pinball { pred, target: target.to_vec(), quantiles: quantiles.to_vec() },
        )
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, AutodiffError> {
        let grads = self.backward_nodes(loss)?;
        let mut out = vec![None; self.params.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Param(id) = node.op {
                out[id.0] = grads[i].clone();
            }
        }
        Ok(Gradients { grads: out })
    }

    /// Gradient of `loss` with respect to an arbitrary node.
    pub fn grad_wrt(&self, loss: Var, wrt: Var) -> Result<Vec<f64>, AutodiffError> {
        let grads = self.backward_nodes(loss)?;
        Ok(grads[wrt.0].clone().unwrap_or_else(|| vec![0.0; self.value(wrt).numel()]))
    }

    fn backward_nodes(&self, loss: Var) -> Result<Vec<Option<Vec<f64>>>, AutodiffError> {
        if self.value(loss).numel() != 1 {
            return Err(AutodiffError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(grads)
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (k, n) = (val(*b).shape()[0], val(*b).shape()[1]);
                let m = val(*a).numel() / k;
                let ad = val(*a).data();
                let bd = val(*b).data();
                let mut ga = vec![0.0; m * k];
                for r in 0..m {
                    let grow = &g[r * n..(r + 1) * n];
                    for p in 0..k {
                        let brow = &bd[p * n..(p + 1) * n];
                        ga[r * k + p] = dot(grow, brow);
                    }
                }
                let mut gb = vec![0.0; k * n];
                for r in 0..m {
                    let grow = &g[r * n..(r + 1) * n];
                    for p in 0..k {
                        let s = ad[r * k + p];
                        if s != 0.0 {
                            axpy(s, grow, &mut gb[p * n..(p + 1) * n]);
                        }
                    }
                }
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::BatchMatMul(a, b) => {
                let (sa, sb) = (val(*a).shape(), val(*b).shape());
                let (bn, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
                let (ad, bd) = (val(*a).data(), val(*b).data());
                let mut ga = vec![0.0; bn * m * k];
                let mut gb = vec![0.0; bn * k * n];
                for gi in 0..bn {
                    let go = &g[gi * m * n..(gi + 1) * m * n];
                    let a_ = &ad[gi * m * k..(gi + 1) * m * k];
                    let b_ = &bd[gi * k * n..(gi + 1) * k * n];
                    for r in 0..m {
                        for p in 0..k {
                            ga[gi * m * k + r * k + p] = dot(&go[r * n..(r + 1) * n], &b_[p * n..(p + 1) * n]);
                        }
                    }
                    let gbs = &mut gb[gi * k * n..(gi + 1) * k * n];
                    for r in 0..m {
                        for p in 0..k {
                            axpy(a_[r * k + p], &go[r * n..(r + 1) * n], &mut gbs[p * n..(p + 1) * n]);
                        }
                    }
                }
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.to_vec());
                accumulate(grads, *b, g.to_vec());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.to_vec());
                accumulate(grads, *b, g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (val(*a).data(), val(*b).data());
                accumulate(grads, *a, g.iter().zip(bd).map(|(x, y)| x * y).collect());
                accumulate(grads, *b, g.iter().zip(ad).map(|(x, y)| x * y).collect());
            }
            Op::AddBias(a, b) => {
                let nb = val(*b).numel();
                let mut gb = vec![0.0; nb];
                for (j, v) in g.iter().enumerate() {
                    gb[j % nb] += v;
                }
                accumulate(grads, *a, g.to_vec());
                accumulate(grads, *b, gb);
            }
            Op::Scale(a, s) => accumulate(grads, *a, g.iter().map(|v| v * s).collect()),
            Op::Concat(xs, axis) => {
                let (outer, total, inner) = split_axis(out.shape(), *axis);
                let mut offset = 0;
                for &x in xs {
                    let len = val(x).shape()[*axis];
                    let mut gx = Vec::with_capacity(outer * len * inner);
                    for o in 0..outer {
                        let base = o * total * inner + offset * inner;
                        gx.extend_from_slice(&g[base..base + len * inner]);
                    }
                    accumulate(grads, x, gx);
                    offset += len;
                }
            }
            Op::Slice { x, axis, start } => {
                let src = val(*x).shape();
                let (outer, ax, inner) = split_axis(src, *axis);
                let len = out.shape()[*axis];
                let mut gx = vec![0.0; val(*x).numel()];
                for o in 0..outer {
                    let base = o * ax * inner + start * inner;
                    gx[base..base + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                accumulate(grads, *x, gx);
            }
            Op::Reshape(x) => accumulate(grads, *x, g.to_vec()),
            Op::Transpose(x) => {
                let s = out.shape();
                let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
                accumulate(grads, *x, transpose_kernel(g, r, c));
            }
            Op::Sigmoid(x) => {
                accumulate(grads, *x, g.iter().zip(out.data()).map(|(g, y)| g * y * (1.0 - y)).collect())
            }
            Op::Tanh(x) => accumulate(grads, *x, g.iter().zip(out.data()).map(|(g, y)| g * (1.0 - y * y)).collect()),
            Op::Exp(x) => accumulate(grads, *x, g.iter().zip(out.data()).map(|(g, y)| g * y).collect()),
            Op::Elu(x) => accumulate(
                grads,
                *x,
                g.iter()
                    .zip(val(*x).data())
                    .zip(out.data())
                    .map(|((g, xv), y)| if *xv > 0.0 { *g } else { g * (y + 1.0) })
                    .collect(),
            ),
            Op::Softmax(x, axis) => {
                let (outer, ax, inner) = split_axis(out.shape(), *axis);
                let y = out.data();
                let mut gx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |k: usize| o * ax * inner + k * inner + i;
                        let s: f64 = (0..ax).map(|k| g[idx(k)] * y[idx(k)]).sum();
                        for k in 0..ax {
                            gx[idx(k)] = y[idx(k)] * (g[idx(k)] - s);
                        }
                    }
                }
                accumulate(grads, *x, gx);
            }
            Op::LayerNorm { x, inv_std } => {
                let d = out.last_dim();
                let y = out.data();
                let mut gx = vec![0.0; y.len()];
                for (r, is) in inv_std.iter().enumerate() {
                    let (gr, yr) = (&g[r * d..(r + 1) * d], &y[r * d..(r + 1) * d]);
                    let mg = gr.iter().sum::<f64>() / d as f64;
                    let mgy = dot(gr, yr) / d as f64;
                    for j in 0..d {
                        gx[r * d + j] = is * (gr[j] - mg - yr[j] * mgy);
                    }
                }
                accumulate(grads, *x, gx);
            }
            Op::Dropout(x, mask) => accumulate(grads, *x, g.iter().zip(mask).map(|(g, m)| g * m).collect()),
            Op::Embedding(table, idx) => {
                let d = val(*table).shape()[1];
                let mut gt = vec![0.0; val(*table).numel()];
                for (row, &i) in idx.iter().enumerate() {
                    axpy(1.0, &g[row * d..(row + 1) * d], &mut gt[i * d..(i + 1) * d]);
                }
                accumulate(grads, *table, gt);
            }
            Op::Sum(x) => accumulate(grads, *x, vec![g[0]; val(*x).numel()]),
            Op::Mean(x) => {
                let n = val(*x).numel();
                accumulate(grads, *x, vec![g[0] / n as f64; n]);
            }
            Op::Pinball { pred, target, quantiles } => {
                let p = val(*pred);
                let q = quantiles.len();
                let scale = g[0] / p.numel() as f64;
                let mut gp = vec![0.0; p.numel()];
                for (r, (row, y)) in p.data().chunks(q).zip(target).enumerate() {
                    for (j, (yh, qq)) in row.iter().zip(quantiles).enumerate() {
                        gp[r * q + j] = scale
                            * if y > yh {
                                -qq
                            } else if y < yh {
                                1.0 - qq
                            } else {
                                0.0
                            };
                    }
                }
                accumulate(grads, *pred, gp);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
    match &mut grads[v.0] {
        Some(acc) => axpy(1.0, &g, acc),
        slot @ None => *slot = Some(g),
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Unvalidated quantile loss for one prediction.
pub(crate) fn quantile_loss_unchecked(y: f64, y_hat: f64, q: f64) -> f64 {
    q * (y - y_hat).max(0.0) + (1.0 - q) * (y_hat - y).max(0.0)
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(s: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += s * xi;
    }
}

fn matmul_kernel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for r in 0..m {
        let orow = &mut out[r * n..(r + 1) * n];
        for p in 0..k {
            let s = a[r * k + p];
            if s != 0.0 {
                axpy(s, &b[p * n..(p + 1) * n], orow);
            }
        }
    }
    out
}

fn transpose_kernel(src: &[f64], r: usize, c: usize) -> Vec<f64> {
    let block = r * c;
    let mut out = vec![0.0; src.len()];
    for (bi, chunk) in src.chunks(block).enumerate() {
        let dst = &mut out[bi * block..(bi + 1) * block];
        for i in 0..r {
            for j in 0..c {
                dst[j * r + i] = chunk[i * c + j];
            }
        }
    }
    out
}

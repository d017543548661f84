use rand::Rng;

use crate::autodiff::{AutodiffError, Graph, ParamId, ParamStore, Tensor, Var};
use crate::domain::{Axle, FeatureWindow, NormStats, COL_TM, N_COVARIATES, N_FUTURE};

use super::{TftError, REL_MILEAGE_SCALE};

type R<T> = Result<T, AutodiffError>;

/// Scalar inputs per past step: RCP, covariates, relative mileage.
pub(crate) const PAST_SCALARS: usize = N_COVARIATES + 2;
/// Scalar inputs per future step: future covariates, relative mileage.
pub(crate) const FUTURE_SCALARS: usize = N_FUTURE + 1;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    pub fn new<G: Rng>(p: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut G) -> Self {
        let w = p.add_glorot(format!("{name}.w"), d_in, d_out, rng);
        let b = p.add_zeros(format!("{name}.b"), &[d_out]);
        Linear { w, b }
    }

    pub fn bias(&self) -> ParamId {
        self.b
    }

    pub fn weight(&self) -> ParamId {
        self.w
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> R<Var> {
        let w = g.param(self.w);
        let b = g.param(self.b);
        let y = g.matmul(x, w)?;
        g.add_bias(y, b)
    }
}

/// `sigmoid(a(x)) * b(x)`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Glu {
    gate: Linear,
    value: Linear,
}

impl Glu {
    pub fn new<G: Rng>(p: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut G) -> Self {
        Glu {
            gate: Linear::new(p, &format!("{name}.gate"), d_in, d_out, rng),
            value: Linear::new(p, &format!("{name}.value"), d_in, d_out, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> R<Var> {
        let a = self.gate.forward(g, x)?;
        let a = g.sigmoid(a)?;
        let b = self.value.forward(g, x)?;
        g.mul(a, b)
    }
}

/// Gated residual network: `LN(skip(x) + GLU(W1 ELU(W2 x)))`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Grn {
    fc1: Linear,
    fc2: Linear,
    glu: Glu,
    skip: Option<Linear>,
}

impl Grn {
    pub fn new<G: Rng>(p: &mut ParamStore, name: &str, d_in: usize, hidden: usize, d_out: usize, rng: &mut G) -> Self {
        Grn {
            fc1: Linear::new(p, &format!("{name}.fc1"), d_in, hidden, rng),
            fc2: Linear::new(p, &format!("{name}.fc2"), hidden, hidden, rng),
            glu: Glu::new(p, &format!("{name}.glu"), hidden, d_out, rng),
            skip: (d_in != d_out).then(|| Linear::new(p, &format!("{name}.skip"), d_in, d_out, rng)),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var, dropout: f64) -> R<Var> {
        let h = self.fc1.forward(g, x)?;
        let h = g.elu(h)?;
        let h = self.fc2.forward(g, h)?;
        let h = g.dropout(h, dropout)?;
        let gated = self.glu.forward(g, h)?;
        let skip = match &self.skip {
            Some(l) => l.forward(g, x)?,
            None => x,
        };
        let s = g.add(skip, gated)?;
        g.layer_norm(s)
    }
}

/// `LN(skip + GLU(dropout(x)))`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct GateAddNorm {
    glu: Glu,
}

impl GateAddNorm {
    pub fn new<G: Rng>(p: &mut ParamStore, name: &str, d: usize, rng: &mut G) -> Self {
        GateAddNorm { glu: Glu::new(p, name, d, d, rng) }
    }

    pub fn forward(&self, g: &mut Graph, x: Var, skip: Var, dropout: f64) -> R<Var> {
        let x = g.dropout(x, dropout)?;
        let gated = self.glu.forward(g, x)?;
        let s = g.add(skip, gated)?;
        g.layer_norm(s)
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Lstm {
    gates: Linear,
    hidden: usize,
}

impl Lstm {
    pub fn new<G: Rng>(p: &mut ParamStore, name: &str, d_in: usize, hidden: usize, rng: &mut G) -> Self {
        let gates = Linear::new(p, name, d_in + hidden, 4 * hidden, rng);
        // forget-gate bias starts at 1
        let b = p.get_mut(gates.bias()).data_mut();
        b[hidden..2 * hidden].iter_mut().for_each(|v| *v = 1.0);
        Lstm { gates, hidden }
    }

    /// Runs over `x: [B, T, d_in]` from state `(h, c)` (each `[B, H]`).
    /// Returns the stacked outputs `[B, T, H]` and the final state.
    pub fn forward(&self, g: &mut Graph, x: Var, mut h: Var, mut c: Var) -> R<(Var, Var, Var)> {
        let s = g.shape(x).to_vec();
        let (b, t, d) = (s[0], s[1], s[2]);
        let hs = self.hidden;
        let mut outs = Vec::with_capacity(t);
        for step in 0..t {
            let xt = g.slice(x, 1, step, 1)?;
            let xt = g.reshape(xt, &[b, d])?;
            let z = g.concat(&[xt, h], 1)?;
            let z = self.gates.forward(g, z)?;
            let i = g.slice(z, 1, 0, hs)?;
            let i = g.sigmoid(i)?;
            let f = g.slice(z, 1, hs, hs)?;
            let f = g.sigmoid(f)?;
            let cand = g.slice(z, 1, 2 * hs, hs)?;
            let cand = g.tanh(cand)?;
            let o = g.slice(z, 1, 3 * hs, hs)?;
            let o = g.sigmoid(o)?;
            let keep = g.mul(f, c)?;
            let write = g.mul(i, cand)?;
            c = g.add(keep, write)?;
            let tc = g.tanh(c)?;
            h = g.mul(o, tc)?;
            outs.push(g.reshape(h, &[b, 1, hs])?);
        }
        let out = g.concat(&outs, 1)?;
        Ok((out, h, c))
    }
}

/// Network-ready tensors for a batch of windows.
#[derive(Debug, Clone)]
pub struct Batch {
    /// `[B, L_hist, 13]`: raw RCP, z-scored covariates, relative mileage.
    pub past: Tensor,
    /// `[B, L_fut, 11]`: z-scored future covariates, relative mileage.
    pub future: Tensor,
    pub axles: Vec<Axle>,
    /// Mean past RCP per window.
    pub anchor: Vec<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.axles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.axles.is_empty()
    }

    pub fn l_hist(&self) -> usize {
        self.past.shape()[1]
    }

    pub fn l_fut(&self) -> usize {
        self.future.shape()[1]
    }

    /// Assembles raw (unnormalized) windows.
    pub fn from_windows(windows: &[&FeatureWindow], norm: &NormStats, l_hist: usize, l_fut: usize) -> Result<Batch, TftError> {
        if windows.is_empty() {
            return Err(TftError::EmptyDataset);
        }
        let b = windows.len();
        let mut past = Vec::with_capacity(b * l_hist * PAST_SCALARS);
        let mut future = Vec::with_capacity(b * l_fut * FUTURE_SCALARS);
        let mut axles = Vec::with_capacity(b);
        let mut anchor = Vec::with_capacity(b);
        for w in windows {
            if w.l_hist() != l_hist || w.l_fut() != l_fut || w.past_x.len() != l_hist {
                return Err(TftError::ShapeMismatch(format!(
                    "window has {}/{} steps, model expects {l_hist}/{l_fut}",
                    w.l_hist(),
                    w.l_fut()
                )));
            }
            let origin_tm = w.past_x[l_hist - 1][COL_TM];
            for (rcp, x) in w.past_rcp.iter().zip(&w.past_x) {
                past.push(*rcp);
                past.extend_from_slice(&norm.apply_row(x));
                past.push((x[COL_TM] - origin_tm) / REL_MILEAGE_SCALE);
            }
            for x in &w.future_x {
                future.extend_from_slice(&norm.apply_future_row(x));
                // future column 0 is TM
                future.push((x[0] - origin_tm) / REL_MILEAGE_SCALE);
            }
            axles.push(w.axle);
            anchor.push(w.past_rcp.iter().sum::<f64>() / l_hist as f64);
        }
        let past = Tensor::new(vec![b, l_hist, PAST_SCALARS], past)?;
        let future = Tensor::new(vec![b, l_fut, FUTURE_SCALARS], future)?;
        if !past.is_finite() || !future.is_finite() {
            return Err(TftError::ShapeMismatch("non-finite window values".into()));
        }
        Ok(Batch { past, future, axles, anchor })
    }

    /// Anchor broadcast to `[B, L_fut, nq]`.
    /// Base-model output: the mean past RCP scaled by `exp(raw)`, so the
    /// heads predict log-ratios to the anchor.
    pub(crate) fn anchored(&self, g: &mut Graph, raw: Var, nq: usize) -> Result<Var, AutodiffError> {
        let anchor = g.input(self.anchor_tensor(nq))?;
        let ratio = g.exp(raw)?;
        g.mul(ratio, anchor)
    }

    pub(crate) fn anchor_tensor(&self, nq: usize) -> Tensor {
        let lf = self.l_fut();
        let data = self.anchor.iter().flat_map(|a| std::iter::repeat_n(*a, lf * nq)).collect();
        Tensor::new(vec![self.len(), lf, nq], data).expect("anchor shape")
    }
}

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{AutodiffError, Graph, ParamId, ParamStore, Tensor, Var};
use crate::domain::NormStats;

use super::layers::{Batch, GateAddNorm, Grn, Linear, Lstm, FUTURE_SCALARS, PAST_SCALARS};
use super::train::Forecaster;
use super::{ModelKind, TftConfig, TftError};

type R<T> = Result<T, AutodiffError>;

const MASKED: f64 = -1e30;

#[derive(Debug, Clone)]
struct Attention {
    q: Vec<Linear>,
    k: Vec<Linear>,
    v: Linear,
    out: Linear,
}

#[derive(Debug, Clone)]
struct Parts {
    past_emb: Vec<Linear>,
    fut_emb: Vec<Linear>,
    axle: ParamId,
    vsn_past: Grn,
    vsn_fut: Grn,
    encoder: Lstm,
    decoder: Lstm,
    gate_lstm: GateAddNorm,
    enrich: Grn,
    attn: Attention,
    gate_attn: GateAddNorm,
    ff: Grn,
    gate_out: GateAddNorm,
    head: Linear,
}

/// A built network plus the normalization it was trained with.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: TftConfig,
    pub kind: ModelKind,
    pub norm: NormStats,
    params: ParamStore,
    parts: Parts,
}

/// Graph handles produced by one forward pass.
pub struct ForwardOut {
    /// `[B, L_fut, nq]`, unsorted.
    pub pred: Var,
    /// `[B, L_hist, n_past_vars]`.
    pub past_weights: Var,
    /// `[B, L_fut, n_future_vars]`.
    pub future_weights: Var,
}

impl Model {
    /// Deterministic initialization from `config.seed`.
    pub fn build(config: TftConfig, kind: ModelKind, norm: NormStats) -> Result<Model, TftError> {
        config.validate()?;
        if norm.dim() != config.n_past_features {
            return Err(TftError::ConfigInvalid(format!("norm stats cover {} features", norm.dim())));
        }
        let h = config.hidden_size;
        let nq = config.quantiles.len();
        let dk = h / config.n_heads;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let p = &mut ParamStore::new();
        let r = &mut rng;
        let past_emb = (0..PAST_SCALARS).map(|i| Linear::new(p, &format!("emb.past{i}"), 1, h, r)).collect();
        let fut_emb = (0..FUTURE_SCALARS).map(|i| Linear::new(p, &format!("emb.future{i}"), 1, h, r)).collect();
        let axle = p.add_glorot("emb.axle", 2, h, r);
        let (vp, vf) = (PAST_SCALARS + 1, FUTURE_SCALARS + 1);
        let vsn_past = Grn::new(p, "vsn.past", vp * h, h, vp, r);
        let vsn_fut = Grn::new(p, "vsn.future", vf * h, h, vf, r);
        let encoder = Lstm::new(p, "lstm.encoder", h, h, r);
        let decoder = Lstm::new(p, "lstm.decoder", h, h, r);
        let gate_lstm = GateAddNorm::new(p, "gate.lstm", h, r);
        let enrich = Grn::new(p, "enrich", h, h, h, r);
        let attn = Attention {
            q: (0..config.n_heads).map(|i| Linear::new(p, &format!("attn.q{i}"), h, dk, r)).collect(),
            k: (0..config.n_heads).map(|i| Linear::new(p, &format!("attn.k{i}"), h, dk, r)).collect(),
            v: Linear::new(p, "attn.v", h, dk, r),
            out: Linear::new(p, "attn.out", dk, h, r),
        };
        let gate_attn = GateAddNorm::new(p, "gate.attn", h, r);
        let ff = Grn::new(p, "ff", h, h, h, r);
        let gate_out = GateAddNorm::new(p, "gate.out", h, r);
        let head = Linear::new(p, "head", h, nq, r);
        p.get_mut(head.weight()).data_mut().iter_mut().for_each(|w| *w *= 0.1);
        let parts = Parts {
            past_emb,
            fut_emb,
            axle,
            vsn_past,
            vsn_fut,
            encoder,
            decoder,
            gate_lstm,
            enrich,
            attn,
            gate_attn,
            ff,
            gate_out,
            head,
        };
        Ok(Model { config, kind, norm, params: std::mem::take(p), parts })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn forward_full(&self, g: &mut Graph, batch: &Batch) -> R<ForwardOut> {
        let c = &self.config;
        let pp = &self.parts;
        let rate = c.dropout_rate;
        let (b, lh, lf, h) = (batch.len(), batch.l_hist(), batch.l_fut(), c.hidden_size);
        let axle_idx: Vec<usize> = batch.axles.iter().map(|a| a.index()).collect();

        let past_in = g.input(batch.past.clone())?;
        let fut_in = g.input(batch.future.clone())?;
        let (past_sel, past_w) = self.select(g, past_in, &pp.past_emb, &pp.vsn_past, &axle_idx, lh)?;
        let (fut_sel, fut_w) = self.select(g, fut_in, &pp.fut_emb, &pp.vsn_fut, &axle_idx, lf)?;

        let zeros = g.input(Tensor::zeros(&[b, h]))?;
        let (enc_out, he, ce) = pp.encoder.forward(g, past_sel, zeros, zeros)?;
        let (dec_out, _, _) = pp.decoder.forward(g, fut_sel, he, ce)?;
        let lstm_out = g.concat(&[enc_out, dec_out], 1)?;
        let selected = g.concat(&[past_sel, fut_sel], 1)?;
        let temporal = pp.gate_lstm.forward(g, lstm_out, selected, rate)?;

        let enriched = pp.enrich.forward(g, temporal, rate)?;
        let attended = self.attention(g, enriched, lh + lf)?;
        let post_attn = pp.gate_attn.forward(g, attended, enriched, rate)?;
        let ff = pp.ff.forward(g, post_attn, rate)?;
        let out = pp.gate_out.forward(g, ff, temporal, rate)?;

        let dec = g.slice(out, 1, lh, lf)?;
        let raw = pp.head.forward(g, dec)?;
        let pred = match self.kind {
            ModelKind::Base => batch.anchored(g, raw, c.quantiles.len())?,
            ModelKind::Discrepancy => raw,
        };
        Ok(ForwardOut { pred, past_weights: past_w, future_weights: fut_w })
    }

    /// Per-variable embeddings combined by softmax selection weights.
    /// Returns `[B, T, H]` and the weights `[B, T, V]`.
    fn select(
        &self,
        g: &mut Graph,
        input: Var,
        emb: &[Linear],
        vsn: &Grn,
        axles: &[usize],
        t: usize,
    ) -> R<(Var, Var)> {
        let h = self.config.hidden_size;
        let b = axles.len();
        let v = emb.len() + 1;
        let mut parts = Vec::with_capacity(v);
        for (i, lin) in emb.iter().enumerate() {
            let s = g.slice(input, 2, i, 1)?;
            let e = lin.forward(g, s)?;
            parts.push(g.reshape(e, &[b, t, 1, h])?);
        }
        let table = g.param(self.parts.axle);
        let idx: Vec<usize> = axles.iter().flat_map(|&a| std::iter::repeat_n(a, t)).collect();
        let ax = g.embedding(table, &idx)?;
        parts.push(g.reshape(ax, &[b, t, 1, h])?);
        let all = g.concat(&parts, 2)?;
        let flat = g.reshape(all, &[b * t, v * h])?;
        let logits = vsn.forward(g, flat, self.config.dropout_rate)?;
        let weights = g.softmax(logits, 1)?;
        let w3 = g.reshape(weights, &[b * t, 1, v])?;
        let e3 = g.reshape(all, &[b * t, v, h])?;
        let combined = g.bmm(w3, e3)?;
        let combined = g.reshape(combined, &[b, t, h])?;
        let weights = g.reshape(weights, &[b, t, v])?;
        Ok((combined, weights))
    }

    /// Causal interpretable multi-head attention: per-head queries and keys,
    /// one shared value projection, heads averaged.
    fn attention(&self, g: &mut Graph, x: Var, t: usize) -> R<Var> {
        let a = &self.parts.attn;
        let nh = a.q.len();
        let dk = self.config.hidden_size / nh;
        let mut mask = vec![0.0; t * t];
        for i in 0..t {
            for j in i + 1..t {
                mask[i * t + j] = MASKED;
            }
        }
        let mask = g.input(Tensor::new(vec![t, t], mask)?)?;
        let v = a.v.forward(g, x)?;
        let mut sum: Option<Var> = None;
        for (q, k) in a.q.iter().zip(&a.k) {
            let qh = q.forward(g, x)?;
            let kh = k.forward(g, x)?;
            let kt = g.transpose(kh)?;
            let s = g.bmm(qh, kt)?;
            let s = g.scale(s, 1.0 / (dk as f64).sqrt())?;
            let s = g.add_bias(s, mask)?;
            let w = g.softmax(s, 2)?;
            let o = g.bmm(w, v)?;
            sum = Some(match sum {
                Some(acc) => g.add(acc, o)?,
                None => o,
            });
        }
        let mean = g.scale(sum.expect("at least one head"), 1.0 / nh as f64)?;
        a.out.forward(g, mean)
    }
}

impl Forecaster for Model {
    fn config(&self) -> &TftConfig {
        &self.config
    }

    fn kind(&self) -> ModelKind {
        self.kind
    }

    fn norm(&self) -> &NormStats {
        &self.norm
    }

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn forward(&self, g: &mut Graph, batch: &Batch) -> R<Var> {
        Ok(self.forward_full(g, batch)?.pred)
    }
}

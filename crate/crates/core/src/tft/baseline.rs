use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Graph, ParamStore, Tensor, Var};
use crate::domain::{FeatureWindow, LabeledWindow, NormStats};

use super::infer::{evaluate, evaluate_persistence};
use super::layers::{Batch, Linear, Lstm, FUTURE_SCALARS, PAST_SCALARS};
use super::train::Forecaster;
use super::{ModelKind, TftConfig, TftError};

/// Plain LSTM encoder-decoder on the raw scalar inputs, same output
/// parametrization as the base TFT.
#[derive(Debug, Clone)]
pub struct LstmBaseline {
    pub config: TftConfig,
    pub norm: NormStats,
    params: ParamStore,
    encoder: Lstm,
    decoder: Lstm,
    head: Linear,
}

impl LstmBaseline {
    pub fn build(config: TftConfig, norm: NormStats) -> Result<LstmBaseline, TftError> {
        config.validate()?;
        let h = config.hidden_size;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut p = ParamStore::new();
        let encoder = Lstm::new(&mut p, "lstm.encoder", PAST_SCALARS, h, &mut rng);
        let decoder = Lstm::new(&mut p, "lstm.decoder", FUTURE_SCALARS, h, &mut rng);
        let head = Linear::new(&mut p, "head", h, config.quantiles.len(), &mut rng);
        p.get_mut(head.weight()).data_mut().iter_mut().for_each(|w| *w *= 0.1);
        Ok(LstmBaseline { config, norm, params: p, encoder, decoder, head })
    }
}

impl Forecaster for LstmBaseline {
    fn config(&self) -> &TftConfig {
        &self.config
    }

    fn kind(&self) -> ModelKind {
        ModelKind::Base
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

    fn forward(&self, g: &mut Graph, batch: &Batch) -> Result<Var, AutodiffError> {
        let h = self.config.hidden_size;
        let past = g.input(batch.past.clone())?;
        let fut = g.input(batch.future.clone())?;
        let zeros = g.input(Tensor::zeros(&[batch.len(), h]))?;
        let (_, he, ce) = self.encoder.forward(g, past, zeros, zeros)?;
        let (dec, _, _) = self.decoder.forward(g, fut, he, ce)?;
        let dec = g.dropout(dec, self.config.dropout_rate)?;
        let raw = self.head.forward(g, dec)?;
        batch.anchored(g, raw, self.config.quantiles.len())
    }
}

/// Last observed RCP repeated over the horizon.
pub fn persistence_forecast(window: &FeatureWindow) -> Vec<f64> {
    vec![*window.past_rcp.last().expect("non-empty window"); window.l_fut()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub mape: f64,
    pub pinball: Option<f64>,
}

/// MAPE table: TFT, LSTM and persistence on the same windows.
pub fn comparison_table<A: Forecaster, B: Forecaster>(
    tft: &A,
    lstm: &B,
    windows: &[LabeledWindow],
) -> Result<Vec<ComparisonRow>, TftError> {
    let t = evaluate(tft, windows)?;
    let l = evaluate(lstm, windows)?;
    let p = evaluate_persistence(windows, tft.config().mape_eps)?;
    Ok(vec![
        ComparisonRow { model: "TFT".into(), mape: t.mape, pinball: Some(t.pinball) },
        ComparisonRow { model: "LSTM".into(), mape: l.mape, pinball: Some(l.pinball) },
        ComparisonRow { model: "persistence".into(), mape: p, pinball: None },
    ])
}

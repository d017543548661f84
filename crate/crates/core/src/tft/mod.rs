//! Temporal Fusion Transformer for multi-horizon RCP quantile forecasts.

mod baseline;
mod checkpoint;
mod infer;
mod layers;
mod model;
mod train;

use serde::{Deserialize, Serialize};

use crate::autodiff::AutodiffError;
use crate::domain::{DomainError, N_COVARIATES, N_FUTURE};

pub use baseline::{comparison_table, persistence_forecast, ComparisonRow, LstmBaseline};
pub use checkpoint::{load, load_strict, save, Checkpoint, TensorRecord, SCHEMA_VERSION};
pub use infer::{
    band_from_quantiles, evaluate, evaluate_persistence, forward_raw, mc_predict, postprocess, predict,
    predict_batch, Metrics, QuantileForecast,
};
pub use layers::Batch;
pub(crate) use infer::sample_std;
pub use model::{ForwardOut, Model};
pub use train::{build_windows, fit, split_series, train, Forecaster, History};

pub const DEFAULT_QUANTILES: [f64; 9] = [0.01, 0.025, 0.1, 0.25, 0.5, 0.75, 0.9, 0.975, 0.99];

/// Mileage since the window origin is fed to the network in units of this
/// many km.
pub const REL_MILEAGE_SCALE: f64 = 10_000.0;

#[derive(Debug, thiserror::Error)]
pub enum TftError {
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error("EmptyDataset")]
    EmptyDataset,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("schema version mismatch: {0}")]
    SchemaVersionMismatch(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Forecasts RCP as log-ratios to the mean past RCP; outputs are clipped
    /// to [0, 1] after post-processing.
    Base,
    /// Forecasts residuals; unanchored and unclipped.
    Discrepancy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TftConfig {
    pub hidden_size: usize,
    pub n_heads: usize,
    pub dropout_rate: f64,
    pub quantiles: Vec<f64>,
    pub l_hist: usize,
    pub l_fut: usize,
    pub n_past_features: usize,
    pub n_future_features: usize,
    pub learning_rate: f64,
    /// Cosine decay of the learning rate down to this fraction by the last epoch.
    pub lr_final_fraction: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Window stride used when cutting training windows.
    pub stride: usize,
    pub train_fraction: f64,
    pub grad_clip: f64,
    pub weight_decay: f64,
    pub mape_eps: f64,
}

impl Default for TftConfig {
    fn default() -> Self {
        TftConfig {
            hidden_size: 16,
            n_heads: 4,
            dropout_rate: 0.1,
            quantiles: DEFAULT_QUANTILES.to_vec(),
            l_hist: 8,
            l_fut: 8,
            n_past_features: N_COVARIATES,
            n_future_features: N_FUTURE,
            learning_rate: 3e-3,
            lr_final_fraction: 0.1,
            epochs: 100,
            batch_size: 64,
            seed: 42,
            stride: 1,
            train_fraction: 0.8,
            grad_clip: 1.0,
            weight_decay: 0.0,
            mape_eps: 1e-6,
        }
    }
}

impl TftConfig {
    pub fn validate(&self) -> Result<(), TftError> {
        let bad = |m: &str| Err(TftError::ConfigInvalid(m.to_string()));
        if self.hidden_size == 0 || self.n_heads == 0 || self.hidden_size % self.n_heads != 0 {
            return bad("n_heads must divide hidden_size");
        }
        if self.quantiles.is_empty()
            || self.quantiles.iter().any(|q| !(*q > 0.0 && *q < 1.0))
            || self.quantiles.windows(2).any(|w| w[0] >= w[1])
        {
            return bad("quantiles must be strictly increasing inside (0, 1)");
        }
        if !self.quantiles.contains(&0.5) {
            return bad("quantiles must contain 0.5");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must lie in [0, 1)");
        }
        if self.l_hist == 0 || self.l_fut == 0 || self.epochs == 0 || self.batch_size == 0 || self.stride == 0 {
            return bad("l_hist, l_fut, epochs, batch_size and stride must be at least 1");
        }
        if self.n_past_features != N_COVARIATES || self.n_future_features != N_FUTURE {
            return bad("feature counts must be 11 past / 10 future");
        }
        if !(self.lr_final_fraction > 0.0 && self.lr_final_fraction <= 1.0) {
            return bad("lr_final_fraction must lie in (0, 1]");
        }
        if !(self.learning_rate > 0.0) || !(self.grad_clip > 0.0) || self.weight_decay < 0.0 {
            return bad("learning_rate and grad_clip must be positive, weight_decay non-negative");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) || !(self.mape_eps > 0.0) {
            return bad("train_fraction must lie in (0, 1], mape_eps positive");
        }
        Ok(())
    }

    pub fn median_index(&self) -> usize {
        self.quantiles.iter().position(|&q| q == 0.5).expect("validated")
    }

    pub fn quantile_index(&self, q: f64) -> Option<usize> {
        self.quantiles.iter().position(|&x| (x - q).abs() < 1e-12)
    }
}

/// Pinball loss of one prediction at level `q`.
pub fn quantile_loss(y: f64, y_hat: f64, q: f64) -> Result<f64, TftError> {
    if !(q > 0.0 && q < 1.0) {
        return Err(DomainError::InvalidArgument(format!("quantile {q} outside (0, 1)")).into());
    }
    Ok(crate::autodiff::quantile_loss_unchecked(y, y_hat, q))
}

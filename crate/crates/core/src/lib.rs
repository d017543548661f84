pub mod atomic;
pub mod autodiff;
pub mod decision;
pub mod domain;
pub mod plot;
pub mod reduce;
pub mod synth;
pub mod tft;
pub mod update;

pub use decision::{DecisionConfig, DecisionReport, ForecastTrace, Predictor, ThresholdCurve, DEFAULT_THRESHOLD};
pub use domain::{Axle, DomainError, FeatureWindow, LabeledWindow, NormStats, TireRecord, TireSeries};
pub use reduce::{ReduceParams, ReducedSeries, ThresholdMode};
pub use synth::{FemConstants, FleetConfig, OracleParams};
pub use tft::{Model, ModelKind, QuantileForecast, TftConfig};
pub use update::HybridModel;

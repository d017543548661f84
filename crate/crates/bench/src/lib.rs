//! Fixtures shared by the benchmarks.

use tiretwin_core::domain::{FeatureWindow, TireSeries};
use tiretwin_core::reduce::{reduce_with, thin_by_mileage, ReduceParams, ThresholdMode};
use tiretwin_core::synth::{gen_tire, FleetConfig};
use tiretwin_core::tft::{build_windows, fit, Model, TftConfig};

/// One full-life drive tire from the default fleet.
pub fn raw_series(seed: u64) -> TireSeries {
    let cfg = FleetConfig { n_tires: 1, axle_mix: 0.0, seed, ..FleetConfig::default() };
    gen_tire(&cfg, 0).expect("default fleet config is valid")
}

pub fn reduced_corpus(n: usize, seed: u64) -> Vec<TireSeries> {
    (0..n)
        .map(|i| {
            let s = raw_series(seed.wrapping_add(i as u64));
            reduce_with(&s, &ReduceParams::default(), ThresholdMode::Target(200)).expect("long series").series
        })
        .collect()
}

/// A small model trained for a couple of epochs; enough to exercise every
/// layer with non-trivial weights.
pub fn small_model(corpus: &[TireSeries]) -> Model {
    let cfg = TftConfig { hidden_size: 16, epochs: 2, stride: 8, ..TftConfig::default() };
    fit(corpus, &cfg).expect("corpus is large enough").0
}

pub fn windows(model: &Model, corpus: &[TireSeries], n: usize) -> Vec<FeatureWindow> {
    let c = &model.config;
    build_windows(corpus, c.l_hist, c.l_fut, 1).expect("windows").into_iter().take(n).map(|w| w.0).collect()
}

/// History up to `km`, thinned the way decisions use it.
pub fn decision_prefix(series: &TireSeries, km: f64) -> TireSeries {
    thin_by_mileage(&series.prefix_to_mileage(km), 1750.0).expect("positive spacing")
}

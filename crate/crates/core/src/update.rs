//! Discrepancy update: residuals of the base model, a discrepancy TFT fitted
//! on them, and additive correction of base forecasts.

use crate::domain::{extract_windows, DomainError, FeatureWindow, LabeledWindow, TireSeries};
use crate::tft::{
    band_from_quantiles, predict_batch, train, History, Model, ModelKind, QuantileForecast, TftConfig, TftError,
};

#[derive(Debug, thiserror::Error)]
pub enum UpdateError {
    #[error("length mismatch: {observed} observed vs {predicted} predicted")]
    LengthMismatch { observed: usize, predicted: usize },
    #[error("horizon mismatch: {base} vs {dtft}")]
    HorizonMismatch { base: usize, dtft: usize },
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error("EmptyDataset")]
    EmptyDataset,
    #[error(transparent)]
    Tft(#[from] TftError),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscrepancySample {
    pub window: FeatureWindow,
    /// Observed minus base-median RCP per horizon step.
    pub d: Vec<f64>,
}

pub fn compute_discrepancy(observed: &[f64], predicted: &[f64]) -> Result<Vec<f64>, UpdateError> {
    if observed.len() != predicted.len() {
        return Err(UpdateError::LengthMismatch { observed: observed.len(), predicted: predicted.len() });
    }
    Ok(observed.iter().zip(predicted).map(|(o, p)| o - p).collect())
}

/// Pairs every window of `series` with the base model's median residuals.
/// Series too short for one window are skipped.
pub fn build_update_set(base: &Model, series: &[TireSeries], stride: usize) -> Result<Vec<DiscrepancySample>, UpdateError> {
    let c = &base.config;
    let mut windows: Vec<LabeledWindow> = Vec::new();
    for s in series {
        match extract_windows(s, c.l_hist, c.l_fut, stride) {
            Ok(w) => windows.extend(w),
            Err(DomainError::SeriesTooShort { len, needed }) => {
                log::warn!("update: skipping {} ({len} records, {needed} needed)", s.tire_id)
            }
            Err(e) => return Err(e.into()),
        }
    }
    if windows.is_empty() {
        return Ok(Vec::new());
    }
    let forecasts = predict_batch(base, &windows.iter().map(|w| &w.0).collect::<Vec<_>>())?;
    windows
        .into_iter()
        .zip(forecasts)
        .map(|((window, y), f)| Ok(DiscrepancySample { d: compute_discrepancy(&y, &f.median())?, window }))
        .collect()
}

/// Discrepancy-model defaults derived from the base config: half the hidden
/// size (rounded to a multiple of the head count).
pub fn dtft_config(base: &TftConfig) -> TftConfig {
    let heads = if base.hidden_size / 2 >= 4 { 2 } else { 1 };
    let hidden = ((base.hidden_size / 2).max(heads) / heads) * heads;
    TftConfig { hidden_size: hidden, n_heads: heads, seed: base.seed.wrapping_add(1), ..base.clone() }
}

/// Fits a discrepancy TFT on residual targets. The base model is untouched.
pub fn train_dtft(samples: &[DiscrepancySample], base: &Model, config: &TftConfig) -> Result<(Model, History), UpdateError> {
    if samples.is_empty() {
        return Err(UpdateError::EmptyDataset);
    }
    if config.l_hist != base.config.l_hist || config.l_fut != base.config.l_fut {
        return Err(UpdateError::ConfigInvalid(format!(
            "discrepancy windows {}/{} differ from base {}/{}",
            config.l_hist, config.l_fut, base.config.l_hist, base.config.l_fut
        )));
    }
    config.validate().map_err(|e| UpdateError::ConfigInvalid(e.to_string()))?;
    let data: Vec<LabeledWindow> = samples.iter().map(|s| (s.window.clone(), s.d.clone())).collect();
    let mut model = Model::build(config.clone(), ModelKind::Discrepancy, base.norm.clone())?;
    let history = train(&mut model, &data, &[])?;
    Ok((model, history))
}

/// Base plus discrepancy, before clipping. Each quantile's offset from the
/// median combines both models' offsets in quadrature; epistemic variances add.
pub fn combine(base: &QuantileForecast, dtft: &QuantileForecast) -> Result<QuantileForecast, UpdateError> {
    if base.horizon() != dtft.horizon() {
        return Err(UpdateError::HorizonMismatch { base: base.horizon(), dtft: dtft.horizon() });
    }
    if base.quantiles != dtft.quantiles {
        return Err(UpdateError::ConfigInvalid("quantile sets differ".into()));
    }
    let (bm, dm) = (base.median(), dtft.median());
    let mut values = Vec::with_capacity(base.horizon());
    let mut epist = Vec::with_capacity(base.horizon());
    for h in 0..base.horizon() {
        let med = bm[h] + dm[h];
        let mut row: Vec<f64> = base.values[h]
            .iter()
            .zip(&dtft.values[h])
            .map(|(b, d)| {
                let (ob, od) = (b - bm[h], d - dm[h]);
                let sign = if ob + od < 0.0 { -1.0 } else { 1.0 };
                med + sign * ob.hypot(od)
            })
            .collect();
        row.sort_by(f64::total_cmp);
        values.push(row);
        epist.push(base.epistemic_std[h].hypot(dtft.epistemic_std[h]));
    }
    let mut out = QuantileForecast { quantiles: base.quantiles.clone(), values, epistemic_std: epist, lo: vec![], hi: vec![] };
    let med = out.median();
    let sa = out.aleatoric_std();
    for h in 0..out.horizon() {
        let (lo, hi) = band_from_quantiles(med[h], sa[h], out.epistemic_std[h]);
        out.lo.push(lo);
        out.hi.push(hi);
    }
    Ok(out)
}

/// Corrected forecast: [`combine`], then clipped to [0, 1].
pub fn correct(base: &QuantileForecast, dtft: &QuantileForecast) -> Result<QuantileForecast, UpdateError> {
    let mut f = combine(base, dtft)?;
    for row in f.values.iter_mut() {
        row.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }
    f.lo.iter_mut().chain(f.hi.iter_mut()).for_each(|v| *v = v.clamp(0.0, 1.0));
    Ok(f)
}

/// Frozen base model plus a discrepancy model sharing its window schema.
#[derive(Debug, Clone)]
pub struct HybridModel {
    pub base: Model,
    pub dtft: Model,
}

impl HybridModel {
    pub fn new(base: Model, dtft: Model) -> Result<HybridModel, UpdateError> {
        if base.kind != ModelKind::Base || dtft.kind != ModelKind::Discrepancy {
            return Err(UpdateError::ConfigInvalid("expected a base and a discrepancy model".into()));
        }
        let (b, d) = (&base.config, &dtft.config);
        if b.l_hist != d.l_hist || b.l_fut != d.l_fut || b.quantiles != d.quantiles {
            return Err(UpdateError::ConfigInvalid("base and discrepancy windows or quantiles differ".into()));
        }
        Ok(HybridModel { base, dtft })
    }

    pub fn predict(&self, window: &FeatureWindow) -> Result<QuantileForecast, UpdateError> {
        let b = predict_batch(&self.base, &[window])?.remove(0);
        let d = predict_batch(&self.dtft, &[window])?.remove(0);
        correct(&b, &d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::tests::series_from;
    use crate::domain::NormStats;

    fn fc(values: Vec<Vec<f64>>) -> QuantileForecast {
        let h = values.len();
        crate::tft::postprocess(values, &[0.025, 0.5, 0.975], ModelKind::Discrepancy, vec![0.0; h])
    }

    #[test]
    fn discrepancy_examples() {
        assert!((compute_discrepancy(&[0.8], &[0.6]).unwrap()[0] - 0.2).abs() < 1e-15);
        assert_eq!(compute_discrepancy(&[0.3, 0.4], &[0.3, 0.4]).unwrap(), vec![0.0, 0.0]);
        assert!((compute_discrepancy(&[0.1], &[0.5]).unwrap()[0] + 0.4).abs() < 1e-15);
        assert!(matches!(compute_discrepancy(&[0.1], &[]), Err(UpdateError::LengthMismatch { .. })));
    }

    #[test]
    fn correction_examples() {
        let base = fc(vec![vec![0.5, 0.6, 0.7]]);
        let c = correct(&base, &fc(vec![vec![0.2, 0.2, 0.2]])).unwrap();
        assert!((c.median()[0] - 0.8).abs() < 1e-12);
        let c = correct(&base, &fc(vec![vec![0.0, 0.0, 0.0]])).unwrap();
        assert_eq!(c.values, base.values);
        let c = correct(&fc(vec![vec![0.05, 0.05, 0.05]]), &fc(vec![vec![-0.2, -0.2, -0.2]])).unwrap();
        assert_eq!(c.median()[0], 0.0);
        assert!(matches!(
            correct(&base, &fc(vec![vec![0.0; 3], vec![0.0; 3]])),
            Err(UpdateError::HorizonMismatch { .. })
        ));
    }

    #[test]
    fn combined_spread_adds_in_quadrature() {
        let base = fc(vec![vec![0.3, 0.6, 0.9]]);
        let d = fc(vec![vec![-0.4, 0.0, 0.4]]);
        let c = combine(&base, &d).unwrap();
        assert!((c.values[0][2] - (0.6 + 0.5)).abs() < 1e-12);
        assert!((c.values[0][0] - (0.6 - 0.5)).abs() < 1e-12);
    }

    use proptest::prelude::*;
    proptest! {
        #[test]
        fn combine_is_exact_on_the_median(b in prop::collection::vec(-1.0f64..2.0, 3), d in prop::collection::vec(-1.0f64..1.0, 3)) {
            let base = fc(vec![b]);
            let dt = fc(vec![d]);
            let c = combine(&base, &dt).unwrap();
            prop_assert!((c.median()[0] - base.median()[0] - dt.median()[0]).abs() < 1e-12);
            prop_assert!(c.values[0].windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(c.lo[0] <= c.median()[0] && c.median()[0] <= c.hi[0]);
        }
    }

    fn toy_base() -> Model {
        let norm = NormStats { mean: vec![0.0; 11], std: vec![1.0; 11], degenerate: vec![false; 11] };
        let cfg = TftConfig { hidden_size: 8, n_heads: 2, l_hist: 4, l_fut: 2, epochs: 1, ..TftConfig::default() };
        Model::build(cfg, ModelKind::Base, norm).unwrap()
    }

    fn toy_samples(d: f64) -> Vec<DiscrepancySample> {
        let tms: Vec<f64> = (0..40).map(|i| i as f64 * 1500.0).collect();
        let rcps: Vec<f64> = (0..40).map(|i| 1.0 - i as f64 * 0.01).collect();
        let s = series_from(&tms, &rcps);
        extract_windows(&s, 4, 2, 1)
            .unwrap()
            .into_iter()
            .map(|(window, _)| DiscrepancySample { window, d: vec![d; 2] })
            .collect()
    }

    #[test]
    fn dtft_learns_constant_residuals() {
        let base = toy_base();
        for (d, tol) in [(0.0, 0.02), (-0.3, 0.03)] {
            let samples = toy_samples(d);
            let cfg = TftConfig { epochs: 60, learning_rate: 1e-2, dropout_rate: 0.0, ..dtft_config(&base.config) };
            let (m, _) = train_dtft(&samples, &base, &cfg).unwrap();
            assert_eq!(m.kind, ModelKind::Discrepancy);
            for s in samples.iter().step_by(7) {
                for v in crate::tft::predict(&m, &s.window).unwrap().median() {
                    assert!((v - d).abs() < tol, "{v} vs {d}");
                }
            }
        }
    }

    #[test]
    fn dtft_guards() {
        let base = toy_base();
        let bad = TftConfig { l_fut: 3, ..dtft_config(&base.config) };
        assert!(matches!(train_dtft(&toy_samples(0.0), &base, &bad), Err(UpdateError::ConfigInvalid(_))));
        assert!(matches!(train_dtft(&[], &base, &dtft_config(&base.config)), Err(UpdateError::EmptyDataset)));
        assert!(build_update_set(&base, &[], 1).unwrap().is_empty());
    }

    #[test]
    fn update_set_residuals_match_predictions() {
        let base = toy_base();
        let tms: Vec<f64> = (0..12).map(|i| i as f64 * 1500.0).collect();
        let rcps: Vec<f64> = (0..12).map(|i| 1.0 - i as f64 * 0.02).collect();
        let short = series_from(&tms[..3], &rcps[..3]);
        let set = build_update_set(&base, &[series_from(&tms, &rcps), short], 1).unwrap();
        assert_eq!(set.len(), 7);
        for s in &set {
            let f = crate::tft::predict(&base, &s.window).unwrap();
            let obs: Vec<f64> = (1..=2).map(|h| rcps[s.window.origin_t + h]).collect();
            assert_eq!(s.d, compute_discrepancy(&obs, &f.median()).unwrap());
        }
    }
}

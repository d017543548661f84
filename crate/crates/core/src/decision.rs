//! Removal decisions: usage extrapolation, long-horizon RCP forecasts and the
//! removal-threshold search.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{FeatureWindow, TireRecord, TireSeries};
use crate::reduce::thin_by_mileage;
use crate::synth::{fem_surrogate, CeAccumulator, FemConstants, SynthError};
use crate::tft::{band_from_quantiles, forward_raw, predict_batch, Model, QuantileForecast, TftError};
use crate::update::{correct, UpdateError};

pub const DEFAULT_THRESHOLD: f64 = 0.0909;

#[derive(Debug, thiserror::Error)]
pub enum DecisionError {
    #[error("WindowTooShort: prefix spans {span} km, window needs {needed} km")]
    WindowTooShort { span: f64, needed: f64 },
    #[error("Misalignment: {0}")]
    Misalignment(String),
    #[error("EmptyCandidates")]
    EmptyCandidates,
    #[error("NoLabeledData")]
    NoLabeledData,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Tft(#[from] TftError),
    #[error(transparent)]
    Update(#[from] UpdateError),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecisionConfig {
    /// Usage window repeated into the future, km.
    pub window_km: f64,
    pub horizon_km: f64,
    /// Extrapolation step; the window's mean km per record when unset.
    pub step_km: Option<f64>,
    pub threshold: f64,
    /// Monte Carlo dropout rollouts for the epistemic band; 0 disables them.
    pub mc_samples: usize,
    pub seed: u64,
    /// History is thinned to this spacing before forecasting; `None` keeps
    /// every record.
    pub history_spacing_km: Option<f64>,
    pub fem: FemConstants,
}

impl Default for DecisionConfig {
    fn default() -> Self {
        DecisionConfig {
            window_km: 20_000.0,
            horizon_km: 1_000_000.0,
            step_km: None,
            threshold: DEFAULT_THRESHOLD,
            mc_samples: 20,
            seed: 42,
            history_spacing_km: Some(1750.0),
            fem: FemConstants::default(),
        }
    }
}

impl DecisionConfig {
    pub fn validate(&self) -> Result<(), DecisionError> {
        if !(self.window_km > 0.0 && self.horizon_km > 0.0) {
            return Err(DecisionError::InvalidArgument("window_km and horizon_km must be positive".into()));
        }
        if self.step_km.is_some_and(|s| !(s > 0.0)) || self.history_spacing_km.is_some_and(|s| !(s > 0.0)) {
            return Err(DecisionError::InvalidArgument("step_km and history_spacing_km must be positive".into()));
        }
        check_threshold(self.threshold)
    }
}

fn check_threshold(t: f64) -> Result<(), DecisionError> {
    if t > 0.0 && t < 1.0 {
        Ok(())
    } else {
        Err(DecisionError::InvalidArgument(format!("threshold {t} outside (0, 1)")))
    }
}

/// Future usage: the last `window_km` (from the last record at or before
/// `m - window_km`) of TP, CT, LT, VS and RC tiled
/// cyclically; TM and CA extended linearly; LN held. Ends at the first
/// record with TM ≥ `horizon_km`. CE/MSC/ASCA are left for [`project_state`].
pub fn extrapolate_window(
    prefix: &TireSeries,
    window_km: f64,
    horizon_km: f64,
    step_km: Option<f64>,
) -> Result<Vec<TireRecord>, DecisionError> {
    let recs = &prefix.records;
    let (first, last) = match (recs.first(), recs.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(DecisionError::WindowTooShort { span: 0.0, needed: window_km }),
    };
    let m = last.tm;
    if m - first.tm < window_km {
        return Err(DecisionError::WindowTooShort { span: m - first.tm, needed: window_km });
    }
    // start at the last record at or before `m - window_km`
    let start = recs.iter().rposition(|r| r.tm <= m - window_km).unwrap_or(0);
    let window: Vec<&TireRecord> = recs[start..].iter().collect();
    let w0 = window[0];
    let (span, n) = (m - w0.tm, window.len());
    if n < 2 || span <= 0.0 {
        return Err(DecisionError::WindowTooShort { span, needed: window_km });
    }
    let step = step_km.unwrap_or(span / (n - 1) as f64);
    let days_per_km = (last.ca - w0.ca) / span;
    let count = if m >= horizon_km { 0 } else { ((horizon_km - m) / step).ceil() as usize };
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let p = window[k % n];
        let tm = m + (k + 1) as f64 * step;
        out.push(TireRecord {
            t_index: last.t_index + 1 + k as u64,
            tm,
            ca: last.ca + (tm - m) * days_per_km,
            ln: last.ln,
            lt: p.lt,
            vs: p.vs,
            ct: p.ct,
            tp: p.tp,
            ce: 0.0,
            msc: 0.0,
            asca: 0.0,
            rc: p.rc,
            rcp: f64::NAN,
        });
    }
    Ok(out)
}

/// Fills CE (running average continued from the prefix), MSC and ASCA.
pub fn project_state(prefix: &TireSeries, future: &mut [TireRecord], fem: &FemConstants) -> Result<(), DecisionError> {
    let last = prefix.records.last().ok_or(DecisionError::Misalignment("empty prefix".into()))?;
    let start = prefix.records.first().map_or(0.0, |r| r.tm);
    let mut acc = CeAccumulator::resume(last.ce, last.tm - start);
    let mut prev = last.tm;
    for r in future.iter_mut() {
        let out = fem_surrogate(r.tp, r.lt, r.vs, r.rc, fem)?;
        r.msc = out.msc;
        r.asca = out.asca;
        r.ce = acc.push(out.ce, r.tm - prev);
        prev = r.tm;
    }
    Ok(())
}

/// First strict crossings of the median and the band edges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RemovalEstimate {
    /// `None` when the median never drops below the threshold.
    pub point_km: Option<f64>,
    pub ci_lo_km: Option<f64>,
    pub ci_hi_km: Option<f64>,
}

fn first_below(tm: &[f64], v: &[f64], threshold: f64) -> Option<f64> {
    tm.iter().zip(v).find(|(_, x)| **x < threshold).map(|(t, _)| *t)
}

/// Removal mileage from a median forecast and its 95% band. The lower band
/// edge gives the early end of the interval, the upper edge the late end.
pub fn removal_mileage(tm: &[f64], median: &[f64], lo: &[f64], hi: &[f64], threshold: f64) -> Result<RemovalEstimate, DecisionError> {
    check_threshold(threshold)?;
    if median.len() != tm.len() || lo.len() != tm.len() || hi.len() != tm.len() {
        return Err(DecisionError::Misalignment(format!(
            "{} mileages for {} / {} / {} forecast values",
            tm.len(),
            median.len(),
            lo.len(),
            hi.len()
        )));
    }
    let point = first_below(tm, median, threshold);
    let mut ci_lo = first_below(tm, lo, threshold);
    let mut ci_hi = first_below(tm, hi, threshold);
    if let Some(p) = point {
        ci_lo = Some(ci_lo.map_or(p, |l| l.min(p)));
        ci_hi = ci_hi.map(|h| h.max(p));
    }
    Ok(RemovalEstimate { point_km: point, ci_lo_km: ci_lo, ci_hi_km: ci_hi })
}

/// A base model with an optional discrepancy correction.
#[derive(Debug, Clone, Copy)]
pub struct Predictor<'a> {
    pub base: &'a Model,
    pub dtft: Option<&'a Model>,
}

impl<'a> Predictor<'a> {
    pub fn base(base: &'a Model) -> Self {
        Predictor { base, dtft: None }
    }

    pub fn hybrid(base: &'a Model, dtft: &'a Model) -> Self {
        Predictor { base, dtft: Some(dtft) }
    }

    pub fn l_hist(&self) -> usize {
        self.base.config.l_hist
    }

    pub fn l_fut(&self) -> usize {
        self.base.config.l_fut
    }

    /// Eval-mode forecasts (corrected when a discrepancy model is present).
    pub fn forecast(&self, windows: &[&FeatureWindow]) -> Result<Vec<QuantileForecast>, DecisionError> {
        let base = predict_batch(self.base, windows)?;
        match self.dtft {
            None => Ok(base),
            Some(d) => {
                let disc = predict_batch(d, windows)?;
                base.iter().zip(&disc).map(|(b, d)| Ok(correct(b, d)?)).collect()
            }
        }
    }

    /// Median path of one dropout sample per window. Reusing `seed` with the
    /// same batch shape reproduces the masks, so each row is a fixed
    /// sub-network across calls.
    fn sample_medians(&self, windows: &[&FeatureWindow], seed: u64) -> Result<Vec<Vec<f64>>, DecisionError> {
        let med = |m: &Model, seed: u64| -> Result<Vec<Vec<f64>>, DecisionError> {
            let mi = m.config.median_index();
            let raw = forward_raw(m, windows, Some(ChaCha8Rng::seed_from_u64(seed)))?;
            Ok(raw
                .into_iter()
                .map(|w| {
                    w.into_iter()
                        .map(|mut row| {
                            row.sort_by(f64::total_cmp);
                            row[mi]
                        })
                        .collect()
                })
                .collect())
        };
        let mut out = med(self.base, seed)?;
        if let Some(d) = self.dtft {
            for (o, dd) in out.iter_mut().zip(med(d, seed ^ 0x00d7_f7)?) {
                o.iter_mut().zip(dd).for_each(|(a, b)| *a += b);
            }
        }
        for o in out.iter_mut() {
            o.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        }
        Ok(out)
    }
}

/// Long-horizon forecast over an extrapolated trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastTrace {
    pub tm: Vec<f64>,
    pub median: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub sigma_alea: Vec<f64>,
    pub sigma_epist: Vec<f64>,
}

/// Chunked autoregression: each chunk of `L_fut` steps is forecast from the
/// previous `L_hist` records, and the path's own forecasts are fed back as
/// past RCP. The eval-mode median path carries the aleatoric spread; each
/// Monte Carlo row is rolled out with a fixed dropout mask and the spread of
/// those paths is the epistemic part. Stops once the median and both band
/// edges are below `stop_below`.
pub fn rollout(
    predictor: &Predictor,
    prefix: &TireSeries,
    future: &[TireRecord],
    mc_samples: usize,
    seed: u64,
    stop_below: f64,
) -> Result<ForecastTrace, DecisionError> {
    let (lh, lf) = (predictor.l_hist(), predictor.l_fut());
    if prefix.len() < lh {
        return Err(DecisionError::Misalignment(format!("prefix has {} records, model needs {lh}", prefix.len())));
    }
    let mut timeline: Vec<TireRecord> = prefix.records[prefix.len() - lh..].to_vec();
    let observed: Vec<f64> = timeline.iter().map(|r| r.rcp).collect();
    let mut median_path = observed.clone();
    let mut sample_paths = vec![observed; mc_samples];
    let mut trace = ForecastTrace {
        tm: Vec::new(),
        median: Vec::new(),
        lo: Vec::new(),
        hi: Vec::new(),
        sigma_alea: Vec::new(),
        sigma_epist: Vec::new(),
    };
    let mut pos = 0;
    while pos < future.len() {
        let mut chunk: Vec<TireRecord> = future[pos..(pos + lf).min(future.len())].to_vec();
        let real = chunk.len();
        while chunk.len() < lf {
            // pad past the horizon by continuing the last step
            let mut r = *chunk.last().expect("non-empty chunk");
            let step = if chunk.len() >= 2 { r.tm - chunk[chunk.len() - 2].tm } else { r.tm - timeline.last().expect("history").tm };
            r.tm += step;
            chunk.push(r);
        }
        let hist = &timeline[timeline.len() - lh..];
        let window = |rcp: &[f64]| FeatureWindow {
            past_rcp: rcp[rcp.len() - lh..].to_vec(),
            past_x: hist.iter().map(|r| r.covariates()).collect(),
            future_x: chunk.iter().map(|r| r.future_covariates()).collect(),
            axle: prefix.axle,
            origin_t: 0,
        };
        let main = window(&median_path);
        let f = predictor.forecast(&[&main])?.remove(0);
        let med = f.median();
        let sa = f.aleatoric_std();
        let samples = if mc_samples > 0 {
            let ws: Vec<FeatureWindow> = sample_paths.iter().map(|p| window(p)).collect();
            predictor.sample_medians(&ws.iter().collect::<Vec<_>>(), seed)?
        } else {
            Vec::new()
        };
        for h in 0..real {
            let se = if samples.is_empty() {
                0.0
            } else {
                crate::tft::sample_std(&samples.iter().map(|s| s[h]).collect::<Vec<_>>())
            };
            let (lo, hi) = band_from_quantiles(med[h], sa[h], se);
            trace.tm.push(chunk[h].tm);
            trace.median.push(med[h]);
            trace.lo.push(lo.clamp(0.0, 1.0));
            trace.hi.push(hi.clamp(0.0, 1.0));
            trace.sigma_alea.push(sa[h]);
            trace.sigma_epist.push(se);
        }
        median_path.extend_from_slice(&med[..real]);
        for (p, s) in sample_paths.iter_mut().zip(&samples) {
            p.extend_from_slice(&s[..real]);
        }
        timeline.extend_from_slice(&chunk[..real]);
        pos += real;
        let all_below = [&trace.median, &trace.lo, &trace.hi].iter().all(|v| v.iter().any(|x| *x < stop_below));
        if all_below {
            break;
        }
    }
    Ok(trace)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionReport {
    pub tire_id: String,
    pub observation_km: f64,
    /// `None`: not reached by the horizon.
    pub removal_km: Option<f64>,
    pub ci_km: (Option<f64>, Option<f64>),
    pub threshold: f64,
    pub trace: ForecastTrace,
}

impl DecisionReport {
    /// CI width with unreached ends counted at `horizon_km`.
    pub fn ci_width(&self, horizon_km: f64) -> f64 {
        self.ci_km.1.unwrap_or(horizon_km) - self.ci_km.0.unwrap_or(horizon_km)
    }
}

fn history(prefix: &TireSeries, cfg: &DecisionConfig) -> Result<TireSeries, DecisionError> {
    match cfg.history_spacing_km {
        Some(km) => thin_by_mileage(prefix, km).map_err(|e| DecisionError::InvalidArgument(e.to_string())),
        None => Ok(prefix.clone()),
    }
}

/// Extrapolate, project, forecast and read off the removal mileage for a
/// series observed up to its last record.
pub fn decide(predictor: &Predictor, prefix: &TireSeries, cfg: &DecisionConfig) -> Result<DecisionReport, DecisionError> {
    cfg.validate()?;
    let prefix = &history(prefix, cfg)?;
    let mut future = extrapolate_window(prefix, cfg.window_km, cfg.horizon_km, cfg.step_km)?;
    let last = *prefix.records.last().expect("validated by extrapolate_window");
    let m = last.tm;
    if last.rcp < cfg.threshold {
        let empty = ForecastTrace {
            tm: vec![],
            median: vec![],
            lo: vec![],
            hi: vec![],
            sigma_alea: vec![],
            sigma_epist: vec![],
        };
        return Ok(DecisionReport {
            tire_id: prefix.tire_id.clone(),
            observation_km: m,
            removal_km: Some(m),
            ci_km: (Some(m), Some(m)),
            threshold: cfg.threshold,
            trace: empty,
        });
    }
    project_state(prefix, &mut future, &cfg.fem)?;
    let trace = rollout(predictor, prefix, &future, cfg.mc_samples, cfg.seed, cfg.threshold)?;
    let est = removal_mileage(&trace.tm, &trace.median, &trace.lo, &trace.hi, cfg.threshold)?;
    Ok(DecisionReport {
        tire_id: prefix.tire_id.clone(),
        observation_km: m,
        removal_km: est.point_km,
        ci_km: (est.ci_lo_km, est.ci_hi_km),
        threshold: cfg.threshold,
        trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCurve {
    pub thresholds: Vec<f64>,
    pub mape: Vec<f64>,
    pub argmin_threshold: f64,
    pub argmin_mape: f64,
}

/// `n` thresholds log-spaced over `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

pub fn default_grid() -> Vec<f64> {
    log_grid(0.01, 0.5, 50)
}

/// A tire observed up to some mileage together with its true removal mileage.
#[derive(Debug, Clone)]
pub struct LabeledTire {
    pub prefix: TireSeries,
    pub actual_km: f64,
}

/// MAPE between actual and predicted removal mileages; unreached predictions
/// count as `horizon_km`.
pub fn removal_mape(actual: &[f64], predicted: &[Option<f64>], horizon_km: f64) -> f64 {
    let s: f64 = actual
        .iter()
        .zip(predicted)
        .map(|(a, p)| (a - p.unwrap_or(horizon_km)).abs() / a.abs())
        .sum();
    100.0 * s / actual.len() as f64
}

/// Index of the first minimum.
fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x < v[best] {
            best = i;
        }
    }
    best
}

/// MAPE of predicted removal mileage for every candidate threshold. One median
/// forecast per tire is shared by all candidates.
pub fn optimize_threshold(
    predictor: &Predictor,
    tires: &[LabeledTire],
    candidates: &[f64],
    cfg: &DecisionConfig,
) -> Result<ThresholdCurve, DecisionError> {
    if candidates.is_empty() {
        return Err(DecisionError::EmptyCandidates);
    }
    if tires.is_empty() {
        return Err(DecisionError::NoLabeledData);
    }
    for &c in candidates {
        check_threshold(c)?;
    }
    cfg.validate()?;
    let lowest = candidates.iter().copied().fold(f64::INFINITY, f64::min);
    let mut traces = Vec::with_capacity(tires.len());
    for t in tires {
        traces.push(median_trace(predictor, &t.prefix, cfg, lowest)?);
    }
    threshold_curve(tires, &traces, candidates, cfg.horizon_km)
}

/// Eval-mode median forecast for one prefix, stopped once below `stop_below`.
pub fn median_trace(predictor: &Predictor, prefix: &TireSeries, cfg: &DecisionConfig, stop_below: f64) -> Result<ForecastTrace, DecisionError> {
    let prefix = &history(prefix, cfg)?;
    let mut future = extrapolate_window(prefix, cfg.window_km, cfg.horizon_km, cfg.step_km)?;
    project_state(prefix, &mut future, &cfg.fem)?;
    rollout(predictor, prefix, &future, 0, cfg.seed, stop_below)
}

/// The curve for precomputed median traces.
pub fn threshold_curve(
    tires: &[LabeledTire],
    traces: &[ForecastTrace],
    candidates: &[f64],
    horizon_km: f64,
) -> Result<ThresholdCurve, DecisionError> {
    if candidates.is_empty() {
        return Err(DecisionError::EmptyCandidates);
    }
    if tires.is_empty() {
        return Err(DecisionError::NoLabeledData);
    }
    let mut thresholds = candidates.to_vec();
    thresholds.sort_by(f64::total_cmp);
    let actual: Vec<f64> = tires.iter().map(|t| t.actual_km).collect();
    let mape: Vec<f64> = thresholds
        .iter()
        .map(|&th| {
            let pred: Vec<Option<f64>> = traces.iter().map(|tr| first_below(&tr.tm, &tr.median, th)).collect();
            removal_mape(&actual, &pred, horizon_km)
        })
        .collect();
    let i = argmin(&mape);
    Ok(ThresholdCurve { argmin_threshold: thresholds[i], argmin_mape: mape[i], thresholds, mape })
}

#[cfg(test)]
mod tests;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::domain::{FeatureWindow, LabeledWindow};

use super::train::Forecaster;
use super::{ModelKind, TftError};

const Z95: f64 = 1.96;

/// Post-processed multi-horizon forecast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileForecast {
    pub quantiles: Vec<f64>,
    /// `values[h][k]`: step `h`, quantile `quantiles[k]`; non-decreasing in `k`.
    pub values: Vec<Vec<f64>>,
    pub epistemic_std: Vec<f64>,
    /// Combined 95% band.
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl QuantileForecast {
    pub fn horizon(&self) -> usize {
        self.values.len()
    }

    pub fn quantile(&self, q: f64) -> Option<Vec<f64>> {
        let k = self.quantiles.iter().position(|&x| (x - q).abs() < 1e-12)?;
        Some(self.values.iter().map(|row| row[k]).collect())
    }

    pub fn median(&self) -> Vec<f64> {
        self.quantile(0.5).expect("quantile set contains 0.5")
    }

    /// Aleatoric standard deviation per step from the 95% quantile pair.
    pub fn aleatoric_std(&self) -> Vec<f64> {
        match (self.quantile(0.025), self.quantile(0.975)) {
            (Some(lo), Some(hi)) => lo.iter().zip(&hi).map(|(l, h)| (h - l) / (2.0 * Z95)).collect(),
            _ => vec![0.0; self.horizon()],
        }
    }
}

/// `median ± 1.96 · sqrt(σ_alea² + σ_epist²)`.
pub fn band_from_quantiles(median: f64, sigma_alea: f64, sigma_epist: f64) -> (f64, f64) {
    let s = sigma_alea.hypot(sigma_epist);
    (median - Z95 * s, median + Z95 * s)
}

/// Per-step sort, clipping for base models, and band construction.
pub fn postprocess(mut raw: Vec<Vec<f64>>, quantiles: &[f64], kind: ModelKind, epistemic_std: Vec<f64>) -> QuantileForecast {
    for row in raw.iter_mut() {
        row.sort_by(f64::total_cmp);
        if kind == ModelKind::Base {
            row.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        }
    }
    let mut f = QuantileForecast {
        quantiles: quantiles.to_vec(),
        values: raw,
        epistemic_std,
        lo: Vec::new(),
        hi: Vec::new(),
    };
    let med = f.median();
    let sa = f.aleatoric_std();
    for h in 0..f.horizon() {
        let (mut lo, mut hi) = band_from_quantiles(med[h], sa[h], f.epistemic_std[h]);
        if kind == ModelKind::Base {
            lo = lo.clamp(0.0, 1.0);
            hi = hi.clamp(0.0, 1.0);
        }
        f.lo.push(lo);
        f.hi.push(hi);
    }
    f
}

/// Raw network outputs `[window][step][quantile]`. Dropout is active iff
/// `rng` is given.
pub fn forward_raw<M: Forecaster + ?Sized>(
    model: &M,
    windows: &[&FeatureWindow],
    rng: Option<ChaCha8Rng>,
) -> Result<Vec<Vec<Vec<f64>>>, TftError> {
    let batch = model.batch(windows)?;
    let mut g = match rng {
        Some(r) => Graph::with_dropout(model.params(), r),
        None => Graph::new(model.params()),
    };
    let pred = model.forward(&mut g, &batch)?;
    let nq = model.config().quantiles.len();
    let lf = batch.l_fut();
    let data = g.value(pred).data();
    Ok(data
        .chunks(lf * nq)
        .map(|w| w.chunks(nq).map(<[f64]>::to_vec).collect())
        .collect())
}

pub fn predict<M: Forecaster + ?Sized>(model: &M, window: &FeatureWindow) -> Result<QuantileForecast, TftError> {
    Ok(predict_batch(model, &[window])?.remove(0))
}

/// Eval-mode forecasts, evaluated in chunks of `batch_size`.
pub fn predict_batch<M: Forecaster + ?Sized>(model: &M, windows: &[&FeatureWindow]) -> Result<Vec<QuantileForecast>, TftError> {
    let c = model.config();
    let mut out = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(c.batch_size.max(1)) {
        for raw in forward_raw(model, chunk, None)? {
            let zeros = vec![0.0; raw.len()];
            out.push(postprocess(raw, &c.quantiles, model.kind(), zeros));
        }
    }
    Ok(out)
}

/// Sample standard deviation, exactly zero when all samples are equal.
pub(crate) fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let x0 = xs[0];
    let n = xs.len() as f64;
    let mean_d = xs.iter().map(|x| x - x0).sum::<f64>() / n;
    (xs.iter().map(|x| (x - x0 - mean_d).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Monte Carlo dropout: `n_samples` stochastic passes (one batch, one mask per
/// row). Heads are averaged; the epistemic std is the spread of the median head.
pub fn mc_predict<M: Forecaster + ?Sized>(
    model: &M,
    window: &FeatureWindow,
    n_samples: usize,
    seed: u64,
) -> Result<QuantileForecast, TftError> {
    if n_samples < 2 {
        return Err(TftError::ConfigInvalid("mc_predict needs at least 2 samples".into()));
    }
    let c = model.config();
    let reps: Vec<&FeatureWindow> = vec![window; n_samples];
    let mut samples = forward_raw(model, &reps, Some(ChaCha8Rng::seed_from_u64(seed)))?;
    for s in samples.iter_mut() {
        for row in s.iter_mut() {
            row.sort_by(f64::total_cmp);
        }
    }
    let (lf, nq, mi) = (c.l_fut, c.quantiles.len(), c.median_index());
    let mut mean = vec![vec![0.0; nq]; lf];
    let mut std = Vec::with_capacity(lf);
    for h in 0..lf {
        for k in 0..nq {
            mean[h][k] = samples.iter().map(|s| s[h][k]).sum::<f64>() / n_samples as f64;
        }
        let med: Vec<f64> = samples.iter().map(|s| s[h][mi]).collect();
        std.push(sample_std(&med));
    }
    Ok(postprocess(mean, &c.quantiles, model.kind(), std))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandCoverage {
    pub lo_q: f64,
    pub hi_q: f64,
    /// Fraction of targets inside `[q_lo, q_hi]`.
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mape: f64,
    pub pinball: f64,
    pub coverage: Vec<BandCoverage>,
    pub n_targets: usize,
}

impl Metrics {
    pub fn coverage_for(&self, lo_q: f64, hi_q: f64) -> Option<f64> {
        self.coverage
            .iter()
            .find(|c| (c.lo_q - lo_q).abs() < 1e-12 && (c.hi_q - hi_q).abs() < 1e-12)
            .map(|c| c.coverage)
    }
}

pub(crate) fn ape(y: f64, y_hat: f64, eps: f64) -> f64 {
    (y - y_hat).abs() / y.abs().max(eps)
}

pub(crate) fn metrics_from(forecasts: &[QuantileForecast], targets: &[&[f64]], quantiles: &[f64], eps: f64) -> Metrics {
    let nq = quantiles.len();
    let mi = quantiles.iter().position(|&q| q == 0.5).expect("median");
    let pairs: Vec<(usize, usize)> = (0..nq / 2).map(|i| (i, nq - 1 - i)).filter(|(i, _)| *i < mi).collect();
    let (mut ape_sum, mut pin_sum, mut n) = (0.0, 0.0, 0usize);
    let mut inside = vec![0usize; pairs.len()];
    for (f, y) in forecasts.iter().zip(targets) {
        for (row, &yt) in f.values.iter().zip(y.iter()) {
            ape_sum += ape(yt, row[mi], eps);
            pin_sum += row
                .iter()
                .zip(quantiles)
                .map(|(p, q)| crate::autodiff::quantile_loss_unchecked(yt, *p, *q))
                .sum::<f64>()
                / nq as f64;
            for (c, (i, j)) in inside.iter_mut().zip(&pairs) {
                if row[*i] <= yt && yt <= row[*j] {
                    *c += 1;
                }
            }
            n += 1;
        }
    }
    let nf = n.max(1) as f64;
    Metrics {
        mape: 100.0 * ape_sum / nf,
        pinball: pin_sum / nf,
        coverage: pairs
            .iter()
            .zip(inside)
            .map(|((i, j), c)| BandCoverage { lo_q: quantiles[*i], hi_q: quantiles[*j], coverage: c as f64 / nf })
            .collect(),
        n_targets: n,
    }
}

/// MAPE (median), mean pinball loss and band coverage on labeled windows.
pub fn evaluate<M: Forecaster + ?Sized>(model: &M, windows: &[LabeledWindow]) -> Result<Metrics, TftError> {
    if windows.is_empty() {
        return Err(TftError::EmptyDataset);
    }
    let c = model.config();
    let fs = predict_batch(model, &windows.iter().map(|w| &w.0).collect::<Vec<_>>())?;
    let ys: Vec<&[f64]> = windows.iter().map(|w| w.1.as_slice()).collect();
    Ok(metrics_from(&fs, &ys, &c.quantiles, c.mape_eps))
}

/// MAPE of the last-observed-RCP persistence forecast.
pub fn evaluate_persistence(windows: &[LabeledWindow], eps: f64) -> Result<f64, TftError> {
    if windows.is_empty() {
        return Err(TftError::EmptyDataset);
    }
    let (mut s, mut n) = (0.0, 0usize);
    for (w, y) in windows {
        let last = *w.past_rcp.last().expect("non-empty window");
        for yt in y {
            s += ape(*yt, last, eps);
            n += 1;
        }
    }
    Ok(100.0 * s / n as f64)
}

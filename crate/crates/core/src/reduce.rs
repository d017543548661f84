//! Change-driven data reduction.
//!
//! Every covariate column (and optionally RCP) is smoothed with a truncated,
//! renormalized Gaussian kernel, z-normalized per series, differenced, and the
//! absolute first differences are summed into a per-step change metric `A_t`.
//! Records whose `A_t` strictly exceeds `θ` are kept, together with the first
//! and last record. Kept records carry their original values.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{TireSeries, N_COVARIATES};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReduceError {
    #[error("DomainError: {0}")]
    Domain(String),
    #[error("LengthMismatch: {0}")]
    LengthMismatch(String),
    #[error("TargetInfeasible: target {target} for series of length {len}")]
    TargetInfeasible { target: usize, len: usize },
}

/// Unnormalized Gaussian density.
pub fn gaussian_density(z: f64, sigma: f64) -> f64 {
    (-z * z / (2.0 * sigma * sigma)).exp() / (2.0 * std::f64::consts::PI * sigma * sigma).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    pub sigma: f64,
    pub radius: usize,
    /// `weights[radius + j]` is the weight at offset `j`.
    pub weights: Vec<f64>,
}

impl Kernel {
    pub fn weight(&self, offset: isize) -> f64 {
        self.weights[(self.radius as isize + offset) as usize]
    }
}

pub fn make_kernel(sigma: f64, radius: usize) -> Result<Kernel, ReduceError> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(ReduceError::Domain(format!("sigma must be positive, got {sigma}")));
    }
    if radius == 0 {
        return Err(ReduceError::Domain("radius must be at least 1".into()));
    }
    let r = radius as isize;
    let raw: Vec<f64> = (-r..=r).map(|j| gaussian_density(j as f64, sigma)).collect();
    if raw[0] <= 0.0 {
        return Err(ReduceError::Domain(format!("radius {radius} underflows a sigma {sigma} kernel")));
    }
    let total: f64 = raw.iter().sum();
    Ok(Kernel { sigma, radius, weights: raw.iter().map(|w| w / total).collect() })
}

/// Convolution with the kernel truncated at the series edges; the surviving
/// weights are renormalized so constants are preserved everywhere.
pub fn smooth(column: &[f64], kernel: &Kernel) -> Vec<f64> {
    let n = column.len() as isize;
    let r = kernel.radius as isize;
    (0..n)
        .map(|t| {
            let lo = (t - r).max(0);
            let hi = (t + r).min(n - 1);
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for i in lo..=hi {
                let w = kernel.weights[(i - t + r) as usize];
                acc += w * column[i as usize];
                wsum += w;
            }
            acc / wsum
        })
        .collect()
}

/// `A_t = Σ_i |s_i[t+1] − s_i[t]|` for `t = 0..T−1`.
pub fn change_metric(columns: &[Vec<f64>]) -> Result<Vec<f64>, ReduceError> {
    let t = match columns.first() {
        Some(c) => c.len(),
        None => return Err(ReduceError::LengthMismatch("no columns".into())),
    };
    if t < 2 {
        return Err(ReduceError::LengthMismatch(format!("columns need at least 2 points, got {t}")));
    }
    if let Some(bad) = columns.iter().find(|c| c.len() != t) {
        return Err(ReduceError::LengthMismatch(format!("column length {} != {t}", bad.len())));
    }
    let mut a = vec![0.0; t - 1];
    for col in columns {
        for (k, acc) in a.iter_mut().enumerate() {
            *acc += (col[k + 1] - col[k]).abs();
        }
    }
    Ok(a)
}

fn z_normalize(col: &mut [f64]) {
    let n = col.len() as f64;
    let mean = col.iter().sum::<f64>() / n;
    let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    let sd = if sd <= 1e-12 * (1.0 + mean.abs()) { 1.0 } else { sd };
    col.iter_mut().for_each(|x| *x = (*x - mean) / sd);
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReduceParams {
    pub sigma: f64,
    pub radius: usize,
    /// Sum RCP into the change metric alongside the covariates.
    pub include_rcp: bool,
    /// z-normalize smoothed columns before differencing.
    pub normalize: bool,
}

impl Default for ReduceParams {
    fn default() -> Self {
        ReduceParams { sigma: 10.0, radius: 30, include_rcp: true, normalize: true }
    }
}

/// Raw columns that enter the change metric: the 11 covariates, then RCP.
pub fn reduction_columns(series: &TireSeries, include_rcp: bool) -> Vec<Vec<f64>> {
    let mut cols = vec![Vec::with_capacity(series.len()); N_COVARIATES];
    for r in &series.records {
        for (c, v) in cols.iter_mut().zip(r.covariates()) {
            c.push(v);
        }
    }
    if include_rcp {
        cols.push(series.rcp());
    }
    cols
}

pub fn change_profile(series: &TireSeries, params: &ReduceParams) -> Result<Vec<f64>, ReduceError> {
    if series.len() < 2 {
        return Err(ReduceError::Domain(format!("series has {} records", series.len())));
    }
    let kernel = make_kernel(params.sigma, params.radius)?;
    let cols: Vec<Vec<f64>> = reduction_columns(series, params.include_rcp)
        .iter()
        .map(|c| {
            let mut s = smooth(c, &kernel);
            if params.normalize {
                z_normalize(&mut s);
            }
            s
        })
        .collect();
    change_metric(&cols)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReductionResult {
    pub kept_indices: Vec<usize>,
    pub a: Vec<f64>,
    pub theta: f64,
}

/// Indices `t` with `A_t > θ`, plus both endpoints of a `len`-record series.
pub fn select_indices(a: &[f64], theta: f64) -> Vec<usize> {
    let len = a.len() + 1;
    let mut kept: Vec<usize> = std::iter::once(0)
        .chain((1..a.len()).filter(|&t| a[t] > theta))
        .collect();
    if len > 1 {
        kept.push(len - 1);
    }
    kept
}

pub fn reduce_series(series: &TireSeries, params: &ReduceParams, theta: f64) -> Result<ReductionResult, ReduceError> {
    let a = change_profile(series, params)?;
    Ok(ReductionResult { kept_indices: select_indices(&a, theta), a, theta })
}

fn kept_count(a: &[f64], theta: f64) -> usize {
    2 + a.iter().skip(1).filter(|&&x| x > theta).count()
}

/// Threshold whose kept count is closest to `target_count`, searched over the
/// sorted distinct values of `A`.
pub fn threshold_for_target(a: &[f64], target_count: usize) -> Result<f64, ReduceError> {
    let len = a.len() + 1;
    if target_count > len || target_count < 2 {
        return Err(ReduceError::TargetInfeasible { target: target_count, len });
    }
    let mut vals: Vec<f64> = a.iter().skip(1).copied().collect();
    if vals.is_empty() {
        return Ok(a.first().copied().unwrap_or(0.0));
    }
    vals.sort_by(f64::total_cmp);
    vals.dedup();
    let floor = a.iter().copied().fold(vals[0], f64::min) - 1.0;
    // candidates[k]: θ = floor for k = 0, else θ = vals[k-1]; counts decrease with k
    let theta_at = |k: usize| if k == 0 { floor } else { vals[k - 1] };
    let (mut lo, mut hi) = (0usize, vals.len());
    while lo < hi {
        let mid = (lo + hi) / 2;
        if kept_count(a, theta_at(mid)) > target_count {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    // lo: first candidate with count <= target
    let mut best = lo.min(vals.len());
    if lo > 0 {
        let above = kept_count(a, theta_at(lo - 1)).abs_diff(target_count);
        let below = kept_count(a, theta_at(best)).abs_diff(target_count);
        if above < below {
            best = lo - 1;
        }
    }
    Ok(theta_at(best))
}

pub fn auto_threshold(series: &TireSeries, target_count: usize, params: &ReduceParams) -> Result<f64, ReduceError> {
    if target_count > series.len() {
        return Err(ReduceError::TargetInfeasible { target: target_count, len: series.len() });
    }
    threshold_for_target(&change_profile(series, params)?, target_count)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdMode {
    Fixed(f64),
    Target(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedSeries {
    pub series: TireSeries,
    pub original_len: usize,
    pub theta: f64,
}

pub fn reduce_with(series: &TireSeries, params: &ReduceParams, mode: ThresholdMode) -> Result<ReducedSeries, ReduceError> {
    let a = change_profile(series, params)?;
    let theta = match mode {
        ThresholdMode::Fixed(t) => t,
        ThresholdMode::Target(n) => threshold_for_target(&a, n.min(series.len()))?,
    };
    let kept = select_indices(&a, theta);
    Ok(ReducedSeries { series: series.select(&kept), original_len: series.len(), theta })
}

/// Keeps the first record, every record at least `spacing_km` past the
/// previously kept one, and the last record. Change-point reduction clusters
/// its points; decisions want evenly spread history instead.
pub fn thin_by_mileage(series: &TireSeries, spacing_km: f64) -> Result<TireSeries, ReduceError> {
    if !(spacing_km > 0.0) {
        return Err(ReduceError::Domain(format!("spacing_km must be positive, got {spacing_km}")));
    }
    let mut kept: Vec<usize> = Vec::new();
    for (i, r) in series.records.iter().enumerate() {
        if kept.last().is_none_or(|&k| r.tm >= series.records[k].tm + spacing_km) {
            kept.push(i);
        }
    }
    if series.len() > 1 && kept.last() != Some(&(series.len() - 1)) {
        kept.push(series.len() - 1);
    }
    Ok(series.select(&kept))
}

/// CSV reduction report: `tire_id,original_count,kept_count,theta`.
pub fn write_report<W: std::io::Write>(reduced: &[ReducedSeries], w: W) -> Result<(), csv::Error> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["tire_id", "original_count", "kept_count", "theta"])?;
    for r in reduced {
        wr.write_record([
            r.series.tire_id.clone(),
            r.original_len.to_string(),
            r.series.len().to_string(),
            r.theta.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    #[test]
    fn thinning_spacing() {
        let tms: Vec<f64> = (0..100).map(|i| i as f64 * 15.0).collect();
        let s = crate::domain::tests::series_from(&tms, &vec![0.5; 100]);
        let t = super::thin_by_mileage(&s, 100.0).unwrap();
        let got: Vec<f64> = t.records.iter().map(|r| r.tm).collect();
        assert_eq!(&got[..3], &[0.0, 105.0, 210.0]);
        assert_eq!(*got.last().unwrap(), 1485.0);
        assert!(got.windows(2).all(|w| w[1] > w[0]));
        assert!(super::thin_by_mileage(&s, 0.0).is_err());
        assert_eq!(super::thin_by_mileage(&s, 1.0).unwrap().len(), 100);
    }

    use super::*;
    use proptest::prelude::*;

    #[test]
    fn density_at_zero() {
        assert!((gaussian_density(0.0, 1.0) - 0.398_942_280_401_432_7).abs() < 1e-15);
    }

    #[test]
    fn wide_kernel_is_flat() {
        let k = make_kernel(1e6, 1).unwrap();
        for w in &k.weights {
            assert!((w - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn non_positive_sigma_rejected() {
        assert!(make_kernel(0.0, 2).is_err());
        assert!(make_kernel(-1.0, 2).is_err());
    }

    #[test]
    fn constants_survive_smoothing() {
        let k = make_kernel(1.3, 2).unwrap();
        let s = smooth(&[5.0; 5], &k);
        assert!(s.iter().all(|&x| (x - 5.0).abs() < 1e-12));
    }

    #[test]
    fn impulse_matches_direct_convolution() {
        let k = make_kernel(1.0, 1).unwrap();
        let x = [0.0, 0.0, 10.0, 0.0, 0.0];
        // direct evaluation with edge renormalization
        let e0 = 1.0f64;
        let e1 = (-0.5f64).exp();
        let expected = [0.0, 10.0 * e1 / (e0 + 2.0 * e1), 10.0 * e0 / (e0 + 2.0 * e1), 10.0 * e1 / (e0 + 2.0 * e1), 0.0];
        let s = smooth(&x, &k);
        for (a, b) in s.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{s:?}");
        }
        assert!((s[2] - 10.0 * k.weight(0)).abs() < 1e-12);
        assert!((s[1] - 10.0 * k.weight(1)).abs() < 1e-12);
    }

    #[test]
    fn ramp_interior_is_unchanged() {
        let k = make_kernel(0.8, 1).unwrap();
        let s = smooth(&[0.0, 1.0, 2.0, 3.0, 4.0], &k);
        assert!((s[2] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn change_metric_by_hand() {
        let a = change_metric(&[vec![0.0, 1.0, 1.0], vec![0.0, 0.0, 2.0]]).unwrap();
        assert_eq!(a, vec![1.0, 2.0]);
        let flat = change_metric(&[vec![3.0; 4], vec![-1.0; 4]]).unwrap();
        assert_eq!(flat, vec![0.0; 3]);
        let neg = change_metric(&[vec![0.0, -1.0, -1.0], vec![0.0, 0.0, -2.0]]).unwrap();
        assert_eq!(neg, a);
        assert!(matches!(
            change_metric(&[vec![0.0, 1.0], vec![0.0]]),
            Err(ReduceError::LengthMismatch(_))
        ));
    }

    fn test_series(n: usize, seed: u64) -> TireSeries {
        let cfg = crate::synth::FleetConfig { seed, sample_interval: 100.0, ..Default::default() };
        let mut s = crate::synth::gen_tire(&cfg, 0).unwrap();
        s.records.truncate(n);
        s
    }

    #[test]
    fn threshold_extremes() {
        let s = test_series(300, 1);
        let p = ReduceParams::default();
        let all = reduce_series(&s, &p, -1.0).unwrap();
        assert_eq!(all.kept_indices, (0..300).collect::<Vec<_>>());
        let ends = reduce_series(&s, &p, f64::INFINITY).unwrap();
        assert_eq!(ends.kept_indices, vec![0, 299]);

        let t_all = auto_threshold(&s, 300, &p).unwrap();
        assert!(all.a.iter().all(|&a| a > t_all));
        let t_two = auto_threshold(&s, 2, &p).unwrap();
        assert_eq!(reduce_series(&s, &p, t_two).unwrap().kept_indices.len(), 2);
        assert!(matches!(auto_threshold(&s, 301, &p), Err(ReduceError::TargetInfeasible { .. })));
    }

    #[test]
    fn auto_threshold_hits_target() {
        let s = test_series(2000, 3);
        let p = ReduceParams::default();
        for target in [10, 50, 200, 777] {
            let th = auto_threshold(&s, target, &p).unwrap();
            let got = reduce_series(&s, &p, th).unwrap().kept_indices.len();
            assert!(got.abs_diff(target) <= 1, "target {target} got {got}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn kernel_invariants(sigma in 0.05f64..50.0, radius in 1usize..40) {
            let Ok(k) = make_kernel(sigma, radius) else {
                // only an underflowing tail may be refused
                prop_assert!(gaussian_density(radius as f64, sigma) == 0.0);
                return Ok(());
            };
            prop_assert!((k.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for j in 0..=radius as isize {
                prop_assert_eq!(k.weight(j), k.weight(-j));
                prop_assert!(k.weight(j) > 0.0);
            }
        }

        #[test]
        fn kept_sets_nest(seed in 0u64..1000, t1 in 0.0f64..3.0, dt in 0.0f64..3.0) {
            let s = test_series(150, seed);
            let p = ReduceParams { sigma: 2.0, radius: 6, ..Default::default() };
            let a = reduce_series(&s, &p, t1).unwrap().kept_indices;
            let b = reduce_series(&s, &p, t1 + dt).unwrap().kept_indices;
            prop_assert!(b.iter().all(|i| a.contains(i)));
            prop_assert!(a.windows(2).all(|w| w[0] < w[1]));
            prop_assert_eq!(a[0], 0);
            prop_assert_eq!(*a.last().unwrap(), 149);
        }
    }
}

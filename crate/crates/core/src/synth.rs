//! Seeded synthetic fleets.
//!
//! Two analytic pieces stand in for unavailable physics:
//!
//! * an FEM surrogate mapping (TP, LT, VS, RC) to casing energy density and
//!   sidewall curvature metrics:
//!   `d = c1·LT/TP`, `MSC = c2·d`, `ASCA = c3·MSC·(1 + c4·RC·VS)`,
//!   `CE = c5·d·VS` per km, reported as a distance-weighted running average;
//! * a cumulative-hazard RCP oracle:
//!   `h = base·(1 + α·max(0, CT − onset)^p)·(1 + β·CE/ce_ref)`,
//!   `RCP = exp(−∫ h dkm)`.
//!
//! Every tire draws from its own ChaCha stream (`seed`, stream = tire index),
//! so output does not depend on generation order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Axle, TireRecord, TireSeries};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("DomainError: {0}")]
    Domain(String),
    #[error("ConfigInvalid: {0}")]
    ConfigInvalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FemConstants {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
}

impl Default for FemConstants {
    fn default() -> Self {
        FemConstants { c1: 0.01, c2: 40.0, c3: 0.5, c4: 0.5, c5: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FemOutputs {
    /// Instantaneous casing energy per km.
    pub ce: f64,
    pub msc: f64,
    pub asca: f64,
}

pub fn fem_surrogate(
    tp: f64,
    lt: f64,
    vs: f64,
    rc: f64,
    c: &FemConstants,
) -> Result<FemOutputs, SynthError> {
    if !(tp > 0.0 && lt > 0.0) {
        return Err(SynthError::Domain(format!("TP and LT must be positive (TP={tp}, LT={lt})")));
    }
    if !(vs >= 0.0 && rc >= 0.0) {
        return Err(SynthError::Domain(format!("VS and RC must be non-negative (VS={vs}, RC={rc})")));
    }
    let d = c.c1 * lt / tp;
    let msc = c.c2 * d;
    let asca = c.c3 * msc * (1.0 + c.c4 * rc * vs);
    let ce = c.c5 * d * vs;
    Ok(FemOutputs { ce, msc, asca })
}

/// Distance-weighted running average of the surrogate's energy density.
#[derive(Debug, Clone, Copy, Default)]
pub struct CeAccumulator {
    energy: f64,
    km: f64,
    last: f64,
}

impl CeAccumulator {
    /// Continues an average that stood at `value` over `km` kilometres.
    pub fn resume(value: f64, km: f64) -> Self {
        CeAccumulator { energy: value * km, km, last: value }
    }

    /// Adds a step of `dkm` kilometres at energy density `ce`; returns the
    /// running average. A zero-length first step reports `ce` itself.
    pub fn push(&mut self, ce: f64, dkm: f64) -> f64 {
        self.energy += ce * dkm;
        self.km += dkm;
        self.last = ce;
        self.value()
    }

    pub fn value(&self) -> f64 {
        if self.km > 0.0 {
            self.energy / self.km
        } else {
            self.last
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleParams {
    /// Hazard per km at zero energy and cool casing.
    pub base_hazard: f64,
    pub alpha: f64,
    pub ct_onset: f64,
    pub p: f64,
    pub beta: f64,
    pub ce_ref: f64,
}

impl Default for OracleParams {
    fn default() -> Self {
        OracleParams {
            base_hazard: 2.4e-6,
            alpha: 8e-4,
            ct_onset: 50.0,
            p: 2.0,
            beta: 2.0,
            ce_ref: 3.0,
        }
    }
}

impl OracleParams {
    pub fn hazard(&self, ct: f64, ce: f64) -> f64 {
        let heat = (ct - self.ct_onset).max(0.0).powf(self.p);
        self.base_hazard * (1.0 + self.alpha * heat) * (1.0 + self.beta * ce / self.ce_ref)
    }
}

/// Incremental form of [`rcp_oracle`].
#[derive(Debug, Clone, Copy)]
pub struct OracleState {
    cumulative: f64,
    last_tm: Option<f64>,
}

impl Default for OracleState {
    fn default() -> Self {
        OracleState { cumulative: 0.0, last_tm: None }
    }
}

impl OracleState {
    pub fn step(&mut self, rec: &TireRecord, params: &OracleParams) -> f64 {
        if let Some(prev) = self.last_tm {
            let dkm = (rec.tm - prev).max(0.0);
            self.cumulative += params.hazard(rec.ct, rec.ce) * dkm;
        }
        self.last_tm = Some(rec.tm);
        self.rcp()
    }

    pub fn rcp(&self) -> f64 {
        (-self.cumulative).exp().clamp(0.0, 1.0)
    }
}

/// Noise-free RCP at the end of `history`. The hazard over each step is taken
/// at the step's closing record.
pub fn rcp_oracle(history: &[TireRecord], params: &OracleParams) -> f64 {
    let mut state = OracleState::default();
    let mut rcp = 1.0;
    for r in history {
        rcp = state.step(r, params);
    }
    rcp
}

/// Oracle RCP after every record of the series.
pub fn oracle_trace(series: &TireSeries, params: &OracleParams) -> Vec<f64> {
    let mut state = OracleState::default();
    series.records.iter().map(|r| state.step(r, params)).collect()
}

/// First mileage at which the oracle RCP is strictly below `threshold`.
pub fn oracle_removal_mileage(series: &TireSeries, params: &OracleParams, threshold: f64) -> Option<f64> {
    let mut state = OracleState::default();
    series
        .records
        .iter()
        .find(|r| state.step(r, params) < threshold)
        .map(|r| r.tm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FleetConfig {
    pub fleet_id: String,
    pub n_tires: usize,
    /// Fraction of steer-axle tires.
    pub axle_mix: f64,
    pub tp_nominal: f64,
    pub lt_nominal: f64,
    pub vs_nominal: f64,
    /// Steer tires carry `lt_nominal * steer_load_factor`.
    pub steer_load_factor: f64,
    /// Relative per-tire jitter of the operating point.
    pub tp_jitter: f64,
    pub lt_jitter: f64,
    pub vs_jitter: f64,
    /// Relative per-record noise on TP, LT and VS.
    pub record_noise: f64,
    /// Casing temperature range, °C; records are clamped into it.
    pub temperature_regime: (f64, f64),
    pub pressure_offset: f64,
    /// km per record.
    pub sample_interval: f64,
    /// Mean length of a constant-route segment, km.
    pub segment_km: f64,
    pub rc_highway: f64,
    pub rc_urban: f64,
    pub km_per_day: (f64, f64),
    /// Relative observation noise on stored RCP.
    pub sigma_obs: f64,
    /// Generation stops once the oracle RCP falls below this.
    pub end_rcp: f64,
    pub max_mileage: f64,
    pub seed: u64,
    pub fem: FemConstants,
    pub oracle: OracleParams,
}

impl Default for FleetConfig {
    fn default() -> Self {
        FleetConfig {
            fleet_id: "fleet".into(),
            n_tires: 10,
            axle_mix: 0.5,
            tp_nominal: 800.0,
            lt_nominal: 2800.0,
            vs_nominal: 80.0,
            steer_load_factor: 1.25,
            tp_jitter: 0.03,
            lt_jitter: 0.05,
            vs_jitter: 0.05,
            record_noise: 0.02,
            temperature_regime: (0.0, 50.0),
            pressure_offset: 0.0,
            sample_interval: 15.0,
            segment_km: 3000.0,
            rc_highway: 0.015,
            rc_urban: 0.004,
            km_per_day: (300.0, 600.0),
            sigma_obs: 0.03,
            end_rcp: 0.05,
            max_mileage: 1.0e6,
            seed: 42,
            fem: FemConstants::default(),
            oracle: OracleParams::default(),
        }
    }
}

impl FleetConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::ConfigInvalid(m.into()));
        if self.n_tires == 0 {
            return bad("n_tires must be at least 1");
        }
        if !(self.sample_interval > 0.0) {
            return bad("sample_interval must be positive");
        }
        if !(0.0..=1.0).contains(&self.axle_mix) {
            return bad("axle_mix must lie in [0, 1]");
        }
        let (lo, hi) = self.temperature_regime;
        if !(lo <= hi) {
            return bad("temperature_regime is empty");
        }
        if !(self.km_per_day.0 > 0.0 && self.km_per_day.0 <= self.km_per_day.1) {
            return bad("km_per_day range is empty or non-positive");
        }
        if !(self.tp_nominal + self.pressure_offset > 0.0 && self.lt_nominal > 0.0 && self.vs_nominal >= 0.0) {
            return bad("nominal operating point out of domain");
        }
        if !(self.end_rcp > 0.0 && self.end_rcp < 1.0) {
            return bad("end_rcp must lie in (0, 1)");
        }
        if !(self.segment_km > 0.0 && self.max_mileage > 0.0 && self.sigma_obs >= 0.0) {
            return bad("segment_km and max_mileage must be positive, sigma_obs non-negative");
        }
        Ok(())
    }

    fn tire_rng(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        rng
    }
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    Normal::new(0.0, 1.0).expect("unit normal").sample(rng)
}

/// Relative Gaussian observation noise, truncated at three sigma.
fn observe(truth: f64, sigma_obs: f64, rng: &mut ChaCha8Rng) -> f64 {
    let z = gauss(rng).clamp(-3.0, 3.0);
    (truth * (1.0 + sigma_obs * z)).clamp(0.0, 1.0)
}

struct Segment {
    until_km: f64,
    vs_factor: f64,
    lt_factor: f64,
    rc: f64,
}

fn next_segment(rng: &mut ChaCha8Rng, cfg: &FleetConfig, from_km: f64) -> Segment {
    let u: f64 = rng.random::<f64>();
    let len = -cfg.segment_km * (1.0 - u).ln();
    let highway = rng.random::<f64>() < 0.7;
    let (vs_factor, rc) = if highway { (1.1, cfg.rc_highway) } else { (0.6, cfg.rc_urban) };
    Segment {
        until_km: from_km + len.max(cfg.sample_interval),
        vs_factor,
        lt_factor: rng.random_range(0.9..1.1),
        rc: rc * rng.random_range(0.8..1.2),
    }
}

/// One tire of the fleet; identical for identical `(config, index)`.
pub fn gen_tire(cfg: &FleetConfig, index: usize) -> Result<TireSeries, SynthError> {
    cfg.validate()?;
    let mut rng = cfg.tire_rng(index as u64);
    let axle = if rng.random::<f64>() < cfg.axle_mix { Axle::Steer } else { Axle::Drive };
    let load_base = match axle {
        Axle::Steer => cfg.lt_nominal * cfg.steer_load_factor,
        Axle::Drive => cfg.lt_nominal,
    };
    let tp_tire = (cfg.tp_nominal + cfg.pressure_offset) * (1.0 + cfg.tp_jitter * gauss(&mut rng));
    let lt_tire = load_base * (1.0 + cfg.lt_jitter * gauss(&mut rng));
    let vs_tire = cfg.vs_nominal * (1.0 + cfg.vs_jitter * gauss(&mut rng));
    let (t_lo, t_hi) = cfg.temperature_regime;
    let ct_mean = rng.random_range(t_lo..=t_hi);
    let season_phase = rng.random_range(0.0..std::f64::consts::TAU);
    let km_per_day = rng.random_range(cfg.km_per_day.0..=cfg.km_per_day.1);
    let ca0 = rng.random_range(0.0..180.0);
    let ln = if rng.random::<f64>() < 0.7 { 1 } else { 2 };

    let mut records = Vec::new();
    let mut ce_acc = CeAccumulator::default();
    let mut oracle = OracleState::default();
    let mut seg = next_segment(&mut rng, cfg, 0.0);
    let mut tm = 0.0;
    let mut t = 0u64;
    loop {
        if tm >= seg.until_km {
            seg = next_segment(&mut rng, cfg, tm);
        }
        let noise = cfg.record_noise;
        let tp = (tp_tire * (1.0 + noise * gauss(&mut rng))).max(1.0);
        let lt = (lt_tire * seg.lt_factor * (1.0 + noise * gauss(&mut rng))).max(1.0);
        let vs = (vs_tire * seg.vs_factor * (1.0 + noise * gauss(&mut rng))).max(0.0);
        let ca = ca0 + tm / km_per_day;
        let season = 8.0 * (std::f64::consts::TAU * ca / 365.0 + season_phase).sin();
        let ct = (ct_mean + season + 2.0 * gauss(&mut rng)).clamp(t_lo, t_hi);
        let rc = seg.rc;
        let fem = fem_surrogate(tp, lt, vs, rc, &cfg.fem)?;
        let dkm = if t == 0 { 0.0 } else { cfg.sample_interval };
        let ce = ce_acc.push(fem.ce, dkm);
        let mut rec = TireRecord {
            t_index: t,
            tm,
            ca,
            ln,
            lt,
            vs,
            ct,
            tp,
            ce,
            msc: fem.msc,
            asca: fem.asca,
            rc,
            rcp: 1.0,
        };
        let truth = oracle.step(&rec, &cfg.oracle);
        rec.rcp = observe(truth, cfg.sigma_obs, &mut rng);
        records.push(rec);
        if truth < cfg.end_rcp || tm >= cfg.max_mileage {
            break;
        }
        tm += cfg.sample_interval;
        t += 1;
    }
    Ok(TireSeries {
        tire_id: format!("{}-{:04}", cfg.fleet_id, index),
        axle,
        fleet_id: cfg.fleet_id.clone(),
        records,
    })
}

pub fn gen_fleet(cfg: &FleetConfig) -> Result<Vec<TireSeries>, SynthError> {
    cfg.validate()?;
    (0..cfg.n_tires).map(|i| gen_tire(cfg, i)).collect()
}

/// Constant-condition drum run at a fixed casing temperature: drive-axle
/// nominal load, nominal speed, pressure `tp_nominal + pressure_offset`,
/// highway curvature.
pub fn drum_test(cfg: &FleetConfig, ct_fixed: f64) -> Result<TireSeries, SynthError> {
    cfg.validate()?;
    let mut rng = cfg.tire_rng(u64::MAX);
    let tp = cfg.tp_nominal + cfg.pressure_offset;
    let (lt, vs, rc) = (cfg.lt_nominal, cfg.vs_nominal, cfg.rc_highway);
    let fem = fem_surrogate(tp, lt, vs, rc, &cfg.fem)?;
    let mut oracle = OracleState::default();
    let mut records = Vec::new();
    let mut tm = 0.0;
    let mut t = 0u64;
    loop {
        let mut rec = TireRecord {
            t_index: t,
            tm,
            ca: tm / cfg.km_per_day.1,
            ln: 1,
            lt,
            vs,
            ct: ct_fixed,
            tp,
            ce: fem.ce,
            msc: fem.msc,
            asca: fem.asca,
            rc,
            rcp: 1.0,
        };
        let truth = oracle.step(&rec, &cfg.oracle);
        rec.rcp = observe(truth, cfg.sigma_obs, &mut rng);
        records.push(rec);
        if truth < cfg.end_rcp || tm >= cfg.max_mileage {
            break;
        }
        tm += cfg.sample_interval;
        t += 1;
    }
    Ok(TireSeries {
        tire_id: format!("{}-drum-{}", cfg.fleet_id, ct_fixed),
        axle: Axle::Drive,
        fleet_id: cfg.fleet_id.clone(),
        records,
    })
}

impl From<SynthError> for crate::domain::DomainError {
    fn from(e: SynthError) -> Self {
        crate::domain::DomainError::InvalidArgument(e.to_string())
    }
}

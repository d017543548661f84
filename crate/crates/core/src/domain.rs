//! Tire-health variables, life-trace containers, forecasting windows and
//! feature normalization.
//!
//! Covariate column order is fixed and shared by every tensor, checkpoint and
//! file in the crate:
//!
//! | col | symbol | meaning                              | unit  |
//! |-----|--------|--------------------------------------|-------|
//! | 0   | TM     | tire mileage                         | km    |
//! | 1   | CA     | casing age                           | days  |
//! | 2   | LN     | life number (1 = new casing)         | -     |
//! | 3   | LT     | tire load                            | kg    |
//! | 4   | VS     | vehicle speed                        | km/h  |
//! | 5   | CT     | casing temperature                   | °C    |
//! | 6   | TP     | tire pressure                        | kPa   |
//! | 7   | CE     | average casing energy                | J/km  |
//! | 8   | MSC    | maximum sidewall curvature           | 1/m   |
//! | 9   | ASCA   | average sidewall curvature amplitude | 1/m   |
//! | 10  | RC     | road curvature                       | 1/m   |
//!
//! Known-future inputs use the same order with CE removed (see
//! [`FUTURE_COLUMNS`]); CE is a running average over the whole history and is
//! not an exogenous quantity one can schedule ahead of time.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const N_COVARIATES: usize = 11;
pub const N_FUTURE: usize = 10;

pub const COVARIATE_NAMES: [&str; N_COVARIATES] =
    ["TM", "CA", "LN", "LT", "VS", "CT", "TP", "CE", "MSC", "ASCA", "RC"];

/// Indices into the covariate order that make up a known-future row.
pub const FUTURE_COLUMNS: [usize; N_FUTURE] = [0, 1, 2, 3, 4, 5, 6, 8, 9, 10];

pub const COL_TM: usize = 0;
pub const COL_CT: usize = 5;
pub const COL_TP: usize = 6;
pub const COL_CE: usize = 7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("SeriesTooShort: {len} records, need {needed}")]
    SeriesTooShort { len: usize, needed: usize },
    #[error("InvalidArgument: {0}")]
    InvalidArgument(String),
    #[error("EmptyDataset")]
    EmptyDataset,
    #[error("Parse: {0}")]
    Parse(String),
    #[error("Io: {0}")]
    Io(String),
}

impl From<std::io::Error> for DomainError {
    fn from(e: std::io::Error) -> Self {
        DomainError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axle {
    Steer,
    Drive,
}

impl Axle {
    pub fn index(self) -> usize {
        match self {
            Axle::Steer => 0,
            Axle::Drive => 1,
        }
    }
}

impl fmt::Display for Axle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axle::Steer => "steer",
            Axle::Drive => "drive",
        })
    }
}

/// One timestamped sample of a tire's life.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TireRecord {
    pub t_index: u64,
    pub tm: f64,
    pub ca: f64,
    pub ln: u32,
    pub lt: f64,
    pub vs: f64,
    pub ct: f64,
    pub tp: f64,
    pub ce: f64,
    pub msc: f64,
    pub asca: f64,
    pub rc: f64,
    pub rcp: f64,
}

impl TireRecord {
    pub fn covariates(&self) -> [f64; N_COVARIATES] {
        [
            self.tm,
            self.ca,
            self.ln as f64,
            self.lt,
            self.vs,
            self.ct,
            self.tp,
            self.ce,
            self.msc,
            self.asca,
            self.rc,
        ]
    }

    pub fn future_covariates(&self) -> [f64; N_FUTURE] {
        future_row(&self.covariates())
    }
}

pub fn future_row(cov: &[f64; N_COVARIATES]) -> [f64; N_FUTURE] {
    let mut out = [0.0; N_FUTURE];
    for (o, &c) in out.iter_mut().zip(FUTURE_COLUMNS.iter()) {
        *o = cov[c];
    }
    out
}

/// A tire's full life trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TireSeries {
    pub tire_id: String,
    pub axle: Axle,
    pub fleet_id: String,
    pub records: Vec<TireRecord>,
}

impl TireSeries {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn rcp(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.rcp).collect()
    }

    pub fn mileage(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.tm).collect()
    }

    /// Records with `TM <= km`.
    pub fn prefix_to_mileage(&self, km: f64) -> TireSeries {
        TireSeries {
            records: self.records.iter().copied().take_while(|r| r.tm <= km).collect(),
            ..self.clone_header()
        }
    }

    pub fn clone_header(&self) -> TireSeries {
        TireSeries {
            tire_id: self.tire_id.clone(),
            axle: self.axle,
            fleet_id: self.fleet_id.clone(),
            records: Vec::new(),
        }
    }

    pub fn select(&self, indices: &[usize]) -> TireSeries {
        TireSeries {
            records: indices.iter().map(|&i| self.records[i]).collect(),
            ..self.clone_header()
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn contains(&self, needle: &str) -> bool {
        self.violations.iter().any(|v| v.contains(needle))
    }
}

pub fn validate_series(series: &TireSeries) -> ValidationReport {
    let mut v = Vec::new();
    let recs = &series.records;
    if recs.len() < 2 {
        v.push(format!("fewer than 2 records ({})", recs.len()));
    }
    for (i, r) in recs.iter().enumerate() {
        let vals = r.covariates();
        if vals.iter().chain(std::iter::once(&r.rcp)).any(|x| !x.is_finite()) {
            v.push(format!("non-finite value at index {i}"));
        }
        if r.tm < 0.0 {
            v.push(format!("TM negative at index {i}"));
        }
        if r.ln < 1 {
            v.push(format!("LN below 1 at index {i}"));
        }
        if !(0.0..=1.0).contains(&r.rcp) {
            v.push(format!("RCP outside [0, 1] at index {i}"));
        }
        if r.tp <= 0.0 {
            v.push(format!("TP non-positive at index {i}"));
        }
        if r.lt <= 0.0 {
            v.push(format!("LT non-positive at index {i}"));
        }
        if r.vs < 0.0 {
            v.push(format!("VS negative at index {i}"));
        }
        if i > 0 {
            let p = &recs[i - 1];
            if r.t_index <= p.t_index {
                v.push(format!("t_index not strictly increasing at index {i}"));
            }
            if r.tm < p.tm {
                v.push(format!("TM non-monotone at index {i}"));
            }
            if r.ca < p.ca {
                v.push(format!("CA non-monotone at index {i}"));
            }
            if r.ln < p.ln {
                v.push(format!("LN non-monotone at index {i}"));
            }
        }
    }
    ValidationReport { violations: v }
}

/// Input triple for one forecast: past RCP, past covariates, known-future
/// covariates, plus the static axle category.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureWindow {
    pub past_rcp: Vec<f64>,
    pub past_x: Vec<[f64; N_COVARIATES]>,
    pub future_x: Vec<[f64; N_FUTURE]>,
    pub axle: Axle,
    /// Index of the last observed record.
    pub origin_t: usize,
}

impl FeatureWindow {
    pub fn l_hist(&self) -> usize {
        self.past_rcp.len()
    }

    pub fn l_fut(&self) -> usize {
        self.future_x.len()
    }

    pub fn normalized(&self, stats: &NormStats) -> FeatureWindow {
        FeatureWindow {
            past_rcp: self.past_rcp.clone(),
            past_x: self.past_x.iter().map(|r| stats.apply_row(r)).collect(),
            future_x: self.future_x.iter().map(|r| stats.apply_future_row(r)).collect(),
            axle: self.axle,
            origin_t: self.origin_t,
        }
    }
}

/// A window paired with its target RCP values.
pub type LabeledWindow = (FeatureWindow, Vec<f64>);

pub fn window_count(len: usize, l_hist: usize, l_fut: usize, stride: usize) -> usize {
    if len < l_hist + l_fut || stride == 0 {
        0
    } else {
        (len - l_hist - l_fut) / stride + 1
    }
}

pub fn extract_windows(
    series: &TireSeries,
    l_hist: usize,
    l_fut: usize,
    stride: usize,
) -> Result<Vec<LabeledWindow>, DomainError> {
    if l_hist == 0 || l_fut == 0 || stride == 0 {
        return Err(DomainError::InvalidArgument(
            "L_hist, L_fut and stride must be at least 1".into(),
        ));
    }
    let len = series.len();
    if len < l_hist + l_fut {
        return Err(DomainError::SeriesTooShort { len, needed: l_hist + l_fut });
    }
    let recs = &series.records;
    let n = window_count(len, l_hist, l_fut, stride);
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let start = k * stride;
        let origin = start + l_hist - 1;
        let past = &recs[start..=origin];
        let fut = &recs[origin + 1..=origin + l_fut];
        let window = FeatureWindow {
            past_rcp: past.iter().map(|r| r.rcp).collect(),
            past_x: past.iter().map(|r| r.covariates()).collect(),
            future_x: fut.iter().map(|r| r.future_covariates()).collect(),
            axle: series.axle,
            origin_t: origin,
        };
        out.push((window, fut.iter().map(|r| r.rcp).collect()));
    }
    Ok(out)
}

/// Per-feature z-score statistics (population standard deviation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Constant features; their std was forced to 1.
    pub degenerate: Vec<bool>,
}

impl NormStats {
    pub fn fit<R: AsRef<[f64]>>(rows: &[R]) -> Result<NormStats, DomainError> {
        let first = rows.first().ok_or(DomainError::EmptyDataset)?;
        let d = first.as_ref().len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            let r = r.as_ref();
            if r.len() != d {
                return Err(DomainError::InvalidArgument("ragged rows".into()));
            }
            for (m, x) in mean.iter_mut().zip(r) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in rows {
            for ((v, x), m) in var.iter_mut().zip(r.as_ref()).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let mut std = Vec::with_capacity(d);
        let mut degenerate = Vec::with_capacity(d);
        for (v, m) in var.into_iter().zip(&mean) {
            let s = (v / n).sqrt();
            // relative: a constant column can still carry rounding noise in its mean
            if s <= 1e-12 * (1.0 + m.abs()) {
                std.push(1.0);
                degenerate.push(true);
            } else {
                std.push(s);
                degenerate.push(false);
            }
        }
        Ok(NormStats { mean, std, degenerate })
    }

    /// Fits covariate statistics over every record of the given series.
    pub fn fit_series(series: &[TireSeries]) -> Result<NormStats, DomainError> {
        let rows: Vec<[f64; N_COVARIATES]> = series
            .iter()
            .flat_map(|s| s.records.iter().map(|r| r.covariates()))
            .collect();
        NormStats::fit(&rows)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }

    pub fn invert(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(z, (m, s))| z * s + m)
            .collect()
    }

    pub fn apply_row(&self, row: &[f64; N_COVARIATES]) -> [f64; N_COVARIATES] {
        let mut out = [0.0; N_COVARIATES];
        for j in 0..N_COVARIATES {
            out[j] = (row[j] - self.mean[j]) / self.std[j];
        }
        out
    }

    pub fn apply_future_row(&self, row: &[f64; N_FUTURE]) -> [f64; N_FUTURE] {
        let mut out = [0.0; N_FUTURE];
        for (k, &j) in FUTURE_COLUMNS.iter().enumerate() {
            out[k] = (row[k] - self.mean[j]) / self.std[j];
        }
        out
    }
}

/// One line of the dataset file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordRow {
    tire_id: String,
    axle: Axle,
    fleet_id: String,
    t: u64,
    #[serde(rename = "TM")]
    tm: f64,
    #[serde(rename = "CA")]
    ca: f64,
    #[serde(rename = "LN")]
    ln: u32,
    #[serde(rename = "LT")]
    lt: f64,
    #[serde(rename = "VS")]
    vs: f64,
    #[serde(rename = "CT")]
    ct: f64,
    #[serde(rename = "TP")]
    tp: f64,
    #[serde(rename = "CE")]
    ce: f64,
    #[serde(rename = "MSC")]
    msc: f64,
    #[serde(rename = "ASCA")]
    asca: f64,
    #[serde(rename = "RC")]
    rc: f64,
    #[serde(rename = "RCP")]
    rcp: f64,
}

impl RecordRow {
    fn new(s: &TireSeries, r: &TireRecord) -> Self {
        RecordRow {
            tire_id: s.tire_id.clone(),
            axle: s.axle,
            fleet_id: s.fleet_id.clone(),
            t: r.t_index,
            tm: r.tm,
            ca: r.ca,
            ln: r.ln,
            lt: r.lt,
            vs: r.vs,
            ct: r.ct,
            tp: r.tp,
            ce: r.ce,
            msc: r.msc,
            asca: r.asca,
            rc: r.rc,
            rcp: r.rcp,
        }
    }

    fn record(&self) -> TireRecord {
        TireRecord {
            t_index: self.t,
            tm: self.tm,
            ca: self.ca,
            ln: self.ln,
            lt: self.lt,
            vs: self.vs,
            ct: self.ct,
            tp: self.tp,
            ce: self.ce,
            msc: self.msc,
            asca: self.asca,
            rc: self.rc,
            rcp: self.rcp,
        }
    }
}

fn group_rows(rows: impl Iterator<Item = Result<RecordRow, DomainError>>) -> Result<Vec<TireSeries>, DomainError> {
    let mut order: Vec<TireSeries> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for row in rows {
        let row = row?;
        let slot = match index.get(&row.tire_id) {
            Some(&i) => i,
            None => {
                index.insert(row.tire_id.clone(), order.len());
                order.push(TireSeries {
                    tire_id: row.tire_id.clone(),
                    axle: row.axle,
                    fleet_id: row.fleet_id.clone(),
                    records: Vec::new(),
                });
                order.len() - 1
            }
        };
        order[slot].records.push(row.record());
    }
    Ok(order)
}

/// Reads JSON Lines; records are grouped by `tire_id` in order of first
/// appearance.
pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Vec<TireSeries>, DomainError> {
    group_rows(reader.lines().enumerate().filter_map(|(n, line)| match line {
        Err(e) => Some(Err(DomainError::from(e))),
        Ok(l) if l.trim().is_empty() => None,
        Ok(l) => Some(
            serde_json::from_str::<RecordRow>(&l)
                .map_err(|e| DomainError::Parse(format!("line {}: {e}", n + 1))),
        ),
    }))
}

pub fn write_jsonl<W: Write>(series: &[TireSeries], mut w: W) -> Result<(), DomainError> {
    for s in series {
        for r in &s.records {
            let line = serde_json::to_string(&RecordRow::new(s, r))
                .map_err(|e| DomainError::Parse(e.to_string()))?;
            w.write_all(line.as_bytes())?;
            w.write_all(b"\n")?;
        }
    }
    Ok(())
}

pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Vec<TireSeries>, DomainError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let rows: Vec<Result<RecordRow, DomainError>> = rdr
        .deserialize::<RecordRow>()
        .map(|r| r.map_err(|e| DomainError::Parse(e.to_string())))
        .collect();
    group_rows(rows.into_iter())
}

pub fn load_series(path: &std::path::Path) -> Result<Vec<TireSeries>, DomainError> {
    let file = std::fs::File::open(path)?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        read_csv(file)
    } else {
        read_jsonl(std::io::BufReader::new(file))
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub fn record(t: u64, tm: f64, rcp: f64) -> TireRecord {
        TireRecord {
            t_index: t,
            tm,
            ca: tm / 400.0,
            ln: 1,
            lt: 3000.0,
            vs: 80.0,
            ct: 30.0,
            tp: 800.0,
            ce: 3.0,
            msc: 1.5,
            asca: 0.9,
            rc: 0.01,
            rcp,
        }
    }

    pub fn series_from(tms: &[f64], rcps: &[f64]) -> TireSeries {
        TireSeries {
            tire_id: "t0".into(),
            axle: Axle::Drive,
            fleet_id: "f0".into(),
            records: tms
                .iter()
                .zip(rcps)
                .enumerate()
                .map(|(i, (&tm, &rcp))| record(i as u64, tm, rcp))
                .collect(),
        }
    }

    #[test]
    fn tm_regression_is_reported() {
        let s = series_from(&[0.0, 10.0, 5.0], &[1.0, 0.9, 0.8]);
        let rep = validate_series(&s);
        assert!(rep.contains("TM non-monotone at index 2"), "{rep:?}");
    }

    #[test]
    fn valid_two_point_series() {
        let s = series_from(&[0.0, 10.0], &[1.0, 0.9]);
        assert!(validate_series(&s).is_valid());
    }

    #[test]
    fn single_record_is_too_few() {
        let s = series_from(&[0.0], &[1.0]);
        let rep = validate_series(&s);
        assert!(rep.contains("fewer than 2 records"));
        assert_eq!(rep, validate_series(&s));
    }

    #[test]
    fn rcp_range_and_pressure() {
        let mut s = series_from(&[0.0, 10.0], &[1.2, 0.9]);
        s.records[1].tp = 0.0;
        let rep = validate_series(&s);
        assert!(rep.contains("RCP outside [0, 1] at index 0"));
        assert!(rep.contains("TP non-positive at index 1"));
    }

    fn ramp(n: usize) -> TireSeries {
        let tms: Vec<f64> = (0..n).map(|i| i as f64 * 100.0).collect();
        let rcps: Vec<f64> = (0..n).map(|i| 1.0 - i as f64 * 0.01).collect();
        series_from(&tms, &rcps)
    }

    #[test]
    fn window_count_formula() {
        let w = extract_windows(&ramp(10), 4, 2, 1).unwrap();
        assert_eq!(w.len(), 5);
        assert_eq!(w.len(), window_count(10, 4, 2, 1));
        let w = extract_windows(&ramp(23), 4, 3, 5).unwrap();
        assert_eq!(w.len(), (23 - 7) / 5 + 1);
    }

    #[test]
    fn boundary_window_targets_last_records() {
        let s = ramp(6);
        let w = extract_windows(&s, 4, 2, 1).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].0.origin_t, 3);
        assert_eq!(w[0].1, vec![s.records[4].rcp, s.records[5].rcp]);
        assert_eq!(w[0].0.future_x[0][0], s.records[4].tm);
    }

    #[test]
    fn short_series_rejected() {
        assert_eq!(
            extract_windows(&ramp(5), 4, 2, 1).unwrap_err(),
            DomainError::SeriesTooShort { len: 5, needed: 6 }
        );
    }

    #[test]
    fn stride_l_hist_windows_tile_the_covariates() {
        let s = ramp(20);
        let w = extract_windows(&s, 4, 2, 4).unwrap();
        let rebuilt: Vec<[f64; N_COVARIATES]> = w.iter().flat_map(|(fw, _)| fw.past_x.clone()).collect();
        let original: Vec<[f64; N_COVARIATES]> =
            s.records[..rebuilt.len()].iter().map(|r| r.covariates()).collect();
        assert_eq!(rebuilt, original);
    }

    #[test]
    fn two_point_norm() {
        let st = NormStats::fit(&[[2.0], [4.0]]).unwrap();
        assert_eq!(st.mean, vec![3.0]);
        assert_eq!(st.std, vec![1.0]);
        assert_eq!(st.apply(&[2.0]), vec![-1.0]);
        assert_eq!(st.apply(&[4.0]), vec![1.0]);
    }

    #[test]
    fn constant_feature_flagged() {
        let st = NormStats::fit(&[[5.0], [5.0], [5.0]]).unwrap();
        assert_eq!(st.std, vec![1.0]);
        assert_eq!(st.degenerate, vec![true]);
        assert_eq!(st.apply(&[5.0]), vec![0.0]);
    }

    #[test]
    fn jsonl_round_trip() {
        let s = ramp(3);
        let mut buf = Vec::new();
        write_jsonl(std::slice::from_ref(&s), &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("{\"tire_id\":\"t0\",\"axle\":\"drive\",\"fleet_id\":\"f0\",\"t\":0,\"TM\":0.0"));
        let back = read_jsonl(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back, vec![s]);
    }

    #[test]
    fn csv_import_matches_jsonl() {
        let csv = "tire_id,axle,fleet_id,t,TM,CA,LN,LT,VS,CT,TP,CE,MSC,ASCA,RC,RCP\n\
                   a,steer,f,0,0,0,1,3000,80,30,800,3,1.5,0.9,0.01,1\n\
                   a,steer,f,1,10,1,1,3000,80,30,800,3,1.5,0.9,0.01,0.99\n";
        let s = read_csv(csv.as_bytes()).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].axle, Axle::Steer);
        assert_eq!(s[0].records[1].rcp, 0.99);
    }

    #[test]
    fn unknown_key_rejected() {
        let line = r#"{"tire_id":"a","axle":"drive","fleet_id":"f","t":0,"TM":0,"CA":0,"LN":1,"LT":1,"VS":1,"CT":1,"TP":1,"CE":1,"MSC":1,"ASCA":1,"RC":0,"RCP":1,"extra":2}"#;
        assert!(read_jsonl(std::io::Cursor::new(line)).is_err());
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn norm_round_trip(rows in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 4), 2..30)) {
                let st = NormStats::fit(&rows).unwrap();
                for r in &rows {
                    let back = st.invert(&st.apply(r));
                    for (a, b) in back.iter().zip(r) {
                        prop_assert!((a - b).abs() < 1e-12 * (1.0 + b.abs()));
                    }
                }
            }

            #[test]
            fn normalized_fit_set_is_standard(rows in prop::collection::vec(prop::collection::vec(-50f64..50.0, 3), 3..40)) {
                let st = NormStats::fit(&rows).unwrap();
                let z: Vec<Vec<f64>> = rows.iter().map(|r| st.apply(r)).collect();
                let n = z.len() as f64;
                for j in 0..3 {
                    let m = z.iter().map(|r| r[j]).sum::<f64>() / n;
                    let v = z.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n;
                    prop_assert!(m.abs() < 1e-10);
                    if !st.degenerate[j] {
                        prop_assert!((v.sqrt() - 1.0).abs() < 1e-10);
                    }
                }
            }
        }
    }
}

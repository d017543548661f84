//! SVG figures with companion CSVs. The CSV holds every plotted point; the
//! SVG is a derived view.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decision::{DecisionReport, ThresholdCurve};
use crate::tft::ComparisonRow;

#[derive(Debug, thiserror::Error)]
pub enum PlotError {
    #[error("SchemaMismatch: {0}")]
    SchemaMismatch(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlotKind {
    ThresholdCurve,
    RcpForecast,
    DecisionSeries,
    ComparisonTable,
}

impl std::str::FromStr for PlotKind {
    type Err = PlotError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "threshold-curve" => Ok(PlotKind::ThresholdCurve),
            "rcp-forecast" => Ok(PlotKind::RcpForecast),
            "decision-series" => Ok(PlotKind::DecisionSeries),
            "comparison-table" => Ok(PlotKind::ComparisonTable),
            other => Err(PlotError::SchemaMismatch(format!("unknown plot kind {other}"))),
        }
    }
}

/// A banded RCP forecast with optional observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForecastSeries {
    pub tm: Vec<f64>,
    pub median: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    #[serde(default)]
    pub observed_tm: Vec<f64>,
    #[serde(default)]
    pub observed_rcp: Vec<f64>,
    #[serde(default)]
    pub threshold: Option<f64>,
}

impl ForecastSeries {
    pub fn from_report(r: &DecisionReport, observed_tm: Vec<f64>, observed_rcp: Vec<f64>) -> Self {
        ForecastSeries {
            tm: r.trace.tm.clone(),
            median: r.trace.median.clone(),
            lo: r.trace.lo.clone(),
            hi: r.trace.hi.clone(),
            observed_tm,
            observed_rcp,
            threshold: Some(r.threshold),
        }
    }

    fn check(&self) -> Result<(), PlotError> {
        let n = self.tm.len();
        if self.median.len() != n || self.lo.len() != n || self.hi.len() != n {
            return Err(PlotError::SchemaMismatch("forecast vectors differ in length".into()));
        }
        if self.observed_tm.len() != self.observed_rcp.len() {
            return Err(PlotError::SchemaMismatch("observed vectors differ in length".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Figure {
    pub svg: String,
    pub csv: String,
}

impl Figure {
    /// Writes `<stem>.svg` and `<stem>.csv`.
    pub fn write(&self, stem: &Path) -> Result<(), PlotError> {
        crate::atomic::write_atomic(&stem.with_extension("svg"), self.svg.as_bytes())?;
        crate::atomic::write_atomic(&stem.with_extension("csv"), self.csv.as_bytes())?;
        Ok(())
    }
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: (f64, f64, f64, f64) = (60.0, 20.0, 30.0, 50.0); // left, right, top, bottom

struct Frame {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
    xr: (f64, f64),
    yr: (f64, f64),
}

impl Frame {
    fn new(x0: f64, y0: f64, w: f64, h: f64, xr: (f64, f64), yr: (f64, f64)) -> Frame {
        let widen = |(a, b): (f64, f64)| if b > a { (a, b) } else { (a - 0.5, a + 0.5) };
        Frame { x0, y0, w, h, xr: widen(xr), yr: widen(yr) }
    }

    fn x(&self, v: f64) -> f64 {
        self.x0 + (v - self.xr.0) / (self.xr.1 - self.xr.0) * self.w
    }

    fn y(&self, v: f64) -> f64 {
        self.y0 + self.h - (v - self.yr.0) / (self.yr.1 - self.yr.0) * self.h
    }

    fn axes(&self, out: &mut String, xlabel: &str, ylabel: &str) {
        let _ = writeln!(
            out,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#333"/>"##,
            self.x0, self.y0, self.w, self.h
        );
        for i in 0..=4 {
            let t = i as f64 / 4.0;
            let xv = self.xr.0 + t * (self.xr.1 - self.xr.0);
            let yv = self.yr.0 + t * (self.yr.1 - self.yr.0);
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="middle">{}</text>"#,
                self.x(xv),
                self.y0 + self.h + 14.0,
                tick(xv)
            );
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="end">{}</text>"#,
                self.x0 - 4.0,
                self.y(yv) + 3.0,
                tick(yv)
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">{}</text>"#,
            self.x0 + self.w / 2.0,
            self.y0 + self.h + 30.0,
            xlabel
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle" transform="rotate(-90 {:.2} {:.2})">{}</text>"#,
            self.x0 - 42.0,
            self.y0 + self.h / 2.0,
            self.x0 - 42.0,
            self.y0 + self.h / 2.0,
            ylabel
        );
    }

    fn polyline(&self, out: &mut String, xs: &[f64], ys: &[f64], style: &str) {
        if xs.is_empty() {
            return;
        }
        let pts: Vec<String> = xs.iter().zip(ys).map(|(x, y)| format!("{:.2},{:.2}", self.x(*x), self.y(*y))).collect();
        let _ = writeln!(out, r#"<polyline points="{}" fill="none" {style}/>"#, pts.join(" "));
    }

    fn band(&self, out: &mut String, xs: &[f64], lo: &[f64], hi: &[f64]) {
        if xs.is_empty() {
            return;
        }
        let mut pts: Vec<String> = xs.iter().zip(hi).map(|(x, y)| format!("{:.2},{:.2}", self.x(*x), self.y(*y))).collect();
        pts.extend(xs.iter().zip(lo).rev().map(|(x, y)| format!("{:.2},{:.2}", self.x(*x), self.y(*y))));
        let _ = writeln!(out, r##"<polygon points="{}" fill="#4a7ebb" fill-opacity="0.25" stroke="none"/>"##, pts.join(" "));
    }

    fn hline(&self, out: &mut String, v: f64) {
        let _ = writeln!(
            out,
            r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#c0392b" stroke-dasharray="4 3"/>"##,
            self.x0,
            self.y(v),
            self.x0 + self.w,
            self.y(v)
        );
    }
}

fn tick(v: f64) -> String {
    let a = v.abs();
    if a >= 1000.0 {
        format!("{:.0}k", v / 1000.0)
    } else if a >= 10.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

fn range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    vals.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)))
}

fn svg_open(w: f64, h: f64, title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}" font-family="sans-serif">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.2}" y="18" font-size="13" text-anchor="middle">{}</text>"#, w / 2.0, escape(title));
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn csv_string(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv");
    for r in rows {
        w.write_record(r).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// MAPE against threshold with the argmin marked.
pub fn threshold_curve(c: &ThresholdCurve) -> Result<Figure, PlotError> {
    if c.thresholds.len() != c.mape.len() || c.thresholds.is_empty() {
        return Err(PlotError::SchemaMismatch("threshold and MAPE vectors must be non-empty and equal length".into()));
    }
    let mut svg = svg_open(W, H, "Removal-mileage MAPE by RCP threshold");
    let (l, r, t, b) = MARGIN;
    let f = Frame::new(l, t, W - l - r, H - t - b, range(c.thresholds.iter().copied()), range(c.mape.iter().copied()));
    f.axes(&mut svg, "RCP threshold", "MAPE (%)");
    f.polyline(&mut svg, &c.thresholds, &c.mape, r##"stroke="#4a7ebb" stroke-width="1.5""##);
    for (x, y) in c.thresholds.iter().zip(&c.mape) {
        let _ = writeln!(svg, r##"<circle cx="{:.2}" cy="{:.2}" r="2" fill="#4a7ebb"/>"##, f.x(*x), f.y(*y));
    }
    let _ = writeln!(
        svg,
        r##"<circle cx="{:.2}" cy="{:.2}" r="5" fill="none" stroke="#c0392b" stroke-width="2"/>"##,
        f.x(c.argmin_threshold),
        f.y(c.argmin_mape)
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" font-size="11">θ* = {:.4}, MAPE {:.2}%</text>"#,
        f.x(c.argmin_threshold) + 8.0,
        f.y(c.argmin_mape) - 8.0,
        c.argmin_threshold,
        c.argmin_mape
    );
    svg.push_str("</svg>\n");
    let rows = c
        .thresholds
        .iter()
        .zip(&c.mape)
        .map(|(t, m)| vec![t.to_string(), m.to_string(), (*t == c.argmin_threshold).to_string()])
        .collect::<Vec<_>>();
    Ok(Figure { svg, csv: csv_string(&["threshold", "mape", "argmin"], &rows) })
}

fn forecast_panel(svg: &mut String, f: &Frame, s: &ForecastSeries) {
    f.band(svg, &s.tm, &s.lo, &s.hi);
    f.polyline(svg, &s.tm, &s.median, r##"stroke="#1f3f66" stroke-width="1.5""##);
    for (x, y) in s.observed_tm.iter().zip(&s.observed_rcp) {
        let _ = writeln!(svg, r##"<circle cx="{:.2}" cy="{:.2}" r="1.5" fill="#555"/>"##, f.x(*x), f.y(*y));
    }
    if let Some(t) = s.threshold {
        f.hline(svg, t);
    }
}

fn forecast_rows(panel: Option<usize>, s: &ForecastSeries) -> Vec<Vec<String>> {
    let p = panel.map_or_else(String::new, |p| p.to_string());
    let mut rows: Vec<Vec<String>> = s
        .observed_tm
        .iter()
        .zip(&s.observed_rcp)
        .map(|(t, y)| vec![p.clone(), "observed".into(), t.to_string(), y.to_string(), String::new(), String::new()])
        .collect();
    rows.extend((0..s.tm.len()).map(|i| {
        vec![
            p.clone(),
            "forecast".into(),
            s.tm[i].to_string(),
            s.median[i].to_string(),
            s.lo[i].to_string(),
            s.hi[i].to_string(),
        ]
    }));
    rows
}

fn rcp_range(s: &ForecastSeries) -> ((f64, f64), (f64, f64)) {
    let x = range(s.tm.iter().chain(&s.observed_tm).copied());
    let y = range(s.lo.iter().chain(&s.hi).chain(&s.observed_rcp).chain(&s.threshold).copied());
    (x, (y.0.min(0.0), y.1.max(1.0)))
}

/// Median forecast with its shaded 95% band.
pub fn rcp_forecast(s: &ForecastSeries) -> Result<Figure, PlotError> {
    s.check()?;
    let mut svg = svg_open(W, H, "RCP forecast with 95% band");
    let (l, r, t, b) = MARGIN;
    let (xr, yr) = rcp_range(s);
    let f = Frame::new(l, t, W - l - r, H - t - b, xr, yr);
    f.axes(&mut svg, "mileage (km)", "RCP");
    forecast_panel(&mut svg, &f, s);
    svg.push_str("</svg>\n");
    let csv = csv_string(&["panel", "kind", "tm", "rcp", "lo", "hi"], &forecast_rows(None, s));
    Ok(Figure { svg, csv })
}

/// One panel per decision, in a grid of two columns.
pub fn decision_series(panels: &[(DecisionReport, ForecastSeries)]) -> Result<Figure, PlotError> {
    if panels.is_empty() {
        return Err(PlotError::SchemaMismatch("decision-series needs at least one report".into()));
    }
    for (_, s) in panels {
        s.check()?;
    }
    let cols = 2usize;
    let nrows = panels.len().div_ceil(cols);
    let (pw, ph) = (420.0, 260.0);
    let (w, h) = (pw * cols as f64, ph * nrows as f64 + 30.0);
    let mut svg = svg_open(w, h, "Removal decisions by observation mileage");
    let (mut xr, mut yr) = ((f64::INFINITY, f64::NEG_INFINITY), (0.0f64, 1.0f64));
    for (_, s) in panels {
        let (x, y) = rcp_range(s);
        xr = (xr.0.min(x.0), xr.1.max(x.1));
        yr = (yr.0.min(y.0), yr.1.max(y.1));
    }
    let mut rows = Vec::new();
    for (i, (rep, s)) in panels.iter().enumerate() {
        let (cx, cy) = ((i % cols) as f64 * pw, 30.0 + (i / cols) as f64 * ph);
        let f = Frame::new(cx + 55.0, cy + 20.0, pw - 75.0, ph - 65.0, xr, yr);
        f.axes(&mut svg, "mileage (km)", "RCP");
        forecast_panel(&mut svg, &f, s);
        let removal = rep.removal_km.map_or("not reached".to_string(), |r| format!("{:.0} km", r));
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" font-size="11">at {:.0} km: removal {}</text>"#,
            f.x0 + 6.0,
            f.y0 - 5.0,
            rep.observation_km,
            removal
        );
        if let Some(r) = rep.removal_km {
            let _ = writeln!(
                svg,
                r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#c0392b"/>"##,
                f.x(r),
                f.y0,
                f.x(r),
                f.y0 + f.h
            );
        }
        rows.extend(forecast_rows(Some(i), s));
    }
    svg.push_str("</svg>\n");
    Ok(Figure { svg, csv: csv_string(&["panel", "kind", "tm", "rcp", "lo", "hi"], &rows) })
}

/// Model comparison as a rendered table.
pub fn comparison_table(rows: &[ComparisonRow]) -> Result<Figure, PlotError> {
    if rows.is_empty() {
        return Err(PlotError::SchemaMismatch("comparison-table needs at least one row".into()));
    }
    let h = 60.0 + 24.0 * rows.len() as f64;
    let mut svg = svg_open(420.0, h, "Forecast accuracy on held-out series");
    let header = [("model", 20.0), ("MAPE (%)", 200.0), ("pinball", 320.0)];
    for (t, x) in header {
        let _ = writeln!(svg, r#"<text x="{x:.2}" y="44" font-size="12" font-weight="bold">{t}</text>"#);
    }
    for (i, r) in rows.iter().enumerate() {
        let y = 68.0 + 24.0 * i as f64;
        let pin = r.pinball.map_or("n/a".to_string(), |p| format!("{p:.5}"));
        let _ = writeln!(svg, r#"<text x="20" y="{y:.2}" font-size="12">{}</text>"#, escape(&r.model));
        let _ = writeln!(svg, r#"<text x="200" y="{y:.2}" font-size="12">{:.3}</text>"#, r.mape);
        let _ = writeln!(svg, r#"<text x="320" y="{y:.2}" font-size="12">{pin}</text>"#);
    }
    svg.push_str("</svg>\n");
    let csv_rows: Vec<Vec<String>> = rows.iter().map(|r| vec![r.model.clone(), r.mape.to_string(), opt(r.pinball)]).collect();
    Ok(Figure { svg, csv: csv_string(&["model", "mape", "pinball"], &csv_rows) })
}

/// Renders `kind` from its JSON data document.
pub fn render_json(kind: PlotKind, json: &str) -> Result<Figure, PlotError> {
    let bad = |e: serde_json::Error| PlotError::SchemaMismatch(e.to_string());
    match kind {
        PlotKind::ThresholdCurve => threshold_curve(&serde_json::from_str(json).map_err(bad)?),
        PlotKind::RcpForecast => rcp_forecast(&serde_json::from_str(json).map_err(bad)?),
        PlotKind::DecisionSeries => {
            let panels: Vec<DecisionPanel> = serde_json::from_str(json).map_err(bad)?;
            let panels: Vec<_> = panels.into_iter().map(|p| (p.report, p.series)).collect();
            decision_series(&panels)
        }
        PlotKind::ComparisonTable => {
            let rows: Vec<ComparisonRow> = serde_json::from_str(json).map_err(bad)?;
            comparison_table(&rows)
        }
    }
}

/// JSON form of one decision-series panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionPanel {
    pub report: DecisionReport,
    pub series: ForecastSeries,
}

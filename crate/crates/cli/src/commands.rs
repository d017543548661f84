use std::path::{Path, PathBuf};

use serde::Serialize;
use tiretwin_core::atomic::write_atomic;
use tiretwin_core::decision::{
    self, extrapolate_window, log_grid, project_state, DecisionConfig, LabeledTire, Predictor,
};
use tiretwin_core::domain::{load_series, write_jsonl, FeatureWindow, TireSeries};
use tiretwin_core::plot::{self, DecisionPanel, ForecastSeries, PlotKind};
use tiretwin_core::reduce::{reduce_with, thin_by_mileage, write_report, ReducedSeries};
use tiretwin_core::synth::{drum_test, gen_fleet, FleetConfig};
use tiretwin_core::tft::{
    self, build_windows, evaluate, evaluate_persistence, mc_predict, split_series, ComparisonRow, LstmBaseline,
    Model, ModelKind, QuantileForecast, TftConfig,
};
use tiretwin_core::update::{build_update_set, correct, dtft_config, train_dtft};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::{DecideArgs, EvalArgs, GenerateArgs, OptimizeArgs, PlotArgs, PredictArgs, ReduceArgs, TrainArgs, UpdateArgs};

type Res<T> = Result<T, CliError>;

fn read_data(path: &Path) -> Res<Vec<TireSeries>> {
    load_series(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn write_series(path: &Path, series: &[TireSeries]) -> Res<()> {
    let mut buf = Vec::new();
    write_jsonl(series, &mut buf)?;
    write_atomic(path, &buf)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Res<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::data(e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn load_model(path: &Path, kind: ModelKind) -> Res<Model> {
    let (model, _) = tft::load(path).map_err(|e| match e {
        tft::TftError::Io(io) => CliError::model(format!("{}: {io}", path.display())),
        other => other.into(),
    })?;
    if model.kind != kind {
        return Err(CliError::model(format!("{} holds a {:?} model, expected {kind:?}", path.display(), model.kind)));
    }
    Ok(model)
}

fn load_pair(base: &Path, dtft: Option<&PathBuf>) -> Res<(Model, Option<Model>)> {
    let b = load_model(base, ModelKind::Base)?;
    let d = dtft.map(|p| load_model(p, ModelKind::Discrepancy)).transpose()?;
    if let Some(d) = &d {
        if d.config.l_hist != b.config.l_hist || d.config.l_fut != b.config.l_fut || d.config.quantiles != b.config.quantiles {
            return Err(CliError::model("base and discrepancy windows or quantiles differ"));
        }
    }
    Ok((b, d))
}

fn predictor<'a>(base: &'a Model, dtft: &'a Option<Model>) -> Predictor<'a> {
    match dtft {
        Some(d) => Predictor::hybrid(base, d),
        None => Predictor::base(base),
    }
}

fn pick_tires(series: Vec<TireSeries>, tire: Option<&str>) -> Res<Vec<TireSeries>> {
    match tire {
        None => Ok(series),
        Some(id) => {
            let s: Vec<TireSeries> = series.into_iter().filter(|s| s.tire_id == id).collect();
            if s.is_empty() {
                Err(CliError::data(format!("tire {id} not in dataset")))
            } else {
                Ok(s)
            }
        }
    }
}

fn thin(series: &TireSeries, spacing: Option<f64>) -> Res<TireSeries> {
    match spacing {
        Some(km) => Ok(thin_by_mileage(series, km)?),
        None => Ok(series.clone()),
    }
}

pub fn generate(cfg: &RunConfig, a: GenerateArgs) -> Res<()> {
    let seed = cfg.require_seed(a.seed)?;
    let mut out = Vec::new();
    for fleet in cfg.fleets(seed) {
        match a.drum_ct {
            None => out.extend(gen_fleet(&fleet)?),
            Some(ct) => {
                for i in 0..fleet.n_tires {
                    let c = FleetConfig { seed: fleet.seed.wrapping_mul(1_000_003).wrapping_add(i as u64), ..fleet.clone() };
                    let mut s = drum_test(&c, ct)?;
                    s.tire_id = format!("{}-{i}", s.tire_id);
                    out.push(s);
                }
            }
        }
    }
    log::info!("generated {} series", out.len());
    write_series(&cfg.out_path(&a.out), &out)
}

pub fn reduce(cfg: &RunConfig, a: ReduceArgs) -> Res<()> {
    let mut section = cfg.reduce.clone();
    if let Some(s) = a.sigma {
        section.sigma = s;
    }
    if let Some(r) = a.radius {
        section.radius = r;
    }
    if a.theta.is_some() {
        section.theta = a.theta;
    }
    if a.target_count.is_some() {
        section.target_count = a.target_count;
        section.theta = None;
    }
    let (params, mode) = (section.params(), section.mode()?);
    let series = read_data(&a.input)?;
    let reduced: Vec<ReducedSeries> = series.iter().map(|s| reduce_with(s, &params, mode)).collect::<Result<_, _>>()?;
    let kept: usize = reduced.iter().map(|r| r.series.len()).sum();
    let total: usize = reduced.iter().map(|r| r.original_len).sum();
    log::info!("kept {kept} of {total} records");
    let out: Vec<TireSeries> = reduced.iter().map(|r| r.series.clone()).collect();
    write_series(&cfg.out_path(&a.out), &out)?;
    if let Some(report) = a.report {
        let mut buf = Vec::new();
        write_report(&reduced, &mut buf).map_err(|e| CliError::data(e.to_string()))?;
        write_atomic(&cfg.out_path(&report), &buf)?;
    }
    Ok(())
}

fn tft_config(cfg: &RunConfig, a: &TrainArgs) -> Res<TftConfig> {
    let mut c = cfg.tft.clone();
    c.seed = cfg.require_seed(a.seed)?;
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = a.$f.clone() { c.$f = v; })* };
    }
    set!(
        hidden_size, n_heads, dropout_rate, quantiles, l_hist, l_fut, n_past_features, n_future_features,
        learning_rate, lr_final_fraction, epochs, batch_size, stride, train_fraction, grad_clip, weight_decay, mape_eps
    );
    c.validate()?;
    Ok(c)
}

pub fn train(cfg: &RunConfig, a: TrainArgs) -> Res<()> {
    let c = tft_config(cfg, &a)?;
    let series = read_data(&a.data)?;
    let (model, history, _) = tft::fit(&series, &c)?;
    log::info!("best epoch {} of {}", history.best_epoch, history.train_loss.len());
    tft::save(&cfg.out_path(&a.out), &model, &history)?;
    Ok(())
}

#[derive(Serialize)]
struct Prediction {
    tire_id: String,
    at_mileage_km: f64,
    future_tm: Vec<f64>,
    forecast: QuantileForecast,
}

/// Window ending at the last record at or before `m`. Known-future inputs come
/// from the recorded series when it runs far enough, else from the usage
/// extrapolation used for decisions.
fn window_at(series: &TireSeries, m: f64, l_hist: usize, l_fut: usize, dc: &DecisionConfig) -> Res<(FeatureWindow, Vec<f64>)> {
    let s = thin(series, dc.history_spacing_km)?;
    let split = s.records.iter().position(|r| r.tm > m).unwrap_or(s.len());
    if split < l_hist {
        return Err(CliError::data(format!("{}: {split} records up to {m} km, model needs {l_hist}", s.tire_id)));
    }
    let past = &s.records[split - l_hist..split];
    let future: Vec<_> = if s.len() - split >= l_fut {
        s.records[split..split + l_fut].to_vec()
    } else {
        let prefix = s.prefix_to_mileage(m);
        let mut horizon = m + dc.window_km;
        let mut f = extrapolate_window(&prefix, dc.window_km, horizon, dc.step_km)?;
        while f.len() < l_fut {
            horizon += dc.window_km;
            f = extrapolate_window(&prefix, dc.window_km, horizon, dc.step_km)?;
        }
        f.truncate(l_fut);
        project_state(&prefix, &mut f, &dc.fem)?;
        f
    };
    let w = FeatureWindow {
        past_rcp: past.iter().map(|r| r.rcp).collect(),
        past_x: past.iter().map(|r| r.covariates()).collect(),
        future_x: future.iter().map(|r| r.future_covariates()).collect(),
        axle: s.axle,
        origin_t: split - 1,
    };
    Ok((w, future.iter().map(|r| r.tm).collect()))
}

pub fn predict(cfg: &RunConfig, a: PredictArgs) -> Res<()> {
    let (base, dtft) = load_pair(&a.base, a.dtft.as_ref())?;
    let series = pick_tires(read_data(&a.series)?, a.tire.as_deref())?;
    let seed = cfg.seed.unwrap_or(cfg.decision.seed);
    let mut out = Vec::new();
    for s in &series {
        let (w, future_tm) = window_at(s, a.at_mileage, base.config.l_hist, base.config.l_fut, &cfg.decision)?;
        let forecast = if a.mc_samples >= 2 {
            let b = mc_predict(&base, &w, a.mc_samples, seed)?;
            match &dtft {
                Some(d) => correct(&b, &mc_predict(d, &w, a.mc_samples, seed ^ 0x00d7_f7)?)?,
                None => b,
            }
        } else {
            predictor(&base, &dtft).forecast(&[&w])?.remove(0)
        };
        out.push(Prediction { tire_id: s.tire_id.clone(), at_mileage_km: a.at_mileage, future_tm, forecast });
    }
    match a.out {
        Some(p) => write_json(&cfg.out_path(&p), &out),
        None => {
            println!("{}", serde_json::to_string_pretty(&out).map_err(|e| CliError::data(e.to_string()))?);
            Ok(())
        }
    }
}

pub fn update(cfg: &RunConfig, a: UpdateArgs) -> Res<()> {
    let base = load_model(&a.base, ModelKind::Base)?;
    let series = read_data(&a.new_data)?;
    let stride = a.stride.unwrap_or(cfg.update.stride);
    let samples = build_update_set(&base, &series, stride)?;
    let mut c = dtft_config(&base.config);
    c.epochs = a.epochs.unwrap_or(cfg.update.epochs);
    if let Some(lr) = cfg.update.learning_rate {
        c.learning_rate = lr;
    }
    if let Some(s) = cfg.seed {
        c.seed = s.wrapping_add(1);
    }
    let (model, history) = train_dtft(&samples, &base, &c)?;
    tft::save(&cfg.out_path(&a.out), &model, &history)?;
    Ok(())
}

fn decision_config(cfg: &RunConfig) -> Res<DecisionConfig> {
    let mut d = cfg.decision.clone();
    if let Some(s) = cfg.seed {
        d.seed = s;
    }
    d.validate()?;
    Ok(d)
}

fn parse_grid(spec: &str) -> Res<Vec<f64>> {
    let bad = || CliError::config(format!("grid {spec:?}: expected lo:hi:n with 0 < lo <= hi < 1 and n >= 1"));
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if !(lo > 0.0 && lo <= hi && hi < 1.0 && n >= 1) {
        return Err(bad());
    }
    Ok(log_grid(lo, hi, n))
}

/// Mileage of the first recorded RCP below `threshold`.
fn observed_removal(series: &TireSeries, threshold: f64) -> Option<f64> {
    series.records.iter().find(|r| r.rcp < threshold).map(|r| r.tm)
}

pub fn optimize_threshold(cfg: &RunConfig, a: OptimizeArgs) -> Res<()> {
    let grid = parse_grid(&a.grid)?;
    let dc = decision_config(cfg)?;
    let (base, dtft) = load_pair(&a.model, a.dtft.as_ref())?;
    let series = read_data(&a.data)?;
    let mut tires = Vec::new();
    for s in &series {
        match observed_removal(s, decision::DEFAULT_THRESHOLD) {
            Some(actual) if actual > a.at_mileage => {
                tires.push(LabeledTire { prefix: s.prefix_to_mileage(a.at_mileage), actual_km: actual })
            }
            _ => log::warn!("{}: no removal after {} km in the data, skipped", s.tire_id, a.at_mileage),
        }
    }
    let curve = decision::optimize_threshold(&predictor(&base, &dtft), &tires, &grid, &dc)?;
    let out = cfg.out_path(&a.out);
    write_json(&out, &curve)?;
    plot::threshold_curve(&curve)?.write(&out)?;
    Ok(())
}

pub fn decide(cfg: &RunConfig, a: DecideArgs) -> Res<()> {
    let mut dc = decision_config(cfg)?;
    if let Some(t) = a.threshold {
        dc.threshold = t;
    }
    if let Some(n) = a.mc_samples {
        dc.mc_samples = n;
    }
    dc.validate()?;
    let (base, dtft) = load_pair(&a.model, a.dtft.as_ref())?;
    let p = predictor(&base, &dtft);
    let series = pick_tires(read_data(&a.series)?, a.tire.as_deref())?;
    let mut panels = Vec::new();
    for s in &series {
        let shown = thin(s, dc.history_spacing_km)?;
        for &m in &a.at_mileage {
            if s.records.last().is_none_or(|r| r.tm < m) {
                log::warn!("{}: data ends before {m} km, skipped", s.tire_id);
                continue;
            }
            let report = decision::decide(&p, &s.prefix_to_mileage(m), &dc)?;
            let series = ForecastSeries::from_report(&report, shown.mileage(), shown.rcp());
            panels.push(DecisionPanel { report, series });
        }
    }
    if panels.is_empty() {
        return Err(CliError::data("no series reaches the requested mileposts"));
    }
    let out = cfg.out_path(&a.out);
    write_json(&out, &panels)?;
    let fig = if panels.len() == 1 {
        plot::rcp_forecast(&panels[0].series)?
    } else {
        let pairs: Vec<_> = panels.into_iter().map(|p| (p.report, p.series)).collect();
        plot::decision_series(&pairs)?
    };
    fig.write(&out)?;
    Ok(())
}

pub fn eval(cfg: &RunConfig, a: EvalArgs) -> Res<()> {
    let model = load_model(&a.model, ModelKind::Base)?;
    let c = model.config.clone();
    let held = read_data(&a.data)?;
    let windows = build_windows(&held, c.l_hist, c.l_fut, 1)?;
    let m = evaluate(&model, &windows)?;
    let mut rows = vec![ComparisonRow { model: "TFT".into(), mape: m.mape, pinball: Some(m.pinball) }];
    if let Some(path) = a.train_data.as_ref().filter(|_| a.with_lstm) {
        let train_s = read_data(path)?;
        let (tr, va) = split_series(train_s.len(), c.train_fraction, c.seed);
        let pick = |idx: &[usize]| idx.iter().map(|&i| train_s[i].clone()).collect::<Vec<_>>();
        let tw = build_windows(&pick(&tr), c.l_hist, c.l_fut, c.stride)?;
        let vw = build_windows(&pick(&va), c.l_hist, c.l_fut, c.stride)?;
        let mut lstm = LstmBaseline::build(TftConfig { seed: cfg.seed.unwrap_or(c.seed), ..c.clone() }, model.norm.clone())?;
        tft::train(&mut lstm, &tw, &vw)?;
        let l = evaluate(&lstm, &windows)?;
        rows.push(ComparisonRow { model: "LSTM".into(), mape: l.mape, pinball: Some(l.pinball) });
    }
    rows.push(ComparisonRow { model: "persistence".into(), mape: evaluate_persistence(&windows, c.mape_eps)?, pinball: None });
    let out = cfg.out_path(&a.out);
    write_json(&out, &rows)?;
    plot::comparison_table(&rows)?.write(&out)?;
    Ok(())
}

pub fn plot(cfg: &RunConfig, a: PlotArgs) -> Res<()> {
    let kind: PlotKind = a.kind.parse().map_err(|e: plot::PlotError| CliError::config(e.to_string()))?;
    let json = std::fs::read_to_string(&a.data).map_err(|e| CliError::data(format!("{}: {e}", a.data.display())))?;
    plot::render_json(kind, &json)?.write(&cfg.out_path(&a.out))?;
    Ok(())
}

use proptest::prelude::*;

use super::*;
use crate::domain::tests::series_from;
use crate::domain::NormStats;
use crate::tft::{ModelKind, TftConfig};

fn ramp(n: usize, step: f64) -> TireSeries {
    let tms: Vec<f64> = (0..n).map(|i| i as f64 * step).collect();
    let rcps: Vec<f64> = (0..n).map(|i| 1.0 - 0.001 * i as f64).collect();
    let mut s = series_from(&tms, &rcps);
    for (i, r) in s.records.iter_mut().enumerate() {
        r.tp = 700.0 + 10.0 * (i % 5) as f64;
        r.ct = 20.0 + i as f64;
    }
    s
}

fn tiny_model(series: &TireSeries) -> Model {
    let cfg = TftConfig { hidden_size: 8, n_heads: 2, l_hist: 4, l_fut: 3, ..TftConfig::default() };
    let norm = NormStats::fit_series(std::slice::from_ref(series)).unwrap();
    Model::build(cfg, ModelKind::Base, norm).unwrap()
}

#[test]
fn removal_examples() {
    let tm = [10.0, 20.0, 30.0, 40.0];
    let med = [0.5, 0.2, 0.05, 0.01];
    let lo = [0.4, 0.08, 0.0, 0.0];
    let hi = [0.6, 0.3, 0.12, 0.05];
    let r = removal_mileage(&tm, &med, &lo, &hi, 0.1).unwrap();
    assert_eq!(r, RemovalEstimate { point_km: Some(30.0), ci_lo_km: Some(20.0), ci_hi_km: Some(40.0) });

    // equality is not a crossing
    let r = removal_mileage(&tm, &[0.5, 0.1, 0.1, 0.1], &lo, &[0.6; 4], 0.1).unwrap();
    assert_eq!(r.point_km, None);
    assert_eq!(r.ci_hi_km, None);

    let r = removal_mileage(&tm[..2], &med, &lo, &hi, 0.1);
    assert!(matches!(r, Err(DecisionError::Misalignment(_))));
    assert!(removal_mileage(&tm, &med, &lo, &hi, 0.0).is_err());
    assert!(removal_mileage(&tm, &med, &lo, &hi, 1.0).is_err());
}

#[test]
fn extrapolation_tiles_the_window() {
    let s = ramp(41, 1000.0); // 0 .. 40 000 km
    let fut = extrapolate_window(&s, 20_000.0, 50_000.0, None).unwrap();
    assert_eq!(fut.len(), 10);
    assert_eq!(fut[0].tm, 41_000.0);
    assert!(fut.last().unwrap().tm >= 50_000.0);
    // window starts at TM = 20 000 (index 20)
    assert_eq!(fut[0].ct, s.records[20].ct);
    assert_eq!(fut[1].tp, s.records[21].tp);
    let last = s.records.last().unwrap();
    assert!(fut.iter().all(|r| r.ln == last.ln));
    let days_per_km = (last.ca - s.records[20].ca) / 20_000.0;
    assert!((fut[0].ca - last.ca - 1000.0 * days_per_km).abs() < 1e-9);
    assert!(fut.windows(2).all(|w| w[1].tm > w[0].tm && w[1].t_index == w[0].t_index + 1));

    let coarse = extrapolate_window(&s, 20_000.0, 50_000.0, Some(4_000.0)).unwrap();
    assert_eq!(coarse.len(), 3);
    assert_eq!(coarse[2].tm, 52_000.0);

    assert!(extrapolate_window(&s, 20_000.0, 30_000.0, None).unwrap().is_empty());
}

#[test]
fn short_prefix_is_rejected() {
    let s = ramp(10, 1000.0);
    let e = extrapolate_window(&s, 20_000.0, 1e6, None).unwrap_err();
    assert!(matches!(e, DecisionError::WindowTooShort { .. }));
    assert!(e.to_string().starts_with("WindowTooShort"));
    let m = tiny_model(&s);
    let e = decide(&Predictor::base(&m), &s, &DecisionConfig::default()).unwrap_err();
    assert!(matches!(e, DecisionError::WindowTooShort { .. }));
}

#[test]
fn projection_matches_the_surrogate() {
    let s = ramp(41, 1000.0);
    let fem = FemConstants::default();
    let mut fut = extrapolate_window(&s, 20_000.0, 45_000.0, None).unwrap();
    project_state(&s, &mut fut, &fem).unwrap();
    let mut acc = CeAccumulator::resume(s.records[40].ce, 40_000.0);
    let mut prev = 40_000.0;
    for r in &fut {
        let o = fem_surrogate(r.tp, r.lt, r.vs, r.rc, &fem).unwrap();
        assert_eq!(r.msc, o.msc);
        assert_eq!(r.asca, o.asca);
        assert_eq!(r.ce, acc.push(o.ce, r.tm - prev));
        prev = r.tm;
    }
}

#[test]
fn log_grid_spans_the_range() {
    let g = default_grid();
    assert_eq!(g.len(), 50);
    assert!((g[0] - 0.01).abs() < 1e-15);
    assert!((g[49] - 0.5).abs() < 1e-12);
    assert!((g[1] / g[0] - g[49] / g[48]).abs() < 1e-9);
}

#[test]
fn threshold_curve_picks_first_minimum() {
    let tm: Vec<f64> = (1..=10).map(|i| i as f64 * 100.0).collect();
    let median: Vec<f64> = (1..=10).map(|i| 1.0 - 0.1 * i as f64).collect();
    let trace = ForecastTrace {
        tm: tm.clone(),
        lo: median.clone(),
        hi: median.clone(),
        sigma_alea: vec![0.0; 10],
        sigma_epist: vec![0.0; 10],
        median,
    };
    let mut trace_short = trace.clone();
    trace_short.median.truncate(5);
    trace_short.tm.truncate(5);
    let s = ramp(30, 1000.0);
    // crossing 0.35 first happens at TM 700 (RCP 0.3)
    let tires = vec![LabeledTire { prefix: s, actual_km: 700.0 }];
    let c = threshold_curve(&tires, &[trace], &[0.35, 0.31, 0.5, 0.05], 1e6).unwrap();
    assert_eq!(c.thresholds, vec![0.05, 0.31, 0.35, 0.5]);
    assert_eq!(c.argmin_threshold, 0.31);
    assert_eq!(c.argmin_mape, 0.0);
    assert!((c.mape[0] - 100.0 * 300.0 / 700.0).abs() < 1e-9);
    // never crossed: counted at the horizon
    let c = threshold_curve(&tires, &[trace_short], &[0.05], 1e6).unwrap();
    assert!((c.mape[0] - 100.0 * (1e6 - 700.0) / 700.0).abs() < 1e-6);

    assert!(matches!(threshold_curve(&tires, &[], &[], 1e6), Err(DecisionError::EmptyCandidates)));
    assert!(matches!(threshold_curve(&[], &[], &[0.1], 1e6), Err(DecisionError::NoLabeledData)));
}

#[test]
fn removal_mape_example() {
    let m = removal_mape(&[100.0, 200.0], &[Some(110.0), None], 300.0);
    assert!((m - 100.0 * (0.1 + 0.5) / 2.0).abs() < 1e-12);
}

#[test]
fn immediate_removal_below_threshold() {
    let mut s = ramp(41, 1000.0);
    s.records.last_mut().unwrap().rcp = 0.05;
    let m = tiny_model(&s);
    let r = decide(&Predictor::base(&m), &s, &DecisionConfig::default()).unwrap();
    assert_eq!(r.removal_km, Some(40_000.0));
    assert_eq!(r.ci_km, (Some(40_000.0), Some(40_000.0)));
}

#[test]
fn rollout_shape_and_determinism() {
    let s = ramp(41, 1000.0);
    let m = tiny_model(&s);
    let p = Predictor::base(&m);
    let cfg = DecisionConfig { horizon_km: 60_000.0, mc_samples: 4, seed: 9, history_spacing_km: None, ..DecisionConfig::default() };
    let a = decide(&p, &s, &cfg).unwrap();
    let b = decide(&p, &s, &cfg).unwrap();
    assert_eq!(a, b);
    let t = &a.trace;
    assert_eq!(t.tm.len(), 20);
    assert_eq!(t.tm[0], 41_000.0);
    for i in 0..t.tm.len() {
        assert!(t.lo[i] <= t.median[i] + 1e-12 && t.median[i] <= t.hi[i] + 1e-12);
        assert!((0.0..=1.0).contains(&t.median[i]));
    }
    assert!(t.sigma_epist.iter().any(|s| *s > 0.0));

    let det = decide(&p, &s, &DecisionConfig { mc_samples: 0, ..cfg.clone() }).unwrap();
    assert!(det.trace.sigma_epist.iter().all(|s| *s == 0.0));
    assert_eq!(det.trace.median, t.median);
}

#[test]
fn optimizer_guards() {
    let s = ramp(41, 1000.0);
    let m = tiny_model(&s);
    let p = Predictor::base(&m);
    let cfg = DecisionConfig { horizon_km: 50_000.0, ..DecisionConfig::default() };
    let tires = vec![LabeledTire { prefix: s, actual_km: 45_000.0 }];
    assert!(matches!(optimize_threshold(&p, &tires, &[], &cfg), Err(DecisionError::EmptyCandidates)));
    assert!(matches!(optimize_threshold(&p, &[], &[0.1], &cfg), Err(DecisionError::NoLabeledData)));
    let c = optimize_threshold(&p, &tires, &[0.05, 0.1], &cfg).unwrap();
    assert_eq!(c.mape.len(), 2);
    assert!(c.mape.iter().all(|x| x.is_finite()));
}

proptest! {
    #[test]
    fn higher_threshold_never_removes_later(
        steps in proptest::collection::vec(0.0f64..0.05, 2..60),
        t1 in 0.01f64..0.9,
        dt in 0.0f64..0.09,
    ) {
        let mut v = 1.0;
        let median: Vec<f64> = steps.iter().map(|d| { v = (v - d).max(0.0); v }).collect();
        let tm: Vec<f64> = (0..median.len()).map(|i| 1000.0 * (i + 1) as f64).collect();
        let lo: Vec<f64> = median.iter().map(|x| (x - 0.05).max(0.0)).collect();
        let hi: Vec<f64> = median.iter().map(|x| (x + 0.05).min(1.0)).collect();
        let a = removal_mileage(&tm, &median, &lo, &hi, t1).unwrap();
        let b = removal_mileage(&tm, &median, &lo, &hi, t1 + dt).unwrap();
        let key = |x: Option<f64>| x.unwrap_or(f64::INFINITY);
        prop_assert!(key(b.point_km) <= key(a.point_km));
        prop_assert!(key(b.ci_lo_km) <= key(a.ci_lo_km));
        for r in [a, b] {
            if let Some(p) = r.point_km {
                prop_assert!(r.ci_lo_km.unwrap() <= p);
                prop_assert!(r.ci_hi_km.map_or(true, |h| h >= p));
            }
        }
    }
}

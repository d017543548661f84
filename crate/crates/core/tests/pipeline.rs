use proptest::prelude::*;
use tiretwin_core::decision::{decide, DecisionConfig, Predictor};
use tiretwin_core::domain::{read_jsonl, validate_series, write_jsonl};
use tiretwin_core::plot::{rcp_forecast, ForecastSeries};
use tiretwin_core::reduce::{reduce_with, thin_by_mileage};
use tiretwin_core::synth::{gen_fleet, gen_tire};
use tiretwin_core::tft::{fit, load, save, TftConfig};
use tiretwin_core::{FleetConfig, ReduceParams, ThresholdMode, TireSeries};

fn fleet(n: usize, seed: u64) -> Vec<TireSeries> {
    gen_fleet(&FleetConfig { n_tires: n, seed, ..FleetConfig::default() }).unwrap()
}

#[test]
fn seeded_pipeline_end_to_end() {
    let raw = fleet(6, 17);
    assert!(raw.iter().all(|s| validate_series(s).is_valid()));
    let params = ReduceParams::default();
    let reduced: Vec<TireSeries> =
        raw.iter().map(|s| reduce_with(s, &params, ThresholdMode::Target(120)).unwrap().series).collect();
    assert!(reduced.iter().all(|s| s.len() == 120));

    let cfg = TftConfig { hidden_size: 8, n_heads: 2, epochs: 2, stride: 4, ..TftConfig::default() };
    let (model, history, _) = fit(&reduced, &cfg).unwrap();
    assert_eq!(history.train_loss.len(), 2);

    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    save(&a, &model, &history).unwrap();
    let (loaded, h2) = load(&a).unwrap();
    save(&b, &loaded, &h2).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let dc = DecisionConfig { mc_samples: 3, ..DecisionConfig::default() };
    let prefix = raw[0].prefix_to_mileage(60e3);
    let r1 = decide(&Predictor::base(&model), &prefix, &dc).unwrap();
    let r2 = decide(&Predictor::base(&loaded), &prefix, &dc).unwrap();
    assert_eq!(r1, r2);
    assert!(r1.observation_km <= 60e3);
    if let (Some(p), Some(lo)) = (r1.removal_km, r1.ci_km.0) {
        assert!(lo <= p);
    }
    let shown = thin_by_mileage(&prefix, 1750.0).unwrap();
    let fig = rcp_forecast(&ForecastSeries::from_report(&r1, shown.mileage(), shown.rcp())).unwrap();
    assert!(fig.svg.starts_with("<svg"));
    assert_eq!(fig.csv.lines().count(), 1 + shown.len() + r1.trace.tm.len());
}

#[test]
fn dataset_file_round_trip() {
    let mut s = gen_tire(&FleetConfig { max_mileage: 5_000.0, ..FleetConfig::default() }, 0).unwrap();
    s.records.truncate(50);
    let mut buf = Vec::new();
    write_jsonl(std::slice::from_ref(&s), &mut buf).unwrap();
    let back = read_jsonl(buf.as_slice()).unwrap();
    assert_eq!(back, vec![s]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn reduction_keeps_endpoints_and_order(seed in any::<u64>(), target in 2usize..80) {
        let cfg = FleetConfig { max_mileage: 6_000.0, seed, ..FleetConfig::default() };
        let s = gen_tire(&cfg, 0).unwrap();
        let r = reduce_with(&s, &ReduceParams::default(), ThresholdMode::Target(target)).unwrap();
        let (tm, full) = (r.series.mileage(), s.mileage());
        prop_assert_eq!(tm.first(), full.first());
        prop_assert_eq!(tm.last(), full.last());
        prop_assert!(tm.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(r.series.len() <= s.len());
    }
}

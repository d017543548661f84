use tiretwin_bench::{decision_prefix, raw_series, reduced_corpus};

#[test]
fn fixtures_are_seeded() {
    assert_eq!(raw_series(4), raw_series(4));
    assert_ne!(raw_series(4).records, raw_series(5).records);
    let corpus = reduced_corpus(2, 9);
    assert!(corpus.iter().all(|s| s.len() == 200));
}

#[test]
fn decision_prefix_stops_at_mileage() {
    let s = raw_series(1);
    let p = decision_prefix(&s, 50e3);
    let last = p.records.last().unwrap().tm;
    assert!(last <= 50e3 && last > 50e3 - 100.0);
    assert!(p.records.windows(2).all(|w| w[1].tm - w[0].tm >= 1750.0 || w[1].tm == last));
}

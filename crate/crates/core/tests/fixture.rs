use reputa::fixture::{burst_ratio, generate, make_fixture, FixtureParams, FIXTURE_MANIFEST};
use reputa::ingest::{load_fixture_dir, Label};

#[test]
fn class_counts_and_sorted_addresses() {
    let recs = generate(&FixtureParams::new(20, 5, 7)).unwrap();
    assert_eq!(recs.iter().filter(|r| r.label == Label::Illicit).count(), 5);
    assert_eq!(recs.iter().filter(|r| r.label == Label::Reputable).count(), 20);
    assert!(recs.windows(2).all(|w| w[0].address < w[1].address));
    assert!(recs.iter().all(|r| r.address.len() == 42 && !r.bytecode.is_empty()));
}

#[test]
fn same_seed_same_corpus() {
    let a = generate(&FixtureParams::new(8, 3, 11)).unwrap();
    assert_eq!(a, generate(&FixtureParams::new(8, 3, 11)).unwrap());
    assert_ne!(a, generate(&FixtureParams::new(8, 3, 12)).unwrap());
}

#[test]
fn illicit_histories_are_bursty() {
    let p = FixtureParams::new(10, 10, 5);
    for r in generate(&p).unwrap() {
        if r.label == Label::Illicit {
            let ratio = burst_ratio(&r.transactions);
            assert!(ratio > p.min_burst_ratio, "{}: burst ratio {ratio}", r.address);
        }
    }
}

#[test]
fn history_length_respects_bounds() {
    let p = FixtureParams {
        hours_min: 24,
        hours_max: 30,
        ..FixtureParams::new(6, 6, 2)
    };
    for r in generate(&p).unwrap() {
        let (lo, hi) = r
            .transactions
            .iter()
            .fold((u64::MAX, 0), |(lo, hi), t| (lo.min(t.timestamp), hi.max(t.timestamp)));
        assert!(hi - lo < 30 * 3600, "{}: spans {} s", r.address, hi - lo);
    }
}

#[test]
fn written_fixture_loads_back() {
    let dir = tempfile::tempdir().unwrap();
    let p = FixtureParams::new(4, 2, 1);
    let recs = make_fixture(dir.path(), &p).unwrap();
    assert!(dir.path().join(FIXTURE_MANIFEST).is_file());
    let mut loaded = load_fixture_dir(dir.path()).unwrap();
    loaded.sort_by(|a, b| a.address.cmp(&b.address));
    assert_eq!(loaded, recs);
}

#[test]
fn empty_class_rejected() {
    assert!(generate(&FixtureParams::new(0, 3, 1)).is_err());
    assert!(generate(&FixtureParams::new(3, 0, 1)).is_err());
}

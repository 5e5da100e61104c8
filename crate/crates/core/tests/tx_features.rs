use proptest::prelude::*;
use reputa::features::{
    aggregate_hourly, read_hourly_csv, read_tensors_jsonl, remove_outliers_scoped, windowize, write_hourly_csv,
    write_tensors_jsonl, OutlierScope, Standardizer, HOUR, N_FEATURES,
};
use reputa::ingest::TxRecord;

fn tx(ts: u64, gas: u64, internal: bool, err: bool) -> TxRecord {
    TxRecord {
        block_number: ts / 12,
        timestamp: ts,
        from_addr: format!("0x{:x}", ts % 7),
        to_addr: format!("0x{:x}", ts % 3),
        value: (ts as u128) * 1_000_000_007,
        gas_used: gas,
        gas_price: 1_000 + ts as u128 % 13,
        is_error: err,
        is_internal: internal,
    }
}

fn arb_txs() -> impl Strategy<Value = Vec<TxRecord>> {
    proptest::collection::vec((1u64..40 * HOUR, 0u64..500_000, any::<bool>(), any::<bool>()), 1..120).prop_map(
        |raw| {
            let mut v: Vec<TxRecord> = raw.into_iter().map(|(t, g, i, e)| tx(t, g, i, e)).collect();
            v.sort_by_key(|t| (t.timestamp, t.block_number));
            v
        },
    )
}

proptest! {
    #[test]
    fn hourly_counts_sum_to_total(txs in arb_txs()) {
        let hourly = aggregate_hourly("0xc", &txs);
        let total: f64 = hourly.iter().map(|w| w.features[0]).sum();
        prop_assert_eq!(total as usize, txs.len());
        let internal: f64 = hourly.iter().map(|w| w.features[1]).sum();
        prop_assert_eq!(internal as usize, txs.iter().filter(|t| t.is_internal).count());
        prop_assert!(hourly.iter().all(|w| w.hour_start % HOUR == 0));
        prop_assert!(hourly.windows(2).all(|p| p[1].hour_start == p[0].hour_start + HOUR));
        prop_assert!(hourly.iter().all(|w| w.features.iter().all(|v| *v >= 0.0)));
    }

    #[test]
    fn standardized_training_moments(txs in arb_txs()) {
        let hourly = aggregate_hourly("0xc", &txs);
        let s = Standardizer::fit_windows(&hourly).unwrap();
        let z = s.apply(&hourly);
        let n = z.len() as f64;
        for f in 0..N_FEATURES {
            let col: Vec<f64> = z.iter().map(|w| w.features[f]).collect();
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            prop_assert!(mean.abs() < 1e-9, "feature {} mean {}", f, mean);
            if s.stds[f] > 0.0 {
                prop_assert!((var.sqrt() - 1.0).abs() < 1e-9, "feature {} std {}", f, var.sqrt());
            } else {
                prop_assert!(col.iter().all(|v| *v == 0.0));
            }
        }
    }

    #[test]
    fn partition_windows_reproduce_series(txs in arb_txs(), w in 1usize..8) {
        let hourly = aggregate_hourly("0xc", &txs);
        prop_assume!(hourly.len() >= w);
        let tensors = windowize(&hourly, w, w).unwrap();
        prop_assert_eq!(tensors.len(), (hourly.len() - w) / w + 1);
        let flat: Vec<Vec<f64>> = tensors.iter().flat_map(|t| t.window.clone()).collect();
        for (row, h) in flat.iter().zip(&hourly) {
            prop_assert_eq!(row.as_slice(), &h.features[..]);
        }
        prop_assert!(tensors.iter().all(|t| t.window.len() == w));
    }
}

#[test]
fn global_and_per_contract_outlier_scope() {
    let mk = |addr: &str, counts: &[f64]| {
        counts
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let mut features = [0.0; N_FEATURES];
                features[0] = c;
                reputa::features::HourlyWindow {
                    contract_address: addr.into(),
                    hour_start: i as u64 * HOUR,
                    features,
                }
            })
            .collect::<Vec<_>>()
    };
    // contract b is uniformly busier but internally flat
    let series = vec![mk("a", &[1.0; 8]), mk("b", &[50.0; 8])];
    let global = remove_outliers_scoped(&series, 3.0, OutlierScope::Global);
    let local = remove_outliers_scoped(&series, 3.0, OutlierScope::PerContract);
    assert_eq!(local[1].len(), 8);
    // Q1 = 1, Q3 = 50 over the pool, so nothing is outside the fences either
    assert_eq!(global[1].len(), 8);
    let series = vec![mk("a", &[1.0; 10]), mk("b", &[1.0, 1.0, 1.0, 60.0])];
    let global = remove_outliers_scoped(&series, 3.0, OutlierScope::Global);
    assert_eq!(global[1].len(), 3);
    // alone, [1,1,1,60] has Q3 = 15.75 and an upper fence of exactly 60
    let local = remove_outliers_scoped(&series, 3.0, OutlierScope::PerContract);
    assert_eq!(local[1].len(), 4);
}

#[test]
fn csv_and_jsonl_round_trip() {
    let txs: Vec<TxRecord> = (0..30).map(|i| tx(1 + i * 1000, 21_000 + i, i % 4 == 0, i % 5 == 0)).collect();
    let hourly = aggregate_hourly("0xabc", &txs);
    let mut buf = Vec::new();
    write_hourly_csv(&mut buf, &hourly).unwrap();
    assert_eq!(read_hourly_csv(&buf[..]).unwrap(), hourly);

    let tensors = windowize(&hourly, 4, 2).unwrap();
    let mut buf = Vec::new();
    write_tensors_jsonl(&mut buf, &tensors).unwrap();
    assert_eq!(read_tensors_jsonl(&buf[..]).unwrap(), tensors);
}

use std::collections::HashMap;

use proptest::prelude::*;
use reputa::eval::{compute_metrics, threshold_sweep, VariantScores, DEFAULT_PERCENTILES};
use reputa::features::WindowTensor;
use reputa::ingest::Label;

proptest! {
    #[test]
    fn accuracy_and_recall_definitions(pairs in proptest::collection::vec((any::<bool>(), any::<bool>()), 1..200)) {
        let (t, p): (Vec<bool>, Vec<bool>) = pairs.into_iter().unzip();
        let m = compute_metrics(&t, &p, None).unwrap();
        prop_assert_eq!(m.tp + m.fp + m.tn + m.fn_, t.len());
        prop_assert_eq!(m.accuracy, (m.tp + m.tn) as f64 / t.len() as f64);
        let expect = if m.tp + m.fn_ == 0 { 0.0 } else { m.tp as f64 / (m.tp + m.fn_) as f64 };
        prop_assert_eq!(m.recall_illicit, expect);
        for v in [m.accuracy, m.precision_illicit, m.recall_illicit, m.f1_illicit, m.f1_reputable] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn polarity_swap_is_symmetric(pairs in proptest::collection::vec((any::<bool>(), any::<bool>()), 1..200)) {
        let (t, p): (Vec<bool>, Vec<bool>) = pairs.into_iter().unzip();
        let nt: Vec<bool> = t.iter().map(|v| !v).collect();
        let np: Vec<bool> = p.iter().map(|v| !v).collect();
        let a = compute_metrics(&t, &p, None).unwrap();
        let b = compute_metrics(&nt, &np, None).unwrap();
        prop_assert_eq!(a.accuracy, b.accuracy);
        prop_assert_eq!(a.recall_illicit, b.recall_reputable);
        prop_assert_eq!(a.precision_illicit, b.precision_reputable);
        prop_assert_eq!(a.f1_illicit, b.f1_reputable);
        prop_assert_eq!(a.f1_reputable, b.f1_illicit);
    }
}

#[test]
fn sweep_has_one_row_per_variant_and_percentile() {
    let win = |a: &str| WindowTensor {
        contract_address: a.into(),
        start_hour: 0,
        window: vec![],
    };
    let eval_windows: Vec<WindowTensor> = ["good", "good", "bad", "bad"].iter().map(|a| win(a)).collect();
    let training: Vec<f64> = (1..=100).map(f64::from).collect();
    let eval_a = [10.0, 20.0, 500.0, 600.0];
    let eval_b = [95.0, 10.0, 99.0, 5.0];
    let truth = HashMap::from([("good".to_string(), Label::Reputable), ("bad".to_string(), Label::Illicit)]);
    let table = threshold_sweep(
        &[
            VariantScores {
                variant: "transaction-only",
                training_errors: &training,
                eval_windows: &eval_windows,
                eval_errors: &eval_b,
            },
            VariantScores {
                variant: "multimodal",
                training_errors: &training,
                eval_windows: &eval_windows,
                eval_errors: &eval_a,
            },
        ],
        &DEFAULT_PERCENTILES,
        &truth,
    )
    .unwrap();
    assert_eq!(table.rows.len(), 8);
    let mm = table.get("multimodal", 90.0).unwrap();
    assert_eq!((mm.recall_illicit, mm.accuracy), (1.0, 1.0));
    // at p=90 (cutoff 90.1) both contracts have one window of two above it
    let tx = table.get("transaction-only", 90.0).unwrap();
    assert_eq!((tx.recall_illicit, tx.accuracy), (1.0, 0.5));
}

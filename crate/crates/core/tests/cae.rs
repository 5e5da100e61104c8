use std::collections::HashMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reputa::cae::{
    classify_contract, export_latents, fit_threshold, pca_2d, train_cae, AnomalyThreshold, Autoencoder, CaeConfig,
    EmbeddingLookup, Variant,
};
use reputa::features::{WindowTensor, N_FEATURES};
use reputa::ingest::Label;
use reputa::nn::{gradient_check, mse_loss};
use reputa::Error;

fn random_window(addr: &str, w: usize, rng: &mut ChaCha8Rng) -> WindowTensor {
    WindowTensor {
        contract_address: addr.into(),
        start_hour: 0,
        window: (0..w)
            .map(|_| (0..N_FEATURES).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect(),
    }
}

fn small(variant: Variant) -> CaeConfig {
    CaeConfig {
        window: 8,
        variant,
        embedding_dim: 5,
        projection_width: 3,
        bottleneck: 4,
        seed: 3,
        ..Default::default()
    }
}

#[test]
fn full_autoencoder_gradient_check() {
    for variant in [Variant::TransactionOnly, Variant::Multimodal] {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let cfg = small(variant);
        let mut model = Autoencoder::new(cfg).unwrap();
        let win = random_window("a", 8, &mut rng);
        let emb: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let e = (variant == Variant::Multimodal).then_some(emb.as_slice());
        let target = model.fuse(&win, e).unwrap();
        let err = gradient_check(&mut model, 1e-5, |m, acc| {
            if acc {
                m.accumulate(&win, e, &target, 1.0)
            } else {
                mse_loss(&target, &m.reconstruct(&m.fuse(&win, e)?)?)
            }
        })
        .unwrap();
        assert!(err < 1e-4, "{variant:?}: relative error {err}");
    }
}

#[test]
fn constant_windows_are_learned() {
    let windows: Vec<WindowTensor> = (0..16)
        .map(|i| WindowTensor {
            contract_address: format!("c{}", i % 4),
            start_hour: i,
            window: vec![vec![0.0; N_FEATURES]; 24],
        })
        .collect();
    let cfg = CaeConfig {
        seed: 1,
        ..Default::default()
    };
    let model = train_cae(&windows, &HashMap::new(), &HashMap::new(), &cfg).unwrap();
    assert_eq!(model.loss_history.len(), 200);
    let errs = model.score_all(&windows, &HashMap::new()).unwrap();
    let mse = errs.iter().sum::<f64>() / errs.len() as f64;
    assert!(mse < 1e-4, "final training MSE {mse}");
}

#[test]
fn training_is_deterministic_and_persists() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let windows: Vec<WindowTensor> = (0..12).map(|i| random_window(&format!("c{}", i % 3), 8, &mut rng)).collect();
    let embeddings: EmbeddingLookup = (0..3)
        .map(|i| (format!("c{i}"), (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect()))
        .collect();
    let cfg = CaeConfig {
        epochs: 5,
        batch_size: 4,
        ..small(Variant::Multimodal)
    };
    let a = train_cae(&windows, &HashMap::new(), &embeddings, &cfg).unwrap();
    let b = train_cae(&windows, &HashMap::new(), &embeddings, &cfg).unwrap();
    let ea = a.score_all(&windows, &embeddings).unwrap();
    assert_eq!(ea, b.score_all(&windows, &embeddings).unwrap());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cae.rptnn");
    a.save(&path).unwrap();
    let loaded = Autoencoder::load(&path).unwrap();
    assert_eq!(loaded.score_all(&windows, &embeddings).unwrap(), ea);
    assert_eq!(loaded.loss_history, a.loss_history);

    // per-window scores do not depend on batch order
    let mut rev = windows.clone();
    rev.reverse();
    let mut er = a.score_all(&rev, &embeddings).unwrap();
    er.reverse();
    assert_eq!(er, ea);
}

#[test]
fn illicit_training_window_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let windows = vec![random_window("good", 8, &mut rng), random_window("bad", 8, &mut rng)];
    let labels = HashMap::from([("good".to_string(), Label::Reputable), ("bad".to_string(), Label::Illicit)]);
    match train_cae(&windows, &labels, &HashMap::new(), &small(Variant::TransactionOnly)) {
        Err(Error::IllicitInTraining(a)) => assert_eq!(a, "bad"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn fusion_tiles_projection() {
    let cfg = CaeConfig {
        variant: Variant::Multimodal,
        ..Default::default()
    };
    let model = Autoencoder::new(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let w1 = random_window("a", 24, &mut rng);
    let w2 = random_window("a", 24, &mut rng);
    let emb: Vec<f64> = (0..50).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let x1 = model.fuse(&w1, Some(&emb)).unwrap();
    let x2 = model.fuse(&w2, Some(&emb)).unwrap();
    assert_eq!(x1.shape(), &[16, 24]);
    assert_eq!(x1.data()[8 * 24..], x2.data()[8 * 24..]);

    let zero = model.fuse(&w1, Some(&[0.0; 50])).unwrap();
    let proj = model.projection.as_ref().unwrap();
    let bias = &proj.layers()[0].bias;
    for j in 0..8 {
        assert!(zero.data()[(8 + j) * 24..(9 + j) * 24].iter().all(|&v| v == bias[j]));
    }
    assert!(matches!(
        model.score_all(&[w1], &HashMap::new()),
        Err(Error::MissingEmbedding(a)) if a == "a"
    ));
}

#[test]
fn training_flag_rate_bounded_by_percentile() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let n = rng.gen_range(1..300);
        let errors: Vec<f64> = (0..n)
            .map(|_| if rng.gen_bool(0.2) { 0.5 } else { rng.gen_range(0.0..1.0) })
            .collect();
        for p in [75.0, 80.0, 85.0, 90.0] {
            let t = fit_threshold(&errors, p, "train").unwrap();
            let flagged = errors.iter().filter(|&&e| e > t.cutoff).count() as f64;
            assert!(flagged <= (100.0 - p) / 100.0 * n as f64 + 1.0, "n={n} p={p} flagged {flagged}");
        }
    }
}

#[test]
fn ratio_boundary() {
    let t = AnomalyThreshold {
        percentile: 90.0,
        cutoff: 0.5,
        provenance: "t".into(),
    };
    let errs = |k: usize| -> Vec<f64> { (0..100).map(|i| if i < k { 1.0 } else { 0.0 }).collect() };
    assert_eq!(classify_contract("x", &errs(30), &t).unwrap().verdict, Label::Reputable);
    assert_eq!(classify_contract("x", &errs(31), &t).unwrap().verdict, Label::Illicit);
}

#[test]
fn latent_export_shapes_and_pca() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let windows: Vec<WindowTensor> = (0..10).map(|i| random_window(&format!("c{}", i % 3), 8, &mut rng)).collect();
    let model = Autoencoder::new(small(Variant::TransactionOnly)).unwrap();
    let ex = export_latents(&model, &windows, &HashMap::new()).unwrap();
    assert_eq!(ex.window_latents.len(), 10);
    assert!(ex.window_latents.iter().all(|r| r.2.len() == 4));
    assert_eq!(ex.contract_latents.len(), 3);
    let c0: Vec<&Vec<f64>> = ex.window_latents.iter().filter(|r| r.0 == "c0").map(|r| &r.2).collect();
    let mean0: Vec<f64> = (0..4).map(|j| c0.iter().map(|z| z[j]).sum::<f64>() / c0.len() as f64).collect();
    assert_eq!(ex.contract_latents[0].1, mean0);
    assert_eq!(ex.projection.unwrap().points.len(), 3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn raising_cutoff_never_flips_to_illicit(
        errors in proptest::collection::vec(0.0f64..1.0, 1..60),
        lo in 0.0f64..1.0,
        delta in 0.0f64..0.5,
    ) {
        let mk = |c| AnomalyThreshold { percentile: 90.0, cutoff: c, provenance: "t".into() };
        let a = classify_contract("x", &errors, &mk(lo)).unwrap();
        let b = classify_contract("x", &errors, &mk(lo + delta)).unwrap();
        prop_assert!(b.anomaly_ratio <= a.anomaly_ratio);
        prop_assert!(!(a.verdict == Label::Reputable && b.verdict == Label::Illicit));
    }

    #[test]
    fn pca_of_duplicated_rows(seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..6).map(|_| (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let once = pca_2d(&rows).unwrap();
        let twice = pca_2d(&[rows.clone(), rows.clone()].concat()).unwrap();
        for i in 0..12 {
            for k in 0..2 {
                prop_assert!((twice.points[i][k] - once.points[i % 6][k]).abs() < 1e-9);
            }
        }
    }
}

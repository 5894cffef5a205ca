use ethfraud_core::eval::{
    confusion, cross_validate, grid_search, metrics, rf_reference_grid, select_config,
    ConfusionMatrix, Criterion, Evaluation, GridResult, GridRow, Metrics,
};
use ethfraud_core::forest::RFParams;
use ethfraud_core::model::ModelConfig;
use ethfraud_core::{Dataset, Label};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

fn round2(v: Option<f64>) -> f64 {
    (v.unwrap() * 100.0).round() / 100.0
}

fn expand(cm: (u64, u64, u64, u64)) -> (Vec<Label>, Vec<Label>) {
    let (tp, fp, fn_, tn) = cm;
    let mut pred = Vec::new();
    let mut actual = Vec::new();
    for (n, p, a) in [
        (tp, Label::Fraud, Label::Fraud),
        (fp, Label::Fraud, Label::NonFraud),
        (fn_, Label::NonFraud, Label::Fraud),
        (tn, Label::NonFraud, Label::NonFraud),
    ] {
        pred.extend(std::iter::repeat_n(p, n as usize));
        actual.extend(std::iter::repeat_n(a, n as usize));
    }
    (pred, actual)
}

#[test]
fn reference_confusion_matrices() {
    let (p, a) = expand((102, 17, 329, 69991));
    let cm = confusion(&p, &a).unwrap();
    assert_eq!(
        cm,
        ConfusionMatrix {
            tp: 102,
            fp: 17,
            fn_: 329,
            tn: 69991
        }
    );
    let m = metrics(&cm);
    let got = [m.recall, m.precision, m.fpr, m.specificity, m.f1].map(round2);
    for (g, w) in got.iter().zip([23.67, 85.71, 0.02, 99.98, 37.09]) {
        assert!((g - w).abs() <= 0.01 + 1e-9, "{got:?}");
    }

    let (p, a) = expand((366, 6786, 65, 63222));
    let m = metrics(&confusion(&p, &a).unwrap());
    let got = [m.recall, m.precision, m.fpr, m.specificity, m.f1].map(round2);
    for (g, w) in got.iter().zip([84.92, 5.12, 9.69, 90.31, 9.65]) {
        assert!((g - w).abs() <= 0.01 + 1e-9, "{got:?}");
    }
}

proptest! {
    #[test]
    fn metric_identities(tp in 0u64..1000, fp in 0u64..1000, fn_ in 0u64..1000, tn in 0u64..1000) {
        prop_assume!(tp + fp + fn_ + tn > 0);
        let m = metrics(&ConfusionMatrix { tp, fp, fn_, tn });
        if let (Some(s), Some(f)) = (m.specificity, m.fpr) {
            prop_assert!((s + f - 100.0).abs() < 1e-12);
        }
        if let (Some(p), Some(r), Some(f1)) = (m.precision, m.recall, m.f1) {
            prop_assert!(f1 <= p.max(r) + 1e-12 && f1 >= p.min(r) - 1e-12);
        }
        for v in m.values().into_iter().flatten() {
            prop_assert!((0.0..=100.0).contains(&v));
        }
    }
}

/// (recall, fpr) of the twenty reference random-forest rows.
const TABLE_RF: [(f64, f64); 20] = [
    (24.36, 0.03),
    (25.52, 0.04),
    (23.67, 0.02),
    (24.59, 0.03),
    (30.16, 0.07),
    (32.02, 0.08),
    (30.16, 0.06),
    (32.02, 0.07),
    (42.0, 0.21),
    (44.08, 0.27),
    (41.76, 0.19),
    (44.32, 0.25),
    (54.06, 0.69),
    (54.52, 0.81),
    (54.52, 0.66),
    (55.22, 0.76),
    (83.53, 9.33),
    (83.06, 9.21),
    (84.92, 9.69),
    (83.29, 9.37),
];

#[test]
fn selection_on_reference_rows() {
    let grid = rf_reference_grid(&RFParams::default());
    let rows = grid
        .into_iter()
        .zip(TABLE_RF)
        .map(|(config, (recall, fpr))| GridRow {
            config,
            outcome: Ok(Evaluation {
                folds: vec![],
                fold_confusion: vec![],
                mean: Metrics {
                    recall: Some(recall),
                    fpr: Some(fpr),
                    ..Default::default()
                },
                pooled: ConfusionMatrix::default(),
            }),
        })
        .collect();
    let gr = GridResult {
        kind: "validation".into(),
        rows,
    };
    assert_eq!(select_config(&gr, Criterion::MinFpr).unwrap() + 1, 3);
    assert_eq!(select_config(&gr, Criterion::MaxRecall).unwrap() + 1, 19);
}

fn planted(n: usize, seed: u64) -> Dataset {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let fraud = i % 8 == 0;
        labels.push(if fraud { Label::Fraud } else { Label::NonFraud });
        let signal = if fraud { 1.0 } else { 0.0 } + rng.random_range(-0.7..0.7);
        values.extend([
            rng.random_range(0.0..1.0),
            signal,
            rng.random_range(0.0..1.0),
        ]);
    }
    Dataset::new(
        vec!["noise_a".into(), "signal".into(), "noise_b".into()],
        (0..n).map(|i| format!("a{i:04}")).collect(),
        labels,
        values,
    )
    .unwrap()
}

#[test]
fn constant_features_give_identical_fold_metrics() {
    let d = planted(200, 1);
    let flat = Dataset::new(
        d.feature_names().to_vec(),
        d.addresses().to_vec(),
        d.labels().to_vec(),
        vec![1.0; d.len() * 3],
    )
    .unwrap();
    let c = ModelConfig::Rf(RFParams {
        n_trees: 15,
        ..Default::default()
    });
    let ev = cross_validate(&c, &flat, 5, 3).unwrap();
    assert!(ev.folds.windows(2).all(|w| w[0] == w[1]));
    assert_eq!(ev.folds[0].recall, Some(0.0));
    assert_eq!(ev.folds[0].precision, None);
}

#[test]
fn grid_is_deterministic_and_matches_per_row_runs() {
    let d = planted(240, 2);
    let base = RFParams {
        n_trees: 20,
        seed: 9,
        ..Default::default()
    };
    let grid: Vec<ModelConfig> = rf_reference_grid(&base)
        .into_iter()
        .map(|c| match c {
            ModelConfig::Rf(p) => ModelConfig::Rf(RFParams {
                mtry: p.mtry.min(3),
                ..p
            }),
            other => other,
        })
        .collect();
    let a = grid_search(&grid, &d, 4, 5).unwrap();
    assert_eq!(a.rows.len(), 20);
    assert_eq!(a, grid_search(&grid, &d, 4, 5).unwrap());
    for i in [0, 7, 19] {
        let single = cross_validate(&grid[i], &d, 4, 5).unwrap();
        assert_eq!(a.rows[i].outcome.as_ref().unwrap(), &single);
    }
    let single_thread = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    assert_eq!(
        single_thread.install(|| grid_search(&grid, &d, 4, 5).unwrap()),
        a
    );
}

#[test]
fn cv_recall_tracks_single_split_recall() {
    let d = planted(800, 4);
    let c = ModelConfig::Rf(RFParams {
        n_trees: 50,
        seed: 1,
        ..Default::default()
    });
    let cv = cross_validate(&c, &d, 10, 1).unwrap();
    let (train, val) = ethfraud_core::dataset::stratified_split(&d, 0.8, 1).unwrap();
    let m = c.train(&train).unwrap();
    let single = metrics(&confusion(&m.predict(&val, None).unwrap(), val.labels()).unwrap());
    assert!(
        (cv.mean.recall.unwrap() - single.recall.unwrap()).abs() <= 5.0 + 1e-9,
        "cv {:?} single {:?}",
        cv.mean.recall,
        single.recall
    );
}

#[test]
fn two_folds_of_a_mirrored_dataset_score_alike() {
    // every row appears twice and the classes are separated by a margin,
    // so each fold sees the same problem
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for i in 0..80 {
        let fraud = i < 20;
        let row = [
            if fraud { 5.0 } else { -5.0 } + rng.random_range(-1.0..1.0),
            rng.random_range(0.0..1.0),
        ];
        for _ in 0..2 {
            values.extend(row);
            labels.push(if fraud { Label::Fraud } else { Label::NonFraud });
        }
    }
    let d = Dataset::new(
        vec!["signal".into(), "noise".into()],
        (0..160).map(|i| format!("a{i:03}")).collect(),
        labels,
        values,
    )
    .unwrap();
    let configs = [
        ModelConfig::Rf(RFParams {
            n_trees: 25,
            mtry: 2,
            ..Default::default()
        }),
        ModelConfig::Xgb(ethfraud_core::boost::XGBParams {
            n_rounds: 30,
            early_stop_rounds: None,
            ..Default::default()
        }),
    ];
    for c in configs {
        let ev = cross_validate(&c, &d, 2, 4).unwrap();
        assert_eq!(ev.fold_confusion[0], ev.fold_confusion[1]);
        assert_eq!(ev.folds[0], ev.folds[1]);
    }
}

use std::path::Path;
use std::process::{Command, Output};

fn ethfraud(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ethfraud"))
        .current_dir(dir)
        .args(args)
        .env_remove("ETHERSCAN_API_KEY")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = ethfraud(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stderr_of(out: &Output) -> String {
    assert!(!out.status.success());
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn synth_then_featurize_gives_one_row_per_account() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--out", "data/", "--seed", "42"]);
    ok(
        d,
        &[
            "featurize",
            "--tx",
            "data/tx.csv",
            "--labels",
            "data/labels.csv",
            "--out",
            "features.csv",
        ],
    );
    let text = std::fs::read_to_string(d.join("features.csv")).unwrap();
    assert_eq!(text.lines().count(), 5251);
    assert!(d.join("data/manifest.json").exists());
    let m: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(d.join("features.csv.manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(m["command"], "featurize");
    assert_eq!(m["config"]["rows"], 5250);
    assert!(m["duration_seconds"].as_f64().unwrap() >= 0.0);
}

fn small_split(d: &Path) {
    ok(
        d,
        &[
            "synth",
            "--n-nonfraud",
            "300",
            "--n-fraud",
            "40",
            "--seed",
            "1",
            "--out",
            "data",
        ],
    );
    ok(
        d,
        &[
            "featurize",
            "--tx",
            "data/tx.csv",
            "--labels",
            "data/labels.csv",
            "--out",
            "f.csv",
        ],
    );
    ok(
        d,
        &["split", "--data", "f.csv", "--seed", "1", "--out", "split"],
    );
}

#[test]
fn svm_training_requires_standardization() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_split(d);
    let err = stderr_of(&ethfraud(
        d,
        &[
            "train",
            "--model",
            "svm",
            "--train",
            "split/train.csv",
            "--out",
            "m.json",
        ],
    ));
    assert!(err.contains("--standardize"), "{err}");
    assert!(!d.join("m.json").exists());
    ok(
        d,
        &[
            "train",
            "--model",
            "svm",
            "--standardize",
            "--train",
            "split/train.csv",
            "--out",
            "m.json",
        ],
    );
    ok(
        d,
        &[
            "evaluate",
            "--model-file",
            "m.json",
            "--data",
            "split/validation.csv",
            "--out",
            "ev",
        ],
    );
    let preds = std::fs::read_to_string(d.join("ev/predictions.csv")).unwrap();
    // hard labels only
    assert!(preds.lines().nth(1).unwrap().ends_with(','));
}

#[test]
fn evaluation_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_split(d);
    std::fs::write(d.join("rf.json"), r#"{"n_trees": 30}"#).unwrap();
    ok(
        d,
        &[
            "train",
            "--model",
            "rf",
            "--config",
            "rf.json",
            "--seed",
            "7",
            "--train",
            "split/train.csv",
            "--out",
            "m.json",
        ],
    );
    for out in ["e1", "e2"] {
        ok(
            d,
            &[
                "evaluate",
                "--model-file",
                "m.json",
                "--data",
                "split/validation.csv",
                "--cutoff",
                "0.8",
                "--out",
                out,
            ],
        );
    }
    for f in ["predictions.csv", "metrics.csv", "confusion.csv"] {
        assert_eq!(
            std::fs::read(d.join("e1").join(f)).unwrap(),
            std::fs::read(d.join("e2").join(f)).unwrap(),
            "{f}"
        );
    }
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("m.json.manifest.json")).unwrap())
            .unwrap();
    assert_eq!(m["seed"], 7);
    assert_eq!(m["config"]["n_trees"], 30);
}

#[test]
fn grid_search_report_and_ablation() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_split(d);
    std::fs::write(
        d.join("grid.json"),
        r#"[{"n_trees": 10, "cutoff": 0.5}, {"n_trees": 10, "cutoff": 0.9}, {"n_trees": 10, "mtry": 6}]"#,
    )
    .unwrap();
    ok(
        d,
        &[
            "grid-search",
            "--model",
            "rf",
            "--grid",
            "grid.json",
            "--folds",
            "3",
            "--train",
            "split/train.csv",
            "--out",
            "g",
        ],
    );
    let cv = std::fs::read_to_string(d.join("g/cv.csv")).unwrap();
    assert_eq!(cv.lines().count(), 4);
    assert!(
        cv.starts_with("conf,mtry,min_node_size,cutoff,Specificity,Recall,Precision,FPR,F1,error")
    );
    let sel: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("g/selected.json")).unwrap()).unwrap();
    assert!(sel["max_recall"]["conf"].as_u64().is_some());
    assert!(d.join("g/confusion_min_fpr.csv").exists());

    ok(
        d,
        &[
            "train",
            "--model",
            "xgb",
            "--train",
            "split/train.csv",
            "--out",
            "x.json",
        ],
    );
    ok(
        d,
        &["importance", "--model-file", "x.json", "--out", "imp.csv"],
    );
    ok(
        d,
        &[
            "ablate",
            "--model",
            "xgb",
            "--exclude-top",
            "1,3",
            "--importance",
            "imp.csv",
            "--train",
            "split/train.csv",
            "--validation",
            "split/validation.csv",
            "--out",
            "abl.csv",
        ],
    );
    let abl = std::fs::read_to_string(d.join("abl.csv")).unwrap();
    assert_eq!(abl.lines().count(), 3);

    ok(
        d,
        &[
            "report",
            "--inputs",
            "g/cv.csv",
            "abl.csv",
            "--out",
            "summary.md",
        ],
    );
    let md = std::fs::read_to_string(d.join("summary.md")).unwrap();
    assert!(md.contains("## cv") && md.contains("## abl"));
    assert!(md.contains("| conf | mtry |"));
}

#[test]
fn errors_exit_nonzero_with_a_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let err = stderr_of(&ethfraud(
        d,
        &[
            "featurize",
            "--tx",
            "missing.csv",
            "--labels",
            "l.csv",
            "--out",
            "f.csv",
        ],
    ));
    assert!(err.contains("missing.csv"), "{err}");
    stderr_of(&ethfraud(d, &["train", "--model", "rf", "--bogus", "x"]));
    stderr_of(&ethfraud(
        d,
        &[
            "train", "--model", "knn", "--train", "t.csv", "--out", "m.json",
        ],
    ));
    std::fs::write(
        d.join("a.txt"),
        "0x00000000000000000000000000000000000000aa\n",
    )
    .unwrap();
    let err = stderr_of(&ethfraud(
        d,
        &["fetch", "--addresses", "a.txt", "--out", "tx.csv"],
    ));
    assert!(err.contains("ETHERSCAN_API_KEY"), "{err}");
}

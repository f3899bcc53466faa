//! End-to-end runs of the compiled binary.

use std::path::Path;
use std::process::{Command, Output};

use divens_core::io;
use divens_core::types::{LabelSet, PredictionMatrix};

fn divens(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_divens"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary should run")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_perfect_fixture(dir: &Path) {
    // Three videos, perfectly confident and correct.
    let preds = PredictionMatrix::new(
        3,
        4,
        vec![
            1.0, 0.0, 0.0, 0.0, //
            0.0, 1.0, 1.0, 0.0, //
            0.0, 0.0, 0.0, 1.0,
        ],
    )
    .unwrap();
    let labels = LabelSet::new(4, vec![vec![0], vec![1, 2], vec![3]]).unwrap();
    io::write_predictions(dir.join("p.divm"), &preds).unwrap();
    let ids: Vec<String> = (0..3).map(|i| format!("v{i}")).collect();
    io::write_labels(dir.join("l.txt"), &labels, &ids).unwrap();
}

#[test]
fn gap_on_perfect_fixture_prints_exactly_one() {
    let tmp = tempfile::tempdir().unwrap();
    write_perfect_fixture(tmp.path());
    let out = divens(
        tmp.path(),
        &["gap", "--pred", "p.divm", "--labels", "l.txt"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(stdout(&out), "{\"gap\":1.0}\n");
}

#[test]
fn quiet_suppresses_stdout() {
    let tmp = tempfile::tempdir().unwrap();
    write_perfect_fixture(tmp.path());
    let out = divens(
        tmp.path(),
        &["gap", "--quiet", "--pred", "p.divm", "--labels", "l.txt"],
    );
    assert!(out.status.success());
    assert!(stdout(&out).is_empty());
}

#[test]
fn malformed_magic_exits_one_and_names_the_problem() {
    let tmp = tempfile::tempdir().unwrap();
    write_perfect_fixture(tmp.path());
    std::fs::write(tmp.path().join("bad.divm"), b"JUNKJUNKJUNK").unwrap();
    let out = divens(
        tmp.path(),
        &["gap", "--pred", "bad.divm", "--labels", "l.txt"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("magic"), "{}", stderr(&out));
}

#[test]
fn dimension_mismatch_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    write_perfect_fixture(tmp.path());
    let small = PredictionMatrix::new(2, 4, vec![0.5; 8]).unwrap();
    io::write_predictions(tmp.path().join("small.divm"), &small).unwrap();
    let out = divens(
        tmp.path(),
        &["gap", "--pred", "small.divm", "--labels", "l.txt"],
    );
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn divergent_training_exits_three() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(
        dir.join("synth.json"),
        r#"{"num_videos":20,"num_classes":4,"feature_dim":3,"latent_rank":2,
            "label_density":1.0,"noise_sigma":0.3,"frames_min":1,"frames_max":2,
            "seed":1,"val_fraction":0.2,"split_seed":1}"#,
    )
    .unwrap();
    assert!(
        divens(dir, &["synth", "--config", "synth.json", "--out-dir", "c"])
            .status
            .success()
    );
    assert!(divens(
        dir,
        &[
            "pool",
            "--method",
            "mean",
            "--frames",
            "c/frames.divf",
            "--out",
            "f.divm"
        ]
    )
    .status
    .success());
    // Large enough to push f32 parameters to infinity on the first update.
    std::fs::write(
        dir.join("net.json"),
        r#"{"input_dim":3,"hidden_sizes":[4,4,4],"num_classes":4,
            "learning_rate":1e200,"batch_size":8,"max_epochs":2,"seed":2}"#,
    )
    .unwrap();
    let out = divens(
        dir,
        &[
            "train",
            "--features",
            "f.divm",
            "--labels",
            "c/labels.txt",
            "--config",
            "net.json",
            "--out-dir",
            "run",
        ],
    );
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}

#[test]
fn single_member_ensemble_roundtrips_bitwise() {
    let tmp = tempfile::tempdir().unwrap();
    write_perfect_fixture(tmp.path());
    let out = divens(
        tmp.path(),
        &["ensemble", "--preds", "p.divm", "--out", "e.divm"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let a = std::fs::read(tmp.path().join("p.divm")).unwrap();
    let b = std::fs::read(tmp.path().join("e.divm")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn synth_is_deterministic_across_invocations() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(
        dir.join("synth.json"),
        r#"{"num_videos":15,"num_classes":5,"feature_dim":4,"latent_rank":2,
            "label_density":1.5,"noise_sigma":0.5,"frames_min":2,"frames_max":4,
            "seed":9,"val_fraction":0.2,"split_seed":2}"#,
    )
    .unwrap();
    for d in ["a", "b"] {
        assert!(
            divens(dir, &["synth", "--config", "synth.json", "--out-dir", d])
                .status
                .success()
        );
    }
    for f in ["frames.divf", "labels.txt", "split.json"] {
        let a = std::fs::read(dir.join("a").join(f)).unwrap();
        let b = std::fs::read(dir.join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between runs");
    }
}

#[test]
fn recipe_synth_pool_train_predict_gap() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(
        dir.join("synth.json"),
        r#"{"num_videos":60,"num_classes":6,"feature_dim":5,"latent_rank":2,
            "label_density":2.0,"noise_sigma":0.3,"frames_min":2,"frames_max":5,
            "seed":4,"val_fraction":0.25,"split_seed":4}"#,
    )
    .unwrap();
    std::fs::write(
        dir.join("net.json"),
        r#"{"input_dim":5,"hidden_sizes":[12,12,12],"num_classes":6,
            "learning_rate":0.004,"batch_size":16,"max_epochs":8,"seed":3}"#,
    )
    .unwrap();
    for args in [
        vec!["synth", "--config", "synth.json", "--out-dir", "c"],
        vec![
            "pool",
            "--method",
            "mean",
            "--frames",
            "c/frames.divf",
            "--out",
            "f.divm",
        ],
        vec![
            "train",
            "--features",
            "f.divm",
            "--labels",
            "c/labels.txt",
            "--config",
            "net.json",
            "--split",
            "c/split.json",
            "--out-dir",
            "run",
        ],
        vec![
            "predict",
            "--checkpoint",
            "run/final",
            "--features",
            "f.divm",
            "--out",
            "p.divm",
        ],
    ] {
        let out = divens(dir, &args);
        assert!(out.status.success(), "{args:?}: {}", stderr(&out));
    }
    let out = divens(
        dir,
        &["gap", "--pred", "p.divm", "--labels", "c/labels.txt"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let parsed: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let gap = parsed["gap"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&gap), "gap {gap}");
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lab")).args(args).env("RUST_LOG", "warn").output().expect("spawn lab")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn arg(key: &str, path: &Path) -> String {
    format!("--{key}={}", path.display())
}

#[test]
fn screen_succeeds_and_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = lab(&["screen", &arg("out", dir.path())]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = fs::read_to_string(dir.path().join("screen.csv")).unwrap();
    assert!(text.starts_with("prevalence,lr_plus,ppv"));
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn unknown_key_exits_two_and_lists_accepted_keys() {
    let out = lab(&["screen", "--colour", "red"]);
    assert_eq!(code(&out), 2);
    let err = stderr(&out);
    assert!(err.contains("colour") && err.contains("accepted keys"), "{err}");
}

#[test]
fn bad_side_exits_two_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let out = lab(&["gen-data", &arg("out", dir.path()), "--side", "20"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("side"));
}

#[test]
fn unknown_command_exits_two() {
    assert_eq!(code(&lab(&["train-everything"])), 2);
}

#[test]
fn missing_dataset_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = lab(&["train-lsnet", &arg("data", &dir.path().join("nowhere")), &arg("out", &dir.path().join("o"))]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn missing_config_file_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = lab(&["screen", "--config", &dir.path().join("absent.conf").display().to_string()]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn malformed_predictions_exit_five() {
    let dir = tempfile::tempdir().unwrap();
    let preds = dir.path().join("p.csv");
    fs::write(&preds, "score,label\n0.3,1\nhigh,0\n").unwrap();
    let out = lab(&["eval", &arg("predictions", &preds), &arg("out", &dir.path().join("o"))]);
    assert_eq!(code(&out), 5, "{}", stderr(&out));
}

#[test]
fn config_file_and_override_compose() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("screen.conf");
    fs::write(&conf, format!("out={}\n", dir.path().join("from_file").display())).unwrap();
    let out = lab(&["screen", "--config", &conf.display().to_string(), &arg("out", &dir.path().join("from_flag"))]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(dir.path().join("from_flag/screen.csv").is_file());
    assert!(!dir.path().join("from_file").exists());
}

#[test]
fn tiny_pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = |args: &[&str]| {
        let out = lab(args);
        assert_eq!(code(&out), 0, "{:?}: {}", args, stderr(&out));
    };
    run(&["gen-data", &arg("out", &data), "--n_per_class", "10", "--side", "16"]);
    let lsnet = dir.path().join("lsnet");
    run(&["train-lsnet", &arg("data", &data), &arg("out", &lsnet), "--epochs", "1", "--batch", "4", "--side", "16"]);
    run(&[
        "eval",
        &arg("data", &data),
        &arg("out", &dir.path().join("eval")),
        &arg("checkpoint", &lsnet.join("lsnet.ckpt")),
        "--resamples",
        "50",
    ]);
    for f in ["metrics.csv", "bootstrap.csv", "predictions.csv"] {
        assert!(dir.path().join("eval").join(f).is_file(), "{f}");
    }
}

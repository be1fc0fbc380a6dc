use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
method = reconboost
num_samples = 150
cycles = 1
t1 = 1
t2 = 1
hidden = 8
probe_epochs = 20
";

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reconboost"))
        .args(args)
        .current_dir(dir)
        .env_remove("RECONBOOST_SEED")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("run.conf");
    fs::write(&path, format!("{TINY}output_dir = out\n{extra}")).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn train_writes_report_and_history() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = write_config(tmp.path(), "");
    let out = run(&["train", "--config", &conf], tmp.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let history = fs::read_to_string(tmp.path().join("out/history.csv")).unwrap();
    assert!(history.starts_with("cycle,round,stage_kind,modality,epoch,agreement,kl,mcr,total,train_acc,test_acc\n"));
    assert_eq!(history.lines().count(), 1 + 4);
    assert!(tmp.path().join("out/report.json").exists());
    assert!(tmp.path().join("out/model").is_dir());
}

#[test]
fn unknown_key_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = write_config(tmp.path(), "learning_rate = 0.1\n");
    let out = run(&["train", "--config", &conf], tmp.path());
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("learning_rate"), "{}", stderr(&out));
}

#[test]
fn missing_config_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["train", "--config", "nope.conf"], tmp.path());
    assert_eq!(code(&out), 2);
}

#[test]
fn divergence_exits_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = write_config(tmp.path(), "stage_lr = 1e200\ngrs_lr = 1e200\n");
    let out = run(&["train", "--config", &conf], tmp.path());
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(stderr(&out).contains("boost stage"), "{}", stderr(&out));
}

#[test]
fn seed_variable_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = write_config(tmp.path(), "diagnostics = false\n");
    let out = Command::new(env!("CARGO_BIN_EXE_reconboost"))
        .args(["train", "--config", &conf])
        .current_dir(tmp.path())
        .env("RECONBOOST_SEED", "7")
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(tmp.path().join("out/report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["train"]["seed"], 7);
}

#[test]
fn sequential_and_parallel_seed_sweeps_agree() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = write_config(tmp.path(), "diagnostics = false\nsave_model = false\n");
    let seq = run(&["train", "--config", &conf, "--output-dir", "seq", "--seeds", "1,2"], tmp.path());
    assert_eq!(code(&seq), 0, "{}", stderr(&seq));
    let par = run(
        &["train", "--config", &conf, "--output-dir", "par", "--seeds", "1,2", "--parallel"],
        tmp.path(),
    );
    assert_eq!(code(&par), 0, "{}", stderr(&par));
    for s in ["seed_1", "seed_2"] {
        let a = fs::read(tmp.path().join("seq").join(s).join("history.csv")).unwrap();
        let b = fs::read(tmp.path().join("par").join(s).join("history.csv")).unwrap();
        assert_eq!(a, b);
    }
    let one = fs::read(tmp.path().join("seq/seed_1/history.csv")).unwrap();
    let two = fs::read(tmp.path().join("seq/seed_2/history.csv")).unwrap();
    assert_ne!(one, two);
}

#[test]
fn verify_passes_on_stock_build() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["verify", "--json", "verify.json"], tmp.path());
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    assert_eq!(stdout(&out).lines().filter(|l| l.starts_with("PASS")).count(), 15);
    let json: serde_json::Value = serde_json::from_slice(&fs::read(tmp.path().join("verify.json")).unwrap()).unwrap();
    assert_eq!(json["all_passed"], true);
}

#[test]
fn verify_catches_kl_sign_flip() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["verify", "--inject", "kl-sign"], tmp.path());
    assert_eq!(code(&out), 1);
    assert!(stdout(&out).lines().any(|l| l.starts_with("FAIL lambda1_equivalence")));
    assert!(stderr(&out).contains("lambda1_equivalence"));
}

#[test]
fn verify_reports_errors_under_tiny_tolerance() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["verify", "--tolerance", "1e-15"], tmp.path());
    assert_eq!(code(&out), 1);
    let fd = stdout(&out).lines().find(|l| l.contains("fd_ce")).unwrap().to_string();
    assert!(fd.starts_with("FAIL"), "{fd}");
    assert!(!fd.contains("max error 0.000e0"), "{fd}");
}

#[test]
fn verify_rejects_unknown_tolerance_name() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["verify", "--tol", "no_such_check=1e-3"], tmp.path());
    assert_eq!(code(&out), 2);
    let out = run(&["verify", "--tol", "fd_ce=1e-3"], tmp.path());
    assert_eq!(code(&out), 0);
}

#[test]
fn report_validates_and_emits_plot_data() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = write_config(tmp.path(), "");
    assert_eq!(code(&run(&["train", "--config", &conf], tmp.path())), 0);
    let out = run(&["report", "--out", "plots", "out/report.json"], tmp.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let curves = fs::read_to_string(tmp.path().join("plots/curves.csv")).unwrap();
    assert!(curves.starts_with("curve,x,y,seed\n"));
    assert!(tmp.path().join("plots/bars.csv").exists());

    assert_eq!(code(&run(&["report", "--out", "plots"], tmp.path())), 2);
    assert_eq!(code(&run(&["report", "--out", "plots", "missing.json"], tmp.path())), 2);
    fs::write(tmp.path().join("bad.json"), "{\"schema_version\": 1}").unwrap();
    let bad = run(&["report", "--out", "plots", "bad.json"], tmp.path());
    assert_eq!(code(&bad), 2);
    assert!(stderr(&bad).contains("schema"), "{}", stderr(&bad));
}

#[test]
fn tampered_diagnostics_are_flagged() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = write_config(tmp.path(), "");
    assert_eq!(code(&run(&["train", "--config", &conf], tmp.path())), 0);
    let path = tmp.path().join("out/report.json");
    let mut report: serde_json::Value = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
    report["diagnostics"]["pairs"][0]["dmc"] = serde_json::json!(9.5);
    fs::write(&path, serde_json::to_string(&report).unwrap()).unwrap();
    let out = run(&["report", "--out", "plots", "out/report.json"], tmp.path());
    assert_eq!(code(&out), 1, "{}", stderr(&out));
}

#[test]
fn data_commands_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["gen-data", "--out", "data", "--num-samples", "120", "--seed", "4"], tmp.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = run(
        &["corrupt", "--input", "data", "--out", "noisy", "--modality", "1", "--sigma", "1.0"],
        tmp.path(),
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let bad = run(
        &["corrupt", "--input", "data", "--out", "x", "--modality", "5", "--sigma", "1.0"],
        tmp.path(),
    );
    assert_eq!(code(&bad), 2);

    let conf = tmp.path().join("table.conf");
    fs::write(&conf, format!("{TINY}dataset = noisy\noutput_dir = out\n")).unwrap();
    let out = run(&["train", "--config", conf.to_str().unwrap()], tmp.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = run(&["probe", "--model", "out/model", "--data", "data"], tmp.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(stdout(&out).lines().filter(|l| l.contains("probe accuracy")).count(), 2);
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn activekd(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_activekd"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

const CONFIG: &str = r#"
strategies = ["entropy", "class_balanced"]
seeds = [1, 2]
output_dir = "out"

[dataset]
classes = 3
dim = 4
per_class = 12
test_per_class = 5

[loop]
rounds = 2

[student]
epochs = 2
"#;

#[test]
fn run_then_export() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("exp.toml"), CONFIG).unwrap();
    let out = activekd(
        &["run", "exp.toml", "--seed-override", "7", "--workers", "2"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    // output_dir is relative to the config file
    let run_dir = dir.path().join("out");
    assert!(run_dir.join("rounds_entropy_zero_shot_seed7.csv").is_file());
    assert!(!run_dir.join("rounds_entropy_zero_shot_seed1.csv").exists());

    let out = activekd(&["export", "out/manifest.json", "--kind", "criteria"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let written = String::from_utf8(out.stdout).unwrap();
    assert!(written.trim().ends_with("plot_criteria.csv"));
    // 2 strategies x 2 rounds x 4 criteria, plus header
    assert_eq!(
        fs::read_to_string(run_dir.join("plot_criteria.csv"))
            .unwrap()
            .lines()
            .count(),
        17
    );

    let out = activekd(&["export", "out/manifest.json", "--kind", "loss"], dir.path());
    assert!(!out.status.success());
}

#[test]
fn out_dir_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("exp.toml"), CONFIG).unwrap();
    let out = activekd(&["run", "exp.toml", "--out-dir", "elsewhere"], dir.path());
    assert!(out.status.success());
    assert!(dir.path().join("elsewhere/manifest.json").is_file());
    assert!(!dir.path().join("out").exists());
}

#[test]
fn invalid_config_lists_every_problem() {
    let dir = tempfile::tempdir().unwrap();
    let text = CONFIG.replace("[loop]", "[distill]\nlamda = 0.3\nbeta = -1.0\n\n[loop]");
    fs::write(dir.path().join("bad.toml"), text).unwrap();
    let out = activekd(&["run", "bad.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("lamda"), "{err}");
    assert!(err.contains("lambda"), "{err}");
    assert!(err.contains("beta"), "{err}");
}

#[test]
fn failed_cells_give_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("logits.csv"), "1,2,3\n").unwrap();
    let text = format!("{CONFIG}\n[teacher]\nkind = \"frozen_logits\"\nlogits_path = \"logits.csv\"\n");
    fs::write(dir.path().join("exp.toml"), text).unwrap();
    let out = activekd(&["run", "exp.toml"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stderr)
        .unwrap()
        .contains("failed: entropy zero_shot seed 1"));
    assert!(dir.path().join("out/manifest.json").is_file());
}

#[test]
fn verify_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = activekd(&["verify"], dir.path());
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.lines().all(|l| l.starts_with("PASS")));
}

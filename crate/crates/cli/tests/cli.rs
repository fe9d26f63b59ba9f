use std::path::Path;
use std::process::{Command, Output};

fn conepose(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_conepose"))
        .args(args)
        .current_dir(cwd)
        .env_remove("CONEPOSE_OUT_DIR")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn records(manifest: &Path) -> usize {
    std::fs::read_to_string(manifest)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .count()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn synth(dir: &Path, name: &str, cones: &str, seed: &str) {
    let o = conepose(
        &["synth", "--cones", cones, "--seed", seed, "--out", name],
        dir,
    );
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn synth_writes_requested_cones() {
    let tmp = tempfile::tempdir().unwrap();
    let o = conepose(
        &[
            "synth",
            "--cones",
            "104",
            "--depth-min",
            "4",
            "--depth-max",
            "18",
            "--seed",
            "7",
            "--out",
            "d",
        ],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(records(&tmp.path().join("d/manifest.tsv")), 104);
    assert!(tmp.path().join("d/scene.toml").exists());
    assert!(stdout(&o).contains("104 rendered"));
}

#[test]
fn synth_zero_cones_is_valid() {
    let tmp = tempfile::tempdir().unwrap();
    let o = conepose(&["synth", "--cones", "0", "--out", "d"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(records(&tmp.path().join("d/manifest.tsv")), 0);
}

#[test]
fn synth_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "a", "12", "3");
    synth(tmp.path(), "b", "12", "3");
    for f in [
        "manifest.tsv",
        "scene.toml",
        "patches/000000.png",
        "patches/000011.png",
    ] {
        let a = std::fs::read(tmp.path().join("a").join(f)).unwrap();
        let b = std::fs::read(tmp.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
}

#[test]
fn train_writes_checkpoint_and_history_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "d", "12", "1");
    let run = |out: &str| {
        let o = conepose(
            &[
                "train", "--data", "d", "--epochs", "50", "--seed", "1", "--out", out,
            ],
            tmp.path(),
        );
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        o
    };
    let o = run("m1");
    assert!(
        stdout(&o).contains("lr=0.0001 momentum=0.9 batch=128"),
        "{}",
        stdout(&o)
    );
    run("m2");
    let h1 = csv_rows(&tmp.path().join("m1/history.csv"));
    assert_eq!(h1.len(), 50);
    assert_eq!(h1, csv_rows(&tmp.path().join("m2/history.csv")));
    assert_eq!(
        std::fs::read(tmp.path().join("m1/model.bin")).unwrap(),
        std::fs::read(tmp.path().join("m2/model.bin")).unwrap()
    );
}

#[test]
fn train_on_empty_dataset_fails() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "d", "0", "0");
    let o = conepose(&["train", "--data", "d", "--epochs", "2"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("empty"), "{}", stderr(&o));
}

#[test]
fn noiseless_oracle_accuracy() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "d", "30", "2");
    let o = conepose(
        &[
            "eval",
            "accuracy",
            "--provider",
            "oracle",
            "--sigma",
            "0",
            "--data",
            "d",
            "--out",
            "r",
        ],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = csv_rows(&tmp.path().join("r/accuracy.csv"));
    assert_eq!(rows.len(), 30);
    for row in rows {
        assert_eq!(row[7], "ok");
        assert!(row[2].parse::<f64>().unwrap() < 1e-4);
    }
    let svg = std::fs::read_to_string(tmp.path().join("r/accuracy.svg")).unwrap();
    assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"));
    assert!(tmp.path().join("r/fit.csv").exists());
}

#[test]
fn perturbation_study_writes_four_series() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "d", "5", "4");
    let o = conepose(
        &[
            "train",
            "--data",
            "d",
            "--epochs",
            "3",
            "--batch-size",
            "5",
            "--out",
            "m",
        ],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let o = conepose(
        &[
            "eval",
            "perturb",
            "--perturb",
            "0.01,0.05,0.1,0.2",
            "--ckpt",
            "m/model.bin",
            "--data",
            "d",
            "--out",
            "p",
        ],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("4 series"));
    let mut magnitudes: Vec<String> = csv_rows(&tmp.path().join("p/perturbation.csv"))
        .into_iter()
        .filter(|r| r[0] == "cone")
        .map(|r| r[1].clone())
        .collect();
    magnitudes.dedup();
    assert_eq!(magnitudes, ["0.01", "0.05", "0.1", "0.2"]);
    assert!(tmp.path().join("p/perturbation.svg").exists());
}

#[test]
fn missing_checkpoint_is_a_runtime_error() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "d", "3", "0");
    let o = conepose(
        &[
            "eval",
            "accuracy",
            "--provider",
            "model",
            "--ckpt",
            "missing.bin",
            "--data",
            "d",
        ],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing.bin"), "{}", stderr(&o));
}

#[test]
fn oracle_perturbation_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "d", "3", "0");
    let o = conepose(
        &["eval", "perturb", "--provider", "oracle", "--data", "d"],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("oracle"), "{}", stderr(&o));
}

#[test]
fn gradcheck_default_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = conepose(&["gradcheck"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("loss grad max rel err < 1e-4: PASS"), "{out}");
    assert!(out.contains("model grad max rel err < 1e-3: PASS"), "{out}");
}

#[test]
fn gradcheck_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let args = ["gradcheck", "--trials", "1000", "--seed", "3", "--no-model"];
    let a = conepose(&args, tmp.path());
    let b = conepose(&args, tmp.path());
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(stdout(&a), stdout(&b));
}

#[test]
fn gradcheck_detects_wrong_sign() {
    let tmp = tempfile::tempdir().unwrap();
    let o = conepose(
        &[
            "gradcheck",
            "--trials",
            "20",
            "--no-model",
            "--inject-sign-flip",
        ],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("FAIL"));
}

#[test]
fn usage_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(conepose(&["bogus"], tmp.path()).status.code(), Some(1));
    assert_eq!(
        conepose(&["synth", "--cones", "x"], tmp.path())
            .status
            .code(),
        Some(1)
    );
    assert_eq!(conepose(&["train"], tmp.path()).status.code(), Some(1));
    assert_eq!(conepose(&["--help"], tmp.path()).status.code(), Some(0));
    assert_eq!(conepose(&["--version"], tmp.path()).status.code(), Some(0));
}

#[test]
fn flags_override_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(
        tmp.path().join("run.toml"),
        "seed = 5\nout = \"from-config\"\n[synth]\ncones = 4\n[train]\ndata = \"from-config\"\nepochs = 3\nbatch_size = 4\n",
    )
    .unwrap();
    let o = conepose(&["synth", "--config", "run.toml"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(records(&tmp.path().join("from-config/manifest.tsv")), 4);
    let o = conepose(
        &[
            "train", "--config", "run.toml", "--epochs", "2", "--out", "m",
        ],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(csv_rows(&tmp.path().join("m/history.csv")).len(), 2);
    assert!(stdout(&o).contains("batch=4"));
    let resolved = std::fs::read_to_string(tmp.path().join("m/train-config.toml")).unwrap();
    assert!(
        resolved.contains("epochs = 2") && resolved.contains("seed = 5"),
        "{resolved}"
    );
}

#[test]
fn bad_config_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("bad.toml"), "[synth]\nconez = 4\n").unwrap();
    let o = conepose(&["synth", "--config", "bad.toml"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn env_var_sets_default_output_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_conepose"))
        .args(["synth", "--cones", "2"])
        .current_dir(tmp.path())
        .env("CONEPOSE_OUT_DIR", "env-out")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(records(&tmp.path().join("env-out/manifest.tsv")), 2);
}

#[test]
fn resolved_config_is_logged() {
    let tmp = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_conepose"))
        .args(["synth", "--cones", "1", "--out", "d"])
        .current_dir(tmp.path())
        .env_remove("RUST_LOG")
        .output()
        .unwrap();
    assert!(stderr(&o).contains("synth resolved config") && stderr(&o).contains("cones = 1"));
}

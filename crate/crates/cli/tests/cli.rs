//! Binary-level tests: exit codes, artifact files, and error messages.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use modelprint::fingerprint::{DiscardCounts, Fingerprint, FingerprintSet, GenConfig};
use modelprint::nn::{init_model, Activation, ModelSpec};
use modelprint::persist;
use modelprint_cli::{desk_config, DatasetConfig, RunConfig};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_modelprint")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("spawn")
}

fn code(output: &Output) -> i32 {
    output.status.code().unwrap_or(-1)
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("modelprint-cli-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// Scaled-down copy of the desk config so CLI round trips stay quick.
fn mini_config() -> RunConfig {
    let mut cfg = desk_config();
    if let DatasetConfig::Blobs { n_per_class, .. } = &mut cfg.dataset {
        *n_per_class = 40;
    }
    cfg.protected.train.epochs = 300;
    for attack in cfg
        .surrogate_pirated
        .iter_mut()
        .chain(cfg.test_pirated.iter_mut())
    {
        attack.train_cfg.epochs = attack.train_cfg.epochs.min(10);
    }
    cfg.surrogate_pirated.truncate(3);
    cfg.test_pirated.truncate(3);
    for ind in cfg
        .surrogate_independent
        .iter_mut()
        .chain(cfg.test_independent.iter_mut())
    {
        ind.train.epochs = ind.train.epochs.min(150);
    }
    cfg.test_independent.truncate(3);
    cfg.gen.cw_steps = 800;
    cfg.gen.n_grid = 100;
    cfg.gen.max_fingerprints = 6;
    cfg
}

/// One shared mini pipeline run; individual tests read its artifacts.
fn mini_run() -> &'static (PathBuf, PathBuf) {
    static RUN: OnceLock<(PathBuf, PathBuf)> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = tmp("pipeline");
        let config_path = dir.join("config.json");
        mini_config().save(&config_path).unwrap();
        let out_dir = dir.join("out");
        for sub in ["train", "pool", "fingerprint", "evaluate"] {
            let output = run(&[
                sub,
                "--config",
                config_path.to_str().unwrap(),
                "--out",
                out_dir.to_str().unwrap(),
            ]);
            assert_eq!(
                code(&output),
                0,
                "{sub} failed: {}{}",
                stdout(&output),
                stderr(&output)
            );
        }
        (config_path, out_dir)
    })
}

#[test]
fn pipeline_commands_succeed_and_write_artifacts() {
    let (_, out_dir) = mini_run();
    for file in [
        "protected.json",
        "train.csv",
        "heldout.csv",
        "dataset.meta.json",
        "fingerprints.json",
        "report.json",
        "pools/pirated_surrogate/manifest.json",
        "pools/independent_test/manifest.json",
    ] {
        assert!(out_dir.join(file).exists(), "missing {file}");
    }
}

#[test]
fn train_prints_heldout_accuracy() {
    let (config_path, _) = mini_run();
    let dir = tmp("train-print");
    let output = run(&[
        "train",
        "--config",
        config_path.to_str().unwrap(),
        "--out",
        dir.join("out").to_str().unwrap(),
    ]);
    assert_eq!(code(&output), 0);
    assert!(stdout(&output).contains("held-out accuracy"));
}

#[test]
fn missing_dataset_file_exits_2() {
    let dir = tmp("missing-data");
    let mut cfg = mini_config();
    cfg.dataset = DatasetConfig::Csv {
        path: dir.join("does-not-exist.csv"),
        has_header: false,
    };
    let config_path = dir.join("config.json");
    cfg.save(&config_path).unwrap();
    let output = run(&[
        "train",
        "--config",
        config_path.to_str().unwrap(),
        "--out",
        dir.join("out").to_str().unwrap(),
    ]);
    assert_eq!(code(&output), 2, "{}", stderr(&output));
}

#[test]
fn overlapping_seed_ranges_exit_2() {
    let dir = tmp("overlap");
    let mut cfg = mini_config();
    cfg.test_pirated[0].seed = cfg.surrogate_pirated[0].seed;
    let config_path = dir.join("config.json");
    cfg.save(&config_path).unwrap();
    let output = run(&[
        "train",
        "--config",
        config_path.to_str().unwrap(),
        "--out",
        dir.join("out").to_str().unwrap(),
    ]);
    assert_eq!(code(&output), 2);
    assert!(stderr(&output).contains("overlap"));
}

#[test]
fn fingerprint_without_protected_model_exits_2() {
    let (config_path, _) = mini_run();
    let dir = tmp("no-protected");
    let output = run(&[
        "fingerprint",
        "--config",
        config_path.to_str().unwrap(),
        "--out",
        dir.join("empty").to_str().unwrap(),
    ]);
    assert_eq!(code(&output), 2);
}

#[test]
fn divergent_training_exits_3() {
    let dir = tmp("divergent");
    let mut cfg = mini_config();
    cfg.protected.activation = Activation::Relu;
    cfg.protected.train.learning_rate = 1e6;
    cfg.protected.train.epochs = 10;
    let config_path = dir.join("config.json");
    cfg.save(&config_path).unwrap();
    let output = run(&[
        "train",
        "--config",
        config_path.to_str().unwrap(),
        "--out",
        dir.join("out").to_str().unwrap(),
    ]);
    assert_eq!(code(&output), 3, "{}", stderr(&output));
}

#[test]
fn verify_rejects_theta_out_of_range() {
    let (_, out_dir) = mini_run();
    let suspect = out_dir.join("protected.json");
    let fps = out_dir.join("fingerprints.json");
    let output = run(&[
        "verify",
        "--fingerprints",
        fps.to_str().unwrap(),
        "--suspect",
        suspect.to_str().unwrap(),
        "--theta",
        "1.1",
    ]);
    assert_eq!(code(&output), 2);
}

#[test]
fn verify_protected_self_match_decides_pirated() {
    let (_, out_dir) = mini_run();
    let report_path = out_dir.join("self_verify.json");
    let output = run(&[
        "verify",
        "--fingerprints",
        out_dir.join("fingerprints.json").to_str().unwrap(),
        "--suspect",
        out_dir.join("protected.json").to_str().unwrap(),
        "--theta",
        "0.5",
        "--out",
        report_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&output), 0, "{}", stderr(&output));
    assert!(stdout(&output).contains("matching rate 1.0000"));
    assert!(stdout(&output).contains("Pirated"));

    // Round trip: the written report parses and re-serializes identically.
    let text = std::fs::read_to_string(&report_path).unwrap();
    let parsed: modelprint::verify::VerificationReport = serde_json::from_str(&text).unwrap();
    let mut rewritten = serde_json::to_string_pretty(&parsed).unwrap();
    rewritten.push('\n');
    assert_eq!(text, rewritten);
}

#[test]
fn unknown_model_format_version_exits_2() {
    let dir = tmp("bad-version");
    let model = init_model(&ModelSpec::new(vec![2, 2], Activation::Relu, 0)).unwrap();
    let model_path = dir.join("model.json");
    persist::save_model(&model, &model_path).unwrap();
    let text = std::fs::read_to_string(&model_path)
        .unwrap()
        .replace("\"format_version\": 1", "\"format_version\": 9");
    std::fs::write(&model_path, text).unwrap();

    let fps_path = dir.join("fps.json");
    save_tiny_fingerprints(&fps_path);
    let output = run(&[
        "verify",
        "--fingerprints",
        fps_path.to_str().unwrap(),
        "--suspect",
        model_path.to_str().unwrap(),
        "--theta",
        "0.5",
    ]);
    assert_eq!(code(&output), 2);
    assert!(stderr(&output).contains("format_version"));
}

fn save_tiny_fingerprints(path: &Path) {
    let fps = FingerprintSet {
        fingerprints: vec![Fingerprint {
            x_star: vec![0.5, -0.5],
            y_star: 0,
            tau_star: 1.5,
            tau_lower_at_star: 1.0,
            tau_upper: 2.0,
            anchor_index: 0,
            slack: 0.5,
        }],
        gen_config: GenConfig::default(),
        protected_model_ref: "tiny".into(),
        discarded_anchor_count: 0,
        discards: DiscardCounts::default(),
    };
    persist::save_fingerprints(&fps, path).unwrap();
}

#[test]
fn empty_fingerprint_set_warns_but_succeeds() {
    let (_, out_dir) = mini_run();
    let dir = tmp("empty-fps");
    let work = dir.join("out");
    // Reuse the mini run's trained model and surrogate pools in a fresh
    // working directory so the shared artifacts stay untouched.
    for sub in ["pools/pirated_surrogate", "pools/independent_surrogate"] {
        let src = out_dir.join(sub);
        let dst = work.join(sub);
        std::fs::create_dir_all(&dst).unwrap();
        for entry in std::fs::read_dir(&src).unwrap() {
            let entry = entry.unwrap();
            std::fs::copy(entry.path(), dst.join(entry.file_name())).unwrap();
        }
    }
    std::fs::copy(out_dir.join("protected.json"), work.join("protected.json")).unwrap();

    let mut cfg = mini_config();
    cfg.gen.m_anchor = 1e9; // no anchor can qualify
    let config_path = dir.join("config.json");
    cfg.save(&config_path).unwrap();
    let output = run(&[
        "fingerprint",
        "--config",
        config_path.to_str().unwrap(),
        "--out",
        work.to_str().unwrap(),
    ]);
    assert_eq!(code(&output), 0, "{}", stderr(&output));
    assert!(stdout(&output).contains("0 emitted"));
    assert!(stdout(&output).contains("warning"));
}

#[test]
fn config_with_unknown_format_version_exits_2() {
    let dir = tmp("bad-config-version");
    let mut cfg = mini_config();
    cfg.format_version = 99;
    let config_path = dir.join("config.json");
    cfg.save(&config_path).unwrap();
    let output = run(&[
        "train",
        "--config",
        config_path.to_str().unwrap(),
        "--out",
        dir.join("out").to_str().unwrap(),
    ]);
    assert_eq!(code(&output), 2);
    assert!(stderr(&output).contains("format_version"));
}

#[test]
fn report_exports_roc_points() {
    let (_, out_dir) = mini_run();
    let roc_path = out_dir.join("roc.tsv");
    let output = run(&[
        "report",
        "--report",
        out_dir.join("report.json").to_str().unwrap(),
        "--roc-out",
        roc_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&output), 0, "{}", stderr(&output));
    assert!(stdout(&output).contains("AUC"));
    let text = std::fs::read_to_string(&roc_path).unwrap();
    assert!(text.starts_with("fpr\ttpr\n"));
    assert!(text.lines().count() >= 3);
}

#[test]
fn rerun_with_same_seed_reproduces_manifests() {
    let (config_path, out_dir) = mini_run();
    let dir = tmp("rerun");
    let out2 = dir.join("out");
    for sub in ["train", "pool"] {
        let output = run(&[
            sub,
            "--config",
            config_path.to_str().unwrap(),
            "--out",
            out2.to_str().unwrap(),
        ]);
        assert_eq!(code(&output), 0);
    }
    for manifest in [
        "pools/pirated_surrogate/manifest.json",
        "pools/independent_surrogate/manifest.json",
        "pools/pirated_test/manifest.json",
        "pools/independent_test/manifest.json",
    ] {
        let a = std::fs::read(out_dir.join(manifest)).unwrap();
        let b = std::fs::read(out2.join(manifest)).unwrap();
        assert_eq!(a, b, "{manifest} differs");
    }
}

#[test]
fn seed_override_changes_artifacts() {
    let (config_path, out_dir) = mini_run();
    let dir = tmp("seed-override");
    let out2 = dir.join("out");
    let output = run(&[
        "train",
        "--config",
        config_path.to_str().unwrap(),
        "--out",
        out2.to_str().unwrap(),
        "--seed",
        "12345",
    ]);
    assert_eq!(code(&output), 0);
    let a = std::fs::read(out_dir.join("protected.json")).unwrap();
    let b = std::fs::read(out2.join("protected.json")).unwrap();
    assert_ne!(a, b);
}

//! End-to-end tests of the `corticast` binary: artifacts, exit codes,
//! config layering, and determinism.

use std::path::Path;
use std::process::Command;

use tempfile::TempDir;

fn corticast() -> Command {
    Command::new(env!("CARGO_BIN_EXE_corticast"))
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().expect("spawn corticast");
    assert!(
        out.status.success(),
        "command failed (status {:?}):\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn run_code(cmd: &mut Command) -> (i32, String) {
    let out = cmd.output().expect("spawn corticast");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn make_cohort(dir: &Path, subjects: usize, order: u32, seed: u64) {
    run_ok(corticast().args([
        "synth",
        "--subjects",
        &subjects.to_string(),
        "--order",
        &order.to_string(),
        "--seed",
        &seed.to_string(),
        "--out-dir",
        dir.to_str().unwrap(),
    ]));
}

#[test]
fn icosphere_writes_expected_sizes_and_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let out6 = dir.path().join("ico6.smesh");
    let stdout = run_ok(corticast().args([
        "icosphere",
        "--order",
        "6",
        "--out",
        out6.to_str().unwrap(),
    ]));
    assert!(stdout.contains("40962 vertices"), "{stdout}");
    let mesh = corticast_core::mesh::read_mesh(&out6).unwrap();
    assert_eq!(mesh.n_vertices(), 40962);

    let out0 = dir.path().join("ico0.smesh");
    run_ok(corticast().args(["icosphere", "--order", "0", "--out", out0.to_str().unwrap()]));
    assert_eq!(corticast_core::mesh::read_mesh(&out0).unwrap().n_vertices(), 12);

    let again = dir.path().join("ico0b.smesh");
    run_ok(corticast().args(["icosphere", "--order", "0", "--out", again.to_str().unwrap()]));
    assert_eq!(
        std::fs::read(&out0).unwrap(),
        std::fs::read(&again).unwrap()
    );
}

#[test]
fn icosphere_invalid_order_exits_2() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("x.smesh");
    let (code, stderr) = run_code(corticast().args([
        "icosphere",
        "--order",
        "9",
        "--out",
        out.to_str().unwrap(),
    ]));
    assert_eq!(code, 2, "{stderr}");
    assert!(!out.exists(), "failed run must not leave output files");
}

#[test]
fn resample_identity_and_mirror_involution() {
    let dir = TempDir::new().unwrap();
    let mesh_path = dir.path().join("ico2.smesh");
    run_ok(corticast().args(["icosphere", "--order", "2", "--out", mesh_path.to_str().unwrap()]));

    // A non-constant field on the order-2 sphere.
    let mesh = corticast_core::mesh::read_mesh(&mesh_path).unwrap();
    let values = ndarray::Array2::from_shape_fn((2, mesh.n_vertices()), |(c, v)| {
        let p = mesh.vertices[v];
        if c == 0 {
            p[0] + 2.0 * p[1] - p[2]
        } else {
            (3.0 * p[2]).sin()
        }
    });
    let field =
        corticast_core::mesh::FeatureField::new(vec!["a".into(), "b".into()], values).unwrap();
    let feat_path = dir.path().join("f.sfeat");
    corticast_core::mesh::write_feature_field(&field, &feat_path).unwrap();

    // Identity: source mesh = target icosphere, no mirror.
    let out = dir.path().join("id.sfeat");
    run_ok(corticast().args([
        "resample",
        "--mesh",
        mesh_path.to_str().unwrap(),
        "--features",
        feat_path.to_str().unwrap(),
        "--target-order",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]));
    assert_eq!(
        std::fs::read(&feat_path).unwrap(),
        std::fs::read(&out).unwrap()
    );

    // Mirroring twice through the resampling path returns the original.
    let m1 = dir.path().join("m1.sfeat");
    run_ok(corticast().args([
        "resample",
        "--mesh",
        mesh_path.to_str().unwrap(),
        "--features",
        feat_path.to_str().unwrap(),
        "--target-order",
        "2",
        "--mirror",
        "--out",
        m1.to_str().unwrap(),
    ]));
    let m2 = dir.path().join("m2.sfeat");
    run_ok(corticast().args([
        "resample",
        "--mesh",
        mesh_path.to_str().unwrap(),
        "--features",
        m1.to_str().unwrap(),
        "--target-order",
        "2",
        "--mirror",
        "--out",
        m2.to_str().unwrap(),
    ]));
    let back = corticast_core::mesh::read_feature_field(&m2).unwrap();
    let orig = corticast_core::mesh::read_feature_field(&feat_path).unwrap();
    for (a, b) in back.values.iter().zip(orig.values.iter()) {
        assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
    }
}

#[test]
fn resample_vertex_count_mismatch_exits_3() {
    let dir = TempDir::new().unwrap();
    let mesh_path = dir.path().join("ico1.smesh");
    run_ok(corticast().args(["icosphere", "--order", "1", "--out", mesh_path.to_str().unwrap()]));
    let field = corticast_core::mesh::FeatureField::new(
        vec!["a".into()],
        ndarray::Array2::zeros((1, 12)), // order 0 size on an order 1 mesh
    )
    .unwrap();
    let feat_path = dir.path().join("bad.sfeat");
    corticast_core::mesh::write_feature_field(&field, &feat_path).unwrap();
    let (code, stderr) = run_code(corticast().args([
        "resample",
        "--mesh",
        mesh_path.to_str().unwrap(),
        "--features",
        feat_path.to_str().unwrap(),
        "--target-order",
        "1",
        "--out",
        dir.path().join("out.sfeat").to_str().unwrap(),
    ]));
    assert_eq!(code, 3, "{stderr}");
    assert!(stderr.contains("vertices"), "{stderr}");
}

#[test]
fn train_eval_pipeline_and_determinism() {
    let dir = TempDir::new().unwrap();
    let cohort = dir.path().join("cohort");
    make_cohort(&cohort, 24, 0, 7);
    let manifest = cohort.join("manifest.csv");

    let train_args = |out: &Path| {
        vec![
            "train".to_string(),
            "--manifest".into(),
            manifest.to_str().unwrap().into(),
            "--out-dir".into(),
            out.to_str().unwrap().into(),
            "--task".into(),
            "scan_age".into(),
            "--max-epochs".into(),
            "25".into(),
            "--patience".into(),
            "10".into(),
            "--seed".into(),
            "1".into(),
        ]
    };
    let run1 = dir.path().join("run1");
    run_ok(corticast().args(train_args(&run1)));
    assert!(run1.join("model.mlpc").exists());
    assert!(run1.join("train_log.csv").exists());
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run1.join("summary.json")).unwrap()).unwrap();
    let recorded_mae = summary["test_mae_weeks"].as_f64().unwrap();

    // Identical flags and inputs give a byte-identical checkpoint.
    let run2 = dir.path().join("run2");
    run_ok(corticast().args(train_args(&run2)));
    assert_eq!(
        std::fs::read(run1.join("model.mlpc")).unwrap(),
        std::fs::read(run2.join("model.mlpc")).unwrap()
    );

    // Eval on the written checkpoint reproduces the recorded test MAE.
    let eval_dir = dir.path().join("eval");
    run_ok(corticast().args([
        "eval",
        "--manifest",
        manifest.to_str().unwrap(),
        "--checkpoint",
        run1.join("model.mlpc").to_str().unwrap(),
        "--split",
        "test",
        "--out-dir",
        eval_dir.to_str().unwrap(),
    ]));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(eval_dir.join("eval_report.json")).unwrap())
            .unwrap();
    let eval_mae = report["mae_weeks"].as_f64().unwrap();
    assert!((eval_mae - recorded_mae).abs() <= 1e-9);

    // The train-log CSV has the documented header.
    let log = std::fs::read_to_string(run1.join("train_log.csv")).unwrap();
    assert!(log.starts_with("epoch,train_loss,val_loss,wall_ms\n"));
}

#[test]
fn birth_age_task_builds_five_channel_model() {
    let dir = TempDir::new().unwrap();
    let cohort = dir.path().join("cohort");
    make_cohort(&cohort, 20, 0, 8);
    let run = dir.path().join("run");
    run_ok(corticast().args([
        "train",
        "--manifest",
        cohort.join("manifest.csv").to_str().unwrap(),
        "--out-dir",
        run.to_str().unwrap(),
        "--task",
        "birth_age",
        "--max-epochs",
        "10",
        "--patience",
        "5",
    ]));
    let checkpoint = corticast_core::autonet::load_checkpoint(&run.join("model.mlpc")).unwrap();
    assert_eq!(checkpoint.model.config.in_channels, 5);
    assert_eq!(checkpoint.model.config.out_units, 1);
}

#[test]
fn challenge_task_builds_three_output_head() {
    let dir = TempDir::new().unwrap();
    let cohort = dir.path().join("cohort");
    make_cohort(&cohort, 20, 0, 9);
    let run = dir.path().join("run");
    run_ok(corticast().args([
        "train",
        "--manifest",
        cohort.join("manifest.csv").to_str().unwrap(),
        "--out-dir",
        run.to_str().unwrap(),
        "--task",
        "challenge",
        "--max-epochs",
        "10",
        "--patience",
        "5",
    ]));
    let checkpoint = corticast_core::autonet::load_checkpoint(&run.join("model.mlpc")).unwrap();
    assert_eq!(checkpoint.model.config.out_units, 3);
}

#[test]
fn cv_writes_one_row_per_fold() {
    let dir = TempDir::new().unwrap();
    let cohort = dir.path().join("cohort");
    make_cohort(&cohort, 18, 0, 10);
    let out = dir.path().join("cv");
    run_ok(corticast().args([
        "cv",
        "--manifest",
        cohort.join("manifest.csv").to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
        "--folds",
        "3",
        "--max-epochs",
        "8",
        "--patience",
        "4",
    ]));
    let csv = std::fs::read_to_string(out.join("cv_report.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "run_or_fold,mae_weeks");
    assert_eq!(lines.len(), 4);
}

#[test]
fn config_file_layering_and_unknown_key_rejection() {
    let dir = TempDir::new().unwrap();
    let cohort = dir.path().join("cohort");
    make_cohort(&cohort, 20, 0, 11);
    let manifest = cohort.join("manifest.csv");

    // File sets max_epochs 6; the flag overrides patience.
    let config_path = dir.path().join("run.json");
    std::fs::write(
        &config_path,
        serde_json::json!({
            "manifest": manifest.to_str().unwrap(),
            "task": "scan_age",
            "max_epochs": 6,
            "patience": 50,
        })
        .to_string(),
    )
    .unwrap();
    let out = dir.path().join("run");
    run_ok(corticast().args([
        "train",
        "--config",
        config_path.to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
        "--patience",
        "3",
    ]));
    let log = std::fs::read_to_string(out.join("train_log.csv")).unwrap();
    // max_epochs from the file bounds the epoch count.
    assert_eq!(log.lines().count(), 6 + 1);

    // Unknown keys are rejected with a usage exit code.
    std::fs::write(&config_path, r#"{"max_epochs": 5, "learning_rat": 0.1}"#).unwrap();
    let (code, stderr) = run_code(corticast().args([
        "train",
        "--config",
        config_path.to_str().unwrap(),
        "--manifest",
        manifest.to_str().unwrap(),
        "--out-dir",
        dir.path().join("x").to_str().unwrap(),
    ]));
    assert_eq!(code, 2, "{stderr}");
    assert!(stderr.contains("learning_rat"), "{stderr}");
}

#[test]
fn missing_metadata_exits_4_listing_subjects() {
    let dir = TempDir::new().unwrap();
    let cohort = dir.path().join("cohort");
    make_cohort(&cohort, 12, 0, 12);
    let manifest = cohort.join("manifest.csv");
    // Blank one train subject's scan age.
    let text = std::fs::read_to_string(&manifest).unwrap();
    let mut lines: Vec<String> = text.lines().map(|l| l.to_string()).collect();
    let cols: Vec<&str> = lines[1].split(',').collect();
    let subject = cols[0].to_string();
    let mut cols: Vec<String> = cols.iter().map(|c| c.to_string()).collect();
    cols[3] = String::new();
    lines[1] = cols.join(",");
    std::fs::write(&manifest, lines.join("\n") + "\n").unwrap();

    let (code, stderr) = run_code(corticast().args([
        "train",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out-dir",
        dir.path().join("run").to_str().unwrap(),
        "--task",
        "scan_age",
        "--max-epochs",
        "5",
    ]));
    assert_eq!(code, 4, "{stderr}");
    assert!(stderr.contains(&subject), "{stderr}");
}

#[test]
fn explain_writes_group_maps_and_sidecar() {
    let dir = TempDir::new().unwrap();
    let cohort = dir.path().join("cohort");
    make_cohort(&cohort, 30, 0, 13);
    let manifest = cohort.join("manifest.csv");
    let run = dir.path().join("run");
    run_ok(corticast().args([
        "train",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out-dir",
        run.to_str().unwrap(),
        "--max-epochs",
        "10",
        "--patience",
        "5",
    ]));
    let out = dir.path().join("explain");
    run_ok(corticast().args([
        "explain",
        "--manifest",
        manifest.to_str().unwrap(),
        "--checkpoint",
        run.join("model.mlpc").to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
        "--backgrounds",
        "8",
        "--feature-channel",
        "myelin",
    ]));
    let sidecar: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("explain.json")).unwrap()).unwrap();
    assert_eq!(sidecar["method"], "deeplift_rescale");
    assert_eq!(sidecar["background_n"], 8);
    assert!(sidecar["completeness_residual"].as_f64().unwrap() < 1e-6);

    // At least one group map exists and carries the expected channels.
    let mut found = false;
    for name in ["groupmap_preterm.sfeat", "groupmap_term.sfeat"] {
        let path = out.join(name);
        if path.exists() {
            found = true;
            let field = corticast_core::mesh::read_feature_field(&path).unwrap();
            assert!(field.channel_names.iter().any(|c| c == "feature_myelin"));
            assert!(field.channel_names.iter().any(|c| c == "mean_myelin"));
            assert!(field.channel_names.iter().any(|c| c == "meanabs_myelin"));
        }
    }
    assert!(found);
}

#[test]
fn synth_refuses_to_overwrite() {
    let dir = TempDir::new().unwrap();
    let cohort = dir.path().join("cohort");
    make_cohort(&cohort, 6, 0, 14);
    let (code, stderr) = run_code(corticast().args([
        "synth",
        "--subjects",
        "6",
        "--order",
        "0",
        "--out-dir",
        cohort.to_str().unwrap(),
    ]));
    assert_eq!(code, 2, "{stderr}");
}

#[test]
fn bad_thread_env_exits_2() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("ico.smesh");
    let (code, stderr) = run_code(
        corticast()
            .env("CORTICAST_THREADS", "lots")
            .args(["icosphere", "--order", "1", "--out", out.to_str().unwrap()]),
    );
    assert_eq!(code, 2, "{stderr}");

    // 0 means automatic and succeeds.
    run_ok(
        corticast()
            .env("CORTICAST_THREADS", "0")
            .args(["icosphere", "--order", "1", "--out", out.to_str().unwrap()]),
    );
    // An explicit cap also works.
    let out2 = dir.path().join("ico2.smesh");
    run_ok(
        corticast()
            .env("CORTICAST_THREADS", "1")
            .args(["icosphere", "--order", "1", "--out", out2.to_str().unwrap()]),
    );
}

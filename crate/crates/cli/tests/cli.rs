use std::path::Path;
use std::process::{Command, Output};

fn advdiff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_advdiff"))
        .args(args)
        .env("ADVDIFF_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = advdiff(args);
    assert!(
        out.status.success(),
        "advdiff {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

#[test]
fn generate_is_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        ok(&[
            "generate",
            "--shift",
            "homophily",
            "--seed",
            "7",
            "--nodes",
            "40",
            "--out",
            out.to_str().unwrap(),
        ]);
    }
    let a = files(&tmp.path().join("a/homophily"));
    let b = files(&tmp.path().join("b/homophily"));
    assert_eq!(a.len(), 27, "manifest, latents, features, 12 graphs, 12 label files");
    assert_eq!(a, b);
}

#[test]
fn generate_manifest_describes_suite() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&[
        "generate",
        "--shift",
        "block",
        "--nodes",
        "100",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    let text = std::fs::read_to_string(tmp.path().join("block/manifest.json")).unwrap();
    let manifest = advdiff::io::parse_manifest(&text).unwrap();
    assert_eq!(manifest.n, 100);
    assert_eq!(manifest.graphs.len(), 12);
    assert_eq!(manifest.graphs[11].params.b, 16);
    assert_eq!(manifest.graphs[0].adjacency_gap, 0.0);
    assert!(manifest.graphs[2..].iter().all(|g| g.adjacency_gap > 0.0));
}

#[test]
fn unstable_theta_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"model": {"kind": "advdifformer_i", "beta": 1.0, "theta": 0.5}}"#,
    )
    .unwrap();
    let out = advdiff(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--nodes",
        "20",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("theta"));
}

#[test]
fn bad_flags_are_validation_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().to_str().unwrap();
    for args in [
        vec!["train", "--shift", "all", "--out", dir],
        vec!["sweep", "--models", "gcn", "--out", dir],
        vec!["generate", "--shift", "sideways", "--out", dir],
        vec!["probe", "--config", "/nonexistent/cfg.json", "--out", dir],
    ] {
        let code = advdiff(&args).status.code();
        assert!(matches!(code, Some(1) | Some(2)), "{args:?} exited with {code:?}");
        assert_ne!(code, Some(0));
    }
    assert_eq!(
        advdiff(&["train", "--shift", "all", "--out", dir]).status.code(),
        Some(1)
    );
}

#[test]
fn train_writes_fit_and_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().to_str().unwrap();
    let stdout = ok(&[
        "train",
        "--model",
        "diff_multilayer",
        "--shift",
        "density",
        "--nodes",
        "40",
        "--epochs",
        "5",
        "--out",
        dir,
    ]);
    assert!(stdout.contains("graph 12"));
    let fit = std::fs::read_to_string(tmp.path().join("fit.json")).unwrap();
    assert!(fit.contains("advdiff-fit/1") && fit.contains("diff_multilayer"));
    let ckpt = std::fs::read_to_string(tmp.path().join("checkpoint.json")).unwrap();
    let (spec, _) = advdiff::io::parse_checkpoint(&ckpt).unwrap();
    assert_eq!(spec.kind, advdiff::experiment::ModelKind::DiffMultilayer);
}

#[test]
fn sweep_single_model_writes_ten_rows_per_kind() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().to_str().unwrap();
    ok(&[
        "sweep",
        "--trials",
        "1",
        "--nodes",
        "100",
        "--models",
        "diff_linear",
        "--shift",
        "all",
        "--epochs",
        "20",
        "--out",
        dir,
    ]);
    let rows = advdiff::io::parse_sweep_csv(&std::fs::read_to_string(tmp.path().join("sweep.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 30);
    for kind in advdiff::synthetic::ShiftKind::ALL {
        assert_eq!(rows.iter().filter(|r| r.shift == kind).count(), 10);
        assert!(tmp.path().join(format!("sweep_{kind}.svg")).exists());
    }
    assert!(rows.iter().all(|r| r.status == "ok" && r.rmse.is_some()));
    let meta = std::fs::read_to_string(tmp.path().join("sweep_meta.json")).unwrap();
    assert!(meta.contains("advdiff-sweep/1"));
}

#[test]
fn probe_writes_rows_for_each_flip_count() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"probe": {"flip_counts": [0, 4, 16], "seeds": 2}}"#).unwrap();
    ok(&[
        "probe",
        "--config",
        cfg.to_str().unwrap(),
        "--nodes",
        "50",
        "--models",
        "diff_linear,advdifformer_s",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    let rows =
        advdiff::commands::parse_probe_csv(&std::fs::read_to_string(tmp.path().join("probe.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 2 * 3 * 2);
    assert!(rows
        .iter()
        .filter(|r| r.flips == 0)
        .all(|r| r.change == 0.0 && r.adjacency_gap == 0.0));
    assert!(rows.iter().filter(|r| r.flips > 0).all(|r| r.adjacency_gap > 0.0));
}

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use aev_core::harness::{CHECKPOINT_FILE, MANIFEST_FILE, RESULTS_FILE};
use aev_core::theory::standard_sweep;

fn aev(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aev"))
        .args(args)
        .output()
        .expect("spawn aev")
}

fn ok(args: &[&str]) -> String {
    let out = aev(args);
    assert!(
        out.status.success(),
        "aev {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    aev(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A short training run shared by the tests in this file.
fn trained() -> &'static Path {
    static DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        ok(&[
            "train",
            "--model",
            "mlp:32",
            "--epochs",
            "5",
            "--out",
            s(dir.path()),
        ]);
        dir
    })
    .path()
}

fn checkpoint() -> PathBuf {
    trained().join(CHECKPOINT_FILE)
}

fn evaluate(out: &Path, preset: &str, repetitions: &str) {
    ok(&[
        "evaluate",
        "--checkpoint",
        s(&checkpoint()),
        "--preset",
        preset,
        "--explainers",
        "vg,ig,gxi,random",
        "--k",
        "4",
        "--repetitions",
        repetitions,
        "--out",
        s(out),
    ]);
}

#[test]
fn evaluate_writes_one_row_per_explainer_ratio_and_repetition() {
    let dir = tempfile::tempdir().unwrap();
    evaluate(dir.path(), "KAFT-C", "5");
    let csv = std::fs::read_to_string(dir.path().join(RESULTS_FILE)).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("scheme,explainer,ratio,repetition,accuracy,seed")
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 4 * 9 * 5);
    for e in ["vg", "ig", "gxi", "random"] {
        assert_eq!(
            rows.iter()
                .filter(|r| r.split(',').nth(1) == Some(e))
                .count(),
            45
        );
    }
    for r in &rows {
        let acc: f64 = r.split(',').nth(4).unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }

    // Replaying the manifest reproduces every output.
    let again = dir.path().join("again");
    ok(&[
        "evaluate",
        "--manifest",
        s(&dir.path().join(MANIFEST_FILE)),
        "--out",
        s(&again),
    ]);
    assert_eq!(
        csv,
        std::fs::read_to_string(again.join(RESULTS_FILE)).unwrap()
    );
}

fn read_curves(dir: &Path) -> Vec<(String, f64, f64)> {
    std::fs::read_to_string(dir.join("curves.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (
                f[1].to_string(),
                f[2].parse().unwrap(),
                f[3].parse().unwrap(),
            )
        })
        .collect()
}

#[test]
fn delta_acc_report_matches_the_curves() {
    let dir = tempfile::tempdir().unwrap();
    let (keep, remove) = (dir.path().join("keep"), dir.path().join("remove"));
    evaluate(&keep, "KAFT-C", "2");
    evaluate(&remove, "RAFT-C-abs", "2");
    let json = ok(&[
        "report",
        "--delta-acc",
        "--format",
        "json",
        s(&keep),
        s(&remove),
    ]);
    let report: serde_json::Value = serde_json::from_str(&json).unwrap();
    let (k, r) = (read_curves(&keep), read_curves(&remove));
    for e in ["vg", "ig", "gxi", "random"] {
        let ks: Vec<_> = k.iter().filter(|c| c.0 == e).collect();
        let rs: Vec<_> = r.iter().filter(|c| c.0 == e).collect();
        let mut area = 0.0;
        for i in 1..ks.len() {
            let d0 = ks[i - 1].2 - rs[i - 1].2;
            let d1 = ks[i].2 - rs[i].2;
            area += (ks[i].1 - ks[i - 1].1) * (d0 + d1) / 2.0;
        }
        let row = report["rows"]
            .as_array()
            .unwrap()
            .iter()
            .find(|row| row["explainer"] == e)
            .unwrap();
        let got = row["delta_acc"].as_f64().unwrap();
        assert!((got - area).abs() <= 1e-9, "{e}: {got} vs {area}");
    }
    // The persisted per-run results give the same areas.
    let csv = ok(&["report", "--format", "csv", s(&keep), s(&remove)]);
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn theory_sweep_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep.csv");
    let run = aev(&["theory-sweep", "--p", "0.1:0.9:0.05", "--out", s(&out)]);
    assert!(run.status.success());
    let text = std::fs::read_to_string(&out).unwrap();
    let rows = standard_sweep(&[2, 5, 10]);
    assert_eq!(text.lines().count(), rows.len() + 1);
    let failing = text
        .lines()
        .skip(1)
        .filter(|l| l.ends_with(",false"))
        .count();
    assert_eq!(failing, rows.iter().filter(|r| !r.report.holds).count());
    assert!(String::from_utf8_lossy(&run.stderr).contains(&format!("{} grid points", rows.len())));
}

#[test]
fn wpc_fuzz_reports_no_violations() {
    let json = ok(&["wpc-fuzz", "--instances", "5000", "--seed", "4"]);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["instances"], 5000);
    assert_eq!(v["violations"], 0);
}

#[test]
fn exit_codes_follow_error_categories() {
    let dir = tempfile::tempdir().unwrap();
    let out = s(dir.path());

    assert_eq!(
        code(&["train", "--dataset", "synthetic:nope", "--out", out]),
        2
    );
    assert_eq!(
        code(&["evaluate", "--checkpoint", s(&checkpoint()), "--out", out]),
        2
    );
    assert_eq!(code(&["theory-sweep", "--gamma", "0.5:0.1:0.1"]), 2);

    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "bogus = 1\n").unwrap();
    assert_eq!(code(&["evaluate", "--config", s(&config), "--out", out]), 2);

    // A synthetic model on MNIST: the manifest next to the checkpoint fails the
    // dataset hash, and a bare copy fails on input shape.
    let mnist = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/mnist-subset");
    let dataset = format!("mnist:{mnist}");
    assert_eq!(
        code(&[
            "explain",
            "--dataset",
            &dataset,
            "--checkpoint",
            s(&checkpoint()),
            "--limit",
            "1",
            "--out",
            out
        ]),
        5
    );
    let copy = dir.path().join("copy.aevnet");
    std::fs::copy(checkpoint(), &copy).unwrap();
    assert_eq!(
        code(&[
            "explain",
            "--dataset",
            &dataset,
            "--checkpoint",
            s(&copy),
            "--limit",
            "1",
            "--out",
            out
        ]),
        3
    );

    let corrupt = dir.path().join("corrupt.aevnet");
    std::fs::write(&corrupt, b"not a network").unwrap();
    assert_eq!(
        code(&["explain", "--checkpoint", s(&corrupt), "--out", out]),
        4
    );

    assert_eq!(
        code(&[
            "explain",
            "--checkpoint",
            s(&dir.path().join("missing")),
            "--out",
            out
        ]),
        7
    );

    // A manifest whose dataset hash no longer matches is a provenance failure.
    let manifest = std::fs::read_to_string(trained().join(MANIFEST_FILE)).unwrap();
    let v: serde_json::Value = serde_json::from_str(&manifest).unwrap();
    let hash = v["dataset_hash"].as_str().unwrap();
    let tampered_dir = dir.path().join("tampered");
    std::fs::create_dir(&tampered_dir).unwrap();
    std::fs::write(
        tampered_dir.join(MANIFEST_FILE),
        manifest.replace(hash, &"0".repeat(64)),
    )
    .unwrap();
    assert_eq!(
        code(&[
            "train",
            "--manifest",
            s(&tampered_dir.join(MANIFEST_FILE)),
            "--out",
            out
        ]),
        5
    );
}

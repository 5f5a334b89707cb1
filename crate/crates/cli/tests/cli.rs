use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
train_demos = 2
test_demos = 1
test_elements = 2
lift_step = 0.02
sweep_points = 4
densities = [90, 45]
verify_samples = 20
grid = "table1_r"

[letters]
samples = 40

[policy]
features = 200
stride = 2
"#;

fn symmlift(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_symmlift")).args(args).output().unwrap()
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("small.toml");
    std::fs::write(&path, SMALL).unwrap();
    path.to_string_lossy().into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn verify_passes_and_detects_a_broken_reflection() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("verify");
    let ok = symmlift(&["verify", "--config", &cfg, "--out", s(&out)]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(out.join("verify.json").is_file());

    let bad = symmlift(&["verify", "--config", &cfg, "--out", s(&out), "--break-reflection"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("descend"));
}

#[test]
fn usage_errors_exit_with_two() {
    let missing = symmlift(&["verify", "--robot", "/definitely/not/here.json"]);
    assert_eq!(missing.status.code(), Some(2));
    assert_eq!(symmlift(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(symmlift(&["augment", "--grid", "fig5_7deg"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "seed = \"forty-two\"\n").unwrap();
    assert_eq!(symmlift(&["verify", "--config", s(&cfg)]).status.code(), Some(2));
}

#[test]
fn augment_train_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("run");
    let a = symmlift(&["augment", "--config", &cfg, "--out", s(&out)]);
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    let manifest = std::fs::read_to_string(out.join("augmented/manifest.json")).unwrap();
    assert!(manifest.contains("\"kind\": \"augmented\""));
    // 2 demonstrations × 12 rotations.
    let csvs = std::fs::read_dir(out.join("augmented"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "csv"))
        .count();
    assert_eq!(csvs, 24);

    let model = out.join("policy.json");
    let t = symmlift(&[
        "train",
        "--config",
        &cfg,
        "--out",
        s(&out),
        "--data",
        s(&out.join("augmented")),
        "--model",
        s(&model),
    ]);
    assert_eq!(t.status.code(), Some(0), "{}", String::from_utf8_lossy(&t.stderr));
    assert!(model.is_file());

    let e = symmlift(&["eval", "--config", &cfg, "--out", s(&out), "--model", s(&model)]);
    assert_eq!(e.status.code(), Some(0), "{}", String::from_utf8_lossy(&e.stderr));
    let csv = std::fs::read_to_string(out.join("eval.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.starts_with("policy,test_set,rmse_mean"));
}

#[test]
fn table1_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let r = symmlift(&["reproduce-table1", "--config", &cfg, "--seed", "42", "--out", s(out)]);
        assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    }
    for f in ["table1.csv", "table1_cells.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
    }
    let table = std::fs::read_to_string(a.join("table1.csv")).unwrap();
    assert_eq!(table.lines().next().unwrap(), "policy,Original,G_R,G_RT,G_MRT");
    assert_eq!(table.lines().count(), 5);
    for p in ["pi", "pi_R", "pi_RT", "pi_MRT"] {
        assert!(a.join(format!("fig4_{p}.svg")).is_file());
    }
    let other = dir.path().join("c");
    let r = symmlift(&["reproduce-table1", "--config", &cfg, "--seed", "7", "--out", s(&other)]);
    assert_eq!(r.status.code(), Some(0));
    assert_ne!(std::fs::read(a.join("table1_cells.csv")).unwrap(), std::fs::read(other.join("table1_cells.csv")).unwrap());
}

#[test]
fn density_sweep_writes_curves() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("sweep");
    let r = symmlift(&["density-sweep", "--config", &cfg, "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    let csv = std::fs::read_to_string(out.join("density_sweep.csv")).unwrap();
    // header + 2 densities × 4 angles
    assert_eq!(csv.lines().count(), 9);
    assert!(out.join("density_sweep.svg").is_file());
    assert_eq!(std::fs::read_to_string(out.join("density_worst.csv")).unwrap().lines().count(), 3);
}

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use metasage_core::eval::parse_runs_csv;
use metasage_core::io::{from_native_json, parse_lib};
use tempfile::TempDir;

const SUBCOMMANDS: &[&str] = &["gen", "pretrain", "distill", "train-sml", "adapt", "eval", "report", "run"];

fn metasage(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_metasage"))
        .args(args)
        .current_dir(cwd)
        .env_remove("METASAGE_SEED")
        .env_remove("METASAGE_OUT")
        .env_remove("METASAGE_TASK")
        .env_remove("METASAGE_CONFIG")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> Output {
    let out = metasage(args, cwd);
    assert!(
        out.status.success(),
        "metasage {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn files(dir: &Path, ext: &str) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == ext) && !p.ends_with("manifest.json"))
        .collect();
    v.sort();
    v
}

/// A model small enough to train in a second.
const TINY: &str = r#"
task = "tsp"
seed = 3

[model]
embed_dim = 16
heads = 4
layers = 1
ff_dim = 32

[train]
n_train = 8
batch_instances = 4
multistart = 4
epochs = 1
steps_per_epoch = 3

[adapt]
hidden = 16
"#;

fn tiny_policy(dir: &Path) -> PathBuf {
    std::fs::write(dir.join("tiny.toml"), TINY).unwrap();
    ok(&["pretrain", "--config", "tiny.toml", "--out", "policy"], dir);
    dir.join("policy")
}

#[test]
fn every_subcommand_has_help() {
    let tmp = TempDir::new().unwrap();
    for sub in SUBCOMMANDS {
        let out = ok(&[sub, "--help"], tmp.path());
        let text = String::from_utf8_lossy(&out.stdout);
        assert!(text.contains("Usage"), "{sub}: {text}");
    }
    let out = ok(&["--help"], tmp.path());
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in SUBCOMMANDS {
        assert!(text.contains(sub), "top-level help misses {sub}");
    }
}

#[test]
fn gen_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    ok(&["gen", "tsp", "20", "5", "--seed", "9", "--out", "a"], tmp.path());
    ok(&["gen", "tsp", "20", "5", "--seed", "9", "--out", "b"], tmp.path());
    ok(&["gen", "tsp", "20", "5", "--seed", "10", "--out", "c"], tmp.path());
    let a = files(&tmp.path().join("a"), "json");
    assert_eq!(a.len(), 5);
    for p in &a {
        let name = p.file_name().unwrap();
        let x = std::fs::read(p).unwrap();
        assert_eq!(x, std::fs::read(tmp.path().join("b").join(name)).unwrap());
        assert_ne!(x, std::fs::read(tmp.path().join("c").join(name)).unwrap());
        from_native_json(&String::from_utf8(x).unwrap()).unwrap();
    }
    assert_eq!(
        std::fs::read(tmp.path().join("a/manifest.json")).unwrap(),
        std::fs::read(tmp.path().join("b/manifest.json")).unwrap()
    );
}

#[test]
fn gen_lib_emits_parser_compatible_vrp() {
    let tmp = TempDir::new().unwrap();
    ok(&["gen", "cvrp", "15", "4", "--format", "lib", "--out", "lib"], tmp.path());
    ok(&["gen", "cvrp", "15", "4", "--out", "native"], tmp.path());
    let lib = files(&tmp.path().join("lib"), "vrp");
    let native = files(&tmp.path().join("native"), "json");
    assert_eq!(lib.len(), 4);
    for (l, n) in lib.iter().zip(&native) {
        let doc = parse_lib(&std::fs::read_to_string(l).unwrap()).unwrap();
        let from_lib = doc.to_instance().unwrap();
        let orig = from_native_json(&std::fs::read_to_string(n).unwrap()).unwrap();
        assert_eq!(from_lib.n(), orig.n());
        assert_eq!(from_lib.demands, orig.demands);
        let ratio = from_lib.dist(0, 1) / orig.dist(0, 1);
        for i in 0..orig.n() {
            for j in 0..orig.n() {
                assert!((from_lib.dist(i, j) - ratio * orig.dist(i, j)).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn missing_policy_is_an_actionable_error() {
    let tmp = TempDir::new().unwrap();
    let out = metasage(&["adapt", "--policy", "nowhere", "--n", "10", "--count", "2", "--out", "x"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("nowhere") && err.contains("policy.ckpt") && err.contains("pretrain"), "{err}");
    assert!(out.stdout.is_empty());

    let out = metasage(&["gen", "tsp", "1", "2", "--out", "y"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    let out = metasage(&["adapt", "--mode", "bogus"], tmp.path());
    assert!(!out.status.success());
}

#[test]
fn unknown_config_keys_are_rejected() {
    let tmp = TempDir::new().unwrap();
    std::fs::write(tmp.path().join("bad.toml"), "[adapt]\nlamda = 0.1\n").unwrap();
    let out = metasage(&["gen", "--config", "bad.toml", "--out", "z"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lamda"));
}

#[test]
fn adapt_without_iterations_equals_zero_shot_eval() {
    let tmp = TempDir::new().unwrap();
    let policy = tiny_policy(tmp.path());
    let p = policy.to_str().unwrap();
    ok(&["gen", "tsp", "12", "6", "--out", "inst"], tmp.path());
    ok(
        &["adapt", "--policy", p, "--instances", "inst", "--iters", "0", "--multistart", "12", "--out", "ad"],
        tmp.path(),
    );
    ok(&["eval", "--policy", p, "--instances", "inst", "--baseline", "nn", "--out", "ev"], tmp.path());
    let ad = parse_runs_csv(&std::fs::read_to_string(tmp.path().join("ad/results.csv")).unwrap()).unwrap();
    let ev = parse_runs_csv(&std::fs::read_to_string(tmp.path().join("ev/results.csv")).unwrap()).unwrap();
    let model: Vec<_> = ev.iter().filter(|r| r.method == "model").collect();
    assert_eq!(ad.len(), 6);
    assert_eq!(model.len(), 6);
    for (a, e) in ad.iter().zip(model) {
        assert_eq!(a.instance, e.instance);
        assert_eq!(a.obj, e.obj);
    }
    let gap = std::fs::read_to_string(tmp.path().join("ev/gap.csv")).unwrap();
    assert!(gap.starts_with("instance,method,obj,obj_B,gap_pct,seconds\n"));
}

#[test]
fn paired_modes_and_report() {
    let tmp = TempDir::new().unwrap();
    let policy = tiny_policy(tmp.path());
    let p = policy.to_str().unwrap();
    for mode in ["sage", "eas", "as"] {
        ok(
            &["adapt", "--policy", p, "--mode", mode, "--n", "10", "--count", "3", "--iters", "4", "--multistart", "6", "--out", mode],
            tmp.path(),
        );
    }
    let snap = std::fs::read_to_string(tmp.path().join("as/config.toml")).unwrap();
    assert!(snap.contains("mode = \"as\""));
    assert!(snap.contains("delta = 0.00026"), "{snap}");
    ok(&["eval", "--policy", p, "--n", "10", "--count", "3", "--baseline", "exact", "--out", "base"], tmp.path());
    ok(
        &["report", "--runs", "sage/results.csv", "--runs", "eas/results.csv", "--baseline", "base/results.csv", "--baseline-method", "exact", "--out", "rep"],
        tmp.path(),
    );
    let gap = std::fs::read_to_string(tmp.path().join("rep/gap.csv")).unwrap();
    // exact optimum bounds every method, so gaps are non-negative
    for line in gap.lines().skip(1) {
        let g: f64 = line.split(',').nth(4).unwrap().parse().unwrap();
        assert!(g >= -1e-9, "{line}");
    }
    let summary = std::fs::read_to_string(tmp.path().join("rep/summary.csv")).unwrap();
    assert!(summary.contains("sage,3,") && summary.contains("eas,3,"), "{summary}");
    let curves = std::fs::read_to_string(tmp.path().join("sage/curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), 1 + 3 * 5);
}

#[test]
fn rerun_from_snapshot_is_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let policy = tiny_policy(tmp.path());
    let p = policy.to_str().unwrap();
    ok(
        &["adapt", "--policy", p, "--n", "10", "--count", "3", "--iters", "5", "--multistart", "6", "--seed", "4", "--out", "first"],
        tmp.path(),
    );
    ok(&["run", "--config", "first/config.toml", "--out", "again"], tmp.path());
    for f in ["results.csv", "curves.csv"] {
        assert_eq!(
            std::fs::read(tmp.path().join("first").join(f)).unwrap(),
            std::fs::read(tmp.path().join("again").join(f)).unwrap(),
            "{f}"
        );
    }
    // the environment overrides the default seed
    let out = Command::new(env!("CARGO_BIN_EXE_metasage"))
        .args(["gen", "tsp", "8", "1", "--out", "env"])
        .env("METASAGE_SEED", "77")
        .current_dir(tmp.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    let snap = std::fs::read_to_string(tmp.path().join("env/config.toml")).unwrap();
    assert!(snap.contains("seed = 77"));
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use tempfile::TempDir;

const SMALL: [&str; 8] = ["--set", "hidden=16", "--set", "layers=1", "--set", "heads=2", "--set", "ff=32"];

fn qreduce(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qreduce"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = qreduce(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path, extra: &[&str]) {
    let mut args = vec!["gen-data", "--out", s(dir)];
    args.extend_from_slice(extra);
    ok(&args);
}

struct Trained {
    _root: TempDir,
    data: PathBuf,
    models: PathBuf,
}

/// A small corpus with both heads trained once for every test.
fn trained() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let root = TempDir::new().unwrap();
        let data = root.path().join("data");
        let models = root.path().join("models");
        gen(&data, &["--sessions", "400", "--seed", "3"]);
        for objective in ["core", "sub"] {
            let mut args = vec![
                "train", "--data", s(&data), "--out", s(&models), "--objective", objective, "--epochs", "2", "--seed", "3",
            ];
            args.extend_from_slice(&SMALL);
            ok(&args);
        }
        Trained {
            _root: root,
            data,
            models,
        }
    })
}

#[test]
fn gen_data_is_deterministic() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    gen(a.path(), &["--sessions", "500", "--seed", "7"]);
    gen(b.path(), &["--sessions", "500", "--seed", "7"]);
    for f in ["train.tsv", "valid.tsv", "test.tsv", "manifest.json"] {
        let x = fs::read(a.path().join(f)).unwrap();
        assert!(!x.is_empty(), "{f}");
        assert_eq!(x, fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(a.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["sessions"], 500);
    let train_lines = fs::read_to_string(a.path().join("train.tsv")).unwrap().lines().count();
    assert_eq!(manifest["train"], train_lines);
}

#[test]
fn manifest_counts_corrupted_pairs() {
    let d = TempDir::new().unwrap();
    gen(d.path(), &["--sessions", "2000", "--label-noise", "0.2", "--seed", "1"]);
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(d.path().join("manifest.json")).unwrap()).unwrap();
    let corrupted = manifest["corrupted"].as_u64().unwrap();
    // Binomial(2000, 0.2): mean 400, sd ~18.
    assert!((310..=490).contains(&corrupted), "{corrupted}");
}

fn report(stdout: &str) -> serde_json::Value {
    serde_json::from_str(stdout).unwrap()
}

#[test]
fn positional_baselines_on_trailing_noise() {
    let d = TempDir::new().unwrap();
    gen(d.path(), &["--sessions", "600", "--placement", "trailing", "--set", "max_noise=1"]);
    let right = report(&ok(&["eval", "--data", s(d.path()), "--reducer", "rightmost", "--nq", "1"]));
    assert_eq!(right["overall"]["em"], 1.0);
    assert!(right["overall"]["n"].as_u64().unwrap() > 0);
    let left = report(&ok(&["eval", "--data", s(d.path()), "--reducer", "leftmost"]));
    assert!(left["overall"]["em"].as_f64().unwrap() < 0.05);
    for name in ["df-rm", "cdf-rm"] {
        let r = report(&ok(&["eval", "--data", s(d.path()), "--reducer", name]));
        assert!(r["overall"]["em"].as_f64().unwrap() > 0.9, "{name}");
    }
}

#[test]
fn zero_alpha_matches_sub_only() {
    let t = trained();
    let sub = ok(&["eval", "--data", s(&t.data), "--models", s(&t.models), "--reducer", "sub"]);
    let agg = ok(&["eval", "--data", s(&t.data), "--models", s(&t.models), "--reducer", "agg", "--alpha", "0"]);
    assert_eq!(sub, agg);
    let core = report(&ok(&["eval", "--data", s(&t.data), "--models", s(&t.models), "--reducer", "core"]));
    assert!(core["overall"]["n"].as_u64().unwrap() > 0);
}

#[test]
fn sweep_has_default_grid_rows() {
    let t = trained();
    let table = ok(&["sweep-alpha", "--data", s(&t.data), "--models", s(&t.models)]);
    let rows: Vec<Vec<&str>> = table.lines().map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows[0], ["alpha", "em", "acc", "p", "r", "f1"]);
    assert_eq!(rows.len(), 9);
    let alphas: Vec<&str> = rows[1..].iter().map(|r| r[0]).collect();
    assert_eq!(alphas, ["0", "0.125", "0.25", "0.5", "1", "2", "4", "8"]);
    let sub = report(&ok(&["eval", "--data", s(&t.data), "--models", s(&t.models), "--reducer", "sub"]));
    let em0: f64 = rows[1][1].parse().unwrap();
    assert!((em0 - sub["overall"]["em"].as_f64().unwrap()).abs() < 1e-6);
    assert_eq!(table, ok(&["sweep-alpha", "--data", s(&t.data), "--models", s(&t.models)]));
}

#[test]
fn reduce_single_queries() {
    let t = trained();
    let test = fs::read_to_string(t.data.join("test.tsv")).unwrap();
    let original = test.lines().next().unwrap().split('\t').nth(1).unwrap().to_string();
    let n = original.split(' ').count();

    let out = qreduce(&["reduce", "--models", s(&t.models), "--verbose", &original]);
    assert!(out.status.success());
    let reduced = String::from_utf8(out.stdout).unwrap();
    let kept: Vec<&str> = reduced.trim().split(' ').collect();
    assert!(!kept.is_empty() && kept.len() <= n);
    let stderr = String::from_utf8(out.stderr).unwrap();
    let rounds = stderr.lines().filter(|l| l.starts_with("round ")).count();
    assert!((1..=n).contains(&rounds), "{stderr}");

    for reducer in ["core", "sub", "agg"] {
        assert_eq!(ok(&["reduce", "--models", s(&t.models), "--reducer", reducer, "single"]), "single\n");
    }

    let empty = qreduce(&["reduce", "--models", s(&t.models), "  "]);
    assert_eq!(empty.status.code(), Some(2));
}

#[test]
fn config_file_then_flags() {
    let t = trained();
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.conf");
    fs::write(&cfg, "# three layers\nepochs = 2\nbatch_size = 50\nwarmup_ratio = 0.5\n").unwrap();
    let out = dir.path().join("m");
    let mut args = vec![
        "train", "--config", s(&cfg), "--data", s(&t.data), "--out", s(&out), "--epochs", "1",
    ];
    args.extend_from_slice(&SMALL);
    let stats = ok(&args);
    // The flag beats the file: one epoch, one stats line.
    assert_eq!(stats.lines().count(), 1);
    assert!(out.join("core.ckpt").is_file());

    fs::write(&cfg, "epoch = 2\n").unwrap();
    let bad = qreduce(&["train", "--config", s(&cfg), "--data", s(&t.data), "--out", s(&out)]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("unknown configuration key"));
}

#[test]
fn denoised_training_drops_from_epoch_two() {
    let d = TempDir::new().unwrap();
    let data = d.path().join("data");
    let out = d.path().join("m");
    gen(&data, &["--sessions", "300", "--seed", "5"]);
    let mut args = vec![
        "train", "--data", s(&data), "--out", s(&out), "--objective", "sub", "--denoise", "--epochs", "2",
    ];
    args.extend_from_slice(&SMALL);
    let stats = ok(&args);
    let epochs: Vec<serde_json::Value> = stats.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(epochs.len(), 2);
    assert_eq!(epochs[0]["dropped"], 0);
    assert!(epochs[1]["dropped"].as_u64().unwrap() > 0);
    assert_eq!(fs::read_to_string(out.join("sub.stats.jsonl")).unwrap(), stats);
}

#[test]
fn training_is_repeatable() {
    let t = trained();
    let d = TempDir::new().unwrap();
    let mut args = vec![
        "train", "--data", s(&t.data), "--out", s(d.path()), "--objective", "core", "--epochs", "2", "--seed", "3",
    ];
    args.extend_from_slice(&SMALL);
    ok(&args);
    assert_eq!(
        fs::read(d.path().join("core.ckpt")).unwrap(),
        fs::read(t.models.join("core.ckpt")).unwrap()
    );
}

#[test]
fn bad_inputs_fail() {
    let d = TempDir::new().unwrap();
    assert!(!qreduce(&["eval", "--data", s(d.path()), "--reducer", "rightmost"]).status.success());
    assert!(!qreduce(&["gen-data", "--out", s(d.path()), "--label-noise", "1.5"]).status.success());
    assert!(!qreduce(&["eval", "--data", s(d.path()), "--reducer", "nope"]).status.success());
}

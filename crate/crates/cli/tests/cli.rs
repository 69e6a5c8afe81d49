use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &str = "\
classes = 4
n_per_class = 30
test_per_class = 10
open_classes = 2
hidden = 8
T_warmup = 3
T_max = 6
phi = 2
seed = 5
";

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ooc-pll"));
    c.env_remove("OOC_PLL_THREADS");
    c
}

fn config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.cfg");
    fs::write(&path, body).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn rows(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count() - 1
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_writes_the_dataset_files() {
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path(), SMALL);
    let out = dir.path().join("data");
    let o = run(&["synth", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    // 120 clean rows plus floor(0.4 * 120) open-set rows.
    assert_eq!(rows(&out.join("train.csv")), 168);
    assert_eq!(rows(&out.join("train_sidecar.csv")), 168);
    assert_eq!(rows(&out.join("test.csv")), 40);
    assert_eq!(rows(&out.join("validation.csv")), 40);
    let sidecar = fs::read_to_string(out.join("train_sidecar.csv")).unwrap();
    let count = |t: &str| sidecar.lines().filter(|l| l.contains(t)).count();
    assert_eq!(count("open_set"), 48);
    assert_eq!(count("closed_set"), 24);
}

#[test]
fn train_writes_artifacts_and_reruns_identically() {
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path(), &format!("{SMALL}dump_selection = true\n"));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = run(&["train", "--config", s(&cfg), "--out", s(out)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["metrics.csv", "model.ckpt", "confidence.csv", "loss_hist.csv", "manifest.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_eq!(rows(&a.join("metrics.csv")), 6);
    let dumps = fs::read_dir(a.join("selection")).unwrap().count();
    assert_eq!(dumps, 3);
    let first = fs::read_to_string(a.join("selection/epoch_0003.csv")).unwrap();
    assert!(first.starts_with("index,l_w,lbar_w,assigned,truth\n"));
    assert_eq!(first.lines().count(), 169);
    let conf = fs::read_to_string(a.join("confidence.csv")).unwrap();
    assert!(conf.starts_with("index,truth_type,top_label,top_confidence,"));
}

#[test]
fn seed_flag_and_thread_count() {
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path(), SMALL);
    let out = |name: &str| dir.path().join(name);
    let base = run(&["train", "--config", s(&cfg), "--out", s(&out("base"))]);
    let threaded = bin()
        .args(["train", "--config", s(&cfg), "--out", s(&out("threads"))])
        .env("OOC_PLL_THREADS", "2")
        .output()
        .unwrap();
    let reseeded = run(&["train", "--config", s(&cfg), "--out", s(&out("seed")), "--seed", "6"]);
    for o in [&base, &threaded, &reseeded] {
        assert_eq!(code(o), 0);
    }
    let metrics = |n: &str| fs::read(out(n).join("metrics.csv")).unwrap();
    assert_eq!(metrics("base"), metrics("threads"));
    assert_ne!(metrics("base"), metrics("seed"));
    let manifest = fs::read_to_string(out("threads").join("manifest.json")).unwrap();
    assert!(manifest.contains("\"threads\": 2"));
}

#[test]
fn train_from_a_data_directory_with_ablation() {
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path(), SMALL);
    let data = dir.path().join("data");
    assert_eq!(code(&run(&["synth", "--config", s(&cfg), "--out", s(&data)])), 0);
    let from_disk = dir.path().join("disk");
    let synthesized = dir.path().join("mem");
    let o = run(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&from_disk), "--ablate", "rld"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(code(&run(&["train", "--config", s(&cfg), "--out", s(&synthesized), "--ablate", "rld"])), 0);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(from_disk.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["disable_rld"], serde_json::Value::Bool(true));
    assert_eq!(manifest["config"]["disable_ld"], serde_json::Value::Bool(false));
    assert_eq!(
        fs::read(from_disk.join("metrics.csv")).unwrap(),
        fs::read(synthesized.join("metrics.csv")).unwrap()
    );
}

#[test]
fn sweep_writes_one_row_per_value() {
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path(), SMALL);
    let out = dir.path().join("sweep");
    let o = run(&["sweep", "--config", s(&cfg), "--out", s(&out), "--axis", "alpha", "--values", "0.5,1,2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("alpha,0.5,"));
    assert!(out.join("alpha_2").join("metrics.csv").exists());
}

#[test]
fn sweep_over_a_data_axis_regenerates() {
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path(), SMALL);
    let out = dir.path().join("sweep");
    let o = run(&["sweep", "--config", s(&cfg), "--out", s(&out), "--axis", "tau2", "--values", "0.2,0.4"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(rows(&out.join("summary.csv")), 2);
}

#[test]
fn configuration_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let good = config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let bad_key = dir.path().join("bad.cfg");
    fs::write(&bad_key, "nonsense = 1\n").unwrap();
    let bad_value = dir.path().join("range.cfg");
    fs::write(&bad_value, format!("{SMALL}q = 1.5\n")).unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec!["train", "--config", s(&bad_key), "--out", s(&out)],
        vec!["train", "--config", s(&bad_value), "--out", s(&out)],
        vec!["train", "--config", "/no/such/file.cfg", "--out", s(&out)],
        vec!["train", "--config", s(&good), "--out", s(&out), "--ablate", "everything"],
        vec!["sweep", "--config", s(&good), "--out", s(&out), "--axis", "colour", "--values", "1"],
        vec!["sweep", "--config", s(&good), "--out", s(&out), "--axis", "alpha", "--values"],
        vec!["sweep", "--config", s(&good), "--out", s(&out), "--axis", "q", "--values", "0.1", "--data", s(dir.path())],
        vec!["sweep", "--config", s(&good), "--out", s(&out), "--axis", "alpha", "--values", "1,abc"],
    ];
    for args in cases {
        let o = run(&args);
        assert_eq!(code(&o), 2, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert!(!out.join("alpha_1").exists());
}

#[test]
fn io_errors_exit_3() {
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path(), SMALL);
    let data = dir.path().join("data");
    let out = dir.path().join("out");
    let missing = run(&["train", "--config", s(&cfg), "--data", s(&dir.path().join("none")), "--out", s(&out)]);
    assert_eq!(code(&missing), 3);

    assert_eq!(code(&run(&["synth", "--config", s(&cfg), "--out", s(&data)])), 0);
    let train = data.join("train.csv");
    let text = fs::read_to_string(&train).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[1] = "not,a,row";
    fs::write(&train, lines.join("\n")).unwrap();
    let malformed = run(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&out)]);
    assert_eq!(code(&malformed), 3, "{}", String::from_utf8_lossy(&malformed.stderr));

    // The output path is a file, so the run directory cannot be created.
    let blocker = dir.path().join("blocker");
    fs::write(&blocker, "").unwrap();
    let unwritable = run(&["train", "--config", s(&cfg), "--out", s(&blocker.join("run"))]);
    assert_eq!(code(&unwritable), 3);
}

#[test]
fn divergence_exits_4() {
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path(), &format!("{SMALL}base_lr = 1e12\nmomentum = 0\n"));
    let o = run(&["train", "--config", s(&cfg), "--out", s(&dir.path().join("out"))]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
}

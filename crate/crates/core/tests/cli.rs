use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn superexp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_superexp"))
        .args(args)
        .current_dir(dir)
        .env("SOURCE_DATE_EPOCH", "1700000000")
        .output()
        .expect("run superexp")
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

fn manifest(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).expect("manifest exists")).expect("manifest is JSON")
}

#[test]
fn help_and_version_succeed() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&superexp(dir.path(), &["--help"])), 0);
    assert_eq!(code(&superexp(dir.path(), &["--version"])), 0);
    assert_eq!(code(&superexp(dir.path(), &["approximate", "--help"])), 0);
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cases: [&[&str]; 6] = [
        &[],
        &["frobnicate"],
        &["verify", "nonsense"],
        &["approximate", "--activation", "euaf", "--target", "nope", "--eps", "0.2", "--out", "n.json", "--report", "r.csv"],
        &["approximate", "--activation", "euaf", "--target", "linear", "--eps", "-1", "--out", "n.json", "--report", "r.csv"],
        &["approximate", "--activation", "tanh", "--target", "linear", "--eps", "0.2", "--out", "n.json", "--report", "r.csv"],
    ];
    for args in cases {
        let out = superexp(d, args);
        assert_eq!(code(&out), 1, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    assert!(!d.join("n.json").exists());
}

#[test]
fn approximate_writes_outputs_and_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = superexp(
        d,
        &["approximate", "--activation", "peuaf", "--target", "gauss", "--eps", "0.25", "--out", "o/net.json", "--report", "o/report.csv"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = fs::read_to_string(d.join("o/report.csv")).unwrap();
    assert!(report.starts_with("activation,input_dim,width,depth,neuron_count"));
    let curve = fs::read_to_string(d.join("o/report.curve.csv")).unwrap();
    let worst = curve
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(3).unwrap().parse::<f64>().unwrap())
        .fold(0.0, f64::max);
    assert!(worst < 0.25, "curve error {worst}");

    let m = manifest(&d.join("o/manifest.json"));
    assert_eq!(m["command"], "approximate");
    assert_eq!(m["started_unix"], 1_700_000_000u64);
    let outputs = m["outputs"].as_array().unwrap();
    assert_eq!(outputs.len(), 3);
    for o in outputs {
        let bytes = fs::read(d.join(o["path"].as_str().unwrap())).unwrap();
        assert_eq!(o["bytes"], bytes.len() as u64);
        assert_eq!(o["sha256"], hex::encode(Sha256::digest(&bytes)));
    }
}

#[test]
fn search_failures_exit_two_and_still_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = superexp(
        d,
        &["approximate", "--activation", "rho1", "--target", "product", "--dim", "2", "--eps", "0.3", "--out", "net.json", "--report", "r.csv"],
    );
    assert_eq!(code(&out), 2);
    let report = fs::read_to_string(d.join("r.csv")).unwrap();
    assert!(report.lines().nth(1).unwrap().starts_with("rho1,2,200,7,780,15,"), "{report}");
    assert!(d.join("manifest.json").exists());
}

#[test]
fn verify_detects_tampered_golden_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&superexp(d, &["verify", "kst"])), 0);
    fs::write(d.join("kst.csv"), "target,dim,residual\nproduct,2,0.00061\n").unwrap();
    let out = superexp(d, &["verify", "kst", "--golden-dir", "."]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stdout).contains("1 failed"));
}

#[test]
fn train_then_occlude() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("cfg.txt"),
        "seed = 1\nepochs = 2\nbatch = 16\nsynth.per_class = 15\nsynth.length = 96\nlayers = conv:3:4:1:peuaf,maxpool:2:2,gap,output:3\n",
    )
    .unwrap();
    assert_eq!(code(&superexp(d, &["train", "cfg.txt", "--out", "run"])), 0);
    for f in ["config.txt", "model.json", "history.csv", "test_set.csv", "manifest.json"] {
        assert!(d.join("run").join(f).exists(), "{f}");
    }
    let history = fs::read_to_string(d.join("run/history.csv")).unwrap();
    assert_eq!(history.lines().count(), 3);

    let out = superexp(d, &["occlude", "run/model.json", "run/test_set.csv", "--window", "32", "--stride", "16", "--out", "occ/drops.csv"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let drops = fs::read_to_string(d.join("occ/drops.csv")).unwrap();
    assert!(drops.starts_with("sample,label,window,start,end,drop\n"));
    let signals = fs::read_to_string(d.join("run/test_set.csv")).unwrap().lines().count();
    assert_eq!(drops.lines().count() - 1, signals * 5);

    let too_wide = superexp(d, &["occlude", "run/model.json", "run/test_set.csv", "--window", "200", "--out", "x.csv"]);
    assert_eq!(code(&too_wide), 1);
}

#[test]
fn reruns_are_byte_identical() {
    let runs: Vec<Vec<u8>> = (0..2)
        .map(|_| {
            let dir = tempfile::tempdir().unwrap();
            let d = dir.path();
            let args = ["approximate", "--activation", "euaf", "--target", "runge", "--dim", "2", "--eps", "0.3", "--out", "n.json", "--report", "r.csv"];
            assert_eq!(code(&superexp(d, &args)), 0);
            ["n.json", "n.superposition.txt", "r.csv", "r.curve.csv", "manifest.json"]
                .iter()
                .flat_map(|f| fs::read(d.join(f)).unwrap())
                .collect()
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
}

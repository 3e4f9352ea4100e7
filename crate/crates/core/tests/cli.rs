use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use clair::io::{read_client_dir, read_matrix};

fn clair(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clair"))
        .args(args)
        .env_remove("CLAIR_SEED")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_and_bad_flags() {
    assert_eq!(code(&clair(&["--help"])), 0);
    assert_eq!(code(&clair(&["simulate", "--help"])), 0);
    assert_eq!(code(&clair(&["simulate", "--no-such-flag"])), 2);
    assert_eq!(code(&clair(&[])), 2);
    assert_eq!(code(&clair(&["simulate", "--tau", "median"])), 2);
}

#[test]
fn invalid_configs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path());
    assert_eq!(code(&clair(&["simulate", "--K", "1", "--reps", "1", "--out", out])), 2);
    assert_eq!(code(&clair(&["simulate", "--alpha", "0.3", "--reps", "1", "--out", out])), 2);
    assert_eq!(code(&clair(&["simulate", "--n", "5", "--reps", "1", "--out", out])), 2);
    assert_eq!(code(&clair(&["simulate", "--omega", "1,2", "--reps", "1", "--out", out])), 2);
}

#[test]
fn simulate_smoke_and_determinism() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["simulate", "--p", "10", "--q", "10", "--n", "100", "--K", "10", "--reps", "5", "--seed", "7"];
    let ra = clair(&[&args[..], &["--out", path(a.path())]].concat());
    assert_eq!(code(&ra), 0, "{}", String::from_utf8_lossy(&ra.stderr));
    let rb = clair(&[&args[..], &["--out", path(b.path()), "--jobs", "1"]].concat());
    assert_eq!(code(&rb), 0);

    let csv = fs::read_to_string(a.path().join("replicates.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);
    assert!(csv.lines().skip(1).all(|l| l.contains(",ok,")));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["batches"][0]["summary"]["replicates"], 5);

    for file in ["replicates.csv", "summary.csv", "summary.json", "projector_errors.csv"] {
        assert_eq!(
            fs::read(a.path().join(file)).unwrap(),
            fs::read(b.path().join(file)).unwrap(),
            "{file} differs between runs"
        );
    }
}

#[test]
fn seed_falls_back_to_environment() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let base = ["simulate", "--p", "6", "--q", "5", "--n", "40", "--K", "5", "--reps", "2"];
    let ra = clair(&[&base[..], &["--seed", "99", "--out", path(a.path())]].concat());
    assert_eq!(code(&ra), 0);
    let rb = Command::new(env!("CARGO_BIN_EXE_clair"))
        .args(base)
        .args(["--out", path(b.path())])
        .env("CLAIR_SEED", "99")
        .output()
        .unwrap();
    assert_eq!(code(&rb), 0);
    assert_eq!(
        fs::read(a.path().join("replicates.csv")).unwrap(),
        fs::read(b.path().join("replicates.csv")).unwrap()
    );
}

#[test]
fn decompose_matches_in_process_results() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    let r = clair(&[
        "simulate", "--p", "10", "--q", "10", "--n", "100", "--K", "6", "--reps", "3", "--seed", "5", "--dump", "2",
        "--out", path(&sim),
    ]);
    assert_eq!(code(&r), 0);
    let scenario = sim.join("scenarios").join("K6_rep2");
    let dec = dir.path().join("dec");
    let r = clair(&["decompose", "--input", path(&scenario.join("locals")), "--out", path(&dec)]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));

    let ours = read_client_dir(&dec.join("refined")).unwrap();
    let theirs = read_client_dir(&scenario.join("refined")).unwrap();
    assert_eq!(ours.len(), 6);
    for (a, b) in ours.iter().zip(&theirs) {
        assert!((a - b).amax() <= 1e-12);
    }
    let pa = read_matrix(&dec.join("projector.mat")).unwrap();
    let pb = read_matrix(&scenario.join("projector.mat")).unwrap();
    assert!((pa - pb).amax() <= 1e-12);

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(scenario.join("manifest.json")).unwrap()).unwrap();
    let detection: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dec.join("detection.json")).unwrap()).unwrap();
    assert_eq!(manifest["detected_set"], detection["collaborative_set"]);

    // the detect and refine subcommands reproduce the same outputs
    let det = dir.path().join("det");
    assert_eq!(code(&clair(&["detect", "--orthogonal", path(&dec.join("orthogonal.stk")), "--out", path(&det)])), 0);
    let again: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(det.join("detection.json")).unwrap()).unwrap();
    assert_eq!(again, detection);
    let refd = dir.path().join("ref");
    let r = clair(&[
        "refine", "--input", path(&scenario.join("locals")), "--projector", path(&dec.join("projector.mat")),
        "--detection", path(&det.join("detection.json")), "--out", path(&refd),
    ]);
    assert_eq!(code(&r), 0);
    assert_eq!(read_client_dir(&refd.join("refined")).unwrap(), ours);
}

#[test]
fn decompose_edge_cases() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in");
    fs::create_dir_all(&input).unwrap();
    let out = dir.path().join("out");

    fs::write(input.join("client_0.mat"), "2 2\n1 2\n3 4\n").unwrap();
    assert_eq!(code(&clair(&["decompose", "--input", path(&input), "--out", path(&out)])), 2);

    fs::write(input.join("client_1.mat"), "2 2\n1 2\n3 4\n").unwrap();
    let r = clair(&["decompose", "--input", path(&input), "--out", path(&out), "--rank", "1"]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let det: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("detection.json")).unwrap()).unwrap();
    assert_eq!(det["collaborative_set"], serde_json::json!([0, 1]));

    fs::write(input.join("client_1.mat"), "2 2\n1 2\n3 oops\n").unwrap();
    let r = clair(&["decompose", "--input", path(&input), "--out", path(&out)]);
    assert_eq!(code(&r), 2);
    let err = String::from_utf8_lossy(&r.stderr);
    assert!(err.contains("client_1.mat") && err.contains("line 3"), "{err}");

    fs::write(input.join("client_1.mat"), "2 3\n1 2 3\n4 5 6\n").unwrap();
    assert_eq!(code(&clair(&["decompose", "--input", path(&input), "--out", path(&out)])), 2);
}

#[test]
fn tune_writes_config_for_simulate() {
    let dir = tempfile::tempdir().unwrap();
    let tune = dir.path().join("tune");
    let common = ["--p", "8", "--q", "6", "--n", "60", "--K", "5", "--reps", "4", "--seed", "3"];
    let r = clair(
        &[
            &["tune"][..],
            &common[..],
            &["--c1-grid", "0.3", "--c2-grid", "0.01,1", "--out", path(&tune)],
        ]
        .concat(),
    );
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let cfg: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tune.join("clair_config.json")).unwrap()).unwrap();
    // a vanishing sparse penalty lets S absorb everything and is never chosen
    assert_eq!(cfg["lambda_s_c2"], 1.0);
    assert_eq!(fs::read_to_string(tune.join("tune.csv")).unwrap().lines().count(), 3);

    let sim = dir.path().join("sim");
    let config = tune.join("clair_config.json");
    let r = clair(&[&["simulate"][..], &common[..], &["--config", path(&config), "--out", path(&sim)]].concat());
    assert_eq!(code(&r), 0);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(sim.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["clair"]["lambda_s_c2"], 1.0);

    let single = dir.path().join("single");
    let r = clair(&[&["tune"][..], &common[..], &["--c1-grid", "0.5", "--c2-grid", "2", "--out", path(&single)]].concat());
    assert_eq!(code(&r), 0);
    let cfg: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(single.join("clair_config.json")).unwrap()).unwrap();
    assert_eq!((cfg["lambda_l_c1"].as_f64(), cfg["lambda_s_c2"].as_f64()), (Some(0.5), Some(2.0)));
}

use std::path::Path;
use std::process::{Command, Output};

use tslab::harness::read_trace;

fn tslab(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tslab"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .output()
        .expect("spawn tslab")
}

fn small<'a>(cmd: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut args = vec![cmd];
    let defaults = [("--d", "4"), ("--m", "8"), ("--n-samples", "200"), ("--eta", "1"), ("--log-every", "5")];
    for (k, v) in defaults {
        if !extra.contains(&k) {
            args.extend([k, v]);
        }
    }
    args.extend(extra);
    args
}

#[test]
fn train_with_no_iterations_logs_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let args = small("train", &["--t1", "0", "--t2", "0"]);
    let out = tslab(&args, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let trace = read_trace(&dir.path().join("train_trace.csv")).unwrap();
    assert_eq!(trace.len(), 1);
    assert!(dir.path().join("ensemble.csv").exists());
}

#[test]
fn decompose_reads_a_saved_ensemble() {
    let dir = tempfile::tempdir().unwrap();
    let args = small("train", &["--t1", "10", "--t2", "5"]);
    assert!(tslab(&args, dir.path()).status.success());
    let ens = dir.path().join("ensemble.csv");
    let dargs = small("decompose", &["--ensemble", ens.to_str().unwrap()]);
    let out = tslab(&dargs, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("total"), "{text}");
}

#[test]
fn unknown_flag_exits_one_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let out = tslab(&["train", "--bogus-key", "3"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus-key"));
}

#[test]
fn unknown_config_key_exits_one_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "d = 4\nm = 8\n[train]\nbogus_key = 1\n").unwrap();
    let out = tslab(&["train", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bogus_key") && err.contains(":4"), "{err}");
}

#[test]
fn config_sections_and_flags_combine() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(
        &cfg,
        "# shared\nd = 4\nm = 8\nn_samples = 200\neta = 1\nt1_iters = 100\n[train]\nt2_iters = 0\nlog_every = 5\n[fig1]\nt1_iters = 7\n",
    )
    .unwrap();
    let out = tslab(&["train", "--config", cfg.to_str().unwrap(), "--t1", "10"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let trace = read_trace(&dir.path().join("train_trace.csv")).unwrap();
    let iters: Vec<usize> = trace.iter().map(|r| r.iter).collect();
    assert_eq!(iters, vec![0, 5, 10]);
}

#[test]
fn divergence_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let args = small("train", &["--eta", "1e12", "--lambda0", "1e-300", "--lambda1", "1e-300", "--t1", "50", "--t2", "0"]);
    let out = tslab(&args, dir.path());
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn invalid_value_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = tslab(&["train", "--eta", "fast"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn meanfield_and_reduce_run() {
    let dir = tempfile::tempdir().unwrap();
    let mf = small("meanfield", &["--d", "20", "--t1", "20", "--eta", "0.1", "--m", "50"]);
    let out = tslab(&mf, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(read_trace(&dir.path().join("meanfield_trace.csv")).unwrap().len() > 1);

    let rd = small("reduce", &["--t1", "10", "--t2", "0", "--n-samples", "2000"]);
    let out = tslab(&rd, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("|z - z*|"));
}

#[test]
fn figure_outputs_are_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["fig1", "--d", "5", "--m", "10", "--n-samples", "300", "--eta", "2", "--t1", "40", "--t2", "20", "--log-every", "10"];
    for dir in [&a, &b] {
        let out = tslab(&args, dir.path());
        assert!(matches!(out.status.code(), Some(0 | 1)), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stdout).contains("fig1a"));
    }
    for name in ["fig1_trace.csv", "fig1.svg"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name} differs");
    }
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn fedcore(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedcore"))
        .args(args)
        .output()
        .expect("binary runs")
}

const SMALL: [&str; 10] = ["--clients", "5", "--k", "2", "--rounds", "3", "--epochs", "2", "--batch", "16"];

fn run_small(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", "--out", out.to_str().unwrap()];
    args.extend_from_slice(&SMALL);
    args.extend_from_slice(extra);
    fedcore(&args)
}

#[test]
fn zero_rounds_is_a_valid_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_small(dir.path(), &["--rounds", "0"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(
        csv,
        "round,strategy,train_loss,test_loss,test_acc,mean_client_time,max_client_time,tau,dropped,mean_epsilon\n"
    );
    assert!(dir.path().join("run.json").exists());
    assert!(String::from_utf8_lossy(&out.stdout).contains("rounds=0"));
}

#[test]
fn unknown_strategy_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_small(dir.path(), &["--strategy", "fedfast"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_small(dir.path(), &["--k", "9"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("k must be"));
}

#[test]
fn missing_input_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.txt");
    let out = run_small(dir.path(), &["--benchmark", "container", "--container", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    let out = run_small(
        dir.path(),
        &["--benchmark", "mnist", "--images", missing.to_str().unwrap(), "--labels", missing.to_str().unwrap()],
    );
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let out = run_small(dir.path(), &["--seed", "7", "--strategy", "fedcore"]);
        assert!(out.status.success());
    }
    for f in ["metrics.csv", "client_times.csv", "run.json"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let csv = fs::read_to_string(a.path().join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.lines().skip(1).all(|l| l.split(',').count() == 10));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    fs::write(
        &cfg,
        "n_clients = 5\nclients_per_round = 2\nrounds = 4\nepochs = 2\nbatch_size = 16\nstrategy = \"fedprox\"\n\
         tau = \"inf\"\n[benchmark]\nkind = \"synthetic\"\nalpha = 0.5\nbeta = 0.5\n",
    )
    .unwrap();
    let out_dir = dir.path().join("o");
    let out = fedcore(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--rounds",
        "2",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.lines().nth(1).unwrap().contains(",fedprox,"));
    assert!(csv.lines().nth(1).unwrap().contains(",inf,"));
    let json = fs::read_to_string(out_dir.join("run.json")).unwrap();
    assert!(json.contains("\"alpha\": 0.5"));

    fs::write(&cfg, "n_clients = [1]\n").unwrap();
    let out = fedcore(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_writes_one_directory_per_strategy() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["sweep", "--out", dir.path().to_str().unwrap()];
    args.extend_from_slice(&SMALL);
    let out = fedcore(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for s in ["fedavg", "fedavg_ds", "fedprox", "fedcore"] {
        assert!(dir.path().join(s).join("metrics.csv").exists());
    }
    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 5);
    assert!(summary.starts_with("strategy,rounds,final_test_acc"));
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 4);

    let one = tempfile::tempdir().unwrap();
    let mut args = vec!["sweep", "--strategies", "fedcore", "--out", one.path().to_str().unwrap()];
    args.extend_from_slice(&SMALL);
    assert!(fedcore(&args).status.success());
    assert_eq!(
        fs::read(one.path().join("fedcore/metrics.csv")).unwrap(),
        fs::read(dir.path().join("fedcore/metrics.csv")).unwrap()
    );
}

#[test]
fn generated_container_round_trips_through_run() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("syn.txt");
    let out = fedcore(&["gen-synthetic", "--clients", "5", "--seed", "1", "--out", file.to_str().unwrap()]);
    assert!(out.status.success());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(run_small(&a, &["--seed", "1"]).status.success());
    assert!(run_small(&b, &["--seed", "1", "--benchmark", "container", "--container", file.to_str().unwrap()])
        .status
        .success());
    assert_eq!(
        fs::read(a.join("metrics.csv")).unwrap(),
        fs::read(b.join("metrics.csv")).unwrap()
    );
}

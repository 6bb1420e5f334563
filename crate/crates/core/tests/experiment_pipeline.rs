use fedcore::experiment::{compare_sweep, run_experiment, ExperimentConfig};
use fedcore::federation::{Seeds, Strategy};
use fedcore::models::ModelKind;

fn small(out: &std::path::Path) -> ExperimentConfig {
    ExperimentConfig {
        n_clients: 12,
        clients_per_round: 5,
        rounds: 8,
        epochs: 3,
        lr: 0.01,
        out_dir: out.to_path_buf(),
        seeds: Seeds {
            data: 3,
            capability: 3,
            run: 3,
        },
        ..ExperimentConfig::default()
    }
}

#[test]
fn experiment_writes_documented_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.l2 = 0.1;
    cfg.bound_check = true;
    cfg.bound_runs = 2;
    cfg.rounds = 4;
    let out = run_experiment(&cfg).unwrap();
    for f in ["metrics.csv", "client_times.csv", "run.json", "bound_report.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    assert!(out.bound.unwrap().report.pass);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("run.json")).unwrap()).unwrap();
    for key in ["config", "seeds", "provenance", "model", "summary"] {
        assert!(json.get(key).is_some(), "{key}");
    }
    assert_eq!(json["provenance"]["kind"], "synthetic");
    assert_eq!(json["summary"]["rounds"], 4);
    let line = out.summary.to_string();
    assert!(line.starts_with("fedcore: rounds=4 test_acc="));
}

#[test]
fn sweep_pairs_strategies_and_orders_times() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let rows = compare_sweep(&cfg, &Strategy::ALL).unwrap();
    assert_eq!(rows.len(), 4);
    for row in &rows {
        if row.strategy == Strategy::Fedavg {
            assert!(row.mean_normalized_time > 1.0, "{row}");
        } else {
            assert!(row.max_normalized_time <= 1.0, "{row}");
        }
    }
    // A single-strategy sweep reproduces the matching sweep member.
    let one = tempfile::tempdir().unwrap();
    let alone = run_experiment(&small(one.path())).unwrap();
    assert_eq!(alone.summary, rows[3]);
    assert_eq!(
        std::fs::read(one.path().join("metrics.csv")).unwrap(),
        std::fs::read(dir.path().join("fedcore/metrics.csv")).unwrap()
    );
}

#[test]
fn mlp_uses_last_layer_proxy() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.model = ModelKind::Mlp;
    cfg.hidden = 8;
    cfg.rounds = 3;
    assert_eq!(cfg.distance_kind(), fedcore::coreset::DistanceKind::LastlayerProxy);
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(out.log.rounds.len(), 3);
    assert!(out.log.rounds.iter().flat_map(|r| &r.clients).all(|c| c.time <= out.log.config.tau));
}

#[test]
fn invalid_configs_are_rejected_before_work() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path().join("never").as_path());
    cfg.clients_per_round = 13;
    assert!(matches!(run_experiment(&cfg), Err(fedcore::Error::InvalidConfig(_))));
    let mut cfg = small(dir.path());
    cfg.bound_check = true;
    assert!(run_experiment(&cfg).is_err(), "bound check needs l2 > 0");
    let mut cfg = small(dir.path());
    cfg.stragglers = 100.0;
    assert!(run_experiment(&cfg).is_err());
    assert!(!dir.path().join("never").exists());
}

#[test]
fn theorem_schedule_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.l2 = 0.1;
    cfg.theorem_schedule = true;
    cfg.rounds = 3;
    let out = run_experiment(&cfg).unwrap();
    assert!(matches!(out.log.config.lr, fedcore::federation::LrSchedule::Theorem { .. }));
}

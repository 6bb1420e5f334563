use rand::Rng;

use super::*;
use crate::coreset::DistanceKind;
use crate::data::{ClientDataset, SampleSet};
use crate::models::{init_params, ModelSpec};
use crate::rng::stream;

fn toy_dataset(sizes: &[usize], seed: u64) -> FederatedDataset {
    let mut r = stream(seed, Purpose::Estimate, 99, 0);
    let mut make = |n: usize, shift: f64| {
        let mut s = SampleSet::new(5);
        for _ in 0..n {
            let y = r.random_range(0..3usize);
            let x: Vec<f64> = (0..5)
                .map(|j| r.random_range(-1.0..1.0) + if j == y { 1.5 } else { 0.0 } + shift)
                .collect();
            s.push(&x, y);
        }
        s
    };
    let clients = sizes
        .iter()
        .enumerate()
        .map(|(i, &m)| ClientDataset {
            client_id: i,
            samples: make(m, 0.1 * i as f64),
        })
        .collect();
    let test_set = make(60, 0.0);
    FederatedDataset {
        clients,
        test_set,
        n_classes: 3,
        d_feat: 5,
        provenance: Provenance::Imported {
            source: "toy".into(),
        },
    }
}

fn config(strategy: Strategy, tau: f64) -> RoundConfig {
    RoundConfig {
        epochs: 4,
        rounds: 5,
        clients_per_round: 3,
        tau,
        lr: LrSchedule::Constant { lr: 0.05 },
        batch_size: 4,
        strategy,
        mu_prox: 0.0,
        distance: DistanceKind::EuclidProxy,
        gamma: 0.0,
        probes: false,
        trace_params: true,
    }
}

const SEEDS: Seeds = Seeds {
    data: 1,
    capability: 2,
    run: 3,
};

fn setup(sizes: &[usize]) -> (FederatedDataset, Vec<ClientProfile>) {
    let ds = toy_dataset(sizes, 11);
    let caps = capabilities(sizes.len(), 5);
    let profiles = build_profiles(&ds, &caps);
    (ds, profiles)
}

fn spec() -> ModelSpec {
    ModelSpec::logistic(5, 3, 0.01)
}

const SIZES: [usize; 8] = [40, 12, 75, 30, 55, 20, 64, 9];

fn standard_normal_tail_stats(a: f64) -> (f64, f64) {
    // Density at `a` and P(Z > a), by trapezoid integration.
    let pdf = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let steps = 200_000;
    let hi = 12.0;
    let h = (hi - a) / steps as f64;
    let mut tail = 0.5 * (pdf(a) + pdf(hi));
    for i in 1..steps {
        tail += pdf(a + i as f64 * h);
    }
    (pdf(a), tail * h)
}

#[test]
fn capabilities_follow_truncated_normal() {
    let caps = capabilities(20_000, 9);
    assert!(caps.iter().all(|&c| c >= 0.1));
    let (phi, tail) = standard_normal_tail_stats((0.1 - 1.0) / 0.5);
    let want = 1.0 + 0.5 * phi / tail;
    let mean = caps.iter().sum::<f64>() / caps.len() as f64;
    assert!((mean - want).abs() < 0.015, "mean {mean} vs {want}");
    assert_eq!(caps, capabilities(20_000, 9));
}

fn profiles_with_times(times: &[f64]) -> Vec<ClientProfile> {
    times
        .iter()
        .enumerate()
        .map(|(i, &t)| ClientProfile {
            client_id: i,
            m: 10,
            c: 10.0 / t,
            p: 1.0 / times.len() as f64,
        })
        .collect()
}

#[test]
fn deadline_examples() {
    let times: Vec<f64> = (1..=10).map(f64::from).collect();
    let p = profiles_with_times(&times);
    assert!((deadline_for_stragglers(&p, 1, 30.0) - 7.0).abs() < 1e-12);
    assert!((deadline_for_stragglers(&p, 1, 0.0) - 10.0).abs() < 1e-12);
    let tau = deadline_for_stragglers(&p, 1, 30.0);
    let stragglers = p.iter().filter(|q| full_round_time(q.m, q.c, 1) > tau + 1e-12).count();
    assert_eq!(stragglers, 3);
}

#[test]
fn round_time_arithmetic() {
    assert_eq!(full_round_time(100, 2.0, 10), 500.0);
}

#[test]
fn selection_frequencies_match_probabilities() {
    let ps = [0.1, 0.2, 0.3, 0.15, 0.25];
    let profiles: Vec<ClientProfile> = ps
        .iter()
        .enumerate()
        .map(|(i, &p)| ClientProfile {
            client_id: i,
            m: 1,
            c: 1.0,
            p,
        })
        .collect();
    let mut r = stream(4, Purpose::Selection, 0, 0);
    let n = 100_000;
    let mut counts = [0usize; 5];
    for id in select_clients(&profiles, n, &mut r) {
        counts[id] += 1;
    }
    let chi2: f64 = counts
        .iter()
        .zip(&ps)
        .map(|(&o, &p)| {
            let e = p * n as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    // 99.9% quantile of chi-square with 4 degrees of freedom.
    assert!(chi2 < 18.467, "chi2 {chi2}");
}

#[test]
fn single_client_population_is_selected_k_times() {
    let (ds, profiles) = setup(&[10]);
    let mut r = stream(1, Purpose::Selection, 0, 0);
    assert_eq!(select_clients(&profiles, 4, &mut r), vec![0; 4]);
    assert_eq!(ds.n_clients(), 1);
}

#[test]
fn infinite_deadline_fedcore_matches_fedavg() {
    let (ds, profiles) = setup(&SIZES);
    let init = init_params(&spec(), 0);
    let a = run(&ds, &profiles, &config(Strategy::Fedavg, f64::INFINITY), SEEDS, init.clone()).unwrap();
    let b = run(&ds, &profiles, &config(Strategy::Fedcore, f64::INFINITY), SEEDS, init).unwrap();
    assert_eq!(a.param_trace, b.param_trace);
    assert!(b.rounds.iter().flat_map(|r| &r.clients).all(|c| c.path == ClientPath::Full));
}

#[test]
fn fedprox_without_prox_or_stragglers_matches_fedavg() {
    let (ds, profiles) = setup(&SIZES);
    let init = init_params(&spec(), 0);
    let a = run(&ds, &profiles, &config(Strategy::Fedavg, f64::INFINITY), SEEDS, init.clone()).unwrap();
    let b = run(&ds, &profiles, &config(Strategy::Fedprox, f64::INFINITY), SEEDS, init).unwrap();
    assert_eq!(a.param_trace, b.param_trace);
}

#[test]
fn identical_clients_aggregate_to_single_result() {
    let (ds, profiles) = setup(&[25]);
    let init = init_params(&spec(), 0);
    let mut cfg = config(Strategy::Fedavg, f64::INFINITY);
    cfg.batch_size = 1000;
    cfg.clients_per_round = 1;
    let one = run(&ds, &profiles, &cfg, SEEDS, init.clone()).unwrap();
    cfg.clients_per_round = 1;
    let mut many_ds = ds.clone();
    many_ds.clients = (0..4)
        .map(|i| ClientDataset {
            client_id: i,
            samples: ds.clients[0].samples.clone(),
        })
        .collect();
    let many_profiles = build_profiles(&many_ds, &[1.0; 4]);
    cfg.clients_per_round = 3;
    let many = run(&many_ds, &many_profiles, &cfg, SEEDS, init).unwrap();
    let (a, b) = (one.final_params.values(), many.final_params.values());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
    }
}

#[test]
fn zero_rounds_returns_initial_params() {
    let (ds, profiles) = setup(&SIZES);
    let mut cfg = config(Strategy::Fedcore, 10.0);
    cfg.rounds = 0;
    let init = init_params(&spec(), 0);
    let log = run(&ds, &profiles, &cfg, SEEDS, init.clone()).unwrap();
    assert!(log.rounds.is_empty());
    assert_eq!(log.final_params, init);
    assert_eq!(metrics_csv(&log), format!("{}\n", METRICS_COLUMNS.join(",")));
}

#[test]
fn reruns_are_byte_identical() {
    let (ds, profiles) = setup(&SIZES);
    let tau = deadline_for_stragglers(&profiles, 4, 30.0);
    for strategy in Strategy::ALL {
        let cfg = config(strategy, tau);
        let init = init_params(&spec(), 0);
        let a = run(&ds, &profiles, &cfg, SEEDS, init.clone()).unwrap();
        let b = run(&ds, &profiles, &cfg, SEEDS, init).unwrap();
        assert_eq!(metrics_csv(&a), metrics_csv(&b));
        assert_eq!(client_times_csv(&a), client_times_csv(&b));
    }
}

#[test]
fn deadline_aware_strategies_respect_tau() {
    let (ds, profiles) = setup(&SIZES);
    let tau = deadline_for_stragglers(&profiles, 4, 30.0);
    for strategy in [Strategy::FedavgDs, Strategy::Fedprox, Strategy::Fedcore] {
        let mut cfg = config(strategy, tau);
        cfg.rounds = 15;
        let log = run(&ds, &profiles, &cfg, SEEDS, init_params(&spec(), 0)).unwrap();
        for r in &log.rounds {
            for c in &r.clients {
                assert!(c.time <= tau * (1.0 + 1e-12), "{strategy}: {} > {tau}", c.time);
            }
        }
    }
}

#[test]
fn fedcore_straggler_accounting() {
    let (ds, profiles) = setup(&SIZES);
    let tau = deadline_for_stragglers(&profiles, 4, 30.0);
    let mut cfg = config(Strategy::Fedcore, tau);
    cfg.rounds = 20;
    let log = run(&ds, &profiles, &cfg, SEEDS, init_params(&spec(), 0)).unwrap();
    let mut saw_coreset = false;
    for c in log.rounds.iter().flat_map(|r| &r.clients) {
        let p = profiles[c.client_id];
        let straggler = full_round_time(p.m, p.c, 4) > tau;
        match c.path {
            ClientPath::Full => assert!(!straggler),
            ClientPath::Coreset => {
                saw_coreset = true;
                let b = crate::coreset::budget(p.m, p.c, tau, 4) as usize;
                assert_eq!(c.coreset_size, Some(b));
                let want = (p.m + 3 * b) as f64 / p.c;
                assert!((c.time - want).abs() <= 1e-9 * want);
                assert!(p.m + 3 * b < 4 * p.m);
                assert!(c.epsilon.unwrap() >= 0.0);
            }
            ClientPath::Fallback | ClientPath::Idle => assert!(straggler),
            other => panic!("unexpected path {other:?}"),
        }
    }
    assert!(saw_coreset);
}

#[test]
fn fedavg_ds_drops_exactly_the_stragglers() {
    let (ds, profiles) = setup(&SIZES);
    let tau = deadline_for_stragglers(&profiles, 4, 30.0);
    let log = run(&ds, &profiles, &config(Strategy::FedavgDs, tau), SEEDS, init_params(&spec(), 0)).unwrap();
    for r in &log.rounds {
        let mut dropped = 0;
        for c in &r.clients {
            let p = profiles[c.client_id];
            let straggler = full_round_time(p.m, p.c, 4) > tau;
            assert_eq!(c.path == ClientPath::Dropped, straggler);
            dropped += straggler as usize;
        }
        assert_eq!(r.dropped, dropped);
    }
}

#[test]
fn all_dropped_round_keeps_global() {
    let (ds, profiles) = setup(&SIZES);
    let init = init_params(&spec(), 0);
    let log = run(&ds, &profiles, &config(Strategy::FedavgDs, 1e-6), SEEDS, init.clone()).unwrap();
    assert!(log.rounds.iter().all(|r| r.dropped == 3));
    assert_eq!(log.final_params, init);
}

#[test]
fn tiny_deadline_uses_fallback_or_idles() {
    let (ds, profiles) = setup(&SIZES);
    let init = init_params(&spec(), 0);
    let tau = 2.0 * 4.0 / profiles.iter().map(|p| p.c).fold(f64::INFINITY, f64::min);
    let log = run(&ds, &profiles, &config(Strategy::Fedcore, tau), SEEDS, init.clone()).unwrap();
    let paths: Vec<ClientPath> = log.rounds.iter().flat_map(|r| &r.clients).map(|c| c.path).collect();
    assert!(paths.iter().all(|p| matches!(p, ClientPath::Fallback | ClientPath::Idle)));
    assert!(paths.contains(&ClientPath::Fallback));
    let log = run(&ds, &profiles, &config(Strategy::Fedcore, 1e-9), SEEDS, init.clone()).unwrap();
    assert!(log.rounds.iter().flat_map(|r| &r.clients).all(|c| c.path == ClientPath::Idle && c.time == 0.0));
    assert_eq!(log.final_params, init);
}

#[test]
fn fedprox_partial_work() {
    let (ds, profiles) = setup(&SIZES);
    let tau = deadline_for_stragglers(&profiles, 4, 30.0);
    let mut cfg = config(Strategy::Fedprox, tau);
    cfg.mu_prox = 0.1;
    let log = run(&ds, &profiles, &cfg, SEEDS, init_params(&spec(), 0)).unwrap();
    for c in log.rounds.iter().flat_map(|r| &r.clients) {
        let p = profiles[c.client_id];
        if c.path == ClientPath::Partial {
            let affordable = (p.c * tau / p.m as f64).floor() as usize;
            assert_eq!(c.epochs_done, affordable.min(4));
            assert!(c.epochs_done < 4);
        }
    }
}

#[test]
fn other_distance_kinds_and_probes() {
    let (ds, profiles) = setup(&SIZES);
    let tau = deadline_for_stragglers(&profiles, 4, 30.0);
    for (kind, spec) in [
        (DistanceKind::Exact, spec()),
        (DistanceKind::LastlayerProxy, ModelSpec::mlp(5, 3, 6, 0.0)),
    ] {
        let mut cfg = config(Strategy::Fedcore, tau);
        cfg.distance = kind;
        cfg.probes = true;
        cfg.gamma = 0.1;
        let log = run(&ds, &profiles, &cfg, SEEDS, init_params(&spec, 4)).unwrap();
        let recs: Vec<&ClientRecord> = log.rounds.iter().flat_map(|r| &r.clients).collect();
        assert!(recs.iter().all(|c| c.probe.is_some() && c.time <= tau * (1.0 + 1e-12)));
        assert!(recs.iter().any(|c| c.path == ClientPath::Coreset));
    }
}

#[test]
fn config_validation() {
    let (ds, profiles) = setup(&SIZES);
    let init = init_params(&spec(), 0);
    let mut bad = config(Strategy::Fedavg, 1.0);
    bad.clients_per_round = 0;
    assert!(run(&ds, &profiles, &bad, SEEDS, init.clone()).is_err());
    let mut bad = config(Strategy::Fedavg, 1.0);
    bad.tau = 0.0;
    assert!(run(&ds, &profiles, &bad, SEEDS, init.clone()).is_err());
    let wrong = init_params(&ModelSpec::logistic(4, 3, 0.0), 0);
    assert!(run(&ds, &profiles, &config(Strategy::Fedavg, 1.0), SEEDS, wrong).is_err());
}

#[test]
fn outputs_have_stable_schema() {
    let (ds, profiles) = setup(&SIZES);
    let log = run(&ds, &profiles, &config(Strategy::Fedavg, f64::INFINITY), SEEDS, init_params(&spec(), 0)).unwrap();
    let csv = metrics_csv(&log);
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "round,strategy,train_loss,test_loss,test_acc,mean_client_time,max_client_time,tau,dropped,mean_epsilon"
    );
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(first.len(), 10);
    assert_eq!(first[0], "1");
    assert_eq!(first[1], "fedavg");
    assert_eq!(first[7], "inf");
    assert_eq!(csv.lines().count(), 6);

    let json = run_json(&log);
    assert_eq!(json["config"]["tau"], "inf");
    let back: RoundConfig = serde_json::from_value(json["config"].clone()).unwrap();
    assert!(back.tau.is_infinite());
    assert_eq!(json["summary"]["rounds"], 5);
    assert_eq!(json["provenance"]["kind"], "imported");

    let times = client_times_csv(&log);
    assert_eq!(times.lines().count(), 1 + 5 * 3);
    assert!(times.starts_with("round,strategy,slot,client_id,path,time,tau,epochs_done,coreset_size\n"));
}

#[test]
fn atomic_writes_leave_no_temp_file() {
    let (ds, profiles) = setup(&SIZES);
    let log = run(&ds, &profiles, &config(Strategy::Fedavg, 50.0), SEEDS, init_params(&spec(), 0)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("metrics.csv");
    write_metrics_csv(&log, &path).unwrap();
    write_run_json(&log, &dir.path().join("run.json")).unwrap();
    write_client_times_csv(&log, &dir.path().join("client_times.csv")).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap(), metrics_csv(&log));
    let names: Vec<String> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert_eq!(names.len(), 3);
    assert!(names.iter().all(|n| !n.ends_with(".tmp")));
}

#[test]
fn fedavg_time_can_exceed_deadline() {
    let (ds, profiles) = setup(&SIZES);
    let tau = deadline_for_stragglers(&profiles, 4, 30.0);
    let log = run(&ds, &profiles, &config(Strategy::Fedavg, tau), SEEDS, init_params(&spec(), 0)).unwrap();
    let max = log.rounds.iter().map(|r| r.max_time()).fold(0.0, f64::max);
    assert!(max > tau);
}

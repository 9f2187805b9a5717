mod common;

use common::*;
use crpfl::hmm::CONFLICT;
use crpfl::orchestrator::{
    compare_policies, resume_experiment, run_experiment, summarize, Checkpoint, ExperimentConfig, Format, MetricsLog,
    PolicyKind, RunInput, Runner, World, CHECKPOINT_FILE, METRICS_CSV, METRICS_JSON,
};
use crpfl::Error;

fn strip_labels(log: &MetricsLog) -> Vec<String> {
    log.rows
        .iter()
        .map(|r| {
            let mut r = r.clone();
            r.policy.clear();
            r.config_hash.clear();
            r.to_record().join(",")
        })
        .collect()
}

#[test]
fn defaults_describe_the_two_server_setup() {
    let c = ExperimentConfig::default();
    assert_eq!(c.num_servers, 2);
    assert_eq!(c.coverage_radius_km, 1.0);
    assert_eq!(c.num_clients, 50);
    assert_eq!(c.covered_clients, 40);
    assert_eq!(c.total_bandwidth_hz, 100e6);
    assert_eq!(c.l_max, 40.0);
    assert_eq!(c.alpha, 100.0);
    assert_eq!(c.dirichlet_eta, 0.1);
    let world = World::new(c).unwrap();
    let covered = (0..50)
        .filter(|i| world.env.coverage.iter().any(|cov| cov.contains(i)))
        .count();
    assert_eq!(covered, 40);
    assert_eq!(world.env.clients.len(), 50);
    assert!(world.env.coverage.iter().all(|cov| cov.len() >= 5));
}

#[test]
fn zero_rounds_exports_only_the_header() {
    let dir = tempfile::tempdir().unwrap();
    let log = run_experiment(&small_config(PolicyKind::RlCrp, 0), Some(dir.path())).unwrap();
    assert!(log.is_empty());
    let csv = std::fs::read_to_string(dir.path().join(METRICS_CSV)).unwrap();
    assert_eq!(csv.lines().count(), 1);
    assert!(csv.starts_with("round,task,server,policy"));
}

#[test]
fn one_round_gives_one_row_per_server() {
    let log = run_experiment(&small_config(PolicyKind::RlCrp, 1), None).unwrap();
    assert_eq!(log.rows.len(), 2);
    assert_eq!(log.num_rounds(), 1);
    assert_eq!((log.rows[0].server, log.rows[1].server), (0, 1));
    assert!(log.rows.iter().all(|r| r.selected == 5 && r.round == 1));
}

#[test]
fn identical_seeds_give_identical_bytes() {
    for policy in PolicyKind::ALL {
        let cfg = small_config(policy, 25);
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        run_experiment(&cfg, Some(a.path())).unwrap();
        run_experiment(&cfg, Some(b.path())).unwrap();
        for file in [METRICS_CSV, METRICS_JSON] {
            let x = std::fs::read(a.path().join(file)).unwrap();
            let y = std::fs::read(b.path().join(file)).unwrap();
            assert!(x == y, "{policy} {file}");
        }
    }
    let a = run_experiment(&small_config(PolicyKind::RlCrp, 25), None).unwrap();
    let other = ExperimentConfig {
        seed: 2,
        ..small_config(PolicyKind::RlCrp, 25)
    };
    assert_ne!(a.to_csv_string(), run_experiment(&other, None).unwrap().to_csv_string());
}

#[test]
fn resuming_from_a_checkpoint_reproduces_the_run() {
    let cfg = ExperimentConfig {
        checkpoint_every: 7,
        ..small_config(PolicyKind::RlCrp, 30)
    };
    let full = run_experiment(&cfg, None).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let mut runner = Runner::new(cfg.clone(), Some(dir.path())).unwrap();
    runner.run(Some(17)).unwrap();
    drop(runner);
    let cp = Checkpoint::load(&dir.path().join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(cp.world.round, 14);
    let resumed = resume_experiment(&dir.path().join(CHECKPOINT_FILE), Some(dir.path())).unwrap();
    assert_eq!(resumed, full);
    let csv = std::fs::read_to_string(dir.path().join(METRICS_CSV)).unwrap();
    assert_eq!(csv, full.to_csv_string());
}

#[test]
fn tampered_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        checkpoint_every: 2,
        ..small_config(PolicyKind::RandomFedavg, 4)
    };
    run_experiment(&cfg, Some(dir.path())).unwrap();
    let path = dir.path().join(CHECKPOINT_FILE);
    let mut cp = Checkpoint::load(&path).unwrap();
    cp.config_hash = "0000000000000000".into();
    cp.save(&path).unwrap();
    assert!(Checkpoint::load(&path).is_err());
}

#[test]
fn exports_round_trip() {
    let log = run_experiment(&small_config(PolicyKind::RlCrp, 12), None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("m.csv");
    let json = dir.path().join("m.json");
    log.export(&csv, Format::Csv).unwrap();
    log.export(&json, Format::Json).unwrap();
    assert_eq!(MetricsLog::import(&csv).unwrap(), log);
    assert_eq!(MetricsLog::import(&json).unwrap(), log);
    assert!(log.rows.iter().any(|r| r.accuracy.is_some()));
    assert!(log.rows.iter().any(|r| r.critic_loss.is_some()));
}

#[test]
fn single_server_has_no_conflicts() {
    let cfg = ExperimentConfig {
        num_servers: 1,
        ..small_config(PolicyKind::RandomFedavg, 40)
    };
    let log = run_experiment(&cfg, None).unwrap();
    assert!(log
        .rows
        .iter()
        .all(|r| r.conflicts == 0 && r.penalty == r.timeouts as f64 * 10.0));
}

#[test]
fn random_selection_is_uniform_over_coverage() {
    let cfg = ExperimentConfig {
        num_servers: 1,
        ..small_config(PolicyKind::RandomFedavg, 600)
    };
    let mut world = World::new(cfg).unwrap();
    let cov = world.env.coverage[0].clone();
    let mut counts = vec![0usize; cov.len()];
    for _ in 0..600 {
        let rec = world.run_round().unwrap();
        for c in &rec.outcome.servers[0].selected {
            counts[cov.binary_search(c).unwrap()] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    let e = total as f64 / cov.len() as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    // Wilson-Hilferty 99.9th percentile
    let k = (cov.len() - 1) as f64;
    let q = k * (1.0 - 2.0 / (9.0 * k) + 3.09 * (2.0 / (9.0 * k)).sqrt()).powi(3);
    assert!(chi2 < q, "chi2 {chi2} limit {q}");
}

#[test]
fn zero_alpha_matches_the_no_fairness_ablation() {
    let a = ExperimentConfig {
        alpha: 0.0,
        ..small_config(PolicyKind::RlCrp, 30)
    };
    let b = small_config(PolicyKind::RlCrpNoFairness, 30);
    let (la, lb) = (run_experiment(&a, None).unwrap(), run_experiment(&b, None).unwrap());
    assert_eq!(strip_labels(&la), strip_labels(&lb));
    assert_eq!(a.topology_key(), b.topology_key());
}

#[test]
fn comparing_a_policy_with_itself_gives_identical_rows() {
    let cfg = small_config(PolicyKind::SacNoCrp, 30);
    let log = run_experiment(&cfg, None).unwrap();
    let mut first = RunInput::new(cfg.clone(), log.clone());
    first.label = "left".into();
    let mut second = RunInput::new(cfg, log);
    second.label = "right".into();
    let report = compare_policies(&[first, second], 10).unwrap();
    let (l, r) = (report.row("left").unwrap(), report.row("right").unwrap());
    assert_eq!(l.mean_conflicts, r.mean_conflicts);
    assert_eq!(l.reward_auc, r.reward_auc);
    assert_eq!(l.accuracy, r.accuracy);
    assert_eq!(l.curve, r.curve);
    let table = report.table_csv();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[1].split_once(',').unwrap().1, lines[2].split_once(',').unwrap().1);
}

#[test]
fn mismatched_topologies_cannot_be_compared() {
    let a = small_config(PolicyKind::RlCrp, 2);
    let b = ExperimentConfig {
        num_clients: 60,
        ..small_config(PolicyKind::RandomFedavg, 2)
    };
    let runs = [
        RunInput::new(a.clone(), run_experiment(&a, None).unwrap()),
        RunInput::new(b.clone(), run_experiment(&b, None).unwrap()),
    ];
    assert!(matches!(compare_policies(&runs, 2), Err(Error::TopologyMismatch(_))));

    // the fairness ablation only differs in its reward weight
    let c = small_config(PolicyKind::RlCrpNoFairness, 2);
    let runs = [
        runs[0].clone(),
        RunInput::new(c.clone(), run_experiment(&c, None).unwrap()),
    ];
    assert_eq!(compare_policies(&runs, 2).unwrap().rows.len(), 2);
}

#[test]
fn conflict_totals_match_the_environment_ledger() {
    let mut world = World::new(small_config(PolicyKind::RlCrp, 60)).unwrap();
    let (mut env_total, mut row_total) = (0, 0);
    let mut ones = vec![vec![0usize; 50]; 2];
    let mut picks = vec![vec![0usize; 50]; 2];
    for _ in 0..60 {
        let rec = world.run_round().unwrap();
        env_total += rec.outcome.conflict_count();
        let from_events: usize = rec.outcome.conflicts.iter().map(|e| e.losers.len()).sum();
        assert_eq!(from_events, rec.outcome.conflict_count());
        row_total += rec.rows.iter().map(|r| r.conflicts).sum::<usize>();
        for s in &rec.outcome.servers {
            for &c in &s.selected {
                picks[s.server_id][c] += 1;
            }
            for &c in s.lost_to_conflict.iter().chain(&s.timeouts) {
                ones[s.server_id][c] += 1;
            }
        }
    }
    assert_eq!(env_total, row_total);
    assert!(env_total > 0);
    // each recorded o = 1 is one loss or timeout of a client that server picked
    for m in 0..2 {
        for (pos, &c) in world.agents[m].coverage.iter().enumerate() {
            let h = &world.histories[m][pos];
            assert_eq!(h.len(), picks[m][c]);
            assert_eq!(h.observations().iter().filter(|&&o| o == CONFLICT).count(), ones[m][c]);
        }
    }
}

#[test]
fn rows_are_internally_consistent() {
    let cfg = small_config(PolicyKind::RlCrp, 40);
    let log = run_experiment(&cfg, None).unwrap();
    let hash = cfg.hash();
    for r in &log.rows {
        assert_eq!(r.config_hash, hash);
        assert!(r.latency <= cfg.l_max);
        assert_eq!(r.penalty, 10.0 * (r.conflicts + r.timeouts) as f64);
        let want = -r.latency - r.penalty + 100.0 * r.fairness;
        assert!((r.reward - want).abs() < 1e-12);
        assert_eq!(r.completed + r.conflicts + r.timeouts, r.selected);
        assert_eq!(r.accuracy.is_some(), r.round % cfg.eval_every == 0);
        assert!((0.0..=1.0).contains(&r.mean_conflict_prob));
        assert_eq!(r.critic_loss.is_some(), r.round > cfg.sac_warmup_rounds);
    }
    let s = summarize(&log, 10);
    assert_eq!(s.rounds, 40);
    assert!(s.accuracy.is_some());
}

#[test]
fn random_and_sac_without_crp_see_no_conflict_features() {
    for policy in [PolicyKind::RandomFedavg, PolicyKind::SacNoCrp] {
        let log = run_experiment(&small_config(policy, 20), None).unwrap();
        assert!(log.rows.iter().all(|r| r.mean_conflict_prob == 0.0));
    }
    let log = run_experiment(&small_config(PolicyKind::RlCrp, 20), None).unwrap();
    assert!(log.rows.iter().any(|r| r.mean_conflict_prob > 0.0));
}

#[test]
fn sequential_tasks_reset_models_and_participation() {
    let cfg = ExperimentConfig {
        tasks: 2,
        ..small_config(PolicyKind::RlCrp, 10)
    };
    let log = run_experiment(&cfg, None).unwrap();
    assert_eq!(log.num_rounds(), 20);
    let first: Vec<&_> = log.round(11).collect();
    assert!(first.iter().all(|r| r.task == 1));
    for r in first {
        assert_eq!(r.participation.iter().sum::<u64>(), r.completed as u64);
    }
    let keep = ExperimentConfig {
        reset_participation_per_task: false,
        ..cfg
    };
    let log = run_experiment(&keep, None).unwrap();
    let at_ten: u64 = log.round(10).next().unwrap().participation.iter().sum();
    let at_eleven = log.round(11).next().unwrap();
    assert_eq!(
        at_eleven.participation.iter().sum::<u64>(),
        at_ten + at_eleven.completed as u64
    );
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = [
        ExperimentConfig {
            subset_size: 0,
            ..ExperimentConfig::default()
        },
        ExperimentConfig {
            covered_clients: 60,
            ..ExperimentConfig::default()
        },
        ExperimentConfig {
            hmm_rho: 0.0,
            ..ExperimentConfig::default()
        },
        ExperimentConfig {
            subset_size: 45,
            ..ExperimentConfig::default()
        },
    ];
    for cfg in bad {
        assert!(World::new(cfg).is_err());
    }
}

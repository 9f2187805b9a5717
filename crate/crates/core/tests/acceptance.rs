//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! `cargo test --test acceptance` runs everything; trailing numbers select
//! criteria (`cargo test --test acceptance -- 1 4 12`). Failures are reported
//! but only make the process exit non-zero when `CRPFL_ACCEPTANCE_STRICT=1`,
//! so a workspace test run still reaches every other target.

mod common;

use std::collections::BTreeMap;
use std::time::Instant;

use common::*;
use crpfl::env::{waterfill_allocate, Candidate};
use crpfl::hmm::{baum_welch_step, forward, log_likelihood, predict_conflict, SelectionHistory};
use crpfl::nn::Mlp;
use crpfl::orchestrator::{
    run_experiment, summarize, ExperimentConfig, PolicyKind, RunSummary, World, METRICS_CSV, METRICS_JSON,
};
use crpfl::sac::plackett_luce::log_prob;
use crpfl::sac::{encode_state, fairness_metric, AgentState, SacConfig, SacNetworks, Transition};
use rand::Rng;

/// Rounds per training run for the trend criteria; the conflict gap between
/// rl_crp and sac_no_crp only opens up after roughly 2000 rounds.
const ROUNDS: u64 = 3000;
/// Trailing window the trend criteria average over.
const WINDOW: u64 = 200;
const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
/// Seeds shared by every server count in the scaling comparison.
const SCALING_SEEDS: [u64; 2] = [1, 2];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn forward_oracle() -> Verdict {
    let mut r = rng(1001);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let k = r.random_range(1..=3);
        let t = r.random_range(1..=8);
        let p = random_hmm(k, 2, &mut r);
        let obs = random_obs(t, 2, &mut r);
        let got = forward(&p, &obs).unwrap().log_likelihood.exp();
        worst = worst.max((got - enumerate_likelihood(&p, &obs)).abs());
    }
    verdict(
        worst < 1e-10,
        format!("200 cases, max |error| {worst:.2e} (limit 1e-10)"),
    )
}

fn prediction_oracle() -> Verdict {
    let mut r = rng(1002);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let k = r.random_range(1..=3);
        let t = r.random_range(1..=8);
        let d = r.random_range(1..=4u64);
        let p = random_hmm(k, 2, &mut r);
        let obs = random_obs(t, 2, &mut r);
        let h = SelectionHistory::with_observations(0, obs.clone(), t as u64, t as u64 + d).unwrap();
        let got = predict_conflict(&p, &h).unwrap();
        worst = worst.max((got - enumerate_prediction(&p, &obs, d as usize)).abs());
    }
    verdict(
        worst < 1e-10,
        format!("100 cases, gaps 1..4, max |error| {worst:.2e} (limit 1e-10)"),
    )
}

fn em_monotonicity() -> Verdict {
    let mut r = rng(1003);
    let mut worst_drop: f64 = 0.0;
    for _ in 0..50 {
        let k = r.random_range(1..=3);
        let mut p = random_hmm(k, 2, &mut r);
        let obs = random_obs(r.random_range(2..=60), 2, &mut r);
        let mut prev = log_likelihood(&p, &obs).unwrap();
        for _ in 0..10 {
            p = baum_welch_step(&p, &obs).unwrap();
            let ll = log_likelihood(&p, &obs).unwrap();
            worst_drop = worst_drop.max(prev - ll);
            prev = ll;
        }
    }
    verdict(
        worst_drop <= 1e-12,
        format!("50 sequences x 10 steps, largest decrease {worst_drop:.2e} (slack 1e-12)"),
    )
}

fn coverage_sizes() -> Vec<usize> {
    let mut sizes: Vec<usize> = (2..=4)
        .flat_map(|m| {
            let cfg = ExperimentConfig {
                num_servers: m,
                ..ExperimentConfig::default()
            };
            World::new(cfg).unwrap().env.coverage
        })
        .map(|c| c.len())
        .collect();
    sizes.sort_unstable();
    sizes.dedup();
    sizes
}

fn random_state<R: Rng>(n: usize, r: &mut R) -> AgentState {
    let lat: Vec<f64> = (0..n).map(|_| r.random_range(5.0..40.0)).collect();
    let p: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
    encode_state(&lat, &p, 40.0).unwrap()
}

fn sac_gradients(n: usize, s: usize, seed: u64) -> Vec<(String, f64)> {
    let mut r = rng(seed);
    let nets = SacNetworks::new(n, s, &SacConfig::default(), &mut r).unwrap();
    let mut out = Vec::new();

    let transitions: Vec<Transition> = (0..4)
        .map(|_| {
            let state = random_state(n, &mut r);
            let (action, _) = nets
                .select_positions(&state, crpfl::sac::SelectMode::Explore, &mut r)
                .unwrap();
            Transition {
                state,
                action,
                reward: r.random_range(-1.0..1.0),
                next_state: random_state(n, &mut r),
                done: false,
            }
        })
        .collect();
    let batch: Vec<&Transition> = transitions.iter().collect();
    let targets: Vec<f64> = (0..4).map(|_| r.random_range(-1.0..1.0)).collect();
    for (name, critic) in [("q1", &nets.q1), ("q2", &nets.q2)] {
        let analytic: Vec<f64> = nets
            .critic_mse(critic, &batch, &targets)
            .unwrap()
            .grads
            .values()
            .copied()
            .collect();
        let numeric = fd_gradient(critic, 1e-5, |c| nets.critic_mse(c, &batch, &targets).unwrap().loss);
        out.push((format!("critic {name} n={n}"), max_relative_error(&analytic, &numeric)));
    }

    let states_owned: Vec<AgentState> = (0..3).map(|_| random_state(n, &mut r)).collect();
    let states: Vec<&AgentState> = states_owned.iter().collect();
    let actions = nets.sample_actions(&states, 4, &mut r).unwrap();
    let eval = nets.actor_eval(&nets.policy, &states, &actions).unwrap();
    let eta = nets.temperature();
    let weights: Vec<Vec<f64>> = states
        .iter()
        .zip(&actions)
        .map(|(st, samples)| {
            let logits = nets.policy.forward(st.features()).unwrap();
            let obj: Vec<f64> = samples
                .iter()
                .map(|a| eta * log_prob(&logits, a).unwrap() - nets.q_min(st, a).unwrap())
                .collect();
            let sum: f64 = obj.iter().sum();
            obj.iter().map(|o| o - (sum - o) / (obj.len() - 1) as f64).collect()
        })
        .collect();
    let total = 12.0;
    let surrogate = |policy: &Mlp| -> f64 {
        let mut acc = 0.0;
        for ((st, samples), w) in states.iter().zip(&actions).zip(&weights) {
            let logits = policy.forward(st.features()).unwrap();
            for (a, wj) in samples.iter().zip(w) {
                acc += wj * log_prob(&logits, a).unwrap() / total;
            }
        }
        acc
    };
    let analytic: Vec<f64> = eval.grads.values().copied().collect();
    let numeric = fd_gradient(&nets.policy, 1e-5, surrogate);
    out.push((format!("actor n={n}"), max_relative_error(&analytic, &numeric)));

    let mut temp = nets.clone();
    let mean_lp = eval.mean_log_prob;
    let x0 = temp.log_temperature;
    // the gradient the optimizer applies to log eta
    let analytic = temp.temperature_loss(mean_lp);
    let h = 1e-6;
    temp.log_temperature = x0 + h;
    let up = temp.temperature_loss(mean_lp);
    temp.log_temperature = x0 - h;
    let down = temp.temperature_loss(mean_lp);
    out.push((
        format!("temperature n={n}"),
        max_relative_error(&[analytic], &[(up - down) / (2.0 * h)]),
    ));
    out
}

fn gradient_fidelity() -> Verdict {
    let mut checks: Vec<(String, f64)> = Vec::new();
    let sizes = coverage_sizes();
    let mut r = rng(1004);
    let mut archs: Vec<Vec<usize>> = vec![vec![8, 16, 4]];
    for &n in &sizes {
        archs.push(vec![2 * n, 64, 64, n]);
        archs.push(vec![3 * n, 64, 64, 1]);
    }
    for sizes in &archs {
        let net = Mlp::new(sizes, &mut r).unwrap();
        let x: Vec<f64> = (0..sizes[0]).map(|_| r.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..*sizes.last().unwrap()).map(|_| r.random_range(-1.0..1.0)).collect();
        let analytic: Vec<f64> = net.backward(&x, &v).unwrap().values().copied().collect();
        let numeric = fd_gradient(&net, 1e-5, |m| {
            m.forward(&x).unwrap().iter().zip(&v).map(|(a, b)| a * b).sum()
        });
        checks.push((format!("mlp {sizes:?}"), max_relative_error(&analytic, &numeric)));
    }
    for (i, &n) in [sizes[0], *sizes.last().unwrap()].iter().enumerate() {
        checks.extend(sac_gradients(n, 5, 1005 + i as u64));
    }
    let (name, worst) = checks
        .iter()
        .cloned()
        .fold((String::new(), 0.0), |acc, c| if c.1 > acc.1 { c } else { acc });
    verdict(
        worst < 1e-4,
        format!(
            "{} checks, worst relative error {worst:.2e} ({name}, limit 1e-4)",
            checks.len()
        ),
    )
}

fn plackett_luce_normalization() -> Verdict {
    let mut r = rng(1006);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for n in 1..=5 {
        for size in 1..=n {
            for _ in 0..5 {
                let logits: Vec<f64> = (0..n).map(|_| r.random_range(-4.0..4.0)).collect();
                let total: f64 = ordered_subsets(n, size)
                    .iter()
                    .map(|a| log_prob(&logits, a).unwrap().exp())
                    .sum();
                worst = worst.max((total - 1.0).abs());
                cases += 1;
            }
        }
    }
    verdict(
        worst < 1e-9,
        format!("{cases} logit sets, max |sum - 1| {worst:.2e} (limit 1e-9)"),
    )
}

fn fairness_spot_values() -> Verdict {
    let f = fairness_metric(&[2, 4, 6], 1e-8);
    let independent = fairness_oracle(&[2, 4, 6], 1e-8);
    let equal = fairness_metric(&[5, 5, 5, 5], 1e-8);
    let spot = (f - 0.984993).abs() <= 1e-5;
    verdict(
        spot && equal > 0.999999 && (f - independent).abs() < 1e-12,
        format!(
            "f([2,4,6]) = {f:.6} vs expected 0.984993 +/- 1e-5 (independent recomputation {independent:.6}); f(equal) = {equal:.7}"
        ),
    )
}

fn waterfill_oracle() -> Verdict {
    let mut r = rng(1007);
    let mut mismatches = 0;
    let mut exhausted = 0;
    for case in 0..100 {
        let n = r.random_range(1..=12);
        let clients: Vec<(usize, f64, f64)> = (0..n)
            .map(|i| {
                (
                    (i * 7) % 13,
                    r.random_range(0..8) as f64 * 2.5 + 0.1,
                    r.random_range(1e6..4e7),
                )
            })
            .collect();
        let total = r.random_range(1e7..1.2e8);
        let unit = if case % 4 == 0 { 1e5 } else { 0.0 };
        let cands: Vec<Candidate> = clients
            .iter()
            .map(|&(client_id, snr, demand)| Candidate { client_id, snr, demand })
            .collect();
        let got: Vec<(usize, u64)> = waterfill_allocate(&cands, total, unit)
            .iter()
            .map(|g| (g.client_id, g.bandwidth.to_bits()))
            .collect();
        let want: Vec<(usize, u64)> = greedy_waterfill(&clients, total, unit)
            .into_iter()
            .map(|(c, b)| (c, b.to_bits()))
            .collect();
        mismatches += usize::from(got != want);
        exhausted += usize::from(want.iter().any(|&(_, b)| b == 0));
    }
    verdict(
        mismatches == 0,
        format!("100 instances ({exhausted} exhaust the budget), {mismatches} differ bit-wise from the greedy loop"),
    )
}

/// Training runs shared by the trend criteria, keyed by (servers, policy, seed).
#[derive(Default)]
struct Bank {
    runs: BTreeMap<(usize, PolicyKind, u64), RunSummary>,
}

impl Bank {
    fn get(&mut self, m: usize, policy: PolicyKind, seed: u64) -> &RunSummary {
        self.runs.entry((m, policy, seed)).or_insert_with(|| {
            let cfg = ExperimentConfig {
                num_servers: m,
                policy,
                seed,
                rounds: ROUNDS,
                ..ExperimentConfig::default()
            };
            summarize(&run_experiment(&cfg, None).unwrap(), WINDOW)
        })
    }

    fn mean(&mut self, m: usize, policy: PolicyKind, seeds: &[u64], f: impl Fn(&RunSummary) -> f64) -> f64 {
        seeds.iter().map(|&s| f(self.get(m, policy, s))).sum::<f64>() / seeds.len() as f64
    }
}

fn conflict_trend(bank: &mut Bank) -> Verdict {
    let c = |r: &RunSummary| r.mean_conflicts;
    let rl = bank.mean(2, PolicyKind::RlCrp, &SEEDS, c);
    let random = bank.mean(2, PolicyKind::RandomFedavg, &SEEDS, c);
    let sac = bank.mean(2, PolicyKind::SacNoCrp, &SEEDS, c);
    let vs_random = 1.0 - rl / random;
    let vs_sac = 1.0 - rl / sac;
    verdict(
        vs_random >= 0.30 && vs_sac >= 0.15,
        format!(
            "conflicts/round rl_crp {rl:.4}, random_fedavg {random:.4}, sac_no_crp {sac:.4}: \
             {:.1}% below random (need 30%), {:.1}% below sac_no_crp (need 15%)",
            100.0 * vs_random,
            100.0 * vs_sac
        ),
    )
}

fn scaling_trend(bank: &mut Bank) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for policy in PolicyKind::ALL {
        let v: Vec<f64> = [2, 3, 4]
            .iter()
            .map(|&m| bank.mean(m, policy, &SCALING_SEEDS, |r| r.mean_conflicts))
            .collect();
        ok &= v[0] <= v[1] && v[1] <= v[2];
        parts.push(format!("{policy} {:.3}/{:.3}/{:.3}", v[0], v[1], v[2]));
    }
    verdict(
        ok,
        format!(
            "conflicts/round at M=2/3/4, seeds {SCALING_SEEDS:?}: {}",
            parts.join(", ")
        ),
    )
}

fn fairness_ablation(bank: &mut Bank) -> Verdict {
    let c = |r: &RunSummary| r.mean_conflicts;
    let a = |r: &RunSummary| r.accuracy.unwrap_or(f64::NAN);
    let rl_c = bank.mean(2, PolicyKind::RlCrp, &SEEDS, c);
    let nf_c = bank.mean(2, PolicyKind::RlCrpNoFairness, &SEEDS, c);
    let rl_a = bank.mean(2, PolicyKind::RlCrp, &SEEDS, a);
    let nf_a = bank.mean(2, PolicyKind::RlCrpNoFairness, &SEEDS, a);
    verdict(
        nf_c <= rl_c * 1.05 && rl_a > nf_a,
        format!(
            "conflicts/round no_fairness {nf_c:.4} vs rl_crp {rl_c:.4} (5% tie band); \
             accuracy rl_crp {rl_a:.4} vs no_fairness {nf_a:.4}"
        ),
    )
}

fn reward_ordering(bank: &mut Bank) -> Verdict {
    let auc = |r: &RunSummary| r.reward_auc;
    let mut ok = true;
    let mut parts = Vec::new();
    for (m, seeds) in [(2, &SEEDS[..]), (4, &SCALING_SEEDS[..])] {
        let rl = bank.mean(m, PolicyKind::RlCrp, seeds, auc);
        let sac = bank.mean(m, PolicyKind::SacNoCrp, seeds, auc);
        ok &= rl > sac;
        parts.push(format!("M={m}: rl_crp {rl:.1} vs sac_no_crp {sac:.1}"));
    }
    verdict(ok, format!("reward area per server, {}", parts.join("; ")))
}

fn determinism() -> Verdict {
    let cfg = ExperimentConfig {
        rounds: 300,
        ..ExperimentConfig::default()
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_experiment(&cfg, Some(a.path())).unwrap();
    run_experiment(&cfg, Some(b.path())).unwrap();
    let mut same = true;
    let mut bytes = 0;
    for f in [METRICS_CSV, METRICS_JSON] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        same &= x == std::fs::read(b.path().join(f)).unwrap();
        bytes += x.len();
    }
    verdict(
        same,
        format!("two 300-round rl_crp runs, {bytes} exported bytes identical: {same}"),
    )
}

fn main() {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: u32| selected.is_empty() || selected.contains(&n);
    let mut bank = Bank::default();
    let titles = [
        "HMM forward oracle",
        "conflict prediction oracle",
        "EM monotonicity",
        "gradient fidelity",
        "Plackett-Luce normalization",
        "fairness spot values",
        "water-filling oracle",
        "conflict trend",
        "scaling trend",
        "fairness ablation trend",
        "reward ordering",
        "end-to-end determinism",
    ];
    let mut failed = Vec::new();
    for n in 1..=12u32 {
        if !wanted(n) {
            continue;
        }
        let start = Instant::now();
        let v = match n {
            1 => forward_oracle(),
            2 => prediction_oracle(),
            3 => em_monotonicity(),
            4 => gradient_fidelity(),
            5 => plackett_luce_normalization(),
            6 => fairness_spot_values(),
            7 => waterfill_oracle(),
            8 => conflict_trend(&mut bank),
            9 => scaling_trend(&mut bank),
            10 => fairness_ablation(&mut bank),
            11 => reward_ordering(&mut bank),
            _ => determinism(),
        };
        if !v.pass {
            failed.push(n);
        }
        println!(
            "criterion {n:>2} {} {}: {} [{:.1}s]",
            if v.pass { "PASS" } else { "FAIL" },
            titles[n as usize - 1],
            v.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} failed {failed:?}", failed.len());
    if !failed.is_empty() && std::env::var("CRPFL_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}

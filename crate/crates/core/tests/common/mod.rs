//! Independent reference implementations used by the integration tests.
//! None of these call into the library's algorithms; they only share its
//! data types.

#![allow(dead_code)]

use crpfl::hmm::HmmParams;
use crpfl::nn::Mlp;
use crpfl::orchestrator::{ExperimentConfig, PolicyKind};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_row<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| 0.05 + rng.random::<f64>()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / s).collect()
}

/// Strictly positive random `(A, B, pi)`.
pub fn random_hmm<R: Rng>(k: usize, v: usize, rng: &mut R) -> HmmParams {
    let a = (0..k).map(|_| random_row(k, rng)).collect();
    let b = (0..k).map(|_| random_row(v, rng)).collect();
    let pi = random_row(k, rng);
    HmmParams::new(a, b, pi).unwrap()
}

pub fn random_obs<R: Rng>(len: usize, v: usize, rng: &mut R) -> Vec<usize> {
    (0..len).map(|_| rng.random_range(0..v)).collect()
}

/// Calls `f` with every sequence in `{0..base}^len`.
fn for_each_path(base: usize, len: usize, mut f: impl FnMut(&[usize])) {
    let mut path = vec![0; len];
    loop {
        f(&path);
        let mut i = 0;
        loop {
            if i == len {
                return;
            }
            path[i] += 1;
            if path[i] < base {
                break;
            }
            path[i] = 0;
            i += 1;
        }
    }
}

/// Joint probability of a hidden path and the observations it covers.
fn path_joint(p: &HmmParams, path: &[usize], obs: &[usize]) -> f64 {
    let mut prob = p.initial()[path[0]] * p.emission()[path[0]][obs[0]];
    for t in 1..obs.len() {
        prob *= p.transition()[path[t - 1]][path[t]] * p.emission()[path[t]][obs[t]];
    }
    prob
}

/// `P(obs)` by summing over all `K^T` hidden paths.
pub fn enumerate_likelihood(p: &HmmParams, obs: &[usize]) -> f64 {
    let mut total = 0.0;
    for_each_path(p.num_states(), obs.len(), |path| total += path_joint(p, path, obs));
    total
}

/// Posterior of the hidden state at `t` given all of `obs`.
pub fn enumerate_smoothed(p: &HmmParams, obs: &[usize], t: usize) -> Vec<f64> {
    let mut out = vec![0.0; p.num_states()];
    for_each_path(p.num_states(), obs.len(), |path| {
        out[path[t]] += path_joint(p, path, obs)
    });
    let z: f64 = out.iter().sum();
    out.iter().map(|x| x / z).collect()
}

/// `P(o_{T-1+d} = 1 | obs)` by marginalizing hidden paths extended `d`
/// unobserved steps past the last observation.
pub fn enumerate_prediction(p: &HmmParams, obs: &[usize], d: usize) -> f64 {
    let t = obs.len();
    let (mut num, mut den) = (0.0, 0.0);
    for_each_path(p.num_states(), t + d, |path| {
        let mut prob = path_joint(p, &path[..t], obs);
        for s in t..t + d {
            prob *= p.transition()[path[s - 1]][path[s]];
        }
        den += prob;
        num += prob * p.emission()[path[t + d - 1]][1];
    });
    num / den
}

/// Greedy water-filling written as a plain loop over a pre-sorted list.
/// Returns `(client_id, bandwidth)` in service order.
pub fn greedy_waterfill(clients: &[(usize, f64, f64)], total: f64, min_unit: f64) -> Vec<(usize, f64)> {
    let mut sorted = clients.to_vec();
    sorted.sort_by_key(|c| c.0);
    // stable sort keeps the lower id first among equal SNRs
    sorted.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    let mut budget = total;
    let mut out = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let (id, _, demand) = sorted[i];
        let need = if min_unit > 0.0 && demand.is_finite() {
            (demand / min_unit).ceil() * min_unit
        } else {
            demand
        };
        if need <= budget {
            out.push((id, need));
            budget -= need;
            i += 1;
        } else {
            out.push((id, budget));
            i += 1;
            break;
        }
    }
    for &(id, _, _) in &sorted[i..] {
        out.push((id, 0.0));
    }
    out
}

/// Every ordered selection of `size` distinct positions out of `n`.
pub fn ordered_subsets(n: usize, size: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    fn rec(n: usize, size: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == size {
            out.push(cur.clone());
            return;
        }
        for c in 0..n {
            if !cur.contains(&c) {
                cur.push(c);
                rec(n, size, cur, out);
                cur.pop();
            }
        }
    }
    rec(n, size, &mut cur, &mut out);
    out
}

/// Probability of an ordered draw: product of softmax weights over what is left.
pub fn sequential_softmax_prob(logits: &[f64], order: &[usize]) -> f64 {
    let mut left: Vec<usize> = (0..logits.len()).collect();
    let mut prob = 1.0;
    for &c in order {
        let z: f64 = left.iter().map(|&i| logits[i].exp()).sum();
        prob *= logits[c].exp() / z;
        left.retain(|&i| i != c);
    }
    prob
}

/// `tanh(mean / (std + eps))` via sums of squares.
pub fn fairness_oracle(counts: &[u64], eps: f64) -> f64 {
    let n = counts.len() as f64;
    let s1: f64 = counts.iter().map(|&c| c as f64).sum();
    let s2: f64 = counts.iter().map(|&c| (c as f64) * (c as f64)).sum();
    let mean = s1 / n;
    let var = (s2 / n - mean * mean).max(0.0);
    (mean / (var.sqrt() + eps)).tanh()
}

/// Central finite-difference gradient of `f` over every parameter of `net`.
pub fn fd_gradient(net: &Mlp, h: f64, f: impl Fn(&Mlp) -> f64) -> Vec<f64> {
    let n = net.num_params();
    (0..n)
        .map(|i| {
            let mut plus = net.clone();
            *plus.params_mut().nth(i).unwrap() += h;
            let mut minus = net.clone();
            *minus.params_mut().nth(i).unwrap() -= h;
            (f(&plus) - f(&minus)) / (2.0 * h)
        })
        .collect()
}

/// Largest elementwise relative error, with a small absolute floor so
/// entries that are zero up to rounding do not dominate.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

/// Small, fast configuration on the default two-server topology.
pub fn small_config(policy: PolicyKind, rounds: u64) -> ExperimentConfig {
    ExperimentConfig {
        policy,
        rounds,
        train_samples: 1000,
        test_samples: 200,
        local_epochs: 1,
        eval_every: 5,
        sac_hidden: vec![16],
        sac_batch_size: 8,
        sac_warmup_rounds: 10,
        ..ExperimentConfig::default()
    }
}

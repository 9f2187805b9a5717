//! Gap-aware categorical hidden Markov model used to estimate the chance
//! that a client will be lost to a selection conflict.
//!
//! A server only sees a client when it selects it, so each history is an
//! append-only prefix of observations followed by a trailing gap of `d`
//! rounds with no data. Prediction filters the prefix with a scaled forward
//! pass, pushes the last posterior through the transition matrix `d` times,
//! and reads off the emission probability of the conflict category.
//!
//! Forward and backward passes normalize every step and keep the scale
//! factors, so sequences of thousands of rounds stay well inside `f64` range.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Observation category for "normal operation".
pub const NORMAL: usize = 0;
/// Observation category for "lost to conflict or timeout".
pub const CONFLICT: usize = 1;

/// Row-sum tolerance for every stochastic vector.
pub const STOCHASTIC_TOL: f64 = 1e-9;

/// Default additive floor applied to re-estimated transition and emission rows.
pub const DEFAULT_SMOOTHING: f64 = 1e-6;

/// Parameters `(A, B, pi)` of one categorical HMM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct HmmParams {
    num_states: usize,
    num_categories: usize,
    transition: Vec<Vec<f64>>,
    emission: Vec<Vec<f64>>,
    initial: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawParams {
    #[serde(rename = "K")]
    k: usize,
    #[serde(rename = "V")]
    v: usize,
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    pi: Vec<f64>,
}

impl TryFrom<RawParams> for HmmParams {
    type Error = Error;

    fn try_from(raw: RawParams) -> Result<Self> {
        let params = HmmParams::new(raw.a, raw.b, raw.pi)?;
        if params.num_states != raw.k || params.num_categories != raw.v {
            return Err(Error::ShapeMismatch(format!(
                "declared K={} V={}, matrices imply K={} V={}",
                raw.k, raw.v, params.num_states, params.num_categories
            )));
        }
        Ok(params)
    }
}

impl From<HmmParams> for RawParams {
    fn from(p: HmmParams) -> Self {
        RawParams {
            k: p.num_states,
            v: p.num_categories,
            a: p.transition,
            b: p.emission,
            pi: p.initial,
        }
    }
}

fn check_stochastic(row: &[f64], what: &str) -> Result<()> {
    if row.iter().any(|&x| !x.is_finite() || !(0.0..=1.0).contains(&x)) {
        return Err(Error::InvalidParams(format!("{what} has entries outside [0, 1]")));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(Error::InvalidParams(format!("{what} sums to {sum}, not 1")));
    }
    Ok(())
}

fn normalize(row: &mut [f64]) {
    let sum: f64 = row.iter().sum();
    if sum > 0.0 {
        row.iter_mut().for_each(|x| *x /= sum);
    } else {
        let n = row.len() as f64;
        row.iter_mut().for_each(|x| *x = 1.0 / n);
    }
}

fn smooth(row: &mut [f64], floor: f64) {
    row.iter_mut().for_each(|x| *x += floor);
    normalize(row);
}

impl HmmParams {
    /// Builds validated parameters from a `K x K` transition matrix, a
    /// `K x V` emission matrix and a length-`K` initial distribution.
    pub fn new(transition: Vec<Vec<f64>>, emission: Vec<Vec<f64>>, initial: Vec<f64>) -> Result<Self> {
        let k = initial.len();
        if k == 0 {
            return Err(Error::InvalidParams("at least one hidden state is required".into()));
        }
        if transition.len() != k || transition.iter().any(|r| r.len() != k) {
            return Err(Error::ShapeMismatch(format!("transition must be {k}x{k}")));
        }
        if emission.len() != k {
            return Err(Error::ShapeMismatch(format!("emission must have {k} rows")));
        }
        let v = emission[0].len();
        if v == 0 || emission.iter().any(|r| r.len() != v) {
            return Err(Error::ShapeMismatch("emission rows must share a positive width".into()));
        }
        for (i, row) in transition.iter().enumerate() {
            check_stochastic(row, &format!("transition row {i}"))?;
        }
        for (i, row) in emission.iter().enumerate() {
            check_stochastic(row, &format!("emission row {i}"))?;
        }
        check_stochastic(&initial, "initial distribution")?;
        Ok(HmmParams {
            num_states: k,
            num_categories: v,
            transition,
            emission,
            initial,
        })
    }

    /// Draws every row from a flat Dirichlet distribution.
    pub fn random<R: Rng + ?Sized>(num_states: usize, num_categories: usize, rng: &mut R) -> Result<Self> {
        let mut row = |n: usize| -> Vec<f64> {
            let mut r: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
            normalize(&mut r);
            r
        };
        let transition = (0..num_states).map(|_| row(num_states)).collect();
        let emission = (0..num_states).map(|_| row(num_categories)).collect();
        let initial = row(num_states);
        HmmParams::new(transition, emission, initial)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_categories(&self) -> usize {
        self.num_categories
    }

    pub fn transition(&self) -> &[Vec<f64>] {
        &self.transition
    }

    pub fn emission(&self) -> &[Vec<f64>] {
        &self.emission
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    /// One step of state propagation: `dist · A`.
    pub fn propagate(&self, dist: &[f64]) -> Vec<f64> {
        let k = self.num_states;
        let mut out = vec![0.0; k];
        for (i, &p) in dist.iter().enumerate() {
            for (j, o) in out.iter_mut().enumerate() {
                *o += p * self.transition[i][j];
            }
        }
        out
    }

    /// Probability of emitting `category` under the state distribution `dist`.
    pub fn emission_probability(&self, dist: &[f64], category: usize) -> f64 {
        dist.iter()
            .zip(&self.emission)
            .map(|(p, row)| p * row[category])
            .sum::<f64>()
            .clamp(0.0, 1.0)
    }

    /// Conflict probability with no observations at all: `pi · A^steps · B[:, 1]`.
    pub fn prior_conflict(&self, steps: u64) -> f64 {
        let mut dist = self.initial.clone();
        for _ in 0..steps.min(PRIOR_STEP_CAP) {
            dist = self.propagate(&dist);
        }
        self.emission_probability(&dist, CONFLICT.min(self.num_categories - 1))
    }

    fn check_obs(&self, obs: &[usize]) -> Result<()> {
        if obs.is_empty() {
            return Err(Error::EmptySequence);
        }
        if let Some(&value) = obs.iter().find(|&&o| o >= self.num_categories) {
            return Err(Error::CategoryOutOfRange {
                value,
                num_categories: self.num_categories,
            });
        }
        Ok(())
    }

    fn check_same_shape(&self, other: &HmmParams) -> Result<()> {
        if self.num_states != other.num_states || self.num_categories != other.num_categories {
            return Err(Error::ShapeMismatch(format!(
                "K={} V={} vs K={} V={}",
                self.num_states, self.num_categories, other.num_states, other.num_categories
            )));
        }
        Ok(())
    }
}

// Propagating far past the mixing time changes nothing measurable.
const PRIOR_STEP_CAP: u64 = 10_000;

/// Output of the scaled forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardResult {
    /// Row `t` is `alpha_t` normalized to sum to one, i.e. the filtered posterior.
    pub scaled_alpha: Vec<Vec<f64>>,
    /// `c_t = sum_i alpha_t(i) / prod_{s<t} c_s`; the unscaled alpha at `t` is
    /// `scaled_alpha[t] * prod_{s<=t} c_s`.
    pub scale_factors: Vec<f64>,
    /// `ln P(obs | params)`, the sum of `ln c_t`.
    pub log_likelihood: f64,
}

impl ForwardResult {
    pub fn len(&self) -> usize {
        self.scaled_alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scaled_alpha.is_empty()
    }

    /// Unscaled `alpha_t` recovered from the scale factors.
    pub fn unscaled_row(&self, t: usize) -> Vec<f64> {
        let scale: f64 = self.scale_factors[..=t].iter().product();
        self.scaled_alpha[t].iter().map(|a| a * scale).collect()
    }
}

/// Output of the scaled backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BackwardResult {
    /// Row `t` is `beta_t` divided by `prod_{s>=t} scale_factors[s]`.
    pub scaled_beta: Vec<Vec<f64>>,
    /// Per-step normalizers; the last entry is always 1 because `beta_T = 1`.
    pub scale_factors: Vec<f64>,
}

impl BackwardResult {
    /// Unscaled `beta_t` recovered from the scale factors.
    pub fn unscaled_row(&self, t: usize) -> Vec<f64> {
        let scale: f64 = self.scale_factors[t..].iter().product();
        self.scaled_beta[t].iter().map(|b| b * scale).collect()
    }
}

/// Scaled forward algorithm.
pub fn forward(params: &HmmParams, obs: &[usize]) -> Result<ForwardResult> {
    params.check_obs(obs)?;
    let k = params.num_states;
    let mut scaled_alpha = Vec::with_capacity(obs.len());
    let mut scale_factors = Vec::with_capacity(obs.len());
    let mut log_likelihood = 0.0;

    let mut row: Vec<f64> = (0..k).map(|i| params.initial[i] * params.emission[i][obs[0]]).collect();
    for (t, &o) in obs.iter().enumerate() {
        if t > 0 {
            row = params.propagate(&row);
            for (j, a) in row.iter_mut().enumerate() {
                *a *= params.emission[j][o];
            }
        }
        let c: f64 = row.iter().sum();
        if c <= 0.0 {
            return Err(Error::ZeroLikelihood);
        }
        row.iter_mut().for_each(|a| *a /= c);
        log_likelihood += c.ln();
        scale_factors.push(c);
        scaled_alpha.push(row.clone());
    }
    Ok(ForwardResult {
        scaled_alpha,
        scale_factors,
        log_likelihood,
    })
}

/// Scaled backward algorithm.
pub fn backward(params: &HmmParams, obs: &[usize]) -> Result<BackwardResult> {
    params.check_obs(obs)?;
    let k = params.num_states;
    let n = obs.len();
    let mut scaled_beta = vec![vec![1.0; k]; n];
    let mut scale_factors = vec![1.0; n];
    for t in (0..n - 1).rev() {
        let next = &scaled_beta[t + 1];
        let o = obs[t + 1];
        let mut row: Vec<f64> = (0..k)
            .map(|i| {
                (0..k)
                    .map(|j| params.transition[i][j] * params.emission[j][o] * next[j])
                    .sum()
            })
            .collect();
        let s: f64 = row.iter().sum();
        if s <= 0.0 {
            return Err(Error::ZeroLikelihood);
        }
        row.iter_mut().for_each(|b| *b /= s);
        scale_factors[t] = s;
        scaled_beta[t] = row;
    }
    Ok(BackwardResult {
        scaled_beta,
        scale_factors,
    })
}

/// Filtered posterior over hidden states at time `at`.
pub fn posterior_state(fwd: &ForwardResult, at: usize) -> Result<Vec<f64>> {
    fwd.scaled_alpha.get(at).cloned().ok_or(Error::OutOfRange {
        index: at,
        len: fwd.len(),
    })
}

/// A server's observation record for one client: a prefix of categorical
/// observations ending at `last_observed_round`, then a trailing gap up to
/// `current_round`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionHistory {
    pub client_id: usize,
    observations: Vec<usize>,
    last_observed_round: u64,
    current_round: u64,
}

impl SelectionHistory {
    pub fn new(client_id: usize) -> Self {
        SelectionHistory {
            client_id,
            observations: Vec::new(),
            last_observed_round: 0,
            current_round: 0,
        }
    }

    /// Builds a history whose last observation happened at `last_observed_round`.
    pub fn with_observations(
        client_id: usize,
        observations: Vec<usize>,
        last_observed_round: u64,
        current_round: u64,
    ) -> Result<Self> {
        if current_round < last_observed_round {
            return Err(Error::InvalidParams(format!(
                "current round {current_round} precedes last observation {last_observed_round}"
            )));
        }
        Ok(SelectionHistory {
            client_id,
            observations,
            last_observed_round,
            current_round,
        })
    }

    pub fn observations(&self) -> &[usize] {
        &self.observations
    }

    pub fn last_observed_round(&self) -> u64 {
        self.last_observed_round
    }

    pub fn current_round(&self) -> u64 {
        self.current_round
    }

    /// Trailing gap `d = current_round - last_observed_round`.
    pub fn gap(&self) -> u64 {
        self.current_round - self.last_observed_round
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Moves the prediction target forward; never moves backward.
    pub fn advance_to(&mut self, round: u64) {
        self.current_round = self.current_round.max(round);
    }

    /// Appends the observation made at `round`.
    pub fn record(&mut self, round: u64, value: usize) -> Result<()> {
        if !self.observations.is_empty() && round <= self.last_observed_round {
            return Err(Error::InvalidParams(format!(
                "observation at round {round} does not follow round {}",
                self.last_observed_round
            )));
        }
        self.observations.push(value);
        self.last_observed_round = round;
        self.current_round = self.current_round.max(round);
        Ok(())
    }
}

/// Probability that the next observation of this client is a conflict:
/// `gamma_{t-d} · A^d · B[:, 1]`.
pub fn predict_conflict(params: &HmmParams, history: &SelectionHistory) -> Result<f64> {
    if history.observations.is_empty() {
        return Err(Error::EmptySequence);
    }
    let gap = history.gap();
    if gap == 0 {
        return Err(Error::ZeroGap);
    }
    let fwd = forward(params, &history.observations)?;
    let mut dist = posterior_state(&fwd, fwd.len() - 1)?;
    for _ in 0..gap.min(PRIOR_STEP_CAP) {
        dist = params.propagate(&dist);
    }
    Ok(params.emission_probability(&dist, CONFLICT.min(params.num_categories - 1)))
}

/// Per-step state posteriors `gamma_t` and pairwise posteriors `xi_t`.
struct Posteriors {
    gamma: Vec<Vec<f64>>,
    xi_sum: Vec<Vec<f64>>,
}

fn posteriors(params: &HmmParams, obs: &[usize]) -> Result<Posteriors> {
    let k = params.num_states;
    let fwd = forward(params, obs)?;
    let bwd = backward(params, obs)?;
    let gamma: Vec<Vec<f64>> = fwd
        .scaled_alpha
        .iter()
        .zip(&bwd.scaled_beta)
        .map(|(a, b)| {
            let mut g: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
            normalize(&mut g);
            g
        })
        .collect();

    let mut xi_sum = vec![vec![0.0; k]; k];
    let mut xi = vec![vec![0.0; k]; k];
    for t in 0..obs.len() - 1 {
        let a = &fwd.scaled_alpha[t];
        let b = &bwd.scaled_beta[t + 1];
        let o = obs[t + 1];
        let mut total = 0.0;
        for i in 0..k {
            for j in 0..k {
                let v = a[i] * params.transition[i][j] * params.emission[j][o] * b[j];
                xi[i][j] = v;
                total += v;
            }
        }
        for i in 0..k {
            for j in 0..k {
                xi_sum[i][j] += xi[i][j] / total;
            }
        }
    }
    Ok(Posteriors { gamma, xi_sum })
}

/// One batch Baum–Welch re-estimation on a single sequence, with the default
/// smoothing floor on transition and emission rows.
pub fn baum_welch_step(params: &HmmParams, obs: &[usize]) -> Result<HmmParams> {
    baum_welch_step_with(params, obs, DEFAULT_SMOOTHING)
}

/// Like [`baum_welch_step`] with an explicit additive floor. The initial
/// distribution is set to `gamma_1` without smoothing.
pub fn baum_welch_step_with(params: &HmmParams, obs: &[usize], smoothing: f64) -> Result<HmmParams> {
    params.check_obs(obs)?;
    if obs.len() < 2 {
        return Err(Error::InsufficientData);
    }
    let k = params.num_states;
    let v = params.num_categories;
    let post = posteriors(params, obs)?;

    let mut transition = post.xi_sum;
    for (i, row) in transition.iter_mut().enumerate() {
        let denom: f64 = post.gamma[..obs.len() - 1].iter().map(|g| g[i]).sum();
        if denom > 0.0 {
            row.iter_mut().for_each(|x| *x /= denom);
        } else {
            row.iter_mut().for_each(|x| *x = 0.0);
        }
        smooth(row, smoothing);
    }

    let mut emission = vec![vec![0.0; v]; k];
    for (g, &o) in post.gamma.iter().zip(obs) {
        for j in 0..k {
            emission[j][o] += g[j];
        }
    }
    for (j, row) in emission.iter_mut().enumerate() {
        let denom: f64 = post.gamma.iter().map(|g| g[j]).sum();
        if denom > 0.0 {
            row.iter_mut().for_each(|x| *x /= denom);
        }
        smooth(row, smoothing);
    }

    let mut initial = post.gamma[0].clone();
    normalize(&mut initial);
    HmmParams::new(transition, emission, initial)
}

/// Log-likelihood of `obs`, convenience wrapper over [`forward`].
pub fn log_likelihood(params: &HmmParams, obs: &[usize]) -> Result<f64> {
    Ok(forward(params, obs)?.log_likelihood)
}

/// Exponential-moving-average blend `(1 - rho) * old + rho * batch`, row by
/// row, followed by renormalization.
pub fn incremental_update(old: &HmmParams, batch_estimate: &HmmParams, rho: f64) -> Result<HmmParams> {
    old.check_same_shape(batch_estimate)?;
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::InvalidParams(format!("blend factor {rho} outside (0, 1]")));
    }
    if rho == 1.0 {
        return Ok(batch_estimate.clone());
    }
    let blend = |a: &[f64], b: &[f64]| -> Vec<f64> {
        let mut r: Vec<f64> = a.iter().zip(b).map(|(x, y)| (1.0 - rho) * x + rho * y).collect();
        normalize(&mut r);
        r
    };
    let transition = old
        .transition
        .iter()
        .zip(&batch_estimate.transition)
        .map(|(a, b)| blend(a, b))
        .collect();
    let emission = old
        .emission
        .iter()
        .zip(&batch_estimate.emission)
        .map(|(a, b)| blend(a, b))
        .collect();
    let initial = blend(&old.initial, &batch_estimate.initial);
    HmmParams::new(transition, emission, initial)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_state(p_conflict: f64) -> HmmParams {
        HmmParams::new(vec![vec![1.0]], vec![vec![1.0 - p_conflict, p_conflict]], vec![1.0]).unwrap()
    }

    fn deterministic_chain() -> HmmParams {
        HmmParams::new(
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![1.0, 0.0],
        )
        .unwrap()
    }

    #[test]
    fn single_state_likelihood_is_product_of_emissions() {
        let fwd = forward(&single_state(0.7), &[1, 1]).unwrap();
        assert!((fwd.log_likelihood - 0.49f64.ln()).abs() < 1e-12);
        assert!((fwd.log_likelihood.exp() - 0.49).abs() < 1e-12);
    }

    #[test]
    fn deterministic_chain_has_unit_likelihood() {
        let fwd = forward(&deterministic_chain(), &[0, 0, 0]).unwrap();
        assert!(fwd.log_likelihood.abs() < 1e-12);
        assert_eq!(posterior_state(&fwd, 2).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn forward_rejects_bad_input() {
        let p = single_state(0.5);
        assert!(matches!(forward(&p, &[]), Err(Error::EmptySequence)));
        assert!(matches!(
            forward(&p, &[0, 2]),
            Err(Error::CategoryOutOfRange {
                value: 2,
                num_categories: 2
            })
        ));
        let fwd = forward(&p, &[0]).unwrap();
        assert!(matches!(posterior_state(&fwd, 1), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn scaled_rows_sum_to_one_and_log_likelihood_matches_scales() {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(3);
        let p = HmmParams::random(3, 2, &mut rng).unwrap();
        let obs = [0, 1, 1, 0, 0, 1, 0, 0, 0, 1];
        let fwd = forward(&p, &obs).unwrap();
        for row in &fwd.scaled_alpha {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let from_scales: f64 = fwd.scale_factors.iter().map(|c| c.ln()).sum();
        assert!((from_scales - fwd.log_likelihood).abs() < 1e-9);
    }

    #[test]
    fn long_sequences_do_not_underflow() {
        let p = HmmParams::new(
            vec![vec![0.9, 0.1], vec![0.2, 0.8]],
            vec![vec![0.95, 0.05], vec![0.4, 0.6]],
            vec![0.5, 0.5],
        )
        .unwrap();
        let obs: Vec<usize> = (0..5000).map(|t| usize::from(t % 7 == 0)).collect();
        let fwd = forward(&p, &obs).unwrap();
        assert!(fwd.log_likelihood.is_finite());
        assert!(fwd.log_likelihood < -100.0);
        let bwd = backward(&p, &obs).unwrap();
        assert!(bwd.scaled_beta.iter().flatten().all(|b| b.is_finite()));
    }

    #[test]
    fn backward_base_case_and_single_state() {
        let p = single_state(0.3);
        let obs = [1, 0, 1];
        let bwd = backward(&p, &obs).unwrap();
        assert_eq!(bwd.unscaled_row(2), vec![1.0]);
        // beta_0 = B(o_1) * B(o_2) = 0.7 * 0.3
        assert!((bwd.unscaled_row(0)[0] - 0.21).abs() < 1e-12);
        assert!((bwd.unscaled_row(1)[0] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn single_state_prediction_is_emission() {
        let p = single_state(0.7);
        for d in 1..5 {
            let h = SelectionHistory::with_observations(0, vec![0, 1, 0], 10, 10 + d).unwrap();
            assert!((predict_conflict(&p, &h).unwrap() - 0.7).abs() < 1e-15);
        }
    }

    #[test]
    fn identity_transition_freezes_posterior() {
        let p = HmmParams::new(
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![vec![0.9, 0.1], vec![0.2, 0.8]],
            vec![1.0, 0.0],
        )
        .unwrap();
        for d in 1..6 {
            let h = SelectionHistory::with_observations(4, vec![0, 0, 0], 3, 3 + d).unwrap();
            assert!((predict_conflict(&p, &h).unwrap() - 0.1).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_gap_is_rejected() {
        let h = SelectionHistory::with_observations(0, vec![1], 5, 5).unwrap();
        assert!(matches!(predict_conflict(&single_state(0.5), &h), Err(Error::ZeroGap)));
    }

    #[test]
    fn history_bookkeeping() {
        let mut h = SelectionHistory::new(9);
        h.record(1, 0).unwrap();
        for t in 2..=4 {
            h.advance_to(t);
            assert_eq!(h.gap(), t - 1);
        }
        assert_eq!(h.len(), 1);
        assert!(h.record(1, 1).is_err());
        h.record(4, 1).unwrap();
        assert_eq!(h.gap(), 0);
        assert_eq!(h.observations(), &[0, 1]);
    }

    #[test]
    fn baum_welch_single_state_absorbs_all_mass() {
        let est = baum_welch_step(&single_state(0.4), &[1, 1, 1, 1]).unwrap();
        let b = &est.emission()[0];
        let d = DEFAULT_SMOOTHING;
        assert!((b[0] - d / (1.0 + 2.0 * d)).abs() < 1e-15);
        assert!((b[1] - (1.0 + d) / (1.0 + 2.0 * d)).abs() < 1e-15);
        assert!(b[0] < 1.1e-6);
    }

    #[test]
    fn baum_welch_needs_two_observations() {
        assert!(matches!(
            baum_welch_step(&single_state(0.4), &[1]),
            Err(Error::InsufficientData)
        ));
    }

    #[test]
    fn baum_welch_initial_equals_first_posterior() {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(11);
        let p = HmmParams::random(2, 2, &mut rng).unwrap();
        let obs = [1, 0, 0, 1, 1, 0];
        let fwd = forward(&p, &obs).unwrap();
        let bwd = backward(&p, &obs).unwrap();
        let mut gamma1: Vec<f64> = fwd.scaled_alpha[0]
            .iter()
            .zip(&bwd.scaled_beta[0])
            .map(|(a, b)| a * b)
            .collect();
        let s: f64 = gamma1.iter().sum();
        gamma1.iter_mut().for_each(|g| *g /= s);
        let est = baum_welch_step(&p, &obs).unwrap();
        for (a, b) in est.initial().iter().zip(&gamma1) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn incremental_update_blends_rows() {
        let old = HmmParams::new(
            vec![vec![1.0, 0.0], vec![0.5, 0.5]],
            vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            vec![0.5, 0.5],
        )
        .unwrap();
        let new = HmmParams::new(
            vec![vec![0.0, 1.0], vec![0.5, 0.5]],
            vec![vec![0.9, 0.1], vec![0.2, 0.8]],
            vec![1.0, 0.0],
        )
        .unwrap();
        let mid = incremental_update(&old, &new, 0.5).unwrap();
        assert_eq!(mid.transition()[0], vec![0.5, 0.5]);
        assert_eq!(incremental_update(&old, &new, 1.0).unwrap(), new);
        assert!(incremental_update(&old, &new, 0.0).is_err());
        assert!(incremental_update(&old, &single_state(0.1), 0.5).is_err());
    }

    #[test]
    fn invalid_params_are_rejected() {
        assert!(HmmParams::new(
            vec![vec![0.5, 0.6], vec![0.5, 0.5]],
            vec![vec![1.0], vec![1.0]],
            vec![0.5, 0.5]
        )
        .is_err());
        assert!(HmmParams::new(vec![vec![1.0]], vec![vec![1.2, -0.2]], vec![1.0]).is_err());
        assert!(HmmParams::new(vec![vec![1.0]], vec![vec![0.5, 0.5]], vec![0.9]).is_err());
        assert!(HmmParams::new(vec![vec![1.0, 0.0]], vec![vec![0.5, 0.5]], vec![1.0]).is_err());
    }

    #[test]
    fn json_layout_and_validation() {
        let p = deterministic_chain();
        let json = serde_json::to_value(&p).unwrap();
        assert_eq!(json["K"], 2);
        assert_eq!(json["V"], 2);
        assert_eq!(json["pi"], serde_json::json!([1.0, 0.0]));
        let bad = r#"{"K":3,"V":2,"A":[[1.0]],"B":[[0.5,0.5]],"pi":[1.0]}"#;
        assert!(serde_json::from_str::<HmmParams>(bad).is_err());
    }

    #[test]
    fn prior_conflict_matches_manual_propagation() {
        let p = HmmParams::new(
            vec![vec![0.7, 0.3], vec![0.4, 0.6]],
            vec![vec![0.9, 0.1], vec![0.3, 0.7]],
            vec![0.6, 0.4],
        )
        .unwrap();
        let d1 = p.propagate(p.initial());
        let d2 = p.propagate(&d1);
        let expected = d2[0] * 0.1 + d2[1] * 0.7;
        assert!((p.prior_conflict(2) - expected).abs() < 1e-15);
        assert!((p.prior_conflict(0) - (0.6 * 0.1 + 0.4 * 0.7)).abs() < 1e-15);
    }
}

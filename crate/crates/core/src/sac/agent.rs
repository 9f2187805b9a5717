use rand::Rng;
use serde::{Deserialize, Serialize};

use super::plackett_luce;
use super::replay::{ReplayBuffer, Transition};
use super::AgentState;
use crate::error::{Error, Result};
use crate::nn::{polyak_update, Adam, GradientSet, Mlp, ScalarAdam};

/// SAC hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SacConfig {
    pub hidden: Vec<usize>,
    pub gamma: f64,
    pub tau: f64,
    pub critic_lr: f64,
    pub actor_lr: f64,
    pub temperature_lr: f64,
    pub initial_temperature: f64,
    /// `None` means `-0.5 * S * ln(coverage size)`.
    pub target_entropy: Option<f64>,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// Actions drawn per state for the actor's score-function estimate.
    pub actor_samples: usize,
    pub grad_clip: Option<f64>,
    /// Multiplier applied to rewards before they enter the Bellman target.
    pub reward_scale: f64,
    /// Subtract the replay buffer's mean reward, and the batch mean of the
    /// bootstrapped entropy bonus, so critic values stay near zero instead of
    /// drifting towards `(r + eta*H) / (1 - gamma)`.
    pub center_rewards: bool,
}

impl Default for SacConfig {
    fn default() -> Self {
        SacConfig {
            hidden: vec![64, 64],
            gamma: 0.99,
            tau: 0.005,
            critic_lr: 3e-4,
            actor_lr: 3e-4,
            temperature_lr: 3e-4,
            initial_temperature: 1.0,
            target_entropy: None,
            batch_size: 64,
            replay_capacity: 50_000,
            actor_samples: 4,
            grad_clip: None,
            reward_scale: 1.0,
            center_rewards: true,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("sac: {what}")));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if !(self.critic_lr > 0.0 && self.actor_lr > 0.0 && self.temperature_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(self.initial_temperature > 0.0) {
            return bad("initial temperature must be positive");
        }
        if self.batch_size == 0 || self.replay_capacity < self.batch_size || self.actor_samples == 0 {
            return bad("batch size, replay capacity and actor samples must be positive, capacity >= batch");
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer sizes must be positive");
        }
        if !(self.reward_scale > 0.0) {
            return bad("reward scale must be positive");
        }
        Ok(())
    }
}

/// How an action is drawn from the policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectMode {
    /// Plackett–Luce sampling.
    Explore,
    /// Top-S logits, ties to the lower client id.
    Greedy,
}

/// A chosen subset of exactly `S` distinct clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSubset {
    pub client_ids: Vec<usize>,
    /// Positions of the clients within the coverage list, in draw order.
    pub positions: Vec<usize>,
    pub log_prob: f64,
}

/// Policy, twin critics, target critics and the learned temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SacNetworks {
    pub policy: Mlp,
    pub q1: Mlp,
    pub q2: Mlp,
    pub q1_target: Mlp,
    pub q2_target: Mlp,
    pub log_temperature: f64,
    pub target_entropy: f64,
    pub subset_size: usize,
    policy_opt: Adam,
    q1_opt: Adam,
    q2_opt: Adam,
    temperature_opt: ScalarAdam,
}

/// Critic loss value and per-critic gradients.
#[derive(Debug, Clone)]
pub struct CriticEval {
    pub loss: f64,
    pub grads: GradientSet,
}

/// Actor loss value together with the surrogate whose gradient is applied.
#[derive(Debug, Clone)]
pub struct ActorEval {
    /// `mean(eta * log pi(a|s) - min_j Q_j(s, a))` over all samples.
    pub loss: f64,
    /// `mean(w * log pi(a|s))` with the weights `w` held fixed.
    pub surrogate: f64,
    pub grads: GradientSet,
    pub mean_log_prob: f64,
}

/// Diagnostics from one full SAC update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub temperature_loss: f64,
    pub entropy: f64,
    pub temperature: f64,
}

impl SacNetworks {
    pub fn new<R: Rng + ?Sized>(
        num_candidates: usize,
        subset_size: usize,
        cfg: &SacConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if subset_size == 0 || subset_size > num_candidates {
            return Err(Error::InsufficientCandidates {
                needed: subset_size,
                available: num_candidates,
            });
        }
        let layers = |input: usize, output: usize| -> Vec<usize> {
            std::iter::once(input)
                .chain(cfg.hidden.iter().copied())
                .chain(std::iter::once(output))
                .collect()
        };
        let policy = Mlp::new(&layers(2 * num_candidates, num_candidates), rng)?;
        let q1 = Mlp::new(&layers(3 * num_candidates, 1), rng)?;
        let q2 = Mlp::new(&layers(3 * num_candidates, 1), rng)?;
        let target_entropy = cfg
            .target_entropy
            .unwrap_or(-0.5 * subset_size as f64 * (num_candidates as f64).ln());
        Ok(Self::from_parts(
            policy,
            q1,
            q2,
            cfg.initial_temperature.ln(),
            target_entropy,
            subset_size,
        ))
    }

    /// Assembles networks from explicit parts; targets start as copies of the critics.
    pub fn from_parts(
        policy: Mlp,
        q1: Mlp,
        q2: Mlp,
        log_temperature: f64,
        target_entropy: f64,
        subset_size: usize,
    ) -> Self {
        SacNetworks {
            policy_opt: Adam::new(&policy),
            q1_opt: Adam::new(&q1),
            q2_opt: Adam::new(&q2),
            temperature_opt: ScalarAdam::default(),
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            policy,
            q1,
            q2,
            log_temperature,
            target_entropy,
            subset_size,
        }
    }

    pub fn num_candidates(&self) -> usize {
        self.policy.output_size()
    }

    pub fn temperature(&self) -> f64 {
        self.log_temperature.exp()
    }

    pub fn logits(&self, state: &AgentState) -> Result<Vec<f64>> {
        self.policy.forward(state.features())
    }

    /// Picks `S` candidate positions from the policy.
    pub fn select_positions<R: Rng + ?Sized>(
        &self,
        state: &AgentState,
        mode: SelectMode,
        rng: &mut R,
    ) -> Result<(Vec<usize>, f64)> {
        let logits = self.logits(state)?;
        match mode {
            SelectMode::Explore => plackett_luce::sample(&logits, self.subset_size, rng),
            SelectMode::Greedy => {
                let order = plackett_luce::greedy(&logits, self.subset_size)?;
                let lp = plackett_luce::log_prob(&logits, &order)?;
                Ok((order, lp))
            }
        }
    }

    /// Critic input: state features followed by the binary selection mask.
    pub fn critic_input(&self, state: &AgentState, positions: &[usize]) -> Vec<f64> {
        let mut x = state.features().to_vec();
        x.extend(plackett_luce::selection_mask(self.num_candidates(), positions));
        x
    }

    /// `min(Q1, Q2)` of the online critics.
    pub fn q_min(&self, state: &AgentState, positions: &[usize]) -> Result<f64> {
        let x = self.critic_input(state, positions);
        Ok(self.q1.forward(&x)?[0].min(self.q2.forward(&x)?[0]))
    }

    /// `min(Q1_target, Q2_target)`.
    pub fn q_target_min(&self, state: &AgentState, positions: &[usize]) -> Result<f64> {
        let x = self.critic_input(state, positions);
        Ok(self.q1_target.forward(&x)?[0].min(self.q2_target.forward(&x)?[0]))
    }

    /// Bellman targets `y = scale*(r - offset) + gamma*(min_j Qbar_j(s', a') - eta*(log pi(a'|s') - b))`,
    /// without the bootstrap term for terminal transitions. `next` holds the
    /// action sampled at each `s'` and its log-probability. `b` is the batch
    /// mean of those log-probabilities when `center_entropy` is set, else 0.
    pub fn bellman_targets(
        &self,
        batch: &[&Transition],
        next: &[(Vec<usize>, f64)],
        gamma: f64,
        reward_scale: f64,
        reward_offset: f64,
        center_entropy: bool,
    ) -> Result<Vec<f64>> {
        let eta = self.temperature();
        let b = if center_entropy && !next.is_empty() {
            next.iter().map(|(_, lp)| lp).sum::<f64>() / next.len() as f64
        } else {
            0.0
        };
        batch
            .iter()
            .zip(next)
            .map(|(t, (a, lp))| {
                let mut y = reward_scale * (t.reward - reward_offset);
                if !t.done && gamma > 0.0 {
                    y += gamma * (self.q_target_min(&t.next_state, a)? - eta * (lp - b));
                }
                Ok(y)
            })
            .collect()
    }

    /// Mean squared error of one critic against fixed targets, with its gradient.
    pub fn critic_mse(&self, critic: &Mlp, batch: &[&Transition], targets: &[f64]) -> Result<CriticEval> {
        let n = batch.len() as f64;
        let mut grads = GradientSet::zeros_like(critic);
        let mut loss = 0.0;
        for (t, y) in batch.iter().zip(targets) {
            let acts = critic.forward_cached(&self.critic_input(&t.state, &t.action))?;
            let err = acts.output()[0] - y;
            loss += err * err / n;
            critic.accumulate_backward(&acts, &[2.0 * err / n], &mut grads)?;
        }
        Ok(CriticEval { loss, grads })
    }

    fn sample_next<R: Rng + ?Sized>(&self, batch: &[&Transition], rng: &mut R) -> Result<Vec<(Vec<usize>, f64)>> {
        batch
            .iter()
            .map(|t| self.select_positions(&t.next_state, SelectMode::Explore, rng))
            .collect()
    }

    /// One gradient step on both critics. Returns the mean squared Bellman
    /// error of the two critics before the step.
    pub fn update_critics<R: Rng + ?Sized>(
        &mut self,
        batch: &[&Transition],
        cfg: &SacConfig,
        reward_offset: f64,
        rng: &mut R,
    ) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Empty("critic batch"));
        }
        let next = self.sample_next(batch, rng)?;
        let targets = self.bellman_targets(
            batch,
            &next,
            cfg.gamma,
            cfg.reward_scale,
            reward_offset,
            cfg.center_rewards,
        )?;
        let mut e1 = self.critic_mse(&self.q1, batch, &targets)?;
        let mut e2 = self.critic_mse(&self.q2, batch, &targets)?;
        let loss = 0.5 * (e1.loss + e2.loss);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss("critic"));
        }
        if let Some(c) = cfg.grad_clip {
            e1.grads.clip_norm(c);
            e2.grads.clip_norm(c);
        }
        self.q1_opt.step(&mut self.q1, &e1.grads, cfg.critic_lr)?;
        self.q2_opt.step(&mut self.q2, &e2.grads, cfg.critic_lr)?;
        Ok(loss)
    }

    /// Draws `per_state` actions for every state.
    pub fn sample_actions<R: Rng + ?Sized>(
        &self,
        states: &[&AgentState],
        per_state: usize,
        rng: &mut R,
    ) -> Result<Vec<Vec<Vec<usize>>>> {
        states
            .iter()
            .map(|s| {
                let logits = self.logits(s)?;
                (0..per_state)
                    .map(|_| Ok(plackett_luce::sample(&logits, self.subset_size, rng)?.0))
                    .collect()
            })
            .collect()
    }

    /// Evaluates the actor objective on fixed sampled actions.
    ///
    /// The gradient is the score-function estimate: each sample's
    /// `eta*log pi - min Q` minus the mean of the other samples of the same
    /// state (when there are several) weights `grad log pi`.
    pub fn actor_eval(&self, policy: &Mlp, states: &[&AgentState], actions: &[Vec<Vec<usize>>]) -> Result<ActorEval> {
        let eta = self.temperature();
        let mut grads = GradientSet::zeros_like(policy);
        let total: usize = actions.iter().map(Vec::len).sum();
        if total == 0 {
            return Err(Error::Empty("actor batch"));
        }
        let norm = total as f64;
        let (mut loss, mut surrogate, mut lp_sum) = (0.0, 0.0, 0.0);
        for (s, samples) in states.iter().zip(actions) {
            let acts = policy.forward_cached(s.features())?;
            let logits = acts.output();
            let mut lps = Vec::with_capacity(samples.len());
            let mut objective = Vec::with_capacity(samples.len());
            for a in samples {
                let lp = plackett_luce::log_prob(logits, a)?;
                objective.push(eta * lp - self.q_min(s, a)?);
                lps.push(lp);
            }
            let n = samples.len();
            let sum: f64 = objective.iter().sum();
            let mut up = vec![0.0; logits.len()];
            for (j, a) in samples.iter().enumerate() {
                let baseline = if n > 1 {
                    (sum - objective[j]) / (n - 1) as f64
                } else {
                    0.0
                };
                let w = objective[j] - baseline;
                loss += objective[j] / norm;
                lp_sum += lps[j];
                surrogate += w * lps[j] / norm;
                let g = plackett_luce::grad_log_prob(logits, a)?;
                for (u, gi) in up.iter_mut().zip(g) {
                    *u += w * gi / norm;
                }
            }
            policy.accumulate_backward(&acts, &up, &mut grads)?;
        }
        Ok(ActorEval {
            loss,
            surrogate,
            grads,
            mean_log_prob: lp_sum / norm,
        })
    }

    /// One policy step on `E[eta*log pi(a|s) - min_j Q_j(s,a)]`. Returns the
    /// loss value and the mean log-probability of the sampled actions.
    pub fn update_actor<R: Rng + ?Sized>(
        &mut self,
        states: &[&AgentState],
        cfg: &SacConfig,
        rng: &mut R,
    ) -> Result<(f64, f64)> {
        if states.is_empty() {
            return Err(Error::Empty("actor batch"));
        }
        let actions = self.sample_actions(states, cfg.actor_samples, rng)?;
        let mut eval = self.actor_eval(&self.policy, states, &actions)?;
        if !eval.loss.is_finite() {
            return Err(Error::NonFiniteLoss("actor"));
        }
        if let Some(c) = cfg.grad_clip {
            eval.grads.clip_norm(c);
        }
        self.policy_opt.step(&mut self.policy, &eval.grads, cfg.actor_lr)?;
        Ok((eval.loss, eval.mean_log_prob))
    }

    /// `L(eta) = -eta * (mean_log_prob + H)`; its derivative with respect to
    /// `log eta` equals the loss itself.
    pub fn temperature_loss(&self, mean_log_prob: f64) -> f64 {
        -self.temperature() * (mean_log_prob + self.target_entropy)
    }

    /// Steps the log-temperature given the mean log-probability of actions
    /// sampled from the current policy.
    pub fn step_temperature(&mut self, mean_log_prob: f64, lr: f64) -> Result<f64> {
        let loss = self.temperature_loss(mean_log_prob);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss("temperature"));
        }
        // d/d(log eta) of -eta * c is the loss itself
        self.temperature_opt.step(&mut self.log_temperature, loss, lr)?;
        Ok(loss)
    }

    /// Samples fresh actions for `states` and steps the temperature.
    pub fn update_temperature<R: Rng + ?Sized>(
        &mut self,
        states: &[&AgentState],
        cfg: &SacConfig,
        rng: &mut R,
    ) -> Result<f64> {
        if states.is_empty() {
            return Err(Error::Empty("temperature batch"));
        }
        let mut total = 0.0;
        let mut n = 0usize;
        for s in states {
            let logits = self.logits(s)?;
            for _ in 0..cfg.actor_samples {
                total += plackett_luce::sample(&logits, self.subset_size, rng)?.1;
                n += 1;
            }
        }
        self.step_temperature(total / n as f64, cfg.temperature_lr)
    }

    pub fn soft_update_targets(&mut self, tau: f64) -> Result<()> {
        polyak_update(&mut self.q1_target, &self.q1, tau)?;
        polyak_update(&mut self.q2_target, &self.q2, tau)
    }

    /// Critic step, actor step, temperature step and target blending on one
    /// minibatch. `reward_offset` is subtracted from every reward.
    pub fn update<R: Rng + ?Sized>(
        &mut self,
        batch: &[&Transition],
        cfg: &SacConfig,
        reward_offset: f64,
        rng: &mut R,
    ) -> Result<UpdateStats> {
        let critic_loss = self.update_critics(batch, cfg, reward_offset, rng)?;
        let states: Vec<&AgentState> = batch.iter().map(|t| &t.state).collect();
        let (actor_loss, mean_log_prob) = self.update_actor(&states, cfg, rng)?;
        let temperature_loss = self.step_temperature(mean_log_prob, cfg.temperature_lr)?;
        self.soft_update_targets(cfg.tau)?;
        Ok(UpdateStats {
            critic_loss,
            actor_loss,
            temperature_loss,
            entropy: -mean_log_prob,
            temperature: self.temperature(),
        })
    }
}

/// A server's decentralized SAC agent over its coverage set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SacAgent {
    pub server_id: usize,
    /// Client ids in canonical order; positions index into this list.
    pub coverage: Vec<usize>,
    pub config: SacConfig,
    pub nets: SacNetworks,
    pub replay: ReplayBuffer,
    /// Successful participations per coverage position.
    pub participation: Vec<u64>,
    pub updates: u64,
}

impl SacAgent {
    pub fn new<R: Rng + ?Sized>(
        server_id: usize,
        coverage: Vec<usize>,
        subset_size: usize,
        config: SacConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let nets = SacNetworks::new(coverage.len(), subset_size, &config, rng)?;
        Ok(SacAgent {
            server_id,
            participation: vec![0; coverage.len()],
            replay: ReplayBuffer::new(config.replay_capacity),
            coverage,
            config,
            nets,
            updates: 0,
        })
    }

    pub fn select_action<R: Rng + ?Sized>(
        &self,
        state: &AgentState,
        mode: SelectMode,
        rng: &mut R,
    ) -> Result<ActionSubset> {
        let (positions, log_prob) = self.nets.select_positions(state, mode, rng)?;
        Ok(self.to_action(positions, log_prob))
    }

    pub fn to_action(&self, positions: Vec<usize>, log_prob: f64) -> ActionSubset {
        ActionSubset {
            client_ids: positions.iter().map(|&p| self.coverage[p]).collect(),
            positions,
            log_prob,
        }
    }

    pub fn store_transition(&mut self, transition: Transition) -> Result<()> {
        self.replay.store(transition)
    }

    /// Runs one update if the buffer holds a full batch.
    pub fn update<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Option<UpdateStats>> {
        if self.replay.len() < self.config.batch_size {
            return Ok(None);
        }
        let idx = self.replay.sample_indices(self.config.batch_size, rng)?;
        let batch: Vec<&Transition> = idx.iter().map(|&i| self.replay.get(i).unwrap()).collect();
        let offset = if self.config.center_rewards {
            self.replay.mean_reward()
        } else {
            0.0
        };
        let stats = self.nets.update(&batch, &self.config, offset, rng)?;
        self.updates += 1;
        Ok(Some(stats))
    }
}

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, LowConfidence};
use super::metrics::MetricsRow;
use crate::env::{
    observe, place_clients, server_layout, ClientProfile, Environment, RewardParts, RoundOutcome, ServerProfile,
};
use crate::error::{Error, Result};
use crate::fl::{
    aggregate, blob_centers, evaluate, global_objective, local_train, partition_data, sample_blobs, ClientDataset,
    Dataset, ModelParams,
};
use crate::hmm::{baum_welch_step_with, incremental_update, predict_conflict, HmmParams, SelectionHistory};
use crate::nn::Mlp;
use crate::rng::{stream_rng, Stream};
use crate::sac::{
    compute_reward, encode_state, fairness_metric, AgentState, SacAgent, SelectMode, Transition, UpdateStats,
};

/// Training and test data of one FL task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskData {
    /// Indexed by client id.
    pub clients: Vec<ClientDataset>,
    pub test: Dataset,
}

impl TaskData {
    pub fn generate(config: &ExperimentConfig, task: u64) -> Result<Self> {
        let spec = config.blob_spec();
        let centers = blob_centers(&spec, &mut stream_rng(config.seed, Stream::Dataset, &[task, 0]));
        let train = sample_blobs(
            &centers,
            spec.samples,
            spec.spread,
            &mut stream_rng(config.seed, Stream::Dataset, &[task, 1]),
        );
        let test = sample_blobs(
            &centers,
            config.test_samples,
            spec.spread,
            &mut stream_rng(config.seed, Stream::Dataset, &[task, 2]),
        );
        let clients = partition_data(
            &train,
            config.num_clients,
            config.partition_scheme()?,
            &mut stream_rng(config.seed, Stream::Partition, &[task]),
        )?;
        Ok(TaskData { clients, test })
    }
}

/// Full mutable state of a run between rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub config: ExperimentConfig,
    pub env: Environment,
    pub data: TaskData,
    pub agents: Vec<SacAgent>,
    /// Per server, per coverage position.
    pub hmms: Vec<Vec<HmmParams>>,
    pub histories: Vec<Vec<SelectionHistory>>,
    /// One aggregated task model per server.
    pub models: Vec<ModelParams>,
    /// Last completed round; 0 before the first.
    pub round: u64,
    pub task: u64,
    /// State each server will act on next round, computed at the end of the
    /// previous one.
    pending: Vec<Option<PendingState>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PendingState {
    round: u64,
    state: AgentState,
    low_confidence: usize,
}

/// Everything a round produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub outcome: RoundOutcome,
    pub rows: Vec<MetricsRow>,
}

fn task_model(config: &ExperimentConfig, task: u64) -> Result<ModelParams> {
    let mut sizes = vec![config.feature_dim];
    sizes.extend(&config.model_hidden);
    sizes.push(config.classes);
    Ok(ModelParams(Mlp::new(
        &sizes,
        &mut stream_rng(config.seed, Stream::ModelInit, &[task]),
    )?))
}

fn participation_cv(counts: &[u64]) -> f64 {
    if counts.is_empty() {
        return 0.0;
    }
    let n = counts.len() as f64;
    let mean = counts.iter().map(|&c| c as f64).sum::<f64>() / n;
    if mean == 0.0 {
        return 0.0;
    }
    let var = counts.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / n;
    var.sqrt() / mean
}

impl World {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let layout = server_layout(config.num_servers, config.server_spacing_km);
        let servers: Vec<ServerProfile> = layout
            .into_iter()
            .enumerate()
            .map(|(server_id, position)| ServerProfile {
                server_id,
                position,
                coverage_radius: config.coverage_radius_km,
                total_bandwidth: config.total_bandwidth_hz,
                subset_size: config.subset_size,
            })
            .collect();
        let positions = place_clients(
            &servers,
            config.num_clients,
            config.covered_clients,
            &mut stream_rng(config.seed, Stream::Placement, &[]),
        )?;
        let data = TaskData::generate(&config, 0)?;
        let clients = positions
            .into_iter()
            .enumerate()
            .map(|(i, position)| {
                let mut rng = stream_rng(config.seed, Stream::ClientTraits, &[i as u64]);
                ClientProfile {
                    client_id: i,
                    position,
                    compute_rate: rng.random_range(config.compute_rate_min..=config.compute_rate_max),
                    num_samples: data.clients[i].num_samples(),
                    fading_seed: i as u64,
                }
            })
            .collect();
        let env = Environment::new(clients, servers, config.channel_model(), config.env_params())?;
        for (m, cov) in env.coverage.iter().enumerate() {
            if cov.len() < config.subset_size {
                return Err(Error::InsufficientCandidates {
                    needed: config.subset_size,
                    available: cov.len(),
                }
                .in_round(0, m));
            }
        }

        let prior = HmmParams::random(
            config.hmm_states,
            2,
            &mut stream_rng(config.seed, Stream::HmmPrior, &[]),
        )?;
        let hmms = env.coverage.iter().map(|cov| vec![prior.clone(); cov.len()]).collect();
        let histories = env
            .coverage
            .iter()
            .map(|cov| cov.iter().map(|&c| SelectionHistory::new(c)).collect())
            .collect();
        let agents = env
            .coverage
            .iter()
            .enumerate()
            .map(|(m, cov)| {
                SacAgent::new(
                    m,
                    cov.clone(),
                    config.subset_size,
                    config.sac_config(),
                    &mut stream_rng(config.seed, Stream::AgentInit, &[m as u64]),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let model = task_model(&config, 0)?;
        Ok(World {
            models: vec![model; env.servers.len()],
            pending: vec![None; env.servers.len()],
            config,
            env,
            data,
            agents,
            hmms,
            histories,
            round: 0,
            task: 0,
        })
    }

    pub fn num_servers(&self) -> usize {
        self.env.servers.len()
    }

    pub fn is_finished(&self) -> bool {
        self.round >= self.config.total_rounds()
    }

    /// Conflict probability a server assigns to the client at `pos` for `round`,
    /// and whether it came from the low-confidence fallback.
    fn conflict_prob(&mut self, m: usize, pos: usize, round: u64) -> Result<(f64, bool)> {
        let hist = &mut self.histories[m][pos];
        hist.advance_to(round);
        let params = &self.hmms[m][pos];
        let low = hist.len() < self.config.hmm_min_history;
        if hist.is_empty() || (low && self.config.hmm_low_confidence == LowConfidence::Prior) {
            return Ok((params.prior_conflict(round), low));
        }
        let obs = hist.observations();
        let start = obs.len().saturating_sub(self.config.hmm_window);
        let window = SelectionHistory::with_observations(
            hist.client_id,
            obs[start..].to_vec(),
            hist.last_observed_round(),
            round,
        )?;
        Ok((predict_conflict(params, &window)?, low))
    }

    /// Observed state of server `m` at the start of `round`.
    fn compute_state(&mut self, m: usize, round: u64) -> Result<PendingState> {
        let latencies = self.env.observed_latencies(m, round);
        let n = latencies.len();
        let mut probs = vec![0.0; n];
        let mut low_confidence = 0;
        if self.config.policy.uses_crp() {
            for (pos, p) in probs.iter_mut().enumerate() {
                let (prob, low) = self.conflict_prob(m, pos, round)?;
                *p = prob;
                low_confidence += usize::from(low);
            }
        }
        Ok(PendingState {
            round,
            state: encode_state(&latencies, &probs, self.config.l_max)?,
            low_confidence,
        })
    }

    fn state_for(&mut self, m: usize, round: u64) -> Result<PendingState> {
        match self.pending[m].take() {
            Some(p) if p.round == round => Ok(p),
            _ => self.compute_state(m, round),
        }
    }

    /// Switches to a fresh task: new data and models, participation reset on request.
    fn start_task(&mut self, task: u64) -> Result<()> {
        self.data = TaskData::generate(&self.config, task)?;
        for (c, d) in self.env.clients.iter_mut().zip(&self.data.clients) {
            c.num_samples = d.num_samples();
        }
        let model = task_model(&self.config, task)?;
        self.models = vec![model; self.num_servers()];
        if self.config.reset_participation_per_task {
            for a in &mut self.agents {
                a.participation.iter_mut().for_each(|c| *c = 0);
            }
        }
        // compute times changed, so cached states are stale
        self.pending.iter_mut().for_each(|p| *p = None);
        self.task = task;
        Ok(())
    }

    fn choose(&self, m: usize, state: &AgentState, round: u64) -> Result<(Vec<usize>, f64)> {
        let agent = &self.agents[m];
        let mut rng = stream_rng(self.config.seed, Stream::Selection, &[round, m as u64]);
        let random = !self.config.policy.uses_sac() || round <= self.config.sac_warmup_rounds;
        if random {
            let n = agent.coverage.len();
            let s = self.config.subset_size;
            let positions = sample_indices(&mut rng, n, s).into_vec();
            // log of one over the number of ordered subsets
            let log_prob = -((n - s + 1)..=n).map(|k| (k as f64).ln()).sum::<f64>();
            Ok((positions, log_prob))
        } else {
            let a = agent.select_action(state, SelectMode::Explore, &mut rng)?;
            Ok((a.positions, a.log_prob))
        }
    }

    /// Plays round `self.round + 1` end to end.
    pub fn run_round(&mut self) -> Result<RoundRecord> {
        let t = self.round + 1;
        let cfg = self.config.clone();
        let num_servers = self.num_servers();
        let task = (t - 1) / cfg.rounds.max(1);
        if task != self.task {
            self.start_task(task)?;
        }

        // observe and select
        let mut states = Vec::with_capacity(num_servers);
        let mut positions = Vec::with_capacity(num_servers);
        let mut selections = Vec::with_capacity(num_servers);
        for m in 0..num_servers {
            let pending = self.state_for(m, t).map_err(|e| e.in_round(t, m))?;
            let (pos, _) = self.choose(m, &pending.state, t).map_err(|e| e.in_round(t, m))?;
            selections.push(pos.iter().map(|&p| self.agents[m].coverage[p]).collect::<Vec<_>>());
            positions.push(pos);
            states.push(pending);
        }

        // allocate, resolve conflicts, measure latency
        let mut outcome = self.env.play_round(t, &selections)?;

        // local training and aggregation
        let train_cfg = cfg.train_config();
        for (m, sr) in outcome.servers.iter().enumerate() {
            if sr.completed.is_empty() {
                continue;
            }
            let mut updates = Vec::with_capacity(sr.completed.len());
            let mut counts = Vec::with_capacity(sr.completed.len());
            for &c in &sr.completed {
                let mut rng = stream_rng(cfg.seed, Stream::LocalTrain, &[t, m as u64, c as u64]);
                let report = local_train(&self.models[m], &self.data.clients[c], &train_cfg, &mut rng)
                    .map_err(|e| e.in_round(t, m))?;
                updates.push(report.model);
                counts.push(self.data.clients[c].num_samples());
            }
            let refs: Vec<&ModelParams> = updates.iter().collect();
            self.models[m] = aggregate(&refs, &counts).map_err(|e| e.in_round(t, m))?;
        }

        // rewards
        let alpha = cfg.effective_alpha();
        for (m, sr) in outcome.servers.iter_mut().enumerate() {
            let agent = &mut self.agents[m];
            for &c in &sr.completed {
                let pos = agent.coverage.binary_search(&c).expect("completed clients are covered");
                agent.participation[pos] += 1;
            }
            let latency = sr.round_latency;
            let penalty = cfg.conflict_penalty * sr.failures() as f64;
            let fairness = fairness_metric(&agent.participation, cfg.fairness_epsilon);
            sr.reward = Some(RewardParts {
                latency,
                penalty,
                fairness,
                reward: compute_reward(latency, penalty, fairness, alpha),
            });
        }

        // conflict observations
        for obs in observe(&outcome) {
            let m = obs.server_id;
            let pos = self.agents[m]
                .coverage
                .binary_search(&obs.client_id)
                .expect("selected clients are covered");
            self.histories[m][pos]
                .record(t, obs.value)
                .map_err(|e| e.in_round(t, m))?;
        }

        // SAC updates
        let mut diagnostics: Vec<Option<UpdateStats>> = vec![None; num_servers];
        if cfg.policy.uses_sac() {
            for m in 0..num_servers {
                if t <= cfg.sac_warmup_rounds {
                    continue;
                }
                for i in 0..cfg.sac_updates_per_round {
                    let mut rng = stream_rng(cfg.seed, Stream::Replay, &[t, m as u64, i as u64]);
                    if let Some(stats) = self.agents[m].update(&mut rng).map_err(|e| e.in_round(t, m))? {
                        diagnostics[m] = Some(stats);
                    }
                }
            }
        }

        // HMM re-estimation for every observed pair
        if cfg.policy.uses_crp() && t.is_multiple_of(cfg.hmm_update_every) {
            for sr in &outcome.servers {
                let m = sr.server_id;
                for &c in &sr.selected {
                    let pos = self.agents[m]
                        .coverage
                        .binary_search(&c)
                        .expect("selected clients are covered");
                    let obs = self.histories[m][pos].observations();
                    if obs.len() < 2 {
                        continue;
                    }
                    let window = &obs[obs.len().saturating_sub(cfg.hmm_window)..];
                    let old = &self.hmms[m][pos];
                    let est = baum_welch_step_with(old, window, cfg.hmm_smoothing).map_err(|e| e.in_round(t, m))?;
                    self.hmms[m][pos] = incremental_update(old, &est, cfg.hmm_rho).map_err(|e| e.in_round(t, m))?;
                }
            }
        }

        // next states and replay
        let next_is_new_task = t.is_multiple_of(cfg.rounds.max(1));
        for m in 0..num_servers {
            let next = self.compute_state(m, t + 1).map_err(|e| e.in_round(t, m))?;
            if cfg.policy.uses_sac() {
                let reward = outcome.servers[m].reward.as_ref().expect("reward set above").reward;
                self.agents[m]
                    .store_transition(Transition {
                        state: states[m].state.clone(),
                        action: positions[m].clone(),
                        reward,
                        next_state: next.state.clone(),
                        done: false,
                    })
                    .map_err(|e| e.in_round(t, m))?;
            }
            self.pending[m] = if next_is_new_task { None } else { Some(next) };
        }

        // periodic evaluation
        let mut evals = vec![None; num_servers];
        let mut objective = None;
        if t.is_multiple_of(cfg.eval_every) {
            for (m, ev) in evals.iter_mut().enumerate() {
                *ev = Some(evaluate(&self.models[m], &self.data.test).map_err(|e| e.in_round(t, m))?);
            }
            let server_clients: Vec<Vec<&ClientDataset>> = self
                .env
                .coverage
                .iter()
                .map(|cov| cov.iter().map(|&c| &self.data.clients[c]).collect())
                .collect();
            objective = Some(global_objective(&self.models, &server_clients)?);
        }

        let hash = cfg.hash();
        let rows = outcome
            .servers
            .iter()
            .enumerate()
            .map(|(m, sr)| {
                let parts = sr.reward.as_ref().expect("reward set above");
                let agent = &self.agents[m];
                let probs = states[m].state.conflict_probs();
                let diag = diagnostics[m].as_ref();
                MetricsRow {
                    round: t,
                    task: self.task,
                    server: m,
                    policy: cfg.policy.to_string(),
                    config_hash: hash.clone(),
                    reward: parts.reward,
                    latency: parts.latency,
                    penalty: parts.penalty,
                    fairness: parts.fairness,
                    selected: sr.selected.len(),
                    completed: sr.completed.len(),
                    conflicts: sr.lost_to_conflict.len(),
                    timeouts: sr.timeouts.len(),
                    starved: sr.allocations.iter().filter(|g| g.starved).count(),
                    low_confidence: states[m].low_confidence,
                    mean_conflict_prob: probs.iter().sum::<f64>() / probs.len().max(1) as f64,
                    accuracy: evals[m].map(|e| e.accuracy),
                    test_loss: evals[m].map(|e| e.loss),
                    global_objective: objective,
                    critic_loss: diag.map(|d| d.critic_loss),
                    actor_loss: diag.map(|d| d.actor_loss),
                    temperature_loss: diag.map(|d| d.temperature_loss),
                    entropy: diag.map(|d| d.entropy),
                    temperature: diag.map(|d| d.temperature),
                    participation_cv: participation_cv(&agent.participation),
                    participation: agent.participation.clone(),
                }
            })
            .collect();
        self.round = t;
        Ok(RoundRecord { outcome, rows })
    }
}

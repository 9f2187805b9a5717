use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::{ChannelModel, ConflictMode, EnvParams};
use crate::error::{Error, Result};
use crate::fl::{BlobSpec, PartitionScheme, TrainConfig};
use crate::sac::SacConfig;

/// Client-selection policy under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// SAC with conflict-risk prediction and the fairness term.
    RlCrp,
    /// `RlCrp` with the fairness weight forced to zero.
    RlCrpNoFairness,
    /// Uniformly random subsets.
    RandomFedavg,
    /// SAC with the conflict-probability features zeroed.
    SacNoCrp,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [
        PolicyKind::RlCrp,
        PolicyKind::RlCrpNoFairness,
        PolicyKind::RandomFedavg,
        PolicyKind::SacNoCrp,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PolicyKind::RlCrp => "rl_crp",
            PolicyKind::RlCrpNoFairness => "rl_crp_no_fairness",
            PolicyKind::RandomFedavg => "random_fedavg",
            PolicyKind::SacNoCrp => "sac_no_crp",
        }
    }

    pub fn uses_sac(&self) -> bool {
        !matches!(self, PolicyKind::RandomFedavg)
    }

    pub fn uses_crp(&self) -> bool {
        matches!(self, PolicyKind::RlCrp | PolicyKind::RlCrpNoFairness)
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown policy {s:?}")))
    }
}

/// What a server uses as the conflict probability of a client whose history
/// is shorter than `hmm_min_history`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LowConfidence {
    /// `pi · A^t · B[:, 1]`.
    Prior,
    /// Run the filter anyway when there is at least one observation.
    Predict,
}

/// Every knob of a run. Flat so it maps one-to-one onto the TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub policy: PolicyKind,
    /// Rounds per FL task.
    pub rounds: u64,
    /// Back-to-back FL tasks sharing agents and HMMs.
    pub tasks: u64,
    pub reset_participation_per_task: bool,
    pub eval_every: u64,
    pub checkpoint_every: u64,

    // topology
    pub num_servers: usize,
    pub num_clients: usize,
    pub covered_clients: usize,
    pub server_spacing_km: f64,
    pub coverage_radius_km: f64,
    pub total_bandwidth_hz: f64,
    pub subset_size: usize,
    pub compute_rate_min: f64,
    pub compute_rate_max: f64,

    // channel and latency
    pub tx_power_w: f64,
    pub noise_psd_w_per_hz: f64,
    pub snr_ref_bandwidth_hz: f64,
    pub pathloss_exponent: f64,
    pub gain_at_1km: f64,
    pub fading: bool,
    pub l_max: f64,
    pub latency_headroom: f64,
    pub model_bits: f64,
    pub min_unit_hz: f64,
    pub conflict_mode: ConflictMode,

    // FL task
    pub classes: usize,
    pub feature_dim: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub blob_spread: f64,
    pub blob_center_scale: f64,
    pub partition: String,
    pub dirichlet_eta: f64,
    pub model_hidden: Vec<usize>,
    pub batch_size: usize,
    pub local_epochs: usize,
    pub learning_rate: f64,

    // reward
    pub alpha: f64,
    pub fairness_epsilon: f64,
    pub conflict_penalty: f64,

    // SAC
    pub sac_hidden: Vec<usize>,
    pub sac_gamma: f64,
    pub sac_tau: f64,
    pub sac_critic_lr: f64,
    pub sac_actor_lr: f64,
    pub sac_temperature_lr: f64,
    pub sac_initial_temperature: f64,
    pub sac_target_entropy: Option<f64>,
    pub sac_batch_size: usize,
    pub sac_replay_capacity: usize,
    pub sac_actor_samples: usize,
    pub sac_grad_clip: Option<f64>,
    pub sac_reward_scale: f64,
    pub sac_center_rewards: bool,
    pub sac_warmup_rounds: u64,
    pub sac_updates_per_round: usize,

    // HMM
    pub hmm_states: usize,
    pub hmm_rho: f64,
    pub hmm_smoothing: f64,
    pub hmm_update_every: u64,
    pub hmm_min_history: usize,
    /// Most recent observations used for filtering and re-estimation.
    pub hmm_window: usize,
    pub hmm_low_confidence: LowConfidence,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let ch = ChannelModel::default();
        let sac = SacConfig::default();
        let train = TrainConfig::default();
        let blobs = BlobSpec::default();
        ExperimentConfig {
            seed: 1,
            policy: PolicyKind::RlCrp,
            rounds: 2000,
            tasks: 1,
            reset_participation_per_task: true,
            eval_every: 10,
            checkpoint_every: 0,

            num_servers: 2,
            num_clients: 50,
            covered_clients: 40,
            server_spacing_km: 1.0,
            coverage_radius_km: 1.0,
            total_bandwidth_hz: 100e6,
            subset_size: 5,
            compute_rate_min: 100.0,
            compute_rate_max: 500.0,

            tx_power_w: ch.tx_power_w,
            noise_psd_w_per_hz: ch.noise_psd,
            snr_ref_bandwidth_hz: ch.ref_bandwidth,
            pathloss_exponent: ch.pathloss_exponent,
            gain_at_1km: ch.gain_at_1km,
            fading: true,
            l_max: 40.0,
            latency_headroom: 0.8,
            model_bits: 1e6,
            min_unit_hz: 0.0,
            conflict_mode: ConflictMode::BestChannel,

            classes: blobs.classes,
            feature_dim: blobs.dim,
            train_samples: blobs.samples,
            test_samples: 1000,
            blob_spread: blobs.spread,
            blob_center_scale: blobs.center_scale,
            partition: "dirichlet".into(),
            dirichlet_eta: 0.1,
            model_hidden: vec![16],
            batch_size: train.batch_size,
            local_epochs: train.local_epochs,
            learning_rate: train.learning_rate,

            alpha: 100.0,
            fairness_epsilon: 1e-8,
            conflict_penalty: 10.0,

            sac_hidden: sac.hidden,
            sac_gamma: sac.gamma,
            sac_tau: sac.tau,
            sac_critic_lr: sac.critic_lr,
            sac_actor_lr: sac.actor_lr,
            sac_temperature_lr: sac.temperature_lr,
            sac_initial_temperature: sac.initial_temperature,
            sac_target_entropy: sac.target_entropy,
            sac_batch_size: sac.batch_size,
            sac_replay_capacity: sac.replay_capacity,
            sac_actor_samples: sac.actor_samples,
            sac_grad_clip: sac.grad_clip,
            sac_reward_scale: sac.reward_scale,
            sac_center_rewards: sac.center_rewards,
            sac_warmup_rounds: 200,
            sac_updates_per_round: 1,

            hmm_states: 2,
            hmm_rho: 0.1,
            hmm_smoothing: crate::hmm::DEFAULT_SMOOTHING,
            hmm_update_every: 1,
            hmm_min_history: 3,
            hmm_window: 64,
            hmm_low_confidence: LowConfidence::Prior,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ExperimentConfig = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config always serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }

    /// Fairness weight after applying the ablation.
    pub fn effective_alpha(&self) -> f64 {
        match self.policy {
            PolicyKind::RlCrpNoFairness => 0.0,
            _ => self.alpha,
        }
    }

    pub fn total_rounds(&self) -> u64 {
        self.rounds * self.tasks
    }

    pub fn partition_scheme(&self) -> Result<PartitionScheme> {
        match self.partition.as_str() {
            "iid" => Ok(PartitionScheme::Iid),
            "dirichlet" => Ok(PartitionScheme::Dirichlet {
                eta: self.dirichlet_eta,
            }),
            other => Err(Error::Config(format!("unknown partition scheme {other:?}"))),
        }
    }

    pub fn channel_model(&self) -> ChannelModel {
        ChannelModel {
            tx_power_w: self.tx_power_w,
            noise_psd: self.noise_psd_w_per_hz,
            ref_bandwidth: self.snr_ref_bandwidth_hz,
            pathloss_exponent: self.pathloss_exponent,
            gain_at_1km: self.gain_at_1km,
            min_distance_km: ChannelModel::default().min_distance_km,
            fading: self.fading,
            seed: self.seed,
        }
    }

    pub fn env_params(&self) -> EnvParams {
        EnvParams {
            l_max: self.l_max,
            headroom: self.latency_headroom,
            model_bits: self.model_bits,
            min_unit: self.min_unit_hz,
            local_epochs: self.local_epochs,
            conflict_mode: self.conflict_mode,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            local_epochs: self.local_epochs,
            learning_rate: self.learning_rate,
        }
    }

    pub fn blob_spec(&self) -> BlobSpec {
        BlobSpec {
            classes: self.classes,
            dim: self.feature_dim,
            samples: self.train_samples,
            spread: self.blob_spread,
            center_scale: self.blob_center_scale,
        }
    }

    pub fn sac_config(&self) -> SacConfig {
        SacConfig {
            hidden: self.sac_hidden.clone(),
            gamma: self.sac_gamma,
            tau: self.sac_tau,
            critic_lr: self.sac_critic_lr,
            actor_lr: self.sac_actor_lr,
            temperature_lr: self.sac_temperature_lr,
            initial_temperature: self.sac_initial_temperature,
            target_entropy: self.sac_target_entropy,
            batch_size: self.sac_batch_size,
            replay_capacity: self.sac_replay_capacity,
            actor_samples: self.sac_actor_samples,
            grad_clip: self.sac_grad_clip,
            reward_scale: self.sac_reward_scale,
            center_rewards: self.sac_center_rewards,
        }
    }

    /// Everything except seed, policy and the fairness weight must agree for
    /// runs to be comparable (the fairness ablation changes that weight).
    pub fn topology_key(&self) -> String {
        let mut c = self.clone();
        c.seed = 0;
        c.policy = PolicyKind::RlCrp;
        c.alpha = 0.0;
        c.hash()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_servers == 0 || self.num_clients == 0 {
            return bad("need at least one server and one client".into());
        }
        if self.covered_clients > self.num_clients {
            return bad(format!(
                "covered_clients {} exceeds num_clients {}",
                self.covered_clients, self.num_clients
            ));
        }
        if self.subset_size == 0 {
            return bad("subset_size must be at least 1".into());
        }
        if !(self.coverage_radius_km > 0.0 && self.total_bandwidth_hz > 0.0 && self.l_max > 0.0) {
            return bad("coverage radius, bandwidth and l_max must be positive".into());
        }
        if !(self.latency_headroom > 0.0 && self.latency_headroom <= 1.0) {
            return bad("latency_headroom must lie in (0, 1]".into());
        }
        if !(self.compute_rate_min > 0.0 && self.compute_rate_max >= self.compute_rate_min) {
            return bad("compute rates must satisfy 0 < min <= max".into());
        }
        if self.eval_every == 0 || self.tasks == 0 {
            return bad("eval_every and tasks must be positive".into());
        }
        if !(self.hmm_rho > 0.0 && self.hmm_rho <= 1.0) {
            return bad("hmm_rho must lie in (0, 1]".into());
        }
        if self.hmm_states == 0 || self.hmm_update_every == 0 || self.hmm_window < 2 {
            return bad("hmm_states and hmm_update_every must be positive, hmm_window at least 2".into());
        }
        if self.classes < 2 || self.feature_dim == 0 || self.test_samples == 0 {
            return bad("the task needs two classes, a feature and a test set".into());
        }
        if self.sac_updates_per_round == 0 {
            return bad("sac_updates_per_round must be positive".into());
        }
        self.partition_scheme()?;
        self.train_config().validate()?;
        self.sac_config().validate()
    }
}

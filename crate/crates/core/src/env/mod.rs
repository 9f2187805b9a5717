//! Seeded simulation of the wireless multi-server environment.
//!
//! A round takes every server's selected subset and produces a
//! [`RoundOutcome`]: bandwidth grants from water-filling over each selection,
//! conflict resolution for clients picked by several servers, per-client
//! upload latencies, timeouts and the per-(server, client) observations fed
//! back to the conflict predictor.

mod channel;
mod conflict;
mod geometry;
mod latency;
mod waterfill;

use serde::{Deserialize, Serialize};

pub use channel::{spectral_efficiency, ChannelModel};
pub use conflict::{resolve_conflicts, ConflictEvent, ConflictMode, ConflictResolution};
pub use geometry::{coverage_sets, place_clients, server_layout, ClientProfile, Position, ServerProfile};
pub use latency::{compute_time, round_latency, upload_latency};
pub use waterfill::{bandwidth_demand, waterfill_allocate, Candidate, Grant};

use crate::error::{Error, Result};
use crate::hmm::{CONFLICT, NORMAL};

/// Scalar settings shared by every round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvParams {
    /// Round deadline in seconds.
    pub l_max: f64,
    /// Fraction of `l_max` a client's demand is sized to meet.
    pub headroom: f64,
    pub model_bits: f64,
    /// Allocation granularity in Hz; 0 disables quantization.
    pub min_unit: f64,
    pub local_epochs: usize,
    pub conflict_mode: ConflictMode,
}

impl Default for EnvParams {
    fn default() -> Self {
        EnvParams {
            l_max: 40.0,
            headroom: 0.8,
            model_bits: 1e6,
            min_unit: 0.0,
            local_epochs: 5,
            conflict_mode: ConflictMode::BestChannel,
        }
    }
}

/// Reward decomposition of one server in one round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardParts {
    pub latency: f64,
    pub penalty: f64,
    pub fairness: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerRound {
    pub server_id: usize,
    pub selected: Vec<usize>,
    /// Selected clients left after conflict resolution.
    pub effective: Vec<usize>,
    pub allocations: Vec<Grant>,
    /// `(client, seconds)` for every effective client.
    pub latencies: Vec<(usize, f64)>,
    pub round_latency: f64,
    pub lost_to_conflict: Vec<usize>,
    pub timeouts: Vec<usize>,
    /// Effective clients whose update arrived before the deadline.
    pub completed: Vec<usize>,
    pub reward: Option<RewardParts>,
}

impl ServerRound {
    /// Clients whose update this server did not receive.
    pub fn failures(&self) -> usize {
        self.lost_to_conflict.len() + self.timeouts.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundOutcome {
    pub round: u64,
    pub servers: Vec<ServerRound>,
    pub conflicts: Vec<ConflictEvent>,
}

impl RoundOutcome {
    /// Conflict losses summed over servers.
    pub fn conflict_count(&self) -> usize {
        self.servers.iter().map(|s| s.lost_to_conflict.len()).sum()
    }

    pub fn timeout_count(&self) -> usize {
        self.servers.iter().map(|s| s.timeouts.len()).sum()
    }
}

/// One categorical observation made by a server about a client it selected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub server_id: usize,
    pub client_id: usize,
    pub value: usize,
}

/// `1` for every selected client that was lost to a conflict or timed out,
/// `0` for the rest. Unselected clients produce nothing.
pub fn observe(outcome: &RoundOutcome) -> Vec<Observation> {
    outcome
        .servers
        .iter()
        .flat_map(|s| {
            s.selected.iter().map(move |&c| Observation {
                server_id: s.server_id,
                client_id: c,
                value: if s.lost_to_conflict.contains(&c) || s.timeouts.contains(&c) {
                    CONFLICT
                } else {
                    NORMAL
                },
            })
        })
        .collect()
}

/// Clients, servers, channel and round parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub clients: Vec<ClientProfile>,
    pub servers: Vec<ServerProfile>,
    pub coverage: Vec<Vec<usize>>,
    pub channel: ChannelModel,
    pub params: EnvParams,
}

impl Environment {
    /// Client ids must equal their index.
    pub fn new(
        clients: Vec<ClientProfile>,
        servers: Vec<ServerProfile>,
        channel: ChannelModel,
        params: EnvParams,
    ) -> Result<Self> {
        if clients.iter().enumerate().any(|(i, c)| c.client_id != i) {
            return Err(Error::Config("client ids must be 0..N in order".into()));
        }
        if servers.iter().enumerate().any(|(i, s)| s.server_id != i) {
            return Err(Error::Config("server ids must be 0..M in order".into()));
        }
        for c in &clients {
            if !(c.compute_rate > 0.0) || c.num_samples == 0 {
                return Err(Error::Config(format!(
                    "client {} needs a positive compute rate and at least one sample",
                    c.client_id
                )));
            }
        }
        for s in &servers {
            if !(s.coverage_radius > 0.0 && s.total_bandwidth > 0.0) || s.subset_size == 0 {
                return Err(Error::Config(format!("server {} has an invalid profile", s.server_id)));
            }
        }
        let coverage = coverage_sets(&clients, &servers);
        Ok(Environment {
            clients,
            servers,
            coverage,
            channel,
            params,
        })
    }

    pub fn snr(&self, server: usize, client: usize, round: u64) -> f64 {
        self.channel.snr(&self.clients[client], &self.servers[server], round)
    }

    pub fn channel_quality(&self, server: usize, client: usize, round: u64) -> Result<f64> {
        self.channel
            .channel_quality(&self.clients[client], &self.servers[server], round)
    }

    pub fn compute_time(&self, client: usize) -> f64 {
        let c = &self.clients[client];
        compute_time(c.num_samples, self.params.local_epochs, c.compute_rate)
    }

    /// Latency a client would see with an equal `1/S` share of the server's
    /// bandwidth, capped at `l_max`. This is what a server observes before
    /// choosing.
    pub fn latency_estimate(&self, server: usize, client: usize, round: u64) -> f64 {
        let s = &self.servers[server];
        let share = s.total_bandwidth / s.subset_size as f64;
        let l = upload_latency(
            self.compute_time(client),
            self.params.model_bits,
            share,
            self.snr(server, client, round),
        );
        l.min(self.params.l_max)
    }

    /// Latency estimates over the server's coverage list.
    pub fn observed_latencies(&self, server: usize, round: u64) -> Vec<f64> {
        self.coverage[server]
            .iter()
            .map(|&c| self.latency_estimate(server, c, round))
            .collect()
    }

    fn check_selection(&self, server: usize, selected: &[usize]) -> Result<()> {
        for (i, c) in selected.iter().enumerate() {
            if self.coverage[server].binary_search(c).is_err() {
                return Err(Error::OutOfCoverage { client: *c, server });
            }
            if selected[..i].contains(c) {
                return Err(Error::InvalidParams(format!(
                    "client {c} selected twice by server {server}"
                )));
            }
        }
        Ok(())
    }

    /// Allocation, conflict resolution and latency for one round. Reward
    /// parts are left empty for the caller.
    pub fn play_round(&self, round: u64, selections: &[Vec<usize>]) -> Result<RoundOutcome> {
        if selections.len() != self.servers.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} selections for {} servers",
                selections.len(),
                self.servers.len()
            )));
        }
        for (m, sel) in selections.iter().enumerate() {
            self.check_selection(m, sel).map_err(|e| e.in_round(round, m))?;
        }
        let p = &self.params;
        let resolution = resolve_conflicts(selections, |m, c| self.snr(m, c, round), p.conflict_mode);

        let servers = self
            .servers
            .iter()
            .zip(selections)
            .zip(&resolution.effective)
            .map(|((server, selected), effective)| {
                let m = server.server_id;
                let candidates: Vec<Candidate> = selected
                    .iter()
                    .map(|&c| {
                        let snr = self.snr(m, c, round);
                        Candidate {
                            client_id: c,
                            snr,
                            demand: bandwidth_demand(p.model_bits, snr, self.compute_time(c), p.headroom * p.l_max),
                        }
                    })
                    .collect();
                let allocations = waterfill_allocate(&candidates, server.total_bandwidth, p.min_unit);
                let latencies: Vec<(usize, f64)> = effective
                    .iter()
                    .map(|&c| {
                        let grant = allocations.iter().find(|g| g.client_id == c).unwrap();
                        let l = upload_latency(
                            self.compute_time(c),
                            p.model_bits,
                            grant.bandwidth,
                            self.snr(m, c, round),
                        );
                        (c, l)
                    })
                    .collect();
                let raw: Vec<f64> = latencies.iter().map(|&(_, l)| l).collect();
                let (round_latency, timeout_idx) = round_latency(&raw, p.l_max);
                let timeouts: Vec<usize> = timeout_idx.iter().map(|&i| latencies[i].0).collect();
                let completed = effective.iter().copied().filter(|c| !timeouts.contains(c)).collect();
                ServerRound {
                    server_id: m,
                    selected: selected.clone(),
                    effective: effective.clone(),
                    allocations,
                    latencies,
                    round_latency,
                    lost_to_conflict: resolution.lost_by(m).collect(),
                    timeouts,
                    completed,
                    reward: None,
                }
            })
            .collect();
        Ok(RoundOutcome {
            round,
            servers,
            conflicts: resolution.events,
        })
    }
}

use serde::{Deserialize, Serialize};

/// What happens to a client picked by several servers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConflictMode {
    /// The selecting server with the best SNR keeps the client.
    #[default]
    BestChannel,
    /// Every selecting server loses the client.
    AllFail,
}

impl std::str::FromStr for ConflictMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "best_channel" => Ok(ConflictMode::BestChannel),
            "all_fail" => Ok(ConflictMode::AllFail),
            other => Err(format!("unknown conflict mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictEvent {
    pub client_id: usize,
    pub winner: Option<usize>,
    pub losers: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictResolution {
    /// Per server, the selected clients it actually keeps.
    pub effective: Vec<Vec<usize>>,
    pub events: Vec<ConflictEvent>,
}

impl ConflictResolution {
    /// Clients server `m` lost this round.
    pub fn lost_by(&self, server: usize) -> impl Iterator<Item = usize> + '_ {
        self.events
            .iter()
            .filter(move |e| e.losers.contains(&server))
            .map(|e| e.client_id)
    }

    /// Number of (server, client) losses.
    pub fn total_losses(&self) -> usize {
        self.events.iter().map(|e| e.losers.len()).sum()
    }
}

/// Resolves contention for clients picked by more than one server.
/// `snr(server, client)` ranks the selecting servers.
pub fn resolve_conflicts<F>(selected: &[Vec<usize>], snr: F, mode: ConflictMode) -> ConflictResolution
where
    F: Fn(usize, usize) -> f64,
{
    let mut selectors: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (m, set) in selected.iter().enumerate() {
        for &c in set {
            selectors.entry(c).or_default().push(m);
        }
    }
    let mut events = Vec::new();
    let mut dropped: Vec<Vec<usize>> = vec![Vec::new(); selected.len()];
    for (client, servers) in selectors {
        if servers.len() < 2 {
            continue;
        }
        let winner = match mode {
            ConflictMode::BestChannel => servers
                .iter()
                .copied()
                .max_by(|&a, &b| snr(a, client).total_cmp(&snr(b, client)).then(b.cmp(&a))),
            ConflictMode::AllFail => None,
        };
        let losers: Vec<usize> = servers.into_iter().filter(|&m| Some(m) != winner).collect();
        for &m in &losers {
            dropped[m].push(client);
        }
        events.push(ConflictEvent {
            client_id: client,
            winner,
            losers,
        });
    }
    let effective = selected
        .iter()
        .zip(&dropped)
        .map(|(set, lost)| set.iter().copied().filter(|c| !lost.contains(c)).collect())
        .collect();
    ConflictResolution { effective, events }
}

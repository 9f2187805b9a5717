//! Greedy water-filling over the selected clients.
//!
//! Clients are served in descending SNR order (ties to the lower client id).
//! Each receives its demand while the remaining budget covers it. The first
//! client whose demand exceeds what remains gets the remainder and the pass
//! stops; everyone after it gets nothing and is marked starved.

use serde::{Deserialize, Serialize};

use super::channel::spectral_efficiency;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub client_id: usize,
    pub snr: f64,
    /// Bandwidth in Hz the client needs to finish inside the latency budget.
    pub demand: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grant {
    pub client_id: usize,
    pub bandwidth: f64,
    pub starved: bool,
}

/// Bandwidth making `compute_time + model_bits / (bw * log2(1 + snr))`
/// equal `budget`; infinite when compute alone exhausts the budget.
pub fn bandwidth_demand(model_bits: f64, snr: f64, compute_time: f64, budget: f64) -> f64 {
    let slack = budget - compute_time;
    let eff = spectral_efficiency(snr);
    if slack <= 0.0 || eff <= 0.0 {
        return f64::INFINITY;
    }
    model_bits / (slack * eff)
}

/// Rounds `demand` up to a whole number of `min_unit` Hz blocks.
fn quantize(demand: f64, min_unit: f64) -> f64 {
    if min_unit > 0.0 && demand.is_finite() {
        (demand / min_unit).ceil() * min_unit
    } else {
        demand
    }
}

/// Allocates `total_bandwidth` Hz. Grants come back in processing order.
pub fn waterfill_allocate(candidates: &[Candidate], total_bandwidth: f64, min_unit: f64) -> Vec<Grant> {
    let mut order: Vec<&Candidate> = candidates.iter().collect();
    order.sort_by(|a, b| b.snr.total_cmp(&a.snr).then(a.client_id.cmp(&b.client_id)));

    let mut remaining = total_bandwidth;
    let mut exhausted = false;
    order
        .into_iter()
        .map(|c| {
            if exhausted {
                return Grant {
                    client_id: c.client_id,
                    bandwidth: 0.0,
                    starved: true,
                };
            }
            let need = quantize(c.demand, min_unit);
            let bandwidth = if need <= remaining {
                need
            } else {
                exhausted = true;
                remaining
            };
            remaining -= bandwidth;
            Grant {
                client_id: c.client_id,
                bandwidth,
                starved: bandwidth <= 0.0,
            }
        })
        .collect()
}

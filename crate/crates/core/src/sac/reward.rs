/// Inverse coefficient of variation of participation counts squashed into
/// `(-1, 1)`: `tanh(mean / (std + epsilon))` with the population standard
/// deviation. Empty input yields 0.
pub fn fairness_metric(participation_counts: &[u64], epsilon: f64) -> f64 {
    if participation_counts.is_empty() {
        return 0.0;
    }
    let n = participation_counts.len() as f64;
    let mean = participation_counts.iter().map(|&c| c as f64).sum::<f64>() / n;
    let var = participation_counts
        .iter()
        .map(|&c| (c as f64 - mean).powi(2))
        .sum::<f64>()
        / n;
    (mean / (var.sqrt() + epsilon)).tanh()
}

/// `-latency - conflict_penalty + alpha * fairness`.
pub fn compute_reward(round_latency: f64, conflict_penalty: f64, fairness: f64, alpha: f64) -> f64 {
    -round_latency - conflict_penalty + alpha * fairness
}

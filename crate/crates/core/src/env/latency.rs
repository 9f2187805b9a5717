use super::channel::spectral_efficiency;

/// Seconds of local training: `samples * epochs / rate`.
pub fn compute_time(num_samples: usize, local_epochs: usize, compute_rate: f64) -> f64 {
    (num_samples * local_epochs) as f64 / compute_rate
}

/// `compute_time + model_bits / (bandwidth * log2(1 + snr))`; infinite for
/// a zero allocation.
pub fn upload_latency(compute_time: f64, model_bits: f64, bandwidth: f64, snr: f64) -> f64 {
    let rate = bandwidth * spectral_efficiency(snr);
    if rate <= 0.0 {
        return f64::INFINITY;
    }
    compute_time + model_bits / rate
}

/// Round latency over the effective clients and the indices of the clients
/// that exceeded `l_max`. Timed-out clients count as `l_max`; the result is
/// capped at `l_max` and is 0 when nobody transmitted.
pub fn round_latency(latencies: &[f64], l_max: f64) -> (f64, Vec<usize>) {
    let timeouts: Vec<usize> = latencies
        .iter()
        .enumerate()
        .filter(|(_, &l)| !(l <= l_max))
        .map(|(i, _)| i)
        .collect();
    let worst = latencies.iter().map(|&l| l.min(l_max)).fold(0.0, f64::max);
    (worst, timeouts)
}

use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use super::geometry::{ClientProfile, ServerProfile};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

/// Log-distance pathloss with per-round Rayleigh fading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    /// Transmit power in watts.
    pub tx_power_w: f64,
    /// Noise power spectral density in W/Hz.
    pub noise_psd: f64,
    /// Bandwidth over which the reported SNR is measured, Hz.
    pub ref_bandwidth: f64,
    pub pathloss_exponent: f64,
    /// Linear path gain at 1 km.
    pub gain_at_1km: f64,
    /// Distances below this are clamped, km.
    pub min_distance_km: f64,
    pub fading: bool,
    pub seed: u64,
}

impl Default for ChannelModel {
    fn default() -> Self {
        ChannelModel {
            tx_power_w: 0.2,
            // -174 dBm/Hz
            noise_psd: 3.981_071_705_534_972e-21,
            ref_bandwidth: 1e6,
            pathloss_exponent: 3.5,
            // 128.1 dB loss at 1 km
            gain_at_1km: 1.548_816_618_912_481e-13,
            min_distance_km: 0.01,
            fading: true,
            seed: 0,
        }
    }
}

impl ChannelModel {
    /// Distance-only gain `g(d) = gain_at_1km * d^-exponent`.
    pub fn base_gain(&self, distance_km: f64) -> f64 {
        self.gain_at_1km * distance_km.max(self.min_distance_km).powf(-self.pathloss_exponent)
    }

    /// Rayleigh power fading factor `|h|^2 ~ Exp(1)`, or 1 when fading is off.
    pub fn fading_factor(&self, client: &ClientProfile, server_id: usize, round: u64) -> f64 {
        if !self.fading {
            return 1.0;
        }
        let mut rng = stream_rng(
            self.seed,
            Stream::Fading,
            &[client.fading_seed, server_id as u64, round],
        );
        let h: f64 = Exp1.sample(&mut rng);
        // keep the SNR strictly positive
        h.max(1e-12)
    }

    /// SNR with no coverage check.
    pub fn snr(&self, client: &ClientProfile, server: &ServerProfile, round: u64) -> f64 {
        let g = self.base_gain(client.position.distance(&server.position))
            * self.fading_factor(client, server.server_id, round);
        self.tx_power_w * g / (self.noise_psd * self.ref_bandwidth)
    }

    /// SNR of a covered client at `round`.
    pub fn channel_quality(&self, client: &ClientProfile, server: &ServerProfile, round: u64) -> Result<f64> {
        if !server.covers(&client.position) {
            return Err(Error::OutOfCoverage {
                client: client.client_id,
                server: server.server_id,
            });
        }
        Ok(self.snr(client, server, round))
    }
}

/// Shannon spectral efficiency `log2(1 + snr)` in bit/s/Hz.
pub fn spectral_efficiency(snr: f64) -> f64 {
    snr.ln_1p() / std::f64::consts::LN_2
}

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Nominal waveform settings shared by every record of a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalConfig {
    pub n_samples: usize,
    pub cycles: usize,
    /// Nominal peak amplitude in per-unit volts.
    pub amplitude: f64,
    /// Additive Gaussian noise level relative to the reference power.
    pub snr_db: f64,
    /// Ground-truth mask threshold, in the same units as `amplitude`.
    pub epsilon: f64,
}

impl Default for SignalConfig {
    fn default() -> Self {
        SignalConfig { n_samples: 640, cycles: 10, amplitude: 1.0, snr_db: 40.0, epsilon: 1e-4 }
    }
}

impl SignalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cycles == 0 || self.n_samples == 0 || !self.n_samples.is_multiple_of(self.cycles) {
            return Err(Error::Config(format!(
                "n_samples ({}) must be a positive multiple of cycles ({})",
                self.n_samples, self.cycles
            )));
        }
        if !(self.amplitude > 0.0) || !self.amplitude.is_finite() {
            return Err(Error::Config("amplitude must be positive".into()));
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if !self.snr_db.is_finite() {
            return Err(Error::Config("snr_db must be finite".into()));
        }
        Ok(())
    }

    pub fn samples_per_cycle(&self) -> usize {
        self.n_samples / self.cycles
    }

    /// Radians per sample of the fundamental.
    pub fn angular_frequency(&self) -> f64 {
        2.0 * PI * self.cycles as f64 / self.n_samples as f64
    }

    /// Standard deviation of the additive noise at `snr_db`.
    pub fn noise_std(&self) -> f64 {
        let signal_power = self.amplitude * self.amplitude / 2.0;
        (signal_power / 10f64.powf(self.snr_db / 10.0)).sqrt()
    }
}

/// Undisturbed reference `A·sin(ω·n + φ)` for `n = 0..N`.
pub fn reference_signal(config: &SignalConfig, phase: f64) -> Vec<f64> {
    let omega = config.angular_frequency();
    (0..config.n_samples).map(|n| config.amplitude * (omega * n as f64 + phase).sin()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_signal_landmarks() {
        let cfg = SignalConfig::default();
        let x0 = reference_signal(&cfg, 0.0);
        assert_eq!(x0[0], 0.0);
        assert!((x0[cfg.samples_per_cycle() / 4] - 1.0).abs() < 1e-15);

        let cfg = SignalConfig { amplitude: 0.9, ..SignalConfig::default() };
        let x0 = reference_signal(&cfg, PI / 2.0);
        assert!((x0[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let bad = SignalConfig { n_samples: 641, ..SignalConfig::default() };
        assert!(bad.validate().is_err());
        let bad = SignalConfig { epsilon: 0.0, ..SignalConfig::default() };
        assert!(bad.validate().is_err());
        let bad = SignalConfig { amplitude: -1.0, ..SignalConfig::default() };
        assert!(bad.validate().is_err());
        let bad = SignalConfig { snr_db: f64::NAN, ..SignalConfig::default() };
        assert!(bad.validate().is_err());
        assert!(SignalConfig::default().validate().is_ok());
    }

    #[test]
    fn default_geometry() {
        let cfg = SignalConfig::default();
        assert_eq!(cfg.samples_per_cycle(), 64);
        assert!((cfg.angular_frequency() - 2.0 * PI / 64.0).abs() < 1e-15);
    }
}

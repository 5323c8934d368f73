//! Shared fixtures for the benchmarks: an untrained default-size network, a
//! synthetic record and a set of explanation rows.

use pqx_core::attribution::OperatorKind;
use pqx_core::explain::ExplanationSamples;
use pqx_core::net::{ArchConfig, NetworkParams};
use pqx_core::posterior::{PosteriorApprox, PosteriorKind};
use pqx_core::rng;
use pqx_core::siggen::{synthesize, DisturbanceParams, PqdClass, SignalConfig, Waveform};

pub struct Fixture {
    pub posterior: PosteriorApprox,
    pub record: Waveform,
    pub class: usize,
}

pub fn fixture(class: PqdClass) -> Fixture {
    let config = SignalConfig::default();
    let mut r = rng::seeded(17);
    let members = (0..5).map(|_| NetworkParams::init(&ArchConfig::default(), &mut r)).collect();
    let params = DisturbanceParams::sample(class, &config, &mut r);
    let record = synthesize(class, &params, &config, &mut r).expect("valid parameters");
    Fixture { posterior: PosteriorApprox::DeepEnsemble { members }, record, class: class.index() }
}

/// `s` nonnegative rows of length `n` with a shared bump and per-row jitter.
pub fn rows(s: usize, n: usize) -> ExplanationSamples {
    let rows = (0..s)
        .map(|k| {
            (0..n)
                .map(|i| {
                    let bump = (-((i as f64 - n as f64 / 2.0) / 40.0).powi(2)).exp();
                    bump * (1.0 + 0.1 * ((i * 7 + k * 13) % 11) as f64 / 11.0)
                })
                .collect()
        })
        .collect();
    ExplanationSamples::from_rows(rows, OperatorKind::Occlusion, PosteriorKind::DeepEnsemble, 0).expect("valid rows")
}

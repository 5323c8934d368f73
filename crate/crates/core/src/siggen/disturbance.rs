use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::signal::SignalConfig;
use crate::error::{Error, Result};

/// The sixteen waveform classes: normal plus fifteen disturbance categories.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u16)]
pub enum PqdClass {
    Normal = 0,
    Sag,
    Swell,
    Interruption,
    Harmonics,
    Flicker,
    OscillatoryTransient,
    ImpulsiveTransient,
    Notch,
    Spike,
    FlickerHarmonics,
    FlickerSag,
    FlickerSwell,
    InterruptionHarmonics,
    SagHarmonics,
    SwellHarmonics,
}

pub const N_CLASSES: usize = 16;

impl PqdClass {
    pub const ALL: [PqdClass; N_CLASSES] = [
        PqdClass::Normal,
        PqdClass::Sag,
        PqdClass::Swell,
        PqdClass::Interruption,
        PqdClass::Harmonics,
        PqdClass::Flicker,
        PqdClass::OscillatoryTransient,
        PqdClass::ImpulsiveTransient,
        PqdClass::Notch,
        PqdClass::Spike,
        PqdClass::FlickerHarmonics,
        PqdClass::FlickerSag,
        PqdClass::FlickerSwell,
        PqdClass::InterruptionHarmonics,
        PqdClass::SagHarmonics,
        PqdClass::SwellHarmonics,
    ];

    pub fn id(self) -> u16 {
        self as u16
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_id(id: u16) -> Result<Self> {
        Self::ALL.get(id as usize).copied().ok_or_else(|| Error::Config(format!("invalid class id {id}")))
    }

    pub fn is_disturbance(self) -> bool {
        self != PqdClass::Normal
    }

    pub fn name(self) -> &'static str {
        match self {
            PqdClass::Normal => "normal",
            PqdClass::Sag => "sag",
            PqdClass::Swell => "swell",
            PqdClass::Interruption => "interruption",
            PqdClass::Harmonics => "harmonics",
            PqdClass::Flicker => "flicker",
            PqdClass::OscillatoryTransient => "oscillatory_transient",
            PqdClass::ImpulsiveTransient => "impulsive_transient",
            PqdClass::Notch => "notch",
            PqdClass::Spike => "spike",
            PqdClass::FlickerHarmonics => "flicker_harmonics",
            PqdClass::FlickerSag => "flicker_sag",
            PqdClass::FlickerSwell => "flicker_swell",
            PqdClass::InterruptionHarmonics => "interruption_harmonics",
            PqdClass::SagHarmonics => "sag_harmonics",
            PqdClass::SwellHarmonics => "swell_harmonics",
        }
    }

    /// Simple-event kinds superposed to build this class.
    pub fn constituents(self) -> &'static [ComponentKind] {
        use ComponentKind::*;
        match self {
            PqdClass::Normal => &[],
            PqdClass::Sag => &[Sag],
            PqdClass::Swell => &[Swell],
            PqdClass::Interruption => &[Interruption],
            PqdClass::Harmonics => &[Harmonics],
            PqdClass::Flicker => &[Flicker],
            PqdClass::OscillatoryTransient => &[Oscillatory],
            PqdClass::ImpulsiveTransient => &[Impulse],
            PqdClass::Notch => &[Notch],
            PqdClass::Spike => &[Spike],
            PqdClass::FlickerHarmonics => &[Flicker, Harmonics],
            PqdClass::FlickerSag => &[Flicker, Sag],
            PqdClass::FlickerSwell => &[Flicker, Swell],
            PqdClass::InterruptionHarmonics => &[Interruption, Harmonics],
            PqdClass::SagHarmonics => &[Sag, Harmonics],
            PqdClass::SwellHarmonics => &[Swell, Harmonics],
        }
    }

    /// Flicker, harmonics and every harmonic composite: the disturbance
    /// spans the whole record so top-L localisation saturates.
    pub fn is_ceiling(self) -> bool {
        self == PqdClass::Flicker || self.constituents().contains(&ComponentKind::Harmonics)
    }
}

impl fmt::Display for PqdClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PqdClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown class name `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ComponentKind {
    Sag,
    Swell,
    Interruption,
    Harmonics,
    Flicker,
    Oscillatory,
    Impulse,
    Notch,
    Spike,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepKind {
    Sag,
    Swell,
    Interruption,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PulseKind {
    Notch,
    Spike,
}

/// One simple disturbance event. Indices are 0-based sample positions, end-exclusive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Component {
    /// Multiplies the reference by `1 ∓ depth` on `[start, end)`.
    Step { kind: StepKind, depth: f64, start: usize, end: usize },
    /// Odd harmonics phase-locked to the fundamental.
    Harmonics { a3: f64, a5: f64, a7: f64 },
    /// Multiplies the reference by `1 + amp·sin(ratio·ω·n)`.
    Flicker { amp: f64, ratio: f64 },
    /// Exponentially decaying ring starting at `start`.
    Oscillatory { amp: f64, start: usize, end: usize, tau: f64, ring: f64 },
    /// Single unipolar pulse; `amp` carries the polarity.
    Impulse { amp: f64, start: usize, width: usize, tau: f64 },
    /// `count` rectangular pulses spaced by `period`.
    Pulses { kind: PulseKind, count: usize, width: usize, depth: f64, start: usize, period: usize },
}

/// Number of `f32` slots in the fixed-width on-disk parameter record.
pub const PARAM_WIDTH: usize = 23;

/// Generation parameters for one record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceParams {
    pub phase: f64,
    pub components: Vec<Component>,
}

fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Random interval of `len` samples inside `[0, n)`.
fn place(rng: &mut impl Rng, n: usize, len: usize) -> (usize, usize) {
    let len = len.clamp(1, n);
    let start = rng.random_range(0..=n - len);
    (start, start + len)
}

impl Component {
    pub fn kind(&self) -> ComponentKind {
        match self {
            Component::Step { kind: StepKind::Sag, .. } => ComponentKind::Sag,
            Component::Step { kind: StepKind::Swell, .. } => ComponentKind::Swell,
            Component::Step { kind: StepKind::Interruption, .. } => ComponentKind::Interruption,
            Component::Harmonics { .. } => ComponentKind::Harmonics,
            Component::Flicker { .. } => ComponentKind::Flicker,
            Component::Oscillatory { .. } => ComponentKind::Oscillatory,
            Component::Impulse { .. } => ComponentKind::Impulse,
            Component::Pulses { kind: PulseKind::Notch, .. } => ComponentKind::Notch,
            Component::Pulses { kind: PulseKind::Spike, .. } => ComponentKind::Spike,
        }
    }

    /// Draws parameters uniformly from the generator's ranges.
    pub fn sample<R: Rng>(kind: ComponentKind, config: &SignalConfig, rng: &mut R) -> Component {
        let n = config.n_samples;
        let spc = config.samples_per_cycle() as f64;
        let omega = config.angular_frequency();
        let step = |kind, lo, hi, rng: &mut R| {
            let depth = uniform(rng, lo, hi);
            let len = (uniform(rng, 1.0, 9.0) * spc).round() as usize;
            let (start, end) = place(rng, n, len);
            Component::Step { kind, depth, start, end }
        };
        let pulses = |kind, rng: &mut R| {
            let count = rng.random_range(1..=6usize);
            let width = rng.random_range(2..=8usize);
            let depth = uniform(rng, 0.1, 0.4);
            let period = (spc / 2.0) as usize;
            let span = (count - 1) * period + width;
            let (start, _) = place(rng, n, span);
            Component::Pulses { kind, count, width, depth, start, period }
        };
        match kind {
            ComponentKind::Sag => step(StepKind::Sag, 0.1, 0.9, rng),
            ComponentKind::Swell => step(StepKind::Swell, 0.1, 0.8, rng),
            ComponentKind::Interruption => step(StepKind::Interruption, 0.9, 1.0, rng),
            ComponentKind::Harmonics => Component::Harmonics {
                a3: uniform(rng, 0.05, 0.15),
                a5: uniform(rng, 0.05, 0.15),
                a7: uniform(rng, 0.05, 0.15),
            },
            ComponentKind::Flicker => {
                Component::Flicker { amp: uniform(rng, 0.08, 0.2), ratio: uniform(rng, 0.1, 0.3) }
            }
            ComponentKind::Oscillatory => {
                let amp = uniform(rng, 0.5, 0.9);
                let ring = uniform(rng, 6.0 * omega, 12.0 * omega);
                let tau = uniform(rng, 8.0, 32.0);
                let len = ((uniform(rng, 0.05, 3.0) * spc).round() as usize).max(3);
                let (start, end) = place(rng, n, len);
                Component::Oscillatory { amp, start, end, tau, ring }
            }
            ComponentKind::Impulse => {
                let magnitude = uniform(rng, 0.5, 1.0);
                let amp = if rng.random_bool(0.5) { magnitude } else { -magnitude };
                let width = rng.random_range(3..=8usize);
                let (start, _) = place(rng, n, width);
                Component::Impulse { amp, start, width, tau: width as f64 / 2.0 }
            }
            ComponentKind::Notch => pulses(PulseKind::Notch, rng),
            ComponentKind::Spike => pulses(PulseKind::Spike, rng),
        }
    }

    /// Adds this event's contribution to `d`, given the reference `x0`.
    pub fn accumulate(&self, config: &SignalConfig, phase: f64, x0: &[f64], d: &mut [f64]) {
        let a = config.amplitude;
        let omega = config.angular_frequency();
        let n_total = d.len();
        match *self {
            Component::Step { kind, depth, start, end } => {
                let sign = if kind == StepKind::Swell { 1.0 } else { -1.0 };
                for n in start..end.min(n_total) {
                    d[n] += sign * depth * x0[n];
                }
            }
            Component::Harmonics { a3, a5, a7 } => {
                for (n, dn) in d.iter_mut().enumerate() {
                    let arg = omega * n as f64 + phase;
                    *dn += a * (a3 * (3.0 * arg).sin() + a5 * (5.0 * arg).sin() + a7 * (7.0 * arg).sin());
                }
            }
            Component::Flicker { amp, ratio } => {
                for (n, dn) in d.iter_mut().enumerate() {
                    *dn += amp * (ratio * omega * n as f64).sin() * x0[n];
                }
            }
            Component::Oscillatory { amp, start, end, tau, ring } => {
                for n in start..end.min(n_total) {
                    let k = (n - start) as f64;
                    d[n] += a * amp * (-k / tau).exp() * (ring * k).sin();
                }
            }
            Component::Impulse { amp, start, width, tau } => {
                for n in start..(start + width).min(n_total) {
                    let k = (n - start) as f64;
                    d[n] += a * amp * (-k / tau).exp();
                }
            }
            Component::Pulses { kind, count, width, depth, start, period } => {
                let sign = if kind == PulseKind::Spike { 1.0 } else { -1.0 };
                for p in 0..count {
                    let from = start + p * period;
                    for n in from..(from + width).min(n_total) {
                        let polarity = if x0[n] < 0.0 { -1.0 } else { 1.0 };
                        d[n] += sign * polarity * depth * a;
                    }
                }
            }
        }
    }

    /// Checks the parameter ranges and interval invariants.
    pub fn validate(&self, config: &SignalConfig) -> Result<()> {
        let n = config.n_samples;
        let omega = config.angular_frequency();
        let within = |v: f64, lo: f64, hi: f64, what: &str| {
            if v >= lo && v <= hi {
                Ok(())
            } else {
                Err(Error::Config(format!("{what} = {v} outside [{lo}, {hi}]")))
            }
        };
        let interval = |start: usize, end: usize| {
            if start < end && end <= n {
                Ok(())
            } else {
                Err(Error::Config(format!("interval [{start}, {end}) invalid for N = {n}")))
            }
        };
        match *self {
            Component::Step { kind, depth, start, end } => {
                let (lo, hi) = match kind {
                    StepKind::Sag => (0.1, 0.9),
                    StepKind::Swell => (0.1, 0.8),
                    StepKind::Interruption => (0.9, 1.0),
                };
                within(depth, lo, hi, "step depth")?;
                interval(start, end)
            }
            Component::Harmonics { a3, a5, a7 } => {
                within(a3, 0.05, 0.15, "a3")?;
                within(a5, 0.05, 0.15, "a5")?;
                within(a7, 0.05, 0.15, "a7")
            }
            Component::Flicker { amp, ratio } => {
                within(amp, 0.08, 0.2, "flicker amplitude")?;
                within(ratio, 0.1, 0.3, "flicker ratio")
            }
            Component::Oscillatory { amp, start, end, tau, ring } => {
                within(amp, 0.5, 0.9, "transient amplitude")?;
                within(ring, 6.0 * omega * (1.0 - 1e-6), 12.0 * omega * (1.0 + 1e-6), "ring frequency")?;
                within(tau, 1.0, f64::MAX, "decay")?;
                interval(start, end)
            }
            Component::Impulse { amp, start, width, tau } => {
                within(amp.abs(), 0.5, 1.0, "impulse amplitude")?;
                within(width as f64, 1.0, 8.0, "impulse width")?;
                within(tau, f64::MIN_POSITIVE, f64::MAX, "impulse decay")?;
                interval(start, start + width)
            }
            Component::Pulses { count, width, depth, start, period, .. } => {
                within(count as f64, 1.0, 6.0, "pulse count")?;
                within(width as f64, 2.0, 8.0, "pulse width")?;
                within(depth, 0.1, 0.4, "pulse depth")?;
                interval(start, start + (count - 1) * period + width)
            }
        }
    }
}

impl DisturbanceParams {
    pub fn sample(class: PqdClass, config: &SignalConfig, rng: &mut impl Rng) -> Self {
        let phase = uniform(rng, 0.0, 2.0 * std::f64::consts::PI);
        let components = class.constituents().iter().map(|&k| Component::sample(k, config, rng)).collect();
        DisturbanceParams { phase, components }
    }

    pub fn validate(&self, class: PqdClass, config: &SignalConfig) -> Result<()> {
        let kinds: Vec<_> = self.components.iter().map(Component::kind).collect();
        if kinds != class.constituents() {
            return Err(Error::Config(format!("components {kinds:?} do not match class {class}")));
        }
        self.components.iter().try_for_each(|c| c.validate(config))
    }

    /// Disturbance component `d` for reference `x0`.
    pub fn disturbance(&self, config: &SignalConfig, x0: &[f64]) -> Vec<f64> {
        let mut d = vec![0.0; x0.len()];
        for c in &self.components {
            c.accumulate(config, self.phase, x0, &mut d);
        }
        d
    }

    /// Packs into the fixed-width record used by the dataset file.
    pub fn to_record(&self) -> [f64; PARAM_WIDTH] {
        let mut r = [0.0; PARAM_WIDTH];
        r[0] = self.phase;
        for c in &self.components {
            match *c {
                Component::Step { depth, start, end, .. } => {
                    r[1] = depth;
                    r[2] = start as f64;
                    r[3] = end as f64;
                }
                Component::Harmonics { a3, a5, a7 } => {
                    r[4] = a3;
                    r[5] = a5;
                    r[6] = a7;
                }
                Component::Flicker { amp, ratio } => {
                    r[7] = amp;
                    r[8] = ratio;
                }
                Component::Oscillatory { amp, start, end, tau, ring } => {
                    r[9] = amp;
                    r[10] = start as f64;
                    r[11] = end as f64;
                    r[12] = tau;
                    r[13] = ring;
                }
                Component::Impulse { amp, start, width, tau } => {
                    r[14] = amp;
                    r[15] = start as f64;
                    r[16] = width as f64;
                    r[17] = tau;
                }
                Component::Pulses { count, width, depth, start, period, .. } => {
                    r[18] = count as f64;
                    r[19] = width as f64;
                    r[20] = depth;
                    r[21] = start as f64;
                    r[22] = period as f64;
                }
            }
        }
        r
    }

    /// Inverse of [`to_record`](Self::to_record) for a known class.
    pub fn from_record(class: PqdClass, r: &[f64]) -> Self {
        let idx = |v: f64| v.round().max(0.0) as usize;
        let components = class
            .constituents()
            .iter()
            .map(|kind| match kind {
                ComponentKind::Sag | ComponentKind::Swell | ComponentKind::Interruption => {
                    let kind = match kind {
                        ComponentKind::Sag => StepKind::Sag,
                        ComponentKind::Swell => StepKind::Swell,
                        _ => StepKind::Interruption,
                    };
                    Component::Step { kind, depth: r[1], start: idx(r[2]), end: idx(r[3]) }
                }
                ComponentKind::Harmonics => Component::Harmonics { a3: r[4], a5: r[5], a7: r[6] },
                ComponentKind::Flicker => Component::Flicker { amp: r[7], ratio: r[8] },
                ComponentKind::Oscillatory => {
                    Component::Oscillatory { amp: r[9], start: idx(r[10]), end: idx(r[11]), tau: r[12], ring: r[13] }
                }
                ComponentKind::Impulse => {
                    Component::Impulse { amp: r[14], start: idx(r[15]), width: idx(r[16]), tau: r[17] }
                }
                ComponentKind::Notch | ComponentKind::Spike => Component::Pulses {
                    kind: if *kind == ComponentKind::Notch { PulseKind::Notch } else { PulseKind::Spike },
                    count: idx(r[18]),
                    width: idx(r[19]),
                    depth: r[20],
                    start: idx(r[21]),
                    period: idx(r[22]),
                },
            })
            .collect();
        DisturbanceParams { phase: r[0], components }
    }
}

//! External recordings: windowing, linear resampling and peak normalisation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::siggen::{DisturbanceParams, SignalConfig, Split, Waveform};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IngestConfig {
    /// Declared fundamental frequency in Hz.
    pub fundamental_hz: f64,
    /// Needed only for single-column input without timestamps.
    pub sample_rate_hz: Option<f64>,
    /// Seconds from the first sample to the start of the window.
    pub offset_s: f64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig { fundamental_hz: 50.0, sample_rate_hz: None, offset_s: 0.0 }
    }
}

/// A raw recording, with times in seconds.
#[derive(Clone, Debug, PartialEq)]
pub struct Recording {
    pub t: Vec<f64>,
    pub v: Vec<f64>,
}

impl Recording {
    pub fn from_values(v: Vec<f64>, sample_rate_hz: f64) -> Result<Self> {
        if !(sample_rate_hz > 0.0) || !sample_rate_hz.is_finite() {
            return Err(Error::Config(format!("sample rate must be positive, got {sample_rate_hz}")));
        }
        let t = (0..v.len()).map(|i| i as f64 / sample_rate_hz).collect();
        Ok(Recording { t, v })
    }

    fn validate(&self) -> Result<()> {
        if self.v.len() < 2 {
            return Err(Error::Config(format!("need at least 2 samples, got {}", self.v.len())));
        }
        if let Some(i) = self.v.iter().chain(&self.t).position(|x| !x.is_finite()) {
            return Err(Error::Numerical(format!("non-finite value in recording (entry {i})")));
        }
        if self.t.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("timestamps must be strictly increasing".into()));
        }
        Ok(())
    }
}

/// Parses one value per line or `time,value` pairs; a non-numeric first line is
/// treated as a header.
pub fn read_recording(path: &Path, config: &IngestConfig) -> Result<Recording> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(vals) => rows.push(vals),
            Err(_) if line == 0 => continue,
            Err(e) => return Err(Error::format(path, format!("line {}: {e}", line + 1))),
        }
    }
    let width = rows.first().map_or(1, Vec::len);
    if rows.iter().any(|r| r.len() != width) || !(1..=2).contains(&width) {
        return Err(Error::format(path, "expected one column (value) or two columns (time,value)"));
    }
    if width == 2 {
        let (t, v) = rows.into_iter().map(|r| (r[0], r[1])).unzip();
        Ok(Recording { t, v })
    } else {
        let fs = config
            .sample_rate_hz
            .ok_or_else(|| Error::Config("single-column input needs a declared sample rate".into()))?;
        Recording::from_values(rows.into_iter().map(|r| r[0]).collect(), fs)
    }
}

/// Piecewise-linear interpolation of `(t, v)` at `at`; `t` must be increasing
/// and cover `at`.
fn interp(t: &[f64], v: &[f64], at: f64) -> f64 {
    let j = t.partition_point(|&s| s <= at);
    if j == 0 {
        return v[0];
    }
    if j == t.len() {
        return v[t.len() - 1];
    }
    let w = (at - t[j - 1]) / (t[j] - t[j - 1]);
    v[j - 1] + w * (v[j] - v[j - 1])
}

/// Resamples `cycles` periods of the fundamental onto `n_samples` points and
/// scales so that the median per-cycle peak equals `signal.amplitude`.
pub fn ingest(rec: &Recording, config: &IngestConfig, signal: &SignalConfig) -> Result<Vec<f64>> {
    rec.validate()?;
    signal.validate()?;
    if !(config.fundamental_hz > 0.0) || !config.fundamental_hz.is_finite() {
        return Err(Error::Config(format!("fundamental must be positive, got {}", config.fundamental_hz)));
    }
    let n = signal.n_samples;
    let span = signal.cycles as f64 / config.fundamental_hz;
    let t0 = rec.t[0] + config.offset_s;
    let dt = span / n as f64;
    let last = t0 + (n - 1) as f64 * dt;
    let end = rec.t[rec.t.len() - 1];
    if last > end + 1e-9 * span {
        return Err(Error::Config(format!(
            "recording ends at {end} s but the {}-cycle window needs data up to {last} s",
            signal.cycles
        )));
    }
    let mut x: Vec<f64> = (0..n).map(|k| interp(&rec.t, &rec.v, t0 + k as f64 * dt)).collect();
    let per_cycle = n / signal.cycles;
    let mut peaks: Vec<f64> = x.chunks(per_cycle).map(|c| c.iter().fold(0.0f64, |m, v| m.max(v.abs()))).collect();
    peaks.sort_by(f64::total_cmp);
    let m = peaks.len();
    let median = if m % 2 == 1 { peaks[m / 2] } else { 0.5 * (peaks[m / 2 - 1] + peaks[m / 2]) };
    if !(median > 0.0) {
        return Err(Error::Numerical("recording is flat; cannot normalise".into()));
    }
    let scale = signal.amplitude / median;
    x.iter_mut().for_each(|v| *v *= scale);
    Ok(x)
}

/// Wraps ingested samples as unlabelled records of a split named `name`.
pub fn external_split(name: &str, signal: &SignalConfig, xs: Vec<Vec<f64>>) -> Split {
    let n = signal.n_samples;
    let records = xs
        .into_iter()
        .enumerate()
        .map(|(i, x)| Waveform {
            x0: vec![0.0; n],
            d: vec![0.0; n],
            noise: x.iter().map(|_| 0.0).collect(),
            x,
            class: None,
            params: DisturbanceParams { phase: 0.0, components: vec![] },
            split_id: u32::MAX,
            index: i as u32,
        })
        .collect();
    Split { name: name.to_string(), split_id: u32::MAX, config: signal.clone(), records }
}

//! Empirical explanation distributions and their summaries.
//!
//! Rows of an [`ExplanationSamples`] matrix are nonnegative relevance maps,
//! one per posterior draw; every summary is a columnwise statistic of it.

mod toy;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attribution::{attribute, to_relevance, OperatorConfig, OperatorKind};
use crate::error::{Error, Result};
use crate::posterior::{ParameterSample, PosteriorApprox, PosteriorKind};

pub use toy::{gaussian_w1, w1_numeric, AffineGaussianToy};

/// How one row of the explanation matrix was produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowProvenance {
    /// Ensemble member index, if the posterior is an ensemble.
    pub member: Option<usize>,
    /// Seed of the dropout mask or Laplace draw.
    pub sample_seed: Option<u64>,
    pub lime_seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExplanationSamples {
    /// `S × N` nonnegative relevance rows.
    pub rows: Vec<Vec<f64>>,
    /// The signed operator outputs before conversion.
    pub raw: Vec<Vec<f64>>,
    pub provenance: Vec<RowProvenance>,
    pub operator: OperatorKind,
    pub posterior: PosteriorKind,
    pub class: usize,
}

impl ExplanationSamples {
    /// Wraps precomputed nonnegative rows.
    pub fn from_rows(
        rows: Vec<Vec<f64>>,
        operator: OperatorKind,
        posterior: PosteriorKind,
        class: usize,
    ) -> Result<Self> {
        check_rows(&rows)?;
        if rows.iter().flatten().any(|&v| !(v >= 0.0)) {
            return Err(Error::Config("relevance rows must be nonnegative".into()));
        }
        let provenance = vec![RowProvenance { member: None, sample_seed: None, lime_seed: 0 }; rows.len()];
        Ok(ExplanationSamples { raw: rows.clone(), rows, provenance, operator, posterior, class })
    }

    pub fn n_samples(&self) -> usize {
        self.rows.len()
    }

    pub fn n_features(&self) -> usize {
        self.rows[0].len()
    }

    /// Largest entry over all rows.
    pub fn global_max(&self) -> f64 {
        self.rows.iter().flatten().copied().fold(0.0, f64::max)
    }
}

fn check_rows(rows: &[Vec<f64>]) -> Result<()> {
    let Some(first) = rows.first() else {
        return Err(Error::Config("an explanation distribution needs at least one row".into()));
    };
    if let Some(bad) = rows.iter().find(|r| r.len() != first.len()) {
        return Err(Error::Shape { expected: first.len(), actual: bad.len() });
    }
    Ok(())
}

/// Pushes `s` posterior draws through `operator`, one relevance row per draw.
pub fn sample_explanations(
    posterior: &PosteriorApprox,
    operator: OperatorKind,
    config: &OperatorConfig,
    x: &[f64],
    class: usize,
    s: usize,
    rng: &mut impl Rng,
) -> Result<ExplanationSamples> {
    let samples = posterior.sample(s, rng)?;
    let lime_seeds: Vec<u64> = (0..samples.len()).map(|_| rng.random()).collect();
    let mut rows = Vec::with_capacity(samples.len());
    let mut raw = Vec::with_capacity(samples.len());
    let mut provenance = Vec::with_capacity(samples.len());
    for (sample, &lime_seed) in samples.iter().zip(&lime_seeds) {
        let map = explain_one(posterior, sample, operator, config, x, class, lime_seed)?;
        rows.push(to_relevance(&map).values);
        raw.push(map.values);
        provenance.push(RowProvenance {
            member: match sample {
                ParameterSample::Member { index } => Some(*index),
                _ => None,
            },
            sample_seed: sample.seed(),
            lime_seed,
        });
    }
    Ok(ExplanationSamples { rows, raw, provenance, operator, posterior: posterior.kind(), class })
}

/// The signed map of a single posterior draw.
pub fn explain_one(
    posterior: &PosteriorApprox,
    sample: &ParameterSample,
    operator: OperatorKind,
    config: &OperatorConfig,
    x: &[f64],
    class: usize,
    lime_seed: u64,
) -> Result<crate::attribution::SaliencyMap> {
    let model = posterior.model(sample)?;
    attribute(operator, &model, x, class, config, lime_seed)
}

pub fn mean_map(e: &ExplanationSamples) -> Vec<f64> {
    let s = e.n_samples() as f64;
    (0..e.n_features()).map(|n| e.rows.iter().map(|r| r[n]).sum::<f64>() / s).collect()
}

/// Unbiased columnwise variance; undefined for a single row.
pub fn variance_map(e: &ExplanationSamples) -> Result<Vec<f64>> {
    let s = e.n_samples();
    if s < 2 {
        return Err(Error::Undefined("variance undefined for fewer than two samples"));
    }
    let mean = mean_map(e);
    Ok((0..e.n_features())
        .map(|n| e.rows.iter().map(|r| (r[n] - mean[n]).powi(2)).sum::<f64>() / (s - 1) as f64)
        .collect())
}

/// `ŝ_n / (R̄_n + κ)`.
pub fn cv_map(e: &ExplanationSamples, kappa: f64) -> Result<Vec<f64>> {
    let var = variance_map(e)?;
    Ok(mean_map(e).iter().zip(&var).map(|(m, v)| v.sqrt() / (m.abs() + kappa)).collect())
}

/// 1-based order-statistic index `⌈αS⌉`, clamped to `[1, S]`.
pub fn quantile_rank(alpha: f64, s: usize) -> usize {
    // the small offset keeps αS that is an integer up to rounding from jumping a rank
    ((alpha * s as f64 - 1e-12).ceil() as usize).clamp(1, s)
}

/// Columnwise `⌈αS⌉`-th order statistic, without interpolation.
pub fn quantile_map(e: &ExplanationSamples, alpha: f64) -> Result<Vec<f64>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("quantile level must be in (0, 1), got {alpha}")));
    }
    let k = quantile_rank(alpha, e.n_samples()) - 1;
    Ok((0..e.n_features())
        .map(|n| {
            let mut col: Vec<f64> = e.rows.iter().map(|r| r[n]).collect();
            col.sort_by(f64::total_cmp);
            col[k]
        })
        .collect())
}

/// Positions where at least a fraction `η` of rows exceed `δ`, ascending.
pub fn agreement_set(e: &ExplanationSamples, delta: f64, eta: f64) -> Result<Vec<usize>> {
    if !(delta > 0.0) || !(0.0..=1.0).contains(&eta) {
        return Err(Error::Config("agreement set needs δ > 0 and η in [0, 1]".into()));
    }
    let s = e.n_samples();
    Ok((0..e.n_features())
        .filter(|&n| {
            let hits = e.rows.iter().filter(|r| r[n] > delta).count();
            // compare hits/S ≥ η without dividing, so η = k/S is exact
            hits as f64 >= eta * s as f64 - 1e-9
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SummaryKind {
    Mean,
    Variance,
    Cv,
    /// Quantile level in per-mille.
    Quantile(u16),
}

impl SummaryKind {
    /// Mean, variance, CV and the five default quantiles.
    pub fn all_maps() -> Vec<SummaryKind> {
        let mut v = vec![SummaryKind::Mean, SummaryKind::Variance, SummaryKind::Cv];
        v.extend([50, 250, 500, 750, 950].map(SummaryKind::Quantile));
        v
    }

    /// Summaries that are themselves relevance explanations.
    pub fn point_valued() -> Vec<SummaryKind> {
        SummaryKind::all_maps().into_iter().filter(|k| !k.is_diagnostic()).collect()
    }

    /// Dispersion maps, scored as localisation baselines only.
    pub fn is_diagnostic(self) -> bool {
        matches!(self, SummaryKind::Variance | SummaryKind::Cv)
    }

    pub fn alpha(self) -> Option<f64> {
        match self {
            SummaryKind::Quantile(pm) => Some(pm as f64 / 1000.0),
            _ => None,
        }
    }

    pub fn name(self) -> String {
        match self {
            SummaryKind::Mean => "mean".into(),
            SummaryKind::Variance => "variance".into(),
            SummaryKind::Cv => "cv".into(),
            SummaryKind::Quantile(pm) if pm % 10 == 0 => format!("q{:02}", pm / 10),
            SummaryKind::Quantile(pm) => format!("q{}.{}", pm / 10, pm % 10),
        }
    }
}

impl fmt::Display for SummaryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for SummaryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::Config(format!(
                "unknown summary '{s}', expected one of mean, variance, cv, or q<percent> such as q05 or q95"
            ))
        };
        match s {
            "mean" => Ok(SummaryKind::Mean),
            "variance" | "var" => Ok(SummaryKind::Variance),
            "cv" => Ok(SummaryKind::Cv),
            _ => {
                let pct: f64 = s.strip_prefix('q').ok_or_else(bad)?.parse().map_err(|_| bad())?;
                let pm = (pct * 10.0).round();
                if !(pm > 0.0 && pm < 1000.0) || (pct * 10.0 - pm).abs() > 1e-9 {
                    return Err(bad());
                }
                Ok(SummaryKind::Quantile(pm as u16))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryConfig {
    pub kappa: f64,
    /// δ as a fraction of the largest entry of the instance's rows.
    pub delta_fraction: f64,
    /// Union-type level; `None` means `1/S`.
    pub eta_union: Option<f64>,
    pub eta_intersection: f64,
}

impl Default for SummaryConfig {
    fn default() -> Self {
        SummaryConfig { kappa: 1e-8, delta_fraction: 0.1, eta_union: None, eta_intersection: 1.0 }
    }
}

/// A real-valued summary map.
pub fn summary_map(e: &ExplanationSamples, kind: SummaryKind, config: &SummaryConfig) -> Result<Vec<f64>> {
    match kind {
        SummaryKind::Mean => Ok(mean_map(e)),
        SummaryKind::Variance => variance_map(e),
        SummaryKind::Cv => cv_map(e, config.kappa),
        SummaryKind::Quantile(_) => quantile_map(e, kind.alpha().expect("quantile")),
    }
}

/// Union-type and intersection-type relevance sets at the configured levels.
/// Both are empty when every row is zero.
pub fn relevance_sets(e: &ExplanationSamples, config: &SummaryConfig) -> Result<(Vec<usize>, Vec<usize>)> {
    let delta = config.delta_fraction * e.global_max();
    if !(delta > 0.0) {
        return Ok((Vec::new(), Vec::new()));
    }
    let eta_u = config.eta_union.unwrap_or(1.0 / e.n_samples() as f64);
    Ok((agreement_set(e, delta, eta_u)?, agreement_set(e, delta, config.eta_intersection)?))
}

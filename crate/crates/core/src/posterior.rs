//! Approximate parameter posteriors and Monte Carlo sampling from them.
//!
//! A [`ParameterSample`] is a self-contained realisation handle: evaluating it
//! twice on the same input always gives the same output, which is what lets an
//! attribution operator push a single parameter draw through many perturbed
//! forward passes.

use std::borrow::Cow;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{
    batch_gradient, dropout_mask, load_checkpoint, save_checkpoint, train, ArchConfig, GradMode, NetworkParams,
    TrainConfig,
};
use crate::rng;
use crate::siggen::Waveform;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosteriorKind {
    /// A single trained network, used as the non-Bayesian baseline.
    Deterministic,
    DeepEnsemble,
    McDropout,
    LaplaceDiag,
}

impl PosteriorKind {
    pub const ALL: [PosteriorKind; 4] = [
        PosteriorKind::Deterministic,
        PosteriorKind::DeepEnsemble,
        PosteriorKind::McDropout,
        PosteriorKind::LaplaceDiag,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PosteriorKind::Deterministic => "deterministic",
            PosteriorKind::DeepEnsemble => "deep_ensemble",
            PosteriorKind::McDropout => "mc_dropout",
            PosteriorKind::LaplaceDiag => "laplace_diag",
        }
    }
}

impl fmt::Display for PosteriorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PosteriorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PosteriorKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let valid: Vec<_> = PosteriorKind::ALL.iter().map(|k| k.name()).collect();
            Error::Config(format!("unknown posterior '{s}', expected one of {}", valid.join(", ")))
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaplaceConfig {
    /// Additive damping λ on the precision.
    pub damping: f64,
    /// Multiplicative scaling s of the Fisher diagonal.
    pub scaling: f64,
    /// Use at most this many training examples for the Fisher (all when `None`).
    pub max_examples: Option<usize>,
}

impl Default for LaplaceConfig {
    fn default() -> Self {
        LaplaceConfig { damping: 1e2, scaling: 1.75e10, max_examples: None }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum PosteriorApprox {
    Deterministic { params: NetworkParams },
    DeepEnsemble { members: Vec<NetworkParams> },
    McDropout { base: NetworkParams, dropout_p: f64, s_default: usize },
    LaplaceDiag { base: NetworkParams, variance: Vec<f64>, config: LaplaceConfig, s_default: usize },
}

/// One draw θ^(s) from a posterior.
#[derive(Clone, Debug, PartialEq)]
pub enum ParameterSample {
    /// The deterministic network or an ensemble member.
    Member { index: usize },
    /// A frozen dropout mask over the hidden layer.
    DropoutMask { seed: u64, mask: Vec<f64> },
    /// A concrete perturbed parameter vector.
    Perturbed { seed: u64, theta: Vec<f64> },
}

impl ParameterSample {
    /// Seed that regenerates this draw, if it came from one.
    pub fn seed(&self) -> Option<u64> {
        match self {
            ParameterSample::Member { .. } => None,
            ParameterSample::DropoutMask { seed, .. } | ParameterSample::Perturbed { seed, .. } => Some(*seed),
        }
    }
}

/// A network with a fixed dropout realisation, ready for evaluation.
#[derive(Clone, Debug)]
pub struct SampledModel<'a> {
    pub params: Cow<'a, NetworkParams>,
    pub dropout: Option<Vec<f64>>,
}

impl SampledModel<'_> {
    pub fn probs(&self, x: &[f64]) -> Vec<f64> {
        self.params.probs(x, self.dropout.as_deref())
    }
}

impl PosteriorApprox {
    pub fn kind(&self) -> PosteriorKind {
        match self {
            PosteriorApprox::Deterministic { .. } => PosteriorKind::Deterministic,
            PosteriorApprox::DeepEnsemble { .. } => PosteriorKind::DeepEnsemble,
            PosteriorApprox::McDropout { .. } => PosteriorKind::McDropout,
            PosteriorApprox::LaplaceDiag { .. } => PosteriorKind::LaplaceDiag,
        }
    }

    /// Sample count used when none is requested.
    pub fn default_samples(&self) -> usize {
        match self {
            PosteriorApprox::Deterministic { .. } => 1,
            PosteriorApprox::DeepEnsemble { members } => members.len(),
            PosteriorApprox::McDropout { s_default, .. } | PosteriorApprox::LaplaceDiag { s_default, .. } => *s_default,
        }
    }

    /// The network every sample is derived from (the first member for ensembles).
    pub fn base(&self) -> &NetworkParams {
        match self {
            PosteriorApprox::Deterministic { params } => params,
            PosteriorApprox::DeepEnsemble { members } => &members[0],
            PosteriorApprox::McDropout { base, .. } | PosteriorApprox::LaplaceDiag { base, .. } => base,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            PosteriorApprox::Deterministic { .. } => Ok(()),
            PosteriorApprox::DeepEnsemble { members } => {
                if members.len() < 2 {
                    return Err(Error::Config("an ensemble needs at least two members".into()));
                }
                if members.iter().any(|m| m.arch != members[0].arch) {
                    return Err(Error::Config("ensemble members have different architectures".into()));
                }
                Ok(())
            }
            PosteriorApprox::McDropout { dropout_p, s_default, .. } => {
                if !(0.0..1.0).contains(dropout_p) || *s_default == 0 {
                    return Err(Error::Config("MC dropout needs 0 <= p < 1 and S >= 1".into()));
                }
                Ok(())
            }
            PosteriorApprox::LaplaceDiag { base, variance, s_default, .. } => {
                if variance.len() != base.param_count() {
                    return Err(Error::Shape { expected: base.param_count(), actual: variance.len() });
                }
                if variance.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) || *s_default == 0 {
                    return Err(Error::Config("Laplace variances must be finite and nonnegative".into()));
                }
                Ok(())
            }
        }
    }

    /// Draws `s` parameter samples. Ensembles and the deterministic network
    /// enumerate their members exactly once, so `s` must equal the member count.
    pub fn sample(&self, s: usize, rng: &mut impl Rng) -> Result<Vec<ParameterSample>> {
        if s == 0 {
            return Err(Error::Config("sample count must be at least 1".into()));
        }
        match self {
            PosteriorApprox::Deterministic { .. } | PosteriorApprox::DeepEnsemble { .. } => {
                let m = self.default_samples();
                if s != m {
                    return Err(Error::Config(format!("{} sample count is fixed at {m}, got {s}", self.kind())));
                }
                Ok((0..m).map(|index| ParameterSample::Member { index }).collect())
            }
            PosteriorApprox::McDropout { base, dropout_p, .. } => Ok((0..s)
                .map(|_| {
                    let seed = rng.random::<u64>();
                    let mask = dropout_mask(base.arch.hidden, *dropout_p, &mut rng::seeded(seed));
                    ParameterSample::DropoutMask { seed, mask }
                })
                .collect()),
            PosteriorApprox::LaplaceDiag { base, variance, .. } => Ok((0..s)
                .map(|_| {
                    let seed = rng.random::<u64>();
                    let theta = laplace_draw(&base.theta, variance, seed);
                    ParameterSample::Perturbed { seed, theta }
                })
                .collect()),
        }
    }

    /// Materialises a sample as an evaluable network.
    pub fn model(&self, sample: &ParameterSample) -> Result<SampledModel<'_>> {
        let mismatch = || Error::Config(format!("sample {sample:?} does not belong to a {} posterior", self.kind()));
        match (self, sample) {
            (PosteriorApprox::Deterministic { params }, ParameterSample::Member { index: 0 }) => {
                Ok(SampledModel { params: Cow::Borrowed(params), dropout: None })
            }
            (PosteriorApprox::DeepEnsemble { members }, ParameterSample::Member { index }) => members
                .get(*index)
                .map(|p| SampledModel { params: Cow::Borrowed(p), dropout: None })
                .ok_or_else(mismatch),
            (PosteriorApprox::McDropout { base, .. }, ParameterSample::DropoutMask { mask, .. }) => {
                if mask.len() != base.arch.hidden {
                    return Err(Error::Shape { expected: base.arch.hidden, actual: mask.len() });
                }
                Ok(SampledModel { params: Cow::Borrowed(base), dropout: Some(mask.clone()) })
            }
            (PosteriorApprox::LaplaceDiag { base, .. }, ParameterSample::Perturbed { theta, .. }) => {
                let p = NetworkParams::from_theta(&base.arch, theta.clone(), base.running.clone())?;
                Ok(SampledModel { params: Cow::Owned(p), dropout: None })
            }
            _ => Err(mismatch()),
        }
    }

    /// Monte Carlo posterior predictive: the mean of the sampled probability vectors.
    pub fn predictive(&self, x: &[f64], s: usize, rng: &mut impl Rng) -> Result<Vec<f64>> {
        let samples = self.sample(s, rng)?;
        let probs: Vec<Vec<f64>> =
            samples.iter().map(|smp| self.model(smp).map(|m| m.probs(x))).collect::<Result<_>>()?;
        Ok(average(&probs))
    }
}

/// Componentwise mean of equal-length vectors.
pub fn average(rows: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; rows[0].len()];
    for r in rows {
        out.iter_mut().zip(r).for_each(|(o, v)| *o += v);
    }
    out.iter_mut().for_each(|o| *o /= rows.len() as f64);
    out
}

fn laplace_draw(mean: &[f64], variance: &[f64], seed: u64) -> Vec<f64> {
    let mut r = rng::seeded(seed);
    mean.iter()
        .zip(variance)
        .map(|(m, v)| {
            let z: f64 = StandardNormal.sample(&mut r);
            m + v.sqrt() * z
        })
        .collect()
}

/// Trains `seeds.len()` members that differ only in their seed.
pub fn fit_ensemble(
    arch: &ArchConfig,
    train_set: &[Waveform],
    val_set: &[Waveform],
    base: &TrainConfig,
    seeds: &[u64],
) -> Result<PosteriorApprox> {
    for (i, a) in seeds.iter().enumerate() {
        if seeds[..i].contains(a) {
            return Err(Error::Config(format!("ensemble seed {a} is repeated")));
        }
    }
    let mut members = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        log::info!("training ensemble member with seed {seed}");
        let cfg = TrainConfig { seed, ..base.clone() };
        members.push(train(arch, train_set, val_set, &cfg)?.params);
    }
    ensemble_from_members(members)
}

/// Wraps already trained networks as an ensemble, checking they are distinct.
pub fn ensemble_from_members(members: Vec<NetworkParams>) -> Result<PosteriorApprox> {
    if members.len() == 1 {
        let params = members.into_iter().next().expect("one member");
        return Ok(PosteriorApprox::Deterministic { params });
    }
    for i in 0..members.len() {
        for j in 0..i {
            if members[i].distance(&members[j]) == 0.0 {
                return Err(Error::Numerical(format!("ensemble members {j} and {i} are identical")));
            }
        }
    }
    let post = PosteriorApprox::DeepEnsemble { members };
    post.validate()?;
    Ok(post)
}

/// Mean of squared per-example gradients, `F_ii = (1/n) Σ_e (∂ℓ_e/∂θ_i)²`.
///
/// Examples are processed in fixed-size chunks in parallel and reduced in
/// order, so the result does not depend on the thread count.
pub fn diagonal_fisher<G>(dim: usize, n_examples: usize, grad: G) -> Result<Vec<f64>>
where
    G: Fn(usize) -> Result<Vec<f64>> + Sync,
{
    const CHUNK: usize = 64;
    if n_examples == 0 {
        return Err(Error::Config("Fisher needs at least one example".into()));
    }
    let mut fisher = vec![0.0; dim];
    let starts: Vec<usize> = (0..n_examples).step_by(CHUNK).collect();
    let partials: Vec<Vec<f64>> = starts
        .par_iter()
        .map(|&start| {
            let mut acc = vec![0.0; dim];
            for e in start..(start + CHUNK).min(n_examples) {
                let g = grad(e)?;
                if g.len() != dim {
                    return Err(Error::Shape { expected: dim, actual: g.len() });
                }
                acc.iter_mut().zip(&g).for_each(|(a, v)| *a += v * v);
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    for p in &partials {
        fisher.iter_mut().zip(p).for_each(|(f, v)| *f += v);
    }
    fisher.iter_mut().for_each(|f| *f /= n_examples as f64);
    if fisher.iter().any(|f| !f.is_finite()) {
        return Err(Error::Numerical("non-finite Fisher entry".into()));
    }
    Ok(fisher)
}

/// Diagonal Laplace approximation around `map` with precision `λ + s·F`.
pub fn fit_laplace(
    map: &NetworkParams,
    data: &[Waveform],
    config: &LaplaceConfig,
    s_default: usize,
) -> Result<PosteriorApprox> {
    if !(config.damping > 0.0) || config.scaling < 0.0 {
        return Err(Error::Config("Laplace needs damping > 0 and scaling >= 0".into()));
    }
    let labelled: Vec<&Waveform> = data.iter().filter(|w| w.class.is_some()).collect();
    let n = config.max_examples.map_or(labelled.len(), |m| m.min(labelled.len()));
    let fisher = diagonal_fisher(map.param_count(), n, |e| {
        let w = labelled[e];
        let y = w.label().expect("labelled");
        Ok(batch_gradient(map, &[w.x.as_slice()], &[y], GradMode::Eval)?.grad)
    })?;
    Ok(laplace_from_fisher(map, &fisher, *config, s_default))
}

pub fn laplace_from_fisher(
    map: &NetworkParams,
    fisher: &[f64],
    config: LaplaceConfig,
    s_default: usize,
) -> PosteriorApprox {
    let variance = fisher.iter().map(|f| 1.0 / (config.damping + config.scaling * f)).collect();
    PosteriorApprox::LaplaceDiag { base: map.clone(), variance, config, s_default }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorManifest {
    pub kind: PosteriorKind,
    pub s_default: usize,
    pub dropout_p: Option<f64>,
    pub laplace: Option<LaplaceConfig>,
    /// Checkpoint files relative to the manifest.
    pub checkpoints: Vec<String>,
    /// Laplace variance vector stored in checkpoint layout.
    pub variance: Option<String>,
}

pub const MANIFEST_FILE: &str = "posterior.json";

/// Writes the manifest and checkpoint files for `post` into `dir`.
pub fn save_posterior(dir: &Path, post: &PosteriorApprox) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ckpt = |name: &str, p: &NetworkParams| -> Result<String> {
        save_checkpoint(&dir.join(name), p)?;
        Ok(name.to_string())
    };
    let mut manifest = PosteriorManifest {
        kind: post.kind(),
        s_default: post.default_samples(),
        dropout_p: None,
        laplace: None,
        checkpoints: Vec::new(),
        variance: None,
    };
    match post {
        PosteriorApprox::Deterministic { params } => manifest.checkpoints.push(ckpt("model.ckpt", params)?),
        PosteriorApprox::DeepEnsemble { members } => {
            for (i, m) in members.iter().enumerate() {
                manifest.checkpoints.push(ckpt(&format!("member_{i}.ckpt"), m)?);
            }
        }
        PosteriorApprox::McDropout { base, dropout_p, .. } => {
            manifest.dropout_p = Some(*dropout_p);
            manifest.checkpoints.push(ckpt("map.ckpt", base)?);
        }
        PosteriorApprox::LaplaceDiag { base, variance, config, .. } => {
            manifest.laplace = Some(*config);
            manifest.checkpoints.push(ckpt("map.ckpt", base)?);
            let holder = NetworkParams::from_theta(&base.arch, variance.clone(), base.running.clone())?;
            manifest.variance = Some(ckpt("variance.ckpt", &holder)?);
        }
    }
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::format(&path, e.to_string()))?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn load_posterior(dir: &Path) -> Result<PosteriorApprox> {
    let path = dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Err(Error::MissingArtefacts(format!(
            "no posterior manifest at {}; run `pqx train` first",
            path.display()
        )));
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: PosteriorManifest = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
    let nets: Vec<NetworkParams> =
        m.checkpoints.iter().map(|c| load_checkpoint(&dir.join(c))).collect::<Result<_>>()?;
    let first = || nets.first().cloned().ok_or_else(|| Error::format(&path, "no checkpoints listed"));
    let post = match m.kind {
        PosteriorKind::Deterministic => PosteriorApprox::Deterministic { params: first()? },
        PosteriorKind::DeepEnsemble => PosteriorApprox::DeepEnsemble { members: nets.clone() },
        PosteriorKind::McDropout => PosteriorApprox::McDropout {
            base: first()?,
            dropout_p: m.dropout_p.ok_or_else(|| Error::format(&path, "missing dropout_p"))?,
            s_default: m.s_default,
        },
        PosteriorKind::LaplaceDiag => {
            let file = m.variance.as_ref().ok_or_else(|| Error::format(&path, "missing variance file"))?;
            PosteriorApprox::LaplaceDiag {
                base: first()?,
                variance: load_checkpoint(&dir.join(file))?.theta,
                config: m.laplace.ok_or_else(|| Error::format(&path, "missing Laplace settings"))?,
                s_default: m.s_default,
            }
        }
    };
    post.validate()?;
    Ok(post)
}

//! Plain-text `key = value` run configuration.
//!
//! Every key has a default; files and command-line flags override them in that
//! order. The resolved table is written back verbatim into each run directory,
//! so a run can be repeated with `--config <run dir>/resolved.cfg`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use pqx_core::attribution::{LimeConfig, OcclusionConfig, OperatorConfig, OperatorKind};
use pqx_core::explain::{SummaryConfig, SummaryKind};
use pqx_core::metrics::TargetMode;
use pqx_core::net::{Optimiser, TrainConfig};
use pqx_core::posterior::{LaplaceConfig, PosteriorKind};
use pqx_core::siggen::SignalConfig;

pub const RESOLVED_FILE: &str = "resolved.cfg";

const ALL_POSTERIORS: &str = "deterministic,deep_ensemble,mc_dropout,laplace_diag";
const ALL_SUMMARIES: &str = "mean,variance,cv,q05,q25,q50,q75,q95";

/// Known keys, their defaults and a one-line description.
const KEYS: &[(&str, &str, &str)] = &[
    ("seed", "", "master seed; every stage seed is derived from it"),
    ("out_dir", "pqx-out", "root of all artefacts"),
    ("threads", "0", "worker threads (0 = all cores)"),
    ("signal.n_samples", "640", "samples per record"),
    ("signal.cycles", "10", "fundamental cycles per record"),
    ("signal.amplitude", "1", "nominal peak amplitude"),
    ("signal.snr_db", "40", "additive noise level"),
    ("signal.epsilon", "0.0001", "ground-truth mask threshold"),
    ("data.train_per_class", "1000", "training records per class"),
    ("data.val_per_class", "100", "validation records per class"),
    ("data.test_splits", "5", "independent test splits"),
    ("data.test_per_class", "100", "test records per disturbance class"),
    ("data.test_normal", "100", "normal records per test split"),
    ("train.epochs", "100", "maximum epochs"),
    ("train.batch_size", "64", "minibatch size"),
    ("train.learning_rate", "0.001", "initial step size"),
    ("train.lr_decay", "1", "per-epoch learning-rate factor"),
    ("train.optimiser", "adam", "adam or sgd_momentum"),
    ("train.weight_decay", "0", "L2 penalty"),
    ("train.dropout_p", "0.2", "dropout rate before the output layer"),
    ("train.patience", "10", "early-stopping patience in epochs"),
    ("train.ensemble_members", "5", "deep-ensemble size"),
    ("train.posteriors", ALL_POSTERIORS, "posteriors built by `train`"),
    ("posterior.mc_samples", "20", "MC dropout draws per explanation"),
    ("posterior.laplace_samples", "20", "Laplace draws per explanation"),
    ("posterior.laplace_damping", "100", "Laplace precision damping"),
    ("posterior.laplace_scaling", "1.75e10", "Laplace Fisher scaling"),
    ("posterior.laplace_max_examples", "all", "training records used for the Fisher"),
    ("occlusion.window", "60", "occlusion window length"),
    ("occlusion.stride", "1", "occlusion stride"),
    ("occlusion.fill", "0", "occlusion fill value"),
    ("lime.n_perturbations", "128", "LIME design rows"),
    ("lime.segment_width", "16", "LIME segment width"),
    ("lime.ridge", "1", "LIME ridge penalty"),
    ("lime.kernel_width", "0.25", "LIME kernel width"),
    ("lime.fill", "0", "LIME fill value"),
    ("summary.kappa", "1e-8", "CV stabiliser"),
    ("summary.delta_fraction", "0.1", "set threshold as a fraction of the row maximum"),
    ("summary.eta_union", "auto", "union-set level (auto = 1/S)"),
    ("summary.eta_intersection", "1", "intersection-set level"),
    ("explain.split", "test0", "split to explain"),
    ("explain.instances", "0", "record positions within the split"),
    ("explain.posterior", "deep_ensemble", "posterior to sample"),
    ("explain.operator", "occlusion", "attribution operator"),
    ("explain.summaries", ALL_SUMMARIES, "summary maps to store"),
    ("explain.target", "true", "true or predicted"),
    ("eval.posteriors", ALL_POSTERIORS, "posteriors in the grid"),
    ("eval.operators", "occlusion,gradcam,lime", "operators in the grid"),
    ("eval.summaries", ALL_SUMMARIES, "summaries scored per cell"),
    ("eval.max_per_class", "all", "instances per class and split"),
    ("eval.target", "true", "true or predicted"),
    ("eval.accuracy", "true", "also report predictive accuracy"),
    ("ingest.name", "external", "split name of ingested records"),
    ("ingest.fundamental_hz", "50", "declared fundamental frequency"),
    ("ingest.sample_rate_hz", "none", "rate for single-column input"),
    ("ingest.offset_s", "0", "window start after the first sample"),
];

/// A bad flag, key or value; reported with exit code 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub type Usage<T> = Result<T, UsageError>;

fn usage<T>(msg: impl Into<String>) -> Usage<T> {
    Err(UsageError(msg.into()))
}

/// The untyped key table.
#[derive(Clone, Debug, PartialEq)]
pub struct RawConfig {
    values: BTreeMap<String, String>,
}

impl Default for RawConfig {
    fn default() -> Self {
        RawConfig { values: KEYS.iter().map(|(k, v, _)| (k.to_string(), v.to_string())).collect() }
    }
}

impl RawConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Usage<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.trim().to_string();
                Ok(())
            }
            None => usage(format!("unknown config key `{key}`")),
        }
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).expect("known key")
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn merge_text(&mut self, text: &str, origin: &str) -> Usage<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return usage(format!("{origin}:{}: expected `key = value`", i + 1));
            };
            self.set(k.trim(), v).map_err(|e| UsageError(format!("{origin}:{}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn merge_file(&mut self, path: &Path) -> Usage<()> {
        let text =
            fs::read_to_string(path).map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        self.merge_text(&text, &path.display().to_string())
    }

    /// `KEY=VALUE` from `--set`.
    pub fn merge_assignment(&mut self, assignment: &str) -> Usage<()> {
        let Some((k, v)) = assignment.split_once('=') else {
            return usage(format!("--set expects KEY=VALUE, got `{assignment}`"));
        };
        self.set(k.trim(), v)
    }

    /// The full table in declaration order, with descriptions.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, _, doc) in KEYS {
            out.push_str(&format!("# {doc}\n{k} = {}\n", self.get(k)));
        }
        out
    }

    fn parse<T: FromStr>(&self, key: &str) -> Usage<T>
    where
        T::Err: fmt::Display,
    {
        let v = self.get(key);
        v.parse().map_err(|e| UsageError(format!("bad value `{v}` for {key}: {e}")))
    }

    fn optional<T: FromStr>(&self, key: &str, none: &str) -> Usage<Option<T>>
    where
        T::Err: fmt::Display,
    {
        if self.get(key) == none {
            Ok(None)
        } else {
            self.parse(key).map(Some)
        }
    }

    fn list<T: FromStr>(&self, key: &str) -> Usage<Vec<T>>
    where
        T::Err: fmt::Display,
    {
        let items: Vec<T> = self
            .get(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|e| UsageError(format!("{key}: {e}"))))
            .collect::<Usage<_>>()?;
        if items.is_empty() {
            return usage(format!("{key} must list at least one entry"));
        }
        Ok(items)
    }

    fn target(&self, key: &str) -> Usage<TargetMode> {
        match self.get(key) {
            "true" => Ok(TargetMode::True),
            "predicted" => Ok(TargetMode::Predicted),
            v => usage(format!("bad value `{v}` for {key}: expected true or predicted")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_splits: usize,
    pub test_per_class: usize,
    pub test_normal: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExplainSettings {
    pub split: String,
    pub instances: Vec<usize>,
    pub posterior: PosteriorKind,
    pub operator: OperatorKind,
    pub summaries: Vec<SummaryKind>,
    pub target: TargetMode,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSettings {
    pub posteriors: Vec<PosteriorKind>,
    pub operators: Vec<OperatorKind>,
    pub summaries: Vec<SummaryKind>,
    pub max_per_class: Option<usize>,
    pub target: TargetMode,
    pub accuracy: bool,
}

/// The typed view of a [`RawConfig`].
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub threads: usize,
    pub signal: SignalConfig,
    pub data: DataConfig,
    /// Member seeds are derived per member; `seed` here is unused.
    pub train: TrainConfig,
    pub ensemble_members: usize,
    pub train_posteriors: Vec<PosteriorKind>,
    pub mc_samples: usize,
    pub laplace_samples: usize,
    pub laplace: LaplaceConfig,
    pub operators: OperatorConfig,
    pub summary: SummaryConfig,
    pub explain: ExplainSettings,
    pub eval: EvalSettings,
    pub ingest_name: String,
    pub ingest: pqx_core::ingest::IngestConfig,
}

fn optimiser(v: &str) -> Usage<Optimiser> {
    match v {
        "adam" => Ok(Optimiser::Adam),
        "sgd_momentum" => Ok(Optimiser::SgdMomentum),
        _ => usage(format!("bad value `{v}` for train.optimiser: expected adam or sgd_momentum")),
    }
}

impl RunConfig {
    pub fn from_raw(raw: &RawConfig) -> Usage<Self> {
        if raw.get("seed").is_empty() {
            return usage("no seed given; pass --seed or set `seed` in the config file");
        }
        let signal = SignalConfig {
            n_samples: raw.parse("signal.n_samples")?,
            cycles: raw.parse("signal.cycles")?,
            amplitude: raw.parse("signal.amplitude")?,
            snr_db: raw.parse("signal.snr_db")?,
            epsilon: raw.parse("signal.epsilon")?,
        };
        signal.validate().map_err(|e| UsageError(e.to_string()))?;
        let train = TrainConfig {
            epochs: raw.parse("train.epochs")?,
            batch_size: raw.parse("train.batch_size")?,
            learning_rate: raw.parse("train.learning_rate")?,
            lr_decay: raw.parse("train.lr_decay")?,
            optimiser: optimiser(raw.get("train.optimiser"))?,
            weight_decay: raw.parse("train.weight_decay")?,
            dropout_p: raw.parse("train.dropout_p")?,
            patience: raw.parse("train.patience")?,
            seed: 0,
        };
        train.validate().map_err(|e| UsageError(e.to_string()))?;
        let operators = OperatorConfig {
            occlusion: OcclusionConfig {
                window: raw.parse("occlusion.window")?,
                stride: raw.parse("occlusion.stride")?,
                fill: raw.parse("occlusion.fill")?,
            },
            lime: LimeConfig {
                n_perturbations: raw.parse("lime.n_perturbations")?,
                segment_width: raw.parse("lime.segment_width")?,
                ridge: raw.parse("lime.ridge")?,
                kernel_width: raw.parse("lime.kernel_width")?,
                fill: raw.parse("lime.fill")?,
            },
        };
        operators.validate(signal.n_samples).map_err(|e| UsageError(e.to_string()))?;
        let ensemble_members: usize = raw.parse("train.ensemble_members")?;
        if ensemble_members == 0 {
            return usage("train.ensemble_members must be at least 1");
        }
        Ok(RunConfig {
            seed: raw.parse("seed")?,
            out_dir: PathBuf::from(raw.get("out_dir")),
            threads: raw.parse("threads")?,
            signal,
            data: DataConfig {
                train_per_class: raw.parse("data.train_per_class")?,
                val_per_class: raw.parse("data.val_per_class")?,
                test_splits: raw.parse("data.test_splits")?,
                test_per_class: raw.parse("data.test_per_class")?,
                test_normal: raw.parse("data.test_normal")?,
            },
            train,
            ensemble_members,
            train_posteriors: raw.list("train.posteriors")?,
            mc_samples: raw.parse("posterior.mc_samples")?,
            laplace_samples: raw.parse("posterior.laplace_samples")?,
            laplace: LaplaceConfig {
                damping: raw.parse("posterior.laplace_damping")?,
                scaling: raw.parse("posterior.laplace_scaling")?,
                max_examples: raw.optional("posterior.laplace_max_examples", "all")?,
            },
            operators,
            summary: SummaryConfig {
                kappa: raw.parse("summary.kappa")?,
                delta_fraction: raw.parse("summary.delta_fraction")?,
                eta_union: raw.optional("summary.eta_union", "auto")?,
                eta_intersection: raw.parse("summary.eta_intersection")?,
            },
            explain: ExplainSettings {
                split: raw.get("explain.split").to_string(),
                instances: raw.list("explain.instances")?,
                posterior: raw.parse("explain.posterior")?,
                operator: raw.parse("explain.operator")?,
                summaries: raw.list("explain.summaries")?,
                target: raw.target("explain.target")?,
            },
            eval: EvalSettings {
                posteriors: raw.list("eval.posteriors")?,
                operators: raw.list("eval.operators")?,
                summaries: raw.list("eval.summaries")?,
                max_per_class: raw.optional("eval.max_per_class", "all")?,
                target: raw.target("eval.target")?,
                accuracy: raw.parse("eval.accuracy")?,
            },
            ingest_name: raw.get("ingest.name").to_string(),
            ingest: pqx_core::ingest::IngestConfig {
                fundamental_hz: raw.parse("ingest.fundamental_hz")?,
                sample_rate_hz: raw.optional("ingest.sample_rate_hz", "none")?,
                offset_s: raw.parse("ingest.offset_s")?,
            },
        })
    }

    /// Configured sample count for a posterior; `None` keeps its default.
    pub fn samples_for(&self, kind: PosteriorKind) -> Option<usize> {
        match kind {
            PosteriorKind::McDropout => Some(self.mc_samples),
            PosteriorKind::LaplaceDiag => Some(self.laplace_samples),
            PosteriorKind::Deterministic | PosteriorKind::DeepEnsemble => None,
        }
    }
}

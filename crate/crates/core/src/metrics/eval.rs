use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{iou, rma};
use crate::attribution::{OperatorConfig, OperatorKind};
use crate::error::{Error, Result};
use crate::explain::{sample_explanations, summary_map, SummaryConfig, SummaryKind};
use crate::net::argmax;
use crate::posterior::{PosteriorApprox, PosteriorKind};
use crate::rng;
use crate::siggen::{PqdClass, Split, Waveform};

pub const MACRO_GROUP: &str = "macro";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    /// Attribute the labelled class.
    True,
    /// Attribute the class predicted by the posterior predictive.
    Predicted,
}

/// One (posterior, operator) pair; every configured summary is scored on it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCell {
    pub posterior: PosteriorKind,
    pub operator: OperatorKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub cells: Vec<EvalCell>,
    pub summaries: Vec<SummaryKind>,
    pub operators: OperatorConfig,
    pub summary: SummaryConfig,
    /// Samples per posterior; `None` uses the posterior's default.
    pub samples: BTreeMap<PosteriorKind, usize>,
    /// First `k` instances of each disturbance class per split.
    pub max_per_class: Option<usize>,
    pub target: TargetMode,
    /// Also report predictive accuracy on every split.
    pub accuracy: bool,
    pub seed: u64,
}

impl EvalConfig {
    pub fn grid(posteriors: &[PosteriorKind], operators: &[OperatorKind]) -> Vec<EvalCell> {
        posteriors
            .iter()
            .flat_map(|&posterior| operators.iter().map(move |&operator| EvalCell { posterior, operator }))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub split: String,
    pub split_id: u32,
    pub instance: u32,
    pub class: PqdClass,
    pub posterior: PosteriorKind,
    pub operator: OperatorKind,
    pub summary: SummaryKind,
    pub rma: Option<f64>,
    pub iou: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub posterior: PosteriorKind,
    pub operator: OperatorKind,
    pub summary: SummaryKind,
    /// Class name or [`MACRO_GROUP`].
    pub group: String,
    pub rma_mean: f64,
    pub rma_std: f64,
    pub iou_mean: f64,
    pub iou_std: f64,
    pub n_splits: usize,
    pub n_instances: usize,
    pub n_missing: usize,
    pub diagnostic: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub posterior: PosteriorKind,
    pub split: String,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub records: Vec<EvalRecord>,
    pub tables: Vec<TableRow>,
    pub accuracy: Vec<AccuracyRow>,
}

fn selected(split: &Split, max_per_class: Option<usize>) -> Vec<&Waveform> {
    let mut taken = [0usize; crate::siggen::N_CLASSES];
    split
        .records
        .iter()
        .filter(|w| {
            let Some(c) = w.class.filter(|c| c.is_disturbance()) else { return false };
            taken[c.index()] += 1;
            max_per_class.is_none_or(|m| taken[c.index()] <= m)
        })
        .collect()
}

/// The class to attribute: the label, or the argmax of an `s`-sample
/// posterior predictive. Unlabelled records only support the latter.
pub fn target_class(
    posterior: &PosteriorApprox,
    x: &[f64],
    label: Option<usize>,
    mode: TargetMode,
    s: usize,
    rng: &mut impl Rng,
) -> Result<usize> {
    match (mode, label) {
        (TargetMode::True, Some(c)) => Ok(c),
        (TargetMode::True, None) => {
            Err(Error::Undefined("unlabelled record has no true class; use the predicted target"))
        }
        (TargetMode::Predicted, _) => Ok(argmax(&posterior.predictive(x, s, rng)?)),
    }
}

/// Scores every configured cell and summary on the test splits.
pub fn evaluate(
    splits: &[Split],
    posteriors: &BTreeMap<PosteriorKind, PosteriorApprox>,
    config: &EvalConfig,
) -> Result<EvalReport> {
    let mut missing: Vec<String> = Vec::new();
    for cell in &config.cells {
        if !posteriors.contains_key(&cell.posterior) && !missing.contains(&cell.posterior.to_string()) {
            missing.push(cell.posterior.to_string());
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingArtefacts(format!("posterior(s) {} (train them first)", missing.join(", "))));
    }
    if splits.is_empty() {
        return Err(Error::MissingArtefacts("test splits (run generate first)".into()));
    }
    let samples_for = |p: &PosteriorApprox| config.samples.get(&p.kind()).copied().unwrap_or(p.default_samples());

    let mut records = Vec::new();
    for split in splits {
        let instances = selected(split, config.max_per_class);
        log::info!("evaluating {} instances of {}", instances.len(), split.name);
        for w in instances {
            let mask = w.ground_truth_mask(split.config.epsilon)?;
            let label = w.label().expect("selected instances are labelled");
            for (ci, cell) in config.cells.iter().enumerate() {
                let post = &posteriors[&cell.posterior];
                let s = samples_for(post);
                let mut r = rng::child(config.seed, &[split.split_id as u64, w.index as u64, ci as u64]);
                let class = target_class(post, &w.x, Some(label), config.target, s, &mut r)?;
                let e = sample_explanations(post, cell.operator, &config.operators, &w.x, class, s, &mut r)?;
                for &summary in &config.summaries {
                    let (rma_v, iou_v) = match summary_map(&e, summary, &config.summary) {
                        Ok(map) => (rma(&map, &mask), iou(&map, &mask)),
                        Err(Error::Undefined(_)) => (None, None),
                        Err(e) => return Err(e),
                    };
                    records.push(EvalRecord {
                        split: split.name.clone(),
                        split_id: split.split_id,
                        instance: w.index,
                        class: w.class.expect("labelled"),
                        posterior: cell.posterior,
                        operator: cell.operator,
                        summary,
                        rma: rma_v,
                        iou: iou_v,
                    });
                }
            }
        }
    }

    let mut accuracy = Vec::new();
    if config.accuracy {
        let mut kinds: Vec<PosteriorKind> = config.cells.iter().map(|c| c.posterior).collect();
        kinds.sort();
        kinds.dedup();
        for kind in kinds {
            let post = &posteriors[&kind];
            let s = samples_for(post);
            for split in splits {
                let labelled: Vec<&Waveform> = split.records.iter().filter(|w| w.class.is_some()).collect();
                let hits: Vec<bool> = labelled
                    .par_iter()
                    .map(|w| -> Result<bool> {
                        let mut r = rng::child(config.seed ^ 0xACC, &[split.split_id as u64, w.index as u64]);
                        Ok(argmax(&post.predictive(&w.x, s, &mut r)?) == w.label().expect("labelled"))
                    })
                    .collect::<Result<_>>()?;
                let acc = hits.iter().filter(|&&h| h).count() as f64 / labelled.len().max(1) as f64;
                accuracy.push(AccuracyRow { posterior: kind, split: split.name.clone(), accuracy: acc });
            }
        }
    }

    let tables = aggregate(&records);
    Ok(EvalReport { records, tables, accuracy })
}

/// Mean and sample standard deviation (`n − 1`; zero for a single value).
fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = if v.len() > 1 { (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    (mean, std)
}

/// Per-class and macro rows: per-instance mean within each split, then
/// mean ± std across splits. Missing values are excluded and counted.
pub fn aggregate(records: &[EvalRecord]) -> Vec<TableRow> {
    type Key = (PosteriorKind, OperatorKind, SummaryKind, String);
    // key -> split -> (rma values, iou values, missing)
    let mut cells: BTreeMap<Key, BTreeMap<u32, (Vec<f64>, Vec<f64>, usize)>> = BTreeMap::new();
    for r in records {
        for group in [r.class.name().to_string(), MACRO_GROUP.to_string()] {
            let entry =
                cells.entry((r.posterior, r.operator, r.summary, group)).or_default().entry(r.split_id).or_default();
            match (r.rma, r.iou) {
                (Some(a), Some(b)) => {
                    entry.0.push(a);
                    entry.1.push(b);
                }
                (a, b) => {
                    a.into_iter().for_each(|v| entry.0.push(v));
                    b.into_iter().for_each(|v| entry.1.push(v));
                    entry.2 += 1;
                }
            }
        }
    }
    cells
        .into_iter()
        .map(|((posterior, operator, summary, group), per_split)| {
            let mut rma_split = Vec::new();
            let mut iou_split = Vec::new();
            let (mut n_instances, mut n_missing) = (0, 0);
            for (rmas, ious, miss) in per_split.values() {
                n_instances += rmas.len().max(ious.len()) + miss;
                n_missing += miss;
                if !rmas.is_empty() {
                    rma_split.push(rmas.iter().sum::<f64>() / rmas.len() as f64);
                }
                if !ious.is_empty() {
                    iou_split.push(ious.iter().sum::<f64>() / ious.len() as f64);
                }
            }
            let (rma_mean, rma_std) = if rma_split.is_empty() { (f64::NAN, f64::NAN) } else { mean_std(&rma_split) };
            let (iou_mean, iou_std) = if iou_split.is_empty() { (f64::NAN, f64::NAN) } else { mean_std(&iou_split) };
            TableRow {
                posterior,
                operator,
                summary,
                group,
                rma_mean,
                rma_std,
                iou_mean,
                iou_std,
                n_splits: iou_split.len(),
                n_instances,
                n_missing,
                diagnostic: summary.is_diagnostic(),
            }
        })
        .collect()
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))
}

fn fmt(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6}")
    } else {
        String::new()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), fmt)
}

pub fn write_table_csv(path: &Path, rows: &[TableRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let io = |e: csv::Error| Error::format(path, e.to_string());
    w.write_record([
        "posterior",
        "operator",
        "summary",
        "group",
        "rma_mean",
        "rma_std",
        "iou_mean",
        "iou_std",
        "n_splits",
        "n_instances",
        "n_missing",
        "diagnostic",
    ])
    .map_err(io)?;
    for r in rows {
        w.write_record([
            r.posterior.to_string(),
            r.operator.to_string(),
            r.summary.to_string(),
            r.group.clone(),
            fmt(r.rma_mean),
            fmt(r.rma_std),
            fmt(r.iou_mean),
            fmt(r.iou_std),
            r.n_splits.to_string(),
            r.n_instances.to_string(),
            r.n_missing.to_string(),
            r.diagnostic.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_records_csv(path: &Path, records: &[EvalRecord]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let io = |e: csv::Error| Error::format(path, e.to_string());
    w.write_record(["split", "instance", "class", "posterior", "operator", "summary", "rma", "iou"]).map_err(io)?;
    for r in records {
        w.write_record([
            r.split.clone(),
            r.instance.to_string(),
            r.class.name().to_string(),
            r.posterior.to_string(),
            r.operator.to_string(),
            r.summary.to_string(),
            opt(r.rma),
            opt(r.iou),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_accuracy_csv(path: &Path, rows: &[AccuracyRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let io = |e: csv::Error| Error::format(path, e.to_string());
    w.write_record(["posterior", "split", "accuracy"]).map_err(io)?;
    let mut by_post: BTreeMap<PosteriorKind, Vec<f64>> = BTreeMap::new();
    for r in rows {
        w.write_record([r.posterior.to_string(), r.split.clone(), fmt(r.accuracy)]).map_err(io)?;
        by_post.entry(r.posterior).or_default().push(r.accuracy);
    }
    for (post, accs) in by_post {
        let (m, s) = mean_std(&accs);
        w.write_record([post.to_string(), "mean".into(), fmt(m)]).map_err(io)?;
        w.write_record([post.to_string(), "std".into(), fmt(s)]).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

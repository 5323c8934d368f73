use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use pqx_core::bundle::{export_bundle_jsonl, read_bundle, write_bundle, write_map_csv, InstanceInfo, ResultsBundle};
use pqx_core::explain::sample_explanations;
use pqx_core::ingest::{external_split, ingest as ingest_recording, read_recording};
use pqx_core::metrics::{
    evaluate, target_class, write_accuracy_csv, write_records_csv, write_table_csv, EvalConfig, MACRO_GROUP,
};
use pqx_core::net::{accuracy, quantize_params, train as train_network, write_curve, ArchConfig, TrainConfig};
use pqx_core::posterior::{
    ensemble_from_members, fit_laplace, load_posterior, save_posterior, PosteriorApprox, PosteriorKind,
};
use pqx_core::report::write_svg;
use pqx_core::rng::{self, derive_seed};
use pqx_core::siggen::{generate_dataset, read_split, write_split, DatasetPlan, PqdClass, Split, N_CLASSES};
use pqx_core::Error;

use crate::config::{RawConfig, RunConfig, UsageError, RESOLVED_FILE};

/// Stage tags mixed into the master seed.
pub const STAGE_DATA: u64 = 1;
pub const STAGE_TRAIN: u64 = 2;
pub const STAGE_EXPLAIN: u64 = 3;
pub const STAGE_EVAL: u64 = 4;

pub const SPLIT_EXT: &str = "pqxd";
pub const BUNDLE_EXT: &str = "pqxb";
pub const MANIFEST: &str = "manifest.json";
pub const RUN_FILE: &str = "run.json";

pub struct Context {
    pub raw: RawConfig,
    pub cfg: RunConfig,
}

impl Context {
    fn dir(&self, stage: &str) -> PathBuf {
        self.cfg.out_dir.join(stage)
    }

    /// Creates a stage directory and records the resolved config in it.
    fn stage(&self, stage: &str) -> Result<PathBuf> {
        let dir = self.dir(stage);
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        write_text(&dir.join(RESOLVED_FILE), &self.raw.render())?;
        Ok(dir)
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SplitEntry {
    pub name: String,
    pub split_id: u32,
    pub file: String,
    pub records: usize,
    pub sha256: String,
    pub class_counts: BTreeMap<String, usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DataManifest {
    pub seed: u64,
    pub dataset_seed: u64,
    pub splits: Vec<SplitEntry>,
}

fn read_manifest(out_dir: &Path) -> Result<DataManifest> {
    let path = out_dir.join("data").join(MANIFEST);
    if !path.exists() {
        return Err(Error::MissingArtefacts(format!("{} (run `pqx generate` first)", path.display())).into());
    }
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// A generated split from `data/`, or an ingested one from `ingest/`.
fn load_split(out_dir: &Path, name: &str) -> Result<Split> {
    for stage in ["data", "ingest"] {
        let path = out_dir.join(stage).join(format!("{name}.{SPLIT_EXT}"));
        if path.exists() {
            return Ok(read_split(&path)?);
        }
    }
    Err(Error::MissingArtefacts(format!(
        "split `{name}` not found under {} (run `pqx generate` or `pqx ingest` first)",
        out_dir.display()
    ))
    .into())
}

fn class_counts(split: &Split) -> BTreeMap<String, usize> {
    let hist = split.class_histogram();
    (0..N_CLASSES as u16)
        .map(|id| {
            let c = PqdClass::from_id(id).expect("valid id");
            (c.name().to_string(), hist[c.index()])
        })
        .collect()
}

pub fn generate(ctx: &Context) -> Result<()> {
    let cfg = &ctx.cfg;
    let d = &cfg.data;
    let plan =
        DatasetPlan::standard(d.train_per_class, d.val_per_class, d.test_splits, d.test_per_class, d.test_normal);
    let dataset_seed = derive_seed(cfg.seed, &[STAGE_DATA]);
    let splits = generate_dataset(&cfg.signal, &plan, dataset_seed)?;
    let dir = ctx.stage("data")?;
    let mut entries = Vec::with_capacity(splits.len());
    for split in &splits {
        let file = format!("{}.{SPLIT_EXT}", split.name);
        let path = dir.join(&file);
        write_split(&path, split)?;
        entries.push(SplitEntry {
            name: split.name.clone(),
            split_id: split.split_id,
            file,
            records: split.len(),
            sha256: sha256_file(&path)?,
            class_counts: class_counts(split),
        });
    }

    println!("{:<32}{}", "class", entries.iter().map(|e| format!("{:>8}", e.name)).collect::<String>());
    for id in 0..N_CLASSES as u16 {
        let name = PqdClass::from_id(id).expect("valid id").name();
        let row: String = entries.iter().map(|e| format!("{:>8}", e.class_counts[name])).collect();
        println!("{name:<32}{row}");
    }
    let totals: String = entries.iter().map(|e| format!("{:>8}", e.records)).collect();
    println!("{:<32}{totals}", "total");

    write_json(&dir.join(MANIFEST), &DataManifest { seed: cfg.seed, dataset_seed, splits: entries })?;
    log::info!("wrote {} splits to {}", splits.len(), dir.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct MemberRun {
    member: usize,
    seed: u64,
    best_epoch: usize,
    epochs_run: usize,
    val_accuracy: f64,
    curve: String,
}

#[derive(Debug, Serialize)]
struct TrainRun {
    seed: u64,
    train: TrainConfig,
    members: Vec<MemberRun>,
    posteriors: Vec<String>,
}

pub fn train(ctx: &Context) -> Result<()> {
    let cfg = &ctx.cfg;
    let kinds = &cfg.train_posteriors;
    let n_members = if kinds.contains(&PosteriorKind::DeepEnsemble) { cfg.ensemble_members } else { 1 };
    if kinds.contains(&PosteriorKind::DeepEnsemble) && n_members < 2 {
        bail!(UsageError("a deep ensemble needs at least 2 members".into()));
    }
    let train_set = load_split(&cfg.out_dir, "train")?;
    let val_set = load_split(&cfg.out_dir, "val")?;
    let arch = ArchConfig { input_len: cfg.signal.n_samples, ..ArchConfig::default() };
    let dir = ctx.stage("models")?;
    let curves = dir.join("curves");
    fs::create_dir_all(&curves).with_context(|| format!("creating {}", curves.display()))?;

    let mut members = Vec::with_capacity(n_members);
    let mut runs = Vec::with_capacity(n_members);
    for i in 0..n_members {
        let seed = derive_seed(cfg.seed, &[STAGE_TRAIN, i as u64]);
        log::info!("training member {i} with seed {seed}");
        let outcome =
            train_network(&arch, &train_set.records, &val_set.records, &TrainConfig { seed, ..cfg.train.clone() })?;
        let curve = format!("curves/member_{i}.csv");
        write_curve(&dir.join(&curve), &outcome.curve)?;
        let params = quantize_params(&outcome.params);
        let val_accuracy = accuracy(&params, &val_set.records);
        log::info!("member {i}: best epoch {}, validation accuracy {val_accuracy:.4}", outcome.best_epoch);
        runs.push(MemberRun {
            member: i,
            seed,
            best_epoch: outcome.best_epoch,
            epochs_run: outcome.curve.len(),
            val_accuracy,
            curve,
        });
        members.push(params);
    }

    let base = members[0].clone();
    for &kind in kinds {
        let post = match kind {
            PosteriorKind::Deterministic => PosteriorApprox::Deterministic { params: base.clone() },
            PosteriorKind::DeepEnsemble => ensemble_from_members(members.clone())?,
            PosteriorKind::McDropout => PosteriorApprox::McDropout {
                base: base.clone(),
                dropout_p: cfg.train.dropout_p,
                s_default: cfg.mc_samples,
            },
            PosteriorKind::LaplaceDiag => {
                log::info!("fitting the diagonal Laplace posterior");
                fit_laplace(&base, &train_set.records, &cfg.laplace, cfg.laplace_samples)?
            }
        };
        save_posterior(&dir.join(kind.name()), &post)?;
        println!("saved {kind} posterior to {}", dir.join(kind.name()).display());
    }
    write_json(
        &dir.join(RUN_FILE),
        &TrainRun {
            seed: cfg.seed,
            train: cfg.train.clone(),
            members: runs,
            posteriors: kinds.iter().map(|k| k.to_string()).collect(),
        },
    )
}

fn load_posteriors(out_dir: &Path, kinds: &[PosteriorKind]) -> Result<BTreeMap<PosteriorKind, PosteriorApprox>> {
    kinds.iter().map(|&k| Ok((k, load_posterior(&out_dir.join("models").join(k.name()))?))).collect()
}

/// File stem shared by a bundle and its exports.
pub fn bundle_stem(split: &str, instance: u32, posterior: PosteriorKind, operator: &str) -> String {
    format!("{split}-{instance:05}-{posterior}-{operator}")
}

#[derive(Debug, Serialize)]
struct ExplainRun {
    seed: u64,
    explain_seed: u64,
    samples: usize,
    bundles: Vec<String>,
}

pub fn explain(ctx: &Context) -> Result<()> {
    let cfg = &ctx.cfg;
    let ex = &cfg.explain;
    let split = load_split(&cfg.out_dir, &ex.split)?;
    let post = load_posteriors(&cfg.out_dir, &[ex.posterior])?.remove(&ex.posterior).expect("loaded");
    let s = cfg.samples_for(ex.posterior).unwrap_or(post.default_samples());
    let explain_seed = derive_seed(cfg.seed, &[STAGE_EXPLAIN]);
    let dir = ctx.stage("explain")?;
    let mut bundles = Vec::new();
    for &pos in &ex.instances {
        let Some(w) = split.records.get(pos) else {
            bail!(UsageError(format!(
                "instance {pos} is out of range; split `{}` has {} records",
                split.name,
                split.len()
            )));
        };
        let mut r = rng::child(explain_seed, &[split.split_id as u64, w.index as u64]);
        let label = w.class.map(PqdClass::index);
        let class = target_class(&post, &w.x, label, ex.target, s, &mut r)?;
        let e = sample_explanations(&post, ex.operator, &cfg.operators, &w.x, class, s, &mut r)?;
        let mask = match w.class {
            Some(_) => Some(w.ground_truth_mask(split.config.epsilon)?.mask),
            None => None,
        };
        let info = InstanceInfo {
            split: &split.name,
            instance: w.index,
            label: w.class.map_or("external", PqdClass::name),
            x: &w.x,
            mask,
            seed: explain_seed,
        };
        let bundle = ResultsBundle::build(info, &e, &ex.summaries, &cfg.operators, &cfg.summary)?;
        let stem = bundle_stem(&split.name, w.index, ex.posterior, ex.operator.name());
        write_bundle(&dir.join(format!("{stem}.{BUNDLE_EXT}")), &bundle)?;
        export_bundle_jsonl(&dir.join(format!("{stem}.jsonl")), &bundle)?;
        let maps_dir = dir.join(&stem);
        fs::create_dir_all(&maps_dir).with_context(|| format!("creating {}", maps_dir.display()))?;
        for (name, map) in bundle.meta.summaries.iter().zip(&bundle.maps) {
            if let Some(values) = map {
                write_map_csv(&maps_dir.join(format!("{name}.csv")), values)?;
            }
        }
        let defined = bundle.maps.iter().filter(|m| m.is_some()).count();
        println!("{stem}: {} rows, {defined} of {} summaries defined", bundle.rows.len(), bundle.maps.len());
        bundles.push(stem);
    }
    write_json(&dir.join(RUN_FILE), &ExplainRun { seed: cfg.seed, explain_seed, samples: s, bundles })
}

#[derive(Debug, Serialize)]
struct EvalRun {
    seed: u64,
    dataset_seed: u64,
    splits: Vec<String>,
    config: EvalConfig,
    n_records: usize,
    n_missing: usize,
}

/// The evaluation grid described by `cfg`.
pub fn eval_config(cfg: &RunConfig) -> EvalConfig {
    let ev = &cfg.eval;
    EvalConfig {
        cells: EvalConfig::grid(&ev.posteriors, &ev.operators),
        summaries: ev.summaries.clone(),
        operators: cfg.operators,
        summary: cfg.summary.clone(),
        samples: ev.posteriors.iter().filter_map(|&k| Some((k, cfg.samples_for(k)?))).collect(),
        max_per_class: ev.max_per_class,
        target: ev.target,
        accuracy: ev.accuracy,
        seed: derive_seed(cfg.seed, &[STAGE_EVAL]),
    }
}

pub fn eval(ctx: &Context) -> Result<()> {
    let cfg = &ctx.cfg;
    let manifest = read_manifest(&cfg.out_dir)?;
    let splits: Vec<Split> = manifest
        .splits
        .iter()
        .filter(|e| e.name.starts_with("test"))
        .map(|e| load_split(&cfg.out_dir, &e.name))
        .collect::<Result<_>>()?;
    let posteriors = load_posteriors(&cfg.out_dir, &cfg.eval.posteriors)?;
    let config = eval_config(cfg);
    let report = evaluate(&splits, &posteriors, &config)?;
    if report.records.is_empty() {
        bail!("evaluation produced no records; the test splits hold no disturbance instances");
    }
    let dir = ctx.stage("eval")?;
    let (macro_rows, class_rows): (Vec<_>, Vec<_>) =
        report.tables.iter().cloned().partition(|r| r.group == MACRO_GROUP);
    write_table_csv(&dir.join("macro.csv"), &macro_rows)?;
    write_table_csv(&dir.join("per_class.csv"), &class_rows)?;
    write_records_csv(&dir.join("records.csv"), &report.records)?;
    if config.accuracy {
        write_accuracy_csv(&dir.join("accuracy.csv"), &report.accuracy)?;
    }
    for r in &macro_rows {
        println!(
            "{:<14} {:<10} {:<9} RMA {:.4} ± {:.4}  IoU {:.4} ± {:.4}",
            r.posterior.name(),
            r.operator.name(),
            r.summary.name(),
            r.rma_mean,
            r.rma_std,
            r.iou_mean,
            r.iou_std
        );
    }
    write_json(
        &dir.join(RUN_FILE),
        &EvalRun {
            seed: cfg.seed,
            dataset_seed: manifest.dataset_seed,
            splits: splits.iter().map(|s| s.name.clone()).collect(),
            n_records: report.records.len(),
            n_missing: report.records.iter().filter(|r| r.rma.is_none()).count(),
            config,
        },
    )
}

pub fn report(ctx: &Context, dir: Option<PathBuf>) -> Result<()> {
    let src = dir.unwrap_or_else(|| ctx.dir("explain"));
    let mut bundles: Vec<PathBuf> = fs::read_dir(&src)
        .with_context(|| format!("reading {}", src.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == BUNDLE_EXT))
        .collect();
    bundles.sort();
    if bundles.is_empty() {
        bail!("no .{BUNDLE_EXT} results bundles in {} (run `pqx explain` first)", src.display());
    }
    let out = ctx.stage("report")?;
    for path in &bundles {
        let bundle = read_bundle(path)?;
        let stem = path.file_stem().expect("bundle file name").to_string_lossy();
        let svg = out.join(format!("{stem}.svg"));
        write_svg(&svg, &bundle)?;
        println!("{}", svg.display());
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct IngestRun {
    split: String,
    sources: Vec<(String, String)>,
    sha256: String,
}

pub fn ingest(ctx: &Context, inputs: &[PathBuf]) -> Result<()> {
    let cfg = &ctx.cfg;
    let name = &cfg.ingest_name;
    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
        bail!(UsageError(format!("ingest name `{name}` must be non-empty and use only letters, digits, `_` or `-`")));
    }
    let mut xs = Vec::with_capacity(inputs.len());
    let mut sources = Vec::with_capacity(inputs.len());
    for path in inputs {
        let rec = read_recording(path, &cfg.ingest)?;
        let x = ingest_recording(&rec, &cfg.ingest, &cfg.signal)
            .with_context(|| format!("ingesting {}", path.display()))?;
        sources.push((path.display().to_string(), sha256_file(path)?));
        xs.push(x);
    }
    let split = external_split(name, &cfg.signal, xs);
    let dir = ctx.stage("ingest")?;
    let path = dir.join(format!("{name}.{SPLIT_EXT}"));
    write_split(&path, &split)?;
    println!("wrote {} external records to {}", split.len(), path.display());
    write_json(&dir.join(RUN_FILE), &IngestRun { split: name.clone(), sources, sha256: sha256_file(&path)? })
}

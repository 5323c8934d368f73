//! Per-instance results bundles.
//!
//! A bundle file starts with `PQXB`, a format version and a length-prefixed
//! JSON metadata record, followed by little-endian `f64` blocks: the input
//! waveform, the ground-truth mask (one byte per sample, if present), the
//! signed raw rows, the relevance rows and each requested summary map in
//! metadata order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attribution::{OperatorConfig, OperatorKind};
use crate::error::{Error, Result};
use crate::explain::{relevance_sets, summary_map, ExplanationSamples, RowProvenance, SummaryConfig, SummaryKind};
use crate::posterior::PosteriorKind;

const MAGIC: &[u8; 4] = b"PQXB";
pub const BUNDLE_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub split: String,
    pub instance: u32,
    /// Class name of the record, or `external`.
    pub label: String,
    pub posterior: PosteriorKind,
    pub operator: OperatorKind,
    pub samples: usize,
    /// Attributed class index.
    pub target_class: usize,
    pub seed: u64,
    pub provenance: Vec<RowProvenance>,
    pub operator_config: OperatorConfig,
    pub summary_config: SummaryConfig,
    /// Names of the stored summary maps, in block order.
    pub summaries: Vec<String>,
    /// Union-type and intersection-type relevance sets.
    pub union_set: Vec<usize>,
    pub intersection_set: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResultsBundle {
    pub meta: BundleMeta,
    pub x: Vec<f64>,
    pub mask: Option<Vec<bool>>,
    pub raw: Vec<Vec<f64>>,
    pub rows: Vec<Vec<f64>>,
    /// Summary maps in `meta.summaries` order; `None` where undefined.
    pub maps: Vec<Option<Vec<f64>>>,
}

/// Where an explained instance came from.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceInfo<'a> {
    pub split: &'a str,
    pub instance: u32,
    pub label: &'a str,
    pub x: &'a [f64],
    pub mask: Option<Vec<bool>>,
    pub seed: u64,
}

impl ResultsBundle {
    /// Evaluates the requested summaries on `e`. Undefined summaries
    /// (e.g. variance from a single row) are kept as absent maps.
    pub fn build(
        info: InstanceInfo<'_>,
        e: &ExplanationSamples,
        summaries: &[SummaryKind],
        operator_config: &OperatorConfig,
        summary_config: &SummaryConfig,
    ) -> Result<Self> {
        let mut maps = Vec::with_capacity(summaries.len());
        for &k in summaries {
            maps.push(match summary_map(e, k, summary_config) {
                Ok(m) => Some(m),
                Err(Error::Undefined(_)) => None,
                Err(err) => return Err(err),
            });
        }
        let (union_set, intersection_set) = relevance_sets(e, summary_config)?;
        Ok(ResultsBundle {
            meta: BundleMeta {
                split: info.split.to_string(),
                instance: info.instance,
                label: info.label.to_string(),
                posterior: e.posterior,
                operator: e.operator,
                samples: e.n_samples(),
                target_class: e.class,
                seed: info.seed,
                provenance: e.provenance.clone(),
                operator_config: *operator_config,
                summary_config: summary_config.clone(),
                summaries: summaries.iter().map(|k| k.name()).collect(),
                union_set,
                intersection_set,
            },
            x: info.x.to_vec(),
            mask: info.mask,
            raw: e.raw.clone(),
            rows: e.rows.clone(),
            maps,
        })
    }

    pub fn n_features(&self) -> usize {
        self.x.len()
    }

    /// The stored map for a summary, if it was requested and defined.
    pub fn map(&self, kind: SummaryKind) -> Option<&[f64]> {
        let name = kind.name();
        let i = self.meta.summaries.iter().position(|s| *s == name)?;
        self.maps[i].as_deref()
    }
}

fn put_f64s(w: &mut impl Write, vs: &[f64]) -> std::io::Result<()> {
    vs.iter().try_for_each(|v| w.write_all(&v.to_le_bytes()))
}

pub fn write_bundle(path: &Path, b: &ResultsBundle) -> Result<()> {
    let meta = serde_json::to_vec(&b.meta).map_err(|e| Error::format(path, e.to_string()))?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut body = || -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&BUNDLE_FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(meta.len() as u32).to_le_bytes())?;
        w.write_all(&meta)?;
        w.write_all(&(b.x.len() as u32).to_le_bytes())?;
        w.write_all(&(b.rows.len() as u32).to_le_bytes())?;
        put_f64s(&mut w, &b.x)?;
        match &b.mask {
            Some(m) => {
                w.write_all(&[1])?;
                w.write_all(&m.iter().map(|&v| v as u8).collect::<Vec<_>>())?;
            }
            None => w.write_all(&[0])?,
        }
        for row in b.raw.iter().chain(&b.rows) {
            put_f64s(&mut w, row)?;
        }
        for map in &b.maps {
            match map {
                Some(m) => {
                    w.write_all(&[1])?;
                    put_f64s(&mut w, m)?;
                }
                None => w.write_all(&[0])?,
            }
        }
        w.flush()
    };
    body().map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    inner: BufReader<File>,
    path: &'a Path,
}

impl Cursor<'_> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::format(self.path, "truncated bundle"),
            _ => Error::io(self.path, e),
        })?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().expect("4 bytes")))
    }

    fn flag(&mut self) -> Result<bool> {
        match self.bytes(1)?[0] {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(Error::format(self.path, format!("invalid presence flag {v}"))),
        }
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(self.bytes(8 * n)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

pub fn read_bundle(path: &Path) -> Result<ResultsBundle> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = Cursor { inner: BufReader::new(file), path };
    if r.bytes(4)? != MAGIC {
        return Err(Error::format(path, "not a results bundle"));
    }
    let version = r.u32()?;
    if version != BUNDLE_FORMAT_VERSION {
        return Err(Error::format(path, format!("unsupported bundle version {version}")));
    }
    let meta_len = r.u32()? as usize;
    let meta: BundleMeta =
        serde_json::from_slice(&r.bytes(meta_len)?).map_err(|e| Error::format(path, e.to_string()))?;
    let n = r.u32()? as usize;
    let s = r.u32()? as usize;
    let x = r.f64s(n)?;
    let mask = if r.flag()? { Some(r.bytes(n)?.into_iter().map(|b| b != 0).collect()) } else { None };
    let raw = (0..s).map(|_| r.f64s(n)).collect::<Result<Vec<_>>>()?;
    let rows = (0..s).map(|_| r.f64s(n)).collect::<Result<Vec<_>>>()?;
    let mut maps = Vec::with_capacity(meta.summaries.len());
    for _ in 0..meta.summaries.len() {
        maps.push(if r.flag()? { Some(r.f64s(n)?) } else { None });
    }
    let mut rest = [0u8; 1];
    if r.inner.read(&mut rest).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::format(path, "trailing bytes after last block"));
    }
    Ok(ResultsBundle { meta, x, mask, raw, rows, maps })
}

#[derive(Serialize)]
struct JsonMap<'a> {
    kind: &'a str,
    name: String,
    values: Option<&'a [f64]>,
}

/// JSON-lines mirror: the metadata line, then one line per row and map.
pub fn export_bundle_jsonl(path: &Path, b: &ResultsBundle) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let fail = |e: serde_json::Error| Error::format(path, e.to_string());
    let mut lines = vec![serde_json::to_string(&b.meta).map_err(fail)?];
    for (i, row) in b.raw.iter().enumerate() {
        lines.push(
            serde_json::to_string(&JsonMap { kind: "raw", name: i.to_string(), values: Some(row) }).map_err(fail)?,
        );
    }
    for (i, row) in b.rows.iter().enumerate() {
        lines.push(
            serde_json::to_string(&JsonMap { kind: "relevance", name: i.to_string(), values: Some(row) })
                .map_err(fail)?,
        );
    }
    for (name, map) in b.meta.summaries.iter().zip(&b.maps) {
        lines.push(
            serde_json::to_string(&JsonMap { kind: "summary", name: name.clone(), values: map.as_deref() })
                .map_err(fail)?,
        );
    }
    for l in lines {
        writeln!(w, "{l}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `n,r` rows for one map.
pub fn write_map_csv(path: &Path, values: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let fail = |e: csv::Error| Error::format(path, e.to_string());
    w.write_record(["n", "r"]).map_err(fail)?;
    for (n, v) in values.iter().enumerate() {
        w.write_record([n.to_string(), format!("{v:e}")]).map_err(fail)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

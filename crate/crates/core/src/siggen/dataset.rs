use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::disturbance::{DisturbanceParams, PqdClass, N_CLASSES, PARAM_WIDTH};
use super::mask::GroundTruthMask;
use super::signal::{reference_signal, SignalConfig};
use crate::error::{Error, Result};
use crate::rng;

const MAGIC: &[u8; 4] = b"PQXD";
pub const DATASET_FORMAT_VERSION: u32 = 1;
/// Class id stored for externally ingested records without a label.
pub const EXTERNAL_CLASS_ID: u16 = u16::MAX;

/// One voltage record with the addends it was built from.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    /// Observed (noisy) samples.
    pub x: Vec<f64>,
    /// Undisturbed reference.
    pub x0: Vec<f64>,
    /// Disturbance component.
    pub d: Vec<f64>,
    pub noise: Vec<f64>,
    /// `None` for unlabelled external recordings.
    pub class: Option<PqdClass>,
    pub params: DisturbanceParams,
    pub split_id: u32,
    pub index: u32,
}

impl Waveform {
    pub fn ground_truth_mask(&self, epsilon: f64) -> Result<GroundTruthMask> {
        if self.class.is_none() {
            return Err(Error::Undefined("external records carry no ground truth"));
        }
        GroundTruthMask::from_disturbance(&self.d, epsilon)
    }

    /// Label index, or an error for unlabelled records.
    pub fn label(&self) -> Result<usize> {
        self.class.map(PqdClass::index).ok_or(Error::Undefined("record has no label"))
    }
}

/// Builds `x = x0 + d + noise` for the given class and parameters.
pub fn synthesize(
    class: PqdClass,
    params: &DisturbanceParams,
    config: &SignalConfig,
    rng: &mut impl Rng,
) -> Result<Waveform> {
    config.validate()?;
    params.validate(class, config)?;
    let x0 = reference_signal(config, params.phase);
    let d = params.disturbance(config, &x0);
    let sigma = config.noise_std();
    let noise: Vec<f64> = (0..config.n_samples).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect();
    let x = x0.iter().zip(&d).zip(&noise).map(|((a, b), c)| a + b + c).collect();
    Ok(Waveform { x, x0, d, noise, class: Some(class), params: params.clone(), split_id: 0, index: 0 })
}

/// A named split with per-class record counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub name: String,
    pub split_id: u32,
    pub class_counts: [usize; N_CLASSES],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetPlan {
    pub splits: Vec<SplitSpec>,
}

impl DatasetPlan {
    /// Training split, validation split and `n_test` test splits.
    ///
    /// Test splits always carry `test_per_class` instances of every
    /// disturbance class; `test_normal` normal records are added for the
    /// accuracy figures.
    pub fn standard(
        train_per_class: usize,
        val_per_class: usize,
        n_test: usize,
        test_per_class: usize,
        test_normal: usize,
    ) -> Self {
        let mut splits = vec![
            SplitSpec { name: "train".into(), split_id: 0, class_counts: [train_per_class; N_CLASSES] },
            SplitSpec { name: "val".into(), split_id: 1, class_counts: [val_per_class; N_CLASSES] },
        ];
        for k in 0..n_test {
            let mut counts = [test_per_class; N_CLASSES];
            counts[PqdClass::Normal.index()] = test_normal;
            splits.push(SplitSpec { name: format!("test{k}"), split_id: 2 + k as u32, class_counts: counts });
        }
        DatasetPlan { splits }
    }

    pub fn validate(&self) -> Result<()> {
        if self.splits.is_empty() {
            return Err(Error::Config("dataset plan has no splits".into()));
        }
        for s in &self.splits {
            if s.class_counts.iter().sum::<usize>() == 0 {
                return Err(Error::Config(format!("split `{}` is empty", s.name)));
            }
        }
        Ok(())
    }
}

impl Default for DatasetPlan {
    fn default() -> Self {
        DatasetPlan::standard(1000, 100, 5, 100, 100)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub name: String,
    pub split_id: u32,
    pub config: SignalConfig,
    pub records: Vec<Waveform>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn class_histogram(&self) -> [usize; N_CLASSES] {
        let mut h = [0; N_CLASSES];
        for r in &self.records {
            if let Some(c) = r.class {
                h[c.index()] += 1;
            }
        }
        h
    }

    /// Rounds every stored value through `f32`, i.e. what a reload from disk yields.
    pub fn quantize(&mut self) {
        let q = |v: &mut Vec<f64>| v.iter_mut().for_each(|x| *x = *x as f32 as f64);
        for r in &mut self.records {
            q(&mut r.x);
            q(&mut r.x0);
            q(&mut r.d);
            for (i, n) in r.noise.iter_mut().enumerate() {
                *n = r.x[i] - (r.x0[i] + r.d[i]);
            }
            let class = r.class;
            let rec: Vec<f64> = r.params.to_record().iter().map(|&v| v as f32 as f64).collect();
            if let Some(class) = class {
                r.params = DisturbanceParams::from_record(class, &rec);
            }
        }
    }
}

/// Generates every split of `plan`, deterministically from `seed`.
///
/// Records are ordered class-major within a split. Each record draws its
/// parameters and noise from its own child stream, so generation is
/// parallel yet reproducible. Values are rounded to `f32`, the on-disk
/// precision, before returning.
pub fn generate_dataset(config: &SignalConfig, plan: &DatasetPlan, seed: u64) -> Result<Vec<Split>> {
    config.validate()?;
    plan.validate()?;
    plan.splits
        .iter()
        .map(|spec| {
            let jobs: Vec<(PqdClass, usize)> = PqdClass::ALL
                .iter()
                .flat_map(|&c| std::iter::repeat_n(c, spec.class_counts[c.index()]))
                .enumerate()
                .map(|(i, c)| (c, i))
                .collect();
            let records = jobs
                .par_iter()
                .map(|&(class, i)| {
                    let mut r = rng::child(seed, &[spec.split_id as u64, i as u64]);
                    let params = DisturbanceParams::sample(class, config, &mut r);
                    let mut w = synthesize(class, &params, config, &mut r)?;
                    w.split_id = spec.split_id;
                    w.index = i as u32;
                    Ok(w)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut split = Split { name: spec.name.clone(), split_id: spec.split_id, config: config.clone(), records };
            split.quantize();
            Ok(split)
        })
        .collect()
}

fn put_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_f32s(w: &mut impl Write, vs: &[f64]) -> std::io::Result<()> {
    for &v in vs {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

/// Writes a split in the little-endian binary dataset format.
pub fn write_split(path: &Path, split: &Split) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let cfg = &split.config;
    let mut body = || -> std::io::Result<()> {
        let mut w = &mut w;
        w.write_all(MAGIC)?;
        put_u32(&mut w, DATASET_FORMAT_VERSION)?;
        put_u32(&mut w, cfg.n_samples as u32)?;
        put_u32(&mut w, split.records.len() as u32)?;
        put_u32(&mut w, cfg.cycles as u32)?;
        for v in [cfg.amplitude, cfg.snr_db, cfg.epsilon] {
            w.write_all(&v.to_le_bytes())?;
        }
        put_u32(&mut w, PARAM_WIDTH as u32)?;
        put_u32(&mut w, split.split_id)?;
        let name = split.name.as_bytes();
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name)?;
        for r in &split.records {
            let id = r.class.map_or(EXTERNAL_CLASS_ID, PqdClass::id);
            w.write_all(&id.to_le_bytes())?;
            put_f32s(&mut w, &r.params.to_record())?;
            put_f32s(&mut w, &r.x)?;
            put_f32s(&mut w, &r.x0)?;
            put_f32s(&mut w, &r.d)?;
        }
        w.flush()
    };
    body().map_err(|e| Error::io(path, e))
}

struct Reader<'a, R> {
    inner: R,
    path: &'a Path,
}

impl<R: Read> Reader<'_, R> {
    fn bytes<const K: usize>(&mut self) -> Result<[u8; K]> {
        let mut b = [0u8; K];
        self.inner.read_exact(&mut b).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::format(self.path, "truncated file")
            } else {
                Error::io(self.path, e)
            }
        })?;
        Ok(b)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| Ok(f32::from_le_bytes(self.bytes()?) as f64)).collect()
    }
}

/// Reads a split written by [`write_split`].
pub fn read_split(path: &Path) -> Result<Split> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { inner: BufReader::new(file), path };
    if &r.bytes::<4>()? != MAGIC {
        return Err(Error::format(path, "not a dataset file"));
    }
    let version = r.u32()?;
    if version != DATASET_FORMAT_VERSION {
        return Err(Error::format(path, format!("unsupported format version {version}")));
    }
    let n_samples = r.u32()? as usize;
    let n_records = r.u32()? as usize;
    let cycles = r.u32()? as usize;
    let scalars = [f64::from_le_bytes(r.bytes()?), f64::from_le_bytes(r.bytes()?), f64::from_le_bytes(r.bytes()?)];
    let config = SignalConfig { n_samples, cycles, amplitude: scalars[0], snr_db: scalars[1], epsilon: scalars[2] };
    config.validate().map_err(|e| Error::format(path, e.to_string()))?;
    let width = r.u32()? as usize;
    if width != PARAM_WIDTH {
        return Err(Error::format(path, format!("parameter width {width}, expected {PARAM_WIDTH}")));
    }
    let split_id = r.u32()?;
    let name_len = r.u16()? as usize;
    let mut name = vec![0u8; name_len];
    r.inner.read_exact(&mut name).map_err(|e| Error::io(path, e))?;
    let name = String::from_utf8(name).map_err(|_| Error::format(path, "split name is not UTF-8"))?;
    let mut records = Vec::with_capacity(n_records);
    for index in 0..n_records {
        let id = r.u16()?;
        let class = if id == EXTERNAL_CLASS_ID {
            None
        } else {
            Some(PqdClass::from_id(id).map_err(|e| Error::format(path, e.to_string()))?)
        };
        let rec = r.f32s(PARAM_WIDTH)?;
        let params = match class {
            Some(c) => DisturbanceParams::from_record(c, &rec),
            None => DisturbanceParams { phase: rec[0], components: vec![] },
        };
        let x = r.f32s(n_samples)?;
        let x0 = r.f32s(n_samples)?;
        let d = r.f32s(n_samples)?;
        let noise = (0..n_samples).map(|i| x[i] - (x0[i] + d[i])).collect();
        records.push(Waveform { x, x0, d, noise, class, params, split_id, index: index as u32 });
    }
    let mut rest = [0u8; 1];
    if r.inner.read(&mut rest).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::format(path, "trailing bytes after last record"));
    }
    Ok(Split { name, split_id, config, records })
}

#[derive(Serialize)]
struct JsonRecord<'a> {
    split: &'a str,
    index: u32,
    class_id: u16,
    class: &'a str,
    params: Vec<f32>,
    x: Vec<f32>,
    x0: Vec<f32>,
    d: Vec<f32>,
}

/// JSON-lines mirror of the binary format, one record per line.
pub fn export_jsonl(path: &Path, split: &Split) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let f32s = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<_>>();
    for r in &split.records {
        let rec = JsonRecord {
            split: &split.name,
            index: r.index,
            class_id: r.class.map_or(EXTERNAL_CLASS_ID, PqdClass::id),
            class: r.class.map_or("external", PqdClass::name),
            params: f32s(&r.params.to_record()),
            x: f32s(&r.x),
            x0: f32s(&r.x0),
            d: f32s(&r.d),
        };
        let line = serde_json::to_string(&rec).map_err(|e| Error::format(path, e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

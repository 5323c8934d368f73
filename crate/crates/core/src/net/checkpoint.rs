use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::arch::{ArchConfig, BnRunning, NetworkParams};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"PQXC";
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Writes θ and the running statistics as little-endian `f32`.
pub fn save_checkpoint(path: &Path, params: &NetworkParams) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let a = &params.arch;
    let running = params.running.flatten();
    let mut head = Vec::new();
    head.extend_from_slice(MAGIC);
    head.extend_from_slice(&CHECKPOINT_FORMAT_VERSION.to_le_bytes());
    head.extend_from_slice(&a.hash().to_le_bytes());
    head.extend_from_slice(&(params.param_count() as u32).to_le_bytes());
    for v in [
        a.input_len,
        a.channels[0],
        a.channels[1],
        a.channels[2],
        a.channels[3],
        a.hidden,
        a.n_classes,
        a.kernel,
        a.pool,
    ] {
        head.extend_from_slice(&(v as u32).to_le_bytes());
    }
    head.extend_from_slice(&(running.len() as u32).to_le_bytes());
    let mut body = || -> std::io::Result<()> {
        w.write_all(&head)?;
        for v in params.theta.iter().chain(&running) {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
        w.flush()
    };
    body().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<NetworkParams> {
    let mut bytes = Vec::new();
    File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(|e| Error::io(path, e))?;
    let bad = |why: &str| Error::format(path, why.to_string());
    let u32_at = |off: usize| -> Result<u32> {
        bytes
            .get(off..off + 4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
            .ok_or_else(|| bad("truncated header"))
    };
    if bytes.get(..4) != Some(MAGIC.as_slice()) {
        return Err(bad("not a checkpoint"));
    }
    let version = u32_at(4)?;
    if version != CHECKPOINT_FORMAT_VERSION {
        return Err(bad(&format!("unsupported checkpoint version {version}")));
    }
    let hash =
        u64::from_le_bytes(bytes.get(8..16).ok_or_else(|| bad("truncated header"))?.try_into().expect("8 bytes"));
    let count = u32_at(16)? as usize;
    let f: Vec<usize> = (0..9).map(|i| u32_at(20 + 4 * i).map(|v| v as usize)).collect::<Result<_>>()?;
    let arch = ArchConfig {
        input_len: f[0],
        channels: [f[1], f[2], f[3], f[4]],
        hidden: f[5],
        n_classes: f[6],
        kernel: f[7],
        pool: f[8],
    };
    arch.validate().map_err(|e| bad(&e.to_string()))?;
    if arch.hash() != hash {
        return Err(bad("architecture hash mismatch"));
    }
    let n_running = u32_at(56)? as usize;
    let body = &bytes[60..];
    if body.len() != 4 * (count + n_running) {
        return Err(bad("payload length does not match header"));
    }
    let vals: Vec<f64> =
        body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect();
    let running = BnRunning::unflatten(&arch, &vals[count..]).map_err(|e| bad(&e.to_string()))?;
    NetworkParams::from_theta(&arch, vals[..count].to_vec(), running).map_err(|e| bad(&e.to_string()))
}

/// θ and running statistics rounded through `f32`, i.e. what a checkpoint reload yields.
pub fn quantize_params(params: &NetworkParams) -> NetworkParams {
    let mut p = params.clone();
    p.theta.iter_mut().for_each(|v| *v = *v as f32 as f64);
    for v in p.running.mean.iter_mut().chain(p.running.var.iter_mut()) {
        v.iter_mut().for_each(|x| *x = *x as f32 as f64);
    }
    p
}

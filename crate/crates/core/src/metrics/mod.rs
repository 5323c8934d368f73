//! Localisation scores against ground-truth disturbance masks.

mod eval;

pub use eval::{
    aggregate, evaluate, target_class, write_accuracy_csv, write_records_csv, write_table_csv, AccuracyRow, EvalCell,
    EvalConfig, EvalRecord, EvalReport, TableRow, TargetMode, MACRO_GROUP,
};

use crate::error::{Error, Result};
use crate::siggen::GroundTruthMask;

/// Fraction of relevance mass inside the mask; `None` when `Σr = 0` or the mask is empty.
pub fn rma(r: &[f64], mask: &GroundTruthMask) -> Option<f64> {
    if mask.is_empty() {
        return None;
    }
    let total: f64 = r.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    let inside: f64 = mask.indices.iter().map(|&n| r[n]).sum();
    Some(inside / total)
}

/// The `l` largest entries' indices in ascending order; ties go to the lower index.
pub fn top_l_binarize(r: &[f64], l: usize) -> Result<Vec<usize>> {
    if l > r.len() {
        return Err(Error::Config(format!("top-L with L = {l} exceeds map length {}", r.len())));
    }
    let mut order: Vec<usize> = (0..r.len()).collect();
    order.sort_by(|&a, &b| r[b].total_cmp(&r[a]).then(a.cmp(&b)));
    order.truncate(l);
    order.sort_unstable();
    Ok(order)
}

/// `|∩| / |∪|` of the top-L set and the mask; `None` for an empty mask.
pub fn iou(r: &[f64], mask: &GroundTruthMask) -> Option<f64> {
    let l = mask.len();
    if l == 0 {
        return None;
    }
    let top = top_l_binarize(r, l).ok()?;
    let inter = top.iter().filter(|&&n| mask.contains(n)).count();
    Some(inter as f64 / (2 * l - inter) as f64)
}

/// Rescales to `[0, 1]`; a constant map becomes all zeros.
pub fn minmax_normalize(r: &[f64]) -> Vec<f64> {
    let lo = r.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; r.len()];
    }
    r.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

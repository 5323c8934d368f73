//! Brute-force references for the localisation metrics and UA-RAO summaries.
//!
//! Values are dyadic rationals (k/8) so every sum is exact in any order, and
//! levels are rationals k/20 or j/S so threshold comparisons can be done in
//! integers.

use pqx_core::attribution::OperatorKind;
use pqx_core::explain::{agreement_set, quantile_map, ExplanationSamples};
use pqx_core::metrics::{iou, rma, top_l_binarize};
use pqx_core::posterior::PosteriorKind;
use pqx_core::siggen::GroundTruthMask;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const INSTANCES: usize = 1000;

fn dyadic(rng: &mut ChaCha8Rng, n: usize, max_k: u32) -> Vec<f64> {
    // ties are common on purpose: max_k is small relative to n
    (0..n).map(|_| rng.random_range(0..=max_k) as f64 / 8.0).collect()
}

fn random_mask(rng: &mut ChaCha8Rng, n: usize) -> Vec<bool> {
    let p = rng.random_range(0.0..1.0);
    (0..n).map(|_| rng.random_bool(p)).collect()
}

/// Index i is in the top-L set iff fewer than L indices beat it, where j beats
/// i when r[j] > r[i], or r[j] = r[i] and j < i.
fn brute_top_l(r: &[f64], l: usize) -> Vec<usize> {
    (0..r.len()).filter(|&i| (0..r.len()).filter(|&j| r[j] > r[i] || (r[j] == r[i] && j < i)).count() < l).collect()
}

fn brute_rma(r: &[f64], mask: &[bool]) -> Option<f64> {
    let mut inside = 0.0;
    let mut total = 0.0;
    for n in (0..r.len()).rev() {
        total += r[n];
        if mask[n] {
            inside += r[n];
        }
    }
    (mask.iter().any(|&m| m) && total > 0.0).then(|| inside / total)
}

fn brute_iou(r: &[f64], mask: &[bool]) -> Option<f64> {
    let l = mask.iter().filter(|&&m| m).count();
    if l == 0 {
        return None;
    }
    let top = brute_top_l(r, l);
    let mut in_top = vec![false; r.len()];
    top.iter().for_each(|&i| in_top[i] = true);
    let inter = (0..r.len()).filter(|&n| in_top[n] && mask[n]).count();
    let union = (0..r.len()).filter(|&n| in_top[n] || mask[n]).count();
    Some(inter as f64 / union as f64)
}

/// Smallest column value v with 20·#{s : x_s ≤ v} ≥ k·S, i.e. the empirical
/// inverse CDF at α = k/20.
fn brute_quantile(col: &[f64], k: usize) -> f64 {
    let s = col.len();
    col.iter().copied().filter(|&v| 20 * col.iter().filter(|&&x| x <= v).count() >= k * s).fold(f64::INFINITY, f64::min)
}

/// Positions where `den`·hits ≥ `num`·S, i.e. the fraction of rows above δ is at least num/den.
fn brute_agreement(rows: &[Vec<f64>], delta: f64, num: usize, den: usize) -> Vec<usize> {
    let s = rows.len();
    (0..rows[0].len()).filter(|&n| den * rows.iter().filter(|r| r[n] > delta).count() >= num * s).collect()
}

fn samples(rows: Vec<Vec<f64>>) -> ExplanationSamples {
    ExplanationSamples::from_rows(rows, OperatorKind::Occlusion, PosteriorKind::DeepEnsemble, 0).expect("valid rows")
}

pub fn check_metric_oracles() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0A11);
    let mut undefined = 0;
    for case in 0..INSTANCES {
        let n = rng.random_range(1..=16);
        let r = dyadic(&mut rng, n, if case % 3 == 0 { 3 } else { 40 });
        let mask = random_mask(&mut rng, n);
        let gt = GroundTruthMask::from_mask(mask.clone());
        let (a, b) = (rma(&r, &gt), brute_rma(&r, &mask));
        if a != b {
            return Err(format!("case {case}: rma {a:?} vs brute force {b:?} for r = {r:?}, mask = {mask:?}"));
        }
        undefined += a.is_none() as usize;
        let l = rng.random_range(0..=n);
        let top = top_l_binarize(&r, l).map_err(|e| e.to_string())?;
        if top != brute_top_l(&r, l) {
            return Err(format!("case {case}: top-{l} {top:?} vs brute force {:?} for {r:?}", brute_top_l(&r, l)));
        }
        let (a, b) = (iou(&r, &gt), brute_iou(&r, &mask));
        if a != b {
            return Err(format!("case {case}: iou {a:?} vs brute force {b:?}"));
        }
    }
    Ok(format!("{INSTANCES} instances of RMA, top-L and IoU agree exactly ({undefined} undefined on both sides)"))
}

pub fn check_summary_oracles() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0A12);
    for case in 0..INSTANCES {
        let n = rng.random_range(1..=16);
        let s = rng.random_range(1..=6);
        let rows: Vec<Vec<f64>> = (0..s).map(|_| dyadic(&mut rng, n, if case % 2 == 0 { 4 } else { 40 })).collect();
        let e = samples(rows.clone());
        let k = rng.random_range(1..20usize);
        let q = quantile_map(&e, k as f64 / 20.0).map_err(|e| e.to_string())?;
        for col in 0..n {
            let column: Vec<f64> = rows.iter().map(|r| r[col]).collect();
            let b = brute_quantile(&column, k);
            if q[col] != b {
                return Err(format!(
                    "case {case}: q{k}/20 column {col} = {} vs brute force {b} for {column:?}",
                    q[col]
                ));
            }
        }
        let delta = rng.random_range(1..=40) as f64 / 8.0 - 1.0 / 16.0;
        let (num, den) =
            if rng.random_bool(0.5) { (rng.random_range(0..=s), s) } else { (rng.random_range(0..=20), 20) };
        let got = agreement_set(&e, delta, num as f64 / den as f64).map_err(|e| e.to_string())?;
        let want = brute_agreement(&rows, delta, num, den);
        if got != want {
            return Err(format!("case {case}: agreement set δ={delta} η={num}/{den}: {got:?} vs brute force {want:?}"));
        }
    }
    Ok(format!("{INSTANCES} instances of quantile and agreement-set maps agree exactly (N ≤ 16, S ≤ 6)"))
}

//! Monte Carlo accessibility, the Wasserstein bound and gradient correctness.

use pqx_core::attribution::OperatorKind;
use pqx_core::explain::{gaussian_w1, mean_map, variance_map, AffineGaussianToy, ExplanationSamples};
use pqx_core::net::{batch_gradient, ArchConfig, GradMode, NetworkParams};
use pqx_core::posterior::PosteriorKind;
use pqx_core::rng;
use rand::Rng;
use statrs::distribution::{Continuous, Normal};

pub const MC_DRAWS: usize = 10_000;

fn random_toy(r: &mut impl Rng, n: usize, d: usize) -> AffineGaussianToy {
    AffineGaussianToy {
        a: (0..n).map(|_| (0..d).map(|_| r.random_range(-2.0..2.0)).collect()).collect(),
        b: (0..n).map(|_| r.random_range(-1.0..1.0)).collect(),
        mu: (0..d).map(|_| r.random_range(-1.0..1.0)).collect(),
        sigma2: (0..d).map(|_| r.random_range(0.05..1.0)).collect(),
    }
}

/// Empirical mean and variance maps over `MC_DRAWS` pushed-forward draws
/// against the closed-form Gaussian moments.
pub fn check_monte_carlo_accessibility() -> Result<String, String> {
    let mut r = rng::seeded(0x9401);
    let toy = random_toy(&mut r, 24, 6);
    let rows: Vec<Vec<f64>> = (0..MC_DRAWS).map(|_| toy.draw(&mut r)).collect();
    // affine pushforwards are signed, so the rows bypass the nonnegativity check
    let e = ExplanationSamples {
        raw: rows.clone(),
        rows,
        provenance: Vec::new(),
        operator: OperatorKind::Lime,
        posterior: PosteriorKind::LaplaceDiag,
        class: 0,
    };
    let (mean, var) = (mean_map(&e), variance_map(&e).map_err(|e| e.to_string())?);
    let (m0, v0) = (toy.closed_form_mean(), toy.closed_form_variance());
    let mut worst_z: f64 = 0.0;
    let mut worst_rel: f64 = 0.0;
    for n in 0..m0.len() {
        let se = (v0[n] / MC_DRAWS as f64).sqrt();
        let z = (mean[n] - m0[n]).abs() / se;
        let rel = (var[n] - v0[n]).abs() / v0[n];
        worst_z = worst_z.max(z);
        worst_rel = worst_rel.max(rel);
        if z > 4.0 {
            return Err(format!("column {n}: mean off by {z:.2} standard errors"));
        }
        if rel > 0.10 {
            return Err(format!("column {n}: variance off by {:.1}%", 100.0 * rel));
        }
    }
    Ok(format!(
        "S = {MC_DRAWS}, {} columns: worst mean error {worst_z:.2} SE (limit 4), worst variance error {:.2}% (limit 10%)",
        m0.len(),
        100.0 * worst_rel
    ))
}

/// `∫ f(θ) N(θ; m, s²) dθ` by composite Simpson over ±12 s.
fn expect_under(m: f64, s: f64, f: impl Fn(f64) -> f64) -> f64 {
    let pdf = Normal::new(m, s).expect("positive scale");
    let (lo, hi, k) = (m - 12.0 * s, m + 12.0 * s, 20_000);
    let h = (hi - lo) / k as f64;
    let g = |t: f64| f(t) * pdf.pdf(t);
    let mut acc = g(lo) + g(hi);
    for i in 1..k {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * g(lo + i as f64 * h);
    }
    acc * h / 3.0
}

/// For random pairs of scalar Gaussians pushed through τ(θ) = aθ + b, the
/// measured gap in E[γ(τ)] never exceeds |a|·W₁.
///
/// When the two quantile functions do not cross the bound is attained, and both
/// sides are then equal up to quadrature roundoff; `ROUNDOFF` absorbs that.
pub fn check_wasserstein_bound() -> Result<String, String> {
    let mut r = rng::seeded(0x9402);
    let mut min_slack = f64::INFINITY;
    for pair in 0..10 {
        let (m1, s1) = (r.random_range(-2.0..2.0), r.random_range(0.1..2.0));
        let (m2, s2) = (r.random_range(-2.0..2.0), r.random_range(0.1..2.0));
        let (a, b) = (r.random_range(-3.0..3.0), r.random_range(-1.0..1.0));
        let tau = |t: f64| a * t + b;
        let gap = (expect_under(m1, s1, tau) - expect_under(m2, s2, tau)).abs();
        let bound = a.abs() * gaussian_w1(m1, s1, m2, s2);
        if gap > bound * (1.0 + ROUNDOFF) {
            return Err(format!("pair {pair}: |ΔE| = {gap} exceeds L·W₁ = {bound}"));
        }
        min_slack = min_slack.min((bound - gap) / bound);
    }
    Ok(format!("10 pairs: |E γ − E' γ| ≤ L·W₁ in every case (smallest relative slack {min_slack:.3e})"))
}

const ROUNDOFF: f64 = 1e-12;

pub const GRAD_COORDS: usize = 120;

/// A reduced network with non-trivial BN affine parameters and statistics.
///
/// Biases are randomised too: with zero biases a convolution whose input
/// window is entirely zero (dead upstream ReLUs) has a pre-activation of
/// exactly 0, which puts the loss on a ReLU kink.
fn reduced_network(seed: u64) -> (NetworkParams, Vec<Vec<f64>>, Vec<usize>) {
    let arch = ArchConfig::tiny();
    let mut r = rng::seeded(seed);
    let mut p = NetworkParams::init(&arch, &mut r);
    let lay = p.layout.clone();
    for range in [lay.conv1_b, lay.conv2_b, lay.conv3_b, lay.conv4_b, lay.fc1_b, lay.fc2_b] {
        for i in range {
            p.theta[i] = r.random_range(-0.2..0.2);
        }
    }
    for range in [&p.layout.bn1_gamma, &p.layout.bn2_gamma, &p.layout.bn3_gamma] {
        for i in range.clone() {
            p.theta[i] = r.random_range(0.5..1.5);
        }
    }
    for range in [&p.layout.bn1_beta, &p.layout.bn2_beta, &p.layout.bn3_beta] {
        for i in range.clone() {
            p.theta[i] = r.random_range(-0.3..0.3);
        }
    }
    for layer in 0..3 {
        p.running.mean[layer].iter_mut().for_each(|m| *m = r.random_range(-0.2..0.2));
        p.running.var[layer].iter_mut().for_each(|v| *v = r.random_range(0.5..2.0));
    }
    let xs = (0..6).map(|_| (0..arch.input_len).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
    let ys = (0..6).map(|i| i % arch.n_classes).collect();
    (p, xs, ys)
}

/// `|analytic − central difference| / (|analytic| + 1e−8) < 1e−4` on random
/// coordinates, in both training and inference mode.
///
/// The difference quotient is the fourth-order central stencil, starting at
/// h = 1e−3. Some coordinates have an exactly zero gradient (a convolution bias
/// ahead of batch normalisation in training mode), where the quotient is pure
/// roundoff of about one ulp of the loss over the step; the wide step keeps
/// that under 1e−12 while the stencil keeps truncation error at O(h⁴). The
/// loss is only piecewise smooth (ReLU, max pooling), so when the estimates at
/// h and h/2 disagree a kink lies inside the stencil and h shrinks until the
/// stencil is kink-free.
pub fn check_gradients() -> Result<String, String> {
    check_gradients_with_seed(0x9403)
}

pub fn check_gradients_with_seed(seed: u64) -> Result<String, String> {
    let (p, xs, ys) = reduced_network(seed);
    let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
    let mut report = Vec::new();
    for train in [false, true] {
        let loss_grad = |q: &NetworkParams| {
            let mut r = rng::seeded(77);
            let mode = if train { GradMode::Train { dropout_p: 0.2, rng: &mut r } } else { GradMode::Eval };
            batch_gradient(q, &refs, &ys, mode).map_err(|e| e.to_string())
        };
        let base = loss_grad(&p)?;
        let (g, loss0) = (base.grad, base.loss);
        let mut pick = rng::seeded(seed + 1 + train as u64);

        let mut worst: f64 = 0.0;
        for _ in 0..GRAD_COORDS {
            let i = pick.random_range(0..p.param_count());
            let at = |step: f64| {
                let mut q = p.clone();
                q.theta[i] += step;
                loss_grad(&q).map(|o| o.loss)
            };
            let stencil = |h: f64| -> Result<f64, String> {
                Ok((8.0 * (at(h)? - at(-h)?) - (at(2.0 * h)? - at(-2.0 * h)?)) / (12.0 * h))
            };
            let mut h = 1e-3;
            let mut fd = stencil(h)?;
            while h > 1e-8 {
                let finer = stencil(h / 2.0)?;
                // roundoff bound of the finer quotient: a few ulps of the loss over its step
                let noise = 8.0 * f64::EPSILON * loss0.abs().max(1.0) / h;
                if (finer - fd).abs() <= 1e-6 * fd.abs().max(finer.abs()) + noise {
                    break;
                }
                fd = finer;
                h /= 2.0;
            }
            let rel = (g[i] - fd).abs() / (g[i].abs() + 1e-8);
            worst = worst.max(rel);
            if rel >= 1e-4 {
                return Err(format!(
                    "{} mode, coordinate {i}: analytic {} vs central difference {fd} (relative {rel:.2e})",
                    if train { "train" } else { "eval" },
                    g[i]
                ));
            }
        }
        report.push(format!("{} mode worst {worst:.2e}", if train { "train" } else { "eval" }));
    }
    Ok(format!("{GRAD_COORDS} random coordinates per mode, {} parameters: {}", p.param_count(), report.join(", ")))
}

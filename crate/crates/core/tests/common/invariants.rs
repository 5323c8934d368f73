//! Module invariants as property tests, driven by deterministic proptest runners.

use std::collections::BTreeMap;
use std::fmt::Debug;

use pqx_core::attribution::{
    attribute, gradcam, lime, occlusion, occlusion_coverage, window_starts, Classifier, LimeConfig, OcclusionConfig,
    OperatorConfig, OperatorKind,
};
use pqx_core::explain::{
    agreement_set, mean_map, quantile_map, summary_map, AffineGaussianToy, ExplanationSamples, SummaryConfig,
    SummaryKind,
};
use pqx_core::metrics::{aggregate, iou, rma, top_l_binarize, EvalRecord, MACRO_GROUP};
use pqx_core::net::{forward, softmax, train, ArchConfig, ForwardMode, NetworkParams, TrainConfig};
use pqx_core::posterior::{
    average, ensemble_from_members, laplace_from_fisher, LaplaceConfig, ParameterSample, PosteriorApprox, PosteriorKind,
};
use pqx_core::rng;
use pqx_core::siggen::{
    generate_dataset, reference_signal, synthesize, Component, DatasetPlan, DisturbanceParams, GroundTruthMask,
    PqdClass, SignalConfig, SplitSpec, Waveform, N_CLASSES,
};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use rand::seq::SliceRandom;
use rand::Rng;

pub type Check = fn() -> Result<String, String>;

fn run<S>(cases: u32, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<String, String>
where
    S: Strategy,
    S::Value: Debug,
{
    let config = Config { cases, failure_persistence: None, ..Config::default() };
    let mut runner = TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    runner.run(&strategy, test).map_err(|e| e.to_string())?;
    Ok(format!("{cases} cases"))
}

fn class_strategy() -> impl Strategy<Value = PqdClass> {
    (0..N_CLASSES as u16).prop_map(|id| PqdClass::from_id(id).expect("valid id"))
}

fn params(class: PqdClass, seed: u64) -> DisturbanceParams {
    DisturbanceParams::sample(class, &SignalConfig::default(), &mut rng::seeded(seed))
}

// ---- siggen -------------------------------------------------------------

pub fn addends_are_exact() -> Result<String, String> {
    run(64, (class_strategy(), any::<u64>(), any::<u64>()), |(class, ps, ns)| {
        let w = synthesize(class, &params(class, ps), &SignalConfig::default(), &mut rng::seeded(ns)).unwrap();
        for n in 0..w.x.len() {
            prop_assert_eq!(w.x[n] - (w.x0[n] + w.d[n] + w.noise[n]), 0.0);
        }
        Ok(())
    })
}

pub fn mask_ignores_noise() -> Result<String, String> {
    run(64, (class_strategy(), any::<u64>(), any::<u64>(), any::<u64>()), |(class, ps, a, b)| {
        let cfg = SignalConfig::default();
        let p = params(class, ps);
        let wa = synthesize(class, &p, &cfg, &mut rng::seeded(a)).unwrap();
        let wb = synthesize(class, &p, &cfg, &mut rng::seeded(b)).unwrap();
        prop_assert_eq!(wa.ground_truth_mask(cfg.epsilon).unwrap(), wb.ground_truth_mask(cfg.epsilon).unwrap());
        Ok(())
    })
}

pub fn step_masks_match_interval() -> Result<String, String> {
    let steps = prop_oneof![Just(PqdClass::Sag), Just(PqdClass::Swell), Just(PqdClass::Interruption)];
    run(96, (steps, any::<u64>()), |(class, seed)| {
        let cfg = SignalConfig::default();
        let p = params(class, seed);
        let w = synthesize(class, &p, &cfg, &mut rng::seeded(seed ^ 1)).unwrap();
        let Component::Step { depth, start, end, .. } = p.components[0] else {
            return Err(TestCaseError::fail("step class without a step component"));
        };
        let brute: Vec<usize> =
            (0..cfg.n_samples).filter(|&n| n >= start && n < end && w.x0[n].abs() * depth > cfg.epsilon).collect();
        prop_assert_eq!(w.ground_truth_mask(cfg.epsilon).unwrap().indices, brute);
        Ok(())
    })
}

pub fn composites_are_sums() -> Result<String, String> {
    let composites: Vec<PqdClass> = PqdClass::ALL.into_iter().filter(|c| c.constituents().len() > 1).collect();
    run(64, (prop::sample::select(composites), any::<u64>()), |(class, seed)| {
        let cfg = SignalConfig::default();
        let p = params(class, seed);
        let x0 = reference_signal(&cfg, p.phase);
        let total = p.disturbance(&cfg, &x0);
        let mut sum = vec![0.0; cfg.n_samples];
        for comp in &p.components {
            let single = DisturbanceParams { phase: p.phase, components: vec![comp.clone()] };
            sum.iter_mut().zip(single.disturbance(&cfg, &x0)).for_each(|(s, v)| *s += v);
        }
        for (a, b) in total.iter().zip(&sum) {
            prop_assert!((a - b).abs() <= 1e-15, "{} vs {}", a, b);
        }
        Ok(())
    })
}

pub fn empirical_snr() -> Result<String, String> {
    run(8, (any::<u64>(), 10.0f64..50.0), |(seed, snr_db)| {
        let cfg = SignalConfig { snr_db, ..SignalConfig::default() };
        let mut r = rng::seeded(seed);
        let (mut signal, mut noise) = (0.0, 0.0);
        for _ in 0..100 {
            let p = DisturbanceParams::sample(PqdClass::Normal, &cfg, &mut r);
            let w = synthesize(PqdClass::Normal, &p, &cfg, &mut r).unwrap();
            signal += w.x0.iter().map(|v| v * v).sum::<f64>();
            noise += w.noise.iter().map(|v| v * v).sum::<f64>();
        }
        let measured = 10.0 * (signal / noise).log10();
        prop_assert!((measured - snr_db).abs() <= 1.0, "measured {} dB vs {} dB", measured, snr_db);
        Ok(())
    })
}

pub fn dataset_generation_is_deterministic() -> Result<String, String> {
    run(4, any::<u64>(), |seed| {
        let plan =
            DatasetPlan { splits: vec![SplitSpec { name: "s".into(), split_id: 3, class_counts: [2; N_CLASSES] }] };
        let cfg = SignalConfig::default();
        prop_assert_eq!(generate_dataset(&cfg, &plan, seed).unwrap(), generate_dataset(&cfg, &plan, seed).unwrap());
        Ok(())
    })
}

// ---- tensornet ----------------------------------------------------------

pub fn softmax_normalised_and_shift_invariant() -> Result<String, String> {
    run(256, (prop::collection::vec(-50.0f64..50.0, 1..20), -100.0f64..100.0), |(z, shift)| {
        let p = softmax(&z);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        let shifted: Vec<f64> = z.iter().map(|v| v + shift).collect();
        let q = softmax(&shifted);
        let worst = p.iter().zip(&q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(worst < 1e-6, "shift changed probabilities by {}", worst);
        Ok(())
    })
}

fn random_net(arch: &ArchConfig, seed: u64) -> NetworkParams {
    let mut r = rng::seeded(seed);
    let mut p = NetworkParams::init(arch, &mut r);
    for layer in 0..3 {
        p.running.var[layer].iter_mut().for_each(|v| *v = r.random_range(0.3..3.0));
        p.running.mean[layer].iter_mut().for_each(|m| *m = r.random_range(-0.5..0.5));
    }
    p
}

fn random_input(n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng::seeded(seed);
    (0..n).map(|i| (i as f64 * std::f64::consts::TAU / 64.0).sin() + 0.2 * r.random_range(-1.0..1.0)).collect()
}

pub fn eval_forward_is_pure() -> Result<String, String> {
    run(16, (any::<u64>(), any::<u64>(), any::<u64>()), |(ps, xa, xb)| {
        let p = random_net(&ArchConfig::default(), ps);
        let (a, b) = (random_input(640, xa), random_input(640, xb));
        let first = forward(&p, &a, ForwardMode::Eval).unwrap();
        forward(&p, &b, ForwardMode::Eval).unwrap();
        let again = forward(&p, &a, ForwardMode::Eval).unwrap();
        prop_assert_eq!(first.logits, again.logits);
        Ok(())
    })
}

pub fn global_max_position_invariance() -> Result<String, String> {
    let arch = ArchConfig::default();
    let rf = arch.receptive_field();
    // a bump placed at two interior positions yields shifted feature maps
    run(
        16,
        (any::<u64>(), prop::collection::vec(-2.0f64..2.0, 24), rf..300usize, 300..640 - 24 - rf),
        |(ps, bump, a, b)| {
            let p = random_net(&arch, ps);
            let place = |at: usize| {
                let mut x = vec![0.0; 640];
                x[at..at + bump.len()].copy_from_slice(&bump);
                x
            };
            let (fa, fb) = (
                forward(&p, &place(a), ForwardMode::Eval).unwrap(),
                forward(&p, &place(b), ForwardMode::Eval).unwrap(),
            );
            prop_assert_eq!(fa.logits, fb.logits);
            Ok(())
        },
    )
}

fn toy_waveforms(n: usize, count: usize, seed: u64) -> Vec<Waveform> {
    let mut r = rng::seeded(seed);
    (0..count)
        .map(|i| {
            let class = PqdClass::from_id((i % 4) as u16).unwrap();
            let x: Vec<f64> =
                (0..n).map(|t| ((t * (1 + i % 4)) as f64 * 0.3).sin() + 0.05 * r.random_range(-1.0..1.0)).collect();
            Waveform {
                x0: vec![0.0; n],
                d: vec![0.0; n],
                noise: vec![0.0; n],
                x,
                class: Some(class),
                params: DisturbanceParams { phase: 0.0, components: vec![] },
                split_id: 0,
                index: i as u32,
            }
        })
        .collect()
}

pub fn training_is_deterministic() -> Result<String, String> {
    run(4, any::<u64>(), |seed| {
        let arch = ArchConfig::tiny();
        let data = toy_waveforms(arch.input_len, 48, seed);
        let cfg = TrainConfig { epochs: 3, batch_size: 16, seed, patience: 10, ..TrainConfig::default() };
        let a = train(&arch, &data[..32], &data[32..], &cfg).unwrap();
        let b = train(&arch, &data[..32], &data[32..], &cfg).unwrap();
        prop_assert_eq!(a.params, b.params);
        prop_assert_eq!(a.curve, b.curve);
        Ok(())
    })
}

// ---- posterior ----------------------------------------------------------

pub fn predictive_within_member_envelope() -> Result<String, String> {
    run(16, (any::<u64>(), 2..6usize, any::<u64>()), |(seed, m, xs)| {
        let arch = ArchConfig::tiny();
        let members: Vec<NetworkParams> = (0..m as u64).map(|i| random_net(&arch, seed.wrapping_add(i))).collect();
        let x = random_input(arch.input_len, xs);
        let post = ensemble_from_members(members.clone()).unwrap();
        let pred = post.predictive(&x, m, &mut rng::seeded(0)).unwrap();
        let outs: Vec<Vec<f64>> = members.iter().map(|p| p.probs(&x, None)).collect();
        prop_assert_eq!(&pred, &average(&outs));
        for k in 0..pred.len() {
            let lo = outs.iter().map(|o| o[k]).fold(f64::INFINITY, f64::min);
            let hi = outs.iter().map(|o| o[k]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lo - 1e-15 <= pred[k] && pred[k] <= hi + 1e-15);
        }
        Ok(())
    })
}

fn laplace(seed: u64, damping: f64) -> PosteriorApprox {
    let arch = ArchConfig::tiny();
    let map = random_net(&arch, seed);
    let mut r = rng::seeded(seed ^ 0xF1);
    let fisher: Vec<f64> = (0..map.param_count()).map(|_| r.random_range(0.0..4.0)).collect();
    laplace_from_fisher(&map, &fisher, LaplaceConfig { damping, scaling: 1.0, max_examples: None }, 8)
}

/// Mean of many draws sits within 3 standard errors of θ_MAP: no coordinate
/// beyond 5 SE, and at most 1% beyond 3 SE (a per-coordinate 3-SE band fails
/// by chance for about 0.3% of coordinates).
pub fn laplace_sampling_is_unbiased() -> Result<String, String> {
    run(4, any::<u64>(), |seed| {
        let post = laplace(seed, 1.0);
        let PosteriorApprox::LaplaceDiag { base, variance, .. } = &post else { unreachable!() };
        let s = 4000;
        let draws = post.sample(s, &mut rng::seeded(seed)).unwrap();
        let dim = base.param_count();
        let mut sum = vec![0.0; dim];
        for d in &draws {
            let ParameterSample::Perturbed { theta, .. } = d else { unreachable!() };
            sum.iter_mut().zip(theta).for_each(|(a, b)| *a += b);
        }
        let mut beyond3 = 0;
        for i in 0..dim {
            let z = (sum[i] / s as f64 - base.theta[i]).abs() / (variance[i] / s as f64).sqrt();
            prop_assert!(z < 5.0, "coordinate {} off by {} SE", i, z);
            beyond3 += (z > 3.0) as usize;
        }
        prop_assert!(beyond3 as f64 <= 0.01 * dim as f64, "{} of {} coordinates beyond 3 SE", beyond3, dim);
        Ok(())
    })
}

pub fn laplace_collapses_with_damping() -> Result<String, String> {
    run(8, (any::<u64>(), 1e2f64..1e12), |(seed, damping)| {
        let post = laplace(seed, damping);
        let PosteriorApprox::LaplaceDiag { base, variance, .. } = &post else { unreachable!() };
        prop_assert!(variance.iter().all(|&v| v > 0.0 && v <= 1.0 / damping));
        for d in post.sample(8, &mut rng::seeded(seed)).unwrap() {
            let ParameterSample::Perturbed { theta, .. } = d else { unreachable!() };
            let worst = theta.iter().zip(&base.theta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            prop_assert!(worst <= 7.0 / damping.sqrt(), "deviation {} at λ = {}", worst, damping);
        }
        Ok(())
    })
}

pub fn frozen_dropout_mask() -> Result<String, String> {
    run(12, (any::<u64>(), any::<u64>(), 0..580usize), |(seed, xs, k)| {
        let post =
            PosteriorApprox::McDropout { base: random_net(&ArchConfig::default(), seed), dropout_p: 0.2, s_default: 4 };
        let sample = post.sample(1, &mut rng::seeded(seed)).unwrap().remove(0);
        let model = post.model(&sample).unwrap();
        let mut x = random_input(640, xs);
        // occluding a window that already holds the fill value is the identity perturbation
        x[k..k + 60].fill(0.0);
        let p = model.probs(&x);
        prop_assert_eq!(&p, &post.model(&sample).unwrap().probs(&x));
        let occluded = model.occluded_probs(&x, 3, &[k], 60, 0.0);
        prop_assert_eq!(occluded[0], p[3]);
        Ok(())
    })
}

// ---- attribution --------------------------------------------------------

pub fn attribution_is_deterministic() -> Result<String, String> {
    let ops = prop::sample::select(OperatorKind::ALL.to_vec());
    run(9, (ops, any::<u64>(), any::<u64>(), 0..16usize), |(op, seed, lime_seed, c)| {
        let post =
            PosteriorApprox::McDropout { base: random_net(&ArchConfig::default(), seed), dropout_p: 0.2, s_default: 4 };
        let sample = post.sample(1, &mut rng::seeded(seed)).unwrap().remove(0);
        let x = random_input(640, seed ^ 7);
        let cfg = OperatorConfig::default();
        let a = attribute(op, &post.model(&sample).unwrap(), &x, c, &cfg, lime_seed).unwrap();
        let b = attribute(op, &post.model(&sample).unwrap(), &x, c, &cfg, lime_seed).unwrap();
        prop_assert_eq!(a.values, b.values);
        Ok(())
    })
}

pub fn occlusion_coverage_identity() -> Result<String, String> {
    run(512, (1..700usize, 1..80usize, 1..20usize), |(n, window, stride)| {
        let windows = window_starts(n, window, stride).len();
        prop_assert_eq!(occlusion_coverage(n, window, stride).iter().sum::<usize>(), windows * window);
        Ok(())
    })
}

/// Probability depends only on samples outside `[lo, hi)`.
struct Outside {
    w: Vec<f64>,
    lo: usize,
    hi: usize,
}

impl Classifier for Outside {
    fn input_len(&self) -> usize {
        self.w.len()
    }
    fn probs(&self, x: &[f64]) -> Vec<f64> {
        let s: f64 = (0..x.len()).filter(|&i| i < self.lo || i >= self.hi).map(|i| self.w[i] * x[i]).sum();
        let p = 1.0 / (1.0 + (-s).exp());
        vec![p, 1.0 - p]
    }
}

pub fn occlusion_ignores_irrelevant_region() -> Result<String, String> {
    let strategy = (40..200usize, any::<u64>()).prop_flat_map(|(n, seed)| {
        (Just(n), Just(seed), 0..n / 2, 1..8usize, 1..4usize).prop_flat_map(|(n, seed, lo, window, stride)| {
            (Just(n), Just(seed), Just(lo), lo + window..=n, Just(window), Just(stride))
        })
    });
    run(128, strategy, |(n, seed, lo, hi, window, stride)| {
        let mut r = rng::seeded(seed);
        let model = Outside { w: (0..n).map(|_| r.random_range(-1.0..1.0)).collect(), lo, hi };
        let x: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        let map = occlusion(&model, &x, 0, &OcclusionConfig { window, stride, fill: 0.0 }).unwrap();
        let starts = window_starts(n, window, stride);
        for pos in 0..n {
            let covering: Vec<&usize> = starts.iter().filter(|&&k| k <= pos && pos < k + window).collect();
            if !covering.is_empty() && covering.iter().all(|&&k| k >= lo && k + window <= hi) {
                prop_assert_eq!(map.values[pos], 0.0, "position {}", pos);
            }
        }
        Ok(())
    })
}

struct Smooth {
    w: Vec<f64>,
}

impl Classifier for Smooth {
    fn input_len(&self) -> usize {
        self.w.len()
    }
    fn probs(&self, x: &[f64]) -> Vec<f64> {
        let s: f64 = self.w.iter().zip(x).map(|(a, b)| a * b.tanh()).sum();
        let p = 1.0 / (1.0 + (-s).exp());
        vec![1.0 - p, p]
    }
}

pub fn lime_segment_constancy() -> Result<String, String> {
    run(48, (1..20usize, 1..12usize, any::<u64>()), |(segments, width, seed)| {
        let n = segments * width;
        let mut r = rng::seeded(seed);
        let model = Smooth { w: (0..n).map(|_| r.random_range(-2.0..2.0)).collect() };
        let x: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        let cfg = LimeConfig { segment_width: width, n_perturbations: 64, ..LimeConfig::default() };
        let map = lime(&model, &x, 1, &cfg, &mut rng::seeded(seed ^ 3)).unwrap();
        for seg in map.values.chunks(width) {
            prop_assert!(seg.iter().all(|&v| v == seg[0]));
        }
        Ok(())
    })
}

pub fn gradcam_nonnegative() -> Result<String, String> {
    run(16, (any::<u64>(), 0..16usize), |(seed, c)| {
        let post = PosteriorApprox::Deterministic { params: random_net(&ArchConfig::default(), seed) };
        let model = post.model(&ParameterSample::Member { index: 0 }).unwrap();
        let map = gradcam(&model, &random_input(640, seed ^ 5), c).unwrap();
        prop_assert_eq!(map.values.len(), 640);
        prop_assert!(map.values.iter().all(|&v| v >= 0.0));
        Ok(())
    })
}

// ---- uarao --------------------------------------------------------------

fn rows_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1..=8usize, 1..=12usize).prop_flat_map(|(s, n)| prop::collection::vec(prop::collection::vec(0.0f64..5.0, n), s))
}

fn samples(rows: Vec<Vec<f64>>) -> ExplanationSamples {
    ExplanationSamples::from_rows(rows, OperatorKind::Occlusion, PosteriorKind::McDropout, 0).unwrap()
}

pub fn summaries_permutation_invariant() -> Result<String, String> {
    run(128, (rows_strategy(), any::<u64>()), |(rows, seed)| {
        let mut shuffled = rows.clone();
        shuffled.shuffle(&mut rng::seeded(seed));
        let (a, b) = (samples(rows), samples(shuffled));
        let cfg = SummaryConfig::default();
        for kind in SummaryKind::all_maps() {
            match (summary_map(&a, kind, &cfg), summary_map(&b, kind, &cfg)) {
                (Ok(x), Ok(y)) => {
                    for (u, v) in x.iter().zip(&y) {
                        prop_assert!((u - v).abs() <= 1e-12 * u.abs().max(1.0), "{}: {} vs {}", kind, u, v);
                    }
                }
                (Err(_), Err(_)) => {}
                _ => return Err(TestCaseError::fail(format!("{kind} defined for only one ordering"))),
            }
        }
        Ok(())
    })
}

pub fn quantiles_monotone_and_envelope_mean() -> Result<String, String> {
    run(128, rows_strategy(), |rows| {
        let e = samples(rows.clone());
        let mut prev = quantile_map(&e, 1e-9).unwrap();
        for k in 1..=20 {
            let q = quantile_map(&e, (k as f64 / 20.0).min(1.0 - 1e-9)).unwrap();
            prop_assert!(q.iter().zip(&prev).all(|(a, b)| a >= b));
            prev = q;
        }
        let (lo, hi) = (quantile_map(&e, 1e-9).unwrap(), quantile_map(&e, 1.0 - 1e-9).unwrap());
        for (n, m) in mean_map(&e).iter().enumerate() {
            let min = rows.iter().map(|r| r[n]).fold(f64::INFINITY, f64::min);
            let max = rows.iter().map(|r| r[n]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!((lo[n], hi[n]), (min, max));
            prop_assert!(lo[n] - 1e-12 <= *m && *m <= hi[n] + 1e-12);
        }
        Ok(())
    })
}

pub fn agreement_sets_monotone() -> Result<String, String> {
    run(256, (rows_strategy(), 0.01f64..5.0, 0.01f64..5.0, 0.0f64..=1.0, 0.0f64..=1.0), |(rows, d1, d2, e1, e2)| {
        let e = samples(rows);
        let subset = |a: &[usize], b: &[usize]| a.iter().all(|i| b.contains(i));
        let (dl, dh) = (d1.min(d2), d1.max(d2));
        let (el, eh) = (e1.min(e2), e1.max(e2));
        prop_assert!(subset(&agreement_set(&e, dl, eh).unwrap(), &agreement_set(&e, dl, el).unwrap()));
        prop_assert!(subset(&agreement_set(&e, dh, el).unwrap(), &agreement_set(&e, dl, el).unwrap()));
        Ok(())
    })
}

/// Empirical quantiles of the affine-Gaussian toy converge to the Gaussian
/// quantiles at non-atomic levels.
pub fn toy_quantile_consistency() -> Result<String, String> {
    use statrs::distribution::{ContinuousCDF, Normal};
    run(4, any::<u64>(), |seed| {
        let mut r = rng::seeded(seed);
        let toy = AffineGaussianToy {
            a: (0..4).map(|_| (0..3).map(|_| r.random_range(-1.0..1.0)).collect()).collect(),
            b: (0..4).map(|_| r.random_range(-1.0..1.0)).collect(),
            mu: (0..3).map(|_| r.random_range(-1.0..1.0)).collect(),
            sigma2: (0..3).map(|_| r.random_range(0.1..1.0)).collect(),
        };
        let rows: Vec<Vec<f64>> = (0..20_000).map(|_| toy.draw(&mut r)).collect();
        let e = ExplanationSamples {
            raw: rows.clone(),
            rows,
            provenance: Vec::new(),
            operator: OperatorKind::Lime,
            posterior: PosteriorKind::LaplaceDiag,
            class: 0,
        };
        let (m, v) = (toy.closed_form_mean(), toy.closed_form_variance());
        for alpha in [0.05, 0.25, 0.5, 0.75, 0.95] {
            let q = quantile_map(&e, alpha).unwrap();
            for n in 0..m.len() {
                let exact = Normal::new(m[n], v[n].sqrt()).unwrap().inverse_cdf(alpha);
                prop_assert!(
                    (q[n] - exact).abs() <= 0.05 * v[n].sqrt().max(0.1),
                    "α = {}: {} vs {}",
                    alpha,
                    q[n],
                    exact
                );
            }
        }
        Ok(())
    })
}

// ---- metrics ------------------------------------------------------------

fn map_and_mask() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (1..40usize).prop_flat_map(|n| (prop::collection::vec(0.0f64..10.0, n), prop::collection::vec(any::<bool>(), n)))
}

pub fn metric_bounds_and_scaling() -> Result<String, String> {
    run(512, map_and_mask(), |(r, mask)| {
        let gt = GroundTruthMask::from_mask(mask);
        let doubled: Vec<f64> = r.iter().map(|v| 2.0 * v).collect();
        prop_assert_eq!(rma(&r, &gt), rma(&doubled, &gt));
        if let Some(v) = rma(&r, &gt) {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        if let Some(v) = iou(&r, &gt) {
            prop_assert!((0.0..=1.0).contains(&v));
            let top = top_l_binarize(&r, gt.len()).unwrap();
            prop_assert_eq!(v == 1.0, top == gt.indices);
            let inter = top.iter().filter(|&&i| gt.contains(i)).count();
            let union: std::collections::BTreeSet<usize> = top.iter().chain(&gt.indices).copied().collect();
            prop_assert_eq!(v, inter as f64 / union.len() as f64);
        }
        Ok(())
    })
}

pub fn iou_monotone_transform_invariant() -> Result<String, String> {
    let distinct = (1..40usize).prop_flat_map(|n| {
        (prop::collection::btree_set(1u32..100_000, n), prop::collection::vec(any::<bool>(), n), any::<u64>())
    });
    run(256, distinct, |(values, mask, seed)| {
        let mut r: Vec<f64> = values.into_iter().map(|v| v as f64 / 1000.0).collect();
        r.shuffle(&mut rng::seeded(seed));
        let gt = GroundTruthMask::from_mask(mask);
        let squared: Vec<f64> = r.iter().map(|v| v * v).collect();
        prop_assert_eq!(iou(&r, &gt), iou(&squared, &gt));
        Ok(())
    })
}

pub fn full_support_positive_map_has_unit_rma() -> Result<String, String> {
    run(256, prop::collection::vec(1e-6f64..10.0, 1..700), |r| {
        let gt = GroundTruthMask::from_mask(vec![true; r.len()]);
        prop_assert_eq!(rma(&r, &gt), Some(1.0));
        Ok(())
    })
}

fn record_strategy() -> impl Strategy<Value = Vec<EvalRecord>> {
    let one = (0..3u32, 1..N_CLASSES as u16, 0..3usize, prop::option::weighted(0.9, 0.0f64..1.0), 0.0f64..1.0);
    prop::collection::vec(one, 1..120).prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            .map(|(i, (split, class, summary, rma, iou))| EvalRecord {
                split: format!("test_{split}"),
                split_id: split,
                instance: i as u32,
                class: PqdClass::from_id(class).unwrap(),
                posterior: PosteriorKind::DeepEnsemble,
                operator: OperatorKind::Occlusion,
                summary: [SummaryKind::Mean, SummaryKind::Variance, SummaryKind::Quantile(500)][summary],
                iou: rma.map(|_| iou),
                rma,
            })
            .collect()
    })
}

/// Welford running moments, used as an independent single-pass recomputation.
#[derive(Default)]
struct Running {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Running {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    fn std(&self) -> f64 {
        if self.n > 1 {
            (self.m2 / (self.n - 1) as f64).sqrt()
        } else {
            0.0
        }
    }
}

pub fn aggregation_matches_streaming_pass() -> Result<String, String> {
    run(128, record_strategy(), |records| {
        let table = aggregate(&records);
        for row in &table {
            let mut per_split: BTreeMap<u32, Running> = BTreeMap::new();
            let mut missing = 0;
            for r in records
                .iter()
                .filter(|r| r.summary == row.summary && (row.group == MACRO_GROUP || r.class.name() == row.group))
            {
                match r.iou {
                    Some(v) => per_split.entry(r.split_id).or_default().push(v),
                    None => missing += 1,
                }
            }
            let mut across = Running::default();
            per_split.values().for_each(|s| across.push(s.mean));
            prop_assert_eq!(row.n_missing, missing);
            prop_assert_eq!(row.n_splits, across.n);
            if across.n == 0 {
                // every value in the cell is missing
                prop_assert!(row.iou_mean.is_nan() && row.iou_std.is_nan());
                continue;
            }
            let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
            prop_assert!(close(row.iou_mean, across.mean), "mean {} vs {}", row.iou_mean, across.mean);
            prop_assert!(close(row.iou_std, across.std()), "std {} vs {}", row.iou_std, across.std());
        }
        Ok(())
    })
}

/// Every invariant, by name.
pub fn all() -> Vec<(&'static str, Check)> {
    vec![
        ("siggen: addends exact", addends_are_exact),
        ("siggen: mask independent of noise", mask_ignores_noise),
        ("siggen: step masks equal interval brute force", step_masks_match_interval),
        ("siggen: composite = sum of constituents", composites_are_sums),
        ("siggen: empirical SNR within 1 dB", empirical_snr),
        ("siggen: dataset determinism under seed", dataset_generation_is_deterministic),
        ("tensornet: softmax normalised and shift invariant", softmax_normalised_and_shift_invariant),
        ("tensornet: eval forward is pure", eval_forward_is_pure),
        ("tensornet: global max position invariance", global_max_position_invariance),
        ("tensornet: training determinism under seed", training_is_deterministic),
        ("posterior: predictive within member envelope", predictive_within_member_envelope),
        ("posterior: Laplace sampling unbiased", laplace_sampling_is_unbiased),
        ("posterior: Laplace collapses as damping grows", laplace_collapses_with_damping),
        ("posterior: frozen dropout mask", frozen_dropout_mask),
        ("attribution: determinism under seed", attribution_is_deterministic),
        ("attribution: occlusion coverage identity", occlusion_coverage_identity),
        ("attribution: occlusion ignores irrelevant region", occlusion_ignores_irrelevant_region),
        ("attribution: LIME segment constancy", lime_segment_constancy),
        ("attribution: Grad-CAM nonnegative", gradcam_nonnegative),
        ("uarao: row-permutation invariance", summaries_permutation_invariant),
        ("uarao: quantile monotone in α, mean inside envelope", quantiles_monotone_and_envelope_mean),
        ("uarao: agreement sets monotone in η and δ", agreement_sets_monotone),
        ("uarao: toy quantile consistency", toy_quantile_consistency),
        ("metrics: bounds, scaling and IoU counting identity", metric_bounds_and_scaling),
        ("metrics: IoU invariant under monotone transform", iou_monotone_transform_invariant),
        ("metrics: full-support positive map has RMA 1", full_support_positive_map_has_unit_rma),
        ("metrics: aggregation equals streaming pass", aggregation_matches_streaming_pass),
    ]
}

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};

/// `τ(θ) = Aθ + b` with `θ ~ N(μ, diag σ²)`; the explanation distribution is
/// then Gaussian with closed-form moments.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineGaussianToy {
    /// Row-major `N × D`.
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub mu: Vec<f64>,
    pub sigma2: Vec<f64>,
}

impl AffineGaussianToy {
    pub fn closed_form_mean(&self) -> Vec<f64> {
        self.a
            .iter()
            .zip(&self.b)
            .map(|(row, b)| b + row.iter().zip(&self.mu).map(|(a, m)| a * m).sum::<f64>())
            .collect()
    }

    /// `diag(A diag(σ²) Aᵀ)`.
    pub fn closed_form_variance(&self) -> Vec<f64> {
        self.a.iter().map(|row| row.iter().zip(&self.sigma2).map(|(a, s)| a * a * s).sum()).collect()
    }

    /// Draws θ and returns `τ(θ)`.
    pub fn draw(&self, rng: &mut impl Rng) -> Vec<f64> {
        let theta: Vec<f64> = self
            .mu
            .iter()
            .zip(&self.sigma2)
            .map(|(m, s)| {
                let z: f64 = StandardNormal.sample(rng);
                m + s.sqrt() * z
            })
            .collect();
        self.a.iter().zip(&self.b).map(|(row, b)| b + row.iter().zip(&theta).map(|(a, t)| a * t).sum::<f64>()).collect()
    }
}

/// `∫ |F₁ − F₂|` over `[lo, hi]` by the composite Simpson rule.
pub fn w1_numeric(f1: impl Fn(f64) -> f64, f2: impl Fn(f64) -> f64, lo: f64, hi: f64, intervals: usize) -> f64 {
    let n = intervals + intervals % 2;
    let h = (hi - lo) / n as f64;
    let g = |x: f64| (f1(x) - f2(x)).abs();
    let mut acc = g(lo) + g(hi);
    for i in 1..n {
        acc += g(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0
}

/// W₁ between two scalar Gaussians by numerical CDF integration.
pub fn gaussian_w1(m1: f64, s1: f64, m2: f64, s2: f64) -> f64 {
    let n1 = Normal::new(m1, s1).expect("valid normal");
    let n2 = Normal::new(m2, s2).expect("valid normal");
    let lo = (m1 - 12.0 * s1).min(m2 - 12.0 * s2);
    let hi = (m1 + 12.0 * s1).max(m2 + 12.0 * s2);
    w1_numeric(|x| n1.cdf(x), |x| n2.cdf(x), lo, hi, 20_000)
}

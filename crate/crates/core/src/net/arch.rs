use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Shape of the conv–conv–pool–BN–conv–conv–global-pool–BN–FC–BN–FC network.
///
/// All convolutions are stride-1 with no padding; the global max pool spans
/// whatever temporal length remains after the fourth convolution.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub input_len: usize,
    pub channels: [usize; 4],
    pub hidden: usize,
    pub n_classes: usize,
    pub kernel: usize,
    pub pool: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig { input_len: 640, channels: [8, 8, 16, 16], hidden: 64, n_classes: 16, kernel: 3, pool: 3 }
    }
}

/// Temporal lengths after each stage of the trunk.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Lengths {
    pub conv1: usize,
    pub conv2: usize,
    pub pool1: usize,
    pub conv3: usize,
    pub conv4: usize,
}

impl ArchConfig {
    /// A reduced network used for gradient checks and quick tests.
    pub fn tiny() -> Self {
        ArchConfig { input_len: 24, channels: [3, 3, 4, 4], hidden: 6, n_classes: 4, kernel: 3, pool: 3 }
    }

    /// Input samples consumed by the trunk beyond its output length.
    pub fn receptive_field(&self) -> usize {
        4 * (self.kernel - 1) + (self.pool - 1) + 1
    }

    pub fn lengths_for(&self, input_len: usize) -> Lengths {
        let k = self.kernel - 1;
        let conv1 = input_len - k;
        let conv2 = conv1 - k;
        let pool1 = conv2 - (self.pool - 1);
        let conv3 = pool1 - k;
        let conv4 = conv3 - k;
        Lengths { conv1, conv2, pool1, conv3, conv4 }
    }

    pub fn lengths(&self) -> Lengths {
        self.lengths_for(self.input_len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.pool == 0 {
            return Err(Error::Config("kernel and pool sizes must be positive".into()));
        }
        if self.input_len < self.receptive_field() {
            return Err(Error::Config(format!(
                "input length {} shorter than receptive field {}",
                self.input_len,
                self.receptive_field()
            )));
        }
        if self.channels.contains(&0) || self.hidden == 0 || self.n_classes < 2 {
            return Err(Error::Config("layer widths must be positive and n_classes ≥ 2".into()));
        }
        Ok(())
    }

    /// Stable 64-bit fingerprint stored in checkpoints.
    pub fn hash(&self) -> u64 {
        let canon = format!(
            "in={};ch={},{},{},{};h={};m={};k={};p={}",
            self.input_len,
            self.channels[0],
            self.channels[1],
            self.channels[2],
            self.channels[3],
            self.hidden,
            self.n_classes,
            self.kernel,
            self.pool
        );
        let digest = Sha256::digest(canon.as_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
    }
}

/// Offsets of every parameter tensor inside the flat vector θ.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub conv1_w: Range<usize>,
    pub conv1_b: Range<usize>,
    pub conv2_w: Range<usize>,
    pub conv2_b: Range<usize>,
    pub bn1_gamma: Range<usize>,
    pub bn1_beta: Range<usize>,
    pub conv3_w: Range<usize>,
    pub conv3_b: Range<usize>,
    pub conv4_w: Range<usize>,
    pub conv4_b: Range<usize>,
    pub bn2_gamma: Range<usize>,
    pub bn2_beta: Range<usize>,
    pub fc1_w: Range<usize>,
    pub fc1_b: Range<usize>,
    pub bn3_gamma: Range<usize>,
    pub bn3_beta: Range<usize>,
    pub fc2_w: Range<usize>,
    pub fc2_b: Range<usize>,
    pub total: usize,
}

impl Layout {
    pub fn new(arch: &ArchConfig) -> Self {
        let [c1, c2, c3, c4] = arch.channels;
        let (k, h, m) = (arch.kernel, arch.hidden, arch.n_classes);
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let conv1_w = take(c1 * k);
        let conv1_b = take(c1);
        let conv2_w = take(c2 * c1 * k);
        let conv2_b = take(c2);
        let bn1_gamma = take(c2);
        let bn1_beta = take(c2);
        let conv3_w = take(c3 * c2 * k);
        let conv3_b = take(c3);
        let conv4_w = take(c4 * c3 * k);
        let conv4_b = take(c4);
        let bn2_gamma = take(c4);
        let bn2_beta = take(c4);
        let fc1_w = take(h * c4);
        let fc1_b = take(h);
        let bn3_gamma = take(h);
        let bn3_beta = take(h);
        let fc2_w = take(m * h);
        let fc2_b = take(m);
        Layout {
            conv1_w,
            conv1_b,
            conv2_w,
            conv2_b,
            bn1_gamma,
            bn1_beta,
            conv3_w,
            conv3_b,
            conv4_w,
            conv4_b,
            bn2_gamma,
            bn2_beta,
            fc1_w,
            fc1_b,
            bn3_gamma,
            bn3_beta,
            fc2_w,
            fc2_b,
            total: at,
        }
    }

    /// (weight range, fan-in) of each trainable weight tensor.
    fn weights(&self, arch: &ArchConfig) -> [(Range<usize>, usize); 6] {
        let [c1, c2, c3, c4] = arch.channels;
        let k = arch.kernel;
        [
            (self.conv1_w.clone(), k),
            (self.conv2_w.clone(), c1 * k),
            (self.conv3_w.clone(), c2 * k),
            (self.conv4_w.clone(), c3 * k),
            (self.fc1_w.clone(), c4),
            (self.fc2_w.clone(), arch.hidden),
        ]
    }

    fn gammas(&self) -> [Range<usize>; 3] {
        [self.bn1_gamma.clone(), self.bn2_gamma.clone(), self.bn3_gamma.clone()]
    }
}

/// Running mean/variance of the three batch-norm layers. Not part of θ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BnRunning {
    pub mean: [Vec<f64>; 3],
    pub var: [Vec<f64>; 3],
}

impl BnRunning {
    pub fn new(arch: &ArchConfig) -> Self {
        let sizes = [arch.channels[1], arch.channels[3], arch.hidden];
        BnRunning { mean: sizes.map(|n| vec![0.0; n]), var: sizes.map(|n| vec![1.0; n]) }
    }

    pub fn len(&self) -> usize {
        self.mean.iter().map(Vec::len).sum::<usize>() * 2
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.mean.iter().chain(self.var.iter()).flatten().copied().collect()
    }

    pub fn unflatten(arch: &ArchConfig, flat: &[f64]) -> Result<Self> {
        let mut out = BnRunning::new(arch);
        if flat.len() != out.len() {
            return Err(Error::Shape { expected: out.len(), actual: flat.len() });
        }
        let mut it = flat.iter().copied();
        for v in out.mean.iter_mut().chain(out.var.iter_mut()) {
            v.iter_mut().for_each(|x| *x = it.next().expect("length checked"));
        }
        Ok(out)
    }
}

/// Flat parameter vector with its architecture and batch-norm statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    pub arch: ArchConfig,
    pub layout: Layout,
    pub theta: Vec<f64>,
    pub running: BnRunning,
}

impl NetworkParams {
    /// All weights and biases zero, BN scale one and shift zero.
    pub fn zeros(arch: &ArchConfig) -> Self {
        let layout = Layout::new(arch);
        let mut theta = vec![0.0; layout.total];
        for g in layout.gammas() {
            theta[g].fill(1.0);
        }
        NetworkParams { arch: arch.clone(), layout, theta, running: BnRunning::new(arch) }
    }

    /// He-uniform weights, zero biases, identity batch norms.
    pub fn init(arch: &ArchConfig, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(arch);
        for (range, fan_in) in p.layout.weights(arch) {
            let bound = (6.0 / fan_in as f64).sqrt();
            for w in &mut p.theta[range] {
                *w = bound * (2.0 * rng.random::<f64>() - 1.0);
            }
        }
        p
    }

    pub fn from_theta(arch: &ArchConfig, theta: Vec<f64>, running: BnRunning) -> Result<Self> {
        let layout = Layout::new(arch);
        if theta.len() != layout.total {
            return Err(Error::Shape { expected: layout.total, actual: theta.len() });
        }
        Ok(NetworkParams { arch: arch.clone(), layout, theta, running })
    }

    pub fn param_count(&self) -> usize {
        self.theta.len()
    }

    pub(crate) fn slice(&self, r: &Range<usize>) -> &[f64] {
        &self.theta[r.clone()]
    }

    /// Euclidean distance between two parameter vectors.
    pub fn distance(&self, other: &NetworkParams) -> f64 {
        self.theta.iter().zip(&other.theta).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    }
}

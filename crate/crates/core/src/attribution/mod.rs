//! Local relevance operators mapping (parameter sample, input, target class)
//! to a relevance value per input sample.

mod gradcam;
mod lime;
mod occlusion;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::global_max;
use crate::posterior::SampledModel;
use crate::rng;

pub use gradcam::{gradcam, gradcam_feature_gradient, interpolate_linear, FeatureGradient};
pub use lime::{lime, lime_design, weighted_ridge, LimeDesign, RidgeFit};
pub use occlusion::{occlusion, occlusion_coverage, window_starts};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    Occlusion,
    Gradcam,
    Lime,
}

impl OperatorKind {
    pub const ALL: [OperatorKind; 3] = [OperatorKind::Occlusion, OperatorKind::Gradcam, OperatorKind::Lime];

    pub fn name(self) -> &'static str {
        match self {
            OperatorKind::Occlusion => "occlusion",
            OperatorKind::Gradcam => "gradcam",
            OperatorKind::Lime => "lime",
        }
    }
}

impl fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OperatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OperatorKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown operator '{s}', expected one of occlusion, gradcam, lime")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Signedness {
    Signed,
    Nonnegative,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMap {
    pub values: Vec<f64>,
    pub signedness: Signedness,
    pub operator: OperatorKind,
    /// 0-based target class.
    pub class: usize,
}

impl SaliencyMap {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Absolute value elementwise; idempotent.
pub fn to_relevance(map: &SaliencyMap) -> SaliencyMap {
    SaliencyMap {
        values: map.values.iter().map(|v| v.abs()).collect(),
        signedness: Signedness::Nonnegative,
        operator: map.operator,
        class: map.class,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OcclusionConfig {
    pub window: usize,
    pub stride: usize,
    pub fill: f64,
}

impl Default for OcclusionConfig {
    fn default() -> Self {
        OcclusionConfig { window: 60, stride: 1, fill: 0.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimeConfig {
    /// Rows of the design matrix, the all-ones mask included.
    pub n_perturbations: usize,
    pub segment_width: usize,
    pub ridge: f64,
    /// Kernel width on the masked-fraction distance.
    pub kernel_width: f64,
    pub fill: f64,
}

impl Default for LimeConfig {
    fn default() -> Self {
        LimeConfig { n_perturbations: 128, segment_width: 16, ridge: 1.0, kernel_width: 0.25, fill: 0.0 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OperatorConfig {
    pub occlusion: OcclusionConfig,
    pub lime: LimeConfig,
}

impl OperatorConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        let o = &self.occlusion;
        if o.window == 0 || o.window > n || o.stride == 0 {
            return Err(Error::Config(format!("occlusion window must be in 1..={n} with stride >= 1")));
        }
        let l = &self.lime;
        if l.segment_width == 0 || !n.is_multiple_of(l.segment_width) {
            return Err(Error::Config(format!("LIME segment width {} does not divide {n}", l.segment_width)));
        }
        if l.n_perturbations < 2 || !(l.ridge >= 0.0) || !(l.kernel_width > 0.0) {
            return Err(Error::Config("LIME needs >= 2 perturbations, ridge >= 0 and kernel width > 0".into()));
        }
        Ok(())
    }
}

/// A probabilistic classifier that the perturbation operators can query.
pub trait Classifier: Sync {
    fn input_len(&self) -> usize;

    fn probs(&self, x: &[f64]) -> Vec<f64>;

    /// `p(c | x with window k filled)` for each start in `starts`.
    fn occluded_probs(&self, x: &[f64], c: usize, starts: &[usize], window: usize, fill: f64) -> Vec<f64> {
        use rayon::prelude::*;
        starts
            .par_iter()
            .map(|&k| {
                let mut xo = x.to_vec();
                xo[k..k + window].fill(fill);
                self.probs(&xo)[c]
            })
            .collect()
    }
}

impl Classifier for SampledModel<'_> {
    fn input_len(&self) -> usize {
        self.params.arch.input_len
    }

    fn probs(&self, x: &[f64]) -> Vec<f64> {
        SampledModel::probs(self, x)
    }

    /// Recomputes only the conv4 positions a window can reach and combines
    /// them with prefix and suffix maxima of the unoccluded maps.
    fn occluded_probs(&self, x: &[f64], c: usize, starts: &[usize], window: usize, fill: f64) -> Vec<f64> {
        use rayon::prelude::*;
        let p = &*self.params;
        let c4 = p.arch.channels[3];
        let reach = p.arch.receptive_field() - 1;
        let (maps, l4) = p.features(x);
        let mut prefix = vec![f64::NEG_INFINITY; c4 * (l4 + 1)];
        let mut suffix = vec![f64::NEG_INFINITY; c4 * (l4 + 1)];
        for ch in 0..c4 {
            let row = &maps[ch * l4..(ch + 1) * l4];
            let (pre, suf) = (&mut prefix[ch * (l4 + 1)..], &mut suffix[ch * (l4 + 1)..]);
            for t in 0..l4 {
                pre[t + 1] = pre[t].max(row[t]);
            }
            for t in (0..l4).rev() {
                suf[t] = suf[t + 1].max(row[t]);
            }
        }
        starts
            .par_iter()
            .map(|&k| {
                let a = k.saturating_sub(reach);
                let b = (k + window).min(l4);
                let mut seg = x[a..b + reach].to_vec();
                seg[k - a..k - a + window].fill(fill);
                let (local, ll) = p.features(&seg);
                debug_assert_eq!(ll, b - a);
                let (local_max, _) = global_max(&local, c4);
                let pooled: Vec<f64> = (0..c4)
                    .map(|ch| {
                        let base = ch * (l4 + 1);
                        prefix[base + a].max(suffix[base + b]).max(local_max[ch])
                    })
                    .collect();
                crate::net::softmax(&p.head(&pooled, self.dropout.as_deref()))[c]
            })
            .collect()
    }
}

/// Runs one operator. `lime_seed` fixes LIME's perturbation draw.
pub fn attribute(
    operator: OperatorKind,
    model: &SampledModel<'_>,
    x: &[f64],
    c: usize,
    config: &OperatorConfig,
    lime_seed: u64,
) -> Result<SaliencyMap> {
    config.validate(x.len())?;
    match operator {
        OperatorKind::Occlusion => occlusion(model, x, c, &config.occlusion),
        OperatorKind::Gradcam => gradcam(model, x, c),
        OperatorKind::Lime => lime(model, x, c, &config.lime, &mut rng::seeded(lime_seed)),
    }
}

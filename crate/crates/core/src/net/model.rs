use rand::Rng;
use rayon::prelude::*;

use super::arch::NetworkParams;
use super::layers::*;
use crate::error::{Error, Result};
use crate::rng::ChaCha8Rng;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
/// Probability floor applied before taking the log in the loss.
pub const LOSS_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
    EvalDropout,
}

/// Single-example inference mode.
#[derive(Clone, Copy, Debug)]
pub enum ForwardMode<'a> {
    /// Running statistics, dropout disabled.
    Eval,
    /// Running statistics with a frozen dropout mask (already scaled by `1/(1-p)`).
    EvalDropout(&'a [f64]),
}

#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub mode: Mode,
    /// Post-ReLU fourth-convolution maps, channel-major.
    pub conv4: Vec<f64>,
    pub conv4_len: usize,
    /// Global max pool output and its first arg-max per channel.
    pub pooled: Vec<f64>,
    pub pooled_arg: Vec<u32>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

/// Cross-entropy `−ln p[y]` with the probability floored at [`LOSS_FLOOR`].
pub fn loss(probs: &[f64], y: usize) -> f64 {
    -probs[y].max(LOSS_FLOOR).ln()
}

/// Mean cross-entropy over a batch.
pub fn batch_loss(probs: &[Vec<f64>], ys: &[usize]) -> f64 {
    probs.iter().zip(ys).map(|(p, &y)| loss(p, y)).sum::<f64>() / ys.len() as f64
}

/// First index of the largest probability.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn bn_apply(x: &mut [f64], c: usize, gamma: &[f64], beta: &[f64], mean: &[f64], inv: &[f64]) -> Vec<f64> {
    let l = x.len() / c;
    let mut xhat = vec![0.0; x.len()];
    for ch in 0..c {
        for t in 0..l {
            let i = ch * l + t;
            xhat[i] = (x[i] - mean[ch]) * inv[ch];
            x[i] = gamma[ch] * xhat[i] + beta[ch];
        }
    }
    xhat
}

fn inv_std(var: &[f64]) -> Vec<f64> {
    var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect()
}

impl NetworkParams {
    /// Eval-mode trunk up to the post-ReLU fourth convolution, for any input
    /// at least as long as the receptive field. Returns `(maps, length)`.
    pub fn features(&self, x: &[f64]) -> (Vec<f64>, usize) {
        let l = &self.layout;
        let a = &self.arch;
        let [_, c2, c3, _] = a.channels;
        let k = a.kernel;
        let mut h1 = Vec::new();
        conv_forward(x, 1, self.slice(&l.conv1_w), self.slice(&l.conv1_b), k, &mut h1);
        relu_inplace(&mut h1);
        let mut h2 = Vec::new();
        conv_forward(&h1, a.channels[0], self.slice(&l.conv2_w), self.slice(&l.conv2_b), k, &mut h2);
        relu_inplace(&mut h2);
        let mut p = Vec::new();
        let mut arg = Vec::new();
        maxpool_forward(&h2, c2, a.pool, &mut p, &mut arg);
        let inv = inv_std(&self.running.var[0]);
        bn_apply(&mut p, c2, self.slice(&l.bn1_gamma), self.slice(&l.bn1_beta), &self.running.mean[0], &inv);
        let mut h3 = Vec::new();
        conv_forward(&p, c2, self.slice(&l.conv3_w), self.slice(&l.conv3_b), k, &mut h3);
        relu_inplace(&mut h3);
        let mut h4 = Vec::new();
        let len = conv_forward(&h3, c3, self.slice(&l.conv4_w), self.slice(&l.conv4_b), k, &mut h4);
        relu_inplace(&mut h4);
        (h4, len)
    }

    /// Eval-mode head from pooled features to logits.
    pub fn head(&self, pooled: &[f64], dropout: Option<&[f64]>) -> Vec<f64> {
        let l = &self.layout;
        let c4 = self.arch.channels[3];
        let mut n2 = pooled.to_vec();
        let inv2 = inv_std(&self.running.var[1]);
        bn_apply(&mut n2, c4, self.slice(&l.bn2_gamma), self.slice(&l.bn2_beta), &self.running.mean[1], &inv2);
        let mut h = dense_forward(&n2, self.slice(&l.fc1_w), self.slice(&l.fc1_b));
        relu_inplace(&mut h);
        if let Some(mask) = dropout {
            h.iter_mut().zip(mask).for_each(|(v, m)| *v *= m);
        }
        let inv3 = inv_std(&self.running.var[2]);
        let hidden = self.arch.hidden;
        bn_apply(&mut h, hidden, self.slice(&l.bn3_gamma), self.slice(&l.bn3_beta), &self.running.mean[2], &inv3);
        dense_forward(&h, self.slice(&l.fc2_w), self.slice(&l.fc2_b))
    }

    /// Logits and `∂logit_c/∂pooled` of the eval-mode head.
    pub fn head_input_gradient(&self, pooled: &[f64], dropout: Option<&[f64]>, class: usize) -> (Vec<f64>, Vec<f64>) {
        let l = &self.layout;
        let c4 = self.arch.channels[3];
        let hidden = self.arch.hidden;
        let inv2 = inv_std(&self.running.var[1]);
        let inv3 = inv_std(&self.running.var[2]);
        let g2 = self.slice(&l.bn2_gamma);
        let g3 = self.slice(&l.bn3_gamma);
        let w1 = self.slice(&l.fc1_w);
        let w2 = self.slice(&l.fc2_w);
        let logits = self.head(pooled, dropout);

        let mut n2 = pooled.to_vec();
        bn_apply(&mut n2, c4, g2, self.slice(&l.bn2_beta), &self.running.mean[1], &inv2);
        let pre = dense_forward(&n2, w1, self.slice(&l.fc1_b));
        let mut dpre = vec![0.0; hidden];
        for j in 0..hidden {
            let m = dropout.map_or(1.0, |d| d[j]);
            if pre[j] > 0.0 {
                dpre[j] = w2[class * hidden + j] * g3[j] * inv3[j] * m;
            }
        }
        let mut dpooled = vec![0.0; c4];
        for (j, &dj) in dpre.iter().enumerate() {
            for i in 0..c4 {
                dpooled[i] += dj * w1[j * c4 + i];
            }
        }
        for i in 0..c4 {
            dpooled[i] *= g2[i] * inv2[i];
        }
        (logits, dpooled)
    }

    pub fn probs(&self, x: &[f64], dropout: Option<&[f64]>) -> Vec<f64> {
        let (maps, _) = self.features(x);
        let (pooled, _) = global_max(&maps, self.arch.channels[3]);
        softmax(&self.head(&pooled, dropout))
    }
}

/// Single-example forward pass.
pub fn forward(params: &NetworkParams, x: &[f64], mode: ForwardMode<'_>) -> Result<ForwardTrace> {
    if x.len() != params.arch.input_len {
        return Err(Error::Shape { expected: params.arch.input_len, actual: x.len() });
    }
    let (dropout, mode) = match mode {
        ForwardMode::Eval => (None, Mode::Eval),
        ForwardMode::EvalDropout(m) => {
            if m.len() != params.arch.hidden {
                return Err(Error::Shape { expected: params.arch.hidden, actual: m.len() });
            }
            (Some(m), Mode::EvalDropout)
        }
    };
    let (conv4, conv4_len) = params.features(x);
    let (pooled, pooled_arg) = global_max(&conv4, params.arch.channels[3]);
    let logits = params.head(&pooled, dropout);
    let probs = softmax(&logits);
    Ok(ForwardTrace { mode, conv4, conv4_len, pooled, pooled_arg, logits, probs })
}

/// Eval-mode class probabilities and the lowest-index argmax.
pub fn predict(params: &NetworkParams, x: &[f64]) -> Result<(Vec<f64>, usize)> {
    let t = forward(params, x, ForwardMode::Eval)?;
    let c = argmax(&t.probs);
    Ok((t.probs, c))
}

/// Inverted-dropout mask: zero with probability `p`, else `1/(1-p)`.
pub fn dropout_mask(n: usize, p: f64, rng: &mut impl Rng) -> Vec<f64> {
    let keep = 1.0 / (1.0 - p);
    (0..n).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect()
}

/// How batch statistics and dropout behave during a gradient evaluation.
pub enum GradMode<'a> {
    /// Batch statistics and a dropout mask sampled per example from `rng`.
    Train { dropout_p: f64, rng: &'a mut ChaCha8Rng },
    /// Running statistics and no dropout.
    Eval,
}

/// Batch mean and unbiased variance of each BN layer from a training step.
pub type BnBatchStats = [(Vec<f64>, Vec<f64>); 3];

#[derive(Clone, Debug)]
pub struct BatchGradient {
    pub loss: f64,
    /// `∂(mean batch loss)/∂θ`.
    pub grad: Vec<f64>,
    pub probs: Vec<Vec<f64>>,
    pub bn_stats: Option<BnBatchStats>,
}

struct Example {
    c1: Vec<f64>,
    c2: Vec<f64>,
    p1_arg: Vec<u32>,
    xhat1: Vec<f64>,
    n1: Vec<f64>,
    c3: Vec<f64>,
    c4: Vec<f64>,
    g_arg: Vec<u32>,
}

/// Statistics of a BN layer over a batch of `c×l` maps.
fn batch_stats(xs: &[&[f64]], c: usize) -> (Vec<f64>, Vec<f64>, usize) {
    let l = xs[0].len() / c;
    let n = xs.len() * l;
    let mut mean = vec![0.0; c];
    for x in xs {
        for ch in 0..c {
            mean[ch] += x[ch * l..(ch + 1) * l].iter().sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; c];
    for x in xs {
        for ch in 0..c {
            var[ch] += x[ch * l..(ch + 1) * l].iter().map(|v| (v - mean[ch]).powi(2)).sum::<f64>();
        }
    }
    var.iter_mut().for_each(|v| *v /= n as f64);
    (mean, var, n)
}

fn unbiased(var: &[f64], n: usize) -> Vec<f64> {
    let f = if n > 1 { n as f64 / (n - 1) as f64 } else { 1.0 };
    var.iter().map(|v| v * f).collect()
}

/// Returns input gradients and accumulates `dγ`, `dβ`. With `batch` the
/// normalisation statistics depend on the inputs; otherwise they are constants.
#[allow(clippy::too_many_arguments)]
fn bn_backward(
    dys: &[Vec<f64>],
    xhats: &[&[f64]],
    c: usize,
    gamma: &[f64],
    inv: &[f64],
    batch: bool,
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) -> Vec<Vec<f64>> {
    let l = dys[0].len() / c;
    let n = (dys.len() * l) as f64;
    let mut sum_dy = vec![0.0; c];
    let mut sum_dyx = vec![0.0; c];
    for (dy, xh) in dys.iter().zip(xhats) {
        for ch in 0..c {
            for t in 0..l {
                let i = ch * l + t;
                sum_dy[ch] += dy[i];
                sum_dyx[ch] += dy[i] * xh[i];
            }
        }
    }
    for ch in 0..c {
        dgamma[ch] += sum_dyx[ch];
        dbeta[ch] += sum_dy[ch];
    }
    dys.iter()
        .zip(xhats)
        .map(|(dy, xh)| {
            let mut dx = vec![0.0; dy.len()];
            for ch in 0..c {
                let s = gamma[ch] * inv[ch];
                for t in 0..l {
                    let i = ch * l + t;
                    dx[i] = if batch { s / n * (n * dy[i] - sum_dy[ch] - xh[i] * sum_dyx[ch]) } else { s * dy[i] };
                }
            }
            dx
        })
        .collect()
}

/// Loss and exact gradient of the mean cross-entropy over a batch.
pub fn batch_gradient(
    params: &NetworkParams,
    xs: &[&[f64]],
    ys: &[usize],
    mode: GradMode<'_>,
) -> Result<BatchGradient> {
    let arch = &params.arch;
    let lay = &params.layout;
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::Shape { expected: xs.len().max(1), actual: ys.len() });
    }
    for x in xs {
        if x.len() != arch.input_len {
            return Err(Error::Shape { expected: arch.input_len, actual: x.len() });
        }
    }
    if let Some(&y) = ys.iter().find(|&&y| y >= arch.n_classes) {
        return Err(Error::Shape { expected: arch.n_classes, actual: y });
    }
    let b = xs.len();
    let [c1, c2, c3, c4] = arch.channels;
    let (k, hidden, m) = (arch.kernel, arch.hidden, arch.n_classes);
    let train = matches!(mode, GradMode::Train { .. });
    let p = |r: &std::ops::Range<usize>| params.slice(r);

    // trunk up to the first max pool
    let mut fronts: Vec<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<u32>)> = xs
        .par_iter()
        .map(|x| {
            let mut h1 = Vec::new();
            conv_forward(x, 1, p(&lay.conv1_w), p(&lay.conv1_b), k, &mut h1);
            relu_inplace(&mut h1);
            let mut h2 = Vec::new();
            conv_forward(&h1, c1, p(&lay.conv2_w), p(&lay.conv2_b), k, &mut h2);
            relu_inplace(&mut h2);
            let mut pool = Vec::new();
            let mut arg = Vec::new();
            maxpool_forward(&h2, c2, arch.pool, &mut pool, &mut arg);
            (h1, h2, pool, arg)
        })
        .collect();

    // batch norm 1
    let (mean1, var1, n1_count) = if train {
        let pools: Vec<&[f64]> = fronts.iter().map(|f| f.2.as_slice()).collect();
        batch_stats(&pools, c2)
    } else {
        (params.running.mean[0].clone(), params.running.var[0].clone(), 0)
    };
    let inv1 = inv_std(&var1);
    let xhat1s: Vec<Vec<f64>> =
        fronts.iter_mut().map(|f| bn_apply(&mut f.2, c2, p(&lay.bn1_gamma), p(&lay.bn1_beta), &mean1, &inv1)).collect();

    let mut exs: Vec<Example> = fronts
        .into_par_iter()
        .zip(xhat1s)
        .map(|((c1v, c2v, n1, p1_arg), xhat1)| {
            let mut h3 = Vec::new();
            conv_forward(&n1, c2, p(&lay.conv3_w), p(&lay.conv3_b), k, &mut h3);
            relu_inplace(&mut h3);
            let mut h4 = Vec::new();
            conv_forward(&h3, c3, p(&lay.conv4_w), p(&lay.conv4_b), k, &mut h4);
            relu_inplace(&mut h4);
            Example { c1: c1v, c2: c2v, p1_arg, xhat1, n1, c3: h3, c4: h4, g_arg: Vec::new() }
        })
        .collect();

    // global max pool + batch norm 2
    let mut pooled: Vec<Vec<f64>> = exs
        .iter_mut()
        .map(|e| {
            let (g, arg) = global_max(&e.c4, c4);
            e.g_arg = arg;
            g
        })
        .collect();
    let (mean2, var2, n2_count) = if train {
        let refs: Vec<&[f64]> = pooled.iter().map(Vec::as_slice).collect();
        batch_stats(&refs, c4)
    } else {
        (params.running.mean[1].clone(), params.running.var[1].clone(), 0)
    };
    let inv2 = inv_std(&var2);
    let xhat2s: Vec<Vec<f64>> =
        pooled.iter_mut().map(|g| bn_apply(g, c4, p(&lay.bn2_gamma), p(&lay.bn2_beta), &mean2, &inv2)).collect();
    let n2s = pooled;

    // FC1 + ReLU + dropout
    let pre1: Vec<Vec<f64>> = n2s.iter().map(|n2| dense_forward(n2, p(&lay.fc1_w), p(&lay.fc1_b))).collect();
    let masks: Vec<Vec<f64>> = match mode {
        GradMode::Train { dropout_p, rng } => (0..b).map(|_| dropout_mask(hidden, dropout_p, rng)).collect(),
        GradMode::Eval => vec![vec![1.0; hidden]; b],
    };
    let mut hds: Vec<Vec<f64>> = pre1
        .iter()
        .zip(&masks)
        .map(|(pre, mask)| pre.iter().zip(mask).map(|(&v, &mk)| v.max(0.0) * mk).collect())
        .collect();

    // batch norm 3
    let (mean3, var3, n3_count) = if train {
        let refs: Vec<&[f64]> = hds.iter().map(Vec::as_slice).collect();
        batch_stats(&refs, hidden)
    } else {
        (params.running.mean[2].clone(), params.running.var[2].clone(), 0)
    };
    let inv3 = inv_std(&var3);
    let xhat3s: Vec<Vec<f64>> =
        hds.iter_mut().map(|h| bn_apply(h, hidden, p(&lay.bn3_gamma), p(&lay.bn3_beta), &mean3, &inv3)).collect();
    let n3s = hds;

    let probs: Vec<Vec<f64>> = n3s.iter().map(|n3| softmax(&dense_forward(n3, p(&lay.fc2_w), p(&lay.fc2_b)))).collect();
    let loss = batch_loss(&probs, ys);

    // ---- backward ----
    let mut grad = vec![0.0; lay.total];
    let bf = b as f64;
    let mut dn3s = Vec::with_capacity(b);
    for (i, pr) in probs.iter().enumerate() {
        let mut dz: Vec<f64> = pr.iter().map(|v| v / bf).collect();
        dz[ys[i]] -= 1.0 / bf;
        let (gw, gb) = split_two(&mut grad, &lay.fc2_w, &lay.fc2_b);
        dn3s.push(dense_backward(&n3s[i], p(&lay.fc2_w), &dz, gw, gb));
    }
    debug_assert_eq!(probs[0].len(), m);
    let xh3: Vec<&[f64]> = xhat3s.iter().map(Vec::as_slice).collect();
    let dhds = {
        let (dg, db) = split_two(&mut grad, &lay.bn3_gamma, &lay.bn3_beta);
        bn_backward(&dn3s, &xh3, hidden, p(&lay.bn3_gamma), &inv3, train, dg, db)
    };
    let mut dn2s = Vec::with_capacity(b);
    for i in 0..b {
        let dpre: Vec<f64> =
            (0..hidden).map(|j| if pre1[i][j] > 0.0 { dhds[i][j] * masks[i][j] } else { 0.0 }).collect();
        let (gw, gb) = split_two(&mut grad, &lay.fc1_w, &lay.fc1_b);
        dn2s.push(dense_backward(&n2s[i], p(&lay.fc1_w), &dpre, gw, gb));
    }
    let xh2: Vec<&[f64]> = xhat2s.iter().map(Vec::as_slice).collect();
    let dgs = {
        let (dg, db) = split_two(&mut grad, &lay.bn2_gamma, &lay.bn2_beta);
        bn_backward(&dn2s, &xh2, c4, p(&lay.bn2_gamma), &inv2, train, dg, db)
    };

    // conv4 / conv3, sparse through the global max
    let total = lay.total;
    let back_a: Vec<(Vec<f64>, Vec<f64>)> = exs
        .par_iter()
        .zip(&dgs)
        .map(|(e, dg)| {
            let mut part = vec![0.0; total];
            let l4 = e.c4.len() / c4;
            let mut dc4 = vec![0.0; e.c4.len()];
            for ch in 0..c4 {
                let t = e.g_arg[ch] as usize;
                if e.c4[ch * l4 + t] > 0.0 {
                    dc4[ch * l4 + t] = dg[ch];
                }
            }
            let mut dc3 = vec![0.0; e.c3.len()];
            {
                let (gw, gb) = split_two(&mut part, &lay.conv4_w, &lay.conv4_b);
                conv_backward(&e.c3, c3, p(&lay.conv4_w), k, &dc4, c4, gw, gb, Some(&mut dc3));
            }
            relu_backward(&e.c3, &mut dc3);
            let mut dn1 = vec![0.0; e.n1.len()];
            {
                let (gw, gb) = split_two(&mut part, &lay.conv3_w, &lay.conv3_b);
                conv_backward(&e.n1, c2, p(&lay.conv3_w), k, &dc3, c3, gw, gb, Some(&mut dn1));
            }
            (part, dn1)
        })
        .collect();
    let (mut parts, dn1s): (Vec<Vec<f64>>, Vec<Vec<f64>>) = back_a.into_iter().unzip();

    let xh1: Vec<&[f64]> = exs.iter().map(|e| e.xhat1.as_slice()).collect();
    let dp1s = {
        let (dg, db) = split_two(&mut grad, &lay.bn1_gamma, &lay.bn1_beta);
        bn_backward(&dn1s, &xh1, c2, p(&lay.bn1_gamma), &inv1, train, dg, db)
    };

    parts.par_iter_mut().zip(&exs).zip(&dp1s).zip(xs).for_each(|(((part, e), dp1), x)| {
        let mut dc2 = vec![0.0; e.c2.len()];
        maxpool_backward(&e.p1_arg, c2, e.c2.len() / c2, dp1, &mut dc2);
        relu_backward(&e.c2, &mut dc2);
        let mut dc1 = vec![0.0; e.c1.len()];
        {
            let (gw, gb) = split_two(part, &lay.conv2_w, &lay.conv2_b);
            conv_backward(&e.c1, c1, p(&lay.conv2_w), k, &dc2, c2, gw, gb, Some(&mut dc1));
        }
        relu_backward(&e.c1, &mut dc1);
        let (gw, gb) = split_two(part, &lay.conv1_w, &lay.conv1_b);
        conv_backward(x, 1, p(&lay.conv1_w), k, &dc1, c1, gw, gb, None);
    });

    for part in &parts {
        grad.iter_mut().zip(part).for_each(|(g, v)| *g += v);
    }

    let bn_stats = train.then(|| {
        [(mean1, unbiased(&var1, n1_count)), (mean2, unbiased(&var2, n2_count)), (mean3, unbiased(&var3, n3_count))]
    });
    Ok(BatchGradient { loss, grad, probs, bn_stats })
}

/// Disjoint mutable views of two ranges of `buf`, `a` before `b`.
fn split_two<'b>(
    buf: &'b mut [f64],
    a: &std::ops::Range<usize>,
    b: &std::ops::Range<usize>,
) -> (&'b mut [f64], &'b mut [f64]) {
    debug_assert!(a.end <= b.start);
    let (lo, hi) = buf.split_at_mut(b.start);
    (&mut lo[a.clone()], &mut hi[..b.len()])
}

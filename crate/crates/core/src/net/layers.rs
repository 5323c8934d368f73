//! Channel-major 1-D primitives. A feature map with `c` channels of length
//! `l` is a flat slice where channel `i` occupies `[i*l, (i+1)*l)`.

/// Valid (unpadded) stride-1 convolution; `w` is `[cout][cin][k]`.
///
/// Every output position accumulates bias, then `ic`, then tap in a fixed
/// order, so computing a sub-range from a sub-slice of the input yields
/// bit-identical values.
pub(crate) fn conv_forward(input: &[f64], cin: usize, w: &[f64], b: &[f64], k: usize, out: &mut Vec<f64>) -> usize {
    let lin = input.len() / cin;
    let lout = lin + 1 - k;
    let cout = b.len();
    out.clear();
    out.resize(cout * lout, 0.0);
    for oc in 0..cout {
        let o = &mut out[oc * lout..(oc + 1) * lout];
        o.fill(b[oc]);
        for ic in 0..cin {
            let row = &input[ic * lin..(ic + 1) * lin];
            for j in 0..k {
                let wv = w[(oc * cin + ic) * k + j];
                for (ot, &iv) in o.iter_mut().zip(&row[j..j + lout]) {
                    *ot += wv * iv;
                }
            }
        }
    }
    lout
}

/// Backward pass of [`conv_forward`], skipping zero output gradients.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward(
    input: &[f64],
    cin: usize,
    w: &[f64],
    k: usize,
    gout: &[f64],
    cout: usize,
    gw: &mut [f64],
    gb: &mut [f64],
    mut gin: Option<&mut [f64]>,
) {
    let lin = input.len() / cin;
    let lout = gout.len() / cout;
    for oc in 0..cout {
        for t in 0..lout {
            let g = gout[oc * lout + t];
            if g == 0.0 {
                continue;
            }
            gb[oc] += g;
            for ic in 0..cin {
                let base = (oc * cin + ic) * k;
                for j in 0..k {
                    gw[base + j] += g * input[ic * lin + t + j];
                    if let Some(gi) = gin.as_deref_mut() {
                        gi[ic * lin + t + j] += g * w[base + j];
                    }
                }
            }
        }
    }
}

pub(crate) fn relu_inplace(v: &mut [f64]) {
    v.iter_mut().for_each(|x| {
        if *x < 0.0 {
            *x = 0.0
        }
    });
}

/// Zeroes gradients where the post-ReLU activation is not positive.
pub(crate) fn relu_backward(act: &[f64], grad: &mut [f64]) {
    for (g, &a) in grad.iter_mut().zip(act) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Stride-1 max pool of width `k`; records the first arg-max.
pub(crate) fn maxpool_forward(input: &[f64], c: usize, k: usize, out: &mut Vec<f64>, arg: &mut Vec<u32>) {
    let lin = input.len() / c;
    let lout = lin + 1 - k;
    out.clear();
    arg.clear();
    for ch in 0..c {
        let row = &input[ch * lin..(ch + 1) * lin];
        for t in 0..lout {
            let mut best = row[t];
            let mut at = t;
            for j in 1..k {
                if row[t + j] > best {
                    best = row[t + j];
                    at = t + j;
                }
            }
            out.push(best);
            arg.push(at as u32);
        }
    }
}

pub(crate) fn maxpool_backward(arg: &[u32], c: usize, lin: usize, gout: &[f64], gin: &mut [f64]) {
    let lout = gout.len() / c;
    for ch in 0..c {
        for t in 0..lout {
            let g = gout[ch * lout + t];
            if g != 0.0 {
                gin[ch * lin + arg[ch * lout + t] as usize] += g;
            }
        }
    }
}

/// Per-channel maximum over time with its first position.
pub(crate) fn global_max(input: &[f64], c: usize) -> (Vec<f64>, Vec<u32>) {
    let l = input.len() / c;
    (0..c)
        .map(|ch| {
            let row = &input[ch * l..(ch + 1) * l];
            let mut best = row[0];
            let mut at = 0;
            for (t, &v) in row.iter().enumerate().skip(1) {
                if v > best {
                    best = v;
                    at = t;
                }
            }
            (best, at as u32)
        })
        .unzip()
}

/// `out = W·x + b` for `W` stored `[out][in]`.
pub(crate) fn dense_forward(x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let nin = x.len();
    b.iter()
        .enumerate()
        .map(|(o, &bias)| {
            let row = &w[o * nin..(o + 1) * nin];
            row.iter().zip(x).fold(bias, |acc, (a, b)| acc + a * b)
        })
        .collect()
}

/// Accumulates weight/bias gradients and returns `Wᵀ·gout`.
pub(crate) fn dense_backward(x: &[f64], w: &[f64], gout: &[f64], gw: &mut [f64], gb: &mut [f64]) -> Vec<f64> {
    let nin = x.len();
    let mut gin = vec![0.0; nin];
    for (o, &g) in gout.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        gb[o] += g;
        let row = &w[o * nin..(o + 1) * nin];
        let grow = &mut gw[o * nin..(o + 1) * nin];
        for i in 0..nin {
            grow[i] += g * x[i];
            gin[i] += g * row[i];
        }
    }
    gin
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

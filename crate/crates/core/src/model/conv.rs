//! Convolution / affine / GLU / dropout / average-pool block.
//!
//! Activations are channel-major `[channel][freq][time]` so the innermost loops
//! run over the (long) time axis.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct BlockSpec {
    pub cin: usize,
    pub cout: usize,
    pub pool_t: usize,
    pub pool_f: usize,
    pub conv_w: usize,
    pub norm_scale: usize,
    pub norm_shift: usize,
    pub glu_w: usize,
    pub glu_b: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct BlockCache {
    pub input: Vec<f64>,
    pub freq: usize,
    pub time: usize,
    pub conv: Vec<f64>,
    pub normed: Vec<f64>,
    pub gate: Vec<f64>,
    pub linear: Vec<f64>,
    pub mask: Option<Vec<f64>>,
}

/// 3x3 "same" convolution, no bias.
pub(crate) fn conv3x3(input: &[f64], cin: usize, cout: usize, freq: usize, time: usize, w: &[f64]) -> Vec<f64> {
    let plane = freq * time;
    let mut out = vec![0.0; cout * plane];
    for co in 0..cout {
        let o = &mut out[co * plane..(co + 1) * plane];
        for ci in 0..cin {
            let a = &input[ci * plane..(ci + 1) * plane];
            for kf in 0..3 {
                for kt in 0..3 {
                    let wv = w[((co * cin + ci) * 3 + kf) * 3 + kt];
                    let (t0, t1) = span(kt, time);
                    for f in 0..freq {
                        let fs = f as isize + kf as isize - 1;
                        if fs < 0 || fs >= freq as isize {
                            continue;
                        }
                        let src = &a[fs as usize * time..(fs as usize + 1) * time];
                        let dst = &mut o[f * time..(f + 1) * time];
                        let shift = kt as isize - 1;
                        for t in t0..t1 {
                            dst[t] += wv * src[(t as isize + shift) as usize];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Valid output range along an axis of length `n` for kernel offset `k` (0..3).
#[inline]
fn span(k: usize, n: usize) -> (usize, usize) {
    match k {
        0 => (1.min(n), n),
        1 => (0, n),
        _ => (0, n.saturating_sub(1)),
    }
}

/// Gradients of [`conv3x3`]: accumulates into `dw` and, when requested, returns the input gradient.
pub(crate) fn conv3x3_backward(
    input: &[f64],
    dout: &[f64],
    cin: usize,
    cout: usize,
    freq: usize,
    time: usize,
    w: &[f64],
    dw: &mut [f64],
    need_input_grad: bool,
) -> Option<Vec<f64>> {
    let plane = freq * time;
    let mut din = if need_input_grad { Some(vec![0.0; cin * plane]) } else { None };
    for co in 0..cout {
        let g = &dout[co * plane..(co + 1) * plane];
        for ci in 0..cin {
            let a = &input[ci * plane..(ci + 1) * plane];
            for kf in 0..3 {
                for kt in 0..3 {
                    let widx = ((co * cin + ci) * 3 + kf) * 3 + kt;
                    let wv = w[widx];
                    let (t0, t1) = span(kt, time);
                    let shift = kt as isize - 1;
                    let mut acc = 0.0;
                    for f in 0..freq {
                        let fs = f as isize + kf as isize - 1;
                        if fs < 0 || fs >= freq as isize {
                            continue;
                        }
                        let fs = fs as usize;
                        let src = &a[fs * time..(fs + 1) * time];
                        let gr = &g[f * time..(f + 1) * time];
                        for t in t0..t1 {
                            acc += gr[t] * src[(t as isize + shift) as usize];
                        }
                        if let Some(din) = din.as_mut() {
                            let d = &mut din[ci * plane + fs * time..ci * plane + (fs + 1) * time];
                            for t in t0..t1 {
                                d[(t as isize + shift) as usize] += wv * gr[t];
                            }
                        }
                    }
                    dw[widx] += acc;
                }
            }
        }
    }
    din
}

/// Gated linear unit over `[channel][position]` data:
/// `out[c'] = (sum_c weight[c'][c] * x[c] + bias[c']) * sigmoid(x[c'])`.
pub fn glu(input: &[f64], channels: usize, positions: usize, weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let (linear, gate) = glu_parts(input, channels, positions, weight, bias);
    linear.iter().zip(&gate).map(|(l, s)| l * s).collect()
}

pub(crate) fn glu_parts(
    input: &[f64],
    channels: usize,
    positions: usize,
    weight: &[f64],
    bias: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let mut linear = vec![0.0; channels * positions];
    for co in 0..channels {
        let dst = &mut linear[co * positions..(co + 1) * positions];
        dst.iter_mut().for_each(|v| *v = bias[co]);
        for ci in 0..channels {
            let wv = weight[co * channels + ci];
            let src = &input[ci * positions..(ci + 1) * positions];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += wv * s;
            }
        }
    }
    let gate = input.iter().map(|&v| sigmoid(v)).collect();
    (linear, gate)
}

/// Forward through one block; returns pooled output `[cout][freq/pf][time/pt]` and the cache.
pub(crate) fn block_forward(
    spec: &BlockSpec,
    params: &[f64],
    input: Vec<f64>,
    freq: usize,
    time: usize,
    mask: Option<Vec<f64>>,
) -> (Vec<f64>, usize, usize, BlockCache) {
    let plane = freq * time;
    let w = &params[spec.conv_w..spec.conv_w + spec.cout * spec.cin * 9];
    let conv = conv3x3(&input, spec.cin, spec.cout, freq, time, w);
    let scale = &params[spec.norm_scale..spec.norm_scale + spec.cout];
    let shift = &params[spec.norm_shift..spec.norm_shift + spec.cout];
    let mut normed = conv.clone();
    for co in 0..spec.cout {
        normed[co * plane..(co + 1) * plane].iter_mut().for_each(|v| *v = scale[co] * *v + shift[co]);
    }
    let gw = &params[spec.glu_w..spec.glu_w + spec.cout * spec.cout];
    let gb = &params[spec.glu_b..spec.glu_b + spec.cout];
    let (linear, gate) = glu_parts(&normed, spec.cout, plane, gw, gb);
    let mut act: Vec<f64> = linear.iter().zip(&gate).map(|(l, s)| l * s).collect();
    if let Some(m) = mask.as_ref() {
        act.iter_mut().zip(m).for_each(|(a, m)| *a *= m);
    }
    let (pf, pt) = (spec.pool_f, spec.pool_t);
    let (of, ot) = (freq / pf, time / pt);
    let mut out = vec![0.0; spec.cout * of * ot];
    let inv = 1.0 / (pf * pt) as f64;
    for co in 0..spec.cout {
        for f2 in 0..of {
            let dst = &mut out[(co * of + f2) * ot..(co * of + f2 + 1) * ot];
            for df in 0..pf {
                let src = &act[co * plane + (f2 * pf + df) * time..co * plane + (f2 * pf + df + 1) * time];
                for (t2, d) in dst.iter_mut().enumerate() {
                    let base = t2 * pt;
                    *d += src[base..base + pt].iter().sum::<f64>();
                }
            }
            dst.iter_mut().for_each(|d| *d *= inv);
        }
    }
    let cache = BlockCache { input, freq, time, conv, normed, gate, linear, mask };
    (out, of, ot, cache)
}

/// Backward through one block. `dout` matches the pooled output. Accumulates
/// parameter gradients into `grad` and returns the input gradient if asked.
pub(crate) fn block_backward(
    spec: &BlockSpec,
    params: &[f64],
    cache: &BlockCache,
    dout: &[f64],
    grad: &mut [f64],
    need_input_grad: bool,
) -> Option<Vec<f64>> {
    let (freq, time) = (cache.freq, cache.time);
    let plane = freq * time;
    let (pf, pt) = (spec.pool_f, spec.pool_t);
    let (of, ot) = (freq / pf, time / pt);
    let inv = 1.0 / (pf * pt) as f64;
    let cout = spec.cout;

    // un-pool, then dropout
    let mut dact = vec![0.0; cout * plane];
    for co in 0..cout {
        for f2 in 0..of {
            let src = &dout[(co * of + f2) * ot..(co * of + f2 + 1) * ot];
            for df in 0..pf {
                let base = co * plane + (f2 * pf + df) * time;
                for (t2, &g) in src.iter().enumerate() {
                    for k in 0..pt {
                        dact[base + t2 * pt + k] = g * inv;
                    }
                }
            }
        }
    }
    if let Some(m) = cache.mask.as_ref() {
        dact.iter_mut().zip(m).for_each(|(d, m)| *d *= m);
    }

    // GLU
    let gw = &params[spec.glu_w..spec.glu_w + cout * cout];
    let dlin: Vec<f64> = dact.iter().zip(&cache.gate).map(|(d, s)| d * s).collect();
    let mut dnormed: Vec<f64> = dact
        .iter()
        .zip(&cache.linear)
        .zip(&cache.gate)
        .map(|((d, l), s)| d * l * s * (1.0 - s))
        .collect();
    for co in 0..cout {
        let dl = &dlin[co * plane..(co + 1) * plane];
        grad[spec.glu_b + co] += dl.iter().sum::<f64>();
        for ci in 0..cout {
            let x = &cache.normed[ci * plane..(ci + 1) * plane];
            grad[spec.glu_w + co * cout + ci] += dl.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            let wv = gw[co * cout + ci];
            let dn = &mut dnormed[ci * plane..(ci + 1) * plane];
            dn.iter_mut().zip(dl).for_each(|(d, g)| *d += wv * g);
        }
    }

    // per-channel affine
    let scale = &params[spec.norm_scale..spec.norm_scale + cout];
    let mut dconv = dnormed;
    for co in 0..cout {
        let dn = &mut dconv[co * plane..(co + 1) * plane];
        let c = &cache.conv[co * plane..(co + 1) * plane];
        grad[spec.norm_scale + co] += dn.iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
        grad[spec.norm_shift + co] += dn.iter().sum::<f64>();
        dn.iter_mut().for_each(|d| *d *= scale[co]);
    }

    let wlen = cout * spec.cin * 9;
    let w = &params[spec.conv_w..spec.conv_w + wlen];
    let dw = &mut grad[spec.conv_w..spec.conv_w + wlen];
    conv3x3_backward(&cache.input, &dconv, spec.cin, cout, freq, time, w, dw, need_input_grad)
}

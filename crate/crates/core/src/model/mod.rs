//! Convolutional-recurrent sound event detector with manual gradients.
//!
//! Pipeline per clip: a stack of `conv 3x3 -> channel affine -> GLU -> dropout
//! -> average pool` blocks collapses the frequency axis, a bidirectional GRU
//! stack runs over the pooled frames, and a linear + sigmoid head emits
//! per-frame class probabilities. All parameters live in one flat vector
//! described by a [`Layout`].

mod conv;
mod gru;
mod optim;

pub use conv::glu;
pub use optim::{adam_step, ema_update, warmup_decay, OptState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS, DEFAULT_LR_CAP};

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{invalid, Result};
use crate::grid::{FeatureGrid, Grid, PosteriorGrid};
use crate::math::{self, sigmoid};
use crate::rng::{self, LabRng};
use conv::{BlockCache, BlockSpec};
use gru::{GruCache, GruSpec};

/// Pre-sigmoid clamp; keeps every posterior strictly inside (0, 1).
pub const LOGIT_CLAMP: f64 = 30.0;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConvBlockConfig {
    pub out_channels: usize,
    /// `(time, freq)` average-pool stride.
    pub pool: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelConfig {
    pub n_mel_in: usize,
    pub conv_blocks: Vec<ConvBlockConfig>,
    pub recurrent_hidden: usize,
    pub recurrent_layers: usize,
    pub n_classes: usize,
    pub dropout_rate: f64,
}

impl ModelConfig {
    /// Builds blocks with the given channels; every block but the last halves
    /// the frequency axis, the last collapses what remains. The first two
    /// blocks halve time.
    pub fn with_channels(n_mel_in: usize, n_classes: usize, channels: &[usize], hidden: usize) -> Self {
        let mut freq = n_mel_in;
        let last = channels.len().saturating_sub(1);
        let conv_blocks = channels
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let pf = if i == last { freq.max(1) } else if freq >= 2 { 2 } else { 1 };
                freq /= pf;
                let pt = if i < 2 { 2 } else { 1 };
                ConvBlockConfig { out_channels: c, pool: (pt, pf) }
            })
            .collect();
        ModelConfig { n_mel_in, conv_blocks, recurrent_hidden: hidden, recurrent_layers: 1, n_classes, dropout_rate: 0.5 }
    }

    /// Three blocks (16/32/64 channels), time pooled x4, 32 recurrent units.
    pub fn desk(n_mel_in: usize, n_classes: usize) -> Self {
        Self::with_channels(n_mel_in, n_classes, &[16, 32, 64], 32)
    }

    /// Seven blocks, two recurrent layers of 128 units, 128 Mel channels.
    pub fn full_scale(n_classes: usize) -> Self {
        let chans = [16, 32, 64, 128, 128, 128, 128];
        let pools = [(2, 2), (2, 2), (1, 2), (1, 2), (1, 2), (1, 2), (1, 2)];
        ModelConfig {
            n_mel_in: 128,
            conv_blocks: chans
                .iter()
                .zip(pools)
                .map(|(&c, p)| ConvBlockConfig { out_channels: c, pool: p })
                .collect(),
            recurrent_hidden: 128,
            recurrent_layers: 2,
            n_classes,
            dropout_rate: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv_blocks.is_empty() {
            return Err(invalid("model needs at least one conv block"));
        }
        if self.n_mel_in == 0 || self.n_classes == 0 || self.recurrent_hidden == 0 || self.recurrent_layers == 0 {
            return Err(invalid("model dimensions must be positive"));
        }
        if self.conv_blocks.iter().any(|b| b.out_channels == 0 || b.pool.0 == 0 || b.pool.1 == 0) {
            return Err(invalid("conv blocks need positive channels and pool strides"));
        }
        if self.freq_after_stack() != 1 {
            return Err(invalid(format!(
                "frequency pooling must collapse {} channels to 1, got {}",
                self.n_mel_in,
                self.freq_after_stack()
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(invalid("dropout rate must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn freq_after_stack(&self) -> usize {
        self.conv_blocks.iter().fold(self.n_mel_in, |f, b| f / b.pool.1)
    }

    /// Product of time strides; output frames = input frames / this.
    pub fn time_pool(&self) -> usize {
        self.conv_blocks.iter().map(|b| b.pool.0).product()
    }

    pub fn output_frames(&self, input_frames: usize) -> usize {
        self.conv_blocks.iter().fold(input_frames, |t, b| t / b.pool.0)
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let mut n = 0;
        let mut cin = 1;
        for b in &self.conv_blocks {
            let c = b.out_channels;
            n += c * cin * 9 + 2 * c + c * c + c;
            cin = c;
        }
        let h = self.recurrent_hidden;
        for l in 0..self.recurrent_layers {
            let d = if l == 0 { cin } else { 2 * h };
            n += 2 * (3 * h * d + 3 * h * h + 6 * h);
        }
        n + self.n_classes * 2 * h + self.n_classes
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LayoutEntry {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl LayoutEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Named, contiguous, non-overlapping slices of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Layout {
    entries: Vec<LayoutEntry>,
    total: usize,
}

impl Layout {
    pub fn from_entries(entries: Vec<LayoutEntry>) -> Result<Self> {
        let mut offset = 0;
        for e in &entries {
            if e.offset != offset {
                return Err(invalid(format!("layout entry {} does not start at {offset}", e.name)));
            }
            offset += e.len();
        }
        Ok(Layout { entries, total: offset })
    }

    pub fn entries(&self) -> &[LayoutEntry] {
        &self.entries
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn get(&self, name: &str) -> Option<&LayoutEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    fn push(&mut self, name: String, shape: Vec<usize>) -> usize {
        let offset = self.total;
        let e = LayoutEntry { name, offset, shape };
        self.total += e.len();
        self.entries.push(e);
        offset
    }
}

/// Flat parameter vector plus its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub layout: Arc<Layout>,
    pub values: Vec<f64>,
}

impl ModelParams {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn slice(&self, name: &str) -> Option<&[f64]> {
        self.layout.get(name).map(|e| &self.values[e.offset..e.offset + e.len()])
    }
}

#[derive(Debug, Clone, Copy)]
struct HeadSpec {
    w: usize,
    b: usize,
    input: usize,
}

/// Dropout masks (entries 0 or `1/(1-p)`), one per dropout site.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DropoutMasks {
    pub conv: Vec<Option<Vec<f64>>>,
    pub recurrent: Vec<Option<Vec<f64>>>,
}

/// How dropout is handled in a forward pass.
#[derive(Debug)]
pub enum Mode<'a> {
    /// No dropout, no cache.
    Eval,
    /// Fresh masks drawn from the generator; cache returned.
    Train(&'a mut LabRng),
}

/// Activations kept for the backward pass of one train-mode forward.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    blocks: Vec<BlockCache>,
    gru_inputs: Vec<Vec<f64>>,
    gru_caches: Vec<[GruCache; 2]>,
    head_input: Vec<f64>,
    probs: Grid,
    raw_logits: Vec<f64>,
    masks: DropoutMasks,
    out_frames: usize,
}

impl ForwardCache {
    pub fn masks(&self) -> &DropoutMasks {
        &self.masks
    }

    pub fn output(&self) -> &PosteriorGrid {
        &self.probs
    }
}

/// Network topology bound to a config; stateless apart from offsets.
#[derive(Debug, Clone)]
pub struct Network {
    cfg: ModelConfig,
    layout: Arc<Layout>,
    blocks: Vec<BlockSpec>,
    grus: Vec<[GruSpec; 2]>,
    head: HeadSpec,
}

enum MaskSource<'a> {
    None,
    Sample(&'a mut LabRng),
    Fixed(&'a DropoutMasks),
}

impl Network {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut layout = Layout { entries: Vec::new(), total: 0 };
        let mut blocks = Vec::new();
        let mut cin = 1;
        for (i, b) in cfg.conv_blocks.iter().enumerate() {
            let c = b.out_channels;
            let conv_w = layout.push(format!("conv{i}.weight"), vec![c, cin, 3, 3]);
            let norm_scale = layout.push(format!("conv{i}.norm_scale"), vec![c]);
            let norm_shift = layout.push(format!("conv{i}.norm_shift"), vec![c]);
            let glu_w = layout.push(format!("conv{i}.glu_weight"), vec![c, c]);
            let glu_b = layout.push(format!("conv{i}.glu_bias"), vec![c]);
            blocks.push(BlockSpec { cin, cout: c, pool_t: b.pool.0, pool_f: b.pool.1, conv_w, norm_scale, norm_shift, glu_w, glu_b });
            cin = c;
        }
        let h = cfg.recurrent_hidden;
        let mut grus = Vec::new();
        for l in 0..cfg.recurrent_layers {
            let d = if l == 0 { cin } else { 2 * h };
            let mut dir = |name: &str, reverse: bool| {
                let wi = layout.push(format!("gru{l}.{name}.w_input"), vec![3 * h, d]);
                let wh = layout.push(format!("gru{l}.{name}.w_hidden"), vec![3 * h, h]);
                let bi = layout.push(format!("gru{l}.{name}.b_input"), vec![3 * h]);
                let bh = layout.push(format!("gru{l}.{name}.b_hidden"), vec![3 * h]);
                GruSpec { input: d, hidden: h, wi, wh, bi, bh, reverse }
            };
            let fwd = dir("fwd", false);
            let bwd = dir("bwd", true);
            grus.push([fwd, bwd]);
        }
        let w = layout.push("head.weight".into(), vec![cfg.n_classes, 2 * h]);
        let b = layout.push("head.bias".into(), vec![cfg.n_classes]);
        debug_assert_eq!(layout.total, cfg.param_count());
        Ok(Network { cfg: cfg.clone(), layout: Arc::new(layout), blocks, grus, head: HeadSpec { w, b, input: 2 * h } })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn zeros(&self) -> ModelParams {
        ModelParams { layout: self.layout.clone(), values: vec![0.0; self.layout.total] }
    }

    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` weights, unit affine scales, zero biases.
    pub fn init_params(&self, seed: u64) -> ModelParams {
        let mut r = rng::seeded(seed);
        let mut p = self.zeros();
        for e in self.layout.entries() {
            let slot = &mut p.values[e.offset..e.offset + e.len()];
            if e.name.ends_with("norm_scale") {
                slot.iter_mut().for_each(|v| *v = 1.0);
            } else if e.shape.len() >= 2 {
                let fan_in: usize = e.shape[1..].iter().product();
                let s = 1.0 / math::sqrt(fan_in as f64);
                slot.iter_mut().for_each(|v| *v = r.gen_range(-s..s));
            }
        }
        p
    }

    fn check(&self, params: &ModelParams, x: &FeatureGrid) -> Result<()> {
        if *params.layout != *self.layout {
            return Err(invalid("parameters do not match the network layout"));
        }
        if x.channels() != self.cfg.n_mel_in {
            return Err(invalid(format!("expected {} input channels, got {}", self.cfg.n_mel_in, x.channels())));
        }
        if self.cfg.output_frames(x.frames()) == 0 {
            return Err(invalid("clip too short for the time pooling"));
        }
        Ok(())
    }

    pub fn forward(&self, params: &ModelParams, x: &FeatureGrid, mode: Mode<'_>) -> Result<(PosteriorGrid, Option<ForwardCache>)> {
        self.check(params, x)?;
        match mode {
            Mode::Eval => Ok((self.run(params, x, MaskSource::None).probs, None)),
            Mode::Train(r) => {
                let cache = self.run(params, x, MaskSource::Sample(r));
                Ok((cache.probs.clone(), Some(cache)))
            }
        }
    }

    /// Train-mode forward with externally supplied dropout masks.
    pub fn forward_with_masks(&self, params: &ModelParams, x: &FeatureGrid, masks: &DropoutMasks) -> Result<(PosteriorGrid, ForwardCache)> {
        self.check(params, x)?;
        let cache = self.run(params, x, MaskSource::Fixed(masks));
        Ok((cache.probs.clone(), cache))
    }

    /// Eval-mode forward that returns a cache anyway (no dropout).
    pub fn forward_cached(&self, params: &ModelParams, x: &FeatureGrid) -> Result<ForwardCache> {
        self.check(params, x)?;
        Ok(self.run(params, x, MaskSource::None))
    }

    fn run(&self, params: &ModelParams, x: &FeatureGrid, mut masks: MaskSource<'_>) -> ForwardCache {
        let p = &params.values;
        let keep = 1.0 - self.cfg.dropout_rate;
        let make_mask = |site: Option<&Option<Vec<f64>>>, len: usize, masks: &mut MaskSource<'_>| -> Option<Vec<f64>> {
            match masks {
                MaskSource::None => None,
                MaskSource::Fixed(_) => site.cloned().flatten(),
                MaskSource::Sample(r) => {
                    if self.cfg.dropout_rate == 0.0 {
                        None
                    } else {
                        let scale = 1.0 / keep;
                        let mut m = vec![0.0; len];
                        for v in m.iter_mut() {
                            if r.gen::<f64>() < keep {
                                *v = scale;
                            }
                        }
                        Some(m)
                    }
                }
            }
        };
        let fixed = match &masks {
            MaskSource::Fixed(m) => Some((*m).clone()),
            _ => None,
        };
        let mut used = DropoutMasks::default();

        // [freq][time] single input channel
        let (mut freq, mut time) = (x.channels(), x.frames());
        let mut act = vec![0.0; freq * time];
        for t in 0..time {
            for (f, &v) in x.data.row(t).iter().enumerate() {
                act[f * time + t] = v;
            }
        }
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for (i, spec) in self.blocks.iter().enumerate() {
            let site = fixed.as_ref().and_then(|m| m.conv.get(i));
            let mask = make_mask(site, spec.cout * freq * time, &mut masks);
            used.conv.push(mask.clone());
            let (out, of, ot, cache) = conv::block_forward(spec, p, act, freq, time, mask);
            blocks.push(cache);
            act = out;
            freq = of;
            time = ot;
        }
        // freq == 1: act is [channel][time]; make it time-major
        let cl = self.blocks.last().map_or(1, |b| b.cout);
        let len = time;
        let mut seq = vec![0.0; len * cl];
        for c in 0..cl {
            for t in 0..len {
                seq[t * cl + c] = act[c * len + t];
            }
        }
        let h = self.cfg.recurrent_hidden;
        let mut gru_inputs = Vec::with_capacity(self.grus.len());
        let mut gru_caches = Vec::with_capacity(self.grus.len());
        for (l, [fwd, bwd]) in self.grus.iter().enumerate() {
            let (of, cf) = fwd.forward(p, &seq, len);
            let (ob, cb) = bwd.forward(p, &seq, len);
            let mut y = vec![0.0; len * 2 * h];
            for t in 0..len {
                y[t * 2 * h..t * 2 * h + h].copy_from_slice(&of[t * h..(t + 1) * h]);
                y[t * 2 * h + h..(t + 1) * 2 * h].copy_from_slice(&ob[t * h..(t + 1) * h]);
            }
            let site = fixed.as_ref().and_then(|m| m.recurrent.get(l));
            let mask = make_mask(site, y.len(), &mut masks);
            if let Some(m) = mask.as_ref() {
                y.iter_mut().zip(m).for_each(|(v, m)| *v *= m);
            }
            used.recurrent.push(mask);
            gru_inputs.push(core::mem::replace(&mut seq, y));
            gru_caches.push([cf, cb]);
        }
        let hw = &p[self.head.w..self.head.w + self.cfg.n_classes * self.head.input];
        let hb = &p[self.head.b..self.head.b + self.cfg.n_classes];
        let nc = self.cfg.n_classes;
        let mut raw = vec![0.0; len * nc];
        let mut probs = Grid::zeros(len, nc);
        for t in 0..len {
            let y = &seq[t * self.head.input..(t + 1) * self.head.input];
            for c in 0..nc {
                let w = &hw[c * self.head.input..(c + 1) * self.head.input];
                let z = hb[c] + w.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
                raw[t * nc + c] = z;
                probs.set(t, c, sigmoid(z.clamp(-LOGIT_CLAMP, LOGIT_CLAMP)));
            }
        }
        ForwardCache { blocks, gru_inputs, gru_caches, head_input: seq, probs, raw_logits: raw, masks: used, out_frames: len }
    }

    /// Reverse-mode gradient of `sum(grad_out * forward(params))` w.r.t. the parameters.
    pub fn backward(&self, params: &ModelParams, cache: &ForwardCache, grad_out: &Grid) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.layout.total];
        self.backward_into(params, cache, grad_out, &mut grad)?;
        Ok(grad)
    }

    /// As [`Network::backward`] but accumulates into `grad`.
    pub fn backward_into(&self, params: &ModelParams, cache: &ForwardCache, grad_out: &Grid, grad: &mut [f64]) -> Result<()> {
        let nc = self.cfg.n_classes;
        if grad_out.shape() != (cache.out_frames, nc) {
            return Err(invalid(format!(
                "output gradient shape {:?} != ({}, {nc})",
                grad_out.shape(),
                cache.out_frames
            )));
        }
        if grad.len() != self.layout.total || *params.layout != *self.layout {
            return Err(invalid("gradient buffer or parameters do not match the layout"));
        }
        let p = &params.values;
        let len = cache.out_frames;
        let hin = self.head.input;
        let hw = &p[self.head.w..self.head.w + nc * hin];
        let mut dseq = vec![0.0; len * hin];
        for t in 0..len {
            let y = &cache.head_input[t * hin..(t + 1) * hin];
            for c in 0..nc {
                let z = cache.raw_logits[t * nc + c];
                if z.abs() > LOGIT_CLAMP {
                    continue;
                }
                let pr = cache.probs.get(t, c);
                let dz = grad_out.get(t, c) * pr * (1.0 - pr);
                if dz == 0.0 {
                    continue;
                }
                grad[self.head.b + c] += dz;
                let gw = &mut grad[self.head.w + c * hin..self.head.w + (c + 1) * hin];
                gw.iter_mut().zip(y).for_each(|(g, v)| *g += dz * v);
                let w = &hw[c * hin..(c + 1) * hin];
                dseq[t * hin..(t + 1) * hin].iter_mut().zip(w).for_each(|(g, w)| *g += dz * w);
            }
        }
        let h = self.cfg.recurrent_hidden;
        for l in (0..self.grus.len()).rev() {
            if let Some(m) = cache.masks.recurrent[l].as_ref() {
                dseq.iter_mut().zip(m).for_each(|(g, m)| *g *= m);
            }
            let [fwd, bwd] = &self.grus[l];
            let input = &cache.gru_inputs[l];
            let mut dfo = vec![0.0; len * h];
            let mut dbo = vec![0.0; len * h];
            for t in 0..len {
                dfo[t * h..(t + 1) * h].copy_from_slice(&dseq[t * 2 * h..t * 2 * h + h]);
                dbo[t * h..(t + 1) * h].copy_from_slice(&dseq[t * 2 * h + h..(t + 1) * 2 * h]);
            }
            let dxf = fwd.backward(p, input, len, &cache.gru_caches[l][0], &dfo, grad);
            let dxb = bwd.backward(p, input, len, &cache.gru_caches[l][1], &dbo, grad);
            dseq = dxf.iter().zip(&dxb).map(|(a, b)| a + b).collect();
        }
        // back to [channel][freq=1][time]
        let cl = self.blocks.last().map_or(1, |b| b.cout);
        let mut dact = vec![0.0; cl * len];
        for t in 0..len {
            for c in 0..cl {
                dact[c * len + t] = dseq[t * cl + c];
            }
        }
        for (i, spec) in self.blocks.iter().enumerate().rev() {
            match conv::block_backward(spec, p, &cache.blocks[i], &dact, grad, i > 0) {
                Some(d) => dact = d,
                None => break,
            }
        }
        Ok(())
    }
}

/// Per-class mean over frames.
pub fn clip_pool(p: &PosteriorGrid) -> Vec<f64> {
    p.column_means()
}

/// Gradient of a loss w.r.t. frame outputs given its gradient w.r.t. the pooled vector.
pub fn clip_pool_backward(frames: usize, dpooled: &[f64]) -> Grid {
    let mut g = Grid::zeros(frames, dpooled.len());
    if frames == 0 {
        return g;
    }
    let inv = 1.0 / frames as f64;
    for t in 0..frames {
        g.row_mut(t).iter_mut().zip(dpooled).for_each(|(o, d)| *o = d * inv);
    }
    g
}

#[cfg(test)]
mod tests;

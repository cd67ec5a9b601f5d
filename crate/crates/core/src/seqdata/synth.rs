//! Synthetic multi-label scenes standing in for a recorded corpus.
//!
//! Every class owns a fixed spectral envelope (two Gaussian bumps over the
//! channel axis) and an amplitude-modulation rate. Events are placed on a
//! tilted noise floor with short linear onset/offset ramps. Two scene configs
//! with different tilt, envelope offset and noise give a "synthetic" domain for
//! the strong split and a "real" domain for the others.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;

use super::weaken;
use crate::error::{invalid, Result};
use crate::grid::{FeatureGrid, Grid, StrongLabelGrid, WeakLabel};
use crate::math;
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SceneConfig {
    pub n_classes: usize,
    pub n_channels: usize,
    /// Seconds.
    pub clip_len: f64,
    pub fps: f64,
    /// Per-class `(min, max)` event duration in seconds.
    pub durations: Vec<(f64, f64)>,
    pub prototype_seed: u64,
    pub max_polyphony: usize,
    pub background_level: f64,
    pub noise_std: f64,
    /// Mean number of events per clip (Poisson).
    pub event_rate: f64,
    /// `(min, max)` event amplitude.
    pub event_gain: (f64, f64),
    /// Linear background slope across channels.
    pub spectral_tilt: f64,
    /// Offset (channels) applied to every class envelope.
    pub prototype_shift: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig::with_classes(3)
    }
}

impl SceneConfig {
    pub fn with_classes(n_classes: usize) -> Self {
        let presets = [(0.3, 1.0), (1.0, 3.0), (2.0, 6.0)];
        SceneConfig {
            n_classes,
            n_channels: 16,
            clip_len: 10.0,
            fps: 40.0,
            durations: (0..n_classes).map(|c| presets[c % presets.len()]).collect(),
            prototype_seed: 20_210_531,
            max_polyphony: 2,
            background_level: -1.0,
            noise_std: 0.3,
            event_rate: 3.0,
            event_gain: (1.5, 3.0),
            spectral_tilt: 0.0,
            prototype_shift: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(invalid("scene needs at least two classes"));
        }
        if self.max_polyphony < 1 {
            return Err(invalid("max_polyphony must be at least 1"));
        }
        if self.durations.len() != self.n_classes {
            return Err(invalid("one duration range per class is required"));
        }
        if self.durations.iter().any(|&(lo, hi)| !(lo > 0.0 && hi >= lo && hi < self.clip_len)) {
            return Err(invalid("duration ranges must be positive and shorter than the clip"));
        }
        if self.n_channels == 0 || !(self.fps > 0.0) || !(self.clip_len > 0.0) {
            return Err(invalid("channels, fps and clip_len must be positive"));
        }
        if self.event_rate < 0.0 || self.noise_std < 0.0 {
            return Err(invalid("event rate and noise level must be non-negative"));
        }
        Ok(())
    }

    pub fn frames(&self) -> usize {
        math::round(self.clip_len * self.fps) as usize
    }
}

/// One synthesized event; frame range is half-open.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthEvent {
    pub class: usize,
    pub onset_frame: usize,
    pub offset_frame: usize,
}

struct Prototype {
    bumps: [(f64, f64, f64); 2],
    mod_rate: f64,
    mod_depth: f64,
}

fn prototype(cfg: &SceneConfig, class: usize) -> Prototype {
    let mut r = rng::seeded(rng::derive(cfg.prototype_seed, 0xC1A5, class as u64));
    let f = cfg.n_channels as f64;
    let bump = |r: &mut rng::LabRng| {
        let center = r.gen_range(0.1 * f..0.9 * f);
        let width = r.gen_range(f / 12.0..f / 6.0).max(0.5);
        let amp = r.gen_range(0.6..1.0);
        (center, width, amp)
    };
    let bumps = [bump(&mut r), bump(&mut r)];
    Prototype { bumps, mod_rate: r.gen_range(0.5..4.0), mod_depth: r.gen_range(0.0..0.5) }
}

impl Prototype {
    fn envelope(&self, ch: f64, shift: f64) -> f64 {
        self.bumps
            .iter()
            .map(|&(c, w, a)| {
                let d = ch - c - shift;
                a * math::exp(-d * d / (2.0 * w * w))
            })
            .sum()
    }
}

fn polyphony_ok(events: &[SynthEvent], cand: &SynthEvent, max_polyphony: usize) -> bool {
    // same-class events keep at least one silent frame between them
    if events
        .iter()
        .any(|e| e.class == cand.class && e.onset_frame <= cand.offset_frame && cand.onset_frame <= e.offset_frame)
    {
        return false;
    }
    (cand.onset_frame..cand.offset_frame).all(|t| {
        let active = events.iter().filter(|e| e.onset_frame <= t && t < e.offset_frame).count();
        active < max_polyphony
    })
}

/// Scene plus the list of events that were placed in it.
pub fn synth_scene_events(seed: u64, cfg: &SceneConfig) -> Result<(FeatureGrid, StrongLabelGrid, Vec<SynthEvent>)> {
    cfg.validate()?;
    let frames = cfg.frames();
    if frames == 0 {
        return Err(invalid("scene has no frames"));
    }
    let mut r = rng::seeded(seed);
    let n_events = rng::poisson(&mut r, cfg.event_rate);
    let mut events: Vec<SynthEvent> = Vec::with_capacity(n_events);
    for _ in 0..n_events {
        for _attempt in 0..20 {
            let class = r.gen_range(0..cfg.n_classes);
            let (lo, hi) = cfg.durations[class];
            let dur = if hi > lo { r.gen_range(lo..hi) } else { lo };
            let onset = r.gen_range(0.0..(cfg.clip_len - dur));
            let on = math::round(onset * cfg.fps) as usize;
            let off = (math::round((onset + dur) * cfg.fps) as usize).min(frames);
            if off <= on {
                continue;
            }
            let cand = SynthEvent { class, onset_frame: on, offset_frame: off };
            if polyphony_ok(&events, &cand, cfg.max_polyphony) {
                events.push(cand);
                break;
            }
        }
    }
    events.sort_by_key(|e| (e.onset_frame, e.class));

    let chans = cfg.n_channels;
    let mut data = Grid::zeros(frames, chans);
    let denom = if chans > 1 { (chans - 1) as f64 } else { 1.0 };
    for t in 0..frames {
        for ch in 0..chans {
            let tilt = cfg.spectral_tilt * (ch as f64 / denom - 0.5);
            data.set(t, ch, cfg.background_level + tilt + cfg.noise_std * rng::normal(&mut r));
        }
    }
    let protos: Vec<Prototype> = (0..cfg.n_classes).map(|c| prototype(cfg, c)).collect();
    let mut labels = StrongLabelGrid::zeros(frames, cfg.n_classes);
    for e in &events {
        let p = &protos[e.class];
        let gain = r.gen_range(cfg.event_gain.0..=cfg.event_gain.1);
        let phase = r.gen_range(0.0..2.0 * PI);
        let len = e.offset_frame - e.onset_frame;
        let ramp = 3usize.min(len.div_ceil(2)).max(1);
        for t in e.onset_frame..e.offset_frame {
            let k = t - e.onset_frame;
            let edge = (k + 1).min(len - k);
            let ramp_w = (edge as f64 / ramp as f64).min(1.0);
            let time = t as f64 / cfg.fps;
            let modulation = 1.0 + p.mod_depth * math::sin(2.0 * PI * p.mod_rate * time + phase);
            for ch in 0..chans {
                let v = data.get(t, ch) + gain * ramp_w * modulation * p.envelope(ch as f64, cfg.prototype_shift);
                data.set(t, ch, v);
            }
            labels.activate(t, e.class);
        }
    }
    Ok((FeatureGrid::new(data, cfg.fps)?, labels, events))
}

/// Deterministic scene for `seed`.
pub fn synth_scene(seed: u64, cfg: &SceneConfig) -> Result<(FeatureGrid, StrongLabelGrid)> {
    synth_scene_events(seed, cfg).map(|(x, y, _)| (x, y))
}

/// A clip with an id and a label of type `L` (`()` for unlabeled data).
#[derive(Debug, Clone, PartialEq)]
pub struct Clip<L> {
    pub id: String,
    pub features: FeatureGrid,
    pub label: L,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub strong: Vec<Clip<StrongLabelGrid>>,
    pub weak: Vec<Clip<WeakLabel>>,
    pub unlabeled: Vec<Clip<()>>,
    pub validation: Vec<Clip<StrongLabelGrid>>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        if self.unlabeled.len() < self.weak.len() {
            return Err(invalid("unlabeled split must be at least as large as the weak split"));
        }
        let mut ids: Vec<&str> = self
            .strong
            .iter()
            .map(|c| c.id.as_str())
            .chain(self.weak.iter().map(|c| c.id.as_str()))
            .chain(self.unlabeled.iter().map(|c| c.id.as_str()))
            .chain(self.validation.iter().map(|c| c.id.as_str()))
            .collect();
        let n = ids.len();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != n {
            return Err(invalid("clip ids must be unique across splits"));
        }
        Ok(())
    }

    pub fn n_classes(&self) -> Option<usize> {
        self.strong
            .first()
            .map(|c| c.label.classes())
            .or_else(|| self.weak.first().map(|c| c.label.classes()))
            .or_else(|| self.validation.first().map(|c| c.label.classes()))
    }
}

/// Split sizes plus the two scene domains.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct DatasetConfig {
    pub seed: u64,
    pub strong: usize,
    pub weak: usize,
    pub unlabeled: usize,
    pub validation: usize,
    /// Domain of the strong split.
    pub synthetic: SceneConfig,
    /// Domain of the weak, unlabeled and validation splits.
    pub real: SceneConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::desk(3)
    }
}

impl DatasetConfig {
    /// 200 / 120 / 1000 / 100 clips, roughly the proportions of a typical
    /// strong / weak / unlabeled / validation corpus at desk scale.
    pub fn desk(n_classes: usize) -> Self {
        let synthetic = SceneConfig::with_classes(n_classes);
        let real = SceneConfig {
            background_level: -0.6,
            noise_std: 0.45,
            spectral_tilt: 1.2,
            prototype_shift: 1.0,
            event_gain: (1.2, 2.6),
            ..SceneConfig::with_classes(n_classes)
        };
        DatasetConfig { seed: 1, strong: 200, weak: 120, unlabeled: 1000, validation: 100, synthetic, real }
    }

    pub fn validate(&self) -> Result<()> {
        self.synthetic.validate()?;
        self.real.validate()?;
        if self.synthetic.n_classes != self.real.n_classes
            || self.synthetic.n_channels != self.real.n_channels
            || self.synthetic.frames() != self.real.frames()
        {
            return Err(invalid("synthetic and real domains must agree on classes, channels and frames"));
        }
        if self.unlabeled < self.weak {
            return Err(invalid("unlabeled count must be at least the weak count"));
        }
        Ok(())
    }
}

const STREAM_STRONG: u64 = 1;
const STREAM_WEAK: u64 = 2;
const STREAM_UNLABELED: u64 = 3;
const STREAM_VALIDATION: u64 = 4;

/// Builds all four splits; clip `i` of a split uses a seed derived from `(seed, split, i)`.
pub fn generate_dataset(cfg: &DatasetConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut ds = Dataset::default();
    for i in 0..cfg.strong {
        let (x, y) = synth_scene(rng::derive(cfg.seed, STREAM_STRONG, i as u64), &cfg.synthetic)?;
        ds.strong.push(Clip { id: format!("strong_{i:05}"), features: x, label: y });
    }
    for i in 0..cfg.weak {
        let (x, y) = synth_scene(rng::derive(cfg.seed, STREAM_WEAK, i as u64), &cfg.real)?;
        ds.weak.push(Clip { id: format!("weak_{i:05}"), features: x, label: weaken(&y) });
    }
    for i in 0..cfg.unlabeled {
        let (x, _) = synth_scene(rng::derive(cfg.seed, STREAM_UNLABELED, i as u64), &cfg.real)?;
        ds.unlabeled.push(Clip { id: format!("unlabeled_{i:05}"), features: x, label: () });
    }
    for i in 0..cfg.validation {
        let (x, y) = synth_scene(rng::derive(cfg.seed, STREAM_VALIDATION, i as u64), &cfg.real)?;
        ds.validation.push(Clip { id: format!("validation_{i:05}"), features: x, label: y });
    }
    ds.validate()?;
    Ok(ds)
}

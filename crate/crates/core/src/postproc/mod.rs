//! From posterior grids to event intervals.
//!
//! Global post-processing uses one threshold and one median filter for every
//! class. Classwise post-processing fits, per class and on weakly labeled
//! clips, a tail-based threshold for a tolerated false-negative rate `alpha`
//! and a filter length at `beta` percent of the mean detected duration.

mod em;
mod evt;
mod nelder_mead;
mod sweep;

pub use em::{em_two_cluster, ClusterSplit, Component, EM_MAX_ITERATIONS, EM_MIN_SAMPLES, EM_TOLERANCE};
pub use evt::{
    evt_threshold, fit_gpd, fit_tail, gpd_log_likelihood, quantile, threshold_from_fit, EvtFit, EvtOutcome, MIN_EXCESSES,
    SHAPE_EPS, TAIL_QUANTILE,
};
pub use nelder_mead::{nelder_mead, Minimum, NelderMeadConfig};
pub use sweep::{best_point, global_macro_f, sweep_classwise, ScoredClip, SweepPoint};

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::grid::{Grid, PosteriorGrid, WeakLabel};
use crate::math::{self, logit, nearest_odd};

pub const GLOBAL_THRESHOLD: f64 = 0.5;
pub const GLOBAL_FILTER_SECONDS: f64 = 0.445;
pub const ALPHA_RANGE: (f64, f64) = (0.0002, 0.1);
pub const ALPHA_STEPS: usize = 10;
pub const BETA_RANGE: (f64, f64) = (5.0, 100.0);
pub const BETA_STEPS: usize = 20;

/// One detected or reference event, times in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EventInterval {
    pub class: usize,
    pub onset: f64,
    pub offset: f64,
}

impl EventInterval {
    pub fn new(class: usize, onset: f64, offset: f64) -> Result<Self> {
        if !(onset >= 0.0 && onset < offset && offset.is_finite()) {
            return Err(invalid(format!("interval needs 0 <= onset < offset, got [{onset}, {offset}]")));
        }
        Ok(EventInterval { class, onset, offset })
    }
}

/// Global median filter length in frames: nearest odd count to 445 ms.
pub fn global_filter_len(fps: f64) -> usize {
    nearest_odd(GLOBAL_FILTER_SECONDS * fps)
}

/// Log-spaced `alpha` search grid.
pub fn alpha_grid() -> Vec<f64> {
    log_space(ALPHA_RANGE.0, ALPHA_RANGE.1, ALPHA_STEPS)
}

pub fn log_space(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    if steps == 1 {
        return vec![lo];
    }
    let (a, b) = (math::ln(lo), math::ln(hi));
    (0..steps)
        .map(|i| match i {
            0 => lo,
            _ if i == steps - 1 => hi,
            _ => math::exp(a + (b - a) * i as f64 / (steps - 1) as f64),
        })
        .collect()
}

/// Linearly spaced `beta` search grid, in percent.
pub fn beta_grid() -> Vec<f64> {
    let (lo, hi) = BETA_RANGE;
    (0..BETA_STEPS).map(|i| lo + (hi - lo) * i as f64 / (BETA_STEPS - 1) as f64).collect()
}

/// `p > threshold` per class, as a 0/1 grid.
pub fn threshold_grid(p: &PosteriorGrid, thresholds: &[f64]) -> Result<Grid> {
    if thresholds.len() != p.cols() {
        return Err(invalid("one threshold per class required"));
    }
    let mut out = Grid::zeros(p.frames(), p.cols());
    for t in 0..p.frames() {
        for (c, (&v, &th)) in p.row(t).iter().zip(thresholds).enumerate() {
            if v > th {
                out.set(t, c, 1.0);
            }
        }
    }
    Ok(out)
}

/// Sliding binary median over an odd window with edge replication.
pub fn median_smooth(seq: &[bool], len: usize) -> Result<Vec<bool>> {
    if len == 0 || len % 2 == 0 {
        return Err(invalid(format!("median filter length must be odd, got {len}")));
    }
    let n = seq.len();
    if n == 0 || len == 1 {
        return Ok(seq.to_vec());
    }
    let half = len / 2;
    let at = |i: isize| seq[i.clamp(0, n as isize - 1) as usize] as usize;
    let mut count: usize = (-(half as isize)..=half as isize).map(at).sum();
    let mut out = Vec::with_capacity(n);
    for i in 0..n as isize {
        out.push(count > half);
        count = count + at(i + half as isize + 1) - at(i - half as isize);
    }
    Ok(out)
}

fn smooth_grid(binary: &Grid, lens: &[usize]) -> Result<Grid> {
    let mut out = binary.clone();
    for (c, &len) in lens.iter().enumerate() {
        let col: Vec<bool> = binary.column(c).iter().map(|&v| v > 0.5).collect();
        for (t, v) in median_smooth(&col, len)?.into_iter().enumerate() {
            out.set(t, c, if v { 1.0 } else { 0.0 });
        }
    }
    Ok(out)
}

/// Maximal runs of active frames as half-open intervals `[start/fps, (end+1)/fps)`.
pub fn extract_intervals(binary: &Grid, fps: f64) -> Vec<EventInterval> {
    let mut out = Vec::new();
    for c in 0..binary.cols() {
        for (start, end) in runs(binary, c) {
            out.push(EventInterval { class: c, onset: start as f64 / fps, offset: end as f64 / fps });
        }
    }
    out.sort_by(|a, b| a.onset.total_cmp(&b.onset).then(a.class.cmp(&b.class)));
    out
}

/// Half-open frame runs `[start, end)` of class `c`.
fn runs(binary: &Grid, c: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for t in 0..binary.frames() {
        let on = binary.get(t, c) > 0.5;
        match (on, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                out.push((s, t));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, binary.frames()));
    }
    out
}

/// Inverse of [`extract_intervals`]: frame `t` is active when its start lies in an interval.
pub fn rasterize(intervals: &[EventInterval], frames: usize, classes: usize, fps: f64) -> Result<Grid> {
    let mut g = Grid::zeros(frames, classes);
    for e in intervals {
        if e.class >= classes {
            return Err(invalid(format!("interval class {} out of range", e.class)));
        }
        let start = math::round(e.onset * fps).max(0.0) as usize;
        let end = (math::round(e.offset * fps) as usize).min(frames);
        for t in start..end {
            g.set(t, e.class, 1.0);
        }
    }
    Ok(g)
}

/// Per-class decision parameters.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClassParams {
    pub threshold: f64,
    pub filter_len: usize,
    pub evt: Option<EvtOutcome>,
    /// Mean detected run length in frames on the fitting clips, if any run was found.
    pub mean_run_frames: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClasswisePostprocParams {
    pub classes: Vec<ClassParams>,
}

impl ClasswisePostprocParams {
    /// The global settings expressed classwise.
    pub fn global(classes: usize, fps: f64) -> Self {
        let len = global_filter_len(fps);
        ClasswisePostprocParams {
            classes: (0..classes)
                .map(|_| ClassParams { threshold: GLOBAL_THRESHOLD, filter_len: len, evt: None, mean_run_frames: None })
                .collect(),
        }
    }

    pub fn thresholds(&self) -> Vec<f64> {
        self.classes.iter().map(|c| c.threshold).collect()
    }

    pub fn filter_lens(&self) -> Vec<usize> {
        self.classes.iter().map(|c| c.filter_len).collect()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, c) in self.classes.iter().enumerate() {
            if !(c.threshold > 0.0 && c.threshold < 1.0) {
                return Err(invalid(format!("class {i}: threshold {} outside (0, 1)", c.threshold)));
            }
            if c.filter_len % 2 == 0 {
                return Err(invalid(format!("class {i}: filter length {} is not odd", c.filter_len)));
            }
        }
        Ok(())
    }
}

/// Threshold, smooth and extract with per-class parameters.
pub fn classwise_postproc(p: &PosteriorGrid, params: &ClasswisePostprocParams, fps: f64) -> Result<Vec<EventInterval>> {
    if params.classes.len() != p.cols() {
        return Err(invalid(format!("parameters for {} classes, posterior has {}", params.classes.len(), p.cols())));
    }
    params.validate()?;
    let binary = threshold_grid(p, &params.thresholds())?;
    let smooth = smooth_grid(&binary, &params.filter_lens())?;
    Ok(extract_intervals(&smooth, fps))
}

/// Threshold 0.5 and a 445 ms median filter for every class.
pub fn global_postproc(p: &PosteriorGrid, fps: f64) -> Vec<EventInterval> {
    let binary = threshold_grid(p, &vec![GLOBAL_THRESHOLD; p.cols()]).expect("threshold count matches");
    let smooth = smooth_grid(&binary, &vec![global_filter_len(fps); p.cols()]).expect("odd filter length");
    extract_intervals(&smooth, fps)
}

/// Frame logits of class `c` from every clip whose weak label contains `c`.
pub fn collect_logit_samples(weak: &[(&PosteriorGrid, &WeakLabel)], class: usize) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (p, y) in weak {
        if class >= p.cols() || class >= y.classes() {
            return Err(invalid(format!("class {class} out of range")));
        }
        if y.contains(class) {
            out.extend(p.column(class).into_iter().map(logit));
        }
    }
    if out.is_empty() {
        return Err(Error::Empty(format!("no weak clip contains class {class}")));
    }
    Ok(out)
}

/// Mean run length of class `c` over the binary grids times `beta/100`, as an odd
/// frame count; the global length when there is no run.
pub fn estimate_filter_len(binary: &[&Grid], class: usize, beta: f64, fps: f64) -> Result<(usize, Option<f64>)> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(invalid("beta must be positive"));
    }
    let (mut total, mut count) = (0usize, 0usize);
    for g in binary {
        for (s, e) in runs(g, class) {
            total += e - s;
            count += 1;
        }
    }
    if count == 0 {
        return Ok((global_filter_len(fps), None));
    }
    let mean = total as f64 / count as f64;
    Ok((nearest_odd(mean * beta / 100.0), Some(mean)))
}

/// EVT threshold for one class from weak-clip posteriors.
pub fn fit_class_threshold(weak: &[(&PosteriorGrid, &WeakLabel)], class: usize, alpha: f64) -> Result<EvtOutcome> {
    let samples = match collect_logit_samples(weak, class) {
        Ok(s) => s,
        Err(Error::Empty(m)) => return Ok(EvtOutcome::Fallback { threshold: GLOBAL_THRESHOLD, reason: m }),
        Err(e) => return Err(e),
    };
    let split = match em_two_cluster(&samples) {
        Ok(s) => s,
        Err(e @ Error::Degenerate(_)) => return Ok(EvtOutcome::Fallback { threshold: GLOBAL_THRESHOLD, reason: format!("{e}") }),
        Err(e) => return Err(e),
    };
    evt_threshold(&split.target, alpha, GLOBAL_THRESHOLD)
}

/// Filter lengths for given per-class outcomes, measured on the weak clips that contain each class.
pub fn fit_filter_lens(
    weak: &[(&PosteriorGrid, &WeakLabel)],
    outcomes: &[EvtOutcome],
    beta: f64,
    fps: f64,
) -> Result<ClasswisePostprocParams> {
    let thresholds: Vec<f64> = outcomes.iter().map(EvtOutcome::threshold).collect();
    let binaries = weak.iter().map(|(p, _)| threshold_grid(p, &thresholds)).collect::<Result<Vec<_>>>()?;
    let mut classes = Vec::with_capacity(outcomes.len());
    for (c, outcome) in outcomes.iter().enumerate() {
        let grids: Vec<&Grid> = binaries.iter().zip(weak).filter(|(_, (_, y))| y.contains(c)).map(|(b, _)| b).collect();
        let (filter_len, mean_run_frames) = estimate_filter_len(&grids, c, beta, fps)?;
        classes.push(ClassParams { threshold: outcome.threshold(), filter_len, evt: Some(outcome.clone()), mean_run_frames });
    }
    Ok(ClasswisePostprocParams { classes })
}

/// Full classwise fit on weakly labeled clips.
pub fn fit_classwise_params(
    weak: &[(&PosteriorGrid, &WeakLabel)],
    n_classes: usize,
    alpha: f64,
    beta: f64,
    fps: f64,
) -> Result<ClasswisePostprocParams> {
    let outcomes = (0..n_classes).map(|c| fit_class_threshold(weak, c, alpha)).collect::<Result<Vec<_>>>()?;
    fit_filter_lens(weak, &outcomes, beta, fps)
}

/// Human-readable list of classes that fell back to the global threshold.
pub fn fallback_report(params: &ClasswisePostprocParams) -> Vec<String> {
    params
        .classes
        .iter()
        .enumerate()
        .filter_map(|(i, c)| match &c.evt {
            Some(EvtOutcome::Fallback { reason, .. }) => Some(format!("class {i}: {reason}")),
            _ => None,
        })
        .collect()
}

#[cfg(test)]
mod tests;

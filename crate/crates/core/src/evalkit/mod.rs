//! Collar-based event scoring, confusion counts, concurrency statistics and
//! Welch's t-test.

mod stats;

pub use stats::{regularized_incomplete_beta, student_t_two_sided, welch_t, WelchResult};

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::postproc::EventInterval;

pub const DEFAULT_COLLAR: f64 = 0.2;

/// How boundary errors are compared with the collar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum CollarRule {
    /// `|onset error| < collar` and `|offset error| < collar`.
    #[default]
    Symmetric,
    /// The detection may start up to a collar early and end up to a collar late:
    /// `ref.onset - collar < det.onset <= ref.onset` and `ref.offset <= det.offset < ref.offset + collar`.
    Literal,
}

impl CollarRule {
    pub fn boundaries_match(self, det: &EventInterval, reference: &EventInterval, collar: f64) -> bool {
        match self {
            CollarRule::Symmetric => (det.onset - reference.onset).abs() < collar && (det.offset - reference.offset).abs() < collar,
            CollarRule::Literal => {
                let lead = reference.onset - det.onset;
                let lag = det.offset - reference.offset;
                (0.0..collar).contains(&lead) && (0.0..collar).contains(&lag)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

/// Result of matching one clip (or the sum of many clips).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchResult {
    pub per_class: Vec<Counts>,
    /// `(detected index, reference index)` pairs, only for single-clip results.
    pub pairs: Vec<(usize, usize)>,
    /// One flag per reference, only for single-clip results.
    pub missed: Vec<bool>,
}

impl MatchResult {
    pub fn empty(n_classes: usize) -> Self {
        MatchResult { per_class: vec![Counts::default(); n_classes], pairs: Vec::new(), missed: Vec::new() }
    }

    /// Adds another clip's counts; pairs and flags are dropped.
    pub fn accumulate(&mut self, other: &MatchResult) {
        for (a, b) in self.per_class.iter_mut().zip(&other.per_class) {
            a.tp += b.tp;
            a.fp += b.fp;
            a.fn_ += b.fn_;
        }
        self.pairs.clear();
        self.missed.clear();
    }
}

fn check_classes(intervals: &[EventInterval], n_classes: usize) -> Result<()> {
    if let Some(e) = intervals.iter().find(|e| e.class >= n_classes) {
        return Err(invalid(alloc::format!("interval class {} >= {n_classes}", e.class)));
    }
    Ok(())
}

/// References in onset order (stable for ties).
fn onset_order(intervals: &[EventInterval]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..intervals.len()).collect();
    idx.sort_by(|&a, &b| intervals[a].onset.total_cmp(&intervals[b].onset));
    idx
}

/// Greedy one-to-one matching within one clip: references in onset order each take
/// the earliest-onset unmatched eligible detection.
fn greedy(
    detected: &[EventInterval],
    reference: &[EventInterval],
    mut eligible: impl FnMut(&EventInterval, &EventInterval) -> bool,
) -> (Vec<(usize, usize)>, Vec<bool>) {
    let det_order = onset_order(detected);
    let mut used = vec![false; detected.len()];
    let mut pairs = Vec::new();
    let mut missed = vec![true; reference.len()];
    for r in onset_order(reference) {
        if let Some(&d) = det_order.iter().find(|&&d| !used[d] && eligible(&detected[d], &reference[r])) {
            used[d] = true;
            missed[r] = false;
            pairs.push((d, r));
        }
    }
    (pairs, missed)
}

/// Matches the detections of one clip against its references.
pub fn match_events(
    detected: &[EventInterval],
    reference: &[EventInterval],
    n_classes: usize,
    collar: f64,
    rule: CollarRule,
) -> Result<MatchResult> {
    check_classes(detected, n_classes)?;
    check_classes(reference, n_classes)?;
    if !(collar > 0.0) {
        return Err(invalid("collar must be positive"));
    }
    let (pairs, missed) = greedy(detected, reference, |d, r| d.class == r.class && rule.boundaries_match(d, r, collar));
    let mut per_class = vec![Counts::default(); n_classes];
    for e in detected {
        per_class[e.class].fp += 1;
    }
    for e in reference {
        per_class[e.class].fn_ += 1;
    }
    for &(_, r) in &pairs {
        let c = reference[r].class;
        per_class[c].tp += 1;
        per_class[c].fp -= 1;
        per_class[c].fn_ -= 1;
    }
    Ok(MatchResult { per_class, pairs, missed })
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClassScore {
    pub counts: Counts,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ScoreReport {
    pub classes: Vec<ClassScore>,
    pub macro_f: f64,
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Precision, recall and F per class (0/0 := 0) and their unweighted mean F.
pub fn score(m: &MatchResult) -> ScoreReport {
    let classes: Vec<ClassScore> = m
        .per_class
        .iter()
        .map(|&counts| {
            let precision = ratio(counts.tp, counts.tp + counts.fp);
            let recall = ratio(counts.tp, counts.tp + counts.fn_);
            let f_score = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
            ClassScore { counts, precision, recall, f_score }
        })
        .collect();
    let macro_f = if classes.is_empty() { 0.0 } else { classes.iter().map(|c| c.f_score).sum::<f64>() / classes.len() as f64 };
    ScoreReport { classes, macro_f }
}

/// Matches every clip and scores the summed counts.
pub fn evaluate(
    clips: &[(&[EventInterval], &[EventInterval])],
    n_classes: usize,
    collar: f64,
    rule: CollarRule,
) -> Result<ScoreReport> {
    let mut total = MatchResult::empty(n_classes);
    for (det, reference) in clips {
        total.accumulate(&match_events(det, reference, n_classes, collar, rule)?);
    }
    Ok(score(&total))
}

/// `n_classes x (n_classes + 1)` counts: row = reference class, column = class of the
/// time-matched detection (class ignored when matching), last column = no match.
pub fn confusion_matrix(
    detected: &[EventInterval],
    reference: &[EventInterval],
    n_classes: usize,
    collar: f64,
    rule: CollarRule,
) -> Result<Vec<Vec<u64>>> {
    check_classes(detected, n_classes)?;
    check_classes(reference, n_classes)?;
    let (pairs, missed) = greedy(detected, reference, |d, r| rule.boundaries_match(d, r, collar));
    let mut m = vec![vec![0u64; n_classes + 1]; n_classes];
    for (d, r) in pairs {
        m[reference[r].class][detected[d].class] += 1;
    }
    for (r, miss) in missed.into_iter().enumerate() {
        if miss {
            m[reference[r].class][n_classes] += 1;
        }
    }
    Ok(m)
}

/// Sums per-clip confusion matrices.
pub fn add_confusion(total: &mut [Vec<u64>], clip: &[Vec<u64>]) {
    for (a, b) in total.iter_mut().zip(clip) {
        a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
    }
}

/// Percentages of reference intervals whose maximum concurrency is 1, 2, or more.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConcurrencyTable {
    /// Per class `[k = 1, k = 2, k > 2]` in percent (all zero for a class without events).
    pub per_class: Vec<[f64; 3]>,
    pub total: [f64; 3],
    pub per_class_counts: Vec<[u64; 3]>,
}

/// Largest number of distinct classes simultaneously active within `target`'s span.
pub fn max_concurrency(target: &EventInterval, clip: &[EventInterval]) -> usize {
    let overlapping: Vec<&EventInterval> = clip.iter().filter(|o| o.onset < target.offset && o.offset > target.onset).collect();
    let mut best = 1;
    for p in overlapping.iter().map(|o| o.onset.max(target.onset)) {
        let mut classes: Vec<usize> = overlapping.iter().filter(|o| o.onset <= p && p < o.offset).map(|o| o.class).collect();
        classes.sort_unstable();
        classes.dedup();
        best = best.max(classes.len());
    }
    best
}

pub fn concurrency_stats(clips: &[&[EventInterval]], n_classes: usize) -> Result<ConcurrencyTable> {
    let mut counts = vec![[0u64; 3]; n_classes];
    for clip in clips {
        check_classes(clip, n_classes)?;
        for e in clip.iter() {
            let k = max_concurrency(e, clip);
            counts[e.class][(k - 1).min(2)] += 1;
        }
    }
    let pct = |c: &[u64; 3]| {
        let n: u64 = c.iter().sum();
        if n == 0 {
            [0.0; 3]
        } else {
            [0, 1, 2].map(|i| 100.0 * c[i] as f64 / n as f64)
        }
    };
    let mut all = [0u64; 3];
    for c in &counts {
        for i in 0..3 {
            all[i] += c[i];
        }
    }
    Ok(ConcurrencyTable { per_class: counts.iter().map(pct).collect(), total: pct(&all), per_class_counts: counts })
}

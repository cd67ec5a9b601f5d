//! Grid search over `(alpha, beta)` for classwise post-processing.

use alloc::vec::Vec;

use super::{alpha_grid, beta_grid, classwise_postproc, fit_class_threshold, fit_filter_lens, global_postproc, EventInterval};
use crate::error::Result;
use crate::evalkit::{evaluate, CollarRule};
use crate::grid::{PosteriorGrid, WeakLabel};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SweepPoint {
    pub alpha: f64,
    pub beta: f64,
    pub macro_f: f64,
}

/// Posteriors and reference events of the clips a setting is scored on.
pub type ScoredClip<'a> = (&'a PosteriorGrid, &'a [EventInterval]);

fn score(detections: &[Vec<EventInterval>], eval: &[ScoredClip<'_>], n_classes: usize, collar: f64) -> Result<f64> {
    let pairs: Vec<(&[EventInterval], &[EventInterval])> =
        detections.iter().zip(eval).map(|(d, (_, r))| (d.as_slice(), *r)).collect();
    Ok(evaluate(&pairs, n_classes, collar, CollarRule::Symmetric)?.macro_f)
}

/// Macro F of global post-processing on `eval`.
pub fn global_macro_f(eval: &[ScoredClip<'_>], n_classes: usize, fps: f64, collar: f64) -> Result<f64> {
    let det: Vec<Vec<EventInterval>> = eval.iter().map(|(p, _)| global_postproc(p, fps)).collect();
    score(&det, eval, n_classes, collar)
}

/// Fits classwise parameters on `weak` for every grid point and scores them on
/// `eval`. Points are ordered alpha-major.
pub fn sweep_classwise(
    weak: &[(&PosteriorGrid, &WeakLabel)],
    eval: &[ScoredClip<'_>],
    n_classes: usize,
    fps: f64,
    collar: f64,
) -> Result<Vec<SweepPoint>> {
    let betas = beta_grid();
    let mut out = Vec::with_capacity(betas.len() * 10);
    for alpha in alpha_grid() {
        let outcomes = (0..n_classes).map(|c| fit_class_threshold(weak, c, alpha)).collect::<Result<Vec<_>>>()?;
        for &beta in &betas {
            let params = fit_filter_lens(weak, &outcomes, beta, fps)?;
            let det = eval.iter().map(|(p, _)| classwise_postproc(p, &params, fps)).collect::<Result<Vec<_>>>()?;
            out.push(SweepPoint { alpha, beta, macro_f: score(&det, eval, n_classes, collar)? });
        }
    }
    Ok(out)
}

/// Grid point with the highest macro F (first one on ties).
pub fn best_point(points: &[SweepPoint]) -> Option<SweepPoint> {
    points.iter().copied().fold(None, |best: Option<SweepPoint>, p| match best {
        Some(b) if b.macro_f >= p.macro_f => Some(b),
        _ => Some(p),
    })
}

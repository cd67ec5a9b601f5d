//! Training objectives and their gradients with respect to model outputs.
//!
//! A batch is laid out as strong clips, then weak clips, then unlabeled
//! clips ([`BatchView`]). Every term is a mean over the clips of its portion;
//! per-clip terms are means over grid elements.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::grid::{Grid, PosteriorGrid, PseudoLabelGrid, WeakLabel};
use crate::math::ln;
use crate::model::{clip_pool, clip_pool_backward};
use crate::seqdata::mix_grids;

/// Predictions are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` inside the log.
pub const BCE_CLAMP: f64 = 1e-7;
/// Upper bound on the self-referencing expectation weight.
pub const SRST_GAMMA_CAP: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossBreakdown {
    pub total: f64,
    pub classification_strong: f64,
    pub classification_weak: f64,
    /// Consistency (MT/ICT) or expectation (SRST, CRST unlabeled) term, unweighted.
    pub consistency: f64,
    /// δ, γ, or γ^s.
    pub consistency_weight: f64,
    /// CRST expectation term over the weak portion, unweighted.
    pub weak_expectation: f64,
    /// γ^w.
    pub weak_expectation_weight: f64,
}

impl LossBreakdown {
    fn finish(mut self) -> Self {
        self.total = self.combined();
        self
    }

    /// `strong + weak + w_c * consistency + w_w * weak_expectation`.
    pub fn combined(&self) -> f64 {
        self.classification_strong
            + self.classification_weak
            + self.consistency_weight * self.consistency
            + self.weak_expectation_weight * self.weak_expectation
    }
}

/// Student outputs and labels of one batch.
#[derive(Debug, Clone, Copy)]
pub struct BatchView<'a> {
    /// Strong, then weak, then unlabeled outputs.
    pub outputs: &'a [PosteriorGrid],
    /// Frame targets of the strong clips at the output frame rate.
    pub strong_targets: &'a [Grid],
    pub weak_targets: &'a [WeakLabel],
    pub n_unlabeled: usize,
}

impl<'a> BatchView<'a> {
    pub fn n_strong(&self) -> usize {
        self.strong_targets.len()
    }

    pub fn n_weak(&self) -> usize {
        self.weak_targets.len()
    }

    pub fn strong(&self) -> &'a [PosteriorGrid] {
        &self.outputs[..self.n_strong()]
    }

    pub fn weak(&self) -> &'a [PosteriorGrid] {
        &self.outputs[self.n_strong()..self.n_strong() + self.n_weak()]
    }

    pub fn unlabeled(&self) -> &'a [PosteriorGrid] {
        &self.outputs[self.n_strong() + self.n_weak()..]
    }

    fn validate(&self) -> Result<()> {
        if self.outputs.len() != self.n_strong() + self.n_weak() + self.n_unlabeled {
            return Err(invalid("batch output count does not match its portions"));
        }
        for (o, t) in self.strong().iter().zip(self.strong_targets) {
            if !o.same_shape(t) {
                return Err(invalid("strong target shape differs from output"));
            }
        }
        for (o, t) in self.weak().iter().zip(self.weak_targets) {
            if o.cols() != t.classes() {
                return Err(invalid("weak label length differs from class count"));
            }
        }
        Ok(())
    }

    fn zero_grads(&self) -> Vec<Grid> {
        self.outputs.iter().map(|o| Grid::zeros(o.frames(), o.cols())).collect()
    }
}

fn check_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(invalid("loss: shape mismatch"));
    }
    Ok(())
}

/// Mean binary cross entropy (natural log) over all elements.
pub fn bce(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_len(pred, target)?;
    Ok(bce_acc(pred, target, 0.0, &mut []))
}

/// Mean squared difference over all elements.
pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_len(pred, target)?;
    Ok(mse_acc(pred, target, 0.0, &mut []))
}

/// Returns mean BCE and adds `scale * d/dpred` into `grad` (skipped when `grad` is empty).
fn bce_acc(pred: &[f64], target: &[f64], scale: f64, grad: &mut [f64]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    let n = pred.len() as f64;
    let mut sum = 0.0;
    let want_grad = !grad.is_empty();
    for (i, (&p, &t)) in pred.iter().zip(target).enumerate() {
        let pc = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        sum -= t * ln(pc) + (1.0 - t) * ln(1.0 - pc);
        if want_grad && pc == p {
            grad[i] += scale * (-t / pc + (1.0 - t) / (1.0 - pc)) / n;
        }
    }
    sum / n
}

fn mse_acc(pred: &[f64], target: &[f64], scale: f64, grad: &mut [f64]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    let n = pred.len() as f64;
    let mut sum = 0.0;
    let want_grad = !grad.is_empty();
    for (i, (&p, &t)) in pred.iter().zip(target).enumerate() {
        let d = p - t;
        sum += d * d;
        if want_grad {
            grad[i] += scale * 2.0 * d / n;
        }
    }
    sum / n
}

/// Strong BCE and clip-pooled weak BCE, accumulated into `grads`.
fn classification(view: &BatchView<'_>, grads: &mut [Grid]) -> (f64, f64) {
    let ns = view.n_strong();
    let mut strong = 0.0;
    if ns > 0 {
        let scale = 1.0 / ns as f64;
        for (i, (o, t)) in view.strong().iter().zip(view.strong_targets).enumerate() {
            strong += scale * bce_acc(o.as_slice(), t.as_slice(), scale, grads[i].as_mut_slice());
        }
    }
    let nw = view.n_weak();
    let mut weak = 0.0;
    if nw > 0 {
        let scale = 1.0 / nw as f64;
        for (k, (o, y)) in view.weak().iter().zip(view.weak_targets).enumerate() {
            let pooled = clip_pool(o);
            let mut dpool = vec![0.0; pooled.len()];
            weak += scale * bce_acc(&pooled, y.as_slice(), scale, &mut dpool);
            let g = clip_pool_backward(o.frames(), &dpool);
            add_into(&mut grads[ns + k], &g);
        }
    }
    (strong, weak)
}

fn add_into(dst: &mut Grid, src: &Grid) {
    dst.as_mut_slice().iter_mut().zip(src.as_slice()).for_each(|(d, s)| *d += s);
}

/// Mean over `outputs` of per-clip MSE against `targets`, with gradient scaled by `weight`.
fn mean_mse(outputs: &[PosteriorGrid], targets: &[&Grid], weight: f64, grads: &mut [Grid]) -> Result<f64> {
    if outputs.len() != targets.len() {
        return Err(invalid("consistency: target count differs from outputs"));
    }
    if outputs.is_empty() {
        return Ok(0.0);
    }
    let scale = 1.0 / outputs.len() as f64;
    let mut acc = 0.0;
    for ((o, t), g) in outputs.iter().zip(targets).zip(grads.iter_mut()) {
        if !o.same_shape(t) {
            return Err(invalid("consistency: target shape differs from output"));
        }
        acc += scale * mse_acc(o.as_slice(), t.as_slice(), weight * scale, g.as_mut_slice());
    }
    Ok(acc)
}

/// Gradients with respect to each student output, aligned with `BatchView::outputs`.
pub type OutputGrads = Vec<Grid>;

/// Classification terms only; needs at least one labeled clip.
pub fn loss_supervised(view: &BatchView<'_>) -> Result<(LossBreakdown, OutputGrads)> {
    view.validate()?;
    if view.n_strong() + view.n_weak() == 0 {
        return Err(invalid("supervised loss needs strong or weak labels"));
    }
    let mut grads = view.zero_grads();
    let (s, w) = classification(view, &mut grads);
    let b = LossBreakdown { classification_strong: s, classification_weak: w, ..Default::default() };
    Ok((b.finish(), grads))
}

/// Classification plus `delta * MSE(student, teacher)` over every clip of the batch.
/// `teacher` is aligned with `view.outputs`.
pub fn loss_mt(view: &BatchView<'_>, teacher: &[PosteriorGrid], delta: f64) -> Result<(LossBreakdown, OutputGrads)> {
    view.validate()?;
    let mut grads = view.zero_grads();
    let (s, w) = classification(view, &mut grads);
    let targets: Vec<&Grid> = teacher.iter().collect();
    let c = mean_mse(view.outputs, &targets, delta, &mut grads)?;
    let b = LossBreakdown { classification_strong: s, classification_weak: w, consistency: c, consistency_weight: delta, ..Default::default() };
    Ok((b.finish(), grads))
}

/// Classification on `view` plus `delta * MSE(student(mix), Mix(teacher_a, teacher_b))`.
/// Returns gradients for `view.outputs` and for `mixed_outputs`.
pub fn loss_ict(
    view: &BatchView<'_>,
    mixed_outputs: &[PosteriorGrid],
    teacher_a: &[PosteriorGrid],
    teacher_b: &[PosteriorGrid],
    lambda: f64,
    delta: f64,
) -> Result<(LossBreakdown, OutputGrads, OutputGrads)> {
    view.validate()?;
    if teacher_a.len() != mixed_outputs.len() || teacher_b.len() != mixed_outputs.len() {
        return Err(invalid("ict: teacher and mixed output counts differ"));
    }
    let mut grads = view.zero_grads();
    let (s, w) = classification(view, &mut grads);
    let mixed_targets = teacher_a.iter().zip(teacher_b).map(|(a, b)| mix_grids(a, b, lambda)).collect::<Result<Vec<_>>>()?;
    let mut mixed_grads: Vec<Grid> = mixed_outputs.iter().map(|o| Grid::zeros(o.frames(), o.cols())).collect();
    let targets: Vec<&Grid> = mixed_targets.iter().collect();
    let c = mean_mse(mixed_outputs, &targets, delta, &mut mixed_grads)?;
    let b = LossBreakdown { classification_strong: s, classification_weak: w, consistency: c, consistency_weight: delta, ..Default::default() };
    Ok((b.finish(), grads, mixed_grads))
}

/// `min(omega / BCE(pseudo, truth), 5)` averaged over strong clips; the cap when the
/// BCE is zero, 0 when there are no strong clips.
pub fn srst_gamma(strong_pseudo: &[PseudoLabelGrid], strong_targets: &[Grid], omega: f64) -> Result<f64> {
    if strong_pseudo.len() != strong_targets.len() {
        return Err(invalid("srst: pseudo and target counts differ"));
    }
    if strong_pseudo.is_empty() {
        return Ok(0.0);
    }
    let mut err = 0.0;
    for (p, t) in strong_pseudo.iter().zip(strong_targets) {
        err += bce(p.as_slice(), t.as_slice())?;
    }
    err /= strong_pseudo.len() as f64;
    Ok(if err > 0.0 { (omega / err).min(SRST_GAMMA_CAP) } else { SRST_GAMMA_CAP })
}

/// Classification plus `gamma * MSE(student, pseudo)` over weak and unlabeled clips.
/// `pseudo` is aligned with the weak-then-unlabeled outputs.
pub fn loss_srst(view: &BatchView<'_>, pseudo: &[PseudoLabelGrid], gamma: f64) -> Result<(LossBreakdown, OutputGrads)> {
    view.validate()?;
    let ns = view.n_strong();
    let mut grads = view.zero_grads();
    let (s, w) = classification(view, &mut grads);
    let targets: Vec<&Grid> = pseudo.iter().collect();
    let c = mean_mse(&view.outputs[ns..], &targets, gamma, &mut grads[ns..])?;
    let b = LossBreakdown { classification_strong: s, classification_weak: w, consistency: c, consistency_weight: gamma, ..Default::default() };
    Ok((b.finish(), grads))
}

/// Classification plus `gamma_s * MSE` over unlabeled clips and `gamma_w * MSE` over
/// weak clips, against pseudo labels and reliabilities from the other model.
/// `pseudo` is aligned with the weak-then-unlabeled outputs.
pub fn loss_crst(
    view: &BatchView<'_>,
    pseudo: &[PseudoLabelGrid],
    gamma_s: f64,
    gamma_w: f64,
) -> Result<(LossBreakdown, OutputGrads)> {
    view.validate()?;
    let (ns, nw) = (view.n_strong(), view.n_weak());
    if pseudo.len() != nw + view.n_unlabeled {
        return Err(invalid("crst: pseudo labels must cover every weak and unlabeled clip"));
    }
    let mut grads = view.zero_grads();
    let (s, w) = classification(view, &mut grads);
    let (pw, pu) = pseudo.split_at(nw);
    let tw: Vec<&Grid> = pw.iter().collect();
    let tu: Vec<&Grid> = pu.iter().collect();
    let (gs, rest) = grads.split_at_mut(ns + nw);
    let eu = mean_mse(view.unlabeled(), &tu, gamma_s, rest)?;
    let ew = mean_mse(view.weak(), &tw, gamma_w, &mut gs[ns..])?;
    let b = LossBreakdown {
        classification_strong: s,
        classification_weak: w,
        consistency: eu,
        consistency_weight: gamma_s,
        weak_expectation: ew,
        weak_expectation_weight: gamma_w,
        ..Default::default()
    };
    Ok((b.finish(), grads))
}

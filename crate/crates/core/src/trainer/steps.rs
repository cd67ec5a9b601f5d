//! One optimizer step per variant.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::{
    describe, Batch, BatchComposition, ModelStepLog, Perturbation, PseudoView, TrainConfig, TrainState, Variant,
    STREAM_AUG, STREAM_STEP,
};
use crate::error::{Error, Result};
use crate::grid::{FeatureGrid, Grid, PosteriorGrid, StrongLabelGrid, WeakLabel};
use crate::losses::{loss_crst, loss_ict, loss_mt, loss_srst, loss_supervised, srst_gamma, BatchView, LossBreakdown};
use crate::model::{adam_step, clip_pool, ema_update, warmup_decay, ForwardCache, Mode, ModelParams, Network};
use crate::pseudolabel::pseudo_label_grid;
use crate::reliability::{reliability_strong, reliability_weak};
use crate::rng;
use crate::seqdata::{add_noise_snr, draw_shift_delay, mixup, Dataset, DEFAULT_PERTURB_SNR_DB};

/// Training subsets with strong targets already pooled to the output frame rate.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub strong: Vec<FeatureGrid>,
    pub strong_targets: Vec<StrongLabelGrid>,
    pub weak: Vec<FeatureGrid>,
    pub weak_labels: Vec<WeakLabel>,
    pub unlabeled: Vec<FeatureGrid>,
}

impl TrainingData {
    /// Extracts the subsets `cfg.variant` reads; `srst-aug` appends one noisy copy of every clip.
    pub fn prepare(ds: &Dataset, cfg: &TrainConfig, net: &Network) -> Result<Self> {
        let pool = net.config().time_pool();
        let mut d = TrainingData {
            strong: ds.strong.iter().map(|c| c.features.clone()).collect(),
            strong_targets: ds
                .strong
                .iter()
                .map(|c| StrongLabelGrid::new(c.label.grid().max_pool_frames(pool)))
                .collect::<Result<_>>()?,
            weak: Vec::new(),
            weak_labels: Vec::new(),
            unlabeled: Vec::new(),
        };
        if cfg.variant.uses_weak() {
            d.weak = ds.weak.iter().map(|c| c.features.clone()).collect();
            d.weak_labels = ds.weak.iter().map(|c| c.label.clone()).collect();
        }
        if cfg.variant.uses_unlabeled() {
            d.unlabeled = ds.unlabeled.iter().map(|c| c.features.clone()).collect();
        }
        if cfg.variant == Variant::SrstAug {
            d.augment_with_noise(cfg.seed, DEFAULT_PERTURB_SNR_DB)?;
        }
        Ok(d)
    }

    fn augment_with_noise(&mut self, seed: u64, snr_db: f64) -> Result<()> {
        let mut k = 0u64;
        let mut noisy = |xs: &[FeatureGrid]| -> Result<Vec<FeatureGrid>> {
            xs.iter()
                .map(|x| {
                    k += 1;
                    add_noise_snr(x, snr_db, rng::derive(seed, STREAM_AUG, k))
                })
                .collect()
        };
        let s = noisy(&self.strong)?;
        let w = noisy(&self.weak)?;
        let u = noisy(&self.unlabeled)?;
        self.strong.extend(s);
        self.strong_targets.extend_from_within(..);
        self.weak.extend(w);
        self.weak_labels.extend_from_within(..);
        self.unlabeled.extend(u);
        Ok(())
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.strong.len(), self.weak.len(), self.unlabeled.len())
    }

    /// Steps needed to draw every clip of the first non-empty labeled subset once.
    pub fn default_steps_per_epoch(&self, comp: BatchComposition) -> usize {
        let per = |n: usize, k: usize| if n > 0 && k > 0 { Some(n.div_ceil(k)) } else { None };
        per(self.strong.len(), comp.strong)
            .or_else(|| per(self.weak.len(), comp.weak))
            .or_else(|| per(self.unlabeled.len(), comp.unlabeled))
            .unwrap_or(1)
            .max(1)
    }
}

/// Eval-mode posteriors of one clip.
pub fn predict(net: &Network, params: &ModelParams, x: &FeatureGrid) -> Result<PosteriorGrid> {
    Ok(net.forward(params, x, Mode::Eval)?.0)
}

/// Inputs of one view of the batch and the circular delay of each clip, in output frames.
struct View {
    x: Vec<FeatureGrid>,
    shift: Vec<i64>,
}

struct BatchData<'a> {
    x: Vec<&'a FeatureGrid>,
    strong_targets: Vec<&'a StrongLabelGrid>,
    weak_labels: Vec<WeakLabel>,
    n_unlabeled: usize,
}

impl<'a> BatchData<'a> {
    fn gather(data: &'a TrainingData, batch: &Batch) -> Self {
        let mut x: Vec<&FeatureGrid> = batch.strong.iter().map(|&i| &data.strong[i]).collect();
        x.extend(batch.weak.iter().map(|&i| &data.weak[i]));
        x.extend(batch.unlabeled.iter().map(|&i| &data.unlabeled[i]));
        BatchData {
            x,
            strong_targets: batch.strong.iter().map(|&i| &data.strong_targets[i]).collect(),
            weak_labels: batch.weak.iter().map(|&i| data.weak_labels[i].clone()).collect(),
            n_unlabeled: batch.unlabeled.len(),
        }
    }

    fn n_strong(&self) -> usize {
        self.strong_targets.len()
    }

    fn n_weak(&self) -> usize {
        self.weak_labels.len()
    }

    fn original(&self) -> View {
        View { x: self.x.iter().map(|&x| x.clone()).collect(), shift: alloc::vec![0; self.x.len()] }
    }

    fn perturbed(&self, cfg: &TrainConfig, pool: usize, seed: u64) -> Result<View> {
        let n = self.x.len();
        let mut view = View { x: Vec::with_capacity(n), shift: alloc::vec![0; n] };
        for (i, &x) in self.x.iter().enumerate() {
            let s = rng::derive(seed, 2, i as u64);
            let v = match cfg.perturbation {
                Perturbation::Noise { snr_db } => add_noise_snr(x, snr_db, s)?,
                Perturbation::Mixup { min_lambda } => {
                    let lambda = rng::seeded(s).gen_range(min_lambda..=1.0);
                    mixup(x, self.x[(i + 1) % n], lambda)?
                }
                Perturbation::FrameShift { sigma } => {
                    let d = draw_shift_delay(s, sigma, x.frames(), pool);
                    view.shift[i] = d / pool as i64;
                    FeatureGrid { data: x.data.roll_frames(d), fps: x.fps }
                }
            };
            view.x.push(v);
        }
        Ok(view)
    }

    /// Strong targets moved into `view`'s frame alignment.
    fn targets_in(&self, view: &View) -> Vec<Grid> {
        self.strong_targets.iter().zip(&view.shift).map(|(y, &d)| y.grid().roll_frames(d)).collect()
    }

    fn truth_in(&self, view: &View) -> Result<Vec<StrongLabelGrid>> {
        self.targets_in(view).into_iter().map(StrongLabelGrid::new).collect()
    }

    fn loss_view<'b>(&'b self, outputs: &'b [Grid], targets: &'b [Grid]) -> BatchView<'b> {
        BatchView { outputs, strong_targets: targets, weak_targets: &self.weak_labels, n_unlabeled: self.n_unlabeled }
    }
}

/// Re-aligns per-clip grids from one view's delays to another's.
fn realign(grids: &[Grid], from: &[i64], to: &[i64]) -> Vec<Grid> {
    grids.iter().zip(from.iter().zip(to)).map(|(g, (&f, &t))| if f == t { g.clone() } else { g.roll_frames(t - f) }).collect()
}

fn student_pass(net: &Network, params: &ModelParams, xs: &[FeatureGrid], seed: u64) -> Result<(Vec<Grid>, Vec<ForwardCache>)> {
    let mut r = rng::seeded(seed);
    let mut outs = Vec::with_capacity(xs.len());
    let mut caches = Vec::with_capacity(xs.len());
    for x in xs {
        let (p, cache) = net.forward(params, x, Mode::Train(&mut r))?;
        outs.push(p);
        caches.push(cache.expect("train mode returns a cache"));
    }
    Ok((outs, caches))
}

fn teacher_pass(net: &Network, params: &ModelParams, xs: &[FeatureGrid]) -> Result<Vec<Grid>> {
    xs.iter().map(|x| predict(net, params, x)).collect()
}

fn accumulate(net: &Network, params: &ModelParams, caches: &[ForwardCache], grads: &[Grid], into: &mut [f64]) -> Result<()> {
    for (c, g) in caches.iter().zip(grads) {
        net.backward_into(params, c, g, into)?;
    }
    Ok(())
}

fn check_finite(b: &LossBreakdown, step: u64, model: usize) -> Result<()> {
    let parts = [b.total, b.classification_strong, b.classification_weak, b.consistency, b.weak_expectation];
    if parts.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence(format!("step {step}, model {model}: {}", describe(b))))
    }
}

fn dropout_seed(step_seed: u64, model: usize, pass: u64) -> u64 {
    rng::derive(step_seed, 1, (model as u64) << 8 | pass)
}

/// Applies one step of `cfg.variant` to `state` and returns the per-model logs.
/// `omega` weights the reliabilities, `delta` the mean-teacher and ICT consistency.
pub fn train_step(
    net: &Network,
    data: &TrainingData,
    cfg: &TrainConfig,
    state: &mut TrainState,
    batch: &Batch,
    omega: f64,
    delta: f64,
) -> Result<Vec<ModelStepLog>> {
    if state.variant != cfg.variant {
        return Err(Error::VariantMismatch { expected: cfg.variant.name().into(), found: state.variant.name().into() });
    }
    let step_seed = rng::derive(cfg.seed, STREAM_STEP, state.step);
    let bd = BatchData::gather(data, batch);
    let pool = net.config().time_pool();
    let logs = match cfg.variant {
        Variant::SupervisedStrong | Variant::SupervisedStrongWeak => {
            let view = bd.original();
            let (outs, caches) = student_pass(net, &state.models[0].student, &view.x, dropout_seed(step_seed, 0, 0))?;
            let targets = bd.targets_in(&view);
            let (b, g) = loss_supervised(&bd.loss_view(&outs, &targets))?;
            apply(net, cfg, state, 0, &b, &[(&caches, &g)], false)?;
            alloc::vec![ModelStepLog { loss: b, gamma_s: None, gamma_w: None }]
        }
        Variant::MeanTeacher => {
            let view = bd.original();
            let tview = bd.perturbed(cfg, pool, step_seed)?;
            let t_out = realign(&teacher_pass(net, &state.models[0].teacher, &tview.x)?, &tview.shift, &view.shift);
            let (outs, caches) = student_pass(net, &state.models[0].student, &view.x, dropout_seed(step_seed, 0, 0))?;
            let targets = bd.targets_in(&view);
            let (b, g) = loss_mt(&bd.loss_view(&outs, &targets), &t_out, delta)?;
            apply(net, cfg, state, 0, &b, &[(&caches, &g)], true)?;
            alloc::vec![ModelStepLog { loss: b, gamma_s: None, gamma_w: None }]
        }
        Variant::Ict => {
            let view = bd.original();
            let n = view.x.len();
            let lambda: f64 = rng::seeded(rng::derive(step_seed, 4, 0)).gen();
            let mixed: Vec<FeatureGrid> =
                (0..n).map(|i| mixup(&view.x[i], &view.x[(i + 1) % n], lambda)).collect::<Result<_>>()?;
            let ta = teacher_pass(net, &state.models[0].teacher, &view.x)?;
            let tb: Vec<Grid> = (0..n).map(|i| ta[(i + 1) % n].clone()).collect();
            let student = &state.models[0].student;
            let (outs, caches) = student_pass(net, student, &view.x, dropout_seed(step_seed, 0, 0))?;
            let (mouts, mcaches) = student_pass(net, student, &mixed, dropout_seed(step_seed, 0, 1))?;
            let targets = bd.targets_in(&view);
            let (b, g, mg) = loss_ict(&bd.loss_view(&outs, &targets), &mouts, &ta, &tb, lambda, delta)?;
            apply(net, cfg, state, 0, &b, &[(&caches, &g), (&mcaches, &mg)], true)?;
            alloc::vec![ModelStepLog { loss: b, gamma_s: None, gamma_w: None }]
        }
        Variant::Srst | Variant::SrstAug => {
            let view = bd.original();
            let tview = bd.perturbed(cfg, pool, step_seed)?;
            let t_out = teacher_pass(net, &state.models[0].teacher, &tview.x)?;
            let pseudo: Vec<Grid> = t_out.iter().map(pseudo_label_grid).collect();
            let pseudo = realign(&pseudo, &tview.shift, &view.shift);
            let targets = bd.targets_in(&view);
            let ns = bd.n_strong();
            let gamma = srst_gamma(&pseudo[..ns], &targets, omega)?;
            let (outs, caches) = student_pass(net, &state.models[0].student, &view.x, dropout_seed(step_seed, 0, 0))?;
            let (b, g) = loss_srst(&bd.loss_view(&outs, &targets), &pseudo[ns..], gamma)?;
            apply(net, cfg, state, 0, &b, &[(&caches, &g)], true)?;
            alloc::vec![ModelStepLog { loss: b, gamma_s: Some(gamma), gamma_w: None }]
        }
        Variant::Crst => crst_step(net, cfg, state, &bd, omega, step_seed)?,
    };
    state.step += 1;
    Ok(logs)
}

/// Pseudo labels and reliabilities one teacher hands to the other model.
struct Handoff {
    pseudo: Vec<Grid>,
    shift: Vec<i64>,
    gamma_s: f64,
    gamma_w: f64,
}

fn handoff(net: &Network, teacher: &ModelParams, bd: &BatchData<'_>, view: &View, omega: f64) -> Result<Handoff> {
    let pseudo: Vec<Grid> = teacher_pass(net, teacher, &view.x)?.iter().map(pseudo_label_grid).collect();
    let (ns, nw) = (bd.n_strong(), bd.n_weak());
    let gamma_s = reliability_strong(&pseudo[..ns], &bd.truth_in(view)?, omega)?;
    let pooled: Vec<Vec<f64>> = pseudo[ns..ns + nw].iter().map(clip_pool).collect();
    let pooled_refs: Vec<&[f64]> = pooled.iter().map(Vec::as_slice).collect();
    let gamma_w = reliability_weak(&pooled_refs, &bd.weak_labels, omega)?;
    Ok(Handoff { pseudo, shift: view.shift.clone(), gamma_s, gamma_w })
}

fn crst_step(
    net: &Network,
    cfg: &TrainConfig,
    state: &mut TrainState,
    bd: &BatchData<'_>,
    omega: f64,
    step_seed: u64,
) -> Result<Vec<ModelStepLog>> {
    let pool = net.config().time_pool();
    let views = [bd.original(), bd.perturbed(cfg, pool, step_seed)?];
    let teacher_view = |k: usize| match cfg.pseudo_view {
        PseudoView::Own => &views[k],
        PseudoView::Original => &views[0],
    };
    // Both handoffs read the teachers before any parameter changes.
    let handoffs = [
        handoff(net, &state.models[0].teacher, bd, teacher_view(0), omega)?,
        handoff(net, &state.models[1].teacher, bd, teacher_view(1), omega)?,
    ];
    let ns = bd.n_strong();
    let mut logs = Vec::with_capacity(2);
    let mut pending = Vec::with_capacity(2);
    for j in 0..2 {
        let from = &handoffs[1 - j];
        let view = &views[j];
        let pseudo = realign(&from.pseudo[ns..], &from.shift[ns..], &view.shift[ns..]);
        let targets = bd.targets_in(view);
        let (outs, caches) = student_pass(net, &state.models[j].student, &view.x, dropout_seed(step_seed, j, 0))?;
        let (b, g) = loss_crst(&bd.loss_view(&outs, &targets), &pseudo, from.gamma_s, from.gamma_w)?;
        check_finite(&b, state.step, j)?;
        let mut grad = alloc::vec![0.0; state.models[j].student.len()];
        accumulate(net, &state.models[j].student, &caches, &g, &mut grad)?;
        pending.push(grad);
        logs.push(ModelStepLog { loss: b, gamma_s: Some(from.gamma_s), gamma_w: Some(from.gamma_w) });
    }
    for (j, grad) in pending.iter().enumerate() {
        let m = &mut state.models[j];
        adam_step(&mut m.student, grad, &mut m.opt, cfg.learning_rate)?;
    }
    let decay = warmup_decay(cfg.ema_decay, state.step);
    for m in &mut state.models {
        ema_update(&mut m.teacher, &m.student, decay)?;
    }
    Ok(logs)
}

/// Backpropagates, takes an Adam step on model `k` and optionally updates its teacher.
fn apply(
    net: &Network,
    cfg: &TrainConfig,
    state: &mut TrainState,
    k: usize,
    b: &LossBreakdown,
    passes: &[(&Vec<ForwardCache>, &Vec<Grid>)],
    update_teacher: bool,
) -> Result<()> {
    check_finite(b, state.step, k)?;
    let step = state.step;
    let m = &mut state.models[k];
    let mut grad = alloc::vec![0.0; m.student.len()];
    for (caches, g) in passes {
        accumulate(net, &m.student, caches, g, &mut grad)?;
    }
    adam_step(&mut m.student, &grad, &mut m.opt, cfg.learning_rate)?;
    if update_teacher {
        ema_update(&mut m.teacher, &m.student, warmup_decay(cfg.ema_decay, step))?;
    } else {
        m.teacher.clone_from(&m.student);
    }
    Ok(())
}

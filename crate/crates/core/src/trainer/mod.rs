//! Semi-supervised training: batch composition, the single-model baselines
//! and the two-model cross-referencing loop, per-epoch validation and best
//! snapshot selection.
//!
//! Every random draw comes from a stream derived from the run seed, so a
//! `(dataset, config)` pair fully determines the result.

mod batch;
mod steps;

pub use batch::{Batch, BatchComposition, BatchSampler, SubsetSampler};
pub use steps::{predict, train_step, TrainingData};

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{invalid, Error, Result};
use crate::evalkit::{evaluate, CollarRule, DEFAULT_COLLAR};
use crate::grid::FeatureGrid;
use crate::losses::LossBreakdown;
use crate::model::{ModelConfig, ModelParams, Network, OptState, DEFAULT_LR_CAP};
use crate::postproc::{extract_intervals, global_postproc, EventInterval};
use crate::reliability::RampSchedule;
use crate::rng;
use crate::seqdata::{Dataset, DEFAULT_PERTURB_SNR_DB, DEFAULT_SHIFT_SIGMA};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "String", into = "String"))]
pub enum Variant {
    SupervisedStrong,
    SupervisedStrongWeak,
    MeanTeacher,
    Ict,
    Srst,
    SrstAug,
    Crst,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::SupervisedStrong,
        Variant::SupervisedStrongWeak,
        Variant::MeanTeacher,
        Variant::Ict,
        Variant::Srst,
        Variant::SrstAug,
        Variant::Crst,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::SupervisedStrong => "supervised-strong",
            Variant::SupervisedStrongWeak => "supervised-sw",
            Variant::MeanTeacher => "mt",
            Variant::Ict => "ict",
            Variant::Srst => "srst",
            Variant::SrstAug => "srst-aug",
            Variant::Crst => "crst",
        }
    }

    /// Number of jointly trained models.
    pub fn model_count(self) -> usize {
        if self == Variant::Crst {
            2
        } else {
            1
        }
    }

    pub fn uses_weak(self) -> bool {
        self != Variant::SupervisedStrong
    }

    pub fn uses_unlabeled(self) -> bool {
        !matches!(self, Variant::SupervisedStrong | Variant::SupervisedStrongWeak)
    }

    pub fn uses_teacher(self) -> bool {
        self.uses_unlabeled()
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "supervised-strong" => Variant::SupervisedStrong,
            "supervised-sw" | "supervised-strong+weak" => Variant::SupervisedStrongWeak,
            "mt" => Variant::MeanTeacher,
            "ict" => Variant::Ict,
            "srst" => Variant::Srst,
            "srst-aug" | "srst+aug" => Variant::SrstAug,
            "crst" => Variant::Crst,
            other => return Err(invalid(format!("unknown variant '{other}'"))),
        })
    }
}

impl TryFrom<String> for Variant {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Variant> for String {
    fn from(v: Variant) -> String {
        v.name().to_string()
    }
}

/// How the second view is derived from the original features.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "kebab-case"))]
pub enum Perturbation {
    /// Additive white noise at the given SNR.
    Noise { snr_db: f64 },
    /// Mix with another clip of the batch at `lambda ~ U(min_lambda, 1)`; labels of
    /// the dominant clip are kept.
    Mixup { min_lambda: f64 },
    /// Circular shift by a Gaussian delay, rounded to the model's time pooling.
    FrameShift { sigma: f64 },
}

impl Default for Perturbation {
    fn default() -> Self {
        Perturbation::Noise { snr_db: DEFAULT_PERTURB_SNR_DB }
    }
}

impl FromStr for Perturbation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "noise" | "noise30db" => Perturbation::Noise { snr_db: DEFAULT_PERTURB_SNR_DB },
            "mixup" => Perturbation::Mixup { min_lambda: 0.8 },
            "frameshift" | "frame-shift" => Perturbation::FrameShift { sigma: DEFAULT_SHIFT_SIGMA },
            other => return Err(invalid(format!("unknown perturbation '{other}'"))),
        })
    }
}

/// Which input each cross-referencing teacher reads when estimating pseudo labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum PseudoView {
    /// Each teacher reads its own model's training view.
    #[default]
    Own,
    /// Both teachers read the original features.
    Original,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub variant: Variant,
    pub epochs: usize,
    /// `None`: enough steps to see every strong clip once per epoch.
    pub steps_per_epoch: Option<usize>,
    pub batch: BatchComposition,
    pub learning_rate: f64,
    pub lr_cap: f64,
    pub ema_decay: f64,
    pub seed: u64,
    pub perturbation: Perturbation,
    pub pseudo_view: PseudoView,
    /// Peak of the consistency weight ramp (mean teacher, ICT).
    pub consistency_peak: f64,
    /// Peak of the reliability ramp.
    pub reliability_peak: f64,
    pub collar: f64,
    pub model: ModelConfig,
}

impl TrainConfig {
    pub fn desk(variant: Variant, model: ModelConfig) -> Self {
        TrainConfig {
            variant,
            epochs: 30,
            steps_per_epoch: None,
            batch: BatchComposition::default(),
            learning_rate: DEFAULT_LR_CAP,
            lr_cap: DEFAULT_LR_CAP,
            ema_decay: 0.999,
            seed: 0,
            perturbation: Perturbation::default(),
            pseudo_view: PseudoView::Own,
            consistency_peak: 2.0,
            reliability_peak: RampSchedule::DEFAULT_PEAK,
            collar: DEFAULT_COLLAR,
            model,
        }
    }

    /// Batch composition with the subsets a variant does not read set to zero.
    pub fn effective_batch(&self) -> BatchComposition {
        BatchComposition {
            strong: self.batch.strong,
            weak: if self.variant.uses_weak() { self.batch.weak } else { 0 },
            unlabeled: if self.variant.uses_unlabeled() { self.batch.unlabeled } else { 0 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.effective_batch().total() == 0 {
            return Err(invalid("batch must contain at least one clip"));
        }
        if !(self.learning_rate > 0.0) || self.learning_rate > self.lr_cap {
            return Err(invalid(format!("learning rate {} must lie in (0, {}]", self.learning_rate, self.lr_cap)));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(invalid("ema decay must lie in [0, 1)"));
        }
        if !(self.consistency_peak >= 0.0 && self.reliability_peak >= 0.0) {
            return Err(invalid("ramp peaks must be non-negative"));
        }
        if self.steps_per_epoch == Some(0) {
            return Err(invalid("steps per epoch must be positive"));
        }
        match self.perturbation {
            Perturbation::Noise { snr_db } if !snr_db.is_finite() => return Err(invalid("SNR must be finite")),
            Perturbation::Mixup { min_lambda } if !(0.0..=1.0).contains(&min_lambda) => {
                return Err(invalid("mixup lambda bound must lie in [0, 1]"))
            }
            Perturbation::FrameShift { sigma } if !(sigma >= 0.0) => return Err(invalid("shift sigma must be non-negative")),
            _ => {}
        }
        Ok(())
    }

    /// Checks that the dataset provides what the variant reads.
    pub fn check_dataset(&self, ds: &Dataset) -> Result<()> {
        if self.variant == Variant::SupervisedStrong && ds.strong.is_empty() {
            return Err(invalid("variant supervised-strong needs a strong split"));
        }
        if ds.strong.is_empty() && ds.weak.is_empty() {
            return Err(invalid("no labeled clips"));
        }
        if self.variant.uses_unlabeled() && ds.unlabeled.is_empty() {
            return Err(invalid(format!("variant {} needs an unlabeled split", self.variant)));
        }
        if let Some(c) = ds.n_classes() {
            if c != self.model.n_classes {
                return Err(invalid(format!("dataset has {c} classes, model expects {}", self.model.n_classes)));
            }
        }
        let frames = ds.strong.iter().map(|c| c.features.frames()).chain(ds.weak.iter().map(|c| c.features.frames()));
        for f in frames.chain(ds.unlabeled.iter().map(|c| c.features.frames())) {
            if f % self.model.time_pool() != 0 {
                return Err(invalid(format!("clip length {f} is not a multiple of the time pooling {}", self.model.time_pool())));
            }
        }
        Ok(())
    }
}

/// Student, teacher and optimizer of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub student: ModelParams,
    pub teacher: ModelParams,
    pub opt: OptState,
}

/// Everything that evolves during training; two models for cross-referencing.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub variant: Variant,
    pub step: u64,
    pub models: Vec<ModelState>,
}

impl TrainState {
    pub fn init(net: &Network, cfg: &TrainConfig) -> Self {
        let models = (0..cfg.variant.model_count())
            .map(|k| {
                let p = net.init_params(rng::derive(cfg.seed, STREAM_INIT, k as u64));
                let mut opt = OptState::new(p.len());
                opt.lr_cap = cfg.lr_cap;
                ModelState { teacher: p.clone(), student: p, opt }
            })
            .collect();
        TrainState { variant: cfg.variant, step: 0, models }
    }

    /// Parameters used for evaluation: the first model's student.
    pub fn eval_params(&self) -> &ModelParams {
        &self.models[0].student
    }
}

/// One optimizer step of one model.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelStepLog {
    pub loss: LossBreakdown,
    /// Reliabilities of the pseudo labels this model consumed (cross-referencing only).
    pub gamma_s: Option<f64>,
    pub gamma_w: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub omega: f64,
    pub delta: f64,
    pub models: Vec<ModelStepLog>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochRecord {
    pub epoch: usize,
    pub step: u64,
    pub validation_macro_f: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainHistory {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    /// Epoch of the kept snapshot (1-based), `None` if no epoch ran.
    pub best_epoch: Option<usize>,
    pub best_macro_f: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// State at the best validation epoch (initial state when no epoch ran).
    pub best: TrainState,
    pub last: TrainState,
    pub history: TrainHistory,
}

pub(crate) const STREAM_INIT: u64 = 0x11;
pub(crate) const STREAM_BATCH: u64 = 0x12;
pub(crate) const STREAM_STEP: u64 = 0x13;
pub(crate) const STREAM_AUG: u64 = 0x14;

/// Validation macro F of `params` with global post-processing.
pub fn validation_macro_f(net: &Network, params: &ModelParams, clips: &[(FeatureGrid, Vec<EventInterval>)], collar: f64) -> Result<f64> {
    let pool = net.config().time_pool() as f64;
    let mut detections = Vec::with_capacity(clips.len());
    for (x, _) in clips {
        let p = predict(net, params, x)?;
        detections.push(global_postproc(&p, x.fps / pool));
    }
    let pairs: Vec<(&[EventInterval], &[EventInterval])> =
        detections.iter().zip(clips).map(|(d, (_, r))| (d.as_slice(), r.as_slice())).collect();
    Ok(evaluate(&pairs, net.config().n_classes, collar, CollarRule::Symmetric)?.macro_f)
}

/// Reference intervals of every validation clip.
pub fn validation_references(ds: &Dataset) -> Vec<(FeatureGrid, Vec<EventInterval>)> {
    ds.validation.iter().map(|c| (c.features.clone(), extract_intervals(c.label.grid(), c.features.fps))).collect()
}

/// Runs `cfg.epochs` epochs, validating after each and keeping the best state.
pub fn train(ds: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_observer(ds, cfg, |_| {})
}

/// As [`train`], calling `observe` after every step.
pub fn train_with_observer(ds: &Dataset, cfg: &TrainConfig, mut observe: impl FnMut(&StepRecord)) -> Result<TrainOutcome> {
    cfg.validate()?;
    cfg.check_dataset(ds)?;
    let net = Network::new(&cfg.model)?;
    let data = TrainingData::prepare(ds, cfg, &net)?;
    let steps_per_epoch = cfg.steps_per_epoch.unwrap_or_else(|| data.default_steps_per_epoch(cfg.effective_batch()));
    let total_steps = (cfg.epochs * steps_per_epoch) as u64;
    let omega_sched = RampSchedule::new(total_steps.max(1), cfg.reliability_peak)?;
    let delta_sched = RampSchedule::new(total_steps.max(1), cfg.consistency_peak)?;
    let validation = validation_references(ds);

    let mut state = TrainState::init(&net, cfg);
    let mut best = state.clone();
    let mut history = TrainHistory::default();
    let mut sampler = BatchSampler::new(data.sizes(), cfg.effective_batch(), rng::derive(cfg.seed, STREAM_BATCH, 0));

    for epoch in 1..=cfg.epochs {
        for _ in 0..steps_per_epoch {
            let batch = sampler.next_batch();
            let step = state.step;
            let omega = omega_sched.at(state.step);
            let delta = delta_sched.at(state.step);
            let logs = train_step(&net, &data, cfg, &mut state, &batch, omega, delta)?;
            let record = StepRecord { step, epoch, omega, delta, models: logs };
            observe(&record);
            history.steps.push(record);
        }
        let f = if validation.is_empty() { 0.0 } else { validation_macro_f(&net, state.eval_params(), &validation, cfg.collar)? };
        history.epochs.push(EpochRecord { epoch, step: state.step, validation_macro_f: f });
        if history.best_macro_f.map_or(true, |b| f > b) {
            history.best_macro_f = Some(f);
            history.best_epoch = Some(epoch);
            best = state.clone();
        }
    }
    Ok(TrainOutcome { best, last: state, history })
}

/// Human-readable summary of a loss breakdown, for diagnostics.
pub fn describe(b: &LossBreakdown) -> String {
    format!(
        "total {:.6} strong {:.6} weak {:.6} consistency {:.6} x {:.4} weak-expectation {:.6} x {:.4}",
        b.total, b.classification_strong, b.classification_weak, b.consistency, b.consistency_weight, b.weak_expectation, b.weak_expectation_weight
    )
}

#[cfg(test)]
mod tests;

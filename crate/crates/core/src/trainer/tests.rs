use super::*;
use crate::model::ModelConfig;
use crate::seqdata::{generate_dataset, DatasetConfig};
use alloc::vec;

fn tiny_dataset(strong: usize, weak: usize, unlabeled: usize) -> Dataset {
    let mut cfg = DatasetConfig::desk(3);
    for scene in [&mut cfg.synthetic, &mut cfg.real] {
        scene.clip_len = 2.0;
        scene.durations = vec![(0.2, 0.6), (0.4, 1.0), (0.5, 1.5)];
    }
    cfg.strong = strong;
    cfg.weak = weak;
    cfg.unlabeled = unlabeled;
    cfg.validation = 4;
    generate_dataset(&cfg).unwrap()
}

fn tiny_config(variant: Variant) -> TrainConfig {
    let mut cfg = TrainConfig::desk(variant, ModelConfig::with_channels(16, 3, &[4, 6], 6));
    cfg.epochs = 2;
    cfg.steps_per_epoch = Some(2);
    cfg.batch = BatchComposition { strong: 2, unlabeled: 2, weak: 2 };
    cfg.seed = 7;
    cfg
}

fn norm_diff(a: &ModelParams, b: &ModelParams) -> f64 {
    a.values.iter().zip(&b.values).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[test]
fn variant_names_round_trip() {
    for v in Variant::ALL {
        assert_eq!(v.name().parse::<Variant>().unwrap(), v);
    }
    assert_eq!("supervised-strong+weak".parse::<Variant>().unwrap(), Variant::SupervisedStrongWeak);
    assert_eq!("srst+aug".parse::<Variant>().unwrap(), Variant::SrstAug);
    assert!("crst2".parse::<Variant>().is_err());
    assert!("CRST".parse::<Variant>().is_err());
}

#[test]
fn config_checks() {
    let mut cfg = tiny_config(Variant::Crst);
    assert!(cfg.validate().is_ok());
    cfg.learning_rate = 0.01;
    assert!(cfg.validate().is_err());
    let mut cfg = tiny_config(Variant::SupervisedStrong);
    cfg.batch = BatchComposition { strong: 0, unlabeled: 5, weak: 5 };
    assert!(cfg.validate().is_err());
    let mut ds = tiny_dataset(4, 2, 2);
    ds.unlabeled.clear();
    assert!(tiny_config(Variant::Crst).check_dataset(&ds).is_err());
    assert!(tiny_config(Variant::SupervisedStrongWeak).check_dataset(&ds).is_ok());
}

#[test]
fn zero_epochs_returns_initial_state() {
    let ds = tiny_dataset(4, 2, 4);
    let mut cfg = tiny_config(Variant::Crst);
    cfg.epochs = 0;
    let out = train(&ds, &cfg).unwrap();
    let init = TrainState::init(&Network::new(&cfg.model).unwrap(), &cfg);
    assert_eq!(out.best, init);
    assert_eq!(out.last, init);
    assert_eq!(out.history, TrainHistory::default());
}

#[test]
fn every_variant_runs_and_is_reproducible() {
    let ds = tiny_dataset(4, 2, 4);
    for v in Variant::ALL {
        let cfg = tiny_config(v);
        let a = train(&ds, &cfg).unwrap();
        let b = train(&ds, &cfg).unwrap();
        assert_eq!(a.last, b.last, "{v}");
        assert_eq!(a.history, b.history, "{v}");
        assert_eq!(a.last.step, 4);
        assert_eq!(a.last.models.len(), v.model_count());
        assert_eq!(a.history.steps.len(), 4);
        assert_eq!(a.history.epochs.len(), 2);
        for (i, s) in a.history.steps.iter().enumerate() {
            assert_eq!(s.step, i as u64);
            for m in &s.models {
                assert!((m.loss.total - m.loss.combined()).abs() < 1e-12);
                assert!(m.loss.total >= 0.0);
            }
        }
    }
}

#[test]
fn best_epoch_matches_reevaluation() {
    let ds = tiny_dataset(6, 2, 4);
    let cfg = tiny_config(Variant::SupervisedStrongWeak);
    let out = train(&ds, &cfg).unwrap();
    let best = out.history.best_macro_f.unwrap();
    let max = out.history.epochs.iter().map(|e| e.validation_macro_f).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(best, max);
    let net = Network::new(&cfg.model).unwrap();
    let f = validation_macro_f(&net, out.best.eval_params(), &validation_references(&ds), cfg.collar).unwrap();
    assert_eq!(f, best);
}

#[test]
fn different_seeds_differ() {
    let ds = tiny_dataset(4, 2, 4);
    let a = train(&ds, &tiny_config(Variant::MeanTeacher)).unwrap();
    let mut cfg = tiny_config(Variant::MeanTeacher);
    cfg.seed = 8;
    let b = train(&ds, &cfg).unwrap();
    assert_ne!(a.last, b.last);
}

fn one_step(ds: &Dataset, cfg: &TrainConfig, batch: &Batch) -> (TrainState, TrainState, Vec<ModelStepLog>) {
    let net = Network::new(&cfg.model).unwrap();
    let data = TrainingData::prepare(ds, cfg, &net).unwrap();
    let init = TrainState::init(&net, cfg);
    let mut s = init.clone();
    let logs = train_step(&net, &data, cfg, &mut s, batch, 1.5, 1.0).unwrap();
    (init, s, logs)
}

#[test]
fn crst_step_moves_both_students() {
    let ds = tiny_dataset(4, 2, 4);
    let cfg = tiny_config(Variant::Crst);
    let batch = Batch { strong: vec![0, 1], weak: vec![0, 1], unlabeled: vec![2, 3] };
    let (init, s, logs) = one_step(&ds, &cfg, &batch);
    assert_eq!(s.step, 1);
    for k in 0..2 {
        assert!(norm_diff(&init.models[k].student, &s.models[k].student) > 0.0);
        assert_eq!(s.models[k].opt.step, 1);
        let g = logs[k];
        assert!(g.gamma_s.unwrap() > 0.0 && g.gamma_w.unwrap() > 0.0);
        assert!((g.loss.total - g.loss.combined()).abs() < 1e-12);
    }
    // The two models start from different initializations.
    assert!(norm_diff(&init.models[0].student, &init.models[1].student) > 0.0);
}

#[test]
fn crst_without_weak_or_unlabeled_is_two_supervised_steps() {
    let ds = tiny_dataset(4, 2, 4);
    let cfg = tiny_config(Variant::Crst);
    let batch = Batch { strong: vec![0, 3], weak: vec![], unlabeled: vec![] };
    let (_, crst, logs) = one_step(&ds, &cfg, &batch);

    // Model I on the original view matches a supervised step from the same start.
    let mut sup_cfg = cfg.clone();
    sup_cfg.variant = Variant::SupervisedStrong;
    let net = Network::new(&cfg.model).unwrap();
    let data = TrainingData::prepare(&ds, &sup_cfg, &net).unwrap();
    let init = TrainState::init(&net, &cfg);
    let mut sup = TrainState { variant: Variant::SupervisedStrong, step: 0, models: vec![init.models[0].clone()] };
    let sup_logs = train_step(&net, &data, &sup_cfg, &mut sup, &batch, 1.5, 1.0).unwrap();
    assert_eq!(sup.models[0].student, crst.models[0].student);
    assert_eq!(sup_logs[0].loss.total, logs[0].loss.total);
    for l in &logs {
        assert_eq!(l.loss.consistency, 0.0);
        assert_eq!(l.loss.weak_expectation, 0.0);
    }
}

#[test]
fn teacher_stays_within_student_trajectory() {
    let ds = tiny_dataset(4, 2, 4);
    let mut cfg = tiny_config(Variant::Srst);
    cfg.ema_decay = 0.6;
    let net = Network::new(&cfg.model).unwrap();
    let data = TrainingData::prepare(&ds, &cfg, &net).unwrap();
    let mut s = TrainState::init(&net, &cfg);
    let n = s.models[0].student.len();
    let mut lo = s.models[0].student.values.clone();
    let mut hi = lo.clone();
    let mut sampler = BatchSampler::new(data.sizes(), cfg.effective_batch(), 3);
    for _ in 0..6 {
        train_step(&net, &data, &cfg, &mut s, &sampler.next_batch(), 1.0, 1.0).unwrap();
        for i in 0..n {
            lo[i] = lo[i].min(s.models[0].student.values[i]);
            hi[i] = hi[i].max(s.models[0].student.values[i]);
            let t = s.models[0].teacher.values[i];
            assert!(t >= lo[i] - 1e-15 && t <= hi[i] + 1e-15);
        }
    }
}

#[test]
fn frame_shift_and_mixup_views_run() {
    let ds = tiny_dataset(4, 2, 4);
    for p in ["frameshift", "mixup"] {
        for view in [PseudoView::Own, PseudoView::Original] {
            let mut cfg = tiny_config(Variant::Crst);
            cfg.perturbation = p.parse().unwrap();
            cfg.pseudo_view = view;
            let out = train(&ds, &cfg).unwrap();
            assert_eq!(out.history.steps.len(), 4);
        }
    }
}

#[test]
fn srst_aug_doubles_training_data() {
    let ds = tiny_dataset(4, 2, 4);
    let cfg = tiny_config(Variant::SrstAug);
    let net = Network::new(&cfg.model).unwrap();
    let d = TrainingData::prepare(&ds, &cfg, &net).unwrap();
    assert_eq!(d.sizes(), (8, 4, 8));
    assert_eq!(d.strong_targets[0], d.strong_targets[4]);
    assert_ne!(d.strong[0], d.strong[4]);
    assert_eq!(d.default_steps_per_epoch(cfg.batch), 4);
}

#[test]
fn divergence_is_reported() {
    let ds = tiny_dataset(4, 2, 4);
    let cfg = tiny_config(Variant::SupervisedStrong);
    let net = Network::new(&cfg.model).unwrap();
    let mut data = TrainingData::prepare(&ds, &cfg, &net).unwrap();
    data.strong[0].data.set(0, 0, f64::NAN);
    let mut s = TrainState::init(&net, &cfg);
    let batch = Batch { strong: vec![0], weak: vec![], unlabeled: vec![] };
    let err = train_step(&net, &data, &cfg, &mut s, &batch, 0.0, 0.0).unwrap_err();
    assert!(matches!(err, Error::Divergence(_) | Error::InvalidInput(_)), "{err:?}");
}

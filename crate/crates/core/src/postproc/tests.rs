use super::*;
use crate::rng;
use proptest::prelude::*;
use rand::Rng;

fn gpd_sample(r: &mut crate::rng::LabRng, a: f64, c: f64) -> f64 {
    let v: f64 = 1.0 - r.gen::<f64>();
    a / c * (v.powf(-c) - 1.0)
}

/// Target-cluster logits whose negation has a GPD tail above 0 with 10% mass.
fn planted(seed: u64, n: usize, a: f64, c: f64) -> Vec<f64> {
    let mut r = rng::seeded(seed);
    (0..n)
        .map(|i| {
            let reversed = if i % 10 == 0 { gpd_sample(&mut r, a, c) } else { -r.gen_range(0.0..6.0) };
            -reversed
        })
        .collect()
}

#[test]
fn logit_samples_select_weak_classes() {
    let p1 = Grid::from_rows(&[vec![0.5, 0.9], vec![0.9, 0.1]]).unwrap();
    let p2 = Grid::from_rows(&[vec![0.2, 0.3]]).unwrap();
    let y1 = WeakLabel::from_bools(&[true, false]);
    let y2 = WeakLabel::from_bools(&[false, true]);
    let weak = [(&p1, &y1), (&p2, &y2)];
    let s = collect_logit_samples(&weak, 0).unwrap();
    assert_eq!(s.len(), 2);
    assert_eq!(s[0], 0.0);
    assert!((s[1] - 2.1972245773362196).abs() < 1e-12);
    let s1 = collect_logit_samples(&weak, 1).unwrap();
    assert_eq!(s1.len(), 1);
    assert!(matches!(collect_logit_samples(&weak[..1], 1), Err(Error::Empty(_))));
}

#[test]
fn planted_tail_exceedance_matches_alpha() {
    let samples = planted(21, 10_000, 1.0, 0.2);
    let reversed: Vec<f64> = samples.iter().map(|x| -x).collect();
    let n = samples.len() as f64;
    let mut prev_t = f64::INFINITY;
    let mut prev_thr = 0.0;
    for alpha in alpha_grid() {
        let EvtOutcome::Fitted { t_alpha, threshold, .. } = evt_threshold(&samples, alpha, 0.5).unwrap() else {
            panic!("expected a fitted tail")
        };
        let exceed = reversed.iter().filter(|&&r| r > t_alpha).count() as f64;
        let sigma = (n * alpha * (1.0 - alpha)).sqrt();
        assert!((exceed - n * alpha).abs() <= 3.0 * sigma, "alpha {alpha}: {exceed} exceedances");
        assert!(t_alpha <= prev_t);
        assert!(threshold >= prev_thr);
        prev_t = t_alpha;
        prev_thr = threshold;
    }
}

#[test]
fn grids() {
    let a = alpha_grid();
    assert_eq!(a.len(), 10);
    assert!((a[0] - 0.0002).abs() < 1e-15 && (a[9] - 0.1).abs() < 1e-15);
    let ratio = a[1] / a[0];
    for w in a.windows(2) {
        assert!((w[1] / w[0] - ratio).abs() < 1e-9);
    }
    let b = beta_grid();
    assert_eq!(b.len(), 20);
    assert_eq!(b[0], 5.0);
    assert_eq!(b[19], 100.0);
    assert!((b[1] - 10.0).abs() < 1e-12);
}

#[test]
fn filter_length_rule() {
    let mut g = Grid::zeros(300, 1);
    for t in 10..110 {
        g.set(t, 0, 1.0);
    }
    assert_eq!(estimate_filter_len(&[&g], 0, 25.0, 50.0).unwrap().0, 25);
    assert_eq!(estimate_filter_len(&[&g], 0, 50.0, 50.0).unwrap().0, 49);
    let mut h = Grid::zeros(100, 1);
    for t in 0..31 {
        h.set(t, 0, 1.0);
    }
    assert_eq!(estimate_filter_len(&[&h], 0, 100.0, 50.0).unwrap().0, 31);
    let empty = Grid::zeros(10, 1);
    assert_eq!(estimate_filter_len(&[&empty], 0, 50.0, 16000.0 / 255.0).unwrap(), (27, None));
}

#[test]
fn global_filter_at_default_rate() {
    assert_eq!(global_filter_len(16000.0 / 255.0), 27);
}

#[test]
fn median_examples() {
    let s = [false, true, true, false, true];
    assert_eq!(median_smooth(&s, 1).unwrap(), s.to_vec());
    assert_eq!(median_smooth(&[true; 7], 5).unwrap(), vec![true; 7]);
    assert_eq!(median_smooth(&[false, false, true, false, false], 3).unwrap(), vec![false; 5]);
    assert!(median_smooth(&s, 4).is_err());
    // edge replication: a leading pair of ones survives a length-3 window
    assert_eq!(median_smooth(&[true, true, false, false], 3).unwrap(), vec![true, true, false, false]);
}

fn median_oracle(s: &[bool], len: usize) -> Vec<bool> {
    let h = (len / 2) as isize;
    (0..s.len() as isize)
        .map(|i| {
            let mut w: Vec<bool> = (i - h..=i + h).map(|j| s[j.clamp(0, s.len() as isize - 1) as usize]).collect();
            w.sort();
            w[len / 2]
        })
        .collect()
}

#[test]
fn extract_examples() {
    assert!(extract_intervals(&Grid::zeros(20, 2), 50.0).is_empty());
    let mut g = Grid::zeros(40, 2);
    for t in 10..20 {
        g.set(t, 1, 1.0);
    }
    let e = extract_intervals(&g, 50.0);
    assert_eq!(e.len(), 1);
    assert_eq!(e[0].class, 1);
    assert!((e[0].onset - 0.2).abs() < 1e-12 && (e[0].offset - 0.4).abs() < 1e-12);
}

#[test]
fn global_examples() {
    let p = Grid::filled(50, 2, 0.5);
    assert!(global_postproc(&p, 50.0).is_empty());
    let q = Grid::filled(50, 2, 0.5 + 1e-12);
    assert_eq!(global_postproc(&q, 50.0).len(), 2);
    assert!(global_postproc(&Grid::zeros(0, 3), 50.0).is_empty());
}

#[test]
fn classwise_params_validated() {
    let p = Grid::filled(10, 2, 0.7);
    let mut params = ClasswisePostprocParams::global(2, 50.0);
    params.classes[0].filter_len = 4;
    assert!(classwise_postproc(&p, &params, 50.0).is_err());
    let params = ClasswisePostprocParams::global(3, 50.0);
    assert!(classwise_postproc(&p, &params, 50.0).is_err());
}

#[test]
fn classwise_fit_on_separable_weak_clips() {
    let mut r = rng::seeded(30);
    let fps = 40.0;
    let mut grids = Vec::new();
    let mut labels = Vec::new();
    for i in 0..40 {
        let mut g = Grid::zeros(200, 2);
        let present = i % 2 == 0;
        for t in 0..200 {
            let active = present && (50..110).contains(&t);
            let base: f64 = if active { 3.0 } else { -3.0 };
            g.set(t, 0, crate::math::sigmoid(base + 0.7 * rng::normal(&mut r)));
            g.set(t, 1, crate::math::sigmoid(-4.0 + 0.5 * rng::normal(&mut r)));
        }
        grids.push(g);
        labels.push(WeakLabel::from_bools(&[present, false]));
    }
    let weak: Vec<_> = grids.iter().zip(&labels).collect();
    let params = fit_classwise_params(&weak, 2, 0.0002, 50.0, fps).unwrap();
    params.validate().unwrap();
    assert!(matches!(params.classes[0].evt, Some(EvtOutcome::Fitted { .. })));
    // active logits ~ N(3, 0.7): the 0.02% lower quantile is 3 - 3.540 * 0.7
    let t = crate::math::logit(params.classes[0].threshold);
    assert!((t - (3.0 - 3.540 * 0.7)).abs() < 0.4, "{t}");
    let mean = params.classes[0].mean_run_frames.unwrap();
    assert!((mean - 60.0).abs() < 10.0, "{mean}");
    assert_eq!(params.classes[1].threshold, 0.5);
    assert_eq!(fallback_report(&params).len(), 1);
}

#[test]
fn sweep_covers_grid_and_scores_perfect_detector() {
    let mut r = rng::seeded(31);
    let fps = 10.0;
    let mut grids = Vec::new();
    let mut labels = Vec::new();
    let mut refs = Vec::new();
    for i in 0..30 {
        let mut g = Grid::zeros(100, 2);
        let present = i % 3 != 0;
        for t in 0..100 {
            let active = present && (20..60).contains(&t);
            let base: f64 = if active { 4.0 } else { -4.0 };
            g.set(t, 0, crate::math::sigmoid(base + 0.5 * rng::normal(&mut r)));
            g.set(t, 1, crate::math::sigmoid(-5.0 + 0.5 * rng::normal(&mut r)));
        }
        grids.push(g);
        labels.push(WeakLabel::from_bools(&[present, false]));
        refs.push(if present { vec![EventInterval::new(0, 2.0, 6.0).unwrap()] } else { vec![] });
    }
    let weak: Vec<_> = grids.iter().zip(&labels).collect();
    let eval: Vec<ScoredClip<'_>> = grids.iter().zip(&refs).map(|(g, r)| (g, r.as_slice())).collect();
    let pts = sweep_classwise(&weak, &eval, 2, fps, 0.2).unwrap();
    assert_eq!(pts.len(), ALPHA_STEPS * BETA_STEPS);
    assert_eq!(pts[0].alpha, ALPHA_RANGE.0);
    assert_eq!(pts[1].beta, beta_grid()[1]);
    let best = best_point(&pts).unwrap();
    assert!(pts.iter().all(|p| p.macro_f <= best.macro_f));
    // Class 1 never occurs, so its score is 0 and the macro average is at most 1/2.
    assert!((best.macro_f - 0.5).abs() < 1e-12, "{best:?}");
    assert!((global_macro_f(&eval, 2, fps, 0.2).unwrap() - 0.5).abs() < 1e-12);
}

#[test]
fn best_point_prefers_first_on_ties() {
    let p = |a, f| SweepPoint { alpha: a, beta: 1.0, macro_f: f };
    assert_eq!(best_point(&[p(1.0, 0.3), p(2.0, 0.3), p(3.0, 0.1)]).unwrap().alpha, 1.0);
    assert_eq!(best_point(&[]), None);
}

proptest! {
    #[test]
    fn median_matches_sorting_oracle(bits in proptest::collection::vec(any::<bool>(), 1..60), half in 0usize..6) {
        let len = 2 * half + 1;
        prop_assert_eq!(median_smooth(&bits, len).unwrap(), median_oracle(&bits, len));
    }

    #[test]
    fn extract_rasterize_round_trip(bits in proptest::collection::vec(any::<bool>(), 1..120), fps in 10.0f64..100.0) {
        let frames = bits.len() / 2;
        prop_assume!(frames > 0);
        let g = Grid::from_vec(frames, 2, bits[..frames * 2].iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()).unwrap();
        let back = rasterize(&extract_intervals(&g, fps), frames, 2, fps).unwrap();
        prop_assert_eq!(back, g);
    }

    #[test]
    fn larger_threshold_never_adds_frames(vals in proptest::collection::vec(0.0f64..1.0, 30), lo in 0.0f64..1.0, d in 0.0f64..0.5) {
        let p = Grid::from_vec(15, 2, vals).unwrap();
        let a = threshold_grid(&p, &[lo, lo]).unwrap();
        let b = threshold_grid(&p, &[lo + d, lo + d]).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            prop_assert!(y <= x);
        }
    }

    #[test]
    fn classwise_with_global_params_is_global(vals in proptest::collection::vec(0.0f64..1.0, 3 * 40), fps in 20.0f64..80.0) {
        let p = Grid::from_vec(40, 3, vals).unwrap();
        let params = ClasswisePostprocParams::global(3, fps);
        prop_assert_eq!(classwise_postproc(&p, &params, fps).unwrap(), global_postproc(&p, fps));
    }

    #[test]
    fn median_is_local(bits in proptest::collection::vec(any::<bool>(), 20..40), flip in 0usize..20) {
        let len = 5;
        let mut other = bits.clone();
        other[flip] = !other[flip];
        let a = median_smooth(&bits, len).unwrap();
        let b = median_smooth(&other, len).unwrap();
        for i in 0..bits.len() {
            if (i as isize - flip as isize).unsigned_abs() > len / 2 {
                prop_assert_eq!(a[i], b[i]);
            }
        }
    }
}

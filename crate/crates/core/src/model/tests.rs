use super::*;
use crate::rng;
use rand::Rng;

fn tiny_cfg() -> ModelConfig {
    ModelConfig {
        n_mel_in: 8,
        conv_blocks: vec![
            ConvBlockConfig { out_channels: 3, pool: (2, 2) },
            ConvBlockConfig { out_channels: 4, pool: (2, 4) },
        ],
        recurrent_hidden: 3,
        recurrent_layers: 2,
        n_classes: 2,
        dropout_rate: 0.3,
    }
}

fn features(frames: usize, channels: usize, seed: u64) -> FeatureGrid {
    let mut r = rng::seeded(seed);
    let data: Vec<f64> = (0..frames * channels).map(|_| r.gen_range(-1.0..1.0)).collect();
    FeatureGrid::new(Grid::from_vec(frames, channels, data).unwrap(), 40.0).unwrap()
}

// Independent count: walk the config and add up every tensor by hand.
fn count_by_hand(cfg: &ModelConfig) -> usize {
    let mut total = 0;
    let mut cin = 1;
    for b in &cfg.conv_blocks {
        let conv = b.out_channels * cin * 3 * 3;
        let affine = b.out_channels + b.out_channels;
        let glu = b.out_channels * b.out_channels + b.out_channels;
        total += conv + affine + glu;
        cin = b.out_channels;
    }
    let h = cfg.recurrent_hidden;
    let mut d = cin;
    for _ in 0..cfg.recurrent_layers {
        for _dir in 0..2 {
            total += 3 * h * d + 3 * h * h + 3 * h + 3 * h;
        }
        d = 2 * h;
    }
    total + cfg.n_classes * d + cfg.n_classes
}

#[test]
fn param_count_matches_layout_and_hand_count() {
    for cfg in [tiny_cfg(), ModelConfig::desk(64, 10), ModelConfig::full_scale(10)] {
        let net = Network::new(&cfg).unwrap();
        assert_eq!(net.layout().total(), cfg.param_count());
        assert_eq!(cfg.param_count(), count_by_hand(&cfg));
    }
}

#[test]
fn layout_entries_are_contiguous() {
    let net = Network::new(&tiny_cfg()).unwrap();
    let mut offset = 0;
    for e in net.layout().entries() {
        assert_eq!(e.offset, offset);
        offset += e.len();
    }
    assert_eq!(offset, net.layout().total());
    assert!(Layout::from_entries(net.layout().entries().to_vec()).is_ok());
}

#[test]
fn output_has_pooled_frames_and_open_unit_range() {
    let cfg = ModelConfig::desk(16, 10);
    let net = Network::new(&cfg).unwrap();
    let p = net.init_params(1);
    let x = features(400, 16, 2);
    let (y, cache) = net.forward(&p, &x, Mode::Eval).unwrap();
    assert!(cache.is_none());
    assert_eq!(y.shape(), (100, 10));
    assert!(y.as_slice().iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn huge_weights_stay_strictly_inside_unit_interval() {
    let net = Network::new(&tiny_cfg()).unwrap();
    let mut p = net.init_params(3);
    let e = net.layout().get("head.bias").unwrap().clone();
    p.values[e.offset] = 1e6;
    p.values[e.offset + 1] = -1e6;
    let (y, _) = net.forward(&p, &features(16, 8, 4), Mode::Eval).unwrap();
    for t in 0..y.frames() {
        assert!(y.get(t, 0) < 1.0 && y.get(t, 1) > 0.0);
    }
}

#[test]
fn rejects_bad_inputs() {
    let net = Network::new(&tiny_cfg()).unwrap();
    let p = net.init_params(0);
    assert!(net.forward(&p, &features(16, 7, 0), Mode::Eval).is_err());
    assert!(net.forward(&p, &features(3, 8, 0), Mode::Eval).is_err());
    let mut cfg = tiny_cfg();
    cfg.conv_blocks[1].pool = (2, 2);
    assert!(Network::new(&cfg).is_err());
    let other = Network::new(&ModelConfig::desk(8, 2)).unwrap();
    assert!(net.forward(&other.init_params(0), &features(16, 8, 0), Mode::Eval).is_err());
}

#[test]
fn eval_mode_is_deterministic_and_train_mode_replays_masks() {
    let net = Network::new(&tiny_cfg()).unwrap();
    let p = net.init_params(5);
    let x = features(16, 8, 6);
    let (a, _) = net.forward(&p, &x, Mode::Eval).unwrap();
    let (b, _) = net.forward(&p, &x, Mode::Eval).unwrap();
    assert_eq!(a, b);
    let mut r = rng::seeded(9);
    let (c, cache) = net.forward(&p, &x, Mode::Train(&mut r)).unwrap();
    let cache = cache.unwrap();
    assert!(cache.masks().conv.iter().all(|m| m.is_some()));
    let (d, _) = net.forward_with_masks(&p, &x, cache.masks()).unwrap();
    assert_eq!(c, d);
    assert_ne!(a, c);
}

fn loss(y: &Grid, w: &Grid) -> f64 {
    y.as_slice().iter().zip(w.as_slice()).map(|(a, b)| a * b).sum()
}

#[test]
fn gradients_match_central_differences() {
    let net = Network::new(&tiny_cfg()).unwrap();
    let mut p = net.init_params(11);
    // push the affine and biases away from their init values so every path is exercised
    let mut r = rng::seeded(12);
    for v in p.values.iter_mut() {
        *v += r.gen_range(-0.3..0.3);
    }
    let x = features(16, 8, 13);
    let mut mr = rng::seeded(14);
    let (_, cache) = net.forward(&p, &x, Mode::Train(&mut mr)).unwrap();
    let cache = cache.unwrap();
    let masks = cache.masks().clone();
    let out_frames = cache.output().frames();
    let w = Grid::from_vec(out_frames, 2, (0..out_frames * 2).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap();
    let g = net.backward(&p, &cache, &w).unwrap();

    let h = 1e-4;
    let n = p.len();
    let coords: Vec<usize> = if n <= 200 { (0..n).collect() } else { (0..200).map(|i| i * n / 200).collect() };
    let mut worst: f64 = 0.0;
    for &i in &coords {
        let mut plus = p.clone();
        plus.values[i] += h;
        let mut minus = p.clone();
        minus.values[i] -= h;
        let fp = loss(&net.forward_with_masks(&plus, &x, &masks).unwrap().0, &w);
        let fm = loss(&net.forward_with_masks(&minus, &x, &masks).unwrap().0, &w);
        let numeric = (fp - fm) / (2.0 * h);
        let denom = g[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((g[i] - numeric).abs() / denom);
    }
    assert!(worst < 1e-5, "worst relative error {worst}");
}

#[test]
fn clamped_logits_have_zero_gradient() {
    let net = Network::new(&tiny_cfg()).unwrap();
    let mut p = net.init_params(3);
    let e = net.layout().get("head.bias").unwrap().clone();
    p.values[e.offset] = 100.0;
    let cache = net.forward_cached(&p, &features(16, 8, 1)).unwrap();
    let w = Grid::filled(cache.output().frames(), 2, 1.0);
    let g = net.backward(&p, &cache, &w).unwrap();
    assert_eq!(g[e.offset], 0.0);
    assert!(g[e.offset + 1] != 0.0);
}

#[test]
fn glu_scalar_oracle() {
    // one channel, one position: (w x + b) * sigmoid(x)
    let (x, w, b) = (0.7_f64, 1.3_f64, -0.2_f64);
    let expected = (w * x + b) / (1.0 + (-x).exp());
    let got = glu(&[x], 1, 1, &[w], &[b]);
    assert!((got[0] - expected).abs() < 1e-15);
}

#[test]
fn glu_two_channel_oracle() {
    let x = [0.5, -1.0];
    let w = [1.0, 2.0, -0.5, 0.25];
    let b = [0.1, 0.0];
    let s = |v: f64| 1.0 / (1.0 + (-v).exp());
    let e0 = (1.0 * 0.5 + 2.0 * -1.0 + 0.1) * s(0.5);
    let e1 = (-0.5 * 0.5 + 0.25 * -1.0) * s(-1.0);
    let got = glu(&x, 2, 1, &w, &b);
    assert!((got[0] - e0).abs() < 1e-15 && (got[1] - e1).abs() < 1e-15);
}

#[test]
fn adam_minimises_quadratic() {
    let layout = Arc::new(Layout::from_entries(vec![LayoutEntry { name: "w".into(), offset: 0, shape: vec![10] }]).unwrap());
    let mut p = ModelParams { layout, values: (0..10).map(|i| 0.1 * (i as f64 - 4.5)).collect() };
    let mut opt = OptState::new(10);
    opt.lr_cap = 0.1;
    for _ in 0..200 {
        let g: Vec<f64> = p.values.iter().map(|w| 2.0 * w).collect();
        adam_step(&mut p, &g, &mut opt, 0.05).unwrap();
    }
    let norm: f64 = p.values.iter().map(|w| w * w).sum();
    assert!(norm < 1e-2, "{norm}");
}

#[test]
fn adam_rejects_lr_above_cap_and_nan_gradients() {
    let net = Network::new(&tiny_cfg()).unwrap();
    let mut p = net.init_params(0);
    let mut opt = OptState::new(p.len());
    let g = vec![0.0; p.len()];
    assert!(adam_step(&mut p, &g, &mut opt, 0.002).is_err());
    let mut bad = g.clone();
    bad[3] = f64::NAN;
    assert!(matches!(adam_step(&mut p, &bad, &mut opt, 0.001), Err(crate::Error::Divergence(_))));
}

#[test]
fn ema_with_zero_decay_copies_student() {
    let net = Network::new(&tiny_cfg()).unwrap();
    let s = net.init_params(1);
    let mut t = net.init_params(2);
    ema_update(&mut t, &s, 0.0).unwrap();
    assert_eq!(t, s);
    assert_eq!(warmup_decay(0.999, 0), 0.0);
    assert!((warmup_decay(0.999, 1) - 0.5).abs() < 1e-15);
    assert_eq!(warmup_decay(0.999, 100_000), 0.999);
}

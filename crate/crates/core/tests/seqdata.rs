use std::f64::consts::PI;

use crst_core::seqdata::{log_mel, mel_band_center, mel_filterbank, mixup, synth_scene, PreprocConfig, SceneConfig};
use crst_core::{FeatureGrid, Grid};
use proptest::prelude::*;

fn preproc() -> PreprocConfig {
    PreprocConfig { sample_rate: 8000.0, fft_len: 512, hop: 128, n_mel: 24, mel_fmin: 0.0, mel_fmax: 4000.0, floor_eps: 1e-5, clip_len: 0.5 }
}

fn tone(cfg: &PreprocConfig, hz: f64) -> Vec<f64> {
    (0..cfg.clip_samples()).map(|i| (2.0 * PI * hz * i as f64 / cfg.sample_rate).sin()).collect()
}

// Direct O(n^2) DFT of one windowed frame, integrated through the filterbank.
fn naive_log_mel_frame(cfg: &PreprocConfig, wave: &[f64], frame: usize) -> Vec<f64> {
    let n = cfg.fft_len;
    let pad = n / 2;
    let sample = |i: usize| -> f64 {
        let j = (frame * cfg.hop + i) as isize - pad as isize;
        if j >= 0 && (j as usize) < wave.len() {
            wave[j as usize]
        } else {
            0.0
        }
    };
    let x: Vec<f64> = (0..n).map(|i| sample(i) * (0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())).collect();
    let mag: Vec<f64> = (0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, v) in x.iter().enumerate() {
                let w = 2.0 * PI * (k * i) as f64 / n as f64;
                re += v * w.cos();
                im -= v * w.sin();
            }
            re.hypot(im)
        })
        .collect();
    mel_filterbank(cfg)
        .iter()
        .map(|f| {
            let p: f64 = f.iter().zip(&mag).map(|(a, b)| a * b).sum();
            (p * p).max(cfg.floor_eps * cfg.floor_eps).ln()
        })
        .collect()
}

#[test]
fn tone_at_band_center_peaks_in_that_band() {
    let cfg = preproc();
    for band in [3, 8, 12, 17, 21] {
        let wave = tone(&cfg, mel_band_center(&cfg, band));
        let x = log_mel(&wave, &cfg).unwrap();
        assert_eq!(x.frames(), 1 + cfg.clip_samples() / cfg.hop);
        for m in 4..x.frames() - 4 {
            let row = x.data.row(m);
            let argmax = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert_eq!(argmax, band, "frame {m}");
        }
        let mid = x.frames() / 2;
        for (got, want) in x.data.row(mid).iter().zip(naive_log_mel_frame(&cfg, &wave, mid)) {
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
    }
}

#[test]
fn edge_frames_match_direct_dft() {
    let cfg = preproc();
    let wave: Vec<f64> = (0..cfg.clip_samples()).map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0).collect();
    let x = log_mel(&wave, &cfg).unwrap();
    for m in [0, x.frames() - 1] {
        for (got, want) in x.data.row(m).iter().zip(naive_log_mel_frame(&cfg, &wave, m)) {
            assert!((got - want).abs() < 1e-9);
        }
    }
}

#[test]
fn polyphony_bounded_over_ten_thousand_clips() {
    let mut cfg = SceneConfig::with_classes(3);
    cfg.clip_len = 2.0;
    cfg.fps = 20.0;
    cfg.n_channels = 4;
    cfg.event_rate = 8.0;
    cfg.durations = vec![(0.2, 0.6), (0.4, 1.0), (0.5, 1.5)];
    let mut peak = 0;
    for seed in 0..10_000 {
        let (_, y) = synth_scene(seed, &cfg).unwrap();
        for row in y.grid().rows() {
            let active = row.iter().filter(|&&v| v > 0.5).count();
            assert!(active <= 2, "seed {seed}: {active} simultaneous events");
            peak = peak.max(active);
        }
    }
    assert_eq!(peak, 2);
}

fn feature(frames: usize, ch: usize, seed: u64) -> FeatureGrid {
    let data = (0..frames * ch).map(|i| ((i as u64 * 2654435761 + seed) % 1000) as f64 / 100.0 - 5.0).collect();
    FeatureGrid::new(Grid::from_vec(frames, ch, data).unwrap(), 40.0).unwrap()
}

proptest! {
    #[test]
    fn mixup_is_convex(lambda in 0.0f64..=1.0, s1 in 0u64..1000, s2 in 0u64..1000) {
        let (a, b) = (feature(6, 3, s1), feature(6, 3, s2));
        let m = mixup(&a, &b, lambda).unwrap();
        for ((x, y), z) in a.data.as_slice().iter().zip(b.data.as_slice()).zip(m.data.as_slice()) {
            prop_assert!((z - (lambda * x + (1.0 - lambda) * y)).abs() < 1e-12);
            prop_assert!(*z >= x.min(*y) - 1e-12 && *z <= x.max(*y) + 1e-12);
        }
    }
}

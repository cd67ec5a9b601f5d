//! Synthetic scenes, preprocessing, dataset splits and input perturbations.

mod logmel;
mod synth;

pub use logmel::{hann, hz_to_mel, log_mel, mel_band_center, mel_filterbank, mel_to_hz, PreprocConfig};
pub use synth::{
    generate_dataset, synth_scene, synth_scene_events, Clip, Dataset, DatasetConfig, SceneConfig,
    SynthEvent,
};

use crate::error::{invalid, Error, Result};
use crate::grid::{FeatureGrid, Grid, StrongLabelGrid, WeakLabel};
use crate::math;
use crate::rng;

/// Default SNR of the perturbed training view, dB.
pub const DEFAULT_PERTURB_SNR_DB: f64 = 30.0;

/// Standard deviation (frames) of the frame-shift delay sampler.
pub const DEFAULT_SHIFT_SIGMA: f64 = 40.0;

/// Class `c` is present iff any frame has it active.
pub fn weaken(y: &StrongLabelGrid) -> WeakLabel {
    let present: alloc::vec::Vec<bool> =
        (0..y.classes()).map(|c| (0..y.frames()).any(|t| y.is_active(t, c))).collect();
    WeakLabel::from_bools(&present)
}

/// Adds white Gaussian noise scaled so that `10 log10(mean(x^2) / sigma^2) = snr_db`.
pub fn add_noise_snr(x: &FeatureGrid, snr_db: f64, seed: u64) -> Result<FeatureGrid> {
    let cells = x.data.as_slice();
    let power = cells.iter().map(|v| v * v).sum::<f64>() / cells.len() as f64;
    if power == 0.0 {
        return Err(Error::ZeroPower);
    }
    let sigma = math::sqrt(power / math::powf(10.0, snr_db / 10.0));
    let mut r = rng::seeded(seed);
    let mut out = x.data.clone();
    for v in out.as_mut_slice() {
        *v += sigma * rng::normal(&mut r);
    }
    Ok(FeatureGrid { data: out, fps: x.fps })
}

/// Circular shift by `delay` frames (positive delays move content later).
pub fn frame_shift(x: &FeatureGrid, delay: i64) -> Result<FeatureGrid> {
    if delay.unsigned_abs() as usize >= x.frames() {
        return Err(invalid(alloc::format!("|delay| = {} must be below {} frames", delay.abs(), x.frames())));
    }
    Ok(FeatureGrid { data: x.data.roll_frames(delay), fps: x.fps })
}

/// Same circular shift applied to a label grid.
pub fn shift_labels(y: &StrongLabelGrid, delay: i64) -> StrongLabelGrid {
    StrongLabelGrid::new(y.grid().roll_frames(delay)).expect("roll keeps labels binary")
}

/// Zero-mean Gaussian delay with `sigma` frames, rounded to a multiple of `quantum`
/// and kept strictly inside `(-frames, frames)`.
pub fn draw_shift_delay(seed: u64, sigma: f64, frames: usize, quantum: usize) -> i64 {
    let mut r = rng::seeded(seed);
    let q = quantum.max(1) as f64;
    let raw = sigma * rng::normal(&mut r);
    let mut d = (math::round(raw / q) * q) as i64;
    let limit = frames as i64 - 1;
    let limit = limit - limit.rem_euclid(quantum.max(1) as i64);
    d = d.clamp(-limit, limit);
    d
}

/// `lambda * x1 + (1 - lambda) * x2`, element-wise.
pub fn mixup(x1: &FeatureGrid, x2: &FeatureGrid, lambda: f64) -> Result<FeatureGrid> {
    Ok(FeatureGrid { data: mix_grids(&x1.data, &x2.data, lambda)?, fps: x1.fps })
}

pub fn mix_grids(a: &Grid, b: &Grid, lambda: f64) -> Result<Grid> {
    if !a.same_shape(b) {
        return Err(invalid("mixup shape mismatch"));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(invalid("mixup lambda must lie in [0, 1]"));
    }
    let data = a.as_slice().iter().zip(b.as_slice()).map(|(p, q)| lambda * p + (1.0 - lambda) * q).collect();
    Grid::from_vec(a.frames(), a.cols(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn feat(frames: usize, cols: usize, v: f64) -> FeatureGrid {
        FeatureGrid::new(Grid::filled(frames, cols, v), 10.0).unwrap()
    }

    #[test]
    fn weaken_cases() {
        let y = StrongLabelGrid::zeros(5, 3);
        assert_eq!(weaken(&y).as_slice(), &[0.0, 0.0, 0.0]);
        let mut y = StrongLabelGrid::zeros(5, 3);
        y.activate(2, 2);
        assert_eq!(weaken(&y).as_slice(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn weaken_is_column_or() {
        let mut r = rng::seeded(11);
        for _ in 0..50 {
            let mut y = StrongLabelGrid::zeros(20, 4);
            for t in 0..20 {
                for c in 0..4 {
                    if rand::Rng::gen_bool(&mut r, 0.05) {
                        y.activate(t, c);
                    }
                }
            }
            let w = weaken(&y);
            for c in 0..4 {
                let mut any = false;
                for t in 0..20 {
                    any |= y.grid().get(t, c) == 1.0;
                }
                assert_eq!(w.contains(c), any);
            }
        }
    }

    #[test]
    fn noise_zero_power_error() {
        assert_eq!(add_noise_snr(&feat(4, 4, 0.0), 30.0, 1).unwrap_err(), Error::ZeroPower);
    }

    #[test]
    fn noise_high_snr_is_tiny() {
        let mut r = rng::seeded(2);
        let data: vec::Vec<f64> = (0..400).map(|_| rng::normal(&mut r) * 3.0 - 5.0).collect();
        let x = FeatureGrid::new(Grid::from_vec(100, 4, data).unwrap(), 50.0).unwrap();
        let rms = (x.data.as_slice().iter().map(|v| v * v).sum::<f64>() / 400.0).sqrt();
        let y = add_noise_snr(&x, 200.0, 9).unwrap();
        let max = x.data.as_slice().iter().zip(y.data.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(max < 1e-3 * rms);
    }

    #[test]
    fn noise_empirical_snr() {
        let mut r = rng::seeded(5);
        let data: vec::Vec<f64> = (0..100_000).map(|_| rng::normal(&mut r) - 4.0).collect();
        let x = FeatureGrid::new(Grid::from_vec(1000, 100, data).unwrap(), 50.0).unwrap();
        let y = add_noise_snr(&x, DEFAULT_PERTURB_SNR_DB, 3).unwrap();
        let ps: f64 = x.data.as_slice().iter().map(|v| v * v).sum::<f64>();
        let pn: f64 = x.data.as_slice().iter().zip(y.data.as_slice()).map(|(a, b)| (a - b) * (a - b)).sum();
        let snr = 10.0 * (ps / pn).log10();
        assert!((snr - 30.0).abs() < 0.5, "{snr}");
        assert_eq!(y.data.shape(), x.data.shape());
        assert_eq!(y.fps, x.fps);
        assert_eq!(y, add_noise_snr(&x, 30.0, 3).unwrap());
    }

    #[test]
    fn shift_identity_and_inverse() {
        let data: vec::Vec<f64> = (0..30).map(f64::from).collect();
        let x = FeatureGrid::new(Grid::from_vec(10, 3, data).unwrap(), 10.0).unwrap();
        assert_eq!(frame_shift(&x, 0).unwrap(), x);
        let y = frame_shift(&frame_shift(&x, 7).unwrap(), -7).unwrap();
        assert_eq!(y, x);
        assert!(frame_shift(&x, 10).is_err());
        assert!(frame_shift(&x, -10).is_err());
        assert_eq!(DEFAULT_SHIFT_SIGMA, 40.0);
    }

    #[test]
    fn shift_delay_quantized() {
        for s in 0..200 {
            let d = draw_shift_delay(s, 40.0, 100, 4);
            assert_eq!(d % 4, 0);
            assert!(d.abs() < 100);
        }
    }

    #[test]
    fn mixup_cases() {
        let a = feat(3, 2, 4.0);
        let b = feat(3, 2, 8.0);
        assert_eq!(mixup(&a, &b, 1.0).unwrap(), a);
        assert_eq!(mixup(&a, &a, 0.37).unwrap(), a);
        let m = mixup(&a, &b, 0.25).unwrap();
        assert!(m.data.as_slice().iter().all(|&v| (v - 7.0).abs() < 1e-15));
        assert!(mixup(&a, &feat(2, 2, 1.0), 0.5).is_err());
        assert!(mixup(&a, &b, 1.5).is_err());
    }
}

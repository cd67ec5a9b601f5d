//! Waveform to log-Mel features.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{invalid, Result};
use crate::grid::{FeatureGrid, Grid};
use crate::math;

/// STFT and Mel settings for waveform preprocessing.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct PreprocConfig {
    pub sample_rate: f64,
    pub fft_len: usize,
    pub hop: usize,
    pub n_mel: usize,
    pub mel_fmin: f64,
    pub mel_fmax: f64,
    pub floor_eps: f64,
    /// Seconds; longer input is cut, shorter input zero-padded.
    pub clip_len: f64,
}

impl Default for PreprocConfig {
    fn default() -> Self {
        PreprocConfig {
            sample_rate: 16_000.0,
            fft_len: 2048,
            hop: 255,
            n_mel: 128,
            mel_fmin: 0.0,
            mel_fmax: 8000.0,
            floor_eps: 1.0e-5,
            clip_len: 10.0,
        }
    }
}

impl PreprocConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.hop >= self.fft_len {
            return Err(invalid("hop must satisfy 0 < hop < fft_len"));
        }
        if !(self.floor_eps > 0.0) {
            return Err(invalid("floor_eps must be positive"));
        }
        if self.n_mel == 0 {
            return Err(invalid("n_mel must be at least 1"));
        }
        if !(self.sample_rate > 0.0) || !(self.clip_len > 0.0) {
            return Err(invalid("sample_rate and clip_len must be positive"));
        }
        if !(self.mel_fmin >= 0.0 && self.mel_fmin < self.mel_fmax && self.mel_fmax <= self.sample_rate / 2.0) {
            return Err(invalid("mel range must satisfy 0 <= fmin < fmax <= sample_rate / 2"));
        }
        Ok(())
    }

    pub fn fps(&self) -> f64 {
        self.sample_rate / self.hop as f64
    }

    pub fn clip_samples(&self) -> usize {
        math::round(self.clip_len * self.sample_rate) as usize
    }

    pub fn frame_count(&self) -> usize {
        1 + self.clip_samples() / self.hop
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * math::log10(1.0 + hz / 700.0)
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (math::powf(10.0, mel / 2595.0) - 1.0)
}

/// Triangular, area-normalized filters: `n_mel` rows over `fft_len / 2 + 1` bins.
pub fn mel_filterbank(cfg: &PreprocConfig) -> Vec<Vec<f64>> {
    let n_bins = cfg.fft_len / 2 + 1;
    let mel_lo = hz_to_mel(cfg.mel_fmin);
    let mel_hi = hz_to_mel(cfg.mel_fmax);
    let edges: Vec<f64> = (0..cfg.n_mel + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (cfg.n_mel + 1) as f64))
        .collect();
    let bin_hz = cfg.sample_rate / cfg.fft_len as f64;
    (0..cfg.n_mel)
        .map(|n| {
            let (lo, mid, hi) = (edges[n], edges[n + 1], edges[n + 2]);
            let norm = 2.0 / (hi - lo);
            (0..n_bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    let up = (f - lo) / (mid - lo);
                    let down = (hi - f) / (hi - mid);
                    norm * up.min(down).max(0.0)
                })
                .collect()
        })
        .collect()
}

/// Center frequency (Hz) of Mel band `n`.
pub fn mel_band_center(cfg: &PreprocConfig, n: usize) -> f64 {
    let mel_lo = hz_to_mel(cfg.mel_fmin);
    let mel_hi = hz_to_mel(cfg.mel_fmax);
    mel_to_hz(mel_lo + (mel_hi - mel_lo) * (n + 1) as f64 / (cfg.n_mel + 1) as f64)
}

/// Periodic Hann window.
pub fn hann(len: usize) -> Vec<f64> {
    (0..len).map(|i| 0.5 - 0.5 * math::cos(2.0 * PI * i as f64 / len as f64)).collect()
}

/// In-place iterative radix-2 FFT; `re.len()` must be a power of two.
fn fft_in_place(re: &mut [f64], im: &mut [f64]) {
    let n = re.len();
    let mut j = 0;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let ang = -2.0 * PI / len as f64;
        let half = len / 2;
        let twiddles: Vec<(f64, f64)> =
            (0..half).map(|k| (math::cos(ang * k as f64), math::sin(ang * k as f64))).collect();
        for start in (0..n).step_by(len) {
            for (k, &(wr, wi)) in twiddles.iter().enumerate() {
                let a = start + k;
                let b = a + half;
                let tr = re[b] * wr - im[b] * wi;
                let ti = re[b] * wi + im[b] * wr;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
            }
        }
        len <<= 1;
    }
}

/// Magnitudes of bins `0..=len/2` of a real frame.
fn magnitude_spectrum(frame: &[f64]) -> Vec<f64> {
    let n = frame.len();
    let n_bins = n / 2 + 1;
    if n.is_power_of_two() {
        let mut re = frame.to_vec();
        let mut im = vec![0.0; n];
        fft_in_place(&mut re, &mut im);
        (0..n_bins).map(|k| math::sqrt(re[k] * re[k] + im[k] * im[k])).collect()
    } else {
        (0..n_bins)
            .map(|k| {
                let (mut sr, mut si) = (0.0, 0.0);
                for (i, &x) in frame.iter().enumerate() {
                    let ang = -2.0 * PI * (k * i % n) as f64 / n as f64;
                    sr += x * math::cos(ang);
                    si += x * math::sin(ang);
                }
                math::sqrt(sr * sr + si * si)
            })
            .collect()
    }
}

/// `x[m, n] = ln(max(P[m, n]^2, eps^2))` with `P` the Mel-integrated STFT magnitude.
///
/// Frames are centered (half a window of zero padding on both ends), giving
/// `1 + clip_samples / hop` frames at `sample_rate / hop` frames per second.
pub fn log_mel(waveform: &[f64], cfg: &PreprocConfig) -> Result<FeatureGrid> {
    cfg.validate()?;
    if waveform.is_empty() {
        return Err(invalid("empty waveform"));
    }
    if waveform.iter().any(|v| !v.is_finite()) {
        return Err(invalid("waveform has non-finite samples"));
    }
    let n_samples = cfg.clip_samples();
    let pad = cfg.fft_len / 2;
    let mut padded = vec![0.0; n_samples + 2 * pad];
    let take = waveform.len().min(n_samples);
    padded[pad..pad + take].copy_from_slice(&waveform[..take]);

    let window = hann(cfg.fft_len);
    let bank = mel_filterbank(cfg);
    let frames = cfg.frame_count();
    let floor = cfg.floor_eps * cfg.floor_eps;
    let mut out = Grid::zeros(frames, cfg.n_mel);
    let mut buf = vec![0.0; cfg.fft_len];
    for m in 0..frames {
        let start = m * cfg.hop;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = padded[start + i] * window[i];
        }
        let spec = magnitude_spectrum(&buf);
        for (n, filt) in bank.iter().enumerate() {
            let p: f64 = filt.iter().zip(&spec).map(|(w, s)| w * s).sum();
            out.set(m, n, math::ln((p * p).max(floor)));
        }
    }
    FeatureGrid::new(out, cfg.fps())
}

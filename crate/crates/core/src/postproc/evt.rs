//! Peaks-over-threshold detection thresholds in the logit domain.
//!
//! The target-cluster logits are negated, so low-confidence detections form
//! the upper tail. Excesses over the empirical 0.9 quantile `u` are fitted by
//! a generalized Pareto distribution with scale `a` and shape `c`, and the
//! threshold is the level exceeded with probability `alpha`.

use alloc::format;
use alloc::vec::Vec;

use super::nelder_mead::{nelder_mead, NelderMeadConfig};
use crate::error::{invalid, Error, Result};
use crate::math::{ln, mean, powf, sample_variance, sigmoid};

/// Quantile level defining the tail threshold `u`.
pub const TAIL_QUANTILE: f64 = 0.9;
/// Minimum number of excesses for a tail fit.
pub const MIN_EXCESSES: usize = 10;
/// Below this `|c|` the exponential-tail limit is used.
pub const SHAPE_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvtFit {
    /// Tail threshold on the negated logits.
    pub u: f64,
    pub a: f64,
    pub c: f64,
    /// Number of excesses.
    pub n: usize,
    /// Number of target-cluster samples.
    pub total: usize,
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(samples: &[f64], q: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("quantile of an empty sample".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(invalid("quantile level must lie in [0, 1]"));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = q * (s.len() - 1) as f64;
    let lo = pos as usize;
    let hi = (lo + 1).min(s.len() - 1);
    Ok(s[lo] + (pos - lo as f64) * (s[hi] - s[lo]))
}

/// GPD log-likelihood of `excesses`; `-inf` outside the support or for `a <= 0`.
pub fn gpd_log_likelihood(excesses: &[f64], a: f64, c: f64) -> f64 {
    if !(a > 0.0) || !a.is_finite() || !c.is_finite() {
        return f64::NEG_INFINITY;
    }
    let n = excesses.len() as f64;
    if c.abs() < SHAPE_EPS {
        return -n * ln(a) - excesses.iter().sum::<f64>() / a;
    }
    let mut acc = 0.0;
    for &z in excesses {
        let t = 1.0 + c * z / a;
        if t <= 0.0 {
            return f64::NEG_INFINITY;
        }
        acc += ln(t);
    }
    -n * ln(a) - (1.0 + 1.0 / c) * acc
}

/// Maximum-likelihood `(a, c)` for non-negative excesses.
pub fn fit_gpd(excesses: &[f64]) -> Result<(f64, f64)> {
    if excesses.len() < MIN_EXCESSES {
        return Err(Error::Degenerate(format!("tail fit needs {MIN_EXCESSES} excesses, got {}", excesses.len())));
    }
    if excesses.iter().any(|z| !(z.is_finite() && *z >= 0.0)) {
        return Err(invalid("excesses must be finite and non-negative"));
    }
    let m = mean(excesses);
    let v = sample_variance(excesses);
    if !(m > 0.0) {
        return Err(Error::Degenerate("all excesses are zero".into()));
    }
    // method-of-moments start, kept inside the support
    let (mut a0, mut c0) = if v > 0.0 {
        let r = m * m / v;
        (0.5 * m * (r + 1.0), 0.5 * (1.0 - r))
    } else {
        (m, 0.0)
    };
    let zmax = excesses.iter().copied().fold(0.0, f64::max);
    if !gpd_log_likelihood(excesses, a0, c0).is_finite() {
        a0 = m;
        c0 = 0.0;
    }
    if c0 < 0.0 && 1.0 + c0 * zmax / a0 <= 1e-3 {
        c0 = -0.5 * a0 / zmax;
    }
    let scale = m;
    let objective = |x: &[f64]| -gpd_log_likelihood(excesses, x[0] * scale, x[1]);
    let best = nelder_mead(objective, &[a0 / scale, c0], &NelderMeadConfig::default())?;
    let (a, c) = (best.x[0] * scale, best.x[1]);
    if !gpd_log_likelihood(excesses, a, c).is_finite() {
        return Err(Error::Optimization("tail fit left the feasible region".into()));
    }
    Ok((a, c))
}

/// `u + (a/c) ((N alpha / n)^(-c) - 1)`, with the `c -> 0` limit `u - a ln(N alpha / n)`.
pub fn threshold_from_fit(fit: &EvtFit, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid("alpha must lie in (0, 1)"));
    }
    if fit.n == 0 || fit.n > fit.total {
        return Err(invalid("fit needs 0 < n <= N"));
    }
    let ratio = fit.total as f64 * alpha / fit.n as f64;
    Ok(if fit.c.abs() < SHAPE_EPS {
        fit.u - fit.a * ln(ratio)
    } else {
        fit.u + fit.a / fit.c * (powf(ratio, -fit.c) - 1.0)
    })
}

/// Why a class fell back to the global threshold.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum EvtOutcome {
    Fitted { threshold: f64, t_alpha: f64, fit: EvtFit },
    Fallback { threshold: f64, reason: alloc::string::String },
}

impl EvtOutcome {
    pub fn threshold(&self) -> f64 {
        match self {
            EvtOutcome::Fitted { threshold, .. } | EvtOutcome::Fallback { threshold, .. } => *threshold,
        }
    }
}

/// Fits the negated-logit tail of the target cluster.
pub fn fit_tail(target_logits: &[f64]) -> Result<EvtFit> {
    if target_logits.is_empty() {
        return Err(Error::Empty("no target-cluster samples".into()));
    }
    let reversed: Vec<f64> = target_logits.iter().map(|x| -x).collect();
    let u = quantile(&reversed, TAIL_QUANTILE)?;
    let excesses: Vec<f64> = reversed.iter().filter(|&&r| r > u).map(|r| r - u).collect();
    if excesses.is_empty() {
        return Err(Error::Empty("no samples exceed the tail threshold".into()));
    }
    let (a, c) = fit_gpd(&excesses)?;
    Ok(EvtFit { u, a, c, n: excesses.len(), total: reversed.len() })
}

/// Probability-domain threshold `sigmoid(-t_alpha)`; falls back to `global` when
/// the tail cannot be fitted.
pub fn evt_threshold(target_logits: &[f64], alpha: f64, global: f64) -> Result<EvtOutcome> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid("alpha must lie in (0, 1)"));
    }
    match fit_tail(target_logits) {
        Ok(fit) => {
            let t_alpha = threshold_from_fit(&fit, alpha)?;
            Ok(EvtOutcome::Fitted { threshold: sigmoid(-t_alpha), t_alpha, fit })
        }
        Err(e @ (Error::Empty(_) | Error::Degenerate(_) | Error::Optimization(_))) => {
            Ok(EvtOutcome::Fallback { threshold: global, reason: format!("{e}") })
        }
        Err(e) => Err(e),
    }
}

//! Two-component one-dimensional Gaussian mixture fitted by EM.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{exp, ln, mean, sqrt};

pub const EM_MIN_SAMPLES: usize = 20;
pub const EM_MAX_ITERATIONS: usize = 200;
pub const EM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Component {
    pub weight: f64,
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSplit {
    /// Members of the higher-mean component (maximum responsibility).
    pub target: Vec<f64>,
    /// Lower-mean component first.
    pub components: [Component; 2],
    pub iterations: usize,
    pub log_likelihood: f64,
}

fn log_normal(x: f64, c: &Component) -> f64 {
    let d = x - c.mean;
    -0.5 * (ln(2.0 * core::f64::consts::PI * c.variance) + d * d / c.variance)
}

/// Splits samples into two clusters and keeps the one with the greater mean.
pub fn em_two_cluster(samples: &[f64]) -> Result<ClusterSplit> {
    if samples.len() < EM_MIN_SAMPLES {
        return Err(Error::Degenerate(alloc::format!("EM needs at least {EM_MIN_SAMPLES} samples, got {}", samples.len())));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("EM samples must be finite".into()));
    }
    let m = mean(samples);
    let var = samples.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / samples.len() as f64;
    if var <= 0.0 {
        return Err(Error::Degenerate("samples have zero variance".into()));
    }
    let sd = sqrt(var);
    let floor = var * 1e-10;
    let mut comps = [
        Component { weight: 0.5, mean: m - sd, variance: var },
        Component { weight: 0.5, mean: m + sd, variance: var },
    ];
    let n = samples.len() as f64;
    let mut resp: Vec<f64> = alloc::vec![0.0; samples.len()];
    let mut prev = f64::NEG_INFINITY;
    let mut ll = prev;
    let mut iterations = 0;
    while iterations < EM_MAX_ITERATIONS {
        iterations += 1;
        // E step: responsibility of component 1
        ll = 0.0;
        for (r, &x) in resp.iter_mut().zip(samples) {
            let a = ln(comps[0].weight) + log_normal(x, &comps[0]);
            let b = ln(comps[1].weight) + log_normal(x, &comps[1]);
            let hi = a.max(b);
            let lse = hi + ln(exp(a - hi) + exp(b - hi));
            *r = exp(b - lse);
            ll += lse;
        }
        // M step
        let n1: f64 = resp.iter().sum();
        let n0 = n - n1;
        if n0 <= 0.0 || n1 <= 0.0 {
            break;
        }
        let mu0 = samples.iter().zip(&resp).map(|(x, r)| (1.0 - r) * x).sum::<f64>() / n0;
        let mu1 = samples.iter().zip(&resp).map(|(x, r)| r * x).sum::<f64>() / n1;
        let v0 = samples.iter().zip(&resp).map(|(x, r)| (1.0 - r) * (x - mu0) * (x - mu0)).sum::<f64>() / n0;
        let v1 = samples.iter().zip(&resp).map(|(x, r)| r * (x - mu1) * (x - mu1)).sum::<f64>() / n1;
        comps = [
            Component { weight: n0 / n, mean: mu0, variance: v0.max(floor) },
            Component { weight: n1 / n, mean: mu1, variance: v1.max(floor) },
        ];
        if (ll - prev).abs() < EM_TOLERANCE {
            break;
        }
        prev = ll;
    }
    let hi = usize::from(comps[1].mean >= comps[0].mean);
    let lo = 1 - hi;
    let target: Vec<f64> = samples
        .iter()
        .filter(|&&x| {
            let a = ln(comps[lo].weight) + log_normal(x, &comps[lo]);
            let b = ln(comps[hi].weight) + log_normal(x, &comps[hi]);
            b >= a
        })
        .copied()
        .collect();
    if target.is_empty() {
        return Err(Error::Degenerate("target cluster is empty".into()));
    }
    Ok(ClusterSplit { target, components: [comps[lo], comps[hi]], iterations, log_likelihood: ll })
}

//! Pseudo labels as the expectation over multi-hot labels with at most `K`
//! active classes, each weighted by its independent-Bernoulli probability.
//!
//! Two routes give the same numbers: [`enumerate_pseudo_label`] walks every
//! admissible label, [`dp_pseudo_label`] uses the closed `K = 2` sums in the
//! log-odds domain.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::grid::{Grid, PosteriorGrid, PseudoLabelGrid};
use crate::math::{exp, ln, log_sum_exp};

/// Posteriors are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before any log.
pub const PROB_CLAMP: f64 = 1e-7;
/// Maximum class count accepted by the enumeration route.
pub const MAX_ENUM_CLASSES: usize = 20;
/// Number of concurrently active classes handled by the fast route.
pub const DP_MAX_ACTIVE: usize = 2;

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

fn binomial(n: u64, k: u64) -> Option<u64> {
    let k = k.min(n - k);
    let mut acc: u64 = 1;
    for i in 0..k {
        acc = acc.checked_mul(n - i)? / (i + 1);
    }
    Some(acc)
}

/// `sum_{k=0..K} C choose k`.
pub fn label_count(classes: usize, max_active: usize) -> Result<u64> {
    if max_active > classes {
        return Err(invalid(alloc::format!("K = {max_active} exceeds class count {classes}")));
    }
    (0..=max_active as u64).try_fold(0u64, |acc, k| {
        binomial(classes as u64, k)
            .and_then(|b| acc.checked_add(b))
            .ok_or(Error::TooLarge { what: "label count", got: classes, max: 63 })
    })
}

/// Every admissible label with its normalized probability.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelEnumeration {
    pub max_active: usize,
    pub classes: usize,
    /// Active class indices of each label, ascending.
    pub labels: Vec<Vec<usize>>,
    /// Normalized probabilities, aligned with `labels`; sums to 1.
    pub probs: Vec<f64>,
    /// Unnormalized mass of the admissible labels (the normalizer).
    pub normalizer: f64,
}

/// Calls `f` with every ascending index subset of `0..n` of size `k`.
fn for_each_subset(n: usize, k: usize, f: &mut impl FnMut(&[usize])) {
    if k > n {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        let mut i = k;
        while i > 0 && idx[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Exact expectation by enumeration of all labels with at most `max_active` classes.
pub fn enumerate_pseudo_label(post: &[f64], max_active: usize) -> Result<(Vec<f64>, LabelEnumeration)> {
    let c = post.len();
    if c > MAX_ENUM_CLASSES {
        return Err(Error::TooLarge { what: "enumerated classes", got: c, max: MAX_ENUM_CLASSES });
    }
    label_count(c, max_active)?;
    if post.iter().any(|p| p.is_nan()) {
        return Err(invalid("posterior contains NaN"));
    }
    let probs: Vec<f64> = post.iter().map(|&p| clamp_prob(p)).collect();
    let base: f64 = probs.iter().map(|&p| ln(1.0 - p)).sum();
    let odds: Vec<f64> = probs.iter().map(|&p| ln(p) - ln(1.0 - p)).collect();

    let mut labels = Vec::new();
    let mut logw = Vec::new();
    for k in 0..=max_active {
        for_each_subset(c, k, &mut |s: &[usize]| {
            labels.push(s.to_vec());
            logw.push(base + s.iter().map(|&i| odds[i]).sum::<f64>());
        });
    }
    let log_norm = log_sum_exp(&logw);
    let weights: Vec<f64> = logw.iter().map(|&w| exp(w - log_norm)).collect();
    let mut pseudo = vec![0.0; c];
    for (label, &w) in labels.iter().zip(&weights) {
        for &i in label {
            pseudo[i] += w;
        }
    }
    let enumeration = LabelEnumeration { max_active, classes: c, labels, probs: weights, normalizer: exp(log_norm) };
    Ok((pseudo, enumeration))
}

/// Expectation over labels with at most two active classes, in `O(C^2)`.
pub fn dp_pseudo_label(post: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; post.len()];
    let mut scratch = Scratch::default();
    dp_into(post, &mut out, &mut scratch);
    out
}

#[derive(Default)]
struct Scratch {
    odds: Vec<f64>,
    terms: Vec<f64>,
}

fn dp_into(post: &[f64], out: &mut [f64], s: &mut Scratch) {
    let c = post.len();
    s.odds.clear();
    s.odds.extend(post.iter().map(|&p| {
        let p = clamp_prob(p);
        ln(p) - ln(1.0 - p)
    }));
    let l = &s.odds;
    // normalizer relative to the empty label
    s.terms.clear();
    s.terms.push(0.0);
    s.terms.extend_from_slice(l);
    for i in 0..c {
        for j in i + 1..c {
            s.terms.push(l[i] + l[j]);
        }
    }
    let log_norm = log_sum_exp(&s.terms);
    for i in 0..c {
        s.terms.clear();
        s.terms.push(l[i]);
        for j in 0..c {
            if j != i {
                s.terms.push(l[i] + l[j]);
            }
        }
        out[i] = exp(log_sum_exp(&s.terms) - log_norm).min(1.0);
    }
}

/// Row-wise [`dp_pseudo_label`].
pub fn pseudo_label_grid(teacher: &PosteriorGrid) -> PseudoLabelGrid {
    let mut out = Grid::zeros(teacher.frames(), teacher.cols());
    let mut scratch = Scratch::default();
    for t in 0..teacher.frames() {
        dp_into(teacher.row(t), out.row_mut(t), &mut scratch);
    }
    out
}

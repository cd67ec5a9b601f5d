//! Ramp-up schedule and divergence-based reliability of pseudo labels.

use crate::error::{invalid, Result};
use crate::grid::{PseudoLabelGrid, StrongLabelGrid, WeakLabel};
use crate::math::{exp, log2};

/// `peak * exp(-5 (1 - t/T)^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RampSchedule {
    pub total_steps: u64,
    pub peak: f64,
}

impl RampSchedule {
    pub const DEFAULT_PEAK: f64 = 3.0;

    pub fn new(total_steps: u64, peak: f64) -> Result<Self> {
        if total_steps == 0 {
            return Err(invalid("ramp needs at least one step"));
        }
        if !(peak >= 0.0 && peak.is_finite()) {
            return Err(invalid("ramp peak must be finite and non-negative"));
        }
        Ok(RampSchedule { total_steps, peak })
    }

    pub fn at(&self, step: u64) -> f64 {
        ramp_weight(step, self)
    }
}

/// Ramp value at step `t`; steps beyond `T` are clamped to `T`.
pub fn ramp_weight(t: u64, sched: &RampSchedule) -> f64 {
    let total = sched.total_steps.max(1) as f64;
    let frac = t.min(sched.total_steps) as f64 / total;
    sched.peak * exp(-5.0 * (1.0 - frac) * (1.0 - frac))
}

fn xlog2_ratio(a: f64, b: f64) -> f64 {
    if a <= 0.0 {
        0.0
    } else {
        a * log2(a / b)
    }
}

/// Jensen-Shannon divergence (bits) between two Bernoulli distributions.
pub fn bernoulli_jsd(p: f64, q: f64) -> f64 {
    let m = 0.5 * (p + q);
    let kl = |a: f64| xlog2_ratio(a, m) + xlog2_ratio(1.0 - a, 1.0 - m);
    (0.5 * kl(p) + 0.5 * kl(q)).clamp(0.0, 1.0)
}

/// Component-wise Bernoulli JSD averaged over all components; 0 for empty input.
pub fn jsd(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(invalid("jsd: length mismatch"));
    }
    if p.iter().chain(q).any(|v| !(0.0..=1.0).contains(v)) {
        return Err(invalid("jsd: entries must lie in [0, 1]"));
    }
    if p.is_empty() {
        return Ok(0.0);
    }
    Ok(p.iter().zip(q).map(|(&a, &b)| bernoulli_jsd(a, b)).sum::<f64>() / p.len() as f64)
}

/// `omega * mean_clips(1 - JSD(pseudo, truth))` over the strong portion; 0 when empty.
pub fn reliability_strong(pseudo: &[PseudoLabelGrid], truth: &[StrongLabelGrid], omega: f64) -> Result<f64> {
    if pseudo.len() != truth.len() {
        return Err(invalid("reliability: pseudo and truth counts differ"));
    }
    if pseudo.is_empty() {
        return Ok(0.0);
    }
    let mut acc = 0.0;
    for (p, y) in pseudo.iter().zip(truth) {
        if !p.same_shape(y.grid()) {
            return Err(invalid("reliability: pseudo and truth shapes differ"));
        }
        acc += 1.0 - jsd(p.as_slice(), y.grid().as_slice())?;
    }
    Ok(omega * acc / pseudo.len() as f64)
}

/// As [`reliability_strong`] with clip-pooled pseudo labels against weak labels.
pub fn reliability_weak(pseudo_clip: &[&[f64]], truth: &[WeakLabel], omega: f64) -> Result<f64> {
    if pseudo_clip.len() != truth.len() {
        return Err(invalid("reliability: pseudo and truth counts differ"));
    }
    if pseudo_clip.is_empty() {
        return Ok(0.0);
    }
    let mut acc = 0.0;
    for (p, y) in pseudo_clip.iter().zip(truth) {
        acc += 1.0 - jsd(p, y.as_slice())?;
    }
    Ok(omega * acc / pseudo_clip.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;

    // Scalar oracle written with natural logs and converted at the end.
    fn jsd_oracle(p: &[f64], q: &[f64]) -> f64 {
        let mut total = 0.0;
        for (&a, &b) in p.iter().zip(q) {
            let m = [(a + b) / 2.0, 1.0 - (a + b) / 2.0];
            let pa = [a, 1.0 - a];
            let pb = [b, 1.0 - b];
            let mut d = 0.0;
            for k in 0..2 {
                if pa[k] > 0.0 {
                    d += 0.5 * pa[k] * (pa[k] / m[k]).ln();
                }
                if pb[k] > 0.0 {
                    d += 0.5 * pb[k] * (pb[k] / m[k]).ln();
                }
            }
            total += d / std::f64::consts::LN_2;
        }
        total / p.len() as f64
    }

    #[test]
    fn ramp_values() {
        let s = RampSchedule::new(1000, 3.0).unwrap();
        assert_eq!(ramp_weight(1000, &s), 3.0);
        assert!((ramp_weight(0, &s) - 0.020_213_8).abs() < 1e-6);
        assert!((ramp_weight(500, &s) - 0.859_51).abs() < 1e-5);
        assert_eq!(ramp_weight(5000, &s), 3.0);
        let mut prev = 0.0;
        for t in 0..=1000 {
            let w = ramp_weight(t, &s);
            assert!(w >= prev);
            prev = w;
        }
        assert!(RampSchedule::new(0, 3.0).is_err());
    }

    #[test]
    fn jsd_fixed_points() {
        assert_eq!(jsd(&[0.3, 0.8], &[0.3, 0.8]).unwrap(), 0.0);
        assert!((jsd(&[1.0], &[0.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(jsd(&[0.5], &[0.5]).unwrap(), 0.0);
        assert!(jsd(&[1.5], &[0.0]).is_err());
    }

    #[test]
    fn strong_reliability_extremes_and_oracle() {
        let truth = StrongLabelGrid::new(Grid::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap()).unwrap();
        let same = truth.grid().clone();
        assert_eq!(reliability_strong(&[same], &[truth.clone()], 2.5).unwrap(), 2.5);
        let flipped = truth.grid().map(|v| 1.0 - v);
        assert!(reliability_strong(&[flipped], &[truth.clone()], 2.5).unwrap().abs() < 1e-15);
        assert_eq!(reliability_strong(&[], &[], 2.5).unwrap(), 0.0);

        let mut r = rng::seeded(4);
        let pseudo: Vec<Grid> = (0..3).map(|_| Grid::from_vec(2, 2, (0..4).map(|_| r.gen::<f64>()).collect()).unwrap()).collect();
        let truths = vec![truth.clone(); 3];
        let got = reliability_strong(&pseudo, &truths, 1.7).unwrap();
        let want = 1.7 * pseudo.iter().map(|p| 1.0 - jsd_oracle(p.as_slice(), truth.grid().as_slice())).sum::<f64>() / 3.0;
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn weak_reliability() {
        let y = WeakLabel::from_bools(&[true, false, true]);
        assert_eq!(reliability_weak(&[&[1.0, 0.0, 1.0]], &[y.clone()], 3.0).unwrap(), 3.0);
        assert_eq!(reliability_weak(&[&[0.2, 0.4, 0.9]], &[y.clone()], 0.0).unwrap(), 0.0);
        let p = [0.2, 0.4, 0.9];
        let got = reliability_weak(&[&p], &[y.clone()], 1.3).unwrap();
        assert!((got - 1.3 * (1.0 - jsd_oracle(&p, y.as_slice()))).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn jsd_symmetric_bounded_and_matches_oracle(pairs in proptest::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 1..20)) {
            let p: Vec<f64> = pairs.iter().map(|x| x.0).collect();
            let q: Vec<f64> = pairs.iter().map(|x| x.1).collect();
            let a = jsd(&p, &q).unwrap();
            prop_assert!((a - jsd(&q, &p).unwrap()).abs() < 1e-15);
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!((a - jsd_oracle(&p, &q)).abs() < 1e-12);
            prop_assert_eq!(jsd(&p, &p).unwrap(), 0.0);
        }

        #[test]
        fn gamma_bounded_by_omega(vals in proptest::collection::vec(0.0f64..=1.0, 4), omega in 0.0f64..3.0) {
            let truth = StrongLabelGrid::new(Grid::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0]]).unwrap()).unwrap();
            let p = Grid::from_vec(2, 2, vals).unwrap();
            let g = reliability_strong(&[p], &[truth], omega).unwrap();
            prop_assert!(g >= 0.0 && g <= omega + 1e-15);
        }
    }
}

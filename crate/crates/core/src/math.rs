//! Scalar helpers over `libm` so the crate stays `no_std`.

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn log2(x: f64) -> f64 {
    libm::log2(x)
}

#[inline]
pub fn log10(x: f64) -> f64 {
    libm::log10(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn tanh(x: f64) -> f64 {
    libm::tanh(x)
}

#[inline]
pub fn powf(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

#[inline]
pub fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

#[inline]
pub fn floor(x: f64) -> f64 {
    libm::floor(x)
}

#[inline]
pub fn round(x: f64) -> f64 {
    libm::round(x)
}

#[inline]
pub fn sin(x: f64) -> f64 {
    libm::sin(x)
}

#[inline]
pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}

#[inline]
pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// Logistic function, evaluated without overflow for large |x|.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

/// `log(p / (1 - p))`.
#[inline]
pub fn logit(p: f64) -> f64 {
    ln(p) - ln(1.0 - p)
}

/// Numerically stable `log(sum(exp(v)))`; `-inf` for an empty slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let s: f64 = values.iter().map(|v| exp(v - max)).sum();
    max + ln(s)
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Unbiased sample variance (n - 1 denominator).
pub fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64
}

/// Rounds to the nearest odd integer >= 1; exact ties go to the lower odd value.
pub fn nearest_odd(x: f64) -> usize {
    if !(x > 1.0) {
        return 1;
    }
    let lo = 2.0 * floor((x - 1.0) / 2.0) + 1.0;
    let hi = lo + 2.0;
    let pick = if x - lo <= hi - x { lo } else { hi };
    pick as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_symmetry_and_range() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(3.0) + sigmoid(-3.0) - 1.0).abs() < 1e-15);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }

    #[test]
    fn logit_of_point_nine() {
        assert!((logit(0.9) - 2.197_224_577_336_219_6).abs() < 1e-12);
        assert_eq!(logit(0.5), 0.0);
    }

    #[test]
    fn nearest_odd_rules() {
        assert_eq!(nearest_odd(25.0), 25);
        assert_eq!(nearest_odd(50.0), 49);
        assert_eq!(nearest_odd(27.9), 27);
        assert_eq!(nearest_odd(28.1), 29);
        assert_eq!(nearest_odd(0.2), 1);
        assert_eq!(nearest_odd(2.0), 1);
        assert_eq!(nearest_odd(31.0), 31);
    }

    #[test]
    fn lse_matches_direct() {
        let v = [0.1, -2.0, 3.5];
        let direct = ln(v.iter().map(|x| exp(*x)).sum());
        assert!((log_sum_exp(&v) - direct).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
    }
}

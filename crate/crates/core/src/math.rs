//! Scalar helpers. Everything routes through `libm` so results are identical
//! with and without `std`.

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn ln_1p(x: f64) -> f64 {
    libm::log1p(x)
}

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn pow(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// `log(exp(a) + exp(b))` without overflow.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    if a > b {
        a + ln_1p(exp(b - a))
    } else {
        b + ln_1p(exp(a - b))
    }
}

/// `log(sum(exp(xs)))`; `-inf` for an empty slice or all `-inf` entries.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = xs.iter().map(|&x| exp(x - max)).sum();
    max + ln(sum)
}

/// Turns log-weights into probabilities in place. Returns the log normalizer.
pub fn normalize_log_weights(ws: &mut [f64]) -> f64 {
    let lse = log_sum_exp(ws);
    for w in ws.iter_mut() {
        *w = exp(*w - lse);
    }
    lse
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (sqrt(na) * sqrt(nb))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sum_exp_large_values() {
        let got = log_sum_exp(&[1234.0, 1232.0]);
        let expected = 1232.0 + ln(exp(2.0) + 1.0);
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn log_sum_exp_all_neg_inf() {
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
    }

    #[test]
    fn normalize_handles_neg_inf() {
        let mut w = [f64::NEG_INFINITY, 0.0, 0.0];
        normalize_log_weights(&mut w);
        assert_eq!(w[0], 0.0);
        assert!((w[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn log_add_exp_matches_pairwise() {
        assert!((log_add_exp(0.5, 2.0) - log_sum_exp(&[0.5, 2.0])).abs() < 1e-15);
        assert_eq!(log_add_exp(f64::NEG_INFINITY, 3.0), 3.0);
    }
}

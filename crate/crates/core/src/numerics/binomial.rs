//! Exact two-sided binomial test in log space.

use super::NumericsError;

/// Exact two-sided p-value: the total probability of all outcomes whose
/// probability under Binomial(n, p0) does not exceed that of `k`.
///
/// Computed entirely in log space so extreme counts (p ≈ 1e-250) stay
/// representable.
pub fn binomial_two_sided(k: u64, n: u64, p0: f64) -> Result<f64, NumericsError> {
    if k > n {
        return Err(NumericsError::InvalidParameter("k > n"));
    }
    if !(0.0..=1.0).contains(&p0) || !p0.is_finite() {
        return Err(NumericsError::InvalidParameter("p0"));
    }
    if p0 == 0.0 {
        return Ok(if k == 0 { 1.0 } else { 0.0 });
    }
    if p0 == 1.0 {
        return Ok(if k == n { 1.0 } else { 0.0 });
    }

    let ln_p = libm::log(p0);
    let ln_q = libm::log1p(-p0);
    let ln_fact_n = ln_factorial(n);
    let ln_pmf = |j: u64| -> f64 {
        ln_fact_n - ln_factorial(j) - ln_factorial(n - j) + j as f64 * ln_p + (n - j) as f64 * ln_q
    };

    // Relative tolerance guards against ties broken by rounding alone.
    let threshold = ln_pmf(k) + 1e-7;

    // Log-sum-exp over qualifying outcomes.
    let mut max_term = f64::NEG_INFINITY;
    let mut terms: alloc::vec::Vec<f64> = alloc::vec::Vec::new();
    for j in 0..=n {
        let lp = ln_pmf(j);
        if lp <= threshold {
            terms.push(lp);
            if lp > max_term {
                max_term = lp;
            }
        }
    }
    let mut sum = 0.0;
    for lp in terms {
        sum += libm::exp(lp - max_term);
    }
    Ok((libm::exp(max_term) * sum).min(1.0))
}

fn ln_factorial(n: u64) -> f64 {
    libm::lgamma(n as f64 + 1.0)
}

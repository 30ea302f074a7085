//! Percentile bootstrap confidence intervals with derived per-replicate
//! seeds.

use alloc::vec::Vec;

use super::NumericsError;
use crate::rng::CounterRng;

/// Bootstrap interval plus the full-data point estimate.
#[derive(Clone, Debug)]
pub struct BootstrapCi {
    pub lo: f64,
    pub hi: f64,
    pub point: f64,
    /// Replicates dropped after exhausting redraw retries.
    pub n_dropped: usize,
}

const REDRAW_RETRIES: usize = 10;

/// Percentile bootstrap over index resamples.
///
/// `statistic` receives a with-replacement index sample into the original
/// data and may return None (e.g. a single-class resample); such replicates
/// are redrawn a bounded number of times and then dropped. Replicates use
/// derived seeds, so the result is independent of evaluation order.
pub fn bootstrap_ci<F>(
    mut statistic: F,
    data_size: usize,
    n_rep: usize,
    quantiles: (f64, f64),
    seed: u64,
) -> Result<BootstrapCi, NumericsError>
where
    F: FnMut(&[usize]) -> Option<f64>,
{
    if n_rep < 100 {
        return Err(NumericsError::InvalidParameter("n_rep"));
    }
    if data_size == 0 {
        return Err(NumericsError::TooFewSamples);
    }
    let (qlo, qhi) = quantiles;
    if !(0.0..=1.0).contains(&qlo) || !(0.0..=1.0).contains(&qhi) || qlo > qhi {
        return Err(NumericsError::InvalidParameter("quantiles"));
    }

    let identity: Vec<usize> = (0..data_size).collect();
    let point = statistic(&identity).ok_or(NumericsError::StatisticFailed)?;

    let mut replicates: Vec<f64> = Vec::with_capacity(n_rep);
    let mut n_dropped = 0;
    let mut indices = alloc::vec![0usize; data_size];
    for rep in 0..n_rep {
        let mut rng = CounterRng::derive(seed, rep as u64);
        let mut value = None;
        for _ in 0..=REDRAW_RETRIES {
            for slot in indices.iter_mut() {
                *slot = rng.below(data_size);
            }
            if let Some(v) = statistic(&indices) {
                value = Some(v);
                break;
            }
        }
        match value {
            Some(v) => replicates.push(v),
            None => n_dropped += 1,
        }
    }
    if replicates.is_empty() {
        return Err(NumericsError::StatisticFailed);
    }

    replicates.sort_by(|a, b| a.total_cmp(b));
    Ok(BootstrapCi {
        lo: quantile(&replicates, qlo),
        hi: quantile(&replicates, qhi),
        point,
        n_dropped,
    })
}

/// Linear-interpolation quantile of a sorted slice.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_statistic_collapses() {
        let ci = bootstrap_ci(|_| Some(3.25), 50, 200, (0.05, 0.95), 1).unwrap();
        assert_eq!(ci.lo, 3.25);
        assert_eq!(ci.hi, 3.25);
        assert_eq!(ci.point, 3.25);
        assert_eq!(ci.n_dropped, 0);
    }

    #[test]
    fn failing_statistic_on_full_data_errors() {
        let r = bootstrap_ci(|_| None, 10, 100, (0.05, 0.95), 1);
        assert_eq!(r.unwrap_err(), NumericsError::StatisticFailed);
    }

    #[test]
    fn flaky_replicates_get_redrawn() {
        // Fail whenever index 0 appears first; plenty of redraws succeed.
        let data: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let ci = bootstrap_ci(
            |idx| {
                if idx.len() == 20 && idx[0] == 0 && idx[1] == 0 {
                    None
                } else {
                    Some(idx.iter().map(|&i| data[i]).sum::<f64>() / 20.0)
                }
            },
            20,
            500,
            (0.05, 0.95),
            3,
        )
        .unwrap();
        assert_eq!(ci.n_dropped, 0);
        assert!(ci.lo <= ci.point && ci.point <= ci.hi);
    }

    #[test]
    fn deterministic_given_seed() {
        let data: Vec<f64> = (0..30).map(|i| (i as f64).sin()).collect();
        let stat = |idx: &[usize]| Some(idx.iter().map(|&i| data[i]).sum::<f64>() / 30.0);
        let a = bootstrap_ci(stat, 30, 300, (0.05, 0.95), 5).unwrap();
        let b = bootstrap_ci(stat, 30, 300, (0.05, 0.95), 5).unwrap();
        assert_eq!(a.lo, b.lo);
        assert_eq!(a.hi, b.hi);
    }

    #[test]
    fn quantile_interpolation() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 5.0);
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert_eq!(quantile(&v, 0.25), 2.0);
        assert!((quantile(&v, 0.1) - 1.4).abs() < 1e-12);
    }
}

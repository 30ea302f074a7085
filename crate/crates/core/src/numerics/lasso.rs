//! L1-regularized logistic regression with a bisection search over the
//! penalty so the support hits a requested size.

use alloc::vec;
use alloc::vec::Vec;

use super::logistic::sigmoid;
use super::{LogisticModel, NumericsError};
use crate::mat::{dot, Mat};

const CD_TOL: f64 = 1e-7;
const CD_MAX_PASS: usize = 100;
const IRLS_MAX_ITER: usize = 25;
const BISECT_STEPS: usize = 42;

/// Fit an L1-logistic model whose nonzero-coefficient count equals
/// `target_nonzero`.
///
/// The penalty is located by bisection on λ. When no tested λ yields the
/// count exactly, the solution at the smallest λ with count ≤ target is
/// topped up from the next-smaller tested λ, taking its largest-|coefficient|
/// features first. Constant (zero-variance) columns are never selected.
pub fn lasso_logistic_path(
    x: &Mat,
    y: &[bool],
    target_nonzero: usize,
) -> Result<LogisticModel, NumericsError> {
    let (n, d) = (x.rows(), x.cols());
    if n != y.len() {
        return Err(NumericsError::DimensionMismatch);
    }
    if n < 2 {
        return Err(NumericsError::TooFewSamples);
    }
    if target_nonzero > d {
        return Err(NumericsError::InvalidParameter("target_nonzero"));
    }
    if !y.iter().any(|&v| v) || y.iter().all(|&v| v) {
        return Err(NumericsError::SingleClass);
    }
    if !x.is_finite() {
        return Err(NumericsError::NonFinite);
    }

    if target_nonzero == 0 {
        return Ok(LogisticModel {
            weights: vec![0.0; d],
            intercept: 0.0,
            l1_penalty: f64::INFINITY,
            l2_penalty: 0.0,
            converged: true,
        });
    }

    // λ_max: the all-zero solution boundary (gradient at w = 0).
    let ybar = y.iter().filter(|&&v| v).count() as f64 / n as f64;
    let mut lambda_max: f64 = 0.0;
    for j in 0..d {
        let mut g = 0.0;
        for i in 0..n {
            let yi = if y[i] { 1.0 } else { 0.0 };
            g += x.get(i, j) * (yi - ybar);
        }
        lambda_max = lambda_max.max(libm::fabs(g) / n as f64);
    }
    if lambda_max == 0.0 {
        return Err(NumericsError::InvalidParameter("design has no signal columns"));
    }

    // Below ~1e-3·λ_max the support barely moves while the fits crawl
    // toward the unregularized (possibly separable) optimum.
    let mut lo = lambda_max * 1e-3;
    let mut hi = lambda_max * 1.01;

    // No λ can select more columns than the design has non-constant ones.
    let usable = (0..d)
        .filter(|&j| (0..n).any(|i| x.get(i, j) != x.get(0, j)))
        .count();
    let reachable = target_nonzero.min(usable);

    // Candidate at the smallest tested λ with count ≤ target, and the fit
    // from the largest tested λ whose count exceeds the target.
    let mut at_or_under: Option<(f64, Fit)> = None;
    let mut over: Option<(f64, Fit)> = None;
    let mut warm = Fit::zero(d);

    for _ in 0..BISECT_STEPS {
        if hi / lo < 1.0 + 1e-4 {
            break;
        }
        let lambda = libm::sqrt(lo * hi);
        let fit = coordinate_descent(x, y, lambda, &warm);
        let count = fit.support_size();
        warm = fit.clone();
        if count == target_nonzero {
            return Ok(fit.into_model(lambda));
        }
        if count < target_nonzero {
            match &at_or_under {
                Some((best, _)) if *best <= lambda => {}
                _ => at_or_under = Some((lambda, fit.clone())),
            }
            if count == reachable {
                // Best achievable support; shrinking λ further cannot help.
                break;
            }
            hi = lambda;
        } else {
            match &over {
                Some((best, _)) if *best >= lambda => {}
                _ => over = Some((lambda, fit.clone())),
            }
            lo = lambda;
        }
    }

    // No exact hit: top up the under-target solution.
    let (lambda, mut chosen) = match at_or_under {
        Some(v) => v,
        None => {
            // Even the smallest λ overshot; trim the densest fit instead.
            let (lambda, fit) = over.expect("bisection tested at least one lambda");
            return Ok(trim_to_target(fit, lambda, target_nonzero));
        }
    };

    if let Some((_, donor)) = over {
        let mut extras: Vec<(usize, f64)> = (0..d)
            .filter(|&j| chosen.weights[j] == 0.0 && donor.weights[j] != 0.0)
            .map(|j| (j, libm::fabs(donor.weights[j])))
            .collect();
        extras.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let missing = target_nonzero - chosen.support_size();
        for (j, _) in extras.into_iter().take(missing) {
            chosen.weights[j] = donor.weights[j];
        }
    }
    Ok(chosen.into_model(lambda))
}

fn trim_to_target(mut fit: Fit, lambda: f64, target: usize) -> LogisticModel {
    let mut ranked: Vec<(usize, f64)> = fit
        .weights
        .iter()
        .enumerate()
        .filter(|(_, w)| **w != 0.0)
        .map(|(j, w)| (j, libm::fabs(*w)))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    for (j, _) in ranked.into_iter().skip(target) {
        fit.weights[j] = 0.0;
    }
    fit.into_model(lambda)
}

#[derive(Clone)]
struct Fit {
    weights: Vec<f64>,
    intercept: f64,
    converged: bool,
}

impl Fit {
    fn zero(d: usize) -> Self {
        Fit {
            weights: vec![0.0; d],
            intercept: 0.0,
            converged: false,
        }
    }

    fn support_size(&self) -> usize {
        self.weights.iter().filter(|w| **w != 0.0).count()
    }

    fn into_model(self, lambda: f64) -> LogisticModel {
        LogisticModel {
            weights: self.weights,
            intercept: self.intercept,
            l1_penalty: lambda,
            l2_penalty: 0.0,
            converged: self.converged,
        }
    }
}

/// Proximal Newton (IRLS) for mean log-loss + λ‖w‖₁.
///
/// Each outer iteration freezes the IRLS weights and working response at
/// the current point and solves the resulting penalized weighted
/// least-squares problem by coordinate descent with exact soft-threshold
/// updates.
fn coordinate_descent(x: &Mat, y: &[bool], lambda: f64, warm: &Fit) -> Fit {
    let (n, d) = (x.rows(), x.cols());
    let inv_n = 1.0 / n as f64;

    let mut w = warm.weights.clone();
    let mut b = warm.intercept;
    let mut z: Vec<f64> = (0..n).map(|i| dot(&w, x.row(i)) + b).collect();
    let mut converged = false;

    for _ in 0..IRLS_MAX_ITER {
        // Quadratic model at the current point.
        let mut weights = Vec::with_capacity(n);
        // Residual of the working response: e_i = η_i − z_i = (y−p)/ω.
        let mut resid = Vec::with_capacity(n);
        for i in 0..n {
            // Clamped probabilities keep the quadratic model conditioned
            // near separation.
            let p = sigmoid(z[i]).clamp(1e-3, 1.0 - 1e-3);
            let omega = p * (1.0 - p);
            weights.push(omega);
            resid.push((if y[i] { 1.0 } else { 0.0 } - p) / omega);
        }
        let curvature: Vec<f64> = (0..d)
            .map(|j| {
                let mut s = 0.0;
                for i in 0..n {
                    let v = x.get(i, j);
                    s += weights[i] * v * v;
                }
                (s * inv_n).max(1e-12)
            })
            .collect();
        let mean_weight: f64 = weights.iter().sum::<f64>() * inv_n;

        // Inner CD on the weighted least-squares subproblem.
        let mut outer_delta: f64 = 0.0;
        for _pass in 0..CD_MAX_PASS {
            let mut max_delta: f64 = 0.0;

            let mut g = 0.0;
            for i in 0..n {
                g += weights[i] * resid[i];
            }
            let db = g * inv_n / mean_weight;
            if db != 0.0 {
                b += db;
                for r in &mut resid {
                    *r -= db;
                }
                max_delta = max_delta.max(libm::fabs(db));
            }

            for j in 0..d {
                let cj = curvature[j];
                let mut g = 0.0;
                for i in 0..n {
                    g += weights[i] * x.get(i, j) * resid[i];
                }
                g *= inv_n;
                let old = w[j];
                let candidate = old + g / cj;
                let new = soft_threshold(candidate, lambda / cj);
                let delta = new - old;
                if delta != 0.0 {
                    w[j] = new;
                    for i in 0..n {
                        resid[i] -= delta * x.get(i, j);
                    }
                    max_delta = max_delta.max(libm::fabs(delta));
                }
            }

            outer_delta = outer_delta.max(max_delta);
            if max_delta < CD_TOL {
                break;
            }
        }

        // Re-linearize.
        for i in 0..n {
            z[i] = dot(&w, x.row(i)) + b;
        }
        if outer_delta < CD_TOL {
            converged = true;
            break;
        }
    }

    Fit {
        weights: w,
        intercept: b,
        converged,
    }
}

#[inline]
fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

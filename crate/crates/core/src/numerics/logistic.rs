//! L2-regularized logistic regression fitted by damped Newton iterations.

use alloc::vec;
use alloc::vec::Vec;

use super::NumericsError;
use crate::mat::{dot, Mat};

/// Fitted logistic model. `converged` is false when the optimizer hit its
/// iteration cap or the separation guard clipped the parameters.
#[derive(Clone, Debug)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub l1_penalty: f64,
    pub l2_penalty: f64,
    pub converged: bool,
}

impl LogisticModel {
    pub fn decision(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.intercept
    }
}

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

/// log(1 + e^z), overflow-safe.
#[inline]
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + libm::log1p(libm::exp(-z))
    } else {
        libm::log1p(libm::exp(z))
    }
}

/// Mean log-loss plus (l2/2)·‖w‖² (intercept unpenalized).
pub fn logistic_loss(x: &Mat, y: &[bool], weights: &[f64], intercept: f64, l2: f64) -> f64 {
    let n = x.rows() as f64;
    let mut loss = 0.0;
    for i in 0..x.rows() {
        let z = dot(weights, x.row(i)) + intercept;
        loss += softplus(z) - if y[i] { z } else { 0.0 };
    }
    loss / n + 0.5 * l2 * dot(weights, weights)
}

/// Predicted P(y = true) for each row.
pub fn predict_proba(model: &LogisticModel, x: &Mat) -> Vec<f64> {
    (0..x.rows()).map(|i| sigmoid(model.decision(x.row(i)))).collect()
}

const GRAD_TOL: f64 = 1e-8;
const MAX_ITER: usize = 1000;
const PARAM_CAP: f64 = 1e3;

/// Fit by minimizing mean log-loss + (l2/2)·‖w‖².
///
/// Damped Newton with backtracking keeps the objective nonincreasing.
/// Separable data with l2 = 0 trips the parameter cap and returns
/// `converged = false` with finite clipped weights.
pub fn logistic_fit(x: &Mat, y: &[bool], l2: f64) -> Result<LogisticModel, NumericsError> {
    let (n, d) = (x.rows(), x.cols());
    if n != y.len() {
        return Err(NumericsError::DimensionMismatch);
    }
    if n < 2 {
        return Err(NumericsError::TooFewSamples);
    }
    if !y.iter().any(|&v| v) || y.iter().all(|&v| v) {
        return Err(NumericsError::SingleClass);
    }
    if !x.is_finite() || !(l2 >= 0.0 && l2.is_finite()) {
        return Err(NumericsError::NonFinite);
    }

    // params = [w_0..w_{d-1}, intercept]
    let mut params = vec![0.0; d + 1];
    let mut converged = false;
    let mut loss = objective(x, y, &params, l2);

    for _ in 0..MAX_ITER {
        let (grad, probs) = gradient(x, y, &params, l2);
        let gmax = grad.iter().fold(0.0f64, |m, g| m.max(libm::fabs(*g)));
        if gmax < GRAD_TOL {
            converged = true;
            break;
        }

        let step = match newton_step(x, &probs, &grad, l2) {
            Some(s) => s,
            None => grad.clone(), // singular Hessian: fall back to gradient
        };

        // Backtracking line search.
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = params
                .iter()
                .zip(&step)
                .map(|(p, s)| p - t * s)
                .collect();
            let trial_loss = objective(x, y, &trial, l2);
            if trial_loss <= loss {
                params = trial;
                loss = trial_loss;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // No descent direction left at machine precision.
            converged = gmax < 1e-5;
            break;
        }

        if params.iter().any(|p| libm::fabs(*p) > PARAM_CAP) {
            for p in &mut params {
                *p = p.clamp(-PARAM_CAP, PARAM_CAP);
            }
            converged = false;
            break;
        }
    }

    // Separation has no finite optimum at l2 = 0: the gradient can dip under
    // tolerance while the weights are still drifting outward. Report that as
    // non-convergence.
    if converged && l2 == 0.0 && params.iter().any(|p| libm::fabs(*p) > 10.0) {
        let separated = (0..n).all(|i| {
            let z = dot(&params[..d], x.row(i)) + params[d];
            if y[i] {
                z > 0.0
            } else {
                z < 0.0
            }
        });
        if separated {
            converged = false;
        }
    }

    let intercept = params[d];
    params.truncate(d);
    Ok(LogisticModel {
        weights: params,
        intercept,
        l1_penalty: 0.0,
        l2_penalty: l2,
        converged,
    })
}

fn objective(x: &Mat, y: &[bool], params: &[f64], l2: f64) -> f64 {
    let d = x.cols();
    logistic_loss(x, y, &params[..d], params[d], l2)
}

/// Gradient of the objective; also returns per-sample probabilities.
fn gradient(x: &Mat, y: &[bool], params: &[f64], l2: f64) -> (Vec<f64>, Vec<f64>) {
    let (n, d) = (x.rows(), x.cols());
    let mut grad = vec![0.0; d + 1];
    let mut probs = vec![0.0; n];
    for i in 0..n {
        let z = dot(&params[..d], x.row(i)) + params[d];
        let p = sigmoid(z);
        probs[i] = p;
        let r = p - if y[i] { 1.0 } else { 0.0 };
        for (g, &xi) in grad[..d].iter_mut().zip(x.row(i)) {
            *g += r * xi;
        }
        grad[d] += r;
    }
    let inv_n = 1.0 / n as f64;
    for g in &mut grad {
        *g *= inv_n;
    }
    for (g, &w) in grad[..d].iter_mut().zip(&params[..d]) {
        *g += l2 * w;
    }
    (grad, probs)
}

/// Solve H·s = grad where H is the Newton Hessian. None if not SPD.
fn newton_step(x: &Mat, probs: &[f64], grad: &[f64], l2: f64) -> Option<Vec<f64>> {
    let (n, d) = (x.rows(), x.cols());
    let dim = d + 1;
    let mut h = Mat::zeros(dim, dim);
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        let w = (probs[i] * (1.0 - probs[i])).max(1e-12) * inv_n;
        let row = x.row(i);
        for a in 0..d {
            let wa = w * row[a];
            for b in a..d {
                let v = h.get(a, b) + wa * row[b];
                h.set(a, b, v);
            }
            let v = h.get(a, d) + wa;
            h.set(a, d, v);
        }
        let v = h.get(d, d) + w;
        h.set(d, d, v);
    }
    for a in 0..d {
        let v = h.get(a, a) + l2;
        h.set(a, a, v);
    }
    // Mirror the upper triangle.
    for a in 0..dim {
        for b in (a + 1)..dim {
            let v = h.get(a, b);
            h.set(b, a, v);
        }
    }
    cholesky_solve(&h, grad)
}

/// Solve A·x = b for symmetric positive definite A.
pub(crate) fn cholesky_solve(a: &Mat, b: &[f64]) -> Option<Vec<f64>> {
    let n = a.rows();
    let mut l = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l.set(i, j, libm::sqrt(s));
            } else {
                l.set(i, j, s / l.get(j, j));
            }
        }
    }
    // Forward then back substitution.
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l.get(i, k) * y[k];
        }
        y[i] = s / l.get(i, i);
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l.get(k, i) * x[k];
        }
        x[i] = s / l.get(i, i);
    }
    Some(x)
}

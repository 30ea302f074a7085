//! Principal component analysis via one-sided Jacobi SVD.
//!
//! The fit mean-centers the data and extracts right singular vectors; for
//! tall matrices the data is first reduced to its triangular factor with
//! Householder reflections, which leaves singular values and right vectors
//! untouched. Component signs follow a fixed convention (largest-magnitude
//! entry positive) so results are reproducible across runs.

use alloc::vec;
use alloc::vec::Vec;

use super::NumericsError;
use crate::mat::{dot, norm2, Mat};

/// Fitted PCA basis.
#[derive(Clone, Debug)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// Orthonormal components, one per row (n_comp × d).
    pub components: Mat,
    /// Nonincreasing singular values of the centered data matrix.
    pub singular_values: Vec<f64>,
    /// Number of samples the model was fitted on.
    pub n_samples: usize,
    /// Components past this index carry no variance (rank-deficient fit).
    pub n_informative: usize,
}

/// Projection mode for [`pca_project`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Projection {
    /// Subtract the fitted mean before projecting.
    Centered,
    /// Project the raw vectors; used for antisymmetric difference scores.
    Raw,
}

impl PcaModel {
    /// Explained variance per component: σ²/(n−1).
    pub fn explained_variance(&self) -> Vec<f64> {
        let denom = (self.n_samples.max(2) - 1) as f64;
        self.singular_values.iter().map(|s| s * s / denom).collect()
    }
}

/// Fit a PCA model with `n_comp` components on the rows of `x`.
pub fn pca_fit(x: &Mat, n_comp: usize) -> Result<PcaModel, NumericsError> {
    let (n, d) = (x.rows(), x.cols());
    if n < 2 {
        return Err(NumericsError::TooFewSamples);
    }
    if n_comp == 0 || n_comp > n.min(d) {
        return Err(NumericsError::InvalidParameter("n_comp"));
    }
    if !x.is_finite() {
        return Err(NumericsError::NonFinite);
    }

    let mean = x.col_mean();
    let centered = x.sub_row_vec(&mean);

    // Householder reduction pays off once the matrix is clearly tall.
    let reduced = if n > 2 * d {
        householder_r(&centered)
    } else {
        centered
    };

    let (mut sigma, mut v) = jacobi_svd_right(&reduced);

    // Nonincreasing singular values with a deterministic tie order.
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]).then(a.cmp(&b)));
    sigma = order.iter().map(|&i| sigma[i]).collect();
    v = order.iter().map(|&i| v[i].clone()).collect();

    // Sign convention: largest-magnitude entry of each component positive.
    for comp in &mut v {
        let mut arg = 0;
        for (i, val) in comp.iter().enumerate() {
            if libm::fabs(*val) > libm::fabs(comp[arg]) {
                arg = i;
            }
        }
        if comp[arg] < 0.0 {
            for val in comp.iter_mut() {
                *val = -*val;
            }
        }
    }

    let tol = sigma[0].max(1.0) * 1e-12;
    let n_informative = sigma.iter().take(n_comp).filter(|&&s| s > tol).count();

    let mut components = Mat::zeros(n_comp, d);
    for (j, comp) in v.iter().take(n_comp).enumerate() {
        components.row_mut(j).copy_from_slice(comp);
    }

    Ok(PcaModel {
        mean,
        components,
        singular_values: sigma[..n_comp].to_vec(),
        n_samples: n,
        n_informative,
    })
}

/// Project rows of `x` onto the fitted components.
pub fn pca_project(model: &PcaModel, x: &Mat, mode: Projection) -> Result<Mat, NumericsError> {
    if x.cols() != model.components.cols() {
        return Err(NumericsError::DimensionMismatch);
    }
    let centered;
    let input = match mode {
        Projection::Centered => {
            centered = x.sub_row_vec(&model.mean);
            &centered
        }
        Projection::Raw => x,
    };
    Ok(input.matmul_transb(&model.components))
}

/// Upper-triangular factor R of A (QR via Householder reflections), d×d.
///
/// RᵀR = AᵀA, so R shares A's singular values and right singular vectors.
fn householder_r(a: &Mat) -> Mat {
    let (n, d) = (a.rows(), a.cols());
    let mut w = a.clone();
    let mut v = vec![0.0; n];
    for k in 0..d.min(n) {
        // Householder vector for column k below the diagonal.
        let mut norm = 0.0;
        for i in k..n {
            let x = w.get(i, k);
            norm += x * x;
        }
        let norm = libm::sqrt(norm);
        if norm == 0.0 {
            continue;
        }
        let x0 = w.get(k, k);
        let alpha = if x0 >= 0.0 { -norm } else { norm };
        let mut vnorm2 = 0.0;
        for i in k..n {
            let vi = if i == k { w.get(i, k) - alpha } else { w.get(i, k) };
            v[i] = vi;
            vnorm2 += vi * vi;
        }
        if vnorm2 == 0.0 {
            continue;
        }
        // Apply I − 2vvᵀ/(vᵀv) to the remaining columns.
        for j in k..d {
            let mut proj = 0.0;
            for i in k..n {
                proj += v[i] * w.get(i, j);
            }
            let coef = 2.0 * proj / vnorm2;
            for i in k..n {
                let val = w.get(i, j) - coef * v[i];
                w.set(i, j, val);
            }
        }
    }
    let mut r = Mat::zeros(d, d);
    for i in 0..d.min(n) {
        for j in i..d {
            r.set(i, j, w.get(i, j));
        }
    }
    r
}

/// One-sided Jacobi SVD. Returns (singular values, right singular vectors
/// as rows), unsorted. V is orthonormal even for zero singular values.
fn jacobi_svd_right(a: &Mat) -> (Vec<f64>, Vec<Vec<f64>>) {
    let (n, d) = (a.rows(), a.cols());
    // Column-major working copy: u[j] is column j of A.
    let mut u: Vec<Vec<f64>> = (0..d).map(|j| a.col(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..d)
        .map(|j| {
            let mut e = vec![0.0; d];
            e[j] = 1.0;
            e
        })
        .collect();

    let eps = 1e-15;
    for _sweep in 0..64 {
        let mut rotated = false;
        for p in 0..d {
            for q in (p + 1)..d {
                let alpha = dot(&u[p], &u[p]);
                let beta = dot(&u[q], &u[q]);
                let gamma = dot(&u[p], &u[q]);
                if libm::fabs(gamma) <= eps * libm::sqrt(alpha * beta) || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = {
                    let s = if zeta >= 0.0 { 1.0 } else { -1.0 };
                    s / (libm::fabs(zeta) + libm::sqrt(1.0 + zeta * zeta))
                };
                let c = 1.0 / libm::sqrt(1.0 + t * t);
                let s = c * t;
                for i in 0..n {
                    let up = u[p][i];
                    let uq = u[q][i];
                    u[p][i] = c * up - s * uq;
                    u[q][i] = s * up + c * uq;
                }
                for i in 0..d {
                    let vp = v[p][i];
                    let vq = v[q][i];
                    v[p][i] = c * vp - s * vq;
                    v[q][i] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let sigma: Vec<f64> = u.iter().map(|col| norm2(col)).collect();
    (sigma, v)
}

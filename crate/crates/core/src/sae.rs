//! Matryoshka BatchTopK sparse autoencoder.
//!
//! The encoder is a ReLU layer whose activations are sparsified jointly
//! across the batch: only the `batch_size·k` largest entries of the whole
//! activation matrix survive. The loss sums reconstruction errors over a
//! nested list of latent prefixes, so early latents absorb the most general
//! structure. At inference the batch coupling is replaced by a scalar
//! threshold θ learned as a moving average of the smallest surviving
//! activation near the end of training.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::mat::{norm2, Mat};
use crate::rng::CounterRng;

#[derive(Clone, Debug, PartialEq)]
pub struct SaeConfig {
    pub input_dim: usize,
    pub n_latents: usize,
    /// Per-example sparsity budget; the batch keeps `batch_size·k` entries.
    pub k: usize,
    /// Strictly increasing latent prefixes; the last must equal `n_latents`.
    pub prefixes: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl SaeConfig {
    /// 32-latent configuration used for the differential features:
    /// m = 32, k = 4, prefixes [8, 32].
    pub fn default_32(input_dim: usize, seed: u64) -> Self {
        SaeConfig {
            input_dim,
            n_latents: 32,
            k: 4,
            prefixes: vec![8, 32],
            epochs: 200,
            batch_size: 512,
            learning_rate: 1e-3,
            seed,
        }
    }

    /// 128-latent configuration feeding the lasso selection step;
    /// prefixes scale in proportion to the 32-latent setup.
    pub fn default_128(input_dim: usize, seed: u64) -> Self {
        SaeConfig {
            input_dim,
            n_latents: 128,
            k: 4,
            prefixes: vec![32, 128],
            epochs: 200,
            batch_size: 512,
            learning_rate: 1e-3,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SaeError> {
        if self.input_dim == 0 || self.n_latents == 0 {
            return Err(SaeError::InvalidConfig("zero dimension"));
        }
        if self.k == 0 || self.k > self.n_latents {
            return Err(SaeError::InvalidConfig("k out of range"));
        }
        if self.prefixes.is_empty() || *self.prefixes.last().unwrap() != self.n_latents {
            return Err(SaeError::InvalidConfig("last prefix must equal n_latents"));
        }
        if self.prefixes.windows(2).any(|w| w[0] >= w[1]) || self.prefixes[0] == 0 {
            return Err(SaeError::InvalidConfig("prefixes must be strictly increasing"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(SaeError::InvalidConfig("empty schedule"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(SaeError::InvalidConfig("learning rate"));
        }
        Ok(())
    }
}

/// Trained autoencoder parameters. Decoder columns are unit-norm.
#[derive(Clone, Debug, PartialEq)]
pub struct SaeParams {
    pub config: SaeConfig,
    /// Encoder weights, n_latents × input_dim.
    pub w_enc: Mat,
    pub b_enc: Vec<f64>,
    /// Decoder weights, input_dim × n_latents; unit-norm columns.
    pub w_dec: Mat,
    pub b_dec: Vec<f64>,
    /// Inference threshold replacing the batch top-k coupling.
    pub theta: f64,
    /// True for latents that never activated during the final epoch.
    pub dead_mask: Vec<bool>,
    /// Epoch-mean training losses.
    pub history: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SaeError {
    InvalidConfig(&'static str),
    DimensionMismatch,
    NonFiniteInput,
    InvalidPrefix(usize),
    TooFewSamples,
    /// Loss exceeded 1e6 × its initial value.
    Diverged { epoch: usize, loss: f64 },
}

impl fmt::Display for SaeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SaeError::InvalidConfig(m) => write!(f, "invalid SAE config: {m}"),
            SaeError::DimensionMismatch => write!(f, "dimension mismatch"),
            SaeError::NonFiniteInput => write!(f, "non-finite input"),
            SaeError::InvalidPrefix(p) => write!(f, "prefix {p} not in config"),
            SaeError::TooFewSamples => write!(f, "fewer samples than batch_size"),
            SaeError::Diverged { epoch, loss } => {
                write!(f, "training diverged at epoch {epoch} (loss {loss:.3e})")
            }
        }
    }
}

impl core::error::Error for SaeError {}

/// ReLU(X·W_encᵀ + b_enc).
pub fn encode_raw(params: &SaeParams, x: &Mat) -> Result<Mat, SaeError> {
    if x.cols() != params.config.input_dim {
        return Err(SaeError::DimensionMismatch);
    }
    if !x.is_finite() {
        return Err(SaeError::NonFiniteInput);
    }
    let mut acts = x.matmul_transb(&params.w_enc);
    for i in 0..acts.rows() {
        for (a, b) in acts.row_mut(i).iter_mut().zip(&params.b_enc) {
            *a = (*a + b).max(0.0);
        }
    }
    Ok(acts)
}

/// Keep the `rows·k` largest entries of the whole matrix, zero the rest.
///
/// Ties break by (row, column) lexicographic order; entries must be
/// nonnegative, and zeros never survive, so the result can carry fewer than
/// `rows·k` nonzeros.
pub fn batch_topk(acts: &Mat, k: usize) -> Mat {
    let mask = batch_topk_mask(acts, k);
    let mut out = acts.clone();
    for (v, &keep) in out.data_mut().iter_mut().zip(mask.iter()) {
        if !keep {
            *v = 0.0;
        }
    }
    out
}

/// Survivor mask of [`batch_topk`], in row-major entry order.
pub fn batch_topk_mask(acts: &Mat, k: usize) -> Vec<bool> {
    let budget = acts.rows() * k;
    let mut entries: Vec<(f64, usize)> = acts
        .data()
        .iter()
        .enumerate()
        .filter(|(_, v)| **v > 0.0)
        .map(|(i, v)| (*v, i))
        .collect();
    // Largest first; equal values keep row-major (row, col) order.
    entries.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut mask = vec![false; acts.rows() * acts.cols()];
    for (_, idx) in entries.into_iter().take(budget) {
        mask[idx] = true;
    }
    mask
}

/// Zero latents ≥ `prefix`, then reconstruct: codes·W_decᵀ + b_dec.
pub fn decode(params: &SaeParams, codes: &Mat, prefix: usize) -> Result<Mat, SaeError> {
    if !params.config.prefixes.contains(&prefix) {
        return Err(SaeError::InvalidPrefix(prefix));
    }
    if codes.cols() != params.config.n_latents {
        return Err(SaeError::DimensionMismatch);
    }
    let mut truncated = codes.clone();
    if prefix < codes.cols() {
        for i in 0..truncated.rows() {
            for v in &mut truncated.row_mut(i)[prefix..] {
                *v = 0.0;
            }
        }
    }
    let mut recon = truncated.matmul_transb(&params.w_dec);
    for i in 0..recon.rows() {
        for (r, b) in recon.row_mut(i).iter_mut().zip(&params.b_dec) {
            *r += b;
        }
    }
    Ok(recon)
}

/// Σ over prefixes of the batch-mean squared reconstruction error.
pub fn matryoshka_loss(params: &SaeParams, x: &Mat) -> Result<f64, SaeError> {
    let acts = encode_raw(params, x)?;
    let mask = batch_topk_mask(&acts, params.config.k);
    Ok(loss_with_mask(params, x, &acts, &mask))
}

/// Loss with a frozen top-k mask; used by training and the gradient checks.
pub fn loss_with_mask(params: &SaeParams, x: &Mat, acts: &Mat, mask: &[bool]) -> f64 {
    let mut codes = acts.clone();
    for (v, &keep) in codes.data_mut().iter_mut().zip(mask) {
        if !keep {
            *v = 0.0;
        }
    }
    let b = x.rows() as f64;
    let mut total = 0.0;
    for &prefix in &params.config.prefixes {
        let recon = decode(params, &codes, prefix).expect("prefix from config");
        let mut sq = 0.0;
        for (r, xv) in recon.data().iter().zip(x.data()) {
            let e = r - xv;
            sq += e * e;
        }
        total += sq / b;
    }
    total
}

/// Per-entry threshold at θ: no cross-example coupling at inference.
pub fn infer_codes(params: &SaeParams, x: &Mat) -> Result<Mat, SaeError> {
    let mut acts = encode_raw(params, x)?;
    let theta = params.theta;
    for v in acts.data_mut() {
        if *v <= theta {
            *v = 0.0;
        }
    }
    Ok(acts)
}

pub struct SaeGrads {
    pub w_enc: Mat,
    pub b_enc: Vec<f64>,
    pub w_dec: Mat,
    pub b_dec: Vec<f64>,
}

/// Loss and analytic gradients at the current parameters, with the top-k
/// mask treated as a constant.
pub fn matryoshka_grads(
    params: &SaeParams,
    x: &Mat,
) -> Result<(f64, SaeGrads, Vec<bool>), SaeError> {
    let acts = encode_raw(params, x)?;
    let mask = batch_topk_mask(&acts, params.config.k);
    let (loss, grads) = grads_with_mask(params, x, &acts, &mask);
    Ok((loss, grads, mask))
}

fn grads_with_mask(params: &SaeParams, x: &Mat, acts: &Mat, mask: &[bool]) -> (f64, SaeGrads) {
    let (b, d) = (x.rows(), x.cols());
    let m = params.config.n_latents;
    let inv_b = 1.0 / b as f64;

    let mut codes = acts.clone();
    for (v, &keep) in codes.data_mut().iter_mut().zip(mask) {
        if !keep {
            *v = 0.0;
        }
    }

    let mut loss = 0.0;
    let mut d_w_dec = Mat::zeros(d, m);
    let mut d_b_dec = vec![0.0; d];
    let mut d_codes = Mat::zeros(b, m);

    for &prefix in &params.config.prefixes {
        let recon = decode(params, &codes, prefix).expect("prefix from config");
        for i in 0..b {
            let c_row = codes.row(i);
            let r_row = recon.row(i);
            let x_row = x.row(i);
            let dc_row = d_codes.row_mut(i);
            for l in 0..d {
                let e = r_row[l] - x_row[l];
                loss += e * e * inv_b;
                let g_il = 2.0 * e * inv_b;
                if g_il == 0.0 {
                    continue;
                }
                d_b_dec[l] += g_il;
                let w_row = d_w_dec.row_mut(l);
                let dec_row = params.w_dec.row(l);
                for j in 0..prefix {
                    w_row[j] += g_il * c_row[j];
                    dc_row[j] += g_il * dec_row[j];
                }
            }
        }
    }

    // Through the frozen mask and the ReLU into encoder parameters.
    let mut d_pre = d_codes;
    for (v, &keep) in d_pre.data_mut().iter_mut().zip(mask) {
        if !keep {
            *v = 0.0;
        }
    }
    let mut d_w_enc = Mat::zeros(m, d);
    let mut d_b_enc = vec![0.0; m];
    for i in 0..b {
        let dp_row = d_pre.row(i);
        let x_row = x.row(i);
        for j in 0..m {
            let dp = dp_row[j];
            if dp == 0.0 {
                continue;
            }
            let w_row = d_w_enc.row_mut(j);
            for l in 0..d {
                w_row[l] += dp * x_row[l];
            }
            d_b_enc[j] += dp;
        }
    }

    (
        loss,
        SaeGrads {
            w_enc: d_w_enc,
            b_enc: d_b_enc,
            w_dec: d_w_dec,
            b_dec: d_b_dec,
        },
    )
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    fn new(len: usize) -> Self {
        Adam {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    fn reset_at(&mut self, idx: usize) {
        self.m[idx] = 0.0;
        self.v[idx] = 0.0;
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, t: usize) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        let c1 = 1.0 - libm::pow(B1, t as f64);
        let c2 = 1.0 - libm::pow(B2, t as f64);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * g;
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (libm::sqrt(vh) + EPS);
        }
    }
}

const DEAD_EPOCHS: usize = 10;
const THETA_DECAY: f64 = 0.99;
const DIVERGENCE_FACTOR: f64 = 1e6;

/// Train on the rows of `x`. Deterministic given the config seed.
pub fn train(x: &Mat, config: &SaeConfig) -> Result<SaeParams, SaeError> {
    config.validate()?;
    let (n, d) = (x.rows(), x.cols());
    if d != config.input_dim {
        return Err(SaeError::DimensionMismatch);
    }
    if n < config.batch_size {
        return Err(SaeError::TooFewSamples);
    }
    if !x.is_finite() {
        return Err(SaeError::NonFiniteInput);
    }
    let m = config.n_latents;

    // Init: unit-norm decoder columns, tied encoder, decoder bias at the
    // data mean.
    let mut rng = CounterRng::derive(config.seed, 0xD1C7);
    let mut w_dec = Mat::zeros(d, m);
    for j in 0..m {
        let mut col: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let norm = norm2(&col);
        for v in &mut col {
            *v /= norm;
        }
        for (l, &v) in col.iter().enumerate() {
            w_dec.set(l, j, v);
        }
    }
    let w_enc = w_dec.transpose();
    let mut params = SaeParams {
        config: config.clone(),
        w_enc,
        b_enc: vec![0.0; m],
        w_dec,
        b_dec: vec![0.0; d],
        theta: 0.0,
        dead_mask: vec![false; m],
        history: Vec::with_capacity(config.epochs),
    };

    let mut adam_w_enc = Adam::new(m * d);
    let mut adam_b_enc = Adam::new(m);
    let mut adam_w_dec = Adam::new(d * m);
    let mut adam_b_dec = Adam::new(d);

    let mut order: Vec<usize> = (0..n).collect();
    let mut step_count = 0usize;
    let mut dead_streak = vec![0usize; m];
    let mut initial_loss: Option<f64> = None;
    let mut theta = 0.0;
    let mut theta_started = false;
    let mut final_epoch_active = vec![false; m];

    for epoch in 0..config.epochs {
        let mut shuffle_rng = CounterRng::derive(config.seed, 1 + epoch as u64);
        shuffle_rng.shuffle(&mut order);

        let last_epoch = epoch + 1 == config.epochs;
        let mut epoch_loss = 0.0;
        let mut n_batches = 0usize;
        let mut epoch_active = vec![false; m];

        for chunk in order.chunks(config.batch_size) {
            let mut batch = Mat::zeros(chunk.len(), d);
            for (bi, &src) in chunk.iter().enumerate() {
                batch.row_mut(bi).copy_from_slice(x.row(src));
            }

            let acts = encode_raw(&params, &batch)?;
            let mask = batch_topk_mask(&acts, config.k);
            let (loss, mut grads) = grads_with_mask(&params, &batch, &acts, &mask);
            epoch_loss += loss;
            n_batches += 1;

            // Latent activity and the smallest surviving activation.
            let mut batch_min = f64::INFINITY;
            for (idx, &keep) in mask.iter().enumerate() {
                if keep {
                    let j = idx % m;
                    epoch_active[j] = true;
                    let v = acts.data()[idx];
                    if v < batch_min {
                        batch_min = v;
                    }
                }
            }
            if last_epoch && batch_min.is_finite() {
                if theta_started {
                    theta = THETA_DECAY * theta + (1.0 - THETA_DECAY) * batch_min;
                } else {
                    theta = batch_min;
                    theta_started = true;
                }
            }

            // Remove the gradient component parallel to each decoder column.
            for j in 0..m {
                let mut proj = 0.0;
                for l in 0..d {
                    proj += grads.w_dec.get(l, j) * params.w_dec.get(l, j);
                }
                for l in 0..d {
                    let g = grads.w_dec.get(l, j) - proj * params.w_dec.get(l, j);
                    grads.w_dec.set(l, j, g);
                }
            }

            step_count += 1;
            adam_w_enc.step(
                params.w_enc.data_mut(),
                grads.w_enc.data(),
                config.learning_rate,
                step_count,
            );
            adam_b_enc.step(&mut params.b_enc, &grads.b_enc, config.learning_rate, step_count);
            adam_w_dec.step(
                params.w_dec.data_mut(),
                grads.w_dec.data(),
                config.learning_rate,
                step_count,
            );
            adam_b_dec.step(&mut params.b_dec, &grads.b_dec, config.learning_rate, step_count);

            // Renormalize decoder columns to unit norm.
            for j in 0..m {
                let mut norm = 0.0;
                for l in 0..d {
                    let v = params.w_dec.get(l, j);
                    norm += v * v;
                }
                let norm = libm::sqrt(norm);
                if norm > 0.0 {
                    for l in 0..d {
                        let v = params.w_dec.get(l, j) / norm;
                        params.w_dec.set(l, j, v);
                    }
                }
            }
        }

        let epoch_mean = epoch_loss / n_batches as f64;
        params.history.push(epoch_mean);
        let init = *initial_loss.get_or_insert(epoch_mean);
        if !epoch_mean.is_finite() || epoch_mean > DIVERGENCE_FACTOR * init.max(1e-12) {
            return Err(SaeError::Diverged {
                epoch,
                loss: epoch_mean,
            });
        }

        if last_epoch {
            final_epoch_active = epoch_active.clone();
        }

        // Dead-latent accounting and resampling.
        let mut dead_now: Vec<usize> = Vec::new();
        for j in 0..m {
            if epoch_active[j] {
                dead_streak[j] = 0;
            } else {
                dead_streak[j] += 1;
                if dead_streak[j] >= DEAD_EPOCHS {
                    dead_now.push(j);
                }
            }
        }
        if !dead_now.is_empty() && !last_epoch {
            resample_dead(
                &mut params,
                x,
                &dead_now,
                &mut adam_w_enc,
                &mut adam_w_dec,
                &mut adam_b_enc,
            );
            for &j in &dead_now {
                dead_streak[j] = 0;
            }
        }
    }

    params.theta = theta.max(0.0);
    for (flag, active) in params.dead_mask.iter_mut().zip(&final_epoch_active) {
        *flag = !active;
    }
    Ok(params)
}

/// Point dead latents at the residuals of the worst-reconstructed examples.
fn resample_dead(
    params: &mut SaeParams,
    x: &Mat,
    dead: &[usize],
    adam_w_enc: &mut Adam,
    adam_w_dec: &mut Adam,
    adam_b_enc: &mut Adam,
) {
    let (n, d) = (x.rows(), x.cols());
    let m = params.config.n_latents;
    let full = *params.config.prefixes.last().unwrap();

    // Reconstruction error of every example under the current model.
    let mut errors: Vec<(f64, usize)> = Vec::with_capacity(n);
    let chunk_size = params.config.batch_size;
    let mut row_start = 0;
    while row_start < n {
        let rows = chunk_size.min(n - row_start);
        let mut batch = Mat::zeros(rows, d);
        for bi in 0..rows {
            batch.row_mut(bi).copy_from_slice(x.row(row_start + bi));
        }
        let acts = encode_raw(params, &batch).expect("finite training data");
        let codes = batch_topk(&acts, params.config.k);
        let recon = decode(params, &codes, full).expect("full prefix");
        for bi in 0..rows {
            let mut err = 0.0;
            for (r, xv) in recon.row(bi).iter().zip(batch.row(bi)) {
                let e = r - xv;
                err += e * e;
            }
            errors.push((err, row_start + bi));
        }
        row_start += rows;
    }
    errors.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    // Alive encoder rows set the scale at which resampled latents re-enter;
    // a small fraction of it keeps them from hijacking the top-k budget.
    let mut alive_norm = 0.0;
    let mut alive_count = 0usize;
    for j in 0..m {
        if !dead.contains(&j) {
            alive_norm += norm2(params.w_enc.row(j));
            alive_count += 1;
        }
    }
    let enc_scale = if alive_count > 0 {
        0.2 * alive_norm / alive_count as f64
    } else {
        0.2
    };

    for (slot, &j) in dead.iter().enumerate() {
        let (err, idx) = errors[slot.min(errors.len() - 1)];
        if err <= 1e-24 {
            continue; // nothing left to explain
        }
        // Residual direction of that example.
        let row = Mat::from_rows(&[x.row(idx).to_vec()]);
        let acts = encode_raw(params, &row).expect("finite");
        let codes = batch_topk(&acts, params.config.k);
        let recon = decode(params, &codes, full).expect("full prefix");
        let mut residual: Vec<f64> = row
            .row(0)
            .iter()
            .zip(recon.row(0))
            .map(|(xv, rv)| xv - rv)
            .collect();
        let norm = norm2(&residual);
        if norm == 0.0 {
            continue;
        }
        for v in &mut residual {
            *v /= norm;
        }
        for l in 0..d {
            params.w_dec.set(l, j, residual[l]);
            params.w_enc.set(j, l, enc_scale * residual[l]);
            adam_w_dec.reset_at(l * m + j);
            adam_w_enc.reset_at(j * d + l);
        }
        params.b_enc[j] = 0.0;
        adam_b_enc.reset_at(j);
    }
}

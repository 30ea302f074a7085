//! Concept-bottleneck preference model.
//!
//! A small MLP scores each (prompt, response) pair independently from the
//! engineered input [p; r; p⊙r; |p−r|]: LayerNorm, two GELU+dropout hidden
//! layers, a linear 32-dimensional concept layer, and a scalar head. Pairs
//! are trained with binary cross-entropy on the score difference
//! ℓ = s_B − s_A, so the model is antisymmetric under response swap by
//! construction. The concept layer feeds the supervised PCA/SAE feature
//! extractors.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::corpus::EmbeddingRecord;
use crate::features::{FeatureMatrix, FeatureMeta, Method};
use crate::mat::{dot, Mat};
use crate::numerics::{pca_fit, pca_project, PcaModel, Projection};
use crate::rng::CounterRng;
use crate::sae::{self, SaeConfig, SaeParams};

#[derive(Clone, Debug, PartialEq)]
pub struct BottleneckConfig {
    /// Embedding dimension d; the network input is 4d.
    pub input_dim: usize,
    pub hidden: (usize, usize),
    pub concept_dim: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Fraction of the training pairs held out for early stopping.
    pub val_fraction: f64,
    pub seed: u64,
}

impl BottleneckConfig {
    /// Reference architecture: hidden (512, 128), 32-dim concept layer,
    /// dropout 0.5, AdamW lr 1e-3 / weight decay 5e-2, batch 256, up to 30
    /// epochs with patience 5.
    pub fn default_paper(input_dim: usize, seed: u64) -> Self {
        BottleneckConfig {
            input_dim,
            hidden: (512, 128),
            concept_dim: 32,
            dropout: 0.5,
            learning_rate: 1e-3,
            weight_decay: 5e-2,
            batch_size: 256,
            max_epochs: 30,
            patience: 5,
            val_fraction: 0.1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), BottleneckError> {
        if self.input_dim == 0 || self.hidden.0 == 0 || self.hidden.1 == 0 || self.concept_dim == 0 {
            return Err(BottleneckError::InvalidConfig("zero layer size"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(BottleneckError::InvalidConfig("dropout must lie in [0, 1)"));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(BottleneckError::InvalidConfig("empty schedule"));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(BottleneckError::InvalidConfig("val_fraction"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BottleneckParams {
    pub config: BottleneckConfig,
    pub ln_scale: Vec<f64>,
    pub ln_shift: Vec<f64>,
    /// hidden.0 × 4d
    pub w1: Mat,
    pub b1: Vec<f64>,
    /// hidden.1 × hidden.0
    pub w2: Mat,
    pub b2: Vec<f64>,
    /// concept_dim × hidden.1
    pub w3: Mat,
    pub b3: Vec<f64>,
    /// score head over the concept layer
    pub w4: Vec<f64>,
    pub b4: f64,
    pub history: TrainHistory,
}

#[derive(Clone, Debug, PartialEq)]
pub enum BottleneckError {
    InvalidConfig(&'static str),
    DimensionMismatch,
    SingleClass,
    TooFewSamples,
    /// Non-finite value observed after the named layer.
    NonFinite(&'static str),
}

impl fmt::Display for BottleneckError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BottleneckError::InvalidConfig(m) => write!(f, "invalid config: {m}"),
            BottleneckError::DimensionMismatch => write!(f, "dimension mismatch"),
            BottleneckError::SingleClass => write!(f, "labels contain a single class"),
            BottleneckError::TooFewSamples => write!(f, "too few labeled pairs"),
            BottleneckError::NonFinite(layer) => write!(f, "non-finite value after {layer}"),
        }
    }
}

impl core::error::Error for BottleneckError {}

/// Engineered pair input: [p; r; p⊙r; |p−r|].
pub fn build_input(p: &[f64], r: &[f64]) -> Result<Vec<f64>, BottleneckError> {
    if p.len() != r.len() || p.is_empty() {
        return Err(BottleneckError::DimensionMismatch);
    }
    let d = p.len();
    let mut x = Vec::with_capacity(4 * d);
    x.extend_from_slice(p);
    x.extend_from_slice(r);
    for i in 0..d {
        x.push(p[i] * r[i]);
    }
    for i in 0..d {
        x.push(libm::fabs(p[i] - r[i]));
    }
    Ok(x)
}

const LN_EPS: f64 = 1e-5;
const SQRT_2PI: f64 = 2.5066282746310002;

#[inline]
fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * core::f64::consts::FRAC_1_SQRT_2))
}

#[inline]
fn gelu_prime(x: f64) -> f64 {
    let phi_cdf = 0.5 * (1.0 + libm::erf(x * core::f64::consts::FRAC_1_SQRT_2));
    let phi_pdf = libm::exp(-0.5 * x * x) / SQRT_2PI;
    phi_cdf + x * phi_pdf
}

/// Per-example forward cache for backpropagation.
struct Cache {
    x: Vec<f64>,
    xhat: Vec<f64>,
    inv_std: f64,
    z0: Vec<f64>,
    a1: Vec<f64>,
    h1d: Vec<f64>,
    m1: Vec<f64>,
    a2: Vec<f64>,
    h2d: Vec<f64>,
    m2: Vec<f64>,
    concept: Vec<f64>,
    score: f64,
}

/// Dropout masks for one example; entries are 0 or 1/(1−p).
struct DropoutMasks {
    m1: Vec<f64>,
    m2: Vec<f64>,
}

fn draw_masks(config: &BottleneckConfig, rng: &mut CounterRng) -> DropoutMasks {
    let keep = 1.0 - config.dropout;
    let scale = 1.0 / keep;
    let m1 = (0..config.hidden.0)
        .map(|_| if rng.bernoulli(keep) { scale } else { 0.0 })
        .collect();
    let m2 = (0..config.hidden.1)
        .map(|_| if rng.bernoulli(keep) { scale } else { 0.0 })
        .collect();
    DropoutMasks { m1, m2 }
}

fn forward_cached(
    params: &BottleneckParams,
    x: &[f64],
    masks: Option<&DropoutMasks>,
) -> Result<Cache, BottleneckError> {
    let n = x.len();
    if n != 4 * params.config.input_dim {
        return Err(BottleneckError::DimensionMismatch);
    }

    // LayerNorm over the 4d input.
    let mean = x.iter().sum::<f64>() / n as f64;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let inv_std = 1.0 / libm::sqrt(var + LN_EPS);
    let xhat: Vec<f64> = x.iter().map(|v| (v - mean) * inv_std).collect();
    let z0: Vec<f64> = xhat
        .iter()
        .zip(&params.ln_scale)
        .zip(&params.ln_shift)
        .map(|((xh, g), s)| xh * g + s)
        .collect();

    let ones1;
    let ones2;
    let (m1, m2) = match masks {
        Some(m) => (&m.m1, &m.m2),
        None => {
            ones1 = vec![1.0; params.config.hidden.0];
            ones2 = vec![1.0; params.config.hidden.1];
            (&ones1, &ones2)
        }
    };

    let mut a1 = vec![0.0; params.config.hidden.0];
    for (j, a) in a1.iter_mut().enumerate() {
        *a = dot(params.w1.row(j), &z0) + params.b1[j];
    }
    let h1d: Vec<f64> = a1.iter().zip(m1).map(|(a, m)| gelu(*a) * m).collect();

    let mut a2 = vec![0.0; params.config.hidden.1];
    for (j, a) in a2.iter_mut().enumerate() {
        *a = dot(params.w2.row(j), &h1d) + params.b2[j];
    }
    let h2d: Vec<f64> = a2.iter().zip(m2).map(|(a, m)| gelu(*a) * m).collect();

    let mut concept = vec![0.0; params.config.concept_dim];
    for (j, c) in concept.iter_mut().enumerate() {
        *c = dot(params.w3.row(j), &h2d) + params.b3[j];
    }
    let score = dot(&params.w4, &concept) + params.b4;

    if !score.is_finite() {
        return Err(BottleneckError::NonFinite("score head"));
    }
    if concept.iter().any(|v| !v.is_finite()) {
        return Err(BottleneckError::NonFinite("concept layer"));
    }

    Ok(Cache {
        x: x.to_vec(),
        xhat,
        inv_std,
        z0,
        a1,
        h1d,
        m1: m1.clone(),
        m2: m2.clone(),
        a2,
        h2d,
        concept,
        score,
    })
}

/// Evaluation-mode forward pass: (concept vector, score). Deterministic.
pub fn forward(
    params: &BottleneckParams,
    x: &[f64],
) -> Result<(Vec<f64>, f64), BottleneckError> {
    let cache = forward_cached(params, x, None)?;
    Ok((cache.concept, cache.score))
}

/// Training-mode forward pass with seeded dropout masks.
pub fn forward_train(
    params: &BottleneckParams,
    x: &[f64],
    rng: &mut CounterRng,
) -> Result<(Vec<f64>, f64), BottleneckError> {
    let masks = draw_masks(&params.config, rng);
    let cache = forward_cached(params, x, Some(&masks))?;
    Ok((cache.concept, cache.score))
}

struct Grads {
    ln_scale: Vec<f64>,
    ln_shift: Vec<f64>,
    w1: Mat,
    b1: Vec<f64>,
    w2: Mat,
    b2: Vec<f64>,
    w3: Mat,
    b3: Vec<f64>,
    w4: Vec<f64>,
    b4: f64,
}

impl Grads {
    fn zeros(config: &BottleneckConfig) -> Self {
        let n = 4 * config.input_dim;
        Grads {
            ln_scale: vec![0.0; n],
            ln_shift: vec![0.0; n],
            w1: Mat::zeros(config.hidden.0, n),
            b1: vec![0.0; config.hidden.0],
            w2: Mat::zeros(config.hidden.1, config.hidden.0),
            b2: vec![0.0; config.hidden.1],
            w3: Mat::zeros(config.concept_dim, config.hidden.1),
            b3: vec![0.0; config.concept_dim],
            w4: vec![0.0; config.concept_dim],
            b4: 0.0,
        }
    }
}

/// Backpropagate dL/dscore through one cached forward pass, accumulating
/// into `grads` and returning dL/dx.
fn backward(params: &BottleneckParams, cache: &Cache, dscore: f64, grads: &mut Grads) -> Vec<f64> {
    let n = cache.x.len();

    // Score head.
    let mut dconcept = vec![0.0; params.config.concept_dim];
    for (j, dc) in dconcept.iter_mut().enumerate() {
        grads.w4[j] += dscore * cache.concept[j];
        *dc = dscore * params.w4[j];
    }
    grads.b4 += dscore;

    // Concept layer (linear).
    let mut dh2d = vec![0.0; params.config.hidden.1];
    for j in 0..params.config.concept_dim {
        let dc = dconcept[j];
        if dc == 0.0 {
            continue;
        }
        let w_row = params.w3.row(j);
        let g_row = grads.w3.row_mut(j);
        for l in 0..params.config.hidden.1 {
            g_row[l] += dc * cache.h2d[l];
            dh2d[l] += dc * w_row[l];
        }
        grads.b3[j] += dc;
    }

    // Dropout 2 then GELU 2.
    let da2: Vec<f64> = (0..params.config.hidden.1)
        .map(|l| dh2d[l] * cache.m2[l] * gelu_prime(cache.a2[l]))
        .collect();

    let mut dh1d = vec![0.0; params.config.hidden.0];
    for j in 0..params.config.hidden.1 {
        let d = da2[j];
        if d == 0.0 {
            continue;
        }
        let w_row = params.w2.row(j);
        let g_row = grads.w2.row_mut(j);
        for l in 0..params.config.hidden.0 {
            g_row[l] += d * cache.h1d[l];
            dh1d[l] += d * w_row[l];
        }
        grads.b2[j] += d;
    }

    // Dropout 1 then GELU 1.
    let da1: Vec<f64> = (0..params.config.hidden.0)
        .map(|l| dh1d[l] * cache.m1[l] * gelu_prime(cache.a1[l]))
        .collect();

    let mut dz0 = vec![0.0; n];
    for j in 0..params.config.hidden.0 {
        let d = da1[j];
        if d == 0.0 {
            continue;
        }
        let w_row = params.w1.row(j);
        let g_row = grads.w1.row_mut(j);
        for l in 0..n {
            g_row[l] += d * cache.z0[l];
            dz0[l] += d * w_row[l];
        }
        grads.b1[j] += d;
    }

    // LayerNorm affine.
    let mut dxhat = vec![0.0; n];
    for l in 0..n {
        grads.ln_scale[l] += dz0[l] * cache.xhat[l];
        grads.ln_shift[l] += dz0[l];
        dxhat[l] = dz0[l] * params.ln_scale[l];
    }

    // LayerNorm statistics.
    let mean_dxhat = dxhat.iter().sum::<f64>() / n as f64;
    let mean_dxhat_xhat = dxhat
        .iter()
        .zip(&cache.xhat)
        .map(|(a, b)| a * b)
        .sum::<f64>()
        / n as f64;
    (0..n)
        .map(|l| cache.inv_std * (dxhat[l] - mean_dxhat - cache.xhat[l] * mean_dxhat_xhat))
        .collect()
}

/// Gradient of the eval-mode score with respect to the input vector.
pub fn score_input_gradient(
    params: &BottleneckParams,
    x: &[f64],
) -> Result<Vec<f64>, BottleneckError> {
    let cache = forward_cached(params, x, None)?;
    let mut grads = Grads::zeros(&params.config);
    Ok(backward(params, &cache, 1.0, &mut grads))
}

fn init_params(config: &BottleneckConfig) -> BottleneckParams {
    let n = 4 * config.input_dim;
    let mut rng = CounterRng::derive(config.seed, 0xB0771);
    let mut glorot = |rows: usize, cols: usize| -> Mat {
        let scale = libm::sqrt(2.0 / (rows + cols) as f64);
        let mut m = Mat::zeros(rows, cols);
        for v in m.data_mut() {
            *v = rng.normal() * scale;
        }
        m
    };
    let w1 = glorot(config.hidden.0, n);
    let w2 = glorot(config.hidden.1, config.hidden.0);
    let w3 = glorot(config.concept_dim, config.hidden.1);
    let w4_scale = libm::sqrt(2.0 / (config.concept_dim + 1) as f64);
    let w4: Vec<f64> = (0..config.concept_dim)
        .map(|_| rng.normal() * w4_scale)
        .collect();
    BottleneckParams {
        config: config.clone(),
        ln_scale: vec![1.0; n],
        ln_shift: vec![0.0; n],
        w1,
        b1: vec![0.0; config.hidden.0],
        w2,
        b2: vec![0.0; config.hidden.1],
        w3,
        b3: vec![0.0; config.concept_dim],
        w4,
        b4: 0.0,
        history: TrainHistory {
            train_loss: Vec::new(),
            val_loss: Vec::new(),
            best_epoch: 0,
        },
    }
}

struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    decay: bool,
}

impl AdamW {
    fn new(len: usize, decay: bool) -> Self {
        AdamW {
            m: vec![0.0; len],
            v: vec![0.0; len],
            decay,
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, wd: f64, t: usize) {
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
            let mut update = lr * mh / (libm::sqrt(vh) + EPS);
            if self.decay {
                update += lr * wd * params[i];
            }
            params[i] -= update;
        }
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

#[inline]
fn bce_with_logits(logit: f64, y: f64) -> f64 {
    let softplus = if logit > 0.0 {
        logit + libm::log1p(libm::exp(-logit))
    } else {
        libm::log1p(libm::exp(logit))
    };
    softplus - y * logit
}

/// Train the pairwise preference model.
///
/// `labels_b_preferred[i]` is Some(true) when response B of pair i won,
/// Some(false) when A won, None when the judgment is invalid (the pair is
/// skipped). AdamW, early stopping on a seeded held-out fraction with the
/// configured patience, best-epoch weights restored.
pub fn train_pairwise(
    records: &[EmbeddingRecord],
    labels_b_preferred: &[Option<bool>],
    config: &BottleneckConfig,
) -> Result<BottleneckParams, BottleneckError> {
    config.validate()?;
    if records.len() != labels_b_preferred.len() {
        return Err(BottleneckError::DimensionMismatch);
    }
    let labeled: Vec<(usize, bool)> = labels_b_preferred
        .iter()
        .enumerate()
        .filter_map(|(i, l)| l.map(|y| (i, y)))
        .collect();
    if labeled.len() < 4 {
        return Err(BottleneckError::TooFewSamples);
    }
    if labeled.iter().all(|(_, y)| *y) || !labeled.iter().any(|(_, y)| *y) {
        return Err(BottleneckError::SingleClass);
    }
    for (i, _) in &labeled {
        if records[*i].dim() != config.input_dim {
            return Err(BottleneckError::DimensionMismatch);
        }
    }

    // Seeded train / early-stopping split.
    let mut order: Vec<usize> = (0..labeled.len()).collect();
    let mut split_rng = CounterRng::derive(config.seed, 0x5E7);
    split_rng.shuffle(&mut order);
    let n_val = ((labeled.len() as f64 * config.val_fraction) as usize).clamp(1, labeled.len() - 2);
    let val_idx: Vec<(usize, bool)> = order[..n_val].iter().map(|&i| labeled[i]).collect();
    let mut train_idx: Vec<(usize, bool)> = order[n_val..].iter().map(|&i| labeled[i]).collect();
    if train_idx.iter().all(|(_, y)| *y) || !train_idx.iter().any(|(_, y)| *y) {
        return Err(BottleneckError::SingleClass);
    }

    let mut params = init_params(config);
    let n_in = 4 * config.input_dim;
    let mut opt_ln_scale = AdamW::new(n_in, false);
    let mut opt_ln_shift = AdamW::new(n_in, false);
    let mut opt_w1 = AdamW::new(config.hidden.0 * n_in, true);
    let mut opt_b1 = AdamW::new(config.hidden.0, false);
    let mut opt_w2 = AdamW::new(config.hidden.1 * config.hidden.0, true);
    let mut opt_b2 = AdamW::new(config.hidden.1, false);
    let mut opt_w3 = AdamW::new(config.concept_dim * config.hidden.1, true);
    let mut opt_b3 = AdamW::new(config.concept_dim, false);
    let mut opt_w4 = AdamW::new(config.concept_dim, true);
    let mut opt_b4 = AdamW::new(1, false);

    let mut best: Option<(f64, BottleneckParams)> = None;
    let mut best_epoch = 0usize;
    let mut since_best = 0usize;
    let mut step = 0usize;

    for epoch in 0..config.max_epochs {
        let mut epoch_rng = CounterRng::derive(config.seed, 0xE000 + epoch as u64);
        epoch_rng.shuffle(&mut train_idx);

        let mut epoch_loss = 0.0;
        let mut n_seen = 0usize;
        for (batch_no, chunk) in train_idx.chunks(config.batch_size).enumerate() {
            let mut grads = Grads::zeros(config);
            let mut mask_rng =
                CounterRng::derive(config.seed, ((epoch as u64) << 24) | (batch_no as u64));
            let mut batch_loss = 0.0;
            for &(rec_i, y_b) in chunk {
                let rec = &records[rec_i];
                let x_a = build_input(&rec.e_prompt, &rec.e_a)?;
                let x_b = build_input(&rec.e_prompt, &rec.e_b)?;
                let masks_a = draw_masks(config, &mut mask_rng);
                let masks_b = draw_masks(config, &mut mask_rng);
                let cache_a = forward_cached(&params, &x_a, Some(&masks_a))?;
                let cache_b = forward_cached(&params, &x_b, Some(&masks_b))?;
                let logit = cache_b.score - cache_a.score;
                let y = if y_b { 1.0 } else { 0.0 };
                batch_loss += bce_with_logits(logit, y);
                let dlogit = sigmoid(logit) - y;
                backward(&params, &cache_b, dlogit, &mut grads);
                backward(&params, &cache_a, -dlogit, &mut grads);
            }
            let inv = 1.0 / chunk.len() as f64;
            epoch_loss += batch_loss;
            n_seen += chunk.len();

            scale_grads(&mut grads, inv);
            step += 1;
            let (lr, wd) = (config.learning_rate, config.weight_decay);
            opt_ln_scale.step(&mut params.ln_scale, &grads.ln_scale, lr, wd, step);
            opt_ln_shift.step(&mut params.ln_shift, &grads.ln_shift, lr, wd, step);
            opt_w1.step(params.w1.data_mut(), grads.w1.data(), lr, wd, step);
            opt_b1.step(&mut params.b1, &grads.b1, lr, wd, step);
            opt_w2.step(params.w2.data_mut(), grads.w2.data(), lr, wd, step);
            opt_b2.step(&mut params.b2, &grads.b2, lr, wd, step);
            opt_w3.step(params.w3.data_mut(), grads.w3.data(), lr, wd, step);
            opt_b3.step(&mut params.b3, &grads.b3, lr, wd, step);
            opt_w4.step(&mut params.w4, &grads.w4, lr, wd, step);
            let mut b4 = [params.b4];
            opt_b4.step(&mut b4, &[grads.b4], lr, wd, step);
            params.b4 = b4[0];
        }
        params.history.train_loss.push(epoch_loss / n_seen as f64);

        // Held-out loss in eval mode.
        let mut val_loss = 0.0;
        for &(rec_i, y_b) in &val_idx {
            let rec = &records[rec_i];
            let x_a = build_input(&rec.e_prompt, &rec.e_a)?;
            let x_b = build_input(&rec.e_prompt, &rec.e_b)?;
            let (_, s_a) = forward(&params, &x_a)?;
            let (_, s_b) = forward(&params, &x_b)?;
            val_loss += bce_with_logits(s_b - s_a, if y_b { 1.0 } else { 0.0 });
        }
        val_loss /= val_idx.len() as f64;
        params.history.val_loss.push(val_loss);

        let improved = best.as_ref().map_or(true, |(b, _)| val_loss < *b);
        if improved {
            best = Some((val_loss, params.clone()));
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }

    // Restore the best epoch's weights, keeping the full history.
    let history = params.history.clone();
    let (_, mut restored) = best.expect("at least one epoch ran");
    restored.history = history;
    restored.history.best_epoch = best_epoch;
    Ok(restored)
}

fn scale_grads(grads: &mut Grads, factor: f64) {
    for v in grads.ln_scale.iter_mut() {
        *v *= factor;
    }
    for v in grads.ln_shift.iter_mut() {
        *v *= factor;
    }
    for v in grads.w1.data_mut() {
        *v *= factor;
    }
    for v in grads.b1.iter_mut() {
        *v *= factor;
    }
    for v in grads.w2.data_mut() {
        *v *= factor;
    }
    for v in grads.b2.iter_mut() {
        *v *= factor;
    }
    for v in grads.w3.data_mut() {
        *v *= factor;
    }
    for v in grads.b3.iter_mut() {
        *v *= factor;
    }
    for v in grads.w4.iter_mut() {
        *v *= factor;
    }
    grads.b4 *= factor;
}

/// Evaluation-mode concept vectors for every pair: row 2i is response A of
/// pair i, row 2i+1 response B.
pub fn concept_activations(
    params: &BottleneckParams,
    records: &[EmbeddingRecord],
) -> Result<Mat, BottleneckError> {
    let c = params.config.concept_dim;
    let mut out = Mat::zeros(2 * records.len(), c);
    for (i, rec) in records.iter().enumerate() {
        let x_a = build_input(&rec.e_prompt, &rec.e_a)?;
        let x_b = build_input(&rec.e_prompt, &rec.e_b)?;
        let (c_a, _) = forward(params, &x_a)?;
        let (c_b, _) = forward(params, &x_b)?;
        out.row_mut(2 * i).copy_from_slice(&c_a);
        out.row_mut(2 * i + 1).copy_from_slice(&c_b);
    }
    Ok(out)
}

/// PCA on the pooled concept vectors; pair activation j is the raw
/// projection of c_A − c_B onto component j (centering cancels in the
/// difference).
pub fn supervised_pca_features(
    concepts: &Mat,
    pair_ids: &[String],
    target_judge: &str,
) -> Result<(FeatureMatrix, PcaModel), BottleneckError> {
    let n = pair_ids.len();
    if concepts.rows() != 2 * n {
        return Err(BottleneckError::DimensionMismatch);
    }
    let n_comp = FeatureMatrix::N_FEATURES.min(concepts.cols());
    let model =
        pca_fit(concepts, n_comp).map_err(|_| BottleneckError::InvalidConfig("pca on concepts"))?;
    let mut diffs = Mat::zeros(n, concepts.cols());
    for i in 0..n {
        for j in 0..concepts.cols() {
            diffs.set(i, j, concepts.get(2 * i, j) - concepts.get(2 * i + 1, j));
        }
    }
    let acts = pca_project(&model, &diffs, Projection::Raw)
        .map_err(|_| BottleneckError::DimensionMismatch)?;
    let fm = FeatureMatrix::new(
        Method::SupPca,
        Some(String::from(target_judge)),
        pair_ids.to_vec(),
        pad_to_n_features(acts),
        (0..FeatureMatrix::N_FEATURES)
            .map(|_| FeatureMeta::default())
            .collect(),
    );
    Ok((fm, model))
}

/// SAE trained on the pooled concept vectors; pair activation j is
/// z_j(c_A) − z_j(c_B) with z the thresholded inference codes.
pub fn supervised_sae_features(
    concepts: &Mat,
    pair_ids: &[String],
    target_judge: &str,
    sae_config: &SaeConfig,
) -> Result<(FeatureMatrix, SaeParams), BottleneckError> {
    let n = pair_ids.len();
    if concepts.rows() != 2 * n || sae_config.input_dim != concepts.cols() {
        return Err(BottleneckError::DimensionMismatch);
    }
    let sae_params = sae::train(concepts, sae_config)
        .map_err(|_| BottleneckError::InvalidConfig("sae on concepts"))?;
    let codes = sae::infer_codes(&sae_params, concepts)
        .map_err(|_| BottleneckError::NonFinite("sae inference"))?;
    let mut acts = Mat::zeros(n, codes.cols());
    for i in 0..n {
        for j in 0..codes.cols() {
            acts.set(i, j, codes.get(2 * i, j) - codes.get(2 * i + 1, j));
        }
    }
    let fm = FeatureMatrix::new(
        Method::SupSae,
        Some(String::from(target_judge)),
        pair_ids.to_vec(),
        pad_to_n_features(acts),
        (0..FeatureMatrix::N_FEATURES)
            .map(|_| FeatureMeta::default())
            .collect(),
    );
    Ok((fm, sae_params))
}

/// Widen an activation matrix to the standard 32 columns with zero padding
/// (only relevant when the concept layer is configured narrower).
fn pad_to_n_features(acts: Mat) -> Mat {
    let want = FeatureMatrix::N_FEATURES;
    if acts.cols() == want {
        return acts;
    }
    let mut out = Mat::zeros(acts.rows(), want);
    for i in 0..acts.rows() {
        for j in 0..acts.cols().min(want) {
            out.set(i, j, acts.get(i, j));
        }
    }
    out
}

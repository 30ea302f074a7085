//! Versioned flat binary container for trained parameters and feature
//! matrices.
//!
//! Layout (all integers little-endian, all floats f64 LE):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "JLNS"
//! 4       4     format version (u32), currently 1
//! 8       4     payload kind (u32): 1 = SAE, 2 = bottleneck, 3 = feature matrix
//! 12      ...   kind-specific header, then data blocks
//! ```
//!
//! Kind 1 (SAE): u64 input_dim d, u64 n_latents m, u64 k, u64 n_prefixes,
//! then the prefixes (u64 each), u64 epochs, u64 batch_size, f64 lr,
//! u64 seed, f64 theta, m bytes dead mask (0/1), then row-major blocks
//! W_enc (m×d), b_enc (m), W_dec (d×m), b_dec (d).
//!
//! Kind 2 (bottleneck): u64 input_dim d, u64 h1, u64 h2, u64 concept_dim,
//! f64 dropout, f64 lr, f64 weight_decay, u64 batch_size, u64 max_epochs,
//! u64 patience, f64 val_fraction, u64 seed, then blocks ln_scale (4d),
//! ln_shift (4d), W1 (h1×4d), b1, W2 (h2×h1), b2, W3 (c×h2), b3, w4 (c),
//! b4 (1).
//!
//! Kind 3 (feature matrix): u64 method tag (ordinal in [`Method::ALL`]),
//! u8 has_judge + string, u64 n_rows, u64 n_cols, activations stored
//! column-major (n_cols blocks of n_rows f64), then n_rows strings
//! (pair ids), then n_cols feature-meta entries (u8 has_latent,
//! u64 latent, u8 padded). Strings are u32 length + UTF-8 bytes.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::bottleneck::{BottleneckConfig, BottleneckParams, TrainHistory};
use crate::features::{FeatureMatrix, FeatureMeta, Method};
use crate::mat::Mat;
use crate::sae::{SaeConfig, SaeParams};

const MAGIC: &[u8; 4] = b"JLNS";
const VERSION: u32 = 1;

pub const KIND_SAE: u32 = 1;
pub const KIND_BOTTLENECK: u32 = 2;
pub const KIND_FEATURE_MATRIX: u32 = 3;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ContainerError {
    BadMagic,
    UnsupportedVersion(u32),
    WrongKind { expected: u32, found: u32 },
    Truncated,
    Corrupt(&'static str),
}

impl fmt::Display for ContainerError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ContainerError::BadMagic => write!(f, "bad magic"),
            ContainerError::UnsupportedVersion(v) => write!(f, "unsupported version {v}"),
            ContainerError::WrongKind { expected, found } => {
                write!(f, "wrong payload kind: expected {expected}, found {found}")
            }
            ContainerError::Truncated => write!(f, "truncated container"),
            ContainerError::Corrupt(what) => write!(f, "corrupt container: {what}"),
        }
    }
}

impl core::error::Error for ContainerError {}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new(kind: u32) -> Self {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&kind.to_le_bytes());
        Writer { buf }
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn floats(&mut self, vs: &[f64]) {
        for v in vs {
            self.f64(*v);
        }
    }

    fn string(&mut self, s: &str) {
        let bytes = s.as_bytes();
        self.buf.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
        self.buf.extend_from_slice(bytes);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn open(buf: &'a [u8], kind: u32) -> Result<Self, ContainerError> {
        if buf.len() < 12 {
            return Err(ContainerError::Truncated);
        }
        if &buf[..4] != MAGIC {
            return Err(ContainerError::BadMagic);
        }
        let version = u32::from_le_bytes(buf[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(ContainerError::UnsupportedVersion(version));
        }
        let found = u32::from_le_bytes(buf[8..12].try_into().unwrap());
        if found != kind {
            return Err(ContainerError::WrongKind {
                expected: kind,
                found,
            });
        }
        Ok(Reader { buf, pos: 12 })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], ContainerError> {
        if self.pos + n > self.buf.len() {
            return Err(ContainerError::Truncated);
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u64(&mut self) -> Result<u64, ContainerError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn size(&mut self) -> Result<usize, ContainerError> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| ContainerError::Corrupt("size overflow"))
    }

    fn f64(&mut self) -> Result<f64, ContainerError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8, ContainerError> {
        Ok(self.take(1)?[0])
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f64>, ContainerError> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.f64()?);
        }
        Ok(out)
    }

    fn string(&mut self) -> Result<String, ContainerError> {
        let len = u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize;
        let bytes = self.take(len)?;
        core::str::from_utf8(bytes)
            .map(String::from)
            .map_err(|_| ContainerError::Corrupt("string is not UTF-8"))
    }

    fn finish(self) -> Result<(), ContainerError> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(ContainerError::Corrupt("trailing bytes"))
        }
    }
}

pub fn encode_sae(params: &SaeParams) -> Vec<u8> {
    let mut w = Writer::new(KIND_SAE);
    let c = &params.config;
    w.u64(c.input_dim as u64);
    w.u64(c.n_latents as u64);
    w.u64(c.k as u64);
    w.u64(c.prefixes.len() as u64);
    for p in &c.prefixes {
        w.u64(*p as u64);
    }
    w.u64(c.epochs as u64);
    w.u64(c.batch_size as u64);
    w.f64(c.learning_rate);
    w.u64(c.seed);
    w.f64(params.theta);
    for dead in &params.dead_mask {
        w.u8(u8::from(*dead));
    }
    w.floats(params.w_enc.data());
    w.floats(&params.b_enc);
    w.floats(params.w_dec.data());
    w.floats(&params.b_dec);
    w.buf
}

pub fn decode_sae(bytes: &[u8]) -> Result<SaeParams, ContainerError> {
    let mut r = Reader::open(bytes, KIND_SAE)?;
    let input_dim = r.size()?;
    let n_latents = r.size()?;
    let k = r.size()?;
    let n_prefixes = r.size()?;
    let mut prefixes = Vec::with_capacity(n_prefixes);
    for _ in 0..n_prefixes {
        prefixes.push(r.size()?);
    }
    let epochs = r.size()?;
    let batch_size = r.size()?;
    let learning_rate = r.f64()?;
    let seed = r.u64()?;
    let theta = r.f64()?;
    let mut dead_mask = Vec::with_capacity(n_latents);
    for _ in 0..n_latents {
        dead_mask.push(r.u8()? != 0);
    }
    let w_enc = Mat::from_vec(n_latents, input_dim, r.floats(n_latents * input_dim)?);
    let b_enc = r.floats(n_latents)?;
    let w_dec = Mat::from_vec(input_dim, n_latents, r.floats(input_dim * n_latents)?);
    let b_dec = r.floats(input_dim)?;
    r.finish()?;
    Ok(SaeParams {
        config: SaeConfig {
            input_dim,
            n_latents,
            k,
            prefixes,
            epochs,
            batch_size,
            learning_rate,
            seed,
        },
        w_enc,
        b_enc,
        w_dec,
        b_dec,
        theta,
        dead_mask,
        history: Vec::new(),
    })
}

pub fn encode_bottleneck(params: &BottleneckParams) -> Vec<u8> {
    let mut w = Writer::new(KIND_BOTTLENECK);
    let c = &params.config;
    w.u64(c.input_dim as u64);
    w.u64(c.hidden.0 as u64);
    w.u64(c.hidden.1 as u64);
    w.u64(c.concept_dim as u64);
    w.f64(c.dropout);
    w.f64(c.learning_rate);
    w.f64(c.weight_decay);
    w.u64(c.batch_size as u64);
    w.u64(c.max_epochs as u64);
    w.u64(c.patience as u64);
    w.f64(c.val_fraction);
    w.u64(c.seed);
    w.floats(&params.ln_scale);
    w.floats(&params.ln_shift);
    w.floats(params.w1.data());
    w.floats(&params.b1);
    w.floats(params.w2.data());
    w.floats(&params.b2);
    w.floats(params.w3.data());
    w.floats(&params.b3);
    w.floats(&params.w4);
    w.f64(params.b4);
    w.buf
}

pub fn decode_bottleneck(bytes: &[u8]) -> Result<BottleneckParams, ContainerError> {
    let mut r = Reader::open(bytes, KIND_BOTTLENECK)?;
    let input_dim = r.size()?;
    let h1 = r.size()?;
    let h2 = r.size()?;
    let concept_dim = r.size()?;
    let dropout = r.f64()?;
    let learning_rate = r.f64()?;
    let weight_decay = r.f64()?;
    let batch_size = r.size()?;
    let max_epochs = r.size()?;
    let patience = r.size()?;
    let val_fraction = r.f64()?;
    let seed = r.u64()?;
    let n = 4 * input_dim;
    let ln_scale = r.floats(n)?;
    let ln_shift = r.floats(n)?;
    let w1 = Mat::from_vec(h1, n, r.floats(h1 * n)?);
    let b1 = r.floats(h1)?;
    let w2 = Mat::from_vec(h2, h1, r.floats(h2 * h1)?);
    let b2 = r.floats(h2)?;
    let w3 = Mat::from_vec(concept_dim, h2, r.floats(concept_dim * h2)?);
    let b3 = r.floats(concept_dim)?;
    let w4 = r.floats(concept_dim)?;
    let b4 = r.f64()?;
    r.finish()?;
    Ok(BottleneckParams {
        config: BottleneckConfig {
            input_dim,
            hidden: (h1, h2),
            concept_dim,
            dropout,
            learning_rate,
            weight_decay,
            batch_size,
            max_epochs,
            patience,
            val_fraction,
            seed,
        },
        ln_scale,
        ln_shift,
        w1,
        b1,
        w2,
        b2,
        w3,
        b3,
        w4,
        b4,
        history: TrainHistory {
            train_loss: Vec::new(),
            val_loss: Vec::new(),
            best_epoch: 0,
        },
    })
}

pub fn encode_feature_matrix(fm: &FeatureMatrix) -> Vec<u8> {
    let mut w = Writer::new(KIND_FEATURE_MATRIX);
    let tag = Method::ALL
        .iter()
        .position(|m| *m == fm.method)
        .expect("method in ALL") as u64;
    w.u64(tag);
    match &fm.target_judge {
        Some(judge) => {
            w.u8(1);
            w.string(judge);
        }
        None => w.u8(0),
    }
    w.u64(fm.activations.rows() as u64);
    w.u64(fm.activations.cols() as u64);
    // Column-major activation block.
    for j in 0..fm.activations.cols() {
        for i in 0..fm.activations.rows() {
            w.f64(fm.activations.get(i, j));
        }
    }
    for id in &fm.pair_ids {
        w.string(id);
    }
    for meta in &fm.feature_meta {
        match meta.source_latent {
            Some(latent) => {
                w.u8(1);
                w.u64(latent as u64);
            }
            None => {
                w.u8(0);
                w.u64(0);
            }
        }
        w.u8(u8::from(meta.padded));
    }
    w.buf
}

pub fn decode_feature_matrix(bytes: &[u8]) -> Result<FeatureMatrix, ContainerError> {
    let mut r = Reader::open(bytes, KIND_FEATURE_MATRIX)?;
    let tag = r.size()?;
    let method = *Method::ALL
        .get(tag)
        .ok_or(ContainerError::Corrupt("unknown method tag"))?;
    let target_judge = if r.u8()? != 0 { Some(r.string()?) } else { None };
    let rows = r.size()?;
    let cols = r.size()?;
    if cols != FeatureMatrix::N_FEATURES {
        return Err(ContainerError::Corrupt("feature count"));
    }
    let mut activations = Mat::zeros(rows, cols);
    for j in 0..cols {
        for i in 0..rows {
            activations.set(i, j, r.f64()?);
        }
    }
    let mut pair_ids = Vec::with_capacity(rows);
    for _ in 0..rows {
        pair_ids.push(r.string()?);
    }
    let mut feature_meta = Vec::with_capacity(cols);
    for _ in 0..cols {
        let has_latent = r.u8()? != 0;
        let latent = r.size()?;
        let padded = r.u8()? != 0;
        feature_meta.push(FeatureMeta {
            source_latent: has_latent.then_some(latent),
            padded,
        });
    }
    r.finish()?;
    Ok(FeatureMatrix::new(
        method,
        target_judge,
        pair_ids,
        activations,
        feature_meta,
    ))
}

//! Corpus loading, byte-level tokenization, split, and batch sampling.
//!
//! Tokens are raw bytes (vocab 256). The validation split is the
//! contiguous tail of the file, so the split is fully determined by the
//! content digest and the fraction.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("corpus i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid corpus: {0}")]
    Invalid(String),
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, DataError>;

pub const BYTE_VOCAB: usize = 256;

#[derive(Debug, Clone)]
pub struct Corpus {
    train: Vec<u8>,
    val: Vec<u8>,
    digest: String,
    val_fraction: f64,
}

/// One training batch: `inputs[b][t]`'s target is `targets[b][t]`, the
/// next source byte.
pub type Batch = (Vec<Vec<usize>>, Vec<Vec<usize>>);

impl Corpus {
    /// `val_fraction` of the bytes (the contiguous tail) is held out for
    /// validation and never sampled into training batches.
    pub fn from_bytes(bytes: Vec<u8>, val_fraction: f64) -> Result<Self> {
        if bytes.is_empty() {
            return Err(DataError::Invalid("empty corpus".into()));
        }
        if !(0.0..1.0).contains(&val_fraction) || val_fraction <= 0.0 {
            return Err(DataError::Config(format!(
                "val_fraction {val_fraction} must lie in (0, 1); validation data is required"
            )));
        }
        let digest = hex_digest(&bytes);
        let val_len = ((bytes.len() as f64) * val_fraction).round() as usize;
        let val_len = val_len.clamp(1, bytes.len() - 1);
        let split = bytes.len() - val_len;
        let mut train = bytes;
        let val = train.split_off(split);
        Ok(Corpus {
            train,
            val,
            digest,
            val_fraction,
        })
    }

    pub fn load(path: &Path, val_fraction: f64) -> Result<Self> {
        Self::from_bytes(std::fs::read(path)?, val_fraction)
    }

    pub fn vocab_size(&self) -> usize {
        BYTE_VOCAB
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn val_fraction(&self) -> f64 {
        self.val_fraction
    }

    pub fn train_len(&self) -> usize {
        self.train.len()
    }

    pub fn val_len(&self) -> usize {
        self.val.len()
    }

    pub fn train_tokens(&self) -> impl Iterator<Item = usize> + '_ {
        self.train.iter().map(|&b| b as usize)
    }

    pub fn val_tokens(&self) -> impl Iterator<Item = usize> + '_ {
        self.val.iter().map(|&b| b as usize)
    }

    /// Uniform random training windows; `targets[t] == inputs[t+1]` in
    /// source position. Deterministic per RNG substream state.
    pub fn sample_batch(
        &self,
        batch_size: usize,
        seq_len: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Batch> {
        if seq_len + 1 > self.train.len() {
            return Err(DataError::Invalid(format!(
                "corpus too short: {} train bytes for seq_len {seq_len}",
                self.train.len()
            )));
        }
        let max_start = self.train.len() - seq_len - 1;
        let mut inputs = Vec::with_capacity(batch_size);
        let mut targets = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let start = rng.gen_range(0..=max_start);
            inputs.push(window(&self.train, start, seq_len));
            targets.push(window(&self.train, start + 1, seq_len));
        }
        Ok((inputs, targets))
    }

    /// Sequential non-overlapping validation windows covering at most
    /// `max_tokens` held-out tokens. Deterministic.
    pub fn val_windows(&self, seq_len: usize, max_tokens: usize) -> Vec<(Vec<usize>, Vec<usize>)> {
        let usable = self.val.len().saturating_sub(1).min(max_tokens);
        let mut out = Vec::new();
        let mut start = 0;
        while start + seq_len <= usable {
            out.push((
                window(&self.val, start, seq_len),
                window(&self.val, start + 1, seq_len),
            ));
            start += seq_len;
        }
        if out.is_empty() && usable >= 2 {
            // short validation split: one truncated window
            out.push((
                window(&self.val, 0, usable),
                window(&self.val, 1, usable),
            ));
        }
        out
    }
}

fn window(bytes: &[u8], start: usize, len: usize) -> Vec<usize> {
    bytes[start..start + len].iter().map(|&b| b as usize).collect()
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let d = h.finalize();
    d.iter().map(|b| format!("{b:02x}")).collect()
}

/// Byte-level round trip helpers; tokenization is the identity on bytes.
pub fn tokenize(s: &[u8]) -> Vec<usize> {
    s.iter().map(|&b| b as usize).collect()
}

pub fn detokenize(tokens: &[usize]) -> Vec<u8> {
    tokens.iter().map(|&t| t as u8).collect()
}

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Network sizes. `Default` is the desk-scale configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Filled in from the vocabulary when parameters are initialized.
    pub vocab_size: usize,
    pub d_bottom: usize,
    pub n_bottom: usize,
    pub d_top: usize,
    pub d_ffn: usize,
    pub n_top: usize,
    pub n_heads: usize,
    pub d_dec: usize,
    pub d_emb_dec: usize,
    pub max_len: usize,
    pub beam: usize,
    pub dropout: f64,
    pub seed: u64,
    pub max_decode_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 0,
            d_bottom: 64,
            n_bottom: 2,
            d_top: 32,
            d_ffn: 128,
            n_top: 2,
            n_heads: 4,
            d_dec: 32,
            d_emb_dec: 16,
            max_len: 128,
            beam: 5,
            dropout: 0.1,
            seed: 42,
            max_decode_len: 48,
        }
    }
}

impl ModelConfig {
    /// Sizes of the full-scale system: a BERT-base bottom encoder, a
    /// 2-layer top transformer (256 wide, 3072 ffn, 8 heads) and a 256/100
    /// recurrent decoder.
    pub fn full_scale() -> Self {
        ModelConfig {
            d_bottom: 768,
            n_bottom: 12,
            d_top: 256,
            d_ffn: 3072,
            n_top: 2,
            n_heads: 8,
            d_dec: 256,
            d_emb_dec: 100,
            max_len: 512,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("d_bottom", self.d_bottom),
            ("d_top", self.d_top),
            ("d_ffn", self.d_ffn),
            ("n_heads", self.n_heads),
            ("d_dec", self.d_dec),
            ("d_emb_dec", self.d_emb_dec),
            ("max_len", self.max_len),
            ("beam", self.beam),
            ("max_decode_len", self.max_decode_len),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !self.d_bottom.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_bottom {} is not divisible by n_heads {}",
                self.d_bottom, self.n_heads
            )));
        }
        if !self.d_top.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_top {} is not divisible by n_heads {}",
                self.d_top, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must be in [0, 1)".into()));
        }
        if self.max_len < 3 {
            return Err(Error::Config("max_len must be at least 3".into()));
        }
        Ok(())
    }
}

/// Optimizer settings. The bottom encoder (embeddings and bottom blocks)
/// and everything else use separate learning rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_bottom: f64,
    pub lr_other: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Seed for example shuffling and dropout masks.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 8,
            lr_bottom: 2e-5,
            lr_other: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.lr_bottom < 0.0 || self.lr_other < 0.0 {
            return Err(Error::Config("learning rates must be non-negative".into()));
        }
        Ok(())
    }
}

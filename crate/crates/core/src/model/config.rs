use serde::{Deserialize, Serialize};

use super::patch::{PatchGeometry, CHANNELS};
use crate::dsp::StftConfig;
use crate::error::{Error, Result};

/// Architecture of the two-channel encoder-decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub patch_t: usize,
    pub patch_f: usize,
    pub stride_t: usize,
    pub stride_f: usize,
    pub dim: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    /// Spectrogram frames the model expects.
    pub frames: usize,
    /// Spectrogram bins the model expects.
    pub bins: usize,
    #[serde(default = "default_true")]
    pub positional_encoding: bool,
    #[serde(default = "default_momentum")]
    pub norm_momentum: f64,
    /// Add the raw input to the reconstruction before the output head, so a
    /// zero correction reproduces the input.
    #[serde(default)]
    pub input_residual: bool,
}

fn default_true() -> bool {
    true
}

fn default_momentum() -> f64 {
    0.1
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// Small model that trains on a CPU.
    pub fn desk() -> Self {
        let (frames, bins) = StftConfig::default()
            .shape(1536)
            .expect("default STFT fits the default line");
        Self {
            patch_t: 8,
            patch_f: 8,
            stride_t: 8,
            stride_f: 8,
            dim: 64,
            enc_layers: 2,
            dec_layers: 2,
            heads: 4,
            mlp_ratio: 4,
            frames,
            bins,
            positional_encoding: true,
            norm_momentum: 0.1,
            input_residual: false,
        }
    }

    /// Full-width model with an asymmetric encoder-decoder split.
    pub fn paper_scale() -> Self {
        Self {
            dim: 768,
            enc_layers: 4,
            dec_layers: 2,
            heads: 12,
            ..Self::desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper_scale()),
            other => Err(Error::Config(format!("unknown model preset '{other}' (expected desk or paper)"))),
        }
    }

    pub fn with_grid(mut self, frames: usize, bins: usize) -> Self {
        self.frames = frames;
        self.bins = bins;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.patch_t == 0 || self.patch_f == 0 {
            return bad("patch kernel must be positive".into());
        }
        if self.stride_t != self.patch_t || self.stride_f != self.patch_f {
            return bad(format!(
                "stride ({}, {}) must equal patch kernel ({}, {})",
                self.stride_t, self.stride_f, self.patch_t, self.patch_f
            ));
        }
        if self.dim == 0 || !self.dim.is_multiple_of(2) {
            return bad(format!("token dimension must be positive and even, got {}", self.dim));
        }
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return bad(format!("token dimension {} not divisible by {} heads", self.dim, self.heads));
        }
        if self.mlp_ratio == 0 {
            return bad("mlp_ratio must be positive".into());
        }
        if self.frames == 0 || self.bins == 0 {
            return bad("spectrogram grid must be non-empty".into());
        }
        if !(self.norm_momentum > 0.0 && self.norm_momentum <= 1.0) {
            return bad(format!("norm_momentum must lie in (0, 1], got {}", self.norm_momentum));
        }
        Ok(())
    }

    pub fn pad_t(&self) -> usize {
        self.frames.div_ceil(self.patch_t) * self.patch_t
    }

    pub fn pad_f(&self) -> usize {
        self.bins.div_ceil(self.patch_f) * self.patch_f
    }

    pub fn token_grid(&self) -> (usize, usize) {
        (self.pad_t() / self.patch_t, self.pad_f() / self.patch_f)
    }

    pub fn n_tokens(&self) -> usize {
        let (a, b) = self.token_grid();
        a * b
    }

    pub fn patch_len(&self) -> usize {
        CHANNELS * self.patch_t * self.patch_f
    }

    pub fn hidden(&self) -> usize {
        self.dim * self.mlp_ratio
    }

    pub fn geometry(&self, batch: usize) -> Result<PatchGeometry> {
        PatchGeometry::new(batch, self.frames, self.bins, self.patch_t, self.patch_f)
    }
}

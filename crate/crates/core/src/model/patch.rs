//! Non-overlapping patch extraction over a zero-padded time-frequency grid.
//!
//! Pixel layout is `2 x (B*T*F)`: one row per channel (magnitude, phase),
//! columns ordered by sample, then frame, then bin. Patch layout is
//! `(B*N) x (2*kt*kf)`, channel-major inside a patch.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const CHANNELS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGeometry {
    pub batch: usize,
    pub frames: usize,
    pub bins: usize,
    pub patch_t: usize,
    pub patch_f: usize,
}

fn round_up(n: usize, k: usize) -> usize {
    n.div_ceil(k) * k
}

impl PatchGeometry {
    pub fn new(batch: usize, frames: usize, bins: usize, patch_t: usize, patch_f: usize) -> Result<Self> {
        if batch == 0 || frames == 0 || bins == 0 || patch_t == 0 || patch_f == 0 {
            return Err(Error::Config(format!(
                "patch geometry needs positive sizes, got batch {batch}, grid {frames}x{bins}, patch {patch_t}x{patch_f}"
            )));
        }
        Ok(Self {
            batch,
            frames,
            bins,
            patch_t,
            patch_f,
        })
    }

    pub fn padded_frames(&self) -> usize {
        round_up(self.frames, self.patch_t)
    }

    pub fn padded_bins(&self) -> usize {
        round_up(self.bins, self.patch_f)
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.padded_frames() / self.patch_t, self.padded_bins() / self.patch_f)
    }

    pub fn patches_per_sample(&self) -> usize {
        let (a, b) = self.grid();
        a * b
    }

    pub fn patch_len(&self) -> usize {
        CHANNELS * self.patch_t * self.patch_f
    }

    pub fn pixels(&self) -> usize {
        self.batch * self.frames * self.bins
    }

    fn for_each_pixel(&self, mut f: impl FnMut(usize, usize)) {
        // f(pixel column, patch flat index without channel offset)
        let (_, nf) = self.grid();
        let n = self.patches_per_sample();
        let plen = self.patch_len();
        for b in 0..self.batch {
            for t in 0..self.frames {
                let (it, u) = (t / self.patch_t, t % self.patch_t);
                for fq in 0..self.bins {
                    let (jf, v) = (fq / self.patch_f, fq % self.patch_f);
                    let col = (b * self.frames + t) * self.bins + fq;
                    let row = b * n + it * nf + jf;
                    f(col, row * plen + u * self.patch_f + v);
                }
            }
        }
    }

    pub fn patchify<S: Scalar>(&self, pixels: ArrayView2<S>) -> Result<Array2<S>> {
        if pixels.dim() != (CHANNELS, self.pixels()) {
            return Err(Error::shape(
                format!("({CHANNELS}, {})", self.pixels()),
                format!("{:?}", pixels.dim()),
            ));
        }
        let mut out = Array2::zeros((self.batch * self.patches_per_sample(), self.patch_len()));
        let stride = self.patch_t * self.patch_f;
        let flat = out.as_slice_mut().expect("fresh array is contiguous");
        self.for_each_pixel(|col, at| {
            for c in 0..CHANNELS {
                flat[at + c * stride] = pixels[[c, col]];
            }
        });
        Ok(out)
    }

    /// Inverse of [`patchify`](Self::patchify): padding positions are dropped.
    /// Patches do not overlap, so this is also its adjoint.
    pub fn fold<S: Scalar>(&self, patches: ArrayView2<S>) -> Result<Array2<S>> {
        let want = (self.batch * self.patches_per_sample(), self.patch_len());
        if patches.dim() != want {
            return Err(Error::shape(format!("{want:?}"), format!("{:?}", patches.dim())));
        }
        let patches = patches.as_standard_layout();
        let flat = patches.as_slice().expect("standard layout");
        let stride = self.patch_t * self.patch_f;
        let mut out = Array2::zeros((CHANNELS, self.pixels()));
        self.for_each_pixel(|col, at| {
            for c in 0..CHANNELS {
                out[[c, col]] = flat[at + c * stride];
            }
        });
        Ok(out)
    }
}

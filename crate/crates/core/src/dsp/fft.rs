//! Power-of-two FFT plans backed by `rustfft`.

use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Forward and inverse transforms for one power-of-two size.
#[derive(Clone)]
pub struct FftPlan<S: Scalar> {
    len: usize,
    forward: Arc<dyn Fft<S>>,
    inverse: Arc<dyn Fft<S>>,
}

impl<S: Scalar> std::fmt::Debug for FftPlan<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FftPlan").field("len", &self.len).finish()
    }
}

impl<S: Scalar> FftPlan<S> {
    pub fn new(len: usize) -> Result<Self> {
        if len == 0 || !len.is_power_of_two() {
            return Err(Error::NotPowerOfTwo(len));
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            len,
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Unnormalized forward DFT: `X[k] = sum_n x[n] exp(-2 pi i k n / N)`.
    pub fn forward(&self, buf: &mut [Complex<S>]) -> Result<()> {
        self.check(buf)?;
        self.forward.process(buf);
        Ok(())
    }

    /// Inverse DFT including the `1/N` factor.
    pub fn inverse(&self, buf: &mut [Complex<S>]) -> Result<()> {
        self.check(buf)?;
        self.inverse.process(buf);
        let scale = S::one() / S::of_usize(self.len);
        for z in buf.iter_mut() {
            *z = *z * scale;
        }
        Ok(())
    }

    fn check(&self, buf: &[Complex<S>]) -> Result<()> {
        if buf.len() != self.len {
            return Err(Error::shape(self.len, buf.len()));
        }
        Ok(())
    }
}

/// Forward transform of a power-of-two length signal.
pub fn fft<S: Scalar>(signal: &[Complex<S>]) -> Result<Vec<Complex<S>>> {
    let plan = FftPlan::new(signal.len())?;
    let mut out = signal.to_vec();
    plan.forward(&mut out)?;
    Ok(out)
}

/// Inverse of [`fft`].
pub fn ifft<S: Scalar>(spectrum: &[Complex<S>]) -> Result<Vec<Complex<S>>> {
    let plan = FftPlan::new(spectrum.len())?;
    let mut out = spectrum.to_vec();
    plan.inverse(&mut out)?;
    Ok(out)
}

/// Forward transform of a real signal zero-padded to `n` (a power of two).
pub fn rfft_padded<S: Scalar>(signal: &[S], n: usize) -> Result<Vec<Complex<S>>> {
    if signal.len() > n {
        return Err(Error::shape(format!("at most {n} samples"), signal.len()));
    }
    let plan = FftPlan::new(n)?;
    let mut buf = vec![Complex::new(S::zero(), S::zero()); n];
    for (dst, &x) in buf.iter_mut().zip(signal) {
        dst.re = x;
    }
    plan.forward(&mut buf)?;
    Ok(buf)
}

//! Analytic-signal envelope detection.

use num_complex::Complex;

use super::fft::FftPlan;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `|x + j H{x}|`, with the Hilbert transform taken in the frequency domain.
///
/// The signal is zero-padded to the next power of two, so no circular
/// wrap-around couples the two ends of the line.
pub fn envelope<S: Scalar>(signal: &[S]) -> Result<Vec<S>> {
    if !signal.len().is_multiple_of(2) {
        return Err(Error::Data(format!(
            "envelope detection needs an even-length signal, got {}",
            signal.len()
        )));
    }
    if signal.is_empty() {
        return Ok(Vec::new());
    }
    let n = signal.len().next_power_of_two();
    let plan = FftPlan::new(n)?;
    let mut buf = vec![Complex::new(S::zero(), S::zero()); n];
    for (dst, &x) in buf.iter_mut().zip(signal) {
        dst.re = x;
    }
    plan.forward(&mut buf)?;
    // One-sided spectrum: keep DC and Nyquist, double positive, zero negative.
    let two = S::two();
    for z in buf.iter_mut().take(n / 2).skip(1) {
        *z = *z * two;
    }
    for z in buf.iter_mut().skip(n / 2 + 1) {
        *z = Complex::new(S::zero(), S::zero());
    }
    plan.inverse(&mut buf)?;
    Ok(buf[..signal.len()].iter().map(|z| z.norm()).collect())
}

//! -6 dB bandwidth measurement on the amplitude spectrum.

use serde::{Deserialize, Serialize};

use super::fft::rfft_padded;
use crate::error::{Error, Result};

const MEASURE_FFT_LEN: usize = 1 << 16;

/// Measured -6 dB pass-band of a pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bandwidth {
    pub f_low: f64,
    pub f_high: f64,
    pub f_peak: f64,
    /// `(f_high - f_low) / fc`.
    pub fractional: f64,
}

/// Finds the half-amplitude crossings on either side of the spectral peak,
/// interpolating linearly between FFT bins. `fc` normalizes the width.
pub fn measure_bandwidth(pulse: &[f64], fs: f64, fc: f64) -> Result<Bandwidth> {
    let n = MEASURE_FFT_LEN.max(pulse.len().next_power_of_two());
    let spec = rfft_padded(pulse, n)?;
    let mag: Vec<f64> = spec[..n / 2 + 1].iter().map(|z| z.norm()).collect();
    let df = fs / n as f64;
    let (peak, &peak_val) = mag
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .ok_or_else(|| Error::Data("empty pulse".into()))?;
    if !(peak_val > 0.0) {
        return Err(Error::Data("pulse has no spectral energy".into()));
    }
    let half = peak_val / 2.0;

    let mut lo = peak;
    while lo > 0 && mag[lo] >= half {
        lo -= 1;
    }
    if mag[lo] >= half {
        return Err(Error::Config("-6 dB band extends down to DC".into()));
    }
    let f_low = (lo as f64 + (half - mag[lo]) / (mag[lo + 1] - mag[lo])) * df;

    let mut hi = peak;
    while hi < mag.len() - 1 && mag[hi] >= half {
        hi += 1;
    }
    if mag[hi] >= half {
        return Err(Error::Config("-6 dB band extends beyond Nyquist".into()));
    }
    let f_high = (hi as f64 - 1.0 + (mag[hi - 1] - half) / (mag[hi - 1] - mag[hi])) * df;

    Ok(Bandwidth {
        f_low,
        f_high,
        f_peak: peak as f64 * df,
        fractional: (f_high - f_low) / fc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn gaussian_pulse_edges_match_closed_form() {
        // Low carrier relative to fs so spectral images are negligible.
        let fs = 100e6;
        let fc = 5e6;
        let sigma = 1e-6;
        let n = (6.0 * sigma * fs) as i64;
        let pulse: Vec<f64> = (-n..=n)
            .map(|i| {
                let t = i as f64 / fs;
                (-t * t / (2.0 * sigma * sigma)).exp() * (2.0 * PI * fc * t).cos()
            })
            .collect();
        let bw = measure_bandwidth(&pulse, fs, fc).unwrap();
        let half_width = (2.0 * 2f64.ln()).sqrt() / (2.0 * PI * sigma);
        assert!((bw.f_low - (fc - half_width)).abs() < 2e3);
        assert!((bw.f_high - (fc + half_width)).abs() < 2e3);
        assert!((bw.fractional - 2.0 * half_width / fc).abs() < 1e-3);
    }

    #[test]
    fn baseband_pulse_errors() {
        let pulse = vec![1.0; 8];
        assert!(measure_bandwidth(&pulse, 1.0, 0.1).is_err());
    }
}

//! Probe impulse response and Gaussian excitation pulses.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::dsp::{measure_bandwidth, Bandwidth};
use crate::error::{Error, Result};

/// Relative tolerance on every synthesized pulse's -6 dB fractional bandwidth.
pub const BANDWIDTH_TOLERANCE: f64 = 0.02;

const BISECTION_STEPS: usize = 80;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSpec {
    /// Center frequency, Hz.
    pub fc: f64,
    /// Sampling frequency, Hz.
    pub fs: f64,
    /// -6 dB fractional bandwidth of the impulse response.
    pub frac_bw_probe: f64,
    /// Upper bound on the Hann window length, in carrier cycles, searched
    /// when matching `frac_bw_probe`.
    pub impulse_cycles: f64,
}

impl Default for ProbeSpec {
    fn default() -> Self {
        Self {
            fc: 5.2e6,
            fs: 20.832e6,
            frac_bw_probe: 1.2,
            impulse_cycles: 8.0,
        }
    }
}

impl ProbeSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.fc > 0.0) {
            return Err(Error::Config(format!("probe fc must be positive, got {}", self.fc)));
        }
        if !(self.frac_bw_probe > 0.0 && self.frac_bw_probe < 2.0) {
            return Err(Error::Config(format!(
                "probe fractional bandwidth must lie in (0, 2), got {}",
                self.frac_bw_probe
            )));
        }
        let top = self.fc * (1.0 + self.frac_bw_probe / 2.0);
        if !(self.fs > 2.0 * top) {
            return Err(Error::Config(format!(
                "band edge {:.4e} Hz does not fit below Nyquist for fs = {:.4e} Hz",
                top, self.fs
            )));
        }
        if !(self.impulse_cycles > 0.0) {
            return Err(Error::Config("impulse_cycles must be positive".into()));
        }
        Ok(())
    }
}

/// A synthesized, zero-phase pulse centred on its middle sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pulse {
    pub samples: Vec<f64>,
    pub bandwidth: Bandwidth,
    /// Window length in cycles (probe) or envelope std in seconds (excitation).
    pub shape_param: f64,
}

impl Pulse {
    pub fn center(&self) -> usize {
        self.samples.len() / 2
    }
}

fn hann_tone(fc: f64, fs: f64, cycles: f64) -> Vec<f64> {
    let duration = cycles / fc;
    let half = (duration * fs / 2.0).ceil() as i64;
    (-half..=half)
        .map(|n| {
            let t = n as f64 / fs;
            if t.abs() >= duration / 2.0 {
                0.0
            } else {
                (PI * t / duration).cos().powi(2) * (2.0 * PI * fc * t).cos()
            }
        })
        .collect()
}

/// Monotone bisection of `shape -> measured fractional bandwidth`, which
/// decreases as `shape` grows. Measurement failures count as "too wide".
fn bisect_bandwidth<F>(target: f64, mut lo: f64, mut hi: f64, fc: f64, fs: f64, synth: F) -> Result<(f64, Vec<f64>, Bandwidth)>
where
    F: Fn(f64) -> Vec<f64>,
{
    let measure = |shape: f64| {
        let pulse = synth(shape);
        let bw = measure_bandwidth(&pulse, fs, fc);
        (pulse, bw)
    };
    match measure(hi).1 {
        Ok(bw) if bw.fractional <= target => {}
        _ => {
            return Err(Error::Config(format!(
                "fractional bandwidth {target} is not reachable within the search range"
            )))
        }
    }
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        match measure(mid).1 {
            Ok(bw) if bw.fractional <= target => hi = mid,
            _ => lo = mid,
        }
    }
    let (pulse, bw) = measure(hi);
    let bw = bw?;
    if ((bw.fractional - target) / target).abs() > BANDWIDTH_TOLERANCE {
        return Err(Error::Config(format!(
            "measured fractional bandwidth {:.4} misses target {target} by more than {}%",
            bw.fractional,
            BANDWIDTH_TOLERANCE * 100.0
        )));
    }
    Ok((hi, pulse, bw))
}

/// Hann-windowed carrier whose measured -6 dB fractional bandwidth matches
/// the probe's, with the window length found by bisection.
pub fn synth_probe_impulse(probe: &ProbeSpec) -> Result<Pulse> {
    probe.validate()?;
    let (cycles, mut samples, bandwidth) = bisect_bandwidth(
        probe.frac_bw_probe,
        0.05,
        probe.impulse_cycles,
        probe.fc,
        probe.fs,
        |c| hann_tone(probe.fc, probe.fs, c),
    )?;
    normalize_peak(&mut samples);
    Ok(Pulse {
        samples,
        bandwidth,
        shape_param: cycles,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExcitationSpec {
    /// Envelope standard deviation, seconds.
    pub sigma_t: f64,
    pub fc: f64,
    pub target_frac_bw: f64,
}

impl ExcitationSpec {
    /// Envelope std whose amplitude spectrum has its -6 dB half-width at
    /// `target_frac_bw * fc / 2`, ignoring spectral images.
    pub fn analytic_sigma(fc: f64, target_frac_bw: f64) -> f64 {
        let half_width = target_frac_bw * fc / 2.0;
        (2.0 * 2f64.ln()).sqrt() / (2.0 * PI * half_width)
    }

    /// Starts from the analytic std and refines it against the measured
    /// bandwidth of the sampled, truncated pulse. At 20.832 MHz sampling the
    /// negative-frequency image and the alias at `fs - fc` widen a 120% pulse
    /// by a few percent, so the analytic value alone is not enough.
    pub fn for_bandwidth(fc: f64, fs: f64, target_frac_bw: f64) -> Result<Self> {
        if !(fc > 0.0 && target_frac_bw > 0.0) {
            return Err(Error::Config("excitation needs positive fc and bandwidth".into()));
        }
        let seed = Self::analytic_sigma(fc, target_frac_bw);
        let (sigma_t, _, _) = bisect_bandwidth(target_frac_bw, seed * 0.25, seed * 4.0, fc, fs, |s| {
            gaussian_tone(fc, fs, s)
        })?;
        Ok(Self {
            sigma_t,
            fc,
            target_frac_bw,
        })
    }

    pub fn narrow(fc: f64, fs: f64) -> Result<Self> {
        Self::for_bandwidth(fc, fs, 0.6)
    }

    pub fn wide(fc: f64, fs: f64) -> Result<Self> {
        Self::for_bandwidth(fc, fs, 1.2)
    }
}

fn gaussian_tone(fc: f64, fs: f64, sigma_t: f64) -> Vec<f64> {
    let half = (4.0 * sigma_t * fs).floor() as i64;
    (-half..=half)
        .map(|n| {
            let t = n as f64 / fs;
            (-t * t / (2.0 * sigma_t * sigma_t)).exp() * (2.0 * PI * fc * t).cos()
        })
        .collect()
}

/// `exp(-t^2 / (2 sigma_t^2)) cos(2 pi fc t)` sampled at `fs`, truncated at
/// `+-4 sigma_t`.
pub fn synth_excitation(spec: &ExcitationSpec, fs: f64) -> Result<Pulse> {
    if !(spec.sigma_t > 0.0) || !spec.sigma_t.is_finite() {
        return Err(Error::Config(format!("sigma_t must be positive, got {}", spec.sigma_t)));
    }
    let half_width = (2.0 * 2f64.ln()).sqrt() / (2.0 * PI * spec.sigma_t);
    if spec.fc + half_width >= fs / 2.0 {
        return Err(Error::Config(format!(
            "sigma_t = {:.3e} s puts the -6 dB edge above Nyquist ({:.4e} Hz)",
            spec.sigma_t,
            fs / 2.0
        )));
    }
    let samples = gaussian_tone(spec.fc, fs, spec.sigma_t);
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("excitation pulse".into()));
    }
    let bandwidth = measure_bandwidth(&samples, fs, spec.fc)?;
    Ok(Pulse {
        samples,
        bandwidth,
        shape_param: spec.sigma_t,
    })
}

fn normalize_peak(x: &mut [f64]) {
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        x.iter_mut().for_each(|v| *v /= peak);
    }
}

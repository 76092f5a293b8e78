//! One-dimensional pulse-echo model: reflectivity convolved with the probe
//! impulse response and the excitation.

use serde::{Deserialize, Serialize};

use super::phantom::{PhantomKind, PhantomSpec};
use super::pulse::{synth_excitation, synth_probe_impulse, ExcitationSpec, ProbeSpec, Pulse};
use crate::error::{Error, Result};

pub const SOUND_SPEED: f64 = 1540.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Band {
    Low,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineMeta {
    pub phantom_id: u32,
    pub line_index: u32,
    pub band: Band,
}

/// One sampled RF trace.
#[derive(Debug, Clone, PartialEq)]
pub struct RfLine {
    pub samples: Vec<f64>,
    pub fs: f64,
    pub meta: LineMeta,
}

impl RfLine {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples_as<S: crate::Scalar>(&self) -> Vec<S> {
        self.samples.iter().map(|&v| S::of(v)).collect()
    }
}

/// Lateral sampling of the phantom: `n_lines` parallel lines at `line_pitch`
/// spacing, each accepting scatterers within `acceptance_width / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfig {
    pub n_lines: usize,
    pub line_len: usize,
    pub line_pitch: f64,
    pub acceptance_width: f64,
    pub sound_speed: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            n_lines: 64,
            line_len: 1536,
            line_pitch: 0.3e-3,
            acceptance_width: 0.6e-3,
            sound_speed: SOUND_SPEED,
        }
    }
}

impl ScanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_lines == 0 || self.line_len == 0 {
            return Err(Error::Config("scan needs at least one line of nonzero length".into()));
        }
        if !(self.line_pitch > 0.0 && self.acceptance_width > 0.0 && self.sound_speed > 0.0) {
            return Err(Error::Config(format!("invalid scan geometry {self:?}")));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.n_lines as f64 * self.line_pitch
    }

    /// Lateral position of line `i`, centred on zero.
    pub fn line_position(&self, i: usize) -> f64 {
        (i as f64 + 0.5 - self.n_lines as f64 / 2.0) * self.line_pitch
    }

    /// Fractional sample index of the echo from `depth`.
    pub fn delay_samples(&self, depth: f64, fs: f64) -> f64 {
        2.0 * depth / self.sound_speed * fs
    }
}

/// Precomputed two-way kernels for the low- and high-band acquisitions.
///
/// Both kernels share the probe impulse response and a common scale
/// (unit L2 norm of the high-band kernel), so they differ only by the
/// excitation spectrum.
#[derive(Debug, Clone)]
pub struct PulseEchoModel {
    pub probe: ProbeSpec,
    pub probe_impulse: Pulse,
    pub narrow: ExcitationSpec,
    pub wide: ExcitationSpec,
    pub narrow_pulse: Pulse,
    pub wide_pulse: Pulse,
    low_kernel: Vec<f64>,
    high_kernel: Vec<f64>,
}

pub(crate) fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

impl PulseEchoModel {
    pub fn new(probe: ProbeSpec, narrow: ExcitationSpec, wide: ExcitationSpec) -> Result<Self> {
        let probe_impulse = synth_probe_impulse(&probe)?;
        let narrow_pulse = synth_excitation(&narrow, probe.fs)?;
        let wide_pulse = synth_excitation(&wide, probe.fs)?;
        let mut low_kernel = convolve(&probe_impulse.samples, &narrow_pulse.samples);
        let mut high_kernel = convolve(&probe_impulse.samples, &wide_pulse.samples);
        let norm = high_kernel.iter().map(|v| v * v).sum::<f64>().sqrt();
        low_kernel.iter_mut().for_each(|v| *v /= norm);
        high_kernel.iter_mut().for_each(|v| *v /= norm);
        Ok(Self {
            probe,
            probe_impulse,
            narrow,
            wide,
            narrow_pulse,
            wide_pulse,
            low_kernel,
            high_kernel,
        })
    }

    /// Default probe with the 60% / 120% excitation pair.
    pub fn standard(probe: ProbeSpec) -> Result<Self> {
        let narrow = ExcitationSpec::narrow(probe.fc, probe.fs)?;
        let wide = ExcitationSpec::wide(probe.fc, probe.fs)?;
        Self::new(probe, narrow, wide)
    }

    pub fn kernel(&self, band: Band) -> &[f64] {
        match band {
            Band::Low => &self.low_kernel,
            Band::High => &self.high_kernel,
        }
    }
}

/// Sparse reflectivity sequence of one line, as `(sample, weight)` taps.
/// Sub-sample delays are split linearly between neighbouring samples.
pub fn reflectivity(phantom: &PhantomSpec, scan: &ScanConfig, line: usize, fs: f64) -> Vec<(usize, f64)> {
    let x = scan.line_position(line);
    let half = scan.acceptance_width / 2.0;
    let mut taps = Vec::new();
    for s in &phantom.scatterers {
        if (s.lateral - x).abs() > half {
            continue;
        }
        let tau = scan.delay_samples(s.depth, fs);
        if tau < 0.0 {
            continue;
        }
        let n0 = tau.floor();
        let frac = tau - n0;
        let n0 = n0 as usize;
        taps.push((n0, s.amplitude * (1.0 - frac)));
        if frac > 0.0 {
            taps.push((n0 + 1, s.amplitude * frac));
        }
    }
    taps
}

/// Places each tap's copy of `kernel` so that the kernel centre lands on the
/// tap, truncated to `len` samples.
pub fn render_line(taps: &[(usize, f64)], kernel: &[f64], len: usize) -> Vec<f64> {
    let center = kernel.len() / 2;
    let mut out = vec![0.0; len];
    for &(n, a) in taps {
        for (k, &h) in kernel.iter().enumerate() {
            let idx = n as isize + k as isize - center as isize;
            if idx >= 0 && (idx as usize) < len {
                out[idx as usize] += a * h;
            }
        }
    }
    out
}

/// Simulates every line of the scan for one band.
pub fn simulate_rf(
    phantom: &PhantomSpec,
    model: &PulseEchoModel,
    band: Band,
    scan: &ScanConfig,
    phantom_id: u32,
) -> Result<Vec<RfLine>> {
    scan.validate()?;
    let fs = model.probe.fs;
    let lines = (0..scan.n_lines)
        .map(|i| {
            let taps = reflectivity(phantom, scan, i, fs);
            if taps.is_empty() && phantom.kind == PhantomKind::SpeckleCyst {
                log::warn!("phantom {phantom_id} line {i}: no scatterers in acceptance window");
            }
            RfLine {
                samples: render_line(&taps, model.kernel(band), scan.line_len),
                fs,
                meta: LineMeta {
                    phantom_id,
                    line_index: i as u32,
                    band,
                },
            }
        })
        .collect();
    Ok(lines)
}

/// Low/high pairs built from one shared reflectivity sequence per line.
pub fn simulate_pairs(
    phantom: &PhantomSpec,
    model: &PulseEchoModel,
    scan: &ScanConfig,
    phantom_id: u32,
) -> Result<Vec<(RfLine, RfLine)>> {
    scan.validate()?;
    let fs = model.probe.fs;
    let pairs = (0..scan.n_lines)
        .map(|i| {
            let taps = reflectivity(phantom, scan, i, fs);
            if taps.is_empty() && phantom.kind == PhantomKind::SpeckleCyst {
                log::warn!("phantom {phantom_id} line {i}: no scatterers in acceptance window");
            }
            let make = |band| RfLine {
                samples: render_line(&taps, model.kernel(band), scan.line_len),
                fs,
                meta: LineMeta {
                    phantom_id,
                    line_index: i as u32,
                    band,
                },
            };
            (make(Band::Low), make(Band::High))
        })
        .collect();
    Ok(pairs)
}

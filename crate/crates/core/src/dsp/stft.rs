//! Short-time Fourier analysis and weighted overlap-add synthesis.

use ndarray::Array2;
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use super::fft::FftPlan;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Framing parameters. The defaults are the analysis settings used throughout
/// the pipeline: 512-point transform, 64-sample Hamming window, hop 32.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StftConfig {
    pub n_fft: usize,
    pub win_len: usize,
    pub hop: usize,
    /// Zero-pad `win_len / 2` samples on both ends before framing.
    pub center: bool,
    /// Keep only the `n_fft / 2 + 1` non-negative frequency bins.
    pub onesided: bool,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            n_fft: 512,
            win_len: 64,
            hop: 32,
            center: true,
            onesided: true,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.hop > self.win_len || self.win_len > self.n_fft {
            return Err(Error::Config(format!(
                "stft requires 0 < hop <= win_len <= n_fft (got hop={}, win_len={}, n_fft={})",
                self.hop, self.win_len, self.n_fft
            )));
        }
        if !self.n_fft.is_power_of_two() {
            return Err(Error::NotPowerOfTwo(self.n_fft));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        if self.onesided {
            self.n_fft / 2 + 1
        } else {
            self.n_fft
        }
    }

    fn pad(&self) -> usize {
        if self.center {
            self.win_len / 2
        } else {
            0
        }
    }

    /// Number of frames produced for a signal of `len` samples.
    pub fn n_frames(&self, len: usize) -> Result<usize> {
        let padded = len + 2 * self.pad();
        if padded < self.win_len {
            return Err(Error::Data(format!(
                "signal of {len} samples is shorter than the {}-sample window",
                self.win_len
            )));
        }
        Ok((padded - self.win_len) / self.hop + 1)
    }

    /// `(T, F)` for a signal of `len` samples.
    pub fn shape(&self, len: usize) -> Result<(usize, usize)> {
        Ok((self.n_frames(len)?, self.n_bins()))
    }
}

/// Periodic Hamming window `0.54 - 0.46 cos(2 pi n / w)`.
pub fn hamming<S: Scalar>(len: usize) -> Vec<S> {
    (0..len)
        .map(|n| {
            let a = 2.0 * std::f64::consts::PI * n as f64 / len as f64;
            S::of(0.54 - 0.46 * a.cos())
        })
        .collect()
}

/// Complex STFT of one line, frames along rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram<S> {
    /// `T x F`.
    pub data: Array2<Complex<S>>,
    pub config: StftConfig,
    pub fs: f64,
    /// Length of the analysed signal, needed to invert.
    pub signal_len: usize,
}

impl<S: Scalar> ComplexSpectrogram<S> {
    pub fn shape(&self) -> (usize, usize) {
        self.data.dim()
    }
}

/// Reusable analysis/synthesis state for one configuration.
#[derive(Debug, Clone)]
pub struct Stft<S: Scalar> {
    config: StftConfig,
    window: Vec<S>,
    plan: FftPlan<S>,
}

impl<S: Scalar> Stft<S> {
    pub fn new(config: StftConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            window: hamming(config.win_len),
            plan: FftPlan::new(config.n_fft)?,
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn window(&self) -> &[S] {
        &self.window
    }

    pub fn forward(&self, signal: &[S], fs: f64) -> Result<ComplexSpectrogram<S>> {
        let cfg = &self.config;
        let (frames, bins) = cfg.shape(signal.len())?;
        let pad = cfg.pad();
        let zero = Complex::new(S::zero(), S::zero());
        let mut data = Array2::from_elem((frames, bins), zero);
        let mut buf = vec![zero; cfg.n_fft];
        for t in 0..frames {
            buf.iter_mut().for_each(|z| *z = zero);
            let start = t * cfg.hop;
            for (n, w) in self.window.iter().enumerate() {
                // Index into the virtually padded signal.
                let idx = start + n;
                if idx >= pad && idx - pad < signal.len() {
                    buf[n].re = signal[idx - pad] * *w;
                }
            }
            self.plan.forward(&mut buf)?;
            for (dst, src) in data.row_mut(t).iter_mut().zip(&buf) {
                *dst = *src;
            }
        }
        Ok(ComplexSpectrogram {
            data,
            config: *cfg,
            fs,
            signal_len: signal.len(),
        })
    }

    /// Weighted overlap-add with the analysis window as synthesis window and
    /// per-sample division by the summed squared window.
    pub fn inverse(&self, spec: &ComplexSpectrogram<S>) -> Result<Vec<S>> {
        let cfg = &self.config;
        if spec.config != *cfg {
            return Err(Error::Config("spectrogram was produced with a different stft config".into()));
        }
        let (frames, bins) = spec.data.dim();
        let expected = cfg.shape(spec.signal_len)?;
        if (frames, bins) != expected {
            return Err(Error::shape(format!("{expected:?}"), format!("{:?}", (frames, bins))));
        }
        let pad = cfg.pad();
        let total = (frames - 1) * cfg.hop + cfg.win_len;
        let mut acc = vec![S::zero(); total.max(spec.signal_len + 2 * pad)];
        let mut norm = vec![S::zero(); acc.len()];
        let zero = Complex::new(S::zero(), S::zero());
        let mut buf = vec![zero; cfg.n_fft];
        for t in 0..frames {
            let row = spec.data.row(t);
            if cfg.onesided {
                for k in 0..bins {
                    buf[k] = row[k];
                }
                for k in 1..cfg.n_fft - bins + 1 {
                    buf[cfg.n_fft - k] = row[k].conj();
                }
                // DC and Nyquist must be real for a real frame.
                buf[0].im = S::zero();
                if cfg.n_fft.is_multiple_of(2) {
                    buf[cfg.n_fft / 2].im = S::zero();
                }
            } else {
                for k in 0..bins {
                    buf[k] = row[k];
                }
            }
            self.plan.inverse(&mut buf)?;
            let start = t * cfg.hop;
            for (n, w) in self.window.iter().enumerate() {
                acc[start + n] += buf[n].re * *w;
                norm[start + n] += *w * *w;
            }
        }
        let floor = S::of(1e-12);
        let mut out = Vec::with_capacity(spec.signal_len);
        for i in pad..pad + spec.signal_len {
            if norm[i] < floor {
                return Err(Error::Data(format!(
                    "overlap-add normalization vanishes at sample {}",
                    i - pad
                )));
            }
            out.push(acc[i] / norm[i]);
        }
        Ok(out)
    }
}

/// One-shot STFT.
pub fn stft<S: Scalar>(signal: &[S], fs: f64, config: StftConfig) -> Result<ComplexSpectrogram<S>> {
    Stft::new(config)?.forward(signal, fs)
}

/// One-shot inverse STFT.
pub fn istft<S: Scalar>(spec: &ComplexSpectrogram<S>) -> Result<Vec<S>> {
    Stft::new(spec.config)?.inverse(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_line(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
        (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn default_shape_for_1536() {
        // (1536 + 64 - 64) / 32 + 1
        let cfg = StftConfig::default();
        assert_eq!(cfg.shape(1536).unwrap(), (49, 257));
        let spec = stft(&vec![0.0f64; 1536], 20.832e6, cfg).unwrap();
        assert_eq!(spec.shape(), (49, 257));
        assert!(spec.data.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn tone_peaks_at_expected_bin() {
        let fs = 20.832e6;
        let f0 = 5.208e6;
        let x: Vec<f64> = (0..1536)
            .map(|n| (2.0 * std::f64::consts::PI * f0 * n as f64 / fs).cos())
            .collect();
        let spec = stft(&x, fs, StftConfig::default()).unwrap();
        let expected = (f0 / fs * 512.0).round() as usize;
        assert_eq!(expected, 128);
        for t in 1..spec.data.nrows() - 1 {
            let row = spec.data.row(t);
            let peak = (0..row.len())
                .max_by(|&a, &b| row[a].norm().partial_cmp(&row[b].norm()).unwrap())
                .unwrap();
            assert_eq!(peak, expected, "frame {t}");
        }
    }

    #[test]
    fn round_trip_random_lines() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let engine = Stft::<f64>::new(StftConfig::default()).unwrap();
        for _ in 0..10 {
            let x = random_line(&mut rng, 1536);
            let back = engine.inverse(&engine.forward(&x, 1.0).unwrap()).unwrap();
            let num: f64 = x.iter().zip(&back).map(|(a, b)| (a - b).powi(2)).sum();
            let den: f64 = x.iter().map(|a| a * a).sum();
            assert!((num / den).sqrt() < 1e-6);
        }
    }

    #[test]
    fn zero_spectrogram_inverts_to_zero() {
        let cfg = StftConfig::default();
        let spec = stft(&vec![0.0f64; 1536], 1.0, cfg).unwrap();
        assert!(istft(&spec).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_in_signal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_line(&mut rng, 256);
        let b = random_line(&mut rng, 256);
        let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 2.0 * x - 0.5 * y).collect();
        let cfg = StftConfig::default();
        let sa = stft(&a, 1.0, cfg).unwrap();
        let sb = stft(&b, 1.0, cfg).unwrap();
        let sm = stft(&mix, 1.0, cfg).unwrap();
        for ((za, zb), zm) in sa.data.iter().zip(sb.data.iter()).zip(sm.data.iter()) {
            assert!((za * 2.0 - zb * 0.5 - zm).norm() < 1e-10);
        }
    }

    #[test]
    fn parseval_with_window_compensation() {
        // sum_t sum_k |X_t[k]|^2 / n_fft = sum_n x[n]^2 c[n], c[n] = sum_t w^2[n - t h]
        let cfg = StftConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let len = 1536;
        let mut x = vec![0.0f64; len];
        for v in x.iter_mut().take(1200).skip(300) {
            *v = rng.gen_range(-1.0..1.0);
        }
        let spec = stft(&x, 1.0, cfg).unwrap();
        let mut spec_energy = 0.0;
        for row in spec.data.rows() {
            for (k, z) in row.iter().enumerate() {
                let weight = if k == 0 || k == cfg.n_fft / 2 { 1.0 } else { 2.0 };
                spec_energy += weight * z.norm_sqr();
            }
        }
        spec_energy /= cfg.n_fft as f64;
        let w = hamming::<f64>(cfg.win_len);
        let pad = cfg.win_len / 2;
        let mut comp = vec![0.0; len];
        for t in 0..spec.data.nrows() {
            for (n, wn) in w.iter().enumerate() {
                let idx = t * cfg.hop + n;
                if idx >= pad && idx - pad < len {
                    comp[idx - pad] += wn * wn;
                }
            }
        }
        let time_energy: f64 = x.iter().zip(&comp).map(|(v, c)| v * v * c).sum();
        assert!(((spec_energy - time_energy) / time_energy).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_configs() {
        let cfg = StftConfig { hop: 100, ..StftConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = StftConfig { n_fft: 500, ..StftConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = StftConfig {
            center: false,
            ..StftConfig::default()
        };
        assert!(stft(&[0.0f64; 10], 1.0, cfg).is_err());
    }

    #[test]
    fn window_in_unit_interval() {
        let w = hamming::<f64>(64);
        assert!(w.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!((w[0] - 0.08).abs() < 1e-12);
        assert!((w[32] - 1.0).abs() < 1e-12);
    }
}

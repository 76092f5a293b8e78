//! Spectral analysis: FFT, STFT/ISTFT, polar conversion, envelope detection.

mod bandwidth;
mod envelope;
mod fft;
mod polar;
mod stft;

pub use bandwidth::{measure_bandwidth, Bandwidth};
pub use envelope::envelope;
pub use fft::{fft, ifft, rfft_padded, FftPlan};
pub use polar::{from_polar, to_polar, wrap_phase, MagPhaseTensor};
pub use stft::{hamming, istft, stft, ComplexSpectrogram, Stft, StftConfig};

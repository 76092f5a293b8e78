//! Image-quality and resolution metrics.

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn same_shape(a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::shape(format!("{:?}", a.dim()), format!("{:?}", b.dim())));
    }
    if a.is_empty() {
        return Err(Error::Data("empty image".into()));
    }
    Ok(())
}

pub fn mse(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    same_shape(a, b)?;
    let mut acc = 0.0;
    Zip::from(a).and(b).for_each(|x, y| acc += (x - y) * (x - y));
    Ok(acc / a.len() as f64)
}

/// `10 log10(range^2 / mse)`; identical inputs give `+inf`.
pub fn psnr_from_mse(mse: f64, data_range: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (data_range * data_range / mse).log10()
    }
}

pub fn psnr(a: &Array2<f64>, b: &Array2<f64>, data_range: f64) -> Result<f64> {
    if !(data_range > 0.0) {
        return Err(Error::Config(format!("data range must be positive, got {data_range}")));
    }
    Ok(psnr_from_mse(mse(a, b)?, data_range))
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(len: usize, sigma: f64) -> Vec<f64> {
    let c = (len as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..len)
        .map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

/// Separable "valid" correlation with a square window.
fn filter_valid(img: &Array2<f64>, taps: &[f64]) -> Array2<f64> {
    let (h, w) = img.dim();
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = Array2::<f64>::zeros((h, ow));
    for i in 0..h {
        for j in 0..ow {
            rows[[i, j]] = (0..k).map(|t| taps[t] * img[[i, j + t]]).sum();
        }
    }
    let mut out = Array2::<f64>::zeros((oh, ow));
    for i in 0..oh {
        for j in 0..ow {
            out[[i, j]] = (0..k).map(|t| taps[t] * rows[[i + t, j]]).sum();
        }
    }
    out
}

/// Mean structural similarity over every fully contained 11x11 Gaussian
/// window (sigma 1.5, K1 = 0.01, K2 = 0.03).
pub fn ssim(a: &Array2<f64>, b: &Array2<f64>, data_range: f64) -> Result<f64> {
    same_shape(a, b)?;
    let (h, w) = a.dim();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Data(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }
    if !(data_range > 0.0) {
        return Err(Error::Config(format!("data range must be positive, got {data_range}")));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let c1 = (SSIM_K1 * data_range).powi(2);
    let c2 = (SSIM_K2 * data_range).powi(2);
    let mu_a = filter_valid(a, &taps);
    let mu_b = filter_valid(b, &taps);
    let aa = filter_valid(&(a * a), &taps);
    let bb = filter_valid(&(b * b), &taps);
    let ab = filter_valid(&(a * b), &taps);
    let mut total = 0.0;
    for idx in 0..mu_a.len() {
        let (i, j) = (idx / mu_a.ncols(), idx % mu_a.ncols());
        let (ma, mb) = (mu_a[[i, j]], mu_b[[i, j]]);
        let va = aa[[i, j]] - ma * ma;
        let vb = bb[[i, j]] - mb * mb;
        let cov = ab[[i, j]] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / mu_a.len() as f64)
}

/// Foreground/background pixel sets over an image grid (row-major flat indices).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiMask {
    pub shape: (usize, usize),
    pub foreground: Vec<usize>,
    pub background: Vec<usize>,
}

impl RoiMask {
    pub fn new(shape: (usize, usize), foreground: Vec<usize>, background: Vec<usize>) -> Result<Self> {
        let mask = Self {
            shape,
            foreground,
            background,
        };
        mask.validate()?;
        Ok(mask)
    }

    pub fn validate(&self) -> Result<()> {
        if self.foreground.is_empty() || self.background.is_empty() {
            return Err(Error::Data("ROI regions must be non-empty".into()));
        }
        let n = self.shape.0 * self.shape.1;
        let mut seen = vec![0u8; n];
        for &i in &self.foreground {
            if i >= n {
                return Err(Error::Data(format!("ROI index {i} outside {:?}", self.shape)));
            }
            seen[i] |= 1;
        }
        for &i in &self.background {
            if i >= n {
                return Err(Error::Data(format!("ROI index {i} outside {:?}", self.shape)));
            }
            if seen[i] & 1 != 0 {
                return Err(Error::Data(format!("ROI index {i} is in both regions")));
            }
        }
        Ok(())
    }

    /// Mask from a per-pixel classifier: `Some(true)` foreground,
    /// `Some(false)` background, `None` excluded.
    pub fn from_fn(shape: (usize, usize), mut classify: impl FnMut(usize, usize) -> Option<bool>) -> Result<Self> {
        let mut fg = Vec::new();
        let mut bg = Vec::new();
        for i in 0..shape.0 {
            for j in 0..shape.1 {
                match classify(i, j) {
                    Some(true) => fg.push(i * shape.1 + j),
                    Some(false) => bg.push(i * shape.1 + j),
                    None => {}
                }
            }
        }
        Self::new(shape, fg, bg)
    }
}

fn region_stats(img: &Array2<f64>, idx: &[usize]) -> (f64, f64) {
    let flat = img.as_slice().expect("standard layout");
    let n = idx.len() as f64;
    let mean = idx.iter().map(|&i| flat[i]).sum::<f64>() / n;
    let var = idx.iter().map(|&i| (flat[i] - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn roi_stats(img: &Array2<f64>, mask: &RoiMask) -> Result<((f64, f64), (f64, f64))> {
    mask.validate()?;
    if img.dim() != mask.shape {
        return Err(Error::shape(format!("{:?}", mask.shape), format!("{:?}", img.dim())));
    }
    let img = img.as_standard_layout().to_owned();
    let fg = region_stats(&img, &mask.foreground);
    let bg = region_stats(&img, &mask.background);
    if fg.1 == 0.0 || bg.1 == 0.0 {
        return Err(Error::Data("zero standard deviation inside an ROI".into()));
    }
    Ok((fg, bg))
}

/// `|mu_f - mu_b| / sqrt(sigma_f^2 + sigma_b^2)`, population statistics.
pub fn cnr(img: &Array2<f64>, mask: &RoiMask) -> Result<f64> {
    let ((mf, sf), (mb, sb)) = roi_stats(img, mask)?;
    Ok((mf - mb).abs() / (sf * sf + sb * sb).sqrt())
}

/// `20 log10(mu_f / sigma_f)`.
pub fn snr_db(img: &Array2<f64>, mask: &RoiMask) -> Result<f64> {
    let ((mf, sf), _) = roi_stats(img, mask)?;
    Ok(20.0 * (mf / sf).log10())
}

/// Width in samples between the half-maximum crossings around the global
/// peak, linearly interpolated.
pub fn fwhm_samples(row: &[f64]) -> Result<f64> {
    let (peak, &max) = row
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .ok_or_else(|| Error::Data("empty envelope row".into()))?;
    if !(max > 0.0) {
        return Err(Error::Data("envelope row has no positive peak".into()));
    }
    let half = max / 2.0;
    let mut l = peak;
    while l > 0 && row[l] > half {
        l -= 1;
    }
    if row[l] > half {
        return Err(Error::Data("no half-maximum crossing before the peak".into()));
    }
    let left = l as f64 + (half - row[l]) / (row[l + 1] - row[l]);
    let mut r = peak;
    while r + 1 < row.len() && row[r] > half {
        r += 1;
    }
    if row[r] > half {
        return Err(Error::Data("no half-maximum crossing after the peak".into()));
    }
    let right = (r - 1) as f64 + (row[r - 1] - half) / (row[r - 1] - row[r]);
    Ok(right - left)
}

/// FWHM in seconds.
pub fn fwhm(row: &[f64], fs: f64) -> Result<f64> {
    Ok(fwhm_samples(row)? / fs)
}

/// Axial extent of a two-way time interval, in millimetres.
pub fn seconds_to_axial_mm(seconds: f64, sound_speed: f64) -> f64 {
    seconds * sound_speed / 2.0 * 1e3
}

/// JSON has no infinities: non-finite values travel as the strings `"inf"`,
/// `"-inf"` and `"nan"`, finite values as plain numbers.
pub mod nonfinite {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("expected a number, got {other:?}"))),
            },
        }
    }
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    #[serde(with = "nonfinite")]
    pub mean: f64,
    #[serde(with = "nonfinite")]
    pub sd: f64,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        if values.is_empty() {
            return Self {
                mean: f64::NAN,
                sd: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, sd }
    }
}

/// Image-domain comparison of one image against a reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub mse: f64,
    #[serde(with = "nonfinite")]
    pub psnr_db: f64,
    pub ssim: f64,
}

impl ImageMetrics {
    pub fn compare(img: &Array2<f64>, reference: &Array2<f64>, data_range: f64) -> Result<Self> {
        let mse = mse(img, reference)?;
        Ok(Self {
            mse,
            psnr_db: psnr_from_mse(mse, data_range),
            ssim: ssim(img, reference, data_range)?,
        })
    }
}

/// Contrast metrics of one image over a fixed ROI pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiMetrics {
    pub cnr: f64,
    #[serde(with = "nonfinite")]
    pub snr_db: f64,
}

impl RoiMetrics {
    pub fn compute(img: &Array2<f64>, mask: &RoiMask) -> Result<Self> {
        Ok(Self {
            cnr: cnr(img, mask)?,
            snr_db: snr_db(img, mask)?,
        })
    }
}

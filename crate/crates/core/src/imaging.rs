//! B-mode rendering and 8-bit graymap export.

use std::path::Path;

use ndarray::{s, Array2};

use crate::dsp::envelope;
use crate::error::{Error, Result};
use crate::io::{atomic_write, read_file};
use crate::metrics::RoiMask;
use crate::rfsim::{CystRegion, RfLine, ScanConfig};

pub const DEFAULT_DYNAMIC_RANGE_DB: f64 = 60.0;

/// Log-compressed image, depth along rows and lateral position along columns.
#[derive(Debug, Clone, PartialEq)]
pub struct BmodeImage {
    pub pixels: Array2<f64>,
    pub dynamic_range_db: f64,
    /// Millimetres per row.
    pub axial_mm: f64,
    /// Millimetres per column.
    pub lateral_mm: f64,
}

/// Envelope of every line, columns in line order, normalized by the global
/// maximum. This is the linear image the contrast metrics use.
pub fn envelope_image(lines: &[&[f64]]) -> Result<Array2<f64>> {
    let Some(first) = lines.first() else {
        return Err(Error::Data("no lines to render".into()));
    };
    let len = first.len();
    let mut img = Array2::zeros((len, lines.len()));
    for (j, line) in lines.iter().enumerate() {
        if line.len() != len {
            return Err(Error::shape(len, line.len()));
        }
        let env = envelope(line)?;
        img.column_mut(j).assign(&ndarray::ArrayView1::from(&env[..]));
    }
    let peak = img.iter().cloned().fold(0.0, f64::max);
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::Data("image has no positive finite envelope to normalize by".into()));
    }
    img.mapv_inplace(|v| v / peak);
    Ok(img)
}

/// `20 log10` of a normalized envelope, clamped to `[-dr, 0]` and mapped to `[0, 1]`.
pub fn log_compress(env: &Array2<f64>, dynamic_range_db: f64) -> Array2<f64> {
    env.mapv(|v| {
        let db = if v > 0.0 { 20.0 * v.log10() } else { -dynamic_range_db };
        (db.clamp(-dynamic_range_db, 0.0) + dynamic_range_db) / dynamic_range_db
    })
}

/// Renders raw sample vectors; `fs` and `line_pitch` only set the axes.
pub fn render_samples(lines: &[&[f64]], fs: f64, sound_speed: f64, line_pitch: f64, dynamic_range_db: f64) -> Result<BmodeImage> {
    if !(dynamic_range_db > 0.0 && dynamic_range_db.is_finite()) {
        return Err(Error::Config(format!("dynamic range must be positive, got {dynamic_range_db}")));
    }
    let env = envelope_image(lines)?;
    Ok(BmodeImage {
        pixels: log_compress(&env, dynamic_range_db),
        dynamic_range_db,
        axial_mm: sound_speed / (2.0 * fs) * 1e3,
        lateral_mm: line_pitch * 1e3,
    })
}

pub fn render_bmode(lines: &[RfLine], scan: &ScanConfig, dynamic_range_db: f64) -> Result<BmodeImage> {
    let Some(first) = lines.first() else {
        return Err(Error::Data("no lines to render".into()));
    };
    if lines.iter().any(|l| l.fs != first.fs) {
        return Err(Error::Data("lines do not share a sampling rate".into()));
    }
    let views: Vec<&[f64]> = lines.iter().map(|l| l.samples.as_slice()).collect();
    render_samples(&views, first.fs, scan.sound_speed, scan.line_pitch, dynamic_range_db)
}

/// Quantizes `[0, 1]` pixels to bytes with `round(255 v)`.
pub fn quantize(pixels: &Array2<f64>) -> Vec<u8> {
    pixels.iter().map(|&v| (255.0 * v.clamp(0.0, 1.0)).round() as u8).collect()
}

pub fn encode_pgm(pixels: &Array2<f64>) -> Vec<u8> {
    let (h, w) = pixels.dim();
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(quantize(&pixels.as_standard_layout().to_owned()));
    out
}

pub fn export_image(img: &BmodeImage, path: &Path) -> Result<()> {
    atomic_write(path, &encode_pgm(&img.pixels))
}

pub fn export_pixels(pixels: &Array2<f64>, path: &Path) -> Result<()> {
    atomic_write(path, &encode_pgm(pixels))
}

/// Reads a binary 8-bit graymap into `(height, width, bytes)`.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = read_file(path)?;
    let bad = |why: &str| Error::format(path, why.to_string());
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P5" {
        return Err(bad("not a binary graymap"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (w, h, max) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if max != 255 {
        return Err(bad("only 8-bit graymaps are supported"));
    }
    if bytes.len() < pos || bytes.len() - pos != w * h {
        return Err(bad("payload size does not match header"));
    }
    Ok((h, w, bytes[pos..].to_vec()))
}

/// Panels side by side with `gap` white columns between them.
pub fn compose_panels(panels: &[&Array2<f64>], gap: usize) -> Result<Array2<f64>> {
    let Some(first) = panels.first() else {
        return Err(Error::Data("no panels".into()));
    };
    let h = first.nrows();
    if panels.iter().any(|p| p.nrows() != h) {
        return Err(Error::Data("panels differ in height".into()));
    }
    let width = panels.iter().map(|p| p.ncols()).sum::<usize>() + gap * (panels.len() - 1);
    let mut out = Array2::ones((h, width));
    let mut col = 0;
    for p in panels {
        out.slice_mut(s![.., col..col + p.ncols()]).assign(p);
        col += p.ncols() + gap;
    }
    Ok(out)
}

/// Truth | prediction | input, in that order.
pub fn triptych(truth: &BmodeImage, prediction: &BmodeImage, input: &BmodeImage) -> Result<Array2<f64>> {
    compose_panels(&[&truth.pixels, &prediction.pixels, &input.pixels], 4)
}

/// Foreground: pixels well inside the cyst. Background: speckle pixels at
/// the same depths that stay clear of every cyst. Column `j` of the image is
/// scan line `first_line + j`.
pub fn cyst_roi(
    cyst: &CystRegion,
    all: &[CystRegion],
    scan: &ScanConfig,
    fs: f64,
    shape: (usize, usize),
    first_line: usize,
) -> Result<RoiMask> {
    let depth_of = |row: usize| row as f64 * scan.sound_speed / (2.0 * fs);
    let classify = |i: usize, j: usize, strict: bool| {
        let (d, x) = (depth_of(i), scan.line_position(first_line + j));
        let r2 = (d - cyst.depth).powi(2) + (x - cyst.lateral).powi(2);
        if r2 <= (0.7 * cyst.radius).powi(2) {
            return Some(true);
        }
        let clear = all
            .iter()
            .all(|c| (d - c.depth).powi(2) + (x - c.lateral).powi(2) > (1.3 * c.radius).powi(2));
        let band = (d - cyst.depth).abs() <= cyst.radius;
        (clear && (band || !strict)).then_some(false)
    };
    RoiMask::from_fn(shape, |i, j| classify(i, j, true)).or_else(|_| RoiMask::from_fn(shape, |i, j| classify(i, j, false)))
}

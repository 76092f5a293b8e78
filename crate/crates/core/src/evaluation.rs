//! Truth / prediction / input comparison over aligned datasets.
//!
//! Image metrics run on log-compressed B-mode images normalized to [0, 1],
//! contrast metrics on the linear envelope, and FWHM on single envelope lines
//! around each known point-target depth.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dsp::envelope;
use crate::error::{Error, Result};
use crate::imaging::{cyst_roi, envelope_image, render_samples, BmodeImage, DEFAULT_DYNAMIC_RANGE_DB};
use crate::io::{atomic_write, read_file};
use crate::metrics::{fwhm_samples, nonfinite, ImageMetrics, MeanSd, RoiMetrics};
use crate::rfsim::{PairedDataset, PhantomKind, PhantomRecord, ScanConfig, Split};

/// Normalized images span [0, 1].
pub const DATA_RANGE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub dynamic_range_db: f64,
    /// Only phantoms of this split are evaluated; `None` takes all.
    pub split: Option<Split>,
    /// First scan line of the evaluated window within each phantom.
    pub first_line: usize,
    /// Window width in lines; `None` runs to the last line.
    pub max_lines: Option<usize>,
    /// Line used for point-target FWHM; `None` picks the line closest to the
    /// scan centre.
    pub fwhm_line: Option<usize>,
    /// Samples on each side of a target's nominal echo position.
    pub fwhm_half_window: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            dynamic_range_db: DEFAULT_DYNAMIC_RANGE_DB,
            split: Some(Split::Test),
            first_line: 0,
            max_lines: None,
            fwhm_line: None,
            fwhm_half_window: 25,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dynamic_range_db > 0.0 && self.dynamic_range_db.is_finite()) {
            return Err(Error::Config(format!("dynamic range must be positive, got {}", self.dynamic_range_db)));
        }
        if self.max_lines == Some(0) {
            return Err(Error::Config("max_lines must be at least 1".into()));
        }
        if self.fwhm_half_window < 2 {
            return Err(Error::Config("fwhm_half_window must be at least 2".into()));
        }
        Ok(())
    }
}

/// Table-2 style row: one speckle phantom window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRow {
    pub phantom: u32,
    pub first_line: usize,
    pub n_lines: usize,
    pub input: ImageMetrics,
    pub prediction: ImageMetrics,
}

/// Table-3 style row: one cyst.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiRow {
    pub phantom: u32,
    pub cyst: usize,
    pub truth: RoiMetrics,
    pub input: RoiMetrics,
    pub prediction: RoiMetrics,
}

/// Axial FWHM of one point target; `None` where no half-maximum crossing
/// exists inside the window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FwhmRow {
    pub phantom: u32,
    pub line: usize,
    pub target: usize,
    pub depth_mm: f64,
    pub truth_mm: Option<f64>,
    pub input_mm: Option<f64>,
    pub prediction_mm: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageSummary {
    pub mse: MeanSd,
    pub psnr_db: MeanSd,
    pub ssim: MeanSd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiSummary {
    pub cnr: MeanSd,
    pub snr_db: MeanSd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison<T> {
    pub input: T,
    pub prediction: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThreeWay<T> {
    pub truth: T,
    pub input: T,
    pub prediction: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub image: Option<Comparison<ImageSummary>>,
    pub roi: Option<ThreeWay<RoiSummary>>,
    pub fwhm_mm: Option<ThreeWay<MeanSd>>,
}

/// Per-row metrics with mean and SD aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(with = "nonfinite")]
    pub data_range: f64,
    pub dynamic_range_db: f64,
    pub images: Vec<ImageRow>,
    pub rois: Vec<RoiRow>,
    pub fwhm: Vec<FwhmRow>,
    pub summary: ReportSummary,
}

/// B-mode panels of one evaluated phantom window.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomImages {
    pub phantom: u32,
    pub kind: PhantomKind,
    pub first_line: usize,
    pub truth: BmodeImage,
    pub prediction: BmodeImage,
    pub input: BmodeImage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: MetricReport,
    pub images: Vec<PhantomImages>,
}

/// Checks that three datasets describe the same lines in the same order.
pub fn check_aligned(truth: &PairedDataset, prediction: &PairedDataset, input: &PairedDataset) -> Result<()> {
    for (name, other) in [("prediction", prediction), ("input", input)] {
        if other.len() != truth.len() || other.line_len != truth.line_len || other.fs != truth.fs {
            return Err(Error::Data(format!(
                "{name} dataset is misaligned with truth: {} pairs of {} samples at {} Hz vs {} of {} at {} Hz",
                other.len(),
                other.line_len,
                other.fs,
                truth.len(),
                truth.line_len,
                truth.fs
            )));
        }
        for (i, (a, b)) in truth.pairs.iter().zip(&other.pairs).enumerate() {
            let (ma, mb) = (a.high.meta, b.high.meta);
            if (ma.phantom_id, ma.line_index) != (mb.phantom_id, mb.line_index) {
                return Err(Error::Data(format!("{name} pair {i} belongs to a different phantom line")));
            }
        }
    }
    Ok(())
}

fn window(record: &PhantomRecord, cfg: &EvalConfig) -> Result<(usize, usize)> {
    let start = cfg.first_line;
    let end = cfg.max_lines.map_or(record.n_lines, |m| (start + m).min(record.n_lines));
    if start >= end {
        return Err(Error::Config(format!(
            "line window starting at {start} is empty for phantom {} with {} lines",
            record.id, record.n_lines
        )));
    }
    Ok((start, end - start))
}

fn centre_line(scan: &ScanConfig) -> usize {
    (0..scan.n_lines)
        .min_by(|&a, &b| scan.line_position(a).abs().total_cmp(&scan.line_position(b).abs()))
        .unwrap_or(0)
}

fn refs(v: &[Vec<f64>]) -> Vec<&[f64]> {
    v.iter().map(Vec::as_slice).collect()
}

fn finite(v: Vec<Option<f64>>) -> Vec<f64> {
    v.into_iter().flatten().collect()
}

/// Compares `truth` high-band lines with `prediction` high-band lines and
/// `input` low-band lines, phantom by phantom.
pub fn evaluate(
    truth: &PairedDataset,
    prediction: &PairedDataset,
    input: &PairedDataset,
    scan: &ScanConfig,
    cfg: &EvalConfig,
) -> Result<Evaluation> {
    cfg.validate()?;
    truth.check_consistent()?;
    check_aligned(truth, prediction, input)?;
    let fs = truth.fs;
    let c = scan.sound_speed;
    let mm_per_sample = c / (2.0 * fs) * 1e3;
    let mut images = Vec::new();
    let mut image_rows = Vec::new();
    let mut roi_rows = Vec::new();
    let mut fwhm_rows = Vec::new();

    for record in truth.phantoms.iter().filter(|r| cfg.split.is_none_or(|s| r.split == s)) {
        if record.n_lines != scan.n_lines {
            return Err(Error::Config(format!(
                "scan has {} lines but phantom {} has {}",
                scan.n_lines, record.id, record.n_lines
            )));
        }
        let (start, count) = window(record, cfg)?;
        let range = record.first_pair + start..record.first_pair + start + count;
        let lines = |ds: &PairedDataset, high: bool| -> Vec<Vec<f64>> {
            ds.pairs[range.clone()]
                .iter()
                .map(|p| if high { p.high.samples.clone() } else { p.low.samples.clone() })
                .collect()
        };
        let (t, p, i) = (lines(truth, true), lines(prediction, true), lines(input, false));
        let (tr, pr, ir) = (refs(&t), refs(&p), refs(&i));
        let render = |l: &[&[f64]]| render_samples(l, fs, c, scan.line_pitch, cfg.dynamic_range_db);
        let (ti, pi, ii) = (render(&tr)?, render(&pr)?, render(&ir)?);

        match record.kind {
            PhantomKind::SpeckleCyst => {
                image_rows.push(ImageRow {
                    phantom: record.id,
                    first_line: start,
                    n_lines: count,
                    input: ImageMetrics::compare(&ii.pixels, &ti.pixels, DATA_RANGE)?,
                    prediction: ImageMetrics::compare(&pi.pixels, &ti.pixels, DATA_RANGE)?,
                });
                let (te, pe, ie) = (envelope_image(&tr)?, envelope_image(&pr)?, envelope_image(&ir)?);
                for (k, cyst) in record.cysts.iter().enumerate() {
                    let Ok(mask) = cyst_roi(cyst, &record.cysts, scan, fs, te.dim(), start) else {
                        continue;
                    };
                    roi_rows.push(RoiRow {
                        phantom: record.id,
                        cyst: k,
                        truth: RoiMetrics::compute(&te, &mask)?,
                        input: RoiMetrics::compute(&ie, &mask)?,
                        prediction: RoiMetrics::compute(&pe, &mask)?,
                    });
                }
            }
            PhantomKind::PointTargets => {
                let line = cfg.fwhm_line.unwrap_or_else(|| centre_line(scan));
                if line >= record.n_lines {
                    return Err(Error::Config(format!("fwhm_line {line} is outside the scan")));
                }
                let pair = record.first_pair + line;
                let envs = [
                    envelope(&truth.pairs[pair].high.samples)?,
                    envelope(&input.pairs[pair].low.samples)?,
                    envelope(&prediction.pairs[pair].high.samples)?,
                ];
                for (k, &depth) in record.target_depths.iter().enumerate() {
                    let centre = (2.0 * depth / c * fs).round() as usize;
                    let lo = centre.saturating_sub(cfg.fwhm_half_window);
                    let hi = (centre + cfg.fwhm_half_window + 1).min(truth.line_len);
                    if lo >= hi {
                        continue;
                    }
                    let w: Vec<Option<f64>> =
                        envs.iter().map(|e| fwhm_samples(&e[lo..hi]).ok().map(|s| s * mm_per_sample)).collect();
                    fwhm_rows.push(FwhmRow {
                        phantom: record.id,
                        line,
                        target: k,
                        depth_mm: depth * 1e3,
                        truth_mm: w[0],
                        input_mm: w[1],
                        prediction_mm: w[2],
                    });
                }
            }
        }
        images.push(PhantomImages {
            phantom: record.id,
            kind: record.kind,
            first_line: start,
            truth: ti,
            prediction: pi,
            input: ii,
        });
    }
    if images.is_empty() {
        return Err(Error::Data("no phantoms matched the evaluation split".into()));
    }

    let image_summary = |f: &dyn Fn(&ImageRow) -> ImageMetrics| {
        let col = |g: &dyn Fn(&ImageMetrics) -> f64| MeanSd::of(&image_rows.iter().map(|r| g(&f(r))).collect::<Vec<_>>());
        ImageSummary {
            mse: col(&|m| m.mse),
            psnr_db: col(&|m| m.psnr_db),
            ssim: col(&|m| m.ssim),
        }
    };
    let roi_summary = |f: &dyn Fn(&RoiRow) -> RoiMetrics| RoiSummary {
        cnr: MeanSd::of(&roi_rows.iter().map(|r| f(r).cnr).collect::<Vec<_>>()),
        snr_db: MeanSd::of(&roi_rows.iter().map(|r| f(r).snr_db).collect::<Vec<_>>()),
    };
    let fwhm_col = |f: &dyn Fn(&FwhmRow) -> Option<f64>| MeanSd::of(&finite(fwhm_rows.iter().map(f).collect()));
    let summary = ReportSummary {
        image: (!image_rows.is_empty()).then(|| Comparison {
            input: image_summary(&|r| r.input),
            prediction: image_summary(&|r| r.prediction),
        }),
        roi: (!roi_rows.is_empty()).then(|| ThreeWay {
            truth: roi_summary(&|r| r.truth),
            input: roi_summary(&|r| r.input),
            prediction: roi_summary(&|r| r.prediction),
        }),
        fwhm_mm: (!fwhm_rows.is_empty()).then(|| ThreeWay {
            truth: fwhm_col(&|r| r.truth_mm),
            input: fwhm_col(&|r| r.input_mm),
            prediction: fwhm_col(&|r| r.prediction_mm),
        }),
    };
    Ok(Evaluation {
        report: MetricReport {
            data_range: DATA_RANGE,
            dynamic_range_db: cfg.dynamic_range_db,
            images: image_rows,
            rois: roi_rows,
            fwhm: fwhm_rows,
            summary,
        },
        images,
    })
}

pub fn write_report_json(path: &Path, report: &MetricReport) -> Result<()> {
    let mut text = serde_json::to_vec_pretty(report)?;
    text.push(b'\n');
    atomic_write(path, &text)
}

pub fn read_report_json(path: &Path) -> Result<MetricReport> {
    Ok(serde_json::from_slice(&read_file(path)?)?)
}

/// Long-format CSV: one row per (scope, phantom, item, metric) with truth,
/// input and prediction columns. Infinite values are written as `inf`.
pub fn write_report_csv(path: &Path, report: &MetricReport) -> Result<()> {
    #[derive(Serialize)]
    struct Row<'a> {
        scope: &'a str,
        phantom: Option<u32>,
        item: Option<usize>,
        metric: &'a str,
        truth: Option<f64>,
        input: f64,
        prediction: f64,
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &report.images {
        for (metric, i, p) in [
            ("mse", r.input.mse, r.prediction.mse),
            ("psnr_db", r.input.psnr_db, r.prediction.psnr_db),
            ("ssim", r.input.ssim, r.prediction.ssim),
        ] {
            w.serialize(Row { scope: "image", phantom: Some(r.phantom), item: None, metric, truth: None, input: i, prediction: p })?;
        }
    }
    for r in &report.rois {
        for (metric, t, i, p) in [
            ("cnr", r.truth.cnr, r.input.cnr, r.prediction.cnr),
            ("snr_db", r.truth.snr_db, r.input.snr_db, r.prediction.snr_db),
        ] {
            w.serialize(Row { scope: "roi", phantom: Some(r.phantom), item: Some(r.cyst), metric, truth: Some(t), input: i, prediction: p })?;
        }
    }
    let nan = f64::NAN;
    for r in &report.fwhm {
        w.serialize(Row {
            scope: "fwhm",
            phantom: Some(r.phantom),
            item: Some(r.target),
            metric: "fwhm_mm",
            truth: r.truth_mm,
            input: r.input_mm.unwrap_or(nan),
            prediction: r.prediction_mm.unwrap_or(nan),
        })?;
    }
    let s = &report.summary;
    let mut aggregate = |metric: &str, t: Option<MeanSd>, i: MeanSd, p: MeanSd| -> Result<()> {
        w.serialize(Row { scope: "mean", phantom: None, item: None, metric, truth: t.map(|m| m.mean), input: i.mean, prediction: p.mean })?;
        w.serialize(Row { scope: "sd", phantom: None, item: None, metric, truth: t.map(|m| m.sd), input: i.sd, prediction: p.sd })?;
        Ok(())
    };
    if let Some(c) = &s.image {
        aggregate("mse", None, c.input.mse, c.prediction.mse)?;
        aggregate("psnr_db", None, c.input.psnr_db, c.prediction.psnr_db)?;
        aggregate("ssim", None, c.input.ssim, c.prediction.ssim)?;
    }
    if let Some(c) = &s.roi {
        aggregate("cnr", Some(c.truth.cnr), c.input.cnr, c.prediction.cnr)?;
        aggregate("snr_db", Some(c.truth.snr_db), c.input.snr_db, c.prediction.snr_db)?;
    }
    if let Some(c) = &s.fwhm_mm {
        aggregate("fwhm_mm", Some(c.truth), c.input, c.prediction)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(format!("csv buffer: {e}")))?;
    atomic_write(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::psnr_from_mse;
    use crate::rfsim::{generate_dataset, PhantomGeometry, PhantomGroup, ProbeSpec, PulseEchoModel, SOUND_SPEED};

    fn small_dataset() -> (PairedDataset, ScanConfig) {
        let pe = PulseEchoModel::standard(ProbeSpec::default()).unwrap();
        let scan = ScanConfig { n_lines: 16, line_len: 1024, ..ScanConfig::default() };
        let geom = PhantomGeometry::for_line(scan.line_len, pe.probe.fs, SOUND_SPEED, scan.width());
        let groups = [
            PhantomGroup { kind: PhantomKind::SpeckleCyst, count: 2, n_scatterers: 300, split: Split::Test },
            PhantomGroup { kind: PhantomKind::PointTargets, count: 1, n_scatterers: 4, split: Split::Test },
        ];
        (generate_dataset(&pe, &scan, &geom, &groups, 3).unwrap(), scan)
    }

    #[test]
    fn truth_against_itself_is_perfect() {
        let (ds, scan) = small_dataset();
        let mut as_input = ds.clone();
        for p in &mut as_input.pairs {
            p.low = p.high.clone();
        }
        let ev = evaluate(&ds, &ds, &as_input, &scan, &EvalConfig::default()).unwrap();
        let r = &ev.report;
        assert_eq!(r.images.len(), 2);
        for row in &r.images {
            for m in [row.input, row.prediction] {
                assert_eq!(m.mse, 0.0);
                assert_eq!(m.psnr_db, f64::INFINITY);
                assert_eq!(m.ssim, 1.0);
            }
        }
        assert!(!r.fwhm.is_empty());
        for row in &r.fwhm {
            assert_eq!(row.truth_mm, row.prediction_mm);
        }
        assert_eq!(ev.images.len(), 3);
        let text = serde_json::to_string(r).unwrap();
        let back: MetricReport = serde_json::from_str(&text).unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), text);
    }

    #[test]
    fn rows_are_self_consistent_and_narrowband_is_blurrier() {
        let (ds, scan) = small_dataset();
        let r = evaluate(&ds, &ds, &ds, &scan, &EvalConfig::default()).unwrap().report;
        for row in &r.images {
            for m in [row.input, row.prediction] {
                assert_eq!(m.psnr_db, psnr_from_mse(m.mse, DATA_RANGE));
            }
            assert!(row.input.mse > 0.0);
        }
        let f = r.summary.fwhm_mm.unwrap();
        assert!(f.input.mean > f.truth.mean, "{f:?}");
        let image = r.summary.image.unwrap();
        assert_eq!(image.prediction.ssim.mean, 1.0);
    }

    #[test]
    fn report_keys_match_the_tables() {
        let (ds, scan) = small_dataset();
        let r = evaluate(&ds, &ds, &ds, &scan, &EvalConfig::default()).unwrap().report;
        let v = serde_json::to_value(&r).unwrap();
        let keys = |v: &serde_json::Value| {
            let mut k: Vec<String> = v.as_object().unwrap().keys().cloned().collect();
            k.sort();
            k
        };
        assert_eq!(keys(&v["summary"]["image"]["input"]), ["mse", "psnr_db", "ssim"]);
        if !r.rois.is_empty() {
            assert_eq!(keys(&v["summary"]["roi"]["prediction"]), ["cnr", "snr_db"]);
        }
    }

    #[test]
    fn misaligned_inputs_are_data_errors() {
        let (ds, scan) = small_dataset();
        let mut short = ds.clone();
        short.pairs.pop();
        let e = evaluate(&ds, &short, &ds, &scan, &EvalConfig::default()).unwrap_err();
        assert!(matches!(e, Error::Data(_)), "{e}");
        let mut shuffled = ds.clone();
        shuffled.pairs.swap(0, 20);
        let e = evaluate(&ds, &shuffled, &ds, &scan, &EvalConfig::default()).unwrap_err();
        assert!(matches!(e, Error::Data(_)), "{e}");
    }

    #[test]
    fn window_and_split_selection() {
        let (ds, scan) = small_dataset();
        let cfg = EvalConfig { first_line: 4, max_lines: Some(11), ..EvalConfig::default() };
        let ev = evaluate(&ds, &ds, &ds, &scan, &cfg).unwrap();
        assert!(ev.report.images.iter().all(|r| r.first_line == 4 && r.n_lines == 11));
        assert_eq!(ev.images[0].truth.pixels.ncols(), 11);
        let none = EvalConfig { split: Some(Split::Train), ..EvalConfig::default() };
        assert!(evaluate(&ds, &ds, &ds, &scan, &none).is_err());
        let empty = EvalConfig { first_line: 16, ..EvalConfig::default() };
        assert!(matches!(evaluate(&ds, &ds, &ds, &scan, &empty), Err(Error::Config(_))));
    }

    #[test]
    fn csv_has_every_row() {
        let (ds, scan) = small_dataset();
        let r = evaluate(&ds, &ds, &ds, &scan, &EvalConfig::default()).unwrap().report;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        write_report_csv(&path, &r).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "scope,phantom,item,metric,truth,input,prediction");
        let expected = 3 * r.images.len() + 2 * r.rois.len() + r.fwhm.len() + 2 * (3 + 1 + usize::from(!r.rois.is_empty()) * 2);
        assert_eq!(lines.count(), expected);
        let json = dir.path().join("r.json");
        write_report_json(&json, &r).unwrap();
        let back = read_report_json(&json).unwrap();
        assert_eq!(back.images, r.images);
    }
}

//! Subcommand implementations.

use std::path::{Path, PathBuf};

use log::info;
use rfsr::evaluation::{evaluate, write_report_csv, write_report_json, MetricReport};
use rfsr::imaging::{export_image, export_pixels, render_bmode, triptych};
use rfsr::loss_schedule::write_weight_log;
use rfsr::model::{load_checkpoint, Model};
use rfsr::rfsim::{generate_dataset, read_dataset, write_dataset, Band, PairedDataset, PulseReport};
use rfsr::trainer::{predict_dataset, train, write_train_log, CheckpointSink, SpectralCodec};
use rfsr::{Error, Result};

use crate::config::RunConfig;

/// Resolves a configured path against the output directory.
pub fn resolve(out: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        out.join(p)
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Data(format!("cannot create {}: {e}", dir.display())))
}

fn describe(name: &str, p: &PulseReport) -> String {
    format!(
        "{name}: -6 dB fractional bandwidth {:.4} ({:.3}-{:.3} MHz)",
        p.fractional_bandwidth,
        p.f_low / 1e6,
        p.f_high / 1e6
    )
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    ensure_dir(out)?;
    let pe = cfg.pulse_echo()?;
    let ds = generate_dataset(&pe, &cfg.phantom.scan, &cfg.geometry(), &cfg.phantom.groups, cfg.seed)?;
    let path = resolve(out, &cfg.paths.dataset);
    write_dataset(&path, &ds, Some(cfg.to_json()))?;
    println!("pairs: {}", ds.len());
    if let Some(p) = &ds.pulses {
        println!("{}", describe("probe", &p.probe));
        println!("{}", describe("narrow excitation", &p.narrow));
        println!("{}", describe("wide excitation", &p.wide));
    }
    println!("wrote {}", path.display());
    Ok(path)
}

fn load_dataset(path: &Path, cfg: &RunConfig) -> Result<PairedDataset> {
    let ds = read_dataset(path)?;
    if ds.line_len != cfg.phantom.scan.line_len {
        return Err(Error::Data(format!(
            "{} holds {}-sample lines but the config expects {}",
            path.display(),
            ds.line_len,
            cfg.phantom.scan.line_len
        )));
    }
    Ok(ds)
}

pub fn train_cmd(cfg: &RunConfig, out: &Path, dataset: Option<&Path>, resume: Option<&Path>, deterministic: bool) -> Result<()> {
    ensure_dir(out)?;
    let ds_path = dataset.map_or_else(|| resolve(out, &cfg.paths.dataset), Path::to_path_buf);
    let ds = load_dataset(&ds_path, cfg)?;
    let mut model = match resume {
        Some(p) => load_checkpoint::<f32>(p)?.model,
        None => Model::<f32>::new(cfg.model.clone(), cfg.seed)?,
    };
    if deterministic {
        info!("deterministic mode: single-threaded, seeded shuffling");
    }
    let ckpt = resolve(out, &cfg.paths.checkpoint);
    let sink = CheckpointSink {
        path: Some(ckpt.clone()),
        extra: serde_json::json!({ "config": cfg.to_json(), "deterministic": deterministic }),
    };
    info!("{} parameters, {} training pairs", model.params.count(), ds.indices(rfsr::rfsim::Split::Train).len());
    let report = train(&mut model, &ds, cfg.stft, &cfg.train, &sink)?;
    write_train_log(&resolve(out, &cfg.paths.train_log), &report)?;
    write_weight_log(&resolve(out, &cfg.paths.weight_log), &report.weights)?;
    let mut text = serde_json::to_vec_pretty(&report)?;
    text.push(b'\n');
    rfsr::io::atomic_write(&resolve(out, &cfg.paths.train_report), &text)?;
    if let Some(v) = report.final_val {
        println!("validation: l_mag {:.6} l_phase {:.6} l_cplx {:.6}", v.l_mag, v.l_phase, v.l_cplx);
    }
    println!("wrote {}", ckpt.display());
    Ok(())
}

pub fn infer(cfg: &RunConfig, out: &Path, checkpoint: Option<&Path>, dataset: Option<&Path>) -> Result<PathBuf> {
    ensure_dir(out)?;
    let ckpt_path = checkpoint.map_or_else(|| resolve(out, &cfg.paths.checkpoint), Path::to_path_buf);
    let ds_path = dataset.map_or_else(|| resolve(out, &cfg.paths.dataset), Path::to_path_buf);
    let model = load_checkpoint::<f32>(&ckpt_path)?.model;
    let ds = load_dataset(&ds_path, cfg)?;
    let (frames, bins) = cfg.stft.shape(ds.line_len)?;
    if (frames, bins) != (model.config().frames, model.config().bins) {
        return Err(Error::Config(format!(
            "checkpoint expects {}x{} spectrograms but the data gives {frames}x{bins}",
            model.config().frames,
            model.config().bins
        )));
    }
    let codec = SpectralCodec::<f32>::new(cfg.stft, ds.fs)?;
    let pred = predict_dataset(&model, &codec, &ds, cfg.train.batch_size)?;
    let path = resolve(out, &cfg.paths.prediction);
    write_dataset(&path, &pred, Some(cfg.to_json()))?;
    println!("predicted {} lines", pred.len());
    println!("wrote {}", path.display());
    Ok(path)
}

pub fn evaluate_cmd(
    cfg: &RunConfig,
    out: &Path,
    truth: Option<&Path>,
    prediction: Option<&Path>,
    input: Option<&Path>,
) -> Result<MetricReport> {
    ensure_dir(out)?;
    let truth_path = truth.map_or_else(|| resolve(out, &cfg.paths.dataset), Path::to_path_buf);
    let pred_path = prediction.map_or_else(|| resolve(out, &cfg.paths.prediction), Path::to_path_buf);
    let truth = load_dataset(&truth_path, cfg)?;
    let pred = load_dataset(&pred_path, cfg)?;
    let input = match input {
        Some(p) => load_dataset(p, cfg)?,
        None => truth.clone(),
    };
    let ev = evaluate(&truth, &pred, &input, &cfg.phantom.scan, &cfg.eval)?;
    write_report_json(&resolve(out, &cfg.paths.report_json), &ev.report)?;
    write_report_csv(&resolve(out, &cfg.paths.report_csv), &ev.report)?;
    let dir = resolve(out, &cfg.paths.images);
    ensure_dir(&dir)?;
    for img in &ev.images {
        let panel = triptych(&img.truth, &img.prediction, &img.input)?;
        export_pixels(&panel, &dir.join(format!("triptych_{:04}.pgm", img.phantom)))?;
    }
    if let Some(s) = &ev.report.summary.image {
        for (name, i, p) in [
            ("mse", s.input.mse, s.prediction.mse),
            ("psnr_db", s.input.psnr_db, s.prediction.psnr_db),
            ("ssim", s.input.ssim, s.prediction.ssim),
        ] {
            println!("{name:8} input {:.6} ± {:.6}  prediction {:.6} ± {:.6}", i.mean, i.sd, p.mean, p.sd);
        }
    }
    if let Some(f) = &ev.report.summary.fwhm_mm {
        println!(
            "fwhm_mm  truth {:.4}  input {:.4}  prediction {:.4}",
            f.truth.mean, f.input.mean, f.prediction.mean
        );
    }
    println!("wrote {}", resolve(out, &cfg.paths.report_json).display());
    Ok(ev.report)
}

pub fn render(cfg: &RunConfig, out: &Path, dataset: Option<&Path>, band: Band, phantom: Option<u32>) -> Result<Vec<PathBuf>> {
    let ds_path = dataset.map_or_else(|| resolve(out, &cfg.paths.dataset), Path::to_path_buf);
    let ds = load_dataset(&ds_path, cfg)?;
    let dir = resolve(out, &cfg.paths.images);
    ensure_dir(&dir)?;
    let records: Vec<_> = ds
        .phantoms
        .iter()
        .filter(|r| match phantom {
            Some(id) => r.id == id,
            None => cfg.eval.split.is_none_or(|s| r.split == s),
        })
        .collect();
    if records.is_empty() {
        return Err(Error::Data("no phantom matches the selection".into()));
    }
    let tag = match band {
        Band::Low => "low",
        Band::High => "high",
    };
    let mut written = Vec::new();
    for r in records {
        let lines: Vec<_> = ds
            .phantom_pairs(r)
            .iter()
            .map(|p| match band {
                Band::Low => p.low.clone(),
                Band::High => p.high.clone(),
            })
            .collect();
        let img = render_bmode(&lines, &cfg.phantom.scan, cfg.eval.dynamic_range_db)?;
        let path = dir.join(format!("bmode_{:04}_{tag}.pgm", r.id));
        export_image(&img, &path)?;
        written.push(path);
    }
    println!("wrote {} images to {}", written.len(), dir.display());
    Ok(written)
}

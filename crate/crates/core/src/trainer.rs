//! AdamW training loop over paired RF lines.

use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{from_polar, to_polar, ComplexSpectrogram, MagPhaseTensor, Stft, StftConfig};
use crate::error::{Error, Result};
use crate::loss_schedule::{
    composite_loss, composite_on_tape, loss_terms, CurriculumConfig, CurriculumState, LossTerms, LossWeights,
    WeightRecord,
};
use crate::model::{save_checkpoint, stack_polar, Model, ModelParams, Tape};
use crate::rfsim::{PairedDataset, RfLine, RfPair, Split};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Write a checkpoint every this many epochs (0 disables periodic saves;
    /// the final checkpoint is always written when a directory is given).
    pub checkpoint_every: usize,
    #[serde(default)]
    pub curriculum: CurriculumConfig,
    /// Use at most this many training pairs per epoch (drawn after shuffling).
    #[serde(default)]
    pub max_pairs_per_epoch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
            clip_norm: 1.0,
            epochs: 10,
            batch_size: 8,
            seed: 0,
            checkpoint_every: 1,
            curriculum: CurriculumConfig::default(),
            max_pairs_per_epoch: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("train: {m}")));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip_norm must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if !(self.eps > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("eps must be positive and weight_decay non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.max_pairs_per_epoch == Some(0) {
            return bad("max_pairs_per_epoch must be positive");
        }
        self.curriculum.validate()
    }
}

/// First and second moment estimates for every parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<S> {
    pub step: u64,
    pub m: Vec<Array2<S>>,
    pub v: Vec<Array2<S>>,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(params: &ModelParams<S>) -> Self {
        let zeros = || params.tensors.iter().map(|p| Array2::zeros(p.tensor.value.dim())).collect();
        Self {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

/// One AdamW update from the accumulated gradients. Weight decay scales the
/// parameter directly and never enters the moment estimates.
pub fn optimizer_step<S: Scalar>(params: &mut ModelParams<S>, state: &mut AdamState<S>, cfg: &TrainConfig) -> Result<()> {
    if let Some(p) = params.tensors.iter().find(|p| p.tensor.grad.iter().any(|g| !g.is_finite())) {
        return Err(Error::NonFinite(format!("gradient of {}", p.name)));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (S::of(cfg.beta1), S::of(cfg.beta2));
    let bc1 = S::one() - b1.powi(t);
    let bc2 = S::one() - b2.powi(t);
    let lr = S::of(cfg.lr);
    let eps = S::of(cfg.eps);
    let shrink = S::one() - S::of(cfg.lr * cfg.weight_decay);
    for ((p, m), v) in params.tensors.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        ndarray::Zip::from(&mut p.tensor.value)
            .and(&p.tensor.grad)
            .and(m)
            .and(v)
            .for_each(|w, &g, m, v| {
                *m = b1 * *m + (S::one() - b1) * g;
                *v = b2 * *v + (S::one() - b2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w = *w * shrink - lr * m_hat / (v_hat.sqrt() + eps);
            });
    }
    Ok(())
}

pub fn global_grad_norm<S: Scalar>(params: &ModelParams<S>) -> f64 {
    params
        .tensors
        .iter()
        .flat_map(|p| p.tensor.grad.iter())
        .map(|g| g.f64() * g.f64())
        .sum::<f64>()
        .sqrt()
}

/// Rescales all gradients so their joint L2 norm is at most `clip_norm`.
/// Returns the norms before and after. The scale is shaded by a few ulps of
/// `S` so rounding in the product cannot push the result above the bound.
pub fn clip_global_norm<S: Scalar>(params: &mut ModelParams<S>, clip_norm: f64) -> (f64, f64) {
    let before = global_grad_norm(params);
    if before > clip_norm {
        let margin = 1.0 - 4.0 * S::epsilon().f64();
        let scale = S::of(clip_norm / before * margin);
        for p in &mut params.tensors {
            p.tensor.grad.mapv_inplace(|g| g * scale);
        }
        (before, global_grad_norm(params))
    } else {
        (before, before)
    }
}

/// Moves RF lines to polar spectrograms and back.
#[derive(Debug, Clone)]
pub struct SpectralCodec<S: Scalar> {
    stft: Stft<S>,
    fs: f64,
}

impl<S: Scalar> SpectralCodec<S> {
    pub fn new(config: StftConfig, fs: f64) -> Result<Self> {
        Ok(Self {
            stft: Stft::new(config)?,
            fs,
        })
    }

    pub fn encode(&self, line: &[f64]) -> Result<MagPhaseTensor<S>> {
        let x: Vec<S> = line.iter().map(|&v| S::of(v)).collect();
        Ok(to_polar(&self.stft.forward(&x, self.fs)?.data))
    }

    pub fn decode(&self, x: &MagPhaseTensor<S>, len: usize) -> Result<Vec<f64>> {
        let spec = ComplexSpectrogram {
            data: from_polar(x),
            config: *self.stft.config(),
            fs: self.fs,
            signal_len: len,
        };
        Ok(self.stft.inverse(&spec)?.into_iter().map(|v| v.f64()).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub step: u64,
    pub norm_before: f64,
    pub norm_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: LossTerms,
    /// Mean composite loss under the weights in force during the epoch.
    pub train_composite: f64,
    pub weights_used: LossWeights,
    pub val: Option<LossTerms>,
    pub val_composite: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub weights: Vec<WeightRecord>,
    pub clips: Vec<ClipRecord>,
    /// Validation terms of the returned model (computed even for 0 epochs).
    pub final_val: Option<LossTerms>,
    pub curriculum: CurriculumState,
    pub wall_clock_seconds: f64,
}

/// Where and how often to write checkpoints.
#[derive(Debug, Clone, Default)]
pub struct CheckpointSink {
    pub path: Option<PathBuf>,
    pub extra: serde_json::Value,
}

/// Inputs and targets of one batch.
type PolarBatch<S> = (Vec<MagPhaseTensor<S>>, Vec<MagPhaseTensor<S>>);

fn polar_batch<S: Scalar>(codec: &SpectralCodec<S>, ds: &PairedDataset, idx: &[usize]) -> Result<PolarBatch<S>> {
    let mut x = Vec::with_capacity(idx.len());
    let mut y = Vec::with_capacity(idx.len());
    for &i in idx {
        x.push(codec.encode(&ds.pairs[i].low.samples)?);
        y.push(codec.encode(&ds.pairs[i].high.samples)?);
    }
    Ok((x, y))
}

/// Mean loss terms of `model` over the pairs `idx`, without touching it.
pub fn evaluate_terms<S: Scalar>(
    model: &Model<S>,
    codec: &SpectralCodec<S>,
    ds: &PairedDataset,
    idx: &[usize],
    batch_size: usize,
    circular_phase: bool,
) -> Result<Option<LossTerms>> {
    if idx.is_empty() {
        return Ok(None);
    }
    let mut acc = [0.0; 3];
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, y) = polar_batch(codec, ds, chunk)?;
        let pred = model.predict(&x)?;
        for (p, t) in pred.iter().zip(&y) {
            let terms = loss_terms(p, t, circular_phase)?.as_array();
            for k in 0..3 {
                acc[k] += terms[k];
            }
        }
    }
    let n = idx.len() as f64;
    Ok(Some(LossTerms {
        l_mag: acc[0] / n,
        l_phase: acc[1] / n,
        l_cplx: acc[2] / n,
    }))
}

fn checkpoint_extra(sink: &CheckpointSink, epoch: usize, state: &CurriculumState, train: &TrainConfig) -> serde_json::Value {
    serde_json::json!({
        "epoch": epoch,
        "curriculum": state,
        "train": train,
        "run": sink.extra,
    })
}

/// Trains `model` in place on the training split of `ds`.
pub fn train<S: Scalar>(
    model: &mut Model<S>,
    ds: &PairedDataset,
    stft: StftConfig,
    cfg: &TrainConfig,
    sink: &CheckpointSink,
) -> Result<TrainReport> {
    cfg.validate()?;
    ds.check_consistent()?;
    let started = Instant::now();
    let (frames, bins) = stft.shape(ds.line_len)?;
    if (frames, bins) != (model.config().frames, model.config().bins) {
        return Err(Error::Config(format!(
            "model expects {}x{} spectrograms but the data gives {frames}x{bins}",
            model.config().frames,
            model.config().bins
        )));
    }
    let train_idx = ds.indices(Split::Train);
    if cfg.epochs > 0 && train_idx.is_empty() {
        return Err(Error::Data("dataset has no training pairs".into()));
    }
    let val_idx = ds.indices(Split::Val);
    let codec = SpectralCodec::<S>::new(stft, ds.fs)?;
    let circular = cfg.curriculum.circular_phase;
    let mut state = CurriculumState::new(cfg.curriculum)?;
    let mut adam = AdamState::new(&model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = TrainReport {
        epochs: Vec::new(),
        weights: Vec::new(),
        clips: Vec::new(),
        final_val: None,
        curriculum: state.clone(),
        wall_clock_seconds: 0.0,
    };
    model.params.zero_grad();

    for epoch in 0..cfg.epochs {
        let t0 = Instant::now();
        let weights = state.weights;
        let mut order = train_idx.clone();
        order.shuffle(&mut rng);
        if let Some(cap) = cfg.max_pairs_per_epoch {
            order.truncate(cap);
        }
        let mut sums = [0.0; 4];
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let (x, y) = polar_batch(&codec, ds, chunk)?;
            let target = stack_polar(&y)?;
            let mut tape = Tape::new();
            let pass = model.forward_train(&mut tape, &x)?;
            let (loss, terms) = composite_on_tape(&mut tape, pass.pred, target, &weights, circular)?;
            let value = tape.scalar(loss).f64();
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("training loss at epoch {epoch}, batch {batches}")));
            }
            model.backward(&tape, loss)?;
            let (before, after) = clip_global_norm(&mut model.params, cfg.clip_norm);
            optimizer_step(&mut model.params, &mut adam, cfg)?;
            model.params.zero_grad();
            if !model.params.all_finite() {
                return Err(Error::NonFinite(format!("parameters after step {}", adam.step)));
            }
            report.clips.push(ClipRecord {
                step: adam.step,
                norm_before: before,
                norm_after: after,
            });
            for (k, node) in terms.iter().enumerate() {
                sums[k] += tape.scalar(*node).f64();
            }
            sums[3] += value;
            batches += 1;
        }
        let nb = batches as f64;
        let train_terms = LossTerms {
            l_mag: sums[0] / nb,
            l_phase: sums[1] / nb,
            l_cplx: sums[2] / nb,
        };
        state.update_weights(train_terms.l_mag, train_terms.l_phase)?;
        report.weights.push(state.record());
        let val = evaluate_terms(model, &codec, ds, &val_idx, cfg.batch_size, circular)?;
        let val_composite = val.map(|v| composite_loss(&v, &weights)).transpose()?;
        let rec = EpochRecord {
            epoch,
            train: train_terms,
            train_composite: sums[3] / nb,
            weights_used: weights,
            val,
            val_composite,
            seconds: t0.elapsed().as_secs_f64(),
        };
        info!(
            "epoch {epoch}: loss {:.6} (mag {:.6}, phase {:.6}, cplx {:.6}) weights ({:.3}, {:.3}, {:.3}) in {:.1}s",
            rec.train_composite,
            train_terms.l_mag,
            train_terms.l_phase,
            train_terms.l_cplx,
            weights.mag,
            weights.phase,
            weights.cplx,
            rec.seconds
        );
        report.epochs.push(rec);
        if let Some(path) = &sink.path {
            if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
                save_checkpoint(path, model, &checkpoint_extra(sink, epoch + 1, &state, cfg))?;
            }
        }
    }
    if let Some(path) = &sink.path {
        save_checkpoint(path, model, &checkpoint_extra(sink, cfg.epochs, &state, cfg))?;
    }
    report.final_val = evaluate_terms(model, &codec, ds, &val_idx, cfg.batch_size, circular)?;
    report.curriculum = state;
    report.wall_clock_seconds = started.elapsed().as_secs_f64();
    Ok(report)
}

/// Predicted wide-band RF for each low-band input line.
pub fn predict_lines<S: Scalar>(model: &Model<S>, codec: &SpectralCodec<S>, lines: &[&[f64]], batch_size: usize) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(lines.len());
    for chunk in lines.chunks(batch_size.max(1)) {
        let x = chunk.iter().map(|l| codec.encode(l)).collect::<Result<Vec<_>>>()?;
        for (p, l) in model.predict(&x)?.iter().zip(chunk) {
            out.push(codec.decode(p, l.len())?);
        }
    }
    Ok(out)
}

/// Copy of `ds` whose high band holds the prediction made from each low-band
/// line; pairs, phantoms and splits stay aligned one to one.
pub fn predict_dataset<S: Scalar>(model: &Model<S>, codec: &SpectralCodec<S>, ds: &PairedDataset, batch_size: usize) -> Result<PairedDataset> {
    let lows: Vec<&[f64]> = ds.pairs.iter().map(|p| p.low.samples.as_slice()).collect();
    let preds = predict_lines(model, codec, &lows, batch_size)?;
    let pairs = ds
        .pairs
        .iter()
        .zip(preds)
        .map(|(p, samples)| RfPair {
            low: p.low.clone(),
            high: RfLine {
                samples,
                fs: p.high.fs,
                meta: p.high.meta,
            },
            split: p.split,
        })
        .collect();
    Ok(PairedDataset {
        fs: ds.fs,
        fc: ds.fc,
        line_len: ds.line_len,
        pairs,
        phantoms: ds.phantoms.clone(),
        pulses: ds.pulses.clone(),
    })
}

pub fn write_train_log(path: &Path, report: &TrainReport) -> Result<()> {
    #[derive(Serialize)]
    struct Row {
        epoch: usize,
        l_mag: f64,
        l_phase: f64,
        l_cplx: f64,
        composite: f64,
        val_mag: Option<f64>,
        val_phase: Option<f64>,
        val_cplx: Option<f64>,
        lambda_mag: f64,
        lambda_phase: f64,
        lambda_cplx: f64,
        ema_mag: f64,
        ema_phase: f64,
        seconds: f64,
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for (e, wr) in report.epochs.iter().zip(&report.weights) {
        w.serialize(Row {
            epoch: e.epoch,
            l_mag: e.train.l_mag,
            l_phase: e.train.l_phase,
            l_cplx: e.train.l_cplx,
            composite: e.train_composite,
            val_mag: e.val.map(|v| v.l_mag),
            val_phase: e.val.map(|v| v.l_phase),
            val_cplx: e.val.map(|v| v.l_cplx),
            lambda_mag: wr.lambda_mag,
            lambda_phase: wr.lambda_phase,
            lambda_cplx: wr.lambda_cplx,
            ema_mag: wr.ema_mag,
            ema_phase: wr.ema_phase,
            seconds: e.seconds,
        })?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    crate::io::atomic_write(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{load_checkpoint, ModelConfig, NamedParam, NormStats};
    use crate::model::DiffTensor;
    use crate::rfsim::{generate_dataset, PhantomGeometry, PhantomGroup, PhantomKind, ProbeSpec, PulseEchoModel, ScanConfig, SOUND_SPEED};
    use rand::Rng;

    fn single(value: f64) -> ModelParams<f64> {
        ModelParams {
            tensors: vec![NamedParam {
                name: "w".into(),
                tensor: DiffTensor::new(Array2::from_elem((1, 1), value)),
            }],
            norm_stats: NormStats::default(),
        }
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut p = ModelParams::<f64>::init(&ModelConfig::desk().with_grid(8, 8), 0).unwrap();
        let before = p.clone();
        let mut s = AdamState::new(&p);
        let cfg = TrainConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        for _ in 0..3 {
            optimizer_step(&mut p, &mut s, &cfg).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn zero_gradient_with_decay_shrinks_exactly() {
        let mut p = ModelParams::<f32>::init(&ModelConfig::desk().with_grid(8, 8), 0).unwrap();
        let mut s = AdamState::new(&p);
        let cfg = TrainConfig {
            lr: 1e-2,
            weight_decay: 0.5,
            ..Default::default()
        };
        let factor = 1.0f32 - (1e-2f64 * 0.5) as f32;
        for _ in 0..5 {
            let expect: Vec<_> = p.tensors.iter().map(|t| t.tensor.value.mapv(|v| v * factor)).collect();
            optimizer_step(&mut p, &mut s, &cfg).unwrap();
            for (t, e) in p.tensors.iter().zip(&expect) {
                assert_eq!(&t.tensor.value, e);
            }
        }
    }

    #[test]
    fn quadratic_matches_hand_stepped_oracle() {
        // f(w) = (w - 3)^2
        let cfg = TrainConfig {
            lr: 0.1,
            weight_decay: 0.01,
            ..Default::default()
        };
        let mut p = single(0.5);
        let mut s = AdamState::new(&p);
        let (mut w, mut m, mut v) = (0.5f64, 0.0f64, 0.0f64);
        for t in 1..=10 {
            let g = 2.0 * (p.tensors[0].tensor.value[[0, 0]] - 3.0);
            p.tensors[0].tensor.grad[[0, 0]] = g;
            optimizer_step(&mut p, &mut s, &cfg).unwrap();

            let g = 2.0 * (w - 3.0);
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            w = w - 0.1 * mh / (vh.sqrt() + 1e-8) - 0.1 * 0.01 * w;
            assert!((p.tensors[0].tensor.value[[0, 0]] - w).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = single(1.0);
        p.tensors[0].tensor.grad[[0, 0]] = f64::NAN;
        let mut s = AdamState::new(&p);
        assert!(matches!(optimizer_step(&mut p, &mut s, &TrainConfig::default()), Err(Error::NonFinite(_))));
    }

    #[test]
    fn clipping_cases() {
        let mut p = ModelParams::<f64>::init(&ModelConfig::desk().with_grid(8, 8), 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for t in &mut p.tensors {
            t.tensor.grad.mapv_inplace(|_| rng.gen_range(-1.0..1.0));
        }
        let g = global_grad_norm(&p);
        let orig = p.clone();
        assert_eq!(clip_global_norm(&mut p, 2.0 * g), (g, g));
        assert_eq!(p, orig);
        let (_, after) = clip_global_norm(&mut p, g / 2.0);
        assert!((after - g / 2.0).abs() < 1e-9);
        for (a, b) in p.tensors.iter().zip(&orig.tensors) {
            for (x, y) in a.tensor.grad.iter().zip(b.tensor.grad.iter()) {
                assert!((x - y / 2.0).abs() < 1e-15);
            }
        }
        for clip in [0.1, 1.0, 1e3] {
            let mut q = orig.clone();
            let (before, after) = clip_global_norm(&mut q, clip);
            assert!((after - before.min(clip)).abs() < 1e-9);
            assert!(after <= clip + 1e-12);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p32 = ModelParams::<f32>::init(&ModelConfig::desk().with_grid(8, 8), 0).unwrap();
        for _ in 0..20 {
            for t in &mut p32.tensors {
                t.tensor.grad.mapv_inplace(|_| rng.gen_range(-1.0..1.0));
            }
            let clip = rng.gen_range(1e-3..1.0);
            let (_, after) = clip_global_norm(&mut p32, clip);
            assert!(after <= clip, "{after} > {clip}");
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        for cfg in [
            TrainConfig { lr: 0.0, ..Default::default() },
            TrainConfig { clip_norm: 0.0, ..Default::default() },
            TrainConfig { beta1: 1.0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
        ] {
            assert!(cfg.validate().is_err());
        }
    }

    fn tiny_data() -> (PairedDataset, ModelConfig, StftConfig) {
        let pe = PulseEchoModel::standard(ProbeSpec::default()).unwrap();
        let scan = ScanConfig {
            n_lines: 3,
            line_len: 256,
            ..Default::default()
        };
        let geom = PhantomGeometry::for_line(scan.line_len, pe.probe.fs, SOUND_SPEED, scan.width());
        let groups = [
            PhantomGroup {
                kind: PhantomKind::SpeckleCyst,
                count: 2,
                n_scatterers: 200,
                split: Split::Train,
            },
            PhantomGroup {
                kind: PhantomKind::SpeckleCyst,
                count: 1,
                n_scatterers: 200,
                split: Split::Val,
            },
        ];
        let ds = generate_dataset(&pe, &scan, &geom, &groups, 5).unwrap();
        let stft = StftConfig::default();
        let (t, f) = stft.shape(256).unwrap();
        let cfg = ModelConfig {
            dim: 16,
            heads: 2,
            enc_layers: 1,
            dec_layers: 1,
            ..ModelConfig::desk()
        }
        .with_grid(t, f);
        (ds, cfg, stft)
    }

    #[test]
    fn seeded_runs_are_bit_identical_and_logged() {
        let (ds, mcfg, stft) = tiny_data();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            lr: 1e-3,
            ..Default::default()
        };
        let run = || {
            let mut m = Model::<f32>::new(mcfg.clone(), 9).unwrap();
            let r = train(&mut m, &ds, stft, &cfg, &CheckpointSink::default()).unwrap();
            (m, r)
        };
        let (a, ra) = run();
        let (b, rb) = run();
        assert_eq!(a, b);
        assert_eq!(ra.epochs.len(), 2);
        assert_eq!(ra.weights.len(), 2);
        assert_eq!(ra.epochs[0].weights_used, LossWeights::new(0.5, 0.5, 0.0));
        assert_eq!(ra.clips.len(), 2 * 2);
        assert!(ra.clips.iter().all(|c| c.norm_after <= cfg.clip_norm + 1e-9));
        assert!(ra.final_val.is_some());
        assert_eq!(ra.epochs.iter().map(|e| e.train_composite).collect::<Vec<_>>(), rb.epochs.iter().map(|e| e.train_composite).collect::<Vec<_>>());
        assert!(a != Model::<f32>::new(mcfg, 9).unwrap());
    }

    #[test]
    fn zero_epochs_leave_initialization_and_still_validate() {
        let (ds, mcfg, stft) = tiny_data();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.rfck");
        let mut m = Model::<f32>::new(mcfg.clone(), 2).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        let sink = CheckpointSink {
            path: Some(path.clone()),
            extra: serde_json::Value::Null,
        };
        let r = train(&mut m, &ds, stft, &cfg, &sink).unwrap();
        assert!(r.epochs.is_empty());
        let back = load_checkpoint::<f32>(&path).unwrap();
        assert_eq!(back.model, Model::<f32>::new(mcfg, 2).unwrap());
        let codec = SpectralCodec::new(stft, ds.fs).unwrap();
        let again = evaluate_terms(&back.model, &codec, &ds, &ds.indices(Split::Val), 8, false).unwrap();
        assert_eq!(again, r.final_val);
    }

    #[test]
    fn numeric_abort_keeps_last_good_checkpoint() {
        let (ds, mcfg, stft) = tiny_data();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.rfck");
        let sink = CheckpointSink {
            path: Some(path.clone()),
            extra: serde_json::Value::Null,
        };
        let mut m = Model::<f32>::new(mcfg, 2).unwrap();
        let good = TrainConfig {
            epochs: 1,
            ..Default::default()
        };
        train(&mut m, &ds, stft, &good, &sink).unwrap();
        let saved = std::fs::read(&path).unwrap();
        let wild = TrainConfig {
            epochs: 3,
            lr: 1e38,
            clip_norm: 1e30,
            ..Default::default()
        };
        let err = train(&mut m, &ds, stft, &wild, &sink).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)), "{err}");
        assert_eq!(std::fs::read(&path).unwrap(), saved);
    }

    #[test]
    fn mismatched_model_grid_is_a_config_error() {
        let (ds, mcfg, stft) = tiny_data();
        let mut m = Model::<f32>::new(mcfg.with_grid(5, 5), 0).unwrap();
        let r = train(&mut m, &ds, stft, &TrainConfig::default(), &CheckpointSink::default());
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn codec_round_trip() {
        let codec = SpectralCodec::<f64>::new(StftConfig::default(), 20e6).unwrap();
        let line: Vec<f64> = (0..512).map(|i| ((i * 37 % 101) as f64 - 50.0) / 50.0).collect();
        let back = codec.decode(&codec.encode(&line).unwrap(), 512).unwrap();
        let err = line.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-10);
    }
}

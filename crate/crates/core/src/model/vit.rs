use ndarray::{s, Array2};

use super::config::ModelConfig;
use super::params::{BlockIdx, Layout, ModelParams, NormStats};
use super::patch::{PatchGeometry, CHANNELS};
use super::posenc::positional_encoding;
use super::tape::{NodeId, Tape};
use crate::dsp::MagPhaseTensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Two-channel transformer encoder-decoder over polar spectrograms.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<S> {
    config: ModelConfig,
    pub params: ModelParams<S>,
    layout: Layout,
    pos: Array2<S>,
}

/// Handle to a forward pass recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForwardPass {
    /// `2 x (B*T*F)` prediction: magnitude row, phase row.
    pub pred: NodeId,
    pub geometry: PatchGeometry,
}

/// Stacks polar tensors into the `2 x (B*T*F)` pixel layout.
pub fn stack_polar<S: Scalar>(items: &[MagPhaseTensor<S>]) -> Result<Array2<S>> {
    let Some(first) = items.first() else {
        return Err(Error::Data("empty batch".into()));
    };
    let dim = first.dim();
    let per = dim.0 * dim.1;
    let mut out = Array2::zeros((CHANNELS, per * items.len()));
    for (b, x) in items.iter().enumerate() {
        if x.dim() != dim {
            return Err(Error::shape(format!("{dim:?}"), format!("{:?}", x.dim())));
        }
        let cols = b * per..(b + 1) * per;
        for (c, src) in [&x.mag, &x.phase].into_iter().enumerate() {
            for (dst, &v) in out.slice_mut(s![c, cols.clone()]).iter_mut().zip(src.iter()) {
                *dst = v;
            }
        }
    }
    Ok(out)
}

/// Inverse of [`stack_polar`].
pub fn unstack_polar<S: Scalar>(pixels: &Array2<S>, frames: usize, bins: usize) -> Result<Vec<MagPhaseTensor<S>>> {
    let per = frames * bins;
    if pixels.nrows() != CHANNELS || per == 0 || !pixels.ncols().is_multiple_of(per) {
        return Err(Error::shape(format!("(2, k*{per})"), format!("{:?}", pixels.dim())));
    }
    (0..pixels.ncols() / per)
        .map(|b| {
            let grab = |c: usize| {
                Array2::from_shape_vec((frames, bins), pixels.slice(s![c, b * per..(b + 1) * per]).to_vec())
                    .expect("slice length equals frames*bins")
            };
            MagPhaseTensor::new(grab(0), grab(1))
        })
        .collect()
}

fn batch_moments<S: Scalar>(x: &Array2<S>) -> (Vec<S>, Vec<S>) {
    let n = S::of_usize(x.ncols());
    x.rows()
        .into_iter()
        .map(|r| {
            let m = r.sum() / n;
            (m, r.iter().map(|&v| (v - m) * (v - m)).sum::<S>() / n)
        })
        .unzip()
}

/// Pre-activation that the output head maps back onto the input: inverse
/// softplus of the magnitude (floored), the phase unchanged.
fn residual_base<S: Scalar>(pixels: &Array2<S>) -> Array2<S> {
    let floor = S::of(1e-6);
    let mut out = pixels.clone();
    out.row_mut(0).mapv_inplace(|r| {
        let r = r.max(floor);
        if r > S::of(30.0) {
            r
        } else {
            r.exp_m1().ln()
        }
    });
    out
}

fn check_finite<S: Scalar>(tape: &Tape<S>, node: NodeId, layer: &str) -> Result<()> {
    if tape.value(node).iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("activations after {layer}")))
    }
}

impl<S: Scalar> Model<S> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = ModelParams::init(&config, seed)?;
        Self::from_params(config, params)
    }

    pub fn from_params(config: ModelConfig, params: ModelParams<S>) -> Result<Self> {
        params.check(&config)?;
        if !params.all_finite() {
            return Err(Error::NonFinite("model parameters".into()));
        }
        let layout = ModelParams::<S>::layout(&config);
        let pos = positional_encoding(config.token_grid(), config.dim);
        Ok(Self {
            config,
            params,
            layout,
            pos,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Replaces the positional table (tests use a zero table to probe
    /// permutation symmetry).
    pub fn set_positional_table(&mut self, pos: Array2<S>) -> Result<()> {
        if pos.dim() != self.pos.dim() {
            return Err(Error::shape(format!("{:?}", self.pos.dim()), format!("{:?}", pos.dim())));
        }
        self.pos = pos;
        Ok(())
    }

    pub fn positional_table(&self) -> &Array2<S> {
        &self.pos
    }

    /// Training-mode forward: normalizes with batch statistics and folds them
    /// into the running statistics.
    pub fn forward_train(&mut self, tape: &mut Tape<S>, inputs: &[MagPhaseTensor<S>]) -> Result<ForwardPass> {
        let x = self.input_pixels(inputs)?;
        let (mean, var) = batch_moments(&x);
        let n = x.ncols();
        let pass = self.build(tape, x, None)?;
        let m = S::of(self.config.norm_momentum);
        let unbias = if n > 1 { S::of_usize(n) / S::of_usize(n - 1) } else { S::one() };
        let NormStats { mean: rm, var: rv } = &mut self.params.norm_stats;
        for c in 0..CHANNELS {
            rm[c] = (S::one() - m) * rm[c] + m * mean[c];
            rv[c] = (S::one() - m) * rv[c] + m * var[c] * unbias;
        }
        Ok(pass)
    }

    /// Inference-mode forward using the running statistics.
    pub fn forward_eval(&self, tape: &mut Tape<S>, inputs: &[MagPhaseTensor<S>]) -> Result<ForwardPass> {
        let x = self.input_pixels(inputs)?;
        let stats = &self.params.norm_stats;
        self.build(tape, x, Some((&stats.mean, &stats.var)))
    }

    /// Inference on a batch, returning one prediction per input.
    pub fn predict(&self, inputs: &[MagPhaseTensor<S>]) -> Result<Vec<MagPhaseTensor<S>>> {
        let mut tape = Tape::new();
        let pass = self.forward_eval(&mut tape, inputs)?;
        unstack_polar(tape.value(pass.pred), self.config.frames, self.config.bins)
    }

    /// Back-propagates `loss` and adds the parameter gradients to the
    /// accumulated ones.
    pub fn backward(&mut self, tape: &Tape<S>, loss: NodeId) -> Result<()> {
        let grads = tape.backward(loss)?;
        for (p, g) in grads.params() {
            self.params.tensors[p].tensor.accumulate(g)?;
        }
        Ok(())
    }

    fn input_pixels(&self, inputs: &[MagPhaseTensor<S>]) -> Result<Array2<S>> {
        let want = (self.config.frames, self.config.bins);
        if let Some(x) = inputs.iter().find(|x| x.dim() != want) {
            return Err(Error::shape(format!("{want:?}"), format!("{:?}", x.dim())));
        }
        let x = stack_polar(inputs)?;
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("model input".into()));
        }
        Ok(x)
    }

    fn p(&self, tape: &mut Tape<S>, idx: usize) -> NodeId {
        tape.param(idx, &self.params.tensors[idx].tensor.value)
    }

    fn pp(&self, tape: &mut Tape<S>, idx: (usize, usize)) -> (NodeId, NodeId) {
        (self.p(tape, idx.0), self.p(tape, idx.1))
    }

    fn linear(&self, tape: &mut Tape<S>, x: NodeId, idx: (usize, usize)) -> NodeId {
        let (w, b) = self.pp(tape, idx);
        tape.linear(x, w, b)
    }

    fn layer_norm(&self, tape: &mut Tape<S>, x: NodeId, idx: (usize, usize)) -> NodeId {
        let (g, b) = self.pp(tape, idx);
        tape.layer_norm(x, g, b)
    }

    fn block(&self, tape: &mut Tape<S>, x: NodeId, blk: &BlockIdx, seq: usize) -> Result<NodeId> {
        let h = self.layer_norm(tape, x, blk.ln1);
        let q = self.linear(tape, h, blk.wq);
        let k = self.linear(tape, h, blk.wk);
        let v = self.linear(tape, h, blk.wv);
        let a = tape.attention(q, k, v, seq, self.config.heads)?;
        let o = self.linear(tape, a, blk.wo);
        let x = tape.add(x, o);
        let h = self.layer_norm(tape, x, blk.ln2);
        let h = self.linear(tape, h, blk.fc1);
        let h = tape.gelu(h);
        let h = self.linear(tape, h, blk.fc2);
        Ok(tape.add(x, h))
    }

    fn build(&self, tape: &mut Tape<S>, pixels: Array2<S>, stats: Option<(&[S], &[S])>) -> Result<ForwardPass> {
        let cfg = &self.config;
        let batch = pixels.ncols() / (cfg.frames * cfg.bins);
        let geometry = cfg.geometry(batch)?;
        let n_tok = geometry.patches_per_sample();
        let skip = cfg.input_residual.then(|| residual_base(&pixels));

        let x = tape.constant(pixels);
        let (g, b) = self.pp(tape, self.layout.input_norm);
        let x = tape.channel_norm(x, g, b, stats);
        check_finite(tape, x, "input normalization")?;
        let x = tape.patchify(x, geometry)?;
        let mut x = self.linear(tape, x, self.layout.proj);
        if cfg.positional_encoding {
            let mut pe = Array2::zeros((batch * n_tok, cfg.dim));
            for bi in 0..batch {
                pe.slice_mut(s![bi * n_tok..(bi + 1) * n_tok, ..]).assign(&self.pos);
            }
            let pe = tape.constant(pe);
            x = tape.add(x, pe);
        }
        check_finite(tape, x, "patch projection")?;
        for (i, blk) in self.layout.encoder.iter().enumerate() {
            x = self.block(tape, x, blk, n_tok)?;
            check_finite(tape, x, &format!("encoder block {i}"))?;
        }
        x = self.layer_norm(tape, x, self.layout.enc_norm);
        for (i, blk) in self.layout.decoder.iter().enumerate() {
            x = self.block(tape, x, blk, n_tok)?;
            check_finite(tape, x, &format!("decoder block {i}"))?;
        }
        x = self.layer_norm(tape, x, self.layout.dec_norm);
        let x = self.linear(tape, x, self.layout.recon);
        check_finite(tape, x, "reconstruction head")?;
        let mut x = tape.fold(x, geometry)?;
        if let Some(skip) = skip {
            let skip = tape.constant(skip);
            x = tape.add(x, skip);
        }
        let pred = tape.polar_head(x)?;
        check_finite(tape, pred, "output head")?;
        Ok(ForwardPass { pred, geometry })
    }
}

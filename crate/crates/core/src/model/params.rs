use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::patch::CHANNELS;
use super::tape::DiffTensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const INIT_STD: f64 = 0.02;

/// Running per-channel statistics of the input normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats<S> {
    pub mean: Vec<S>,
    pub var: Vec<S>,
}

impl<S: Scalar> Default for NormStats<S> {
    fn default() -> Self {
        Self {
            mean: vec![S::zero(); CHANNELS],
            var: vec![S::one(); CHANNELS],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedParam<S> {
    pub name: String,
    pub tensor: DiffTensor<S>,
}

/// Indices of one transformer block's tensors in the parameter table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct BlockIdx {
    pub ln1: (usize, usize),
    pub wq: (usize, usize),
    pub wk: (usize, usize),
    pub wv: (usize, usize),
    pub wo: (usize, usize),
    pub ln2: (usize, usize),
    pub fc1: (usize, usize),
    pub fc2: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Layout {
    pub input_norm: (usize, usize),
    pub proj: (usize, usize),
    pub encoder: Vec<BlockIdx>,
    pub enc_norm: (usize, usize),
    pub decoder: Vec<BlockIdx>,
    pub dec_norm: (usize, usize),
    pub recon: (usize, usize),
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Zeros,
    Ones,
    Normal,
}

struct Builder {
    specs: Vec<TensorSpec>,
}

impl Builder {
    fn add(&mut self, name: String, shape: (usize, usize), init: Init) -> usize {
        self.specs.push((name, shape, init));
        self.specs.len() - 1
    }

    fn pair(&mut self, prefix: &str, a: (&str, (usize, usize), Init), b: (&str, (usize, usize), Init)) -> (usize, usize) {
        (
            self.add(format!("{prefix}.{}", a.0), a.1, a.2),
            self.add(format!("{prefix}.{}", b.0), b.1, b.2),
        )
    }

    fn norm(&mut self, prefix: &str, d: usize) -> (usize, usize) {
        self.pair(prefix, ("gamma", (1, d), Init::Ones), ("beta", (1, d), Init::Zeros))
    }

    fn linear(&mut self, prefix: &str, i: usize, o: usize) -> (usize, usize) {
        self.pair(prefix, ("weight", (i, o), Init::Normal), ("bias", (1, o), Init::Zeros))
    }

    fn block(&mut self, prefix: &str, d: usize, hidden: usize) -> BlockIdx {
        BlockIdx {
            ln1: self.norm(&format!("{prefix}.ln1"), d),
            wq: self.linear(&format!("{prefix}.attn.q"), d, d),
            wk: self.linear(&format!("{prefix}.attn.k"), d, d),
            wv: self.linear(&format!("{prefix}.attn.v"), d, d),
            wo: self.linear(&format!("{prefix}.attn.out"), d, d),
            ln2: self.norm(&format!("{prefix}.ln2"), d),
            fc1: self.linear(&format!("{prefix}.mlp.fc1"), d, hidden),
            fc2: self.linear(&format!("{prefix}.mlp.fc2"), hidden, d),
        }
    }
}

/// Name, shape and initializer of one parameter tensor.
type TensorSpec = (String, (usize, usize), Init);

fn plan(cfg: &ModelConfig) -> (Layout, Vec<TensorSpec>) {
    let (d, p, h) = (cfg.dim, cfg.patch_len(), cfg.hidden());
    let mut b = Builder { specs: Vec::new() };
    let input_norm = b.pair(
        "input_norm",
        ("gamma", (CHANNELS, 1), Init::Ones),
        ("beta", (CHANNELS, 1), Init::Zeros),
    );
    let proj = b.linear("proj", p, d);
    let encoder = (0..cfg.enc_layers).map(|i| b.block(&format!("encoder.{i}"), d, h)).collect();
    let enc_norm = b.norm("encoder.norm", d);
    let decoder = (0..cfg.dec_layers).map(|i| b.block(&format!("decoder.{i}"), d, h)).collect();
    let dec_norm = b.norm("decoder.norm", d);
    let recon = b.linear("recon", d, p);
    let layout = Layout {
        input_norm,
        proj,
        encoder,
        enc_norm,
        decoder,
        dec_norm,
        recon,
    };
    (layout, b.specs)
}

/// All trainable tensors plus the running input statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<S> {
    pub tensors: Vec<NamedParam<S>>,
    pub norm_stats: NormStats<S>,
}

fn truncated_normal<S: Scalar>(rng: &mut ChaCha8Rng, std: f64) -> S {
    loop {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= 2.0 {
            return S::of(z * std);
        }
    }
}

impl<S: Scalar> ModelParams<S> {
    /// Fresh initialization: truncated normal weights, zero biases, unit gains.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (_, specs) = plan(cfg);
        let tensors = specs
            .into_iter()
            .map(|(name, shape, init)| {
                let value = match init {
                    Init::Zeros => Array2::zeros(shape),
                    Init::Ones => Array2::ones(shape),
                    Init::Normal => Array2::from_shape_simple_fn(shape, || truncated_normal(&mut rng, INIT_STD)),
                };
                NamedParam {
                    name,
                    tensor: DiffTensor::new(value),
                }
            })
            .collect();
        Ok(Self {
            tensors,
            norm_stats: NormStats::default(),
        })
    }

    pub(crate) fn layout(cfg: &ModelConfig) -> Layout {
        plan(cfg).0
    }

    /// Checks names and shapes against what `cfg` requires.
    pub fn check(&self, cfg: &ModelConfig) -> Result<()> {
        cfg.validate()?;
        let (_, specs) = plan(cfg);
        if specs.len() != self.tensors.len() {
            return Err(Error::Config(format!(
                "parameter table has {} tensors, configuration needs {}",
                self.tensors.len(),
                specs.len()
            )));
        }
        for ((name, shape, _), p) in specs.iter().zip(&self.tensors) {
            if *name != p.name || *shape != p.tensor.value.dim() {
                return Err(Error::Config(format!(
                    "parameter {} {:?} does not match expected {name} {shape:?}",
                    p.name,
                    p.tensor.value.dim()
                )));
            }
        }
        if self.norm_stats.mean.len() != CHANNELS || self.norm_stats.var.len() != CHANNELS {
            return Err(Error::Config("normalization statistics need one entry per channel".into()));
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(|p| p.tensor.value.len()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&DiffTensor<S>> {
        self.tensors.iter().find(|p| p.name == name).map(|p| &p.tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut DiffTensor<S>> {
        self.tensors.iter_mut().find(|p| p.name == name).map(|p| &mut p.tensor)
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.tensors {
            p.tensor.zero_grad();
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|p| p.tensor.value.iter().all(|v| v.is_finite()))
            && self
                .norm_stats
                .mean
                .iter()
                .chain(&self.norm_stats.var)
                .all(|v| v.is_finite())
    }

    pub fn cast<T: Scalar>(&self) -> ModelParams<T> {
        let conv = |a: &Array2<S>| a.mapv(|v| T::of(v.f64()));
        ModelParams {
            tensors: self
                .tensors
                .iter()
                .map(|p| NamedParam {
                    name: p.name.clone(),
                    tensor: DiffTensor {
                        value: conv(&p.tensor.value),
                        grad: conv(&p.tensor.grad),
                    },
                })
                .collect(),
            norm_stats: NormStats {
                mean: self.norm_stats.mean.iter().map(|v| T::of(v.f64())).collect(),
                var: self.norm_stats.var.iter().map(|v| T::of(v.f64())).collect(),
            },
        }
    }
}

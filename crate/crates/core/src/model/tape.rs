//! Reverse-mode differentiation over coarse-grained matrix operations.
//!
//! Every value is a matrix; a forward pass appends nodes to a [`Tape`] and
//! [`Tape::backward`] walks them in reverse. Parameters enter as leaves tagged
//! with their index in the parameter table, and their gradients are handed
//! back through [`Gradients`].

use ndarray::{s, Array2, ArrayView2, Axis, Zip};

use super::patch::PatchGeometry;
use crate::dsp::wrap_phase;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub type NodeId = usize;

/// A value together with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffTensor<S> {
    pub value: Array2<S>,
    pub grad: Array2<S>,
}

impl<S: Scalar> DiffTensor<S> {
    pub fn new(value: Array2<S>) -> Self {
        let grad = Array2::zeros(value.dim());
        Self { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(S::zero());
    }

    pub fn accumulate(&mut self, g: &Array2<S>) -> Result<()> {
        if g.dim() != self.grad.dim() {
            return Err(Error::shape(format!("{:?}", self.grad.dim()), format!("{:?}", g.dim())));
        }
        self.grad += g;
        Ok(())
    }
}

/// Which polar loss a [`Op::PolarLoss`] node computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolarLossKind {
    Magnitude,
    Phase { circular: bool },
    Complex,
}

#[derive(Debug, Clone)]
enum Op<S> {
    Leaf {
        param: Option<usize>,
    },
    MatMul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Array2<S>,
        rstd: Vec<S>,
    },
    Gelu(NodeId),
    Attention {
        q: NodeId,
        k: NodeId,
        v: NodeId,
        seq: usize,
        heads: usize,
        probs: Vec<Array2<S>>,
    },
    ChannelNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Array2<S>,
        rstd: Vec<S>,
        batch_stats: bool,
    },
    Patchify {
        x: NodeId,
        geom: PatchGeometry,
    },
    Fold {
        x: NodeId,
        geom: PatchGeometry,
    },
    PolarHead(NodeId),
    PolarLoss {
        pred: NodeId,
        target: Array2<S>,
        kind: PolarLossKind,
    },
    WeightedSum(Vec<(NodeId, S)>),
}

#[derive(Debug, Clone)]
struct Node<S> {
    value: Array2<S>,
    op: Op<S>,
}

/// Recording of one forward computation.
#[derive(Debug, Clone, Default)]
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
}

/// Per-node gradients produced by one backward sweep.
#[derive(Debug, Clone)]
pub struct Gradients<S> {
    grads: Vec<Option<Array2<S>>>,
    params: Vec<(usize, NodeId)>,
}

impl<S: Scalar> Gradients<S> {
    pub fn of(&self, node: NodeId) -> Option<&Array2<S>> {
        self.grads.get(node).and_then(|g| g.as_ref())
    }

    /// `(parameter index, gradient)` for every parameter leaf reached.
    pub fn params(&self) -> impl Iterator<Item = (usize, &Array2<S>)> {
        self.params
            .iter()
            .filter_map(move |&(p, n)| self.grads[n].as_ref().map(|g| (p, g)))
    }
}

pub(crate) const NORM_EPS: f64 = 1e-5;

fn gelu_parts<S: Scalar>(x: S) -> (S, S) {
    // tanh approximation; returns (value, derivative)
    let c = S::of((2.0 / std::f64::consts::PI).sqrt());
    let a = S::of(0.044715);
    let inner = c * (x + a * x * x * x);
    let t = inner.tanh();
    let half = S::half();
    let value = half * x * (S::one() + t);
    let dinner = c * (S::one() + S::of(3.0) * a * x * x);
    let deriv = half * (S::one() + t) + half * x * (S::one() - t * t) * dinner;
    (value, deriv)
}

fn softplus<S: Scalar>(x: S) -> S {
    x.max(S::zero()) + (-x.abs()).exp().ln_1p()
}

fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

fn add_into<S: Scalar>(slot: &mut Option<Array2<S>>, g: Array2<S>) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Array2<S> {
        &self.nodes[id].value
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, id: NodeId) -> S {
        self.nodes[id].value[[0, 0]]
    }

    fn push(&mut self, value: Array2<S>, op: Op<S>) -> NodeId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn constant(&mut self, value: Array2<S>) -> NodeId {
        self.push(value, Op::Leaf { param: None })
    }

    pub fn param(&mut self, index: usize, value: &Array2<S>) -> NodeId {
        self.push(value.clone(), Op::Leaf { param: Some(index) })
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// Adds a `1 x n` row to every row of `x`.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> NodeId {
        let v = self.value(x) + self.value(bias);
        self.push(v, Op::AddBias(x, bias))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    /// `x W + b`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let h = self.matmul(x, w);
        self.add_bias(h, b)
    }

    /// Row-wise layer normalization with `1 x n` gain and shift.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> NodeId {
        let xv = self.value(x);
        let n = S::of_usize(xv.ncols());
        let eps = S::of(NORM_EPS);
        let mut xhat = xv.clone();
        let mut rstd = Vec::with_capacity(xv.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / n;
            let r = S::one() / (var + eps).sqrt();
            row.mapv_inplace(|v| (v - mean) * r);
            rstd.push(r);
        }
        let out = &(&xhat * self.value(gamma)) + self.value(beta);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
        )
    }

    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).mapv(|v| gelu_parts(v).0);
        self.push(v, Op::Gelu(x))
    }

    /// Multi-head scaled dot-product self-attention. Rows of `q`, `k`, `v`
    /// are tokens of consecutive sequences of length `seq`; columns split
    /// evenly into `heads` heads.
    pub fn attention(&mut self, q: NodeId, k: NodeId, v: NodeId, seq: usize, heads: usize) -> Result<NodeId> {
        let (rows, dim) = self.value(q).dim();
        if seq == 0 || rows % seq != 0 || heads == 0 || dim % heads != 0 {
            return Err(Error::shape(
                format!("rows divisible by {seq}, columns by {heads}"),
                format!("{rows}x{dim}"),
            ));
        }
        let dh = dim / heads;
        let scale = S::one() / S::of_usize(dh).sqrt();
        let mut out = Array2::zeros((rows, dim));
        let mut probs = Vec::with_capacity(rows / seq * heads);
        for b in 0..rows / seq {
            for h in 0..heads {
                let rs = b * seq..(b + 1) * seq;
                let cs = h * dh..(h + 1) * dh;
                let qb = self.value(q).slice(s![rs.clone(), cs.clone()]);
                let kb = self.value(k).slice(s![rs.clone(), cs.clone()]);
                let vb = self.value(v).slice(s![rs.clone(), cs.clone()]);
                let mut p = qb.dot(&kb.t());
                for mut row in p.rows_mut() {
                    let m = row.iter().fold(S::neg_infinity(), |a, &x| a.max(x * scale));
                    row.mapv_inplace(|x| (x * scale - m).exp());
                    let z = row.sum();
                    row.mapv_inplace(|x| x / z);
                }
                out.slice_mut(s![rs, cs]).assign(&p.dot(&vb));
                probs.push(p);
            }
        }
        Ok(self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                seq,
                heads,
                probs,
            },
        ))
    }

    /// Per-row (channel) normalization of a `C x M` matrix with `C x 1`
    /// affine parameters. With `stats = None` the statistics come from `x`
    /// itself and gradients flow through them; otherwise the given
    /// `(mean, var)` are treated as constants.
    pub fn channel_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, stats: Option<(&[S], &[S])>) -> NodeId {
        let xv = self.value(x);
        let eps = S::of(NORM_EPS);
        let n = S::of_usize(xv.ncols().max(1));
        let mut xhat = xv.clone();
        let mut rstd = Vec::with_capacity(xv.nrows());
        for (c, mut row) in xhat.rows_mut().into_iter().enumerate() {
            let (mean, var) = match stats {
                Some((m, v)) => (m[c], v[c]),
                None => {
                    let mean = row.sum() / n;
                    (mean, row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / n)
                }
            };
            let r = S::one() / (var + eps).sqrt();
            row.mapv_inplace(|v| (v - mean) * r);
            rstd.push(r);
        }
        let out = &(&xhat * self.value(gamma)) + self.value(beta);
        self.push(
            out,
            Op::ChannelNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
                batch_stats: stats.is_none(),
            },
        )
    }

    pub fn patchify(&mut self, x: NodeId, geom: PatchGeometry) -> Result<NodeId> {
        let v = geom.patchify(self.value(x).view())?;
        Ok(self.push(v, Op::Patchify { x, geom }))
    }

    pub fn fold(&mut self, x: NodeId, geom: PatchGeometry) -> Result<NodeId> {
        let v = geom.fold(self.value(x).view())?;
        Ok(self.push(v, Op::Fold { x, geom }))
    }

    /// Row 0 through softplus (magnitude), row 1 wrapped to `(-pi, pi]` (phase).
    pub fn polar_head(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.nrows() != 2 {
            return Err(Error::shape("2 channel rows", xv.nrows()));
        }
        let mut v = xv.clone();
        v.row_mut(0).mapv_inplace(softplus);
        v.row_mut(1).mapv_inplace(wrap_phase);
        Ok(self.push(v, Op::PolarHead(x)))
    }

    /// Mean polar loss of a `2 x M` (magnitude row, phase row) prediction.
    pub fn polar_loss(&mut self, pred: NodeId, target: Array2<S>, kind: PolarLossKind) -> Result<NodeId> {
        let pv = self.value(pred);
        if pv.dim() != target.dim() || pv.nrows() != 2 {
            return Err(Error::shape(format!("{:?}", pv.dim()), format!("{:?}", target.dim())));
        }
        let loss = polar_loss_value(pv.view(), target.view(), kind);
        Ok(self.push(Array2::from_elem((1, 1), loss), Op::PolarLoss { pred, target, kind }))
    }

    pub fn weighted_sum(&mut self, terms: &[(NodeId, S)]) -> NodeId {
        let total = terms
            .iter()
            .fold(S::zero(), |acc, &(id, w)| acc + w * self.scalar(id));
        self.push(Array2::from_elem((1, 1), total), Op::WeightedSum(terms.to_vec()))
    }

    /// Gradients of the scalar `root` with respect to every node.
    pub fn backward(&self, root: NodeId) -> Result<Gradients<S>> {
        if self.nodes.is_empty() {
            return Err(Error::BackwardWithoutForward);
        }
        if root >= self.nodes.len() || self.nodes[root].value.dim() != (1, 1) {
            return Err(Error::Data("backward root must be a scalar node on this tape".into()));
        }
        let mut grads: Vec<Option<Array2<S>>> = vec![None; self.nodes.len()];
        grads[root] = Some(Array2::from_elem((1, 1), S::one()));
        for id in (0..=root).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.backprop_node(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(id, n)| match n.op {
                Op::Leaf { param: Some(p) } => Some((p, id)),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads, params })
    }

    fn backprop_node(&self, id: NodeId, g: &Array2<S>, grads: &mut [Option<Array2<S>>]) {
        let val = |n: NodeId| &self.nodes[n].value;
        match &self.nodes[id].op {
            Op::Leaf { .. } => {}
            Op::MatMul(a, b) => {
                add_into(&mut grads[*a], g.dot(&val(*b).t()));
                add_into(&mut grads[*b], val(*a).t().dot(g));
            }
            Op::AddBias(x, b) => {
                add_into(&mut grads[*x], g.clone());
                add_into(&mut grads[*b], g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::Add(a, b) => {
                add_into(&mut grads[*a], g.clone());
                add_into(&mut grads[*b], g.clone());
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                add_into(&mut grads[*gamma], (g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                add_into(&mut grads[*beta], g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                let gx = g * val(*gamma);
                let n = S::of_usize(xhat.ncols());
                let mut dx = Array2::zeros(xhat.dim());
                for (r, ((mut out, gr), xr)) in dx
                    .rows_mut()
                    .into_iter()
                    .zip(gx.rows())
                    .zip(xhat.rows())
                    .enumerate()
                {
                    let mean_g = gr.sum() / n;
                    let mean_gx = gr.iter().zip(xr.iter()).map(|(&a, &b)| a * b).sum::<S>() / n;
                    Zip::from(&mut out).and(&gr).and(&xr).for_each(|o, &gi, &xi| {
                        *o = rstd[r] * (gi - mean_g - xi * mean_gx);
                    });
                }
                add_into(&mut grads[*x], dx);
            }
            Op::Gelu(x) => {
                let mut dx = val(*x).mapv(|v| gelu_parts(v).1);
                dx *= g;
                add_into(&mut grads[*x], dx);
            }
            Op::Attention {
                q,
                k,
                v,
                seq,
                heads,
                probs,
            } => {
                let (rows, dim) = val(*q).dim();
                let dh = dim / heads;
                let scale = S::one() / S::of_usize(dh).sqrt();
                let mut dq = Array2::zeros((rows, dim));
                let mut dk = Array2::zeros((rows, dim));
                let mut dv = Array2::zeros((rows, dim));
                for b in 0..rows / seq {
                    for h in 0..*heads {
                        let p = &probs[b * heads + h];
                        let rs = b * seq..(b + 1) * seq;
                        let cs = h * dh..(h + 1) * dh;
                        let qb = val(*q).slice(s![rs.clone(), cs.clone()]);
                        let kb = val(*k).slice(s![rs.clone(), cs.clone()]);
                        let vb = val(*v).slice(s![rs.clone(), cs.clone()]);
                        let gb = g.slice(s![rs.clone(), cs.clone()]);
                        dv.slice_mut(s![rs.clone(), cs.clone()]).assign(&p.t().dot(&gb));
                        let mut ds = gb.dot(&vb.t());
                        for (mut drow, prow) in ds.rows_mut().into_iter().zip(p.rows()) {
                            let dot = drow.iter().zip(prow.iter()).map(|(&a, &b)| a * b).sum::<S>();
                            Zip::from(&mut drow).and(&prow).for_each(|d, &pi| *d = pi * (*d - dot) * scale);
                        }
                        dq.slice_mut(s![rs.clone(), cs.clone()]).assign(&ds.dot(&kb));
                        dk.slice_mut(s![rs, cs]).assign(&ds.t().dot(&qb));
                    }
                }
                add_into(&mut grads[*q], dq);
                add_into(&mut grads[*k], dk);
                add_into(&mut grads[*v], dv);
            }
            Op::ChannelNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
                batch_stats,
            } => {
                add_into(&mut grads[*gamma], (g * xhat).sum_axis(Axis(1)).insert_axis(Axis(1)));
                add_into(&mut grads[*beta], g.sum_axis(Axis(1)).insert_axis(Axis(1)));
                let gx = g * val(*gamma);
                let n = S::of_usize(xhat.ncols().max(1));
                let mut dx = Array2::zeros(xhat.dim());
                for (c, ((mut out, gr), xr)) in dx
                    .rows_mut()
                    .into_iter()
                    .zip(gx.rows())
                    .zip(xhat.rows())
                    .enumerate()
                {
                    if *batch_stats {
                        let mean_g = gr.sum() / n;
                        let mean_gx = gr.iter().zip(xr.iter()).map(|(&a, &b)| a * b).sum::<S>() / n;
                        Zip::from(&mut out).and(&gr).and(&xr).for_each(|o, &gi, &xi| {
                            *o = rstd[c] * (gi - mean_g - xi * mean_gx);
                        });
                    } else {
                        Zip::from(&mut out).and(&gr).for_each(|o, &gi| *o = rstd[c] * gi);
                    }
                }
                add_into(&mut grads[*x], dx);
            }
            Op::Patchify { x, geom } => {
                let dx = geom.fold(g.view()).expect("patch gradient matches geometry");
                add_into(&mut grads[*x], dx);
            }
            Op::Fold { x, geom } => {
                let dx = geom.patchify(g.view()).expect("fold gradient matches geometry");
                add_into(&mut grads[*x], dx);
            }
            Op::PolarHead(x) => {
                let mut dx = g.clone();
                Zip::from(dx.row_mut(0))
                    .and(val(*x).row(0))
                    .for_each(|d, &xi| *d *= sigmoid(xi));
                add_into(&mut grads[*x], dx);
            }
            Op::PolarLoss { pred, target, kind } => {
                let scale = g[[0, 0]];
                let dx = polar_loss_grad(val(*pred).view(), target.view(), *kind).mapv(|v| v * scale);
                add_into(&mut grads[*pred], dx);
            }
            Op::WeightedSum(terms) => {
                for &(t, w) in terms {
                    add_into(&mut grads[t], g.mapv(|v| v * w));
                }
            }
        }
    }
}

pub fn polar_loss_value<S: Scalar>(pred: ArrayView2<S>, target: ArrayView2<S>, kind: PolarLossKind) -> S {
    let m = S::of_usize(pred.ncols().max(1));
    let (rp, tp) = (pred.row(0), pred.row(1));
    let (r, t) = (target.row(0), target.row(1));
    let mut acc = S::zero();
    match kind {
        PolarLossKind::Magnitude => {
            Zip::from(&rp).and(&r).for_each(|&a, &b| acc += (a - b) * (a - b));
        }
        PolarLossKind::Phase { circular } => {
            Zip::from(&tp).and(&t).for_each(|&a, &b| {
                let d = if circular { wrap_phase(a - b) } else { a - b };
                acc += d * d;
            });
        }
        PolarLossKind::Complex => {
            Zip::from(&rp).and(&tp).and(&r).and(&t).for_each(|&ra, &ta, &rb, &tb| {
                let dx = ra * ta.cos() - rb * tb.cos();
                let dy = ra * ta.sin() - rb * tb.sin();
                acc += dx * dx + dy * dy;
            });
        }
    }
    acc / m
}

fn polar_loss_grad<S: Scalar>(pred: ArrayView2<S>, target: ArrayView2<S>, kind: PolarLossKind) -> Array2<S> {
    let m = S::of_usize(pred.ncols().max(1));
    let two_over_m = S::two() / m;
    let mut g = Array2::zeros(pred.dim());
    match kind {
        PolarLossKind::Magnitude => {
            Zip::from(g.row_mut(0))
                .and(pred.row(0))
                .and(target.row(0))
                .for_each(|o, &a, &b| *o = two_over_m * (a - b));
        }
        PolarLossKind::Phase { circular } => {
            Zip::from(g.row_mut(1))
                .and(pred.row(1))
                .and(target.row(1))
                .for_each(|o, &a, &b| {
                    let d = if circular { wrap_phase(a - b) } else { a - b };
                    *o = two_over_m * d;
                });
        }
        PolarLossKind::Complex => {
            let (mut g_r, mut g_t) = g.multi_slice_mut((s![0, ..], s![1, ..]));
            Zip::from(&mut g_r)
                .and(&mut g_t)
                .and(pred.row(0))
                .and(pred.row(1))
                .and(target.row(0))
                .and(target.row(1))
                .for_each(|gr, gt, &ra, &ta, &rb, &tb| {
                    let (sa, ca) = ta.sin_cos();
                    let dx = ra * ca - rb * tb.cos();
                    let dy = ra * sa - rb * tb.sin();
                    *gr = two_over_m * (dx * ca + dy * sa);
                    *gt = two_over_m * ra * (dy * ca - dx * sa);
                });
        }
    }
    g
}

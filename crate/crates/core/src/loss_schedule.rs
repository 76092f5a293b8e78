//! Polar loss terms, their weighted combination and the per-epoch
//! curriculum that shifts weight from the auxiliary terms to the complex one.

use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::dsp::MagPhaseTensor;
use crate::error::{Error, Result};
use crate::model::{stack_polar, NodeId, PolarLossKind, Tape};
use crate::scalar::Scalar;

const BASELINE_FLOOR: f64 = 1e-12;
const WEIGHT_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub l_mag: f64,
    pub l_phase: f64,
    pub l_cplx: f64,
}

impl LossTerms {
    pub fn as_array(&self) -> [f64; 3] {
        [self.l_mag, self.l_phase, self.l_cplx]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub mag: f64,
    pub phase: f64,
    pub cplx: f64,
}

impl LossWeights {
    pub fn new(mag: f64, phase: f64, cplx: f64) -> Self {
        Self { mag, phase, cplx }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.mag, self.phase, self.cplx]
    }

    pub fn sum(&self) -> f64 {
        self.mag + self.phase + self.cplx
    }

    fn normalized(self) -> Self {
        let s = self.sum();
        Self::new(self.mag / s, self.phase / s, self.cplx / s)
    }

    pub fn check(&self) -> Result<()> {
        let w = self.as_array();
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) || (self.sum() - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::Config(format!("loss weights {w:?} must be non-negative and sum to 1")));
        }
        Ok(())
    }
}

fn kinds(circular_phase: bool) -> [PolarLossKind; 3] {
    [
        PolarLossKind::Magnitude,
        PolarLossKind::Phase {
            circular: circular_phase,
        },
        PolarLossKind::Complex,
    ]
}

/// The three loss terms between one prediction and its target.
pub fn loss_terms<S: Scalar>(pred: &MagPhaseTensor<S>, target: &MagPhaseTensor<S>, circular_phase: bool) -> Result<LossTerms> {
    if pred.dim() != target.dim() {
        return Err(Error::shape(format!("{:?}", target.dim()), format!("{:?}", pred.dim())));
    }
    let p = stack_polar(std::slice::from_ref(pred))?;
    let t = stack_polar(std::slice::from_ref(target))?;
    let [a, b, c] = kinds(circular_phase).map(|k| crate::model::polar_loss_value(p.view(), t.view(), k).f64());
    Ok(LossTerms {
        l_mag: a,
        l_phase: b,
        l_cplx: c,
    })
}

pub fn composite_loss(terms: &LossTerms, weights: &LossWeights) -> Result<f64> {
    weights.check()?;
    Ok(weights.mag * terms.l_mag + weights.phase * terms.l_phase + weights.cplx * terms.l_cplx)
}

/// Records the three terms and their weighted sum on `tape`. Returns the
/// composite node and the term nodes.
pub fn composite_on_tape<S: Scalar>(
    tape: &mut Tape<S>,
    pred: NodeId,
    target: ndarray::Array2<S>,
    weights: &LossWeights,
    circular_phase: bool,
) -> Result<(NodeId, [NodeId; 3])> {
    weights.check()?;
    let [km, kp, kc] = kinds(circular_phase);
    let m = tape.polar_loss(pred, target.clone(), km)?;
    let p = tape.polar_loss(pred, target.clone(), kp)?;
    let c = tape.polar_loss(pred, target, kc)?;
    let total = tape.weighted_sum(&[(m, S::of(weights.mag)), (p, S::of(weights.phase)), (c, S::of(weights.cplx))]);
    Ok((total, [m, p, c]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurriculumConfig {
    pub beta: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub lambda_cplx_max: f64,
    /// Wrapped angular difference in the phase loss instead of the plain one.
    #[serde(default)]
    pub circular_phase: bool,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        Self {
            beta: 0.9,
            lambda_min: 0.1,
            lambda_max: 1.0,
            lambda_cplx_max: 1.0,
            circular_phase: false,
        }
    }
}

impl CurriculumConfig {
    pub fn validate(&self) -> Result<()> {
        let c = self;
        if !(0.0..1.0).contains(&c.beta)
            || !(c.lambda_min > 0.0 && c.lambda_min <= c.lambda_max)
            || c.lambda_cplx_max < 0.0
            || !c.lambda_max.is_finite()
            || !c.lambda_cplx_max.is_finite()
        {
            return Err(Error::Config(format!("invalid curriculum settings {c:?}")));
        }
        Ok(())
    }
}

/// One row of the weight trajectory log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightRecord {
    pub epoch: usize,
    pub lambda_mag: f64,
    pub lambda_phase: f64,
    pub lambda_cplx: f64,
    pub ema_mag: f64,
    pub ema_phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumState {
    pub config: CurriculumConfig,
    pub baselines: Option<(f64, f64)>,
    pub ema: (f64, f64),
    /// Weights before normalization, kept for inspection.
    pub raw: LossWeights,
    pub weights: LossWeights,
    /// Number of epochs folded in so far.
    pub epoch: usize,
}

impl CurriculumState {
    pub fn new(config: CurriculumConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            baselines: None,
            ema: (0.0, 0.0),
            raw: LossWeights::new(1.0, 1.0, 0.0),
            weights: LossWeights::new(0.5, 0.5, 0.0),
            epoch: 0,
        })
    }

    /// Ratios `min(1, ema / baseline)` for magnitude and phase.
    pub fn ratios(&self) -> (f64, f64) {
        match self.baselines {
            Some((bm, bp)) => ((self.ema.0 / bm).min(1.0), (self.ema.1 / bp).min(1.0)),
            None => (1.0, 1.0),
        }
    }

    /// Folds in one epoch's mean auxiliary losses and returns the new weights.
    pub fn update_weights(&mut self, mean_mag: f64, mean_phase: f64) -> Result<LossWeights> {
        if !(mean_mag.is_finite() && mean_phase.is_finite()) || mean_mag < 0.0 || mean_phase < 0.0 {
            return Err(Error::NonFinite(format!("epoch mean losses ({mean_mag}, {mean_phase})")));
        }
        let c = self.config;
        match self.baselines {
            None => {
                let floor = |v: f64, name: &str| {
                    if v > 0.0 {
                        v
                    } else {
                        warn!("epoch-0 {name} loss is zero; clamping its baseline to {BASELINE_FLOOR}");
                        BASELINE_FLOOR
                    }
                };
                let b = (floor(mean_mag, "magnitude"), floor(mean_phase, "phase"));
                self.baselines = Some(b);
                self.ema = b;
                self.raw = LossWeights::new(1.0, 1.0, 0.0);
            }
            Some(_) => {
                self.ema = (
                    c.beta * self.ema.0 + (1.0 - c.beta) * mean_mag,
                    c.beta * self.ema.1 + (1.0 - c.beta) * mean_phase,
                );
                let (rm, rp) = self.ratios();
                let lm = c.lambda_min.max(c.lambda_max * rm);
                let lp = c.lambda_min.max(c.lambda_max * rp);
                // the complex weight sees the ratios after the lambda_min clamp
                let (cm, cp) = (lm / c.lambda_max, lp / c.lambda_max);
                self.raw = LossWeights::new(lm, lp, c.lambda_cplx_max * (1.0 - (cm + cp) / 2.0));
            }
        }
        self.weights = self.raw.normalized();
        self.epoch += 1;
        Ok(self.weights)
    }

    pub fn record(&self) -> WeightRecord {
        WeightRecord {
            epoch: self.epoch.saturating_sub(1),
            lambda_mag: self.weights.mag,
            lambda_phase: self.weights.phase,
            lambda_cplx: self.weights.cplx,
            ema_mag: self.ema.0,
            ema_phase: self.ema.1,
        }
    }
}

pub fn write_weight_log(path: &Path, records: &[WeightRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    crate::io::atomic_write(path, &bytes)
}

pub fn read_weight_log(path: &Path) -> Result<Vec<WeightRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn polar(r: Vec<f64>, t: Vec<f64>) -> MagPhaseTensor<f64> {
        let n = r.len();
        MagPhaseTensor::new(
            Array2::from_shape_vec((1, n), r).unwrap(),
            Array2::from_shape_vec((1, n), t).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn identical_inputs_give_zero_terms() {
        let a = polar(vec![0.5, 1.0, 2.0], vec![0.1, -2.0, 3.0]);
        assert_eq!(loss_terms(&a, &a, false).unwrap(), LossTerms::default());
    }

    #[test]
    fn opposite_phase_closed_form() {
        let theta: Vec<f64> = (0..8).map(|i| -1.4 + 0.3 * i as f64).collect();
        let shifted: Vec<f64> = theta.iter().map(|t| t + PI).collect();
        let t = loss_terms(&polar(vec![1.0; 8], shifted), &polar(vec![1.0; 8], theta), false).unwrap();
        assert_eq!(t.l_mag, 0.0);
        assert!((t.l_phase - PI * PI).abs() < 1e-12);
        assert!((t.l_cplx - 4.0).abs() < 1e-12);
    }

    #[test]
    fn collinear_single_pixel() {
        let t = loss_terms(&polar(vec![2.0], vec![0.0]), &polar(vec![1.0], vec![0.0]), false).unwrap();
        assert_eq!(t.as_array(), [1.0, 0.0, 1.0]);
    }

    #[test]
    fn circular_phase_option_wraps_difference() {
        let a = polar(vec![1.0], vec![3.0]);
        let b = polar(vec![1.0], vec![-3.0]);
        let plain = loss_terms(&a, &b, false).unwrap().l_phase;
        let circ = loss_terms(&a, &b, true).unwrap().l_phase;
        assert!((plain - 36.0).abs() < 1e-12);
        assert!((circ - (2.0 * PI - 6.0).powi(2)).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_rejected() {
        assert!(loss_terms(&polar(vec![1.0], vec![0.0]), &polar(vec![1.0, 2.0], vec![0.0, 0.0]), false).is_err());
    }

    #[test]
    fn composite_arithmetic() {
        let t = LossTerms {
            l_mag: 2.0,
            l_phase: 4.0,
            l_cplx: 99.0,
        };
        assert_eq!(composite_loss(&t, &LossWeights::new(1.0, 0.0, 0.0)).unwrap(), 2.0);
        assert_eq!(composite_loss(&t, &LossWeights::new(0.5, 0.5, 0.0)).unwrap(), 3.0);
        assert!(composite_loss(&t, &LossWeights::new(0.5, 0.6, 0.0)).is_err());
        assert!(composite_loss(&t, &LossWeights::new(1.5, -0.5, 0.0)).is_err());
    }

    #[test]
    fn first_epoch_weights_average_the_auxiliary_terms() {
        let mut s = CurriculumState::new(CurriculumConfig::default()).unwrap();
        let w = s.update_weights(3.0, 7.0).unwrap();
        assert_eq!(w, LossWeights::new(0.5, 0.5, 0.0));
        let t = LossTerms {
            l_mag: 3.0,
            l_phase: 7.0,
            l_cplx: 11.0,
        };
        assert_eq!(composite_loss(&t, &w).unwrap(), 5.0);
    }

    #[test]
    fn stalled_losses_keep_initial_weights() {
        let mut s = CurriculumState::new(CurriculumConfig::default()).unwrap();
        for _ in 0..20 {
            assert_eq!(s.update_weights(2.0, 0.5).unwrap(), LossWeights::new(0.5, 0.5, 0.0));
        }
        // losses that grow past the baseline are clamped the same way
        assert_eq!(s.update_weights(9.0, 9.0).unwrap(), LossWeights::new(0.5, 0.5, 0.0));
    }

    #[test]
    fn converged_losses_reach_clamp_fixed_point() {
        let mut s = CurriculumState::new(CurriculumConfig::default()).unwrap();
        s.update_weights(1.0, 1.0).unwrap();
        let mut w = s.weights;
        for _ in 0..200 {
            w = s.update_weights(0.0, 0.0).unwrap();
        }
        assert!((w.mag - 1.0 / 11.0).abs() < 1e-12);
        assert!((w.phase - 1.0 / 11.0).abs() < 1e-12);
        assert!((w.cplx - 9.0 / 11.0).abs() < 1e-12);
        assert!((s.raw.cplx - 0.9).abs() < 1e-12);
    }

    #[test]
    fn zero_baseline_is_clamped() {
        let mut s = CurriculumState::new(CurriculumConfig::default()).unwrap();
        s.update_weights(0.0, 1.0).unwrap();
        assert_eq!(s.baselines, Some((BASELINE_FLOOR, 1.0)));
        let w = s.update_weights(0.0, 1.0).unwrap();
        assert!((w.sum() - 1.0).abs() < 1e-12);
        assert!(s.update_weights(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn weight_log_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.csv");
        let mut s = CurriculumState::new(CurriculumConfig::default()).unwrap();
        let recs: Vec<_> = [(1.0, 2.0), (0.5, 1.0), (0.25, 0.1)]
            .iter()
            .map(|&(a, b)| {
                s.update_weights(a, b).unwrap();
                s.record()
            })
            .collect();
        write_weight_log(&path, &recs).unwrap();
        assert_eq!(read_weight_log(&path).unwrap(), recs);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("epoch,lambda_mag,lambda_phase,lambda_cplx,ema_mag,ema_phase"));
    }

    proptest! {
        #[test]
        fn weights_normalized_and_bounded(losses in proptest::collection::vec((0.0f64..10.0, 0.0f64..10.0), 1..40)) {
            let mut s = CurriculumState::new(CurriculumConfig::default()).unwrap();
            for (m, p) in losses {
                let w = s.update_weights(m, p).unwrap();
                prop_assert!((w.sum() - 1.0).abs() < 1e-12);
                prop_assert!(w.as_array().iter().all(|&v| v >= 0.0));
                prop_assert!(s.raw.mag >= 0.1 && s.raw.mag <= 1.0);
                prop_assert!(s.raw.phase >= 0.1 && s.raw.phase <= 1.0);
                prop_assert!(s.raw.cplx >= 0.0 && s.raw.cplx <= 1.0);
                let (rm, rp) = s.ratios();
                prop_assert!(rm <= 1.0 && rp <= 1.0);
            }
        }

        #[test]
        fn non_increasing_losses_give_monotone_curriculum(
            start in (0.1f64..5.0, 0.1f64..5.0),
            steps in proptest::collection::vec((0.0f64..0.2, 0.0f64..0.2), 50),
        ) {
            let mut s = CurriculumState::new(CurriculumConfig::default()).unwrap();
            let (mut m, mut p) = start;
            s.update_weights(m, p).unwrap();
            let mut prev = (s.ratios(), s.raw);
            for (dm, dp) in steps {
                m *= 1.0 - dm;
                p *= 1.0 - dp;
                s.update_weights(m, p).unwrap();
                let (r, raw) = (s.ratios(), s.raw);
                prop_assert!(r.0 <= prev.0 .0 && r.1 <= prev.0 .1);
                prop_assert!(raw.mag <= prev.1.mag && raw.phase <= prev.1.phase);
                prop_assert!(raw.cplx >= prev.1.cplx);
                prev = (r, raw);
            }
        }
    }
}

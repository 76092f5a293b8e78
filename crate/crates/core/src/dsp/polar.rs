use ndarray::{Array2, Zip};
use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Two-channel polar form of a spectrogram: magnitude and wrapped phase.
#[derive(Debug, Clone, PartialEq)]
pub struct MagPhaseTensor<S> {
    pub mag: Array2<S>,
    /// Wrapped to `(-pi, pi]`.
    pub phase: Array2<S>,
}

impl<S: Scalar> MagPhaseTensor<S> {
    pub fn new(mag: Array2<S>, phase: Array2<S>) -> Result<Self> {
        if mag.dim() != phase.dim() {
            return Err(Error::shape(format!("{:?}", mag.dim()), format!("{:?}", phase.dim())));
        }
        Ok(Self { mag, phase })
    }

    pub fn zeros(shape: (usize, usize)) -> Self {
        Self {
            mag: Array2::zeros(shape),
            phase: Array2::zeros(shape),
        }
    }

    /// `(T, F)`.
    pub fn dim(&self) -> (usize, usize) {
        self.mag.dim()
    }

    pub fn cast<D: Scalar>(&self) -> MagPhaseTensor<D> {
        MagPhaseTensor {
            mag: self.mag.mapv(|v| D::of(v.f64())),
            phase: self.phase.mapv(|v| D::of(v.f64())),
        }
    }
}

/// Wraps an angle to `(-pi, pi]`.
#[inline]
pub fn wrap_phase<S: Scalar>(theta: S) -> S {
    let wrapped = theta.sin().atan2(theta.cos());
    if wrapped <= -S::PI() {
        S::PI()
    } else {
        wrapped
    }
}

pub fn to_polar<S: Scalar>(data: &Array2<Complex<S>>) -> MagPhaseTensor<S> {
    let mag = data.mapv(|z| z.re.hypot(z.im));
    let phase = data.mapv(|z| {
        let p = z.im.atan2(z.re);
        // atan2(-0, -1) = -pi; keep the half-open interval.
        if p <= -S::PI() {
            S::PI()
        } else {
            p
        }
    });
    MagPhaseTensor { mag, phase }
}

pub fn from_polar<S: Scalar>(x: &MagPhaseTensor<S>) -> Array2<Complex<S>> {
    let mut out = Array2::from_elem(x.dim(), Complex::new(S::zero(), S::zero()));
    Zip::from(&mut out)
        .and(&x.mag)
        .and(&x.phase)
        .for_each(|z, &r, &theta| *z = Complex::new(r * theta.cos(), r * theta.sin()));
    out
}

use ndarray::Array2;

use crate::scalar::Scalar;

/// 1-D sin/cos ladder of width `width` for position `pos`, written into `out`.
fn ladder<S: Scalar>(pos: usize, out: &mut [S]) {
    let width = out.len() as f64;
    for (j, o) in out.iter_mut().enumerate() {
        let exponent = (2 * (j / 2)) as f64 / width;
        let angle = pos as f64 / 10000f64.powf(exponent);
        *o = S::of(if j % 2 == 0 { angle.sin() } else { angle.cos() });
    }
}

/// Sinusoidal encodings for a `(time blocks, freq blocks)` token grid, rows in
/// row-major grid order. The first `dim / 2` columns encode the time-block
/// index, the rest the frequency-block index.
pub fn positional_encoding<S: Scalar>(grid: (usize, usize), dim: usize) -> Array2<S> {
    let (nt, nf) = grid;
    let half = dim / 2;
    let mut pe = Array2::zeros((nt * nf, dim));
    for t in 0..nt {
        for f in 0..nf {
            let mut row = pe.row_mut(t * nf + f);
            let row = row.as_slice_mut().expect("row of standard array");
            let (a, b) = row.split_at_mut(half);
            ladder(t, a);
            ladder(f, b);
        }
    }
    pe
}

//! Positional encodings.
//!
//! Every encoding takes real-valued positions, so the static variants pass
//! `0, 1, …, n−1` and the time-aware variants pass packet timestamps.

use super::{cst, Real};

/// `out[p, 2i] = sin(pos_p / 10000^(2i/d_m))`, `out[p, 2i+1] = cos(…)`.
pub fn pe_sinusoidal<T: Real>(positions: &[T], d_model: usize) -> Vec<T> {
    let mut out = vec![T::zero(); positions.len() * d_model];
    for (p, &pos) in positions.iter().enumerate() {
        for i in 0..d_model / 2 {
            let denom: T = cst::<T>(10_000.0).powf(cst::<T>((2 * i) as f64 / d_model as f64));
            let angle = pos / denom;
            out[p * d_model + 2 * i] = angle.sin();
            out[p * d_model + 2 * i + 1] = angle.cos();
        }
    }
    out
}

/// `out[p, 2i] = sin(2π f_i pos_p)`, `out[p, 2i+1] = cos(2π f_i pos_p)`.
pub fn pe_fourier<T: Real>(positions: &[T], freqs: &[T]) -> Vec<T> {
    let d_model = freqs.len() * 2;
    let two_pi = T::PI() + T::PI();
    let mut out = vec![T::zero(); positions.len() * d_model];
    for (p, &pos) in positions.iter().enumerate() {
        for (i, &f) in freqs.iter().enumerate() {
            let angle = two_pi * f * pos;
            out[p * d_model + 2 * i] = angle.sin();
            out[p * d_model + 2 * i + 1] = angle.cos();
        }
    }
    out
}

/// Accumulates `∂L/∂f_i` given `∂L/∂out` for [`pe_fourier`].
pub fn pe_fourier_backward<T: Real>(positions: &[T], freqs: &[T], dout: &[T], dfreqs: &mut [T]) {
    let d_model = freqs.len() * 2;
    let two_pi = T::PI() + T::PI();
    for (p, &pos) in positions.iter().enumerate() {
        for (i, &f) in freqs.iter().enumerate() {
            let angle = two_pi * f * pos;
            let k = two_pi * pos;
            let g_sin = dout[p * d_model + 2 * i];
            let g_cos = dout[p * d_model + 2 * i + 1];
            dfreqs[i] += g_sin * k * angle.cos() - g_cos * k * angle.sin();
        }
    }
}

/// Initial Fourier frequencies `10000^(−2i/d_m) / 2π`, which make the
/// Fourier encoding coincide with the sinusoidal one.
pub fn fourier_init<T: Real>(d_model: usize) -> Vec<T> {
    (0..d_model / 2)
        .map(|i| {
            let f =
                10_000f64.powf(-((2 * i) as f64) / d_model as f64) / (2.0 * std::f64::consts::PI);
            cst(f)
        })
        .collect()
}

/// Rotation angles `θ_i = base^(−i/width)` for the `pair_count` pairs of a head.
pub fn rope_thetas<T: Real>(pair_count: usize, base: f64, width: usize) -> Vec<T> {
    (0..pair_count)
        .map(|i| cst(base.powf(-(i as f64) / width as f64)))
        .collect()
}

/// Rotates each pair `(x_2i, x_2i+1)` of every row by `pos_p · θ_i`.
///
/// `qk` is `positions.len() × (2·thetas.len())`. With `inverse` the rotation
/// runs backwards, which is also the backward pass of the forward rotation.
pub fn rope_rotate<T: Real>(qk: &[T], positions: &[T], thetas: &[T], inverse: bool) -> Vec<T> {
    let width = thetas.len() * 2;
    let mut out = qk.to_vec();
    for (p, &pos) in positions.iter().enumerate() {
        let row = &mut out[p * width..(p + 1) * width];
        for (i, &theta) in thetas.iter().enumerate() {
            let angle = pos * theta;
            let (s, c) = angle.sin_cos();
            let s = if inverse { -s } else { s };
            let (a, b) = (row[2 * i], row[2 * i + 1]);
            row[2 * i] = c * a - s * b;
            row[2 * i + 1] = s * a + c * b;
        }
    }
    out
}

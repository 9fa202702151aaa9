//! Dense row-major kernels. Reductions run in a fixed order so results do
//! not depend on thread count.

use super::Real;

/// `out[m×n] = a[m×k] · b[k×n] + bias[n]`.
pub fn affine<T: Real>(a: &[T], b: &[T], bias: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(m * n);
    for i in 0..m {
        out.extend_from_slice(bias);
        let row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            for (o, &bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}

/// Backward of [`affine`]: accumulates `dw += aᵀ·dy`, `db += Σ dy`, and
/// returns `dy · bᵀ` when `want_input` is set.
#[allow(clippy::too_many_arguments)]
pub fn affine_backward<T: Real>(
    a: &[T],
    b: &[T],
    dy: &[T],
    m: usize,
    k: usize,
    n: usize,
    dw: &mut [T],
    db: &mut [T],
    want_input: bool,
) -> Option<Vec<T>> {
    for i in 0..m {
        let g = &dy[i * n..(i + 1) * n];
        for (d, &v) in db.iter_mut().zip(g) {
            *d += v;
        }
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            for (d, &gv) in dw[p * n..(p + 1) * n].iter_mut().zip(g) {
                *d += av * gv;
            }
        }
    }
    want_input.then(|| {
        let mut da = vec![T::zero(); m * k];
        for i in 0..m {
            let g = &dy[i * n..(i + 1) * n];
            for p in 0..k {
                da[i * k + p] = dot(&b[p * n..(p + 1) * n], g);
            }
        }
        da
    })
}

pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// In-place numerically stable softmax.
pub fn softmax_in_place<T: Real>(v: &mut [T]) {
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

pub fn add_assign<T: Real>(a: &mut [T], b: &[T]) {
    for (x, &y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

pub fn all_finite<T: Real>(v: &[T]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Per-row layer normalisation; returns `(y, xhat, inv_std)`.
pub fn layer_norm<T: Real>(
    x: &[T],
    gamma: &[T],
    beta: &[T],
    rows: usize,
    eps: T,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let dim = gamma.len();
    let inv_dim = T::one() / T::from(dim).expect("dim");
    let mut y = vec![T::zero(); rows * dim];
    let mut xhat = vec![T::zero(); rows * dim];
    let mut inv_std = vec![T::zero(); rows];
    for r in 0..rows {
        let row = &x[r * dim..(r + 1) * dim];
        let mean = row.iter().copied().fold(T::zero(), |a, b| a + b) * inv_dim;
        let var = row
            .iter()
            .fold(T::zero(), |a, &b| a + (b - mean) * (b - mean))
            * inv_dim;
        let is = T::one() / (var + eps).sqrt();
        inv_std[r] = is;
        for j in 0..dim {
            let h = (row[j] - mean) * is;
            xhat[r * dim + j] = h;
            y[r * dim + j] = h * gamma[j] + beta[j];
        }
    }
    (y, xhat, inv_std)
}

/// Backward of [`layer_norm`]; accumulates into `dgamma`/`dbeta` and returns dx.
pub fn layer_norm_backward<T: Real>(
    dy: &[T],
    xhat: &[T],
    inv_std: &[T],
    gamma: &[T],
    dgamma: &mut [T],
    dbeta: &mut [T],
) -> Vec<T> {
    let dim = gamma.len();
    let rows = inv_std.len();
    let fdim = T::from(dim).expect("dim");
    let mut dx = vec![T::zero(); rows * dim];
    for r in 0..rows {
        let g = &dy[r * dim..(r + 1) * dim];
        let h = &xhat[r * dim..(r + 1) * dim];
        let mut sum_dh = T::zero();
        let mut sum_dh_h = T::zero();
        for j in 0..dim {
            dgamma[j] += g[j] * h[j];
            dbeta[j] += g[j];
            let dh = g[j] * gamma[j];
            sum_dh += dh;
            sum_dh_h += dh * h[j];
        }
        let scale = inv_std[r] / fdim;
        for j in 0..dim {
            let dh = g[j] * gamma[j];
            dx[r * dim + j] = scale * (fdim * dh - sum_dh - h[j] * sum_dh_h);
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_small() {
        // [1 2; 3 4] · [1 0 1; 0 1 1] + [0.5, 0, -1]
        let y = affine(
            &[1.0, 2.0, 3.0, 4.0],
            &[1.0, 0.0, 1.0, 0.0, 1.0, 1.0],
            &[0.5, 0.0, -1.0],
            2,
            2,
            3,
        );
        assert_eq!(y, vec![1.5, 2.0, 2.0, 3.5, 4.0, 6.0]);
    }

    #[test]
    fn softmax_stable() {
        let mut v = [1000.0f64, 1000.0];
        softmax_in_place(&mut v);
        assert_eq!(v, [0.5, 0.5]);
    }

    #[test]
    fn layer_norm_zero_mean_unit_var() {
        let (y, _, _) = layer_norm(&[1.0f64, 2.0, 3.0, 4.0], &[1.0; 4], &[0.0; 4], 1, 1e-12);
        let mean: f64 = y.iter().sum::<f64>() / 4.0;
        let var: f64 = y.iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-9);
    }
}

//! Scalar kernels shared by the tape and the cached decoding path. Both must
//! run the exact same arithmetic for cached decoding to be bit-identical.

use super::Float;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[inline]
pub fn sigmoid<T: Float>(x: T) -> T {
    T::ONE / (T::ONE + (-x).exp())
}

/// tanh approximation of GELU.
#[inline]
pub fn gelu<T: Float>(x: T) -> T {
    let c = T::from_f64(GELU_C);
    let a = T::from_f64(GELU_A);
    let half = T::from_f64(0.5);
    half * x * (T::ONE + (c * (x + a * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad<T: Float>(x: T) -> T {
    let c = T::from_f64(GELU_C);
    let a = T::from_f64(GELU_A);
    let half = T::from_f64(0.5);
    let three = T::from_f64(3.0);
    let inner = c * (x + a * x * x * x);
    let t = inner.tanh();
    half * (T::ONE + t) + half * x * (T::ONE - t * t) * c * (T::ONE + three * a * x * x)
}

/// Numerically stable softmax of `row[..valid]`; entries past `valid` become 0.
pub fn softmax_row<T: Float>(row: &mut [T], valid: usize) {
    let max = row[..valid].iter().copied().fold(row[0], |m, v| m.max(v));
    let mut sum = T::ZERO;
    for v in row[..valid].iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row[..valid].iter_mut() {
        *v = *v / sum;
    }
    for v in row[valid..].iter_mut() {
        *v = T::ZERO;
    }
}

/// Normalizes one row; writes the affine output and returns `1/std`.
pub fn layer_norm_row<T: Float>(x: &[T], gain: &[T], bias: &[T], eps: T, xhat: &mut [T], out: &mut [T]) -> T {
    let n = T::from_f64(x.len() as f64);
    let mean = x.iter().copied().sum::<T>() / n;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    let rstd = T::ONE / (var + eps).sqrt();
    for i in 0..x.len() {
        xhat[i] = (x[i] - mean) * rstd;
        out[i] = xhat[i] * gain[i] + bias[i];
    }
    rstd
}

/// Row-major product of an `m x k` and a `k x n` matrix.
pub fn matmul<T: Float>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::ZERO; m * n];
    T::gemm(m, k, n, a, (k as isize, 1), b, (n as isize, 1), false, &mut out);
    out
}

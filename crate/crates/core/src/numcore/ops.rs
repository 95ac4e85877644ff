use crate::error::{Error, Result};

use super::{Scalar, Tensor};

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for `y >= 0`. Zero maps to a large negative
/// argument whose softplus underflows to exactly zero.
pub fn softplus_inverse<T: Scalar>(y: T) -> T {
    if y <= T::zero() {
        T::lit(-1000.0)
    } else {
        // y + ln(1 - e^{-y})
        y + (-(-y).exp_m1()).ln()
    }
}

/// Numerically stable `ln Σ exp(x_i)`. Panics on an empty slice.
pub fn log_sum_exp<T: Scalar>(x: &[T]) -> T {
    let max = x.iter().copied().fold(T::neg_infinity(), T::max);
    let sum: T = x.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Softmax of a slice with max subtraction. Panics on an empty slice.
pub fn softmax_slice<T: Scalar>(x: &[T]) -> Vec<T> {
    assert!(!x.is_empty(), "softmax of an empty slice");
    let max = x.iter().copied().fold(T::neg_infinity(), T::max);
    let mut out: Vec<T> = x.iter().map(|&v| (v - max).exp()).collect();
    let sum: T = out.iter().copied().sum();
    out.iter_mut().for_each(|v| *v = *v / sum);
    out
}

/// Vector-Jacobian product of softmax: given `y = softmax(x)` and `dL/dy`,
/// returns `dL/dx`.
pub fn softmax_vjp<T: Scalar>(y: &[T], grad_y: &[T]) -> Vec<T> {
    let dot: T = y.iter().zip(grad_y).map(|(&a, &g)| a * g).sum();
    y.iter().zip(grad_y).map(|(&a, &g)| a * (g - dot)).collect()
}

/// Softmax along `axis` of an arbitrary-rank tensor.
pub fn softmax<T: Scalar>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let shape = x.shape();
    if axis >= shape.len() {
        return Err(Error::shape("softmax axis", format!("< {}", shape.len()), axis));
    }
    let n = shape[axis];
    if n == 0 {
        return Err(Error::Empty("softmax axis".into()));
    }
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let src = x.data();
    let mut out = vec![T::zero(); src.len()];
    let mut lane = vec![T::zero(); n];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * n + j) * inner + i;
            for (j, slot) in lane.iter_mut().enumerate() {
                *slot = src[at(j)];
            }
            for (j, v) in softmax_slice(&lane).into_iter().enumerate() {
                out[at(j)] = v;
            }
        }
    }
    Tensor::new(shape.to_vec(), out)
}

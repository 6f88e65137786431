use crate::scalar::Scalar;

use super::Tensor4;

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.1;

pub fn leaky_relu<T: Scalar>(x: &Tensor4<T>, slope: T) -> Tensor4<T> {
    x.map(|v| if v > T::zero() { v } else { slope * v })
}

/// Elementwise derivative; the value at exactly zero is `slope`.
pub fn leaky_relu_derivative<T: Scalar>(x: &Tensor4<T>, slope: T) -> Tensor4<T> {
    x.map(|v| if v > T::zero() { T::one() } else { slope })
}

/// Chains `upstream` through the activation given the pre-activation `x`.
pub fn leaky_relu_backward<T: Scalar>(x: &Tensor4<T>, upstream: &Tensor4<T>, slope: T) -> Tensor4<T> {
    assert_eq!(x.shape(), upstream.shape());
    let data = x
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { slope * g })
        .collect();
    Tensor4::from_vec(x.shape(), data).expect("shape preserved")
}

#[inline]
fn sigmoid_scalar<T: Scalar>(v: T) -> T {
    // split by sign so exp never overflows
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    x.map(sigmoid_scalar)
}

pub fn sigmoid_derivative<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    x.map(|v| {
        let s = sigmoid_scalar(v);
        s * (T::one() - s)
    })
}

/// Chains `upstream` through the sigmoid given its output `y`.
pub fn sigmoid_backward<T: Scalar>(y: &Tensor4<T>, upstream: &Tensor4<T>) -> Tensor4<T> {
    assert_eq!(y.shape(), upstream.shape());
    let data = y
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&s, &g)| g * s * (T::one() - s))
        .collect();
    Tensor4::from_vec(y.shape(), data).expect("shape preserved")
}

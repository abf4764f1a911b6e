use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes the gradient where the forward input was strictly positive.
/// The kink at exactly zero gets gradient 0.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
    if input.shape() != grad_output.shape() {
        return Err(Error::shape(
            "relu_backward",
            format!("input {} vs grad_output {}", input.shape(), grad_output.shape()),
        ));
    }
    let data = input
        .data()
        .iter()
        .zip(grad_output.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(input.shape(), data)
}

/// Per-pixel softmax across the channel axis, stabilized by subtracting the
/// per-pixel maximum.
pub fn softmax_channels<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let s = input.shape();
    let hw = s.plane();
    let mut out = Tensor::zeros(s);
    let mut exps = vec![T::zero(); s.c];
    for n in 0..s.n {
        let src = input.item(n);
        let dst = out.item_mut(n);
        for p in 0..hw {
            let max = (0..s.c).map(|c| src[c * hw + p]).fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for (c, e) in exps.iter_mut().enumerate() {
                *e = (src[c * hw + p] - max).exp();
                sum = sum + *e;
            }
            for (c, e) in exps.iter().enumerate() {
                dst[c * hw + p] = *e / sum;
            }
        }
    }
    out
}

/// Vector-Jacobian product of [`softmax_channels`], given its output.
pub fn softmax_backward<T: Scalar>(output: &Tensor<T>, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
    let s = output.shape();
    if grad_output.shape() != s {
        return Err(Error::shape(
            "softmax_backward",
            format!("output {s} vs grad_output {}", grad_output.shape()),
        ));
    }
    let hw = s.plane();
    let mut grad = Tensor::zeros(s);
    for n in 0..s.n {
        let p = output.item(n);
        let g = grad_output.item(n);
        let dst = grad.item_mut(n);
        for px in 0..hw {
            let dot: T = (0..s.c).map(|c| p[c * hw + px] * g[c * hw + px]).sum();
            for c in 0..s.c {
                let i = c * hw + px;
                dst[i] = p[i] * (g[i] - dot);
            }
        }
    }
    Ok(grad)
}

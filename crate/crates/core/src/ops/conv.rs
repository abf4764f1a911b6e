//! 3×3 convolution, stride 1, zero padding 1.
//!
//! Each batch item is unrolled into a `(in_c·9) × (h·w)` column matrix and
//! multiplied against the filter bank viewed as `out_c × (in_c·9)`.

use crate::error::{Error, Result};
use crate::tensor::{gemm, MatRef, Scalar, Shape, Tensor};

pub const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;

/// Gradients returned by [`conv2d_backward`].
#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Vec<T>,
}

fn check_shapes<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, op: &'static str) -> Result<()> {
    let ws = weights.shape();
    if ws.h != KERNEL || ws.w != KERNEL {
        return Err(Error::shape(op, format!("kernel must be 3×3, weights are {ws}")));
    }
    if input.shape().c != ws.c {
        return Err(Error::shape(
            op,
            format!(
                "input has {} channels but weights expect {} (weights {ws})",
                input.shape().c,
                ws.c
            ),
        ));
    }
    Ok(())
}

/// Unrolls one batch item (`c × h × w`) into `cols` (`c·9 × h·w`).
fn im2col<T: Scalar>(item: &[T], c: usize, h: usize, w: usize, cols: &mut [T]) {
    let hw = h * w;
    debug_assert_eq!(cols.len(), c * TAPS * hw);
    for ci in 0..c {
        let plane = &item[ci * hw..(ci + 1) * hw];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &mut cols[(ci * TAPS + ky * KERNEL + kx) * hw..][..hw];
                for y in 0..h {
                    let dst = &mut row[y * w..(y + 1) * w];
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            dst[0] = T::zero();
                            dst[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => dst.copy_from_slice(src),
                        _ => {
                            dst[..w - 1].copy_from_slice(&src[1..]);
                            dst[w - 1] = T::zero();
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds `cols` back onto an item; the adjoint of [`im2col`].
fn col2im<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize, item: &mut [T]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut item[ci * hw..(ci + 1) * hw];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &cols[(ci * TAPS + ky * KERNEL + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..(y + 1) * w];
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => dst[..w - 1].iter_mut().zip(&src[1..]).for_each(|(d, &s)| *d = *d + s),
                        1 => dst.iter_mut().zip(src).for_each(|(d, &s)| *d = *d + s),
                        _ => dst[1..].iter_mut().zip(&src[..w - 1]).for_each(|(d, &s)| *d = *d + s),
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, bias: &[T]) -> Result<Tensor<T>> {
    check_shapes(input, weights, "conv2d_forward")?;
    let s = input.shape();
    let out_c = weights.shape().n;
    if bias.len() != out_c {
        return Err(Error::shape(
            "conv2d_forward",
            format!("bias has {} entries for {out_c} filters", bias.len()),
        ));
    }
    let hw = s.plane();
    let mut out = Tensor::zeros(Shape::new(s.n, out_c, s.h, s.w));
    if hw == 0 {
        return Ok(out);
    }
    let wmat = MatRef::row_major(weights.data(), out_c, s.c * TAPS);
    let mut cols = vec![T::zero(); s.c * TAPS * hw];
    for n in 0..s.n {
        im2col(input.item(n), s.c, s.h, s.w, &mut cols);
        let dst = out.item_mut(n);
        for (o, &b) in bias.iter().enumerate() {
            dst[o * hw..(o + 1) * hw].fill(b);
        }
        gemm(wmat, MatRef::row_major(&cols, s.c * TAPS, hw), T::one(), dst);
    }
    Ok(out)
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_output: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    check_shapes(input, weights, "conv2d_backward")?;
    let s = input.shape();
    let ws = weights.shape();
    let expected = Shape::new(s.n, ws.n, s.h, s.w);
    if grad_output.shape() != expected {
        return Err(Error::shape(
            "conv2d_backward",
            format!("grad_output is {}, expected {expected}", grad_output.shape()),
        ));
    }
    let hw = s.plane();
    let k = s.c * TAPS;
    let mut grad_input = Tensor::zeros(s);
    let mut grad_weights = Tensor::zeros(ws);
    let mut grad_bias = vec![T::zero(); ws.n];
    if hw == 0 {
        return Ok(ConvGrads {
            input: grad_input,
            weights: grad_weights,
            bias: grad_bias,
        });
    }
    let wmat = MatRef::row_major(weights.data(), ws.n, k);
    let mut cols = vec![T::zero(); k * hw];
    let mut grad_cols = vec![T::zero(); k * hw];
    for n in 0..s.n {
        let gout = grad_output.item(n);
        for (o, gb) in grad_bias.iter_mut().enumerate() {
            *gb = *gb + gout[o * hw..(o + 1) * hw].iter().copied().sum::<T>();
        }
        let gmat = MatRef::row_major(gout, ws.n, hw);
        im2col(input.item(n), s.c, s.h, s.w, &mut cols);
        gemm(gmat, MatRef::row_major(&cols, k, hw).t(), T::one(), grad_weights.data_mut());
        gemm(wmat.t(), gmat, T::zero(), &mut grad_cols);
        col2im(&grad_cols, s.c, s.h, s.w, grad_input.item_mut(n));
    }
    Ok(ConvGrads {
        input: grad_input,
        weights: grad_weights,
        bias: grad_bias,
    })
}

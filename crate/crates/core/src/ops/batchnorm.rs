use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const BN_EPS: f64 = 1e-5;
/// Weight of the current batch in the running-statistics moving average.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }
}

/// Saved state needed by [`batchnorm_backward`].
#[derive(Clone, Debug)]
pub struct BatchNormCache<T> {
    pub mode: Mode,
    pub normalized: Tensor<T>,
    pub inv_std: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct BatchNormGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

/// Per-channel batch normalization followed by the affine `gamma·x̂ + beta`.
///
/// Train mode normalizes with biased batch statistics and blends the batch
/// mean and unbiased batch variance into the running statistics. Infer mode
/// uses the running statistics unchanged.
pub fn batchnorm_forward<T: Scalar>(
    input: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    stats: &RunningStats<T>,
    mode: Mode,
    eps: f64,
) -> Result<(Tensor<T>, RunningStats<T>, BatchNormCache<T>)> {
    let s = input.shape();
    if gamma.len() != s.c || beta.len() != s.c || stats.mean.len() != s.c || stats.var.len() != s.c {
        return Err(Error::shape(
            "batchnorm_forward",
            format!(
                "input has {} channels; gamma {}, beta {}, running stats {}/{}",
                s.c,
                gamma.len(),
                beta.len(),
                stats.mean.len(),
                stats.var.len()
            ),
        ));
    }
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::InvalidConfig(format!("batch-norm eps must be positive, got {eps}")));
    }
    let hw = s.plane();
    let count = s.n * hw;
    let mut out = Tensor::zeros(s);
    let mut normalized = Tensor::zeros(s);
    let mut inv_std = Vec::with_capacity(s.c);
    let mut updated = stats.clone();
    let momentum = BN_MOMENTUM;

    for c in 0..s.c {
        let (mean, var) = match mode {
            Mode::Train => {
                let mut sum = 0.0f64;
                for n in 0..s.n {
                    sum += input.plane(n, c).iter().map(|v| v.to_f64().unwrap()).sum::<f64>();
                }
                let mean = sum / count.max(1) as f64;
                let mut sq = 0.0f64;
                for n in 0..s.n {
                    sq += input
                        .plane(n, c)
                        .iter()
                        .map(|v| {
                            let d = v.to_f64().unwrap() - mean;
                            d * d
                        })
                        .sum::<f64>();
                }
                let var = sq / count.max(1) as f64;
                let unbiased = if count > 1 { sq / (count - 1) as f64 } else { var };
                let rm = stats.mean[c].to_f64().unwrap();
                let rv = stats.var[c].to_f64().unwrap();
                updated.mean[c] = T::lit((1.0 - momentum) * rm + momentum * mean);
                updated.var[c] = T::lit((1.0 - momentum) * rv + momentum * unbiased);
                (T::lit(mean), T::lit(var))
            }
            Mode::Infer => (stats.mean[c], stats.var[c]),
        };
        let istd = T::one() / (var + T::lit(eps)).sqrt();
        inv_std.push(istd);
        for n in 0..s.n {
            let base = (n * s.c + c) * hw;
            let src = &input.data()[base..base + hw];
            let xh = &mut normalized.data_mut()[base..base + hw];
            for (d, &v) in xh.iter_mut().zip(src) {
                *d = (v - mean) * istd;
            }
            let dst = &mut out.data_mut()[base..base + hw];
            for (d, &v) in dst.iter_mut().zip(&normalized.data()[base..base + hw]) {
                *d = gamma[c] * v + beta[c];
            }
        }
    }
    Ok((
        out,
        updated,
        BatchNormCache {
            mode,
            normalized,
            inv_std,
        },
    ))
}

pub fn batchnorm_backward<T: Scalar>(
    cache: &BatchNormCache<T>,
    gamma: &[T],
    grad_output: &Tensor<T>,
) -> Result<BatchNormGrads<T>> {
    let s = cache.normalized.shape();
    if grad_output.shape() != s || gamma.len() != s.c {
        return Err(Error::shape(
            "batchnorm_backward",
            format!("grad_output {} vs cached {s}, gamma {}", grad_output.shape(), gamma.len()),
        ));
    }
    let hw = s.plane();
    let count = T::from_usize(s.n * hw).unwrap();
    let mut grad_input = Tensor::zeros(s);
    let mut grad_gamma = vec![T::zero(); s.c];
    let mut grad_beta = vec![T::zero(); s.c];
    for c in 0..s.c {
        let mut sum_dy = T::zero();
        let mut sum_dy_xh = T::zero();
        for n in 0..s.n {
            let dy = grad_output.plane(n, c);
            let xh = cache.normalized.plane(n, c);
            sum_dy = sum_dy + dy.iter().copied().sum::<T>();
            sum_dy_xh = sum_dy_xh + dy.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>();
        }
        grad_gamma[c] = sum_dy_xh;
        grad_beta[c] = sum_dy;
        let scale = gamma[c] * cache.inv_std[c];
        for n in 0..s.n {
            let base = (n * s.c + c) * hw;
            let dy = &grad_output.data()[base..base + hw];
            let xh = &cache.normalized.data()[base..base + hw];
            let dx = &mut grad_input.data_mut()[base..base + hw];
            match cache.mode {
                Mode::Train => {
                    for i in 0..hw {
                        dx[i] = scale * (dy[i] - (sum_dy + xh[i] * sum_dy_xh) / count);
                    }
                }
                Mode::Infer => {
                    for i in 0..hw {
                        dx[i] = scale * dy[i];
                    }
                }
            }
        }
    }
    Ok(BatchNormGrads {
        input: grad_input,
        gamma: grad_gamma,
        beta: grad_beta,
    })
}

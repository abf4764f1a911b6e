use crate::error::{Error, Result};
use crate::ops::{
    batchnorm_backward, batchnorm_forward, conv2d_backward, conv2d_forward, maxpool2x2, maxpool2x2_backward,
    relu, relu_backward, softmax_channels, unpool2x2, unpool2x2_backward, BatchNormCache, Mode, PoolIndices,
    RunningStats, BN_EPS,
};
use crate::tensor::{Scalar, Shape, Tensor};

use super::params::{layer_name, Gradients, LayerGrads, NetworkParams};
use super::spec::{LayerSpec, NetworkSpec};

enum Step<T> {
    Conv {
        layer: usize,
        input: Tensor<T>,
        /// batch-norm cache and the pre-ReLU activation
        bn: Option<(BatchNormCache<T>, Tensor<T>)>,
    },
    Pool(usize),
    Unpool(usize),
}

/// Activations saved by a train-mode [`forward`] for [`backward`].
pub struct ForwardCache<T> {
    mode: Mode,
    input_shape: Shape,
    conv_count: usize,
    steps: Vec<Step<T>>,
    indices: Vec<PoolIndices>,
    logits: Tensor<T>,
    running: Vec<Option<RunningStats<T>>>,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Pre-softmax scores.
    pub fn logits(&self) -> &Tensor<T> {
        &self.logits
    }

    /// Running statistics blended from this batch, one slot per convolution.
    pub fn running_stats(&self) -> &[Option<RunningStats<T>>] {
        &self.running
    }
}

impl<T: Scalar> NetworkParams<T> {
    /// Installs the running statistics produced by a train-mode forward pass.
    pub fn apply_running_stats(&mut self, cache: &ForwardCache<T>) {
        for (layer, stats) in self.layers.iter_mut().zip(&cache.running) {
            if let (Some(bn), Some(stats)) = (layer.bn.as_mut(), stats) {
                bn.stats = stats.clone();
            }
        }
    }
}

/// Runs the network and returns per-pixel class probabilities
/// `(n, classes, h, w)` with the same spatial size as `input`.
///
/// Infer mode keeps no activations; only a train-mode cache can be passed to
/// [`backward`].
pub fn forward<T: Scalar>(
    spec: &NetworkSpec,
    params: &NetworkParams<T>,
    input: &Tensor<T>,
    mode: Mode,
) -> Result<(Tensor<T>, ForwardCache<T>)> {
    params.check(spec)?;
    let s = input.shape();
    if s.c != spec.in_channels() {
        return Err(Error::shape(
            "forward",
            format!("input has {} channels, network expects {}", s.c, spec.in_channels()),
        ));
    }
    let keep = mode == Mode::Train;
    let mut x = input.clone();
    let mut steps = Vec::new();
    let mut indices: Vec<PoolIndices> = Vec::new();
    let mut open: Vec<usize> = Vec::new();
    let mut running = vec![None; params.layers.len()];
    let mut conv_idx = 0;
    for layer in spec.layers() {
        match *layer {
            LayerSpec::Conv { .. } => {
                let p = &params.layers[conv_idx];
                let y = conv2d_forward(&x, &p.weight, &p.bias)?;
                let (next, bn_cache) = match &p.bn {
                    Some(bn) => {
                        let (z, stats, cache) = batchnorm_forward(&y, &bn.gamma, &bn.beta, &bn.stats, mode, BN_EPS)?;
                        if keep {
                            running[conv_idx] = Some(stats);
                        }
                        let a = relu(&z);
                        (a, keep.then_some((cache, z)))
                    }
                    None => (y, None),
                };
                let input = std::mem::replace(&mut x, next);
                if keep {
                    steps.push(Step::Conv {
                        layer: conv_idx,
                        input,
                        bn: bn_cache,
                    });
                }
                conv_idx += 1;
            }
            LayerSpec::MaxPool => {
                let (y, idx) = maxpool2x2(&x);
                open.push(indices.len());
                steps.push(Step::Pool(indices.len()));
                indices.push(idx);
                x = y;
            }
            LayerSpec::Unpool => {
                let slot = open.pop().ok_or_else(|| Error::InvalidSpec("unpaired upsample".into()))?;
                x = unpool2x2(&x, &indices[slot])?;
                steps.push(Step::Unpool(slot));
            }
            LayerSpec::Softmax => {}
        }
    }
    let probs = softmax_channels(&x);
    if !keep {
        steps.clear();
        indices.clear();
    }
    Ok((
        probs,
        ForwardCache {
            mode,
            input_shape: s,
            conv_count: conv_idx,
            steps,
            indices,
            logits: x,
            running,
        },
    ))
}

/// Infer-mode forward pass returning only the probability map.
pub fn predict<T: Scalar>(spec: &NetworkSpec, params: &NetworkParams<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
    forward(spec, params, input, Mode::Infer).map(|(p, _)| p)
}

/// Back-propagates a loss gradient taken with respect to the pre-softmax
/// logits through a train-mode cache.
pub fn backward<T: Scalar>(
    spec: &NetworkSpec,
    params: &NetworkParams<T>,
    cache: &ForwardCache<T>,
    grad_logits: &Tensor<T>,
) -> Result<Gradients<T>> {
    if cache.mode != Mode::Train {
        return Err(Error::StaleCache("cache comes from an infer-mode pass".into()));
    }
    params.check(spec)?;
    let expected_steps = spec.layers().iter().filter(|l| **l != LayerSpec::Softmax).count();
    if cache.conv_count != params.layers.len() || cache.steps.len() != expected_steps {
        return Err(Error::StaleCache(format!(
            "cache has {} steps over {} convolutions; spec needs {expected_steps} over {}",
            cache.steps.len(),
            cache.conv_count,
            params.layers.len()
        )));
    }
    if grad_logits.shape() != cache.logits.shape() {
        return Err(Error::StaleCache(format!(
            "gradient is {} but cached logits are {}",
            grad_logits.shape(),
            cache.logits.shape()
        )));
    }
    let mut grads: Vec<Option<LayerGrads<T>>> = vec![None; params.layers.len()];
    let mut g = grad_logits.clone();
    for (pos, step) in cache.steps.iter().enumerate().rev() {
        match step {
            Step::Conv { layer, input, bn } => {
                let p = &params.layers[*layer];
                if input.shape().c != p.weight.shape().c {
                    return Err(Error::StaleCache(format!(
                        "{} input has {} channels, weights expect {}",
                        layer_name(*layer),
                        input.shape().c,
                        p.weight.shape().c
                    )));
                }
                let (g_conv, gamma, beta) = match (bn, &p.bn) {
                    (Some((bn_cache, pre_relu)), Some(bn_params)) => {
                        let g_relu = relu_backward(pre_relu, &g)?;
                        let bg = batchnorm_backward(bn_cache, &bn_params.gamma, &g_relu)?;
                        (bg.input, Some(bg.gamma), Some(bg.beta))
                    }
                    (None, None) => (g, None, None),
                    _ => return Err(Error::StaleCache(format!("{} batch-norm layout differs", layer_name(*layer)))),
                };
                let cg = conv2d_backward(input, &p.weight, &g_conv)?;
                grads[*layer] = Some(LayerGrads {
                    weight: cg.weights,
                    bias: cg.bias,
                    gamma,
                    beta,
                });
                g = if pos == 0 { Tensor::zeros(cache.input_shape) } else { cg.input };
            }
            Step::Pool(slot) => g = maxpool2x2_backward(&g, &cache.indices[*slot])?,
            Step::Unpool(slot) => g = unpool2x2_backward(&g, &cache.indices[*slot])?,
        }
    }
    let layers = grads
        .into_iter()
        .enumerate()
        .map(|(i, g)| g.ok_or_else(|| Error::StaleCache(format!("no cached activations for {}", layer_name(i)))))
        .collect::<Result<_>>()?;
    Ok(Gradients { layers })
}

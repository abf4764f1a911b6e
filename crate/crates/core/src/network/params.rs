use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::ops::RunningStats;
use crate::tensor::{Scalar, Shape, Tensor};

use super::spec::NetworkSpec;

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormParams<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub stats: RunningStats<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayerParams<T> {
    /// `filters × in_channels × 3 × 3`
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
    pub bn: Option<BatchNormParams<T>>,
}

/// Learned arrays of every convolution (and its batch norm) in spec order.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams<T = f32> {
    pub layers: Vec<ConvLayerParams<T>>,
}

/// A named view of one stored array, in container order.
pub struct NamedArray<'a, T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [T],
}

pub(crate) fn layer_name(index: usize) -> String {
    format!("conv{}", index + 1)
}

/// Names and shapes of every array a spec requires, in container order.
pub fn expected_arrays(spec: &NetworkSpec) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    for (i, (cin, filters, bn)) in spec.conv_layers().into_iter().enumerate() {
        let name = layer_name(i);
        out.push((format!("{name}.weight"), vec![filters, cin, 3, 3]));
        out.push((format!("{name}.bias"), vec![filters]));
        if bn {
            for part in ["gamma", "beta", "running_mean", "running_var"] {
                out.push((format!("{name}.bn.{part}"), vec![filters]));
            }
        }
    }
    out
}

impl<T: Scalar> NetworkParams<T> {
    /// He-normal convolution weights (std √(2/fan_in)), zero biases, unit
    /// gamma, zero beta, running statistics at (0, 1).
    pub fn init(spec: &NetworkSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = spec
            .conv_layers()
            .into_iter()
            .map(|(cin, filters, bn)| {
                let fan_in = (cin * 9) as f64;
                let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("valid std");
                let shape = Shape::new(filters, cin, 3, 3);
                let data = (0..shape.len()).map(|_| T::lit(normal.sample(&mut rng))).collect();
                ConvLayerParams {
                    weight: Tensor::from_vec(shape, data).expect("weight size"),
                    bias: vec![T::zero(); filters],
                    bn: bn.then(|| BatchNormParams {
                        gamma: vec![T::one(); filters],
                        beta: vec![T::zero(); filters],
                        stats: RunningStats::new(filters),
                    }),
                }
            })
            .collect();
        NetworkParams { layers }
    }

    pub fn named_arrays(&self) -> Vec<NamedArray<'_, T>> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let name = layer_name(i);
            out.push(NamedArray {
                name: format!("{name}.weight"),
                shape: layer.weight.shape().dims().to_vec(),
                data: layer.weight.data(),
            });
            out.push(NamedArray {
                name: format!("{name}.bias"),
                shape: vec![layer.bias.len()],
                data: &layer.bias,
            });
            if let Some(bn) = &layer.bn {
                for (part, data) in [
                    ("gamma", &bn.gamma),
                    ("beta", &bn.beta),
                    ("running_mean", &bn.stats.mean),
                    ("running_var", &bn.stats.var),
                ] {
                    out.push(NamedArray {
                        name: format!("{name}.bn.{part}"),
                        shape: vec![data.len()],
                        data,
                    });
                }
            }
        }
        out
    }

    /// Verifies every array against the shapes `spec` requires.
    pub fn check(&self, spec: &NetworkSpec) -> Result<()> {
        let expected = expected_arrays(spec);
        let actual = self.named_arrays();
        if expected.len() != actual.len() {
            return Err(Error::ParamCount {
                expected: expected.len(),
                found: actual.len(),
            });
        }
        for ((name, shape), arr) in expected.iter().zip(&actual) {
            if *name != arr.name || *shape != arr.shape {
                return Err(Error::ParamShape {
                    layer: name.clone(),
                    expected: shape.clone(),
                    found: arr.shape.clone(),
                });
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.named_arrays().iter().all(|a| a.data.iter().all(|v| v.is_finite()))
    }

    pub fn cast<U: Scalar>(&self) -> NetworkParams<U> {
        let conv = |v: &[T]| -> Vec<U> { v.iter().map(|x| U::lit(x.to_f64().unwrap())).collect() };
        NetworkParams {
            layers: self
                .layers
                .iter()
                .map(|l| ConvLayerParams {
                    weight: l.weight.cast(),
                    bias: conv(&l.bias),
                    bn: l.bn.as_ref().map(|bn| BatchNormParams {
                        gamma: conv(&bn.gamma),
                        beta: conv(&bn.beta),
                        stats: RunningStats {
                            mean: conv(&bn.stats.mean),
                            var: conv(&bn.stats.var),
                        },
                    }),
                })
                .collect(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.named_arrays().iter().map(|a| a.data.len()).sum()
    }
}

/// Gradients of one convolution layer and its batch norm.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads<T> {
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
    pub gamma: Option<Vec<T>>,
    pub beta: Option<Vec<T>>,
}

/// One buffer per learnable array, structurally congruent to
/// [`NetworkParams`] minus the running statistics. Also used for SGD velocity.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T = f32> {
    pub layers: Vec<LayerGrads<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(params: &NetworkParams<T>) -> Self {
        Gradients {
            layers: params
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weight: Tensor::zeros(l.weight.shape()),
                    bias: vec![T::zero(); l.bias.len()],
                    gamma: l.bn.as_ref().map(|bn| vec![T::zero(); bn.gamma.len()]),
                    beta: l.bn.as_ref().map(|bn| vec![T::zero(); bn.beta.len()]),
                })
                .collect(),
        }
    }

    /// True when `self` has exactly the layout of `params`' learnable arrays.
    pub fn congruent_with(&self, params: &NetworkParams<T>) -> bool {
        self.layers.len() == params.layers.len()
            && self.layers.iter().zip(&params.layers).all(|(g, p)| {
                g.weight.shape() == p.weight.shape()
                    && g.bias.len() == p.bias.len()
                    && match (&p.bn, &g.gamma, &g.beta) {
                        (Some(bn), Some(gg), Some(gb)) => gg.len() == bn.gamma.len() && gb.len() == bn.beta.len(),
                        (None, None, None) => true,
                        _ => false,
                    }
            })
    }

    pub fn all_zero(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weight.data().iter().all(|v| v.is_zero())
                && l.bias.iter().all(|v| v.is_zero())
                && l.gamma.iter().flatten().all(|v| v.is_zero())
                && l.beta.iter().flatten().all(|v| v.is_zero())
        })
    }
}

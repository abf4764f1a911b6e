use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    /// 3×3 convolution. All but the final convolution are followed by
    /// batch normalization and ReLU.
    Conv { filters: usize, bn_relu: bool },
    MaxPool,
    /// Index-driven upsampling, paired last-in-first-out with a `MaxPool`.
    Unpool,
    Softmax,
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Conv { filters, .. } => write!(f, "conv({filters})"),
            LayerSpec::MaxPool => f.write_str("maxpool"),
            LayerSpec::Unpool => f.write_str("upsample"),
            LayerSpec::Softmax => f.write_str("softmax"),
        }
    }
}

/// Encoder groups of the full-size network: (convolutions, filters), each
/// followed by a max pool.
const ENCODER: [(usize, usize); 5] = [(2, 64), (2, 128), (3, 256), (3, 512), (3, 512)];

/// Decoder groups, each preceded by an upsampling layer. The last filter
/// count of the last group is replaced by the class count.
const DECODER: [&[usize]; 5] = [&[512, 512, 512], &[512, 512, 256], &[256, 256, 128], &[128, 64], &[64, 2]];

pub const INPUT_CHANNELS: usize = 3;
pub const CLASSES: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    layers: Vec<LayerSpec>,
    in_channels: usize,
    classes: usize,
    scale: f64,
}

fn scaled(count: usize, scale: f64) -> usize {
    // the small offset keeps exact products like 0.3·10 from rounding up
    ((count as f64 * scale - 1e-9).ceil() as usize).max(1)
}

/// The 26-convolution encoder-decoder with every filter count scaled by
/// `scale` (rounded up). The final convolution always has two filters.
pub fn build_default_spec(scale: f64) -> NetworkSpec {
    assert!(scale > 0.0 && scale.is_finite(), "network scale must be positive, got {scale}");
    let mut layers = Vec::new();
    for (convs, filters) in ENCODER {
        for _ in 0..convs {
            layers.push(LayerSpec::Conv {
                filters: scaled(filters, scale),
                bn_relu: true,
            });
        }
        layers.push(LayerSpec::MaxPool);
    }
    for (g, group) in DECODER.iter().enumerate() {
        layers.push(LayerSpec::Unpool);
        for (i, &filters) in group.iter().enumerate() {
            let last = g + 1 == DECODER.len() && i + 1 == group.len();
            layers.push(if last {
                LayerSpec::Conv {
                    filters: CLASSES,
                    bn_relu: false,
                }
            } else {
                LayerSpec::Conv {
                    filters: scaled(filters, scale),
                    bn_relu: true,
                }
            });
        }
    }
    layers.push(LayerSpec::Softmax);
    NetworkSpec::new(INPUT_CHANNELS, CLASSES, scale, layers).expect("default layout is valid")
}

impl NetworkSpec {
    /// Validates a custom layer list: pools and unpools pair LIFO with
    /// matching channel counts, and the list ends in a bare convolution with
    /// `classes` filters followed by softmax.
    pub fn new(in_channels: usize, classes: usize, scale: f64, layers: Vec<LayerSpec>) -> Result<Self> {
        if in_channels == 0 || classes < 2 {
            return Err(Error::InvalidSpec(format!(
                "need ≥1 input channel and ≥2 classes, got {in_channels} and {classes}"
            )));
        }
        let n = layers.len();
        if n < 2 || layers[n - 1] != LayerSpec::Softmax {
            return Err(Error::InvalidSpec("layer list must end with softmax".into()));
        }
        if layers[n - 2]
            != (LayerSpec::Conv {
                filters: classes,
                bn_relu: false,
            })
        {
            return Err(Error::InvalidSpec(format!(
                "the layer before softmax must be a bare convolution with {classes} filters"
            )));
        }
        let mut channels = in_channels;
        let mut pool_stack = Vec::new();
        for (i, layer) in layers[..n - 1].iter().enumerate() {
            match *layer {
                LayerSpec::Conv { filters, bn_relu } => {
                    if filters == 0 {
                        return Err(Error::InvalidSpec(format!("layer {i} has zero filters")));
                    }
                    if !bn_relu && i != n - 2 {
                        return Err(Error::InvalidSpec(format!(
                            "only the final convolution may omit batch norm and ReLU (layer {i})"
                        )));
                    }
                    channels = filters;
                }
                LayerSpec::MaxPool => pool_stack.push(channels),
                LayerSpec::Unpool => match pool_stack.pop() {
                    Some(c) if c == channels => {}
                    Some(c) => {
                        return Err(Error::InvalidSpec(format!(
                            "upsample at layer {i} sees {channels} channels but its pool saw {c}"
                        )))
                    }
                    None => return Err(Error::InvalidSpec(format!("upsample at layer {i} has no matching pool"))),
                },
                LayerSpec::Softmax => {
                    return Err(Error::InvalidSpec(format!("softmax at layer {i} is not last")));
                }
            }
        }
        if !pool_stack.is_empty() {
            return Err(Error::InvalidSpec(format!("{} pools lack an upsample", pool_stack.len())));
        }
        Ok(NetworkSpec {
            layers,
            in_channels,
            classes,
            scale,
        })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// `(in_channels, filters, bn_relu)` for every convolution, in order.
    pub fn conv_layers(&self) -> Vec<(usize, usize, bool)> {
        let mut channels = self.in_channels;
        let mut out = Vec::new();
        for layer in &self.layers {
            if let LayerSpec::Conv { filters, bn_relu } = *layer {
                out.push((channels, filters, bn_relu));
                channels = filters;
            }
        }
        out
    }

    pub fn pool_count(&self) -> usize {
        self.layers.iter().filter(|l| **l == LayerSpec::MaxPool).count()
    }
}

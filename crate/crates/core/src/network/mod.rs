//! The encoder-decoder segmentation network: layer layout, parameters,
//! forward/backward passes and the weight container.

mod model;
mod params;
mod spec;
mod weights;

pub use model::{backward, forward, predict, ForwardCache};
pub use params::{
    expected_arrays, BatchNormParams, ConvLayerParams, Gradients, LayerGrads, NamedArray, NetworkParams,
};
pub use spec::{build_default_spec, LayerSpec, NetworkSpec, CLASSES, INPUT_CHANNELS};
pub use weights::{decode_params, encode_params, load_params, save_params, MAGIC, VERSION};

//! Pixel-wise ear detection.
//!
//! A convolutional encoder-decoder labels every pixel as ear or non-ear; the
//! binary output is cleaned by keeping at most the two largest connected
//! regions. The crate also carries the training loop (median-frequency class
//! weights, SGD with momentum), the pixel-wise evaluation metrics with their
//! aggregate reports, and dataset plumbing including a synthetic corpus.
//!
//! ```no_run
//! use earseg::{build_default_spec, dataset, pipeline, postprocess::Connectivity, NetworkParams};
//!
//! let spec = build_default_spec(0.125);
//! let params = NetworkParams::<f32>::init(&spec, 0);
//! let sample = &dataset::generate_synthetic(&Default::default()).unwrap()[0];
//! let det = pipeline::detect(&spec, &params, &sample.image, Connectivity::Eight).unwrap();
//! assert!(det.cleaned.is_subset_of(&det.raw));
//! ```

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod mask;
pub mod network;
pub mod ops;
pub mod pipeline;
pub mod postprocess;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use mask::{BoundingBox, LabelMask};
pub use network::{build_default_spec, NetworkParams, NetworkSpec};
pub use tensor::{Shape, Tensor};

/// Derives an independent seed for `stream` from a master seed (SplitMix64).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed.wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

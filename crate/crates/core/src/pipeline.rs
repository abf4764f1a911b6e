//! Network inference followed by postprocessing, and per-image scoring.

use crate::dataset::{images_to_tensor, SampleRecord};
use crate::error::Result;
use crate::evaluation::{evaluate_masks, MetricsRecord};
use crate::mask::LabelMask;
use crate::network::{predict, NetworkParams, NetworkSpec};
use crate::postprocess::{postprocess_mask, threshold, Connectivity};
use crate::tensor::Scalar;

/// Segmentation output of one image before and after postprocessing.
#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub raw: LabelMask,
    pub cleaned: LabelMask,
}

pub fn detect<T: Scalar>(
    spec: &NetworkSpec,
    params: &NetworkParams<T>,
    image: &image::RgbImage,
    connectivity: Connectivity,
) -> Result<Detection> {
    let probs = predict(spec, params, &images_to_tensor::<T>(&[image])?)?;
    let raw = threshold(&probs, 0)?;
    let cleaned = postprocess_mask(&raw, connectivity);
    Ok(Detection { raw, cleaned })
}

/// Runs the full pipeline on each sample and scores the postprocessed masks.
pub fn evaluate_samples<T: Scalar>(
    spec: &NetworkSpec,
    params: &NetworkParams<T>,
    samples: &[SampleRecord],
    connectivity: Connectivity,
) -> Result<Vec<MetricsRecord>> {
    samples
        .iter()
        .map(|s| {
            let d = detect(spec, params, &s.image, connectivity)?;
            Ok(MetricsRecord {
                id: s.id.clone(),
                metrics: evaluate_masks(&s.mask, &d.cleaned)?,
            })
        })
        .collect()
}

//! Layer lists of reference networks for pipeline simulation.

use crate::conv::LayerGeometry;
use crate::error::Result;

use super::PipelineLayer;

/// Output channels of the 13 convolutions of VGG16; `0` marks a 2x2 max-pool.
const VGG16_PLAN: [usize; 18] = [64, 64, 0, 128, 128, 0, 256, 256, 256, 0, 512, 512, 512, 0, 512, 512, 512, 0];

/// VGG16 feature extractor on a `3 x side x side` input: 13 distributed 3x3
/// convolutions (stride 1, padding 1), each followed by a local ReLU, with
/// local 2x2 max-pools in between.
pub fn vgg16_like(side: usize) -> Result<Vec<PipelineLayer>> {
    let mut layers = Vec::new();
    let (mut c, mut h) = (3usize, side);
    for (i, &out) in VGG16_PLAN.iter().enumerate() {
        if out == 0 {
            layers.push(PipelineLayer::Local { name: format!("pool{i}"), flops: (c * h * h) as f64 });
            h /= 2;
            continue;
        }
        let geometry = LayerGeometry::new(c, out, 3, 1, h + 2, h + 2)?;
        layers.push(PipelineLayer::Distributed { geometry });
        c = out;
        layers.push(PipelineLayer::Local { name: format!("relu{i}"), flops: (c * h * h) as f64 });
    }
    Ok(layers)
}

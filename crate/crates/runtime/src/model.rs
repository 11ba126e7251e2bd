//! Model description, weight loading and master-local layers.
//!
//! A model config is JSON:
//!
//! ```json
//! {
//!   "input": { "channels": 3, "height": 16, "width": 32 },
//!   "weights_file": "weights.bin",
//!   "layers": [
//!     { "type": "distributed", "conv": { "in_channels": 3, "out_channels": 8, "kernel_size": 3,
//!       "stride": 1, "padding": 1, "bias": true, "weights": { "offset": 0, "length": 896 } } },
//!     { "type": "local", "op": { "kind": "relu" } },
//!     { "type": "local", "op": { "kind": "max_pool", "size": 2 } }
//!   ]
//! }
//! ```
//!
//! `weights_file` is resolved relative to the config file and holds raw
//! little-endian `f32` values. Each conv entry indexes a byte range holding
//! its `(C_O, C_I, K, K)` weights followed by `C_O` bias values when `bias`
//! is set.

use std::path::{Path, PathBuf};

use coded_conv::{Conv64, ConvSpec, Tensor4, Tensor64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RuntimeError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

/// Byte range inside the weights file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightIndex {
    pub offset: u64,
    pub length: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvEntry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub stride: usize,
    #[serde(default)]
    pub padding: usize,
    #[serde(default)]
    pub bias: bool,
    pub weights: WeightIndex,
}

impl ConvEntry {
    /// Number of `f32` values the entry reads.
    pub fn value_count(&self) -> usize {
        let w = self.out_channels * self.in_channels * self.kernel_size * self.kernel_size;
        w + if self.bias { self.out_channels } else { 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LocalOp {
    Relu,
    /// Non-overlapping `size x size` max-pool.
    MaxPool { size: usize },
    Conv(ConvEntry),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerEntry {
    Distributed { conv: ConvEntry },
    Local { op: LocalOp },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input: InputShape,
    pub weights_file: PathBuf,
    pub layers: Vec<LayerEntry>,
}

/// Loaded layer with weights in double precision.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Distributed(Conv64),
    Local(LocalLayer),
}

#[derive(Debug, Clone, PartialEq)]
pub enum LocalLayer {
    Relu,
    MaxPool(usize),
    Conv(Conv64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub input: InputShape,
    pub layers: Vec<Layer>,
}

impl ModelConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// Loads the weights, resolving the weights file against `base_dir`.
    pub fn load(&self, base_dir: &Path) -> Result<Model> {
        let blob = std::fs::read(base_dir.join(&self.weights_file))?;
        self.load_from_bytes(&blob)
    }

    pub fn load_from_bytes(&self, blob: &[u8]) -> Result<Model> {
        let conv = |e: &ConvEntry, i: usize| load_conv(e, blob).map_err(|m| RuntimeError::Config(format!("layer {i}: {m}")));
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                Ok(match l {
                    LayerEntry::Distributed { conv: e } => Layer::Distributed(conv(e, i)?),
                    LayerEntry::Local { op: LocalOp::Relu } => Layer::Local(LocalLayer::Relu),
                    LayerEntry::Local { op: LocalOp::MaxPool { size } } => {
                        if *size == 0 {
                            return Err(RuntimeError::Config(format!("layer {i}: pool size must be positive")));
                        }
                        Layer::Local(LocalLayer::MaxPool(*size))
                    }
                    LayerEntry::Local { op: LocalOp::Conv(e) } => Layer::Local(LocalLayer::Conv(conv(e, i)?)),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let model = Model { input: self.input, layers };
        model.output_dims()?;
        Ok(model)
    }
}

/// Reads a whole config and its weights.
pub fn load_model(config_path: &Path) -> Result<Model> {
    let cfg = ModelConfig::from_path(config_path)?;
    cfg.load(config_path.parent().unwrap_or(Path::new(".")))
}

fn load_conv(e: &ConvEntry, blob: &[u8]) -> std::result::Result<Conv64, String> {
    let want = 4 * e.value_count() as u64;
    if e.weights.length != want {
        return Err(format!("weight range holds {} bytes, layer needs {want}", e.weights.length));
    }
    let end = e.weights.offset.checked_add(e.weights.length).ok_or("weight range overflows")?;
    if end > blob.len() as u64 {
        return Err(format!("weight range ends at byte {end}, file has {}", blob.len()));
    }
    let values: Vec<f64> = blob[e.weights.offset as usize..end as usize]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let n_w = e.out_channels * e.in_channels * e.kernel_size * e.kernel_size;
    let weights = Tensor4::from_vec([e.out_channels, e.in_channels, e.kernel_size, e.kernel_size], values[..n_w].to_vec())
        .map_err(|m| m.to_string())?;
    let bias = e.bias.then(|| values[n_w..].to_vec());
    ConvSpec::new(e.in_channels, e.out_channels, e.kernel_size, e.stride, e.padding, weights, bias).map_err(|m| m.to_string())
}

impl LocalLayer {
    pub fn apply(&self, x: &Tensor64) -> Result<Tensor64> {
        Ok(match self {
            LocalLayer::Relu => x.map(|v| v.max(0.0))?,
            LocalLayer::MaxPool(s) => max_pool(x, *s)?,
            LocalLayer::Conv(spec) => spec.forward(x)?,
        })
    }

    /// Elementwise operation count, used for the local phase estimate.
    pub fn flops(&self, x: &Tensor64) -> f64 {
        match self {
            LocalLayer::Relu | LocalLayer::MaxPool(_) => x.len() as f64,
            LocalLayer::Conv(spec) => spec.geometry(x.height(), x.width()).map(|g| g.flops()).unwrap_or(0.0),
        }
    }
}

/// `s x s` max-pool with stride `s`; trailing rows and columns are dropped.
pub fn max_pool(x: &Tensor64, s: usize) -> Result<Tensor64> {
    let [b, c, h, w] = x.dims();
    let (ho, wo) = (h / s, w / s);
    if ho == 0 || wo == 0 {
        return Err(RuntimeError::Config(format!("pool {s} larger than {h}x{w} input")));
    }
    Ok(Tensor4::from_fn([b, c, ho, wo], |bi, ci, i, j| {
        let mut m = f64::NEG_INFINITY;
        for di in 0..s {
            for dj in 0..s {
                m = m.max(x.get(bi, ci, i * s + di, j * s + dj));
            }
        }
        m
    })?)
}

impl Model {
    /// Shape after every layer, checking channel counts along the way.
    pub fn output_dims(&self) -> Result<Vec<[usize; 4]>> {
        let mut d = [1, self.input.channels, self.input.height, self.input.width];
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            d = match l {
                Layer::Distributed(spec) | Layer::Local(LocalLayer::Conv(spec)) => {
                    if spec.in_channels != d[1] {
                        return Err(RuntimeError::Config(format!("layer {i} expects {} channels, gets {}", spec.in_channels, d[1])));
                    }
                    let g = spec.geometry(d[2], d[3]).map_err(|e| RuntimeError::Config(format!("layer {i}: {e}")))?;
                    [1, spec.out_channels, g.h_out, g.w_out]
                }
                Layer::Local(LocalLayer::Relu) => d,
                Layer::Local(LocalLayer::MaxPool(s)) => {
                    if d[2] < *s || d[3] < *s {
                        return Err(RuntimeError::Config(format!("layer {i}: pool {s} larger than {}x{}", d[2], d[3])));
                    }
                    [d[0], d[1], d[2] / s, d[3] / s]
                }
            };
            out.push(d);
        }
        Ok(out)
    }

    /// Uniform `[-1, 1)` input of the configured shape.
    pub fn random_input(&self, seed: u64) -> Tensor64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let InputShape { channels, height, width } = self.input;
        Tensor4::from_fn([1, channels, height, width], |_, _, _, _| rng.random_range(-1.0f32..1.0) as f64)
            .expect("configured input shape is non-empty")
    }

    /// Single-process inference, the reference for distributed runs.
    pub fn forward_local(&self, x: &Tensor64) -> Result<Tensor64> {
        self.layers.iter().try_fold(x.clone(), |h, l| match l {
            Layer::Distributed(spec) => Ok(spec.forward(&h)?),
            Layer::Local(op) => op.apply(&h),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob(values: &[f32]) -> Vec<u8> {
        values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    fn config() -> ModelConfig {
        serde_json::from_str(
            r#"{"input": {"channels": 1, "height": 4, "width": 4}, "weights_file": "w.bin",
                "layers": [
                  {"type": "distributed", "conv": {"in_channels": 1, "out_channels": 1, "kernel_size": 1, "stride": 1,
                    "bias": true, "weights": {"offset": 0, "length": 8}}},
                  {"type": "local", "op": {"kind": "relu"}},
                  {"type": "local", "op": {"kind": "max_pool", "size": 2}}
                ]}"#,
        )
        .unwrap()
    }

    #[test]
    fn scale_shift_relu_pool() {
        let model = config().load_from_bytes(&blob(&[2.0, -1.0])).unwrap();
        assert_eq!(model.output_dims().unwrap(), vec![[1, 1, 4, 4], [1, 1, 4, 4], [1, 1, 2, 2]]);
        let x = Tensor4::from_fn([1, 1, 4, 4], |_, _, i, j| (i * 4 + j) as f64 * 0.25).unwrap();
        let y = model.forward_local(&x).unwrap();
        assert_eq!(y.as_slice(), &[1.5, 2.5, 5.5, 6.5]);
    }

    #[test]
    fn rejects_bad_weight_index() {
        assert!(config().load_from_bytes(&blob(&[2.0])).is_err());
        let mut cfg = config();
        if let LayerEntry::Distributed { conv } = &mut cfg.layers[0] {
            conv.weights.length = 4;
        }
        assert!(cfg.load_from_bytes(&blob(&[2.0, -1.0])).is_err());
    }

    #[test]
    fn rejects_channel_mismatch() {
        let mut cfg = config();
        cfg.input.channels = 2;
        assert!(cfg.load_from_bytes(&blob(&[2.0, -1.0])).is_err());
    }

    #[test]
    fn pool_drops_trailing_columns() {
        let x = Tensor4::from_fn([1, 1, 2, 5], |_, _, i, j| (i * 5 + j) as f64).unwrap();
        assert_eq!(max_pool(&x, 2).unwrap().as_slice(), &[6.0, 8.0]);
        assert!(max_pool(&x, 3).is_err());
    }
}

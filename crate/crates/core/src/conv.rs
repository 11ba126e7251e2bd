//! Direct 2D convolution and layer geometry.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

/// Number of valid kernel placements along one axis of an already padded
/// input: `floor((len - kernel) / stride) + 1`.
pub fn output_len(input: usize, kernel: usize, stride: usize) -> Result<usize> {
    if kernel == 0 || stride == 0 {
        return Err(Error::InvalidGeometry(format!("kernel {kernel} and stride {stride} must be positive")));
    }
    if input < kernel {
        return Err(Error::InvalidGeometry(format!("input length {input} smaller than kernel {kernel}")));
    }
    Ok((input - kernel) / stride + 1)
}

/// Output `(H_O, W_O)` for padded input dims `(h_in, w_in)`.
pub fn output_dims(kernel: usize, stride: usize, h_in: usize, w_in: usize) -> Result<(usize, usize)> {
    Ok((output_len(h_in, kernel, stride)?, output_len(w_in, kernel, stride)?))
}

/// One convolutional layer: square `kernel_size` kernel, `stride` on both
/// axes, symmetric zero `padding`, weights `(C_O, C_I, K, K)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvSpec<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub padding: usize,
    pub weights: Tensor4<T>,
    pub bias: Option<Vec<T>>,
}

impl<T: Scalar> ConvSpec<T> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        stride: usize,
        padding: usize,
        weights: Tensor4<T>,
        bias: Option<Vec<T>>,
    ) -> Result<Self> {
        if kernel_size == 0 || stride == 0 {
            return Err(Error::InvalidGeometry(format!(
                "kernel {kernel_size} and stride {stride} must be positive"
            )));
        }
        let want = [out_channels, in_channels, kernel_size, kernel_size];
        if weights.dims() != want {
            return Err(Error::InvalidGeometry(format!("weights {:?}, expected {want:?}", weights.dims())));
        }
        if let Some(b) = &bias {
            if b.len() != out_channels {
                return Err(Error::InvalidGeometry(format!("bias has {} values for {out_channels} channels", b.len())));
            }
            if b.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument("non-finite bias".into()));
            }
        }
        Ok(Self { in_channels, out_channels, kernel_size, stride, padding, weights, bias })
    }

    /// Geometry of this layer applied to an unpadded `(h, w)` input.
    pub fn geometry(&self, h: usize, w: usize) -> Result<LayerGeometry> {
        LayerGeometry::new(
            self.in_channels,
            self.out_channels,
            self.kernel_size,
            self.stride,
            h + 2 * self.padding,
            w + 2 * self.padding,
        )
    }

    /// Adds the per-channel bias to a `(B, C_O, H, W)` tensor.
    pub fn add_bias(&self, y: &Tensor4<T>) -> Result<Tensor4<T>> {
        let Some(bias) = &self.bias else {
            return Ok(y.clone());
        };
        if y.channels() != self.out_channels {
            return Err(Error::InvalidGeometry(format!("{} channels, bias has {}", y.channels(), bias.len())));
        }
        let plane = y.height() * y.width();
        let data = y
            .as_slice()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bias[(i / plane) % self.out_channels])
            .collect();
        Tensor4::from_vec(y.dims(), data)
    }

    /// Same layer in another precision.
    pub fn cast<U: Scalar>(&self) -> ConvSpec<U> {
        ConvSpec {
            in_channels: self.in_channels,
            out_channels: self.out_channels,
            kernel_size: self.kernel_size,
            stride: self.stride,
            padding: self.padding,
            weights: self.weights.cast(),
            bias: self
                .bias
                .as_ref()
                .map(|b| b.iter().map(|v| U::from_f64_lossy(v.to_f64_lossless())).collect()),
        }
    }

    /// Swaps the kernel's height and width, matching [`Tensor4::transpose_hw`]
    /// on the input.
    pub fn transpose_hw(&self) -> Self {
        Self { weights: self.weights.transpose_hw(), ..self.clone() }
    }

    /// Forward pass on an unpadded input: pad, convolve, add bias.
    pub fn forward(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        conv2d(&x.pad(self.padding), self, true)
    }
}

/// Shape-only description of a convolutional layer on a padded input.
///
/// This is all the latency model and the optimizer need.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerGeometry {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    /// Padded input height.
    pub h_in: usize,
    /// Padded input width.
    pub w_in: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl LayerGeometry {
    pub fn new(c_in: usize, c_out: usize, kernel: usize, stride: usize, h_in: usize, w_in: usize) -> Result<Self> {
        if c_in == 0 || c_out == 0 {
            return Err(Error::InvalidGeometry("channel counts must be positive".into()));
        }
        let (h_out, w_out) = output_dims(kernel, stride, h_in, w_in)?;
        Ok(Self { c_in, c_out, kernel, stride, h_in, w_in, h_out, w_out })
    }

    /// Total FLOPs of the undistributed layer (`2 C_I K^2` per output element).
    pub fn flops(&self) -> f64 {
        2.0 * (self.c_out * self.h_out * self.w_out * self.c_in * self.kernel * self.kernel) as f64
    }
}

/// Direct convolution of an already padded input.
///
/// Every output element is accumulated over `(c_in, kh, kw)` in that order,
/// then the bias is added when `apply_bias` is set.
pub fn conv2d<T: Scalar>(x_padded: &Tensor4<T>, spec: &ConvSpec<T>, apply_bias: bool) -> Result<Tensor4<T>> {
    conv2d_cancellable(x_padded, spec, apply_bias, || false)?
        .ok_or_else(|| Error::InvalidArgument("convolution cancelled".into()))
}

/// [`conv2d`] that polls `cancelled` before each output column and returns
/// `Ok(None)` as soon as it reports true.
pub fn conv2d_cancellable<T: Scalar>(
    x_padded: &Tensor4<T>,
    spec: &ConvSpec<T>,
    apply_bias: bool,
    mut cancelled: impl FnMut() -> bool,
) -> Result<Option<Tensor4<T>>> {
    let [bn, cin, hin, win] = x_padded.dims();
    if cin != spec.in_channels {
        return Err(Error::InvalidGeometry(format!(
            "input has {cin} channels, layer expects {}",
            spec.in_channels
        )));
    }
    let (k, s, cout) = (spec.kernel_size, spec.stride, spec.out_channels);
    let (hout, wout) = output_dims(k, s, hin, win)?;
    let xs = x_padded.as_slice();
    let ws = spec.weights.as_slice();
    let mut out = vec![T::zero(); bn * cout * hout * wout];
    for ow in 0..wout {
        if cancelled() {
            return Ok(None);
        }
        let col0 = ow * s;
        for b in 0..bn {
            for co in 0..cout {
                for oh in 0..hout {
                    let row0 = oh * s;
                    let mut acc = T::zero();
                    for ci in 0..cin {
                        let xbase = (b * cin + ci) * hin;
                        let wbase = (co * cin + ci) * k;
                        for kh in 0..k {
                            let xrow = (xbase + row0 + kh) * win + col0;
                            let wrow = (wbase + kh) * k;
                            for kw in 0..k {
                                acc += ws[wrow + kw] * xs[xrow + kw];
                            }
                        }
                    }
                    out[((b * cout + co) * hout + oh) * wout + ow] = acc;
                }
            }
        }
    }
    let y = Tensor4::from_vec([bn, cout, hout, wout], out)?;
    if apply_bias {
        spec.add_bias(&y).map(Some)
    } else {
        Ok(Some(y))
    }
}

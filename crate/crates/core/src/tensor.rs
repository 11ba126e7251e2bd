//! Dense 4-D feature maps in row-major `(B, C, H, W)` layout.
//!
//! Width is the innermost axis, so a width slice of one `(b, c, h)` row is a
//! contiguous run of `W` elements.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Magic bytes of the binary tensor container.
pub const CONTAINER_MAGIC: [u8; 4] = *b"CCT1";
/// Header length of the binary tensor container.
pub const CONTAINER_HEADER_LEN: usize = 20;

/// Immutable dense tensor with dims `(batch, channels, height, width)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<T> {
    dims: [usize; 4],
    data: Vec<T>,
}

impl<T: Scalar> Tensor4<T> {
    /// Builds a tensor, checking the length and that every value is finite.
    pub fn from_vec(dims: [usize; 4], data: Vec<T>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidGeometry(format!("all dims must be positive, got {dims:?}")));
        }
        let len = dims.iter().product::<usize>();
        if data.len() != len {
            return Err(Error::DimMismatch(format!(
                "dims {dims:?} need {len} values, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: [usize; 4]) -> Result<Self> {
        Self::from_vec(dims, vec![T::zero(); dims.iter().product()])
    }

    /// Fills a tensor from `f(b, c, h, w)`.
    pub fn from_fn(dims: [usize; 4], mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Result<Self> {
        let [bn, cn, hn, wn] = dims;
        let mut data = Vec::with_capacity(dims.iter().product());
        for b in 0..bn {
            for c in 0..cn {
                for h in 0..hn {
                    for w in 0..wn {
                        data.push(f(b, c, h, w));
                    }
                }
            }
        }
        Self::from_vec(dims, data)
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn batch(&self) -> usize {
        self.dims[0]
    }

    pub fn channels(&self) -> usize {
        self.dims[1]
    }

    pub fn height(&self) -> usize {
        self.dims[2]
    }

    pub fn width(&self) -> usize {
        self.dims[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn offset(&self, b: usize, c: usize, h: usize, w: usize) -> usize {
        ((b * self.dims[1] + c) * self.dims[2] + h) * self.dims[3] + w
    }

    #[inline]
    pub fn get(&self, b: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.offset(b, c, h, w)]
    }

    /// Zero-pads height and width by `p` on every side.
    pub fn pad(&self, p: usize) -> Self {
        if p == 0 {
            return self.clone();
        }
        let [bn, cn, hn, wn] = self.dims;
        let (hp, wp) = (hn + 2 * p, wn + 2 * p);
        let mut data = vec![T::zero(); bn * cn * hp * wp];
        for b in 0..bn {
            for c in 0..cn {
                for h in 0..hn {
                    let src = self.offset(b, c, h, 0);
                    let dst = ((b * cn + c) * hp + h + p) * wp + p;
                    data[dst..dst + wn].copy_from_slice(&self.data[src..src + wn]);
                }
            }
        }
        Self { dims: [bn, cn, hp, wp], data }
    }

    /// Keeps width columns `[start, end)`.
    pub fn slice_width(&self, start: usize, end: usize) -> Result<Self> {
        let wn = self.width();
        if start >= end || end > wn {
            return Err(Error::OutOfRange(format!("width slice [{start}, {end}) of width {wn}")));
        }
        let rows = self.dims[0] * self.dims[1] * self.dims[2];
        let mut data = Vec::with_capacity(rows * (end - start));
        for row in self.data.chunks_exact(wn) {
            data.extend_from_slice(&row[start..end]);
        }
        Ok(Self { dims: [self.dims[0], self.dims[1], self.dims[2], end - start], data })
    }

    /// Concatenates tensors along width. Parts must agree on `B`, `C` and `H`.
    pub fn concat_width(parts: &[Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        let [bn, cn, hn, _] = first.dims;
        if let Some(bad) = parts.iter().find(|p| p.dims[..3] != first.dims[..3]) {
            return Err(Error::DimMismatch(format!(
                "cannot concat {:?} with {:?} along width",
                first.dims, bad.dims
            )));
        }
        let total_w: usize = parts.iter().map(|p| p.width()).sum();
        let mut data = Vec::with_capacity(bn * cn * hn * total_w);
        for row in 0..bn * cn * hn {
            for p in parts {
                let w = p.width();
                data.extend_from_slice(&p.data[row * w..(row + 1) * w]);
            }
        }
        Ok(Self { dims: [bn, cn, hn, total_w], data })
    }

    /// Row-major flattening.
    pub fn flatten(&self) -> Vec<T> {
        self.data.clone()
    }

    /// Inverse of [`Tensor4::flatten`].
    pub fn restore(values: Vec<T>, dims: [usize; 4]) -> Result<Self> {
        Self::from_vec(dims, values)
    }

    /// Swaps height and width of every `(b, c)` plane.
    ///
    /// Splitting always runs along width; a caller with `H > W` transposes the
    /// input and the kernel, runs the layer, and transposes the output back.
    pub fn transpose_hw(&self) -> Self {
        let [bn, cn, hn, wn] = self.dims;
        let mut data = Vec::with_capacity(self.data.len());
        for b in 0..bn {
            for c in 0..cn {
                for w in 0..wn {
                    for h in 0..hn {
                        data.push(self.get(b, c, h, w));
                    }
                }
            }
        }
        Self { dims: [bn, cn, wn, hn], data }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Result<Self> {
        Self::from_vec(self.dims, self.data.iter().map(|&v| f(v)).collect())
    }

    /// Converts every element to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Tensor4<U> {
        Tensor4 {
            dims: self.dims,
            data: self.data.iter().map(|v| U::from_f64_lossy(v.to_f64_lossless())).collect(),
        }
    }

    /// Largest absolute elementwise difference.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        if self.dims != other.dims {
            return Err(Error::DimMismatch(format!("{:?} vs {:?}", self.dims, other.dims)));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.to_f64_lossless() - b.to_f64_lossless()).abs())
            .fold(0.0, f64::max))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.to_f64_lossless().abs()).fold(0.0, f64::max)
    }

    /// `max|a - b| / max(max|b|, 1e-30)`, the norm-wise relative error against
    /// a reference tensor.
    pub fn relative_error(&self, reference: &Self) -> Result<f64> {
        Ok(self.max_abs_diff(reference)? / reference.max_abs().max(1e-30))
    }

    /// Serialises into the binary container: `"CCT1"`, `B, C, H, W` as
    /// little-endian `u32`, then `f32` little-endian values.
    pub fn to_container_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(CONTAINER_HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(&CONTAINER_MAGIC);
        for d in self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.data {
            let x = v.to_f64_lossless() as f32;
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    /// Parses exactly one container occupying the whole buffer.
    pub fn from_container_bytes(bytes: &[u8]) -> Result<Self> {
        let (t, used) = Self::parse_container_prefix(bytes)?;
        if used != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes after tensor", bytes.len() - used)));
        }
        Ok(t)
    }

    /// Parses one container from the front of `bytes`, returning it with the
    /// number of bytes consumed.
    pub fn parse_container_prefix(bytes: &[u8]) -> Result<(Self, usize)> {
        if bytes.len() < CONTAINER_HEADER_LEN {
            return Err(Error::Format(format!("header needs {CONTAINER_HEADER_LEN} bytes, got {}", bytes.len())));
        }
        if bytes[..4] != CONTAINER_MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let mut dims = [0usize; 4];
        for (i, d) in dims.iter_mut().enumerate() {
            let at = 4 + 4 * i;
            *d = u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
        }
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format("element count overflows".into()))?;
        let body = count
            .checked_mul(4)
            .ok_or_else(|| Error::Format("element count overflows".into()))?;
        let end = CONTAINER_HEADER_LEN + body;
        if bytes.len() < end {
            return Err(Error::Format(format!("body needs {body} bytes, got {}", bytes.len() - CONTAINER_HEADER_LEN)));
        }
        let data = bytes[CONTAINER_HEADER_LEN..end]
            .chunks_exact(4)
            .map(|c| T::from_f64_lossy(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect();
        Ok((Self::from_vec(dims, data).map_err(|e| Error::Format(e.to_string()))?, end))
    }

    pub fn write_container<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(&self.to_container_bytes())
    }

    pub fn read_container<R: Read>(mut r: R) -> std::io::Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Self::from_container_bytes(&buf).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

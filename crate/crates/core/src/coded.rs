//! Coded execution of one layer: split, encode, decode, reassemble.
//!
//! The master pads the input, cuts it into `k` overlapping pieces, encodes
//! them into `n` coded pieces, collects any `k` worker results, decodes them
//! and concatenates the decoded pieces with the remainder it computed itself.

use crate::conv::{conv2d, ConvSpec};
use crate::error::{Error, Result};
use crate::mds::GenerationMatrix;
use crate::scalar::Scalar;
use crate::splitter::{plan_split, SplitPlan};
use crate::tensor::Tensor4;

/// Everything the master needs to run a layer with `k` of `n` pieces.
#[derive(Debug, Clone)]
pub struct CodedLayer {
    pub plan: SplitPlan,
    pub code: GenerationMatrix,
}

impl CodedLayer {
    /// Plan for a layer with padded input width `in_width`.
    pub fn new(kernel: usize, stride: usize, in_width: usize, n: usize, k: usize) -> Result<Self> {
        if k >= n {
            return Err(Error::InvalidArgument(format!("coded execution needs k < n, got k={k}, n={n}")));
        }
        Ok(Self { plan: plan_split(kernel, stride, in_width, k)?, code: GenerationMatrix::vandermonde(n, k)? })
    }

    pub fn for_spec<T: Scalar>(spec: &ConvSpec<T>, padded_width: usize, n: usize, k: usize) -> Result<Self> {
        Self::new(spec.kernel_size, spec.stride, padded_width, n, k)
    }

    pub fn n(&self) -> usize {
        self.code.n()
    }

    pub fn k(&self) -> usize {
        self.code.k()
    }

    /// The `n` coded piece inputs for a padded input.
    pub fn encode_input<T: Scalar>(&self, x_padded: &Tensor4<T>) -> Result<Vec<Tensor4<T>>> {
        encode_pieces(&self.code, &self.plan.split_input(x_padded)?)
    }

    /// Decodes worker outputs from rows `subset` into the `k` piece outputs.
    pub fn decode_output<T: Scalar>(&self, subset: &[usize], outputs: &[Tensor4<T>]) -> Result<Vec<Tensor4<T>>> {
        decode_pieces(&self.code, subset, outputs)
    }

    /// Full layer output (bias not applied) from decoded pieces and the
    /// remainder output, if the plan has one.
    pub fn assemble<T: Scalar>(&self, mut pieces: Vec<Tensor4<T>>, remainder: Option<Tensor4<T>>) -> Result<Tensor4<T>> {
        match (self.plan.remainder.is_some(), remainder) {
            (true, Some(r)) => pieces.push(r),
            (false, None) => {}
            (true, None) => return Err(Error::InvalidArgument("plan has a remainder but none was given".into())),
            (false, Some(_)) => return Err(Error::InvalidArgument("plan has no remainder".into())),
        }
        Tensor4::concat_width(&pieces)
    }
}

/// Encodes `k` equal-shape pieces into `n` coded pieces of the same shape.
pub fn encode_pieces<T: Scalar>(code: &GenerationMatrix, pieces: &[Tensor4<T>]) -> Result<Vec<Tensor4<T>>> {
    let dims = same_dims(pieces)?;
    let flat: Vec<Vec<T>> = pieces.iter().map(Tensor4::flatten).collect();
    code.encode(&flat)?.into_iter().map(|v| Tensor4::restore(v, dims)).collect()
}

/// Inverse of [`encode_pieces`] given any `k` coded results.
pub fn decode_pieces<T: Scalar>(code: &GenerationMatrix, subset: &[usize], outputs: &[Tensor4<T>]) -> Result<Vec<Tensor4<T>>> {
    let dims = same_dims(outputs)?;
    let flat: Vec<Vec<T>> = outputs.iter().map(Tensor4::flatten).collect();
    code.decode(subset, &flat)?.into_iter().map(|v| Tensor4::restore(v, dims)).collect()
}

fn same_dims<T: Scalar>(pieces: &[Tensor4<T>]) -> Result<[usize; 4]> {
    let first = pieces.first().ok_or_else(|| Error::InvalidArgument("no pieces".into()))?.dims();
    if let Some(p) = pieces.iter().find(|p| p.dims() != first) {
        return Err(Error::DimMismatch(format!("piece {:?} vs {first:?}", p.dims())));
    }
    Ok(first)
}

/// In-process coded forward pass: encodes, convolves the coded pieces in
/// `subset`, decodes and reassembles. Matches `spec.forward(x)` up to
/// rounding.
pub fn coded_forward<T: Scalar>(spec: &ConvSpec<T>, x: &Tensor4<T>, n: usize, k: usize, subset: &[usize]) -> Result<Tensor4<T>> {
    let padded = x.pad(spec.padding);
    let layer = CodedLayer::for_spec(spec, padded.width(), n, k)?;
    let coded = layer.encode_input(&padded)?;
    let outputs = subset
        .iter()
        .map(|&j| {
            let piece = coded.get(j).ok_or_else(|| Error::OutOfRange(format!("row {j} of {n}")))?;
            conv2d(piece, spec, false)
        })
        .collect::<Result<Vec<_>>>()?;
    let pieces = layer.decode_output(subset, &outputs)?;
    let remainder = layer.plan.remainder_input(&padded)?.map(|r| conv2d(&r, spec, false)).transpose()?;
    spec.add_bias(&layer.assemble(pieces, remainder)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(k: usize, s: usize, p: usize, bias: bool) -> ConvSpec<f64> {
        let w = Tensor4::from_fn([2, 3, k, k], |o, i, a, b| ((o * 31 + i * 7 + a * 3 + b) as f64 * 0.37).sin()).unwrap();
        ConvSpec::new(3, 2, k, s, p, w, bias.then(|| vec![0.5, -1.0])).unwrap()
    }

    fn input(w: usize) -> Tensor4<f64> {
        Tensor4::from_fn([1, 3, 6, w], |_, c, i, j| ((c * 101 + i * 13 + j) as f64 * 0.11).cos()).unwrap()
    }

    #[test]
    fn matches_local_forward_with_remainder_and_bias() {
        let spec = spec(3, 2, 1, true);
        let x = input(21);
        let want = spec.forward(&x).unwrap();
        let layer = CodedLayer::for_spec(&spec, 23, 5, 3).unwrap();
        assert!(layer.plan.remainder.is_some());
        let got = coded_forward(&spec, &x, 5, 3, &[4, 0, 2]).unwrap();
        assert!(got.relative_error(&want).unwrap() < 1e-12);
    }

    #[test]
    fn coded_pieces_share_one_shape() {
        let layer = CodedLayer::new(3, 1, 12, 4, 2).unwrap();
        let coded = layer.encode_input(&input(12)).unwrap();
        assert_eq!(coded.len(), 4);
        assert!(coded.iter().all(|c| c.dims() == [1, 3, 6, 7]));
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(CodedLayer::new(3, 1, 12, 3, 3).is_err());
        assert!(CodedLayer::new(3, 1, 4, 5, 3).is_err());
        let layer = CodedLayer::new(3, 1, 12, 4, 2).unwrap();
        assert!(layer.assemble::<f64>(vec![], None).is_err());
        let t = input(5);
        assert!(layer.assemble(vec![t.clone(), t.clone()], Some(t)).is_err());
        assert!(encode_pieces::<f64>(&layer.code, &[input(3), input(4)]).is_err());
        assert!(coded_forward(&spec(3, 1, 0, false), &input(12), 4, 2, &[0, 9]).is_err());
    }
}
